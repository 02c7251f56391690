"""Command-line interface.

Subcommands:
  render    render one echo cube and dump it with its ground truth
  estimate  run an estimation method on one cell and export its traces
  image     form the SAR image for one cell and export image + metrics
  sweep     run the full (snr, seed) grid for every method
  report    aggregate a runs CSV into per-(method, snr) summary tables
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, iqio
from .imaging import write_image_csv
from .omp import write_estimate_csv
from .sage import sage_iterate, select_direct_path, write_history_csv
from .scene import effective_paths_per_pulse, write_truth_csv
from .waveform import OfdmConfig


def _load_scenario(args) -> harness.Scenario:
    sc = harness.Scenario.from_json(args.scenario)
    if getattr(args, "seed_override", None):
        sc.seeds = list(args.seed_override)
    if getattr(args, "method", None) and hasattr(args, "snr"):
        pass
    return sc


def _outdir(args) -> Path:
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cube_meta(cfg: OfdmConfig, kind: int, t0: float, prf: float) -> iqio.IqMeta:
    return iqio.IqMeta(
        kind=kind,
        subcarrier_count=cfg.subcarrier_count,
        subcarrier_spacing=cfg.subcarrier_spacing,
        sample_rate=cfg.sample_rate,
        cp_duration=cfg.cp_duration,
        axis0_origin=t0,
        axis0_step=cfg.dt,
        axis1_origin=0.0,
        axis1_step=1.0 / prf,
    )


def cmd_render(args) -> int:
    sc = _load_scenario(args)
    ctx = harness.build_context(sc)
    out = _outdir(args)
    cube, noise_power, channels = harness.render_cell_cube(ctx, args.snr, args.seed)
    iqio.write_iq(
        out / "echo_cube.iq",
        cube.samples,
        _cube_meta(sc.ofdm, iqio.KIND_CUBE, float(cube.t0[0]), sc.trajectory.prf),
    )
    for m, (tgt, chan) in enumerate(zip(sc.targets, channels)):
        ppp = harness.build_paths_per_pulse(sc.trajectory, tgt, chan, sc.ofdm.wavelength)
        eff = effective_paths_per_pulse(
            sc.trajectory, ctx.pattern, tgt, ppp, sc.ofdm.carrier_freq
        )
        write_truth_csv(out / f"truth_target{m}.csv", eff)
    with open(out / "render_meta.json", "w") as fh:
        json.dump(
            {
                "scenario": sc.to_dict(),
                "snr_db": args.snr,
                "seed": args.seed,
                "noise_power": cube.noise_power,
                "measured_noise_power": noise_power,
                "direct_power": cube.direct_power,
                "n_fast": cube.n_fast,
                "n_slow": cube.n_slow,
            },
            fh,
            indent=2,
        )
    print(f"rendered {cube.n_fast} x {cube.n_slow} cube -> {out}")
    return 0


def cmd_estimate(args) -> int:
    sc = _load_scenario(args)
    ctx = harness.build_context(sc)
    out = _outdir(args)
    cube, noise_power, _ = harness.render_cell_cube(ctx, args.snr, args.seed)
    result = harness.estimate_cell(ctx, cube, noise_power, args.method)
    for est, pulse in zip(result.omp_estimates, ctx.estimation_pulses):
        write_estimate_csv(out / f"omp_pulse{pulse:04d}.csv", est)
    if result.state is not None:
        write_history_csv(out / "sage_history.csv", result.state)
    # per-pulse selection report over the estimation pulses
    floor = ctx.noise_gate_factor * harness._amplitude_noise_floor(ctx, noise_power)
    with open(out / "selection.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pulse_index", "delay_s", "doppler_hz", "abs_gain", "converged"])
        for pulse in ctx.estimation_pulses:
            state = sage_iterate(
                cube.samples[:, pulse],
                result.init_paths,
                harness._sage_config(ctx, floor),
                ctx.cache,
            )
            significant = [p for p in state.paths if abs(p.gain) >= floor] or state.paths
            sel = select_direct_path(
                significant,
                threshold_factor=sc.estimator.selection_threshold,
                delay_origin=ctx.dictionary.grid.delay_start,
            )
            w.writerow(
                [pulse, repr(float(sel.delay)), repr(float(sel.doppler)),
                 repr(float(abs(sel.gain))), "1" if state.converged else "0"]
            )
    if result.selected is None:
        print("estimation produced no usable path", file=sys.stderr)
        return 1
    print(
        f"selected path: delay {result.selected.delay:.6e} s, "
        f"doppler {result.selected.doppler:.3f} Hz, |gain| {abs(result.selected.gain):.4g}"
    )
    return 0


def cmd_image(args) -> int:
    sc = _load_scenario(args)
    ctx = harness.build_context(sc)
    out = _outdir(args)
    records = harness.run_cell(ctx, args.snr, args.seed)
    wanted = [r for r in records if r.method == args.method]
    cube, noise_power, _ = harness.render_cell_cube(ctx, args.snr, args.seed)
    if args.method == "raw":
        img = harness.image_samples(ctx, cube.samples)
    else:
        est = harness.estimate_cell(ctx, cube, noise_power, args.method)
        if est.selected is None:
            print("estimation produced no usable path", file=sys.stderr)
            return 1
        img = harness.image_samples(ctx, harness.reconstruct_cube(ctx, cube, est.selected))
    write_image_csv(out / "image.csv", img)
    meta = iqio.IqMeta(
        kind=iqio.KIND_IMAGE,
        subcarrier_count=sc.ofdm.subcarrier_count,
        subcarrier_spacing=sc.ofdm.subcarrier_spacing,
        sample_rate=sc.ofdm.sample_rate,
        cp_duration=sc.ofdm.cp_duration,
        axis0_origin=img.range_origin,
        axis0_step=img.range_step,
        axis1_origin=img.azimuth_origin,
        axis1_step=img.azimuth_step,
    )
    iqio.write_iq(out / "image.iq", img.pixels, meta)
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario_id", "snr_db", "method", "rmse_m", "islr_db"])
        for r in wanted:
            w.writerow([r.scenario_id, harness._fmt(float(r.snr_db)), r.method,
                        harness._fmt(r.rmse), harness._fmt(r.islr)])
    bad = [r for r in wanted if not r.valid]
    if wanted:
        r = wanted[0]
        print(f"{args.method}: rmse {r.rmse:.4g} m, islr {r.islr:.4g} dB, valid={r.valid}")
    if args.strict and bad:
        return 1
    return 0


def cmd_sweep(args) -> int:
    sc = _load_scenario(args)
    if args.method:
        sc.methods = list(args.method)
    out = _outdir(args)
    records = harness.run_scenario(sc, jobs=args.jobs)
    harness.write_runs_csv(out / "runs.csv", records)
    summary = harness.sweep_and_aggregate(records)
    harness.write_summary_csv(out / "summary.csv", summary)
    harness.write_manifest(out / "manifest.json", sc, records)
    invalid = [r for r in records if not r.valid]
    print(
        f"{len(records)} records ({len(invalid)} invalid) -> {out}/runs.csv, "
        f"{out}/summary.csv"
    )
    if args.strict and invalid:
        return 1
    return 0


def cmd_report(args) -> int:
    rows = harness.read_runs_csv(args.runs)
    records = []
    for row in rows:
        records.append(
            harness.RunRecord(
                scenario_id=row["scenario_id"],
                method=row["method"],
                snr_db=float(row["snr_db"]),
                seed=int(row["seed"]),
                selected_delay=None,
                selected_doppler=None,
                selected_gain_abs=None,
                n_paths=int(row["n_paths"]),
                converged=row["converged"] == "1",
                rmse=float(row["rmse_m"]) if row["rmse_m"] != "NA" else np.nan,
                islr=float(row["islr_db"]) if row["islr_db"] != "NA" else np.nan,
                peak_range=None,
                peak_azimuth=None,
                valid=row["valid"] == "1",
                flags=row["flags"],
                wall_time=0.0,
            )
        )
    summary = harness.sweep_and_aggregate(records)
    out = _outdir(args)
    harness.write_summary_csv(out / "summary.csv", summary)
    width = 12
    cols = harness.SUMMARY_FIELDS
    print("  ".join(f"{c:>{width}}" for c in cols))
    for row in summary:
        cells = []
        for c in cols:
            v = row[c]
            if v is None:
                cells.append(f"{'NA':>{width}}")
            elif isinstance(v, float):
                cells.append(f"{v:>{width}.4g}")
            else:
                cells.append(f"{str(v):>{width}}")
        print("  ".join(cells))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="isacsar", description="OFDM ISAC-SAR simulation lab"
    )
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, cell: bool):
        sp.add_argument("--scenario", required=True, help="scenario JSON path")
        sp.add_argument("--outdir", required=True, help="output directory")
        if cell:
            sp.add_argument("--snr", type=float, required=True, help="SNR in dB")
            sp.add_argument("--seed", type=int, required=True, help="cell seed")

    sp = sub.add_parser("render", help="render one echo cube")
    add_common(sp, cell=True)
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("estimate", help="estimate paths on one cell")
    add_common(sp, cell=True)
    sp.add_argument("--method", choices=["omp_sage", "sage_only"], default="omp_sage")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("image", help="form the SAR image for one cell")
    add_common(sp, cell=True)
    sp.add_argument("--method", choices=list(harness.METHODS), default="omp_sage")
    sp.add_argument("--strict", action="store_true",
                    help="exit nonzero when a metric is flagged invalid")
    sp.set_defaults(func=cmd_image)

    sp = sub.add_parser("sweep", help="run the full scenario grid")
    add_common(sp, cell=False)
    sp.add_argument("--method", action="append", choices=list(harness.METHODS),
                    help="restrict to one or more methods (repeatable)")
    sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sp.add_argument("--seed-override", type=int, action="append",
                    help="replace the scenario seed list (repeatable)")
    sp.add_argument("--strict", action="store_true",
                    help="exit nonzero when any metric is flagged invalid")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="aggregate a runs CSV")
    sp.add_argument("--runs", required=True, help="path to runs.csv")
    sp.add_argument("--outdir", required=True, help="output directory")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
