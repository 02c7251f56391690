import numpy as np
import pytest

from isacsar.errors import ConfigError
from isacsar.iqio import IqMeta, KIND_WAVEFORM, read_iq, write_iq
from isacsar.waveform import (
    BasebandSignal,
    ModulationSymbols,
    OfdmConfig,
    generate_ofdm_symbol,
    sample_replica,
)


def useful_interval_power(cfg, sig):
    n_cp = int(round(cfg.cp_duration * cfg.sample_rate))
    n_useful = int(round(cfg.symbol_duration * cfg.sample_rate))
    chunk = sig.samples[n_cp : n_cp + n_useful]
    return float(np.mean(np.abs(chunk) ** 2))


class TestOfdmConfig:
    def test_derived_quantities(self):
        cfg = OfdmConfig(carrier_freq=26e9, subcarrier_count=4096, subcarrier_spacing=120e3)
        assert cfg.bandwidth == pytest.approx(491.52e6)
        assert cfg.symbol_duration == pytest.approx(1.0 / 120e3)
        assert cfg.sample_rate == cfg.bandwidth  # critical sampling default

    def test_sample_rate_below_bandwidth_rejected(self):
        with pytest.raises(ConfigError):
            OfdmConfig(carrier_freq=1e9, subcarrier_count=64, subcarrier_spacing=1e6,
                       sample_rate=32e6)

    def test_bad_parameters_rejected(self):
        with pytest.raises(ConfigError):
            OfdmConfig(carrier_freq=1e9, subcarrier_count=0, subcarrier_spacing=1e6)
        with pytest.raises(ConfigError):
            OfdmConfig(carrier_freq=1e9, subcarrier_count=8, subcarrier_spacing=-1.0)
        with pytest.raises(ConfigError):
            OfdmConfig(carrier_freq=1e9, subcarrier_count=8, subcarrier_spacing=1e6,
                       cp_duration=-1e-9)


class TestModulationSymbols:
    def test_qpsk_power_normalization(self):
        for seed in range(5):
            s = ModulationSymbols.qpsk(128, seed)
            total = np.sum(np.abs(s.symbols) ** 2)
            assert abs(total - 128) < 1e-12 * 128

    def test_occupied_subset_keeps_total_power(self):
        s = ModulationSymbols.qpsk(4096, seed=3, occupied=3334)
        assert np.count_nonzero(s.symbols) == 3334
        # unused edge subcarriers are zero, centered occupancy
        assert np.all(s.symbols[: (4096 - 3334) // 2] == 0)
        assert abs(np.sum(np.abs(s.symbols) ** 2) - 4096) < 1e-9 * 4096

    def test_unnormalized_rejected(self):
        with pytest.raises(ConfigError):
            ModulationSymbols(symbols=np.ones(4) * 2.0)


class TestGenerateSymbol:
    def test_all_ones_value_at_cp_instant(self):
        # all exponentials equal one at t = T_CP, so s = sqrt(N)
        cfg = OfdmConfig(carrier_freq=1e9, subcarrier_count=4, subcarrier_spacing=1e6,
                         cp_duration=1e-7)
        syms = ModulationSymbols(symbols=np.ones(4))
        val = sample_replica(cfg, syms, 0.0, 0.0, np.array([cfg.cp_duration]))
        assert val[0] == pytest.approx(2.0 + 0.0j, abs=1e-12)

    def test_unit_mean_power_over_useful_interval(self, desk_cfg):
        for seed in range(10):
            syms = ModulationSymbols.qpsk(desk_cfg.subcarrier_count, seed)
            sig = generate_ofdm_symbol(desk_cfg, syms)
            assert useful_interval_power(desk_cfg, sig) == pytest.approx(1.0, rel=1e-9)

    def test_length_invariant(self, desk_cfg, desk_syms):
        sig = generate_ofdm_symbol(desk_cfg, desk_syms)
        expect = int(round(desk_cfg.symbol_extent * desk_cfg.sample_rate))
        assert sig.samples.shape[0] == expect

    def test_parseval_energy(self, small_cfg):
        # time-domain energy over the useful interval equals
        # sum |S_k|^2 * T * f_s / N by direct summation
        for seed in range(5):
            syms = ModulationSymbols.qpsk(small_cfg.subcarrier_count, seed)
            sig = generate_ofdm_symbol(small_cfg, syms)
            n_cp = int(round(small_cfg.cp_duration * small_cfg.sample_rate))
            n = small_cfg.subcarrier_count
            energy = np.sum(np.abs(sig.samples[n_cp : n_cp + n]) ** 2)
            expect = np.sum(np.abs(syms.symbols) ** 2) / n * small_cfg.symbol_duration * small_cfg.sample_rate
            assert energy == pytest.approx(expect, rel=1e-9)

    def test_linearity(self, small_cfg):
        a = ModulationSymbols.qpsk(small_cfg.subcarrier_count, 1)
        b = ModulationSymbols.qpsk(small_cfg.subcarrier_count, 2)
        mixed = (a.symbols + b.symbols) / np.sqrt(
            np.sum(np.abs(a.symbols + b.symbols) ** 2) / small_cfg.subcarrier_count
        )
        scale = np.sqrt(np.sum(np.abs(a.symbols + b.symbols) ** 2) / small_cfg.subcarrier_count)
        sum_syms = ModulationSymbols(symbols=mixed)
        sig_sum = generate_ofdm_symbol(small_cfg, sum_syms)
        sig_a = generate_ofdm_symbol(small_cfg, a)
        sig_b = generate_ofdm_symbol(small_cfg, b)
        lhs = sig_sum.samples * scale
        rhs = sig_a.samples + sig_b.samples
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_symbol_count_mismatch(self, desk_cfg):
        with pytest.raises(ConfigError):
            generate_ofdm_symbol(desk_cfg, ModulationSymbols.qpsk(64, 0))


class TestSampleReplica:
    def test_zero_shift_bitmatches_generate(self, desk_cfg, desk_syms):
        sig = generate_ofdm_symbol(desk_cfg, desk_syms)
        rep = sample_replica(desk_cfg, desk_syms, 0.0, 0.0, sig.time_grid())
        assert np.array_equal(rep, sig.samples)

    def test_one_sample_delay_shifts_by_one(self, desk_cfg, desk_syms):
        # direct resampling oracle: s(t - dt) on the same grid
        sig = generate_ofdm_symbol(desk_cfg, desk_syms)
        rep = sample_replica(desk_cfg, desk_syms, desk_cfg.dt, 0.0, sig.time_grid())
        oracle = sample_replica(
            desk_cfg, desk_syms, 0.0, 0.0, sig.time_grid() - desk_cfg.dt
        )
        np.testing.assert_allclose(rep, oracle, rtol=0, atol=1e-12)
        assert rep[0] == 0
        np.testing.assert_allclose(rep[1:], sig.samples[:-1], rtol=0, atol=1e-9)

    def test_beyond_support_all_zero(self, desk_cfg, desk_syms):
        t = desk_cfg.time_grid()
        rep = sample_replica(desk_cfg, desk_syms, t[-1] + 2 * desk_cfg.dt, 0.0, t)
        assert np.all(rep == 0)

    def test_doppler_modulation(self, small_cfg, small_syms):
        t = small_cfg.time_grid()
        f_d = 3.3e3
        base = sample_replica(small_cfg, small_syms, 0.0, 0.0, t)
        shifted = sample_replica(small_cfg, small_syms, 0.0, f_d, t)
        np.testing.assert_allclose(
            shifted, base * np.exp(2j * np.pi * f_d * t), rtol=1e-12, atol=1e-12
        )

    def test_negative_delay_rejected(self, small_cfg, small_syms):
        with pytest.raises(ConfigError):
            sample_replica(small_cfg, small_syms, -1e-9, 0.0, small_cfg.time_grid())

    def test_nonmonotone_grid_rejected(self, small_cfg, small_syms):
        with pytest.raises(ConfigError):
            sample_replica(small_cfg, small_syms, 0.0, 0.0, np.array([0.0, 1e-8, 0.5e-8]))


def test_iq_roundtrip(tmp_path, small_cfg, small_syms):
    sig = generate_ofdm_symbol(small_cfg, small_syms)
    meta = IqMeta(
        kind=KIND_WAVEFORM,
        subcarrier_count=small_cfg.subcarrier_count,
        subcarrier_spacing=small_cfg.subcarrier_spacing,
        sample_rate=small_cfg.sample_rate,
        cp_duration=small_cfg.cp_duration,
        axis0_origin=sig.t0,
        axis0_step=sig.dt,
    )
    path = tmp_path / "symbol.iq"
    write_iq(path, sig.samples, meta)
    data, got = read_iq(path)
    assert got.subcarrier_count == small_cfg.subcarrier_count
    assert got.subcarrier_spacing == pytest.approx(small_cfg.subcarrier_spacing)
    assert got.cp_duration == pytest.approx(small_cfg.cp_duration)
    # float32 storage: relative fidelity at single precision
    np.testing.assert_allclose(data, sig.samples, rtol=0, atol=2e-7 * np.max(np.abs(sig.samples)))
