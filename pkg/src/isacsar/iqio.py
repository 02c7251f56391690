"""Binary I/Q container used for waveform, echo-cube and image dumps.

Layout (all little-endian), 96-byte header followed by float32 I/Q pairs:

    offset  type  field
    0       4s    magic b"IQF1"
    4       u32   header size in bytes (96)
    8       u32   kind: 0 waveform, 1 echo cube, 2 image
    12      u32   ndim (1 or 2)
    16      u32   dim0
    20      u32   dim1 (1 when ndim == 1)
    24      u32   subcarrier_count
    28      u32   reserved (0)
    32      f64   subcarrier_spacing [Hz]
    40      f64   sample_rate [Hz]
    48      f64   cp_duration [s]
    56      f64   axis0_origin
    64      f64   axis0_step
    72      f64   axis1_origin
    80      f64   axis1_step
    88      f64   reserved (0)

Axis meaning by kind: waveform/cube -> axis0 is fast time [s], axis1 is
slow time [s]; image -> axis0 is range [m], axis1 is azimuth [m]. Payload
is the array flattened in C order as interleaved (I, Q) float32 pairs, so
the format is lossy relative to the float64 pipeline; it is an export
format, not an internal checkpoint.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"IQF1"
HEADER_SIZE = 96
_HEADER_FMT = "<4sIIIIIII8d"

KIND_WAVEFORM = 0
KIND_CUBE = 1
KIND_IMAGE = 2


@dataclass(frozen=True)
class IqMeta:
    kind: int
    subcarrier_count: int
    subcarrier_spacing: float
    sample_rate: float
    cp_duration: float
    axis0_origin: float
    axis0_step: float
    axis1_origin: float = 0.0
    axis1_step: float = 0.0


def write_iq(path, data: np.ndarray, meta: IqMeta) -> None:
    """Write a 1-D or 2-D complex array with its axis metadata."""
    arr = np.asarray(data)
    if arr.ndim not in (1, 2):
        raise ValueError(f"expected 1-D or 2-D data, got ndim={arr.ndim}")
    dim0 = arr.shape[0]
    dim1 = arr.shape[1] if arr.ndim == 2 else 1
    header = struct.pack(
        _HEADER_FMT,
        MAGIC,
        HEADER_SIZE,
        meta.kind,
        arr.ndim,
        dim0,
        dim1,
        meta.subcarrier_count,
        0,
        meta.subcarrier_spacing,
        meta.sample_rate,
        meta.cp_duration,
        meta.axis0_origin,
        meta.axis0_step,
        meta.axis1_origin,
        meta.axis1_step,
        0.0,
    )
    flat = np.ascontiguousarray(arr, dtype=np.complex128).ravel()
    payload = np.empty(2 * flat.shape[0], dtype="<f4")
    payload[0::2] = flat.real
    payload[1::2] = flat.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_iq(path) -> tuple[np.ndarray, IqMeta]:
    """Read an I/Q dump back as (complex128 array, metadata)."""
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
        if len(raw) != HEADER_SIZE:
            raise ValueError("truncated header")
        (magic, hsize, kind, ndim, dim0, dim1, n_sc, _res,
         delta_f, fs, t_cp, a0o, a0s, a1o, a1s, _res2) = struct.unpack(_HEADER_FMT, raw)
        if magic != MAGIC:
            raise ValueError(f"bad magic {magic!r}")
        if hsize != HEADER_SIZE:
            raise ValueError(f"unsupported header size {hsize}")
        payload = np.frombuffer(fh.read(), dtype="<f4")
    expected = 2 * dim0 * dim1
    if payload.shape[0] != expected:
        raise ValueError(f"payload has {payload.shape[0]} floats, expected {expected}")
    data = payload[0::2].astype(np.float64) + 1j * payload[1::2].astype(np.float64)
    shape = (dim0,) if ndim == 1 else (dim0, dim1)
    meta = IqMeta(
        kind=kind,
        subcarrier_count=n_sc,
        subcarrier_spacing=delta_f,
        sample_rate=fs,
        cp_duration=t_cp,
        axis0_origin=a0o,
        axis0_step=a0s,
        axis1_origin=a1o,
        axis1_step=a1s,
    )
    return data.reshape(shape), meta
