"""NumPy reference implementation of the replica-synthesis kernel.

This is the fallback backend; ``isacsar.kernels._fast`` provides the same
function compiled with Cython. Both evaluate the analytic baseband OFDM
symbol by direct summation over subcarriers, so fractional (off-grid)
delays are exact rather than interpolated.
"""

from __future__ import annotations

import numpy as np

# Samples per power-accumulation block; bounds the (block x N) phase matrix.
_BLOCK = 2048


def replica_rows(
    symbols: np.ndarray,
    delta_f: float,
    t_cp: float,
    t_total: float,
    t: np.ndarray,
    taus: np.ndarray,
) -> np.ndarray:
    """Delayed OFDM symbol replicas evaluated on a common time grid.

    Row m holds s(t - taus[m]) with
        s(x) = N^(-1/2) * sum_k symbols[k] * exp(j 2 pi k delta_f (x - t_cp))
    for x in [0, t_total) and zero outside that support.

    Returns a (len(taus), len(t)) complex128 array.
    """
    symbols = np.ascontiguousarray(symbols, dtype=np.complex128)
    t = np.asarray(t, dtype=np.float64)
    taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
    n = symbols.shape[0]
    scale = 1.0 / np.sqrt(n)
    out = np.zeros((taus.shape[0], t.shape[0]), dtype=np.complex128)
    for m in range(taus.shape[0]):
        t_rel = t - taus[m]
        mask = (t_rel >= 0.0) & (t_rel < t_total)
        if not np.any(mask):
            continue
        phase = 2.0 * np.pi * delta_f * (t_rel[mask] - t_cp)
        vals = np.empty(phase.shape[0], dtype=np.complex128)
        for lo in range(0, phase.shape[0], _BLOCK):
            hi = min(lo + _BLOCK, phase.shape[0])
            z = np.exp(1j * phase[lo:hi])
            # Vandermonde block [z^0, z^1, ..., z^(n-1)] built by cumulative
            # products: one multiply per entry instead of one exp per entry.
            powers = np.empty((hi - lo, n), dtype=np.complex128)
            powers[:, 0] = 1.0
            if n > 1:
                powers[:, 1:] = z[:, None]
                np.cumprod(powers[:, 1:], axis=1, out=powers[:, 1:])
            vals[lo:hi] = powers @ symbols
        out[m, mask] = vals * scale
    return out
