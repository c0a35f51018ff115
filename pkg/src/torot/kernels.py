"""Backend selection and the batch driver for path integration.

The compiled extension is preferred when importable; set TOROT_FORCE_PYTHON=1
to insist on the NumPy fallback. Both backends draw each replica's Gaussian
increments from a dedicated counter-based Philox stream in identical chunk
sizes, so switching backends never changes the random numbers a replica sees.
"""

from __future__ import annotations

import os

import numpy as np

from torot import _kernels_py

if os.environ.get("TOROT_FORCE_PYTHON", ""):
    _impl = None
    BACKEND = "python"
else:
    try:
        from torot import _kernels as _impl

        BACKEND = "c"
        if _impl.chunk_steps() != _kernels_py.CHUNK:
            raise ImportError("chunk size mismatch between backends")
    except ImportError:
        _impl = None
        BACKEND = "python"

CHUNK = _kernels_py.CHUNK
MAX_DIM = _kernels_py.MAX_DIM


def backend() -> str:
    """Active kernel backend, "c" or "python"."""
    return BACKEND


def replica_generators(seed: int, n_replicas: int, start: int = 0) -> list:
    """One Philox bit generator per replica, keyed by (seed, replica index).

    The keying is position-based, so replica r gets the same stream no matter
    how the batch is split across calls or threads.
    """
    return [np.random.Philox(np.random.SeedSequence((seed, start + r))) for r in range(n_replicas)]


def run_batch(
    x: np.ndarray,
    L: float,
    dt: float,
    n_steps: int,
    bit_generators: list,
    *,
    const_drift: np.ndarray | None = None,
    drift_freq: np.ndarray | None = None,
    drift_cos: np.ndarray | None = None,
    drift_sin: np.ndarray | None = None,
    kvecs: np.ndarray | None = None,
    hist_n: int = 0,
    hist_out: np.ndarray | None = None,
    record_stride: int = 0,
    rec_out: np.ndarray | None = None,
    force_python: bool = False,
) -> np.ndarray:
    """Advance the batch x (R, d) in place by n_steps; return psi sums (R, 2M).

    kvecs (M, d) selects the modes whose raw cos/sin occupation sums are
    accumulated at left endpoints; the caller converts sums to time averages.
    hist_out, when hist_n > 0, is a flat int64 array of size hist_n**d pooled
    over the batch. rec_out, when record_stride > 0, must be
    (R, ceil(n_steps / record_stride), d) and receives strided positions.
    """
    if x.ndim != 2:
        raise ValueError("x must be (replicas, d)")
    if not (x.flags.c_contiguous and x.flags.writeable and x.dtype == np.float64):
        raise ValueError("x must be a writable C-contiguous float64 array")
    R, d = x.shape
    if not 1 <= d <= MAX_DIM:
        raise ValueError(f"dimension {d} outside 1..{MAX_DIM}")
    if L <= 0 or dt <= 0:
        raise ValueError("L and dt must be positive")
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    if len(bit_generators) != R:
        raise ValueError("one bit generator per replica required")

    def as2d(arr, name):
        if arr is None:
            return np.zeros((0, d))
        out = np.ascontiguousarray(arr, dtype=np.float64)
        if out.ndim != 2 or out.shape[1] != d:
            raise ValueError(f"{name} must be (n, {d})")
        return out

    const = np.zeros(d) if const_drift is None else np.ascontiguousarray(const_drift, dtype=np.float64)
    if const.shape != (d,):
        raise ValueError(f"const_drift must have shape ({d},)")
    freq = np.zeros((0, d), dtype=np.int64) if drift_freq is None else np.ascontiguousarray(drift_freq, dtype=np.int64)
    if freq.ndim != 2 or freq.shape[1] != d:
        raise ValueError(f"drift_freq must be (J, {d})")
    amp_c = as2d(drift_cos, "drift_cos")
    amp_s = as2d(drift_sin, "drift_sin")
    if amp_c.shape[0] != freq.shape[0] or amp_s.shape[0] != freq.shape[0]:
        raise ValueError("drift coefficient rows must match drift_freq")
    kv = np.zeros((0, d), dtype=np.int64) if kvecs is None else np.ascontiguousarray(kvecs, dtype=np.int64)
    if kv.ndim != 2 or kv.shape[1] != d:
        raise ValueError(f"kvecs must be (M, {d})")
    M = kv.shape[0]

    psi = np.zeros((R, 2 * M))
    if hist_n > 0:
        if hist_out is None:
            raise ValueError("hist_out required when hist_n > 0")
        if hist_out.shape != (hist_n**d,) or hist_out.dtype != np.int64:
            raise ValueError(f"hist_out must be int64 of shape ({hist_n**d},)")
    if record_stride > 0:
        n_rec = -(-n_steps // record_stride)
        if rec_out is None or rec_out.shape != (R, n_rec, d):
            raise ValueError(f"rec_out must have shape ({R}, {n_rec}, {d})")

    if _impl is not None and not force_python:
        dummy_hist = np.zeros(0, dtype=np.int64)
        dummy_rec = np.zeros((0, d))
        for r in range(R):
            _impl.run_path(
                x[r],
                float(L),
                float(dt),
                int(n_steps),
                const,
                freq,
                amp_c,
                amp_s,
                kv,
                bit_generators[r],
                psi[r],
                hist_out if hist_n > 0 else dummy_hist,
                int(hist_n),
                rec_out[r] if record_stride > 0 else dummy_rec,
                int(record_stride),
            )
    else:
        _kernels_py.run_batch(
            x,
            float(L),
            float(dt),
            int(n_steps),
            const,
            freq,
            amp_c,
            amp_s,
            kv,
            list(bit_generators),
            psi,
            hist_out,
            int(hist_n),
            rec_out,
            int(record_stride),
        )
    return psi
