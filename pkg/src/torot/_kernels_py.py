"""Pure NumPy fallback for the path kernel.

Advances a whole batch of replicas in lockstep, one Euler-Maruyama step at a
time, drawing each replica's Gaussian increments from its own bit generator
in the same fixed-size chunks as the compiled kernel. The increment streams
are therefore identical across backends; positions agree bit for bit when the
drift is zero and to rounding otherwise.
"""

import math

import numpy as np

CHUNK = 8192  # steps per Gaussian fill; must match the compiled kernel
MAX_DIM = 16


def chunk_steps() -> int:
    return CHUNK


def max_dim() -> int:
    return MAX_DIM


def run_batch(
    x: np.ndarray,
    L: float,
    dt: float,
    n_steps: int,
    const_drift: np.ndarray,
    drift_freq: np.ndarray,
    drift_cos: np.ndarray,
    drift_sin: np.ndarray,
    kvecs: np.ndarray,
    bit_generators: list,
    psi_out: np.ndarray,
    hist_out: np.ndarray | None,
    hist_n: int,
    rec_out: np.ndarray | None,
    record_stride: int,
) -> int:
    """Advance every row of x by n_steps, accumulating in place.

    Mirrors the compiled kernel's contract replica-wise: psi_out is (R, 2M)
    with cos/sin interleaved, hist_out is a single flat histogram pooled over
    the batch, rec_out is (R, n_records, d). Returns records written per
    replica.
    """
    R, d = x.shape
    M = kvecs.shape[0]
    gens = [np.random.Generator(bg) for bg in bit_generators]
    if len(gens) != R:
        raise ValueError("one bit generator per replica required")
    alpha = 2.0 * np.pi / L
    sig = math.sqrt(2.0 * dt)
    K = alpha * kvecs.astype(np.float64).T  # (d, M)
    F = alpha * drift_freq.astype(np.float64).T  # (d, J)
    strides = hist_n ** np.arange(d - 1, -1, -1, dtype=np.int64) if hist_n > 0 else None

    rcount = 0
    step = 0
    while step < n_steps:
        m = min(CHUNK, n_steps - step)
        # one flat draw per replica, identical to the compiled kernel's fill
        xi = np.stack([g.standard_normal(m * d).reshape(m, d) for g in gens])
        for j in range(m):
            t = step + j
            if record_stride > 0 and t % record_stride == 0:
                rec_out[:, rcount, :] = x
                rcount += 1
            if hist_n > 0:
                c = np.minimum((x * (hist_n / L)).astype(np.int64), hist_n - 1)
                np.add.at(hist_out, c @ strides, 1)
            if M > 0:
                ph = x @ K
                psi_out[:, 0::2] += np.cos(ph)
                psi_out[:, 1::2] += np.sin(ph)
            b = np.tile(const_drift, (R, 1))
            if F.shape[1] > 0:
                phd = x @ F
                b += np.cos(phd) @ drift_cos + np.sin(phd) @ drift_sin
            x += b * dt + sig * xi[:, j, :]
            np.fmod(x, L, out=x)
            x[x < 0.0] += L
        step += m
    return rcount
