"""Backend equivalence and contract tests for the path kernels.

The compiled kernel and the NumPy fallback must draw identical Gaussian
increments per replica (same Philox stream, same chunk layout), so driftless
trajectories agree bit for bit and drifted ones to rounding over short
horizons. A slow per-step Python reference checks the arithmetic itself.
"""

import math

import numpy as np
import pytest

from torot import kernels
from torot._kernels_py import CHUNK

L = 2 * math.pi
KV = np.array([[1, 0, 0, 0], [1, -1, 0, 0], [0, 2, 1, 0]], dtype=np.int64)

needs_c = pytest.mark.skipif(kernels.backend() != "c", reason="compiled kernel unavailable")


def reference_run(x0, L, dt, n_steps, const_drift, freq, amp_c, amp_s, kvecs, bg):
    """Literal per-step implementation used as the arithmetic oracle."""
    g = np.random.Generator(bg)
    alpha = 2 * np.pi / L
    sig = math.sqrt(2 * dt)
    x = x0.copy()
    psi = np.zeros(2 * len(kvecs))
    draws = []
    step = 0
    while step < n_steps:
        m = min(CHUNK, n_steps - step)
        draws.append(g.standard_normal(m * len(x)).reshape(m, -1))
        step += m
    xi = np.concatenate(draws) if draws else np.zeros((0, len(x)))
    for t in range(n_steps):
        ph = alpha * (kvecs @ x)
        psi[0::2] += np.cos(ph)
        psi[1::2] += np.sin(ph)
        b = const_drift.copy()
        for j in range(len(freq)):
            phd = alpha * float(freq[j] @ x)
            b += amp_c[j] * math.cos(phd) + amp_s[j] * math.sin(phd)
        x = np.fmod(x + b * dt + sig * xi[t], L)
        x[x < 0] += L
    return x, psi


@pytest.mark.parametrize("force_python", [False, True])
def test_matches_reference(force_python):
    if not force_python and kernels.backend() != "c":
        pytest.skip("compiled kernel unavailable")
    freq = np.array([[1, 0, 0, 0], [0, 1, 1, 0]], dtype=np.int64)
    amp_c = np.array([[0.3, 0.0, 0.0, 0.0], [0.0, 0.1, -0.2, 0.0]])
    amp_s = np.array([[0.0, -0.4, 0.0, 0.0], [0.2, 0.0, 0.0, 0.1]])
    const = np.array([0.5, 0.0, -0.25, 0.0])
    x = np.full((1, 4), 1.0)
    psi = kernels.run_batch(
        x, L, 0.01, 300, kernels.replica_generators(42, 1),
        const_drift=const, drift_freq=freq, drift_cos=amp_c, drift_sin=amp_s,
        kvecs=KV, force_python=force_python,
    )
    x_ref, psi_ref = reference_run(
        np.full(4, 1.0), L, 0.01, 300, const, freq, amp_c, amp_s, KV,
        kernels.replica_generators(42, 1)[0],
    )
    np.testing.assert_allclose(x[0], x_ref, rtol=0, atol=1e-10)
    np.testing.assert_allclose(psi[0], psi_ref, rtol=0, atol=1e-9)


@needs_c
def test_backends_agree_driftless_bitwise():
    n_steps = 2 * CHUNK + 123  # cross chunk boundaries
    x1 = np.zeros((3, 4))
    x2 = np.zeros((3, 4))
    psi1 = kernels.run_batch(x1, L, 0.02, n_steps, kernels.replica_generators(7, 3), kvecs=KV)
    psi2 = kernels.run_batch(
        x2, L, 0.02, n_steps, kernels.replica_generators(7, 3), kvecs=KV, force_python=True
    )
    np.testing.assert_array_equal(x1, x2)
    np.testing.assert_allclose(psi1, psi2, rtol=0, atol=1e-9)


@needs_c
def test_backends_agree_with_drift():
    freq = np.array([[1, 1, 0, 0]], dtype=np.int64)
    amp_c = np.array([[0.2, -0.1, 0.0, 0.3]])
    amp_s = np.array([[0.0, 0.2, 0.1, 0.0]])
    kw = dict(drift_freq=freq, drift_cos=amp_c, drift_sin=amp_s, kvecs=KV)
    x1 = np.zeros((2, 4))
    x2 = np.zeros((2, 4))
    psi1 = kernels.run_batch(x1, L, 0.01, 5000, kernels.replica_generators(11, 2), **kw)
    psi2 = kernels.run_batch(
        x2, L, 0.01, 5000, kernels.replica_generators(11, 2), **kw, force_python=True
    )
    np.testing.assert_allclose(x1, x2, rtol=0, atol=1e-9)
    np.testing.assert_allclose(psi1, psi2, rtol=1e-9, atol=1e-7)


def test_segmenting_equals_one_run():
    # same generators carried across calls: two segments equal one long run
    n1, n2 = CHUNK - 50, CHUNK + 99
    bgs = kernels.replica_generators(3, 2)
    xa = np.zeros((2, 4))
    pa1 = kernels.run_batch(xa, L, 0.05, n1, bgs, kvecs=KV)
    pa2 = kernels.run_batch(xa, L, 0.05, n2, bgs, kvecs=KV)
    xb = np.zeros((2, 4))
    pb = kernels.run_batch(xb, L, 0.05, n1 + n2, kernels.replica_generators(3, 2), kvecs=KV)
    np.testing.assert_array_equal(xa, xb)
    np.testing.assert_allclose(pa1 + pa2, pb, rtol=0, atol=1e-9)


def test_replica_keying_is_positional():
    # replica r of a batch equals replica 0 of a batch starting at r
    x = np.zeros((3, 4))
    psi = kernels.run_batch(x, L, 0.01, 500, kernels.replica_generators(5, 3), kvecs=KV)
    x1 = np.zeros((1, 4))
    psi1 = kernels.run_batch(x1, L, 0.01, 500, kernels.replica_generators(5, 1, start=2), kvecs=KV)
    np.testing.assert_array_equal(x[2], x1[0])
    np.testing.assert_array_equal(psi[2], psi1[0])


def test_histogram_matches_recorded_positions():
    n = 8
    hist = np.zeros(n**4, dtype=np.int64)
    rec = np.zeros((2, 400, 4))
    x = np.zeros((2, 4))
    kernels.run_batch(
        x, L, 0.03, 400, kernels.replica_generators(9, 2),
        hist_n=n, hist_out=hist, record_stride=1, rec_out=rec,
    )
    assert hist.sum() == 2 * 400
    expect = np.zeros(n**4, dtype=np.int64)
    cells = np.minimum((rec.reshape(-1, 4) * (n / L)).astype(np.int64), n - 1)
    np.add.at(expect, cells @ (n ** np.arange(3, -1, -1)), 1)
    np.testing.assert_array_equal(hist, expect)


def test_record_stride_times():
    # positions at steps 0, s, 2s, ...: replaying from records must land exactly
    rec = np.zeros((1, 4, 4))
    x = np.zeros((1, 4))
    kernels.run_batch(
        x, L, 0.05, 10, kernels.replica_generators(1, 1), record_stride=3, rec_out=rec
    )
    assert rec.shape[1] == 4  # steps 0, 3, 6, 9
    np.testing.assert_array_equal(rec[0, 0], np.zeros(4))
    # wrap keeps coordinates in [0, L)
    assert np.all(rec >= 0) and np.all(rec < L)
    assert np.all(x >= 0) and np.all(x < L)


def test_driftless_increment_moments():
    # increments are N(0, 2 dt I): check variance on an unwrapped short walk
    dt = 1e-4
    n_steps = 20000
    rec = np.zeros((4, n_steps, 4))
    x = np.full((4, 4), L / 2)
    kernels.run_batch(
        x, L, dt, n_steps, kernels.replica_generators(17, 4), record_stride=1, rec_out=rec
    )
    steps = np.diff(rec, axis=1)
    steps = np.where(steps > L / 2, steps - L, np.where(steps < -L / 2, steps + L, steps))
    var = steps.var()
    assert var == pytest.approx(2 * dt, rel=0.02)
    assert abs(steps.mean()) < 5 * math.sqrt(2 * dt / steps.size)


def test_input_validation():
    bgs = kernels.replica_generators(0, 1)
    with pytest.raises(ValueError, match="contiguous"):
        kernels.run_batch(np.zeros((1, 4))[:, ::2], L, 0.1, 1, bgs)
    with pytest.raises(ValueError, match="bit generator"):
        kernels.run_batch(np.zeros((2, 4)), L, 0.1, 1, bgs)
    with pytest.raises(ValueError, match="hist_out"):
        kernels.run_batch(np.zeros((1, 4)), L, 0.1, 1, bgs, hist_n=4)
    with pytest.raises(ValueError, match="rec_out"):
        kernels.run_batch(np.zeros((1, 4)), L, 0.1, 10, bgs, record_stride=2)
    with pytest.raises(ValueError):
        kernels.run_batch(np.zeros((1, 4)), L, -0.1, 1, bgs)
