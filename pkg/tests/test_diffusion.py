"""Diffusion and occupation-functional tests.

Monte Carlo targets use exact discrete-time oracles: for Brownian motion on
the torus (optionally with a constant drift z), the stationary autocovariance
of the unit-norm eigenfunction pair at mode k is exactly
e^{-lambda tau} cos(b tau) with b = (2 pi / L) k.z, even after wrapping, so
the left-endpoint Riemann sum of psi has a closed-form second moment with no
discretization gap.
"""

import io
import math

import numpy as np
import pytest
import scipy.stats

from torot.diffusion import (
    OccupationAccumulator,
    SimConfig,
    SimResult,
    Trajectory,
    sample_stationary,
    simulate,
    step,
)
from torot.drift import DriftSpec, TrigTerm, curl_field
from torot.geometry import TorusGeometry, cached_modes

G4 = TorusGeometry(4, 2 * math.pi)
G2 = TorusGeometry(2, 2 * math.pi)
FREE4 = DriftSpec(G4)


def discrete_psi_second_moment(lam, b, dt, n):
    """Exact E|psi(T)|^2 of the left-endpoint sum for constant drift.

    psi = (dt/sqrt(T)) sum_i phi(X_i), stationary start, autocovariance
    e^{-lam m dt} cos(b m dt): E = (dt^2/T)[n + 2 sum_{m<n} (n-m) r^m cos(m theta)]
    with r = e^{-lam dt}, theta = b dt, evaluated by the geometric closed form.
    """
    r = math.exp(-lam * dt)
    z = r * complex(math.cos(b * dt), math.sin(b * dt))
    # sum_{m=1}^{n-1} (n - m) z^m = n S1 - S2 with S1 = sum z^m, S2 = sum m z^m
    s1 = z * (1 - z ** (n - 1)) / (1 - z)
    s2 = z * (1 - n * z ** (n - 1) + (n - 1) * z**n) / (1 - z) ** 2
    total = n + 2 * (n * s1 - s2).real
    return dt * total / n


class TestSimConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            SimConfig(dt=-0.1, T=1, seed=0, replicas=1)
        with pytest.raises(ValueError):
            SimConfig(dt=0.5, T=0.25, seed=0, replicas=1)
        with pytest.raises(ValueError, match="multiple"):
            SimConfig(dt=0.3, T=1.0, seed=0, replicas=1)
        assert SimConfig(dt=0.01, T=2.0, seed=0, replicas=4).n_steps == 200

    def test_dt_lambda_guard(self):
        ms = cached_modes(G4, 10.0)
        with pytest.raises(ValueError, match="too coarse"):
            simulate(SimConfig(dt=0.05, T=1.0, seed=0, replicas=1), FREE4, ms)


class TestStationarySampler:
    def test_uniform_for_constant_v(self):
        rng = np.random.default_rng(0)
        draws = np.array([sample_stationary(FREE4, G4, rng) for _ in range(4000)])
        assert np.all((draws >= 0) & (draws < G4.L))
        se = G4.L / math.sqrt(12 * 4000)
        np.testing.assert_allclose(draws.mean(axis=0), G4.L / 2, atol=3.5 * se)

    def test_rejection_matches_quadrature(self):
        a = 0.6
        spec = DriftSpec(G2, v_terms=[TrigTerm((1, 0), "cos", a)])
        rng = np.random.default_rng(1)
        draws = np.array([sample_stationary(spec, G2, rng) for _ in range(20000)])
        nbins = 16
        counts, edges = np.histogram(draws[:, 0], bins=nbins, range=(0, G2.L))
        # exact marginal of x1 by fine quadrature of e^{a sqrt(2) cos(x)}
        xs = np.linspace(0, G2.L, 4096, endpoint=False)
        dens = np.exp(a * math.sqrt(2) * np.cos(xs))
        dens /= dens.sum()
        expected = dens.reshape(nbins, -1).sum(axis=1) * len(draws)
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        assert chi2 < scipy.stats.chi2.ppf(0.99, nbins - 1)

    def test_second_coordinate_stays_uniform(self):
        spec = DriftSpec(G2, v_terms=[TrigTerm((1, 0), "cos", 0.6)])
        rng = np.random.default_rng(2)
        draws = np.array([sample_stationary(spec, G2, rng) for _ in range(8000)])
        counts, _ = np.histogram(draws[:, 1], bins=10, range=(0, G2.L))
        expected = len(draws) / 10
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        assert chi2 < scipy.stats.chi2.ppf(0.99, 9)


class TestStep:
    def test_constant_drift_mean_displacement(self):
        z = np.array([1.0, 0.0, 0.0, 0.0])
        spec = DriftSpec(G4, z_const=tuple(z))
        rng = np.random.default_rng(3)
        dt = 1e-3
        x0 = np.full(4, 3.0)
        disp = np.array([step(x0, spec, dt, rng) - x0 for _ in range(3000)])
        se = math.sqrt(2 * dt / 3000)
        np.testing.assert_allclose(disp.mean(axis=0), z * dt, atol=3.5 * se)

    def test_wraps_into_domain(self):
        rng = np.random.default_rng(4)
        x = np.array([6.28, 0.001, 3.0, 6.0])
        for _ in range(50):
            x = step(x, FREE4, 0.5, rng)
            assert np.all((x >= 0) & (x < G4.L))


class TestSimulate:
    def test_psi_second_moment_matches_discrete_oracle(self):
        ms = cached_modes(G4, 1.0)
        cfg = SimConfig(dt=0.005, T=5.0, seed=11, replicas=512)
        res = simulate(cfg, FREE4, ms)
        psi = res.accumulator.psi()
        # all 8 unit-shell pair functions share lambda = 1, b = 0
        target = discrete_psi_second_moment(1.0, 0.0, cfg.dt, cfg.n_steps)
        est = (psi**2).mean(axis=0)
        se = (psi**2).std(axis=0, ddof=1) / math.sqrt(cfg.replicas)
        assert np.all(np.abs(est - target) <= 3.5 * se)

    def test_psi_second_moment_constant_drift(self):
        ms = cached_modes(G4, 1.0)
        cfg = SimConfig(dt=0.005, T=5.0, seed=12, replicas=512)
        res = simulate(cfg, DriftSpec(G4, z_const=(1.0, 0.0, 0.0, 0.0)), ms)
        psi = res.accumulator.psi()
        i = ms.index((1, 0, 0, 0), "cos")
        target = discrete_psi_second_moment(1.0, 1.0, cfg.dt, cfg.n_steps)
        for col in (i, i + 1):  # cos and sin behave identically in law
            est = (psi[:, col] ** 2).mean()
            se = (psi[:, col] ** 2).std(ddof=1) / math.sqrt(cfg.replicas)
            assert abs(est - target) <= 3.5 * se

    def test_zero_mean_psi(self):
        ms = cached_modes(G4, 2.0)
        cfg = SimConfig(dt=0.01, T=20.0, seed=13, replicas=64)
        psi = simulate(cfg, FREE4, ms).accumulator.psi()
        est = psi.mean(axis=0)
        se = psi.std(axis=0, ddof=1) / math.sqrt(cfg.replicas)
        assert np.all(np.abs(est) <= 4.0 * se + 1e-12)

    def test_additivity_over_segments(self):
        ms = cached_modes(G4, 1.0)
        one = simulate(SimConfig(dt=0.01, T=4.0, seed=7, replicas=3), FREE4, ms)

        first = simulate(SimConfig(dt=0.01, T=1.5, seed=7, replicas=3), FREE4, ms)
        second = simulate(
            SimConfig(dt=0.01, T=2.5, seed=7, replicas=3),
            FREE4,
            ms,
            x0=first.final_positions,
            bit_generators=first.bit_generators,
        )
        merged = first.accumulator.add(second.accumulator)
        assert merged.time_elapsed == pytest.approx(4.0)
        np.testing.assert_array_equal(one.final_positions, second.final_positions)
        np.testing.assert_allclose(merged.psi_raw, one.accumulator.psi_raw, rtol=0, atol=1e-10)

    def test_reproducible_and_thread_invariant(self):
        ms = cached_modes(G4, 2.0)
        cfg = SimConfig(dt=0.01, T=2.0, seed=21, replicas=6)
        a = simulate(cfg, FREE4, ms)
        b = simulate(cfg, FREE4, ms)
        c = simulate(cfg, FREE4, ms, threads=3)
        np.testing.assert_array_equal(a.accumulator.psi_raw, b.accumulator.psi_raw)
        np.testing.assert_array_equal(a.accumulator.psi_raw, c.accumulator.psi_raw)
        np.testing.assert_array_equal(a.final_positions, c.final_positions)

    def test_single_step_functional_is_point_evaluation(self):
        g_terms = [TrigTerm((1, 0, 0, 0), "cos", 0.8), TrigTerm((0, 1, 1, 0), "sin", -0.5)]
        x0 = np.array([[0.3, 1.2, 2.9, 4.4]])
        cfg = SimConfig(dt=0.01, T=0.01, seed=5, replicas=1)
        res = simulate(cfg, FREE4, None, extra_functionals=[g_terms], x0=x0)
        expect = 0.8 * math.sqrt(2) * math.cos(0.3) - 0.5 * math.sqrt(2) * math.sin(1.2 + 2.9)
        assert res.functional_averages[0, 0] == pytest.approx(expect, rel=1e-12)

    def test_functional_average_is_coefficient_combination(self):
        # time average of g must equal the same combination of psi_raw sums
        ms = cached_modes(G4, 1.0)
        g_terms = [TrigTerm((1, 0, 0, 0), "cos", 2.0), TrigTerm((0, 0, 0, 1), "sin", 1.5)]
        cfg = SimConfig(dt=0.01, T=3.0, seed=6, replicas=4)
        res = simulate(cfg, FREE4, ms, extra_functionals=[g_terms])
        raw = res.accumulator.psi_raw
        i = ms.index((1, 0, 0, 0), "cos")
        j = ms.index((0, 0, 0, 1), "sin")
        expect = (2.0 * raw[:, i] + 1.5 * raw[:, j]) / cfg.T
        np.testing.assert_allclose(res.functional_averages[:, 0], expect, rtol=1e-10)

    def test_uniform_law_preserved_under_incompressible_drift(self):
        spec = DriftSpec(G2, z_terms=curl_field([TrigTerm((1, 0), "cos", 0.5)], G2))
        cfg = SimConfig(dt=0.01, T=10.0, seed=30, replicas=400, record_stride=500)
        res = simulate(cfg, spec, None, keep_trajectories=True)
        # pool positions at t = 5 and t = 10 (recorded steps 500, final)
        mid = np.array([tr.positions[1] for tr in res.trajectories])
        for sample in (mid, res.final_positions):
            for axis in range(2):
                counts, _ = np.histogram(sample[:, axis], bins=8, range=(0, G2.L))
                chi2 = float(np.sum((counts - 50.0) ** 2 / 50.0))
                assert chi2 < scipy.stats.chi2.ppf(0.99, 7)

    def test_dt_refinement_within_weak_order_one(self):
        ms = cached_modes(G4, 1.0)
        spec = DriftSpec(G4, z_const=(1.0, 0.0, 0.0, 0.0))
        i = None
        ests, ses, oracles = [], [], []
        for dt in (4e-3, 2e-3, 1e-3):
            cfg = SimConfig(dt=dt, T=20.0, seed=40, replicas=256)
            res = simulate(cfg, spec, ms)
            if i is None:
                i = ms.index((1, 0, 0, 0), "cos")
            vals = res.accumulator.psi()[:, i] ** 2
            ests.append(vals.mean())
            ses.append(vals.std(ddof=1) / math.sqrt(cfg.replicas))
            oracles.append(discrete_psi_second_moment(1.0, 1.0, dt, cfg.n_steps))
        for est, se, oracle in zip(ests, ses, oracles):
            assert abs(est - oracle) <= 3.5 * se
        # the exact discrete values themselves drift by less than c dt, c = 2 lambda
        assert abs(oracles[0] - oracles[2]) <= 2.0 * (4e-3 - 1e-3)


class TestTrajectoryIO:
    def test_roundtrip(self, tmp_path):
        cfg = SimConfig(dt=0.02, T=1.0, seed=9, replicas=2, record_stride=10)
        res = simulate(cfg, FREE4, None, keep_trajectories=True)
        p = tmp_path / "path.traj"
        res.trajectories[1].write(p)
        back = Trajectory.read(p)
        assert back.geometry == G4
        assert back.dt == cfg.dt
        assert back.record_stride == 10
        np.testing.assert_array_equal(back.positions, res.trajectories[1].positions)

    def test_header_layout(self, tmp_path):
        tr = Trajectory(G4, 0.5, 3, np.zeros((2, 4)))
        p = tmp_path / "h.traj"
        tr.write(p)
        raw = p.read_bytes()
        assert raw[:5] == b"WDIF1"
        assert int.from_bytes(raw[5:9], "little") == 4
        assert len(raw) == 5 + 4 + 8 + 8 + 4 + 8 + 2 * 4 * 8

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.traj"
        p.write_bytes(b"NOPE!" + b"\x00" * 40)
        with pytest.raises(ValueError, match="magic"):
            Trajectory.read(p)

    def test_positions_validated(self):
        with pytest.raises(ValueError, match="lie in"):
            Trajectory(G4, 0.1, 1, np.full((1, 4), 7.0))


class TestAccumulatorCSV:
    def test_csv_shape_and_values(self, tmp_path):
        ms = cached_modes(G4, 1.0)
        cfg = SimConfig(dt=0.01, T=1.0, seed=2, replicas=3)
        acc = simulate(cfg, FREE4, ms).accumulator
        p = tmp_path / "acc.csv"
        acc.write_csv(p)
        lines = p.read_text().strip().split("\n")
        assert lines[0] == "replica,k_vector,parity,psi"
        assert len(lines) == 1 + 3 * 8
        first = lines[1].split(",")
        assert first[0] == "0" and first[1] == "0 0 0 1" and first[2] == "cos"
        assert float(first[3]) == pytest.approx(acc.psi()[0, 0])
