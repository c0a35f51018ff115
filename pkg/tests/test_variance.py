"""Variance-form tests.

Oracles: the 2x2 resolvent block for constant drift (hand-derivable), direct
time quadrature of <phi, e^{tL} phi> through the matrix exponential (a code
path independent of the linear solve), and Richardson stabilization across
Galerkin cutoffs for trigonometric Z.
"""

import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from torot.drift import DriftSpec, TrigTerm, curl_field
from torot.geometry import TorusGeometry, cached_modes
from torot.variance import (
    clt_empirics,
    duhamel_check,
    generator_matrix,
    identity_star0_check,
    psi_moment_prediction,
    v_form,
    v_form_z,
    z_phi_coefficients,
)

G4 = TorusGeometry(4, 2 * math.pi)
G2 = TorusGeometry(2, 2 * math.pi)

E1 = (1.0, 0.0, 0.0, 0.0)


def _unit(gen, idx):
    phi = np.zeros(2 * len(gen.mode_set.kvecs))
    phi[idx] = 1.0
    return phi


def trig_z_generator(lambda_max=60.0, amp=0.35):
    stream = [
        TrigTerm((1, 0), "cos", amp),
        TrigTerm((1, 1), "sin", -0.8 * amp),
        TrigTerm((0, 2), "cos", 0.5 * amp),
    ]
    spec = DriftSpec(G2, z_terms=curl_field(stream, G2))
    return generator_matrix(cached_modes(G2, lambda_max), spec)


class TestConstantDriftBlocks:
    def test_symmetric_case_inverse_eigenvalue(self):
        ms = cached_modes(G4, 4.0)
        gen = generator_matrix(ms, DriftSpec(G4))
        for idx in (0, 3, 2 * len(ms.kvecs) - 1):
            lam = gen.lam_of(idx)
            assert v_form(_unit(gen, idx), gen) == pytest.approx(1.0 / lam, rel=1e-14)
            assert v_form_z(idx, gen) == 0.0

    def test_block_closed_form(self):
        ms = cached_modes(G4, 9.0)
        gen = generator_matrix(ms, DriftSpec(G4, z_const=E1))
        alpha = 1.0
        for k, z in [((1, 0, 0, 0), E1), ((2, 1, 0, 0), E1), ((1, 1, 1, 0), E1)]:
            idx = ms.index(k, "cos")
            lam = gen.lam_of(idx)
            b = alpha * k[0]
            want = lam / (lam**2 + b**2)
            assert v_form(_unit(gen, idx), gen) == pytest.approx(want, rel=1e-14)
            assert v_form(_unit(gen, idx + 1), gen) == pytest.approx(want, rel=1e-14)
            assert v_form_z(idx, gen) == pytest.approx(b**2 * want, rel=1e-14)

    def test_known_values(self):
        ms = cached_modes(G4, 1.0)
        idx = ms.index((1, 0, 0, 0), "cos")
        gen1 = generator_matrix(ms, DriftSpec(G4, z_const=E1))
        assert v_form(_unit(gen1, idx), gen1) == pytest.approx(0.5, rel=1e-15)
        assert v_form_z(idx, gen1) == pytest.approx(0.5, rel=1e-15)
        assert psi_moment_prediction(idx, gen1) == pytest.approx(1.0, rel=1e-15)
        gen2 = generator_matrix(ms, DriftSpec(G4, z_const=(2.0, 0.0, 0.0, 0.0)))
        assert v_form_z(idx, gen2) == pytest.approx(4.0 / 5.0, rel=1e-15)
        gen0 = generator_matrix(ms, DriftSpec(G4))
        assert psi_moment_prediction(idx, gen0) == pytest.approx(2.0, rel=1e-15)

    def test_z_phi_rotates_within_block(self):
        ms = cached_modes(G4, 1.0)
        gen = generator_matrix(ms, DriftSpec(G4, z_const=E1))
        idx = ms.index((1, 0, 0, 0), "cos")
        zc = z_phi_coefficients(idx, gen)
        assert zc[idx + 1] == pytest.approx(-1.0)
        zs = z_phi_coefficients(idx + 1, gen)
        assert zs[idx] == pytest.approx(1.0)

    def test_time_quadrature_oracle(self):
        ms = cached_modes(G4, 2.0)
        gen = generator_matrix(ms, DriftSpec(G4, z_const=(1.0, -1.0, 0.0, 0.0)))
        from torot.variance import _dense_for_checks

        dense = _dense_for_checks(gen)[1:, 1:]
        rng = np.random.default_rng(0)
        phi = rng.standard_normal(dense.shape[0])

        def integrand(t):
            return float(phi @ scipy.linalg.expm(dense * t) @ phi)

        quad, err = scipy.integrate.quad(integrand, 0, 50, limit=200, epsabs=1e-10)
        assert v_form(phi, gen) == pytest.approx(quad, abs=1e-8 + 10 * err)


class TestIdentityStar0:
    def test_constant_z_exact(self):
        ms = cached_modes(G4, 9.0)
        for z in [E1, (2.0, 0.0, 0.0, 0.0), (1.0, 1.0, 0.0, 0.0)]:
            gen = generator_matrix(ms, DriftSpec(G4, z_const=z))
            for idx in range(0, 2 * len(ms.kvecs), 7):
                assert identity_star0_check(idx, gen) <= 1e-12

    def test_trig_z_galerkin(self):
        gen = trig_z_generator(lambda_max=60.0)
        for k, parity in [((1, 0), "cos"), ((1, 1), "sin"), ((2, 1), "cos")]:
            idx = gen.mode_set.index(k, parity)
            assert identity_star0_check(idx, gen) <= 1e-8

    def test_trig_z_value_stabilizes_across_cutoffs(self):
        lo = trig_z_generator(lambda_max=40.0)
        hi = trig_z_generator(lambda_max=80.0)
        idx_lo = lo.mode_set.index((1, 0), "cos")
        idx_hi = hi.mode_set.index((1, 0), "cos")
        v_lo = v_form(_unit(lo, idx_lo), lo)
        v_hi = v_form(_unit(hi, idx_hi), hi)
        assert v_lo == pytest.approx(v_hi, abs=1e-6)
        assert v_hi < 1.0  # strictly below the symmetric value 1/lambda = 1

    def test_escape_detection(self):
        gen = trig_z_generator(lambda_max=6.0)
        m2 = 2 * len(gen.mode_set.kvecs)
        with pytest.raises(ValueError, match="enlarge lambda_max"):
            # the top mode's image under Z leaves a lambda_max = 6 truncation
            v_form_z(m2 - 1, gen)


class TestVFormProperties:
    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=15, deadline=None)
    def test_nonnegative_and_dominated(self, seed):
        ms = cached_modes(G4, 4.0)
        gen = generator_matrix(ms, DriftSpec(G4, z_const=(1.0, 0.5, 0.0, 0.0)))
        rng = np.random.default_rng(seed)
        phi = rng.standard_normal(2 * len(ms.kvecs))
        v = v_form(phi, gen)
        assert v >= 0
        # drag: V(phi) <= <phi, (-Lhat)^{-1} phi> = sum c^2 / lambda
        sym = float(np.sum(phi**2 / ms.lam_pairs))
        assert v <= sym + 1e-12

    def test_drag_equality_iff_no_z_component(self):
        ms = cached_modes(G4, 1.0)
        gen = generator_matrix(ms, DriftSpec(G4, z_const=E1))
        # mode orthogonal to z: b = 0, no drag
        j = ms.index((0, 1, 0, 0), "cos")
        assert v_form(_unit(gen, j), gen) == pytest.approx(1.0, rel=1e-14)
        assert v_form_z(j, gen) == 0.0
        # mode along z: strict inequality
        i = ms.index((1, 0, 0, 0), "cos")
        assert v_form(_unit(gen, i), gen) < 1.0

    def test_trig_z_vform_nonnegative_random(self):
        gen = trig_z_generator(lambda_max=30.0)
        rng = np.random.default_rng(4)
        for _ in range(10):
            phi = rng.standard_normal(2 * len(gen.mode_set.kvecs))
            assert v_form(phi, gen) >= 0


class TestDuhamel:
    def test_symmetric_trivial(self):
        ms = cached_modes(G4, 2.0)
        gen = generator_matrix(ms, DriftSpec(G4))
        assert duhamel_check(0, gen, 1.0, 64) <= 1e-12

    def test_constant_z_refinement(self):
        ms = cached_modes(G4, 2.0)
        gen = generator_matrix(ms, DriftSpec(G4, z_const=E1))
        idx = ms.index((1, 0, 0, 0), "cos")
        r1 = duhamel_check(idx, gen, 1.0, 10_000)
        assert r1 <= 1e-6
        r2 = duhamel_check(idx, gen, 1.0, 5_000)
        assert r2 / r1 == pytest.approx(4.0, rel=0.15)

    def test_small_time_linear(self):
        ms = cached_modes(G4, 1.0)
        gen = generator_matrix(ms, DriftSpec(G4, z_const=E1))
        idx = ms.index((1, 0, 0, 0), "cos")
        r = [duhamel_check(idx, gen, t, 2000) for t in (0.2, 0.1, 0.05)]
        assert r[0] > r[1] > r[2]

    def test_trig_z_converges(self):
        gen = trig_z_generator(lambda_max=20.0)
        idx = gen.mode_set.index((1, 0), "cos")
        assert duhamel_check(idx, gen, 0.5, 8000) <= 1e-6


class TestCltEmpirics:
    def test_gaussian_reference(self):
        ms = cached_modes(G4, 1.0)
        gen = generator_matrix(ms, DriftSpec(G4))
        idx = ms.index((1, 0, 0, 0), "cos")
        rng = np.random.default_rng(8)
        samples = rng.normal(0.0, math.sqrt(2.0), 4096)
        rep = clt_empirics(idx, gen, samples)
        assert rep["target_variance"] == pytest.approx(2.0)
        assert abs(rep["variance_z"]) < 3.0
        assert abs(rep["excess_kurtosis"]) < 0.3
        assert rep["normality_pvalue"] > 0.001

    def test_replica_floor(self):
        ms = cached_modes(G4, 1.0)
        gen = generator_matrix(ms, DriftSpec(G4))
        with pytest.raises(ValueError, match="512"):
            clt_empirics(0, gen, np.zeros(100))


class TestGeneratorAssembly:
    def test_non_constant_v_refused(self):
        spec = DriftSpec(G2, v_terms=[TrigTerm((1, 0), "cos", 0.3)])
        with pytest.raises(NotImplementedError):
            generator_matrix(cached_modes(G2, 4.0), spec)

    def test_z_part_antisymmetric(self):
        gen = trig_z_generator(lambda_max=30.0)
        zr = gen.z_dense
        # antisymmetry may only fail on escaped columns; mask those
        ok = np.concatenate([[True], gen.escaped[1:] == 0])
        sub = zr[np.ix_(ok, ok)]
        np.testing.assert_allclose(sub, -sub.T, atol=1e-10)

    def test_constant_row_zero(self):
        gen = trig_z_generator(lambda_max=30.0)
        np.testing.assert_allclose(gen.z_dense[0, :], 0.0, atol=1e-12)
        np.testing.assert_allclose(gen.z_dense[:, 0], 0.0, atol=1e-12)
