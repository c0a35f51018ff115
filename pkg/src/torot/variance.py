"""Variance forms, moment predictions and generator consistency checks.

The generator L = Delta + Z (constant V) acts on the truncated real Fourier
basis. For a constant drift z it block-diagonalizes over each representative
mode k: in the complex basis L e_k = (-lambda_k + i b_k) e_k with
b_k = (2 pi / L) k.z, giving closed forms

    V(phi_cos) = V(phi_sin) = lambda / (lambda^2 + b^2)
    V(Z phi)   = b^2 lambda / (lambda^2 + b^2)

that satisfy V(phi) = 1/lambda - V(Z phi)/lambda^2 exactly. For a
trigonometric Z the action is assembled exactly in the complex exponential
basis (products of trig terms shift frequencies) and transformed to the real
basis; coefficients pushed outside the truncation are recorded per column so
quantities that need the exact image can refuse rather than silently project.

Non-constant V is not assembled here; the experiments only pair non-constant
V with Z = 0, where every prediction is already closed-form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.stats

from torot.drift import DriftSpec
from torot.geometry import ModeSet

DENSE_PAIR_LIMIT = 4000


@dataclass
class GeneratorMatrix:
    """Truncated generator with the constant mode at real-basis index 0.

    For constant z no matrix is materialized (blocks are exact); the dense
    real matrix is assembled for trigonometric Z, or on demand for checks.
    """

    mode_set: ModeSet
    drift: DriftSpec
    b_values: np.ndarray | None = field(default=None, repr=False)  # per rep, const z
    dense: np.ndarray | None = field(default=None, repr=False)  # (1+2M, 1+2M) real
    z_dense: np.ndarray | None = field(default=None, repr=False)
    escaped: np.ndarray | None = field(default=None, repr=False)  # per column mass
    required_lambda: float = 0.0

    @property
    def analytic(self) -> bool:
        return self.b_values is not None

    def lam_of(self, phi_index: int) -> float:
        return float(self.mode_set.lam_pairs[phi_index])


def _complex_lattice(mode_set: ModeSet):
    d = mode_set.geometry.d
    kvecs = [np.zeros(d, dtype=np.int64)]
    for k in mode_set.kvecs:
        kvecs.append(k)
        kvecs.append(-k)
    index = {tuple(int(v) for v in k): i for i, k in enumerate(kvecs)}
    return np.array(kvecs), index


def _real_from_complex(mode_set: ModeSet, mat_c: np.ndarray) -> np.ndarray:
    """Conjugate the complex-basis matrix into the real cos/sin basis."""
    m = len(mode_set.kvecs)
    n = 1 + 2 * m
    U = np.zeros((n, n), dtype=complex)
    U[0, 0] = 1.0
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    for r in range(m):
        ip, im = 1 + 2 * r, 2 + 2 * r  # complex rows for +k, -k
        jc, js = 1 + 2 * r, 2 + 2 * r  # real columns for cos, sin
        U[ip, jc] = inv_sqrt2
        U[im, jc] = inv_sqrt2
        U[ip, js] = -1j * inv_sqrt2
        U[im, js] = 1j * inv_sqrt2
    out = U.conj().T @ mat_c @ U
    if np.max(np.abs(out.imag)) > 1e-10:
        raise AssertionError("real-basis transform left imaginary residue")
    return out.real


def generator_matrix(mode_set: ModeSet, drift: DriftSpec) -> GeneratorMatrix:
    if not drift.v_is_constant:
        raise NotImplementedError(
            "generator assembly supports constant V only; non-constant V runs pair with Z = 0"
        )
    if drift.geometry != mode_set.geometry:
        raise ValueError("drift and mode set disagree on the geometry")
    alpha = mode_set.geometry.freq

    if not drift.z_terms:
        z = np.zeros(mode_set.geometry.d) if drift.z_const is None else np.asarray(drift.z_const)
        b = alpha * (mode_set.kvecs @ z)
        return GeneratorMatrix(mode_set, drift, b_values=b)

    m = len(mode_set.kvecs)
    if m > DENSE_PAIR_LIMIT:
        raise ValueError(f"dense assembly over {m} modes exceeds limit {DENSE_PAIR_LIMIT}")
    kvecs, index = _complex_lattice(mode_set)
    n = len(kvecs)
    zc = np.zeros((n, n), dtype=complex)
    escaped_c = np.zeros(n)
    required = 0.0

    # exponential expansion of each Z component: list of (freq m, weight vector)
    exp_terms = []
    if drift.z_const is not None:
        exp_terms.append((np.zeros(mode_set.geometry.d, dtype=np.int64),
                          np.asarray(drift.z_const, dtype=complex)))
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    for t in drift.z_terms:
        mvec = np.asarray(t.k, dtype=np.int64)
        w = np.asarray(t.w, dtype=complex)
        if t.parity == "cos":  # sqrt(2) cos = (e_m + e_{-m}) / sqrt(2)
            exp_terms.append((mvec, w * inv_sqrt2))
            exp_terms.append((-mvec, w * inv_sqrt2))
        else:  # sqrt(2) sin = -i (e_m - e_{-m}) / sqrt(2)
            exp_terms.append((mvec, -1j * w * inv_sqrt2))
            exp_terms.append((-mvec, 1j * w * inv_sqrt2))

    for j, k in enumerate(kvecs):
        for mvec, w in exp_terms:
            coef = 1j * alpha * complex(np.dot(w, k.astype(float)))
            if coef == 0:
                continue
            target = tuple(int(v) for v in (k + mvec))
            ti = index.get(target)
            if ti is None:
                escaped_c[j] += abs(coef)
                lam_t = alpha**2 * float(np.sum((k + mvec) ** 2))
                required = max(required, lam_t)
            else:
                zc[ti, j] += coef

    z_real = _real_from_complex(mode_set, zc)
    if np.max(np.abs(z_real[0, :])) > 1e-10:
        raise AssertionError("Z action has a constant-mode component: drift not mu-divergence-free")
    lam_diag = np.concatenate([[0.0], mode_set.lam_pairs])
    dense = np.diag(-lam_diag) + z_real

    # map complex-column escapes onto real pair columns (cos/sin of the rep)
    escaped = np.zeros(1 + 2 * m)
    for r in range(m):
        mass = escaped_c[1 + 2 * r] + escaped_c[2 + 2 * r]
        escaped[1 + 2 * r] = mass
        escaped[2 + 2 * r] = mass
    return GeneratorMatrix(
        mode_set, drift, dense=dense, z_dense=z_real, escaped=escaped, required_lambda=required
    )


def _check_pair_vector(gen: GeneratorMatrix, phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (2 * len(gen.mode_set.kvecs),):
        raise ValueError("phi must be a pair-coefficient vector over the mode set")
    return phi


def v_form(phi: np.ndarray, gen: GeneratorMatrix) -> float:
    """V(phi) = <phi, (-L)^{-1} phi> on the mean-zero subspace."""
    phi = _check_pair_vector(gen, phi)
    if gen.analytic:
        lam = gen.mode_set.lam
        b = gen.b_values
        c = phi[0::2]
        s = phi[1::2]
        return float(np.sum(lam * (c**2 + s**2) / (lam**2 + b**2)))
    a = -gen.dense[1:, 1:]
    try:
        x = np.linalg.solve(a, phi)
    except np.linalg.LinAlgError as exc:
        raise ValueError("restricted generator is singular; drift invalid") from exc
    return float(phi @ x)


def z_phi_coefficients(phi_index: int, gen: GeneratorMatrix) -> np.ndarray:
    """Pair coefficients of Z phi_i; exact or an error if the image escapes."""
    m2 = 2 * len(gen.mode_set.kvecs)
    if not 0 <= phi_index < m2:
        raise ValueError("phi_index out of range")
    if gen.analytic:
        rep = phi_index // 2
        b = float(gen.b_values[rep])
        out = np.zeros(m2)
        if phi_index % 2 == 0:  # Z cos_k = -b sin_k
            out[phi_index + 1] = -b
        else:  # Z sin_k = b cos_k
            out[phi_index - 1] = b
        return out
    col = 1 + phi_index
    if gen.escaped[col] > 0:
        raise ValueError(
            "Z phi escapes the truncation; enlarge lambda_max to at least "
            f"{gen.required_lambda:.6g}"
        )
    return gen.z_dense[1:, col].copy()


def v_form_z(phi_index: int, gen: GeneratorMatrix) -> float:
    """V(Z phi_i) with Z phi_i computed exactly in the truncated basis."""
    return v_form(z_phi_coefficients(phi_index, gen), gen)


def identity_star0_check(phi_index: int, gen: GeneratorMatrix) -> float:
    """|V(phi_i) - (1/lambda_i - V(Z phi_i)/lambda_i^2)|."""
    lam = gen.lam_of(phi_index)
    phi = np.zeros(2 * len(gen.mode_set.kvecs))
    phi[phi_index] = 1.0
    lhs = v_form(phi, gen)
    rhs = 1.0 / lam - v_form_z(phi_index, gen) / lam**2
    return abs(lhs - rhs)


def psi_moment_prediction(phi_index: int, gen: GeneratorMatrix, T: float | None = None) -> float:
    """Two leading terms of E|psi_i(T)|^2: 2/lambda - (2/lambda^2) V(Z phi_i).

    The remainder is O(1/(lambda (1+T))) with an unknown constant, so T does
    not enter the returned value; consumers compare Monte Carlo estimates at
    two horizons to confirm the 1/T shrinkage.
    """
    lam = gen.lam_of(phi_index)
    return 2.0 / lam - (2.0 / lam**2) * v_form_z(phi_index, gen)


def _dense_for_checks(gen: GeneratorMatrix) -> np.ndarray:
    if gen.dense is not None:
        return gen.dense
    m = len(gen.mode_set.kvecs)
    if m > DENSE_PAIR_LIMIT:
        raise ValueError("mode set too large for dense checks")
    lam = gen.mode_set.lam
    dense = np.zeros((1 + 2 * m, 1 + 2 * m))
    for r in range(m):
        i = 1 + 2 * r
        b = float(gen.b_values[r])
        dense[i, i] = dense[i + 1, i + 1] = -lam[r]
        dense[i + 1, i] = -b  # L cos = -lam cos - b sin
        dense[i, i + 1] = b  # L sin = -lam sin + b cos
    return dense


def duhamel_check(phi_index: int, gen: GeneratorMatrix, t: float, quad_steps: int) -> float:
    """Residual of P_t phi = e^{-lam t} phi + int_0^t e^{-lam (t-s)} P_s (Z phi) ds.

    Left side by dense matrix exponential, right side by midpoint quadrature
    through one eigendecomposition; returns the coefficient-space L2 gap.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if quad_steps < 1:
        raise ValueError("quad_steps must be positive")
    dense = _dense_for_checks(gen)
    lam = gen.lam_of(phi_index)
    n = dense.shape[0]
    phi = np.zeros(n)
    phi[1 + phi_index] = 1.0

    lhs = scipy.linalg.expm(dense * t) @ phi

    zphi = np.zeros(n)
    zphi[1:] = z_phi_coefficients(phi_index, gen)
    w, s_mat = scipy.linalg.eig(dense)
    coef = np.linalg.solve(s_mat, zphi.astype(complex))
    h = t / quad_steps
    nodes = (np.arange(quad_steps) + 0.5) * h
    growth = np.exp(np.outer(w, nodes))  # (n, Q)
    p_s = s_mat @ (growth * coef[:, None])  # P_s (Z phi) at all nodes
    weights = h * np.exp(-lam * (t - nodes))
    rhs = math.exp(-lam * t) * phi + (p_s @ weights).real
    return float(np.linalg.norm(lhs - rhs))


def clt_empirics(phi_index: int, gen: GeneratorMatrix, psi_samples: np.ndarray) -> dict:
    """Normality report for psi samples against the CLT law N(0, 2 V(phi))."""
    x = np.asarray(psi_samples, dtype=float).ravel()
    if x.size < 512:
        raise ValueError("at least 512 replica samples required")
    phi = np.zeros(2 * len(gen.mode_set.kvecs))
    phi[phi_index] = 1.0
    target = 2.0 * v_form(phi, gen)
    var = float(x.var(ddof=1))
    # stderr of the sample variance from the empirical fourth moment
    centered = x - x.mean()
    m4 = float(np.mean(centered**4))
    var_se = math.sqrt(max(m4 - var**2, 0.0) / x.size)
    stat, pval = scipy.stats.normaltest(x)
    return {
        "n": int(x.size),
        "sample_variance": var,
        "target_variance": target,
        "variance_stderr": var_se,
        "variance_z": (var - target) / var_se if var_se > 0 else math.inf,
        "skewness": float(scipy.stats.skew(x)),
        "excess_kurtosis": float(scipy.stats.kurtosis(x)),
        "normality_pvalue": float(pval),
    }
