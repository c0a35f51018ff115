"""Drift specifications for the torus diffusion dX = (grad V + Z) dt + sqrt(2) dW.

V is a finite trigonometric polynomial in the normalized eigenbasis and Z is
either a constant vector, a trigonometric vector polynomial, or both. The
stationary measure is mu = e^V dx / normalization, and Z must be
mu-divergence-free: div(e^V Z) = 0. That residual is measured on a check grid
at construction and stored; violations beyond tolerance are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from torot.geometry import TorusGeometry

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class TrigTerm:
    """One term amplitude * sqrt(2) cos/sin(2 pi k.x / L) of a scalar field."""

    k: tuple
    parity: str
    amplitude: float

    def __post_init__(self):
        if self.parity not in ("cos", "sin"):
            raise ValueError(f"parity must be cos or sin, got {self.parity!r}")
        if not any(self.k):
            raise ValueError("constant terms are not allowed; shift the potential instead")


@dataclass(frozen=True)
class VectorTrigTerm:
    """One term w * sqrt(2) cos/sin(2 pi k.x / L) of a vector field."""

    k: tuple
    parity: str
    w: tuple

    def __post_init__(self):
        if self.parity not in ("cos", "sin"):
            raise ValueError(f"parity must be cos or sin, got {self.parity!r}")
        if len(self.w) != len(self.k):
            raise ValueError("amplitude vector and frequency must share the dimension")


def curl_field(stream_terms: list[TrigTerm], geometry: TorusGeometry) -> list[VectorTrigTerm]:
    """Rotated gradient of a 2-d stream function: W = (-d2 eta, d1 eta).

    div W = 0 identically, so W (and e^{-V} W under any V) is admissible as
    the antisymmetric part of the drift over the flat 2-torus with V = const.
    """
    if geometry.d != 2:
        raise ValueError("curl_field is a 2-d construction")
    alpha = geometry.freq
    out = []
    for t in stream_terms:
        if len(t.k) != 2:
            raise ValueError("curl_field is a 2-d construction")
        k1, k2 = t.k
        a = t.amplitude * alpha
        if t.parity == "cos":
            # d_a eta = -amp sqrt(2) alpha k_a sin(...)
            out.append(VectorTrigTerm(t.k, "sin", (a * k2, -a * k1)))
        else:
            out.append(VectorTrigTerm(t.k, "cos", (-a * k2, a * k1)))
    return out


def _eval_terms(terms, geometry, points, deriv_axis=None):
    """Evaluate sum of sqrt(2)-normalized trig terms (or a derivative) on points."""
    alpha = geometry.freq
    vals = np.zeros(points.shape[0])
    for t in terms:
        ph = alpha * (points @ np.asarray(t.k, dtype=float))
        if deriv_axis is None:
            f = np.cos(ph) if t.parity == "cos" else np.sin(ph)
            vals += t.amplitude * SQRT2 * f
        else:
            ka = t.k[deriv_axis]
            if t.parity == "cos":
                vals += -t.amplitude * SQRT2 * alpha * ka * np.sin(ph)
            else:
                vals += t.amplitude * SQRT2 * alpha * ka * np.cos(ph)
    return vals


@dataclass(frozen=True)
class DriftSpec:
    """Full drift b = grad V + Z with admissibility diagnostics.

    z_const is the constant part of Z; z_terms the trigonometric part,
    interpreted in the same sqrt(2)-normalized basis as V. The check grid for
    the divergence residual has `check_n` points per axis (alias-free for the
    small trig fields used here).
    """

    geometry: TorusGeometry
    v_terms: tuple = ()
    z_const: tuple | None = None
    z_terms: tuple = ()
    check_n: int = 12
    mu_divergence_residual: float = field(init=False, default=0.0)
    z_sup: float = field(init=False, default=0.0)

    def __post_init__(self):
        d = self.geometry.d
        object.__setattr__(self, "v_terms", tuple(self.v_terms))
        object.__setattr__(self, "z_terms", tuple(self.z_terms))
        for t in self.v_terms:
            if len(t.k) != d:
                raise ValueError("V term dimension mismatch")
        for t in self.z_terms:
            if len(t.k) != d:
                raise ValueError("Z term dimension mismatch")
        if self.z_const is not None and len(self.z_const) != d:
            raise ValueError("z_const dimension mismatch")

        grid = self._check_grid()
        z = self.z_values(grid)
        z_sup = float(np.max(np.linalg.norm(z, axis=1))) if len(grid) else 0.0
        object.__setattr__(self, "z_sup", z_sup)
        resid = self._divergence_residual(grid, z)
        object.__setattr__(self, "mu_divergence_residual", resid)
        if resid > 1e-8 * (1.0 + z_sup):
            raise ValueError(
                f"Z is not divergence-free for mu: sup |div(e^V Z)| = {resid:.3e}"
            )

    def _check_grid(self):
        d, L = self.geometry.d, self.geometry.L
        n = self.check_n if d <= 2 else max(6, min(self.check_n, 8))
        ax = np.linspace(0.0, L, n, endpoint=False)
        return np.stack(np.meshgrid(*([ax] * d), indexing="ij"), -1).reshape(-1, d)

    @property
    def is_symmetric(self) -> bool:
        return self.z_const is None and not self.z_terms

    @property
    def v_is_constant(self) -> bool:
        return not self.v_terms

    def v_values(self, points) -> np.ndarray:
        return _eval_terms(self.v_terms, self.geometry, np.atleast_2d(points))

    def grad_v_values(self, points) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.stack(
            [_eval_terms(self.v_terms, self.geometry, points, deriv_axis=a)
             for a in range(self.geometry.d)],
            axis=1,
        )

    def z_values(self, points) -> np.ndarray:
        points = np.atleast_2d(points)
        d = self.geometry.d
        z = np.zeros((points.shape[0], d))
        if self.z_const is not None:
            z += np.asarray(self.z_const, dtype=float)
        alpha = self.geometry.freq
        for t in self.z_terms:
            ph = alpha * (points @ np.asarray(t.k, dtype=float))
            f = np.cos(ph) if t.parity == "cos" else np.sin(ph)
            z += SQRT2 * np.outer(f, np.asarray(t.w, dtype=float))
        return z

    def drift_values(self, points) -> np.ndarray:
        points = np.atleast_2d(points)
        out = self.z_values(points)
        if self.v_terms:
            out = out + self.grad_v_values(points)
        return out

    def _divergence_residual(self, grid, z) -> float:
        """sup over the grid of |div(e^V Z)| / e^V = |grad V . Z + div Z|."""
        if self.z_const is None and not self.z_terms:
            return 0.0
        d = self.geometry.d
        alpha = self.geometry.freq
        divz = np.zeros(grid.shape[0])
        for t in self.z_terms:
            kvec = np.asarray(t.k, dtype=float)
            ph = alpha * (grid @ kvec)
            wk = alpha * float(np.dot(t.w, kvec))
            divz += -SQRT2 * wk * np.sin(ph) if t.parity == "cos" else SQRT2 * wk * np.cos(ph)
        if self.v_terms:
            gv = self.grad_v_values(grid)
            divz = divz + np.sum(gv * z, axis=1)
        return float(np.max(np.abs(divz)))

    def kernel_arrays(self):
        """Compile to the (const, freq, amp_cos, amp_sin) arrays the kernel eats.

        Terms sharing a frequency vector are merged. The output drift is
        b(x) = const + sum_j amp_cos[j] cos(alpha m_j.x) + amp_sin[j] sin(alpha m_j.x),
        absorbing the sqrt(2) normalization and the gradient's alpha k factors.
        """
        d = self.geometry.d
        alpha = self.geometry.freq
        const = np.zeros(d)
        if self.z_const is not None:
            const += np.asarray(self.z_const, dtype=float)
        rows: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

        def row(k):
            return rows.setdefault(tuple(int(v) for v in k), (np.zeros(d), np.zeros(d)))

        for t in self.v_terms:
            cos_amp, sin_amp = row(t.k)
            kvec = np.asarray(t.k, dtype=float)
            if t.parity == "cos":  # grad of a cos term is a sin row
                sin_amp -= t.amplitude * SQRT2 * alpha * kvec
            else:
                cos_amp += t.amplitude * SQRT2 * alpha * kvec
        for t in self.z_terms:
            cos_amp, sin_amp = row(t.k)
            wvec = SQRT2 * np.asarray(t.w, dtype=float)
            if t.parity == "cos":
                cos_amp += wvec
            else:
                sin_amp += wvec

        if rows:
            freq = np.array(sorted(rows), dtype=np.int64)
            amp_c = np.stack([rows[tuple(k)][0] for k in freq])
            amp_s = np.stack([rows[tuple(k)][1] for k in freq])
        else:
            freq = np.zeros((0, d), dtype=np.int64)
            amp_c = np.zeros((0, d))
            amp_s = np.zeros((0, d))
        return const, freq, amp_c, amp_s
