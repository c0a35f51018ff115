"""Flat-torus geometry and exact Laplace spectrum.

Conventions used across the package:

* the torus is (R/LZ)^d with the normalized volume measure mu = dx / L^d;
* Laplace eigenvalues are lambda_k = (2*pi/L)^2 |k|^2 for k in Z^d \\ {0};
* the real eigenbasis is sqrt(2)*cos(2*pi*k.x/L), sqrt(2)*sin(2*pi*k.x/L),
  unit-normalized in L^2(mu), with k and -k merged into one representative
  whose first nonzero component is positive;
* the heat semigroup is exp(t*Laplacian) (not the probabilist's half).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

__all__ = [
    "TorusGeometry",
    "EigenPair",
    "ModeSet",
    "enumerate_modes",
    "weyl_count",
    "theta",
    "heat_trace",
    "spectral_sum_inv_lambda",
    "spectral_sum_inv_lambda_sq",
    "heat_kernel",
    "poisson_kernel_coeffs",
    "heat_trace_coefficient",
    "weyl_coefficient",
    "transport_limit_constant",
    "eigenfunction_values",
]

# pairs admitted by enumerate_modes before we refuse to materialize the set
DEFAULT_MODE_BUDGET = 2_000_000


@dataclass(frozen=True)
class TorusGeometry:
    """Side length and dimension of a flat torus (R/LZ)^d."""

    d: int
    L: float

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if not (self.L > 0.0) or not math.isfinite(self.L):
            raise ValueError(f"side length must be positive and finite, got {self.L}")

    @property
    def vol(self) -> float:
        return self.L**self.d

    @property
    def diameter(self) -> float:
        # farthest pair sits at L/2 per coordinate
        return 0.5 * self.L * math.sqrt(self.d)

    @property
    def freq(self) -> float:
        """Base angular frequency 2*pi/L."""
        return 2.0 * math.pi / self.L

    @property
    def lambda_min(self) -> float:
        return self.freq**2


@dataclass(frozen=True)
class EigenPair:
    """One real Laplace eigenfunction sqrt(2)*{cos,sin}(2*pi*k.x/L).

    ``norm`` records the L^2(mu) normalization (always 1 with the sqrt(2)
    amplitude); it is kept as an explicit field so downstream code never
    has to re-derive the convention.
    """

    k: tuple
    parity: str  # "cos" | "sin"
    lam: float
    norm: float = 1.0


class ModeSet:
    """All eigenpairs with 0 < lambda <= lambda_max, deterministically ordered.

    Ordering: ascending |k|^2, then lexicographic on the representative k,
    then cos before sin.  ``kvecs`` holds one row per representative;
    eigenpairs come in (cos, sin) pairs so the pair count is 2 * len(kvecs).
    """

    def __init__(self, geometry: TorusGeometry, lambda_max: float, kvecs: np.ndarray):
        self.geometry = geometry
        self.lambda_max = float(lambda_max)
        self.kvecs = np.ascontiguousarray(kvecs, dtype=np.int64)
        self.ksq = np.sum(self.kvecs.astype(np.float64) ** 2, axis=1)
        self.lam = geometry.freq**2 * self.ksq
        self._pairs = None

    def __len__(self) -> int:
        return 2 * self.kvecs.shape[0]

    @property
    def n_rep(self) -> int:
        return self.kvecs.shape[0]

    @property
    def pairs(self) -> list:
        if self._pairs is None:
            out = []
            for row, lam in zip(self.kvecs, self.lam):
                k = tuple(int(v) for v in row)
                out.append(EigenPair(k, "cos", float(lam)))
                out.append(EigenPair(k, "sin", float(lam)))
            self._pairs = out
        return self._pairs

    @property
    def lam_pairs(self) -> np.ndarray:
        """Eigenvalues aligned with pair order, shape (2 * n_rep,)."""
        return np.repeat(self.lam, 2)

    def index(self, k, parity: str) -> int:
        k = np.asarray(k, dtype=np.int64)
        hit = np.nonzero(np.all(self.kvecs == k, axis=1))[0]
        if hit.size == 0:
            raise KeyError(f"mode {tuple(k)} not in set (lambda_max={self.lambda_max})")
        return 2 * int(hit[0]) + {"cos": 0, "sin": 1}[parity]


def enumerate_modes(
    geometry: TorusGeometry, lambda_max: float, budget: int = DEFAULT_MODE_BUDGET
) -> ModeSet:
    """Enumerate eigenpairs with lambda <= lambda_max by scanning the lattice.

    Raises ValueError when the pair count would exceed ``budget`` so callers
    cannot accidentally materialize an astronomically large basis.
    """
    if lambda_max <= 0:
        raise ValueError("lambda_max must be positive")
    ksq_max = lambda_max / geometry.freq**2
    kmax = int(math.floor(math.sqrt(ksq_max) + 1e-12))
    if kmax < 1:
        return ModeSet(geometry, lambda_max, np.empty((0, geometry.d), dtype=np.int64))

    # rough count check before building the grid
    est = (2 * kmax + 1) ** geometry.d
    if est > 50 * max(budget, 1):
        raise ValueError(
            f"mode enumeration over a {2 * kmax + 1}^{geometry.d} lattice exceeds "
            f"the budget of {budget} pairs; lower lambda_max or raise the budget"
        )

    axes = [np.arange(-kmax, kmax + 1, dtype=np.int64)] * geometry.d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, geometry.d)
    ksq = np.sum(grid.astype(np.float64) ** 2, axis=1)
    keep = (ksq > 0) & (ksq <= ksq_max + 1e-9)
    grid = grid[keep]

    # keep the representative of {k, -k} whose first nonzero entry is positive
    nz = grid != 0
    first = np.argmax(nz, axis=1)
    sign = np.sign(grid[np.arange(grid.shape[0]), first])
    grid = grid[sign > 0]

    if 2 * grid.shape[0] > budget:
        raise ValueError(
            f"{2 * grid.shape[0]} eigenpairs at lambda_max={lambda_max} exceed "
            f"the budget of {budget}"
        )

    ksq = np.sum(grid.astype(np.float64) ** 2, axis=1)
    order = np.lexsort(tuple(grid[:, j] for j in range(geometry.d - 1, -1, -1)) + (ksq,))
    return ModeSet(geometry, lambda_max, grid[order])


def weyl_count(mode_set: ModeSet, lam: float) -> int:
    """Number of eigenpairs with eigenvalue <= lam inside the set."""
    if lam > mode_set.lambda_max + 1e-9:
        raise ValueError(
            f"count at lambda={lam} exceeds the enumeration cutoff "
            f"lambda_max={mode_set.lambda_max}"
        )
    return 2 * int(np.count_nonzero(mode_set.lam <= lam + 1e-9))


def theta(t: float, L: float) -> float:
    """One-dimensional lattice heat sum sum_n exp(-t * (2*pi*n/L)^2).

    Summed directly for large t; for small t the Poisson-resummed form
    sqrt(pi/a) * sum_n exp(-pi^2 n^2 / a) with a = t*(2*pi/L)^2 converges in
    a couple of terms.  Both branches are truncated at machine precision.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    a = t * (2.0 * math.pi / L) ** 2
    if a >= math.pi:
        nmax = int(math.sqrt(50.0 / a)) + 1
        n = np.arange(1, nmax + 1)
        return 1.0 + 2.0 * float(np.sum(np.exp(-a * n * n)))
    b = math.pi**2 / a
    nmax = int(math.sqrt(50.0 / b)) + 1
    n = np.arange(1, nmax + 1)
    return math.sqrt(math.pi / a) * (1.0 + 2.0 * float(np.sum(np.exp(-b * n * n))))


def heat_trace(geometry: TorusGeometry, t: float) -> float:
    """sum_i exp(-t*lambda_i) over the nonzero spectrum, via factorization.

    The full lattice sum factorizes as theta(t, L)^d; subtracting 1 removes
    the zero mode.
    """
    return theta(t, geometry.L) ** geometry.d - 1.0


def _trace_tail(geometry: TorusGeometry, moment: int, t_star: float, shift: float) -> float:
    """Analytic remainder of int_{t_star}^inf (t - shift)^moment * trace dt.

    Beyond t_star the trace is 2*d*exp(-alpha*t) up to a relative error
    below exp(-3*alpha*t_star/4); both the leading term and that bound are
    integrated in closed form and returned together.
    """
    alpha = geometry.lambda_min
    d = geometry.d
    lead = 2.0 * d * math.exp(-alpha * t_star)
    if moment == 0:
        base = lead / alpha
    else:
        base = lead * (t_star - shift + 1.0 / alpha) / alpha
    # crude but safe inflation for the neglected lattice terms
    return base * (1.0 + 4.0 * d * math.exp(-2.0 * alpha * t_star))


def _quad_logspace(f, lo: float, hi: float, tol: float) -> float:
    val, err = quad(
        lambda u: f(math.exp(u)) * math.exp(u),
        math.log(lo),
        math.log(hi),
        epsabs=tol,
        epsrel=1e-12,
        limit=400,
    )
    if not math.isfinite(val) or err > max(tol, 1e-10 * abs(val)) * 50:
        raise RuntimeError(
            f"spectral-sum quadrature did not converge (estimate {val}, abserr {err})"
        )
    return val


def spectral_sum_inv_lambda(geometry: TorusGeometry, s: float, tol: float = 1e-10) -> float:
    """sum_i exp(-s*lambda_i)/lambda_i via int_s^inf trace(t) dt.

    Adaptive Gauss-Kronrod on a log grid up to t* = 50/lambda_min, plus the
    analytic exponential tail.
    """
    if s <= 0:
        raise ValueError("s must be positive")
    t_star = 50.0 / geometry.lambda_min
    if s >= t_star:
        return _trace_tail(geometry, 0, s, 0.0)
    body = _quad_logspace(lambda t: heat_trace(geometry, t), s, t_star, tol)
    return body + _trace_tail(geometry, 0, t_star, 0.0)


def spectral_sum_inv_lambda_sq(geometry: TorusGeometry, eps: float, tol: float = 1e-10) -> float:
    """sum_i exp(-2*eps*lambda_i)/lambda_i^2.

    Fubini on the double Laplace representation collapses it to the single
    integral int_{2eps}^inf (t - 2*eps) * trace(t) dt.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    s = 2.0 * eps
    t_star = 50.0 / geometry.lambda_min
    if s >= t_star:
        return _trace_tail(geometry, 1, s, s)
    body = _quad_logspace(lambda t: (t - s) * heat_trace(geometry, t), s, t_star, tol)
    return body + _trace_tail(geometry, 1, t_star, s)


def eigenfunction_values(mode_set: ModeSet, points: np.ndarray) -> np.ndarray:
    """Matrix of eigenfunction values, shape (n_points, n_pairs).

    Columns follow pair order: sqrt(2)*cos then sqrt(2)*sin per representative.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    phases = pts @ (mode_set.kvecs.T * mode_set.geometry.freq)
    out = np.empty((pts.shape[0], 2 * mode_set.n_rep))
    out[:, 0::2] = math.sqrt(2.0) * np.cos(phases)
    out[:, 1::2] = math.sqrt(2.0) * np.sin(phases)
    return out


def heat_kernel(
    mode_set: ModeSet, t: float, x: np.ndarray, y: np.ndarray, tail_tol: float = 1e-10
) -> np.ndarray:
    """Heat kernel p_t(x, y) w.r.t. mu from the truncated eigenexpansion.

    Refuses to answer when the discarded spectral tail, measured exactly as
    heat_trace(t) minus the in-set trace, exceeds tail_tol.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    in_set = float(np.sum(2.0 * np.exp(-t * mode_set.lam)))
    tail = heat_trace(mode_set.geometry, t) - in_set
    if tail > tail_tol:
        raise ValueError(
            f"truncation tail {tail:.3e} at t={t} exceeds {tail_tol:.1e}; "
            "enlarge lambda_max"
        )
    phx = eigenfunction_values(mode_set, x)
    phy = eigenfunction_values(mode_set, y)
    w = np.exp(-t * mode_set.lam_pairs)
    return 1.0 + np.einsum("ij,ij->i", phx * w, phy)


def poisson_kernel_coeffs(mode_set: ModeSet, eps: float) -> np.ndarray:
    """Coefficients exp(-eps*lambda_i)/lambda_i in pair order (eps >= 0)."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    lam = mode_set.lam_pairs
    return np.exp(-eps * lam) / lam


def _unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0)


def heat_trace_coefficient(geometry: TorusGeometry) -> float:
    """Leading coefficient of t^{d/2} * heat_trace as t -> 0: vol/(4*pi)^{d/2}."""
    return geometry.vol / (4.0 * math.pi) ** (geometry.d / 2.0)


def weyl_coefficient(geometry: TorusGeometry) -> float:
    """Leading coefficient of the eigenvalue counting function N(lambda)/lambda^{d/2}."""
    return _unit_ball_volume(geometry.d) * geometry.vol / (2.0 * math.pi) ** geometry.d


def transport_limit_constant(geometry: TorusGeometry) -> float:
    """Limit of (T/log T) * E W_2^2 in dimension four: twice the trace coefficient."""
    if geometry.d != 4:
        raise ValueError("the log-scaled transport limit is specific to d = 4")
    return 2.0 * heat_trace_coefficient(geometry)


@lru_cache(maxsize=16)
def _cached_modes(d: int, L: float, lambda_max: float) -> ModeSet:
    return enumerate_modes(TorusGeometry(d, L), lambda_max)


def cached_modes(geometry: TorusGeometry, lambda_max: float) -> ModeSet:
    """Memoized enumerate_modes for repeated pipeline calls."""
    return _cached_modes(geometry.d, geometry.L, lambda_max)
