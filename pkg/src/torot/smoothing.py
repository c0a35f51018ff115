"""Smoothed empirical densities and the transport-energy toolbox built on them.

A run of the diffusion yields per-mode coefficients psi_i(T). Smoothing with
the heat flow for time eps and dividing by sqrt(T) gives the density
fluctuation

    u - 1 = (1/sqrt(T)) sum_i exp(-lambda_i eps) psi_i phi_i,

whose Poisson potential f = (-Lhat)^{-1}(u - 1) drives every energy in this
module: the H^1 energy mu(|grad f|^2), the grid Hessian sup used for the
flatness event, the interpolation action, and the weighted Ledoux bound.

Grid evaluation goes through the inverse FFT: each representative mode k
occupies lattice bins k mod n and -k mod n, so any grid with n > 2*max|k_a|
is alias-free. Derivatives are coefficient multiplications before the
transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from torot.geometry import (
    ModeSet,
    eigenfunction_values,
    spectral_sum_inv_lambda,
)

SQRT2 = math.sqrt(2.0)

__all__ = [
    "SpectralEmpirical",
    "eps_schedule",
    "smoothed_density",
    "f_potential",
    "h1_energy",
    "hessian_sup",
    "flatness_event",
    "dm_action",
    "ledoux_bound",
    "smoothing_band_energy",
    "psi_from_histogram",
    "uniform_grid",
]


def eps_schedule(T: float, gamma: float = 4.0) -> float:
    """Smoothing time (log T)^gamma / T; requires gamma > 3 and T > 1."""
    if gamma <= 3.0:
        raise ValueError(
            f"gamma = {gamma} is too small: the smoothing schedule (log T)^gamma / T "
            "needs gamma > 3"
        )
    if T <= 1.0:
        raise ValueError("the schedule needs T > 1")
    return math.log(T) ** gamma / T


@dataclass(frozen=True)
class SpectralEmpirical:
    """Per-mode coefficients psi_i(T) of one sample, with its smoothing time.

    The represented density fluctuation u - 1 has pair coefficients
    exp(-lambda eps) psi / sqrt(T); the constant mode is absent, so the
    mu-integral of u - 1 is zero identically.
    """

    mode_set: ModeSet
    psi: np.ndarray
    T: float
    eps: float

    def __post_init__(self):
        psi = np.ascontiguousarray(self.psi, dtype=np.float64)
        object.__setattr__(self, "psi", psi)
        if psi.shape != (2 * self.mode_set.n_rep,):
            raise ValueError("psi must hold one value per eigenfunction pair entry")
        if not np.all(np.isfinite(psi)):
            raise ValueError("psi contains non-finite entries")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")

    def u_coefficients(self) -> np.ndarray:
        """Pair coefficients of u - 1."""
        return np.exp(-self.eps * self.mode_set.lam_pairs) * self.psi / math.sqrt(self.T)

    def f_coefficients(self) -> np.ndarray:
        return self.u_coefficients() / self.mode_set.lam_pairs

    def with_eps(self, eps: float) -> "SpectralEmpirical":
        return SpectralEmpirical(self.mode_set, self.psi, self.T, eps)

    def tail_energy_bound(self) -> float:
        """Upper bound on the expected H^1 energy beyond the truncation.

        Uses E psi^2 <= 2/lambda and e^{-2 lam eps} <= e^{-lam_max eps} e^{-lam eps}
        for lam > lam_max, so the discarded energy is at most
        (2/T) e^{-lam_max eps} S1(eps). Infinite at eps = 0.
        """
        if self.eps == 0.0:
            return math.inf
        g = self.mode_set.geometry
        lam_max = self.mode_set.lambda_max
        return (
            2.0
            / self.T
            * math.exp(-lam_max * self.eps)
            * spectral_sum_inv_lambda(g, self.eps)
        )


def uniform_grid(geometry, n: int, centered: bool = False) -> np.ndarray:
    """All n^d lattice points as an (n^d, d) array, C order."""
    h = geometry.L / n
    axis = np.arange(n) * h + (0.5 * h if centered else 0.0)
    mesh = np.meshgrid(*([axis] * geometry.d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _nyquist_floor(mode_set: ModeSet) -> int:
    return 2 * int(np.max(np.abs(mode_set.kvecs))) + 1


def _check_grid(mode_set: ModeSet, n: int) -> None:
    floor = _nyquist_floor(mode_set)
    if n < floor:
        raise ValueError(
            f"grid n = {n} aliases the mode set; need n >= {floor} (Nyquist)"
        )


def _spectral_grid(
    mode_set: ModeSet,
    coeffs: np.ndarray,
    n: int,
    deriv: tuple = (),
    centered: bool = False,
) -> np.ndarray:
    """Evaluate sum_i coeffs_i phi_i, differentiated along `deriv`, on the grid."""
    _check_grid(mode_set, n)
    g = mode_set.geometry
    d = g.d
    kv = mode_set.kvecs
    alpha = g.freq
    c = coeffs[0::2]
    s = coeffs[1::2]
    w_plus = (c - 1j * s) / SQRT2  # coefficient on e_k
    w_minus = (c + 1j * s) / SQRT2  # on e_{-k}
    for axis in deriv:
        w_plus = w_plus * (1j * alpha * kv[:, axis])
        w_minus = w_minus * (-1j * alpha * kv[:, axis])
    if centered:
        phase = np.exp(1j * math.pi * kv.sum(axis=1) / n)
        w_plus = w_plus * phase
        w_minus = w_minus * np.conj(phase)
    spec = np.zeros(n**d, dtype=complex)
    idx_plus = np.ravel_multi_index(tuple((kv % n).T), (n,) * d)
    idx_minus = np.ravel_multi_index(tuple((-kv % n).T), (n,) * d)
    np.add.at(spec, idx_plus, w_plus)
    np.add.at(spec, idx_minus, w_minus)
    vals = np.fft.ifftn(spec.reshape((n,) * d)) * n**d
    return vals.real


def smoothed_density(
    se: SpectralEmpirical,
    points: np.ndarray | None = None,
    grid_n: int | None = None,
    centered: bool = False,
    tail_tol: float | None = 0.05,
) -> np.ndarray:
    """u_{T,eps} at given points, or on the regular grid when grid_n is set.

    Raw values may be slightly negative; exporting as a probability vector
    (with the clamp rule) is the grid-density constructor's job. The tail
    certificate rejects mode sets too small for the smoothing time; pass
    tail_tol=None for synthetic coefficient vectors outside the diffusion
    model.
    """
    if (points is None) == (grid_n is None):
        raise ValueError("pass exactly one of points or grid_n")
    if tail_tol is not None:
        bound = se.tail_energy_bound()
        if bound > tail_tol:
            raise ValueError(
                f"expected smoothing tail {bound:.3e} exceeds {tail_tol:.1e}; "
                "enlarge lambda_max or eps"
            )
    coeffs = se.u_coefficients()
    if points is not None:
        return 1.0 + eigenfunction_values(se.mode_set, points) @ coeffs
    return 1.0 + _spectral_grid(se.mode_set, coeffs, grid_n, centered=centered)


def f_potential(se: SpectralEmpirical) -> np.ndarray:
    """Pair coefficients of f = (-Lhat)^{-1}(u - 1)."""
    return se.f_coefficients()


def h1_energy(se: SpectralEmpirical) -> float:
    """mu(|grad f|^2) = (1/T) sum_i e^{-2 lambda_i eps} psi_i^2 / lambda_i."""
    lam = se.mode_set.lam_pairs
    return float(np.sum(np.exp(-2.0 * se.eps * lam) * se.psi**2 / lam) / se.T)


_DEFAULT_GRID = {1: 1024, 2: 128, 3: 24, 4: 12}


def _grid_default(mode_set: ModeSet, grid_n: int | None) -> int:
    if grid_n is not None:
        return grid_n
    base = _DEFAULT_GRID.get(mode_set.geometry.d, 8)
    return max(base, _nyquist_floor(mode_set))


def third_derivative_bound(se: SpectralEmpirical) -> float:
    """sqrt(2) sum_i |f-coef_i| (alpha |k_i|)^3, an upper bound on ||grad^3 f||."""
    lam = se.mode_set.lam_pairs
    return float(SQRT2 * np.sum(np.abs(se.f_coefficients()) * lam**1.5))


def hessian_sup(
    se: SpectralEmpirical, certify: bool = False, grid_n: int | None = None
) -> tuple:
    """Grid maximum of the spectral Hessian operator norm of f.

    With certify=True the second element carries value + Lipschitz slack
    ||grad^3 f|| * (cell diagonal)/2, a rigorous bound on the continuum sup;
    otherwise it is None.
    """
    n = _grid_default(se.mode_set, grid_n)
    g = se.mode_set.geometry
    d = g.d
    fc = se.f_coefficients()
    npts = n**d
    hess = np.empty((npts, d, d))
    for a in range(d):
        for b in range(a, d):
            comp = _spectral_grid(se.mode_set, fc, n, deriv=(a, b)).ravel()
            hess[:, a, b] = comp
            hess[:, b, a] = comp
    value = float(np.max(np.abs(np.linalg.eigvalsh(hess))))
    if not certify:
        return value, None
    slack = third_derivative_bound(se) * (math.sqrt(d) * g.L / n) / 2.0
    return value, value + slack


def flatness_event(
    se: SpectralEmpirical, xi: float, certify: bool = False, grid_n: int | None = None
) -> bool:
    """Whether the Hessian of f stays below xi (grid sup; certified on request)."""
    if xi <= 0:
        raise ValueError("xi must be positive")
    value, certified = hessian_sup(se, certify=certify, grid_n=grid_n)
    measure = certified if certify else value
    return bool(measure <= xi)


def dm_action(se: SpectralEmpirical, steps: int, grid_n: int | None = None) -> float:
    """Interpolation action int_0^1 mu(|grad f|^2 / u_s) ds, u_s = (1-s) + s u.

    Midpoint rule in s with `steps` nodes, uniform-grid quadrature in x
    (spectrally accurate for these smooth periodic integrands). Errors out
    when the density touches zero, where the interpolating field is undefined.
    """
    if steps < 1:
        raise ValueError("steps must be positive")
    n = _grid_default(se.mode_set, grid_n)
    u = 1.0 + _spectral_grid(se.mode_set, se.u_coefficients(), n).ravel()
    if u.min() <= 0.0:
        raise ValueError(f"nonpositive density (min {u.min():.3e}); cannot interpolate")
    fc = se.f_coefficients()
    g2 = np.zeros(u.shape)
    for a in range(se.mode_set.geometry.d):
        g2 += _spectral_grid(se.mode_set, fc, n, deriv=(a,)).ravel() ** 2
    nodes = (np.arange(steps) + 0.5) / steps
    total = 0.0
    for s in nodes:
        total += float(np.mean(g2 / ((1.0 - s) + s * u)))
    return total / steps


def ledoux_bound(
    u_se: SpectralEmpirical, v_se: SpectralEmpirical, grid_n: int | None = None
) -> float:
    """Transport bound 4 int |grad (-Lhat)^{-1}(u - v)|^2 / v dmu.

    grid_n=None takes the denominator as 1 and the bound collapses to
    4 * (H^1 energy of the difference), exactly; otherwise the weighted
    integral is evaluated on the grid against v's density.
    """
    if u_se.mode_set is not v_se.mode_set and not np.array_equal(
        u_se.mode_set.kvecs, v_se.mode_set.kvecs
    ):
        raise ValueError("operands live on different mode sets")
    lam = u_se.mode_set.lam_pairs
    delta = u_se.u_coefficients() - v_se.u_coefficients()
    if grid_n is None:
        return float(4.0 * np.sum(delta**2 / lam))
    n = _grid_default(u_se.mode_set, grid_n)
    den = 1.0 + _spectral_grid(v_se.mode_set, v_se.u_coefficients(), n).ravel()
    if den.min() <= 0.0:
        raise ValueError(f"nonpositive density (min {den.min():.3e}) in denominator")
    gc = delta / lam
    g2 = np.zeros(den.shape)
    for a in range(u_se.mode_set.geometry.d):
        g2 += _spectral_grid(u_se.mode_set, gc, n, deriv=(a,)).ravel() ** 2
    return float(4.0 * np.mean(g2 / den))


def smoothing_band_energy(se: SpectralEmpirical, eps_lo: float, eps_hi: float) -> float:
    """8 int_{eps_lo}^{eps_hi} ||u_{T,s} - 1||_{L^2}^2 ds, in closed form.

    Dominates the unit-denominator ledoux_bound between the same smoothing
    times: per mode, (e^{-a} - e^{-b})^2 <= e^{-2a} - e^{-2b}.
    """
    if not 0 <= eps_lo <= eps_hi:
        raise ValueError("need 0 <= eps_lo <= eps_hi")
    lam = se.mode_set.lam_pairs
    band = np.exp(-2.0 * eps_lo * lam) - np.exp(-2.0 * eps_hi * lam)
    return float(4.0 * np.sum(se.psi**2 * band / lam) / se.T)


def psi_from_histogram(mode_set: ModeSet, counts: np.ndarray, dt: float) -> np.ndarray:
    """Recover psi coefficients from an occupation histogram.

    Treats each visit as sitting at its cell center and reads the mode sums
    off one FFT of the count array. Cell quadrature attenuates mode k by
    roughly prod_a sinc(pi k_a / n), a relative bias of order (pi |k| / n)^2 / 6,
    so keep n well above the largest frequency of interest.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = mode_set.geometry
    counts = np.asarray(counts)
    if counts.ndim == 1:
        side = round(counts.shape[0] ** (1.0 / g.d))
        if side**g.d != counts.shape[0]:
            raise ValueError("flat histogram length is not a d-th power")
        counts = counts.reshape((side,) * g.d)
    n = counts.shape[0]
    if counts.shape != (n,) * g.d:
        raise ValueError("histogram must be a d-cube")
    _check_grid(mode_set, n)
    total = float(counts.sum())
    if total <= 0:
        raise ValueError("histogram is empty")
    T = dt * total
    F = np.fft.fftn(counts.astype(np.float64) * dt)
    kv = mode_set.kvecs
    flat = F.ravel()[np.ravel_multi_index(tuple((kv % n).T), (n,) * g.d)]
    flat = flat * np.exp(-1j * math.pi * kv.sum(axis=1) / n)
    psi = np.empty(2 * mode_set.n_rep)
    psi[0::2] = SQRT2 * flat.real
    psi[1::2] = -SQRT2 * flat.imag
    return psi / math.sqrt(T)
