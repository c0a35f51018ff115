"""Bernstein tails for diffusion time averages, checked against Monte Carlo.

For a zero-mean trigonometric observable g the time average
(1/T) int_0^T g(X_t) dt obeys

    P(|avg| > xi) <= 2 exp(-T xi^2 / (2 (sigma^2 + c ||g||_{L^{d/2}} xi)))

with sigma^2 = 2 int g (-Lhat)^{-1} g dmu. Both norms are computable here:
sigma^2 spectrally (2 sum c_i^2 / lambda_i on the orthonormal basis), the
L^{d/2} norm by grid quadrature. The constant c comes from a Sobolev
inequality and carries no canonical numeric value on the torus; it is a
parameter with default 1, and empirical dominance at c = 1 is calibration
evidence rather than proof.

tail_empirics measures exceedance frequencies over a shared batch of
replicas, so counts are exactly monotone along xi, and attaches exact
binomial (Clopper-Pearson) confidence limits. flatness_tail plays the same
game for the Hessian-flatness event of the smoothed empirical density,
histogramming each path instead of accumulating per-mode sums.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from torot import kernels
from torot.diffusion import SimConfig, sample_stationary, simulate
from torot.drift import SQRT2, DriftSpec, TrigTerm, _eval_terms
from torot.geometry import ModeSet, TorusGeometry
from torot.smoothing import (
    SpectralEmpirical,
    eps_schedule,
    flatness_event,
    psi_from_histogram,
    uniform_grid,
)

# Quadrature floors for the L^{d/2} norm. For d = 4 the integrand |g|^2 is
# itself a trigonometric polynomial, so any n above twice its bandwidth is
# exact and the per-g floor 4 kmax + 1 wins; odd powers are merely smooth
# away from the zero set of g and want more points.
_QUAD_FLOOR = {2: 64, 3: 32}


def _canonical_term(term: TrigTerm) -> tuple:
    """Reduce a term to the representative of {k, -k}.

    Cosine is even and sine odd, so negating k keeps the cosine coefficient
    and flips the sine one.
    """
    first = next(v for v in term.k if v)
    if first > 0:
        return term.k, term.parity, term.amplitude
    flipped = tuple(-v for v in term.k)
    amp = term.amplitude if term.parity == "cos" else -term.amplitude
    return flipped, term.parity, amp


@dataclass(frozen=True)
class TestFunction:
    """A zero-mean trig observable with the two norms the tail bound needs.

    Terms are merged onto one coefficient per representative mode, so the
    stored tuple is an expansion over an orthonormal family and Parseval
    applies directly. The measure is the uniform one (the asymmetric
    experiments keep V = 0, and sigma_sq never involves Z). sigma_sq is
    2 sum c^2 / lambda; l_half_norm is ||g||_{L^{d/2}} by grid quadrature
    with quadrature_n points per axis (default per-dimension floor, raised
    to 4 kmax + 1 where that makes the rule exact); sup_bound is the safe
    envelope sqrt(2) sum |c| >= ||g||_inf.
    """

    geometry: TorusGeometry
    terms: tuple
    quadrature_n: int | None = None
    sigma_sq: float = field(init=False, default=0.0)
    l_half_norm: float = field(init=False, default=0.0)
    sup_bound: float = field(init=False, default=0.0)

    def __post_init__(self):
        d = self.geometry.d
        if d < 2:
            raise ValueError("the L^{d/2} norm needs d >= 2")
        terms = tuple(self.terms)
        if not terms:
            raise ValueError("g needs at least one term")
        merged: dict = {}
        for t in terms:
            if len(t.k) != d:
                raise ValueError("term dimension mismatch")
            k, parity, amp = _canonical_term(t)
            merged[(k, parity)] = merged.get((k, parity), 0.0) + amp
        canon = tuple(
            TrigTerm(k, parity, amp)
            for (k, parity), amp in sorted(
                merged.items(),
                key=lambda kp: (sum(v * v for v in kp[0][0]), kp[0][0], kp[0][1]),
            )
            if amp != 0.0
        )
        if not canon:
            raise ValueError("g vanishes after merging coefficients")
        object.__setattr__(self, "terms", canon)

        amps = np.array([t.amplitude for t in canon])
        lam = self.geometry.freq ** 2 * np.array(
            [float(sum(v * v for v in t.k)) for t in canon]
        )
        object.__setattr__(self, "sigma_sq", float(2.0 * np.sum(amps**2 / lam)))
        object.__setattr__(self, "sup_bound", float(SQRT2 * np.sum(np.abs(amps))))

        kmax = max(abs(v) for t in canon for v in t.k)
        n = self.quadrature_n
        if n is None:
            n = max(4 * kmax + 1, _QUAD_FLOOR.get(d, 0))
        elif n < 2 * kmax + 1:
            raise ValueError(f"quadrature_n {n} aliases frequencies up to {kmax}")
        vals = np.abs(self.values(uniform_grid(self.geometry, n)))
        half = float(np.mean(vals ** (d / 2.0))) ** (2.0 / d)
        object.__setattr__(self, "l_half_norm", half)

    def values(self, points: np.ndarray) -> np.ndarray:
        return _eval_terms(self.terms, self.geometry, np.asarray(points, dtype=float))


class BernsteinBound(NamedTuple):
    probability: float  # exponential bound clipped to [0, 1]
    raw: float  # the same quantity unclipped (vacuous when > 1)


def bernstein_bound(g: TestFunction, xi: float, T: float, c: float = 1.0) -> BernsteinBound:
    """Deviation bound 2 exp(-T xi^2 / (2 (sigma^2 + c ||g|| xi)))."""
    if xi <= 0 or T <= 0 or c <= 0:
        raise ValueError("xi, T and c must all be positive")
    raw = 2.0 * math.exp(-T * xi * xi / (2.0 * (g.sigma_sq + c * g.l_half_norm * xi)))
    return BernsteinBound(min(raw, 1.0), raw)


def cp_upper(count: int, n: int, level: float = 0.99) -> float:
    """One-sided Clopper-Pearson upper confidence limit for count-of-n."""
    _check_counts(count, n, level)
    if count == n:
        return 1.0
    return float(stats.beta.ppf(level, count + 1, n - count))


def cp_lower(count: int, n: int, level: float = 0.99) -> float:
    """One-sided Clopper-Pearson lower confidence limit for count-of-n."""
    _check_counts(count, n, level)
    if count == 0:
        return 0.0
    return float(stats.beta.ppf(1.0 - level, count, n - count + 1))


def _check_counts(count, n, level):
    if n < 1:
        raise ValueError("n must be positive")
    if not 0 <= count <= n:
        raise ValueError(f"count {count} outside 0..{n}")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")


class TailRow(NamedTuple):
    xi: float
    exceed_count: int
    freq: float
    ci_upper: float
    bound_c1: float


@dataclass(frozen=True)
class TailReport:
    """Exceedance table of one observable at one horizon.

    Every row is computed from the same replica averages, so exceed_count is
    exactly nonincreasing in xi. ci_upper is the 99% Clopper-Pearson upper
    limit; bound_c1 the Bernstein bound at c = 1. `averages` keeps the raw
    per-replica time averages for downstream checks.
    """

    T: float
    replicas: int
    rows: tuple
    averages: np.ndarray = field(repr=False, compare=False)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["xi", "T", "replicas", "exceed_count", "freq", "ci_upper", "bound_c1"])
            for row in self.rows:
                wr.writerow(
                    [
                        repr(row.xi),
                        repr(self.T),
                        self.replicas,
                        row.exceed_count,
                        repr(row.freq),
                        repr(row.ci_upper),
                        repr(row.bound_c1),
                    ]
                )


def tail_empirics(
    g: TestFunction,
    xi_list,
    config: SimConfig,
    drift: DriftSpec | None = None,
    *,
    threads: int = 1,
) -> TailReport:
    """Monte Carlo exceedance frequencies of |(1/T) int g(X_t) dt|.

    drift=None means the plain Brownian case (V = 0, Z = 0). The horizon and
    replica count come from config. When the smallest Bernstein bound of
    interest falls below cp_upper(0, replicas), no outcome can witness
    dominance; that shows up in the report as ci_upper > bound_c1 at zero
    counts and asks for more replicas.
    """
    xis = [float(v) for v in xi_list]
    if not xis:
        raise ValueError("xi_list is empty")
    if min(xis) <= 0:
        raise ValueError("every xi must be positive")
    if drift is None:
        drift = DriftSpec(g.geometry)
    if drift.geometry != g.geometry:
        raise ValueError("g and drift live on different tori")
    result = simulate(config, drift, None, extra_functionals=[list(g.terms)], threads=threads)
    avg = result.functional_averages[:, 0]
    rows = []
    for v in xis:
        count = int(np.count_nonzero(np.abs(avg) > v))
        rows.append(
            TailRow(
                v,
                count,
                count / config.replicas,
                cp_upper(count, config.replicas),
                bernstein_bound(g, v, config.T).probability,
            )
        )
    return TailReport(config.T, config.replicas, tuple(rows), avg)


class FlatnessRow(NamedTuple):
    T: float
    xi: float
    eps: float
    replicas: int
    fail_count: int
    freq: float
    ci_upper: float


@dataclass(frozen=True)
class FlatnessReport:
    """Failure frequencies of the flatness event across increasing horizons."""

    gamma: float
    rows: tuple

    @property
    def frequencies(self) -> list:
        return [r.freq for r in self.rows]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["T", "xi", "eps", "replicas", "fail_count", "freq", "ci_upper"])
            for r in self.rows:
                wr.writerow(
                    [
                        repr(r.T),
                        repr(r.xi),
                        repr(r.eps),
                        r.replicas,
                        r.fail_count,
                        repr(r.freq),
                        repr(r.ci_upper),
                    ]
                )

    def trend_nonincreasing(self, level: float = 0.99) -> bool:
        """Whether no later horizon shows a significant increase.

        Adjacent rows are compared through their exact binomial bands: an
        increase only counts when the later lower limit clears the earlier
        upper limit, so equal or noise-level frequencies pass. No absolute
        rate is asserted; the constant in front of the theoretical tail is
        unknown.
        """
        for a, b in zip(self.rows, self.rows[1:]):
            if cp_lower(b.fail_count, b.replicas, level) > cp_upper(a.fail_count, a.replicas, level):
                return False
        return True


def flatness_tail(
    mode_set: ModeSet,
    drift: DriftSpec,
    T_list,
    *,
    gamma: float = 4.0,
    replicas=128,
    seed: int = 0,
    dt: float | None = None,
    hist_n: int | None = None,
    xi: float | None = None,
    grid_n: int | None = None,
) -> FlatnessReport:
    """Empirical failure frequency of sup |Hess f| <= xi, xi = 1/log T.

    Each replica runs one path per horizon, histograms its positions, reads
    psi off the histogram and smooths at eps = (log T)^gamma / T. replicas
    may be a single count or one per horizon (long horizons afford fewer).
    xi overrides the 1/log T schedule when given.

    dt defaults to T/2e6 clipped to [0.01, 0.05]: with V = 0 and Z = 0 the
    Euler step is an exact Brownian update, so a coarse step leaves the path
    law alone and only inflates occupation sums by O((dt lambda)^2); with a
    drift present, prefer an explicit dt. hist_n defaults to 4 kmax + 1,
    which keeps the cell-center attenuation of the highest retained mode
    around the percent scale.
    """
    Ts = [float(t) for t in T_list]
    if not Ts:
        raise ValueError("T_list is empty")
    if any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise ValueError("T_list must be strictly increasing")
    if min(Ts) <= 1.0:
        raise ValueError("horizons must exceed 1")
    if xi is not None and xi <= 0:
        raise ValueError("xi must be positive")
    try:
        reps = [int(r) for r in replicas]
    except TypeError:
        reps = [int(replicas)] * len(Ts)
    if len(reps) != len(Ts):
        raise ValueError("replicas must be a count or one count per horizon")
    if min(reps) < 1:
        raise ValueError("replica counts must be positive")

    g = mode_set.geometry
    if drift.geometry != g:
        raise ValueError("mode set and drift live on different tori")
    kmax = int(np.max(np.abs(mode_set.kvecs)))
    n_h = hist_n if hist_n is not None else 4 * kmax + 1
    const, freq, amp_c, amp_s = drift.kernel_arrays()

    rows = []
    stream_offset = 0
    for T, R in zip(Ts, reps):
        xi_t = 1.0 / math.log(T) if xi is None else xi
        eps = eps_schedule(T, gamma)
        dt_t = dt if dt is not None else min(0.05, max(0.01, T / 2e6))
        n_steps = int(round(T / dt_t))
        gens = kernels.replica_generators(seed, R, start=stream_offset)
        stream_offset += R
        hist = np.zeros(n_h**g.d, dtype=np.int64)
        fails = 0
        for r in range(R):
            x0 = sample_stationary(drift, g, np.random.Generator(gens[r]))
            x = np.ascontiguousarray(x0[None, :])
            hist[:] = 0
            kernels.run_batch(
                x,
                g.L,
                dt_t,
                n_steps,
                [gens[r]],
                const_drift=const,
                drift_freq=freq,
                drift_cos=amp_c,
                drift_sin=amp_s,
                hist_n=n_h,
                hist_out=hist,
            )
            psi = psi_from_histogram(mode_set, hist, dt_t)
            se = SpectralEmpirical(mode_set, psi, T, eps)
            if not flatness_event(se, xi_t, grid_n=grid_n):
                fails += 1
        rows.append(
            FlatnessRow(T, xi_t, eps, R, fails, fails / R, cp_upper(fails, R))
        )
    return FlatnessReport(gamma, tuple(rows))
