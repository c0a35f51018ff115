"""Experiment orchestration: energy and transport pipelines plus a verifier.

The two pipelines tie the simulation layer to the spectral predictions. The
energy pipeline scales the mean smoothed H^1 energy by T / log T and compares
it against the exact truncated prediction and against the d = 4 limit
constant vol / (8 pi^2). The transport pipeline estimates W2^2 against the
invariant measure per replica on a grid and itemizes the error budget
(statistical, grid, entropic, smoothing band).

`verify` runs named suites of deterministic checks with pinned seeds and
returns a machine-readable ledger. Every check is isolated: a failure or an
exception marks that entry failed and the suite keeps going. Ledgers carry
no timestamps, so a repeated run with the same seed is byte-identical;
wall-clock provenance lives in RunManifest instead.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import NamedTuple

import numpy as np

from torot import __version__
from torot.concentration import TestFunction, flatness_tail, tail_empirics
from torot.config import ExperimentConfig
from torot.diffusion import SimConfig, simulate
from torot.drift import DriftSpec, TrigTerm, curl_field
from torot.geometry import (
    TorusGeometry,
    cached_modes,
    heat_trace,
    heat_trace_coefficient,
    spectral_sum_inv_lambda_sq,
    transport_limit_constant,
    weyl_coefficient,
    weyl_count,
)
from torot.smoothing import SpectralEmpirical, h1_energy, smoothing_band_energy
from torot.transport import GridDensity, kernel_norm_scaling, lp_w2, sinkhorn_w2
from torot.variance import generator_matrix, clt_empirics, identity_star0_check, psi_moment_prediction

SUITES = ("spectral", "variance", "concentration", "pipeline")

DEFAULT_T_GRID = (1.0e3, 1.0e4, 1.0e5)


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Provenance record for one orchestrated run.

    Timestamps live here and only here; data files and ledgers stay
    timestamp-free so reruns can be compared byte for byte. Two manifests
    describe the same run when `same_outputs` holds, regardless of when
    they were produced.
    """

    config_hash: str
    code_version: str
    seed: int
    created: str
    outputs: dict

    @classmethod
    def start(cls, config: ExperimentConfig, seed: int | None = None) -> "RunManifest":
        stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return cls(
            config_hash=config.config_hash,
            code_version=__version__,
            seed=config.seed if seed is None else int(seed),
            created=stamp,
            outputs={},
        )

    def record(self, stage: str, path) -> None:
        self.outputs[stage] = {
            "path": os.path.basename(str(path)),
            "sha256": _sha256_file(path),
        }

    def same_outputs(self, other: "RunManifest") -> bool:
        return (
            self.config_hash == other.config_hash
            and self.code_version == other.code_version
            and self.seed == other.seed
            and self.outputs == other.outputs
        )

    def write(self, path) -> None:
        body = {
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "seed": self.seed,
            "created": self.created,
            "outputs": self.outputs,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(body, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            body = json.load(fh)
        return cls(
            config_hash=body["config_hash"],
            code_version=body["code_version"],
            seed=int(body["seed"]),
            created=body["created"],
            outputs=body["outputs"],
        )


def truncated_prediction(gen, T: float, eps: float) -> float:
    """(1/log T) sum_i e^{-2 lambda_i eps}/lambda_i * (leading E|psi_i|^2).

    The sum runs over the generator's retained pair indices, so this is the
    exact expectation of the scaled smoothed energy up to the per-mode O(1/T)
    remainder and the truncation tail, both controlled elsewhere.
    """
    if T <= 1.0:
        raise ValueError("T must exceed 1 for the log normalization")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    lam = gen.mode_set.lam_pairs
    lead = np.array([psi_moment_prediction(i, gen) for i in range(lam.size)])
    return float(np.sum(np.exp(-2.0 * eps * lam) / lam * lead) / math.log(T))


def second_moment_discrete(lam: float, b: float, dt: float, n_steps: int) -> float:
    """Exact E|psi(T)|^2 for one mode of the discretized stationary chain.

    The step autocovariance of the sqrt(2)-normalized pair member is
    Re r^j with r = exp((-lam + i b) dt), exact because constant drift makes
    the Euler update an exact transition. Summing the double occupation sum
    in closed form gives the discrete second moment; against the leading
    2/lam - 2 V(Z phi)/lam^2 it exposes the O(1/T) remainder without Monte
    Carlo noise.
    """
    if lam <= 0 or dt <= 0 or n_steps < 1:
        raise ValueError("lam, dt and n_steps must be positive")
    n = n_steps
    r = complex(math.cos(b * dt), math.sin(b * dt)) * math.exp(-lam * dt)
    # sum_{m=1}^{n-1} (n - m) r^m via the standard geometric identities
    s1 = r * (1.0 - r ** (n - 1)) / (1.0 - r)
    s2 = r * (1.0 - n * r ** (n - 1) + (n - 1) * r**n) / (1.0 - r) ** 2
    total = n + 2.0 * (n * s1 - s2).real
    T = n * dt
    return float(dt * dt / T * total)


class ConstantRow(NamedTuple):
    T: float
    eps: float
    replicas: int
    mc_mean: float
    mc_stderr: float
    prediction: float
    z_gap: float
    limit: float


CONSTANT_COLUMNS = ["T", "eps", "replicas", "mc_mean", "mc_stderr", "prediction", "z_gap", "limit"]


@dataclass(frozen=True)
class ConstantReport:
    """Scaled smoothed-energy rows across a horizon grid.

    mc_mean and mc_stderr carry (T / log T) * mean replica h1_energy and its
    standard error (nan in prediction-only rows). prediction is the exact
    truncated spectral value on the same scale, z_gap the prediction drop
    caused by the configured Z (zero when the drift is symmetric), limit the
    constant the scaled means approach as T grows.
    """

    config_hash: str
    lambda_max: float
    rows: tuple

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(CONSTANT_COLUMNS)
            for row in self.rows:
                wr.writerow(
                    [
                        repr(row.T),
                        repr(row.eps),
                        row.replicas,
                        repr(row.mc_mean),
                        repr(row.mc_stderr),
                        repr(row.prediction),
                        repr(row.z_gap),
                        repr(row.limit),
                    ]
                )

    def to_mapping(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "lambda_max": self.lambda_max,
            "rows": [row._asdict() for row in self.rows],
        }


def _check_t_grid(T_grid) -> tuple:
    grid = tuple(float(t) for t in (DEFAULT_T_GRID if T_grid is None else T_grid))
    if not grid:
        raise ValueError("T_grid must not be empty")
    for t in grid:
        if t <= 1.0:
            raise ValueError(f"T = {t} too small: the log normalization needs T > 1")
    return grid


def run_constant_pipeline(
    config: ExperimentConfig,
    *,
    T_grid=None,
    replicas: int | None = None,
    threads: int = 1,
    limit_constant: float | None = None,
) -> ConstantReport:
    """Scaled smoothed H^1 energy against its spectral prediction over T_grid.

    replicas overrides the configured count; zero requests prediction-only
    rows (no simulation). All rows share the configured seed, so a rerun
    with the same config reproduces the CSV bit for bit.
    """
    if config.d != 4:
        raise ValueError(f"the T/log T scaling is the d = 4 law; config has d = {config.d}")
    grid = _check_t_grid(T_grid)
    R = config.replicas if replicas is None else int(replicas)
    if R < 0:
        raise ValueError("replicas must be nonnegative")
    drift = config.drift()
    ms = config.mode_set()
    gen = generator_matrix(ms, drift)
    has_z = drift.z_const is not None or bool(drift.z_terms)
    gen0 = generator_matrix(ms, DriftSpec(config.geometry, v_terms=drift.v_terms)) if has_z else None
    limit = transport_limit_constant(config.geometry) if limit_constant is None else float(limit_constant)

    rows = []
    for T in grid:
        eps = config.eps_for(T)
        prediction = truncated_prediction(gen, T, eps)
        z_gap = truncated_prediction(gen0, T, eps) - prediction if has_z else 0.0
        mc_mean = math.nan
        mc_stderr = math.nan
        if R > 0:
            sim = simulate(config.sim_config(T=T, replicas=R), drift, ms, threads=threads)
            psi = sim.accumulator.psi()
            weights = np.exp(-2.0 * eps * ms.lam_pairs) / ms.lam_pairs
            scaled = psi**2 @ weights / math.log(T)
            mc_mean = float(scaled.mean())
            mc_stderr = float(scaled.std(ddof=1) / math.sqrt(R)) if R > 1 else math.nan
        rows.append(ConstantRow(T, eps, R, mc_mean, mc_stderr, prediction, z_gap, limit))
    return ConstantReport(config.config_hash, config.lambda_max, tuple(rows))


class W2Row(NamedTuple):
    T: float
    eps: float
    replicas: int
    grid_n: int
    reg: float
    w2_sq_mean: float
    w2_sq_stderr: float
    h1_mean: float
    ratio_mean: float
    band_mean: float
    grid_scale: float
    scaled_w2: float
    limit: float


W2_COLUMNS = [
    "T",
    "eps",
    "replicas",
    "grid_n",
    "reg",
    "w2_sq_mean",
    "w2_sq_stderr",
    "h1_mean",
    "ratio_mean",
    "band_mean",
    "grid_scale",
    "scaled_w2",
    "limit",
]


@dataclass(frozen=True)
class W2Report:
    """Per-horizon transport rows with the error budget itemized.

    w2_sq_mean, w2_sq_stderr, h1_mean and band_mean are raw per-replica
    means (band_mean is the energy the smoothing removed below eps, the
    smoothing-vs-raw component). reg is the entropic blur scale and
    grid_scale = d (L/n)^2 / 12 the cell-quantization scale, both raw W2^2
    units. scaled_w2 = (T / log T) w2_sq_mean is the column to hold against
    limit.
    """

    config_hash: str
    rows: tuple

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(W2_COLUMNS)
            for row in self.rows:
                wr.writerow(
                    [
                        repr(row.T),
                        repr(row.eps),
                        row.replicas,
                        row.grid_n,
                        repr(row.reg),
                        repr(row.w2_sq_mean),
                        repr(row.w2_sq_stderr),
                        repr(row.h1_mean),
                        repr(row.ratio_mean),
                        repr(row.band_mean),
                        repr(row.grid_scale),
                        repr(row.scaled_w2),
                        repr(row.limit),
                    ]
                )

    def to_mapping(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "rows": [row._asdict() for row in self.rows],
        }


def replica_w2(
    se: SpectralEmpirical,
    grid_n: int,
    *,
    reg: float | None = None,
    max_iters: int = 5000,
    tol: float = 1e-9,
    uniform: GridDensity | None = None,
) -> tuple:
    """(W2^2 estimate vs uniform, h1 energy, smoothed-away band) for one sample.

    A zero-coefficient sample gives exactly (0, 0, 0): its grid density
    equals the uniform reference cell for cell and the debiasing cancels.
    """
    geometry = se.mode_set.geometry
    if uniform is None:
        uniform = GridDensity.uniform(geometry, grid_n)
    density = GridDensity.from_spectral(se, grid_n)
    w2 = sinkhorn_w2(density, uniform, reg=reg, max_iters=max_iters, tol=tol)
    return w2, h1_energy(se), smoothing_band_energy(se, 0.0, se.eps)


def run_w2_pipeline(
    config: ExperimentConfig,
    *,
    T_grid=None,
    replicas: int | None = None,
    threads: int = 1,
    limit_constant: float | None = None,
) -> W2Report:
    """Entropic W2^2 against the invariant measure, replica by replica.

    Defaults to the single configured horizon (the transport stage is the
    expensive one). The ratio column tracks the linearization claim that
    W2^2 of the smoothed empirical measure matches its H^-1 energy.
    """
    if config.d != 4:
        raise ValueError(f"the T/log T scaling is the d = 4 law; config has d = {config.d}")
    grid = _check_t_grid((config.T,) if T_grid is None else T_grid)
    R = config.replicas if replicas is None else int(replicas)
    if R < 1:
        raise ValueError("the transport pipeline needs at least one replica")
    drift = config.drift()
    ms = config.mode_set()
    geometry = config.geometry
    n = config.grid_n
    reg = 2.0 * (geometry.L / n) ** 2 if config.reg is None else config.reg
    grid_scale = geometry.d * (geometry.L / n) ** 2 / 12.0
    limit = transport_limit_constant(geometry) if limit_constant is None else float(limit_constant)
    uniform = GridDensity.uniform(geometry, n)

    rows = []
    for T in grid:
        eps = config.eps_for(T)
        sim = simulate(config.sim_config(T=T, replicas=R), drift, ms, threads=threads)
        psi = sim.accumulator.psi()
        w2s = np.empty(R)
        h1s = np.empty(R)
        bands = np.empty(R)
        for r in range(R):
            se = SpectralEmpirical(ms, psi[r], T, eps)
            w2s[r], h1s[r], bands[r] = replica_w2(
                se, n, reg=config.reg, max_iters=config.max_iters, tol=config.tol, uniform=uniform
            )
        valid = h1s > 0
        ratio_mean = float((w2s[valid] / h1s[valid]).mean()) if valid.any() else math.nan
        scale = T / math.log(T)
        rows.append(
            W2Row(
                T=T,
                eps=eps,
                replicas=R,
                grid_n=n,
                reg=float(reg),
                w2_sq_mean=float(w2s.mean()),
                w2_sq_stderr=float(w2s.std(ddof=1) / math.sqrt(R)) if R > 1 else math.nan,
                h1_mean=float(h1s.mean()),
                ratio_mean=ratio_mean,
                band_mean=float(bands.mean()),
                grid_scale=grid_scale,
                scaled_w2=float(scale * w2s.mean()),
                limit=limit,
            )
        )
    return W2Report(config.config_hash, tuple(rows))


# ---------------------------------------------------------------------------
# Verification suites
# ---------------------------------------------------------------------------

_PROFILES = {
    "full": {
        "green_eps": (1e-4, 1e-2),
        "weyl_lambda": 400.0,
        "scaling_eps": (1e-3, 1e-1),
        "scaling_eps_n0": (1e-4, 1e-2),
        "star0_lambda": 50.0,
        "moment_T": 200.0,
        "moment_dt": 1e-3,
        "moment_replicas": 2048,
        "remainder_T": (100.0, 400.0),
        "tail_T": 200.0,
        "tail_replicas": 4096,
        "flat_T": (1e3, 1e4, 1e5),
        "flat_replicas": (512, 256, 128),
        "energy_T": 1e4,
        "energy_replicas": 256,
        "w2_T": 1e4,
        "w2_replicas": 64,
        "w2_grid": 16,
        "lp_n": 64,
    },
    "smoke": {
        "green_eps": (1e-3, 1e-1),
        "weyl_lambda": 100.0,
        "scaling_eps": (1e-3, 1e-1),
        "scaling_eps_n0": (1e-3, 1e-1),
        "star0_lambda": 12.0,
        "moment_T": 50.0,
        "moment_dt": 5e-3,
        "moment_replicas": 512,
        "remainder_T": (100.0, 400.0),
        "tail_T": 100.0,
        "tail_replicas": 1024,
        "flat_T": (50.0, 400.0),
        "flat_replicas": (16, 8),
        "energy_T": 400.0,
        "energy_replicas": 32,
        "w2_T": 400.0,
        "w2_replicas": 8,
        "w2_grid": 8,
        "lp_n": 32,
    },
}

_G4 = TorusGeometry(4, 2.0 * math.pi)


def _entry(name, passed, measured, target, tolerance, detail) -> dict:
    def plain(x):
        if isinstance(x, (list, tuple)):
            return [plain(v) for v in x]
        if isinstance(x, (int, np.integer)):
            return int(x)
        if x is None or isinstance(x, str):
            return x
        return float(x)

    return {
        "name": name,
        "passed": bool(passed),
        "measured": plain(measured),
        "target": plain(target),
        "tolerance": tolerance,
        "detail": detail,
    }


def _guard(name, fn) -> dict:
    try:
        return fn()
    except Exception as exc:  # noqa: BLE001  (stage isolation is the contract)
        return _entry(name, False, None, None, None, f"error: {exc}")


def _spectral_checks(seed, prof, limit, threads) -> list:
    del seed, limit, threads  # deterministic spectral facts

    def heat() -> dict:
        t = 1e-3
        measured = t * t * heat_trace(_G4, t)
        target = heat_trace_coefficient(_G4)
        rel = abs(measured / target - 1.0)
        return _entry(
            "heat_trace_constant", rel <= 1e-3, measured, target, "rel <= 0.001",
            f"t^2 trace at t = {t}, deviation {rel:.2e}",
        )

    def green() -> dict:
        lo, hi = prof["green_eps"]
        measured = spectral_sum_inv_lambda_sq(_G4, lo) - spectral_sum_inv_lambda_sq(_G4, hi)
        target = heat_trace_coefficient(_G4) * math.log(hi / lo)
        rel = abs(measured / target - 1.0)
        return _entry(
            "green_log_divergence", rel <= 0.05, measured, target, "rel <= 0.05",
            f"S2({lo:g}) - S2({hi:g}), deviation {rel:.2e}",
        )

    def weyl() -> dict:
        lam = prof["weyl_lambda"]
        ms = cached_modes(_G4, lam)
        measured = weyl_count(ms, lam) / lam**2
        target = weyl_coefficient(_G4)
        rel = abs(measured / target - 1.0)
        return _entry(
            "weyl_ratio", rel <= 0.03, measured, target, "rel <= 0.03",
            f"N({lam:g})/{lam:g}^2, deviation {rel:.2e}",
        )

    def scaling(n, eps_lo, eps_hi, rel_tol) -> dict:
        fit = kernel_norm_scaling(_G4, n, 2, np.geomspace(eps_lo, eps_hi, 7))
        rel = abs(fit.fitted / fit.expected - 1.0)
        kind = "log coefficient" if fit.log_case else "power slope"
        return _entry(
            f"kernel_scaling_n{n}", rel <= rel_tol, fit.fitted, fit.expected,
            f"rel <= {rel_tol}", f"{kind} over eps in [{eps_lo:g}, {eps_hi:g}]",
        )

    lo, hi = prof["scaling_eps"]
    lo0, hi0 = prof["scaling_eps_n0"]
    return [
        _guard("heat_trace_constant", heat),
        _guard("green_log_divergence", green),
        _guard("weyl_ratio", weyl),
        _guard("kernel_scaling_n2", lambda: scaling(2, lo, hi, 0.10)),
        _guard("kernel_scaling_n1", lambda: scaling(1, lo, hi, 0.10)),
        _guard("kernel_scaling_n0", lambda: scaling(0, lo0, hi0, 0.15)),
    ]


def _moment_cases(seed, prof, threads):
    """Simulate the two pinned drift cases once and cache psi samples."""
    ms = cached_modes(_G4, 1.0)
    idx = ms.index((1, 0, 0, 0), "cos")
    out = []
    for offset, drift in (
        (1, DriftSpec(_G4)),
        (2, DriftSpec(_G4, z_const=(1.0, 0.0, 0.0, 0.0))),
    ):
        cfg = SimConfig(
            dt=prof["moment_dt"],
            T=prof["moment_T"],
            seed=seed + offset,
            replicas=prof["moment_replicas"],
        )
        sim = simulate(cfg, drift, ms, threads=threads)
        gen = generator_matrix(ms, drift)
        out.append((gen, idx, sim.accumulator.psi()[:, idx]))
    return out


def _variance_checks(seed, prof, limit, threads) -> list:
    del limit
    checks = []

    def star0_const() -> dict:
        ms = cached_modes(_G4, prof["star0_lambda"])
        worst = 0.0
        for z in ((1.0, 0.0, 0.0, 0.0), (2.0, 0.0, 0.0, 0.0), (1.0, 1.0, 0.0, 0.0)):
            gen = generator_matrix(ms, DriftSpec(_G4, z_const=z))
            for i in range(2 * ms.n_rep):
                worst = max(worst, identity_star0_check(i, gen))
        return _entry(
            "star0_constant_z", worst <= 1e-10, worst, 0.0, "<= 1e-10",
            f"3 constant fields x {2 * ms.n_rep} modes, lambda <= {prof['star0_lambda']:g}",
        )

    def star0_trig() -> dict:
        g2 = TorusGeometry(2, 2.0 * math.pi)
        stream = [
            TrigTerm((1, 0), "cos", 0.35),
            TrigTerm((1, 1), "sin", -0.28),
            TrigTerm((0, 2), "cos", 0.175),
        ]
        gen = generator_matrix(cached_modes(g2, 60.0), DriftSpec(g2, z_terms=curl_field(stream, g2)))
        worst = 0.0
        for k, parity in (((1, 0), "cos"), ((1, 1), "sin"), ((2, 1), "cos")):
            worst = max(worst, identity_star0_check(gen.mode_set.index(k, parity), gen))
        return _entry(
            "star0_trig_z", worst <= 1e-8, worst, 0.0, "<= 1e-8",
            "curl stream field on the 2-torus, Galerkin cutoff 60",
        )

    checks.append(_guard("star0_constant_z", star0_const))
    checks.append(_guard("star0_trig_z", star0_trig))

    try:
        cases = _moment_cases(seed, prof, threads)
    except Exception as exc:  # noqa: BLE001
        reason = f"error: {exc}"
        for tag in ("z0", "const_z"):
            checks.append(_entry(f"psi_moment_{tag}", False, None, None, None, reason))
            checks.append(_entry(f"clt_variance_{tag}", False, None, None, None, reason))
            checks.append(_entry(f"clt_kurtosis_{tag}", False, None, None, None, reason))
        cases = []

    for tag, (gen, idx, samples) in zip(("z0", "const_z"), cases):
        def moment(gen=gen, idx=idx, samples=samples) -> dict:
            x = samples[:512] ** 2
            mean = float(x.mean())
            stderr = float(x.std(ddof=1) / math.sqrt(x.size))
            target = psi_moment_prediction(idx, gen)
            ok = abs(mean - target) <= 3.0 * stderr
            return _entry(
                f"psi_moment_{tag}", ok, mean, target, "<= 3*stderr",
                f"512 replicas at T = {prof['moment_T']:g}, stderr {stderr:.3g}",
            )

        def clt_var(gen=gen, idx=idx, samples=samples) -> dict:
            rep = clt_empirics(idx, gen, samples)
            ok = abs(rep["variance_z"]) <= 3.0
            return _entry(
                f"clt_variance_{tag}", ok, rep["sample_variance"], rep["target_variance"],
                "<= 3*stderr", f"{rep['n']} replicas, z = {rep['variance_z']:.2f}",
            )

        def clt_kurt(gen=gen, idx=idx, samples=samples) -> dict:
            rep = clt_empirics(idx, gen, samples)
            ok = abs(rep["excess_kurtosis"]) <= 0.3
            return _entry(
                f"clt_kurtosis_{tag}", ok, rep["excess_kurtosis"], 0.0, "|kurt| <= 0.3",
                f"{rep['n']} replicas, normality p = {rep['normality_pvalue']:.3f}",
            )

        checks.append(_guard(f"psi_moment_{tag}", moment))
        checks.append(_guard(f"clt_variance_{tag}", clt_var))
        checks.append(_guard(f"clt_kurtosis_{tag}", clt_kurt))

    def remainder() -> dict:
        # Exact discrete second moments expose the O(1/T) remainder; Monte
        # Carlo noise at a few hundred replicas would bury it.
        t_lo, t_hi = prof["remainder_T"]
        dt = prof["moment_dt"]
        lead = 2.0
        r_lo = abs(second_moment_discrete(1.0, 0.0, dt, round(t_lo / dt)) - lead)
        r_hi = abs(second_moment_discrete(1.0, 0.0, dt, round(t_hi / dt)) - lead)
        ratio = r_lo / r_hi
        expected = t_hi / t_lo
        ok = expected / 2.0 <= ratio <= expected * 2.0
        return _entry(
            "psi_remainder_decay", ok, ratio, expected, "within factor 2",
            f"|moment - leading| at T = {t_lo:g} vs {t_hi:g}, dt = {dt:g}",
        )

    checks.append(_guard("psi_remainder_decay", remainder))
    return checks


def _concentration_checks(seed, prof, limit, threads) -> list:
    del limit

    def tail() -> tuple:
        g = TestFunction(_G4, [TrigTerm((1, 0, 0, 0), "cos", 1.0)])
        T = prof["tail_T"]
        xi_star = 2.0 * math.sqrt(g.sigma_sq / T)
        xis = [0.2, 0.3, 0.4]
        if abs(xi_star - 0.2) < 1e-12:
            star_idx = 0
        else:
            star_idx = len(xis)
            xis.append(xi_star)
        cfg = SimConfig(dt=0.05, T=T, seed=seed + 3, replicas=prof["tail_replicas"])
        report = tail_empirics(g, xis, cfg, threads=threads)
        dom = [(r.ci_upper, r.bound_c1) for r in report.rows[:3]]
        dom_ok = all(ci <= bound for ci, bound in dom)
        dominance = _entry(
            "bernstein_dominance", dom_ok,
            [r.ci_upper for r in report.rows[:3]],
            [r.bound_c1 for r in report.rows[:3]],
            "ci_upper <= bound", f"xi in {tuple(xis[:3])}, T = {T:g}, {report.replicas} replicas",
        )
        star = report.rows[star_idx]
        g_ok = 0.01 <= star.freq <= 0.10
        gauss = _entry(
            "gaussian_regime", g_ok, star.freq, [0.01, 0.10], "in [0.01, 0.10]",
            f"xi* = {star.xi:.4f} = 2 sqrt(sigma^2/T), count {star.exceed_count}",
        )
        return dominance, gauss

    try:
        dominance, gauss = tail()
    except Exception as exc:  # noqa: BLE001
        reason = f"error: {exc}"
        dominance = _entry("bernstein_dominance", False, None, None, None, reason)
        gauss = _entry("gaussian_regime", False, None, None, None, reason)

    def flatness() -> dict:
        ms = cached_modes(_G4, 16.0)
        report = flatness_tail(
            ms,
            DriftSpec(_G4),
            prof["flat_T"],
            gamma=4.0,
            replicas=prof["flat_replicas"],
            seed=seed + 4,
        )
        ok = report.trend_nonincreasing()
        counts = [(r.fail_count, r.replicas) for r in report.rows]
        return _entry(
            "flatness_trend", ok, report.frequencies, "nonincreasing", "CI-overlap trend",
            f"failure counts {counts} over T = {tuple(prof['flat_T'])}",
        )

    return [dominance, gauss, _guard("flatness_trend", flatness)]


def _pipeline_checks(seed, prof, limit, threads) -> list:
    checks = []
    target_limit = transport_limit_constant(_G4) if limit is None else float(limit)

    energy_cfg = ExperimentConfig(
        dt=0.02,
        T=prof["energy_T"],
        replicas=prof["energy_replicas"],
        seed=seed + 5,
        lambda_max=4.0,
    )

    try:
        energy = run_constant_pipeline(energy_cfg, T_grid=(prof["energy_T"],), threads=threads, limit_constant=limit)
        row = energy.rows[0]
    except Exception as exc:  # noqa: BLE001
        reason = f"error: {exc}"
        checks.append(_entry("energy_mc_vs_prediction", False, None, None, None, reason))
        checks.append(_entry("prediction_vs_limit", False, None, None, None, reason))
        row = None
    if row is not None:
        gap = abs(row.mc_mean - row.prediction)
        checks.append(
            _entry(
                "energy_mc_vs_prediction", gap <= 3.0 * row.mc_stderr,
                row.mc_mean, row.prediction, "<= 3*stderr",
                f"T = {row.T:g}, {row.replicas} replicas, stderr {row.mc_stderr:.3g}",
            )
        )
        rel = abs(row.prediction / target_limit - 1.0)
        checks.append(
            _entry(
                "prediction_vs_limit", rel <= 0.25, row.prediction, target_limit,
                "rel <= 0.25", f"deviation {rel:.3f} at T = {row.T:g}",
            )
        )

    def z_gap() -> dict:
        cfg = energy_cfg.replace(z_const=(1.0, 0.0, 0.0, 0.0))
        report = run_constant_pipeline(cfg, T_grid=DEFAULT_T_GRID, replicas=0, threads=threads, limit_constant=limit)
        series = [r.z_gap / math.log(r.T) for r in report.rows]
        ok = all(b <= a for a, b in zip(series, series[1:]))
        return _entry(
            "z_gap_trend", ok, series, "nonincreasing", "monotone over the T grid",
            f"prediction gap / log T at T = {DEFAULT_T_GRID}",
        )

    checks.append(_guard("z_gap_trend", z_gap))

    def ratio() -> dict:
        cfg = ExperimentConfig(
            dt=0.02,
            T=prof["w2_T"],
            replicas=prof["w2_replicas"],
            seed=seed + 6,
            lambda_max=4.0,
            grid_n=prof["w2_grid"],
        )
        report = run_w2_pipeline(cfg, threads=threads, limit_constant=limit)
        row = report.rows[0]
        ok = 0.5 <= row.ratio_mean <= 1.5
        return _entry(
            "w2_h1_ratio", ok, row.ratio_mean, [0.5, 1.5], "in [0.5, 1.5]",
            f"T = {row.T:g}, {row.replicas} replicas, grid {row.grid_n}^4, reg {row.reg:.3g}",
        )

    checks.append(_guard("w2_h1_ratio", ratio))

    def lp_agreement() -> dict:
        g1 = TorusGeometry(1, 2.0 * math.pi)
        n = prof["lp_n"]
        h = g1.L / n
        x = (np.arange(n) + 0.5) * h
        dens = np.zeros(n)
        for m in range(-4, 5):
            dens += np.exp(-((x - 0.0 + g1.L * m) ** 2) / (2.0 * 0.15))
        a = GridDensity(g1, n, dens / dens.sum())
        b = GridDensity.uniform(g1, n)
        exact = lp_w2(a, b)
        est = sinkhorn_w2(a, b)
        rel = abs(est / exact - 1.0)
        return _entry(
            "sinkhorn_vs_lp", rel <= 0.02, est, exact, "rel <= 0.02",
            f"wrapped gaussian vs uniform on {n} cells, deviation {rel:.2e}",
        )

    checks.append(_guard("sinkhorn_vs_lp", lp_agreement))
    return checks


_SUITE_RUNNERS = {
    "spectral": _spectral_checks,
    "variance": _variance_checks,
    "concentration": _concentration_checks,
    "pipeline": _pipeline_checks,
}


def verify(
    suite: str = "all",
    *,
    seed: int = 0,
    profile: str = "full",
    out_dir=None,
    limit_constant: float | None = None,
    threads: int = 1,
) -> dict:
    """Run one suite (or all) of pinned checks and return the ledger.

    profile "full" runs every check at its stated scale; "smoke" keeps the
    same checks at reduced horizons and replica counts for integration and
    determinism testing. limit_constant replaces the d = 4 limit constant
    in the pipeline targets, the injection point for tamper tests. The
    ledger is timestamp-free and byte-stable for a fixed seed.
    """
    if suite != "all" and suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}: choose from {SUITES + ('all',)}")
    if profile not in _PROFILES:
        raise ValueError(f"unknown profile {profile!r}: choose from {tuple(_PROFILES)}")
    prof = _PROFILES[profile]
    names = SUITES if suite == "all" else (suite,)
    checks = []
    for name in names:
        for entry in _SUITE_RUNNERS[name](int(seed), prof, limit_constant, threads):
            entry["suite"] = name
            checks.append(entry)
    ledger = {
        "suite": suite,
        "profile": profile,
        "seed": int(seed),
        "code_version": __version__,
        "limit_constant": transport_limit_constant(_G4) if limit_constant is None else float(limit_constant),
        "checks": checks,
        "passed": all(c["passed"] for c in checks),
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(str(out_dir), f"verify_{suite}.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(ledger, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return ledger
