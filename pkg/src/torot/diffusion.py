"""Euler-Maruyama simulation of dX = (grad V + Z) dt + sqrt(2) dW on the torus.

Occupation functionals are accumulated by left-endpoint Riemann sums along
each path: the normalized eigenfunction integrals psi_i(T) over a ModeSet,
plus time averages of extra trigonometric observables. Each replica owns a
counter-based Philox stream keyed by (seed, replica index), so results are
reproducible and independent of batching or thread count.

The sqrt(2) diffusion factor matches the generator Delta + grad V . grad + Z
(full Laplacian, not half).
"""

from __future__ import annotations

import csv
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from torot import kernels
from torot.drift import SQRT2, DriftSpec, TrigTerm
from torot.geometry import ModeSet, TorusGeometry

TRAJECTORY_MAGIC = b"WDIF1"
DT_LAMBDA_GUARD = 0.1


@dataclass(frozen=True)
class SimConfig:
    dt: float
    T: float
    seed: int
    replicas: int
    record_stride: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.T < self.dt:
            raise ValueError("T must be at least dt")
        if self.replicas < 1:
            raise ValueError("replicas must be positive")
        if self.record_stride < 0:
            raise ValueError("record_stride must be nonnegative")
        if abs(self.n_steps * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError("T must be an integer multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))


@dataclass
class Trajectory:
    """Recorded positions of one path at steps 0, stride, 2*stride, ..."""

    geometry: TorusGeometry
    dt: float
    record_stride: int
    positions: np.ndarray  # (n_records, d)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != self.geometry.d:
            raise ValueError("positions must be (n_records, d)")
        if np.any(pos < 0) or np.any(pos >= self.geometry.L):
            raise ValueError("positions must lie in [0, L)")
        self.positions = pos

    def write(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(TRAJECTORY_MAGIC)
            fh.write(struct.pack("<I", self.geometry.d))
            fh.write(struct.pack("<d", self.geometry.L))
            fh.write(struct.pack("<d", self.dt))
            fh.write(struct.pack("<I", self.record_stride))
            fh.write(struct.pack("<Q", self.positions.shape[0]))
            fh.write(np.ascontiguousarray(self.positions, dtype="<f8").tobytes())

    @classmethod
    def read(cls, path) -> "Trajectory":
        with open(path, "rb") as fh:
            magic = fh.read(5)
            if magic != TRAJECTORY_MAGIC:
                raise ValueError(f"bad trajectory magic {magic!r}")
            d = struct.unpack("<I", fh.read(4))[0]
            L = struct.unpack("<d", fh.read(8))[0]
            dt = struct.unpack("<d", fh.read(8))[0]
            stride = struct.unpack("<I", fh.read(4))[0]
            n_records = struct.unpack("<Q", fh.read(8))[0]
            data = np.frombuffer(fh.read(n_records * d * 8), dtype="<f8")
            if data.size != n_records * d:
                raise ValueError("trajectory file truncated")
        return cls(TorusGeometry(d, L), dt, stride, data.reshape(n_records, d).copy())


@dataclass
class OccupationAccumulator:
    """Per-replica running sums sum_t phi_i(X_t) dt over a ModeSet.

    psi_raw is (replicas, 2M) in the mode set's pair order; psi(T) converts
    to the normalized integrals psi_raw / sqrt(T). Accumulators over
    contiguous time segments of the same replicas add.
    """

    mode_set: ModeSet
    psi_raw: np.ndarray
    time_elapsed: float

    @property
    def replicas(self) -> int:
        return self.psi_raw.shape[0]

    def psi(self) -> np.ndarray:
        if self.time_elapsed <= 0:
            raise ValueError("no elapsed time accumulated")
        return self.psi_raw / math.sqrt(self.time_elapsed)

    def add(self, other: "OccupationAccumulator") -> "OccupationAccumulator":
        if other.mode_set is not self.mode_set and not np.array_equal(
            other.mode_set.kvecs, self.mode_set.kvecs
        ):
            raise ValueError("accumulators built over different mode sets")
        if other.psi_raw.shape != self.psi_raw.shape:
            raise ValueError("accumulators cover different replica counts")
        return OccupationAccumulator(
            self.mode_set, self.psi_raw + other.psi_raw, self.time_elapsed + other.time_elapsed
        )

    def write_csv(self, path) -> None:
        psi = self.psi()
        pairs = self.mode_set.pairs
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["replica", "k_vector", "parity", "psi"])
            for r in range(self.replicas):
                for i, pair in enumerate(pairs):
                    kstr = " ".join(str(v) for v in pair.k)
                    wr.writerow([r, kstr, pair.parity, repr(float(psi[r, i]))])


@dataclass
class SimResult:
    accumulator: OccupationAccumulator
    functional_averages: np.ndarray  # (replicas, n_functionals): (1/T) int g(X_t) dt
    final_positions: np.ndarray  # (replicas, d)
    trajectories: list | None = None
    bit_generators: list = field(default_factory=list, repr=False)


def sample_stationary(drift: DriftSpec, geometry: TorusGeometry, rng: np.random.Generator):
    """One draw from mu proportional to e^V dx.

    Exact uniform for constant V; otherwise rejection from uniform with
    acceptance e^{V - max V} (max over the drift's check grid, inflated by a
    safety margin so the envelope is valid despite grid error).
    """
    d, L = geometry.d, geometry.L
    if drift.v_is_constant:
        return rng.uniform(0.0, L, d)
    # rigorous envelope: V <= sum of term sup-norms, so acceptance <= 1 always
    vmax = float(sum(abs(t.amplitude) * SQRT2 for t in drift.v_terms))
    tried = 0
    while True:
        props = rng.uniform(0.0, L, (256, d))
        acc = np.exp(drift.v_values(props) - vmax)
        hits = rng.uniform(size=256) < acc
        tried += 256
        if hits.any():
            return props[int(np.argmax(hits))]
        if tried >= 100_000:
            raise RuntimeError("stationary rejection sampler acceptance below 1e-4")


def step(x, drift: DriftSpec, dt: float, rng: np.random.Generator):
    """One Euler-Maruyama step: x + (grad V + Z) dt + sqrt(2 dt) xi, wrapped."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    L = drift.geometry.L
    x = np.asarray(x, dtype=float)
    b = drift.drift_values(x)[0]
    out = np.fmod(x + b * dt + math.sqrt(2 * dt) * rng.standard_normal(len(x)), L)
    out[out < 0] += L
    return out


def _functional_rows(extra_functionals, d):
    """Flatten trig observables into kernel kvec rows plus readout weights."""
    kv_rows = []
    readout = []  # per functional: list of (row offset, parity slot, weight)
    for terms in extra_functionals:
        entries = []
        for t in terms:
            if not isinstance(t, TrigTerm):
                raise TypeError("extra functionals must be lists of TrigTerm")
            if len(t.k) != d:
                raise ValueError("functional term dimension mismatch")
            slot = 0 if t.parity == "cos" else 1
            entries.append((len(kv_rows), slot, t.amplitude * SQRT2))
            kv_rows.append(t.k)
        readout.append(entries)
    kv = np.array(kv_rows, dtype=np.int64).reshape(len(kv_rows), d)
    return kv, readout


def simulate(
    config: SimConfig,
    drift: DriftSpec,
    mode_set: ModeSet | None,
    extra_functionals=(),
    *,
    x0: np.ndarray | None = None,
    threads: int = 1,
    keep_trajectories: bool = False,
    bit_generators: list | None = None,
) -> SimResult:
    """Run replicas from a stationary start and accumulate occupation sums.

    mode_set selects the psi_i targets (may be None for none); each extra
    functional is a list of TrigTerm whose time average (1/T) int g(X_t) dt
    is returned per replica. Replicas are independent Philox streams; passing
    bit_generators continues existing streams (time-segment chaining).
    """
    geometry = drift.geometry
    d = geometry.d
    R = config.replicas
    n_steps = config.n_steps

    m_modes = len(mode_set) // 2 if mode_set is not None else 0
    if mode_set is not None and m_modes and config.dt * float(mode_set.lam.max()) > DT_LAMBDA_GUARD + 1e-12:
        raise ValueError(
            f"dt {config.dt} too coarse for lambda_max {float(mode_set.lam.max())}: "
            f"need dt * lambda <= {DT_LAMBDA_GUARD}"
        )
    kv_extra, readout = _functional_rows(extra_functionals, d)
    if kv_extra.shape[0]:
        lam_extra = geometry.freq**2 * float(np.max(np.sum(kv_extra**2, axis=1)))
        if config.dt * lam_extra > DT_LAMBDA_GUARD + 1e-12:
            raise ValueError("dt too coarse for the extra functionals' modes")
    kv_all = (
        np.vstack([mode_set.kvecs, kv_extra])
        if mode_set is not None
        else kv_extra
    )

    own_gens = bit_generators is None
    if own_gens:
        bit_generators = kernels.replica_generators(config.seed, R)
    if len(bit_generators) != R:
        raise ValueError("one bit generator per replica required")

    x = np.empty((R, d))
    if x0 is not None:
        x[:] = np.asarray(x0, dtype=float)
    else:
        for r in range(R):
            x[r] = sample_stationary(drift, geometry, np.random.Generator(bit_generators[r]))

    const, freq, amp_c, amp_s = drift.kernel_arrays()
    n_rec = -(-n_steps // config.record_stride) if config.record_stride > 0 else 0
    rec = np.zeros((R, n_rec, d)) if n_rec else None
    psi_kernel = np.zeros((R, 2 * kv_all.shape[0]))

    def run_slice(lo, hi):
        psi_kernel[lo:hi] = kernels.run_batch(
            x[lo:hi],
            geometry.L,
            config.dt,
            n_steps,
            bit_generators[lo:hi],
            const_drift=const,
            drift_freq=freq,
            drift_cos=amp_c,
            drift_sin=amp_s,
            kvecs=kv_all,
            record_stride=config.record_stride,
            rec_out=rec[lo:hi] if rec is not None else None,
        )

    threads = max(1, min(threads, R))
    if threads == 1:
        run_slice(0, R)
    else:
        bounds = np.linspace(0, R, threads + 1, dtype=int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = [pool.submit(run_slice, bounds[i], bounds[i + 1]) for i in range(threads)]
            for f in futs:
                f.result()

    if np.isnan(x).any():
        bad = int(np.argwhere(np.isnan(x).any(axis=1))[0, 0])
        raise RuntimeError(f"NaN state in replica {bad}; inspect drift amplitudes and dt")

    acc = OccupationAccumulator(
        mode_set if mode_set is not None else None,
        SQRT2 * config.dt * psi_kernel[:, : 2 * m_modes],
        config.T,
    )
    base = 2 * m_modes
    func = np.zeros((R, len(readout)))
    for gi, entries in enumerate(readout):
        for row, slot, weight in entries:
            func[:, gi] += weight * psi_kernel[:, base + 2 * row + slot]
    func *= config.dt / config.T

    trajs = None
    if keep_trajectories:
        if rec is None:
            raise ValueError("keep_trajectories requires record_stride > 0")
        trajs = [Trajectory(geometry, config.dt, config.record_stride, rec[r]) for r in range(R)]
    return SimResult(acc, func, x, trajs, bit_generators)
