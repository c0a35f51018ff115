"""Experiment configuration: TOML in, validated immutable settings out.

A config file is a plain TOML document whose dotted keys mirror the section
layout (torus.L, sim.dt, smoothing.gamma, ot.grid_n, ...). Every cross-field
guard lives in one place here so the pipelines and the CLI can assume a
well-formed experiment: the step size resolves the stiffest retained mode,
the smoothing exponent satisfies the schedule's hypothesis, the transport
grid is a power of two.

Unknown keys are rejected rather than ignored; a typo in an experiment file
should fail loudly, not silently run the defaults.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, fields

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from torot.diffusion import DT_LAMBDA_GUARD, SimConfig
from torot.drift import DriftSpec, TrigTerm, VectorTrigTerm
from torot.geometry import ModeSet, TorusGeometry, cached_modes
from torot.smoothing import eps_schedule

_SECTIONS = {
    "torus": ("d", "L"),
    "drift": ("v", "z_const", "z"),
    "sim": ("dt", "T", "replicas", "seed"),
    "smoothing": ("gamma", "eps_override"),
    "modes": ("lambda_max",),
    "ot": ("grid_n", "reg", "max_iters", "tol"),
    "output": ("dir", "formats"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 4
    L: float = 2.0 * math.pi
    v_terms: tuple = ()
    z_const: tuple | None = None
    z_terms: tuple = ()
    dt: float = 0.005
    T: float = 1.0e4
    replicas: int = 64
    seed: int = 0
    gamma: float = 4.0
    eps_override: float | None = None
    lambda_max: float = 16.0
    grid_n: int = 16
    reg: float | None = None
    max_iters: int = 5000
    tol: float = 1e-9
    out_dir: str = "runs"
    formats: tuple = ("csv", "json")

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("torus.d must be positive")
        if self.L <= 0:
            raise ValueError("torus.L must be positive")
        if self.dt <= 0:
            raise ValueError("sim.dt must be positive")
        if self.T < self.dt:
            raise ValueError("sim.T must be at least sim.dt")
        if self.replicas < 1:
            raise ValueError("sim.replicas must be positive")
        if self.seed < 0:
            raise ValueError("sim.seed must be nonnegative")
        if self.gamma <= 3.0:
            raise ValueError(
                f"smoothing.gamma = {self.gamma} rejected: the smoothing schedule "
                "eps = (log T)^gamma / T needs gamma > 3"
            )
        if self.eps_override is not None and self.eps_override <= 0:
            raise ValueError("smoothing.eps_override must be positive when given")
        if self.lambda_max < self.geometry.lambda_min:
            raise ValueError(
                f"modes.lambda_max = {self.lambda_max} retains no mode "
                f"(smallest eigenvalue {self.geometry.lambda_min:.6g})"
            )
        if self.dt * self.lambda_max > DT_LAMBDA_GUARD + 1e-12:
            raise ValueError(
                f"sim.dt = {self.dt} too coarse for modes.lambda_max = {self.lambda_max}: "
                f"need dt * lambda_max <= {DT_LAMBDA_GUARD}"
            )
        if self.grid_n < 2 or self.grid_n & (self.grid_n - 1):
            raise ValueError(f"ot.grid_n = {self.grid_n} is not a power of two")
        if self.reg is not None and self.reg <= 0:
            raise ValueError("ot.reg must be positive when given")
        if self.max_iters < 1:
            raise ValueError("ot.max_iters must be positive")
        if self.tol <= 0:
            raise ValueError("ot.tol must be positive")
        formats = tuple(self.formats)
        if not formats or any(f not in ("csv", "json") for f in formats):
            raise ValueError(f"output.formats {formats!r} must be a subset of csv, json")
        object.__setattr__(self, "formats", formats)
        object.__setattr__(self, "v_terms", tuple(self.v_terms))
        object.__setattr__(self, "z_terms", tuple(self.z_terms))
        if self.z_const is not None:
            object.__setattr__(self, "z_const", tuple(float(v) for v in self.z_const))
        self.drift()  # surface term-shape and divergence errors at load time

    @property
    def geometry(self) -> TorusGeometry:
        return TorusGeometry(self.d, self.L)

    def drift(self) -> DriftSpec:
        return DriftSpec(
            self.geometry,
            v_terms=self.v_terms,
            z_const=self.z_const,
            z_terms=self.z_terms,
        )

    def mode_set(self) -> ModeSet:
        return cached_modes(self.geometry, self.lambda_max)

    def sim_config(
        self,
        T: float | None = None,
        replicas: int | None = None,
        seed: int | None = None,
    ) -> SimConfig:
        return SimConfig(
            dt=self.dt,
            T=self.T if T is None else float(T),
            seed=self.seed if seed is None else int(seed),
            replicas=self.replicas if replicas is None else int(replicas),
        )

    def eps_for(self, T: float) -> float:
        if self.eps_override is not None:
            return self.eps_override
        return eps_schedule(T, self.gamma)

    def to_mapping(self) -> dict:
        return {
            "torus": {"d": self.d, "L": self.L},
            "drift": {
                "v": [
                    {"k": list(t.k), "parity": t.parity, "amplitude": t.amplitude}
                    for t in self.v_terms
                ],
                "z_const": None if self.z_const is None else list(self.z_const),
                "z": [
                    {"k": list(t.k), "parity": t.parity, "w": list(t.w)}
                    for t in self.z_terms
                ],
            },
            "sim": {"dt": self.dt, "T": self.T, "replicas": self.replicas, "seed": self.seed},
            "smoothing": {"gamma": self.gamma, "eps_override": self.eps_override},
            "modes": {"lambda_max": self.lambda_max},
            "ot": {
                "grid_n": self.grid_n,
                "reg": self.reg,
                "max_iters": self.max_iters,
                "tol": self.tol,
            },
            "output": {"dir": self.out_dir, "formats": list(self.formats)},
        }

    @property
    def config_hash(self) -> str:
        payload = json.dumps(self.to_mapping(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def replace(self, **overrides) -> "ExperimentConfig":
        current = {f.name: getattr(self, f.name) for f in fields(self)}
        current.update(overrides)
        return ExperimentConfig(**current)

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(_SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        for section, keys in _SECTIONS.items():
            extra = set(data.get(section, {})) - set(keys)
            if extra:
                raise ValueError(f"unknown keys in [{section}]: {sorted(extra)}")

        def get(section, key, default):
            return data.get(section, {}).get(key, default)

        v_terms = tuple(
            TrigTerm(tuple(e["k"]), e["parity"], float(e["amplitude"]))
            for e in get("drift", "v", [])
        )
        z_terms = tuple(
            VectorTrigTerm(tuple(e["k"]), e["parity"], tuple(float(w) for w in e["w"]))
            for e in get("drift", "z", [])
        )
        z_const = get("drift", "z_const", None)
        eps_override = get("smoothing", "eps_override", None)
        reg = get("ot", "reg", None)
        defaults = cls()
        return cls(
            d=int(get("torus", "d", defaults.d)),
            L=float(get("torus", "L", defaults.L)),
            v_terms=v_terms,
            z_const=None if z_const is None else tuple(float(v) for v in z_const),
            z_terms=z_terms,
            dt=float(get("sim", "dt", defaults.dt)),
            T=float(get("sim", "T", defaults.T)),
            replicas=int(get("sim", "replicas", defaults.replicas)),
            seed=int(get("sim", "seed", defaults.seed)),
            gamma=float(get("smoothing", "gamma", defaults.gamma)),
            eps_override=None if eps_override is None else float(eps_override),
            lambda_max=float(get("modes", "lambda_max", defaults.lambda_max)),
            grid_n=int(get("ot", "grid_n", defaults.grid_n)),
            reg=None if reg is None else float(reg),
            max_iters=int(get("ot", "max_iters", defaults.max_iters)),
            tol=float(get("ot", "tol", defaults.tol)),
            out_dir=str(get("output", "dir", defaults.out_dir)),
            formats=tuple(get("output", "formats", list(defaults.formats))),
        )

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            return cls.from_mapping(tomllib.load(fh))
