"""Config loading: defaults, guard messages, TOML round trips.

The cross-field guards are the oracle here: each rejection message is pinned
so a config typo fails with a sentence that names the offending key.
"""

import math

import pytest

from torot.config import ExperimentConfig
from torot.drift import TrigTerm, VectorTrigTerm
from torot.smoothing import eps_schedule

FULL_DOC = """
[torus]
d = 4
L = 6.283185307179586

[[drift.v]]
k = [0, 1, 0, 0]
parity = "cos"
amplitude = 0.2

[[drift.z]]
k = [1, 0, 0, 0]
parity = "cos"
w = [0.0, 0.0, 0.5, 0.0]

[sim]
dt = 0.004
T = 2000.0
replicas = 128
seed = 7

[smoothing]
gamma = 3.5

[modes]
lambda_max = 9.0

[ot]
grid_n = 8
reg = 0.25

[output]
dir = "out"
formats = ["csv"]
"""


class TestDefaults:
    def test_baseline_values(self):
        cfg = ExperimentConfig()
        assert cfg.d == 4
        assert cfg.L == pytest.approx(2.0 * math.pi)
        assert cfg.gamma == 4.0
        assert cfg.grid_n == 16
        assert cfg.formats == ("csv", "json")

    def test_hash_is_sha256_hex(self):
        h = ExperimentConfig().config_hash
        assert len(h) == 64
        assert set(h) <= set("0123456789abcdef")

    def test_eps_for_follows_schedule(self):
        cfg = ExperimentConfig()
        assert cfg.eps_for(1.0e4) == pytest.approx(eps_schedule(1.0e4, 4.0), rel=1e-15)

    def test_eps_override_wins(self):
        cfg = ExperimentConfig(eps_override=0.3)
        assert cfg.eps_for(1.0e4) == 0.3
        assert cfg.eps_for(50.0) == 0.3

    def test_sim_config_overrides(self):
        cfg = ExperimentConfig(dt=0.01, T=100.0, replicas=4, seed=3, lambda_max=9.0)
        sc = cfg.sim_config()
        assert (sc.dt, sc.T, sc.replicas, sc.seed) == (0.01, 100.0, 4, 3)
        sc2 = cfg.sim_config(T=50.0, replicas=9, seed=11)
        assert (sc2.T, sc2.replicas, sc2.seed) == (50.0, 9, 11)

    def test_mode_set_respects_cutoff(self):
        cfg = ExperimentConfig(lambda_max=2.0, dt=0.05)
        ms = cfg.mode_set()
        assert ms.lam_pairs.max() <= 2.0


class TestGuards:
    def test_gamma_guard_cites_schedule(self):
        with pytest.raises(ValueError, match=r"eps = \(log T\)\^gamma / T needs gamma > 3"):
            ExperimentConfig(gamma=3.0)

    def test_dt_lambda_guard(self):
        with pytest.raises(ValueError, match="too coarse for modes.lambda_max"):
            ExperimentConfig(dt=0.05, lambda_max=16.0)

    def test_grid_power_of_two(self):
        with pytest.raises(ValueError, match="ot.grid_n = 12 is not a power of two"):
            ExperimentConfig(grid_n=12)

    def test_lambda_max_retains_a_mode(self):
        with pytest.raises(ValueError, match="retains no mode"):
            ExperimentConfig(lambda_max=0.5)

    def test_formats_subset(self):
        with pytest.raises(ValueError, match="subset of csv, json"):
            ExperimentConfig(formats=("csv", "yaml"))

    def test_replicas_positive(self):
        with pytest.raises(ValueError, match="sim.replicas must be positive"):
            ExperimentConfig(replicas=0)

    def test_eps_override_positive(self):
        with pytest.raises(ValueError, match="eps_override must be positive"):
            ExperimentConfig(eps_override=-0.1)

    def test_drift_terms_checked_at_construction(self):
        with pytest.raises(ValueError, match="V term dimension mismatch"):
            ExperimentConfig(v_terms=(TrigTerm((1, 0), "cos", 0.1),))

    def test_divergence_guard_reaches_config(self):
        # w parallel to k: div(W) != 0, caught by the drift admissibility check
        bad = VectorTrigTerm((1, 0, 0, 0), "cos", (1.0, 0.0, 0.0, 0.0))
        with pytest.raises(ValueError, match="not divergence-free"):
            ExperimentConfig(z_terms=(bad,))


class TestTomlLoading:
    def test_full_document(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text(FULL_DOC)
        cfg = ExperimentConfig.from_toml(path)
        assert cfg.T == 2000.0
        assert cfg.replicas == 128
        assert cfg.seed == 7
        assert cfg.gamma == 3.5
        assert cfg.lambda_max == 9.0
        assert cfg.reg == 0.25
        assert cfg.formats == ("csv",)
        assert cfg.v_terms == (TrigTerm((0, 1, 0, 0), "cos", 0.2),)
        assert cfg.z_terms[0].w == (0.0, 0.0, 0.5, 0.0)

    def test_integer_values_coerce(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text("[sim]\nT = 500\n\n[torus]\nL = 7\n")
        cfg = ExperimentConfig.from_toml(path)
        assert cfg.T == 500.0 and isinstance(cfg.T, float)
        assert cfg.L == 7.0 and isinstance(cfg.L, float)

    def test_partial_document_keeps_defaults(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text("[sim]\nseed = 42\n")
        cfg = ExperimentConfig.from_toml(path)
        assert cfg.seed == 42
        assert cfg.dt == ExperimentConfig().dt

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text("[simm]\nT = 10\n")
        with pytest.raises(ValueError, match=r"unknown config sections: \['simm'\]"):
            ExperimentConfig.from_toml(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text("[sim]\nTmax = 10\n")
        with pytest.raises(ValueError, match=r"unknown keys in \[sim\]: \['Tmax'\]"):
            ExperimentConfig.from_toml(path)

    def test_mapping_round_trip(self, tmp_path):
        path = tmp_path / "exp.toml"
        path.write_text(FULL_DOC)
        cfg = ExperimentConfig.from_toml(path)
        again = ExperimentConfig.from_mapping(cfg.to_mapping())
        assert again == cfg
        assert again.config_hash == cfg.config_hash


class TestHashAndReplace:
    def test_equal_configs_equal_hash(self):
        assert ExperimentConfig(seed=5).config_hash == ExperimentConfig(seed=5).config_hash

    def test_seed_changes_hash(self):
        assert ExperimentConfig(seed=5).config_hash != ExperimentConfig(seed=6).config_hash

    def test_replace_keeps_other_fields(self):
        cfg = ExperimentConfig(T=300.0, replicas=32)
        out = cfg.replace(seed=9)
        assert out.seed == 9
        assert out.T == 300.0
        assert out.replicas == 32

    def test_replace_revalidates(self):
        with pytest.raises(ValueError, match="gamma"):
            ExperimentConfig().replace(gamma=2.0)
