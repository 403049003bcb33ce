import pytest

from config import Config, ExperimentConfig, load_experiment_config, parse_overrides
from models import ConfigError

BASE = """
[run]
mode = oracle2d

[model]
nu = 0.05
alpha = 0.1
T = 0.2

[grid]
n = 16
dt = 0.01
"""


@pytest.mark.unit
class TestLoadExperimentConfig:
    def test_defaults(self):
        config = load_experiment_config(text=BASE)
        assert isinstance(config, ExperimentConfig)
        assert config.dim == 2
        assert config.n_steps == 20
        assert config.initial.family == "single-mode"
        assert config.mc_config() is None
        assert config.params().nu == 0.05

    def test_from_file(self, write_config):
        path = write_config(BASE)
        assert load_experiment_config(str(path)).grid.n == 16

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_experiment_config(str(tmp_path / "nope.cfg"))
        assert 'path' in info.value.field_errors

    def test_overrides_win(self):
        config = load_experiment_config(text=BASE, overrides=["grid.n=32", "model.alpha=0"])
        assert config.grid.n == 32
        assert config.model.alpha == 0.0

    def test_invalid_mode(self):
        with pytest.raises(ConfigError) as info:
            load_experiment_config(text=BASE, overrides=["run.mode=oracle4d"])
        assert 'run.mode' in info.value.field_errors

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError) as info:
            load_experiment_config(text=BASE, overrides=["grid.spacing=3"])
        assert 'grid.spacing' in info.value.field_errors

    def test_non_positive_viscosity(self):
        with pytest.raises(ConfigError) as info:
            load_experiment_config(text=BASE, overrides=["model.nu=0"])
        assert 'model.nu' in info.value.field_errors

    def test_seed_required_for_monte_carlo(self):
        with pytest.raises(ConfigError, match="seed"):
            load_experiment_config(text=BASE, overrides=["run.mode=crosscheck"])
        config = load_experiment_config(text=BASE, overrides=["run.mode=crosscheck", "run.seed=7"])
        assert config.mc_config().seed == 7

    def test_file_family_needs_path(self):
        with pytest.raises(ConfigError, match="initial.path"):
            load_experiment_config(text=BASE, overrides=["initial.family=file"])

    def test_three_dimensional_modes(self):
        assert load_experiment_config(text=BASE, overrides=["run.mode=fixedpoint3d"]).dim == 3

    def test_alpha_list(self):
        config = load_experiment_config(text=BASE, overrides=["run.mode=alpha-sweep", "sweep.alphas=0.4, 0.2,0.1"])
        assert config.sweep.alphas == [0.4, 0.2, 0.1]
        with pytest.raises(ConfigError):
            load_experiment_config(text=BASE, overrides=["sweep.alphas=0.1,-0.2"])

    def test_shell_tolerance_can_be_disabled(self):
        assert load_experiment_config(text=BASE, overrides=["solver.shell_tolerance=none"]).solver.shell_tolerance is None
        assert load_experiment_config(text=BASE).solver.shell_tolerance == 1e-6

    def test_malformed_text(self):
        with pytest.raises(ConfigError):
            load_experiment_config(text="mode = oracle2d")


@pytest.mark.unit
class TestContentHash:
    def test_hash_is_stable(self):
        a = load_experiment_config(text=BASE)
        b = load_experiment_config(text=BASE.replace("n = 16", "n=16"))
        assert a.content_hash() == b.content_hash()
        assert len(a.content_hash()) == 64

    def test_hash_follows_content(self):
        a = load_experiment_config(text=BASE)
        b = load_experiment_config(text=BASE, overrides=["model.T=0.3"])
        assert a.content_hash() != b.content_hash()


@pytest.mark.unit
class TestOverrides:
    def test_parse(self):
        assert parse_overrides(["run.seed=3", "model.nu = 0.1"]) == {'run': {'seed': '3'}, 'model': {'nu': '0.1'}}

    @pytest.mark.parametrize("item", ["run.seed", "seed=3"])
    def test_malformed(self, item):
        with pytest.raises(ConfigError):
            parse_overrides([item])


@pytest.mark.unit
class TestEnvironmentConfig:
    def test_validate_accepts_defaults(self):
        Config.validate()

    def test_validate_rejects_zero_workers(self, monkeypatch):
        monkeypatch.setattr(Config, 'WORKERS', 0)
        with pytest.raises(ValueError, match="NSALPHA_WORKERS"):
            Config.validate()

    def test_runtime_config(self):
        assert set(Config.get_runtime_config()) == {'workers', 'mc_chunk', 'output_dir', 'log_level'}
