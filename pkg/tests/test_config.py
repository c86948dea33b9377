"""Tests for config module."""

import json

import pytest

from src.config import PRESETS, ConfigError, RunConfig, load_config_file, resolve, run_config_from_dict
from src.heads import REGRESS


class TestResolve:
    """Tests for resolve."""

    def test_defaults_follow_iemocap_preset(self):
        """Test defaults match the IEMOCAP hyperparameters."""
        run = resolve({})
        assert (run.dropout, run.lr, run.l2) == (0.8, 0.0001, 0.001)
        assert run.variant == "lc"
        assert run.rank == 10

    def test_preset(self):
        """Test a preset fills its values."""
        run = resolve({}, preset="meld")
        assert run.n_class == 7
        assert run.d == 600
        assert run.preset == "meld"

    def test_every_dataset_preset_is_present(self):
        """Test every dataset preset is registered."""
        assert {"iemocap", "meld", "avec-valence", "avec-arousal", "avec-expectancy", "avec-power"} <= set(
            PRESETS
        )

    def test_precedence(self, tmp_path):
        """Test flags beat the config file, which beats the preset."""
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"lr": 0.01, "epochs": 5}))
        run = resolve({"epochs": 7, "hidden": None}, preset="synthetic", config_file=cfg)
        assert run.lr == 0.01  # file beats preset
        assert run.epochs == 7  # flag beats file
        assert run.hidden == 100  # unset flag keeps the default
        assert run.d == 10  # preset beats default

    def test_unknown_preset(self):
        """Test an unknown preset name."""
        with pytest.raises(ConfigError, match="unknown preset"):
            resolve({}, preset="imdb")

    def test_activation_per_task(self):
        """Test the default activation follows the task."""
        assert RunConfig().resolved_activation() == "sigmoid"
        assert RunConfig(task=REGRESS).resolved_activation() == "relu"
        assert RunConfig(activation="tanh").resolved_activation() == "tanh"


class TestRunConfig:
    """Tests for RunConfig conversions."""

    def test_seed_is_required_for_training(self):
        """Test training configs need a seed."""
        with pytest.raises(ConfigError, match="seed"):
            RunConfig().train_config()

    def test_model_config(self):
        """Test conversion to ModelConfig."""
        model = RunConfig(d=8, k=4, rank=3, hidden=5, filters=2, kernel=2).model_config()
        assert model.gntb.k == 4
        assert model.tfe.hidden == 5
        assert model.d_e == 2 * 7

    def test_invalid_values_become_config_errors(self):
        """Test invalid values surface as ConfigError."""
        with pytest.raises(ConfigError):
            RunConfig(dropout=1.0).model_config()
        with pytest.raises(ConfigError):
            RunConfig(l2_form="l1").loss_config()
        with pytest.raises(ConfigError):
            RunConfig(seed=0, epochs=-1).train_config()

    def test_dict_round_trip(self):
        """Test RunConfig survives to_dict and back."""
        run = RunConfig(seed=3, variant="gc")
        assert run_config_from_dict(run.to_dict()) == run


class TestConfigFile:
    """Tests for load_config_file."""

    def test_unknown_key(self, tmp_path):
        """Test an unknown key in a config file."""
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"learning_rate": 0.1}))
        with pytest.raises(ConfigError, match="learning_rate"):
            load_config_file(path)

    def test_not_an_object(self, tmp_path):
        """Test a config file that is not a JSON object."""
        path = tmp_path / "c.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="object"):
            load_config_file(path)

    def test_missing_file(self, tmp_path):
        """Test a missing config file."""
        with pytest.raises(ConfigError, match="cannot read"):
            load_config_file(tmp_path / "absent.json")
