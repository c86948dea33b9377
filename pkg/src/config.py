"""Run configuration: defaults, named presets, config files and flags.

Resolution order, later wins: built-in defaults, ``--preset``, ``--config``
file, explicit command-line flags. The config file is a JSON object using the
same keys as :class:`RunConfig`, the syntax of the dataset manifests.
"""

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from .bieru import ModelConfig
from .gntb import LOW_RANK, GntbConfig
from .heads import CLASSIFY, REGRESS, LossConfig
from .tfe import TfeConfig
from .train import TrainConfig

# BiERU-lc hyperparameters per dataset: dropout, learning rate, L2 weight
PRESETS: Dict[str, Dict[str, Any]] = {
    "iemocap": {"task": CLASSIFY, "n_class": 6, "d": 100, "dropout": 0.8, "lr": 0.0001, "l2": 0.001},
    "avec-valence": {"task": REGRESS, "d": 100, "dropout": 0.5, "lr": 0.0001, "l2": 0.0002},
    "avec-arousal": {"task": REGRESS, "d": 100, "dropout": 0.8, "lr": 0.0001, "l2": 0.0002},
    "avec-expectancy": {"task": REGRESS, "d": 100, "dropout": 0.5, "lr": 0.00005, "l2": 0.0005},
    "avec-power": {"task": REGRESS, "d": 100, "dropout": 0.8, "lr": 0.0001, "l2": 0.0001},
    "meld": {"task": CLASSIFY, "n_class": 7, "d": 600, "dropout": 0.7, "lr": 0.0005, "l2": 0.001},
    "synthetic": {"task": CLASSIFY, "n_class": 6, "d": 10, "dropout": 0.1, "lr": 0.005, "l2": 0.00001},
}


class ConfigError(ValueError):
    """Invalid or unresolvable run configuration."""


@dataclass
class RunConfig:
    """Flat, fully resolved view over model, loss and training settings."""

    # model
    d: int = 100
    k: Optional[int] = None
    rank: int = 10
    gntb_mode: str = LOW_RANK
    activation: Optional[str] = None
    hidden: int = 100
    filters: int = 50
    kernel: int = 3
    variant: str = "lc"
    task: str = CLASSIFY
    n_class: int = 6
    ablation: str = "full"
    head_bias: bool = False
    # optimization
    dropout: float = 0.8
    lr: float = 0.0001
    l2: float = 0.001
    l2_form: str = "squared-norm"
    epochs: int = 60
    seed: Optional[int] = None
    patience: Optional[int] = None
    preset: Optional[str] = None
    # paths
    train: Optional[str] = None
    val: Optional[str] = None
    checkpoint: Optional[str] = None
    log_file: Optional[str] = None

    def resolved_activation(self) -> str:
        """Sigmoid for classification, relu for regression unless set."""
        if self.activation:
            return self.activation
        return "sigmoid" if self.task == CLASSIFY else "relu"

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig(
                gntb=GntbConfig(
                    d=self.d,
                    k=self.k,
                    r=self.rank,
                    activation=self.resolved_activation(),
                    mode=self.gntb_mode,
                ),
                tfe=TfeConfig(d=self.d, hidden=self.hidden, filters=self.filters, kernel=self.kernel),
                variant=self.variant,
                task=self.task,
                n_class=self.n_class,
                dropout_rate=self.dropout,
                ablation=self.ablation,
                head_bias=self.head_bias,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def loss_config(self) -> LossConfig:
        try:
            return LossConfig(l2=self.l2, l2_form=self.l2_form)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        if self.seed is None:
            raise ConfigError("--seed is required")
        try:
            return TrainConfig(epochs=self.epochs, lr=self.lr, seed=self.seed, patience=self.patience)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _known_keys() -> set:
    return {f.name for f in fields(RunConfig)}


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(data) - _known_keys())
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return data


def resolve(
    flags: Mapping[str, Any],
    preset: Optional[str] = None,
    config_file: Optional[Union[str, Path]] = None,
) -> RunConfig:
    """Merge defaults, preset, config file and flags (``None`` flags are unset)."""
    values: Dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}, choose from {', '.join(PRESETS)}")
        values.update(PRESETS[preset])
        values["preset"] = preset
    if config_file is not None:
        values.update(load_config_file(config_file))
    known = _known_keys()
    values.update({k: v for k, v in flags.items() if k in known and v is not None})
    return RunConfig(**values)


def run_config_from_dict(data: Mapping[str, Any]) -> RunConfig:
    known = _known_keys()
    return RunConfig(**{k: v for k, v in data.items() if k in known})
