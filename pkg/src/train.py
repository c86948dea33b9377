"""Training: Adam, the per-conversation loop, evaluation and parameter reports.

Training uses batch size 1: each conversation is one forward pass, one loss,
one backward pass and one Adam step. Conversations are visited in an order
shuffled by the run's seeded generator, which also draws the dropout masks,
so ``(seed, config, data)`` determine every parameter value.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Generator, List, Optional, Sequence

import numpy as np

from . import gntb as gntb_mod
from . import tfe as tfe_mod
from .bieru import BieruModel, bieru_backward, bieru_forward, model_shapes
from .data import Dataset, FeatureConversation
from .heads import (
    CLASSIFY,
    LossConfig,
    data_loss,
    head_forward,
    l2_grad,
    l2_penalty,
    loss_backward,
    regularized_flat,
)
from .metrics import classification_record, regression_record
from .numkit import NonFiniteError, SeededRng, ShapeError

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------
@dataclass
class AdamState:
    """First/second moments per named parameter plus the step counter."""

    lr: float
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = ADAM_EPS
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Dict[str, np.ndarray], lr: float, **kwargs) -> "AdamState":
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        state = cls(lr=lr, **kwargs)
        for name, arr in params.items():
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        return state


def adam_step(
    state: AdamState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]
) -> None:
    """Update ``params`` in place.

    Every gradient is checked before anything changes, so a rejected step
    leaves parameters and moments untouched.
    """
    for name, arr in params.items():
        if name not in grads or name not in state.m:
            raise ShapeError(f"adam_step: no gradient or moment for {name}")
        g = grads[name]
        if g.shape != arr.shape or state.m[name].shape != arr.shape:
            raise ShapeError(f"adam_step: shape mismatch for {name}: {arr.shape} vs {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"adam_step: non-finite gradient for {name}")

    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, arr in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        arr -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# ---------------------------------------------------------------------------
# Loss and gradients for one conversation
# ---------------------------------------------------------------------------
@dataclass
class StepResult:
    loss: float
    data_loss: float
    outputs: np.ndarray
    grads: Dict[str, np.ndarray]
    grad_utterances: np.ndarray


def loss_and_grads(
    model: BieruModel,
    conversation: FeatureConversation,
    loss_config: LossConfig,
    train_mode: bool = True,
    rng: Optional[SeededRng] = None,
) -> StepResult:
    """Forward, loss (with L2) and full backward for one conversation."""
    features, cache = bieru_forward(model, conversation.features, train_mode, rng)
    outputs, head_cache = head_forward(model.head, features)
    targets = conversation.targets
    named = model.named_tensors()
    base = data_loss(model.head, outputs, targets)
    total = base + l2_penalty(regularized_flat(named), loss_config)

    head_grads, grad_features = loss_backward(model.head, head_cache, targets)
    grads_model, grad_u = bieru_backward(model, cache, grad_features)
    grads_model.head = head_grads
    grads = grads_model.named_tensors()
    for name, g in l2_grad(named, loss_config).items():
        grads[name] = grads[name] + g
    return StepResult(total, base, outputs, grads, grad_u)


def predict_conversation(model: BieruModel, conversation: FeatureConversation):
    """Eval-mode outputs: ``(outputs, features)``; draws no randomness."""
    features, _ = bieru_forward(model, conversation.features, train_mode=False)
    outputs, _ = head_forward(model.head, features)
    return outputs, features


def predict_dataset(
    model: BieruModel, conversations: Sequence[FeatureConversation], workers: int = 1
) -> List[Any]:
    """Eval-mode outputs per conversation, in input order."""
    if workers <= 1:
        return [predict_conversation(model, c) for c in conversations]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: predict_conversation(model, c), conversations))


def point_predictions(model: BieruModel, outputs: np.ndarray) -> np.ndarray:
    if model.config.task == CLASSIFY:
        return np.argmax(outputs, axis=1)
    return outputs


def evaluate(
    model: BieruModel,
    dataset: Dataset,
    loss_config: Optional[LossConfig] = None,
    workers: int = 1,
) -> Dict[str, Any]:
    """Metric record plus mean per-dialogue loss over ``dataset``."""
    loss_config = loss_config or LossConfig()
    results = predict_dataset(model, dataset.conversations, workers)
    penalty = l2_penalty(regularized_flat(model.named_tensors()), loss_config)
    losses = [
        data_loss(model.head, out, conv.targets) + penalty
        for (out, _), conv in zip(results, dataset.conversations)
    ]
    preds = np.concatenate([point_predictions(model, out) for out, _ in results])
    targets = np.concatenate([c.targets for c in dataset.conversations])
    if model.config.task == CLASSIFY:
        record = classification_record(
            preds, targets, model.config.n_class, dataset.manifest.label_names
        )
    else:
        record = regression_record(preds, targets)
    record["loss"] = float(np.mean(losses))
    return record


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------
@dataclass
class TrainConfig:
    """Optimization settings; defaults match the IEMOCAP preset."""

    epochs: int = 60
    lr: float = 0.0001
    seed: int = 0
    patience: Optional[int] = None

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {self.lr}")
        if self.patience is not None and self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss: float
    metrics: Dict[str, Any]
    seconds: float
    val: Optional[Dict[str, Any]] = None

    def to_dict(self, timing: bool = True) -> Dict[str, Any]:
        out: Dict[str, Any] = {
            "epoch": self.epoch,
            "mean_loss": self.mean_loss,
            "train": self.metrics,
        }
        if timing:
            out["seconds"] = self.seconds
        if self.val is not None:
            out["val"] = self.val
        return out


@dataclass
class TrainState:
    """Everything needed to resume a run bit-exactly."""

    adam: AdamState
    rng: SeededRng
    epoch: int = 0
    history: List[Dict[str, Any]] = field(default_factory=list)
    # early stopping on validation loss
    best_val_loss: Optional[float] = None
    stale_epochs: int = 0

    @classmethod
    def fresh(cls, model: BieruModel, config: TrainConfig) -> "TrainState":
        # dropout/shuffle stream is separate from the initialization stream
        return cls(
            adam=AdamState.for_params(model.named_tensors(), config.lr),
            rng=SeededRng(config.seed).spawn(1),
        )


def _summarize(model: BieruModel, outputs: List[np.ndarray], convs) -> Dict[str, Any]:
    preds = np.concatenate([point_predictions(model, o) for o in outputs])
    targets = np.concatenate([c.targets for c in convs])
    if model.config.task == CLASSIFY:
        rec = classification_record(preds, targets, model.config.n_class)
        return {k: rec[k] for k in ("weighted_accuracy", "weighted_f1")}
    rec = regression_record(preds, targets)
    return {k: rec[k] for k in ("pearson_r", "mae")}


def train_epoch(
    model: BieruModel,
    dataset: Dataset,
    train_state: TrainState,
    loss_config: LossConfig,
) -> EpochMetrics:
    """One pass over ``dataset`` in a seeded shuffled order."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    start = time.perf_counter()
    order = train_state.rng.permutation(len(dataset))
    params = model.named_tensors()
    losses: List[float] = []
    outputs: List[np.ndarray] = []
    visited: List[FeatureConversation] = []
    for idx in order:
        conv = dataset.conversations[int(idx)]
        step = loss_and_grads(model, conv, loss_config, True, train_state.rng)
        try:
            adam_step(train_state.adam, params, step.grads)
        except ValueError as exc:
            raise type(exc)(
                f"epoch {train_state.epoch + 1}, conversation {conv.id!r}: {exc}"
            ) from exc
        losses.append(step.loss)
        outputs.append(step.outputs)
        visited.append(conv)
    train_state.epoch += 1
    elapsed = time.perf_counter() - start
    logger.debug("epoch %d done in %.3fs", train_state.epoch, elapsed)
    return EpochMetrics(
        epoch=train_state.epoch,
        mean_loss=float(np.mean(losses)),
        metrics=_summarize(model, outputs, visited),
        seconds=elapsed,
    )


def train_stream(
    model: BieruModel,
    train_set: Dataset,
    train_state: TrainState,
    config: TrainConfig,
    loss_config: LossConfig,
    val_set: Optional[Dataset] = None,
) -> Generator[EpochMetrics, None, int]:
    """Yield one :class:`EpochMetrics` per epoch until ``config.epochs``.

    Resumed states continue from ``train_state.epoch``. With a patience and a
    validation set, stops once validation loss has not improved for that many
    epochs. Returns the number of epochs run in this call.
    """
    ran = 0
    patience = config.patience if val_set is not None else None
    while train_state.epoch < config.epochs:
        if patience is not None and train_state.stale_epochs >= patience:
            logger.info("early stop after %d stale epochs", train_state.stale_epochs)
            break
        record = train_epoch(model, train_set, train_state, loss_config)
        if val_set is not None:
            record.val = evaluate(model, val_set, loss_config)
        if patience is not None:
            val_loss = record.val["loss"]
            if train_state.best_val_loss is None or val_loss < train_state.best_val_loss:
                train_state.best_val_loss = val_loss
                train_state.stale_epochs = 0
            else:
                train_state.stale_epochs += 1
        # no wall-clock time in stored history
        train_state.history.append(record.to_dict(timing=False))
        ran += 1
        yield record
    return ran


# ---------------------------------------------------------------------------
# Parameter accounting
# ---------------------------------------------------------------------------
@dataclass
class ParamReport:
    tensors: Dict[str, int]
    modules: Dict[str, int]
    total: int
    closed_form: Dict[str, int]

    def lines(self) -> List[str]:
        out = [f"{name:<24} {count:>10}" for name, count in self.modules.items()]
        out.append(f"{'total':<24} {self.total:>10}")
        return out


def report_params(model: BieruModel) -> ParamReport:
    """Counts per named tensor, per module and in total."""
    named = model.named_tensors()
    expected = model_shapes(model.config)
    if {n: tuple(a.shape) for n, a in named.items()} != expected:
        raise ShapeError("model tensors do not match their configuration")
    tensors = {name: int(arr.size) for name, arr in named.items()}
    modules: Dict[str, int] = {}
    for name, count in tensors.items():
        module = name.rsplit(".", 1)[0]
        modules[module] = modules.get(module, 0) + count
    closed: Dict[str, int] = {}
    if model.config.uses_gntb:
        closed["gntb_per_direction"] = gntb_mod.count_params(model.config.gntb)
    if model.config.uses_tfe:
        closed["tfe_per_direction"] = tfe_mod.count_params(model.config.tfe)
    return ParamReport(
        tensors=tensors, modules=modules, total=sum(tensors.values()), closed_form=closed
    )
