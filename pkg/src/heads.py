"""Output heads and training losses.

The classification head is a linear map followed by softmax, the regression
head a single linear map. Losses are normalized by the dialogue's utterance
count and carry an L2 penalty over the regularized parameters.
"""

from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

from .numkit import SeededRng, ShapeError, StaleCacheError, init_params

CLASSIFY = "classify"
REGRESS = "regress"
L2_FORMS = ("squared-norm", "norm")
# biases are excluded from the L2 penalty
UNREGULARIZED_SUFFIXES = ("b_ih", "b_hh", "conv_b", "bias")


@dataclass
class HeadParams:
    """``W`` is (D_e, n_class) for classification, (D_e, 1) for regression."""

    task: str
    W: np.ndarray
    bias: Optional[np.ndarray] = None

    def named(self) -> Dict[str, np.ndarray]:
        out = {"W": self.W}
        if self.bias is not None:
            out["bias"] = self.bias
        return out

    def zeros_like(self) -> "HeadParams":
        bias = None if self.bias is None else np.zeros_like(self.bias)
        return HeadParams(task=self.task, W=np.zeros_like(self.W), bias=bias)


@dataclass
class LossConfig:
    l2: float = 0.0
    l2_form: str = "squared-norm"
    eps: float = 1e-12

    def __post_init__(self) -> None:
        if self.l2 < 0:
            raise ValueError(f"L2 weight must be >= 0, got {self.l2}")
        if self.l2_form not in L2_FORMS:
            raise ValueError(f"unknown l2 form {self.l2_form!r}")

    def to_dict(self) -> Dict:
        return {"l2": self.l2, "l2_form": self.l2_form, "eps": self.eps}

    @classmethod
    def from_dict(cls, data: Dict) -> "LossConfig":
        return cls(**data)


def head_shapes(task: str, d_e: int, n_class: int, bias: bool) -> Dict[str, Tuple]:
    n_out = n_class if task == CLASSIFY else 1
    shapes: Dict[str, Tuple] = {"W": (d_e, n_out)}
    if bias:
        shapes["bias"] = (n_out,)
    return shapes


def init_head(
    task: str, d_e: int, n_class: int, rng: SeededRng, bias: bool = False
) -> HeadParams:
    if task not in (CLASSIFY, REGRESS):
        raise ValueError(f"unknown task {task!r}")
    n_out = n_class if task == CLASSIFY else 1
    return HeadParams(
        task=task,
        W=init_params(rng, d_e, n_out, "uniform-glorot"),
        bias=np.zeros(n_out) if bias else None,
    )


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction."""
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=-1, keepdims=True)


def _linear(head: HeadParams, features: np.ndarray) -> np.ndarray:
    if features.shape[-1] != head.W.shape[0]:
        raise ShapeError(
            f"head expects features of length {head.W.shape[0]}, got {features.shape[-1]}"
        )
    out = features @ head.W
    if head.bias is not None:
        out = out + head.bias
    return out


def classify(head: HeadParams, e_t: np.ndarray) -> Tuple[np.ndarray, int]:
    """Return ``(S_t, y_hat)``; argmax ties resolve to the lowest index."""
    probs = softmax(_linear(head, e_t))
    return probs, int(np.argmax(probs))


def classify_sequence(head: HeadParams, features: np.ndarray):
    probs = softmax(_linear(head, features))
    return probs, np.argmax(probs, axis=1)


def regress(head: HeadParams, e_t: np.ndarray) -> float:
    return float(_linear(head, e_t)[0])


def regress_sequence(head: HeadParams, features: np.ndarray) -> np.ndarray:
    return _linear(head, features)[:, 0]


# ---------------------------------------------------------------------------
# Regularization
# ---------------------------------------------------------------------------
def is_regularized(name: str) -> bool:
    return not name.endswith(UNREGULARIZED_SUFFIXES)


def regularized_flat(named: Mapping[str, np.ndarray]) -> np.ndarray:
    """Concatenate every regularized parameter into one flat vector."""
    parts = [arr.ravel() for name, arr in named.items() if is_regularized(name)]
    return np.concatenate(parts) if parts else np.zeros(0)


def l2_penalty(theta_flat: np.ndarray, config: LossConfig) -> float:
    sq = float(theta_flat @ theta_flat)
    if config.l2_form == "squared-norm":
        return config.l2 * sq
    return config.l2 * float(np.sqrt(sq))


def l2_grad(named: Mapping[str, np.ndarray], config: LossConfig) -> Dict[str, np.ndarray]:
    """Gradient of the L2 term for every parameter (zero for biases)."""
    out = {name: np.zeros_like(arr) for name, arr in named.items()}
    if config.l2 == 0.0:
        return out
    if config.l2_form == "squared-norm":
        scale = 2.0 * config.l2
    else:
        norm = float(np.sqrt(sum(float(np.sum(a * a)) for n, a in named.items() if is_regularized(n))))
        if norm == 0.0:
            return out
        scale = config.l2 / norm
    for name, arr in named.items():
        if is_regularized(name):
            out[name] = scale * arr
    return out


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------
def ce_loss(
    probabilities: np.ndarray,
    labels: Sequence[int],
    theta_flat: np.ndarray,
    config: LossConfig,
) -> float:
    """Mean cross-entropy over one dialogue plus the L2 term."""
    probs = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if probs.shape[0] != labels.shape[0]:
        raise ShapeError(f"ce_loss: {probs.shape[0]} predictions for {labels.shape[0]} labels")
    if not np.allclose(probs.sum(axis=1), 1.0, rtol=0.0, atol=1e-9):
        raise ValueError("ce_loss: probability rows must sum to 1")
    n_class = probs.shape[1]
    if np.any(labels < 0) or np.any(labels >= n_class):
        bad = int(labels[(labels < 0) | (labels >= n_class)][0])
        raise ValueError(f"ce_loss: label {bad} out of range [0, {n_class})")
    picked = probs[np.arange(labels.shape[0]), labels]
    data = -float(np.mean(np.log(np.maximum(picked, config.eps))))
    return data + l2_penalty(theta_flat, config)


def mse_loss(
    predictions: Sequence[float],
    targets: Sequence[float],
    theta_flat: np.ndarray,
    config: LossConfig,
) -> float:
    q = np.asarray(predictions, dtype=np.float64)
    z = np.asarray(targets, dtype=np.float64)
    if q.shape != z.shape:
        raise ShapeError(f"mse_loss: {q.shape[0]} predictions for {z.shape[0]} targets")
    return float(np.mean((q - z) ** 2)) + l2_penalty(theta_flat, config)


@dataclass
class HeadCache:
    owner: int
    features: np.ndarray  # (T, D_e)
    outputs: np.ndarray  # probabilities (T, n_class) or predictions (T,)


def head_forward(head: HeadParams, features: np.ndarray) -> Tuple[np.ndarray, HeadCache]:
    if head.task == CLASSIFY:
        out, _ = classify_sequence(head, features)
    else:
        out = regress_sequence(head, features)
    return out, HeadCache(owner=id(head), features=features, outputs=out)


def data_loss(head: HeadParams, outputs: np.ndarray, targets: Iterable) -> float:
    """Loss without the L2 term."""
    none = LossConfig()
    if head.task == CLASSIFY:
        return ce_loss(outputs, list(targets), np.zeros(0), none)
    return mse_loss(outputs, list(targets), np.zeros(0), none)


def loss_backward(
    head: HeadParams, cache: HeadCache, targets: Iterable
) -> Tuple[HeadParams, np.ndarray]:
    """Data-term gradients wrt the head parameters and the feature sequence.

    The L2 contribution is added separately through :func:`l2_grad`.
    """
    if cache.owner != id(head):
        raise StaleCacheError("loss_backward: cache does not match this head")
    T = cache.features.shape[0]
    if head.task == CLASSIFY:
        labels = np.asarray(list(targets), dtype=np.int64)
        grad_out = cache.outputs.copy()
        grad_out[np.arange(T), labels] -= 1.0
        grad_out /= T
    else:
        z = np.asarray(list(targets), dtype=np.float64)
        grad_out = (2.0 * (cache.outputs - z) / T)[:, None]
    grads = head.zeros_like()
    grads.W = cache.features.T @ grad_out
    if head.bias is not None:
        grads.bias = grad_out.sum(axis=0)
    return grads, grad_out @ head.W.T
