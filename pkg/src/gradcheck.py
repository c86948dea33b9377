"""Finite-difference verification of every analytic gradient.

Each suite builds a small seeded configuration, computes analytic gradients
and compares them tensor by tensor against central differences. A coordinate
passes when ``|a - b| <= ATOL + RTOL * max(|a|, |b|)``; the reported error
per tensor is ``max |a - b| / max(|a|, |b|, ATOL / RTOL)``. The same ratio
with the denominator floored at ``REL_FLOOR`` instead is reported as
``floored_rel_error``.
"""

import json
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Generator, List, Optional

import numpy as np

from .bieru import ModelConfig, init_model
from .data import FeatureConversation
from .gntb import FULL_RANK, LOW_RANK, GntbConfig, gntb_backward, gntb_forward, init_gntb
from .heads import CLASSIFY, REGRESS, LossConfig, head_forward, init_head, l2_grad
from .heads import data_loss, l2_penalty, loss_backward, regularized_flat
from .numkit import DEFAULT_FD_STEP, SeededRng, finite_diff_grad
from .tfe import TfeConfig, TfeState, init_tfe, tfe_backward, tfe_forward
from .train import loss_and_grads

logger = logging.getLogger(__name__)

RTOL = 1e-5
ATOL = 1e-8
REL_FLOOR = 1e-8


@dataclass
class TensorCheck:
    suite: str
    tensor: str
    size: int
    max_rel_error: float
    max_abs_error: float
    passed: bool
    floored_rel_error: float = 0.0

    def to_dict(self) -> Dict:
        return {
            "suite": self.suite,
            "tensor": self.tensor,
            "size": self.size,
            "max_rel_error": self.max_rel_error,
            "max_abs_error": self.max_abs_error,
            "floored_rel_error": self.floored_rel_error,
            "passed": self.passed,
        }


def compare(suite: str, tensor: str, analytic: np.ndarray, numeric: np.ndarray) -> TensorCheck:
    a = np.ravel(analytic)
    b = np.ravel(numeric)
    diff = np.abs(a - b)
    scale = np.maximum(np.abs(a), np.abs(b))
    rel = diff / np.maximum(scale, ATOL / RTOL)
    floored = diff / np.maximum(scale, REL_FLOOR)
    passed = bool(np.all(diff <= ATOL + RTOL * scale))
    return TensorCheck(
        suite=suite,
        tensor=tensor,
        size=int(a.size),
        max_rel_error=float(rel.max()) if rel.size else 0.0,
        max_abs_error=float(diff.max()) if diff.size else 0.0,
        passed=passed,
        floored_rel_error=float(floored.max()) if floored.size else 0.0,
    )


def check_tensors(
    suite: str,
    tensors: Dict[str, np.ndarray],
    analytic: Dict[str, np.ndarray],
    loss_fn: Callable[[], float],
    h: float = DEFAULT_FD_STEP,
    corrupt: Optional[str] = None,
) -> List[TensorCheck]:
    """Compare ``analytic`` against central differences of ``loss_fn``.

    ``tensors`` are perturbed in place and restored; ``loss_fn`` must read
    them. ``corrupt`` names a tensor whose analytic gradient is deliberately
    offset, as a negative control.
    """
    results = []
    for name, arr in tensors.items():
        original = arr.copy()

        def f(theta: np.ndarray, arr: np.ndarray = arr) -> float:
            arr[...] = theta.reshape(arr.shape)
            return loss_fn()

        numeric = finite_diff_grad(f, original.ravel(), h).reshape(arr.shape)
        arr[...] = original
        grad = np.array(analytic[name], dtype=np.float64, copy=True)
        if corrupt is not None and corrupt in (name, f"{suite}:{name}"):
            grad.ravel()[0] += 1e-3
        results.append(compare(suite, name, grad, numeric))
    return results


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------
def gntb_suite(mode: str, d: int, k: int, r: int, seed: int, corrupt=None) -> List[TensorCheck]:
    rng = SeededRng(seed)
    params = init_gntb(GntbConfig(d=d, k=k, r=r, activation="tanh", mode=mode), rng)
    p_prev = rng.normal(size=d)
    u_t = rng.normal(size=d)
    w = rng.normal(size=d)

    def loss() -> float:
        p_t, _ = gntb_forward(params, p_prev, u_t)
        return float(w @ p_t)

    _, cache = gntb_forward(params, p_prev, u_t)
    grads, g_prev, g_u = gntb_backward(params, cache, w)
    tensors = dict(params.named())
    tensors.update({"p_prev": p_prev, "u_t": u_t})
    analytic = dict(grads.named())
    analytic.update({"p_prev": g_prev, "u_t": g_u})
    suite = f"gntb/{mode}" + ("" if k == d else "/projection")
    return check_tensors(suite, tensors, analytic, loss, corrupt=corrupt)


def tfe_suite(d: int, hidden: int, filters: int, kernel: int, seed: int, corrupt=None):
    rng = SeededRng(seed)
    params = init_tfe(TfeConfig(d=d, hidden=hidden, filters=filters, kernel=kernel), rng)
    for b in (params.b_ih, params.b_hh, params.conv_b):
        b[...] = rng.uniform(-0.5, 0.5, size=b.shape)
    p_t = rng.normal(size=d)
    h0 = rng.uniform(-0.5, 0.5, size=hidden)
    c0 = rng.normal(size=hidden)
    w_e = rng.normal(size=hidden + filters)
    w_h = rng.normal(size=hidden)
    w_c = rng.normal(size=hidden)

    def loss() -> float:
        e_t, state, _ = tfe_forward(params, p_t, TfeState(h0, c0))
        return float(w_e @ e_t + w_h @ state.h + w_c @ state.c)

    _, _, cache = tfe_forward(params, p_t, TfeState(h0, c0))
    grads, g_p, g_state = tfe_backward(params, cache, w_e, TfeState(w_h, w_c))
    tensors = dict(params.named())
    tensors.update({"p_t": p_t, "h_prev": h0, "c_prev": c0})
    analytic = dict(grads.named())
    analytic.update({"p_t": g_p, "h_prev": g_state.h, "c_prev": g_state.c})
    return check_tensors("tfe", tensors, analytic, loss, corrupt=corrupt)


def small_model_config(
    variant: str,
    task: str = CLASSIFY,
    ablation: str = "full",
    dropout: float = 0.0,
    mode: str = LOW_RANK,
    head_bias: bool = False,
) -> ModelConfig:
    """d = k = 3, r = 2, H = F = 2, K = 2, three classes."""
    act = "sigmoid" if task == CLASSIFY else "tanh"
    return ModelConfig(
        gntb=GntbConfig(d=3, k=3, r=2, activation=act, mode=mode),
        tfe=TfeConfig(d=3, hidden=2, filters=2, kernel=2),
        variant=variant,
        task=task,
        n_class=3,
        dropout_rate=dropout,
        ablation=ablation,
        head_bias=head_bias,
    )


def small_conversation(rng: SeededRng, config: ModelConfig, turns: int = 3) -> FeatureConversation:
    conv = FeatureConversation(id="gradcheck", features=rng.normal(size=(turns, config.d)))
    if config.task == CLASSIFY:
        conv.labels = rng.integers(0, config.n_class, size=turns)
    else:
        conv.intensities = rng.normal(size=turns)
    return conv


def bieru_suite(config: ModelConfig, seed: int, l2: float = 1e-2, corrupt=None):
    rng = SeededRng(seed)
    model = init_model(config, rng)
    for name, arr in model.named_tensors().items():
        if name.endswith(("b_ih", "b_hh", "conv_b", "bias")):
            arr[...] = rng.uniform(-0.5, 0.5, size=arr.shape)
    conv = small_conversation(rng, config)
    loss_config = LossConfig(l2=l2)
    train_mode = config.dropout_rate > 0
    mask_seed = seed + 1

    def loss() -> float:
        # a fresh generator replays the same dropout masks every call
        return loss_and_grads(model, conv, loss_config, train_mode, SeededRng(mask_seed)).loss

    step = loss_and_grads(model, conv, loss_config, train_mode, SeededRng(mask_seed))
    suite = f"bieru-{config.variant}/{config.task}/{config.ablation}"
    if config.gntb.mode != LOW_RANK:
        suite += f"/{config.gntb.mode}"
    if train_mode:
        suite += "/dropout"
    tensors = dict(model.named_tensors())
    analytic = dict(step.grads)
    tensors["utterances"] = conv.features
    analytic["utterances"] = step.grad_utterances
    return check_tensors(suite, tensors, analytic, loss, corrupt=corrupt)


def head_suite(task: str, l2_form: str, seed: int, corrupt=None):
    rng = SeededRng(seed)
    d_e, n_class, turns = 4, 3, 3
    head = init_head(task, d_e, n_class, rng, bias=True)
    head.bias[...] = rng.uniform(-0.5, 0.5, size=head.bias.shape)
    features = rng.normal(size=(turns, d_e))
    if task == CLASSIFY:
        targets = rng.integers(0, n_class, size=turns)
    else:
        targets = rng.normal(size=turns)
    config = LossConfig(l2=0.05, l2_form=l2_form)

    def loss() -> float:
        out, _ = head_forward(head, features)
        return data_loss(head, out, targets) + l2_penalty(regularized_flat(head.named()), config)

    _, cache = head_forward(head, features)
    grads, g_feat = loss_backward(head, cache, targets)
    analytic = dict(grads.named())
    for name, g in l2_grad(head.named(), config).items():
        analytic[name] = analytic[name] + g
    analytic["features"] = g_feat
    tensors = dict(head.named())
    tensors["features"] = features
    return check_tensors(f"head/{task}/{l2_form}", tensors, analytic, loss, corrupt=corrupt)


def run_gradcheck(seed: int = 0, corrupt: Optional[str] = None) -> List[TensorCheck]:
    """The full suite: GNTB, TFE, heads and losses, BiERU in every wiring."""
    results: List[TensorCheck] = []
    results += gntb_suite(LOW_RANK, d=3, k=3, r=2, seed=seed, corrupt=corrupt)
    results += gntb_suite(FULL_RANK, d=3, k=3, r=2, seed=seed, corrupt=corrupt)
    results += gntb_suite(LOW_RANK, d=3, k=2, r=2, seed=seed, corrupt=corrupt)
    results += tfe_suite(d=3, hidden=2, filters=2, kernel=2, seed=seed, corrupt=corrupt)
    for task in (CLASSIFY, REGRESS):
        for form in ("squared-norm", "norm"):
            results += head_suite(task, form, seed, corrupt=corrupt)
    configs = [
        small_model_config("gc"),
        small_model_config("lc"),
        small_model_config("gc", task=REGRESS),
        small_model_config("lc", task=REGRESS),
        small_model_config("lc", ablation="gntb-only"),
        small_model_config("lc", ablation="tfe-only"),
        small_model_config("gc", ablation="gntb-only", task=REGRESS),
        small_model_config("gc", mode=FULL_RANK, head_bias=True),
        small_model_config("gc", dropout=0.3),
        small_model_config("lc", dropout=0.3),
    ]
    for config in configs:
        results += bieru_suite(config, seed, corrupt=corrupt)
    return results


def gradcheck_stream(seed: int = 0, corrupt: Optional[str] = None) -> Generator[str, None, int]:
    """Yield one JSON line per tensor and a summary line; returns the exit code."""
    results = run_gradcheck(seed, corrupt)
    for check in results:
        yield json.dumps(check.to_dict(), sort_keys=True) + "\n"
    failed = [f"{c.suite}:{c.tensor}" for c in results if not c.passed]
    summary = {
        "summary": True,
        "tensors": len(results),
        "failed": failed,
        "max_rel_error": max(c.max_rel_error for c in results),
        "floored_rel_error": max(c.floored_rel_error for c in results),
        "passed": not failed,
    }
    yield json.dumps(summary, sort_keys=True) + "\n"
    if failed:
        logger.warning("gradient check failed for %d tensors", len(failed))
    return 0 if not failed else 1
