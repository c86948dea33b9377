"""Two-channel feature extractor (TFE).

Channel one is an LSTM cell over the contextual utterance vector, channel two
a single-layer 1-D convolution with relu and global max-pooling. The emotion
feature is the concatenation ``e_t = h_t ⊕ l_t``.

Gate order inside the stacked LSTM weights is fixed as (i, f, g, o):
input, forget, candidate, output. All biases start at zero.
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .numkit import (
    SeededRng,
    ShapeError,
    StaleCacheError,
    check_shape,
    init_params,
    sigmoid,
)

DEFAULT_HIDDEN = 100
DEFAULT_FILTERS = 50
DEFAULT_KERNEL = 3


@dataclass
class TfeConfig:
    d: int
    hidden: int = DEFAULT_HIDDEN
    filters: int = DEFAULT_FILTERS
    kernel: int = DEFAULT_KERNEL
    conv_activation: str = "relu"

    def __post_init__(self) -> None:
        if self.hidden < 1:
            raise ValueError(f"tfe: hidden size must be >= 1, got {self.hidden}")
        if self.filters < 1:
            raise ValueError(f"tfe: filter count must be >= 1, got {self.filters}")
        if not 1 <= self.kernel <= self.d:
            raise ValueError(f"tfe: kernel must be in [1, {self.d}], got {self.kernel}")
        if self.conv_activation != "relu":
            raise ValueError(f"tfe: unsupported conv activation {self.conv_activation!r}")

    @property
    def out_dim(self) -> int:
        return self.hidden + self.filters

    def to_dict(self) -> Dict:
        return {
            "d": self.d,
            "hidden": self.hidden,
            "filters": self.filters,
            "kernel": self.kernel,
            "conv_activation": self.conv_activation,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "TfeConfig":
        return cls(**data)


@dataclass
class TfeParams:
    config: TfeConfig
    W_ih: np.ndarray
    W_hh: np.ndarray
    b_ih: np.ndarray
    b_hh: np.ndarray
    conv_w: np.ndarray
    conv_b: np.ndarray

    def named(self) -> Dict[str, np.ndarray]:
        return {
            "W_ih": self.W_ih,
            "W_hh": self.W_hh,
            "b_ih": self.b_ih,
            "b_hh": self.b_hh,
            "conv_w": self.conv_w,
            "conv_b": self.conv_b,
        }

    def zeros_like(self) -> "TfeParams":
        return TfeParams(
            config=self.config,
            **{name: np.zeros_like(arr) for name, arr in self.named().items()},
        )


@dataclass
class TfeState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int) -> "TfeState":
        return cls(h=np.zeros(hidden), c=np.zeros(hidden))


def param_shapes(config: TfeConfig) -> Dict[str, Tuple[int, ...]]:
    H, d = config.hidden, config.d
    return {
        "W_ih": (4 * H, d),
        "W_hh": (4 * H, H),
        "b_ih": (4 * H,),
        "b_hh": (4 * H,),
        "conv_w": (config.filters, config.kernel),
        "conv_b": (config.filters,),
    }


def count_params(config: TfeConfig) -> int:
    return sum(int(np.prod(shape)) for shape in param_shapes(config).values())


def init_tfe(config: TfeConfig, rng: SeededRng) -> TfeParams:
    H, d = config.hidden, config.d
    return TfeParams(
        config=config,
        W_ih=init_params(rng, 4 * H, d, "uniform-glorot"),
        W_hh=init_params(rng, 4 * H, H, "uniform-glorot"),
        b_ih=np.zeros(4 * H),
        b_hh=np.zeros(4 * H),
        conv_w=init_params(rng, config.filters, config.kernel, "uniform-glorot"),
        conv_b=np.zeros(config.filters),
    )


def validate_params(params: TfeParams) -> None:
    for name, shape in param_shapes(params.config).items():
        check_shape(params.named()[name], shape, f"tfe.{name}")


# ---------------------------------------------------------------------------
# LSTM channel
# ---------------------------------------------------------------------------
@dataclass
class LstmCache:
    owner: int
    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    tanh_c: np.ndarray


def lstm_cell(
    params: TfeParams, p_t: np.ndarray, state: TfeState
) -> Tuple[np.ndarray, TfeState, LstmCache]:
    """One LSTM step: returns ``(h_t, new_state, cache)``."""
    H, d = params.config.hidden, params.config.d
    if p_t.shape != (d,) or state.h.shape != (H,) or state.c.shape != (H,):
        raise ShapeError(
            f"lstm_cell: expected input ({d},) and state ({H},), "
            f"got {p_t.shape}, {state.h.shape}, {state.c.shape}"
        )
    z = params.W_ih @ p_t + params.b_ih + params.W_hh @ state.h + params.b_hh
    i = sigmoid(z[:H])
    f = sigmoid(z[H : 2 * H])
    g = np.tanh(z[2 * H : 3 * H])
    o = sigmoid(z[3 * H :])
    c = f * state.c + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    cache = LstmCache(
        owner=id(params),
        x=p_t,
        h_prev=state.h,
        c_prev=state.c,
        i=i,
        f=f,
        g=g,
        o=o,
        c=c,
        tanh_c=tanh_c,
    )
    return h, TfeState(h=h, c=c), cache


def lstm_backward(
    params: TfeParams,
    cache: LstmCache,
    grad_h: np.ndarray,
    grad_c_next: np.ndarray,
    grads: TfeParams,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Accumulate LSTM gradients into ``grads``.

    ``grad_h`` is the total gradient reaching h_t (feature path plus the next
    step); ``grad_c_next`` is the gradient reaching c_t from the next step.
    Returns ``(grad_x, grad_h_prev, grad_c_prev)``.
    """
    grad_o = grad_h * cache.tanh_c
    grad_c = grad_c_next + grad_h * cache.o * (1.0 - cache.tanh_c**2)
    grad_f = grad_c * cache.c_prev
    grad_i = grad_c * cache.g
    grad_g = grad_c * cache.i
    grad_c_prev = grad_c * cache.f

    grad_z = np.concatenate(
        [
            grad_i * cache.i * (1.0 - cache.i),
            grad_f * cache.f * (1.0 - cache.f),
            grad_g * (1.0 - cache.g**2),
            grad_o * cache.o * (1.0 - cache.o),
        ]
    )
    grads.W_ih += np.outer(grad_z, cache.x)
    grads.W_hh += np.outer(grad_z, cache.h_prev)
    grads.b_ih += grad_z
    grads.b_hh += grad_z
    return params.W_ih.T @ grad_z, params.W_hh.T @ grad_z, grad_c_prev


# ---------------------------------------------------------------------------
# Convolution channel
# ---------------------------------------------------------------------------
@dataclass
class ConvCache:
    owner: int
    windows: np.ndarray  # (d - K + 1, K)
    responses: np.ndarray  # (d - K + 1, F), before relu
    argmax: np.ndarray  # (F,)


def conv_channel(params: TfeParams, p_t: np.ndarray) -> Tuple[np.ndarray, ConvCache]:
    """Valid stride-1 convolution, relu, then global max-pool per filter.

    Ties in the pooling go to the lowest position.
    """
    K = params.config.kernel
    if p_t.ndim != 1 or p_t.shape[0] < K:
        raise ShapeError(f"conv_channel: input length {p_t.shape} shorter than kernel {K}")
    windows = sliding_window_view(p_t, K)
    responses = windows @ params.conv_w.T + params.conv_b
    activated = np.maximum(responses, 0.0)
    argmax = np.argmax(activated, axis=0)
    pooled = activated[argmax, np.arange(activated.shape[1])]
    return pooled, ConvCache(
        owner=id(params), windows=windows, responses=responses, argmax=argmax
    )


def conv_backward(
    params: TfeParams, cache: ConvCache, grad_l: np.ndarray, grads: TfeParams
) -> np.ndarray:
    """Accumulate convolution gradients into ``grads``; returns grad wrt input."""
    n_pos, F = cache.responses.shape
    K = params.config.kernel
    cols = np.arange(F)
    grad_resp = np.zeros((n_pos, F))
    grad_resp[cache.argmax, cols] = grad_l
    grad_resp *= cache.responses > 0
    grads.conv_w += grad_resp.T @ cache.windows
    grads.conv_b += grad_resp.sum(axis=0)
    grad_windows = grad_resp @ params.conv_w  # (n_pos, K)
    grad_x = np.zeros(n_pos + K - 1)
    for offset in range(K):
        grad_x[offset : offset + n_pos] += grad_windows[:, offset]
    return grad_x


# ---------------------------------------------------------------------------
# Both channels
# ---------------------------------------------------------------------------
@dataclass
class TfeCache:
    lstm: LstmCache
    conv: ConvCache


def tfe_forward(
    params: TfeParams, p_t: np.ndarray, state: TfeState
) -> Tuple[np.ndarray, TfeState, TfeCache]:
    h_t, new_state, lstm_cache = lstm_cell(params, p_t, state)
    l_t, conv_cache = conv_channel(params, p_t)
    return np.concatenate([h_t, l_t]), new_state, TfeCache(lstm_cache, conv_cache)


def tfe_backward(
    params: TfeParams,
    cache: TfeCache,
    grad_e_t: np.ndarray,
    grad_state_next: Optional[TfeState] = None,
    grads: Optional[TfeParams] = None,
) -> Tuple[TfeParams, np.ndarray, TfeState]:
    """Gradients of one TFE step.

    ``grad_state_next`` carries dL/dh_t and dL/dc_t arriving from the next
    step of the LSTM chain. When ``grads`` is given, gradients accumulate
    into it. Returns ``(grads, grad_p_t, grad_state_prev)``.
    """
    H, F = params.config.hidden, params.config.filters
    if cache.lstm.owner != id(params) or cache.conv.owner != id(params):
        raise StaleCacheError("tfe_backward: cache does not match these parameters")
    if grad_e_t.shape != (H + F,):
        raise ShapeError(f"tfe_backward: expected gradient of length {H + F}, got {grad_e_t.shape}")
    if grads is None:
        grads = params.zeros_like()
    if grad_state_next is None:
        grad_state_next = TfeState.zeros(H)

    grad_h = grad_e_t[:H] + grad_state_next.h
    grad_x_lstm, grad_h_prev, grad_c_prev = lstm_backward(
        params, cache.lstm, grad_h, grad_state_next.c, grads
    )
    grad_x_conv = conv_backward(params, cache.conv, grad_e_t[H:], grads)
    return grads, grad_x_lstm + grad_x_conv, TfeState(h=grad_h_prev, c=grad_c_prev)
