"""Feed-forward basis networks with hand-rolled reverse-mode gradients.

The feature map phi: R^d -> R^r is a tanh MLP (optionally with identity
skip connections between equal-width hidden layers) whose final layer is
affine with no activation, so the basis functions can take any sign and
magnitude. Training needs only vector-Jacobian products against a given
cotangent on the network output, so there is no general autodiff here:
`vjp` implements exactly that product, and `adam_step` applies Adam with
decoupled weight decay on the weight matrices (never the biases).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .linalg import DimensionMismatch

# Row-block size for large inputs; keeps the big GEMM operands cache
# resident so cost stays linear in n. Does not change semantics.
_ROW_CHUNK = 8192


@dataclass
class FeatureMap:
    """Parameters of the basis network.

    layer_sizes is [d, h_1, ..., h_k, r]; weights[i] has shape
    (layer_sizes[i+1], layer_sizes[i]) and acts as x -> W x + b.
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"
    residual: bool = False

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def rank(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "FeatureMap":
        return replace(
            self,
            layer_sizes=list(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclass
class GradientBundle:
    """Per-parameter gradients, shape-congruent with a FeatureMap."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.weights + self.biases)


def init_feature_map(
    d: int, hidden: list[int], r: int, residual: bool = False, seed: int = 0
) -> FeatureMap:
    """Glorot-uniform weights, zero biases, deterministic in the seed.

    Weight entries are drawn row-major from the "init" substream, uniform
    on [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
    """
    sizes = [d] + list(hidden) + [r]
    if any(s < 1 for s in sizes):
        raise ValueError(f"all layer sizes must be >= 1, got {sizes}")
    stream = rng.substream(seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = stream.uniforms(fan_out * fan_in, -limit, limit).reshape(fan_out, fan_in)
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return FeatureMap(
        layer_sizes=sizes, weights=weights, biases=biases, residual=residual
    )


def _check_input(fmap: FeatureMap, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != fmap.input_dim:
        raise DimensionMismatch(
            f"input must be (n, {fmap.input_dim}), got {x.shape}"
        )
    return x


def _forward_block(fmap: FeatureMap, x: np.ndarray, keep_cache: bool):
    """One forward pass over a row block; optionally keeps activations.

    cache entries per hidden layer are (layer_input, tanh_output): the
    tanh output pre-skip, which backprop needs for the 1 - a^2 factor.
    """
    h = x
    cache = [] if keep_cache else None
    n_hidden = len(fmap.weights) - 1
    for i in range(n_hidden):
        pre = h @ fmap.weights[i].T + fmap.biases[i]
        act = np.tanh(pre)
        if keep_cache:
            cache.append((h, act))
        if fmap.residual and h.shape[1] == act.shape[1]:
            act = act + h
        h = act
    out = h @ fmap.weights[-1].T + fmap.biases[-1]
    return out, h, cache


def forward(fmap: FeatureMap, x) -> np.ndarray:
    """Feature matrix with rows phi(x_i)^T, shape (n, r)."""
    x = _check_input(fmap, x)
    if x.shape[0] <= _ROW_CHUNK:
        return _forward_block(fmap, x, keep_cache=False)[0]
    blocks = [
        _forward_block(fmap, x[i : i + _ROW_CHUNK], keep_cache=False)[0]
        for i in range(0, x.shape[0], _ROW_CHUNK)
    ]
    return np.concatenate(blocks, axis=0)


def _vjp_block(fmap: FeatureMap, last_hidden, cache, cotangent, out: GradientBundle):
    """Accumulate parameter gradients for one row block into `out`."""
    out.weights[-1] += cotangent.T @ last_hidden
    out.biases[-1] += cotangent.sum(axis=0)
    g = cotangent @ fmap.weights[-1]
    for i in range(len(cache) - 1, -1, -1):
        layer_in, act = cache[i]
        skip = fmap.residual and layer_in.shape[1] == act.shape[1]
        g_pre = g * (1.0 - act * act)
        out.weights[i] += g_pre.T @ layer_in
        out.biases[i] += g_pre.sum(axis=0)
        g_next = g_pre @ fmap.weights[i]
        if skip:
            g_next = g_next + g
        g = g_next


def zero_bundle(fmap: FeatureMap) -> GradientBundle:
    return GradientBundle(
        weights=[np.zeros_like(w) for w in fmap.weights],
        biases=[np.zeros_like(b) for b in fmap.biases],
    )


def vjp(fmap: FeatureMap, x, cotangent) -> GradientBundle:
    """Gradient of <cotangent, forward(fmap, x)> w.r.t. all parameters."""
    x = _check_input(fmap, x)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != (x.shape[0], fmap.rank):
        raise DimensionMismatch(
            f"cotangent must be ({x.shape[0]}, {fmap.rank}), got {cot.shape}"
        )
    out = zero_bundle(fmap)
    for i in range(0, x.shape[0], _ROW_CHUNK):
        block = x[i : i + _ROW_CHUNK]
        _, last_hidden, cache = _forward_block(fmap, block, keep_cache=True)
        _vjp_block(fmap, last_hidden, cache, cot[i : i + _ROW_CHUNK], out)
    return out


def forward_and_pullback(fmap: FeatureMap, x):
    """Forward pass plus a closure computing the vjp from cached activations.

    Training loops need both the features and, later, the gradient against
    a cotangent computed from those features; this avoids running the
    forward pass twice. For large inputs the activations are recomputed
    blockwise inside the closure instead of being held all at once.
    """
    x = _check_input(fmap, x)
    if x.shape[0] <= _ROW_CHUNK:
        phi, last_hidden, cache = _forward_block(fmap, x, keep_cache=True)

        def pullback(cotangent: np.ndarray) -> GradientBundle:
            out = zero_bundle(fmap)
            _vjp_block(fmap, last_hidden, cache, cotangent, out)
            return out

        return phi, pullback

    phi = forward(fmap, x)
    return phi, lambda cotangent: vjp(fmap, x, cotangent)


@dataclass
class AdamState:
    """Adam moments for an ordered list of parameter arrays."""

    step: int
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0


def adam_init(
    params: list[np.ndarray],
    learning_rate: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    return AdamState(
        step=0,
        first_moment=[np.zeros_like(p) for p in params],
        second_moment=[np.zeros_like(p) for p in params],
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        weight_decay=weight_decay,
    )


def adam_step_arrays(
    state: AdamState,
    params: list[np.ndarray],
    grads: list[np.ndarray],
    decay_mask: list[bool],
    maximize: bool = False,
):
    """One Adam update over a parameter list; returns (params, state).

    Weight decay is decoupled (p -= lr * wd * p) and applied only where
    decay_mask is True; it never follows the maximize sign flip.
    """
    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v, decay in zip(
        params, grads, state.first_moment, state.second_moment, decay_mask
    ):
        g = -g if maximize else g
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p = p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        if decay and state.weight_decay != 0.0:
            p = p - state.learning_rate * state.weight_decay * p
        new_params.append(p)
        new_m.append(m)
        new_v.append(v)
    new_state = replace(state, step=t, first_moment=new_m, second_moment=new_v)
    return new_params, new_state


def adam_step(
    state: AdamState, fmap: FeatureMap, grads: GradientBundle, maximize: bool = False
):
    """Adam update of a FeatureMap; weight matrices decay, biases do not."""
    params = list(fmap.weights) + list(fmap.biases)
    glist = list(grads.weights) + list(grads.biases)
    mask = [True] * len(fmap.weights) + [False] * len(fmap.biases)
    new_params, new_state = adam_step_arrays(state, params, glist, mask, maximize)
    k = len(fmap.weights)
    new_map = replace(fmap, weights=new_params[:k], biases=new_params[k:])
    return new_map, new_state


def serialize_feature_map(fmap: FeatureMap) -> dict:
    """JSON-ready dict: {layer_sizes, residual, activation, weights, biases}."""
    return {
        "layer_sizes": list(fmap.layer_sizes),
        "residual": bool(fmap.residual),
        "activation": fmap.activation,
        "weights": [w.tolist() for w in fmap.weights],
        "biases": [b.tolist() for b in fmap.biases],
    }


def deserialize_feature_map(obj: dict) -> FeatureMap:
    return FeatureMap(
        layer_sizes=[int(s) for s in obj["layer_sizes"]],
        weights=[np.asarray(w, dtype=np.float64) for w in obj["weights"]],
        biases=[np.asarray(b, dtype=np.float64) for b in obj["biases"]],
        activation=obj.get("activation", "tanh"),
        residual=bool(obj["residual"]),
    )
