"""Dense/tanh multilayer networks with point and set-valued forward passes.

Set propagation alternates exact affine maps with sound tanh enclosures, so
``forward_point(net, x)`` is contained in ``forward_set(net, X)`` whenever
``x`` is in ``X``. Reverse-mode gradients are implemented by hand; the batched
variants at the bottom exist for the trainer and follow a stop-gradient
convention for the set pass (chord slopes and error widths treated as
constants), under which centers and generators are affine in the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .zonoset import Zonotope

DENSE = "dense"
TANH = "tanh"


@dataclass(frozen=True, eq=False)
class Layer:
    kind: str
    w: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == DENSE:
            w = np.asarray(self.w, dtype=np.float64)
            b = np.asarray(self.b, dtype=np.float64).reshape(-1)
            if w.ndim != 2 or b.size != w.shape[0]:
                raise ValueError("dense layer needs w (out, in) and matching bias")
            object.__setattr__(self, "w", w)
            object.__setattr__(self, "b", b)
        elif self.kind == TANH:
            if self.w is not None or self.b is not None:
                raise ValueError("tanh layer carries no parameters")
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass(frozen=True, eq=False)
class Mlp:
    layers: tuple[Layer, ...]
    input_dim: int
    output_dim: int

    def __post_init__(self):
        dim = self.input_dim
        for layer in self.layers:
            if layer.kind == DENSE:
                if layer.w.shape[1] != dim:
                    raise ValueError(
                        f"dense input dim {layer.w.shape[1]} does not chain from {dim}"
                    )
                dim = layer.w.shape[0]
        if dim != self.output_dim:
            raise ValueError(f"final dim {dim} != declared output_dim {self.output_dim}")


def make_mlp(layers) -> Mlp:
    layers = tuple(layers)
    dense = [l for l in layers if l.kind == DENSE]
    if not dense:
        raise ValueError("network needs at least one dense layer")
    return Mlp(layers, input_dim=dense[0].w.shape[1], output_dim=dense[-1].w.shape[0])


def init_mlp(dims, rng: np.random.Generator, final_tanh: bool = False) -> Mlp:
    """Dense-tanh stack through ``dims``; uniform +-sqrt(6/(fan_in+fan_out)) init."""
    layers = []
    for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        layers.append(Layer(DENSE, w, np.zeros(n_out)))
        if i < len(dims) - 2 or final_tanh:
            layers.append(Layer(TANH))
    return make_mlp(layers)


def forward_point(net: Mlp, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != net.input_dim:
        raise ValueError(f"input dim {x.size} != network input {net.input_dim}")
    for layer in net.layers:
        x = layer.w @ x + layer.b if layer.kind == DENSE else np.tanh(x)
    return x


def forward_set(net: Mlp, x: Zonotope) -> Zonotope:
    """Sound set-valued forward pass; contains forward_point(net, x) for all x in X."""
    if x.dim != net.input_dim:
        raise ValueError(f"input dim {x.dim} != network input {net.input_dim}")
    c, g = x.center, x.generators
    for layer in net.layers:
        if layer.kind == DENSE:
            c = layer.w @ c + layer.b
            g = layer.w @ g
        else:
            radius = np.abs(g).sum(axis=1)
            m, e_lo, e_hi = _backend.tanh_chord_params(c - radius, c + radius)
            m = np.asarray(m)
            c = m * c + 0.5 * (e_hi + e_lo)
            g = np.hstack([m[:, None] * g, np.diag(0.5 * (e_hi - e_lo))])
    return Zonotope(c, g)


def backward_point(net: Mlp, x, upstream):
    """Exact reverse-mode gradients of ``upstream @ forward_point(net, x)``.

    Returns ``(grads, dx)`` where grads is a list aligned with net.layers:
    ``(dW, db)`` for dense layers, ``None`` for tanh.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    acts = [x]
    for layer in net.layers:
        x = layer.w @ x + layer.b if layer.kind == DENSE else np.tanh(x)
        acts.append(x)
    grads: list = [None] * len(net.layers)
    delta = upstream
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.kind == DENSE:
            grads[i] = (np.outer(delta, acts[i]), delta.copy())
            delta = layer.w.T @ delta
        else:
            delta = delta * (1.0 - acts[i + 1] ** 2)
    return grads, delta


# ---------------------------------------------------------------------------
# Batched internals used by the trainer. Points are rows; generator stacks are
# (batch, n, q). The *_set_batch pair implements the stop-gradient convention.
# ---------------------------------------------------------------------------


def _contract_bg(dg: np.ndarray, g_in: np.ndarray) -> np.ndarray:
    """sum_b dg[b] @ g_in[b].T via batched GEMM: (b,o,q),(b,i,q) -> (o, i)."""
    return np.matmul(dg, g_in.transpose(0, 2, 1)).sum(axis=0)


def forward_point_batch(net: Mlp, x: np.ndarray):
    """Batched point pass with cache; x is (batch, n)."""
    acts = [x]
    for layer in net.layers:
        x = x @ layer.w.T + layer.b if layer.kind == DENSE else np.tanh(x)
        acts.append(x)
    return x, acts


def backward_point_batch(net: Mlp, acts, delta: np.ndarray):
    """Backprop a batch; parameter gradients are summed over the batch."""
    grads: list = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.kind == DENSE:
            grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
            delta = delta @ layer.w
        else:
            delta = delta * (1.0 - acts[i + 1] ** 2)
    return grads, delta


def forward_set_batch(net: Mlp, c: np.ndarray, g: np.ndarray, frozen=None):
    """Batched set pass; c is (batch, n), g is (batch, n, q).

    Returns ``(c_out, g_out, cache, tanh_params)``. Passing a previous call's
    ``tanh_params`` as ``frozen`` reuses those chord slopes and error bounds,
    which makes the pass exactly affine in the parameters (the linearization
    the batched backward assumes).
    """
    cache = []
    params = []
    k = 0
    for layer in net.layers:
        if layer.kind == DENSE:
            cache.append((DENSE, c, g))
            c = c @ layer.w.T + layer.b
            g = np.matmul(layer.w, g)
        else:
            if frozen is not None:
                m, e_lo, e_hi = frozen[k]
            else:
                radius = np.abs(g).sum(axis=2)
                m, e_lo, e_hi = _backend.tanh_chord_params(
                    (c - radius).ravel(), (c + radius).ravel()
                )
                m = np.asarray(m).reshape(c.shape)
                e_lo = np.asarray(e_lo).reshape(c.shape)
                e_hi = np.asarray(e_hi).reshape(c.shape)
            params.append((m, e_lo, e_hi))
            cache.append((TANH, c, g, m))
            c = m * c + 0.5 * (e_hi + e_lo)
            half = 0.5 * (e_hi - e_lo)
            batch, n = c.shape
            q = g.shape[2]
            widened = np.zeros((batch, n, q + n))
            np.multiply(m[:, :, None], g, out=widened[:, :, :q])
            idx = np.arange(n)
            widened[:, idx, q + idx] = half
            g = widened
            k += 1
    return c, g, cache, params


def backward_set_batch(net: Mlp, cache, dc: np.ndarray, dg: np.ndarray):
    """Backprop through the set pass under the stop-gradient convention.

    Gradients flow through centers and generator columns only; the appended
    error-width columns and the chord slopes are constants.
    """
    grads: list = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        entry = cache[i]
        if entry[0] == DENSE:
            _, c_in, g_in = entry
            layer = net.layers[i]
            dw = dc.T @ c_in + _contract_bg(dg, g_in)
            db = dc.sum(axis=0)
            grads[i] = (dw, db)
            dc = dc @ layer.w
            dg = np.matmul(layer.w.T, dg)
        else:
            _, c_in, g_in, m = entry
            q_in = g_in.shape[2]
            dc = m * dc
            dg = m[:, :, None] * dg[:, :, :q_in]
    return grads, dc, dg
