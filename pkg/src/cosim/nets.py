"""Minimal feed-forward network machinery.

Everything is dense float64 numpy: ReLU hidden layers, an output activation
(identity, softmax or sigmoid), analytic backprop and Adam.  The combined
training loss couples a 2-class cross entropy on ranking logits with a
hinged triplet term on cosine distances between projected embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BadConfig,
    FormatError,
    NonFiniteGradient,
    ShapeMismatch,
    ZeroVector,
)

CSMD_MAGIC = b"CSMD"

ACT_IDENTITY = "identity"
ACT_SOFTMAX = "softmax"
ACT_SIGMOID = "sigmoid"
_ACT_CODES = {ACT_IDENTITY: 0, ACT_SOFTMAX: 1, ACT_SIGMOID: 2}
_ACT_NAMES = {code: name for name, code in _ACT_CODES.items()}

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class MlpParams:
    """Weights (out, in) and biases per layer; ReLU between layers."""

    layer_dims: list
    weights: list
    biases: list
    output_activation: str = ACT_IDENTITY

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise BadConfig("an MLP needs at least input and output dims")
        if self.output_activation not in _ACT_CODES:
            raise BadConfig(f"unknown output activation {self.output_activation!r}")
        expected = len(self.layer_dims) - 1
        if len(self.weights) != expected or len(self.biases) != expected:
            raise ShapeMismatch("weights/biases count does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[i + 1], self.layer_dims[i]):
                raise ShapeMismatch(f"layer {i} weight shape {w.shape}")
            if b.shape != (self.layer_dims[i + 1],):
                raise ShapeMismatch(f"layer {i} bias shape {b.shape}")

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "MlpParams":
        return MlpParams(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output_activation,
        )


@dataclass
class MlpGrads:
    weights: list
    biases: list


def init_mlp(layer_dims: Sequence[int], output_activation: str, rng) -> MlpParams:
    """He-scaled normal weights, zero biases, drawn from ``rng`` in layer order."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.standard_normal((fan_out, fan_in)) * scale)
        biases.append(np.zeros(fan_out))
    return MlpParams(list(layer_dims), weights, biases, output_activation)


def softmax(z) -> np.ndarray:
    """Row-wise stable softmax; rows sum to 1 and are strictly positive."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return out[0] if single else out


def sigmoid(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _apply_output(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == ACT_IDENTITY:
        return z
    if activation == ACT_SOFTMAX:
        return softmax(z)
    return sigmoid(z)


def _forward_cached(params: MlpParams, x: np.ndarray):
    """Return (activations, pre_activations); activations[0] is the input."""
    acts = [x]
    zs = []
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        zs.append(z)
        a = z if i == last else np.maximum(z, 0.0)
        acts.append(a)
    return acts, zs


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Forward pass for one vector (d,) or a batch (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != params.input_dim:
        raise ShapeMismatch(f"input dim {x.shape[1]}, net expects {params.input_dim}")
    _, zs = _forward_cached(params, x)
    out = _apply_output(zs[-1], params.output_activation)
    return out[0] if single else out


def mlp_backward(params: MlpParams, acts, zs, d_last_pre: np.ndarray):
    """Backprop from a gradient w.r.t. the last layer's pre-activation.

    Returns (MlpGrads, d_input).  The caller folds the output activation
    into ``d_last_pre`` (softmax+CE and sigmoid+MSE both reduce cleanly).
    ReLU uses subgradient 0 at exactly zero.
    """
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    dz = d_last_pre
    for i in range(len(params.weights) - 1, -1, -1):
        grads_w[i] = dz.T @ acts[i]
        grads_b[i] = dz.sum(axis=0)
        if i > 0:
            da = dz @ params.weights[i]
            dz = da * (zs[i - 1] > 0.0)
    d_input = dz @ params.weights[0]
    return MlpGrads(grads_w, grads_b), d_input


# ---------------------------------------------------------------------------
# losses

def cross_entropy_loss(logits, label: int) -> float:
    """CE of a 2-class logit pair against a label in {-1, +1}.

    Label -1 maps to class 0 ("a closer"), +1 to class 1.
    """
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if logits.shape[0] != 2:
        raise ShapeMismatch(f"need 2 logits, got {logits.shape[0]}")
    if label not in (-1, 1):
        raise BadConfig(f"label must be -1 or +1, got {label!r}")
    cls = 0 if label == -1 else 1
    m = logits.max()
    return float(np.log(np.sum(np.exp(logits - m))) - (logits[cls] - m))


def loss_diff(e_r, e_a, e_b, y: int) -> float:
    """Signed cosine-distance difference (d_ra - d_rb) * y."""
    from .numerics import cosine_distance

    return (cosine_distance(e_r, e_a) - cosine_distance(e_r, e_b)) * y


def triplet_loss(e_r, e_a, e_b, y: int, margin: float) -> float:
    """Hinge on the signed distance difference: max(margin - l_diff, 0)."""
    return max(margin - loss_diff(e_r, e_a, e_b, y), 0.0)


def combined_loss(logits, e_r, e_a, e_b, y: int, margin: float, triplet_weight: float) -> float:
    """Cross entropy plus ``triplet_weight`` times the triplet hinge."""
    return cross_entropy_loss(logits, y) + triplet_weight * triplet_loss(
        e_r, e_a, e_b, y, margin
    )


def _row_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(m * m, axis=1))


def _cosine_rows(u: np.ndarray, v: np.ndarray):
    """Per-row cosine distance plus the pieces its gradient needs."""
    dot = np.sum(u * v, axis=1)
    nu = _row_norms(u)
    nv = _row_norms(v)
    if np.any(nu == 0.0) or np.any(nv == 0.0):
        raise ZeroVector("cosine distance over a zero-norm projected vector")
    return 1.0 - dot / (nu * nv), dot, nu, nv


def _cosine_grads(u, v, dot, nu, nv):
    """d(1 - u.v/|u||v|)/du and /dv, row-wise."""
    inv = 1.0 / (nu * nv)
    du = -v * inv[:, None] + u * (dot / (nu**3 * nv))[:, None]
    dv = -u * inv[:, None] + v * (dot / (nu * nv**3))[:, None]
    return du, dv


def _accumulate(total: Optional[MlpGrads], part: MlpGrads) -> MlpGrads:
    if total is None:
        return MlpGrads([w.copy() for w in part.weights], [b.copy() for b in part.biases])
    for tw, pw in zip(total.weights, part.weights):
        tw += pw
    for tb, pb in zip(total.biases, part.biases):
        tb += pb
    return total


def combined_batch_gradients(
    projection: MlpParams,
    ranking: MlpParams,
    xr: np.ndarray,
    xa: np.ndarray,
    xb: np.ndarray,
    y: np.ndarray,
    margin: float,
    triplet_weight: float,
):
    """Mean combined loss over a triple batch and its analytic gradients.

    Returns (loss, projection_grads, ranking_grads).  The ranking block sees
    [proj(r) | proj(a) | proj(b)]; the triplet hinge uses subgradient 0 at
    its kink.
    """
    n = xr.shape[0]
    if n == 0:
        raise ShapeMismatch("empty batch")
    y = np.asarray(y, dtype=np.float64)
    k = projection.output_dim

    acts_r, zs_r = _forward_cached(projection, xr)
    acts_a, zs_a = _forward_cached(projection, xa)
    acts_b, zs_b = _forward_cached(projection, xb)
    er, ea, eb = acts_r[-1], acts_a[-1], acts_b[-1]

    u = np.concatenate([er, ea, eb], axis=1)
    acts_rank, zs_rank = _forward_cached(ranking, u)
    logits = zs_rank[-1]

    # cross entropy (softmax folded into the logit gradient)
    cls = ((y + 1) // 2).astype(np.intp)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    ce = -logp[np.arange(n), cls]
    probs = np.exp(logp)
    dlogits = probs.copy()
    dlogits[np.arange(n), cls] -= 1.0
    dlogits /= n

    # triplet hinge on cosine distances
    d_ra, dot_a, nr_a, na = _cosine_rows(er, ea)
    d_rb, dot_b, nr_b, nb = _cosine_rows(er, eb)
    l_diff = (d_ra - d_rb) * y
    active = l_diff < margin
    hinge = np.where(active, margin - l_diff, 0.0)

    loss = float(np.mean(ce + triplet_weight * hinge))

    coeff = triplet_weight * y * active / n          # d loss / d l_diff is -coeff*...
    dd_ra = -coeff                                   # d loss / d d_ra
    dd_rb = coeff
    g_ra_r, g_ra_a = _cosine_grads(er, ea, dot_a, nr_a, na)
    g_rb_r, g_rb_b = _cosine_grads(er, eb, dot_b, nr_b, nb)
    der = dd_ra[:, None] * g_ra_r + dd_rb[:, None] * g_rb_r
    dea = dd_ra[:, None] * g_ra_a
    deb = dd_rb[:, None] * g_rb_b

    rank_grads, du = mlp_backward(ranking, acts_rank, zs_rank, dlogits)
    der += du[:, :k]
    dea += du[:, k : 2 * k]
    deb += du[:, 2 * k :]

    proj_grads = None
    for acts, zs, dout in ((acts_r, zs_r, der), (acts_a, zs_a, dea), (acts_b, zs_b, deb)):
        part, _ = mlp_backward(projection, acts, zs, dout)
        proj_grads = _accumulate(proj_grads, part)
    return loss, proj_grads, rank_grads


def mse_sigmoid_batch_gradients(params: MlpParams, x: np.ndarray, targets: np.ndarray):
    """Mean squared error of a sigmoid-output net against scalar targets."""
    if params.output_activation != ACT_SIGMOID:
        raise BadConfig("regressor loss expects a sigmoid output")
    n = x.shape[0]
    if n == 0:
        raise ShapeMismatch("empty batch")
    targets = np.asarray(targets, dtype=np.float64).reshape(n, -1)
    acts, zs = _forward_cached(params, x)
    out = sigmoid(zs[-1])
    err = out - targets
    loss = float(np.mean(np.sum(err * err, axis=1)))
    dz = 2.0 * err * out * (1.0 - out) / n
    grads, _ = mlp_backward(params, acts, zs, dz)
    return loss, grads


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    step: int = 0
    m_weights: list = field(default_factory=list)
    m_biases: list = field(default_factory=list)
    v_weights: list = field(default_factory=list)
    v_biases: list = field(default_factory=list)


def adam_init(params: MlpParams) -> AdamState:
    return AdamState(
        step=0,
        m_weights=[np.zeros_like(w) for w in params.weights],
        m_biases=[np.zeros_like(b) for b in params.biases],
        v_weights=[np.zeros_like(w) for w in params.weights],
        v_biases=[np.zeros_like(b) for b in params.biases],
    )


def adam_step(params: MlpParams, grads: MlpGrads, state: AdamState, lr: float):
    """One Adam update, in place; returns the updated (params, state)."""
    for g in grads.weights + grads.biases:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("non-finite gradient in Adam step")
    state.step += 1
    t = state.step
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for p, g, m, v in zip(
        params.weights + params.biases,
        grads.weights + grads.biases,
        state.m_weights + state.m_biases,
        state.v_weights + state.v_biases,
    ):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * np.square(g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return params, state


# ---------------------------------------------------------------------------
# CSMD serialization (one network per section, embeddable in containers)

def write_mlp_section(params: MlpParams, fh) -> None:
    import struct

    fh.write(CSMD_MAGIC)
    fh.write(struct.pack("<BH", _ACT_CODES[params.output_activation], len(params.layer_dims)))
    for dim in params.layer_dims:
        fh.write(struct.pack("<I", dim))
    for w, b in zip(params.weights, params.biases):
        fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        fh.write(b.astype("<f8", copy=False).tobytes())


def read_mlp_section(fh) -> MlpParams:
    import struct

    magic = fh.read(4)
    if magic != CSMD_MAGIC:
        raise FormatError(f"bad section magic {magic!r}, expected {CSMD_MAGIC!r}")
    act_code, n_dims = struct.unpack("<BH", fh.read(3))
    if act_code not in _ACT_NAMES:
        raise FormatError(f"unknown activation code {act_code}")
    if n_dims < 2:
        raise FormatError(f"layer count {n_dims} is invalid")
    dims = list(struct.unpack(f"<{n_dims}I", fh.read(4 * n_dims)))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        raw = fh.read(8 * fan_out * fan_in)
        if len(raw) != 8 * fan_out * fan_in:
            raise FormatError("section ends inside a weight matrix")
        weights.append(np.frombuffer(raw, dtype="<f8").reshape(fan_out, fan_in).copy())
        raw = fh.read(8 * fan_out)
        if len(raw) != 8 * fan_out:
            raise FormatError("section ends inside a bias vector")
        biases.append(np.frombuffer(raw, dtype="<f8").copy())
    return MlpParams(dims, weights, biases, _ACT_NAMES[act_code])
