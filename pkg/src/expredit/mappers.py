"""Cross-attention dual mappers predicting residual latent edits.

Two symmetric branches. The texture branch conditions on the expression
code: each alpha coefficient becomes one query token (a scalar lifted to
d_att by a learned per-coefficient embedding row), the w tokens supply
keys and values, the attended values are mean-pooled over queries, fed
through a small tanh MLP, and the MLP output is broadcast back to all w
tokens through a learned per-token gain. The emotion branch swaps the
roles: w tokens query, alpha tokens (lifted the same way) provide keys
and values, and the pooled MLP output (a single scalar) is spread over
the alpha coefficients by its own gain vector.

Edits are residual: apply_edit returns w + delta_w and alpha +
delta_alpha, both deltas computed on the incoming state. Zeroing the
final MLP layers therefore makes apply_edit the exact identity, which is
the required starting point for training.

Every forward pass is built from autodiff engine ops, so the same code
path serves plain evaluation (constants in, values out) and training
(parameter leaves in, gradients out).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ValidationError


@dataclass(frozen=True)
class MapperDims:
    n_w: int = 6
    d_w: int = 32
    n_alpha: int = 8
    d_att: int = 16
    hidden_width: int = 32
    hidden_depth: int = 2

    def validate(self):
        for name in ("n_w", "d_w", "n_alpha", "d_att", "hidden_width"):
            if getattr(self, name) < 1:
                raise ValidationError(f"MapperDims.{name} must be positive")
        if self.hidden_depth < 0:
            raise ValidationError("MapperDims.hidden_depth must be >= 0")


@dataclass
class LatentState:
    """Texture token grid w (n_w x d_w) and expression code alpha (n_alpha)."""

    w: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.w.ndim != 2:
            raise ValidationError(f"state.w must be 2-d, got shape {self.w.shape}")
        if self.alpha.ndim != 1:
            raise ValidationError(
                f"state.alpha must be 1-d, got shape {self.alpha.shape}")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.alpha))):
            raise ValidationError("latent state contains non-finite values")


def _mlp_layer_dims(dims: MapperDims, out_dim: int) -> list:
    widths = [dims.d_att] + [dims.hidden_width] * dims.hidden_depth + [out_dim]
    return list(zip(widths[:-1], widths[1:]))


def _tensor_shapes(dims: MapperDims) -> dict:
    shapes = {
        "t_wq": (dims.n_alpha, dims.d_att),
        "t_wk": (dims.d_w, dims.d_att),
        "t_wv": (dims.d_w, dims.d_att),
        "t_gain": (dims.n_w,),
        "e_wq": (dims.d_w, dims.d_att),
        "e_wk": (dims.n_alpha, dims.d_att),
        "e_wv": (dims.n_alpha, dims.d_att),
        "e_gain": (dims.n_alpha,),
    }
    for prefix, out_dim in (("t_mlp", dims.d_w), ("e_mlp", 1)):
        for i, (d_in, d_out) in enumerate(_mlp_layer_dims(dims, out_dim)):
            shapes[f"{prefix}_w{i}"] = (d_in, d_out)
            shapes[f"{prefix}_b{i}"] = (d_out,)
    return shapes


@dataclass
class DualMapperParams:
    """All trainable tensors of one expression's mapper pair."""

    dims: MapperDims
    tensors: dict = field(default_factory=dict)
    seed: int = 0

    def validate(self):
        self.dims.validate()
        expected = _tensor_shapes(self.dims)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise ValidationError(f"mapper params missing tensor {name!r}")
            got = self.tensors[name].shape
            if got != shape:
                raise ValidationError(
                    f"mapper tensor {name!r}: expected shape {shape}, got {got}")
            if not np.all(np.isfinite(self.tensors[name])):
                raise ValidationError(f"mapper tensor {name!r} is non-finite")
        extra = set(self.tensors) - set(expected)
        if extra:
            raise ValidationError(f"unexpected mapper tensors {sorted(extra)}")

    def final_layer_names(self) -> list:
        last = self.dims.hidden_depth
        return [f"t_mlp_w{last}", f"t_mlp_b{last}",
                f"e_mlp_w{last}", f"e_mlp_b{last}"]

    def is_identity_init(self) -> bool:
        return all(not np.any(self.tensors[n]) for n in self.final_layer_names())


def init_mapper_params(seed: int, dims: MapperDims = MapperDims()) -> DualMapperParams:
    """Seeded uniform(-0.05, 0.05) weights with zeroed final layers."""
    dims.validate()
    rng = np.random.default_rng([int(seed), 301])
    tensors = {}
    for name, shape in _tensor_shapes(dims).items():
        tensors[name] = rng.uniform(-0.05, 0.05, size=shape)
    params = DualMapperParams(dims=dims, tensors=tensors, seed=int(seed))
    for name in params.final_layer_names():
        tensors[name] = np.zeros_like(tensors[name])
    params.validate()
    return params


# ---------------------------------------------------------------------------
# Forward passes (autodiff graph builders)

def _check_state(dims: MapperDims, state: LatentState):
    if state.w.shape != (dims.n_w, dims.d_w):
        raise ValidationError(
            f"state.w: expected ({dims.n_w}, {dims.d_w}), got {state.w.shape}")
    if state.alpha.shape != (dims.n_alpha,):
        raise ValidationError(
            f"state.alpha: expected ({dims.n_alpha},), got {state.alpha.shape}")


def _mlp(nodes: dict, prefix: str, x, depth: int):
    for i in range(depth + 1):
        x = ad.add(ad.matmul(x, nodes[f"{prefix}_w{i}"]), nodes[f"{prefix}_b{i}"])
        if i < depth:
            x = ad.tanh(x)
    return x


def texture_graph(nodes: dict, w, alpha, dims: MapperDims):
    """Build (delta_w, attention) nodes from node-valued inputs."""
    q = ad.rowscale(nodes["t_wq"], alpha)
    k = ad.matmul(w, nodes["t_wk"])
    v = ad.matmul(w, nodes["t_wv"])
    logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(dims.d_att))
    attn = ad.softmax_rows(logits)
    pooled = ad.mean_rows(ad.matmul(attn, v))
    out = _mlp(nodes, "t_mlp", pooled, dims.hidden_depth)
    delta_w = ad.outer(nodes["t_gain"], out)
    return delta_w, attn


def emotion_graph(nodes: dict, w, alpha, dims: MapperDims):
    """Mirror of texture_graph with the roles of w and alpha swapped."""
    q = ad.matmul(w, nodes["e_wq"])
    k = ad.rowscale(nodes["e_wk"], alpha)
    v = ad.rowscale(nodes["e_wv"], alpha)
    logits = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(dims.d_att))
    attn = ad.softmax_rows(logits)
    pooled = ad.mean_rows(ad.matmul(attn, v))
    out = _mlp(nodes, "e_mlp", pooled, dims.hidden_depth)  # single scalar entry
    delta_alpha = ad.flatten(ad.outer(nodes["e_gain"], out))
    return delta_alpha, attn


def _const_nodes(params: DualMapperParams) -> dict:
    return {name: ad.const(t) for name, t in params.tensors.items()}


def forward_texture(params: DualMapperParams, state: LatentState) -> np.ndarray:
    _check_state(params.dims, state)
    delta_w, _ = texture_graph(_const_nodes(params), ad.const(state.w),
                               ad.const(state.alpha), params.dims)
    return delta_w.value


def forward_emotion(params: DualMapperParams, state: LatentState) -> np.ndarray:
    _check_state(params.dims, state)
    delta_alpha, _ = emotion_graph(_const_nodes(params), ad.const(state.w),
                                   ad.const(state.alpha), params.dims)
    return delta_alpha.value


def texture_attention(params: DualMapperParams, state: LatentState) -> np.ndarray:
    _check_state(params.dims, state)
    _, attn = texture_graph(_const_nodes(params), ad.const(state.w),
                            ad.const(state.alpha), params.dims)
    return attn.value


def emotion_attention(params: DualMapperParams, state: LatentState) -> np.ndarray:
    _check_state(params.dims, state)
    _, attn = emotion_graph(_const_nodes(params), ad.const(state.w),
                            ad.const(state.alpha), params.dims)
    return attn.value


def apply_edit(params: DualMapperParams, state: LatentState) -> LatentState:
    """Residual edit: both deltas are computed on the incoming state."""
    return LatentState(w=state.w + forward_texture(params, state),
                       alpha=state.alpha + forward_emotion(params, state))


# ---------------------------------------------------------------------------
# Checkpoint file

def save_checkpoint(params: DualMapperParams, path, metadata: dict = None) -> None:
    params.validate()
    doc = {
        "dims": {
            "n_w": params.dims.n_w, "d_w": params.dims.d_w,
            "n_alpha": params.dims.n_alpha, "d_att": params.dims.d_att,
            "hidden_width": params.dims.hidden_width,
            "hidden_depth": params.dims.hidden_depth,
        },
        "seed": params.seed,
        "shapes": {k: list(v.shape) for k, v in params.tensors.items()},
        "tensors": {k: v.tolist() for k, v in params.tensors.items()},
        "metadata": metadata or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Returns (DualMapperParams, metadata dict)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{path}: not valid JSON (line {exc.lineno} col {exc.colno}: "
            f"{exc.msg})") from exc
    for fieldname in ("dims", "seed", "tensors", "shapes"):
        if fieldname not in doc:
            raise ValidationError(f"{path}: missing field {fieldname!r}")
    try:
        dims = MapperDims(**doc["dims"])
    except TypeError as exc:
        raise ValidationError(f"{path}: bad dims block ({exc})") from exc
    tensors = {}
    for name, arr in doc["tensors"].items():
        t = np.asarray(arr, dtype=np.float64)
        declared = tuple(doc["shapes"].get(name, ()))
        if t.shape != declared:
            raise ValidationError(
                f"{path}: tensor {name!r} shape {t.shape} does not match "
                f"declared {declared}")
        tensors[name] = t
    params = DualMapperParams(dims=dims, tensors=tensors,
                              seed=int(doc["seed"]))
    params.validate()
    return params, doc.get("metadata", {})
