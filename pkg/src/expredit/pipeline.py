"""Per-expression training loop and loss accounting.

One step: draw a batch of latent states, run both mappers to get the
residual edit, push the edited state through the frozen embedding
surrogates, and minimize

    L_Total = lambda_clip * L_CLIP + lambda_m * L_M + lambda_id * L_ID

where L_CLIP is the negated cosine between the edited image embedding
and the augmented text target, L_M is the unsquared L2 size of the edit
in both latent spaces, and L_ID is one minus the identity cosine.

The target embedding for each draw is built from the UNEDITED render:
project the pre-edit image embedding onto the expression subspace,
augment toward the text prompt, and add back the off-subspace residual.
Since the unedited render never changes during training, these targets
are constants per draw and are precomputed once.

Everything is seeded; a run is bitwise reproducible.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .embedding import (EXPRESSIONS, EmbeddingFixture, ExpressionSubspace,
                        cosine, target_embedding)
from .errors import ConfigError, NumericAbortError, ValidationError
from .mappers import (DualMapperParams, LatentState, apply_edit,
                      emotion_graph, texture_graph)
from .morphable import MorphableModel, expression_matrix
from .surrogates import (SurrogateGenerator, SurrogateIdentityEncoder,
                         identity_projection_graph, synth_embedding_graph)

N_DRAWS = 64          # distinct latent draws, cycled across steps
ALPHA_JITTER = 0.05   # stddev of the jitter around the reference code


@dataclass(frozen=True)
class OptimConfig:
    expression_name: str
    target_text_key: str
    reference_alpha_key: str
    lambda_clip: float = 1.0
    lambda_m: float = 0.05
    lambda_id: float = 0.2
    gamma: float = 1.0
    steps: int = 300
    samples_per_step: int = 8
    seed: int = 1
    use_reference: bool = True

    def __post_init__(self):
        for name in ("lambda_clip", "lambda_m", "lambda_id", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"OptimConfig.{name} must be >= 0, got {v}")
        if self.steps < 1:
            raise ConfigError(f"OptimConfig.steps must be >= 1, got {self.steps}")
        if self.samples_per_step < 1:
            raise ConfigError("OptimConfig.samples_per_step must be >= 1, "
                              f"got {self.samples_per_step}")
        for name in ("expression_name", "target_text_key",
                     "reference_alpha_key"):
            if not getattr(self, name):
                raise ConfigError(f"OptimConfig.{name} must be nonempty")


@dataclass(frozen=True)
class LossReport:
    step: int
    l_clip: float
    l_m: float
    l_id: float
    l_total: float
    cosine: float
    id_cosine: float


LOSS_CSV_COLUMNS = ("step", "L_CLIP", "L_M", "L_ID", "L_Total",
                    "cosine", "id_cosine")


def _combine(l_clip: float, l_m: float, l_id: float, config: OptimConfig) -> float:
    # Single shared association so graph values and reports agree bitwise.
    return (config.lambda_clip * l_clip + config.lambda_m * l_m
            + config.lambda_id * l_id)


def compute_losses(state: LatentState, edited: LatentState,
                   e_i_prime: np.ndarray, e_t_prime: np.ndarray,
                   id_before: np.ndarray, id_after: np.ndarray,
                   config: OptimConfig, step: int = 0) -> LossReport:
    """Loss report for one sample; the norms are plain L2, not squared."""
    l_m = (float(np.linalg.norm(edited.w - state.w))
           + float(np.linalg.norm(edited.alpha - state.alpha)))
    cos = cosine(e_i_prime, e_t_prime)
    l_clip = -cos
    id_cos = cosine(id_before, id_after)
    l_id = 1.0 - id_cos
    return LossReport(step=step, l_clip=l_clip, l_m=l_m, l_id=l_id,
                      l_total=_combine(l_clip, l_m, l_id, config),
                      cosine=cos, id_cosine=id_cos)


def _cosine_graph(a: ad.Node, b: ad.Node) -> ad.Node:
    return ad.div(ad.dot(a, b), ad.mul(ad.l2norm(a), ad.l2norm(b)))


def _mean_graph(nodes: list) -> ad.Node:
    acc = nodes[0]
    for n in nodes[1:]:
        acc = ad.add(acc, n)
    return ad.scale(acc, 1.0 / len(nodes))


def _embed_offsets(gen: SurrogateGenerator, w: np.ndarray,
                   offsets: np.ndarray) -> np.ndarray:
    # Same association as synth_embedding_graph, so values agree bitwise.
    return np.tanh(gen.w_g @ w.reshape(-1) + gen.v_g @ offsets + gen.bias)


def generate_draws(config: OptimConfig, reference_alpha: np.ndarray,
                   n_w: int, d_w: int, n_alpha: int):
    """The N_DRAWS latent states a run cycles through.

    All w grids are drawn before all jitters, so the w stream is identical
    with and without reference initialization; the ablation then compares
    like against like.
    """
    rng = np.random.default_rng([int(config.seed), 501])
    ws = rng.normal(size=(N_DRAWS, n_w, d_w))
    jitter = rng.normal(size=(N_DRAWS, n_alpha)) * ALPHA_JITTER
    if config.use_reference:
        alphas = reference_alpha[None, :] + jitter
    else:
        alphas = np.zeros((N_DRAWS, n_alpha))
    return ws, alphas


def train_expression(model: MorphableModel, params: DualMapperParams,
                     gen: SurrogateGenerator, enc: SurrogateIdentityEncoder,
                     subspace: ExpressionSubspace, fixture: EmbeddingFixture,
                     reference_alphas: dict, config: OptimConfig):
    """Run the loop; returns (trained params, per-step LossReport history).

    The input params are copied, never mutated. Training requires the
    identity-start initialization so the first step edits nothing.
    """
    params.validate()
    if not params.is_identity_init():
        raise ValidationError(
            "train_expression requires identity-start params "
            "(zeroed final layers)")
    dims = params.dims
    if gen.n_w != dims.n_w or gen.d_w != dims.d_w:
        raise ValidationError("surrogate generator token dims do not match "
                              "the mapper dims")
    if gen.n_v != model.n_vertices:
        raise ValidationError("surrogate generator was built for a different "
                              "vertex count")
    if dims.n_alpha != model.n_expression:
        raise ValidationError("mapper alpha length does not match the model's "
                              "expression basis")
    e_t = fixture.get(config.target_text_key)
    if config.reference_alpha_key not in reference_alphas:
        raise ConfigError(
            f"reference alpha key {config.reference_alpha_key!r} not found; "
            f"have {sorted(reference_alphas)}")
    ref_alpha = np.asarray(reference_alphas[config.reference_alpha_key],
                           dtype=np.float64)
    if ref_alpha.shape != (dims.n_alpha,):
        raise ValidationError(
            f"reference alpha {config.reference_alpha_key!r}: expected "
            f"({dims.n_alpha},), got {ref_alpha.shape}")

    eb = expression_matrix(model)
    ws, alphas = generate_draws(config, ref_alpha, dims.n_w, dims.d_w,
                                dims.n_alpha)

    # Per-draw constants from the unedited render. Recomputing them every
    # step would give the same bits; hoisting is just speed.
    targets = np.empty((N_DRAWS, gen.d_e))
    id_befores = np.empty((N_DRAWS, enc.d_id))
    for k in range(N_DRAWS):
        e_i = _embed_offsets(gen, ws[k], alphas[k] @ eb)
        targets[k] = target_embedding(subspace, e_i, e_t, config.gamma)
        id_befores[k] = enc.proj @ ws[k].reshape(-1)

    trained = DualMapperParams(
        dims=dims, tensors={k: v.copy() for k, v in params.tensors.items()},
        seed=params.seed)
    opt = ad.Adam(trained.tensors)
    eb_const = ad.const(eb)

    history = []
    for step in range(config.steps):
        leaves = {name: ad.leaf(t) for name, t in trained.tensors.items()}
        cos_nodes, lm_nodes, lid_nodes, idcos_nodes = [], [], [], []
        for j in range(config.samples_per_step):
            idx = (step * config.samples_per_step + j) % N_DRAWS
            w_c = ad.const(ws[idx])
            a_c = ad.const(alphas[idx])
            dw, _ = texture_graph(leaves, w_c, a_c, dims)
            da, _ = emotion_graph(leaves, w_c, a_c, dims)
            w_p = ad.add(w_c, dw)
            a_p = ad.add(a_c, da)

            e_ip = synth_embedding_graph(gen, w_p, ad.matmul(a_p, eb_const))
            cos_nodes.append(_cosine_graph(e_ip, ad.const(targets[idx])))
            lm_nodes.append(ad.add(ad.l2norm(ad.sub(w_p, w_c)),
                                   ad.l2norm(ad.sub(a_p, a_c))))
            id_cos = _cosine_graph(identity_projection_graph(enc, w_p),
                                   ad.const(id_befores[idx]))
            idcos_nodes.append(id_cos)
            lid_nodes.append(ad.add(ad.const(1.0), ad.scale(id_cos, -1.0)))

        cos_mean = _mean_graph(cos_nodes)
        lc_mean = ad.scale(cos_mean, -1.0)
        lm_mean = _mean_graph(lm_nodes)
        lid_mean = _mean_graph(lid_nodes)
        idcos_mean = _mean_graph(idcos_nodes)
        total = ad.add(
            ad.add(ad.scale(lc_mean, config.lambda_clip),
                   ad.scale(lm_mean, config.lambda_m)),
            ad.scale(lid_mean, config.lambda_id))

        for term, node in (("L_CLIP", lc_mean), ("L_M", lm_mean),
                           ("L_ID", lid_mean), ("L_Total", total)):
            if not np.isfinite(node.value):
                raise NumericAbortError(step, term)

        history.append(LossReport(
            step=step, l_clip=float(lc_mean.value), l_m=float(lm_mean.value),
            l_id=float(lid_mean.value), l_total=float(total.value),
            cosine=float(cos_mean.value), id_cosine=float(idcos_mean.value)))

        grads = ad.backward(total)
        opt.step({name: grads[node] for name, node in leaves.items()
                  if node in grads})
    return trained, history


def compose_edits(mapper_list, state: LatentState) -> LatentState:
    """Apply each mapper's residual edit in order; empty list is identity."""
    for params in mapper_list:
        state = apply_edit(params, state)
    return state


def monotone_trend(history) -> np.ndarray:
    """Running minimum of L_Total: the best loss seen so far at each step."""
    totals = np.array([r.l_total for r in history])
    return np.minimum.accumulate(totals)


# ---------------------------------------------------------------------------
# Reference expression codes

def desk_reference_alphas(model: MorphableModel,
                          magnitude: float = 0.12) -> dict:
    """One reference code per named expression: the matching basis slot
    activated at a magnitude well below the detector firing threshold, so
    reference initialization alone never counts as the expression."""
    if model.n_expression < len(EXPRESSIONS):
        raise ValidationError(
            "model has fewer expression slots than named expressions")
    out = {}
    for j, name in enumerate(EXPRESSIONS):
        vec = np.zeros(model.n_expression)
        vec[j] = magnitude
        out[f"alpha:{name}"] = vec
    return out


def save_reference_alphas(alphas: dict, path) -> None:
    doc = {
        "n_alpha": len(next(iter(alphas.values()))),
        "alphas": {k: np.asarray(v).tolist() for k, v in alphas.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_reference_alphas(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{path}: not valid JSON (line {exc.lineno} col {exc.colno}: "
            f"{exc.msg})") from exc
    if "alphas" not in doc or "n_alpha" not in doc:
        raise ValidationError(f"{path}: missing 'alphas' or 'n_alpha'")
    n = int(doc["n_alpha"])
    out = {}
    for key, vals in doc["alphas"].items():
        arr = np.asarray(vals, dtype=np.float64)
        if arr.shape != (n,):
            raise ValidationError(
                f"{path}: alpha {key!r} has length {arr.shape}, expected ({n},)")
        out[key] = arr
    return out


# ---------------------------------------------------------------------------
# Config and loss-history files

def save_config(config: OptimConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(config), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_config(path, **overrides) -> OptimConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: not valid JSON (line {exc.lineno} col {exc.colno}: "
            f"{exc.msg})") from exc
    known = {f.name for f in fields(OptimConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config fields {sorted(unknown)}")
    doc.update(overrides)
    try:
        return OptimConfig(**doc)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def with_overrides(config: OptimConfig, **overrides) -> OptimConfig:
    return replace(config, **overrides)


def write_loss_csv(history, path) -> None:
    """repr round-trips float64 exactly, so identical histories give
    byte-identical files."""
    lines = [",".join(LOSS_CSV_COLUMNS)]
    for r in history:
        lines.append(",".join([
            str(r.step), repr(r.l_clip), repr(r.l_m), repr(r.l_id),
            repr(r.l_total), repr(r.cosine), repr(r.id_cosine)]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_loss_csv(path) -> list:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines or lines[0] != ",".join(LOSS_CSV_COLUMNS):
        raise ValidationError(f"{path}: unexpected loss CSV header")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(LOSS_CSV_COLUMNS):
            raise ValidationError(f"{path}: malformed row {ln!r}")
        out.append(LossReport(step=int(parts[0]),
                              l_clip=float(parts[1]), l_m=float(parts[2]),
                              l_id=float(parts[3]), l_total=float(parts[4]),
                              cosine=float(parts[5]), id_cosine=float(parts[6])))
    return out
