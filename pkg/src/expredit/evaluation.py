"""Geometric action-unit detectors and batch metrics.

An action unit here is a thresholded displacement test: take the mesh
vertices in one labeled region, average their displacement from the
neutral template, project onto a signed axis, and compare against a
threshold. An expression is "detected" when every action unit in its
required set fires. This replaces an image-space detector with something
that is exact, fast, and fully inspectable at this scale.

Thresholds are calibrated per model: 30% of the strongest response any
single expression basis vector produces at unit activation, so a slot
activated at full strength clears its detector with 3x margin while
small incidental drift does not.

The module also provides the scaled cosine score used for image/text
agreement and the identity-weight sensitivity sweep, which retrains one
expression at several identity-loss weights and reports how converged
identity loss and detector accuracy move against the weight (as Spearman
rank correlations).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .embedding import cosine
from .errors import ConfigError, ValidationError
from .mappers import DualMapperParams, LatentState, apply_edit
from .morphable import FlameParams, Mesh, MorphableModel, generate_mesh
from .pipeline import train_expression, with_overrides

THRESHOLD_FRACTION = 0.3

# Action units keyed to the face regions and displacement directions of
# the desk model's expression basis. AU_CE is a nonstandard eyelid-closure
# unit; image-space detectors have no equivalent, a mesh detector does.
AU_TABLE = {
    "AU_01": ("brow", (0.0, 0.0, 1.0), 1),
    "AU_02": ("brow", (0.0, 1.0, 0.0), 1),
    "AU_04": ("brow", (0.0, 1.0, 0.0), -1),
    "AU_05": ("eyelid", (1.0, 0.0, 0.0), 1),
    "AU_06": ("mouth", (0.0, 0.0, 1.0), 1),
    "AU_07": ("eyelid", (0.0, 0.0, 1.0), -1),
    "AU_12": ("mouth", (0.0, 1.0, 0.0), 1),
    "AU_15": ("mouth", (0.0, 1.0, 0.0), -1),
    "AU_23": ("mouth", (1.0, 0.0, 0.0), -1),
    "AU_CE": ("eyelid", (0.0, 1.0, 0.0), -1),
}

REQUIRED_AUS = {
    "smile": ("AU_06", "AU_12"),
    "angry": ("AU_04", "AU_05", "AU_07", "AU_23"),
    "sad": ("AU_01", "AU_04", "AU_15"),
    "close_eyes": ("AU_CE",),
    "raise_brow": ("AU_02",),
    "frown_brow": ("AU_04",),
}

DEFAULT_LAMBDA_GRID = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30)


@dataclass(frozen=True)
class AuProxyRule:
    au_id: str
    region: str
    axis: np.ndarray
    sign: int
    threshold: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=np.float64)
        if axis.shape != (3,):
            raise ValidationError(
                f"rule {self.au_id!r}: axis must be a 3-vector, "
                f"got shape {axis.shape}")
        if abs(float(np.linalg.norm(axis)) - 1.0) > 1e-9:
            raise ValidationError(f"rule {self.au_id!r}: axis must be unit "
                                  f"length, got norm {np.linalg.norm(axis)}")
        axis.flags.writeable = False
        object.__setattr__(self, "axis", axis)
        if self.sign not in (-1, 1):
            raise ValidationError(
                f"rule {self.au_id!r}: sign must be -1 or 1, got {self.sign}")
        if not (np.isfinite(self.threshold) and self.threshold > 0):
            raise ValidationError(
                f"rule {self.au_id!r}: threshold must be > 0, "
                f"got {self.threshold}")
        if not self.au_id:
            raise ValidationError("rule au_id must be nonempty")


@dataclass(frozen=True)
class ExpressionSpec:
    name: str
    required_aus: tuple

    def __post_init__(self):
        object.__setattr__(self, "required_aus", tuple(self.required_aus))
        if not self.required_aus:
            raise ValidationError(
                f"expression spec {self.name!r} requires at least one "
                "action unit")


def _region_vertex_indices(region_labels, region: str) -> np.ndarray:
    idx = [i for i, lb in enumerate(region_labels) if lb == region]
    if not idx:
        raise ConfigError(f"region {region!r} matches no vertices")
    return np.asarray(idx, dtype=int)


def _check_topology(mesh: Mesh, template: Mesh, n_labels: int):
    if mesh.vertices.shape != template.vertices.shape:
        raise ValidationError(
            f"mesh and template disagree on vertex count: "
            f"{mesh.vertices.shape} vs {template.vertices.shape}")
    if mesh.vertices.shape[0] != n_labels:
        raise ValidationError(
            f"mesh has {mesh.vertices.shape[0]} vertices but "
            f"{n_labels} region labels were given")


def au_response(rule: AuProxyRule, mesh: Mesh, template: Mesh,
                region_labels) -> float:
    """Mean displacement of the rule's region, projected on sign * axis."""
    _check_topology(mesh, template, len(region_labels))
    idx = _region_vertex_indices(region_labels, rule.region)
    disp = mesh.vertices[idx] - template.vertices[idx]
    return float(np.mean(disp @ (rule.sign * rule.axis)))


def au_fire(rule: AuProxyRule, mesh: Mesh, template: Mesh,
            region_labels) -> bool:
    """Strictly above threshold; a displacement exactly at it does not
    count."""
    return au_response(rule, mesh, template, region_labels) > rule.threshold


def au_accuracy(spec: ExpressionSpec, rules: dict, meshes, template: Mesh,
                region_labels) -> float:
    """Fraction of meshes on which every required action unit fires."""
    meshes = list(meshes)
    if not meshes:
        raise ValidationError("au_accuracy needs a nonempty mesh batch")
    missing = [au for au in spec.required_aus if au not in rules]
    if missing:
        raise ConfigError(
            f"expression {spec.name!r} requires rules for {missing}, "
            f"not present in the rule set")
    hits = 0
    for mesh in meshes:
        if all(au_fire(rules[au], mesh, template, region_labels)
               for au in spec.required_aus):
            hits += 1
    return hits / len(meshes)


# ---------------------------------------------------------------------------
# Rule construction


def calibrate_threshold(model: MorphableModel, region: str, axis, sign: int,
                        fraction: float = THRESHOLD_FRACTION) -> float:
    """Threshold as a fraction of the strongest unit-activation response.

    Every expression basis vector is activated at 1.0 in turn; the
    largest mean projected displacement over the region sets the scale.
    """
    axis = np.asarray(axis, dtype=np.float64)
    idx = _region_vertex_indices(model.region_labels, region)
    best = 0.0
    for j in range(model.n_expression):
        disp = model.expression_basis[j][idx]
        best = max(best, float(np.mean(disp @ (sign * axis))))
    if best <= 0.0:
        raise ConfigError(
            f"no expression basis vector moves region {region!r} along the "
            "requested direction; the rule would never fire")
    return fraction * best


def desk_au_rules(model: MorphableModel) -> dict:
    """The full rule set for the desk model, thresholds calibrated."""
    rules = {}
    for au_id, (region, axis, sign) in AU_TABLE.items():
        rules[au_id] = AuProxyRule(
            au_id=au_id, region=region, axis=np.asarray(axis), sign=sign,
            threshold=calibrate_threshold(model, region, axis, sign))
    return rules


def desk_expression_specs() -> dict:
    return {name: ExpressionSpec(name=name, required_aus=aus)
            for name, aus in REQUIRED_AUS.items()}


def save_au_rules(rules: dict, path) -> None:
    doc = [
        {"au_id": r.au_id, "region": r.region, "axis": r.axis.tolist(),
         "sign": r.sign, "threshold": r.threshold}
        for r in (rules[k] for k in sorted(rules))
    ]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_au_rules(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{path}: not valid JSON (line {exc.lineno} col {exc.colno}: "
            f"{exc.msg})") from exc
    if not isinstance(doc, list):
        raise ValidationError(f"{path}: expected a JSON list of rules")
    expected = {"au_id", "region", "axis", "sign", "threshold"}
    rules = {}
    for i, entry in enumerate(doc):
        if not isinstance(entry, dict) or set(entry) != expected:
            raise ValidationError(
                f"{path}: rule {i} must have exactly the fields "
                f"{sorted(expected)}")
        rule = AuProxyRule(au_id=entry["au_id"], region=entry["region"],
                           axis=np.asarray(entry["axis"], dtype=np.float64),
                           sign=int(entry["sign"]),
                           threshold=float(entry["threshold"]))
        if rule.au_id in rules:
            raise ValidationError(f"{path}: duplicate rule {rule.au_id!r}")
        rules[rule.au_id] = rule
    return rules


# ---------------------------------------------------------------------------
# Scores


def clip_score(e_image: np.ndarray, e_text: np.ndarray) -> float:
    """100 * cosine, clamped below at zero (the usual reporting scale)."""
    return 100.0 * max(0.0, cosine(e_image, e_text))


def spearman(x, y) -> float:
    """Rank correlation with average ranks for ties.

    Either argument having zero rank variance (all values tied) makes the
    correlation undefined; this returns 0.0 for that case so sweeps over
    flat metrics read as "no trend" rather than erroring.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("spearman needs two equal-length 1d arrays")
    if x.size < 2:
        raise ValidationError("spearman needs at least two points")
    rx, ry = _average_ranks(x), _average_ranks(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    vx, vy = float(dx @ dx), float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        return 0.0
    return float(dx @ dy) / np.sqrt(vx * vy)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


# ---------------------------------------------------------------------------
# Editing metrics on latent batches


def neutral_template(model: MorphableModel) -> Mesh:
    return Mesh(vertices=model.template_vertices.copy(), faces=model.faces)


def eval_states(seed: int, n_states: int, dims) -> list:
    """Fixed evaluation batch: random textures over a neutral expression,
    drawn from a stream separate from the training draws."""
    rng = np.random.default_rng([int(seed), 601])
    return [LatentState(w=rng.normal(size=(dims.n_w, dims.d_w)),
                        alpha=np.zeros(dims.n_alpha))
            for _ in range(n_states)]


def edited_meshes(model: MorphableModel, params: DualMapperParams,
                  states) -> list:
    out = []
    for state in states:
        edited = apply_edit(params, state)
        out.append(generate_mesh(model, FlameParams(
            theta=np.zeros(model.n_shape), beta=np.zeros(model.n_pose),
            alpha=edited.alpha)))
    return out


def edit_au_accuracy(model: MorphableModel, params: DualMapperParams,
                     spec: ExpressionSpec, rules: dict, seed: int = 1,
                     n_states: int = 32) -> float:
    """Detector accuracy of one trained mapper over the fixed eval batch."""
    states = eval_states(seed, n_states, params.dims)
    meshes = edited_meshes(model, params, states)
    return au_accuracy(spec, rules, meshes, neutral_template(model),
                       model.region_labels)


# ---------------------------------------------------------------------------
# Identity-weight sensitivity sweep


@dataclass(frozen=True)
class SweepRow:
    lambda_id: float
    l_id: float
    au_accuracy: float


SWEEP_CSV_COLUMNS = ("lambda_id", "L_ID", "au_accuracy")


def sensitivity_sweep(model, params, gen, enc, subspace, fixture,
                      reference_alphas, config, lambda_values,
                      rules: dict, spec: ExpressionSpec,
                      eval_seed: int = 1, n_eval_states: int = 32):
    """Retrain at each identity weight; returns (rows, trend stats).

    Stats are Spearman correlations of the weight against converged
    identity loss and against detector accuracy.
    """
    lambda_values = [float(v) for v in lambda_values]
    if len(lambda_values) < 2:
        raise ConfigError("sensitivity sweep needs at least two weight "
                          "values")
    rows = []
    for lam in lambda_values:
        run_config = with_overrides(config, lambda_id=lam)
        trained, history = train_expression(
            model, params, gen, enc, subspace, fixture, reference_alphas,
            run_config)
        acc = edit_au_accuracy(model, trained, spec, rules, seed=eval_seed,
                               n_states=n_eval_states)
        rows.append(SweepRow(lambda_id=lam, l_id=history[-1].l_id,
                             au_accuracy=acc))
    stats = {
        "spearman_l_id": spearman([r.lambda_id for r in rows],
                                  [r.l_id for r in rows]),
        "spearman_au_accuracy": spearman([r.lambda_id for r in rows],
                                         [r.au_accuracy for r in rows]),
    }
    return rows, stats


def write_sweep_csv(rows, path) -> None:
    lines = [",".join(SWEEP_CSV_COLUMNS)]
    for r in rows:
        lines.append(",".join([repr(r.lambda_id), repr(r.l_id),
                               repr(r.au_accuracy)]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_sweep_csv(path) -> list:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    if not lines or lines[0] != ",".join(SWEEP_CSV_COLUMNS):
        raise ValidationError(f"{path}: unexpected sweep CSV header")
    out = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(SWEEP_CSV_COLUMNS):
            raise ValidationError(f"{path}: malformed row {ln!r}")
        out.append(SweepRow(lambda_id=float(parts[0]), l_id=float(parts[1]),
                            au_accuracy=float(parts[2])))
    return out
