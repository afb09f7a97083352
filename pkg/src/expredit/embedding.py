"""Embedding-space algebra for expression editing.

An expression subspace is spanned by a set of prompt embeddings. Editing
targets are built by projecting an image embedding onto that subspace,
rescaling the in-span component toward a target text embedding with an
augmentation power gamma, and reinjecting the out-of-span residual
unchanged.

The augmentation coefficients c_k and d_k are inner products against the
subspace basis. Evaluated over a non-orthonormal basis the gamma=0 case
would not collapse back to the projection, so the raw prompt basis is
orthonormalized once at construction (modified Gram-Schmidt, vectors in
given order, dependent vectors dropped); evaluation over the raw basis
stays available behind a flag for comparison.

Embeddings are plain 1-d float64 arrays, stored unnormalized;
normalization happens only inside cosine.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputError, SingularAugmentationError, ValidationError,
)

# Canonical order of the named expressions shipped in the default fixture.
EXPRESSIONS = ("smile", "angry", "sad", "close_eyes", "raise_brow", "frown_brow")

_DROP_TOL = 1e-10


def orthonormalize(raw: np.ndarray, drop_tol: float = _DROP_TOL) -> np.ndarray:
    """Modified Gram-Schmidt over rows, in the given order.

    Runs the projection sweep twice per vector (re-orthogonalization) so
    the result stays orthonormal even for strongly correlated inputs.
    Rows whose residual norm falls below drop_tol are dropped.
    """
    basis: list[np.ndarray] = []
    for row in np.asarray(raw, dtype=np.float64):
        v = row.copy()
        for _ in range(2):
            for q in basis:
                v = v - (q @ v) * q
        norm = float(np.linalg.norm(v))
        if norm < drop_tol:
            continue
        basis.append(v / norm)
    if not basis:
        raise ValidationError("orthonormalize: no independent basis vectors")
    return np.array(basis)


class ExpressionSubspace:
    """Prompt basis plus its orthonormalization.

    raw_basis   (N, d_e) prompt embeddings, original order
    ortho_basis (M, d_e) orthonormal rows spanning the same space, M <= N
    """

    def __init__(self, raw_basis: np.ndarray):
        raw = np.asarray(raw_basis, dtype=np.float64)
        if raw.ndim != 2 or raw.shape[0] == 0:
            raise ValidationError(
                f"subspace basis must be (N, d_e) with N >= 1, got {raw.shape}")
        if not np.all(np.isfinite(raw)):
            raise ValidationError("subspace basis contains non-finite values")
        self.raw_basis = raw.copy()
        self.raw_basis.setflags(write=False)
        ortho = orthonormalize(raw)
        ortho.setflags(write=False)
        self.ortho_basis = ortho

    @property
    def dimension(self) -> int:
        return self.raw_basis.shape[1]

    def _check_dim(self, e: np.ndarray, name: str) -> np.ndarray:
        e = np.asarray(e, dtype=np.float64)
        if e.shape != (self.dimension,):
            raise ValidationError(
                f"{name}: expected dimension {self.dimension}, got shape {e.shape}")
        return e


def project(subspace: ExpressionSubspace, e_img: np.ndarray):
    """Orthogonal projection onto the subspace plus residual.

    Returns (e_p, r) with e_p in span and r = e_img - e_p.
    """
    e = subspace._check_dim(e_img, "project input")
    q = subspace.ortho_basis
    e_p = q.T @ (q @ e)
    return e_p, e - e_p


def augment(subspace: ExpressionSubspace, e_p: np.ndarray, e_t: np.ndarray,
            gamma: float, use_raw_basis: bool = False) -> np.ndarray:
    """Rescale the in-span component toward the target embedding.

    With coefficients c_k = e_p . b_k and d_k = e_t . b_k the result is

        sum_k (c_k - gamma * |c_k|) * b_k
            + (gamma * sum_k |c_k| / sum_k d_k) * e_t

    evaluated over the orthonormal basis by default. gamma=0 reproduces
    e_p (basis reconstruction); larger gamma trades the projection's own
    coordinates for the target direction.
    """
    e_p = subspace._check_dim(e_p, "augment e_p")
    e_t = subspace._check_dim(e_t, "augment e_t")
    gamma = float(gamma)
    if gamma < 0.0:
        raise ValidationError(f"augment: gamma must be nonnegative, got {gamma}")
    in_span, resid = project(subspace, e_p)
    if float(np.linalg.norm(resid)) > 1e-6:
        raise ValidationError(
            "augment: e_p does not lie in the subspace "
            f"(residual norm {float(np.linalg.norm(resid)):.3e})")
    basis = subspace.raw_basis if use_raw_basis else subspace.ortho_basis
    c = basis @ e_p
    d = basis @ e_t
    sum_d = float(d.sum())
    if abs(sum_d) < 1e-12:
        raise SingularAugmentationError(
            "target embedding is orthogonal to the subspace in aggregate "
            f"(sum of basis coefficients {sum_d:.3e})")
    out = (c - gamma * np.abs(c)) @ basis
    out = out + (gamma * float(np.abs(c).sum()) / sum_d) * e_t
    return out


def target_embedding(subspace: ExpressionSubspace, e_img: np.ndarray,
                     e_t: np.ndarray, gamma: float,
                     use_raw_basis: bool = False) -> np.ndarray:
    """Full editing target: augmented in-span part plus untouched residual."""
    e_p, r = project(subspace, e_img)
    return augment(subspace, e_p, e_t, gamma, use_raw_basis=use_raw_basis) + r


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, clipped to [-1, 1] against rounding overshoot."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(
            f"cosine: need equal-length vectors, got {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < 1e-150 or nb < 1e-150:
        raise DegenerateInputError("cosine of a zero-norm vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


# ---------------------------------------------------------------------------
# Embedding fixture file

@dataclass
class EmbeddingFixture:
    """Named embedding vectors sharing one dimension.

    Keys follow a "<kind>:<name>" convention ("basis:smile", "text:smile",
    "image:ref_042"). Insertion order is preserved and meaningful: subspace
    construction consumes "basis:" entries in file order.
    """

    d_e: int
    normalized: bool
    values: dict = field(default_factory=dict)

    def get(self, key: str) -> np.ndarray:
        if key not in self.values:
            known = ", ".join(sorted(self.values))
            raise ValidationError(f"fixture has no key {key!r} (known: {known})")
        return self.values[key]

    def keys_with_prefix(self, prefix: str) -> list:
        return [k for k in self.values if k.startswith(prefix)]

    def subspace(self, prefix: str = "basis:") -> ExpressionSubspace:
        keys = self.keys_with_prefix(prefix)
        if not keys:
            raise ValidationError(f"fixture has no {prefix}* entries")
        return ExpressionSubspace(np.array([self.values[k] for k in keys]))


def save_embedding_fixture(fixture: EmbeddingFixture, path) -> None:
    doc = {
        "d_e": int(fixture.d_e),
        "normalized": bool(fixture.normalized),
        "embeddings": {k: np.asarray(v, dtype=np.float64).tolist()
                       for k, v in fixture.values.items()},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_embedding_fixture(path) -> EmbeddingFixture:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{path}: not valid JSON (line {exc.lineno} col {exc.colno}: "
            f"{exc.msg})") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: fixture document must be a JSON object")
    for fieldname in ("d_e", "normalized", "embeddings"):
        if fieldname not in doc:
            raise ValidationError(f"{path}: missing field {fieldname!r}")
    d_e = doc["d_e"]
    if not isinstance(d_e, int) or d_e <= 0:
        raise ValidationError(f"{path}: d_e must be a positive integer, got {d_e!r}")
    normalized = bool(doc["normalized"])
    values = {}
    for key, arr in doc["embeddings"].items():
        vec = np.asarray(arr, dtype=np.float64)
        if vec.shape != (d_e,):
            raise ValidationError(
                f"{path}: entry {key!r} has shape {vec.shape}, expected ({d_e},)")
        if not np.all(np.isfinite(vec)):
            raise ValidationError(f"{path}: entry {key!r} has non-finite values")
        if normalized:
            norm = float(np.linalg.norm(vec))
            if abs(norm - 1.0) > 1e-6:
                raise ValidationError(
                    f"{path}: entry {key!r} marked normalized but has norm {norm}")
        values[key] = vec
    return EmbeddingFixture(d_e=d_e, normalized=normalized, values=values)


def synthesize_desk_fixture(seed: int, d_e: int = 32) -> EmbeddingFixture:
    """Deterministic stand-in for precomputed prompt embeddings.

    The basis prompts form an exactly orthonormal frame, and each text
    target is its basis vector plus a fixed admixture of noise pushed
    OUT of the frame's span. Two consequences the editing math depends
    on: the augmentation denominator (the sum of target components over
    the orthonormalized basis) is the same for every expression rather
    than a draw of luck, and the targets keep an off-subspace component
    so editing is never a pure in-span exercise.
    """
    if d_e < 8:
        raise ValidationError("synthesize_desk_fixture: d_e must be at least 8")
    rng = np.random.default_rng([int(seed), 201])
    frame, _ = np.linalg.qr(rng.normal(size=(d_e, len(EXPRESSIONS))))
    # Fix the sign convention so the frame is unique, not QR's choice.
    frame = frame * np.sign(frame[0])[None, :]
    values = {}
    for j, name in enumerate(EXPRESSIONS):
        values[f"basis:{name}"] = frame[:, j].copy()
    for j, name in enumerate(EXPRESSIONS):
        noise = rng.normal(size=d_e)
        noise -= frame @ (frame.T @ noise)
        noise /= np.linalg.norm(noise)
        t = frame[:, j] + 0.3 * noise
        t /= np.linalg.norm(t)
        values[f"text:{name}"] = t
    return EmbeddingFixture(d_e=d_e, normalized=True, values=values)
