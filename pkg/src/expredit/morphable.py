"""Linear blendshape face model.

A mesh is produced by adding shape and expression basis offsets to a
template and then applying per-joint axis-angle rotations about fixed
pivots. The model is immutable after construction; all operations are
pure functions.

Vertex layout of the synthesized desk model: vertices are laid out on a
deterministic elliptical spiral, top of the head at +y, and labeled by
horizontal bands (forehead, brow, eyelid, mid-face, mouth, jaw, chin).
Expression basis vectors are constructed region by region so that each
carries a recognizable displacement pattern; see DESK_EXPRESSION_SLOTS.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

REGIONS = ("brow", "eyelid", "mouth", "jaw", "other")

# Semantic labels of the synthesized expression-basis slots, in order.
DESK_EXPRESSION_SLOTS = (
    "smile", "angry", "sad", "close_eyes", "raise_brow", "frown_brow",
    "jaw_open", "face_field",
)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MorphableModel:
    """Template geometry plus linear shape/expression bases and pose joints.

    template_vertices: (n_v, 3)
    faces:             (n_f, 3) zero-based int
    shape_basis:       (n_theta, n_v, 3)
    expression_basis:  (n_alpha, n_v, 3)
    pose_joints:       tuple of (pivot 3-vector, unit axis 3-vector)
    region_labels:     tuple of n_v strings from REGIONS
    """

    template_vertices: np.ndarray
    faces: np.ndarray
    shape_basis: np.ndarray
    expression_basis: np.ndarray
    pose_joints: tuple
    region_labels: tuple

    @property
    def n_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def n_shape(self) -> int:
        return self.shape_basis.shape[0]

    @property
    def n_pose(self) -> int:
        return len(self.pose_joints)

    @property
    def n_expression(self) -> int:
        return self.expression_basis.shape[0]

    def region_indices(self, region: str) -> np.ndarray:
        if region not in REGIONS:
            raise ValidationError(f"unknown region {region!r}")
        return np.array([i for i, r in enumerate(self.region_labels)
                         if r == region], dtype=int)


@dataclass(frozen=True)
class FlameParams:
    """Shape (theta), pose (beta, radians) and expression (alpha) coefficients."""

    theta: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray

    @classmethod
    def zeros(cls, model: MorphableModel) -> "FlameParams":
        return cls(theta=np.zeros(model.n_shape),
                   beta=np.zeros(model.n_pose),
                   alpha=np.zeros(model.n_expression))


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray


def _validate_model(template, faces, shape_basis, expression_basis,
                    pose_joints, region_labels):
    n_v = template.shape[0]
    if template.ndim != 2 or template.shape[1] != 3:
        raise ValidationError(f"template: expected (n_v, 3), got {template.shape}")
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise ValidationError(f"faces: expected (n_f, 3), got {faces.shape}")
    if faces.size and (faces.min() < 0 or faces.max() >= n_v):
        raise ValidationError(
            f"faces: vertex index out of range [0, {n_v}): "
            f"min {faces.min()}, max {faces.max()}")
    for name, basis in (("shape_basis", shape_basis),
                        ("expression_basis", expression_basis)):
        if basis.ndim != 3 or basis.shape[1:] != (n_v, 3):
            raise ValidationError(
                f"{name}: expected (k, {n_v}, 3), got {basis.shape}")
    for j, (pivot, axis) in enumerate(pose_joints):
        if np.asarray(pivot).shape != (3,) or np.asarray(axis).shape != (3,):
            raise ValidationError(f"pose_joints[{j}]: pivot/axis must be 3-vectors")
        norm = float(np.linalg.norm(axis))
        if abs(norm - 1.0) > 1e-9:
            raise ValidationError(
                f"pose_joints[{j}]: axis norm {norm} is not 1 within 1e-9")
    if len(region_labels) != n_v:
        raise ValidationError(
            f"region_labels: expected {n_v} entries, got {len(region_labels)}")
    bad = sorted({r for r in region_labels if r not in REGIONS})
    if bad:
        raise ValidationError(f"region_labels: unknown labels {bad}")


def make_model(template, faces, shape_basis, expression_basis,
               pose_joints, region_labels) -> MorphableModel:
    """Validate raw arrays and assemble an immutable MorphableModel."""
    template = np.asarray(template, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    shape_basis = np.asarray(shape_basis, dtype=np.float64)
    expression_basis = np.asarray(expression_basis, dtype=np.float64)
    joints = tuple((np.asarray(p, dtype=np.float64), np.asarray(a, dtype=np.float64))
                   for p, a in pose_joints)
    _validate_model(template, faces, shape_basis, expression_basis,
                    joints, region_labels)
    faces = np.ascontiguousarray(faces)
    faces.setflags(write=False)
    return MorphableModel(
        template_vertices=_freeze(template),
        faces=faces,
        shape_basis=_freeze(shape_basis),
        expression_basis=_freeze(expression_basis),
        pose_joints=tuple((_freeze(p), _freeze(a)) for p, a in joints),
        region_labels=tuple(str(r) for r in region_labels),
    )


def _rotate_about(vertices: np.ndarray, pivot: np.ndarray,
                  axis: np.ndarray, angle: float) -> np.ndarray:
    # Rodrigues rotation of all vertices about the line (pivot, axis)
    k = axis
    v = vertices - pivot
    c, s = np.cos(angle), np.sin(angle)
    cross = np.cross(np.broadcast_to(k, v.shape), v)
    kdotv = v @ k
    rotated = v * c + cross * s + np.outer(kdotv, k) * (1.0 - c)
    return rotated + pivot


def generate_mesh(model: MorphableModel, params: FlameParams) -> Mesh:
    """Blend the bases linearly, then rotate about each pose joint in order.

    The blended (pre-pose) vertices are affine in alpha, which is the part
    the optimization pipeline differentiates through.
    """
    theta = np.asarray(params.theta, dtype=np.float64)
    beta = np.asarray(params.beta, dtype=np.float64)
    alpha = np.asarray(params.alpha, dtype=np.float64)
    if theta.shape != (model.n_shape,):
        raise ValidationError(
            f"theta: expected shape ({model.n_shape},), got {theta.shape}")
    if beta.shape != (model.n_pose,):
        raise ValidationError(
            f"beta: expected shape ({model.n_pose},), got {beta.shape}")
    if alpha.shape != (model.n_expression,):
        raise ValidationError(
            f"alpha: expected shape ({model.n_expression},), got {alpha.shape}")

    verts = model.template_vertices.copy()
    if model.n_shape:
        verts += np.tensordot(theta, model.shape_basis, axes=1)
    if model.n_expression:
        verts += np.tensordot(alpha, model.expression_basis, axes=1)
    for angle, (pivot, axis) in zip(beta, model.pose_joints):
        if angle != 0.0:  # keep the identity case bit-exact
            verts = _rotate_about(verts, pivot, axis, float(angle))
    return Mesh(vertices=verts, faces=model.faces)


def expression_matrix(model: MorphableModel) -> np.ndarray:
    """Expression basis reshaped to (n_alpha, n_v*3) for linear-path math."""
    return model.expression_basis.reshape(model.n_expression, -1)


# ---------------------------------------------------------------------------
# OBJ export / import

def export_obj(mesh: Mesh, path) -> None:
    """Write `v x y z` then 1-based `f i j k` lines.

    Coordinates are printed with enough digits to round-trip float64
    exactly, so load_obj returns bit-identical vertices.
    """
    lines = []
    for x, y, z in np.asarray(mesh.vertices, dtype=np.float64):
        lines.append(f"v {x:.17g} {y:.17g} {z:.17g}")
    for a, b, c in np.asarray(mesh.faces, dtype=np.int64):
        lines.append(f"f {a + 1} {b + 1} {c + 1}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_obj(path) -> Mesh:
    verts, faces = [], []
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) != 4:
                    raise ValidationError(f"{path}:{ln}: malformed vertex line")
                verts.append([float(p) for p in parts[1:]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ValidationError(
                        f"{path}:{ln}: only triangular faces supported")
                faces.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
            # other OBJ directives are ignored
    vertices = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    face_arr = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if face_arr.size and (face_arr.min() < 0 or face_arr.max() >= len(verts)):
        raise ValidationError(f"{path}: face references missing vertex")
    return Mesh(vertices=vertices, faces=face_arr)


# ---------------------------------------------------------------------------
# Model file I/O

def save_model(model: MorphableModel, path) -> None:
    doc = {
        "template": model.template_vertices.tolist(),
        "faces": model.faces.tolist(),
        "shape_basis": model.shape_basis.tolist(),
        "expression_basis": model.expression_basis.tolist(),
        "pose_joints": [{"pivot": p.tolist(), "axis": a.tolist()}
                        for p, a in model.pose_joints],
        "region_labels": list(model.region_labels),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path) -> MorphableModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{path}: not valid JSON (line {exc.lineno} col {exc.colno}: "
            f"{exc.msg})") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: model document must be a JSON object")
    required = ("template", "faces", "shape_basis", "expression_basis",
                "pose_joints", "region_labels")
    missing = [k for k in required if k not in doc]
    if missing:
        raise ValidationError(f"{path}: missing fields {missing}")
    joints = []
    for j, entry in enumerate(doc["pose_joints"]):
        if not isinstance(entry, dict) or "pivot" not in entry or "axis" not in entry:
            raise ValidationError(
                f"{path}: pose_joints[{j}] needs 'pivot' and 'axis'")
        joints.append((entry["pivot"], entry["axis"]))
    return make_model(doc["template"], doc["faces"], doc["shape_basis"],
                      doc["expression_basis"], joints, doc["region_labels"])


# ---------------------------------------------------------------------------
# Desk-scale synthesis

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))

# y-bands (top to bottom): label and [y_hi, y_lo)
_BANDS = (
    ("other", 1.01, 0.55),    # forehead
    ("brow", 0.55, 0.35),
    ("eyelid", 0.35, 0.15),
    ("other", 0.15, -0.15),   # nose / cheeks
    ("mouth", -0.15, -0.45),
    ("jaw", -0.45, -0.75),
    ("other", -0.75, -1.01),  # chin / neck
)


def _band_label(y: float) -> str:
    for label, hi, lo in _BANDS:
        if lo <= y < hi:
            return label
    return "other"


def _unit_field(field: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(field)
    if norm == 0.0:
        raise ValidationError("expression basis construction produced a zero field")
    return field / norm


def synthesize_desk_model(seed: int, n_v: int = 64, n_theta: int = 4,
                          n_alpha: int = 8) -> MorphableModel:
    """Deterministically build a small face-like model.

    The expression basis fills slots in DESK_EXPRESSION_SLOTS order
    (truncated to n_alpha): mouth-corner-up, a multi-region pattern for an
    angry face, a sad pattern, eyelid-close, brow-up, brow-knit, jaw-open,
    and a free smooth field. Each slot is normalized to unit L2 mass.
    """
    if n_v < 24:
        raise ValidationError("synthesize_desk_model: n_v must be at least 24")
    if n_theta < 0 or n_alpha < 1:
        raise ValidationError("synthesize_desk_model: bad basis sizes")

    rng = np.random.default_rng([int(seed), 101])
    idx = np.arange(n_v)
    t = idx / (n_v - 1)
    y = 1.0 - 2.0 * t
    half_width = 0.8 * np.sqrt(np.maximum(0.08, 1.0 - y * y))
    x = half_width * np.sin(_GOLDEN_ANGLE * idx * n_v / 13.0)
    z = 0.45 * np.maximum(0.0, 1.0 - (x / 0.9) ** 2 - 0.5 * y * y)
    template = np.stack([x, y, z], axis=1)
    template += rng.normal(scale=0.01, size=template.shape)

    labels = [_band_label(v) for v in y]
    for needed in ("brow", "eyelid", "mouth", "jaw"):
        if needed not in labels:
            raise ValidationError(
                f"synthesize_desk_model: n_v={n_v} leaves no {needed} vertices")

    faces = np.array([[0, i, i + 1] for i in range(1, n_v - 1)], dtype=np.int64)

    def mask(region):
        return np.array([lb == region for lb in labels])

    m_brow, m_eye = mask("brow"), mask("eyelid")
    m_mouth, m_jaw, m_other = mask("mouth"), mask("jaw"), mask("other")

    def field(**region_disp) -> np.ndarray:
        out = np.zeros((n_v, 3))
        for region, disp in region_disp.items():
            out[mask(region)] = np.asarray(disp, dtype=np.float64)
        return _unit_field(out)

    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    slots = {}
    slots["smile"] = field(mouth=(0.0, inv_sqrt2, inv_sqrt2))
    angry = np.zeros((n_v, 3))
    angry[m_brow] = (0.0, -1.0, 0.0)
    angry[m_eye] = (inv_sqrt2, 0.0, -inv_sqrt2)
    angry[m_mouth] = (-1.0, 0.0, 0.0)
    slots["angry"] = _unit_field(angry)
    sad = np.zeros((n_v, 3))
    sad[m_brow] = (0.0, -inv_sqrt2, inv_sqrt2)
    sad[m_mouth] = (0.0, -1.0, 0.0)
    slots["sad"] = _unit_field(sad)
    slots["close_eyes"] = field(eyelid=(0.0, -1.0, 0.0))
    slots["raise_brow"] = field(brow=(0.0, 1.0, 0.0))
    frown = np.zeros((n_v, 3))
    frown[m_brow, 0] = -np.sign(template[m_brow, 0])  # knit toward midline
    frown[m_brow, 1] = -1.0
    slots["frown_brow"] = _unit_field(frown)
    jaw = np.zeros((n_v, 3))
    jaw[m_jaw] = (0.0, -1.0, 0.3)
    slots["jaw_open"] = _unit_field(jaw)
    free = np.zeros((n_v, 3))
    free[m_other] = rng.normal(size=(int(m_other.sum()), 3))
    slots["face_field"] = _unit_field(free)

    expression_basis = np.zeros((n_alpha, n_v, 3))
    for j in range(n_alpha):
        if j < len(DESK_EXPRESSION_SLOTS):
            expression_basis[j] = slots[DESK_EXPRESSION_SLOTS[j]]
        else:
            extra = rng.normal(size=(n_v, 3))
            expression_basis[j] = _unit_field(extra)

    shape_basis = np.zeros((n_theta, n_v, 3))
    for i in range(n_theta):
        a, b, c = rng.normal(size=3)
        pattern = np.stack([
            0.1 * a * np.sin(2.0 * y + b),
            0.1 * b * np.cos(3.0 * x + c),
            0.1 * c * np.sin(x + y),
        ], axis=1)
        shape_basis[i] = _unit_field(pattern)

    pose_joints = (
        (np.array([0.0, -1.2, 0.0]), np.array([0.0, 1.0, 0.0])),  # yaw
        (np.array([0.0, -1.2, 0.0]), np.array([1.0, 0.0, 0.0])),  # pitch
    )

    return make_model(template, faces, shape_basis, expression_basis,
                      pose_joints, labels)
