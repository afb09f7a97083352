"""Frozen differentiable stand-ins for the pretrained networks.

synth_embedding plays the role of the synthesis network composed with an
image encoder: a fixed linear map of the texture tokens plus a fixed
linear map of the mesh displacement from the template, squashed by tanh.
The geometry map is constructed, not random: the displacement pattern of
each named expression-basis slot is sent to the direction of that
expression's basis prompt embedding in the fixture, so moving the mesh
along a semantic axis moves the embedding along the matching prompt axis
and editing targets are actually reachable.

The identity encoder is a frozen linear projection of the texture tokens
alone, L2-normalized; geometry never enters it, so the identity loss
constrains only w.

The rasterizer is for eyeballing meshes: orthographic front view, flat
shading, painter's algorithm. It is deliberately outside the autodiff
world.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .embedding import EmbeddingFixture
from .errors import DegenerateInputError, ValidationError
from .morphable import DESK_EXPRESSION_SLOTS, Mesh, MorphableModel


def _freeze(a) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SurrogateGenerator:
    """e = tanh(w_g . flatten(w) + v_g . flatten(vertex offsets) + bias)."""

    w_g: np.ndarray    # (d_e, n_w * d_w)
    v_g: np.ndarray    # (d_e, n_v * 3)
    bias: np.ndarray   # (d_e,)
    n_w: int
    d_w: int
    n_v: int
    seed: int

    @property
    def d_e(self) -> int:
        return self.bias.shape[0]


@dataclass(frozen=True)
class SurrogateIdentityEncoder:
    """Normalized frozen projection of flatten(w); ignores geometry."""

    proj: np.ndarray   # (d_id, n_w * d_w)
    n_w: int
    d_w: int
    seed: int

    @property
    def d_id(self) -> int:
        return self.proj.shape[0]


def synth_embedding(gen: SurrogateGenerator, w: np.ndarray, mesh: Mesh,
                    template: Mesh) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (gen.n_w, gen.d_w):
        raise ValidationError(
            f"synth_embedding: w expected ({gen.n_w}, {gen.d_w}), got {w.shape}")
    if mesh.vertices.shape != (gen.n_v, 3):
        raise ValidationError(
            f"synth_embedding: mesh expected ({gen.n_v}, 3) vertices, "
            f"got {mesh.vertices.shape}")
    offsets = (mesh.vertices - template.vertices).reshape(-1)
    pre = gen.w_g @ w.reshape(-1) + gen.v_g @ offsets + gen.bias
    return np.tanh(pre)


def identity_embedding(enc: SurrogateIdentityEncoder, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (enc.n_w, enc.d_w):
        raise ValidationError(
            f"identity_embedding: w expected ({enc.n_w}, {enc.d_w}), "
            f"got {w.shape}")
    out = enc.proj @ w.reshape(-1)
    norm = float(np.linalg.norm(out))
    if norm < 1e-150:
        raise DegenerateInputError(
            "identity projection collapsed to the zero vector")
    return out / norm


def synth_embedding_graph(gen: SurrogateGenerator, w_node: ad.Node,
                          offsets_node: ad.Node) -> ad.Node:
    """Same map as synth_embedding, built from autodiff ops.

    w_node is the (n_w, d_w) token grid; offsets_node is the flattened
    (n_v * 3,) vertex displacement from the template. Values agree with
    the ndarray path bitwise because the arithmetic is identical.
    """
    tex = ad.matmul(ad.const(gen.w_g), ad.flatten(w_node))
    geo = ad.matmul(ad.const(gen.v_g), offsets_node)
    return ad.tanh(ad.add(ad.add(tex, geo), ad.const(gen.bias)))


def identity_projection_graph(enc: SurrogateIdentityEncoder,
                              w_node: ad.Node) -> ad.Node:
    """Unnormalized identity projection as an autodiff node.

    Cosine similarity is scale invariant, so the identity loss can use
    this raw projection; identity_embedding normalizes only so callers
    get unit vectors.
    """
    return ad.matmul(ad.const(enc.proj), ad.flatten(w_node))


# ---------------------------------------------------------------------------
# Desk-scale construction

def synthesize_desk_surrogates(seed: int, model: MorphableModel,
                               fixture: EmbeddingFixture,
                               n_w: int = 6, d_w: int = 32, d_id: int = 16,
                               geometry_gain: float = 2.5,
                               texture_inspan: float = 1.0,
                               texture_offspan: float = 0.25,
                               noise_scale: float = 0.05):
    """Build (SurrogateGenerator, SurrogateIdentityEncoder) for one desk setup.

    The geometry path solves v_g @ pattern_k = geometry_gain * prompt_k for
    every expression slot that has a basis prompt in the fixture, via the
    pseudo-inverse of the stacked patterns, plus a small random background
    so off-pattern displacements still register.

    The texture path is split: a strong component into the span of the
    prompt basis and a weak one everywhere else. Renders then produce
    embeddings concentrated near the expression subspace, which is what
    makes text targets reachable instead of being swamped by off-subspace
    residual that no edit could ever chase.
    """
    rng = np.random.default_rng([int(seed), 401])
    d_e = fixture.d_e
    n_v = model.n_vertices
    dim_tex = n_w * d_w

    prompts = []
    patterns = []
    for j in range(min(model.n_expression, len(DESK_EXPRESSION_SLOTS))):
        key = f"basis:{DESK_EXPRESSION_SLOTS[j]}"
        if key in fixture.values:
            patterns.append(model.expression_basis[j].reshape(-1))
            prompts.append(fixture.values[key])

    w_g = rng.normal(scale=texture_offspan / np.sqrt(dim_tex),
                     size=(d_e, dim_tex))
    if prompts:
        prompt_mat = np.stack(prompts, axis=1)            # (d_e, K)
        w_g = w_g + prompt_mat @ rng.normal(
            scale=texture_inspan / np.sqrt(dim_tex),
            size=(len(prompts), dim_tex))
    bias = rng.normal(scale=0.2, size=d_e)

    background = rng.normal(scale=noise_scale / np.sqrt(3 * n_v),
                            size=(d_e, 3 * n_v))
    if patterns:
        pattern_mat = np.stack(patterns, axis=1)          # (3 n_v, K)
        v_g = geometry_gain * (prompt_mat @ np.linalg.pinv(pattern_mat))
        v_g = v_g + background
    else:
        v_g = background

    gen = SurrogateGenerator(w_g=_freeze(w_g), v_g=_freeze(v_g),
                             bias=_freeze(bias), n_w=n_w, d_w=d_w,
                             n_v=n_v, seed=int(seed))
    proj = rng.normal(scale=1.0 / np.sqrt(dim_tex), size=(d_id, dim_tex))
    enc = SurrogateIdentityEncoder(proj=_freeze(proj), n_w=n_w, d_w=d_w,
                                   seed=int(seed))
    return gen, enc


# ---------------------------------------------------------------------------
# Serialization

def save_surrogates(gen: SurrogateGenerator, enc: SurrogateIdentityEncoder,
                    path) -> None:
    doc = {
        "generator": {
            "w_g": gen.w_g.tolist(), "v_g": gen.v_g.tolist(),
            "bias": gen.bias.tolist(), "n_w": gen.n_w, "d_w": gen.d_w,
            "n_v": gen.n_v, "seed": gen.seed,
        },
        "identity_encoder": {
            "proj": enc.proj.tolist(), "n_w": enc.n_w, "d_w": enc.d_w,
            "seed": enc.seed,
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_surrogates(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{path}: not valid JSON (line {exc.lineno} col {exc.colno}: "
            f"{exc.msg})") from exc
    for block in ("generator", "identity_encoder"):
        if block not in doc:
            raise ValidationError(f"{path}: missing field {block!r}")
    g = doc["generator"]
    e = doc["identity_encoder"]
    try:
        gen = SurrogateGenerator(
            w_g=_freeze(np.asarray(g["w_g"])), v_g=_freeze(np.asarray(g["v_g"])),
            bias=_freeze(np.asarray(g["bias"])), n_w=int(g["n_w"]),
            d_w=int(g["d_w"]), n_v=int(g["n_v"]), seed=int(g["seed"]))
        enc = SurrogateIdentityEncoder(
            proj=_freeze(np.asarray(e["proj"])), n_w=int(e["n_w"]),
            d_w=int(e["d_w"]), seed=int(e["seed"]))
    except KeyError as exc:
        raise ValidationError(f"{path}: missing surrogate field {exc}") from exc
    if gen.w_g.shape != (gen.d_e, gen.n_w * gen.d_w):
        raise ValidationError(f"{path}: generator w_g shape {gen.w_g.shape} "
                              "inconsistent with token dims")
    if gen.v_g.shape != (gen.d_e, gen.n_v * 3):
        raise ValidationError(f"{path}: generator v_g shape {gen.v_g.shape} "
                              "inconsistent with vertex count")
    return gen, enc


# ---------------------------------------------------------------------------
# Rasterizer (inspection only, no gradients)

_LIGHT = np.array([0.3, 0.25, 0.917])
_LIGHT = _LIGHT / np.linalg.norm(_LIGHT)


def rasterize(mesh: Mesh, width: int = 128, height: int = 128) -> np.ndarray:
    """Orthographic front view (+z toward the viewer), flat shading,
    painter's algorithm on mean face depth. Returns uint8 (height, width),
    background 0; covered pixels are always nonzero.

    Zero-area faces are skipped. The depth sort breaks ties on the vertex
    index triple, so the image is independent of input face order.
    """
    if width < 1 or height < 1:
        raise ValidationError("rasterize: image size must be positive")
    image = np.zeros((height, width), dtype=np.uint8)
    verts = np.asarray(mesh.vertices, dtype=np.float64)
    faces = np.asarray(mesh.faces, dtype=np.int64)
    if len(faces) == 0 or len(verts) == 0:
        return image

    margin = 2.0
    lo = verts[:, :2].min(axis=0)
    hi = verts[:, :2].max(axis=0)
    span = np.maximum(hi - lo, 1e-12)
    scale = min((width - 2 * margin) / span[0], (height - 2 * margin) / span[1])
    center = (lo + hi) / 2.0

    px = (verts[:, 0] - center[0]) * scale + width / 2.0
    py = height / 2.0 - (verts[:, 1] - center[1]) * scale  # +y is up

    order = sorted(range(len(faces)),
                   key=lambda f: (float(verts[faces[f]][:, 2].mean()),
                                  tuple(int(i) for i in faces[f])))
    for f in order:
        i, j, k = faces[f]
        a = np.array([px[i], py[i]])
        b = np.array([px[j], py[j]])
        c = np.array([px[k], py[k]])
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if area == 0.0:
            continue
        normal = np.cross(verts[j] - verts[i], verts[k] - verts[i])
        nn = np.linalg.norm(normal)
        if nn == 0.0:
            continue
        shade = abs(float(normal @ _LIGHT)) / nn
        value = np.uint8(60 + round(195 * min(shade, 1.0)))

        x0 = max(int(np.floor(min(a[0], b[0], c[0]))), 0)
        x1 = min(int(np.ceil(max(a[0], b[0], c[0]))), width - 1)
        y0 = max(int(np.floor(min(a[1], b[1], c[1]))), 0)
        y1 = min(int(np.ceil(max(a[1], b[1], c[1]))), height - 1)
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1) + 0.5
        ys = np.arange(y0, y1 + 1) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        w0 = ((b[0] - a[0]) * (gy - a[1]) - (b[1] - a[1]) * (gx - a[0])) / area
        w1 = ((c[0] - b[0]) * (gy - b[1]) - (c[1] - b[1]) * (gx - b[0])) / area
        w2 = ((a[0] - c[0]) * (gy - c[1]) - (a[1] - c[1]) * (gx - c[0])) / area
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        region = image[y0:y1 + 1, x0:x1 + 1]
        region[inside] = value
    return image


def export_ppm(image: np.ndarray, path) -> None:
    """Binary P5 graymap."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValidationError(f"export_ppm: need a 2-d image, got {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def load_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValidationError(f"{path}: not a binary P5 graymap")
    w, h = (int(x) for x in parts[1].split())
    if parts[2] != b"255":
        raise ValidationError(f"{path}: unsupported max value {parts[2]!r}")
    pixels = np.frombuffer(parts[3][:w * h], dtype=np.uint8)
    if pixels.size != w * h:
        raise ValidationError(f"{path}: truncated pixel data")
    return pixels.reshape(h, w).copy()
