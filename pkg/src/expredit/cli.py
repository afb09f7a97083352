"""Command-line entry point.

Commands:
  init     synthesize the model, surrogate weights, embedding fixture,
           reference codes, detector rules, and per-expression configs
  fit      train one expression mapper from a config file
  render   before/after mesh and image for a checkpoint
  eval     detector-accuracy and score table for a checkpoint
  sweep    identity-weight sensitivity sweep
  compose  apply several checkpoints in sequence and render the result

Conventions: `fit` and `sweep` resolve the data files (model, fixture,
surrogates, reference codes, rules) from the directory containing the
config file, which is where `init` puts both; `render`, `eval`, and
`compose` take that directory via --artifacts. Outputs land in --out, one
manifest per run, and nothing is overwritten without --force.

Exit codes: 0 success, 2 bad configuration or input data, 3 numeric
failure during optimization, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import (EXPRESSIONS, load_embedding_fixture,
                        save_embedding_fixture, synthesize_desk_fixture)
from .errors import (ConfigError, DegenerateInputError, ExpreditError,
                     NumericAbortError, SingularAugmentationError,
                     ValidationError)
from .evaluation import (DEFAULT_LAMBDA_GRID, SweepRow, clip_score,
                         desk_au_rules, desk_expression_specs,
                         edit_au_accuracy, eval_states, load_au_rules,
                         neutral_template, save_au_rules,
                         sensitivity_sweep, write_sweep_csv)
from .mappers import (apply_edit, init_mapper_params, load_checkpoint,
                      save_checkpoint)
from .morphable import (FlameParams, export_obj, generate_mesh, load_model,
                        save_model, synthesize_desk_model)
from .pipeline import (OptimConfig, compose_edits, desk_reference_alphas,
                       load_config, load_reference_alphas, save_config,
                       save_reference_alphas, train_expression,
                       with_overrides, write_loss_csv)
from .surrogates import (export_ppm, load_surrogates, rasterize,
                         save_surrogates, synth_embedding,
                         synthesize_desk_surrogates)

ARTIFACT_FILES = {
    "model": "model.json",
    "fixture": "fixture.json",
    "surrogates": "surrogates.json",
    "reference_alphas": "reference_alphas.json",
    "au_rules": "au_rules.json",
}

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class RunManifest:
    command: str
    config_path: str
    seed: int
    output_dir: str
    artifacts: dict
    duration_seconds: float


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, config_path: str, seed: int,
                   written, started: float) -> RunManifest:
    manifest = RunManifest(
        command=command, config_path=str(config_path), seed=int(seed),
        output_dir=str(out_dir),
        artifacts={p.name: _sha256(p) for p in sorted(written)},
        duration_seconds=time.monotonic() - started)
    doc = {"command": manifest.command, "config_path": manifest.config_path,
           "seed": manifest.seed, "output_dir": manifest.output_dir,
           "artifacts": manifest.artifacts,
           "duration_seconds": manifest.duration_seconds}
    with open(out_dir / MANIFEST_NAME, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return manifest


def load_manifest(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"{path}: not valid JSON (line {exc.lineno} col {exc.colno}: "
            f"{exc.msg})") from exc
    needed = {"command", "config_path", "seed", "output_dir", "artifacts",
              "duration_seconds"}
    missing = needed - set(doc)
    if missing:
        raise ValidationError(f"{path}: manifest missing {sorted(missing)}")
    return doc


def verify_manifest(path) -> dict:
    """Recompute every checksum; raises on any mismatch or missing file."""
    doc = load_manifest(path)
    base = Path(path).parent
    for name, digest in doc["artifacts"].items():
        target = base / name
        if not target.exists():
            raise ValidationError(f"{path}: listed artifact {name!r} missing")
        actual = _sha256(target)
        if actual != digest:
            raise ValidationError(
                f"{path}: checksum mismatch for {name!r}: manifest says "
                f"{digest}, file is {actual}")
    return doc


def _prepare_out(out, names, force: bool) -> Path:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    clashes = [n for n in names if (out_dir / n).exists()]
    if clashes and not force:
        raise FileExistsError(
            f"{out_dir}: {', '.join(sorted(clashes))} already there; "
            "pass --force to overwrite")
    return out_dir


def _load_artifacts(artifacts_dir) -> dict:
    base = Path(artifacts_dir)
    model = load_model(base / ARTIFACT_FILES["model"])
    fixture = load_embedding_fixture(base / ARTIFACT_FILES["fixture"])
    gen, enc = load_surrogates(base / ARTIFACT_FILES["surrogates"])
    refs = load_reference_alphas(base / ARTIFACT_FILES["reference_alphas"])
    rules = load_au_rules(base / ARTIFACT_FILES["au_rules"])
    return {"model": model, "fixture": fixture, "gen": gen, "enc": enc,
            "refs": refs, "rules": rules, "subspace": fixture.subspace()}


def config_name(expression: str) -> str:
    return f"config_{expression}.json"


# ---------------------------------------------------------------------------
# Commands


def cmd_init(args) -> int:
    started = time.monotonic()
    names = list(ARTIFACT_FILES.values()) + [config_name(n)
                                             for n in EXPRESSIONS]
    out_dir = _prepare_out(args.out, names, args.force)

    model = synthesize_desk_model(seed=args.seed)
    fixture = synthesize_desk_fixture(seed=args.seed)
    gen, enc = synthesize_desk_surrogates(args.seed, model, fixture)

    save_model(model, out_dir / ARTIFACT_FILES["model"])
    save_embedding_fixture(fixture, out_dir / ARTIFACT_FILES["fixture"])
    save_surrogates(gen, enc, out_dir / ARTIFACT_FILES["surrogates"])
    save_reference_alphas(desk_reference_alphas(model),
                          out_dir / ARTIFACT_FILES["reference_alphas"])
    save_au_rules(desk_au_rules(model), out_dir / ARTIFACT_FILES["au_rules"])
    for name in EXPRESSIONS:
        save_config(OptimConfig(expression_name=name,
                                target_text_key=f"text:{name}",
                                reference_alpha_key=f"alpha:{name}",
                                seed=args.seed),
                    out_dir / config_name(name))

    written = [out_dir / n for n in names]
    write_manifest(out_dir, "init", "", args.seed, written, started)
    print(f"initialized {len(written)} files in {out_dir}")
    return 0


def _config_from_args(args) -> OptimConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.gamma is not None:
        overrides["gamma"] = args.gamma
    if args.no_ref:
        overrides["use_reference"] = False
    return load_config(args.config, **overrides)


def cmd_fit(args) -> int:
    started = time.monotonic()
    config = _config_from_args(args)
    assets = _load_artifacts(Path(args.config).parent)
    out_dir = _prepare_out(args.out, ["checkpoint.json", "loss.csv"],
                           args.force)

    params = init_mapper_params(seed=config.seed)
    trained, history = train_expression(
        assets["model"], params, assets["gen"], assets["enc"],
        assets["subspace"], assets["fixture"], assets["refs"], config)

    save_checkpoint(trained, out_dir / "checkpoint.json",
                    metadata={"expression_name": config.expression_name,
                              "final_cosine": history[-1].cosine,
                              "final_l_total": history[-1].l_total,
                              "steps": config.steps,
                              "use_reference": config.use_reference})
    write_loss_csv(history, out_dir / "loss.csv")
    write_manifest(out_dir, "fit", args.config, config.seed,
                   [out_dir / "checkpoint.json", out_dir / "loss.csv"],
                   started)
    print(f"fit {config.expression_name}: {config.steps} steps, "
          f"final cosine {history[-1].cosine:.4f}, "
          f"final loss {history[-1].l_total:.4f}")
    return 0


def _render_pair(out_dir: Path, model, tag: str, mesh) -> list:
    obj_path = out_dir / f"{tag}.obj"
    ppm_path = out_dir / f"{tag}.ppm"
    export_obj(mesh, obj_path)
    export_ppm(rasterize(mesh), ppm_path)
    return [obj_path, ppm_path]


def _mesh_for_alpha(model, alpha: np.ndarray):
    return generate_mesh(model, FlameParams(
        theta=np.zeros(model.n_shape), beta=np.zeros(model.n_pose),
        alpha=alpha))


def _checkpoint_against_model(params, model):
    if params.dims.n_alpha != model.n_expression:
        raise ValidationError(
            f"checkpoint edits {params.dims.n_alpha} expression slots but "
            f"the model has {model.n_expression}")


def cmd_render(args) -> int:
    started = time.monotonic()
    params, _ = load_checkpoint(args.checkpoint)
    assets = _load_artifacts(args.artifacts)
    model = assets["model"]
    _checkpoint_against_model(params, model)
    out_dir = _prepare_out(args.out, ["before.obj", "before.ppm",
                                      "after.obj", "after.ppm"], args.force)

    state = eval_states(args.seed, 1, params.dims)[0]
    before = _mesh_for_alpha(model, state.alpha)
    after = _mesh_for_alpha(model, apply_edit(params, state).alpha)
    written = (_render_pair(out_dir, model, "before", before)
               + _render_pair(out_dir, model, "after", after))
    write_manifest(out_dir, "render", "", args.seed, written, started)
    print(f"rendered before/after pair in {out_dir}")
    return 0


def cmd_eval(args) -> int:
    started = time.monotonic()
    params, _ = load_checkpoint(args.checkpoint)
    assets = _load_artifacts(args.artifacts)
    model = assets["model"]
    _checkpoint_against_model(params, model)
    out_dir = _prepare_out(args.out, ["metrics.csv"], args.force)

    states = eval_states(args.seed, args.batch, params.dims)
    edited = [apply_edit(params, s) for s in states]
    template = neutral_template(model)
    embeddings = [synth_embedding(assets["gen"], e.w,
                                  _mesh_for_alpha(model, e.alpha), template)
                  for e in edited]

    specs = desk_expression_specs()
    lines = ["expression,au_accuracy,clip_score"]
    for name in EXPRESSIONS:
        acc = edit_au_accuracy(model, params, specs[name], assets["rules"],
                               seed=args.seed, n_states=args.batch)
        e_t = assets["fixture"].get(f"text:{name}")
        score = float(np.mean([clip_score(e, e_t) for e in embeddings]))
        lines.append(f"{name},{acc!r},{score!r}")
    (out_dir / "metrics.csv").write_text("\n".join(lines) + "\n")
    write_manifest(out_dir, "eval", "", args.seed,
                   [out_dir / "metrics.csv"], started)
    print("\n".join(lines))
    return 0


def _parse_lambdas(text) -> list:
    if text is None:
        return list(DEFAULT_LAMBDA_GRID)
    try:
        values = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"--lambdas: {exc}") from exc
    if not values:
        raise ConfigError("--lambdas must name at least one value")
    return values


def cmd_sweep(args) -> int:
    started = time.monotonic()
    config = _config_from_args(args)
    assets = _load_artifacts(Path(args.config).parent)
    lambdas = _parse_lambdas(args.lambdas)
    specs = desk_expression_specs()
    if config.expression_name not in specs:
        raise ConfigError(
            f"no detector spec for expression {config.expression_name!r}; "
            f"known: {sorted(specs)}")
    spec = specs[config.expression_name]
    names = ["sweep.csv"] + (["sweep_stats.json"] if len(lambdas) > 1 else [])
    out_dir = _prepare_out(args.out, names, args.force)

    if len(lambdas) == 1:
        run_config = with_overrides(config, lambda_id=lambdas[0])
        trained, history = train_expression(
            assets["model"], init_mapper_params(seed=config.seed),
            assets["gen"], assets["enc"], assets["subspace"],
            assets["fixture"], assets["refs"], run_config)
        acc = edit_au_accuracy(assets["model"], trained, spec,
                               assets["rules"], seed=config.seed)
        rows, stats = [SweepRow(lambda_id=lambdas[0],
                                l_id=history[-1].l_id, au_accuracy=acc)], None
    else:
        rows, stats = sensitivity_sweep(
            assets["model"], init_mapper_params(seed=config.seed),
            assets["gen"], assets["enc"], assets["subspace"],
            assets["fixture"], assets["refs"], config, lambdas,
            assets["rules"], spec, eval_seed=config.seed)

    write_sweep_csv(rows, out_dir / "sweep.csv")
    written = [out_dir / "sweep.csv"]
    if stats is not None:
        with open(out_dir / "sweep_stats.json", "w") as fh:
            json.dump(stats, fh, sort_keys=True, indent=1)
            fh.write("\n")
        written.append(out_dir / "sweep_stats.json")
    write_manifest(out_dir, "sweep", args.config, config.seed, written,
                   started)
    for row in rows:
        print(f"lambda_id {row.lambda_id:.2f}: L_ID {row.l_id:.6f}, "
              f"accuracy {row.au_accuracy:.2f}")
    if stats is not None:
        print(f"spearman L_ID {stats['spearman_l_id']:+.3f}, "
              f"accuracy {stats['spearman_au_accuracy']:+.3f}")
    return 0


def cmd_compose(args) -> int:
    started = time.monotonic()
    if not args.checkpoints:
        raise ConfigError("empty composition: name at least one checkpoint")
    loaded = [load_checkpoint(p) for p in args.checkpoints]
    assets = _load_artifacts(args.artifacts)
    model = assets["model"]
    dims = loaded[0][0].dims
    for (params, _), path in zip(loaded, args.checkpoints):
        _checkpoint_against_model(params, model)
        if params.dims != dims:
            raise ValidationError(
                f"{path}: checkpoint dims differ from the first checkpoint")
    out_dir = _prepare_out(args.out, ["before.obj", "before.ppm",
                                      "composed.obj", "composed.ppm",
                                      "composed_alpha.json"], args.force)

    state = eval_states(args.seed, 1, dims)[0]
    composed = compose_edits([params for params, _ in loaded], state)
    before = _mesh_for_alpha(model, state.alpha)
    after = _mesh_for_alpha(model, composed.alpha)
    written = (_render_pair(out_dir, model, "before", before)
               + _render_pair(out_dir, model, "composed", after))
    with open(out_dir / "composed_alpha.json", "w") as fh:
        json.dump({"alpha": composed.alpha.tolist(),
                   "checkpoints": [str(p) for p in args.checkpoints]},
                  fh, indent=1)
        fh.write("\n")
    written.append(out_dir / "composed_alpha.json")
    write_manifest(out_dir, "compose", "", args.seed, written, started)
    print(f"composed {len(loaded)} edits; alpha = "
          + ", ".join(f"{v:+.3f}" for v in composed.alpha))
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expredit",
        description="Text-guided expression editing on a morphable mesh "
                    "model, desk scale.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="synthesize model, fixture, surrogate "
                                    "and rule files")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_init)

    def add_config_flags(p):
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--gamma", type=float, default=None)
        p.add_argument("--no-ref", action="store_true", dest="no_ref")
        p.add_argument("--force", action="store_true")

    p = sub.add_parser("fit", help="train one expression mapper")
    add_config_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("render", help="before/after mesh and image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="detector accuracy and score table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--artifacts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="identity-weight sensitivity sweep")
    add_config_flags(p)
    p.add_argument("--lambdas", default=None,
                   help="comma-separated weights (default: the 0.05..0.30 "
                        "grid)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compose", help="apply checkpoints in sequence")
    p.add_argument("--checkpoints", nargs="*", default=[])
    p.add_argument("--artifacts", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_compose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericAbortError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (DegenerateInputError, SingularAugmentationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ExpreditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
