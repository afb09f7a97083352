"""CLI tests: artifact generation and reuse, manifest checksums, flag
precedence, exit-code mapping, and the render/eval/compose wrappers.

main() is called in process with argument lists; no subprocesses."""

import json

import numpy as np
import pytest

from expredit.cli import (
    ARTIFACT_FILES, MANIFEST_NAME, config_name, load_manifest, main,
    verify_manifest,
)
from expredit.errors import ValidationError
from expredit.evaluation import load_au_rules
from expredit.mappers import MapperDims, init_mapper_params, save_checkpoint
from expredit.morphable import load_model, load_obj
from expredit.pipeline import load_config, read_loss_csv
from expredit.surrogates import load_ppm

ALL_INIT_FILES = sorted(
    list(ARTIFACT_FILES.values())
    + [config_name(n) for n in ("smile", "angry", "sad", "close_eyes",
                                "raise_brow", "frown_brow")]
    + [MANIFEST_NAME])


@pytest.fixture(scope="module")
def assets(tmp_path_factory):
    out = tmp_path_factory.mktemp("assets")
    assert main(["init", "--out", str(out), "--seed", "1"]) == 0
    return out


@pytest.fixture(scope="module")
def smile_run(tmp_path_factory, assets):
    out = tmp_path_factory.mktemp("smile_run")
    code = main(["fit", "--config", str(assets / "config_smile.json"),
                 "--out", str(out), "--steps", "40"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def identity_ckpt(tmp_path_factory):
    path = tmp_path_factory.mktemp("ident") / "checkpoint.json"
    save_checkpoint(init_mapper_params(seed=1), path)
    return path


# ---------------------------------------------------------------------------
# init


def test_init_writes_expected_files(assets):
    assert sorted(p.name for p in assets.iterdir()) == ALL_INIT_FILES
    model = load_model(assets / "model.json")
    assert model.n_vertices == 64
    config = load_config(assets / "config_smile.json")
    assert config.expression_name == "smile"
    assert config.seed == 1
    assert len(load_au_rules(assets / "au_rules.json")) == 10


def test_init_is_byte_deterministic(tmp_path, assets):
    other = tmp_path / "again"
    assert main(["init", "--out", str(other), "--seed", "1"]) == 0
    for name in ALL_INIT_FILES:
        if name == MANIFEST_NAME:
            continue
        assert ((other / name).read_bytes()
                == (assets / name).read_bytes()), name
    a = load_manifest(assets / MANIFEST_NAME)
    b = load_manifest(other / MANIFEST_NAME)
    assert a["artifacts"] == b["artifacts"]


def test_init_refuses_existing_without_force(tmp_path, capsys):
    out = tmp_path / "x"
    assert main(["init", "--out", str(out), "--seed", "1"]) == 0
    assert main(["init", "--out", str(out), "--seed", "2"]) == 4
    assert "--force" in capsys.readouterr().err


def test_init_force_overwrites_with_new_checksums(tmp_path):
    out = tmp_path / "x"
    assert main(["init", "--out", str(out), "--seed", "1"]) == 0
    first = load_manifest(out / MANIFEST_NAME)["artifacts"]
    assert main(["init", "--out", str(out), "--seed", "2", "--force"]) == 0
    second = load_manifest(out / MANIFEST_NAME)["artifacts"]
    assert first != second


def test_init_creates_missing_nested_dir(tmp_path):
    out = tmp_path / "a" / "b" / "c"
    assert main(["init", "--out", str(out), "--seed", "1"]) == 0
    assert (out / "model.json").exists()


# ---------------------------------------------------------------------------
# manifests


def test_manifest_verifies_after_run(assets):
    doc = verify_manifest(assets / MANIFEST_NAME)
    assert doc["command"] == "init"
    assert doc["seed"] == 1
    assert set(doc["artifacts"]) == set(ALL_INIT_FILES) - {MANIFEST_NAME}


def test_manifest_detects_tampering(tmp_path):
    out = tmp_path / "x"
    assert main(["init", "--out", str(out), "--seed", "1"]) == 0
    target = out / "reference_alphas.json"
    target.write_text(target.read_text() + " ")
    with pytest.raises(ValidationError, match="checksum mismatch"):
        verify_manifest(out / MANIFEST_NAME)


def test_manifest_detects_missing_artifact(tmp_path):
    out = tmp_path / "x"
    assert main(["init", "--out", str(out), "--seed", "1"]) == 0
    (out / "au_rules.json").unlink()
    with pytest.raises(ValidationError, match="missing"):
        verify_manifest(out / MANIFEST_NAME)


def test_load_manifest_rejects_incomplete(tmp_path):
    path = tmp_path / MANIFEST_NAME
    path.write_text('{"command": "init"}')
    with pytest.raises(ValidationError):
        load_manifest(path)


# ---------------------------------------------------------------------------
# fit


def test_fit_outputs_checkpoint_loss_and_manifest(smile_run):
    assert sorted(p.name for p in smile_run.iterdir()) == [
        "checkpoint.json", "loss.csv", MANIFEST_NAME]
    history = read_loss_csv(smile_run / "loss.csv")
    assert len(history) == 40
    assert history[-1].l_total < history[0].l_total
    verify_manifest(smile_run / MANIFEST_NAME)


def test_fit_is_reproducible(tmp_path, assets, smile_run):
    out = tmp_path / "rerun"
    assert main(["fit", "--config", str(assets / "config_smile.json"),
                 "--out", str(out), "--steps", "40"]) == 0
    for name in ("checkpoint.json", "loss.csv"):
        assert (out / name).read_bytes() == (smile_run / name).read_bytes()
    assert (load_manifest(out / MANIFEST_NAME)["artifacts"]
            == load_manifest(smile_run / MANIFEST_NAME)["artifacts"])


def test_fit_steps_flag_overrides_config(tmp_path, assets):
    out = tmp_path / "short"
    assert main(["fit", "--config", str(assets / "config_smile.json"),
                 "--out", str(out), "--steps", "3"]) == 0
    assert len(read_loss_csv(out / "loss.csv")) == 3


def test_fit_seed_flag_changes_run(tmp_path, assets, smile_run):
    out = tmp_path / "seeded"
    assert main(["fit", "--config", str(assets / "config_smile.json"),
                 "--out", str(out), "--steps", "40", "--seed", "9"]) == 0
    assert (out / "loss.csv").read_bytes() != (smile_run
                                               / "loss.csv").read_bytes()


def test_fit_no_ref_flag_runs_ablation(tmp_path, assets, smile_run):
    out = tmp_path / "noref"
    assert main(["fit", "--config", str(assets / "config_smile.json"),
                 "--out", str(out), "--steps", "40", "--no-ref"]) == 0
    assert (out / "loss.csv").read_bytes() != (smile_run
                                               / "loss.csv").read_bytes()


def test_fit_unknown_fixture_key_is_config_error(tmp_path, assets, capsys):
    bad = tmp_path / "bad.json"
    doc = json.loads((assets / "config_smile.json").read_text())
    doc["target_text_key"] = "text:nope"
    bad.write_text(json.dumps(doc))
    for name in ARTIFACT_FILES.values():
        (tmp_path / name).write_bytes((assets / name).read_bytes())
    code = main(["fit", "--config", str(bad), "--out",
                 str(tmp_path / "out")])
    assert code == 2
    assert "text:nope" in capsys.readouterr().err


def test_fit_unknown_config_field_is_config_error(tmp_path, assets, capsys):
    bad = tmp_path / "bad.json"
    doc = json.loads((assets / "config_smile.json").read_text())
    doc["momentum"] = 0.9
    bad.write_text(json.dumps(doc))
    code = main(["fit", "--config", str(bad), "--out",
                 str(tmp_path / "out")])
    assert code == 2
    assert "momentum" in capsys.readouterr().err


def test_fit_missing_config_is_io_error(tmp_path, capsys):
    code = main(["fit", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "out")])
    assert code == 4


def test_fit_nan_reference_aborts_with_code_3(tmp_path, assets, capsys):
    for name in ARTIFACT_FILES.values():
        (tmp_path / name).write_bytes((assets / name).read_bytes())
    (tmp_path / "config_smile.json").write_bytes(
        (assets / "config_smile.json").read_bytes())
    doc = json.loads((tmp_path / "reference_alphas.json").read_text())
    doc["alphas"]["alpha:smile"] = [float("nan")] * doc["n_alpha"]
    (tmp_path / "reference_alphas.json").write_text(json.dumps(doc))
    code = main(["fit", "--config", str(tmp_path / "config_smile.json"),
                 "--out", str(tmp_path / "out"), "--steps", "5"])
    assert code == 3
    err = capsys.readouterr().err
    assert "L_CLIP" in err and "step 0" in err


# ---------------------------------------------------------------------------
# render


def test_render_identity_checkpoint_pairs_identical(tmp_path, assets,
                                                    identity_ckpt):
    out = tmp_path / "render"
    assert main(["render", "--checkpoint", str(identity_ckpt),
                 "--artifacts", str(assets), "--out", str(out)]) == 0
    assert (out / "before.obj").read_bytes() == (out
                                                 / "after.obj").read_bytes()
    assert (out / "before.ppm").read_bytes() == (out
                                                 / "after.ppm").read_bytes()
    load_ppm(out / "before.ppm")


def test_render_trained_checkpoint_moves_mouth(tmp_path, assets, smile_run):
    out = tmp_path / "render"
    assert main(["render", "--checkpoint",
                 str(smile_run / "checkpoint.json"),
                 "--artifacts", str(assets), "--out", str(out)]) == 0
    model = load_model(assets / "model.json")
    before = load_obj(out / "before.obj")
    after = load_obj(out / "after.obj")
    mouth = model.region_indices("mouth")
    disp = after.vertices[mouth] - before.vertices[mouth]
    assert float(np.linalg.norm(disp, axis=1).mean()) > 0.0
    assert (out / "before.obj").read_bytes() != (out
                                                 / "after.obj").read_bytes()


def test_render_invalid_checkpoint_json_is_error(tmp_path, assets, capsys):
    bad = tmp_path / "broken.json"
    bad.write_text("{broken")
    code = main(["render", "--checkpoint", str(bad),
                 "--artifacts", str(assets), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "JSON" in capsys.readouterr().err


def test_render_dim_mismatch_is_error(tmp_path, assets, capsys):
    small = tmp_path / "small.json"
    save_checkpoint(init_mapper_params(seed=1, dims=MapperDims(n_alpha=4)),
                    small)
    code = main(["render", "--checkpoint", str(small),
                 "--artifacts", str(assets), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "expression slots" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# eval


def test_eval_identity_checkpoint_zero_accuracy(tmp_path, assets,
                                                identity_ckpt):
    out = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(identity_ckpt),
                 "--artifacts", str(assets), "--out", str(out),
                 "--batch", "6"]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "expression,au_accuracy,clip_score"
    assert len(lines) == 7
    for line in lines[1:]:
        name, acc, score = line.split(",")
        assert float(acc) == 0.0
        assert float(score) >= 0.0
    verify_manifest(out / MANIFEST_NAME)


# ---------------------------------------------------------------------------
# sweep


def test_sweep_single_lambda_single_row_no_stats(tmp_path, assets):
    out = tmp_path / "sweep1"
    assert main(["sweep", "--config", str(assets / "config_smile.json"),
                 "--out", str(out), "--steps", "5",
                 "--lambdas", "0.2"]) == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 2
    assert not (out / "sweep_stats.json").exists()


def test_sweep_two_lambdas_writes_stats(tmp_path, assets):
    out = tmp_path / "sweep2"
    assert main(["sweep", "--config", str(assets / "config_smile.json"),
                 "--out", str(out), "--steps", "5",
                 "--lambdas", "0.05,0.30"]) == 0
    stats = json.loads((out / "sweep_stats.json").read_text())
    assert set(stats) == {"spearman_l_id", "spearman_au_accuracy"}
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3
    verify_manifest(out / MANIFEST_NAME)


def test_sweep_bad_lambda_list_is_config_error(tmp_path, assets, capsys):
    code = main(["sweep", "--config", str(assets / "config_smile.json"),
                 "--out", str(tmp_path / "o"), "--lambdas", "0.1,oops"])
    assert code == 2


def test_sweep_unknown_expression_is_config_error(tmp_path, assets, capsys):
    bad = tmp_path / "bad.json"
    doc = json.loads((assets / "config_smile.json").read_text())
    doc["expression_name"] = "jaw_open"
    bad.write_text(json.dumps(doc))
    for name in ARTIFACT_FILES.values():
        (tmp_path / name).write_bytes((assets / name).read_bytes())
    code = main(["sweep", "--config", str(bad),
                 "--out", str(tmp_path / "o"), "--lambdas", "0.1,0.2"])
    assert code == 2
    assert "jaw_open" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# compose


def test_compose_zero_checkpoints_is_error(tmp_path, assets, capsys):
    code = main(["compose", "--artifacts", str(assets),
                 "--out", str(tmp_path / "o")])
    assert code == 2
    assert "empty composition" in capsys.readouterr().err


def test_compose_single_checkpoint_writes_render(tmp_path, assets,
                                                 smile_run):
    out = tmp_path / "comp"
    assert main(["compose", "--checkpoints",
                 str(smile_run / "checkpoint.json"),
                 "--artifacts", str(assets), "--out", str(out)]) == 0
    doc = json.loads((out / "composed_alpha.json").read_text())
    assert len(doc["alpha"]) == 8
    assert doc["checkpoints"] == [str(smile_run / "checkpoint.json")]
    verify_manifest(out / MANIFEST_NAME)


def test_compose_mismatched_dims_rejected(tmp_path, assets, smile_run,
                                          capsys):
    small = tmp_path / "small.json"
    save_checkpoint(init_mapper_params(seed=1, dims=MapperDims(n_alpha=4)),
                    small)
    code = main(["compose", "--checkpoints",
                 str(smile_run / "checkpoint.json"), str(small),
                 "--artifacts", str(assets), "--out", str(tmp_path / "o")])
    assert code == 2


def test_output_refusal_applies_to_fit(tmp_path, assets, smile_run, capsys):
    code = main(["fit", "--config", str(assets / "config_smile.json"),
                 "--out", str(smile_run), "--steps", "3"])
    assert code == 4
    assert "--force" in capsys.readouterr().err
