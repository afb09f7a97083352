"""Round-trip acceptance: fixtures written by this tool must satisfy the
editing pipeline's own loader, and the pipeline must not depend on this
tool in any way."""

from pathlib import Path

import numpy as np
import pytest
from conftest import StubEncoder

from clip_fixture_exporter.export import export_fixture
from clip_fixture_exporter.prompts import EXPRESSION_PROMPTS, default_prompt_set

embedding = pytest.importorskip(
    "expredit.embedding", reason="round-trip check needs the pipeline package")


def test_exported_fixture_round_trips_through_pipeline_loader(tmp_path):
    path = tmp_path / "fixture.json"
    export_fixture(default_prompt_set(d_e=32), StubEncoder(), path)

    # the loader enforces the schema and, because the header says
    # normalized, rejects any norm off by more than 1e-6
    fixture = embedding.load_embedding_fixture(path)
    assert fixture.d_e == 32
    assert fixture.normalized
    assert len(fixture.values) == 2 * len(EXPRESSION_PROMPTS)
    for key, vec in fixture.values.items():
        assert abs(float(np.linalg.norm(vec)) - 1.0) <= 1e-6, key

    # the basis entries must actually span a usable subspace
    subspace = fixture.subspace()
    assert subspace.raw_basis.shape == (len(EXPRESSION_PROMPTS), 32)
    e_p, residual = embedding.project(subspace, fixture.get("text:smile"))
    assert np.allclose(e_p + residual, fixture.get("text:smile"))
    print("exporter round-trip: schema, norms and subspace all validate "
          "through the pipeline loader")


def test_pipeline_sources_never_mention_this_package():
    pipeline_dir = Path(embedding.__file__).parent
    sources = sorted(pipeline_dir.glob("*.py"))
    assert sources
    for source in sources:
        assert "clip_fixture_exporter" not in source.read_text(), source
    print(f"checked {len(sources)} pipeline modules: no dependency on "
          f"the exporter")
