"""Subspace algebra tests with independent oracles.

The projection oracle solves the normal equations over the raw basis;
the augmentation oracle evaluates the rescaling formula with scalar
python loops. Neither shares code with the implementation.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from expredit.embedding import (
    EXPRESSIONS, EmbeddingFixture, ExpressionSubspace, augment, cosine,
    load_embedding_fixture, orthonormalize, project, save_embedding_fixture,
    synthesize_desk_fixture, target_embedding,
)
from expredit.errors import (
    DegenerateInputError, SingularAugmentationError, ValidationError,
)

RNG = np.random.default_rng(424242)


def random_subspace(d_e, n):
    return ExpressionSubspace(RNG.normal(size=(n, d_e)))


def normal_equations_projection(raw_basis, e):
    """Least-squares projection via the normal equations over the raw basis."""
    A = raw_basis.T  # columns are basis vectors
    coeffs = np.linalg.solve(A.T @ A, A.T @ e)
    return A @ coeffs


def augment_scalar_oracle(basis, e_p, e_t, gamma):
    """Term-by-term scalar evaluation of the augmentation formula."""
    d_e = len(e_p)
    n = len(basis)
    c = [sum(float(e_p[i]) * float(basis[k][i]) for i in range(d_e))
         for k in range(n)]
    d = [sum(float(e_t[i]) * float(basis[k][i]) for i in range(d_e))
         for k in range(n)]
    out = [0.0] * d_e
    for k in range(n):
        w = c[k] - gamma * abs(c[k])
        for i in range(d_e):
            out[i] += w * float(basis[k][i])
    scale = gamma * sum(abs(ck) for ck in c) / sum(d)
    for i in range(d_e):
        out[i] += scale * float(e_t[i])
    return np.array(out)


class TestOrthonormalize:
    def test_gram_matrix_identity(self):
        q = orthonormalize(RNG.normal(size=(6, 32)))
        gram = q @ q.T
        assert np.max(np.abs(gram - np.eye(len(q)))) < 1e-12

    def test_span_covers_raw_basis(self):
        raw = RNG.normal(size=(5, 16))
        q = orthonormalize(raw)
        for b in raw:
            recon = q.T @ (q @ b)
            assert np.linalg.norm(b - recon) < 1e-9

    def test_first_vector_direction_kept(self):
        raw = RNG.normal(size=(3, 8))
        q = orthonormalize(raw)
        c = cosine(q[0], raw[0])
        assert abs(c - 1.0) < 1e-12

    def test_dependent_vector_dropped(self):
        raw = RNG.normal(size=(3, 8))
        stacked = np.vstack([raw, raw[0] + raw[1]])
        q = orthonormalize(stacked)
        assert q.shape[0] == 3

    def test_projector_stable_under_permutation(self):
        raw = RNG.normal(size=(5, 12))
        e = RNG.normal(size=12)
        p1, _ = project(ExpressionSubspace(raw), e)
        p2, _ = project(ExpressionSubspace(raw[::-1].copy()), e)
        assert np.max(np.abs(p1 - p2)) < 1e-8


class TestProject:
    def test_in_span_input_has_zero_residual(self):
        sub = random_subspace(16, 4)
        e = sub.ortho_basis.T @ RNG.normal(size=4)
        _, r = project(sub, e)
        assert np.linalg.norm(r) < 1e-9

    def test_orthogonal_input_projects_to_zero(self):
        sub = ExpressionSubspace(np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]]))
        e = np.array([0.0, 0.0, 2.0, -1.0])
        e_p, r = project(sub, e)
        assert np.linalg.norm(e_p) < 1e-12
        assert np.array_equal(r, e)

    def test_matches_normal_equations_oracle(self):
        for _ in range(100):
            d_e = int(RNG.integers(4, 33))
            n = int(RNG.integers(1, min(9, d_e + 1)))
            raw = RNG.normal(size=(n, d_e))
            e = RNG.normal(size=d_e)
            e_p, _ = project(ExpressionSubspace(raw), e)
            oracle = normal_equations_projection(raw, e)
            assert np.max(np.abs(e_p - oracle)) < 1e-8

    def test_residual_orthogonal_to_projection(self):
        sub = random_subspace(24, 5)
        e = RNG.normal(size=24)
        e_p, r = project(sub, e)
        assert abs(float(e_p @ r)) < 1e-9

    def test_dimension_mismatch(self):
        sub = random_subspace(8, 2)
        with pytest.raises(ValidationError):
            project(sub, np.zeros(9))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_projection_idempotent_and_decomposition(seed):
    rng = np.random.default_rng(seed)
    sub = ExpressionSubspace(rng.normal(size=(3, 10)))
    e = rng.normal(size=10)
    e_p, r = project(sub, e)
    e_pp, _ = project(sub, e_p)
    assert np.max(np.abs(e_pp - e_p)) < 1e-9
    assert np.max(np.abs((e_p + r) - e)) < 1e-12


class TestAugment:
    def test_gamma_zero_returns_projection(self):
        sub = random_subspace(16, 5)
        e_p, _ = project(sub, RNG.normal(size=16))
        out = augment(sub, e_p, RNG.normal(size=16), 0.0)
        assert np.max(np.abs(out - e_p)) < 1e-12

    def test_scalar_loop_oracle(self):
        for _ in range(100):
            d_e = int(RNG.integers(4, 17))
            n = int(RNG.integers(1, min(5, d_e + 1)))
            sub = random_subspace(d_e, n)
            e_p, _ = project(sub, RNG.normal(size=d_e))
            e_t = RNG.normal(size=d_e)
            if abs(float((sub.ortho_basis @ e_t).sum())) < 1e-6:
                continue
            gamma = float(RNG.uniform(0, 2))
            out = augment(sub, e_p, e_t, gamma)
            oracle = augment_scalar_oracle(sub.ortho_basis, e_p, e_t, gamma)
            assert np.max(np.abs(out - oracle)) < 1e-12

    def test_hand_case_target_equals_basis_vector(self):
        # orthonormal pair; e_p = e_t = first basis vector, gamma = 1:
        # coefficients c=(1,0), d=(1,0) make the output exactly b_1
        raw = np.zeros((2, 4))
        raw[0, 0] = 1.0
        raw[1, 1] = 1.0
        sub = ExpressionSubspace(raw)
        out = augment(sub, raw[0], raw[0], 1.0)
        assert np.max(np.abs(out - raw[0])) < 1e-12

    def test_singular_target_rejected(self):
        raw = np.zeros((2, 6))
        raw[0, 0] = 1.0
        raw[1, 1] = 1.0
        sub = ExpressionSubspace(raw)
        e_t = np.zeros(6)
        e_t[4] = 3.0  # orthogonal to the span
        with pytest.raises(SingularAugmentationError):
            augment(sub, raw[0], e_t, 1.0)

    def test_negative_gamma_rejected(self):
        sub = random_subspace(8, 2)
        e_p, _ = project(sub, RNG.normal(size=8))
        with pytest.raises(ValidationError):
            augment(sub, e_p, RNG.normal(size=8), -0.5)

    def test_out_of_span_e_p_rejected(self):
        raw = np.zeros((1, 6))
        raw[0, 0] = 1.0
        sub = ExpressionSubspace(raw)
        bad = np.array([1.0, 2.0, 0, 0, 0, 0])
        with pytest.raises(ValidationError):
            augment(sub, bad, raw[0], 1.0)

    def test_raw_basis_flag_matches_raw_oracle(self):
        raw = RNG.normal(size=(3, 8))  # deliberately non-orthonormal
        sub = ExpressionSubspace(raw)
        e_p, _ = project(sub, RNG.normal(size=8))
        e_t = RNG.normal(size=8)
        gamma = 0.8
        out = augment(sub, e_p, e_t, gamma, use_raw_basis=True)
        oracle = augment_scalar_oracle(raw, e_p, e_t, gamma)
        assert np.max(np.abs(out - oracle)) < 1e-12


class TestTargetEmbedding:
    def test_gamma_zero_is_identity(self):
        for _ in range(50):
            sub = random_subspace(32, 6)
            e_img = RNG.normal(size=32)
            e_t = RNG.normal(size=32)
            out = target_embedding(sub, e_img, e_t, 0.0)
            assert np.max(np.abs(out - e_img)) < 1e-9

    def test_in_span_input_equals_augment(self):
        sub = random_subspace(12, 3)
        e_img = sub.ortho_basis.T @ RNG.normal(size=3)
        e_t = RNG.normal(size=12)
        out = target_embedding(sub, e_img, e_t, 1.3)
        e_p, _ = project(sub, e_img)
        ref = augment(sub, e_p, e_t, 1.3)
        assert np.max(np.abs(out - ref)) < 1e-9

    def test_oracle_composition(self):
        for _ in range(50):
            sub = random_subspace(8, 3)
            e_img = RNG.normal(size=8)
            e_t = RNG.normal(size=8)
            if abs(float((sub.ortho_basis @ e_t).sum())) < 1e-6:
                continue
            out = target_embedding(sub, e_img, e_t, 0.7)
            e_p_oracle = normal_equations_projection(sub.raw_basis, e_img)
            r_oracle = e_img - e_p_oracle
            aug_oracle = augment_scalar_oracle(sub.ortho_basis, e_p_oracle,
                                               e_t, 0.7)
            assert np.max(np.abs(out - (aug_oracle + r_oracle))) < 1e-8

    def test_residual_independent_of_target_and_gamma(self):
        sub = random_subspace(16, 4)
        e_img = RNG.normal(size=16)
        e_p, _ = project(sub, e_img)
        outs = []
        for gamma, s in [(0.5, 1), (1.5, 2), (0.0, 3)]:
            e_t = np.random.default_rng(s).normal(size=16)
            out = target_embedding(sub, e_img, e_t, gamma)
            aug = augment(sub, e_p, e_t, gamma)
            outs.append(out - aug)  # reinjected residual
        for r in outs[1:]:
            assert np.max(np.abs(r - outs[0])) < 1e-12


class TestCosine:
    def test_identical_vectors(self):
        v = RNG.normal(size=9)
        assert cosine(v, v) == 1.0

    def test_opposite_vectors(self):
        v = RNG.normal(size=9)
        assert cosine(v, -v) == -1.0

    def test_hand_geometry(self):
        c = cosine(np.array([1.0, 0, 0]), np.array([1.0, 1.0, 0]))
        assert abs(c - 1.0 / np.sqrt(2)) < 1e-12

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateInputError):
            cosine(np.zeros(4), np.ones(4))

    def test_scale_invariance(self):
        a, b = RNG.normal(size=7), RNG.normal(size=7)
        assert abs(cosine(a, b) - cosine(3.7 * a, 0.2 * b)) < 1e-12


class TestFixtureIO:
    def test_round_trip_preserves_order_and_values(self, tmp_path):
        fx = synthesize_desk_fixture(seed=1)
        path = tmp_path / "fx.json"
        save_embedding_fixture(fx, path)
        back = load_embedding_fixture(path)
        assert back.d_e == fx.d_e
        assert back.normalized == fx.normalized
        assert list(back.values) == list(fx.values)
        for k in fx.values:
            assert np.max(np.abs(back.values[k] - fx.values[k])) < 1e-15

    def test_wrong_length_entry_named(self, tmp_path):
        path = tmp_path / "fx.json"
        path.write_text('{"d_e": 4, "normalized": false, '
                        '"embeddings": {"text:x": [1, 2, 3]}}')
        with pytest.raises(ValidationError, match="text:x"):
            load_embedding_fixture(path)

    def test_norm_violation_rejected(self, tmp_path):
        path = tmp_path / "fx.json"
        path.write_text('{"d_e": 2, "normalized": true, '
                        '"embeddings": {"text:x": [3.0, 4.0]}}')
        with pytest.raises(ValidationError, match="norm"):
            load_embedding_fixture(path)

    def test_unknown_key_lookup_names_key(self):
        fx = synthesize_desk_fixture(seed=1)
        with pytest.raises(ValidationError, match="text:shrug"):
            fx.get("text:shrug")

    def test_missing_header_field(self, tmp_path):
        path = tmp_path / "fx.json"
        path.write_text('{"normalized": true, "embeddings": {}}')
        with pytest.raises(ValidationError, match="d_e"):
            load_embedding_fixture(path)


class TestDeskFixture:
    def test_deterministic(self):
        a = synthesize_desk_fixture(seed=9)
        b = synthesize_desk_fixture(seed=9)
        assert list(a.values) == list(b.values)
        for k in a.values:
            assert np.array_equal(a.values[k], b.values[k])

    def test_contains_basis_and_text_per_expression(self):
        fx = synthesize_desk_fixture(seed=1)
        for name in EXPRESSIONS:
            assert f"basis:{name}" in fx.values
            assert f"text:{name}" in fx.values

    def test_all_unit_norm(self):
        fx = synthesize_desk_fixture(seed=1)
        for v in fx.values.values():
            assert abs(np.linalg.norm(v) - 1.0) < 1e-12

    def test_targets_not_singular_against_subspace(self):
        fx = synthesize_desk_fixture(seed=1)
        sub = fx.subspace()
        for name in EXPRESSIONS:
            d = sub.ortho_basis @ fx.get(f"text:{name}")
            assert abs(float(d.sum())) > 0.1

    def test_subspace_uses_basis_entries_in_order(self):
        fx = synthesize_desk_fixture(seed=1)
        sub = fx.subspace()
        assert sub.raw_basis.shape == (len(EXPRESSIONS), fx.d_e)
        first = fx.get(f"basis:{EXPRESSIONS[0]}")
        assert np.array_equal(sub.raw_basis[0], first)


def test_expression_slots_align_with_mesh_model():
    from expredit.morphable import DESK_EXPRESSION_SLOTS
    assert DESK_EXPRESSION_SLOTS[:len(EXPRESSIONS)] == EXPRESSIONS
