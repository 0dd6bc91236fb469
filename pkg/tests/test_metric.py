import numpy as np
import pytest

from conftest import make_dataset, random_pair
from mopr.metric import (
    build_tilde_a,
    combined_features,
    mpr_closed_form_linear,
    mpr_exact_finite,
    mpr_rkhs,
    mpr_via_oracle,
    svd_context,
)
from mopr.similarity import Selection
from mopr.statclasses import all_cell_indicators, cell_indicator


def random_selection(rng, n, k):
    ind = np.zeros(n, dtype=int)
    ind[rng.choice(n, size=k, replace=False)] = 1
    return Selection(ind, k)


class TestTildeA:
    def test_direct_definition(self):
        ta = build_tilde_a(Selection(np.array([1, 0]), 1), m=2)
        assert ta.values.tolist() == [1.0, 0.0, -0.5, -0.5]

    def test_all_selected_symmetric(self):
        ta = build_tilde_a(Selection(np.ones(3, dtype=int), 3), m=3)
        assert ta.values == pytest.approx([1 / 3] * 3 + [-1 / 3] * 3)

    def test_mass_balance(self, rng):
        ta = build_tilde_a(random_selection(rng, 9, 4), m=6)
        assert float(ta.values.sum()) == pytest.approx(0.0, abs=1e-12)


class TestSvdContext:
    def test_orthonormal_columns(self, rng):
        ctx = svd_context(rng.standard_normal((8, 3)))
        gram = ctx.U_l.T @ ctx.U_l
        assert gram == pytest.approx(np.eye(ctx.l), abs=1e-8)
        assert np.all(np.diff(ctx.singular_values) <= 0)
        assert np.all(ctx.singular_values > 0)

    def test_rank_deficiency_truncated(self, rng):
        col = rng.standard_normal((6, 1))
        X = np.hstack([col, 2 * col])
        assert svd_context(X).l == 1

    def test_zero_matrix_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            svd_context(np.zeros((4, 2)))


class TestExactFinite:
    def test_matched_statistics_zero(self):
        d_r = make_dataset(np.zeros((4, 1)), [{"g": i % 2} for i in range(4)],
                           prefix="r")
        d_c = make_dataset(np.zeros((2, 1)), [{"g": i} for i in range(2)],
                           role="curated", prefix="c")
        sel = Selection(np.array([1, 1, 1, 1]), 4)
        rep = mpr_exact_finite(sel, d_r, d_c, all_cell_indicators({"g": 2}))
        assert rep.value == pytest.approx(0.0)

    def test_hand_enumerated_half(self):
        # retrieved (A,A,A,B) vs balanced A/B curation: gap = |0.5 - 0| = 0.5
        d_r = make_dataset(np.zeros((4, 1)), [{"g": 0}] * 3 + [{"g": 1}],
                           cards={"g": 2}, prefix="r")
        d_c = make_dataset(np.zeros((2, 1)), [{"g": 0}, {"g": 1}],
                           role="curated", prefix="c")
        sel = Selection(np.ones(4, dtype=int), 4)
        rep = mpr_exact_finite(sel, d_r, d_c, all_cell_indicators({"g": 2}))
        assert rep.value == pytest.approx(0.5)
        assert rep.witness.params["cell"] == {"g": 0}

    def test_negation_invariance_and_monotone_refinement(self, rng):
        d_r, d_c = random_pair(rng, 10, 6, 2)
        sel = random_selection(rng, 10, 4)
        small = [cell_indicator({"g": 0})]
        big = all_cell_indicators({"g": 2})
        v_small = mpr_exact_finite(sel, d_r, d_c, small).value
        v_big = mpr_exact_finite(sel, d_r, d_c, big).value
        assert v_big >= v_small - 1e-12
        # |gap| is symmetric under negating the indicator's sign convention
        assert mpr_exact_finite(sel, d_r, d_c, [cell_indicator({"g": 1})]).value == (
            pytest.approx(v_small)
        )

    def test_empty_class_rejected(self, rng):
        d_r, d_c = random_pair(rng, 4, 4, 2)
        with pytest.raises(ValueError, match="nonempty"):
            mpr_exact_finite(random_selection(rng, 4, 2), d_r, d_c, [])


class TestClosedFormLinear:
    def test_hand_svd_scalar_fixture(self):
        # retrieval rows {1, 2}, curated row {0}, k=1 selecting the first item:
        # tilde_a = [1, 0, -1], U = X/sqrt(5), value = sqrt(1/2)/sqrt(5)
        d_r = make_dataset([[1.0], [2.0]], prefix="r")
        d_c = make_dataset([[0.0]], role="curated", prefix="c")
        sel = Selection(np.array([1, 0]), 1)
        rep = mpr_closed_form_linear(sel, d_r, d_c, "embedding")
        assert rep.value == pytest.approx(np.sqrt(0.5) / np.sqrt(5.0))
        assert rep.value == pytest.approx(0.31622776601683794)

    def test_brute_force_unit_norm_scan(self):
        # same fixture: scan unit-norm linear statistics c(x) = w*x directly
        X = np.array([1.0, 2.0, 0.0])
        ta = np.array([1.0, 0.0, -1.0])
        target = np.sqrt(0.5)  # sqrt(mk/(m+k))
        best = 0.0
        for w in np.linspace(-5, 5, 20001):
            c = w * X
            norm = np.linalg.norm(c)
            if norm == 0:
                continue
            c = c * (target / norm)
            best = max(best, abs(float(c @ ta)))
        d_r = make_dataset([[1.0], [2.0]], prefix="r")
        d_c = make_dataset([[0.0]], role="curated", prefix="c")
        rep = mpr_closed_form_linear(Selection(np.array([1, 0]), 1), d_r, d_c,
                                     "embedding")
        assert rep.value == pytest.approx(best, abs=1e-9)

    def test_duplicated_rows_zero(self, rng):
        emb = rng.standard_normal((5, 3))
        d_r = make_dataset(emb, prefix="r")
        d_c = make_dataset(emb, role="curated", prefix="c")
        sel = Selection(np.ones(5, dtype=int), 5)
        assert mpr_closed_form_linear(sel, d_r, d_c, "embedding").value == (
            pytest.approx(0.0, abs=1e-12)
        )

    def test_upper_bound_one(self, rng):
        for _ in range(5):
            d_r, d_c = random_pair(rng, 12, 8, 4)
            sel = random_selection(rng, 12, 5)
            for view in ("labels", "embedding", "concat"):
                assert mpr_closed_form_linear(sel, d_r, d_c, view).value <= 1 + 1e-9

    def test_witness_attains_value(self, rng):
        d_r, d_c = random_pair(rng, 10, 7, 3)
        sel = random_selection(rng, 10, 4)
        rep = mpr_closed_form_linear(sel, d_r, d_c, "embedding")
        ta = build_tilde_a(sel, 7).values
        X = combined_features(d_r, d_c, "embedding")
        attained = abs(float(rep.witness.values_from_features(X) @ ta))
        assert attained == pytest.approx(rep.value, abs=1e-9)


class TestOracle:
    def test_linear_matches_closed_form(self, rng):
        for _ in range(10):
            n, m = int(rng.integers(6, 30)), int(rng.integers(5, 25))
            d_r, d_c = random_pair(rng, n, m, 3)
            sel = random_selection(rng, n, min(4, n))
            for view in ("labels", "embedding", "concat"):
                a = mpr_via_oracle(sel, d_r, d_c, "linear", view).value
                b = mpr_closed_form_linear(sel, d_r, d_c, view).value
                assert a == pytest.approx(b, abs=1e-9)

    def test_duplicated_rows_zero(self, rng):
        emb = rng.standard_normal((6, 2))
        labels = [{"g": i % 2} for i in range(6)]
        d_r = make_dataset(emb, labels, prefix="r")
        d_c = make_dataset(emb, labels, role="curated", prefix="c")
        sel = Selection(np.ones(6, dtype=int), 6)
        rep = mpr_via_oracle(sel, d_r, d_c, "linear", "embedding")
        assert rep.value == pytest.approx(0.0, abs=1e-9)

    def test_tree_dominates_single_cell_indicators(self, rng):
        # a depth >= #axes tree on labels can express any cell indicator
        d_r, d_c = random_pair(rng, 20, 15, 2)
        sel = random_selection(rng, 20, 8)
        finite = mpr_exact_finite(sel, d_r, d_c, all_cell_indicators({"g": 2}))
        norm = finite.witness
        # compare in the normalized class: indicator scaled to C'
        from mopr.statclasses import normalize_to_cprime

        normalized_ind = normalize_to_cprime(norm, d_r, d_c, sel.k)
        ta = build_tilde_a(sel, 15).values
        ind_val = abs(float(
            np.concatenate([normalized_ind.values(d_r), normalized_ind.values(d_c)])
            @ ta
        ))
        tree_val = mpr_via_oracle(sel, d_r, d_c, "tree", "labels", tree_depth=2).value
        assert tree_val >= ind_val - 1e-9

    def test_mlp_runs_and_reports(self, rng):
        d_r, d_c = random_pair(rng, 8, 6, 2)
        sel = random_selection(rng, 8, 3)
        rep = mpr_via_oracle(sel, d_r, d_c, "mlp", "concat", mlp_epochs=50)
        assert rep.value >= 0.0
        assert rep.diagnostics["oracle"] == "mlp"

    def test_unknown_oracle(self, rng):
        d_r, d_c = random_pair(rng, 5, 4, 2)
        with pytest.raises(ValueError, match="oracle"):
            mpr_via_oracle(random_selection(rng, 5, 2), d_r, d_c, "svm")


class TestRkhs:
    def test_single_identical_point(self):
        d_r = make_dataset([[1.0, 2.0]], prefix="r")
        d_c = make_dataset([[1.0, 2.0]], role="curated", prefix="c")
        sel = Selection(np.array([1]), 1)
        for kernel, sigma in (("linear", None), ("gaussian", 1.0)):
            assert mpr_rkhs(sel, d_r, d_c, kernel, sigma, "embedding").value == (
                pytest.approx(0.0, abs=1e-12)
            )

    def test_linear_kernel_is_mean_gap_norm(self):
        # 3-point fixture expanded by hand
        d_r = make_dataset([[1.0, 0.0], [0.0, 1.0]], prefix="r")
        d_c = make_dataset([[1.0, 1.0]], role="curated", prefix="c")
        sel = Selection(np.array([1, 1]), 2)
        rep = mpr_rkhs(sel, d_r, d_c, "linear", None, "embedding")
        mean_r = np.array([0.5, 0.5])
        mean_c = np.array([1.0, 1.0])
        assert rep.value == pytest.approx(float(np.linalg.norm(mean_r - mean_c)))

    def test_linear_identity_random(self, rng):
        for _ in range(5):
            d_r, d_c = random_pair(rng, 10, 7, 3)
            sel = random_selection(rng, 10, 4)
            rep = mpr_rkhs(sel, d_r, d_c, "linear", None, "embedding")
            ref = np.linalg.norm(
                d_r.embeddings[sel.indices].mean(axis=0) - d_c.embeddings.mean(axis=0)
            )
            assert rep.value == pytest.approx(float(ref), abs=1e-9)

    def test_gaussian_matched_multisets(self, rng):
        emb = rng.standard_normal((6, 3))
        perm = [3, 1, 5, 0, 4, 2]
        d_r = make_dataset(emb, prefix="r")
        d_c = make_dataset(emb[perm], role="curated", prefix="c")
        sel = Selection(np.ones(6, dtype=int), 6)
        assert mpr_rkhs(sel, d_r, d_c, "gaussian", 0.7, "embedding").value == (
            pytest.approx(0.0, abs=1e-9)
        )

    def test_gaussian_requires_sigma(self, rng):
        d_r, d_c = random_pair(rng, 4, 3, 2)
        sel = Selection(np.array([1, 1, 0, 0]), 2)
        with pytest.raises(ValueError, match="sigma"):
            mpr_rkhs(sel, d_r, d_c, "gaussian", None, "embedding")


class TestReportSerialization:
    def test_report_json_fields(self, rng):
        d_r, d_c = random_pair(rng, 6, 4, 2)
        sel = random_selection(rng, 6, 2)
        rep = mpr_closed_form_linear(sel, d_r, d_c, "labels")
        doc = rep.to_dict()
        assert set(doc) == {"value", "method", "witness", "diagnostics"}
        assert doc["method"] == "closed-linear"
        assert isinstance(rep.to_json(), str)
