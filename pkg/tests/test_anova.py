import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cfbench import anova
from cfbench.errors import InvalidDof, PerfectCollinearity, SingleLevelFactor, TooFewRows, ValidationError
from cfbench.evaluation import ResultsRow, ResultsTable

DATASETS = ("ASTA", "JIANG", "NAPOLI")
MODELS = ("IDM", "Gipps", "FVDM-CTH", "FVDM-SIGMOID", "GP", "KRR", "LSTM")


def grid_table(value_fn, datasets=DATASETS):
    rows = []
    for d in datasets:
        for m in MODELS:
            for t in "avs":
                for var in "avs":
                    rows.append(ResultsRow(value_fn(d, m, t, var), var, d, m, t))
    return ResultsTable(rows)


def random_grid(seed=0):
    r = np.random.default_rng(seed)
    return grid_table(lambda *_: float(r.lognormal(-1, 1)))


ONE_WAY_X = np.column_stack([np.ones(6), [0, 0, 0, 1, 1, 1]])
ONE_WAY_Y = np.array([1.0, 2, 3, 2, 3, 4])


class TestDistributions:
    @pytest.mark.parametrize("a,b", [(0.5, 0.5), (2.0, 3.0), (0.5, 20.0), (30.0, 0.5), (150.0, 200.0)])
    def test_betainc_against_scipy(self, a, b):
        from scipy.special import betainc
        for x in np.linspace(0, 1, 41):
            assert abs(anova.betainc(a, b, x) - betainc(a, b, x)) <= 1e-10

    @settings(max_examples=100, deadline=None)
    @given(x=st.floats(-50, 50), dof=st.integers(1, 300))
    def test_t_cdf_against_scipy(self, x, dof):
        assert abs(anova.t_cdf(x, dof) - stats.t.cdf(x, dof)) <= 1e-10

    @settings(max_examples=100, deadline=None)
    @given(x=st.floats(0, 100), d1=st.integers(1, 50), d2=st.integers(1, 300))
    def test_f_cdf_against_scipy(self, x, d1, d2):
        assert abs(anova.f_cdf(x, d1, d2) - stats.f.cdf(x, d1, d2)) <= 1e-10
        assert abs(anova.f_sf(x, d1, d2) - stats.f.sf(x, d1, d2)) <= 1e-10

    def test_symmetry_and_limits(self):
        for dof in (1, 4, 100):
            assert anova.t_cdf(0.0, dof) == 0.5
        assert anova.f_cdf(math.inf, 3, 7) == 1.0
        assert anova.f_cdf(1e12, 3, 7) == pytest.approx(1.0)

    def test_t_two_sided_example(self):
        assert anova.t_two_sided_p(1.2247, 4) == pytest.approx(0.288, abs=1e-3)
        assert 2 * (1 - anova.t_cdf(1.2247, 4)) == pytest.approx(anova.t_two_sided_p(1.2247, 4), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(f=st.floats(0, 200), k=st.integers(1, 100))
    def test_f_t_consistency(self, f, k):
        assert abs(anova.f_cdf(f, 1, k) - (2 * anova.t_cdf(math.sqrt(f), k) - 1)) <= 1e-9

    @settings(max_examples=50, deadline=None)
    @given(x=st.floats(-20, 20), dx=st.floats(0, 5), dof=st.integers(1, 50))
    def test_t_cdf_monotone(self, x, dx, dof):
        assert anova.t_cdf(x + dx, dof) >= anova.t_cdf(x, dof)

    def test_invalid_dof(self):
        with pytest.raises(InvalidDof):
            anova.t_cdf(0.3, 0)
        with pytest.raises(InvalidDof):
            anova.f_cdf(1.0, 2, math.inf)


class TestDummyEncode:
    def test_three_levels_two_columns(self):
        rows = random_grid().select("a")
        design = anova.dummy_encode(rows, ["Dataset"])
        assert design.matrix.shape == (63, 3)
        assert design.labels == ["Intercept", "JIANG", "NAPOLI"]

    def test_interaction_columns(self):
        design = anova.dummy_encode(random_grid().select("a"), ["Dataset", "Model"], ("Dataset", "Model"))
        inter = design.groups["Dataset:Model"]
        assert len(inter) == 12
        assert "JIANG-KRR" in design.labels
        col = design.matrix[:, design.labels.index("JIANG-KRR")]
        rows = random_grid().select("a")
        expected = [1.0 if (r.dataset, r.model) == ("JIANG", "KRR") else 0.0 for r in rows]
        np.testing.assert_array_equal(col, expected)

    def test_reference_is_alphabetical(self):
        design = anova.dummy_encode(random_grid().select("v"), ["Model"])
        assert "FVDM-CTH" not in design.labels and len(design.labels) == 7

    def test_colliding_level_names_qualified(self):
        rows = [ResultsRow(1.0, "a", d, m, "a") for d in ("a", "c") for m in ("b", "c")]
        design = anova.dummy_encode(rows, ["Dataset", "Model"])
        assert design.labels == ["Intercept", "Dataset=c", "Model=c"]

    def test_single_level(self):
        with pytest.raises(SingleLevelFactor):
            anova.dummy_encode([r for r in random_grid().select("a") if r.dataset == "ASTA"], ["Dataset"])

    def test_parse_interaction(self):
        assert anova.parse_interaction("model,target") == ("Model", "Target")
        assert anova.parse_interaction(None) is None
        with pytest.raises(ValidationError):
            anova.parse_interaction("model,model")
        with pytest.raises(ValidationError):
            anova.parse_interaction("model,weather")


class TestOlsFit:
    def test_one_way_oracle(self):
        table = anova.ols_fit(ONE_WAY_X, ONE_WAY_Y, ["Intercept", "B"], {"Group": [1]})
        term = table.term("B")
        assert term.coefficient == pytest.approx(1.0)
        assert term.t_value == pytest.approx(math.sqrt(1.5))
        assert term.p_value == pytest.approx(0.288, abs=1e-3)
        test = table.factor_tests[0]
        assert (test.df_num, test.df_den) == (1, 4)
        assert test.f_value == pytest.approx(1.5, abs=1e-12)
        assert test.p_value == pytest.approx(0.288, abs=1e-3)
        ref = stats.f_oneway([1, 2, 3], [2, 3, 4])
        assert test.p_value == pytest.approx(ref.pvalue, abs=1e-12)

    def test_against_dense_normal_equations(self, rng):
        X = np.column_stack([np.ones(30), rng.normal(size=(30, 3))])
        y = rng.normal(size=30)
        table = anova.ols_fit(X, y)
        beta = np.linalg.solve(X.T @ X, X.T @ y)
        np.testing.assert_allclose([t.coefficient for t in table.terms], beta, atol=1e-12)
        resid = y - X @ beta
        se = np.sqrt(resid @ resid / 26 * np.diag(np.linalg.inv(X.T @ X)))
        np.testing.assert_allclose([t.std_error for t in table.terms], se, rtol=1e-10)
        np.testing.assert_allclose([t.p_value for t in table.terms],
                                   2 * stats.t.sf(np.abs(beta / se), 26), atol=1e-10)

    def test_perfect_fit(self):
        x = np.array([0, 0, 1, 1, 0, 1.0])
        y = 2.0 + 3.0 * x
        table = anova.ols_fit(np.column_stack([np.ones(6), x]), y, ["Intercept", "x"])
        assert table.term("x").p_value <= 1e-10
        assert table.r_squared == pytest.approx(1.0)

    def test_intercept_only(self, rng):
        y = rng.normal(size=9)
        table = anova.ols_fit(np.ones((9, 1)), y)
        assert len(table.terms) == 1
        assert table.terms[0].coefficient == pytest.approx(y.mean())

    def test_errors(self):
        with pytest.raises(TooFewRows):
            anova.ols_fit(np.eye(3), [1.0, 2.0, 3.0])
        X = np.column_stack([np.ones(5), np.arange(5.0), 2 * np.arange(5.0)])
        with pytest.raises(PerfectCollinearity):
            anova.ols_fit(X, np.arange(5.0))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 1000), shift=st.floats(-100, 100))
    def test_shift_invariance(self, seed, shift):
        r = np.random.default_rng(seed)
        X = np.column_stack([np.ones(12), r.integers(0, 2, size=(12, 2))])
        if np.linalg.matrix_rank(X) < 3:
            return
        y = r.normal(size=12)
        a, b = anova.ols_fit(X, y), anova.ols_fit(X, y + shift)
        np.testing.assert_allclose([t.p_value for t in a.terms[1:]], [t.p_value for t in b.terms[1:]], atol=1e-9)


class TestRunAnova:
    def test_main_effect_term_counts(self):
        grid = random_grid(1)
        for var in "avs":
            table = anova.run_anova(grid, var)
            assert len(table.terms) == 1 + 2 + 6 + 2
            assert table.terms[0].label == "Intercept"
            assert sum(t.label == "Intercept" for t in table.terms) == 1
            assert all(0 <= t.p_value <= 1 for t in table.terms)
            assert table.n_obs == 63

    def test_interaction_labels(self):
        table = anova.run_anova(random_grid(2), "rmse_s", interaction="model,target")
        inter = [t.label for t in table.terms if t.factor == "Model:Target"]
        assert len(inter) == 12
        assert "GP-s" in inter and "LSTM-v" in inter

    def test_constant_dependent(self):
        table = anova.run_anova(grid_table(lambda *_: 0.5), "RMSE(a)")
        assert all(not t.significant for t in table.terms[1:])
        assert all(t.p_value == 1.0 for t in table.terms[1:])

    def test_strong_effect_detected(self, rng):
        grid = grid_table(lambda d, m, t, v: (5.0 if m == "KRR" else 1.0) + 0.01 * rng.normal())
        table = anova.run_anova(grid, "v")
        assert table.term("KRR").significant
        assert table.term("KRR").coefficient == pytest.approx(4.0, abs=0.05)

    def test_reference_relabel_invariance(self):
        grid = random_grid(3)
        renamed = ResultsTable([ResultsRow(r.rmse, r.predicted_variable, "ZZZ" if r.dataset == "ASTA" else r.dataset,
                                           r.model, r.target) for r in grid.rows])
        a, b = anova.run_anova(grid, "a"), anova.run_anova(renamed, "a")
        keys_a = [(r.model, r.target, r.rmse) for r in grid.select("a")]
        keys_b = [(r.model, r.target, r.rmse) for r in renamed.select("a")]
        fitted_b = dict(zip(keys_b, b.fitted))
        np.testing.assert_allclose(a.fitted, [fitted_b[k] for k in keys_a], atol=1e-12)
        assert a.r_squared == pytest.approx(b.r_squared, abs=1e-12)
        assert "ZZZ" in [t.label for t in b.terms]

    def test_non_finite_rows_dropped(self):
        grid = random_grid(4)
        rows = list(grid.rows)
        rows[0] = ResultsRow(float("nan"), rows[0].predicted_variable, rows[0].dataset, rows[0].model,
                             rows[0].target, diverged=True)
        table = anova.run_anova(ResultsTable(rows), rows[0].predicted_variable)
        assert table.n_obs == 62

    def test_log_and_auto_factors(self):
        grid = grid_table(lambda *_: 1.0, datasets=("ASTA",))
        table = anova.run_anova(grid, "s", log=True)
        assert table.dependent == "log RMSE(s)"
        assert "Dataset" not in table.formula and len(table.terms) == 1 + 6 + 2

    def test_csv_outputs(self, tmp_path):
        table = anova.run_anova(random_grid(5), "a")
        table.to_csv(tmp_path / "t.csv")
        table.factor_tests_to_csv(tmp_path / "f.csv")
        assert len((tmp_path / "t.csv").read_text().splitlines()) == 12
        assert len((tmp_path / "f.csv").read_text().splitlines()) == 4

    def test_dependent_parsing(self):
        assert anova.parse_dependent("RMSE(v)") == anova.parse_dependent("rmse_v") == "v"
        with pytest.raises(ValidationError):
            anova.parse_dependent("rmse_x")
