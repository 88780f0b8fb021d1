import numpy as np
import pytest

from arbmine.econometrics import (
    EmptyAfterSingletonDrop,
    RankDeficient,
    RegressionSpec,
    SingleCluster,
    drop_singletons,
    fit_rows,
    ols_fe,
    results_table,
    stars,
)
from arbmine.synth import RegressionConfig, gen_regression_data, rng_for
from oracles import dense_sandwich, dummy_ols, random_fe_instance


def test_noiseless_line():
    x = np.arange(10.0)
    res = ols_fe(2 * x, x[:, None], ["x"])
    assert res.coefficient("x") == pytest.approx(2.0, abs=1e-12)
    assert res.r2 == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(40))
def test_absorbed_effects_match_dummy_regression(seed):
    y, X, fe = random_fe_instance(seed)
    names = [f"x{i}" for i in range(X.shape[1])]
    try:
        res = ols_fe(y, X, names, fe)
    except EmptyAfterSingletonDrop:
        pytest.skip("instance collapses after singleton removal")
    # the dummy fit uses the full sample: singleton cells are fitted exactly by their own dummy
    expected = dummy_ols(y, X, list(fe.values()))
    np.testing.assert_allclose(res.coef[1:], expected, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_residuals_orthogonal_to_regressors_and_groups(seed):
    y, X, fe = random_fe_instance(seed, max_dims=2)
    res = ols_fe(y, X, [f"x{i}" for i in range(X.shape[1])], fe)
    assert np.abs(res.design.T @ res.resid).max() < 1e-8
    for labels in fe.values():
        kept = np.asarray(labels, dtype=object)[res.kept]
        for level in set(kept):
            assert abs(res.resid[kept == level].sum()) < 1e-8


def test_singleton_drop_iterates_to_fixed_point():
    a = np.array([0, 0, 1, 1, 2])
    b = np.array([0, 1, 1, 1, 1])
    keep, dropped = drop_singletons([a, b], ["a", "b"])
    # row 4 is alone in a; then row 0 is alone in b, then row 1 is alone in a
    assert keep.tolist() == [False, False, True, True, False]
    assert sum(dropped.values()) == 3


@pytest.mark.parametrize("seed", range(5))
def test_clustered_covariance_matches_dense_sandwich(seed):
    rng = rng_for(seed)
    X = rng.normal(size=(30, 2))
    clusters = rng.integers(0, 6, 30).tolist()
    y = X @ np.array([1.0, -1.0]) + rng.normal(size=30)
    res = ols_fe(y, X, ["a", "b"], clusters=clusters)
    oracle = dense_sandwich(res.design, res.resid, clusters, res.k_total)
    np.testing.assert_allclose(res.cov, oracle, rtol=1e-10, atol=1e-14)


def test_one_cluster_per_row_is_hc1():
    rng = rng_for(9)
    X = rng.normal(size=(40, 1))
    y = X[:, 0] + rng.normal(size=40) * (1 + np.abs(X[:, 0]))
    res = ols_fe(y, X, ["x"], clusters=list(range(40)))
    D = res.design
    bread = np.linalg.inv(D.T @ D)
    hc1 = 40 / (40 - 2) * bread @ (D.T * res.resid**2) @ D @ bread
    np.testing.assert_allclose(res.cov, hc1, rtol=1e-10)


def test_single_cluster_and_rank_errors():
    x = np.arange(8.0)
    with pytest.raises(SingleCluster):
        ols_fe(x + np.sin(x), x[:, None], ["x"], clusters=[1] * 8)
    with pytest.raises(RankDeficient):
        ols_fe(x, np.column_stack([x, 2 * x]), ["a", "b"])
    with pytest.raises(RankDeficient):
        # a regressor constant within groups is absorbed by the group effect
        groups = ["g1"] * 4 + ["g2"] * 4
        ols_fe(np.sin(x), np.array([0.0] * 4 + [1.0] * 4)[:, None], ["p"], {"user": groups})
    with pytest.raises(EmptyAfterSingletonDrop):
        ols_fe([1.0, 2.0], np.array([[1.0], [3.0]]), ["x"], {"g": ["a", "b"]})


def test_stars_thresholds():
    assert [stars(p) for p in (0.005, 0.02, 0.07, 0.2)] == ["***", "**", "*", ""]


def test_spec_rules():
    with pytest.raises(ValueError):
        RegressionSpec(proxy="height")
    with pytest.raises(ValueError):
        RegressionSpec(fixed_effects=("user",))
    assert RegressionSpec(interaction=True, fixed_effects=("user",)).label.startswith("eq2")


def test_constant_proxy_is_rank_deficient():
    rows, _ = gen_regression_data(RegressionConfig(seed=1, multi_share=0.0))
    with pytest.raises(RankDeficient):
        fit_rows(rows, RegressionSpec())


@pytest.mark.parametrize("equation", [1, 2])
def test_noise_free_data_gives_exact_coefficients(equation):
    cfg = RegressionConfig(seed=3, equation=equation, noise_sd=0.0, user_sd=0.0 if equation == 1 else 0.5, slope_sd=0.0)
    rows, truth = gen_regression_data(cfg)
    if equation == 1:
        res = fit_rows(rows, RegressionSpec(fixed_effects=("hour", "dyad")))
        assert res.coefficient("d_currencies") == pytest.approx(truth["proxy"], abs=1e-8)
    else:
        res = fit_rows(rows, RegressionSpec(interaction=True, fixed_effects=("hour", "dyad", "user")))
        assert res.coefficient("delta_r_x_d_currencies") == pytest.approx(truth["interaction"], abs=1e-8)
        assert res.coefficient("delta_r") == pytest.approx(truth["delta_r"], abs=1e-8)
    assert res.coefficient("usd") == pytest.approx(truth["usd"], abs=1e-8)


def test_clustered_close_to_classical_without_cluster_structure():
    ratios = []
    for seed in range(1000):
        rng = rng_for(70_000 + seed)
        X = rng.normal(size=(200, 1))
        y = X[:, 0] + rng.normal(size=200)
        clusters = np.repeat(np.arange(50), 4).tolist()
        clustered = ols_fe(y, X, ["x"], clusters=clusters).std_error("x")
        classical = ols_fe(y, X, ["x"]).std_error("x")
        ratios.append(clustered / classical)
    assert abs(np.mean(ratios) - 1) < 0.15


def test_results_table_layout():
    rows, _ = gen_regression_data(RegressionConfig(seed=2))
    res = fit_rows(rows, RegressionSpec())
    text = results_table({"(1)": res, "(2)": "RankDeficient: nope"})
    lines = text.splitlines()
    assert lines[0] == "term,(1),(2)"
    assert lines[1].startswith("const,")
    assert lines[-3] == f"N,{res.n_obs},"
    assert lines[-1].endswith("RankDeficient: nope")
