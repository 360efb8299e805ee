import numpy as np
import pytest
from sklearn.base import clone
from sklearn.model_selection import cross_val_score

from shap_ptdf import (
    DataError,
    Dataset,
    GradientBoostedTreesRegressor,
    LinearLeastSquaresRegressor,
    ModelFormatError,
    ModelVersionError,
    NumericalError,
    TrainConfig,
    Tree,
    analytical_ptdf,
    fit_gbt,
    fit_linear,
    load_model,
    predict,
    save_model,
)
from shap_ptdf.gbtree import model_to_text

from reference_ptdf import TRUE_PTDF


def rmse(model, ds, target):
    return float(np.sqrt(np.mean((model.predict(ds.X) - ds.target(target)) ** 2)))


def _manual_ensemble(base, trees, k=2):
    m = GradientBoostedTreesRegressor(n_trees=max(len(trees), 1))
    m.base_score_, m.trees_ = base, trees
    m.n_features_in_, m.feature_names_ = k, [f"x{i}" for i in range(k)]
    return m


def test_predict_single_leaf():
    m = _manual_ensemble(5.0, [Tree.leaf(2.0, 10)])
    assert predict(m, [1.0, 1.0]) == 7.0


def test_predict_empty_ensemble():
    assert predict(_manual_ensemble(-3.5, []), [10.0, 0.0]) == -3.5


def test_predict_linear_model():
    m = LinearLeastSquaresRegressor()
    m.coef_, m.intercept_, m.feature_means_ = np.array([2.0, 3.0]), 1.0, np.zeros(2)
    m.n_features_in_, m.feature_names_ = 2, ["PG2", "PG3"]
    assert predict(m, [2.0, 0.0]) == 5.0
    with pytest.raises(DataError):
        predict(m, [1.0, 2.0, 3.0])


def test_strict_split_semantics():
    m = _manual_ensemble(0.0, [Tree.stump(0, 1.0, -1.0, 1.0, 3, 3)])
    assert predict(m, [0.999, 0]) == -1.0
    assert predict(m, [1.0, 0]) == 1.0


def test_constant_target():
    X = np.random.default_rng(1).uniform(0, 500, size=(40, 2))
    ds = Dataset(X, np.full((40, 1), 42.5), ["PG2", "PG3"], ["Fc"])
    m = fit_gbt(ds, "Fc", TrainConfig(n_trees=20))
    assert np.allclose(m.predict(X), 42.5, atol=1e-12)
    assert all(np.allclose(t.value, 0.0, atol=1e-12) for t in m.trees_)


def test_too_few_rows():
    ds = Dataset(np.ones((6, 2)), np.ones((6, 1)), ["a", "b"], ["Fy"])
    with pytest.raises(DataError):
        fit_gbt(ds, "Fy", TrainConfig(min_samples_leaf=5))


def test_unknown_target(train_test):
    with pytest.raises(KeyError):
        fit_linear(train_test[0], "F1-9")


@pytest.mark.parametrize("bad", [dict(n_trees=0), dict(learning_rate=0.0), dict(learning_rate=1.5),
                                 dict(max_depth=0), dict(loss="huber")])
def test_train_config_validation(bad):
    with pytest.raises(DataError):
        TrainConfig(**bad)


def test_split_tie_breaking():
    # both features identical: the lower index must win, with a midpoint threshold
    x = np.arange(10, dtype=float)
    X = np.column_stack([x, x])
    y = (x >= 5).astype(float)
    m = GradientBoostedTreesRegressor(n_trees=1, max_depth=1, learning_rate=1.0,
                                      min_samples_leaf=1).fit(X, y)
    tree = m.trees_[0]
    assert tree.feature[0] == 0
    assert tree.threshold[0] == 4.5
    assert np.allclose(m.predict(X), y)


def test_smallest_threshold_on_equal_gain():
    # y symmetric about the centre: splits after 2 and after 6 give equal gain
    X = np.arange(8, dtype=float)[:, None]
    y = np.array([0, 0, 0, 1, 1, 0, 0, 0], dtype=float)
    m = GradientBoostedTreesRegressor(n_trees=1, max_depth=1, learning_rate=1.0,
                                      min_samples_leaf=1).fit(X, y)
    assert m.trees_[0].threshold[0] == 2.5


def test_line45_rmse(gbt_models, train_test):
    _, test = train_test
    assert len(test) == 250
    assert rmse(gbt_models["4-5"], test, "F4-5") <= 2.0


def test_line36_tracks_pg3(gbt_models, train_test):
    _, test = train_test
    dev = gbt_models["3-6"].predict(test.X) - test.X[:, 1]
    assert np.sqrt(np.mean(dev ** 2)) <= 2.0


def test_cover_bookkeeping(gbt_models):
    for model in gbt_models.values():
        assert model.trees_[0].cover[0] == 751
        for tree in model.trees_:
            tree.validate()
            internal = tree.feature >= 0
            assert np.all(tree.cover[internal]
                          == tree.cover[tree.left[internal]] + tree.cover[tree.right[internal]])


def test_training_is_deterministic(train_test):
    train, _ = train_test
    a = fit_gbt(train, "F4-5", TrainConfig(n_trees=300, max_depth=3, learning_rate=0.1))
    b = fit_gbt(train, "F4-5", TrainConfig(n_trees=300, max_depth=3, learning_rate=0.1))
    assert model_to_text(a) == model_to_text(b)


def test_rmse_non_increasing_in_trees(train_test):
    train, test = train_test
    errs = [rmse(fit_gbt(train, "F4-5", TrainConfig(n_trees=n)), test, "F4-5")
            for n in (250, 500, 1000, 2000)]
    for prev, cur in zip(errs, errs[1:]):
        assert cur <= prev * 1.01


def test_fit_linear_matches_reference_ptdf(linear_models, net):
    assert np.allclose(linear_models["4-5"].coef_, [-0.3613, -0.6152], atol=1e-4)
    assert np.allclose(linear_models["8-2"].coef_, [-1.0, 0.0], atol=1e-6)
    d = analytical_ptdf(net)
    for lbl, m in linear_models.items():
        assert np.max(np.abs(m.coef_ - d.row(lbl))) <= 1e-6
    assert np.max(np.abs(np.array([linear_models[l].coef_ for l in net.branch_labels])
                         - np.array(TRUE_PTDF))) <= 5e-5


def test_fit_linear_exact_residuals(linear_models, train_test):
    train, _ = train_test
    for lbl, m in linear_models.items():
        assert np.max(np.abs(m.predict(train.X) - train.target(f"F{lbl}"))) <= 1e-6
    assert np.allclose(linear_models["4-5"].feature_means_, train.X.mean(axis=0))


def test_self_regression(train_test):
    train, _ = train_test
    ds = Dataset(train.X, train.X[:, :1], train.feature_names, ["Fcopy"])
    m = fit_linear(ds, "Fcopy")
    assert np.allclose(m.coef_, [1.0, 0.0], atol=1e-9)
    assert abs(m.intercept_) <= 1e-9


def test_rank_deficient_linear():
    X = np.column_stack([np.linspace(0, 1, 20), np.full(20, 3.0)])
    ds = Dataset(X, X[:, :1], ["PG2", "PG3"], ["Fy"])
    with pytest.raises(NumericalError, match="PG3"):
        fit_linear(ds, "Fy")
    X = np.column_stack([np.linspace(0, 1, 20), 2 * np.linspace(0, 1, 20)])
    with pytest.raises(NumericalError):
        fit_linear(Dataset(X, X[:, :1], ["PG2", "PG3"], ["Fy"]), "Fy")


@pytest.fixture(scope="module")
def small_model(train_test):
    return fit_gbt(train_test[0], "F4-5", TrainConfig(n_trees=150, max_depth=3, learning_rate=0.1))


def test_save_load_round_trip(tmp_path, small_model, linear_models):
    pts = np.random.default_rng(5).uniform(0, 500, size=(1000, 2))
    for model in (small_model, linear_models["4-5"]):
        path = tmp_path / "m.model"
        save_model(model, path)
        back = load_model(path)
        assert np.array_equal(back.predict(pts), model.predict(pts))
        assert back.feature_names_ == ["PG2", "PG3"]
        assert back.target_ == "F4-5"
        save_model(back, tmp_path / "again.model")
        assert (tmp_path / "again.model").read_bytes() == path.read_bytes()


def test_truncated_model_file(tmp_path, small_model):
    path = tmp_path / "m.model"
    save_model(small_model, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(ModelFormatError):
        load_model(path)
    path.write_text("")
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_wrong_version(tmp_path, small_model):
    path = tmp_path / "m.model"
    save_model(small_model, path)
    path.write_text(path.read_text().replace("SHAPPTDF-MODEL 1", "SHAPPTDF-MODEL 2", 1))
    with pytest.raises(ModelVersionError):
        load_model(path)


def test_broken_cover_rejected_on_load(tmp_path):
    m = _manual_ensemble(0.0, [Tree.stump(0, 1.0, -1.0, 1.0, 3, 3)])
    m.trees_[0].cover[0] = 7
    path = tmp_path / "m.model"
    save_model(m, path)
    with pytest.raises(ModelFormatError, match="cover"):
        load_model(path)


def test_sklearn_compatibility(train_test):
    train, _ = train_test
    est = GradientBoostedTreesRegressor(n_trees=50, max_depth=2)
    assert est.get_params() == {"n_trees": 50, "max_depth": 2, "learning_rate": 1.0,
                                "min_samples_leaf": 5}
    twin = clone(est).set_params(n_trees=20)
    assert twin.n_trees == 20 and est.n_trees == 50
    scores = cross_val_score(twin, train.X, train.target("F4-5"), cv=3)
    assert scores.min() > 0.9
    lin = LinearLeastSquaresRegressor().fit(train.X, train.target("F4-5"))
    assert lin.score(train.X, train.target("F4-5")) == pytest.approx(1.0)
