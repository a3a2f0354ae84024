import numpy as np
import pytest

from skyaug.segmentation.pls import (PlsModel, SweepReport, fit_pls2, predict, r2_score, sweep_ncomp,
                                     to_design_matrix, to_target_matrix)
from skyaug.utils.errors import DataError


def least_squares_oracle(X, Y, X_new):
    x_mean, y_mean = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - x_mean, Y - y_mean
    B = np.linalg.solve(Xc.T @ Xc, Xc.T @ Yc)
    return (X_new - x_mean) @ B + y_mean


def test_exact_linear_relation_is_recovered(rng):
    X = rng.standard_normal((20, 5))
    Y = X @ rng.standard_normal((5, 3))
    model = fit_pls2(X, Y, 5)
    assert r2_score(Y, predict(model, X)) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_full_rank_matches_least_squares(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((30, 6))
    Y = rng.standard_normal((30, 4))
    model = fit_pls2(X, Y, 6)
    X_new = rng.standard_normal((7, 6))
    np.testing.assert_allclose(predict(model, X_new), least_squares_oracle(X, Y, X_new), atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_training_r2_grows_with_components(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((30, 6))
    Y = X @ rng.standard_normal((6, 4)) + rng.standard_normal((30, 4))
    scores = [r2_score(Y, predict(fit_pls2(X, Y, a), X)) for a in range(1, 7)]
    assert all(b >= a - 1e-9 for a, b in zip(scores, scores[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_x_scores_are_orthogonal(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((30, 6))
    Y = rng.standard_normal((30, 3))
    T = fit_pls2(X, Y, 6).x_scores
    gram = T.T @ T
    off_diagonal = gram - np.diag(np.diag(gram))
    assert np.abs(off_diagonal).max() < 1e-8


def test_univariate_first_weight_is_xty(rng):
    X = rng.standard_normal((15, 4))
    y = rng.standard_normal(15)
    model = fit_pls2(X, y, 1)
    direction = (X - X.mean(axis=0)).T @ (y - y.mean())
    direction /= np.linalg.norm(direction)
    np.testing.assert_allclose(model.W[:, 0], direction, atol=1e-8)


def test_fit_is_deterministic(rng):
    X, Y = rng.standard_normal((12, 5)), rng.standard_normal((12, 2))
    a, b = fit_pls2(X, Y, 3), fit_pls2(X, Y, 3)
    np.testing.assert_array_equal(a.B, b.B)


def test_fit_errors(rng):
    X, Y = rng.standard_normal((10, 4)), rng.standard_normal((10, 2))
    with pytest.raises(ValueError):
        fit_pls2(X, Y, 0)
    with pytest.raises(ValueError):
        fit_pls2(X, Y, 5)
    with pytest.raises(ValueError):
        fit_pls2(X, Y[:9], 1)
    with pytest.raises(DataError, match="degenerate data"):
        fit_pls2(np.zeros((10, 4)), Y, 1)
    with pytest.raises(DataError, match="degenerate data"):
        fit_pls2(X, np.zeros((10, 2)), 1)


def test_rank_deficient_fit_stops_early(rng):
    base = rng.standard_normal((10, 2))
    X = np.hstack([base, base])
    model = fit_pls2(X, base @ rng.standard_normal((2, 2)), 4)
    assert model.n_comp == 2
    assert model.W.shape[1] == model.P.shape[1] == model.Q.shape[1] == 2


def test_predict_affine_properties(rng):
    X, Y = rng.standard_normal((12, 5)), rng.standard_normal((12, 3))
    model = fit_pls2(X, Y, 2)
    np.testing.assert_allclose(predict(model, model.x_mean), model.y_mean, atol=1e-12)

    x1, x2 = rng.standard_normal(5), rng.standard_normal(5)
    lhs = predict(model, x1 + x2 - model.x_mean) - model.y_mean
    rhs = (predict(model, x1) - model.y_mean) + (predict(model, x2) - model.y_mean)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    zero = PlsModel(model.x_mean, model.y_mean, model.W, model.P, model.Q, np.zeros_like(model.B), 2)
    np.testing.assert_array_equal(predict(zero, X), np.tile(model.y_mean, (12, 1)))

    with pytest.raises(ValueError):
        predict(model, rng.standard_normal((2, 4)))


def test_r2_score_cases(rng):
    Y = rng.standard_normal((6, 3))
    assert r2_score(Y, Y) == 1.0
    assert r2_score(Y, np.tile(Y.mean(axis=0), (6, 1))) == pytest.approx(0.0, abs=1e-12)
    assert r2_score(np.array([[0.0], [2.0]]), np.array([[1.0], [1.0]])) == 0.0

    Y_hat = Y + 0.1 * rng.standard_normal(Y.shape)
    order = [2, 0, 1]
    assert r2_score(Y[:, order], Y_hat[:, order]) == pytest.approx(r2_score(Y, Y_hat), abs=1e-12)

    with pytest.raises(DataError, match="R² undefined"):
        r2_score(np.ones((3, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        r2_score(Y, Y[:, :2])


def test_per_image_r2(rng):
    Y = (rng.random((4, 16)) < 0.5).astype(float)
    assert r2_score(Y, Y, mode="per_image") == 1.0
    with pytest.raises(ValueError):
        r2_score(Y, Y, mode="per_pixel")


def test_sweep(small_fixture, tmp_path):
    _, _, train, val = small_fixture
    report = sweep_ncomp(train, val, 6)
    assert [r[0] for r in report.rows] == list(range(1, 7))
    best = max(r[2] for r in report.rows)
    assert report.r2_val_at(report.chosen) == best
    assert all(r[2] < best for r in report.rows if r[0] < report.chosen)

    r2_train = [r[1] for r in report.rows]
    assert all(b >= a - 1e-9 for a, b in zip(r2_train, r2_train[1:]))

    report.to_csv(tmp_path / "sweep.csv")
    assert SweepReport.from_csv(tmp_path / "sweep.csv").chosen == report.chosen
    assert sweep_ncomp(train, val, 1).chosen == 1


def test_sweep_is_parallel_safe(small_fixture):
    _, _, train, val = small_fixture
    parallel, serial = sweep_ncomp(train, val, 4, n_jobs=2), sweep_ncomp(train, val, 4, n_jobs=1)
    assert [r[0] for r in parallel.rows] == [1, 2, 3, 4]
    np.testing.assert_allclose(np.array(parallel.rows), np.array(serial.rows), rtol=1e-10)


def test_sweep_ties_go_to_fewer_components():
    report = SweepReport([(1, 0.1, 0.5), (2, 0.2, 0.7), (3, 0.3, 0.7)])
    assert report.chosen == 2


def test_model_checkpoint(tmp_path, rng):
    X, Y = rng.standard_normal((12, 5)), rng.standard_normal((12, 3))
    model = fit_pls2(X, Y, 3)
    model.save(tmp_path / "model.bin")
    loaded = PlsModel.load(tmp_path / "model.bin")
    assert loaded.n_comp == 3
    np.testing.assert_array_equal(predict(loaded, X), predict(model, X))


def test_design_matrices():
    images = [np.full((2, 2), 255, dtype=np.uint8), np.zeros((2, 2), dtype=np.uint8)]
    np.testing.assert_array_equal(to_design_matrix(images), [[1.0] * 4, [0.0] * 4])
    maps = [np.eye(2, dtype=bool)]
    np.testing.assert_array_equal(to_target_matrix(maps), [[1.0, 0.0, 0.0, 1.0]])
