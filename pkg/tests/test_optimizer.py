import json

import numpy as np
import pytest

from conftest import _fd_gradient, noise_dataset
from funcview.data import (
    CATEGORICAL,
    CONTINUOUS,
    Dataset,
    Response,
    shuffle_response,
    synth_blobs,
    synth_circle,
    synth_multi,
)
from funcview.errors import FitDivergedError, ValidationError
from funcview.models import (
    PolynomialHead,
    head_gradients,
    monomial_matrix,
    mse_loss,
    ols_fit,
    poly_predict_batch,
)
from funcview.optimizer import (
    HyperParams,
    evaluate,
    fit,
    from_json,
    predict,
    principal_angles,
    project,
    random_orthonormal,
    random_projection_preprocess,
    result_from_dict,
    result_to_dict,
    retract,
    to_json,
)


def second_angle_deg(p, q):
    return np.degrees(principal_angles(p, q)[1])


# ---------------------------------------------------------------------------
# projection utilities


def test_random_orthonormal_basic():
    p = random_orthonormal(7, seed=42)
    assert p.shape == (7, 2)
    assert np.allclose(p.T @ p, np.eye(2), atol=1e-10)
    assert np.array_equal(p, random_orthonormal(7, seed=42))
    assert not np.allclose(p, random_orthonormal(7, seed=43))


def test_random_orthonormal_rejects_thin_space():
    with pytest.raises(ValidationError):
        random_orthonormal(1, seed=0)


def test_random_orthonormal_pairs_are_well_separated():
    # Two independent 2-planes in D=20 are almost surely far apart; the
    # smallest larger-angle over 100 pairs stays clearly away from zero.
    angles = []
    for s in range(100):
        p = random_orthonormal(20, seed=2 * s)
        q = random_orthonormal(20, seed=2 * s + 1)
        angles.append(principal_angles(p, q)[1])
    assert min(angles) > 0.05


def test_retract_normalizes_scaled_columns():
    p = np.array([[2.0, 0.0], [0.0, 3.0], [0.0, 0.0]])
    out = retract(p)
    expected = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    assert np.allclose(out, expected, atol=1e-12)


def test_retract_fixes_orthonormal_input():
    p = random_orthonormal(9, seed=5)
    assert np.allclose(retract(p), p, atol=1e-12)
    assert np.allclose(retract(retract(3.7 * p)), retract(3.7 * p), atol=1e-12)


def test_retract_scale_invariant():
    r = np.random.default_rng(8)
    p = r.normal(size=(6, 2))
    assert np.allclose(retract(p), retract(250.0 * p), atol=1e-12)


def test_retract_paper_u_spans_polar_result():
    r = np.random.default_rng(3)
    p = r.normal(size=(5, 2))
    polar = retract(p, mode="polar")
    u = retract(p, mode="paper_u")
    assert np.allclose(u.T @ u, np.eye(2), atol=1e-12)
    assert np.allclose(polar @ polar.T, u @ u.T, atol=1e-9)
    # the two modes differ by an in-plane rotation only
    rot = polar.T @ u
    assert np.allclose(rot.T @ rot, np.eye(2), atol=1e-9)


def test_retract_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        retract(np.eye(4), mode="qr")
    with pytest.raises(ValidationError):
        retract(np.ones((4, 3)))
    p = np.ones((4, 2))
    p[0, 0] = np.nan
    with pytest.raises(ValidationError):
        retract(p)


def test_retract_recovers_rank_one():
    p = np.zeros((4, 2))
    p[:, 0] = [3.0, 4.0, 0.0, 0.0]
    p[:, 1] = p[:, 0] * 2.0
    with pytest.warns(RuntimeWarning, match="lost one direction"):
        out = retract(p, rng=np.random.default_rng(0))
    assert np.allclose(out.T @ out, np.eye(2), atol=1e-10)
    # the surviving direction is kept
    kept = np.array([3.0, 4.0, 0.0, 0.0]) / 5.0
    assert min(np.linalg.norm(out[:, 0] - kept), np.linalg.norm(out[:, 0] + kept)) < 1e-10


def test_retract_recovers_rank_zero():
    with pytest.warns(RuntimeWarning, match="rank 0"):
        out = retract(np.zeros((5, 2)), rng=np.random.default_rng(1))
    assert np.allclose(out.T @ out, np.eye(2), atol=1e-10)


def test_principal_angles_oracles():
    e = np.eye(4)
    assert principal_angles(e[:, :2], e[:, :2]) == (0.0, 0.0)
    both = principal_angles(e[:, :2], e[:, 2:4])
    assert np.allclose(both, (np.pi / 2, np.pi / 2), atol=1e-12)
    # in-plane rotation does not move the span
    theta = 0.7
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    assert second_angle_deg(e[:, :2] @ rot, e[:, :2]) < 1e-6
    # tilt one direction by a known angle, keep the other
    tilt = 0.3
    q = np.zeros((4, 2))
    q[0, 0] = 1.0
    q[1, 1] = np.cos(tilt)
    q[2, 1] = np.sin(tilt)
    got = principal_angles(e[:, :2], q)
    assert np.allclose(got, (0.0, tilt), atol=1e-12)
    with pytest.raises(ValidationError):
        principal_angles(np.eye(4)[:, :2], np.eye(5)[:, :2])


def test_project_oracle_and_linearity():
    p = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    x = np.array([[1.0, 2.0, 9.0], [4.0, 5.0, -3.0]])
    assert np.array_equal(project(p, x), x[:, :2])
    r = np.random.default_rng(11)
    p = random_orthonormal(6, seed=0)
    a, b = r.normal(size=(2, 10, 6))
    assert np.allclose(project(p, a + 2.0 * b), project(p, a) + 2.0 * project(p, b))
    with pytest.raises(ValidationError):
        project(p, np.ones((4, 5)))


def test_project_is_non_expansive():
    # orthonormal columns cannot grow a vector's norm
    p = random_orthonormal(12, seed=9)
    x = np.random.default_rng(2).normal(size=(40, 12))
    assert np.all(
        np.linalg.norm(project(p, x), axis=1) <= np.linalg.norm(x, axis=1) + 1e-12
    )


def test_random_projection_preprocess_shape_and_determinism():
    r = random_projection_preprocess(30, 6, seed=4)
    assert r.shape == (30, 6)
    assert np.allclose(r.T @ r, np.eye(6), atol=1e-10)
    assert np.array_equal(r, random_projection_preprocess(30, 6, seed=4))
    with pytest.raises(ValidationError):
        random_projection_preprocess(30, 1, seed=0)
    with pytest.raises(ValidationError):
        random_projection_preprocess(30, 30, seed=0)


def test_random_projection_composes_orthonormally():
    r = random_projection_preprocess(50, 8, seed=1)
    p = random_orthonormal(8, seed=2)
    composite = r @ p
    assert np.allclose(composite.T @ composite, np.eye(2), atol=1e-10)


def test_random_projection_loses_unaligned_structure():
    # A random orthonormal D -> D' map keeps only about D'/D of the energy of
    # any fixed direction, so a response living in two unlucky coordinates of
    # an 80-dimensional cube is mostly destroyed by compression to 8.
    big = synth_circle(1200, 80, 0.0, seed=5)
    pre = random_projection_preprocess(80, 8, seed=1)
    kept = float(np.sum((pre.T @ big.truth_basis[:, 0]) ** 2))
    assert kept < 0.5
    low = Dataset(big.features @ pre, [big.responses[0]])
    res = fit(low, HyperParams(epochs=60))
    assert res.train_scores[0] < 0.5


# ---------------------------------------------------------------------------
# fit: recovery, exactness, invariants


def test_fit_recovers_planted_plane():
    data = synth_circle(1500, 5, 0.05, seed=3)
    res = fit(data, HyperParams(epochs=150))
    assert second_angle_deg(res.projection, data.truth_basis) < 5.0
    assert res.train_scores[0] > 0.95
    assert res.epochs_run == 150
    assert len(res.loss_history) == 150
    assert np.isfinite(res.final_train_loss)
    assert np.allclose(res.projection.T @ res.projection, np.eye(2), atol=1e-10)


def test_fit_exact_when_embedding_is_identity():
    # With D=2 the projection is a rotation, a degree-3 target stays degree-3
    # in rotated coordinates, so the head can represent it exactly.
    r = np.random.default_rng(0)
    x = r.uniform(-1.0, 1.0, size=(3000, 2))
    f = monomial_matrix(x, 3) @ r.normal(size=10)
    data = Dataset(x, [Response(CONTINUOUS, f)])
    res = fit(data, HyperParams(epochs=100))
    assert res.train_scores[0] >= 0.999


def test_fit_shuffled_response_has_no_structure():
    data = shuffle_response(synth_circle(1500, 5, 0.05, seed=2), 0, seed=0)
    res = fit(data, HyperParams())
    assert res.train_scores[0] < 0.1


def test_fit_full_batch_convex_descent_is_monotone():
    # degree-1 head and full batches make the objective jointly smooth; with
    # a small step the epoch-mean loss must not increase
    data = noise_dataset(128, 4, seed=6)
    w = np.array([1.0, -2.0, 0.5, 0.0])
    y = data.features @ w + 0.1 * np.random.default_rng(1).normal(size=128)
    data = Dataset(data.features, [Response(CONTINUOUS, y)])
    hp = HyperParams(degree=1, batch_size=128, learning_rate=1e-3, epochs=80)
    res = fit(data, hp)
    diffs = np.diff(res.loss_history)
    assert np.all(diffs <= 1e-9)


def test_fit_response_order_does_not_matter():
    m = synth_multi(600, 5, 3, seed=4)
    swapped = Dataset(
        m.features,
        [m.responses[2], m.responses[0], m.responses[1]],
        column_names=m.column_names,
        truth_basis=m.truth_basis,
    )
    a = fit(m, HyperParams(epochs=50))
    b = fit(swapped, HyperParams(epochs=50))
    assert abs(a.final_train_loss - b.final_train_loss) <= 1e-9
    assert second_angle_deg(a.projection, b.projection) < 1e-3
    assert np.allclose(sorted(a.train_scores), sorted(b.train_scores), atol=1e-6)


def test_fit_projection_stays_orthonormal_every_step():
    drift = []

    def on_step(p):
        drift.append(np.abs(p.T @ p - np.eye(2)).max())

    data = synth_circle(256, 6, 0.05, seed=1)
    fit(data, HyperParams(epochs=3, batch_size=16), on_step=on_step)
    assert len(drift) == 3 * 16
    assert max(drift) < 1e-8


def test_fit_projection_gradient_matches_finite_differences():
    # the step direction for P is the exact gradient of the mean loss on the
    # raw (pre-retraction) parameterization
    r = np.random.default_rng(123)
    worst = 0.0
    for _ in range(10):
        d = int(r.integers(3, 7))
        n = int(r.integers(16, 65))
        x = r.normal(size=(n, d))
        heads, targets = [], []
        for _ in range(int(r.integers(1, 3))):
            degree = int(r.integers(1, 4))
            head = PolynomialHead(degree, r.normal(size=(degree + 1) * (degree + 2) // 2) * 0.5)
            heads.append(head)
            targets.append(r.normal(size=n))
        p = random_orthonormal(d, seed=int(r.integers(0, 1000)))

        def objective(pmat):
            y = x @ pmat
            return float(
                np.mean([mse_loss(poly_predict_batch(h, y), t) for h, t in zip(heads, targets)])
            )

        analytic = np.zeros_like(p)
        y = x @ p
        for h, t in zip(heads, targets):
            _, d_y = head_gradients(h, y, t)
            analytic += x.T @ d_y / len(heads)
        # _fd_gradient perturbs the array it is handed, so bind a fresh copy
        pc = p.copy()
        numeric = _fd_gradient(lambda: objective(pc), pc, 1e-6).reshape(p.shape)
        scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-8)
        worst = max(worst, np.abs(numeric - analytic).max() / scale)
    assert worst < 1e-4


def test_fit_refit_never_beats_least_squares():
    data = synth_circle(400, 4, 0.1, seed=8)
    hp = HyperParams(standardize=False, epochs=60)
    res = fit(data, hp)
    y = data.features @ res.projection
    targets = data.responses[0].values
    sgd_loss = mse_loss(poly_predict_batch(res.heads[0], y), targets)
    ols_loss = mse_loss(poly_predict_batch(ols_fit(y, targets, hp.degree), y), targets)
    assert ols_loss <= sgd_loss + 1e-9


# ---------------------------------------------------------------------------
# fit: guard, divergence, validation


def test_fit_guard_halves_learning_rate_and_recovers():
    data = synth_circle(500, 5, 0.05, seed=7)
    hp = HyperParams(learning_rate=5.0, guard_factor=100.0)
    res = fit(data, hp)
    assert res.learning_rate_final < 1.0
    assert res.train_scores[0] > 0.8
    assert np.isfinite(res.final_train_loss)


def test_fit_guard_exhaustion_raises():
    data = synth_circle(500, 5, 0.05, seed=7)
    hp = HyperParams(learning_rate=5.0, guard_factor=100.0, guard_retries=0)
    with pytest.raises(FitDivergedError) as exc:
        fit(data, hp)
    assert exc.value.epoch >= 0
    assert exc.value.batch >= 0


def test_fit_nonfinite_loss_raises():
    data = synth_circle(300, 5, 0.05, seed=7)
    hp = HyperParams(learning_rate=1e40, guard_factor=1e308)
    with pytest.raises(FitDivergedError, match="non-finite"):
        fit(data, hp)


def test_fit_validates_inputs():
    data = synth_circle(50, 5, 0.05, seed=0)
    with pytest.raises(ValidationError, match="batch_size"):
        fit(data, HyperParams(batch_size=51))
    narrow = Dataset(np.ones((10, 1)), [Response(CONTINUOUS, np.arange(10.0))])
    with pytest.raises(ValidationError, match="two feature columns"):
        fit(narrow, HyperParams(batch_size=5))
    wide = synth_circle(50, 6, 0.05, seed=0)
    with pytest.raises(ValidationError, match="dimension"):
        fit(data, HyperParams(), eval_data=wide)
    blobs = synth_blobs(50, 5, 3, separation=4.0, seed=0)
    with pytest.raises(ValidationError, match="responses differ"):
        fit(data, HyperParams(), eval_data=blobs)


def test_hyperparams_validation():
    for bad in (
        dict(learning_rate=0.0),
        dict(learning_rate=np.inf),
        dict(batch_size=0),
        dict(epochs=0),
        dict(degree=0),
        dict(hidden_width=-1),
        dict(retraction="qr"),
        dict(optimizer="lbfgs"),
        dict(guard_factor=0.0),
        dict(guard_retries=-1),
    ):
        with pytest.raises(ValidationError):
            HyperParams(**bad)


# ---------------------------------------------------------------------------
# fit: heads, paths, reproducibility


def test_fit_categorical_blobs():
    data = synth_blobs(300, 6, 3, separation=6.0, seed=2)
    res = fit(data, HyperParams(epochs=80))
    assert res.response_kinds == [CATEGORICAL]
    assert res.train_scores[0] > 0.9
    probs = predict(res, data.features)[0]
    assert probs.shape == (300, 3)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def test_fit_mixed_responses_uses_generic_path():
    blobs = synth_blobs(300, 6, 3, separation=6.0, seed=2)
    extra = blobs.features[:, 0] ** 2 + blobs.features[:, 1]
    data = Dataset(blobs.features, [blobs.responses[0], Response(CONTINUOUS, extra)])
    res = fit(data, HyperParams(epochs=60))
    assert res.backend == "numpy"
    assert len(res.train_scores) == 2
    assert all(np.isfinite(s) for s in res.train_scores)


def test_fit_adam_path():
    data = synth_circle(1500, 5, 0.05, seed=3)
    res = fit(data, HyperParams(optimizer="adam", epochs=100))
    assert res.backend == "numpy"
    assert res.train_scores[0] > 0.9
    again = fit(data, HyperParams(optimizer="adam", epochs=100))
    assert np.array_equal(res.projection, again.projection)


def test_fit_paper_u_retraction_contract():
    data = synth_circle(600, 5, 0.05, seed=1)
    res = fit(data, HyperParams(retraction="paper_u", epochs=40))
    assert np.allclose(res.projection.T @ res.projection, np.eye(2), atol=1e-10)
    again = fit(data, HyperParams(retraction="paper_u", epochs=40))
    assert np.array_equal(res.projection, again.projection)


def test_fit_is_bit_reproducible():
    data = synth_circle(800, 5, 0.05, seed=4)
    a = fit(data, HyperParams(epochs=30))
    b = fit(data, HyperParams(epochs=30))
    assert np.array_equal(a.projection, b.projection)
    assert a.loss_history == b.loss_history
    assert a.train_scores == b.train_scores
    c = fit(data, HyperParams(epochs=30, seed=1))
    assert not np.array_equal(a.projection, c.projection)


def test_fit_scores_eval_data():
    train = synth_circle(1500, 5, 0.05, seed=3)
    held = synth_circle(500, 5, 0.05, seed=13)
    res = fit(train, HyperParams(epochs=150), eval_data=held)
    assert res.test_scores is not None
    assert len(res.test_scores) == 1
    assert res.test_scores[0] > 0.9


# ---------------------------------------------------------------------------
# predict / evaluate / serialization


def test_predict_returns_original_scale():
    r = np.random.default_rng(5)
    x = r.uniform(-1.0, 1.0, size=(800, 3))
    y = 100.0 + 50.0 * x[:, 0] + 20.0 * x[:, 1]
    data = Dataset(x, [Response(CONTINUOUS, y)])
    res = fit(data, HyperParams(degree=1, epochs=80))
    pred = predict(res, x)[0]
    assert pred.shape == (800,)
    # standardization is undone, so predictions live near the raw targets
    assert abs(np.mean(pred) - np.mean(y)) < 2.0
    assert np.corrcoef(pred, y)[0, 1] > 0.99


def test_evaluate_matches_train_scores():
    data = synth_circle(700, 5, 0.05, seed=6)
    res = fit(data, HyperParams(epochs=80))
    scores = evaluate(res, data)
    assert np.allclose(scores, res.train_scores, atol=1e-9)


def test_evaluate_validates_layout():
    data = synth_circle(200, 5, 0.05, seed=6)
    res = fit(data, HyperParams(epochs=10))
    with pytest.raises(ValidationError):
        evaluate(res, synth_circle(200, 7, 0.05, seed=6))


def test_json_roundtrip_continuous():
    data = synth_circle(600, 5, 0.05, seed=9)
    res = fit(data, HyperParams(epochs=40))
    back = from_json(to_json(res))
    assert np.array_equal(back.projection, res.projection)
    assert np.array_equal(back.heads[0].coefficients, res.heads[0].coefficients)
    assert back.loss_history == res.loss_history
    assert back.hyperparams == res.hyperparams
    assert back.response_names == res.response_names
    probe = data.features[:50]
    assert np.array_equal(predict(back, probe)[0], predict(res, probe)[0])


def test_json_roundtrip_categorical():
    data = synth_blobs(240, 5, 4, separation=6.0, seed=3)
    res = fit(data, HyperParams(epochs=40))
    back = from_json(to_json(res))
    for name in ("w1", "b1", "w2", "b2"):
        assert np.array_equal(getattr(back.heads[0], name), getattr(res.heads[0], name))
    assert np.array_equal(predict(back, data.features)[0], predict(res, data.features)[0])


def test_result_dict_is_json_clean():
    data = synth_circle(200, 5, 0.05, seed=9)
    res = fit(data, HyperParams(epochs=10))
    d = result_to_dict(res)
    assert isinstance(d["version"], str) and d["version"]
    # survives a strict JSON round trip without numpy leftovers
    clone = result_from_dict(json.loads(json.dumps(d)))
    assert np.array_equal(clone.projection, res.projection)
