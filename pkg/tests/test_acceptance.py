"""End-to-end acceptance battery.

Each test body is one numbered claim about the whole pipeline, run at full
scale with pinned tolerances. The terminal summary prints one PASS/FAIL line
per criterion (see conftest).
"""

import os
import time

import numpy as np
from scipy import stats

from conftest import (
    head_fd_max_rel_err,
    noise_dataset,
    random_poly_instance,
    random_softmax_instance,
)
from funcview.cli import main as cli_main
from funcview.data import (
    Dataset,
    Response,
    CONTINUOUS,
    shuffle_response,
    synth_blobs,
    synth_circle,
    synth_multi,
    train_test_split,
)
from funcview.models import mse_loss, ols_fit, poly_predict_batch
from funcview.optimizer import HyperParams, fit, principal_angles, retract
from funcview.significance import (
    default_grid_hyperparams,
    grid_study,
    null_distribution,
    overfit_verdict,
    p_value_empirical,
    p_value_parametric,
)


def circle_split(dim: int, seed: int):
    data = synth_circle(3750, dim, 0.05, seed=seed)
    split = train_test_split(data, 0.2, seed=seed)
    return data, split.train, split.test


def test_criterion_1_circle_recovery():
    # 10 seeds per dimension, training on N=3000 with default hyperparameters:
    # at least 8 must land within 5 degrees of the planted plane with held-out
    # R^2 >= 0.9, and no single fit may take over a minute
    for dim in (5, 30):
        hits = 0
        for seed in range(10):
            data, train, test = circle_split(dim, seed)
            started = time.perf_counter()
            res = fit(train, HyperParams(seed=seed), eval_data=test)
            assert time.perf_counter() - started < 60.0
            angle = np.degrees(principal_angles(res.projection, data.truth_basis)[1])
            hits += (angle < 5.0) and (res.test_scores[0] >= 0.9)
        assert hits >= 8, f"dim {dim}: only {hits}/10 seeds recovered the plane"


def test_criterion_2_permutation_significance():
    # the structured fit must beat all 300 shuffled refits (empirical p at its
    # floor of 1/301) at both dimensions, while a shuffled-response fit ranks
    # as unremarkable against the same null
    for dim in (5, 30):
        _, train, test = circle_split(dim, 0)
        hp = HyperParams()
        res = fit(train, hp, eval_data=test)
        null = null_distribution(train, hp, trials=300, seed=0)
        p_obs = p_value_empirical(res.final_train_loss, null)
        assert p_obs == (1 / 301), f"dim {dim}: p={p_obs}"
        shuffled = fit(shuffle_response(train, 0, seed=1), hp)
        p_shuf = p_value_empirical(shuffled.final_train_loss, null)
        assert p_shuf > 0.05, f"dim {dim}: shuffled p={p_shuf}"


def test_criterion_3_overfitting_grid():
    # the full dimension x sample-size noise study: R^2 falls with N and rises
    # with D monotonically (|Spearman| > 0.8 along every grid line), the
    # sample-starved corner is significantly above the 0.5 reference and the
    # well-sampled cells are not; the whole sweep stays under 30 minutes
    started = time.perf_counter()
    res = grid_study(
        hp_template=default_grid_hyperparams(),
        trials_per_cell=20,
        seed=0,
        reference_r2=0.5,
    )
    assert time.perf_counter() - started < 1800.0
    assert res.failures.sum() <= 0.05 * 720

    dims = np.array(res.dims)
    sizes = np.array(res.sizes)
    for di in range(len(dims)):
        rho = stats.spearmanr(sizes, res.mean_r2[di]).statistic
        assert rho < -0.8, f"dim {dims[di]}: R^2 not falling with N (rho={rho:.3f})"
    for si in range(len(sizes)):
        rho = stats.spearmanr(dims, res.mean_r2[:, si]).statistic
        assert rho > 0.8, f"N={sizes[si]}: R^2 not rising with D (rho={rho:.3f})"

    for di, d in enumerate(dims):
        for si, n in enumerate(sizes):
            p = res.p_at_reference[di, si]
            if d >= 50 and n <= 100:
                assert p < 0.05, f"starved cell D={d} N={n}: p={p}"
            if n >= 10 * d:
                assert p >= 0.05, f"safe cell D={d} N={n}: p={p}"


def test_criterion_4_many_responses():
    # fifteen simultaneous response functions on a shared 100k-sample plane:
    # the average held-out R^2 clears 0.8 and the span is recovered
    data = synth_multi(100_000, 5, 15, seed=0)
    split = train_test_split(data, 0.2, seed=0)
    res = fit(split.train, HyperParams(), eval_data=split.test)
    assert float(np.mean(res.test_scores)) >= 0.8
    angle = np.degrees(principal_angles(res.projection, data.truth_basis)[1])
    assert angle < 5.0


def test_criterion_5_classification():
    # five well-separated classes in 784 dimensions: held-out accuracy >= 0.95
    # with a train-test gap of at most 0.05
    data = synth_blobs(10_000, 784, 5, separation=8.0, seed=0)
    split = train_test_split(data, 0.2, seed=0)
    res = fit(split.train, HyperParams(), eval_data=split.test)
    assert res.test_scores[0] >= 0.95
    assert res.train_scores[0] - res.test_scores[0] <= 0.05


def test_criterion_6_wide_noise_is_flagged():
    # 20000 features, 800 samples, pure-noise response: the parametric p stays
    # insignificant, held-out R^2 stays near zero and the verdict is "suspect"
    r = np.random.default_rng(0)
    data = Dataset(
        r.random((800, 20_000)), [Response(CONTINUOUS, r.standard_normal(800), "noise")]
    )
    hp = HyperParams(epochs=10)
    split = train_test_split(data, 0.2, seed=0)
    res = fit(split.train, hp, eval_data=split.test)
    null = null_distribution(split.train, hp, trials=40, seed=1)
    p = p_value_parametric(res.final_train_loss, null)
    assert p > 0.05
    assert res.test_scores[0] < 0.1
    assert overfit_verdict(p, res.train_scores[0], res.test_scores[0]) == "suspect"


def test_criterion_7_numerical_contracts(tmp_path, capsys):
    # (a) analytic head gradients match central finite differences on 100
    # random instances of each head type
    r = np.random.default_rng(7)
    for i in range(100):
        head, y, t = random_poly_instance(r, degree=1 + i % 4)
        assert head_fd_max_rel_err(head, y, t) < 1e-5
    for i in range(100):
        head, y, labels = random_softmax_instance(r, hidden=(0, 8)[i % 2])
        assert head_fd_max_rel_err(head, y, labels) < 1e-5

    # (b) the projection stays orthonormal after every single step
    drift = []
    data = synth_circle(500, 10, 0.05, seed=2)
    fit(
        data,
        HyperParams(epochs=5, batch_size=25),
        on_step=lambda p: drift.append(np.abs(p.T @ p - np.eye(2)).max()),
    )
    assert len(drift) == 5 * 20
    assert max(drift) < 1e-8

    # (c) retraction is idempotent
    for k in range(50):
        m = np.random.default_rng(k).normal(size=(3 + k % 9, 2)) * 10.0 ** (k % 5 - 2)
        once = retract(m)
        assert np.abs(retract(once) - once).max() < 1e-12

    # (d) the refit loss is invariant under in-plane rotation
    rr = np.random.default_rng(3)
    y = rr.normal(size=(200, 2))
    t = np.tanh(y[:, 0] * 2.0) + y[:, 1] ** 2 + 0.1 * rr.normal(size=200)
    base = mse_loss(poly_predict_batch(ols_fit(y, t, 3), y), t)
    for theta in np.linspace(0.1, 3.0, 7):
        c, s = np.cos(theta), np.sin(theta)
        yr = y @ np.array([[c, -s], [s, c]])
        rotated = mse_loss(poly_predict_batch(ols_fit(yr, t, 3), yr), t)
        assert abs(rotated - base) < 1e-9

    # (e) the SGD head never beats a closed-form refit on the same embedding
    data = synth_circle(600, 5, 0.1, seed=4)
    res = fit(data, HyperParams(standardize=False, epochs=60))
    emb = data.features @ res.projection
    targets = data.responses[0].values
    sgd = mse_loss(poly_predict_batch(res.heads[0], emb), targets)
    refit = mse_loss(poly_predict_batch(ols_fit(emb, targets, 3), emb), targets)
    assert refit <= sgd + 1e-12

    # (f) bit-for-bit reproducibility of fits, null distributions and the CLI
    data = synth_circle(800, 5, 0.05, seed=5)
    a = fit(data, HyperParams(epochs=30))
    b = fit(data, HyperParams(epochs=30))
    assert np.array_equal(a.projection, b.projection) and a.loss_history == b.loss_history
    hp = HyperParams(epochs=15, batch_size=25)
    n1 = null_distribution(noise_dataset(150, 4), hp, trials=10, seed=3)
    n2 = null_distribution(noise_dataset(150, 4), hp, trials=10, seed=3)
    assert np.array_equal(n1.samples, n2.samples)

    bundle = str(tmp_path / "data")
    assert cli_main(["synth", "circle", "--n", "300", "--dim", "5", "--out", bundle]) == 0
    blobs = []
    for tag in ("r1", "r2"):
        out_dir = str(tmp_path / tag)
        assert cli_main(["fit", "--data", bundle, "--out", out_dir, "--epochs", "20"]) == 0
        with open(os.path.join(out_dir, "fit.json"), "rb") as fh:
            blobs.append(fh.read())
    capsys.readouterr()
    assert blobs[0] == blobs[1]
