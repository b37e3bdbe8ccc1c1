"""Joint training of an orthonormal projection and per-response 2D heads.

The objective is the mean over responses and samples of each head's loss on
the projected points y = P^T x. Mini-batch SGD updates all head parameters
and the projection together; after every step P is pulled back onto the set
of D x 2 matrices with orthonormal columns by a closed-form SVD retraction.

A run is deterministic given (data, HyperParams): one RNG seeded from
hp.seed drives the initial projection, head initialization, and the per
epoch shuffles, in that order, on every backend.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from typing import Callable, List, Optional

import numpy as np

from ._version import __version__
from .data import CATEGORICAL, CONTINUOUS, Dataset, ScalingInfo, standardize
from .errors import FitDivergedError, ValidationError
from .kernels import active_backend, get_kernels
from .models import (
    PolynomialHead,
    SoftmaxHead,
    accuracy_score,
    cross_entropy_loss,
    head_gradients,
    monomial_count,
    monomial_exponents,
    poly_predict_batch,
    r2_score,
    softmax_probs,
)

RETRACTION_MODES = ("polar", "paper_u")
OPTIMIZERS = ("sgd", "adam")

# A projection is any D x 2 float array with orthonormal columns; helpers
# below validate rather than wrapping it in a class.
ProjectionMatrix = np.ndarray

_RANK_TOL = 1e-12


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 1e-2
    batch_size: int = 50
    epochs: int = 50
    seed: int = 0
    degree: int = 3
    hidden_width: int = 16
    standardize: bool = True
    retraction: str = "polar"
    optimizer: str = "sgd"
    guard_factor: float = 1e6
    guard_retries: int = 10

    def __post_init__(self):
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise ValidationError("learning_rate must be a positive finite number")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.degree < 1:
            raise ValidationError("degree must be >= 1")
        if self.hidden_width < 0:
            raise ValidationError("hidden_width must be >= 0")
        if self.retraction not in RETRACTION_MODES:
            raise ValidationError(f"retraction must be one of {RETRACTION_MODES}")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(f"optimizer must be one of {OPTIMIZERS}")
        if not self.guard_factor > 0:
            raise ValidationError("guard_factor must be positive")
        if self.guard_retries < 0:
            raise ValidationError("guard_retries must be >= 0")


def _check_projection(p, name: str = "projection") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 2:
        raise ValidationError(f"{name} must be a D x 2 matrix with D >= 2")
    if not np.all(np.isfinite(p)):
        raise ValidationError(f"{name} contains non-finite values")
    return p


def _orthonormal_from_rng(rng, dim: int) -> np.ndarray:
    g = rng.standard_normal((dim, 2))
    u, _, vt = np.linalg.svd(g, full_matrices=False)
    return np.ascontiguousarray(u @ vt)


def random_orthonormal(dim: int, seed: int) -> np.ndarray:
    """Orthonormal basis of a uniformly random 2D subspace of R^dim."""
    if dim < 2:
        raise ValidationError("dim must be >= 2")
    return _orthonormal_from_rng(np.random.default_rng(seed), dim)


def retract(p, mode: str = "polar", rng=None) -> np.ndarray:
    """Nearest matrix with orthonormal columns (polar mode) or the SVD's U.

    The two modes differ only by an in-plane rotation, so they span the same
    subspace. A rank-deficient input (second singular value <= 1e-12) cannot
    be retracted; the lost direction is replaced by a random vector
    orthogonalized against the surviving column and a RuntimeWarning flags
    the event. Pass an rng to make the recovery reproducible.
    """
    p = _check_projection(p)
    if mode not in RETRACTION_MODES:
        raise ValidationError(f"mode must be one of {RETRACTION_MODES}")
    u, s, vt = np.linalg.svd(p, full_matrices=False)
    if s[1] > _RANK_TOL:
        return u @ vt if mode == "polar" else u.copy()
    if rng is None:
        rng = np.random.default_rng()
    out = np.empty_like(p)
    dim = p.shape[0]
    if s[0] > _RANK_TOL:
        out[:, 0] = u[:, 0]
        warnings.warn(
            "projection lost one direction; recovered with a random orthogonal vector",
            RuntimeWarning,
            stacklevel=2,
        )
    else:
        g = rng.standard_normal(dim)
        out[:, 0] = g / np.linalg.norm(g)
        warnings.warn(
            "projection collapsed to rank 0; reinitialized both directions randomly",
            RuntimeWarning,
            stacklevel=2,
        )
    while True:
        w = rng.standard_normal(dim)
        w -= (out[:, 0] @ w) * out[:, 0]
        norm = np.linalg.norm(w)
        if norm > 1e-6:
            break
    out[:, 1] = w / norm
    return out


def project(p, x) -> np.ndarray:
    """Embed rows of x: Y = X P."""
    p = _check_projection(p)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != p.shape[0]:
        raise ValidationError(
            f"x must be n x {p.shape[0]} to match the projection, got {x.shape}"
        )
    return x @ p


def principal_angles(p, q) -> tuple:
    """Angles (radians, ascending) between the column spans of p and q."""
    p = _check_projection(p, "p")
    q = _check_projection(q, "q")
    if p.shape != q.shape:
        raise ValidationError("p and q must share the ambient dimension")
    s = np.linalg.svd(p.T @ q, compute_uv=False)
    ang = np.arccos(np.clip(s, 0.0, 1.0))
    return float(ang[0]), float(ang[1])


def random_projection_preprocess(dim_in: int, dim_out: int, seed: int) -> np.ndarray:
    """Orthonormalized Gaussian D x D' map for shrinking very wide inputs.

    Compose as features @ R before fitting; R @ result.projection is then a
    reportable D x 2 map of the original space.
    """
    if not 2 <= dim_out < dim_in:
        raise ValidationError("need 2 <= dim_out < dim_in")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((dim_in, dim_out)) / np.sqrt(dim_out)
    q, _ = np.linalg.qr(g)
    return q


@dataclass
class FitResult:
    projection: np.ndarray
    heads: list
    loss_history: List[float]
    final_train_loss: float
    train_scores: List[float]
    test_scores: Optional[List[float]]
    epochs_run: int
    seed: int
    hyperparams: HyperParams
    scaling: Optional[ScalingInfo]
    response_names: List[str]
    response_kinds: List[str]
    collapse_events: int
    learning_rate_final: float
    backend: str


def _apply_scaling(d: Dataset, info: ScalingInfo) -> Dataset:
    feats = (d.features - info.feature_mean) / info.feature_scale
    responses = []
    for r, mu, sd in zip(d.responses, info.response_mean, info.response_scale):
        if r.kind == CONTINUOUS:
            responses.append(replace(r, values=(r.values - mu) / sd))
        else:
            responses.append(r)
    return Dataset(feats, responses, column_names=d.column_names, truth_basis=d.truth_basis)


def _mean_initial_loss(x, p, heads, responses) -> float:
    y = x @ p
    total = 0.0
    for head, r in zip(heads, responses):
        if r.kind == CONTINUOUS:
            resid = poly_predict_batch(head, y) - r.values
            total += float(resid @ resid) / len(resid)
        else:
            total += cross_entropy_loss(softmax_probs(head, y), r.values)
    return total / len(heads)


def _scores(x, p, heads, responses) -> List[float]:
    y = x @ p
    out = []
    for head, r in zip(heads, responses):
        if r.kind == CONTINUOUS:
            out.append(r2_score(poly_predict_batch(head, y), r.values))
        else:
            out.append(accuracy_score(softmax_probs(head, y), r.values))
    return out


class _AdamState:
    """Per-tensor first/second moment accumulators, one shared step counter."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step_direction(self, key, grad):
        m = self.m.get(key)
        if m is None:
            m = np.zeros_like(grad)
            v = np.zeros_like(grad)
        else:
            v = self.v[key]
        m = self.beta1 * m + (1 - self.beta1) * grad
        v = self.beta2 * v + (1 - self.beta2) * grad * grad
        self.m[key] = m
        self.v[key] = v
        mhat = m / (1 - self.beta1**self.t)
        vhat = v / (1 - self.beta2**self.t)
        return mhat / (np.sqrt(vhat) + self.eps)

    def snapshot(self):
        return (
            self.t,
            {k: a.copy() for k, a in self.m.items()},
            {k: a.copy() for k, a in self.v.items()},
        )

    def restore(self, snap):
        self.t, m, v = snap
        self.m = {k: a.copy() for k, a in m.items()}
        self.v = {k: a.copy() for k, a in v.items()}


def _epoch_generic(x, responses, perm, p, heads, lr, batch_size, guard_threshold,
                   polar, adam, on_step):
    """Pure-numpy epoch used for adam, mixed response sets, and step hooks.

    Matches the kernel contract: mutates p and head arrays in place, returns
    (loss_sum, status, batch_index, collapses) with status 0 ok / 1 guard
    tripped / 2 non-finite loss.
    """
    kern = get_kernels("numpy")
    n = x.shape[0]
    n_resp = len(responses)
    loss_sum = 0.0
    collapses = 0
    for start in range(0, n, batch_size):
        idx = perm[start : start + batch_size]
        xb = x[idx]
        nb = idx.shape[0]
        y = xb @ p
        dy = np.zeros((nb, 2))
        batch_loss = 0.0
        grads = []
        for head, r in zip(heads, responses):
            tb = r.values[idx]
            if r.kind == CONTINUOUS:
                resid = poly_predict_batch(head, y) - tb
                batch_loss += float(resid @ resid) / nb / n_resp
            else:
                batch_loss += cross_entropy_loss(softmax_probs(head, y), tb) / n_resp
            g_head, g_y = head_gradients(head, y, tb)
            dy += g_y / n_resp
            grads.append(g_head)
        if not np.isfinite(batch_loss):
            return loss_sum, kern.NONFINITE, start // batch_size, collapses
        if batch_loss > guard_threshold:
            return loss_sum, kern.GUARD, start // batch_size, collapses
        loss_sum += batch_loss * nb
        gp = xb.T @ dy
        if adam is not None:
            adam.t += 1
            gp = adam.step_direction("p", gp)
        for li, (head, g_head) in enumerate(zip(heads, grads)):
            if isinstance(head, PolynomialHead):
                g = g_head / n_resp
                if adam is not None:
                    g = adam.step_direction(("theta", li), g)
                head.coefficients -= lr * g
            else:
                names = ("w1", "b1", "w2", "b2")
                tensors = (head.w1, head.b1, head.w2, head.b2)
                for name, tensor, g in zip(names, tensors, g_head):
                    if tensor is None:
                        continue
                    g = g / n_resp
                    if adam is not None:
                        g = adam.step_direction((name, li), g)
                    tensor -= lr * g
        p_new, collapsed = kern.retract2(p - lr * gp, polar)
        if collapsed:
            collapses += 1
        p[:] = p_new
        if on_step is not None:
            on_step(p)
    return loss_sum, kern.OK, -1, collapses


def fit(
    data: Dataset,
    hp: Optional[HyperParams] = None,
    eval_data: Optional[Dataset] = None,
    on_step: Optional[Callable] = None,
) -> FitResult:
    """Run the joint training loop and score the result.

    eval_data, when given, must match data's dimension and response layout;
    it is transformed with the training scaling and scored after the fit
    (R^2 per continuous response, accuracy per categorical one). on_step, a
    testing hook called with the live projection after every step, forces
    the pure-numpy path.
    """
    if hp is None:
        hp = HyperParams()
    if data.response_count < 1:
        raise ValidationError("dataset must carry at least one response")
    if data.dim < 2:
        raise ValidationError("fit needs at least two feature columns")
    n = data.sample_count
    if hp.batch_size > n:
        raise ValidationError(f"batch_size {hp.batch_size} exceeds sample count {n}")
    if eval_data is not None:
        if eval_data.dim != data.dim:
            raise ValidationError("eval_data dimension differs from training data")
        if [r.kind for r in eval_data.responses] != [r.kind for r in data.responses]:
            raise ValidationError("eval_data responses differ from training data")

    scaling = None
    train = data
    if hp.standardize:
        train, scaling = standardize(data)
        if eval_data is not None:
            eval_data = _apply_scaling(eval_data, scaling)

    x = np.ascontiguousarray(train.features)
    rng = np.random.default_rng(hp.seed)
    p = _orthonormal_from_rng(rng, data.dim)
    heads = []
    for r in train.responses:
        if r.kind == CONTINUOUS:
            heads.append(PolynomialHead.zeros(hp.degree))
        else:
            heads.append(SoftmaxHead.initialize(r.class_count, hp.hidden_width, rng))

    kinds = [r.kind for r in train.responses]
    all_continuous = all(k == CONTINUOUS for k in kinds)
    single_softmax = kinds == [CATEGORICAL]
    use_generic = (
        hp.optimizer == "adam" or on_step is not None or not (all_continuous or single_softmax)
    )
    polar = hp.retraction == "polar"
    backend = "numpy" if use_generic else active_backend()
    kern = get_kernels("numpy") if use_generic else get_kernels()

    guard_threshold = hp.guard_factor * max(
        _mean_initial_loss(x, p, heads, train.responses), 1e-12
    )
    adam = _AdamState() if hp.optimizer == "adam" else None

    if not use_generic and all_continuous:
        fmat = np.ascontiguousarray(np.stack([r.values for r in train.responses]))
        theta = np.ascontiguousarray(np.stack([h.coefficients for h in heads]))
        ea, eb = monomial_exponents(hp.degree)
        ea = np.ascontiguousarray(ea)
        eb = np.ascontiguousarray(eb)
    elif not use_generic:
        labels = np.ascontiguousarray(train.responses[0].values)
        head = heads[0]
        if hp.hidden_width > 0:
            w1, b1 = head.w1, head.b1
        else:
            w1, b1 = np.zeros((1, 2)), np.zeros(1)
        w2, b2 = head.w2, head.b2

    def take_snapshot():
        if use_generic:
            return (p.copy(), _copy_head_params(heads), None if adam is None else adam.snapshot())
        if all_continuous:
            return (p.copy(), theta.copy())
        return (p.copy(), w1.copy(), b1.copy(), w2.copy(), b2.copy())

    def restore_snapshot(snapshot):
        if use_generic:
            p[:] = snapshot[0]
            _restore_head_params(heads, snapshot[1])
            if adam is not None:
                adam.restore(snapshot[2])
        elif all_continuous:
            p[:], theta[:] = snapshot[0], snapshot[1]
        else:
            p[:], w1[:], b1[:], w2[:], b2[:] = snapshot

    loss_history = []
    collapse_events = 0
    lr = hp.learning_rate
    # Start state of the best epoch seen so far. The guard checks batch loss
    # before each step, so an epoch's final step can leave the state far above
    # the threshold unchecked; restarting the next epoch from that state is
    # futile at any learning rate. Retries that do not resolve on the first
    # attempt back up here instead.
    best_snap = take_snapshot()
    best_mean = np.inf
    for epoch in range(hp.epochs):
        perm = rng.permutation(n)
        snap = take_snapshot()
        attempts = 0
        while True:
            if use_generic:
                loss_sum, status, bad_batch, coll = _epoch_generic(
                    x, train.responses, perm, p, heads, lr, hp.batch_size,
                    guard_threshold, polar, adam, on_step,
                )
            elif all_continuous:
                loss_sum, status, bad_batch, coll = kern.epoch_poly(
                    x, fmat, perm, p, theta, ea, eb, lr, hp.batch_size,
                    guard_threshold, polar,
                )
            else:
                loss_sum, status, bad_batch, coll = kern.epoch_softmax(
                    x, labels, perm, p, w1, b1, w2, b2, hp.hidden_width, lr,
                    hp.batch_size, guard_threshold, polar,
                )
            if status == kern.OK:
                collapse_events += coll
                if loss_sum / n <= best_mean:
                    best_mean = loss_sum / n
                    best_snap = snap
                break
            if status == kern.NONFINITE:
                raise FitDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {bad_batch}",
                    epoch=epoch,
                    batch=bad_batch,
                )
            attempts += 1
            if attempts > hp.guard_retries:
                raise FitDivergedError(
                    f"loss exceeded {hp.guard_factor:g}x its initial value at epoch "
                    f"{epoch}, batch {bad_batch}; gave up after {hp.guard_retries} "
                    "learning-rate halvings",
                    epoch=epoch,
                    batch=bad_batch,
                )
            lr *= 0.5
            if bad_batch == 0 or attempts > 1:
                # The snapshot itself is over the threshold, or restarting
                # from it already failed once; back up to the best state.
                restore_snapshot(best_snap)
                snap = take_snapshot()
            else:
                restore_snapshot(snap)
        loss_history.append(loss_sum / n)

    if not use_generic and all_continuous:
        heads = [PolynomialHead(hp.degree, theta[l].copy()) for l in range(len(heads))]

    train_scores = _scores(x, p, heads, train.responses)
    test_scores = None
    if eval_data is not None:
        test_scores = _scores(eval_data.features, p, heads, eval_data.responses)

    return FitResult(
        projection=p,
        heads=heads,
        loss_history=loss_history,
        final_train_loss=loss_history[-1],
        train_scores=train_scores,
        test_scores=test_scores,
        epochs_run=len(loss_history),
        seed=hp.seed,
        hyperparams=hp,
        scaling=scaling,
        response_names=[r.name for r in data.responses],
        response_kinds=kinds,
        collapse_events=collapse_events,
        learning_rate_final=lr,
        backend=backend,
    )


def _copy_head_params(heads):
    out = []
    for h in heads:
        if isinstance(h, PolynomialHead):
            out.append((h.coefficients.copy(),))
        else:
            out.append(tuple(a.copy() if a is not None else None
                             for a in (h.w1, h.b1, h.w2, h.b2)))
    return out


def _restore_head_params(heads, params):
    for h, saved in zip(heads, params):
        if isinstance(h, PolynomialHead):
            h.coefficients[:] = saved[0]
        else:
            for tensor, arr in zip((h.w1, h.b1, h.w2, h.b2), saved):
                if tensor is not None:
                    tensor[:] = arr


def predict(result: FitResult, features) -> list:
    """Per-response predictions in original units (probabilities for labels)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != result.projection.shape[0]:
        raise ValidationError("features do not match the fitted dimension")
    if result.scaling is not None:
        x = (x - result.scaling.feature_mean) / result.scaling.feature_scale
    y = x @ result.projection
    out = []
    for i, head in enumerate(result.heads):
        if result.response_kinds[i] == CONTINUOUS:
            pred = poly_predict_batch(head, y)
            if result.scaling is not None:
                pred = pred * result.scaling.response_scale[i] + result.scaling.response_mean[i]
            out.append(pred)
        else:
            out.append(softmax_probs(head, y))
    return out


def evaluate(result: FitResult, data: Dataset) -> List[float]:
    """Score each response on new data: R^2 (continuous) or accuracy."""
    if [r.kind for r in data.responses] != result.response_kinds:
        raise ValidationError("dataset responses do not match the fitted layout")
    preds = predict(result, data.features)
    scores = []
    for pred, r in zip(preds, data.responses):
        if r.kind == CONTINUOUS:
            scores.append(r2_score(pred, r.values))
        else:
            scores.append(accuracy_score(pred, r.values))
    return scores


def _head_to_dict(head) -> dict:
    if isinstance(head, PolynomialHead):
        return {
            "kind": "polynomial",
            "degree": head.degree,
            "coefficients": head.coefficients.tolist(),
        }
    return {
        "kind": "softmax",
        "hidden_width": head.hidden_width,
        "w1": None if head.w1 is None else head.w1.tolist(),
        "b1": None if head.b1 is None else head.b1.tolist(),
        "w2": head.w2.tolist(),
        "b2": head.b2.tolist(),
    }


def _head_from_dict(d):
    if d["kind"] == "polynomial":
        return PolynomialHead(d["degree"], np.asarray(d["coefficients"], dtype=np.float64))
    return SoftmaxHead(
        hidden_width=d["hidden_width"],
        w1=None if d["w1"] is None else np.asarray(d["w1"], dtype=np.float64),
        b1=None if d["b1"] is None else np.asarray(d["b1"], dtype=np.float64),
        w2=np.asarray(d["w2"], dtype=np.float64),
        b2=np.asarray(d["b2"], dtype=np.float64),
    )


def result_to_dict(result: FitResult) -> dict:
    """JSON-ready dict with a fixed key order so serialization is stable."""
    hp = result.hyperparams
    scaling = None
    if result.scaling is not None:
        scaling = {
            "feature_mean": result.scaling.feature_mean.tolist(),
            "feature_scale": result.scaling.feature_scale.tolist(),
            "response_mean": list(result.scaling.response_mean),
            "response_scale": list(result.scaling.response_scale),
        }
    return {
        "version": __version__,
        "seed": result.seed,
        "backend": result.backend,
        "hyperparams": {
            "learning_rate": hp.learning_rate,
            "batch_size": hp.batch_size,
            "epochs": hp.epochs,
            "seed": hp.seed,
            "degree": hp.degree,
            "hidden_width": hp.hidden_width,
            "standardize": hp.standardize,
            "retraction": hp.retraction,
            "optimizer": hp.optimizer,
            "guard_factor": hp.guard_factor,
            "guard_retries": hp.guard_retries,
        },
        "projection": result.projection.tolist(),
        "heads": [_head_to_dict(h) for h in result.heads],
        "response_names": list(result.response_names),
        "response_kinds": list(result.response_kinds),
        "loss_history": list(result.loss_history),
        "final_train_loss": result.final_train_loss,
        "train_scores": list(result.train_scores),
        "test_scores": None if result.test_scores is None else list(result.test_scores),
        "epochs_run": result.epochs_run,
        "learning_rate_final": result.learning_rate_final,
        "collapse_events": result.collapse_events,
        "scaling": scaling,
    }


def to_json(result: FitResult) -> str:
    return json.dumps(result_to_dict(result), indent=2)


def result_from_dict(d: dict) -> FitResult:
    scaling = None
    if d.get("scaling") is not None:
        s = d["scaling"]
        scaling = ScalingInfo(
            feature_mean=np.asarray(s["feature_mean"], dtype=np.float64),
            feature_scale=np.asarray(s["feature_scale"], dtype=np.float64),
            response_mean=list(s["response_mean"]),
            response_scale=list(s["response_scale"]),
        )
    return FitResult(
        projection=np.asarray(d["projection"], dtype=np.float64),
        heads=[_head_from_dict(h) for h in d["heads"]],
        loss_history=list(d["loss_history"]),
        final_train_loss=d["final_train_loss"],
        train_scores=list(d["train_scores"]),
        test_scores=None if d["test_scores"] is None else list(d["test_scores"]),
        epochs_run=d["epochs_run"],
        seed=d["seed"],
        hyperparams=HyperParams(**d["hyperparams"]),
        scaling=scaling,
        response_names=list(d["response_names"]),
        response_kinds=list(d["response_kinds"]),
        collapse_events=d["collapse_events"],
        learning_rate_final=d["learning_rate_final"],
        backend=d.get("backend", "numpy"),
    )


def from_json(text: str) -> FitResult:
    return result_from_dict(json.loads(text))
