"""Permutation-based trust checks for fitted projections.

A null distribution answers "how good would the fit look if the response
carried no information?": every response column is shuffled across samples
and the whole training procedure (projection and heads, fresh random
initialization) is rerun, many times. Observed scores are then ranked
against the null samples (empirical p) or against a Gaussian fitted to
their moments (parametric p, able to resolve tails far beyond 1/T).

The grid study maps how training R^2 on pure-noise responses varies with
dimension and sample size, locating the overfitting regime.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .data import CONTINUOUS, Dataset, Response, standardize
from .errors import FitDivergedError, ValidationError
from .optimizer import FitResult, HyperParams, fit

METRIC_LOSS = "loss"
METRIC_R2 = "r2"


@dataclass(frozen=True)
class NullDistribution:
    metric_kind: str
    samples: np.ndarray
    trial_seeds: np.ndarray
    fit_hyperparams: HyperParams

    def __post_init__(self):
        if self.metric_kind not in (METRIC_LOSS, METRIC_R2):
            raise ValidationError("metric_kind must be 'loss' or 'r2'")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.shape[0] < 2:
            raise ValidationError("need at least 2 null samples")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("null samples must be finite")
        object.__setattr__(self, "samples", samples)

    @property
    def trials(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class SignificanceReport:
    observed: float
    null: NullDistribution
    p_empirical: float
    p_parametric: float
    verdict_threshold: float = 0.05


def _phi(z: float) -> float:
    """Standard normal CDF."""
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _shuffle_all_responses(data: Dataset, seed: int) -> Dataset:
    rng = np.random.default_rng(seed)
    n = data.sample_count
    responses = [
        replace(r, values=r.values[rng.permutation(n)]) for r in data.responses
    ]
    return Dataset(
        features=data.features,
        responses=responses,
        column_names=data.column_names,
        truth_basis=data.truth_basis,
    )


def _metric_from_result(result: FitResult, metric: str) -> float:
    if metric == METRIC_LOSS:
        return result.final_train_loss
    return float(np.mean(result.train_scores))


def null_distribution(
    data: Dataset,
    hp: HyperParams,
    trials: int = 300,
    seed: int = 0,
    metric: str = METRIC_LOSS,
    threads: int = 1,
) -> NullDistribution:
    """Fit `trials` shuffled copies of the responses, recording one score each.

    Each trial draws two seeds from a SeedSequence stream: one shuffles every
    response column, the other drives the fit. Trials are independent, so a
    thread pool may run them concurrently; the collected samples are ordered
    by trial index either way and the output is reproducible bit for bit.
    """
    if trials < 2:
        raise ValidationError("need at least 2 trials")
    if metric == METRIC_R2 and any(r.kind != CONTINUOUS for r in data.responses):
        raise ValidationError("r2 metric requires all-continuous responses")
    if metric not in (METRIC_LOSS, METRIC_R2):
        raise ValidationError("metric must be 'loss' or 'r2'")

    # Standardizing commutes with shuffling, so do it once up front.
    base = standardize(data)[0] if hp.standardize else data
    base_hp = replace(hp, standardize=False)
    states = np.random.SeedSequence(seed).generate_state(2 * trials, dtype=np.uint64)

    def run_trial(t: int) -> float:
        shuffled = _shuffle_all_responses(base, int(states[2 * t]))
        hp_t = replace(base_hp, seed=int(states[2 * t + 1]))
        try:
            result = fit(shuffled, hp_t)
        except FitDivergedError as e:
            raise FitDivergedError(
                f"null trial {t}: {e}", epoch=e.epoch, batch=e.batch
            ) from e
        return _metric_from_result(result, metric)

    samples = np.empty(trials)
    if threads <= 1:
        for t in range(trials):
            samples[t] = run_trial(t)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for t, value in enumerate(pool.map(run_trial, range(trials))):
                samples[t] = value

    return NullDistribution(
        metric_kind=metric,
        samples=samples,
        trial_seeds=states[0::2].copy(),
        fit_hyperparams=hp,
    )


def p_value_empirical(observed: float, null: NullDistribution) -> float:
    """Permutation p with add-one correction; never exactly zero.

    For loss metrics a lower observed value is stronger evidence, so the rank
    counts null samples <= observed; for R2 the direction flips.
    """
    if null.metric_kind == METRIC_LOSS:
        hits = int(np.count_nonzero(null.samples <= observed))
    else:
        hits = int(np.count_nonzero(null.samples >= observed))
    return (1 + hits) / (null.trials + 1)


def p_value_parametric(observed: float, null: NullDistribution) -> float:
    """Gaussian tail probability from the null sample moments."""
    mean = float(null.samples.mean())
    sd = float(null.samples.std(ddof=1))
    if sd == 0.0:
        raise ValidationError("null distribution has zero variance")
    z = (observed - mean) / sd
    if null.metric_kind == METRIC_LOSS:
        return _phi(z)
    return _phi(-z)


def significance_report(
    observed: float, null: NullDistribution, verdict_threshold: float = 0.05
) -> SignificanceReport:
    return SignificanceReport(
        observed=float(observed),
        null=null,
        p_empirical=p_value_empirical(observed, null),
        p_parametric=p_value_parametric(observed, null),
        verdict_threshold=verdict_threshold,
    )


def overfit_verdict(
    p_value: float,
    train_score: float,
    test_score: Optional[float] = None,
    threshold: float = 0.05,
) -> str:
    """Appendix-style check: "suspect" when the p-value is weak or the test
    score gives up more than half of the training score."""
    if p_value > threshold:
        return "suspect"
    if test_score is not None and train_score > 0 and test_score < 0.5 * train_score:
        return "suspect"
    return "ok"


@dataclass(frozen=True)
class GridStudyResult:
    dims: List[int]
    sizes: List[int]
    mean_r2: np.ndarray
    p_at_reference: np.ndarray
    trials_per_cell: int
    reference_r2: float
    failures: np.ndarray
    r2_samples: np.ndarray

    def __post_init__(self):
        shape = (len(self.dims), len(self.sizes))
        if self.mean_r2.shape != shape or self.p_at_reference.shape != shape:
            raise ValidationError("matrix shapes must match the grid")


DEFAULT_GRID_DIMS = (2, 5, 10, 20, 50, 100)
DEFAULT_GRID_SIZES = (50, 100, 300, 1000, 3000, 10000)


def default_grid_hyperparams() -> HyperParams:
    # Longer, cooler schedule than the fit default: the small-N cells need the
    # extra epochs to reach their overfitting plateau, and degree-4 monomials
    # blow up under the stock rate at D >= 50. The tight guard factor catches
    # those excursions while the state is still recoverable.
    return HyperParams(
        degree=4,
        epochs=800,
        learning_rate=5e-3,
        batch_size=25,
        guard_factor=1e3,
    )


def _p_at_reference(samples: np.ndarray, reference: float) -> float:
    """Lower-tail Gaussian probability that a pure-noise fit stays below the
    reference R^2. Small in the overfitting regime (noise fits beat the
    reference routinely), near 1 when samples are plentiful."""
    mean = float(samples.mean())
    if samples.shape[0] < 2:
        return math.nan
    sd = float(samples.std(ddof=1))
    if sd == 0.0:
        if reference > mean:
            return 1.0
        if reference < mean:
            return 0.0
        return 0.5
    return _phi((reference - mean) / sd)


def grid_study(
    dims=DEFAULT_GRID_DIMS,
    sizes=DEFAULT_GRID_SIZES,
    hp_template: Optional[HyperParams] = None,
    trials_per_cell: int = 20,
    seed: int = 0,
    reference_r2: float = 0.5,
    threads: int = 1,
) -> GridStudyResult:
    """Training R^2 of noise fits across a (dimension x sample size) grid.

    Every trial draws i.i.d. uniform features and an i.i.d. Gaussian
    response, fits with the template hyperparameters (batch size capped at
    the cell's N), and records the training R^2. Diverged trials are counted
    in `failures` and excluded from the cell statistics.
    """
    dims = [int(d) for d in dims]
    sizes = [int(n) for n in sizes]
    if not dims or not sizes:
        raise ValidationError("dims and sizes must be nonempty")
    if trials_per_cell < 2:
        raise ValidationError("need at least 2 trials per cell")
    if any(d < 2 for d in dims):
        raise ValidationError("dims must be >= 2")
    if hp_template is None:
        hp_template = default_grid_hyperparams()

    n_cells = len(dims) * len(sizes)
    total = n_cells * trials_per_cell
    states = np.random.SeedSequence(seed).generate_state(2 * total, dtype=np.uint64)

    def run_trial(flat: int) -> float:
        cell, t = divmod(flat, trials_per_cell)
        di, si = divmod(cell, len(sizes))
        d, n = dims[di], sizes[si]
        rng = np.random.default_rng(int(states[2 * flat]))
        features = rng.random((n, d))
        response = Response(CONTINUOUS, rng.standard_normal(n), "noise")
        data = Dataset(features, [response])
        hp = replace(
            hp_template,
            batch_size=min(hp_template.batch_size, n),
            seed=int(states[2 * flat + 1]),
        )
        try:
            return fit(data, hp).train_scores[0]
        except FitDivergedError:
            return math.nan

    flat_samples = np.empty(total)
    if threads <= 1:
        for i in range(total):
            flat_samples[i] = run_trial(i)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for i, value in enumerate(pool.map(run_trial, range(total))):
                flat_samples[i] = value

    r2_samples = flat_samples.reshape(len(dims), len(sizes), trials_per_cell)
    mean_r2 = np.full((len(dims), len(sizes)), math.nan)
    p_ref = np.full((len(dims), len(sizes)), math.nan)
    failures = np.zeros((len(dims), len(sizes)), dtype=np.int64)
    for di in range(len(dims)):
        for si in range(len(sizes)):
            cell = r2_samples[di, si]
            good = cell[np.isfinite(cell)]
            failures[di, si] = trials_per_cell - good.shape[0]
            if good.shape[0]:
                mean_r2[di, si] = good.mean()
            if good.shape[0] >= 2:
                p_ref[di, si] = _p_at_reference(good, reference_r2)

    return GridStudyResult(
        dims=dims,
        sizes=sizes,
        mean_r2=mean_r2,
        p_at_reference=p_ref,
        trials_per_cell=trials_per_cell,
        reference_r2=reference_r2,
        failures=failures,
        r2_samples=r2_samples,
    )


def report_to_dict(report: SignificanceReport) -> dict:
    return {
        "observed": report.observed,
        "metric": report.null.metric_kind,
        "p_empirical": report.p_empirical,
        "p_parametric": report.p_parametric,
        "verdict_threshold": report.verdict_threshold,
        "trials": report.null.trials,
        "null_mean": float(report.null.samples.mean()),
        "null_sd": float(report.null.samples.std(ddof=1)),
        "null_samples": report.null.samples.tolist(),
        "trial_seeds": [int(s) for s in report.null.trial_seeds],
    }


def grid_to_dict(result: GridStudyResult) -> dict:
    return {
        "dims": list(result.dims),
        "sizes": list(result.sizes),
        "trials_per_cell": result.trials_per_cell,
        "reference_r2": result.reference_r2,
        "mean_r2": result.mean_r2.tolist(),
        "p_at_reference": result.p_at_reference.tolist(),
        "failures": result.failures.tolist(),
    }


def grid_matrix_csv(result: GridStudyResult, which: str = "r2") -> str:
    """One matrix as CSV: rows are dims, columns are sizes."""
    if which == "r2":
        matrix = result.mean_r2
    elif which == "p":
        matrix = result.p_at_reference
    else:
        raise ValidationError("which must be 'r2' or 'p'")
    lines = ["dim/size," + ",".join(str(n) for n in result.sizes)]
    for di, d in enumerate(result.dims):
        lines.append(str(d) + "," + ",".join(repr(float(v)) for v in matrix[di]))
    return "\n".join(lines) + "\n"
