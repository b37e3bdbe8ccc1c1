"""Datasets: containers, ingestion, standardization, splitting, generators.

A Dataset couples an N x D feature matrix with one or more response columns
(continuous values or categorical label indices). Synthetic generators build
datasets whose responses depend only on a hidden two dimensional subspace of
the features, and record that subspace so recovery can be scored.
"""

from __future__ import annotations

import ast
import csv
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import ValidationError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Response:
    """One response column: a target the projection must keep predictable."""

    kind: str
    values: np.ndarray
    name: str = "response"
    class_count: Optional[int] = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise ValidationError(f"unknown response kind: {self.kind!r}")
        values = np.asarray(self.values)
        if self.kind == CONTINUOUS:
            values = values.astype(np.float64, copy=False)
            if not np.all(np.isfinite(values)):
                raise ValidationError(f"response {self.name!r} has non-finite values")
            if self.class_count is not None:
                raise ValidationError("class_count is only valid for categorical responses")
        else:
            values = values.astype(np.int64, copy=False)
            if self.class_count is None or self.class_count < 2:
                raise ValidationError("categorical response needs class_count >= 2")
            if values.size and (values.min() < 0 or values.max() >= self.class_count):
                raise ValidationError(
                    f"labels of {self.name!r} must lie in 0..{self.class_count - 1}"
                )
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    responses: list
    column_names: Optional[list] = None
    # Orthonormal D x 2 basis of the generating subspace, for synthetic data only.
    truth_basis: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValidationError("features must be a 2-D matrix")
        n, d = feats.shape
        if n < 1 or d < 1:
            raise ValidationError("dataset needs N >= 1 and D >= 1")
        if not np.all(np.isfinite(feats)):
            raise ValidationError("features contain non-finite values")
        for r in self.responses:
            if len(r.values) != n:
                raise ValidationError(
                    f"response {r.name!r} has {len(r.values)} values, expected {n}"
                )
        if self.column_names is not None and len(self.column_names) != d:
            raise ValidationError("column_names length must equal D")
        object.__setattr__(self, "features", feats)

    @property
    def sample_count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def response_count(self) -> int:
        return len(self.responses)

    def subset(self, idx) -> "Dataset":
        """Row subset sharing no state with the parent (metadata carried over)."""
        return Dataset(
            features=self.features[idx],
            responses=[replace(r, values=r.values[idx]) for r in self.responses],
            column_names=self.column_names,
            truth_basis=self.truth_basis,
        )


@dataclass(frozen=True)
class ScalingInfo:
    """Per-column affine transform captured by standardize, invertible exactly."""

    feature_mean: np.ndarray
    feature_scale: np.ndarray
    response_mean: list = field(default_factory=list)
    response_scale: list = field(default_factory=list)


def standardize(d: Dataset):
    """Center and scale features and continuous responses to unit population sd.

    Zero-variance columns become all zero with scale 1 so constant columns in
    real tables do not error. Categorical responses pass through untouched.
    Returns the transformed Dataset and a ScalingInfo that inverts it.
    """
    mean = d.features.mean(axis=0)
    scale = d.features.std(axis=0)
    scale = np.where(scale == 0.0, 1.0, scale)
    feats = (d.features - mean) / scale

    responses = []
    r_means, r_scales = [], []
    for r in d.responses:
        if r.kind == CONTINUOUS:
            mu = float(r.values.mean())
            sd = float(r.values.std())
            if sd == 0.0:
                sd = 1.0
            responses.append(replace(r, values=(r.values - mu) / sd))
            r_means.append(mu)
            r_scales.append(sd)
        else:
            responses.append(r)
            r_means.append(None)
            r_scales.append(None)
    info = ScalingInfo(mean, scale, r_means, r_scales)
    return (
        Dataset(feats, responses, column_names=d.column_names, truth_basis=d.truth_basis),
        info,
    )


def unstandardize(d: Dataset, info: ScalingInfo) -> Dataset:
    """Invert standardize exactly."""
    feats = d.features * info.feature_scale + info.feature_mean
    responses = []
    for r, mu, sd in zip(d.responses, info.response_mean, info.response_scale):
        if r.kind == CONTINUOUS:
            responses.append(replace(r, values=r.values * sd + mu))
        else:
            responses.append(r)
    return Dataset(feats, responses, column_names=d.column_names, truth_basis=d.truth_basis)


class SplitResult(NamedTuple):
    train: Dataset
    test: Dataset
    # False when stratification was requested but a class was too small for it.
    stratified: bool


def train_test_split(d: Dataset, test_fraction: float, seed: int) -> SplitResult:
    """Disjoint row partition into ceil(N*(1-f)) train rows and the rest.

    When the dataset carries a categorical response the split is stratified on
    the first one, allocating per-class test counts by largest remainder so the
    total matches the unstratified size exactly. Classes with fewer than two
    members force a fallback to a plain shuffle, flagged in the result.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError("test_fraction must lie in (0, 1)")
    n = d.sample_count
    n_train = math.ceil(n * (1.0 - test_fraction))
    n_test = n - n_train
    if n_train < 1 or n_test < 1:
        raise ValidationError(f"split of {n} rows at fraction {test_fraction} leaves an empty side")

    rng = np.random.default_rng(seed)
    cat = next((r for r in d.responses if r.kind == CATEGORICAL), None)
    stratified = False
    if cat is not None:
        counts = np.bincount(cat.values, minlength=cat.class_count)
        if counts.min() >= 2:
            test_idx = _stratified_test_indices(cat.values, counts, n_test, rng)
            stratified = True
    if not stratified:
        perm = rng.permutation(n)
        test_idx = perm[:n_test]
    test_mask = np.zeros(n, dtype=bool)
    test_mask[test_idx] = True
    train_idx = np.flatnonzero(~test_mask)
    return SplitResult(d.subset(train_idx), d.subset(np.sort(test_idx)), stratified)


def _stratified_test_indices(labels, counts, n_test, rng):
    n = len(labels)
    quota = counts * (n_test / n)
    base = np.floor(quota).astype(np.int64)
    # Hand out the remaining slots by largest fractional part, class index tie-break.
    short = n_test - int(base.sum())
    order = np.lexsort((np.arange(len(counts)), -(quota - base)))
    for k in order[:short]:
        base[k] += 1
    # Never take a whole class into the test side.
    base = np.minimum(base, counts - 1)
    picks = []
    for c, take in enumerate(base):
        members = np.flatnonzero(labels == c)
        picks.append(rng.permutation(members)[:take])
    idx = np.concatenate(picks)
    # Rounding guards above can undershoot; top up from a global shuffle.
    if len(idx) < n_test:
        chosen = np.zeros(n, dtype=bool)
        chosen[idx] = True
        rest = rng.permutation(np.flatnonzero(~chosen))
        idx = np.concatenate([idx, rest[: n_test - len(idx)]])
    return idx


def shuffle_response(d: Dataset, response_index: int, seed: int) -> Dataset:
    """Permute one response column uniformly at random; features are shared."""
    if not 0 <= response_index < d.response_count:
        raise ValidationError(f"response index {response_index} out of range")
    rng = np.random.default_rng(seed)
    responses = list(d.responses)
    r = responses[response_index]
    responses[response_index] = replace(r, values=r.values[rng.permutation(len(r.values))])
    out = Dataset.__new__(Dataset)
    # Bypass re-validation so the features array is shared bit-for-bit.
    object.__setattr__(out, "features", d.features)
    object.__setattr__(out, "responses", responses)
    object.__setattr__(out, "column_names", d.column_names)
    object.__setattr__(out, "truth_basis", d.truth_basis)
    return out


def _random_basis(dim: int, rng) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, 2)))
    return q


def synth_circle(
    n: int, dim: int, noise_sigma: float, seed: int, profile: str = "bowl"
) -> Dataset:
    """Features uniform on [-1, 1]^D; response a closed-contour pattern in (x1, x2).

    profile "bowl" (default): f = 1.4*x1^2 + 0.6*x2^2 + 0.8*(x1 + x2)/sqrt(2),
    an off-axis tilted elliptical bowl. The anisotropy plus the diagonal linear
    term keeps a first-order gradient toward the second structure direction
    alive from any partially converged state, which makes low-degree recovery
    reliable at small step sizes.

    profile "ring": f = exp(-(sqrt(x1^2 + x2^2) - 0.6)^2 / 0.2^2), a Gaussian
    ridge at radius 0.6 of width 0.2. Visually annular, but any annular profile
    needs degree >= 4 monomials, so degree-3 heads top out near R^2 = 0.32 on it.

    Gaussian noise of sd noise_sigma is added to the response either way. The
    generating subspace (the first two coordinate axes) is recorded in
    truth_basis.
    """
    if dim < 2:
        raise ValidationError("synth_circle needs dim >= 2")
    if noise_sigma < 0:
        raise ValidationError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, dim))
    u, v = x[:, 0], x[:, 1]
    if profile == "bowl":
        f = 1.4 * u * u + 0.6 * v * v + 0.8 * (u + v) / np.sqrt(2.0)
    elif profile == "ring":
        f = np.exp(-((np.sqrt(u * u + v * v) - 0.6) / 0.2) ** 2)
    else:
        raise ValidationError(f"unknown circle profile: {profile!r}")
    if noise_sigma > 0:
        f = f + noise_sigma * rng.standard_normal(n)
    basis = np.zeros((dim, 2))
    basis[0, 0] = 1.0
    basis[1, 1] = 1.0
    return Dataset(
        x,
        [Response(CONTINUOUS, f, name="response")],
        column_names=[f"x{i}" for i in range(dim)],
        truth_basis=basis,
    )


# Fixed bank for synth_multi. Each entry maps hidden coordinates (u, v) to one
# response; all are polynomials of total degree <= 3 so a degree-3 head can
# represent them exactly.
MULTI_FORMULAS = (
    ("u", lambda u, v: u),
    ("v", lambda u, v: v),
    ("u*v", lambda u, v: u * v),
    ("u^2-v^2", lambda u, v: u * u - v * v),
    ("u^2+v^2", lambda u, v: u * u + v * v),
    ("u^3", lambda u, v: u**3),
    ("v^3-v", lambda u, v: v**3 - v),
    ("u^3-3uv^2", lambda u, v: u**3 - 3 * u * v * v),
    ("3u^2v-v^3", lambda u, v: 3 * u * u * v - v**3),
    ("u+v^2", lambda u, v: u + v * v),
    ("v-u^2", lambda u, v: v - u * u),
    ("(u^2+v^2)u", lambda u, v: (u * u + v * v) * u),
    ("(u^2+v^2)v", lambda u, v: (u * u + v * v) * v),
    ("u*v^2", lambda u, v: u * v * v),
    ("u^2*v", lambda u, v: u * u * v),
)


def synth_multi(n: int, dim: int, response_count: int, seed: int) -> Dataset:
    """L noise-free responses, all functions of one hidden 2-D subspace.

    Hidden coordinates are u = <a, x>, v = <b, x> for a random orthonormal
    pair (a, b) drawn from the seed. Responses cycle through MULTI_FORMULAS;
    beyond 15 the pair (u, v) is rotated in-plane by the golden angle per
    cycle so every response stays distinct while sharing the same subspace.
    """
    if dim < 2:
        raise ValidationError("synth_multi needs dim >= 2")
    if response_count < 1:
        raise ValidationError("synth_multi needs response_count >= 1")
    rng = np.random.default_rng(seed)
    basis = _random_basis(dim, rng)
    x = rng.uniform(-1.0, 1.0, size=(n, dim))
    u0 = x @ basis[:, 0]
    v0 = x @ basis[:, 1]
    responses = []
    golden = 2.0 * np.pi * (1.0 - 1.0 / ((1.0 + np.sqrt(5.0)) / 2.0))
    for l in range(response_count):
        name, fn = MULTI_FORMULAS[l % len(MULTI_FORMULAS)]
        cycle = l // len(MULTI_FORMULAS)
        if cycle:
            ang = golden * cycle
            u = np.cos(ang) * u0 + np.sin(ang) * v0
            v = -np.sin(ang) * u0 + np.cos(ang) * v0
            name = f"{name}@rot{cycle}"
        else:
            u, v = u0, v0
        responses.append(Response(CONTINUOUS, fn(u, v), name=name))
    return Dataset(
        x,
        responses,
        column_names=[f"x{i}" for i in range(dim)],
        truth_basis=basis,
    )


def synth_blobs(n: int, dim: int, class_count: int, separation: float, seed: int) -> Dataset:
    """K unit-variance Gaussian blobs whose means live in a hidden 2-D subspace.

    Means sit on a circle of radius separation / (2 sin(pi/K)) inside the
    subspace, so adjacent means are exactly `separation` apart and all other
    pairs are farther. Labels are assigned round-robin, keeping class counts
    within one of each other.
    """
    if class_count < 2:
        raise ValidationError("synth_blobs needs class_count >= 2")
    if dim < 2:
        raise ValidationError("synth_blobs needs dim >= 2")
    if separation < 0:
        raise ValidationError("separation must be >= 0")
    rng = np.random.default_rng(seed)
    basis = _random_basis(dim, rng)
    radius = separation / (2.0 * np.sin(np.pi / class_count))
    ang = 2.0 * np.pi * np.arange(class_count) / class_count
    means2 = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    labels = np.arange(n, dtype=np.int64) % class_count
    x = means2[labels] @ basis.T + rng.standard_normal((n, dim))
    return Dataset(
        x,
        [Response(CATEGORICAL, labels, name="label", class_count=class_count)],
        column_names=[f"x{i}" for i in range(dim)],
        truth_basis=basis,
    )


def load_csv(
    path,
    response_columns: Sequence[Union[str, int]],
    categorical_flags: Sequence[bool],
) -> Dataset:
    """Read an RFC-4180-style CSV with a header row into a Dataset.

    response_columns selects columns by header name or position; every other
    column must parse as a finite float and becomes a feature. Categorical
    responses are label-encoded in first-appearance order.
    """
    if len(response_columns) != len(categorical_flags):
        raise ValidationError("response_columns and categorical_flags must have equal length")
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise ValidationError(f"no such file: {path}")
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("CSV file is empty (header row required)")
        rows = [row for row in reader if row]

    if not rows:
        raise ValidationError("CSV has a header but no data rows")
    resp_pos = []
    for sel in response_columns:
        if isinstance(sel, int):
            if not 0 <= sel < len(header):
                raise ValidationError(f"response column index {sel} out of range")
            resp_pos.append(sel)
        else:
            if sel not in header:
                raise ValidationError(f"response column {sel!r} not in header")
            resp_pos.append(header.index(sel))
    feat_pos = [j for j in range(len(header)) if j not in resp_pos]

    feats = np.empty((len(rows), len(feat_pos)), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValidationError(f"row {i} has {len(row)} cells, expected {len(header)}")
        for k, j in enumerate(feat_pos):
            try:
                val = float(row[j])
            except ValueError:
                raise ValidationError(
                    f"row {i}, column {header[j]!r}: non-numeric feature value {row[j]!r}"
                )
            if not math.isfinite(val):
                raise ValidationError(
                    f"row {i}, column {header[j]!r}: non-finite feature value"
                )
            feats[i, k] = val

    responses = []
    for sel, j, is_cat in zip(response_columns, resp_pos, categorical_flags):
        cells = [row[j] for row in rows]
        if is_cat:
            seen = {}
            codes = np.empty(len(cells), dtype=np.int64)
            for i, cell in enumerate(cells):
                codes[i] = seen.setdefault(cell, len(seen))
            if len(seen) < 2:
                raise ValidationError(
                    f"categorical response {header[j]!r} has fewer than 2 classes"
                )
            responses.append(
                Response(CATEGORICAL, codes, name=header[j], class_count=len(seen))
            )
        else:
            try:
                vals = np.array([float(c) for c in cells], dtype=np.float64)
            except ValueError:
                raise ValidationError(f"response column {header[j]!r} has non-numeric values")
            if not np.all(np.isfinite(vals)):
                raise ValidationError(f"response column {header[j]!r} has non-finite values")
            responses.append(Response(CONTINUOUS, vals, name=header[j]))

    return Dataset(feats, responses, column_names=[header[j] for j in feat_pos])


_NPY_MAGIC = b"\x93NUMPY"


def load_npy(path) -> np.ndarray:
    """Read a 2-D little-endian float NPY file (format versions 1.0 / 2.0).

    The header is parsed here rather than delegated so malformed inputs fail
    with specific messages: bad magic, unsupported dtype or order, non-2-D
    shape, empty payload. 32-bit floats are widened to 64-bit.
    """
    try:
        fh = open(path, "rb")
    except FileNotFoundError:
        raise ValidationError(f"no such file: {path}")
    with fh:
        magic = fh.read(6)
        if magic != _NPY_MAGIC:
            raise ValidationError("bad magic string: not an NPY file")
        version = fh.read(2)
        if version not in (b"\x01\x00", b"\x02\x00"):
            raise ValidationError(f"unsupported NPY version {tuple(version)}")
        if version == b"\x01\x00":
            (hlen,) = np.frombuffer(fh.read(2), dtype="<u2")
        else:
            (hlen,) = np.frombuffer(fh.read(4), dtype="<u4")
        try:
            header = ast.literal_eval(fh.read(int(hlen)).decode("latin1"))
        except (ValueError, SyntaxError):
            raise ValidationError("unparseable NPY header")
        descr = header.get("descr")
        if descr not in ("<f4", "<f8"):
            raise ValidationError(f"unsupported dtype {descr!r} (need <f4 or <f8)")
        if header.get("fortran_order"):
            raise ValidationError("unsupported order: Fortran-order NPY not accepted")
        shape = header.get("shape")
        if not (isinstance(shape, tuple) and len(shape) == 2):
            raise ValidationError(f"need a 2-D array, got shape {shape}")
        if shape[0] == 0 or shape[1] == 0:
            raise ValidationError("empty dataset")
        count = shape[0] * shape[1]
        data = np.frombuffer(fh.read(), dtype=descr, count=-1)
        if data.size < count:
            raise ValidationError("NPY payload shorter than header shape implies")
        return data[:count].astype(np.float64).reshape(shape)
