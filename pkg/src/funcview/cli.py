"""Command-line front end: synth, fit, project, pvalue, grid.

Datasets travel as bundle directories (features.npy, responses.csv,
meta.json). Reports are JSON; matrices are CSV; plots are SVG. Every command
is deterministic given its flags and seeds, so rerunning one produces byte
identical artifacts; wall-clock phase timings, which are not deterministic,
go to a timings.json sidecar instead of the reports.

A JSON config file (--config) can hold any long flag value under its
argparse destination name; explicit flags win over the file, unknown keys
are rejected.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import replace

import numpy as np

from ._version import __version__
from . import svg
from .data import (
    CATEGORICAL,
    CONTINUOUS,
    Dataset,
    Response,
    load_npy,
    synth_blobs,
    synth_circle,
    synth_multi,
    train_test_split,
)
from .errors import ValidationError
from .optimizer import (
    HyperParams,
    fit,
    from_json,
    predict,
    random_projection_preprocess,
    result_to_dict,
    to_json,
)
from .significance import (
    default_grid_hyperparams,
    grid_matrix_csv,
    grid_study,
    grid_to_dict,
    null_distribution,
    overfit_verdict,
    report_to_dict,
    significance_report,
)


class _Parser(argparse.ArgumentParser):
    """Routes usage errors through ValidationError so exit codes stay uniform."""

    def error(self, message):
        raise ValidationError(message)


class _Timings:
    def __init__(self):
        self.phases = {}
        self._mark = time.perf_counter()

    def lap(self, phase: str):
        now = time.perf_counter()
        self.phases[phase] = round(now - self._mark, 6)
        self._mark = now

    def write(self, out_dir: str):
        _write_text(os.path.join(out_dir, "timings.json"),
                    json.dumps(self.phases, indent=2) + "\n")


def _write_text(path: str, text: str):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _ensure_out_dir(path: str) -> str:
    if not path:
        raise ValidationError("--out directory is required")
    try:
        os.makedirs(path, exist_ok=True)
        probe = os.path.join(path, ".write_probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as e:
        raise ValidationError(f"output directory {path!r} is not writable: {e}")
    return path


def _require_file(path: str, what: str) -> str:
    if not path:
        raise ValidationError(f"--{what} is required")
    if not os.path.isfile(path):
        raise ValidationError(f"{what} file not found: {path}")
    return path


def _require_dir(path: str, what: str) -> str:
    if not path:
        raise ValidationError(f"--{what} is required")
    if not os.path.isdir(path):
        raise ValidationError(f"{what} directory not found: {path}")
    return path


# ---------------------------------------------------------------------------
# Dataset bundles


def write_bundle(data: Dataset, out_dir: str, generator=None, params=None):
    np.save(os.path.join(out_dir, "features.npy"), data.features)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([r.name for r in data.responses])
    columns = [r.values for r in data.responses]
    kinds = [r.kind for r in data.responses]
    for i in range(data.sample_count):
        writer.writerow(
            [
                str(int(col[i])) if kind == CATEGORICAL else repr(float(col[i]))
                for col, kind in zip(columns, kinds)
            ]
        )
    _write_text(os.path.join(out_dir, "responses.csv"), buf.getvalue())
    meta = {
        "version": __version__,
        "generator": generator,
        "n": data.sample_count,
        "dim": data.dim,
        "params": params or {},
        "responses": [
            {"name": r.name, "kind": r.kind, "class_count": r.class_count}
            for r in data.responses
        ],
        "column_names": data.column_names,
        "truth_basis": None if data.truth_basis is None else data.truth_basis.tolist(),
    }
    _write_text(os.path.join(out_dir, "meta.json"), json.dumps(meta, indent=2) + "\n")


def read_bundle(path: str) -> Dataset:
    _require_dir(path, "data")
    features = load_npy(os.path.join(path, "features.npy"))
    meta_path = os.path.join(path, "meta.json")
    _require_file(meta_path, "meta.json")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    resp_path = os.path.join(path, "responses.csv")
    _require_file(resp_path, "responses.csv")
    with open(resp_path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{resp_path} is empty")
    header, body = rows[0], rows[1:]
    specs = meta.get("responses", [])
    if [s["name"] for s in specs] != header:
        raise ValidationError("responses.csv header does not match meta.json")
    if len(body) != features.shape[0]:
        raise ValidationError(
            f"responses.csv has {len(body)} rows but features.npy has {features.shape[0]}"
        )
    responses = []
    for j, spec in enumerate(specs):
        raw = [row[j] for row in body]
        if spec["kind"] == CATEGORICAL:
            values = np.array([int(v) for v in raw], dtype=np.int64)
            responses.append(
                Response(CATEGORICAL, values, spec["name"], class_count=spec["class_count"])
            )
        else:
            values = np.array([float(v) for v in raw])
            responses.append(Response(CONTINUOUS, values, spec["name"]))
    truth = meta.get("truth_basis")
    return Dataset(
        features=features,
        responses=responses,
        column_names=meta.get("column_names"),
        truth_basis=None if truth is None else np.asarray(truth, dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# Config merging

_COMMON_HP_FLAGS = ("seed", "degree", "epochs", "batch", "lr", "retraction", "hidden_width")


def _merge_config(args: argparse.Namespace, parser_defaults: dict) -> dict:
    """flag > config file > default, rejecting unknown config keys."""
    merged = dict(parser_defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        _require_file(config_path, "config")
        with open(config_path, encoding="utf-8") as fh:
            try:
                loaded = json.load(fh)
            except json.JSONDecodeError as e:
                raise ValidationError(f"config {config_path!r} is not valid JSON: {e}")
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(parser_defaults))
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        merged.update(loaded)
    for key in parser_defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _require_values(merged: dict, names):
    missing = [f"--{n.replace('_', '-')}" for n in names if merged.get(n) is None]
    if missing:
        raise ValidationError(f"missing required flags: {', '.join(missing)}")


def _hyperparams_from(merged: dict, degree_default=3, epochs_default=50) -> HyperParams:
    return HyperParams(
        learning_rate=merged["lr"] if merged.get("lr") is not None else 1e-2,
        batch_size=merged["batch"] if merged.get("batch") is not None else 50,
        epochs=merged["epochs"] if merged.get("epochs") is not None else epochs_default,
        seed=merged["seed"] if merged.get("seed") is not None else 0,
        degree=merged["degree"] if merged.get("degree") is not None else degree_default,
        hidden_width=merged["hidden_width"] if merged.get("hidden_width") is not None else 16,
        retraction=(merged.get("retraction") or "polar").replace("-", "_"),
    )


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args) -> int:
    defaults = {
        "kind": None, "n": None, "dim": None, "seed": 0, "out": None,
        "noise": 0.05, "profile": "bowl", "responses": 15, "k": 5,
        "separation": 6.0, "config": None,
    }
    merged = _merge_config(args, defaults)
    _require_values(merged, ("kind", "n", "dim", "out"))
    out = _ensure_out_dir(merged["out"])
    timings = _Timings()
    kind = merged["kind"]
    n, dim, seed = int(merged["n"]), int(merged["dim"]), int(merged["seed"])
    if kind == "circle":
        params = {"noise": merged["noise"], "profile": merged["profile"], "seed": seed}
        data = synth_circle(n, dim, merged["noise"], seed, profile=merged["profile"])
    elif kind == "multi":
        params = {"responses": int(merged["responses"]), "seed": seed}
        data = synth_multi(n, dim, int(merged["responses"]), seed)
    elif kind == "blobs":
        params = {"k": int(merged["k"]), "separation": merged["separation"], "seed": seed}
        data = synth_blobs(n, dim, int(merged["k"]), merged["separation"], seed)
    else:
        raise ValidationError(f"unknown synth kind: {kind!r} (circle, multi, blobs)")
    timings.lap("generate")
    write_bundle(data, out, generator=kind, params=params)
    timings.lap("write")
    timings.write(out)
    print(os.path.join(out, "meta.json"))
    return 0


def _load_pre_projection(model_path: str):
    """Pre-projection saved beside a fit result, if any."""
    pre_path = os.path.join(os.path.dirname(model_path) or ".", "pre_projection.npy")
    if os.path.isfile(pre_path):
        return load_npy(pre_path)
    return None


def _embed(result, features: np.ndarray, pre=None) -> np.ndarray:
    x = features if pre is None else features @ pre
    if result.scaling is not None:
        x = (x - result.scaling.feature_mean) / result.scaling.feature_scale
    return x @ result.projection


def _scatter_color_args(response: Response):
    if response.kind == CATEGORICAL:
        return response.values, "categorical"
    return response.values, "continuous"


def cmd_fit(args) -> int:
    defaults = {
        "data": None, "out": None, "seed": 0, "degree": None, "epochs": None,
        "batch": None, "lr": None, "retraction": None, "hidden_width": None,
        "pre_dim": None, "test_fraction": 0.2, "config": None,
    }
    merged = _merge_config(args, defaults)
    _require_values(merged, ("data", "out"))
    out = _ensure_out_dir(merged["out"])
    timings = _Timings()
    data = read_bundle(merged["data"])
    timings.lap("load")

    hp = _hyperparams_from(merged)
    pre = None
    if merged["pre_dim"] is not None:
        pre = random_projection_preprocess(data.dim, int(merged["pre_dim"]), hp.seed)
        data = Dataset(
            features=data.features @ pre,
            responses=data.responses,
            truth_basis=None,
        )
    timings.lap("preprocess")

    fraction = float(merged["test_fraction"])
    if fraction > 0.0:
        split = train_test_split(data, fraction, hp.seed)
        train, test = split.train, split.test
    else:
        train, test = data, None
    if hp.batch_size > train.sample_count:
        hp = replace(hp, batch_size=train.sample_count)
    timings.lap("split")

    result = fit(train, hp, eval_data=test)
    timings.lap("fit")

    _write_text(os.path.join(out, "fit.json"), to_json(result) + "\n")
    if pre is not None:
        np.save(os.path.join(out, "pre_projection.npy"), pre)
        np.save(os.path.join(out, "composite_projection.npy"), pre @ result.projection)

    y_train = _embed(result, train.features)
    xlab, ylab = svg.axis_annotations(result.projection, train.column_names)
    for i, r in enumerate(train.responses):
        values, kind = _scatter_color_args(r)
        _write_text(
            os.path.join(out, f"scatter_{i}.svg"),
            svg.scatter_svg(y_train, values, kind, title=r.name, xlabel=xlab, ylabel=ylab),
        )
    if test is not None:
        y_test = _embed(result, test.features)
        values_tr, kind = _scatter_color_args(train.responses[0])
        values_te, _ = _scatter_color_args(test.responses[0])
        _write_text(
            os.path.join(out, "train_vs_test.svg"),
            svg.scatter_pair_svg(
                y_train, y_test, values_tr, values_te, kind,
                left_title="train", right_title="test", xlabel=xlab, ylabel=ylab,
            ),
        )
    timings.lap("plots")
    timings.write(out)
    print(os.path.join(out, "fit.json"))
    return 0


def cmd_project(args) -> int:
    defaults = {
        "model": None, "data": None, "out": None, "rotation": 0.0, "config": None,
    }
    merged = _merge_config(args, defaults)
    _require_values(merged, ("model", "data", "out"))
    model_path = _require_file(merged["model"], "model")
    out = _ensure_out_dir(merged["out"])
    timings = _Timings()
    with open(model_path, encoding="utf-8") as fh:
        result = from_json(fh.read())
    data = read_bundle(merged["data"])
    pre = _load_pre_projection(model_path)
    expected = result.projection.shape[0] if pre is None else pre.shape[0]
    if data.dim != expected:
        raise ValidationError(
            f"model expects {expected} feature columns, data has {data.dim}"
        )
    timings.lap("load")

    y = _embed(result, data.features, pre)
    theta = math.radians(float(merged["rotation"]))
    if theta != 0.0:
        c, s = math.cos(theta), math.sin(theta)
        y = y @ np.array([[c, -s], [s, c]])
    timings.lap("project")

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["y1", "y2"])
    for row in y:
        writer.writerow([repr(float(row[0])), repr(float(row[1]))])
    _write_text(os.path.join(out, "coordinates.csv"), buf.getvalue())

    values, kind = (None, "continuous")
    title = "projection"
    if data.responses:
        values, kind = _scatter_color_args(data.responses[0])
        title = data.responses[0].name
    _write_text(
        os.path.join(out, "projection.svg"),
        svg.scatter_svg(y, values, kind, title=title),
    )
    timings.lap("write")
    timings.write(out)
    print(os.path.join(out, "coordinates.csv"))
    return 0


def cmd_pvalue(args) -> int:
    defaults = {
        "model": None, "data": None, "out": None, "trials": 300,
        "metric": "loss", "threads": None, "test_fraction": 0.2,
        "seed": None, "config": None,
    }
    merged = _merge_config(args, defaults)
    _require_values(merged, ("model", "data", "out"))
    model_path = _require_file(merged["model"], "model")
    out = _ensure_out_dir(merged["out"])
    timings = _Timings()
    with open(model_path, encoding="utf-8") as fh:
        result = from_json(fh.read())
    data = read_bundle(merged["data"])
    pre = _load_pre_projection(model_path)
    if pre is not None:
        data = Dataset(features=data.features @ pre, responses=data.responses)
    hp = result.hyperparams
    fraction = float(merged["test_fraction"])
    if fraction > 0.0:
        train = train_test_split(data, fraction, hp.seed).train
    else:
        train = data
    timings.lap("load")

    trials = int(merged["trials"])
    threads = merged["threads"] if merged["threads"] is not None else (os.cpu_count() or 1)
    seed = merged["seed"] if merged["seed"] is not None else hp.seed
    metric = merged["metric"]
    null = null_distribution(
        train, hp, trials=trials, seed=int(seed), metric=metric, threads=int(threads)
    )
    if metric == "loss":
        observed = result.final_train_loss
    else:
        observed = float(np.mean(result.train_scores))
    report = significance_report(observed, null)
    timings.lap("null")

    payload = report_to_dict(report)
    test_score = None if result.test_scores is None else float(np.mean(result.test_scores))
    payload["verdict"] = overfit_verdict(
        report.p_parametric, float(np.mean(result.train_scores)), test_score
    )
    _write_text(os.path.join(out, "pvalue.json"), json.dumps(payload, indent=2) + "\n")
    _write_text(
        os.path.join(out, "null_histogram.svg"),
        svg.histogram_svg(
            null.samples, marker=observed,
            title=f"null {metric} over {trials} shuffles", xlabel=metric,
        ),
    )
    timings.lap("write")
    timings.write(out)
    print(os.path.join(out, "pvalue.json"))
    return 0


def cmd_grid(args) -> int:
    template = default_grid_hyperparams()
    defaults = {
        "dims": "2,5,10,20,50,100", "sizes": "50,100,300,1000,3000,10000",
        "trials": 20, "seed": 0, "out": None, "threads": None,
        "degree": template.degree, "epochs": template.epochs,
        "batch": template.batch_size, "lr": template.learning_rate,
        "reference": 0.5, "config": None,
    }
    merged = _merge_config(args, defaults)
    _require_values(merged, ("out",))
    out = _ensure_out_dir(merged["out"])
    timings = _Timings()
    try:
        dims = [int(v) for v in str(merged["dims"]).split(",") if v.strip()]
        sizes = [int(v) for v in str(merged["sizes"]).split(",") if v.strip()]
    except ValueError:
        raise ValidationError("--dims and --sizes must be comma-separated integers")
    hp = replace(
        template,
        learning_rate=float(merged["lr"]),
        batch_size=int(merged["batch"]),
        epochs=int(merged["epochs"]),
        degree=int(merged["degree"]),
    )
    threads = merged["threads"] if merged["threads"] is not None else (os.cpu_count() or 1)
    result = grid_study(
        dims=dims,
        sizes=sizes,
        hp_template=hp,
        trials_per_cell=int(merged["trials"]),
        seed=int(merged["seed"]),
        reference_r2=float(merged["reference"]),
        threads=int(threads),
    )
    timings.lap("grid")

    _write_text(os.path.join(out, "grid.json"), json.dumps(grid_to_dict(result), indent=2) + "\n")
    _write_text(os.path.join(out, "r2_matrix.csv"), grid_matrix_csv(result, "r2"))
    _write_text(os.path.join(out, "p_matrix.csv"), grid_matrix_csv(result, "p"))
    row_labels = [f"D={d}" for d in result.dims]
    col_labels = [f"N={n}" for n in result.sizes]
    _write_text(
        os.path.join(out, "heat_r2.svg"),
        svg.heatmap_svg(result.mean_r2, row_labels, col_labels, title="mean train R^2 on noise"),
    )
    _write_text(
        os.path.join(out, "heat_p.svg"),
        svg.heatmap_svg(
            result.p_at_reference, row_labels, col_labels,
            title=f"p at R^2={result.reference_r2} (color capped at 0.05)",
            clamp=0.05, cell_format="{:.3f}",
        ),
    )
    timings.lap("write")
    timings.write(out)
    print(os.path.join(out, "grid.json"))
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> _Parser:
    parser = _Parser(prog="funcview", description=__doc__)
    parser.add_argument("--version", action="version", version=f"funcview {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with flag defaults")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset bundle")
    common(p_synth)
    p_synth.add_argument("kind", nargs="?", choices=("circle", "multi", "blobs"))
    p_synth.add_argument("--n", type=int, help="sample count")
    p_synth.add_argument("--dim", type=int, help="feature dimension")
    p_synth.add_argument("--noise", type=float, help="circle: response noise sd")
    p_synth.add_argument("--profile", choices=("bowl", "ring"), help="circle: response shape")
    p_synth.add_argument("--responses", type=int, help="multi: response count")
    p_synth.add_argument("--k", type=int, help="blobs: class count")
    p_synth.add_argument("--separation", type=float, help="blobs: distance between adjacent means")
    p_synth.set_defaults(func=cmd_synth)

    p_fit = sub.add_parser("fit", help="fit a projection on a dataset bundle")
    common(p_fit)
    p_fit.add_argument("--data", help="dataset bundle directory")
    p_fit.add_argument("--degree", type=int)
    p_fit.add_argument("--epochs", type=int)
    p_fit.add_argument("--batch", type=int)
    p_fit.add_argument("--lr", type=float)
    p_fit.add_argument("--retraction", choices=("polar", "paper-u"))
    p_fit.add_argument("--hidden-width", type=int, dest="hidden_width")
    p_fit.add_argument("--pre-dim", type=int, dest="pre_dim",
                       help="random-projection preprocess to this dimension")
    p_fit.add_argument("--test-fraction", type=float, dest="test_fraction")
    p_fit.set_defaults(func=cmd_fit)

    p_proj = sub.add_parser("project", help="embed a dataset with a fitted model")
    common(p_proj)
    p_proj.add_argument("--model", help="fit.json path")
    p_proj.add_argument("--data", help="dataset bundle directory")
    p_proj.add_argument("--rotation", type=float, help="in-plane rotation in degrees")
    p_proj.set_defaults(func=cmd_project)

    p_pval = sub.add_parser("pvalue", help="null-distribution significance test")
    common(p_pval)
    p_pval.add_argument("--model", help="fit.json path")
    p_pval.add_argument("--data", help="dataset bundle directory")
    p_pval.add_argument("--trials", type=int)
    p_pval.add_argument("--metric", choices=("loss", "r2"))
    p_pval.add_argument("--threads", type=int)
    p_pval.add_argument("--test-fraction", type=float, dest="test_fraction")
    p_pval.set_defaults(func=cmd_pvalue)

    p_grid = sub.add_parser("grid", help="dimension x sample-size overfitting study")
    common(p_grid)
    p_grid.add_argument("--dims", help="comma-separated dimensions")
    p_grid.add_argument("--sizes", help="comma-separated sample counts")
    p_grid.add_argument("--trials", type=int)
    p_grid.add_argument("--threads", type=int)
    p_grid.add_argument("--degree", type=int)
    p_grid.add_argument("--epochs", type=int)
    p_grid.add_argument("--batch", type=int)
    p_grid.add_argument("--lr", type=float)
    p_grid.add_argument("--reference", type=float, help="reference R^2 for the p map")
    p_grid.set_defaults(func=cmd_grid)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as e:
        json.dump({"error": "validation", "message": str(e)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        payload = {"error": type(e).__name__, "message": str(e)}
        epoch = getattr(e, "epoch", None)
        if epoch is not None:
            payload["epoch"] = epoch
            payload["batch"] = getattr(e, "batch", None)
        json.dump(payload, sys.stderr)
        sys.stderr.write("\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
