"""funcview: linear 2D projections optimized to keep responses predictable.

Fit an orthonormal D x 2 projection jointly with a small 2D predictor per
response (polynomial regressor or softmax classifier), so that the chosen
responses form learnable patterns in the plane. Includes permutation-based
significance testing to tell real structure from overfitting, synthetic
generators with known ground truth, and SVG plotting.
"""

from ._version import __version__
from .data import (
    CATEGORICAL,
    CONTINUOUS,
    Dataset,
    Response,
    ScalingInfo,
    SplitResult,
    load_csv,
    load_npy,
    shuffle_response,
    standardize,
    synth_blobs,
    synth_circle,
    synth_multi,
    train_test_split,
    unstandardize,
)
from .errors import FitDivergedError, ValidationError
from .kernels import active_backend, get_kernels
from .models import (
    PolynomialHead,
    SoftmaxHead,
    accuracy_score,
    cross_entropy_loss,
    mse_loss,
    ols_fit,
    r2_score,
)
from .optimizer import (
    FitResult,
    HyperParams,
    evaluate,
    fit,
    from_json,
    predict,
    principal_angles,
    project,
    random_orthonormal,
    random_projection_preprocess,
    retract,
    to_json,
)
from .significance import (
    GridStudyResult,
    NullDistribution,
    SignificanceReport,
    grid_study,
    null_distribution,
    overfit_verdict,
    p_value_empirical,
    p_value_parametric,
    significance_report,
)

__all__ = [
    "__version__",
    "CATEGORICAL",
    "CONTINUOUS",
    "Dataset",
    "Response",
    "ScalingInfo",
    "SplitResult",
    "load_csv",
    "load_npy",
    "shuffle_response",
    "standardize",
    "synth_blobs",
    "synth_circle",
    "synth_multi",
    "train_test_split",
    "unstandardize",
    "FitDivergedError",
    "ValidationError",
    "active_backend",
    "get_kernels",
    "PolynomialHead",
    "SoftmaxHead",
    "accuracy_score",
    "cross_entropy_loss",
    "mse_loss",
    "ols_fit",
    "r2_score",
    "FitResult",
    "HyperParams",
    "evaluate",
    "fit",
    "from_json",
    "predict",
    "principal_angles",
    "project",
    "random_orthonormal",
    "random_projection_preprocess",
    "retract",
    "to_json",
    "GridStudyResult",
    "NullDistribution",
    "SignificanceReport",
    "grid_study",
    "null_distribution",
    "overfit_verdict",
    "p_value_empirical",
    "p_value_parametric",
    "significance_report",
]
