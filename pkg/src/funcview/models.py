"""2-D predictor heads and their losses and analytic gradients.

Two head families map an embedded point y in R^2 to a prediction: a
polynomial regressor (dense monomial basis up to a fixed total degree) and a
softmax classifier with an optional single rectifier hidden layer. Gradients
are returned both with respect to the head parameters and with respect to the
inputs y, since the projection update needs the latter through the chain rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from .errors import ValidationError

PROB_FLOOR = 1e-12


def monomial_count(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


@lru_cache(maxsize=None)
def monomial_exponents(degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """Exponent pairs (a, b) of y1^a y2^b, graded, lexicographic within a grade.

    The ordering is [1, y1, y2, y1^2, y1*y2, y2^2, ...]; it is a prefix of the
    ordering for any higher degree, so serialized coefficient vectors stay
    meaningful when the degree grows.
    """
    if degree < 1:
        raise ValidationError("degree must be >= 1")
    ea, eb = [], []
    for total in range(degree + 1):
        for a in range(total, -1, -1):
            ea.append(a)
            eb.append(total - a)
    ea = np.array(ea, dtype=np.int64)
    eb = np.array(eb, dtype=np.int64)
    ea.setflags(write=False)
    eb.setflags(write=False)
    return ea, eb


def monomial_matrix(y_batch: np.ndarray, degree: int) -> np.ndarray:
    """n x M design matrix of monomials, columns in monomial_exponents order."""
    y = np.atleast_2d(np.asarray(y_batch, dtype=np.float64))
    ea, eb = monomial_exponents(degree)
    # Cumulative power tables avoid re-multiplying per column.
    p1 = np.ones((y.shape[0], degree + 1))
    p2 = np.ones((y.shape[0], degree + 1))
    for k in range(1, degree + 1):
        p1[:, k] = p1[:, k - 1] * y[:, 0]
        p2[:, k] = p2[:, k - 1] * y[:, 1]
    return p1[:, ea] * p2[:, eb]


def monomial_basis(y, degree: int) -> np.ndarray:
    """Feature vector for a single 2-D point."""
    y = np.asarray(y, dtype=np.float64).reshape(1, 2)
    return monomial_matrix(y, degree)[0]


@dataclass
class PolynomialHead:
    degree: int
    coefficients: np.ndarray

    def __post_init__(self):
        m = monomial_count(self.degree)
        coeff = np.asarray(self.coefficients, dtype=np.float64)
        if coeff.shape != (m,):
            raise ValidationError(f"degree {self.degree} head needs {m} coefficients")
        if not np.all(np.isfinite(coeff)):
            raise ValidationError("coefficients must be finite")
        self.coefficients = coeff

    @classmethod
    def zeros(cls, degree: int) -> "PolynomialHead":
        return cls(degree, np.zeros(monomial_count(degree)))


def poly_predict(head: PolynomialHead, y) -> float:
    return float(monomial_basis(y, head.degree) @ head.coefficients)


def poly_predict_batch(head: PolynomialHead, y_batch) -> np.ndarray:
    return monomial_matrix(y_batch, head.degree) @ head.coefficients


@dataclass
class SoftmaxHead:
    """Softmax classifier over K classes; hidden_width 0 means purely linear."""

    hidden_width: int
    w1: Optional[np.ndarray]  # H x 2
    b1: Optional[np.ndarray]  # H
    w2: np.ndarray  # K x H, or K x 2 when H == 0
    b2: np.ndarray  # K
    activation: str = field(default="relu")

    def __post_init__(self):
        if self.hidden_width < 0:
            raise ValidationError("hidden_width must be >= 0")
        if self.hidden_width == 0:
            if self.w1 is not None or self.b1 is not None:
                raise ValidationError("linear head must not carry hidden-layer weights")
            if self.w2.shape[1] != 2:
                raise ValidationError("linear head needs K x 2 output weights")
        else:
            if self.w1.shape != (self.hidden_width, 2):
                raise ValidationError("w1 must be H x 2")
            if self.b1.shape != (self.hidden_width,):
                raise ValidationError("b1 must have length H")
            if self.w2.shape[1] != self.hidden_width:
                raise ValidationError("w2 must be K x H")
        if self.b2.shape != (self.w2.shape[0],):
            raise ValidationError("b2 must have length K")

    @property
    def class_count(self) -> int:
        return self.w2.shape[0]

    @classmethod
    def initialize(cls, class_count: int, hidden_width: int, rng) -> "SoftmaxHead":
        """Gaussian weights with gain 1/sqrt(fan_in), zero biases."""
        if class_count < 2:
            raise ValidationError("class_count must be >= 2")
        if hidden_width > 0:
            w1 = rng.standard_normal((hidden_width, 2)) / np.sqrt(2.0)
            b1 = np.zeros(hidden_width)
            w2 = rng.standard_normal((class_count, hidden_width)) / np.sqrt(hidden_width)
        else:
            w1 = None
            b1 = None
            w2 = rng.standard_normal((class_count, 2)) / np.sqrt(2.0)
        return cls(hidden_width, w1, b1, w2, np.zeros(class_count))


def softmax_logits(head: SoftmaxHead, y_batch) -> np.ndarray:
    y = np.atleast_2d(np.asarray(y_batch, dtype=np.float64))
    if head.hidden_width > 0:
        hidden = np.maximum(y @ head.w1.T + head.b1, 0.0)
        return hidden @ head.w2.T + head.b2
    return y @ head.w2.T + head.b2


def softmax_probs(head: SoftmaxHead, y_batch) -> np.ndarray:
    logits = softmax_logits(head, y_batch)
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def softmax_predict(head: SoftmaxHead, y) -> np.ndarray:
    """Class probability vector for a single 2-D point."""
    return softmax_probs(head, np.asarray(y, dtype=np.float64).reshape(1, 2))[0]


def mse_loss(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError("predictions and targets must have equal length")
    if p.size < 1:
        raise ValidationError("need at least one sample")
    return float(np.mean((p - t) ** 2))


def r2_score(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError("predictions and targets must have equal length")
    if t.size < 2:
        raise ValidationError("need at least two samples")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValidationError("targets have zero variance")
    ss_res = float(np.sum((t - p) ** 2))
    return 1.0 - ss_res / ss_tot


def cross_entropy_loss(probabilities, labels) -> float:
    p = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    lab = np.asarray(labels, dtype=np.int64)
    if p.shape[0] != lab.shape[0]:
        raise ValidationError("probabilities and labels must have equal length")
    if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ValidationError("probability rows must sum to 1")
    if lab.size and (lab.min() < 0 or lab.max() >= p.shape[1]):
        raise ValidationError("label index out of range")
    picked = np.maximum(p[np.arange(len(lab)), lab], PROB_FLOOR)
    return float(-np.mean(np.log(picked)))


def accuracy_score(probabilities, labels) -> float:
    p = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    return float(np.mean(p.argmax(axis=1) == np.asarray(labels)))


def head_gradients(head, y_batch, targets):
    """Gradients of the batch-mean loss wrt head parameters and wrt y.

    Polynomial heads return (d_theta, d_y) for the MSE loss; softmax heads
    return ((d_w1, d_b1, d_w2, d_b2), d_y) for the cross-entropy loss, with
    hidden-layer entries None when hidden_width == 0.
    """
    y = np.atleast_2d(np.asarray(y_batch, dtype=np.float64))
    n = y.shape[0]
    if isinstance(head, PolynomialHead):
        t = np.asarray(targets, dtype=np.float64)
        phi = monomial_matrix(y, head.degree)
        resid = phi @ head.coefficients - t
        d_theta = (2.0 / n) * (phi.T @ resid)
        ea, eb = monomial_exponents(head.degree)
        # d(y1^a y2^b)/dy1 = a y1^(a-1) y2^b, and symmetrically for y2.
        p1 = np.ones((n, head.degree + 1))
        p2 = np.ones((n, head.degree + 1))
        for k in range(1, head.degree + 1):
            p1[:, k] = p1[:, k - 1] * y[:, 0]
            p2[:, k] = p2[:, k - 1] * y[:, 1]
        d1 = p1[:, np.maximum(ea - 1, 0)] * p2[:, eb]
        d2 = p1[:, ea] * p2[:, np.maximum(eb - 1, 0)]
        g1 = d1 @ (head.coefficients * ea)
        g2 = d2 @ (head.coefficients * eb)
        d_y = (2.0 / n) * resid[:, None] * np.stack([g1, g2], axis=1)
        return d_theta, d_y

    if isinstance(head, SoftmaxHead):
        lab = np.asarray(targets, dtype=np.int64)
        if head.hidden_width > 0:
            pre = y @ head.w1.T + head.b1
            hidden = np.maximum(pre, 0.0)
            logits = hidden @ head.w2.T + head.b2
        else:
            logits = y @ head.w2.T + head.b2
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        probs = e / e.sum(axis=1, keepdims=True)
        d_logits = probs.copy()
        d_logits[np.arange(n), lab] -= 1.0
        d_logits /= n
        if head.hidden_width > 0:
            d_w2 = d_logits.T @ hidden
            d_b2 = d_logits.sum(axis=0)
            d_hidden = (d_logits @ head.w2) * (pre > 0)
            d_w1 = d_hidden.T @ y
            d_b1 = d_hidden.sum(axis=0)
            d_y = d_hidden @ head.w1
            return (d_w1, d_b1, d_w2, d_b2), d_y
        d_w2 = d_logits.T @ y
        d_b2 = d_logits.sum(axis=0)
        d_y = d_logits @ head.w2
        return (None, None, d_w2, d_b2), d_y

    raise ValidationError(f"unknown head type: {type(head).__name__}")


def ols_fit(y_batch, targets, degree: int) -> PolynomialHead:
    """Closed-form least squares head on a fixed embedding.

    This is an oracle for testing and refitting, not part of the joint
    optimization path. A 1e-10 ridge keeps rank-deficient designs solvable
    (collapsed projections produce duplicated columns).
    """
    y = np.atleast_2d(np.asarray(y_batch, dtype=np.float64))
    t = np.asarray(targets, dtype=np.float64)
    m = monomial_count(degree)
    if y.shape[0] < m:
        raise ValidationError(f"ols_fit needs at least {m} samples for degree {degree}")
    phi = monomial_matrix(y, degree)
    gram = phi.T @ phi + 1e-10 * np.eye(m)
    theta = np.linalg.solve(gram, phi.T @ t)
    return PolynomialHead(degree, theta)
