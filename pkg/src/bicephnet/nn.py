"""Minimal dense network engine with hand-written backward passes.

Conventions used everywhere in the package:

* Weights carry the bias as their last column and inputs get a constant 1
  appended, so a layer computes ``a = [X, 1] @ W.T`` and ``o = f(a)``.
* Losses are means over the batch. The 1/B factor lives in the loss
  gradient, so layer backward passes *sum* over batch rows.
* All arithmetic is float64.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateInputError, ShapeError, StateError, ValidationError

EPS_NORM = 1e-12


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def activate(kind: Activation, a: np.ndarray) -> np.ndarray:
    if kind is Activation.IDENTITY:
        return a.copy()
    if kind is Activation.RELU:
        return np.maximum(a, 0.0)
    if kind is Activation.SIGMOID:
        return sigmoid(a)
    if kind is Activation.SOFTMAX:
        return softmax(a)
    raise ValidationError(f"unknown activation {kind!r}")


def activation_backward(kind: Activation, a: np.ndarray, o: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of the activation: returns dL/da given dL/do."""
    if kind is Activation.IDENTITY:
        return upstream.copy()
    if kind is Activation.RELU:
        # subgradient 0 at a == 0
        return upstream * (a > 0.0)
    if kind is Activation.SIGMOID:
        return upstream * o * (1.0 - o)
    if kind is Activation.SOFTMAX:
        inner = np.sum(upstream * o, axis=1, keepdims=True)
        return o * (upstream - inner)
    raise ValidationError(f"unknown activation {kind!r}")


def _as_matrix(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {X.shape}")
    return X


def with_bias(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


@dataclass
class Gradients:
    weights: np.ndarray
    inputs: np.ndarray


class DenseLayer:
    """Fully connected layer ``o = f([X, 1] @ W.T)`` with W of shape out x (in + 1)."""

    def __init__(self, in_dim: int, out_dim: int, activation=Activation.IDENTITY, weights=None):
        if in_dim < 1 or out_dim < 1:
            raise ValidationError(f"layer dims must be positive, got {in_dim}->{out_dim}")
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.activation = Activation(activation)
        if weights is None:
            weights = np.zeros((self.out_dim, self.in_dim + 1))
        weights = np.array(weights, dtype=np.float64)
        if weights.shape != (self.out_dim, self.in_dim + 1):
            raise ShapeError(f"weights must be {(self.out_dim, self.in_dim + 1)}, got {weights.shape}")
        self.weights = weights
        self._xb = None
        self._a = None
        self._o = None

    def __repr__(self):
        return f"DenseLayer({self.in_dim}->{self.out_dim}, {self.activation.value})"

    @property
    def n_params(self) -> int:
        return self.weights.size

    def init_uniform(self, rng: np.random.Generator) -> None:
        """Glorot-uniform weights, zero bias."""
        limit = np.sqrt(6.0 / (self.in_dim + self.out_dim))
        self.weights[:, :-1] = rng.uniform(-limit, limit, size=(self.out_dim, self.in_dim))
        self.weights[:, -1] = 0.0

    def forward(self, X) -> np.ndarray:
        X = _as_matrix(X)
        if X.shape[1] != self.in_dim:
            raise ShapeError(f"{self!r} expects {self.in_dim} input columns, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValidationError("non-finite input to dense layer")
        xb = with_bias(X)
        a = xb @ self.weights.T
        o = activate(self.activation, a)
        self._xb, self._a, self._o = xb, a, o
        return o

    @property
    def preactivation(self) -> np.ndarray:
        if self._a is None:
            raise StateError(f"{self!r}: forward has not been run")
        return self._a

    def backward(self, upstream, wrt_preactivation: bool = False) -> Gradients:
        """Backprop ``upstream`` (dL/do, or dL/da when ``wrt_preactivation``)."""
        if self._xb is None:
            raise StateError(f"{self!r}: backward called before forward")
        upstream = _as_matrix(upstream, "upstream")
        if upstream.shape != self._a.shape:
            raise ShapeError(f"upstream shape {upstream.shape} != output shape {self._a.shape}")
        if wrt_preactivation:
            delta = upstream
        else:
            delta = activation_backward(self.activation, self._a, self._o, upstream)
        grad_w = delta.T @ self._xb
        grad_x = delta @ self.weights[:, :-1]
        return Gradients(weights=grad_w, inputs=grad_x)


class L2NormLayer:
    """Row-wise projection onto the unit sphere."""

    def __init__(self, eps: float = EPS_NORM):
        self.eps = eps
        self._y = None
        self._norms = None

    def forward(self, X) -> np.ndarray:
        X = _as_matrix(X)
        norms = np.sqrt(np.sum(X * X, axis=1))
        if np.any(norms <= self.eps):
            bad = int(np.argmax(norms <= self.eps))
            raise DegenerateInputError(f"row {bad} has norm {norms[bad]:.3g} <= {self.eps}")
        y = X / norms[:, None]
        self._y, self._norms = y, norms
        return y

    def backward(self, upstream) -> np.ndarray:
        if self._y is None:
            raise StateError("L2NormLayer: backward called before forward")
        upstream = _as_matrix(upstream, "upstream")
        if upstream.shape != self._y.shape:
            raise ShapeError(f"upstream shape {upstream.shape} != output shape {self._y.shape}")
        radial = np.sum(upstream * self._y, axis=1, keepdims=True)
        return (upstream - radial * self._y) / self._norms[:, None]


def dense_forward(layer: DenseLayer, X) -> np.ndarray:
    return layer.forward(X)


def dense_backward(layer: DenseLayer, upstream) -> Gradients:
    return layer.backward(upstream)


def l2_normalize_forward(layer: L2NormLayer, X) -> np.ndarray:
    return layer.forward(X)


def l2_normalize_backward(layer: L2NormLayer, upstream) -> np.ndarray:
    return layer.backward(upstream)


def _check_labels(labels, n_rows: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape != (n_rows,):
        raise ShapeError(f"expected {n_rows} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ValidationError("labels must be integer class indices")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValidationError(f"label out of range [0, {n_classes})")
    return labels


def cross_entropy(probabilities, labels, logits=None):
    """Mean cross-entropy and its gradient w.r.t. the output logits.

    A single output column is read as a sigmoid probability of class 1,
    otherwise rows are softmax distributions. The gradient is the fused
    ``(p - onehot) / B``. When ``logits`` are given the loss is computed from
    them with log-sum-exp, which stays finite for saturated outputs.
    """
    P = _as_matrix(probabilities, "probabilities")
    B, C = P.shape
    binary = C == 1
    y = _check_labels(labels, B, 2 if binary else C)
    if binary:
        target = y.astype(np.float64)[:, None]
        if logits is not None:
            z = _as_matrix(logits, "logits")
            # -log sigmoid(z) = softplus(-z); -log(1 - sigmoid(z)) = softplus(z)
            per_row = np.where(target[:, 0] == 1.0, np.logaddexp(0.0, -z[:, 0]), np.logaddexp(0.0, z[:, 0]))
        else:
            p = np.clip(P[:, 0], 1e-300, 1.0)
            q = np.clip(1.0 - P[:, 0], 1e-300, 1.0)
            per_row = -np.where(target[:, 0] == 1.0, np.log(p), np.log(q))
    else:
        target = np.zeros_like(P)
        target[np.arange(B), y] = 1.0
        if logits is not None:
            z = _as_matrix(logits, "logits")
            zmax = z.max(axis=1, keepdims=True)
            lse = zmax[:, 0] + np.log(np.sum(np.exp(z - zmax), axis=1))
            per_row = lse - z[np.arange(B), y]
        else:
            per_row = -np.log(np.clip(P[np.arange(B), y], 1e-300, 1.0))
    loss = float(np.sum(per_row) / B)
    grad = (P - target) / B
    return loss, grad
