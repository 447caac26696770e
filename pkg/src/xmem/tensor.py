"""Dense 2-D math: affine and activation layers with explicit backward rules,
Euclidean distance, and a central-difference gradient checker.

All arrays are row-major numpy matrices. Precision is a run-wide choice
("f64" for anything involving gradient checks, "f32" allowed for training);
the two are never mixed inside one run.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DeterminismError, DimensionError, NonFiniteError, PrecisionError

DTYPES = {"f32": np.float32, "f64": np.float64}
LEAKY_SLOPE = 0.2


def dtype_for(precision: str) -> np.dtype:
    if precision not in DTYPES:
        raise PrecisionError(f"unknown precision {precision!r}; expected one of {sorted(DTYPES)}")
    return np.dtype(DTYPES[precision])


def check_finite(op: str, *arrays: np.ndarray) -> None:
    """Fail fast with the offending operation name if any value is NaN/Inf."""
    for a in arrays:
        if not np.isfinite(a).all():
            raise NonFiniteError(f"{op}: non-finite values in operand of shape {a.shape}")


def affine_forward(x: np.ndarray, group) -> np.ndarray:
    """x @ W + b for a parameter group with weights [n_in, n_out], bias [n_out]."""
    w, b = group.weights, group.bias
    if x.ndim != 2:
        raise DimensionError(f"affine '{group.name}': input must be 2-D, got shape {x.shape}")
    if x.shape[1] != w.shape[0]:
        raise DimensionError(
            f"affine '{group.name}': input shape {x.shape} incompatible with weights {w.shape}"
        )
    check_finite(f"affine '{group.name}'", x)
    return x @ w + b


def affine_backward(x: np.ndarray, group, grad_out: np.ndarray):
    """Gradients of an affine layer: returns (grad_x, grad_w, grad_b)."""
    w = group.weights
    grad_x = grad_out @ w.T
    grad_w = x.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


def activation_forward(x: np.ndarray, kind: str) -> np.ndarray:
    check_finite(f"activation '{kind}'", x)
    if kind == "relu":
        return np.maximum(x, 0)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "leaky_relu":
        return np.where(x > 0, x, LEAKY_SLOPE * x)
    raise ValueError(f"unknown activation kind {kind!r}")


def activation_deriv(x: np.ndarray, kind: str) -> np.ndarray:
    """First derivative evaluated at the pre-activation x."""
    if kind == "relu":
        return (x > 0).astype(x.dtype)
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "leaky_relu":
        return np.where(x > 0, x.dtype.type(1.0), x.dtype.type(LEAKY_SLOPE))
    raise ValueError(f"unknown activation kind {kind!r}")


def activation_curvature(x: np.ndarray, kind: str) -> np.ndarray:
    """Second derivative at x; zero almost everywhere for the piecewise-linear kinds."""
    if kind in ("relu", "leaky_relu"):
        return np.zeros_like(x)
    if kind == "tanh":
        t = np.tanh(x)
        return -2.0 * t * (1.0 - t * t)
    raise ValueError(f"unknown activation kind {kind!r}")


def activation_backward(x: np.ndarray, kind: str, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * activation_deriv(x, kind)


def euclidean_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"euclidean_distance: length mismatch {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.sqrt((diff * diff).sum()))


@dataclass
class CoordCheck:
    """One sampled coordinate of one array, analytic vs numeric."""

    name: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class CheckReport:
    loss_value: float
    tol: float
    n_coords: int
    max_rel_err: float
    worst: CoordCheck | None

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(1.0, abs(a), abs(n))


def finite_diff_check(
    loss_and_grads: Callable[[], tuple[float, dict[str, np.ndarray]]],
    arrays: dict[str, np.ndarray],
    *,
    step: float = 1e-5,
    tol: float = 1e-6,
    coords_per_array: int = 100,
    seed: int = 0,
    loss_only: Callable[[], float] | None = None,
) -> CheckReport:
    """Compare analytic gradients against central finite differences.

    `loss_and_grads` evaluates the loss at the current contents of `arrays`
    and returns (value, gradients keyed like `arrays`); missing keys are
    treated as zero gradients. The arrays are perturbed in place and always
    restored. `loss_only`, when given, is a cheaper value-only evaluator
    used for the perturbed points.

    The relative error is |a - n| / max(1, |a|, |n|) per coordinate.
    """
    for name, arr in arrays.items():
        if arr.dtype != np.float64:
            raise PrecisionError(
                f"finite_diff_check requires float64 arrays; '{name}' is {arr.dtype}"
            )

    value, grads = loss_and_grads()
    value2, _ = loss_and_grads()
    if value != value2:
        raise DeterminismError(
            f"loss function is not deterministic: {value!r} != {value2!r} on re-evaluation"
        )
    evaluate = loss_only if loss_only is not None else (lambda: loss_and_grads()[0])

    rng = np.random.default_rng(seed)
    worst: CoordCheck | None = None
    max_rel = 0.0
    n_checked = 0
    for name, arr in arrays.items():
        grad = grads.get(name)
        flat = arr.reshape(-1)
        gflat = None if grad is None else np.asarray(grad).reshape(-1)
        n = min(coords_per_array, flat.size)
        idxs = rng.choice(flat.size, size=n, replace=False)
        for idx in idxs:
            old = flat[idx]
            flat[idx] = old + step
            up = evaluate()
            flat[idx] = old - step
            down = evaluate()
            flat[idx] = old
            numeric = (up - down) / (2.0 * step)
            analytic = 0.0 if gflat is None else float(gflat[idx])
            rel = relative_error(analytic, numeric)
            n_checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = CoordCheck(name, int(idx), analytic, numeric, rel)
    return CheckReport(value, tol, n_checked, max_rel, worst)
