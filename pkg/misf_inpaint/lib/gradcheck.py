"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from misf_inpaint.lib import ops
from misf_inpaint.lib.errors import NumericError
from misf_inpaint.lib.tensor import Parameter, Tensor, backward, no_grad

# Denominators are floored at this fraction of the largest analytic magnitude,
# so coordinates whose true gradient is ~0 are judged on absolute error.
RELATIVE_FLOOR = 1e-3


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference comparison."""

    max_rel_err: float
    passed: bool
    checked: int
    nonfinite: int = 0

    def __str__(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return f"{verdict} max_rel_err={self.max_rel_err:.3e} ({self.checked} coords)"


# Spawn key for the projection weights; inputs drawn from default_rng(seed)
# must not coincide with them.
PROJECTION_STREAM = 7919


def projection_weights(shape: tuple[int, ...], seed: int) -> np.ndarray:
    return np.random.default_rng([seed, PROJECTION_STREAM]).standard_normal(shape)


def _project(out: Tensor, seed: int) -> Tensor:
    """Reduce `out` to a scalar through a fixed random projection."""
    if out.size == 1:
        return ops.reshape(out, ())
    weights = projection_weights(out.shape, seed)
    return ops.total(ops.mul(out, weights.astype(out.dtype)))


def _coords(size: int, max_coords: int | None, rng: np.random.Generator) -> np.ndarray:
    if max_coords is None or max_coords >= size:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_coords, replace=False))


def _relative(analytic: np.ndarray, numeric: np.ndarray, scale: float) -> np.ndarray:
    floor = max(RELATIVE_FLOOR * scale, 1e-12)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _finite_difference(
    evaluate: Callable[[], float], array: np.ndarray, coords: np.ndarray, eps: float
) -> tuple[np.ndarray, int]:
    flat = array.reshape(-1)
    numeric = np.zeros(len(coords))
    nonfinite = 0
    for n, idx in enumerate(coords):
        original = flat[idx]
        try:
            flat[idx] = original + eps
            plus = evaluate()
            flat[idx] = original - eps
            minus = evaluate()
            numeric[n] = (plus - minus) / (2.0 * eps)
        except NumericError:
            numeric[n] = np.nan
        finally:
            flat[idx] = original
        if not np.isfinite(numeric[n]):
            nonfinite += 1
    return numeric, nonfinite


def _report(
    analytic: np.ndarray, numeric: np.ndarray, nonfinite: int, tol: float
) -> GradCheckReport:
    finite = np.isfinite(numeric)
    scale = float(np.max(np.abs(analytic))) if analytic.size else 0.0
    errors = _relative(analytic[finite], numeric[finite], scale)
    max_err = float(errors.max()) if errors.size else 0.0
    return GradCheckReport(
        max_rel_err=max_err,
        passed=nonfinite == 0 and max_err < tol,
        checked=len(numeric),
        nonfinite=nonfinite,
    )


def grad_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare d f(x) / dx against central differences, in 64-bit.

    Non-scalar outputs are reduced with a fixed random projection first.
    """
    leaf = Tensor(np.array(x.data, dtype=np.float64, copy=True), requires_grad=True)
    backward(_project(f(leaf), seed))
    analytic_full = (
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
    ).reshape(-1)

    def evaluate() -> float:
        with no_grad():
            return _project(f(leaf), seed).item()

    coords = _coords(leaf.size, max_coords, np.random.default_rng(seed + 1))
    numeric, nonfinite = _finite_difference(evaluate, leaf.data, coords, eps)
    report = _report(analytic_full[coords], numeric, nonfinite, tol)
    logging.debug("grad_check: %s", report)
    return report


def grad_check_parameters(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    tol: float = 1e-4,
    max_coords: int | None = 4,
    seed: int = 0,
) -> GradCheckReport:
    """Check d loss / d param for every parameter in `params` (64-bit values).

    `max_coords` coordinates are sampled per parameter.
    """
    for p in params:
        p.grad = None
    backward(loss_fn())

    def evaluate() -> float:
        with no_grad():
            return loss_fn().item()

    rng = np.random.default_rng(seed)
    analytic_parts: list[np.ndarray] = []
    numeric_parts: list[np.ndarray] = []
    nonfinite = 0
    for p in params:
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        coords = _coords(p.size, max_coords, rng)
        numeric, bad = _finite_difference(evaluate, p.data, coords, eps)
        analytic_parts.append(grad.reshape(-1)[coords])
        numeric_parts.append(numeric)
        nonfinite += bad
    report = _report(
        np.concatenate(analytic_parts), np.concatenate(numeric_parts), nonfinite, tol
    )
    logging.debug("grad_check_parameters: %s", report)
    return report
