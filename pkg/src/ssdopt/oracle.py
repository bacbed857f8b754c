"""Finite-difference estimates of directional derivatives and gradients.

The probe points of one call are a fixed function of the inputs, so the
evaluations may run concurrently (pass ``map_fn``) without changing any
result or the evaluation count.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, EvaluationError
from .problems import Objective
from .sketch import Sketch

_EPS = float(np.finfo(float).eps)

_KINDS = ("forward", "centered")


@dataclass(frozen=True)
class FdScheme:
    """Finite-difference flavor.

    ``kind`` is ``"forward"`` (ell + 1 evaluations per directional call, the
    base point shared across directions) or ``"centered"`` (2 ell evaluations,
    no base value). ``step`` fixes the offset h; ``None`` selects the
    scale-aware default per call.
    """

    kind: str = "forward"
    step: Optional[float] = None


def default_step(x, kind: str) -> float:
    """Default offset: sqrt(eps)(1 + ||x||_inf) forward, eps^(1/3)(1 + ||x||_inf) centered.

    Each choice balances the scheme's truncation order against roundoff and
    grows with the iterate so the probe offset never vanishes relative to x.
    """
    x = np.asarray(x, dtype=float)
    scale = 1.0 + (float(np.max(np.abs(x))) if x.size else 0.0)
    if kind == "forward":
        return float(np.sqrt(_EPS) * scale)
    if kind == "centered":
        return float(_EPS ** (1.0 / 3.0) * scale)
    raise ConfigurationError(f"unknown finite-difference kind {kind!r}")


def _resolve_step(scheme: FdScheme, x) -> float:
    if scheme.kind not in _KINDS:
        raise ConfigurationError(
            f"unknown finite-difference kind {scheme.kind!r}; expected one of {_KINDS}"
        )
    if scheme.step is None:
        return default_step(x, scheme.kind)
    h = float(scheme.step)
    if not h > 0:
        raise ConfigurationError(f"finite-difference step must be positive, got {h}")
    return h


def _evaluate_probes(obj: Objective, probes, map_fn) -> np.ndarray:
    values = np.array(list(map_fn(obj.evaluate, probes)), dtype=float)
    finite = np.isfinite(values)
    if not finite.all():
        i = int(np.argmin(finite))
        raise EvaluationError(
            "objective returned a non-finite value at a probe point", probes[i]
        )
    return values


def directional_derivatives(
    obj: Objective,
    x,
    P: Sketch,
    scheme: FdScheme,
    *,
    map_fn=map,
    return_value: bool = False,
):
    """Estimate P^T grad f(x), one difference per sketch column.

    Probes run along unit directions and are rescaled by each column norm
    afterwards, so the truncation error does not inherit the sqrt(d/ell)
    column magnitude. Forward mode charges exactly ell + 1 evaluations and
    shares f(x) across columns; centered mode charges exactly 2 ell.

    With ``return_value=True`` the result is ``(s, f(x))`` in forward mode
    and ``(s, None)`` in centered mode, letting callers reuse the base value
    without paying for it twice.
    """
    x = np.asarray(x, dtype=float)
    cols = P.matrix
    if cols.shape[0] != x.shape[0]:
        raise ConfigurationError(
            f"sketch has dimension {cols.shape[0]}, point has {x.shape[0]}"
        )
    norms = np.linalg.norm(cols, axis=0)
    # A zero column keeps a zero probe direction and hence a zero estimate.
    units = cols / np.where(norms > 0.0, norms, 1.0)
    h = _resolve_step(scheme, x)
    if scheme.kind == "forward":
        probes = [x] + [x + h * units[:, j] for j in range(P.ell)]
        values = _evaluate_probes(obj, probes, map_fn)
        s = (values[1:] - values[0]) * norms / h
        return (s, float(values[0])) if return_value else s
    probes = [x + h * units[:, j] for j in range(P.ell)]
    probes += [x - h * units[:, j] for j in range(P.ell)]
    values = _evaluate_probes(obj, probes, map_fn)
    s = (values[: P.ell] - values[P.ell :]) * norms / (2.0 * h)
    return (s, None) if return_value else s


def full_gradient_fd(
    obj: Objective,
    x,
    scheme: FdScheme,
    *,
    map_fn=map,
    return_value: bool = False,
):
    """Coordinate-wise FD gradient: d + 1 (forward) or 2 d (centered) evaluations."""
    x = np.asarray(x, dtype=float)
    if x.shape != (obj.d,):
        raise ConfigurationError(
            f"point has shape {x.shape}, objective expects ({obj.d},)"
        )
    h = _resolve_step(scheme, x)

    def shifted(i: int, delta: float) -> np.ndarray:
        p = x.copy()
        p[i] += delta
        return p

    if scheme.kind == "forward":
        probes = [x] + [shifted(i, h) for i in range(obj.d)]
        values = _evaluate_probes(obj, probes, map_fn)
        g = (values[1:] - values[0]) / h
        return (g, float(values[0])) if return_value else g
    probes = [shifted(i, h) for i in range(obj.d)]
    probes += [shifted(i, -h) for i in range(obj.d)]
    values = _evaluate_probes(obj, probes, map_fn)
    g = (values[: obj.d] - values[obj.d :]) / (2.0 * h)
    return (g, None) if return_value else g
