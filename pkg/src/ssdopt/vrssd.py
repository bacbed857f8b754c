"""Variance-reduced stochastic subspace descent.

The run is organized in epochs. Each epoch refreshes an anchor: the current
iterate x~ together with a full finite-difference gradient estimate g~ at it
(d + 1 or 2 d evaluations). Inner steps then combine the fresh sketched
derivative with the anchor as a control variate,

    v = P (s - eta t) + eta g~,      t = P^T g~,

which leaves the expectation of v unchanged for constant eta while shrinking
its variance when g~ resembles the current gradient. After m inner steps the
anchor moves: option "one" takes the last inner iterate, option "two" a
uniformly random one (which is also where the next epoch restarts).

The weight eta is "zero" (plain sketched descent), "one" (classic control
variate), "exact" (the variance-optimal projection of the true gradient onto
g~, at d + 1 extra evaluations per step; a diagnostic), or "approx" (the same
projection assembled from already-sketched quantities at zero extra cost).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import BudgetError, ConfigurationError
from .oracle import full_gradient_fd
from .problems import Objective
from .sketch import EPOCH_CHANNEL, RngStream, SKETCH_CHANNEL, draw
from .ssd import (
    STATUS_BUDGET,
    STATUS_MAX_ITERS,
    STATUS_TARGET,
    ArmijoStep,
    RunTrace,
    SsdConfig,
    TraceEntry,
    _Budget,
    _Plan,
    _Tracer,
    _armijo,
    _close,
    _fixed_alpha,
    _loop,
    _met,
    _sketch_derivatives,
    _ssd_propose,
    _start_point,
    _step_cost,
    _supplies_value,
    validate_config,
)

_OPTIONS = ("one", "two")
_ETA_MODES = ("zero", "one", "exact", "approx")


@dataclass(frozen=True)
class VrssdConfig(SsdConfig):
    """SSD options plus the epoch structure.

    ``m`` inner steps per epoch; ``option`` picks the next anchor (last inner
    iterate or a uniform one); ``eta_mode`` selects the control-variate
    weight; ``warmup_iters`` plain sketched steps run before the first
    anchor is built.
    """

    m: int = 10
    option: str = "one"
    eta_mode: str = "approx"
    warmup_iters: int = 0


@dataclass
class AnchorState:
    """Snapshot shared by the inner steps of one epoch."""

    point: np.ndarray
    gradient: np.ndarray
    epoch: int


def validate_vrssd_config(cfg: VrssdConfig, obj: Optional[Objective] = None) -> None:
    validate_config(cfg, obj)
    if cfg.m < 1:
        raise ConfigurationError(f"epoch length must be positive, got {cfg.m}")
    if cfg.option not in _OPTIONS:
        raise ConfigurationError(
            f"unknown anchor option {cfg.option!r}; expected one of {_OPTIONS}"
        )
    if cfg.eta_mode not in _ETA_MODES:
        raise ConfigurationError(
            f"unknown eta mode {cfg.eta_mode!r}; expected one of {_ETA_MODES}"
        )
    if cfg.warmup_iters < 0:
        raise ConfigurationError(
            f"warmup length must be nonnegative, got {cfg.warmup_iters}"
        )


def eta_value(mode: str, s_vec, t, g_anchor, g_full=None) -> float:
    """Control-variate weight for one inner step.

    ``exact`` projects the full gradient estimate onto the anchor gradient,
    g_full . g~ / ||g~||^2; ``approx`` builds the same projection from the
    sketched vectors alone, s . t / ||g~||^2, using E[P P^T] = I.  A zero
    anchor gradient disables the control variate.
    """
    if mode == "zero":
        return 0.0
    if mode == "one":
        return 1.0
    g_anchor = np.asarray(g_anchor, dtype=float)
    gnorm2 = float(g_anchor @ g_anchor)
    if gnorm2 == 0.0:
        return 0.0
    if mode == "exact":
        if g_full is None:
            raise ConfigurationError("exact eta needs a full gradient estimate")
        return float(np.dot(np.asarray(g_full, float), g_anchor) / gnorm2)
    if mode == "approx":
        return float(np.dot(np.asarray(s_vec, float), np.asarray(t, float)) / gnorm2)
    raise ConfigurationError(f"unknown eta mode {mode!r}; expected one of {_ETA_MODES}")


def cmse(mode: str, g, g_anchor, rho: float) -> float:
    """Conditional mean squared error E ||v - g||^2 under scaled Haar sketches.

    For sampling ratio rho = d / ell and the step direction built from exact
    projected gradients, the error of v relative to the true gradient g is

        (rho - 1) ||g - eta g~||^2,

    expanded here per eta mode: ``zero`` keeps ||g||^2, ``one`` the full
    squared difference, and ``optimal`` subtracts the component of g along
    g~ (the minimizer over constant eta).
    """
    if rho < 1:
        raise ConfigurationError(f"sampling ratio must be at least 1, got {rho}")
    g = np.asarray(g, dtype=float)
    g_anchor = np.asarray(g_anchor, dtype=float)
    gg = float(g @ g)
    if mode == "zero":
        return (rho - 1.0) * gg
    aa = float(g_anchor @ g_anchor)
    ga = float(g @ g_anchor)
    if mode == "one":
        return (rho - 1.0) * (gg + aa - 2.0 * ga)
    if mode == "optimal":
        if aa == 0.0:
            return (rho - 1.0) * gg
        return (rho - 1.0) * (gg - ga * ga / aa)
    raise ConfigurationError(
        f"unknown cmse mode {mode!r}; expected 'zero', 'one', or 'optimal'"
    )


def rate_bound_vrssd(alpha: float, gamma: float, lam: float, m: int, rho: float,
                     part: str = "ii") -> float:
    """Per-epoch contraction factor of E[f(x~) - fmin].

    Part "i" covers the anchor chosen as a uniformly random inner iterate with
    eta = 1; part "ii" the variance-optimal eta.  Requires rho > 2 and
    alpha lam rho < 1; outside that region the analysis gives nothing and the
    call is refused.
    """
    if rho <= 2:
        raise ConfigurationError(
            f"sampling ratio rho = d/ell must exceed 2, got {rho}"
        )
    if alpha <= 0 or gamma <= 0 or lam <= 0:
        raise ConfigurationError("alpha, gamma, and lambda must be positive")
    if m < 1:
        raise ConfigurationError(f"epoch length must be positive, got {m}")
    if alpha * lam * rho >= 1:
        raise ConfigurationError(
            f"need alpha * lambda * rho < 1, got {alpha * lam * rho}"
        )
    base = 1.0 / (alpha * gamma * m * (1.0 - alpha * lam * rho))
    if part == "ii":
        return base
    if part == "i":
        return base + alpha * lam * (rho - 1.0) / (1.0 - alpha * lam * rho)
    raise ConfigurationError(f"part must be 'i' or 'ii', got {part!r}")


def _inner_direction(obj, x, anchor: AnchorState, cfg: VrssdConfig, P):
    """Shared assembly of one inner-step direction.

    Returns ``(v, s_vec, fx)`` where fx is the shared base value when the
    oracle supplies one.  The exact eta mode charges a full gradient estimate
    on top of the sketched one.
    """
    s_vec, fx = _sketch_derivatives(obj, x, cfg, P)
    t = P.apply_transpose(anchor.gradient)
    if cfg.eta_mode == "exact":
        g_full = full_gradient_fd(obj, x, cfg.fd)
        eta = eta_value("exact", s_vec, t, anchor.gradient, g_full)
    else:
        eta = eta_value(cfg.eta_mode, s_vec, t, anchor.gradient)
    v = P.apply(s_vec - eta * t) + eta * anchor.gradient
    return v, s_vec, fx


def vrssd_inner_step(obj: Objective, x, anchor: AnchorState, cfg: VrssdConfig,
                     rng: RngStream, iteration: int = 0):
    """One variance-reduced step with an explicitly supplied stream.

    Diagnostic hook mirroring :func:`ssdopt.ssd.ssd_step`; returns
    ``(x_next, entry)``.
    """
    validate_vrssd_config(cfg, obj)
    x = _start_point(obj, x)
    before = obj.eval_count
    P = draw(cfg.distribution, obj.d, cfg.ell, rng)
    v, s_vec, fx = _inner_direction(obj, x, anchor, cfg, P)
    dirnorm = float(np.linalg.norm(v))
    alpha = _fixed_alpha(cfg.step_rule, obj, cfg.ell)
    if alpha is None:
        f0 = fx if fx is not None else obj.evaluate(x)
        alpha, f_entry = _armijo(
            obj, x, v, f0, float(s_vec @ s_vec), cfg.step_rule, _Budget(obj, None)
        )
    else:
        f_entry = fx if fx is not None else math.nan
    x_next = x - alpha * v
    entry = TraceEntry(iteration, obj.eval_count - before, float(f_entry), alpha, dirnorm)
    return x_next, entry


def _anchor_cost(cfg: VrssdConfig, d: int) -> int:
    if cfg.exact_gradient:
        return 0
    return d + 1 if cfg.fd.kind == "forward" else 2 * d


def _refresh_anchor(obj, x, cfg: VrssdConfig, epoch: int):
    """Full gradient estimate at the current iterate; forward mode also
    returns the objective value there."""
    if cfg.exact_gradient:
        return AnchorState(x.copy(), obj.reference_gradient(x), epoch), None
    g, f_anchor = full_gradient_fd(obj, x, cfg.fd, return_value=True)
    return AnchorState(x.copy(), g, epoch), f_anchor


def _vr_propose(obj: Objective, cfg: VrssdConfig, anchor: AnchorState):
    def propose(x, k):
        P = draw(cfg.distribution, obj.d, cfg.ell, RngStream(cfg.seed, SKETCH_CHANNEL, k))
        v, s_vec, fx = _inner_direction(obj, x, anchor, cfg, P)
        return v, float(s_vec @ s_vec), fx, float(np.linalg.norm(v))

    return propose


def run_vrssd(obj: Objective, x0, cfg: VrssdConfig) -> RunTrace:
    """Run epoch-structured variance-reduced sketched descent from ``x0``.

    Iteration indices in the trace count every sketched step, warmup
    included, and each one consumes the stream at its own global index, so a
    run with ``eta_mode="zero"`` and option "one" revisits exactly the
    sketches of :func:`ssdopt.ssd.run_ssd` under the same seed.

    With option "two" and a fixed step rule, recording the value of the last
    inner iterate before the anchor jumps costs one extra evaluation per
    epoch; Armijo runs already know it.
    """
    validate_vrssd_config(cfg, obj)
    x = _start_point(obj, x0)
    budget = _Budget(obj, cfg.eval_budget)
    tracer = _Tracer()
    base = dict(
        step_rule=cfg.step_rule,
        alpha_fixed=_fixed_alpha(cfg.step_rule, obj, cfg.ell),
        supplies_value=_supplies_value(cfg),
        target=cfg.target_value,
    )
    inner_cost = _step_cost(cfg, cfg.ell)
    if cfg.eta_mode == "exact":
        inner_cost += _anchor_cost(cfg, obj.d)
    try:
        budget.ensure(1)
    except BudgetError:
        return RunTrace([], STATUS_BUDGET)
    f0 = obj.evaluate(x)
    tracer.known(0, budget.used(), f0, 0.0, 0.0)
    if _met(cfg.target_value, f0):
        return RunTrace(tracer.entries, STATUS_TARGET)
    f_curr: Optional[float] = f0
    k = 0
    status = None
    if cfg.warmup_iters > 0:
        warm_plan = _Plan(step_cost=_step_cost(cfg, cfg.ell), **base)
        x, f_curr, k, status = _loop(
            obj, x, f_curr, k, min(cfg.warmup_iters, cfg.max_iters),
            budget, tracer, warm_plan, _ssd_propose(obj, cfg),
        )
    epoch = 0
    plan = _Plan(step_cost=inner_cost, **base)
    while status is None and k < cfg.max_iters:
        try:
            budget.ensure(_anchor_cost(cfg, obj.d))
            anchor, f_anchor = _refresh_anchor(obj, x, cfg, epoch)
        except BudgetError:
            status = STATUS_BUDGET
            break
        if f_anchor is not None:
            if tracer.pending:
                tracer.resolve(f_anchor)
            f_curr = f_anchor
            if _met(cfg.target_value, f_curr):
                status = STATUS_TARGET
                break
        inner: List = []
        observer = (lambda xi, fi: inner.append((xi, fi))) if cfg.option == "two" else None
        x, f_curr, k, status = _loop(
            obj, x, f_curr, k, min(k + cfg.m, cfg.max_iters),
            budget, tracer, plan, _vr_propose(obj, cfg, anchor), observer,
        )
        if status is None and cfg.option == "two" and len(inner) == cfg.m:
            # The next epoch restarts from a uniformly chosen inner iterate.
            # Resolve the deferred last entry at the pre-jump point first.
            if tracer.pending:
                f_last = obj.evaluate(x)
                tracer.resolve(f_last)
            j = int(
                RngStream(cfg.seed, EPOCH_CHANNEL, epoch).generator().integers(1, cfg.m + 1)
            )
            x, f_curr = inner[j - 1]
            x = x.copy()
        epoch += 1
    if status is None:
        status = STATUS_MAX_ITERS
    return RunTrace(tracer.entries, _close(obj, x, tracer, status))
