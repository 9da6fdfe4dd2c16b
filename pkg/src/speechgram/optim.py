"""L-BFGS with a strong-Wolfe line search, and Adam with decoupled weight decay."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """The objective produced a non-finite value or gradient."""


@dataclass(frozen=True)
class LbfgsConfig:
    history: int = 10
    max_iters: int = 1000
    grad_tol: float = 1e-6
    c1: float = 1e-4
    c2: float = 0.9
    max_ls_evals: int = 20

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.history < 1:
            raise ValueError("history must be >= 1")
        if self.max_iters < 0 or self.max_ls_evals < 1:
            raise ValueError("max_iters must be >= 0 and max_ls_evals >= 1")


@dataclass
class LbfgsResult:
    x: np.ndarray
    trace: list[float]
    grad_norms: list[float]
    iterations: int
    evaluations: int
    stop_reason: str

    def __iter__(self):
        return iter((self.x, self.trace))


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    d1 = g1 + g2 - 3 * (f1 - f2) / (x1 - x2)
    disc = d1 * d1 - g1 * g2
    if disc >= 0:
        d2 = math.copysign(math.sqrt(disc), x2 - x1)
        denom = g2 - g1 + 2 * d2
        if denom != 0:
            xm = x2 - (x2 - x1) * (g2 + d2 - d1) / denom
            if math.isfinite(xm):
                return min(max(xm, lo), hi)
    return 0.5 * (lo + hi)


def _strong_wolfe(phi, f0, g0, alpha, cfg: LbfgsConfig):
    """Nocedal & Wright line search with cubic zoom.

    ``phi(a)`` returns ``(f, dphi, payload)``.  Returns the accepted
    ``(a, f, payload)``, or the best sufficient-decrease point seen when the
    curvature condition could not be met, or None.

    When function values differ from ``f0`` only at roundoff level, sufficient
    decrease is judged from the derivative instead (approximate Wolfe test,
    Hager & Zhang), but never at the price of an increase over ``f0``.
    """
    tie = 1e-12 * abs(f0)
    evals = 0
    best = None

    def decreased(a, f, d):
        if f <= f0 + cfg.c1 * a * g0:
            return True
        return f <= f0 and f0 - f <= tie and d <= (1 - 2 * cfg.c1) * -g0

    def curvature(d):
        return abs(d) <= -cfg.c2 * g0

    def probe(a):
        nonlocal evals, best
        f, d, payload = phi(a)
        evals += 1
        if decreased(a, f, d) and (best is None or f < best[1]):
            best = (a, f, payload)
        return f, d, payload

    def higher(f, f_ref, d):
        if abs(f - f_ref) <= tie:
            return d >= 0
        return f >= f_ref

    def zoom(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi):
        while evals < cfg.max_ls_evals:
            lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
            if hi - lo <= 1e-14 * hi:
                break
            width = hi - lo
            a = _cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi, lo + 0.1 * width, hi - 0.1 * width)
            f, d, payload = probe(a)
            if not decreased(a, f, d) or higher(f, f_lo, d):
                a_hi, f_hi, d_hi = a, f, d
            else:
                if curvature(d):
                    return (a, f, payload)
                if d * (a_hi - a_lo) >= 0:
                    a_hi, f_hi, d_hi = a_lo, f_lo, d_lo
                a_lo, f_lo, d_lo = a, f, d
        return best

    a_prev, f_prev, d_prev = 0.0, f0, g0
    a = alpha
    while evals < cfg.max_ls_evals:
        f, d, payload = probe(a)
        if not decreased(a, f, d) or (evals > 1 and higher(f, f_prev, d)):
            return zoom(a_prev, f_prev, d_prev, a, f, d), evals
        if curvature(d):
            return (a, f, payload), evals
        if d >= 0:
            return zoom(a, f, d, a_prev, f_prev, d_prev), evals
        a_prev, f_prev, d_prev = a, f, d
        a = a * 2.0
    return best, evals


def lbfgs_minimize(objective: Callable[[np.ndarray], tuple[float, np.ndarray]], x0: np.ndarray,
                   cfg: LbfgsConfig = LbfgsConfig(),
                   callback: Callable[[int, float, float], None] | None = None) -> LbfgsResult:
    """Minimize ``objective(x) -> (value, gradient)`` starting at ``x0``.

    Stops when the gradient norm drops below ``grad_tol``, after ``max_iters``
    iterations, or when the line search finds no decrease (best point so far
    is returned).  ``trace`` holds the objective at every accepted iterate,
    starting with ``x0``.
    """
    shape = np.shape(x0)
    x = np.array(x0, dtype=np.float64).reshape(-1)
    evals = 0

    def evaluate(z):
        nonlocal evals
        f, g = objective(z.reshape(shape))
        evals += 1
        f = float(f)
        g = np.asarray(g, dtype=np.float64).reshape(-1)
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite objective or gradient at evaluation {evals} (value={f})")
        return f, g

    f, g = evaluate(x)
    gnorm = float(np.linalg.norm(g))
    trace, norms = [f], [gnorm]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    rho_hist: list[float] = []
    reason = "max_iters"
    it = 0
    if callback:
        callback(0, f, gnorm)
    while True:
        if gnorm < cfg.grad_tol:
            reason = "grad_tol"
            break
        if it >= cfg.max_iters:
            reason = "max_iters"
            break
        # two-loop recursion
        q = -g
        alphas = []
        for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rho_hist)):
            a = rho * (s @ q)
            alphas.append(a)
            q = q - a * y
        if s_hist:
            q = q * ((s_hist[-1] @ y_hist[-1]) / (y_hist[-1] @ y_hist[-1]))
        for (s, y, rho), a in zip(zip(s_hist, y_hist, rho_hist), reversed(alphas)):
            b = rho * (y @ q)
            q = q + (a - b) * s
        d = q
        gd = float(g @ d)
        if not gd < 0:
            s_hist.clear(); y_hist.clear(); rho_hist.clear()
            d = -g
            gd = -gnorm * gnorm
        alpha0 = 1.0 if s_hist else min(1.0, 1.0 / gnorm)

        def phi(a, d=d):
            fz, gz = evaluate(x + a * d)
            return fz, float(gz @ d), gz

        found, _ = _strong_wolfe(phi, f, gd, alpha0, cfg)
        if found is None:
            reason = "line_search"
            break
        a, f_new, g_new = found
        step = a * d
        if np.array_equal(x + step, x):
            # the step vanished in rounding; nothing more can be gained along d
            reason = "no_progress"
            break
        y = g_new - g
        sy = float(step @ y)
        if sy > 1e-12 * float(np.linalg.norm(step) * np.linalg.norm(y)) and sy > 0:
            s_hist.append(step); y_hist.append(y); rho_hist.append(1.0 / sy)
            if len(s_hist) > cfg.history:
                s_hist.pop(0); y_hist.pop(0); rho_hist.pop(0)
        x = x + step
        f, g = f_new, g_new
        gnorm = float(np.linalg.norm(g))
        it += 1
        trace.append(f)
        norms.append(gnorm)
        if callback:
            callback(it, f, gnorm)
    log.debug("lbfgs stopped after %d iterations (%s), f=%g", it, reason, f)
    return LbfgsResult(x.reshape(shape), trace, norms, it, evals, reason)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-6
    lr_start: float = 1e-3
    lr_end: float = 1e-6
    total_steps: int = 5000
    weight_decay: float = 1e-6

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")

    def lr(self, step: int) -> float:
        """Exponential annealing from ``lr_start`` at step 1 to ``lr_end`` at ``total_steps``."""
        if self.total_steps <= 1:
            return self.lr_start
        frac = min(max(step - 1, 0), self.total_steps - 1) / (self.total_steps - 1)
        return self.lr_start * (self.lr_end / self.lr_start) ** frac


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              cfg: AdamConfig, step: int, lr: float | None = None) -> None:
    """One in-place bias-corrected Adam update (``step`` counts from 1)."""
    lr = cfg.lr(step) if lr is None else lr
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        mhat = m / (1 - cfg.beta1 ** step)
        vhat = v / (1 - cfg.beta2 ** step)
        p -= lr * mhat / (np.sqrt(vhat) + cfg.eps) + lr * cfg.weight_decay * p
