"""
Univariate regression fitters behind the guidance term: logistic, proportional-odds
(cumulative logit) and Cox proportional hazards with Breslow ties.

Each fitter returns a `FitResult` holding the maximised log-likelihood of the
single-predictor model and of the null model, from which `pseudo_r2` derives the
Cox-Snell pseudo R-squared.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import expit, log_expit, logit

from src.errors import NoEvents, NonConvergence, SeparationDetected

logger = logging.getLogger(__name__)

SEPARATION_BOUND = 15.0
GLM_MAX_ITER = 100
COX_MAX_ITER = 50
COX_TOL = 1e-8
MAX_HALVING = 10


@dataclass(frozen=True)
class FitResult:
    loglik: float
    null_loglik: float
    coef: float
    n: int
    iterations: int = 0

    @property
    def pseudo_r2(self) -> float:
        return pseudo_r2(self.null_loglik, self.loglik, self.n)


def pseudo_r2(null_loglik: float, loglik: float, n: int) -> float:
    """Cox-Snell pseudo R-squared 1 - exp((2/n)(l0 - lg)), clipped to [0, 1)."""
    value = -np.expm1((2.0 / n) * (null_loglik - loglik))
    return float(min(max(value, 0.0), np.nextafter(1.0, 0.0)))


def _is_constant(x: np.ndarray) -> bool:
    return bool(np.ptp(x) == 0)


# Logistic regression

def _logistic_loglik(beta, design, y):
    eta = design @ beta
    return float(np.sum(y * log_expit(eta) + (1.0 - y) * log_expit(-eta)))


def fit_logistic(x, y) -> FitResult:
    """Newton-Raphson (IRLS) fit of logit P(y=1) = b0 + b1 x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    ybar = y.mean()
    null_loglik = float(n * (ybar * np.log(ybar) + (1.0 - ybar) * np.log1p(-ybar)))
    if _is_constant(x):
        return FitResult(null_loglik, null_loglik, 0.0, n)

    design = np.column_stack([np.ones(n), x])
    beta = np.array([logit(ybar), 0.0])
    current = _logistic_loglik(beta, design, y)
    for iteration in range(1, GLM_MAX_ITER + 1):
        prob = expit(design @ beta)
        grad = design.T @ (y - prob)
        hess = design.T @ (design * (prob * (1.0 - prob))[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(f"logistic information matrix is singular: {exc}") from exc
        candidate = beta + step
        value = _logistic_loglik(candidate, design, y)
        halvings = 0
        while value < current and halvings < MAX_HALVING:
            step /= 2.0
            candidate = beta + step
            value = _logistic_loglik(candidate, design, y)
            halvings += 1
        if abs(candidate[1]) > SEPARATION_BOUND:
            stable = FitResult(current, null_loglik, float(beta[1]), n, iteration)
            raise SeparationDetected(
                f"logistic slope exceeded {SEPARATION_BOUND} at iteration {iteration}", stable.pseudo_r2
            )
        beta, current = candidate, value
        if np.max(np.abs(step)) < 1e-10 or np.linalg.norm(grad) < 1e-10:
            return FitResult(current, null_loglik, float(beta[1]), n, iteration)
    raise NonConvergence(f"logistic fit did not converge in {GLM_MAX_ITER} iterations")


# Proportional-odds regression

class _SlopeDiverged(Exception):
    """Raised from the BFGS callback to stop at the first iterate past the separation bound."""


def _thresholds(params, n_cut):
    theta = np.empty(n_cut)
    theta[0] = params[0]
    if n_cut > 1:
        theta[1:] = params[0] + np.cumsum(np.exp(params[1:n_cut]))
    return theta


def _ordinal_objective(params, x, codes, n_cut):
    """Negative log-likelihood and gradient of P(Y <= j) = expit(theta_j - beta x)."""
    theta = _thresholds(params, n_cut)
    beta = params[n_cut]
    bounds = np.concatenate([[-np.inf], theta, [np.inf]])
    eta = beta * x
    upper = expit(bounds[codes + 1] - eta)
    lower = expit(bounds[codes] - eta)
    prob = np.clip(upper - lower, 1e-300, None)
    dens_upper = upper * (1.0 - upper)
    dens_lower = lower * (1.0 - lower)

    grad_theta = np.zeros(n_cut)
    has_upper = codes < n_cut
    has_lower = codes > 0
    np.add.at(grad_theta, codes[has_upper], dens_upper[has_upper] / prob[has_upper])
    np.add.at(grad_theta, codes[has_lower] - 1, -dens_lower[has_lower] / prob[has_lower])
    grad_beta = -np.sum(x * (dens_upper - dens_lower) / prob)

    grad = np.empty_like(params)
    grad[0] = grad_theta.sum()
    if n_cut > 1:
        tail = np.cumsum(grad_theta[::-1])[::-1]
        grad[1:n_cut] = np.exp(params[1:n_cut]) * tail[1:]
    grad[n_cut] = grad_beta
    return -float(np.sum(np.log(prob))), -grad


def fit_ordinal(x, y) -> FitResult:
    """Maximum-likelihood proportional-odds fit with ordered thresholds and one slope."""
    x = np.asarray(x, dtype=float)
    levels, codes = np.unique(np.asarray(y), return_inverse=True)
    n = len(codes)
    n_cut = len(levels) - 1
    counts = np.bincount(codes, minlength=len(levels))
    null_loglik = float(np.sum(counts * np.log(counts / n)))
    if _is_constant(x):
        return FitResult(null_loglik, null_loglik, 0.0, n)

    theta0 = logit(np.cumsum(counts)[:-1] / n)
    start = np.concatenate([[theta0[0]], np.log(np.diff(theta0)), [0.0]])

    stable = {"params": start, "iteration": 0}

    def watch_slope(params):
        if abs(params[n_cut]) > SEPARATION_BOUND:
            raise _SlopeDiverged
        stable["params"] = params.copy()
        stable["iteration"] += 1

    try:
        result = optimize.minimize(
            _ordinal_objective, start, args=(x, codes, n_cut), jac=True, method="BFGS",
            callback=watch_slope, options={"maxiter": GLM_MAX_ITER, "gtol": 1e-9},
        )
    except _SlopeDiverged:
        loglik = -_ordinal_objective(stable["params"], x, codes, n_cut)[0]
        raise SeparationDetected(
            f"ordinal slope exceeded {SEPARATION_BOUND} at iteration {stable['iteration'] + 1}",
            pseudo_r2(null_loglik, loglik, n),
        ) from None
    if not result.success and np.linalg.norm(result.jac) > 1e-5:
        raise NonConvergence(f"ordinal fit did not converge: {result.message}")
    return FitResult(-float(result.fun), null_loglik, float(result.x[n_cut]), n, int(result.nit))


# Cox proportional hazards

class _BreslowPartialLikelihood:
    """Partial log-likelihood of a single covariate with Breslow handling of tied times."""

    def __init__(self, x, times, events):
        order = np.argsort(times, kind="stable")
        self.x = np.asarray(x, dtype=float)[order]
        self.times = np.asarray(times, dtype=float)[order]
        is_event = np.asarray(events)[order] == 1
        # first sorted position whose time is >= each event time: the start of its risk set
        self.risk_start = np.searchsorted(self.times, self.times[is_event], side="left")
        self.event_x = self.x[is_event]

    def evaluate(self, beta: float):
        eta = beta * self.x
        shift = eta.max()
        w = np.exp(eta - shift)
        s0 = np.cumsum(w[::-1])[::-1][self.risk_start]
        s1 = np.cumsum((w * self.x)[::-1])[::-1][self.risk_start]
        s2 = np.cumsum((w * self.x**2)[::-1])[::-1][self.risk_start]
        loglik = float(np.sum(beta * self.event_x - np.log(s0) - shift))
        mean = s1 / s0
        grad = float(np.sum(self.event_x - mean))
        hess = -float(np.sum(s2 / s0 - mean**2))
        return loglik, grad, hess


def fit_cox(x, times, events) -> FitResult:
    """Newton-Raphson with step-halving on the Breslow partial likelihood."""
    events = np.asarray(events)
    n = len(events)
    if not np.any(events == 1):
        raise NoEvents("Cox fit requires at least one event")
    partial = _BreslowPartialLikelihood(x, times, events)
    null_loglik, _, _ = partial.evaluate(0.0)

    beta = 0.0
    loglik, grad, hess = partial.evaluate(beta)
    for iteration in range(COX_MAX_ITER):
        if abs(grad) < COX_TOL:
            return FitResult(loglik, null_loglik, beta, n, iteration)
        if hess >= 0:
            raise NonConvergence("Cox information is not positive; the covariate is uninformative")
        step = -grad / hess
        candidate = partial.evaluate(beta + step)
        halvings = 0
        while candidate[0] < loglik and halvings < MAX_HALVING:
            step /= 2.0
            candidate = partial.evaluate(beta + step)
            halvings += 1
        beta += step
        loglik, grad, hess = candidate
    if abs(grad) < COX_TOL:
        return FitResult(loglik, null_loglik, beta, n, COX_MAX_ITER)
    raise NonConvergence(f"Cox fit did not converge in {COX_MAX_ITER} iterations (gradient {grad:.3g})")
