"""Per-node model fitting and scoring.

Two fitting modes mirror the two scoring frameworks:

* ``mle`` -- iteratively reweighted least squares.  Binomial models that
  fail to converge (separation) are refit with Firth's bias-reducing
  penalty; if estimates are still non-finite, predictors are removed one at
  a time until the design is full rank.
* ``bayes`` -- Newton optimization of log-likelihood plus log-prior to the
  posterior mode, with the gaussian precision handled on the log scale, and
  the model evidence approximated by Laplace's method at the mode.

All scores are stored in larger-is-better orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import gammaln

from . import families
from .dag import Dag
from .data import Dataset, DesignMatrix, build_design
from .errors import (
    AllPredictorsDropped,
    FitError,
    NoObservations,
    NonFiniteData,
    NonPositiveDefiniteHessian,
    RangeTooNarrow,
)

IRLS_MAX_ITER = 100
IRLS_TOL = 1e-8
UNBOUNDED_COEF = 500.0
NEWTON_MAX_ITER = 200
NEWTON_GRAD_TOL = 1e-8


@dataclass(frozen=True)
class PriorSpec:
    """Parameter priors for the bayes fitting mode.

    Every regression coefficient gets an independent gaussian prior; the
    gaussian-node precision tau gets a Gamma(shape, rate) prior.  Setting
    ``fixed_precision`` removes tau from the parameter vector (used by the
    conjugate-evidence checks).
    """

    coef_mean: float = 0.0
    coef_variance: float = 1000.0
    precision_shape: float = 0.001
    precision_rate: float = 0.001
    fixed_precision: float | None = None

    def __post_init__(self):
        if self.coef_variance <= 0:
            raise ValueError("coef_variance must be positive")
        if self.precision_shape <= 0 or self.precision_rate <= 0:
            raise ValueError("precision prior shape and rate must be positive")


@dataclass(frozen=True)
class FitResult:
    """Fitted node model: estimates, curvature and scores."""

    labels: tuple[str, ...]
    coefficients: np.ndarray
    family: str
    method: str
    n_obs: int
    log_likelihood: float
    neg_hessian: np.ndarray = field(repr=False)
    gaussian_log_precision: float | None = None
    mlik: float | None = None
    aic: float | None = None
    bic: float | None = None
    mdl: float | None = None
    dropped_predictors: tuple[str, ...] = ()
    used_firth: bool = False
    converged: bool = True

    @property
    def n_params(self) -> int:
        """Total optimized parameters (includes log-precision when present)."""
        extra = 1 if self.gaussian_log_precision is not None else 0
        return len(self.coefficients) + extra

    @property
    def precision(self) -> float | None:
        if self.gaussian_log_precision is None:
            return None
        return float(np.exp(self.gaussian_log_precision))

    def coefficient(self, label: str) -> float:
        return float(self.coefficients[self.labels.index(label)])

    def format_lines(self, child: str) -> list[str]:
        """Human-readable coefficient block, one ``child|parent value`` line."""
        lines = [
            f"{child}|{label}\t{value:.6g}"
            for label, value in zip(self.labels, self.coefficients)
        ]
        if self.gaussian_log_precision is not None:
            lines.append(f"{child}|precision\t{self.precision:.6g}")
        return lines


# --------------------------------------------------------------------------
# priors
# --------------------------------------------------------------------------


def _log_prior_coef(theta: np.ndarray, priors: PriorSpec) -> float:
    v = priors.coef_variance
    dev = theta - priors.coef_mean
    return float(-0.5 * len(theta) * np.log(2.0 * np.pi * v) - 0.5 * np.sum(dev**2) / v)


def _log_prior_log_precision(lam: float, priors: PriorSpec) -> float:
    # Gamma(a, rate b) on tau, transformed to lam = log tau (includes Jacobian)
    a, b = priors.precision_shape, priors.precision_rate
    return a * math.log(b) - gammaln(a) + a * lam - b * math.exp(lam)


def log_joint(design: DesignMatrix, theta: np.ndarray, priors: PriorSpec,
              log_precision: float | None = None) -> float:
    """Log-likelihood plus log-prior with all normalizing constants."""
    eta = design.predictors @ theta
    if design.family == "gaussian":
        if priors.fixed_precision is not None:
            tau = priors.fixed_precision
            ll = float(np.sum(families.loglik_terms("gaussian", design.response, eta, tau)))
            return ll + _log_prior_coef(theta, priors)
        tau = math.exp(log_precision)
        ll = float(np.sum(families.loglik_terms("gaussian", design.response, eta, tau)))
        return (ll + _log_prior_coef(theta, priors)
                + _log_prior_log_precision(log_precision, priors))
    ll = float(np.sum(families.loglik_terms(design.family, design.response, eta)))
    return ll + _log_prior_coef(theta, priors)


# --------------------------------------------------------------------------
# maximum likelihood: IRLS + Firth + rank pruning
# --------------------------------------------------------------------------


class _Diverged(FitError):
    pass


def _irls(design: DesignMatrix):
    """Plain IRLS for binomial/poisson.  Returns (theta, converged)."""
    X, y = design.predictors, design.response
    fam = design.family
    mu = (y + 0.5) / 2.0 if fam == "binomial" else y + 0.5
    eta = families.link(fam, mu)
    dev_old = np.inf
    theta = np.zeros(X.shape[1])
    for _ in range(IRLS_MAX_ITER):
        w = families.irls_weights(fam, mu)
        z = eta + (y - mu) / w
        wx = X * w[:, None]
        try:
            theta = np.linalg.solve(X.T @ wx, wx.T @ z)
        except np.linalg.LinAlgError:
            raise _Diverged("singular weighted design")
        if not np.all(np.isfinite(theta)):
            raise _Diverged("non-finite estimates")
        if np.max(np.abs(theta)) > UNBOUNDED_COEF:
            raise _Diverged("unbounded estimates")
        eta = X @ theta
        mu = families.mean(fam, eta)
        if fam == "binomial":
            mu = np.clip(mu, 1e-12, 1 - 1e-12)
        dev = families.deviance(fam, y, mu)
        if not math.isfinite(dev):
            raise _Diverged("non-finite deviance")
        if abs(dev - dev_old) / (abs(dev) + 0.1) < IRLS_TOL:
            return theta, True
        dev_old = dev
    return theta, False


def _hat_diagonals(X: np.ndarray, w: np.ndarray) -> np.ndarray:
    wx = X * w[:, None]
    info = X.T @ wx
    try:
        chol = cho_factor(info)
        sol = cho_solve(chol, wx.T)
    except np.linalg.LinAlgError:
        sol = np.linalg.pinv(info) @ wx.T
    return np.einsum("ij,ji->i", X, sol)


def _firth(design: DesignMatrix):
    """Firth-penalized logistic fit: maximizes ll + 0.5*logdet(X'WX)."""
    X, y = design.predictors, design.response
    theta = np.zeros(X.shape[1])

    def penalized(th):
        eta = X @ th
        mu = families.mean("binomial", eta)
        w = families.irls_weights("binomial", mu)
        sign, logdet = np.linalg.slogdet(X.T @ (X * w[:, None]))
        if sign <= 0:
            return -np.inf, mu, w
        ll = float(np.sum(families.loglik_terms("binomial", y, eta)))
        return ll + 0.5 * logdet, mu, w

    f_old, mu, w = penalized(theta)
    for _ in range(IRLS_MAX_ITER):
        wx = X * w[:, None]
        info = X.T @ wx
        try:
            chol = cho_factor(info)
        except np.linalg.LinAlgError:
            raise _Diverged("singular information matrix in Firth fit")
        h = np.einsum("ij,ji->i", X, cho_solve(chol, wx.T))
        score = X.T @ (y - mu + h * (0.5 - mu))
        step = cho_solve(chol, score)
        # step halving keeps the penalized log-likelihood monotone
        scale = 1.0
        for _ in range(30):
            cand = theta + scale * step
            f_new, mu_new, w_new = penalized(cand)
            if f_new >= f_old - 1e-12:
                break
            scale /= 2.0
        else:
            return theta, False
        theta, mu, w = cand, mu_new, w_new
        if not np.all(np.isfinite(theta)):
            raise _Diverged("non-finite Firth estimates")
        moved = abs(f_new - f_old) / (abs(f_new) + 0.1)
        f_old = f_new
        if moved < IRLS_TOL and np.max(np.abs(scale * step)) < 1e-6:
            return theta, True
    return theta, False


def _mle_loglik(design: DesignMatrix, theta: np.ndarray) -> tuple[float, float | None]:
    """(log-likelihood, log_precision) at the MLE; gaussian profiles sigma^2."""
    eta = design.predictors @ theta
    if design.family == "gaussian":
        rss = float(np.sum((design.response - eta) ** 2))
        n = design.n_obs
        sigma2 = max(rss / n, 1e-300)
        tau = 1.0 / sigma2
        ll = float(np.sum(families.loglik_terms("gaussian", design.response, eta, tau)))
        return ll, float(np.log(tau))
    ll = float(np.sum(families.loglik_terms(design.family, design.response, eta)))
    return ll, None


def _neg_hessian_loglik(design: DesignMatrix, theta: np.ndarray,
                        log_precision: float | None) -> np.ndarray:
    """Observed information of the log-likelihood at theta (coefficients only)."""
    X = design.predictors
    eta = X @ theta
    if design.family == "gaussian":
        tau = math.exp(log_precision) if log_precision is not None else 1.0
        return tau * (X.T @ X)
    mu = families.mean(design.family, eta)
    w = families.irls_weights(design.family, mu)
    return X.T @ (X * w[:, None])


def _fit_mle_once(design: DesignMatrix) -> tuple[np.ndarray, bool, bool]:
    """One MLE attempt: (theta, used_firth, converged).  Raises _Diverged."""
    fam = design.family
    if fam == "gaussian":
        if np.linalg.matrix_rank(design.predictors) < design.width:
            raise _Diverged("rank-deficient design")
        theta, *_ = np.linalg.lstsq(design.predictors, design.response, rcond=None)
        if not np.all(np.isfinite(theta)):
            raise _Diverged("non-finite least-squares solution")
        return theta, False, True
    if fam == "binomial":
        try:
            theta, converged = _irls(design)
            if converged:
                return theta, False, True
        except _Diverged:
            pass
        theta, converged = _firth(design)  # may raise _Diverged
        if not np.all(np.isfinite(theta)):
            raise _Diverged("non-finite estimates after Firth")
        return theta, True, converged
    theta, converged = _irls(design)
    if not converged:
        raise _Diverged("IRLS did not converge")
    return theta, False, True


def _prune_order(design: DesignMatrix, fit_fn) -> tuple[DesignMatrix, list[str]]:
    """Drop predictors until ``fit_fn`` succeeds.

    Each round removes the predictor whose removal costs the least
    log-likelihood (ties drop the lexicographically last name).
    """
    dropped: list[str] = []
    work = design
    while work.width > 1:
        best_label, best_ll = None, -np.inf
        for label in sorted(work.labels[1:]):
            sub = work.drop(label)
            try:
                theta, _, _ = fit_fn(sub)
                ll, _ = _mle_loglik(sub, theta)
            except (FitError, np.linalg.LinAlgError):
                ll = -np.inf
            if not math.isfinite(ll):
                ll = -np.inf
            if ll >= best_ll:
                best_label, best_ll = label, ll
        work = work.drop(best_label)
        dropped.append(best_label)
        try:
            fit_fn(work)
            return work, dropped
        except (FitError, np.linalg.LinAlgError):
            continue
    return work, dropped


def _fit_mle(design: DesignMatrix) -> FitResult:
    dropped: list[str] = []
    work = design
    try:
        theta, used_firth, converged = _fit_mle_once(work)
    except (_Diverged, np.linalg.LinAlgError):
        work, dropped = _prune_order(design, _fit_mle_once)
        theta, used_firth, converged = _fit_mle_once(work)
    ll, log_prec = _mle_loglik(work, theta)
    if dropped and work.width == 1 and not math.isfinite(ll):
        raise AllPredictorsDropped(
            f"node {design.child!r}: every predictor was removed and the "
            "intercept-only fallback is still non-finite"
        )
    neg_h = _neg_hessian_loglik(work, theta, log_prec)
    return FitResult(
        labels=work.labels,
        coefficients=theta,
        family=work.family,
        method="mle",
        n_obs=work.n_obs,
        log_likelihood=ll,
        neg_hessian=neg_h,
        gaussian_log_precision=log_prec,
        dropped_predictors=tuple(dropped),
        used_firth=used_firth,
        converged=converged,
    )


# --------------------------------------------------------------------------
# bayes: Newton to the posterior mode
# --------------------------------------------------------------------------


def _posterior_grad_hess(design: DesignMatrix, params: np.ndarray, priors: PriorSpec):
    """Gradient and Hessian of the log joint in the optimized parameters."""
    X, y = design.predictors, design.response
    p = X.shape[1]
    v = priors.coef_variance
    fam = design.family
    if fam == "gaussian" and priors.fixed_precision is None:
        beta, lam = params[:p], params[p]
        tau = math.exp(lam)
        r = y - X @ beta
        a, b = priors.precision_shape, priors.precision_rate
        grad = np.empty(p + 1)
        grad[:p] = tau * (X.T @ r) - (beta - priors.coef_mean) / v
        grad[p] = 0.5 * len(y) - 0.5 * tau * float(r @ r) + a - b * tau
        hess = np.empty((p + 1, p + 1))
        hess[:p, :p] = -tau * (X.T @ X) - np.eye(p) / v
        cross = tau * (X.T @ r)
        hess[:p, p] = cross
        hess[p, :p] = cross
        hess[p, p] = -0.5 * tau * float(r @ r) - b * tau
        return grad, hess
    if fam == "gaussian":
        tau = priors.fixed_precision
        r = y - X @ params
        grad = tau * (X.T @ r) - (params - priors.coef_mean) / v
        hess = -tau * (X.T @ X) - np.eye(p) / v
        return grad, hess
    eta = X @ params
    mu = families.mean(fam, eta)
    w = families.irls_weights(fam, mu)
    grad = X.T @ (y - mu) - (params - priors.coef_mean) / v
    hess = -(X.T @ (X * w[:, None])) - np.eye(p) / v
    return grad, hess


def _newton_mode(design: DesignMatrix, priors: PriorSpec):
    """Newton ascent with step halving to the posterior mode."""
    X, y = design.predictors, design.response
    p = X.shape[1]
    fam = design.family
    with_precision = fam == "gaussian" and priors.fixed_precision is None

    params = np.zeros(p + (1 if with_precision else 0))
    mean_y = float(np.mean(y))
    if fam == "binomial":
        params[0] = families.link(fam, min(max(mean_y, 1e-3), 1 - 1e-3))
    elif fam == "poisson":
        params[0] = math.log(max(mean_y, 1e-8))
    else:
        ridge = X.T @ X + np.eye(p) / priors.coef_variance
        params[:p] = np.linalg.solve(ridge, X.T @ y)
        if with_precision:
            rss = float(np.sum((y - X @ params[:p]) ** 2))
            params[p] = math.log(len(y) / max(rss, 1e-12))

    def objective(q):
        if with_precision:
            return log_joint(design, q[:p], priors, float(q[p]))
        return log_joint(design, q, priors)

    f_old = objective(params)
    converged = False
    for _ in range(NEWTON_MAX_ITER):
        grad, hess = _posterior_grad_hess(design, params, priors)
        if np.max(np.abs(grad)) < NEWTON_GRAD_TOL:
            converged = True
            break
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        scale = 1.0
        for _ in range(40):
            cand = params + scale * step
            with np.errstate(over="ignore"):
                f_new = objective(cand)
            if math.isfinite(f_new) and f_new >= f_old - 1e-12:
                break
            scale /= 2.0
        else:
            break
        if not np.all(np.isfinite(cand)):
            break
        moved = np.max(np.abs(scale * step))
        params, f_old = cand, f_new
        if moved < 1e-10:
            converged = True
            break
    grad, hess = _posterior_grad_hess(design, params, priors)
    if np.max(np.abs(grad)) < 1e-4:
        converged = True
    return params, -hess, converged


def _fit_bayes(design: DesignMatrix, priors: PriorSpec) -> FitResult:
    params, neg_h, converged = _newton_mode(design, priors)
    p = design.width
    fam = design.family
    if fam == "gaussian" and priors.fixed_precision is None:
        theta, lam = params[:p], float(params[p])
    elif fam == "gaussian":
        theta, lam = params, float(np.log(priors.fixed_precision))
    else:
        theta, lam = params, None
    eta = design.predictors @ theta
    tau = math.exp(lam) if lam is not None else None
    ll = float(np.sum(families.loglik_terms(fam, design.response, eta, tau)))
    fit = FitResult(
        labels=design.labels,
        coefficients=theta,
        family=fam,
        method="bayes",
        n_obs=design.n_obs,
        log_likelihood=ll,
        neg_hessian=neg_h,
        gaussian_log_precision=lam if fam == "gaussian" else None,
        converged=converged,
    )
    return replace(fit, mlik=laplace_marginal_likelihood(fit, design, priors))


# --------------------------------------------------------------------------
# public operations
# --------------------------------------------------------------------------


def fit_node(
    design: DesignMatrix,
    family: str | None = None,
    method: str = "bayes",
    priors: PriorSpec | None = None,
) -> FitResult:
    """Fit one node's regression by the requested method.

    ``family`` defaults to the family recorded on the design.  The returned
    FitResult carries the Laplace marginal likelihood (bayes) or the
    log-likelihood ready for :func:`frequentist_scores` (mle).
    """
    if design.n_obs < 1:
        raise NoObservations(f"node {design.child!r} has no observations")
    if not (np.all(np.isfinite(design.predictors))
            and np.all(np.isfinite(design.response))):
        raise NonFiniteData(f"node {design.child!r} design contains non-finite values")
    family = families.check_family(family or design.family)
    if family != design.family:
        design = DesignMatrix(
            response=design.response,
            predictors=design.predictors,
            labels=design.labels,
            child=design.child,
            family=family,
        )
    # overflow/underflow is detected explicitly via finiteness checks
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if method == "mle":
            return _fit_mle(design)
        if method == "bayes":
            return _fit_bayes(design, priors or PriorSpec())
    raise ValueError(f"unknown method {method!r}; expected 'bayes' or 'mle'")


def fit_dag(
    ds: Dataset,
    dag: Dag,
    method: str = "bayes",
    priors: PriorSpec | None = None,
) -> dict[str, FitResult]:
    """Fit every node of a DAG against its parents; keyed by node name."""
    if dag.nodes != ds.names:
        raise FitError("DAG node set differs from dataset columns")
    return {
        node: fit_node(build_design(ds, node, dag.parents(node)), method=method,
                       priors=priors)
        for node in dag.nodes
    }


def _spd_logdet(matrix: np.ndarray) -> float:
    try:
        chol = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise NonPositiveDefiniteHessian(
            "negative Hessian is not positive definite at the reported mode"
        )
    return float(2.0 * np.sum(np.log(np.diag(chol))))


def laplace_marginal_likelihood(
    fit: FitResult, design: DesignMatrix, priors: PriorSpec
) -> float:
    """Laplace approximation of the log evidence at the posterior mode.

    log m = log joint(mode) + (d/2) log 2pi - 0.5 logdet(negative Hessian),
    with d counting every optimized parameter (the gaussian log-precision
    included).
    """
    if fit.method != "bayes":
        raise FitError("laplace_marginal_likelihood needs a bayes-mode fit")
    d = fit.n_params if priors.fixed_precision is None else len(fit.coefficients)
    joint = log_joint(
        design,
        fit.coefficients,
        priors,
        fit.gaussian_log_precision
        if (fit.family == "gaussian" and priors.fixed_precision is None)
        else None,
    )
    logdet = _spd_logdet(fit.neg_hessian)
    return joint + 0.5 * d * np.log(2.0 * np.pi) - 0.5 * logdet


@dataclass(frozen=True)
class FrequentistScores:
    loglik: float
    aic: float
    bic: float
    mdl: float


def frequentist_scores(
    fit: FitResult, n_obs: int, n_candidate_parents: int
) -> FrequentistScores:
    """Larger-is-better frequentist scores for an MLE fit.

    ``k`` counts every estimated parameter (variance included for gaussian
    nodes).  The MDL adds to BIC a structure-encoding penalty of
    ``log C(n_candidate_parents, k - 1)``, the cost of naming which
    predictors enter; the binomial index is clamped to the valid range.
    """
    if fit.method != "mle":
        raise FitError("frequentist_scores needs an mle fit")
    k = len(fit.coefficients) + (1 if fit.family == "gaussian" else 0)
    ll = fit.log_likelihood
    aic = ll - k
    bic = ll - 0.5 * k * math.log(n_obs)
    pick = min(max(k - 1, 0), n_candidate_parents)
    log_choose = float(
        gammaln(n_candidate_parents + 1) - gammaln(pick + 1)
        - gammaln(n_candidate_parents - pick + 1)
    )
    return FrequentistScores(loglik=ll, aic=aic, bic=bic, mdl=bic - log_choose)


@dataclass(frozen=True)
class ParamDensity:
    """Marginal posterior density of one parameter on a finite grid."""

    label: str
    grid: np.ndarray
    density: np.ndarray
    probabilities: np.ndarray
    area: float
    mode: float
    sd: float


def marginal_densities(
    fit: FitResult,
    design: DesignMatrix,
    priors: PriorSpec,
    n_grid: int = 1000,
    range_sd: float = 6.0,
) -> list[ParamDensity]:
    """Gaussian Laplace marginals for every parameter of a bayes fit.

    Each parameter gets a grid of ``n_grid`` points over mode +/- range_sd
    posterior standard deviations.  The reported ``area`` is the raw
    trapezoid integral (a diagnostic that should sit within 1 +/- 0.01 for an
    adequate range); ``probabilities`` renormalize the grid for categorical
    sampling.  Raises RangeTooNarrow when the boundary density exceeds 1e-3
    of the peak.
    """
    if fit.method != "bayes":
        raise FitError("marginal_densities needs a bayes-mode fit")
    cov = np.linalg.inv(fit.neg_hessian)
    modes = list(fit.coefficients)
    labels = list(fit.labels)
    if fit.family == "gaussian" and priors.fixed_precision is None:
        modes.append(fit.gaussian_log_precision)
        labels.append("log_precision")
    out = []
    for k, (label, mode) in enumerate(zip(labels, modes)):
        sd = math.sqrt(max(cov[k, k], 1e-300))
        grid = np.linspace(mode - range_sd * sd, mode + range_sd * sd, n_grid)
        density = np.exp(-0.5 * ((grid - mode) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
        peak = float(density.max())
        if max(density[0], density[-1]) > 1e-3 * peak:
            raise RangeTooNarrow(
                f"density of {label!r} has not vanished at +/-{range_sd} sd; widen the range"
            )
        area = float(np.trapezoid(density, grid))
        out.append(
            ParamDensity(
                label=label,
                grid=grid,
                density=density,
                probabilities=density / density.sum(),
                area=area,
                mode=float(mode),
                sd=sd,
            )
        )
    return out


def score_contribution(
    fit: FitResult, design: DesignMatrix
) -> tuple[np.ndarray, np.ndarray]:
    """Per-observation log-likelihood terms and hat-matrix diagonals.

    The terms sum to the fit's log-likelihood; the diagonals come from the
    weighted projection matrix at the fitted mean, each within [0, 1] and
    summing to the number of retained predictors (intercept included).
    """
    X = design.predictors
    eta = X @ fit.coefficients
    if fit.family == "gaussian":
        tau = fit.precision if fit.precision is not None else 1.0
        terms = families.loglik_terms("gaussian", design.response, eta, tau)
        w = np.ones(design.n_obs)
    else:
        terms = families.loglik_terms(fit.family, design.response, eta)
        mu = families.mean(fit.family, eta)
        w = families.irls_weights(fit.family, mu)
    hat = _hat_diagonals(X, w)
    return np.asarray(terms), np.clip(hat, 0.0, 1.0)
