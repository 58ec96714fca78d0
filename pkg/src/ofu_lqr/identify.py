"""Closed-loop least squares and the explicit concentration quantities.

``b_n(delta) = (b2 log(b1 n p / delta))^{1/alpha}`` bounds the noise,
``beta_n(delta) = zeta (||x(0)||_inf + b_n)`` bounds the state, and
``r(n, delta) = 16 n p / ((n-1) lambda_min(C)) beta^2 b^2 log(2p/delta)``
bounds the weighted prediction error of the least-squares estimate once
``n`` exceeds the persistent-excitation threshold ``N(eps, delta)``.
"""

import warnings
from dataclasses import dataclass
from math import log

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, check_probability, symmetrize
from .exceptions import DomainError, RankDeficiencyError, SampleSizeOverflow

SAMPLE_SIZE_CAP = 10**12


@dataclass(frozen=True, eq=False)
class LeastSquaresFit:
    D_hat: np.ndarray
    V: np.ndarray
    n: int
    lambda_min_V: float
    cross: np.ndarray = None
    ridge: float = 0.0


@dataclass(frozen=True)
class ConcentrationConstants:
    b_n_delta: float
    beta_n_delta: float
    zeta: float
    r_n_delta: float
    N_threshold: int


def _as_states(states):
    X = np.asarray(states, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or len(X) < 2:
        raise DomainError("need at least two states to fit a transition matrix")
    if not np.all(np.isfinite(X)):
        raise DomainError("states contain non-finite entries")
    return X


def accumulate_covariance(V, x):
    """Incremental update ``V + x x'``."""
    x = np.asarray(x, dtype=float)
    return V + np.outer(x, x)


def fit_closed_loop(states, ridge=0.0):
    """Least-squares transition estimate from the sequence ``x(0..n)``.

    ``D_hat = (sum x(t+1) x(t)') (V + ridge I)^{-1}`` with
    ``V = sum_{t<n} x(t) x(t)'``.  Several independent runs can be fitted
    jointly by passing a list of state arrays.
    """
    if isinstance(states, (list, tuple)) and states and np.ndim(states[0]) == 2:
        segments = [_as_states(s) for s in states]
    else:
        segments = [_as_states(states)]
    p = segments[0].shape[1]
    V = np.zeros((p, p))
    S = np.zeros((p, p))
    n = 0
    for X in segments:
        V += X[:-1].T @ X[:-1]
        S += X[1:].T @ X[:-1]
        n += len(X) - 1
    V = symmetrize(V)
    lam = float(np.linalg.eigvalsh(V)[0])
    ridge = float(ridge)
    if ridge < 0:
        raise DomainError("ridge must be nonnegative")
    scale = max(1.0, float(np.linalg.norm(V, 2)))
    if ridge == 0 and lam <= 1e-12 * scale:
        raise RankDeficiencyError(
            f"empirical covariance is singular (lambda_min(V) = {lam:.3g}); pass ridge > 0",
            lambda_min=lam,
        )
    D_hat = np.linalg.solve(V + ridge * np.eye(p), S.T).T
    return LeastSquaresFit(D_hat=D_hat, V=V, n=n, lambda_min_V=max(lam, 0.0), cross=S, ridge=ridge)


class ClosedLoopLeastSquares(RegressorMixin, BaseEstimator):
    """Estimator wrapper around :func:`fit_closed_loop`.

    ``fit`` takes a state trajectory of shape ``(n + 1, p)``; ``predict``
    maps states to one-step predictions ``D_hat x``.
    """

    def __init__(self, ridge=0.0):
        self.ridge = ridge

    def fit(self, X, y=None):
        """Fit on a trajectory ``X``; if ``y`` is given, regress ``y[t]`` on ``X[t]``."""
        if y is None:
            fit = fit_closed_loop(X, ridge=self.ridge)
        else:
            X = np.asarray(X, dtype=float)
            y = np.asarray(y, dtype=float)
            if X.shape != y.shape:
                raise DomainError("X and y must have the same shape")
            p = X.shape[1]
            V = symmetrize(X.T @ X)
            S = y.T @ X
            lam = float(np.linalg.eigvalsh(V)[0])
            if self.ridge == 0 and lam <= 1e-12 * max(1.0, np.linalg.norm(V, 2)):
                raise RankDeficiencyError("regressor covariance is singular", lambda_min=lam)
            fit = LeastSquaresFit(
                D_hat=np.linalg.solve(V + self.ridge * np.eye(p), S.T).T,
                V=V, n=len(X), lambda_min_V=max(lam, 0.0), cross=S, ridge=self.ridge,
            )
        self.fit_ = fit
        self.coef_ = fit.D_hat
        self.n_features_in_ = fit.D_hat.shape[0]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.coef_.T

    def prediction_error(self, D):
        """``||V^{1/2} (D_hat - D)'||_2^2`` against a reference matrix ``D``."""
        check_is_fitted(self, "coef_")
        return weighted_error(self.fit_, D)


def weighted_error(fit, D):
    E = fit.D_hat - np.asarray(D, dtype=float)
    return float(np.linalg.eigvalsh(symmetrize(E @ fit.V @ E.T))[-1])


def noise_bound(noise, n, p, delta, return_flag=False):
    """``b_n(delta)``; bounded noise returns its support radius.

    When ``b1 n p / delta <= 1`` the logarithm is nonpositive; the bound is
    then 0 and a warning is issued (the flag is returned on request).
    """
    delta = check_probability(delta)
    tail = noise.tail_triple()
    if tail.bounded:
        return (tail.support, False) if return_flag else tail.support
    arg = tail.b1 * n * p / delta
    if arg <= 1.0:
        warnings.warn("b1 n p / delta <= 1: noise bound degenerates to 0", RuntimeWarning, stacklevel=2)
        return (0.0, True) if return_flag else 0.0
    value = (tail.b2 * log(arg)) ** (1.0 / tail.alpha)
    return (value, False) if return_flag else value


def state_bound(zeta, x0_infnorm, b_n):
    return float(zeta) * (float(x0_infnorm) + float(b_n))


def prediction_radius(n, p, lambda_min_C, beta, b_n, delta):
    if n < 2:
        raise DomainError("prediction radius needs n >= 2")
    delta = check_probability(delta)
    return 16.0 * n * p / ((n - 1) * lambda_min_C) * beta**2 * b_n**2 * log(2.0 * p / delta)


def threshold_terms(n, epsilon, delta, noise, zeta, D_norm, x0_infnorm, p, scale=1.0):
    """Left and right sides of the three sample-size inequalities at ``n``.

    Returns a list of ``(lhs, rhs)`` pairs; an inequality holds iff
    ``lhs >= rhs``.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        b = noise_bound(noise, n, p, delta)
    beta = state_bound(zeta, x0_infnorm, b)
    lam_max = float(np.linalg.eigvalsh(noise.C)[-1])
    lg = log(4.0 * p / delta)
    inf = float("inf")
    lhs1 = n / b**2 if b > 0 else inf
    lhs2 = n / (beta**2 * b**2) if beta * b > 0 else inf
    lhs3 = n / beta**2 if beta > 0 else inf
    rhs1 = scale * (18.0 * lam_max + 2.0 * epsilon) / epsilon**2 * p * lg
    rhs2 = scale * 288.0 / epsilon**2 * p * D_norm**2 * lg
    rhs3 = scale * 6.0 / epsilon * (D_norm**2 + 1.0)
    return [(lhs1, rhs1), (lhs2, rhs2), (lhs3, rhs3)]


def _holds(n, *args):
    return all(lhs >= rhs for lhs, rhs in threshold_terms(n, *args))


def sample_size(epsilon, delta, noise, zeta, D_norm, x0_infnorm, p, scale=1.0, cap=SAMPLE_SIZE_CAP):
    """Smallest ``n`` at which all three persistent-excitation inequalities hold.

    Doubling locates a satisfying ``n``; bisection then finds the first one
    below it, assuming the left-hand sides are nondecreasing past the
    previous failing doubling point.  ``scale`` multiplies every right-hand
    side (1 is the faithful mode).
    """
    delta = check_probability(delta)
    if epsilon <= 0 or scale <= 0:
        raise DomainError("epsilon and scale must be positive")
    args = (epsilon, delta, noise, zeta, D_norm, x0_infnorm, p, scale)
    if _holds(1, *args):
        return 1
    lo, hi = 1, 2
    while not _holds(hi, *args):
        lo, hi = hi, hi * 2
        if hi > cap:
            terms = threshold_terms(cap, *args)
            binding = [i + 10 for i, (lhs, rhs) in enumerate(terms) if lhs < rhs]
            raise SampleSizeOverflow(
                f"no n <= {cap:.0e} satisfies the thresholds; binding inequalities {binding}",
                binding=binding,
            )
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _holds(mid, *args):
            hi = mid
        else:
            lo = mid
    return hi


def concentration_constants(noise, n, delta, zeta, x0_infnorm, D_norm, p, scale=1.0):
    """Bundle ``b_n``, ``beta_n``, ``r(n, delta)`` and ``N(lambda_min(C)/2, delta)``."""
    lam_min = float(np.linalg.eigvalsh(noise.C)[0])
    b = noise_bound(noise, n, p, delta)
    beta = state_bound(zeta, x0_infnorm, b)
    r = prediction_radius(n, p, lam_min, beta, b, delta)
    N = sample_size(lam_min / 2.0, delta, noise, zeta, D_norm, x0_infnorm, p, scale)
    return ConcentrationConstants(b_n_delta=b, beta_n_delta=beta, zeta=float(zeta), r_n_delta=r, N_threshold=N)


def lambda_min(C):
    return float(np.linalg.eigvalsh(check_matrix(C, "C", square=True))[0])

