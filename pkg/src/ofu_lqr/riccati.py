"""Discrete algebraic Riccati equation, optimal gains and average costs."""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from ._validation import check_matrix, check_positive_int, symmetrize
from .exceptions import DomainError, NotStabilizableError, NumericalError
from .lqmodel import DynamicsParameter, spectral_radius

MAX_ITER = 100_000
STOP_RTOL = 1e-12
DIVERGENCE_NORM = 1e12
SERIES_RTOL = 1e-14


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    K: np.ndarray
    L: np.ndarray
    D_closed: np.ndarray
    residual: float
    iterations: int = 0

    @property
    def J_star_factor(self):
        return self.K

    def average_cost(self, C):
        return float(np.trace(self.K @ C))


def _riccati_map(A, B, K, Q, R):
    """One value-iteration step on stacks of shape (n, p, p) / (n, p, r)."""
    At = np.swapaxes(A, -1, -2)
    Bt = np.swapaxes(B, -1, -2)
    KA = K @ A
    KB = K @ B
    G = Bt @ KB + R
    H = Bt @ KA
    try:
        F = np.linalg.solve(G, H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("B'KB + R is singular") from exc
    K_new = Q + At @ KA - (At @ KB) @ F
    return 0.5 * (K_new + np.swapaxes(K_new, -1, -2)), F


def _spec_norm(M):
    # symmetric stacks: spectral norm = max |eigenvalue|
    return np.max(np.abs(np.linalg.eigvalsh(M)), axis=-1)


def dare_residual(theta, cost, K):
    A, B = theta.A, theta.B
    G = B.T @ K @ B + cost.R
    rhs = cost.Q + A.T @ K @ A - A.T @ K @ B @ np.linalg.solve(G, B.T @ K @ A)
    return float(np.linalg.norm(K - rhs, 2))


def solve_dare_batch(A, B, Q, R, K0=None, max_iter=MAX_ITER):
    """Value iteration on a stack of systems sharing ``Q`` and ``R``.

    Returns a list whose entries are ``RiccatiSolution`` or the exception
    instance describing why that system failed.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    K = np.broadcast_to(Q if K0 is None else K0, A.shape).copy()
    active = np.arange(n)
    done = np.zeros(n, dtype=bool)
    failed = {}
    iters = np.zeros(n, dtype=int)
    for it in range(1, max_iter + 1):
        if active.size == 0:
            break
        K_new, _ = _riccati_map(A[active], B[active], K[active], Q, R)
        norm_old = _spec_norm(K[active])
        diff = _spec_norm(K_new - K[active])
        K[active] = K_new
        iters[active] = it
        bad = ~np.all(np.isfinite(K_new), axis=(1, 2)) | (_spec_norm(K_new) > DIVERGENCE_NORM)
        conv = (diff <= STOP_RTOL * (1.0 + norm_old)) & ~bad
        for idx in active[bad]:
            failed[idx] = NotStabilizableError(
                f"Riccati iteration diverged after {it} steps; (A, B) is not stabilizable")
        done[active[conv]] = True
        active = active[~(conv | bad)]
    for idx in active:
        failed[idx] = NotStabilizableError(
            f"Riccati iteration hit the cap of {max_iter} steps; (A, B) may not be stabilizable")

    out = []
    for i in range(n):
        if i in failed:
            out.append(failed[i])
            continue
        Ki = K[i]
        G = B[i].T @ Ki @ B[i] + R
        L = -np.linalg.solve(G, B[i].T @ Ki @ A[i]) + 0.0  # no negative zeros
        Dc = A[i] + B[i] @ L
        rho = spectral_radius(Dc)
        if rho >= 1.0:
            out.append(NotStabilizableError(f"closed loop of the Riccati gain is unstable (spectral radius {rho:.6g})"))
            continue
        _, F = _riccati_map(A[i:i + 1], B[i:i + 1], Ki[None], Q, R)
        K_next = Q + A[i].T @ Ki @ A[i] - A[i].T @ Ki @ B[i] @ F[0]
        residual = float(np.linalg.norm(Ki - K_next, 2))
        out.append(RiccatiSolution(K=Ki, L=L, D_closed=Dc, residual=residual, iterations=int(iters[i])))
    return out


def solve_dare(theta, cost, K0=None):
    """Stabilizing solution of the DARE by fixed-point iteration from ``K0 = Q``.

    Raises ``NotStabilizableError`` on divergence, on hitting the iteration
    cap, or when the resulting closed loop is not stable.
    """
    cost.check_conforms(theta)
    res = solve_dare_batch(theta.A[None], theta.B[None], cost.Q, cost.R, K0=K0)[0]
    if isinstance(res, Exception):
        raise res
    return res


def average_cost(theta, cost, C):
    C = check_matrix(C, "C", shape=(theta.p, theta.p))
    return float(np.trace(solve_dare(theta, cost).K @ C))


def policy_cost(theta, cost, L, C):
    """Average cost ``tr(C X)`` of the fixed feedback ``L``, where
    ``X = sum_n D'^n (Q + L'RL) D^n`` and ``D = A + B L``."""
    D = theta.closed_loop(L)
    if spectral_radius(D) >= 1.0:
        return float("inf")
    X = solve_discrete_lyapunov(D.T, cost.Q + L.T @ cost.R @ L)
    return float(np.trace(np.asarray(C) @ X))


def stationary_series(D, C, start=1):
    """``sum_{n >= start} D^n C D'^n``, summed until the increment is tiny."""
    D = np.asarray(D, dtype=float)
    term = np.asarray(C, dtype=float).copy()
    for _ in range(start):
        term = D @ term @ D.T
    total = term.copy()
    for _ in range(10**7):
        term = D @ term @ D.T
        total += term
        if np.linalg.norm(term, 2) < SERIES_RTOL * max(np.linalg.norm(total, 2), 1e-300):
            break
        if not np.any(term):
            break
    return symmetrize(total)


@dataclass(frozen=True)
class CLTVariance:
    """Asymptotic regret variance split into its two contributions."""

    value: float
    series_term: float
    quadratic_term: float
    standard_error: float = 0.0

    def __float__(self):
        return self.value


def clt_variance(theta, cost, noise, rng=None, draws=10**6):
    """Limit variance of ``T^{-1/2} R(T)`` under the optimal policy.

    ``sigma^2 = 4 tr(K C K sum_{n>=1} D^n C D'^n) + Var[w'Kw]`` for i.i.d.
    noise.  The second term comes from the noise model (closed form from the
    base-law kurtosis, or Monte Carlo when the model asks for it).
    """
    sol = solve_dare(theta, cost)
    C = noise.C
    if C.shape != (theta.p, theta.p):
        raise DomainError("noise dimension does not match the system")
    S = stationary_series(sol.D_closed, C, start=1)
    series_term = 4.0 * float(np.trace(sol.K @ C @ sol.K @ S))
    quad, se = noise.quadratic_form_variance(sol.K, rng=rng, draws=draws)
    value = series_term + quad
    return CLTVariance(value=value, series_term=series_term, quadratic_term=quad, standard_error=se)


def lipschitz_probe(theta, cost, radius, samples, rng=None, return_skipped=False):
    """Empirical local Lipschitz constant of ``theta -> K(theta)``.

    Perturbations are drawn uniformly in direction and rescaled to operator
    norm ``radius``.  Perturbed systems that are not stabilizable are skipped.
    """
    samples = check_positive_int(samples, "samples")
    radius = float(radius)
    if radius <= 0:
        raise DomainError("radius must be positive")
    rng = np.random.default_rng(rng)
    K0 = solve_dare(theta, cost).K
    base = theta.matrix
    best = 0.0
    skipped = 0
    for _ in range(samples):
        delta = rng.standard_normal(base.shape)
        delta *= radius / np.linalg.norm(delta, 2)
        other = DynamicsParameter.from_matrix(base + delta, theta.p)
        try:
            K1 = solve_dare(other, cost).K
        except (NotStabilizableError, NumericalError):
            skipped += 1
            continue
        best = max(best, float(np.linalg.norm(K0 - K1, 2) / radius))
    if skipped == samples:
        raise DomainError("every perturbed parameter was non-stabilizable")
    return (best, skipped) if return_skipped else best
