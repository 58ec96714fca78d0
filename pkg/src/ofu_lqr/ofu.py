"""Episodic optimism-based adaptive regulation.

Each episode ``i``:

1. pick the feasible parameter with the smallest optimal average cost
   ``J*(theta) = tr(K(theta) C)`` (approximately, over sampled candidates);
2. apply its optimal gain until ``ceil(tau_i)``, where
   ``tau_i = tau_{i-1} + gamma^{i/q} (N_i + 1)`` and ``N_i`` is the
   persistent-excitation threshold at ``(lambda_min(C)/2, delta/i^2)``;
3. fit the closed-loop matrix on that episode's data only and intersect the
   feasible region with the resulting confidence ellipsoid of radius
   ``r(n_i, delta/i^2)``.

The true closed-loop quantities that the thresholds need are unknown to the
controller: ``||D||_2`` is replaced by its maximum over feasible candidates
``theta`` of ``theta [I; L_i]``, and ``zeta`` by the value for the selected
model's own closed loop.
"""

import logging
from dataclasses import dataclass, field
from math import ceil

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_int, check_probability
from .confidence import ConfidenceEllipsoid, ParameterRegion, sample_feasible
from .exceptions import (
    DomainError,
    EmptyRegionError,
    InstabilityError,
    NotStabilizableError,
    RankDeficiencyError,
    SelectionFailure,
)
from .identify import fit_closed_loop, noise_bound, prediction_radius, sample_size, state_bound
from .lqmodel import DynamicsParameter, jordan_constant, spectral_radius
from .noise import NoiseStream
from .riccati import solve_dare, solve_dare_batch
from .simulate import BLOWUP_FACTOR, finish_record, propagate, seed_streams

logger = logging.getLogger(__name__)

SURROGATE_CANDIDATES = 10


def ceil_step(tau):
    """``ceil`` that forgives floating-point noise just above an integer."""
    return int(ceil(tau - 1e-9 * max(1.0, abs(tau))))


@dataclass(frozen=True)
class EpisodeSchedule:
    gamma: float
    q: int
    taus: tuple
    boundaries: tuple

    @property
    def n_episodes(self):
        return len(self.taus) - 1

    def completed_by(self, T):
        """Number of episodes with ``tau_i <= T``."""
        return sum(1 for tau in self.taus[1:] if tau <= T)

    def episode_of(self, t):
        """Index ``i`` of the episode containing step ``t``."""
        for i, b in enumerate(self.boundaries[1:], start=1):
            if t < b:
                return i
        return len(self.boundaries)


def next_tau(tau_prev, i, gamma, q, N_i):
    g = gamma ** (i / q)
    return tau_prev + g * N_i + g


def schedule(gamma, q, N_of_i, T):
    """Episode end-times ``tau_1, tau_2, ...`` up to the first one ``>= T``."""
    if not gamma > 1:
        raise DomainError("gamma must exceed 1")
    q = check_positive_int(q, "q")
    taus = [0.0]
    i = 0
    while taus[-1] < T:
        i += 1
        taus.append(next_tau(taus[-1], i, gamma, q, N_of_i(i)))
    return EpisodeSchedule(gamma=float(gamma), q=q, taus=tuple(taus),
                           boundaries=tuple(ceil_step(t) for t in taus))


def count_bound(T, gamma, q, tau_1):
    """Upper bound on the number of completed episodes by time ``T``."""
    return q / np.log(gamma) * np.log(T * (gamma ** (1.0 / q) - 1.0) / tau_1 + 1.0)


@dataclass(frozen=True, eq=False)
class Selection:
    theta: DynamicsParameter
    J_star: float
    gain: np.ndarray
    candidates: list
    values: np.ndarray
    acceptance_rate: float
    used_incumbent: bool = False


def ofu_select(region, cost, C, samples, rng, incumbent=None, tolerance=0.0, extra=(),
               max_rejections=200_000, proposal="mixed"):
    """Approximately most optimistic feasible parameter.

    Evaluates ``J*`` on the incumbent (if still feasible), any ``extra``
    candidates, and up to ``samples`` feasible draws, then returns the
    minimizer; ties go to the earliest candidate.  With ``tolerance > 0``
    the incumbent is kept whenever it is within ``tolerance`` of the best.
    Raises ``SelectionFailure`` when no stabilizable candidate exists.
    """
    samples = check_positive_int(samples, "samples")
    C = np.asarray(C, dtype=float)
    pool = []
    if incumbent is not None and region.contains(incumbent):
        pool.append(incumbent)
    pool.extend(t for t in extra if region.contains(t))
    acceptance = 0.0
    try:
        drawn = sample_feasible(region, samples, rng, max_rejections=max_rejections, proposal=proposal)
        pool.extend(drawn.thetas)
        acceptance = drawn.acceptance_rate
    except EmptyRegionError:
        pass
    if not pool:
        raise SelectionFailure("no feasible candidate parameters")
    A = np.stack([t.A for t in pool])
    B = np.stack([t.B for t in pool])
    sols = solve_dare_batch(A, B, cost.Q, cost.R)
    keep = [k for k, s in enumerate(sols) if not isinstance(s, Exception)]
    if not keep:
        raise SelectionFailure("no stabilizable candidate among the feasible draws")
    values = np.array([np.trace(sols[k].K @ C) for k in keep])
    best = int(np.argmin(values))
    used_incumbent = False
    if tolerance > 0 and incumbent is not None and keep[0] == 0 and pool[0] is incumbent:
        if values[0] <= values[best] + tolerance:
            best, used_incumbent = 0, True
    k = keep[best]
    return Selection(
        theta=pool[k],
        J_star=float(values[best]),
        gain=sols[k].L,
        candidates=[pool[j] for j in keep],
        values=values,
        acceptance_rate=acceptance,
        used_incumbent=used_incumbent or (incumbent is not None and pool[k] is incumbent),
    )


@dataclass(frozen=True, eq=False)
class EpisodeRecord:
    """Snapshot of the controller state for one episode."""

    index: int
    start: int
    end: int
    tau: float
    theta: DynamicsParameter
    gain: np.ndarray
    J_star: float
    N: int
    radius: float
    zeta: float
    D_norm: float
    acceptance_rate: float
    selection_failed: bool
    fit: object = None
    n_ellipsoids: int = 0
    theta0_feasible: bool = None
    theta0_in_gamma: bool = None
    true_closed_loop_radius: float = None


@dataclass(frozen=True, eq=False)
class OfuState:
    region: ParameterRegion
    current_theta: DynamicsParameter
    current_gain: np.ndarray
    episode_index: int
    fits: list
    delta: float


@dataclass(frozen=True, eq=False)
class OfuRun:
    record: object
    episodes: list
    state: OfuState
    settings: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.record, self.episodes))


def _surrogates(candidates, theta, gain, limit=SURROGATE_CANDIDATES):
    """Closed-loop stand-ins for the unknown true ``zeta`` and ``||D||_2``.

    ``zeta`` is taken from the selected model's own closed loop
    ``theta [I; L]`` (stable by construction of ``L``); ``||D||_2`` is the
    maximum over feasible candidates ``theta'`` of ``||theta' [I; L]||_2``.
    """
    ext = np.vstack([np.eye(theta.p), gain])
    zeta = jordan_constant(theta.matrix @ ext).zeta
    dnorm = float(np.linalg.norm(theta.matrix @ ext, 2))
    for cand in candidates[:limit]:
        dnorm = max(dnorm, float(np.linalg.norm(cand.matrix @ ext, 2)))
    return zeta, dnorm


def run_algorithm1(theta0, cost, noise, theta0_set, delta, gamma, T, scale=1.0, seed=0,
                   samples=100, radius_scale=1.0, inject_truth=False, x0=None,
                   max_rejections=200_000, tolerance=0.0):
    """Run the episodic OFU controller for ``T`` steps on the true system.

    ``theta0`` is used only to simulate the plant, to measure regret, and,
    when ``inject_truth`` is set, as an extra candidate while it is feasible
    (a diagnostic that makes optimism checkable).  ``scale`` shrinks the
    sample-size thresholds and ``radius_scale`` the confidence radii; both
    are 1 in the faithful mode.
    """
    cost.check_conforms(theta0)
    delta = check_probability(delta)
    if not gamma > 1:
        raise DomainError("gamma must exceed 1")
    T = int(T)
    p, q = theta0.p, theta0.q
    C = noise.C
    lam_min = float(np.linalg.eigvalsh(C)[0])
    x0 = np.zeros(p) if x0 is None else np.asarray(x0, dtype=float).reshape(p)
    J0 = float(np.trace(solve_dare(theta0, cost).K @ C))
    noise_rng, policy_rng = seed_streams(seed)
    stream = NoiseStream(noise, noise_rng)
    limit = BLOWUP_FACTOR * (1.0 + np.linalg.norm(x0))

    states = np.zeros((T + 1, p))
    states[0] = x0
    gains = np.zeros((T + 1, theta0.r, p))
    episode_of_step = np.zeros(T + 1, dtype=int)
    region = theta0_set
    incumbent = None
    incumbent_gain = None
    incumbent_J = None
    history = []
    fits = []
    tau_prev = 0.0
    start = 0
    i = 0
    while True:
        i += 1
        delta_i = delta / i**2
        feasible0 = bool(region.contains(theta0))
        extra = (theta0,) if inject_truth and feasible0 else ()
        failed = False
        try:
            sel = ofu_select(region, cost, C, samples, policy_rng, incumbent=incumbent, extra=extra,
                             max_rejections=max_rejections, tolerance=tolerance)
            theta_i, L_i, J_i, cands, acc = sel.theta, sel.gain, sel.J_star, sel.candidates, sel.acceptance_rate
        except SelectionFailure:
            failed = True
            if incumbent is None:
                center = theta0_set.ball_center
                try:
                    sol = solve_dare(center, cost)
                except NotStabilizableError as exc:
                    raise SelectionFailure("first selection failed and the ball center is not stabilizable") from exc
                incumbent, incumbent_gain, incumbent_J = center, sol.L, float(np.trace(sol.K @ C))
            theta_i, L_i, J_i, cands, acc = incumbent, incumbent_gain, incumbent_J, [], 0.0
            logger.info("episode %d: selection failed, keeping incumbent", i)
        incumbent, incumbent_gain, incumbent_J = theta_i, L_i, J_i

        if start >= T:
            gains[T] = L_i
            episode_of_step[T] = i
            break

        zeta_i, dnorm_i = _surrogates(cands, theta_i, L_i)
        x_start = states[start]
        x_inf = float(np.max(np.abs(x_start)))
        N_i = sample_size(lam_min / 2.0, delta_i, noise, zeta_i, dnorm_i, x_inf, p, scale)
        tau_i = next_tau(tau_prev, i, gamma, q, N_i)
        end = max(ceil_step(tau_i), start + 1)
        stop = min(end, T)

        D_true = theta0.closed_loop(L_i)
        W = stream.take(start, stop)
        states[start + 1:stop + 1] = propagate(D_true, x_start, W, limit, offset=start)
        gains[start:stop] = L_i
        episode_of_step[start:stop] = i

        fit = None
        radius = float("nan")
        in_gamma = None
        if end <= T:
            n_i = end - start
            try:
                fit = fit_closed_loop(states[start:end + 1])
            except RankDeficiencyError:
                logger.info("episode %d: singular empirical covariance, no ellipsoid added", i)
            if fit is not None and n_i >= 2:
                b = noise_bound(noise, n_i, p, delta_i)
                beta = state_bound(zeta_i, x_inf, b)
                radius = radius_scale * prediction_radius(n_i, p, lam_min, beta, b, delta_i)
                ellipsoid = ConfidenceEllipsoid.from_gain(fit.D_hat, fit.V, L_i, radius, episode=i)
                in_gamma = bool(ellipsoid.contains_batch(theta0.matrix[None])[0])
                region = region.with_ellipsoid(ellipsoid)
                fits.append(fit)

        history.append(EpisodeRecord(
            index=i, start=start, end=end, tau=tau_i, theta=theta_i, gain=L_i, J_star=J_i, N=N_i,
            radius=radius, zeta=zeta_i, D_norm=dnorm_i, acceptance_rate=acc, selection_failed=failed,
            fit=fit, n_ellipsoids=len(region.ellipsoids), theta0_feasible=feasible0,
            theta0_in_gamma=in_gamma, true_closed_loop_radius=spectral_radius(D_true),
        ))
        if end > T:
            gains[T] = L_i
            episode_of_step[T] = i
            break
        tau_prev = tau_i
        start = end

    inputs = np.einsum("tij,tj->ti", gains[:T], states[:T])
    settings = dict(delta=delta, gamma=gamma, scale=scale, radius_scale=radius_scale, samples=samples,
                    inject_truth=inject_truth, T=T)
    record = finish_record(states, inputs, gains[1:], cost, J0, episode_of_step[1:], seed, "ofu", meta=settings)
    state = OfuState(region=region, current_theta=incumbent, current_gain=incumbent_gain,
                     episode_index=i, fits=fits, delta=delta)
    return OfuRun(record=record, episodes=history, state=state, settings=settings)


class OFURegulator(BaseEstimator):
    """Estimator-style front end to :func:`run_algorithm1`.

    ``fit`` interacts with a simulated plant for ``T`` steps and stores the
    run; ``predict`` maps states to the inputs of the final gain.
    """

    def __init__(self, delta=0.1, gamma=2.0, scale=1.0, radius_scale=1.0, samples=100,
                 inject_truth=False, tolerance=0.0):
        self.delta = delta
        self.gamma = gamma
        self.scale = scale
        self.radius_scale = radius_scale
        self.samples = samples
        self.inject_truth = inject_truth
        self.tolerance = tolerance

    def fit(self, theta0, cost, noise, theta0_set, T, seed=0, x0=None):
        run = run_algorithm1(theta0, cost, noise, theta0_set, self.delta, self.gamma, T,
                             scale=self.scale, seed=seed, samples=self.samples,
                             radius_scale=self.radius_scale, inject_truth=self.inject_truth,
                             x0=x0, tolerance=self.tolerance)
        self.run_ = run
        self.record_ = run.record
        self.episodes_ = run.episodes
        self.theta_ = run.state.current_theta
        self.gain_ = run.state.current_gain
        self.region_ = run.state.region
        return self

    def predict(self, X):
        check_is_fitted(self, "gain_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.gain_.T

    def regret(self, t=None):
        check_is_fitted(self, "record_")
        return self.record_.regret_at(self.record_.T if t is None else t)
