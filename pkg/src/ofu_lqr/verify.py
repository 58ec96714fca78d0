"""Monte Carlo checks of the probabilistic guarantees at desk scale.

Every check returns a :class:`BoundReport`.  For probability statements the
verdict is ``pass`` iff the empirical failure rate is at most the nominal
failure mass plus three binomial standard errors.  The regret-scaling check
is an order-of-growth test; its report counts violated conditions instead.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from math import sqrt

import numpy as np
from scipy.special import kolmogorov, ndtr

from ._validation import check_positive_int, check_probability
from .confidence import ParameterRegion
from .exceptions import DomainError
from .identify import (
    fit_closed_loop,
    noise_bound,
    prediction_radius,
    sample_size,
    state_bound,
    weighted_error,
)
from .lqmodel import DynamicsParameter, jordan_constant, spectral_radius
from .ofu import run_algorithm1
from .riccati import clt_variance, solve_dare, stationary_series
from .simulate import Policy, propagate, run_policy

logger = logging.getLogger(__name__)

CLAIMS = ("noise_bound_L4", "covariance_floor_T1", "prediction_C1", "clt_L2", "regret_scaling_T2")
CLAIM_FLAGS = {"L4": "noise_bound_L4", "T1": "covariance_floor_T1", "C1": "prediction_C1",
               "L2": "clt_L2", "T2": "regret_scaling_T2"}
SLOPE_WINDOW = (0.35, 0.70)
RATIO_SLACK = 0.20
VARIANCE_TOLERANCE = 0.15
KS_LEVEL = 0.01
_TRIAL_CHUNK = 256


@dataclass
class BoundReport:
    """Failure count against a nominal failure mass.

    ``sampled=False`` marks reports whose "trials" are a fixed list of checks
    rather than Monte Carlo draws; there is no sampling slack then, so every
    check must hold.
    """

    claim: str
    trials: int
    failures: int
    nominal_failure_mass: float
    empirical_rate: float = field(init=False)
    standard_error: float = field(init=False)
    verdict: str = field(init=False)
    metadata: dict = field(default_factory=dict)
    sampled: bool = True

    def __post_init__(self):
        if self.claim not in CLAIMS:
            raise DomainError(f"unknown claim {self.claim!r}")
        self.empirical_rate = self.failures / self.trials
        if self.sampled:
            self.standard_error = sqrt(self.empirical_rate * (1.0 - self.empirical_rate) / self.trials)
        else:
            self.standard_error = 0.0
        ok = self.empirical_rate <= self.nominal_failure_mass + 3.0 * self.standard_error
        self.verdict = "pass" if ok else "fail"

    @property
    def passed(self):
        return self.verdict == "pass"

    def to_dict(self):
        return asdict(self)


def _trials(trials):
    return check_positive_int(trials, "trials")


def _closed_loop(theta0, L):
    L = np.atleast_2d(np.asarray(L, dtype=float))
    D = theta0.closed_loop(L)
    if spectral_radius(D) >= 1.0:
        raise DomainError("closed loop A + B L is not stable")
    return D


def _x0(x0, p):
    return np.zeros(p) if x0 is None else np.asarray(x0, dtype=float).reshape(p)


def simulate_batch(D, noise, n, trials, rng, x0=None):
    """States ``x(0..n)`` of ``trials`` independent runs, shape ``(trials, n + 1, p)``."""
    p = D.shape[0]
    X = np.empty((trials, n + 1, p))
    X[:, 0] = _x0(x0, p)
    W = noise.sample(rng, size=(trials, n))
    Dt = D.T
    for t in range(n):
        X[:, t + 1] = X[:, t] @ Dt + W[:, t]
    return X


def verify_noise_bound(noise, n, p, delta, trials, seed=0):
    """Frequency with which ``max_t ||w(t)||_inf`` over ``n`` draws exceeds ``b_n(delta)``."""
    trials = _trials(trials)
    n = check_positive_int(n, "n")
    delta = check_probability(delta)
    if noise.p != p:
        raise DomainError("noise dimension does not match p")
    bound = noise_bound(noise, n, p, delta)
    rng = np.random.default_rng(seed)
    failures = 0
    for s in range(0, trials, _TRIAL_CHUNK):
        k = min(_TRIAL_CHUNK, trials - s)
        w = noise.sample(rng, size=(k, n))
        failures += int(np.sum(np.max(np.abs(w), axis=(1, 2)) > bound))
    return BoundReport("noise_bound_L4", trials, failures, delta, metadata=dict(
        noise=noise.kind, shape=noise.shape, n=n, p=p, delta=delta, b_n=bound, seed=seed))


def verify_covariance_floor(theta0, L, noise, epsilon, delta, trials, seed=0, x0=None, scale=1.0):
    """Frequency of ``lambda_min(V_{n+1}) < n (lambda_min(C) - epsilon)`` at ``n = N(epsilon, delta)``."""
    trials = _trials(trials)
    delta = check_probability(delta)
    D = _closed_loop(theta0, L)
    p = theta0.p
    x0 = _x0(x0, p)
    zeta = jordan_constant(D).zeta
    D_norm = float(np.linalg.norm(D, 2))
    n = sample_size(epsilon, delta, noise, zeta, D_norm, float(np.max(np.abs(x0))), p, scale)
    lam_C = float(np.linalg.eigvalsh(noise.C)[0])
    floor = n * (lam_C - epsilon)
    rng = np.random.default_rng(seed)
    failures = 0
    lam_V = []
    for s in range(0, trials, _TRIAL_CHUNK):
        k = min(_TRIAL_CHUNK, trials - s)
        X = simulate_batch(D, noise, n, k, rng, x0)
        V = np.einsum("kti,ktj->kij", X, X)
        lam = np.linalg.eigvalsh(V)[:, 0]
        lam_V.extend(lam.tolist())
        failures += int(np.sum(lam < floor))
    return BoundReport("covariance_floor_T1", trials, failures, 2.0 * delta, metadata=dict(
        n=n, p=p, delta=delta, epsilon=epsilon, scale=scale, zeta=zeta, D_norm=D_norm,
        floor=floor, min_lambda=float(np.min(lam_V)), seed=seed))


def verify_series_limit(theta0, L, noise, n=10**5, seed=0, x0=None):
    """Relative gap ``||n^{-1} V_n - sum_i D^i C D'^i||_2 / ||sum||_2`` for one run."""
    D = _closed_loop(theta0, L)
    n = check_positive_int(n, "n")
    rng = np.random.default_rng(seed)
    x0 = _x0(x0, theta0.p)
    X = np.vstack([x0[None], propagate(D, x0, noise.sample(rng, size=n))])
    V = X[:n].T @ X[:n]
    limit = stationary_series(D, noise.C, start=0)
    return float(np.linalg.norm(V / n - limit, 2) / np.linalg.norm(limit, 2))


def verify_prediction(theta0, L, noise, delta, trials, seed=0, x0=None, scale=1.0, radius_multiplier=1.0):
    """Frequency of ``||V_n^{1/2}(D_hat - D)'||^2 > r(n, delta)`` at ``n = N(lambda_min(C)/2, delta) + 1``.

    ``radius_multiplier`` below 1 deliberately shrinks the radius; the
    harness must then report a failure.
    """
    trials = _trials(trials)
    delta = check_probability(delta)
    if not radius_multiplier > 0:
        raise DomainError("radius_multiplier must be positive")
    D = _closed_loop(theta0, L)
    p = theta0.p
    x0 = _x0(x0, p)
    x_inf = float(np.max(np.abs(x0)))
    lam_C = float(np.linalg.eigvalsh(noise.C)[0])
    zeta = jordan_constant(D).zeta
    D_norm = float(np.linalg.norm(D, 2))
    n = sample_size(lam_C / 2.0, delta, noise, zeta, D_norm, x_inf, p, scale) + 1
    b = noise_bound(noise, n, p, delta)
    beta = state_bound(zeta, x_inf, b)
    radius = radius_multiplier * prediction_radius(n, p, lam_C, beta, b, delta)
    rng = np.random.default_rng(seed)
    errors = []
    for s in range(0, trials, _TRIAL_CHUNK):
        k = min(_TRIAL_CHUNK, trials - s)
        X = simulate_batch(D, noise, n, k, rng, x0)
        for run in X:
            errors.append(weighted_error(fit_closed_loop(run), D))
    errors = np.asarray(errors)
    failures = int(np.sum(errors > radius))
    return BoundReport("prediction_C1", trials, failures, 3.0 * delta, metadata=dict(
        n=n, p=p, delta=delta, scale=scale, zeta=zeta, radius=radius,
        radius_multiplier=radius_multiplier, max_error=float(errors.max()), seed=seed))


def ks_statistic(x, cdf):
    """Kolmogorov-Smirnov sup-distance between the sample ``x`` and ``cdf``."""
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    F = cdf(x)
    upper = np.max(np.arange(1, n + 1) / n - F)
    lower = np.max(F - np.arange(0, n) / n)
    return float(max(upper, lower))


def ks_pvalue(stat, n):
    """Asymptotic p-value with the small-sample correction of Stephens."""
    rn = sqrt(n)
    return float(kolmogorov((rn + 0.12 + 0.11 / rn) * stat))


def normal_cdf(scale):
    return lambda x: ndtr(np.asarray(x) / scale)


def _policy_regrets(theta0, cost, noise, T, seeds, policy, threads=1):
    def one(s):
        return run_policy(theta0, cost, noise, policy, T, seed=int(s)).regret_at(T)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return np.array(list(ex.map(one, seeds)))
    return np.array([one(s) for s in seeds])


def verify_clt(theta0, cost, noise, T, replications, seed=0, threads=1):
    """Three checks on ``T^{-1/2} R(T)`` under the optimal policy.

    (a) the mean is within three standard errors of zero; (b) the sample
    variance is within 15% plus three combined standard errors of the
    formula value; (c) the KS p-value against ``N(0, s^2)`` exceeds 0.01.
    ``failures`` counts failed checks out of three; nominal mass is zero.
    """
    replications = check_positive_int(replications, "replications")
    if replications < 30:
        raise DomainError("the CLT check needs at least 30 replications")
    T = check_positive_int(T, "T")
    sigma = clt_variance(theta0, cost, noise, rng=np.random.default_rng(seed))
    seeds = seed + np.arange(replications)
    Z = _policy_regrets(theta0, cost, noise, T, seeds, Policy.optimal(), threads) / sqrt(T)
    m = replications
    mean = float(Z.mean())
    var = float(Z.var(ddof=1))
    se_mean = sqrt(var / m)
    # standard error of the sample variance from the fourth central moment
    m4 = float(np.mean((Z - mean) ** 4))
    se_var = sqrt(max(m4 - var**2 * (m - 3) / (m - 1), 0.0) / m)
    se_comb = sqrt(se_var**2 + sigma.standard_error**2)
    stat = ks_statistic(Z, normal_cdf(sqrt(var)))
    pval = ks_pvalue(stat, m)
    checks = {
        "mean": abs(mean) <= 3.0 * se_mean,
        "variance": abs(var - sigma.value) <= VARIANCE_TOLERANCE * sigma.value + 3.0 * se_comb,
        "normality": pval > KS_LEVEL,
    }
    failures = sum(not ok for ok in checks.values())
    return BoundReport("clt_L2", 3, failures, 0.0, metadata=dict(
        T=T, replications=m, seed=seed, mean=mean, se_mean=se_mean, variance=var,
        se_variance=se_var, sigma2=sigma.value, sigma2_se=sigma.standard_error,
        ks_statistic=stat, ks_pvalue=pval, checks=checks), sampled=False)


def loglog_slope(T_grid, values):
    return float(np.polyfit(np.log(T_grid), np.log(values), 1)[0])


def normalized_ratio(T_grid, values):
    T = np.asarray(T_grid, dtype=float)
    return np.asarray(values, dtype=float) / (np.sqrt(T) * (1.0 + np.log(T)) ** 2)


def scaling_checks(T_grid, values, window=SLOPE_WINDOW, slack=RATIO_SLACK):
    """Slope in ``window`` and normalized ratio nonincreasing (within ``slack``)
    over the top half of the grid.  Nonpositive values fail both checks."""
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0):
        return dict(slope=float("nan"), ratio=normalized_ratio(T_grid, values).tolist(),
                    slope_ok=False, ratio_ok=False)
    slope = loglog_slope(T_grid, values)
    ratio = normalized_ratio(T_grid, values)
    top = ratio[len(ratio) // 2:]
    monotone = bool(np.all(top[1:] <= top[:-1] * (1.0 + slack)))
    return dict(slope=slope, ratio=ratio.tolist(), slope_ok=window[0] <= slope <= window[1],
                ratio_ok=monotone)


@dataclass(frozen=True)
class RegretConfig:
    """Everything ``verify_regret_scaling`` needs to run the adaptive controller."""

    theta0: DynamicsParameter
    cost: object
    noise: object
    theta0_set: ParameterRegion
    delta: float = 0.1
    gamma: float = 2.0
    scale: float = 1.0
    radius_scale: float = 1.0
    samples: int = 50
    name: str = ""


def regret_paths(config, T_grid, seeds, policy="ofu", threads=1):
    """Regret at every grid point for each seed, shape ``(len(seeds), len(T_grid))``.

    One run to ``max(T_grid)`` per seed: the controller never looks ahead and
    the noise stream is horizon-independent, so the prefix of a long run is
    the run at the shorter horizon.
    """
    T_grid = [int(t) for t in T_grid]
    T_max = max(T_grid)

    def one(s):
        if policy == "optimal":
            rec = run_policy(config.theta0, config.cost, config.noise, Policy.optimal(), T_max, seed=int(s))
        else:
            rec = run_algorithm1(config.theta0, config.cost, config.noise, config.theta0_set,
                                 config.delta, config.gamma, T_max, scale=config.scale,
                                 radius_scale=config.radius_scale, samples=config.samples,
                                 seed=int(s)).record
        return [rec.regret_at(t) for t in T_grid]

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(one, seeds))
    else:
        rows = [one(s) for s in seeds]
    return np.array(rows)


def verify_regret_scaling(config, T_grid, seeds, policy="ofu", threads=1, statistic=None):
    """Order-of-growth check of the regret.

    ``statistic="excess"`` (the default for ``policy="ofu"``) is the median
    over seeds of ``R(T) - R*(T)``, where ``R*`` is the regret of the optimal
    policy driven by the same noise path.  ``R*(T)`` has bounded mean but
    fluctuates like ``sqrt(T)``; subtracting it leaves the cost of learning.
    ``statistic="abs"`` is the median of ``|R(T)|`` (the default for
    ``policy="optimal"``, the sanity anchor).  ``failures`` counts which of
    the two conditions (slope window, normalized-ratio trend) is violated.
    """
    T_grid = sorted(int(t) for t in T_grid)
    if len(T_grid) < 3:
        raise DomainError("the slope fit needs at least 3 horizons")
    seeds = [int(s) for s in (range(seeds) if np.isscalar(seeds) else seeds)]
    if not seeds:
        raise DomainError("need at least one seed")
    if statistic is None:
        statistic = "abs" if policy == "optimal" else "excess"
    if statistic not in ("abs", "excess"):
        raise DomainError(f"unknown statistic {statistic!r}")
    R = regret_paths(config, T_grid, seeds, policy, threads)
    meta = dict(median_abs_regret=np.median(np.abs(R), axis=0).tolist(),
                median_regret=np.median(R, axis=0).tolist())
    if statistic == "excess":
        excess = R - regret_paths(config, T_grid, seeds, "optimal", threads)
        meta["median_excess_regret"] = np.median(excess, axis=0).tolist()
        stat = np.median(excess, axis=0)
    else:
        stat = np.median(np.abs(R), axis=0)
    checks = scaling_checks(T_grid, stat)
    failures = int(not checks["slope_ok"]) + int(not checks["ratio_ok"])
    return BoundReport("regret_scaling_T2", 2, failures, 0.0, metadata=dict(
        system=config.name, policy=policy, statistic=statistic, T_grid=T_grid, seeds=len(seeds),
        seed_base=seeds[0], delta=config.delta, gamma=config.gamma, scale=config.scale,
        radius_scale=config.radius_scale, samples=config.samples, **meta, **checks), sampled=False)


@dataclass
class OptimismReport:
    runs: int
    passing_runs: int
    optimism_violations: int
    stability_violations: int
    covered_episodes: int
    metadata: dict = field(default_factory=dict)

    @property
    def fraction(self):
        return self.passing_runs / self.runs

    def passed(self, level=0.95):
        return self.fraction >= level


def verify_optimism(config, T, seeds, threads=1, atol=1e-12):
    """Optimism and stabilization diagnostics with the true parameter injected.

    A run passes when ``J*(theta_i) <= J*(theta0)`` at every episode whose
    region still contained ``theta0``, and ``theta0 [I; L(theta_i)]`` is
    stable at every episode after the first one whose ellipsoid covered
    ``theta0``.
    """
    J0 = float(np.trace(solve_dare(config.theta0, config.cost).K @ config.noise.C))
    seeds = [int(s) for s in (range(seeds) if np.isscalar(seeds) else seeds)]

    def one(s):
        run = run_algorithm1(config.theta0, config.cost, config.noise, config.theta0_set,
                             config.delta, config.gamma, T, scale=config.scale,
                             radius_scale=config.radius_scale, samples=config.samples,
                             seed=s, inject_truth=True)
        opt = stab = covered = 0
        first_cover = None
        for e in run.episodes:
            if e.theta0_feasible:
                covered += 1
                if e.J_star > J0 + atol * max(1.0, abs(J0)):
                    opt += 1
            if first_cover is not None and e.index > first_cover and e.true_closed_loop_radius >= 1.0:
                stab += 1
            if first_cover is None and e.theta0_in_gamma:
                first_cover = e.index
        return opt, stab, covered

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            rows = list(ex.map(one, seeds))
    else:
        rows = [one(s) for s in seeds]
    rows = np.array(rows, dtype=int).reshape(-1, 3)
    good = int(np.sum((rows[:, 0] == 0) & (rows[:, 1] == 0)))
    return OptimismReport(runs=len(seeds), passing_runs=good,
                          optimism_violations=int(rows[:, 0].sum()),
                          stability_violations=int(rows[:, 1].sum()),
                          covered_episodes=int(rows[:, 2].sum()),
                          metadata=dict(system=config.name, T=T, J_star=J0))
