"""Trajectory engine for ``x(t+1) = A x(t) + B u(t) + w(t+1)``.

Cost and regret conventions: ``c_t = x(t)'Q x(t) + u(t)'R u(t)`` for
``t = 1..T`` and ``R(t) = sum_{s<=t} c_s - t J*(theta0)``.  The record keeps
the applied inputs ``u(0..T-1)``; the action ``u(T)`` is evaluated for the
last cost but never applied.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from ._validation import check_matrix, check_vector
from .exceptions import BlowUpError, NotStabilizableError, NumericalError
from .lqmodel import DynamicsParameter
from .noise import NoiseStream
from .riccati import solve_dare

BLOWUP_FACTOR = 1e9
CE_RIDGE = 1e-6
_CHUNK = 2048


@dataclass(frozen=True, eq=False)
class RunRecord:
    states: np.ndarray
    inputs: np.ndarray
    costs: np.ndarray
    regret: np.ndarray
    episodes: np.ndarray
    seed: int
    J_star: float
    policy: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def T(self):
        return len(self.costs)

    @property
    def cum_cost(self):
        return np.cumsum(self.costs)

    def regret_at(self, t):
        """``R(t)``; ``R(0) = 0``."""
        return 0.0 if t == 0 else float(self.regret[t - 1])


@dataclass(frozen=True, eq=False)
class Policy:
    """A control law for ``run_policy``.

    ``kind`` is one of ``fixed`` (requires ``L``), ``optimal``,
    ``certainty_equivalence`` (``L`` is the initial stabilizer) or ``ofu``
    (handled by :mod:`ofu_lqr.ofu`).
    """

    kind: str
    L: np.ndarray = None
    description: str = ""
    update_every: int = 0

    @classmethod
    def fixed(cls, L):
        return cls("fixed", np.atleast_2d(np.asarray(L, dtype=float)), "fixed feedback")

    @classmethod
    def optimal(cls):
        return cls("optimal", None, "optimal feedback L(theta0)")

    @classmethod
    def certainty_equivalence(cls, initial_gain, update_every=0):
        return cls(
            "certainty_equivalence",
            np.atleast_2d(np.asarray(initial_gain, dtype=float)),
            "certainty equivalence with ridge least squares",
            update_every,
        )


def step(theta0, x, u, w):
    x = check_vector(x, "x", theta0.p)
    u = check_vector(u, "u", theta0.r)
    w = check_vector(w, "w", theta0.p)
    return theta0.A @ x + theta0.B @ u + w


def seed_streams(seed):
    """Independent generators for noise and for the controller's own randomness."""
    noise_ss, policy_ss = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(noise_ss), np.random.default_rng(policy_ss)


def _guard(X, limit, offset):
    with np.errstate(over="ignore", invalid="ignore"):
        norms = np.linalg.norm(X, axis=1)
    bad = np.flatnonzero(~(norms <= limit))
    if bad.size:
        k = int(bad[0])
        raise BlowUpError(
            f"state norm {norms[k]:.3g} exceeded blow-up guard {limit:.3g} at t={offset + k}",
            step=offset + k,
            norm=float(norms[k]),
        )


def propagate(D, x0, W, limit=np.inf, offset=0):
    """States ``x(1..n)`` of ``x(t+1) = D x(t) + w(t+1)`` for noise rows ``W``.

    Checks the blow-up guard chunk by chunk so divergence is caught before
    overflow.
    """
    n, p = W.shape
    X = np.empty((n, p))
    x = np.array(x0, dtype=float)
    if p == 1:
        d = float(D[0, 0])
        for s in range(0, n, _CHUNK):
            seg = W[s:s + _CHUNK, 0]
            out, _ = lfilter([1.0], [1.0, -d], seg, zi=[d * x[0]])
            X[s:s + _CHUNK, 0] = out
            _guard(X[s:s + _CHUNK], limit, offset + s + 1)
            x = X[s + len(seg) - 1]
        return X
    for s in range(0, n, _CHUNK):
        stop = min(n, s + _CHUNK)
        for t in range(s, stop):
            x = D @ x + W[t]
            X[t] = x
        _guard(X[s:stop], limit, offset + s + 1)
    return X


def stage_costs(X, U, cost):
    return np.einsum("ti,ij,tj->t", X, cost.Q, X) + np.einsum("ti,ij,tj->t", U, cost.R, U)


def finish_record(states, inputs, gains_for_cost, cost, J_star, episodes, seed, policy, meta=None):
    """Assemble a record from states ``x(0..T)`` and the gain in force at each
    ``t = 1..T`` (used to evaluate ``u(t)`` for the stage cost)."""
    X = states[1:]
    U_cost = np.einsum("tij,tj->ti", gains_for_cost, X) if len(X) else np.zeros((0, inputs.shape[1]))
    costs = stage_costs(X, U_cost, cost) if len(X) else np.zeros(0)
    T = len(costs)
    regret = np.cumsum(costs) - J_star * np.arange(1, T + 1)
    return RunRecord(
        states=states,
        inputs=inputs,
        costs=costs,
        regret=regret,
        episodes=np.asarray(episodes, dtype=int),
        seed=int(seed),
        J_star=float(J_star),
        policy=policy,
        meta=dict(meta or {}),
    )


def _run_linear(theta0, cost, L, noise_stream, T, x0, limit, J_star, seed, policy_name):
    D = theta0.closed_loop(L)
    W = noise_stream.take(0, T)
    X = propagate(D, x0, W, limit)
    states = np.vstack([x0[None], X])
    inputs = states[:-1] @ L.T
    gains = np.broadcast_to(L, (T,) + L.shape)
    return finish_record(states, inputs, gains, cost, J_star, np.zeros(T, dtype=int), seed, policy_name)


def ce_estimate(states, inputs, ridge=CE_RIDGE):
    """Ridge least-squares estimate of ``[A, B]`` from ``x(0..t)``, ``u(0..t-1)``."""
    X = np.asarray(states, dtype=float)
    U = np.asarray(inputs, dtype=float)
    n = len(U)
    p = X.shape[1]
    Z = np.hstack([X[:n], U])
    gram = Z.T @ Z + ridge * np.eye(Z.shape[1])
    theta_t = np.linalg.solve(gram, Z.T @ X[1:n + 1])
    return DynamicsParameter.from_matrix(theta_t.T, p)


def certainty_equivalence_policy(history, cost, initial_gain, previous_gain=None, ridge=CE_RIDGE):
    """Certainty-equivalence action ``u(t) = L(theta_hat) x(t)``.

    ``history`` is a pair ``(states x(0..t), inputs u(0..t-1))``.  With fewer
    than ``q`` transitions the initial stabilizer is used; if the estimate is
    not stabilizable the previous gain is kept.  Returns ``(u, gain)``.
    """
    states, inputs = history
    states = np.atleast_2d(np.asarray(states, dtype=float))
    x = states[-1]
    initial_gain = np.atleast_2d(np.asarray(initial_gain, dtype=float))
    fallback = initial_gain if previous_gain is None else previous_gain
    inputs = np.asarray(inputs, dtype=float).reshape(-1, initial_gain.shape[0])
    q = states.shape[1] + initial_gain.shape[0]
    if len(inputs) < q:
        return fallback @ x, fallback
    theta_hat = ce_estimate(states, inputs, ridge)
    try:
        gain = solve_dare(theta_hat, cost).L
    except (NotStabilizableError, NumericalError):
        gain = fallback
    return gain @ x, gain


def _run_ce(theta0, cost, policy, noise_stream, T, x0, limit, J_star, seed):
    p, r = theta0.p, theta0.r
    states = np.zeros((T + 1, p))
    states[0] = x0
    inputs = np.zeros((T, r))
    gains = np.zeros((T, r, p))
    gain = policy.L
    W = noise_stream.take(0, T)
    next_update = theta0.q
    for t in range(T):
        if t >= next_update:
            _, gain = certainty_equivalence_policy((states[:t + 1], inputs[:t]), cost, policy.L, gain)
            next_update = t + policy.update_every if policy.update_every > 0 else 2 * t
        inputs[t] = gain @ states[t]
        states[t + 1] = theta0.A @ states[t] + theta0.B @ inputs[t] + W[t]
        if not np.linalg.norm(states[t + 1]) <= limit:
            raise BlowUpError(f"state exceeded blow-up guard at t={t + 1}", step=t + 1,
                              norm=float(np.linalg.norm(states[t + 1])))
        gains[t] = gain
    return finish_record(states, inputs, gains, cost, J_star, np.zeros(T, dtype=int), seed,
                         "certainty_equivalence")


def run_policy(theta0, cost, noise, policy, T, x0=None, seed=0, zero_noise=False):
    """Simulate ``T`` steps of ``policy`` on the true system ``theta0``.

    Regret is measured against ``J*(theta0) = tr(K(theta0) C)``.  The run is
    deterministic given ``seed``; a state norm above
    ``1e9 (1 + ||x(0)||)`` aborts with ``BlowUpError``.
    """
    cost.check_conforms(theta0)
    T = int(T)
    x0 = np.zeros(theta0.p) if x0 is None else check_vector(x0, "x0", theta0.p)
    sol = solve_dare(theta0, cost)
    J_star = float(np.trace(sol.K @ noise.C))
    noise_rng, _ = seed_streams(seed)
    stream = NoiseStream(noise, noise_rng, zero=zero_noise)
    limit = BLOWUP_FACTOR * (1.0 + np.linalg.norm(x0))
    if policy.kind == "optimal":
        return _run_linear(theta0, cost, sol.L, stream, T, x0, limit, J_star, seed, "optimal")
    if policy.kind == "fixed":
        L = check_matrix(policy.L, "L", shape=(theta0.r, theta0.p))
        return _run_linear(theta0, cost, L, stream, T, x0, limit, J_star, seed, "fixed")
    if policy.kind == "certainty_equivalence":
        return _run_ce(theta0, cost, policy, stream, T, x0, limit, J_star, seed)
    raise ValueError(f"run_policy cannot run policy kind {policy.kind!r}; use ofu.run_algorithm1")
