"""Confidence ellipsoids over dynamics parameters and their intersection.

A parameter ``theta`` (``p x q``) belongs to the ellipsoid built at the end
of an episode when

    || V^{1/2} (theta L_ext - D_hat)' ||_2^2 <= radius,

where ``L_ext = [I; L]`` stacks the identity over the episode's feedback.
The feasible region is an operator-norm ball around a known stabilizing
parameter intersected with every ellipsoid collected so far.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_matrix, check_positive_int, symmetrize
from .exceptions import DimensionError, DomainError, EmptyRegionError
from .lqmodel import DynamicsParameter

BOUNDARY_RTOL = 1e-12


def psd_sqrt(V):
    """Symmetric square root, clipping eigenvalues in ``[-1e-12 scale, 0)``."""
    V = symmetrize(np.asarray(V, dtype=float))
    w, U = np.linalg.eigh(V)
    scale = max(1.0, float(np.max(np.abs(w))))
    if w[0] < -1e-12 * scale:
        raise DomainError(f"weight matrix is not positive semidefinite (eigenvalue {w[0]:.3g})")
    w = np.clip(w, 0.0, None)
    return (U * np.sqrt(w)) @ U.T


@dataclass(frozen=True, eq=False)
class ConfidenceEllipsoid:
    center: np.ndarray
    weight: np.ndarray
    feedback_ext: np.ndarray
    radius: float
    episode: int = 0
    weight_sqrt: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        center = check_matrix(self.center, "center", square=True)
        p = center.shape[0]
        weight = symmetrize(check_matrix(self.weight, "weight", shape=(p, p)))
        ext = check_matrix(self.feedback_ext, "feedback_ext", shape=(None, p))
        if ext.shape[0] < p or not np.array_equal(ext[:p], np.eye(p)):
            raise DimensionError("feedback_ext must stack the identity over the gain")
        if not self.radius >= 0:
            raise DomainError("radius must be nonnegative")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "feedback_ext", ext)
        object.__setattr__(self, "weight_sqrt", psd_sqrt(weight))

    @classmethod
    def from_gain(cls, center, weight, L, radius, episode=0):
        L = np.atleast_2d(np.asarray(L, dtype=float))
        return cls(center, weight, np.vstack([np.eye(L.shape[1]), L]), radius, episode)

    @property
    def p(self):
        return self.center.shape[0]

    @property
    def q(self):
        return self.feedback_ext.shape[0]

    def deviation(self, thetas):
        """``||V^{1/2}(theta L_ext - D_hat)'||_2^2`` for a stack ``(n, p, q)``."""
        E = thetas @ self.feedback_ext - self.center
        M = self.weight_sqrt @ np.swapaxes(E, -1, -2)
        return np.linalg.eigvalsh(M @ np.swapaxes(M, -1, -2))[..., -1]

    def contains_batch(self, thetas):
        return self.deviation(thetas) <= self.radius * (1.0 + BOUNDARY_RTOL) + BOUNDARY_RTOL

    def sample_slice(self, rng, n, ball_center, ball_radius):
        """Parameters whose implied closed loop lies inside the ellipsoid.

        ``theta = D Lext^+ + Z (I - Lext Lext^+)`` with ``D`` drawn inside the
        ellipsoid and ``Z`` drawn from the ball; then ``theta Lext = D``.
        """
        p, q = self.p, self.q
        pinv = np.linalg.pinv(self.feedback_ext)
        proj = np.eye(q) - self.feedback_ext @ pinv
        G = _frobenius_ball(rng, n, (p, p), np.sqrt(self.radius))
        w, U = np.linalg.eigh(self.weight)
        inv_sqrt = (U / np.sqrt(np.clip(w, 1e-300, None))) @ U.T
        D = self.center + np.swapaxes(inv_sqrt @ G, -1, -2)
        Z = ball_center + _frobenius_ball(rng, n, (p, q), ball_radius)
        return D @ pinv + Z @ proj


def _frobenius_ball(rng, n, shape, radius):
    """Uniform draws from the Frobenius ball ``{X : ||X||_F <= radius}``."""
    d = int(np.prod(shape))
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    rad = radius * rng.random(n) ** (1.0 / d)
    return (g * rad[:, None]).reshape((n,) + tuple(shape))


@dataclass(frozen=True, eq=False)
class ParameterRegion:
    """Operator-norm ball intersected with a sequence of ellipsoids."""

    ball_center: DynamicsParameter
    ball_radius: float
    ellipsoids: tuple = ()

    def __post_init__(self):
        if not self.ball_radius >= 0:
            raise DomainError("ball radius must be nonnegative")
        object.__setattr__(self, "ellipsoids", tuple(self.ellipsoids))

    @property
    def p(self):
        return self.ball_center.p

    @property
    def q(self):
        return self.ball_center.q

    def with_ellipsoid(self, ellipsoid):
        if ellipsoid.p != self.p or ellipsoid.q != self.q:
            raise DimensionError("ellipsoid dimensions do not match the region")
        return ParameterRegion(self.ball_center, self.ball_radius, self.ellipsoids + (ellipsoid,))

    def contains_batch(self, thetas):
        thetas = np.asarray(thetas, dtype=float)
        if thetas.shape[1:] != (self.p, self.q):
            raise DimensionError(f"parameters must have shape (p, q) = {(self.p, self.q)}")
        diff = thetas - self.ball_center.matrix
        ok = np.linalg.norm(diff, 2, axis=(1, 2)) <= self.ball_radius * (1.0 + BOUNDARY_RTOL) + BOUNDARY_RTOL
        for e in self.ellipsoids:
            if not ok.any():
                break
            idx = np.flatnonzero(ok)
            ok[idx] = e.contains_batch(thetas[idx])
        return ok

    def contains(self, theta):
        return contains(self, theta)

    def whitened_frame(self):
        """Center, inverse square-root metric and radius of the combined proposal.

        Summing the Frobenius relaxations of every constraint gives one
        quadratic form ``||(theta - M) H^{1/2}||_F^2 + c`` on the rows of
        ``theta``.  The returned radius covers the points where that form is
        at most ``k + 1`` for ``k`` ellipsoids; since the Frobenius norm
        dominates the operator norm, this is a proposal, not a cover.
        """
        c0 = self.ball_center.matrix
        w0 = 1.0 / max(self.ball_radius, 1e-12) ** 2
        H = w0 * np.eye(self.q)
        G = w0 * c0
        const = w0 * float(np.sum(c0**2))
        for e in self.ellipsoids:
            scale = 1.0 / max(e.radius, 1e-300)
            LV = e.feedback_ext @ e.weight
            H += scale * LV @ e.feedback_ext.T
            G += scale * e.center @ LV.T
            const += scale * float(np.trace(e.center @ e.weight @ e.center.T))
        H = symmetrize(H)
        w, U = np.linalg.eigh(H)
        w = np.clip(w, 1e-300, None)
        mean = np.linalg.solve(H, G.T).T
        resid = const - float(np.trace(mean @ H @ mean.T))
        radius = np.sqrt(max(len(self.ellipsoids) + 1.0 - resid, 1.0))
        return mean, (U / np.sqrt(w)) @ U.T, radius


def contains(region, theta):
    """Membership in the ball and in every ellipsoid (boundaries inclusive)."""
    if theta.p != region.p or theta.q != region.q:
        raise DimensionError("parameter dimensions do not match the region")
    return bool(region.contains_batch(theta.matrix[None])[0])


@dataclass(frozen=True, eq=False)
class FeasibleSample:
    thetas: list
    acceptance_rate: float
    proposals: int

    def __len__(self):
        return len(self.thetas)

    def __iter__(self):
        return iter(self.thetas)

    def __getitem__(self, i):
        return self.thetas[i]


def sample_feasible(region, count, rng, max_rejections=100_000, proposal="ball", batch=None):
    """Rejection sampling of up to ``count`` members of ``region``.

    ``proposal="ball"`` draws uniformly from the Frobenius ball inscribed in
    the operator-norm ball.  ``proposal="mixed"`` splits draws between that
    ball, the slice of the most recent ellipsoid (see
    :meth:`ConfidenceEllipsoid.sample_slice`) and a uniform draw in the
    combined whitened frame (see :meth:`ParameterRegion.whitened_frame`),
    which keeps acceptance workable once the ellipsoids are thin.  Accepted
    points are then not uniform over the region.  Raises ``EmptyRegionError`` if no
    proposal is accepted before ``max_rejections`` rejections.
    """
    count = check_positive_int(count, "count")
    rng = np.random.default_rng(rng)
    p, q = region.p, region.q
    center = region.ball_center.matrix
    batch = batch or max(4 * count, 256)
    if proposal not in ("ball", "mixed"):
        raise DomainError(f"unknown proposal {proposal!r}")
    if proposal == "mixed" and region.ellipsoids:
        mean, white_inv, white_radius = region.whitened_frame()
    accepted = []
    proposals = 0
    rejections = 0
    hits = 0
    while len(accepted) < count and rejections < max_rejections:
        if proposal == "mixed" and region.ellipsoids:
            n_ball = batch // 4
            n_slice = batch // 4
            n_white = batch - n_ball - n_slice
            cand = np.concatenate([
                center + _frobenius_ball(rng, n_ball, (p, q), region.ball_radius),
                region.ellipsoids[-1].sample_slice(rng, n_slice, center, region.ball_radius),
                mean + _frobenius_ball(rng, n_white, (p, q), white_radius) @ white_inv,
            ])
        else:
            cand = center + _frobenius_ball(rng, batch, (p, q), region.ball_radius)
        ok = region.contains_batch(cand)
        proposals += batch
        hits += int(ok.sum())
        rejections += int(batch - ok.sum())
        accepted.extend(cand[ok][: count - len(accepted)])
    if not accepted:
        raise EmptyRegionError(
            f"no feasible parameter after {proposals} proposals; the region may be empty "
            "or the radius/delta misconfigured",
            acceptance_rate=0.0,
        )
    thetas = [DynamicsParameter.from_matrix(t, p) for t in accepted]
    return FeasibleSample(thetas=thetas, acceptance_rate=hits / proposals,
                          proposals=proposals)
