"""Core domain types: dynamics parameters, costs, and spectral analysis.

The Jordan constant ``zeta`` bounds the transient amplification of a stable
matrix ``D``.  Writing ``D = P^{-1} Lam P`` with ``Lam`` block diagonal,

    zeta(D) = ||P^{-1}||_{inf->2} * ||P||_inf * sum_{t>=0} zeta_t(Lam)

where ``zeta_t`` bounds ``||Lam^t||_inf``.  The decomposition used here is
built from the complex Schur form rather than a literal Jordan form: the
triangular factor is block-diagonalized across eigenvalue clusters and each
cluster block is rescaled so that its strictly upper part has unit
infinity-norm at most.  Entrywise domination then gives
``||Lam_c^t||_inf <= t^{k-1} rho^t sum_{j<k} rho^{-j}/j!`` for every
``rho >= max|lambda|`` in the cluster, where ``k`` is the nilpotency index of
the cluster's off-diagonal pattern.  The result is a valid upper-bound
certificate; it depends on the decomposition, as any such constant must.
"""

from dataclasses import dataclass, field
from itertools import product
from math import lgamma

import numpy as np
from scipy.linalg import schur

from ._validation import check_matrix, symmetrize
from .exceptions import DimensionError, DomainError, InstabilityError

CLUSTER_RTOL = 1e-7
ZETA_GRID_POINTS = 200
ZETA_TAIL_RTOL = 1e-12
ZETA_MAX_TERMS = 10**8


@dataclass(frozen=True, eq=False)
class DynamicsParameter:
    """``theta = [A, B]`` with ``A`` of shape (p, p) and ``B`` of shape (p, r)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = check_matrix(self.A, "A", square=True)
        B = check_matrix(self.B, "B", shape=(A.shape[0], None))
        A.setflags(write=False)
        B.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def p(self):
        return self.A.shape[0]

    @property
    def r(self):
        return self.B.shape[1]

    @property
    def q(self):
        return self.p + self.r

    @property
    def matrix(self):
        """The stacked ``p x q`` matrix ``[A, B]``."""
        return np.hstack([self.A, self.B])

    @classmethod
    def from_matrix(cls, theta, p):
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:, :p], theta[:, p:])

    def closed_loop(self, L):
        """``A + B L``, i.e. ``theta @ [I; L]``."""
        L = check_matrix(L, "L", shape=(self.r, self.p))
        return self.A + self.B @ L

    def __repr__(self):
        return f"DynamicsParameter(p={self.p}, r={self.r}, A={self.A.tolist()}, B={self.B.tolist()})"


@dataclass(frozen=True, eq=False)
class CostPair:
    """Quadratic stage-cost weights; symmetrized and checked positive definite."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R"):
            M = check_matrix(getattr(self, name), name, square=True)
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(M))):
                raise DomainError(f"{name} is not symmetric")
            M = symmetrize(M)
            if np.linalg.eigvalsh(M)[0] <= 0:
                raise DomainError(f"{name} must be positive definite")
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @property
    def p(self):
        return self.Q.shape[0]

    @property
    def r(self):
        return self.R.shape[0]

    def check_conforms(self, theta):
        if theta.p != self.p or theta.r != self.r:
            raise DimensionError(
                f"cost dimensions (p={self.p}, r={self.r}) do not match "
                f"dynamics (p={theta.p}, r={theta.r})"
            )


@dataclass(frozen=True, eq=False)
class JordanData:
    """Block decomposition ``D = P^{-1} Lam P`` and its constant ``zeta``.

    ``blocks`` lists ``(eigenvalue, size)`` pairs.  ``cluster_bounds`` holds
    the ``(rho, k)`` pairs actually used when bounding powers of each cluster
    block.
    """

    P: np.ndarray
    blocks: list
    zeta: float
    Lam: np.ndarray = None
    series_sum: float = 1.0
    norm_pinv_inf2: float = 1.0
    norm_p_inf: float = 1.0
    cluster_bounds: list = field(default_factory=list)


def spectral_radius(M):
    M = check_matrix(M, "M", square=True)
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def is_stabilizer(theta, L, tol=1e-9):
    """True iff ``A + B L`` has spectral radius below ``1 - tol``."""
    return spectral_radius(theta.closed_loop(L)) < 1.0 - tol


def norm_inf(M):
    """Induced infinity norm (max absolute row sum); works for complex input."""
    M = np.asarray(M)
    return float(np.max(np.sum(np.abs(M), axis=1)))


def norm_inf_to_2(M, max_enumeration=16):
    """``max ||M v||_2`` over ``||v||_inf <= 1``.

    Exact for real matrices via vertex enumeration when the column count is
    at most ``max_enumeration``.  Otherwise (complex, or too wide) returns the
    upper bound ``min(sqrt(sum_i (sum_j |M_ij|)^2), sqrt(n) ||M||_2)``.
    """
    M = np.asarray(M)
    n = M.shape[1]
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.iscomplexobj(M) and np.max(np.abs(M.imag)) <= 1e-14 * scale:
        M = M.real
    if not np.iscomplexobj(M) and n <= max_enumeration:
        # the maximum of a convex function over the cube is attained at a vertex;
        # v and -v give the same norm, so fix the first sign
        best = 0.0
        for signs in product((1.0, -1.0), repeat=n - 1):
            v = np.array((1.0,) + signs)
            best = max(best, float(np.linalg.norm(M @ v)))
        return best
    row_bound = float(np.sqrt(np.sum(np.sum(np.abs(M), axis=1) ** 2)))
    return min(row_bound, float(np.sqrt(n) * np.linalg.norm(M, 2)))


def _cluster(eigs, rtol):
    """Union-find clustering of eigenvalues at relative tolerance ``rtol``."""
    n = len(eigs)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            scale = max(1.0, abs(eigs[i]), abs(eigs[j]))
            if abs(eigs[i] - eigs[j]) <= rtol * scale:
                parent[find(i)] = find(j)
    labels = [find(i) for i in range(n)]
    order = []
    for lab in labels:
        if lab not in order:
            order.append(lab)
    return [[i for i in range(n) if labels[i] == lab] for lab in order]


def _separate_clusters(T, label):
    """Solve ``T Y = Y M`` with ``Y`` unit upper triangular and ``M`` coupling
    only indices that share a cluster label."""
    n = T.shape[0]
    Y = np.eye(n, dtype=complex)
    M = np.zeros((n, n), dtype=complex)
    M[np.diag_indices(n)] = np.diag(T)
    for j in range(n):
        for i in range(j - 1, -1, -1):
            rhs = Y[i, i + 1:j] @ M[i + 1:j, j] - T[i, i + 1:j + 1] @ Y[i + 1:j + 1, j]
            if label[i] == label[j]:
                M[i, j] = -rhs
            else:
                Y[i, j] = rhs / (T[i, i] - T[j, j])
    return Y, M


def _nilpotency_index(pattern):
    """Smallest k with pattern^k == 0 for a strictly upper triangular
    nonnegative matrix."""
    n = pattern.shape[0]
    if n == 0:
        return 1
    support = (pattern != 0).astype(float)
    power = np.eye(n)
    for k in range(1, n + 1):
        power = power @ support
        if not np.any(power):
            return k
    return n


def _jordan_sizes(N, tol):
    """Jordan block sizes of a nilpotent ``N`` from ranks of its powers."""
    m = N.shape[0]
    ranks = [m]
    power = np.eye(m, dtype=complex)
    for _ in range(m):
        power = power @ N
        if power.size == 0:
            ranks.append(0)
            continue
        s = np.linalg.svd(power, compute_uv=False)
        ranks.append(int(np.sum(s > tol)))
        if ranks[-1] == 0:
            break
    while len(ranks) < m + 2:
        ranks.append(0)
    sizes = []
    for k in range(1, m + 1):
        at_least_k = ranks[k - 1] - ranks[k]
        at_least_k1 = ranks[k] - ranks[k + 1]
        sizes.extend([k] * (at_least_k - at_least_k1))
    return sorted(sizes, reverse=True) or [1] * m


def _log_power_sum(rho, k):
    """``log sum_{j<k} rho^{-j}/j!`` for an array of ``rho >= 0``."""
    rho = np.asarray(rho, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        logrho = np.log(rho)
        terms = np.stack([-j * logrho - lgamma(j + 1) for j in range(k)])
    # rho == 0 with j == 0 gives -0*(-inf) = nan; that term is exactly 1
    terms[0] = 0.0
    return np.logaddexp.reduce(terms, axis=0)


def _zeta_t_chunk(ts, bounds, rho_bar):
    """``max_c min_rho t^{k-1} rho^t sum_{j<k} rho^{-j}/j!`` for each t."""
    ts = np.asarray(ts, dtype=float)
    out = np.zeros_like(ts)
    log_t = np.log(ts)
    for rho_c, k in bounds:
        lo = max(rho_c, 1e-12)
        grid = np.geomspace(lo, 1.0, ZETA_GRID_POINTS, endpoint=False) if lo < 1 else np.array([lo])
        grid = np.unique(np.concatenate([grid, [rho_c, max(rho_bar, rho_c)]]))
        log_s = _log_power_sum(grid, k)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_grid = np.log(grid)
            vals = (k - 1) * log_t[:, None] + ts[:, None] * log_grid[None, :] + log_s[None, :]
        vals = np.where(np.isnan(vals), np.inf, vals)
        out = np.maximum(out, np.exp(np.min(vals, axis=1)))
    return out


def _series_sum(bounds):
    """``sum_{t>=0} zeta_t`` truncated by a geometric-polynomial tail bound."""
    rho_bar = max(r for r, _ in bounds)
    mu = max(k for _, k in bounds)
    rho_star = max(rho_bar, 1e-150)
    log_const = float(_log_power_sum(np.array([rho_star]), mu)[0])
    total = 1.0
    start = 1
    chunk = 1024
    while start < ZETA_MAX_TERMS:
        ts = np.arange(start, start + chunk)
        total += float(np.sum(_zeta_t_chunk(ts, bounds, rho_bar)))
        end = start + chunk - 1
        # f(t) = t^{mu-1} rho*^t C dominates zeta_t; successive ratios decrease in t
        ratio = ((end + 2) / (end + 1)) ** (mu - 1) * rho_star
        if ratio < 1:
            log_next = (mu - 1) * np.log(end + 1) + (end + 1) * np.log(rho_star) + log_const
            remainder = np.exp(log_next) / (1.0 - ratio)
            if remainder <= ZETA_TAIL_RTOL * total:
                return total
        start = end + 1
        chunk = min(chunk * 2, 1 << 20)
    raise InstabilityError("zeta series did not converge within the term cap")


def jordan_constant(D, cluster_rtol=CLUSTER_RTOL):
    """Compute a block decomposition of a stable ``D`` and its constant zeta.

    Raises ``InstabilityError`` when the spectral radius is not below one.
    """
    D = check_matrix(D, "D", square=True)
    p = D.shape[0]
    rho = spectral_radius(D)
    if rho >= 1.0:
        raise InstabilityError(f"jordan_constant needs a stable matrix, spectral radius {rho:.6g}")

    T, U = schur(D.astype(complex), output="complex")
    eigs = np.diag(T)
    clusters = _cluster(eigs, cluster_rtol)
    label = np.empty(p, dtype=int)
    for c, members in enumerate(clusters):
        label[members] = c
    Y, M = _separate_clusters(T, label)

    perm = np.concatenate([np.asarray(members, dtype=int) for members in clusters])
    Mp = M[np.ix_(perm, perm)]
    scaling = np.ones(p)
    blocks = []
    bounds = []
    offset = 0
    svd_tol = 1e-9 * max(1.0, float(np.linalg.norm(D, 2)))
    for members in clusters:
        m = len(members)
        sl = slice(offset, offset + m)
        block = Mp[sl, sl]
        N = np.triu(block, 1)
        rho_c = float(np.max(np.abs(np.diag(block))))
        nu = norm_inf(N) if m > 1 else 0.0
        s = 1.0 / nu if nu > 1.0 else 1.0
        scaling[sl] = s ** np.arange(m)
        k = _nilpotency_index(np.abs(N))
        bounds.append((rho_c, k))
        lam = complex(np.mean(np.diag(block)))
        sizes = _jordan_sizes(N, svd_tol) if m > 1 else [1]
        blocks.extend((lam, size) for size in sizes)
        offset += m

    # D = U Y M Y^{-1} U^H and Lam = S^{-1} Pi M Pi^T S, so P^{-1} = U Y Pi^T S
    Pi = np.eye(p)[perm]
    P_inv = U @ Y @ Pi.T @ np.diag(scaling)
    P = np.linalg.inv(P_inv)

    series = _series_sum(bounds)
    n_pinv = norm_inf_to_2(P_inv)
    n_p = norm_inf(P)
    zeta = n_pinv * n_p * series
    Lam = (Mp / scaling[:, None]) * scaling[None, :]
    return JordanData(
        P=P,
        blocks=blocks,
        zeta=float(zeta),
        Lam=Lam,
        series_sum=float(series),
        norm_pinv_inf2=float(n_pinv),
        norm_p_inf=float(n_p),
        cluster_bounds=bounds,
    )
