"""Sub-Weibull noise models with certified tail triples.

Every model draws ``w = mixer @ z`` where ``z`` has i.i.d. zero-mean,
unit-variance coordinates from one of three base laws:

* ``gaussian``: standard normal.
* ``weibull_symmetric``: ``sign * s * E`` with ``E ~ Weibull(shape)`` and
  ``s = Gamma(1 + 2/shape)^{-1/2}``, so ``P(|z| > y) = exp(-(y/s)^shape)``.
* ``uniform_bounded``: uniform on ``[-sqrt(3), sqrt(3)]``.

Tail certificates ``P(|w_i| > y) <= b1 exp(-y^alpha / b2)``:

* gaussian: each coordinate is ``N(0, C_ii)`` whatever the mixing, so
  ``b1 = 2``, ``b2 = 2 max_i C_ii``, ``alpha = 2``.
* weibull_symmetric: with ``S_i = sum_j |mixer_ij|``, the event
  ``|w_i| > y`` forces ``|z_j| > y / S_i`` for some ``j`` with a nonzero
  weight, so a union bound gives ``b1 = max_i #{j: mixer_ij != 0}``,
  ``b2 = (s max_i S_i)^shape``, ``alpha = shape``.
* uniform_bounded: ``|w_i| <= sqrt(3) max_i S_i`` surely; ``alpha`` is
  infinite and the bound is the support radius.
"""

from dataclasses import dataclass
from math import gamma, inf, sqrt

import numpy as np

from ._validation import check_matrix, symmetrize
from .exceptions import DomainError

KINDS = ("gaussian", "weibull_symmetric", "uniform_bounded")
SQRT3 = sqrt(3.0)


@dataclass(frozen=True)
class TailTriple:
    b1: float
    b2: float
    alpha: float
    bounded: bool = False
    support: float = inf

    def __iter__(self):
        return iter((self.b1, self.b2, self.alpha))


@dataclass(frozen=True, eq=False)
class NoiseModel:
    kind: str
    C: np.ndarray
    shape: float = 2.0
    fourth_moment_mode: str = "closed_form"
    tail_override: tuple = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if self.fourth_moment_mode not in ("closed_form", "monte_carlo"):
            raise DomainError(f"unknown fourth_moment_mode {self.fourth_moment_mode!r}")
        C = symmetrize(check_matrix(self.C, "C", square=True))
        if np.linalg.eigvalsh(C)[0] <= 0:
            raise DomainError("noise covariance must be positive definite")
        if self.kind == "weibull_symmetric" and not self.shape > 0:
            raise DomainError("Weibull shape must be positive")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)
        mixer = np.linalg.cholesky(C)
        mixer.setflags(write=False)
        object.__setattr__(self, "mixer", mixer)

    @classmethod
    def gaussian(cls, C, **kw):
        return cls("gaussian", C, **kw)

    @classmethod
    def weibull(cls, C, shape, **kw):
        return cls("weibull_symmetric", C, shape=shape, **kw)

    @classmethod
    def uniform(cls, C, **kw):
        return cls("uniform_bounded", C, **kw)

    @property
    def p(self):
        return self.C.shape[0]

    @property
    def weibull_scale(self):
        return 1.0 / sqrt(gamma(1.0 + 2.0 / self.shape))

    @property
    def kurtosis(self):
        """Fourth moment ``E z^4`` of the unit-variance base law."""
        if self.kind == "gaussian":
            return 3.0
        if self.kind == "uniform_bounded":
            return 9.0 / 5.0
        a = self.shape
        return gamma(1.0 + 4.0 / a) / gamma(1.0 + 2.0 / a) ** 2

    def base_draws(self, rng, size):
        """Standardized base-law draws of shape ``size + (p,)``."""
        shape = tuple(np.atleast_1d(size)) + (self.p,) if size is not None else (self.p,)
        if self.kind == "gaussian":
            return rng.standard_normal(shape)
        if self.kind == "uniform_bounded":
            return rng.uniform(-SQRT3, SQRT3, shape)
        mag = rng.weibull(self.shape, shape) * self.weibull_scale
        sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
        return sign * mag

    def sample(self, rng, size=None):
        z = self.base_draws(rng, size)
        return z @ self.mixer.T

    def tail_triple(self):
        return tail_triple(self)

    def quadratic_form_variance(self, K, rng=None, draws=10**6):
        """``Var[w'Kw]`` and its standard error (zero for the closed form).

        With ``G = mixer' K mixer`` and independent unit-variance base
        coordinates, ``Var[z'Gz] = 2 tr(G^2) + (kurtosis - 3) sum_i G_ii^2``.
        """
        K = np.asarray(K, dtype=float)
        if self.fourth_moment_mode == "closed_form":
            G = self.mixer.T @ K @ self.mixer
            return float(2.0 * np.trace(G @ G) + (self.kurtosis - 3.0) * np.sum(np.diag(G) ** 2)), 0.0
        if rng is None:
            raise DomainError("Monte Carlo fourth moments need a seeded generator")
        rng = np.random.default_rng(rng)
        w = self.sample(rng, size=draws)
        qf = np.einsum("ni,ij,nj->n", w, K, w)
        var = float(np.var(qf, ddof=1))
        # standard error of the sample variance from the fourth central moment
        centered = qf - qf.mean()
        m4 = float(np.mean(centered**4))
        se = sqrt(max(m4 - var**2, 0.0) / draws)
        return var, se


def sample(model, rng, size=None):
    return model.sample(rng, size=size)


def tail_triple(model):
    if model.tail_override is not None:
        b1, b2, alpha = model.tail_override
        return TailTriple(float(b1), float(b2), float(alpha))
    row_abs = np.sum(np.abs(model.mixer), axis=1)
    if model.kind == "gaussian":
        return TailTriple(2.0, 2.0 * float(np.max(np.diag(model.C))), 2.0)
    if model.kind == "uniform_bounded":
        radius = SQRT3 * float(np.max(row_abs))
        return TailTriple(1.0, 1.0, inf, bounded=True, support=radius)
    nonzero = int(np.max(np.sum(model.mixer != 0, axis=1)))
    b2 = (model.weibull_scale * float(np.max(row_abs))) ** model.shape
    return TailTriple(float(nonzero), b2, float(model.shape))


class NoiseStream:
    """Lazily drawn noise sequence ``w(1), w(2), ...`` in fixed-size blocks.

    Block-wise generation makes the first ``n`` draws independent of how far
    the stream is eventually read, so runs of different horizons share a
    prefix.  ``zero=True`` yields the deterministic all-zero test mode.
    """

    block = 4096

    def __init__(self, model, rng, zero=False):
        self.model = model
        self.rng = rng
        self.zero = zero
        self._blocks = []

    def _ensure(self, n):
        while len(self._blocks) * self.block < n:
            if self.zero:
                self._blocks.append(np.zeros((self.block, self.model.p)))
            else:
                self._blocks.append(self.model.sample(self.rng, size=self.block))

    def take(self, start, stop):
        """Rows for ``w(start+1) .. w(stop)``, zero-based ``[start, stop)``."""
        self._ensure(stop)
        if stop <= start:
            return np.zeros((0, self.model.p))
        first, last = start // self.block, (stop - 1) // self.block
        chunk = np.concatenate(self._blocks[first:last + 1]) if last > first else self._blocks[first]
        offset = first * self.block
        return chunk[start - offset:stop - offset]
