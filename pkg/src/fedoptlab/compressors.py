"""Gradient compression operators with declared variance classes.

Conventions used throughout:

* Unbiased operators are declared in the class U(omega), meaning
  E[C(x)] = x and E||C(x)||^2 <= (omega + 1)||x||^2.  Catalog entries that
  are stated elsewhere with a second-moment factor zeta are converted once,
  at the descriptor boundary, via omega = zeta - 1.
* Biased (contractive) operators carry B1(alpha, beta), B2(gamma, beta)
  and B3(delta) constants, where B3 means
  E||C(x) - x||^2 <= (1 - 1/delta)||x||^2.
* ``bits(d)`` is the per-message communication cost charged by the
  standard accounting table: 32-bit floats, 31 bits for a dithering norm,
  (1 + ceil(log2 d)) bits per transmitted index, and a level code of
  s bits (linear levels) or ceil(log2 s) bits (geometric levels) plus one
  sign bit per coordinate.  These are bookkeeping conventions, not an
  entropy-optimal code.

All operators map zero vectors to zero and are pure functions of
(parameters, input, randomness).
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .rng import RandomStream, as_generator

__all__ = [
    "Compressor",
    "Identity",
    "NaturalCompression",
    "RandK",
    "TopK",
    "BiasedRandomSparsification",
    "AdaptiveRandomSparsification",
    "NURand1",
    "WangniSparsification",
    "GeneralUnbiasedRounding",
    "GeneralBiasedRounding",
    "ExponentialRounding",
    "GeneralDithering",
    "StandardDithering",
    "ExponentialDithering",
    "NaturalDithering",
    "Composition",
    "Induced",
    "Scaled",
    "compose",
    "induce",
    "scale",
    "c_nat_scalar",
    "natural_compress",
    "empirical_variance",
    "empirical_second_moment",
    "make_compressor",
    "COMPRESSOR_KINDS",
]


def _check_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("expected a 1-d vector with at least one entry")
    if not np.all(np.isfinite(x)):
        raise ValueError("vector entries must be finite (no NaN/Inf)")
    return x


def _index_bits(d: int) -> int:
    # 1 + ceil(log2 d) bits identify one of d coordinates.
    return 1 + math.ceil(math.log2(d)) if d > 1 else 1


# binary32 smallest normal; natural compression flushes smaller magnitudes
# to zero so that the 9-bit wire format stays total.
_MIN_NORMAL32 = 2.0 ** -126


def natural_compress(x, rng) -> np.ndarray:
    """Randomized logarithmic rounding of each entry to a power of two.

    Each nonzero t is rounded to sign(t) * 2**floor(log2|t|) with
    probability (2**ceil(log2|t|) - |t|) / 2**floor(log2|t|), otherwise to
    sign(t) * 2**ceil(log2|t|).  Exact powers of two and zeros pass
    through unchanged; magnitudes below the binary32 normal range are
    flushed to zero first.
    """
    x = _check_vector(x)
    gen = as_generator(rng)
    out = np.zeros_like(x)
    nz = np.abs(x) >= _MIN_NORMAL32
    if not np.any(nz):
        return out
    a = np.abs(x[nz])
    lo = np.ldexp(1.0, np.floor(np.log2(a)).astype(np.int64))
    # p(t) = (2*lo - |t|) / lo is the probability of rounding down.
    p_down = (2.0 * lo - a) / lo
    up = gen.random(a.shape) >= p_down
    mag = np.where(up, 2.0 * lo, lo)
    out[nz] = np.sign(x[nz]) * mag
    return out


def c_nat_scalar(t: float, rng) -> float:
    """Natural compression of a single scalar."""
    if not np.isfinite(t):
        raise ValueError("input must be finite")
    return float(natural_compress(np.array([t]), rng)[0])


class Compressor:
    """Base class: a (possibly random) map R^d -> R^d."""

    kind: str = "base"
    unbiased: bool = False

    # -- application ------------------------------------------------------

    def __call__(self, x, rng) -> np.ndarray:
        x = _check_vector(x)
        if not np.any(x):
            return x.copy()
        return self._compress(x, rng)

    def _compress(self, x: np.ndarray, rng) -> np.ndarray:
        raise NotImplementedError

    # -- declared class constants -----------------------------------------

    def omega(self, d: int) -> float:
        """Declared U(omega) variance; raises for biased kinds."""
        raise ValueError(f"{self.kind} is not declared unbiased")

    def delta(self, d: int) -> Optional[float]:
        """Declared B3 constant, or None when not declared."""
        return None

    def b1(self, d: int):
        """Declared (alpha, beta) for B1, or None."""
        return None

    def b2(self, d: int):
        """Declared (gamma, beta) for B2, or None."""
        return None

    # -- wire cost ---------------------------------------------------------

    def bits(self, d: int) -> int:
        raise ValueError(f"no closed-form bit cost for kind {self.kind!r}")

    def __repr__(self):
        return f"{type(self).__name__}()"


class Identity(Compressor):
    kind = "identity"
    unbiased = True

    def _compress(self, x, rng):
        return x.copy()

    def omega(self, d):
        return 0.0

    def delta(self, d):
        return 1.0

    def b1(self, d):
        return (1.0, 1.0)

    def b2(self, d):
        return (1.0, 1.0)

    def bits(self, d):
        return 32 * d


class NaturalCompression(Compressor):
    """Per-coordinate randomized rounding to powers of two; omega = 1/8."""

    kind = "natural"
    unbiased = True

    def _compress(self, x, rng):
        return natural_compress(x, rng)

    def omega(self, d):
        return 1.0 / 8.0

    def bits(self, d):
        return 9 * d


class RandK(Compressor):
    """Keep k uniformly chosen coordinates, scaled by d/k; omega = d/k - 1."""

    kind = "rand_k"
    unbiased = True

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = int(k)

    def _check_dim(self, d):
        if self.k > d:
            raise ValueError(f"k={self.k} exceeds dimension {d}")

    def _compress(self, x, rng):
        d = x.size
        self._check_dim(d)
        gen = as_generator(rng)
        idx = gen.choice(d, size=self.k, replace=False)
        out = np.zeros_like(x)
        out[idx] = x[idx] * (d / self.k)
        return out

    def enumerate_outcomes(self, x):
        """All (probability, output) pairs; exact oracle for small d."""
        from itertools import combinations

        x = _check_vector(x)
        d = x.size
        self._check_dim(d)
        total = math.comb(d, self.k)
        for mask in combinations(range(d), self.k):
            out = np.zeros_like(x)
            out[list(mask)] = x[list(mask)] * (d / self.k)
            yield 1.0 / total, out

    def omega(self, d):
        self._check_dim(d)
        return d / self.k - 1.0

    def bits(self, d):
        return (33 + math.ceil(math.log2(d))) * self.k if d > 1 else 33 * self.k

    def __repr__(self):
        return f"RandK(k={self.k})"


class TopK(Compressor):
    """Keep the k largest-magnitude coordinates (ties: lower index wins)."""

    kind = "top_k"
    unbiased = False

    def __init__(self, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = int(k)

    def _compress(self, x, rng):
        d = x.size
        if self.k > d:
            raise ValueError(f"k={self.k} exceeds dimension {d}")
        order = np.argsort(-np.abs(x), kind="stable")
        out = np.zeros_like(x)
        keep = order[: self.k]
        out[keep] = x[keep]
        return out

    def delta(self, d):
        return d / self.k

    def b1(self, d):
        return (self.k / d, 1.0)

    def b2(self, d):
        return (self.k / d, 1.0)

    def bits(self, d):
        return (33 + math.ceil(math.log2(d))) * self.k if d > 1 else 33 * self.k

    def __repr__(self):
        return f"TopK(k={self.k})"


class BiasedRandomSparsification(Compressor):
    """Keep coordinates of an independent proper sampling, without scaling.

    With q = min_i p_i the operator lies in B1(q, 1), B2(q, 1), B3(1/q).
    """

    kind = "biased_rand_sparse"
    unbiased = False

    def __init__(self, probs: Sequence[float]):
        p = np.asarray(probs, dtype=np.float64)
        if np.any(p <= 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in (0, 1]")
        self.probs = p

    def _check_dim(self, d):
        if self.probs.size != d:
            raise ValueError("probability vector length must equal the dimension")

    def _compress(self, x, rng):
        self._check_dim(x.size)
        gen = as_generator(rng)
        keep = gen.random(x.size) < self.probs
        return np.where(keep, x, 0.0)

    def delta(self, d):
        self._check_dim(d)
        return 1.0 / float(np.min(self.probs))

    def b1(self, d):
        self._check_dim(d)
        q = float(np.min(self.probs))
        return (q, 1.0)

    def b2(self, d):
        return self.b1(d)

    def bits(self, d):
        # expected-kept-count convention
        self._check_dim(d)
        per = 33 + math.ceil(math.log2(d)) if d > 1 else 33
        return math.ceil(per * float(np.sum(self.probs)))


class AdaptiveRandomSparsification(Compressor):
    """Keep exactly one coordinate, chosen with probability |x_i|/||x||_1.

    Biased: the kept value is not rescaled.  B1(1/d, 1), B2(1/d, 1), B3(d).
    """

    kind = "adaptive_sparse"
    unbiased = False

    def _compress(self, x, rng):
        gen = as_generator(rng)
        p = np.abs(x) / np.sum(np.abs(x))
        i = gen.choice(x.size, p=p)
        out = np.zeros_like(x)
        out[i] = x[i]
        return out

    def delta(self, d):
        return float(d)

    def b1(self, d):
        return (1.0 / d, 1.0)

    def b2(self, d):
        return (1.0 / d, 1.0)

    def bits(self, d):
        return 33 + math.ceil(math.log2(d)) if d > 1 else 33


class NURand1(Compressor):
    """Non-uniform unbiased 1-sparsification.

    Coordinate i is kept with probability |x_i|/||x||_1 and rescaled by the
    inverse probability, so the output value is sign(x_i) * ||x||_1.
    E||C(x)||^2 = ||x||_1^2 <= d ||x||^2, hence declared omega = d - 1.
    """

    kind = "nu_rand1"
    unbiased = True

    def _compress(self, x, rng):
        gen = as_generator(rng)
        norm1 = np.sum(np.abs(x))
        p = np.abs(x) / norm1
        i = gen.choice(x.size, p=p)
        out = np.zeros_like(x)
        out[i] = np.sign(x[i]) * norm1
        return out

    def enumerate_outcomes(self, x):
        x = _check_vector(x)
        norm1 = np.sum(np.abs(x))
        for i in range(x.size):
            if x[i] == 0:
                continue
            out = np.zeros_like(x)
            out[i] = np.sign(x[i]) * norm1
            yield abs(x[i]) / norm1, out

    def omega(self, d):
        return float(d - 1)

    def bits(self, d):
        return 33 + math.ceil(math.log2(d)) if d > 1 else 33


class WangniSparsification(Compressor):
    """Magnitude-proportional unbiased sparsification with budget k.

    Keep probabilities start at p_i = min(k|x_i|/||x||_1, 1) and are pushed
    to the budget by the same aggregate-then-rescale fixed point used for
    approximate optimal client sampling; kept coordinates are scaled by
    1/p_i.  Declared omega = d/k - 1 (an upper bound: the magnitude-aware
    probabilities never do worse than uniform rand-k).
    """

    kind = "wangni"
    unbiased = True

    def __init__(self, k: int, max_rescales: int = 10):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = int(k)
        self.max_rescales = int(max_rescales)

    def keep_probabilities(self, x) -> np.ndarray:
        x = _check_vector(x)
        a = np.abs(x)
        p = np.zeros_like(a)
        pos = a > 0
        npos = int(pos.sum())
        if npos == 0:
            return p
        if self.k >= npos:
            p[pos] = 1.0
            return p
        q = np.minimum(self.k * a[pos] / np.sum(a[pos]), 1.0)
        for _ in range(self.max_rescales):
            unsat = q < 1.0
            budget_left = self.k - np.count_nonzero(~unsat)
            mass = q[unsat].sum()
            if mass <= 0:
                break
            c = budget_left / mass
            if c <= 1.0:
                break
            q[unsat] = np.minimum(c * q[unsat], 1.0)
        p[pos] = q
        return p

    def _compress(self, x, rng):
        if self.k > x.size:
            raise ValueError(f"k={self.k} exceeds dimension {x.size}")
        gen = as_generator(rng)
        p = self.keep_probabilities(x)
        keep = (gen.random(x.size) < p) & (p > 0)
        out = np.zeros_like(x)
        out[keep] = x[keep] / p[keep]
        return out

    def enumerate_outcomes(self, x):
        """All (probability, output) pairs over the independent keep events."""
        from itertools import product

        x = _check_vector(x)
        if x.size > 12:
            raise ValueError("outcome enumeration limited to d <= 12")
        p = self.keep_probabilities(x)
        nz = np.flatnonzero(p > 0)
        for keeps in product([False, True], repeat=nz.size):
            prob = 1.0
            out = np.zeros_like(x)
            for idx, kept in zip(nz, keeps):
                if kept:
                    prob *= p[idx]
                    out[idx] = x[idx] / p[idx]
                else:
                    prob *= 1.0 - p[idx]
            if prob > 0:
                yield prob, out

    def omega(self, d):
        return d / self.k - 1.0

    def bits(self, d):
        return (33 + math.ceil(math.log2(d))) * self.k if d > 1 else 33 * self.k

    def __repr__(self):
        return f"WangniSparsification(k={self.k})"


class _RoundingGrid:
    """Strictly increasing positive rounding levels, plus 0 below the grid."""

    def __init__(self, levels: Sequence[float]):
        lv = np.asarray(levels, dtype=np.float64)
        if lv.ndim != 1 or lv.size < 1:
            raise ValueError("levels must be a non-empty 1-d sequence")
        if np.any(lv <= 0) or np.any(np.diff(lv) <= 0):
            raise ValueError("levels must be positive and strictly increasing")
        self.levels = lv

    def bracket(self, a: np.ndarray):
        """Return (lo, hi) grid neighbours of each magnitude in ``a``.

        Magnitudes below the smallest level use the interval [0, levels[0]];
        magnitudes above the largest level are an error.
        """
        lv = self.levels
        if np.any(a > lv[-1]):
            raise ValueError("magnitude above the largest rounding level")
        idx = np.searchsorted(lv, a, side="right") - 1
        lo = np.where(idx >= 0, lv[np.clip(idx, 0, lv.size - 1)], 0.0)
        hi = lv[np.clip(idx + 1, 0, lv.size - 1)]
        exact = idx >= 0
        on_grid = exact & (lo == a)
        hi = np.where(on_grid, lo, hi)
        return lo, hi


class GeneralUnbiasedRounding(Compressor):
    """Per-coordinate randomized rounding to an arbitrary level grid.

    Declared omega = zeta - 1 with zeta = (1/4) max over consecutive grid
    pairs of (a/b + b/a + 2); the constant refers to the grid interior
    (an untruncated grid extends to 0 and infinity).
    """

    kind = "unbiased_rounding"
    unbiased = True

    def __init__(self, levels: Sequence[float]):
        self.grid = _RoundingGrid(levels)

    def _compress(self, x, rng):
        gen = as_generator(rng)
        a = np.abs(x)
        lo, hi = self.grid.bracket(a)
        width = hi - lo
        prob_up = np.where(width > 0, (a - lo) / np.where(width > 0, width, 1.0), 0.0)
        mag = np.where(gen.random(x.size) < prob_up, hi, lo)
        return np.sign(x) * mag

    def omega(self, d):
        lv = self.grid.levels
        if lv.size < 2:
            return 0.0
        r = lv[:-1] / lv[1:]
        return float(np.max(r + 1.0 / r + 2.0) / 4.0 - 1.0)

    def bits(self, d):
        # sign + 8-bit level index, matching the power-of-two wire format
        return 9 * d


class GeneralBiasedRounding(Compressor):
    """Deterministic rounding of each magnitude to the nearest grid level."""

    kind = "biased_rounding"
    unbiased = False

    def __init__(self, levels: Sequence[float]):
        self.grid = _RoundingGrid(levels)

    def _compress(self, x, rng):
        a = np.abs(x)
        lo, hi = self.grid.bracket(a)
        mag = np.where(a - lo <= hi - a, lo, hi)
        return np.sign(x) * mag

    def _pair_stats(self):
        lv = self.grid.levels
        if lv.size < 2:
            return 1.0, 1.0, 1.0
        # work with consecutive ratios r = lo/hi in (0, 1): immune to the
        # underflow of lo*hi products for tiny grid levels
        r = lv[:-1] / lv[1:]
        beta = float(np.max(2.0 / (r + 1.0)))
        gamma = float(np.min(2.0 * r / (r + 1.0)))
        delta = float(np.max((r + 1.0) ** 2 / (4.0 * r)))
        return beta, gamma, delta

    def delta(self, d):
        return self._pair_stats()[2]

    def b1(self, d):
        beta, gamma, _ = self._pair_stats()
        return (gamma ** 2, beta)

    def b2(self, d):
        beta, gamma, _ = self._pair_stats()
        return (gamma, beta)

    def bits(self, d):
        return 9 * d


def ExponentialRounding(base: float, span: int = 512, biased: bool = False):
    """Rounding to the geometric grid base**k, truncated to a wide span.

    For the unbiased variant zeta = (base + 1/base + 2)/4; for the biased
    variant alpha = (2/(b+1))**2, beta = 2b/(b+1), gamma = 2/(b+1),
    delta = (b+1)**2/(4b).
    """
    if base <= 1.0:
        raise ValueError("base must be > 1")
    span = min(span, int(1022 / math.log2(base)))  # keep levels finite
    ks = np.arange(-span, span + 1)
    levels = base ** ks
    comp = GeneralBiasedRounding(levels) if biased else GeneralUnbiasedRounding(levels)
    comp.base = base
    return comp


class GeneralDithering(Compressor):
    """Normalize by a p-norm, randomly round magnitudes to a level grid.

    ``levels`` are the interior grid points in (0, 1); the grid implicitly
    contains 0 and 1.  The transmitted norm is exact by default; passing a
    ``norm_compressor`` (e.g. natural compression) compresses it, which for
    an unbiased norm compressor multiplies the declared second moment by
    (omega_norm + 1).
    """

    kind = "general_dither"
    unbiased = True

    def __init__(
        self,
        levels: Sequence[float],
        p: float = 2.0,
        norm_compressor: Optional[Compressor] = None,
    ):
        if p < 1:
            raise ValueError("p-norm parameter must be >= 1")
        lv = np.asarray(levels, dtype=np.float64)
        if np.any(lv <= 0) or np.any(lv >= 1) or np.any(np.diff(lv) <= 0):
            raise ValueError("interior levels must be strictly increasing in (0, 1)")
        if norm_compressor is not None and not norm_compressor.unbiased:
            raise ValueError("norm compressor must be unbiased")
        self.levels = np.concatenate(([0.0], lv, [1.0]))
        self.p = float(p)
        self.norm_compressor = norm_compressor

    # number of positive levels, counting 1
    @property
    def num_levels(self) -> int:
        return self.levels.size - 1

    def _round_normalized(self, y: np.ndarray, gen) -> np.ndarray:
        lv = self.levels
        idx = np.searchsorted(lv, y, side="right") - 1
        idx = np.minimum(idx, lv.size - 2)
        lo, hi = lv[idx], lv[idx + 1]
        width = hi - lo
        prob_up = np.where(width > 0, (y - lo) / np.where(width > 0, width, 1.0), 0.0)
        return np.where(gen.random(y.size) < prob_up, hi, lo)

    def _compress(self, x, rng):
        gen = as_generator(rng)
        norm = float(np.linalg.norm(x, self.p))
        y = np.abs(x) / norm
        xi = self._round_normalized(y, gen)
        if self.norm_compressor is not None:
            norm = float(self.norm_compressor(np.array([norm]), gen)[0])
        return norm * np.sign(x) * xi

    def omega(self, d):
        raise ValueError("no closed-form omega for an arbitrary level grid")

    def _level_code_width(self) -> int:
        return max(1, math.ceil(math.log2(self.num_levels)))

    def bits(self, d):
        return 31 + d * (2 + self._level_code_width())


class StandardDithering(GeneralDithering):
    """Linear level grid k/s; omega = t * min(1, t) with t = d**(1/r) / s."""

    kind = "standard_dither"

    def __init__(self, s: int, p: float = 2.0):
        if s < 1:
            raise ValueError("s must be >= 1")
        self.s = int(s)
        super().__init__([k / s for k in range(1, s)], p=p)

    def omega(self, d):
        r = min(self.p, 2.0)
        t = d ** (1.0 / r) / self.s
        return float(t * min(1.0, t))

    def bits(self, d):
        # the accounting table charges s bits of level code per coordinate
        return 31 + d * (2 + self.s)

    def __repr__(self):
        return f"StandardDithering(s={self.s}, p={self.p})"


class ExponentialDithering(GeneralDithering):
    """Geometric level grid base**(1-s) ... base**-1, 1.

    omega = zeta_b - 1 with
    zeta_b = (b + 1/b + 2)/4 + d**(1/r) b**(1-s) min(1, d**(1/r) b**(1-s)).
    """

    kind = "exp_dither"

    def __init__(
        self,
        base: float,
        s: int,
        p: float = 2.0,
        norm_compressor: Optional[Compressor] = None,
    ):
        if base <= 1.0:
            raise ValueError("base must be > 1")
        if s < 1:
            raise ValueError("s must be >= 1")
        self.base = float(base)
        self.s = int(s)
        interior = [base ** (1 - s + j) for j in range(s - 1)]
        GeneralDithering.__init__(self, interior, p=p, norm_compressor=norm_compressor)

    def omega(self, d):
        b = self.base
        r = min(self.p, 2.0)
        t = d ** (1.0 / r) * b ** (1 - self.s)
        zeta = (b + 1.0 / b + 2.0) / 4.0 + t * min(1.0, t)
        if self.norm_compressor is not None:
            zeta *= 1.0 + self.norm_compressor.omega(1)
        return float(zeta - 1.0)

    def bits(self, d):
        return 31 + d * (2 + max(1, math.ceil(math.log2(self.s))))

    def __repr__(self):
        return f"ExponentialDithering(base={self.base}, s={self.s}, p={self.p})"


class NaturalDithering(ExponentialDithering):
    """Base-2 exponential dithering; the workhorse geometric quantizer.

    ``compress_norm`` applies natural compression to the transmitted norm
    (multiplying the declared second moment by 9/8).  ``subdivide_tail``
    optionally refines the bottom interval [0, 2**(1-s)] with full
    power-of-two rounding instead of rounding to 0; it is off by default.
    """

    kind = "natural_dither"

    def __init__(
        self,
        s: int,
        p: float = 2.0,
        compress_norm: bool = False,
        subdivide_tail: bool = False,
    ):
        norm_comp = NaturalCompression() if compress_norm else None
        super().__init__(2.0, s, p=p, norm_compressor=norm_comp)
        self.subdivide_tail = bool(subdivide_tail)

    def _compress(self, x, rng):
        if not self.subdivide_tail:
            return super()._compress(x, rng)
        gen = as_generator(rng)
        norm = float(np.linalg.norm(x, self.p))
        y = np.abs(x) / norm
        tail = y < self.levels[1]
        xi = self._round_normalized(y, gen)
        if np.any(tail):
            xi_tail = np.abs(natural_compress(np.where(tail, y, 0.0), gen))
            xi = np.where(tail, xi_tail, xi)
        if self.norm_compressor is not None:
            norm = float(self.norm_compressor(np.array([norm]), gen)[0])
        return norm * np.sign(x) * xi

    def __repr__(self):
        return f"NaturalDithering(s={self.s}, p={self.p})"


class Composition(Compressor):
    """Apply ``inner`` first, then ``outer``: C(x) = outer(inner(x)).

    Both unbiased: U(w1*w2 + w1 + w2).  Unbiased outer over a contractive
    inner with B1(a2, b2) / B3(d2): B1(a2, b2*z1), B2(g2, b2*z1) and
    B3(d2 * z1) with z1 = omega_outer + 1 (the sparsify-then-dither rows
    of the compressor catalog).
    """

    kind = "compose"

    def __init__(self, outer: Compressor, inner: Compressor):
        self.outer = outer
        self.inner = inner
        self.unbiased = outer.unbiased and inner.unbiased

    def __call__(self, x, rng):
        x = _check_vector(x)
        if not np.any(x):
            return x.copy()
        if isinstance(rng, RandomStream):
            g_inner = rng.derive("inner").generator()
            g_outer = rng.derive("outer").generator()
        else:
            g_inner, g_outer = as_generator(rng).spawn(2)
        return self.outer(self.inner(x, g_inner), g_outer)

    def omega(self, d):
        if not self.unbiased:
            raise ValueError(
                "composition with a biased stage is not declared unbiased"
            )
        w1, w2 = self.outer.omega(d), self.inner.omega(d)
        return w1 * w2 + w1 + w2

    def _outer_zeta(self, d):
        if not self.outer.unbiased:
            raise ValueError("only unbiased-outer compositions carry constants")
        return self.outer.omega(d) + 1.0

    def delta(self, d):
        if self.unbiased:
            return None
        d2 = self.inner.delta(d)
        return None if d2 is None else d2 * self._outer_zeta(d)

    def b1(self, d):
        if self.unbiased:
            return None
        c = self.inner.b1(d)
        return None if c is None else (c[0], c[1] * self._outer_zeta(d))

    def b2(self, d):
        if self.unbiased:
            return None
        c = self.inner.b2(d)
        return None if c is None else (c[0], c[1] * self._outer_zeta(d))

    def bits(self, d):
        inner, outer = self.inner, self.outer
        sparsifiers = (RandK, TopK, WangniSparsification)
        if isinstance(outer, NaturalCompression) and isinstance(inner, sparsifiers):
            # 9-bit values replace the 32-bit ones in the sparsifier row
            return (10 + math.ceil(math.log2(d))) * inner.k if d > 1 else 10 * inner.k
        if isinstance(outer, GeneralDithering) and isinstance(inner, sparsifiers):
            # norm + per kept coordinate: index, sign and level code
            code = outer.bits(1) - 31 - 2  # level-code width per coordinate
            per_coord = _index_bits(d) + 2 + code
            return 31 + inner.k * per_coord
        raise ValueError(
            f"no closed-form bit cost for compose({outer.kind}, {inner.kind})"
        )

    def __repr__(self):
        return f"Composition(outer={self.outer!r}, inner={self.inner!r})"


def compose(c1: Compressor, c2: Compressor) -> Composition:
    """Unbiased composition applying c2 first, then c1.

    Declares omega = w1*w2 + w1 + w2; rejects biased children, for which
    no U(omega) declaration exists (build Composition directly for the
    contractive sparsify-then-quantize constructions).
    """
    if not (c1.unbiased and c2.unbiased):
        raise ValueError(
            "compose() declares a U-class result and requires unbiased stages; "
            "instantiate Composition directly for contractive combinations"
        )
    return Composition(outer=c1, inner=c2)


class Induced(Compressor):
    """Unbiased repair of a contractive compressor.

    C(x) = C1(x) + C2(x - C1(x)) with C1 in B3(delta1) and C2 in
    U(delta2 - 1).  The result is unbiased with second-moment factor
    delta = delta2 (1 - 1/delta1) + 1/delta1; both parts are transmitted.
    """

    kind = "induced"
    unbiased = True

    def __init__(self, contractive: Compressor, unbiased_part: Compressor):
        if not unbiased_part.unbiased:
            raise ValueError("second stage must be unbiased")
        self.contractive = contractive
        self.unbiased_part = unbiased_part

    def __call__(self, x, rng):
        x = _check_vector(x)
        if not np.any(x):
            return x.copy()
        if isinstance(rng, RandomStream):
            g1 = rng.derive("primary").generator()
            g2 = rng.derive("residual").generator()
        else:
            g1, g2 = as_generator(rng).spawn(2)
        y1 = self.contractive(x, g1)
        residual = x - y1
        if not np.any(residual):
            return y1
        return y1 + self.unbiased_part(residual, g2)

    def omega(self, d):
        d1 = self.contractive.delta(d)
        if d1 is None:
            raise ValueError("contractive stage carries no B3 constant")
        d2 = self.unbiased_part.omega(d) + 1.0
        return d2 * (1.0 - 1.0 / d1) + 1.0 / d1 - 1.0

    def bits(self, d):
        return self.contractive.bits(d) + self.unbiased_part.bits(d)

    def __repr__(self):
        return f"Induced({self.contractive!r}, {self.unbiased_part!r})"


def induce(biased: Compressor, unbiased_c: Compressor) -> Induced:
    """Build the induced unbiased compressor from a B3 member."""
    if biased.delta(1) is None and biased.delta(2) is None:
        raise ValueError("first stage must declare a B3 constant")
    return Induced(biased, unbiased_c)


class Scaled(Compressor):
    """lambda * C with the standard class conversions.

    For unbiased C in U(zeta - 1): lambda C is in B1(lambda^2, lambda zeta),
    B2(lambda, lambda zeta) and, when lambda zeta < 2, in
    B3(1 / (lambda (2 - zeta lambda))).  For biased C the B1/B2 constants
    scale as (lambda^2 alpha, lambda beta) / (lambda gamma, lambda beta),
    and scaling by exactly 1/beta yields B3(beta^2/alpha) resp.
    B3(beta/gamma).
    """

    kind = "scaled"

    def __init__(self, base: Compressor, lam: float):
        if lam <= 0:
            raise ValueError("scaling factor must be positive")
        self.base = base
        self.lam = float(lam)
        self.unbiased = False  # scaled operators are biased unless lam == 1
        if lam == 1.0 and base.unbiased:
            self.unbiased = True

    def __call__(self, x, rng):
        return self.lam * self.base(x, rng)

    def omega(self, d):
        if self.unbiased:
            return self.base.omega(d)
        raise ValueError("scaled compressor is not declared unbiased")

    def b1(self, d):
        lam = self.lam
        if self.base.unbiased:
            zeta = self.base.omega(d) + 1.0
            return (lam ** 2, lam * zeta)
        c = self.base.b1(d)
        return None if c is None else (lam ** 2 * c[0], lam * c[1])

    def b2(self, d):
        lam = self.lam
        if self.base.unbiased:
            zeta = self.base.omega(d) + 1.0
            return (lam, lam * zeta)
        c = self.base.b2(d)
        return None if c is None else (lam * c[0], lam * c[1])

    def delta(self, d):
        lam = self.lam
        if self.base.unbiased:
            zeta = self.base.omega(d) + 1.0
            if lam * zeta < 2.0:
                return 1.0 / (lam * (2.0 - zeta * lam))
            return None
        c2 = self.base.b2(d)
        if c2 is not None and math.isclose(lam, 1.0 / c2[1]):
            return c2[1] / c2[0]
        c1 = self.base.b1(d)
        if c1 is not None and math.isclose(lam, 1.0 / c1[1]):
            return c1[1] ** 2 / c1[0]
        return None

    def bits(self, d):
        return self.base.bits(d)

    def __repr__(self):
        return f"Scaled({self.base!r}, lam={self.lam})"


def scale(comp: Compressor, lam: float) -> Scaled:
    return Scaled(comp, lam)


# ---------------------------------------------------------------------------
# empirical diagnostics
# ---------------------------------------------------------------------------


def empirical_variance(comp: Compressor, x, trials: int, rng) -> float:
    """Mean over trials of ||C(x) - x||^2 / ||x||^2 (deterministic per seed)."""
    x = _check_vector(x)
    if not np.any(x):
        raise ValueError("empirical variance is undefined for the zero vector")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    gen = as_generator(rng)
    denom = float(np.dot(x, x))
    acc = 0.0
    for _ in range(trials):
        c = comp(x, gen)
        acc += float(np.dot(c - x, c - x)) / denom
    return acc / trials


def empirical_second_moment(comp: Compressor, x, trials: int, rng) -> float:
    """Mean over trials of ||C(x)||^2 / ||x||^2."""
    x = _check_vector(x)
    if not np.any(x):
        raise ValueError("undefined for the zero vector")
    gen = as_generator(rng)
    denom = float(np.dot(x, x))
    acc = 0.0
    for _ in range(trials):
        c = comp(x, gen)
        acc += float(np.dot(c, c)) / denom
    return acc / trials


# ---------------------------------------------------------------------------
# registry (used by the experiment harness and the CLI)
# ---------------------------------------------------------------------------


def _build_compose(kind_outer=None, kind_inner=None, **params):
    raise ValueError("compose/induced kinds are built from explicit parts")


COMPRESSOR_KINDS = {
    "identity": lambda **kw: Identity(),
    "natural": lambda **kw: NaturalCompression(),
    "rand_k": lambda k, **kw: RandK(int(k)),
    "top_k": lambda k, **kw: TopK(int(k)),
    "adaptive_sparse": lambda **kw: AdaptiveRandomSparsification(),
    "nu_rand1": lambda **kw: NURand1(),
    "wangni": lambda k, **kw: WangniSparsification(int(k)),
    "standard_dither": lambda s, p=2.0, **kw: StandardDithering(int(s), float(p)),
    "natural_dither": lambda s, p=2.0, compress_norm=False, **kw: NaturalDithering(
        int(s), float(p), compress_norm=bool(compress_norm)
    ),
    "exp_dither": lambda base, s, p=2.0, **kw: ExponentialDithering(
        float(base), int(s), float(p)
    ),
    "unbiased_rounding": lambda base=2.0, **kw: ExponentialRounding(
        float(base), biased=False
    ),
    "biased_rounding": lambda base=2.0, **kw: ExponentialRounding(
        float(base), biased=True
    ),
    "natural_on_rand_k": lambda k, **kw: compose(NaturalCompression(), RandK(int(k))),
    "natural_on_top_k": lambda k, **kw: Composition(
        NaturalCompression(), TopK(int(k))
    ),
    "top_k_natural_dither": lambda k, s, p=2.0, **kw: Composition(
        NaturalDithering(int(s), float(p)), TopK(int(k))
    ),
    "induced_top_k": lambda k, **kw: induce(TopK(int(k)), WangniSparsification(int(k))),
}


def make_compressor(kind: str, **params) -> Compressor:
    """Instantiate a compressor by its registry name."""
    try:
        factory = COMPRESSOR_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown compressor kind {kind!r}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for compressor {kind!r}: {exc}") from None
