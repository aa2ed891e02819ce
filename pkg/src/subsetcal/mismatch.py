"""Element sets with size-dependent random mismatch, and subset-selection search.

The building block used everywhere else in this package: an array of n nominally
sized unit elements (transistor widths, unit currents, ...) of which exactly k are
switched on at a time.  Redundancy comes from the C(n, k) possible selections; a
calibration step picks the selection whose realized sum lands closest to (or inside
a window around) a target value.

Sizes are strictly positive throughout.  Element standard deviation follows the
usual area scaling law: sigma_i = sigma_ref * sqrt(nominal_i / size_ref).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations as _lex_combinations
from typing import Optional, Union

import numpy as np

__all__ = [
    "ConfigError",
    "DegenerateConfigurationError",
    "Uniform",
    "Arithmetic",
    "Explicit",
    "SizingScheme",
    "MismatchModel",
    "ElementSet",
    "Combination",
    "TargetWindow",
    "Exhaustive",
    "RandomSearch",
    "nominal_sizes",
    "scheme_center",
    "sample_element_set",
    "draw_realized",
    "sigma_k",
    "subset_value",
    "enumerate_combinations",
    "combination_index_matrix",
    "membership_matrix",
    "all_subset_sums",
    "find_best",
    "find_in_window",
    "balanced_combination",
]


class ConfigError(ValueError):
    """Raised for invalid configuration values (bad sizes, bad counts, ...)."""


class DegenerateConfigurationError(ValueError):
    """Raised when a sampled state cannot be analyzed (zero carrier, flat curve)."""


# ---------------------------------------------------------------------------
# sizing schemes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Uniform:
    """All n elements share one nominal size (classic equally-sized redundancy)."""

    width: float


@dataclass(frozen=True)
class Arithmetic:
    """Nominal sizes form an arithmetic sequence centered on ``mean``.

    Element i (0-based) has nominal size  mean + (i - (n-1)/2) * step.
    ``step == 0`` degenerates to Uniform(mean).  The spread of nominal sizes is
    what widens the reachable range of subset sums compared to equal sizing.
    """

    mean: float
    step: float


@dataclass(frozen=True)
class Explicit:
    """Nominal sizes given literally, one per element."""

    sizes: tuple[float, ...]


SizingScheme = Union[Uniform, Arithmetic, Explicit]


def nominal_sizes(scheme: SizingScheme, n: int) -> np.ndarray:
    """Nominal size of each of the n elements, validated strictly positive.

    Raises ConfigError naming the first offending element index if any nominal
    size comes out <= 0 (e.g. an Arithmetic step so large the low end goes
    negative).
    """
    if n < 1:
        raise ConfigError(f"element count must be >= 1, got {n}")
    if isinstance(scheme, Uniform):
        sizes = np.full(n, float(scheme.width))
    elif isinstance(scheme, Arithmetic):
        offsets = np.arange(n, dtype=float) - (n - 1) / 2.0
        sizes = float(scheme.mean) + offsets * float(scheme.step)
    elif isinstance(scheme, Explicit):
        if len(scheme.sizes) != n:
            raise ConfigError(
                f"Explicit scheme has {len(scheme.sizes)} sizes but n={n}"
            )
        sizes = np.asarray(scheme.sizes, dtype=float)
    else:  # pragma: no cover - defensive
        raise TypeError(f"unknown sizing scheme {scheme!r}")
    bad = np.nonzero(sizes <= 0.0)[0]
    if bad.size:
        raise ConfigError(
            f"nominal size of element {bad[0]} is {sizes[bad[0]]!r}; "
            "all nominal sizes must be strictly positive"
        )
    return sizes


def scheme_center(scheme: SizingScheme) -> float:
    """Central nominal size of a scheme (the mean size).

    Uniform -> width; Arithmetic -> mean; Explicit -> mean of the size list.
    This is the size whose element sigma defines sigma_k.
    """
    if isinstance(scheme, Uniform):
        return float(scheme.width)
    if isinstance(scheme, Arithmetic):
        return float(scheme.mean)
    if isinstance(scheme, Explicit):
        if not scheme.sizes:
            raise ConfigError("Explicit scheme has no sizes")
        return float(np.mean(scheme.sizes))
    raise TypeError(f"unknown sizing scheme {scheme!r}")


# ---------------------------------------------------------------------------
# mismatch model and element sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MismatchModel:
    """Random mismatch law: sigma(size) = sigma_ref * sqrt(size / size_ref)."""

    sigma_ref: float
    size_ref: float

    def __post_init__(self) -> None:
        if self.sigma_ref < 0:
            raise ConfigError(f"sigma_ref must be >= 0, got {self.sigma_ref}")
        if self.size_ref <= 0:
            raise ConfigError(f"size_ref must be > 0, got {self.size_ref}")

    def element_sigmas(self, nominal: np.ndarray) -> np.ndarray:
        return self.sigma_ref * np.sqrt(np.asarray(nominal) / self.size_ref)


@dataclass(frozen=True, eq=False)
class ElementSet:
    """One sampled instance: nominal sizes plus their realized (mismatched) values.

    ``resamples`` counts how many individual draws had to be repeated because
    they came out non-positive (diagnostic; zero in any realistic regime).
    """

    nominal: np.ndarray
    realized: np.ndarray
    resamples: int = 0

    def __post_init__(self) -> None:
        if self.nominal.shape != self.realized.shape:
            raise ConfigError("nominal and realized shapes differ")
        if np.any(self.realized <= 0.0):
            raise ConfigError("realized sizes must be strictly positive")

    @property
    def n(self) -> int:
        return int(self.nominal.shape[0])


def draw_realized(
    nominal: np.ndarray, sigmas: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, int]:
    """Draw realized = nominal + sigma * z elementwise, redrawing non-positive values.

    Works on arrays of any shape (nominal/sigmas broadcast against the draw
    shape).  Returns (realized, number_of_redraws).  The redraw loop touches only
    the offending entries, so the stream consumption — and therefore every other
    element's value — is independent of whether a redraw happened elsewhere.
    """
    nominal = np.asarray(nominal, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    realized = nominal + sigmas * rng.standard_normal(nominal.shape)
    resamples = 0
    while True:
        bad = np.nonzero(realized <= 0.0)
        count = bad[0].size
        if count == 0:
            break
        resamples += count
        nom_bad = np.broadcast_to(nominal, realized.shape)[bad]
        sig_bad = np.broadcast_to(sigmas, realized.shape)[bad]
        realized[bad] = nom_bad + sig_bad * rng.standard_normal(count)
    return realized, resamples


def sample_element_set(
    scheme: SizingScheme, model: MismatchModel, n: int, rng: np.random.Generator
) -> ElementSet:
    """Sample one element set: nominal sizes plus Gaussian mismatch per element."""
    nominal = nominal_sizes(scheme, n)
    sigmas = model.element_sigmas(nominal)
    realized, resamples = draw_realized(nominal, sigmas, rng)
    return ElementSet(nominal=nominal, realized=realized, resamples=resamples)


def sigma_k(model: MismatchModel, scheme: SizingScheme, k: int) -> float:
    """Standard deviation of a k-element subset sum, sqrt(k) * sigma(center size).

    The selection-independent yardstick used to normalize window widths and
    offsets: every k-subset sums k independent element errors whose sigma is
    (to first order, for small relative steps) the center-size sigma.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    center = scheme_center(scheme)
    return math.sqrt(k) * float(model.element_sigmas(np.array([center]))[0])


# ---------------------------------------------------------------------------
# combinations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Combination:
    """A k-subset of element indices, stored sorted ascending."""

    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        idx = self.indices
        if any(idx[i] >= idx[i + 1] for i in range(len(idx) - 1)):
            raise ConfigError(f"indices must be strictly ascending, got {idx}")
        if idx and idx[0] < 0:
            raise ConfigError(f"indices must be non-negative, got {idx}")

    @property
    def k(self) -> int:
        return len(self.indices)


def _check_nk(n: int, k: int) -> None:
    if not (1 <= k <= n):
        raise ConfigError(f"need 1 <= k <= n, got n={n} k={k}")
    if n > 24:
        # C(24,12) ~ 2.7e6 is the most this exhaustive machinery is meant for.
        raise ConfigError(f"n={n} exceeds the supported exhaustive range (n <= 24)")


@lru_cache(maxsize=None)
def combination_index_matrix(n: int, k: int) -> np.ndarray:
    """(C(n,k), k) int array of all k-subsets of range(n) in lexicographic order."""
    _check_nk(n, k)
    count = math.comb(n, k)
    out = np.fromiter(
        (i for combo in _lex_combinations(range(n), k) for i in combo),
        dtype=np.intp,
        count=count * k,
    ).reshape(count, k)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def membership_matrix(n: int, k: int) -> np.ndarray:
    """(n, C(n,k)) 0/1 float matrix; column c is the indicator of combination c.

    Lets a batch of realized vectors compute every subset sum as one matrix
    product: sums = realized @ membership_matrix(n, k).
    """
    idx = combination_index_matrix(n, k)
    out = np.zeros((n, idx.shape[0]))
    out[idx.T, np.arange(idx.shape[0])] = 1.0
    out.setflags(write=False)
    return out


def enumerate_combinations(n: int, k: int) -> tuple[Combination, ...]:
    """All k-subsets of n elements in lexicographic order of their index tuples."""
    idx = combination_index_matrix(n, k)
    return tuple(Combination(tuple(int(i) for i in row)) for row in idx)


def all_subset_sums(realized: np.ndarray, k: int) -> np.ndarray:
    """Subset sums of every k-combination, in lexicographic combination order.

    ``realized`` may be 1-D (n,) or batched (..., n); the combination axis is
    appended last.
    """
    realized = np.asarray(realized, dtype=float)
    n = realized.shape[-1]
    return realized @ membership_matrix(n, k)


def balanced_combination(n: int, k: int) -> Combination:
    """The symmetric k-subset pairing element i with its mirror n-1-i.

    For even k: indices {0, 2, ..., k-2} plus their mirrors, e.g. n=12, k=6 ->
    (0, 2, 4, 7, 9, 11).  Its nominal sum equals k * mean exactly for any
    arithmetic sizing, which makes it the natural pre-calibration default.
    """
    _check_nk(n, k)
    if k % 2:
        raise ConfigError(f"balanced combination needs even k, got k={k}")
    low = [2 * i for i in range(k // 2)]
    high = [n - 1 - i for i in low]
    if low and low[-1] >= min(high):
        raise ConfigError(f"no balanced combination for n={n} k={k}")
    return Combination(tuple(sorted(low + high)))


# ---------------------------------------------------------------------------
# selection search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TargetWindow:
    """Closed acceptance interval [center - width/2, center + width/2].

    ``center`` is an absolute target value (for the redundancy studies: the
    nominal k-subset sum plus the configured offset).
    """

    center: float
    width: float

    def __post_init__(self) -> None:
        if self.width < 0:
            raise ConfigError(f"window width must be >= 0, got {self.width}")

    @property
    def low(self) -> float:
        return self.center - self.width / 2.0

    @property
    def high(self) -> float:
        return self.center + self.width / 2.0

    def contains(self, value: float) -> bool:
        # endpoint form, not |value - center| <= width/2: the subtraction form
        # silently excludes exactly-representable decimal boundaries (e.g.
        # center 1.0, width 0.2, value 1.1).
        return self.low <= value <= self.high


@dataclass(frozen=True)
class Exhaustive:
    """Scan all C(n,k) combinations in lexicographic order."""


@dataclass(frozen=True, eq=False)
class RandomSearch:
    """Uniform random combination draws, with replacement, up to trial_limit.

    The full trial budget is drawn from ``rng`` upfront (one integers() call)
    and scanned for the first hit; identical in distribution and outcome to a
    draw-until-hit loop, but deterministic to reason about and vectorizable.
    """

    trial_limit: int
    rng: np.random.Generator

    def __post_init__(self) -> None:
        if self.trial_limit < 1:
            raise ConfigError(f"trial_limit must be >= 1, got {self.trial_limit}")


SearchStrategy = Union[Exhaustive, RandomSearch]


def subset_value(element_set: ElementSet, combination: Combination) -> float:
    """Sum of the realized values of the selected elements."""
    idx = np.asarray(combination.indices, dtype=np.intp)
    if idx.size and idx[-1] >= element_set.n:
        raise ConfigError(
            f"combination index {idx[-1]} out of range for n={element_set.n}"
        )
    return float(element_set.realized[idx].sum())


def find_best(
    element_set: ElementSet, k: int, target: float
) -> tuple[Combination, float]:
    """Best-match selection: the combination minimizing |subset sum - target|.

    Returns (combination, signed residual) with residual = subset_value - target.
    Ties on the absolute residual resolve to the earliest combination in
    lexicographic order (argmin semantics over the lexicographic enumeration).
    """
    n = element_set.n
    _check_nk(n, k)
    sums = all_subset_sums(element_set.realized, k)
    best = int(np.argmin(np.abs(sums - target)))
    combo = Combination(tuple(int(i) for i in combination_index_matrix(n, k)[best]))
    return combo, float(sums[best] - target)


def find_in_window(
    element_set: ElementSet,
    k: int,
    window: TargetWindow,
    strategy: SearchStrategy = Exhaustive(),
) -> Optional[Combination]:
    """First selection whose subset sum lands inside the closed window, or None.

    Exhaustive: first hit in lexicographic order; None means no combination
    qualifies (equivalently: the best |residual| exceeds width/2).
    RandomSearch: first hit among trial_limit uniform draws (with replacement);
    None merely means the budget ran out.
    """
    n = element_set.n
    _check_nk(n, k)
    lo, hi = window.low, window.high
    idx = combination_index_matrix(n, k)
    if isinstance(strategy, Exhaustive):
        sums = all_subset_sums(element_set.realized, k)
        hits = np.nonzero((sums >= lo) & (sums <= hi))[0]
        if hits.size == 0:
            return None
        row = idx[int(hits[0])]
    elif isinstance(strategy, RandomSearch):
        draws = strategy.rng.integers(0, idx.shape[0], size=strategy.trial_limit)
        sums = element_set.realized[idx[draws]].sum(axis=1)
        hits = np.nonzero((sums >= lo) & (sums <= hi))[0]
        if hits.size == 0:
            return None
        row = idx[int(draws[int(hits[0])])]
    else:  # pragma: no cover - defensive
        raise TypeError(f"unknown search strategy {strategy!r}")
    return Combination(tuple(int(i) for i in row))
