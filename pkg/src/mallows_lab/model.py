"""Mallows models, mixtures, sampling, and exact probability queries.

A single model is M(phi, center): Pr[p] = phi^kendall_tau(center, p) / Z,
with Z the product of truncated geometric sums.  phi = 0 is the point
mass at the center, phi = 1 the uniform distribution.  Centers may be
orderings of any distinct label set (restrictions keep their labels);
the canonical universe is 1..n.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidArgumentError
from . import perms
from .perms import (
    check_permutation,
    kendall_tau,
    max_inversions,
    perm_matrix,
    position_matrix,
)

__all__ = [
    "normalizer",
    "log_normalizer",
    "MallowsModel",
    "MallowsMixture",
    "DistributionVector",
    "vectorize",
    "sample_rim",
    "sample_mixture",
    "mixture_from_config",
    "mixture_to_config",
    "load_mixture",
    "dump_mixture",
    "write_sample_file",
    "read_sample_file",
    "normalize_assignment",
    "placement_prob",
    "PlacementOracle",
    "ExactOracle",
    "EmpiricalOracle",
    "hoeffding_samples",
    "MomentMap",
    "moment_vector",
    "distance_profile",
]

LOG_ZERO = -math.inf


def normalizer(n: int, phi: float) -> float:
    """Z_n(phi) = prod_{i=1..n} (1 + phi + ... + phi^(i-1))."""
    if n < 1:
        raise InvalidArgumentError(f"need n >= 1, got {n}")
    _check_phi(phi)
    out = 1.0
    for i in range(1, n + 1):
        out *= _geom_sum(phi, i)
    return out


def log_normalizer(n: int, phi: float) -> float:
    if n < 1:
        raise InvalidArgumentError(f"need n >= 1, got {n}")
    _check_phi(phi)
    return sum(math.log(_geom_sum(phi, i)) for i in range(1, n + 1))


def _geom_sum(phi: float, i: int) -> float:
    # 1 + phi + ... + phi^(i-1), stable for phi in [0, 1]
    if phi == 1.0:
        return float(i)
    return (1.0 - phi**i) / (1.0 - phi)


def _check_phi(phi) -> float:
    phi = float(phi)
    if not 0.0 <= phi <= 1.0 or math.isnan(phi):
        raise InvalidArgumentError(f"phi must lie in [0, 1], got {phi}")
    return phi


@dataclass(frozen=True)
class MallowsModel:
    """Single Mallows component.  center is position -> element."""

    phi: float
    center: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "phi", _check_phi(self.phi))
        center = tuple(self.center)
        if len(set(center)) != len(center) or not center:
            raise InvalidArgumentError(f"center is not a permutation: {center}")
        if any((not isinstance(x, (int, np.integer))) or x < 1 for x in center):
            raise InvalidArgumentError(f"center entries must be positive ints: {center}")
        object.__setattr__(self, "center", tuple(int(x) for x in center))

    @property
    def n(self) -> int:
        return len(self.center)

    @property
    def elements(self) -> tuple[int, ...]:
        return tuple(sorted(self.center))

    def log_pmf(self, p) -> float:
        p = check_permutation(p, self.elements)
        d = kendall_tau(self.center, p)
        if self.phi == 0.0:
            return 0.0 if d == 0 else LOG_ZERO
        return d * math.log(self.phi) - log_normalizer(self.n, self.phi)

    def pmf(self, p) -> float:
        lp = self.log_pmf(p)
        return 0.0 if lp == LOG_ZERO else math.exp(lp)

    def distance_weights(self) -> np.ndarray:
        """phi^d / Z for d = 0 .. n(n-1)/2; pmf of any p at distance d."""
        d = np.arange(max_inversions(self.n) + 1)
        if self.phi == 0.0:
            w = np.zeros(len(d))
            w[0] = 1.0
            return w
        if self.phi == 1.0:
            return np.full(len(d), 1.0 / math.factorial(self.n))
        return np.exp(d * math.log(self.phi) - log_normalizer(self.n, self.phi))


@dataclass(frozen=True)
class MallowsMixture:
    components: tuple[MallowsModel, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise InvalidArgumentError("mixture needs at least one component")
        ws = tuple(float(w) for w in self.weights)
        if len(ws) != len(comps):
            raise InvalidArgumentError("one weight per component required")
        if any(w < 0 or math.isnan(w) for w in ws):
            raise InvalidArgumentError(f"weights must be nonnegative: {ws}")
        if abs(sum(ws) - 1.0) > 1e-9:
            raise InvalidArgumentError(f"weights sum to {sum(ws)}, not 1")
        universe = comps[0].elements
        if any(c.elements != universe for c in comps):
            raise InvalidArgumentError("all components must rank the same elements")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", ws)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def n(self) -> int:
        return self.components[0].n

    @property
    def elements(self) -> tuple[int, ...]:
        return self.components[0].elements

    def pmf(self, p) -> float:
        return sum(w * c.pmf(p) for w, c in zip(self.weights, self.components))


def as_mixture(target) -> MallowsMixture:
    if isinstance(target, MallowsMixture):
        return target
    if isinstance(target, MallowsModel):
        return MallowsMixture((target,), (1.0,))
    raise InvalidArgumentError(f"expected a model or mixture, got {type(target)!r}")


# --- exact vectorization ---------------------------------------------------


@lru_cache(maxsize=64)
def distance_profile(center: tuple[int, ...]) -> np.ndarray:
    """kendall_tau(center, p) for every p over the same labels,
    rows in lexicographic order of the label set."""
    n = len(center)
    pos = position_matrix(n)
    order = np.argsort(np.argsort(center))  # center's labels -> sorted-rank
    cols = pos[:, order]  # positions of center[0], center[1], ...
    d = np.zeros(cols.shape[0], dtype=np.int16)
    for i in range(n):
        for j in range(i + 1, n):
            d += (cols[:, i] > cols[:, j]).astype(np.int16)
    d.setflags(write=False)
    return d


@dataclass(frozen=True)
class DistributionVector:
    """Probabilities over all orderings of `elements`, lexicographic rows."""

    values: np.ndarray
    elements: tuple[int, ...]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        n = len(self.elements)
        if vals.shape != (math.factorial(n),):
            raise InvalidArgumentError(
                f"need {math.factorial(n)} entries for {n} elements, got {vals.shape}"
            )
        if np.any(vals < -1e-12) or abs(vals.sum() - 1.0) > 1e-9:
            raise InvalidArgumentError("entries must be a probability vector")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "elements", tuple(self.elements))

    def tv(self, other: "DistributionVector") -> float:
        if self.elements != other.elements:
            raise InvalidArgumentError("distributions live on different label sets")
        return 0.5 * float(np.abs(self.values - other.values).sum())

    def l1(self) -> float:
        return float(np.abs(self.values).sum())


def pmf_vector(target, max_n: int | None = None) -> np.ndarray:
    """Mixture pmf over lexicographic orderings of the universe (raw array)."""
    mix = as_mixture(target)
    perms.check_enumerable(mix.n, max_n)
    out = np.zeros(math.factorial(mix.n))
    for w, comp in zip(mix.weights, mix.components):
        # relabel to sorted universe: lexicographic enumeration is shared
        out += w * comp.distance_weights()[distance_profile(comp.center)]
    return out


def vectorize(target, max_n: int | None = None) -> DistributionVector:
    mix = as_mixture(target)
    return DistributionVector(pmf_vector(mix, max_n), mix.elements)


# --- sampling ---------------------------------------------------------------


def _insertion_cdfs(phi: float, n: int) -> list[np.ndarray]:
    # cdfs[i][j] = P(jump <= j) for the element entering with i already placed
    cdfs = []
    for i in range(n):
        w = phi ** np.arange(i + 1) if phi > 0 else np.array([1.0] + [0.0] * i)
        cdfs.append(np.cumsum(w) / w.sum())
    return cdfs


def sample_rim(model: MallowsModel, rng: np.random.Generator, size: int | None = None):
    """Repeated-insertion sampler.

    Elements of the center enter in rank order; the one entering with i
    already placed jumps over v of them with P(v) ~ phi^v, v = 0..i.
    Returns a tuple when size is None, else an (size, n) int matrix.
    """
    n = model.n
    single = size is None
    m = 1 if single else int(size)
    if m < 0:
        raise InvalidArgumentError(f"size must be >= 0, got {size}")
    cdfs = _insertion_cdfs(model.phi, n)
    jumps = np.empty((m, n), dtype=np.int64)
    jumps[:, 0] = 0
    for i in range(1, n):
        u = rng.random(m)
        jumps[:, i] = np.searchsorted(cdfs[i], u, side="right")
    out = np.empty((m, n), dtype=np.int16)
    out[:, 0] = model.center[0]
    for i in range(1, n):
        idx = i - jumps[:, i]  # 0-based insertion slot
        cols = np.arange(i + 1)
        keep = cols[None, :] < idx[:, None]
        shifted = np.concatenate([np.zeros((m, 1), dtype=np.int16), out[:, :i]], axis=1)
        grown = np.concatenate([out[:, :i], np.zeros((m, 1), dtype=np.int16)], axis=1)
        out[:, : i + 1] = np.where(keep, grown, shifted)
        out[np.arange(m), idx] = model.center[i]
    if single:
        return tuple(int(x) for x in out[0])
    return out


def sample_mixture(
    mix: MallowsMixture,
    rng: np.random.Generator,
    size: int | None = None,
    with_components: bool = False,
):
    """Draw from the mixture.  Latent component indices stay internal
    unless with_components is set (trace output for debugging)."""
    mix = as_mixture(mix)
    single = size is None
    m = 1 if single else int(size)
    which = rng.choice(mix.k, size=m, p=np.asarray(mix.weights))
    rows = np.empty((m, mix.n), dtype=np.int16)
    for idx in range(mix.k):
        mask = which == idx
        if mask.any():
            rows[mask] = sample_rim(mix.components[idx], rng, size=int(mask.sum()))
    if single:
        p = tuple(int(x) for x in rows[0])
        return (p, int(which[0])) if with_components else p
    return (rows, which) if with_components else rows


# --- config and sample-file formats -----------------------------------------


def mixture_to_config(mix: MallowsMixture) -> dict:
    return {
        "n": mix.n,
        "components": [
            {"phi": c.phi, "center": list(c.center)} for c in mix.components
        ],
        "weights": list(mix.weights),
    }


def mixture_from_config(cfg: dict) -> MallowsMixture:
    try:
        n = int(cfg["n"])
        comps = tuple(
            MallowsModel(float(c["phi"]), tuple(int(x) for x in c["center"]))
            for c in cfg["components"]
        )
        weights = tuple(float(w) for w in cfg["weights"])
    except (KeyError, TypeError) as exc:
        raise InvalidArgumentError(f"bad mixture config: {exc}") from None
    for c in comps:
        if c.elements != tuple(range(1, n + 1)):
            raise InvalidArgumentError(
                f"center {c.center} is not a permutation of 1..{n}"
            )
    return MallowsMixture(comps, weights)


def load_mixture(path) -> MallowsMixture:
    with open(path) as fh:
        return mixture_from_config(json.load(fh))


def dump_mixture(mix: MallowsMixture, path) -> None:
    with open(path, "w") as fh:
        json.dump(mixture_to_config(mix), fh, indent=2)
        fh.write("\n")


def write_sample_file(path, rows, components=None) -> None:
    with open(path, "w") as fh:
        for i, row in enumerate(rows):
            comp = None if components is None else int(components[i])
            fh.write(perms.format_permutation(row, component=comp) + "\n")


def read_sample_file(path) -> list[tuple[int, ...]]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.split("#", 1)[0].strip():
                out.append(perms.parse_permutation(line))
    return out


# --- placement queries ------------------------------------------------------


def normalize_assignment(assignment, elements, n_positions=None) -> tuple:
    """Canonical form: ((element, position), ...) sorted by element.

    Validates distinct elements, distinct positions, and ranges.
    """
    pairs = tuple((int(e), int(p)) for e, p in assignment)
    elems = [e for e, _ in pairs]
    posns = [p for _, p in pairs]
    n_pos = len(elements) if n_positions is None else n_positions
    if len(set(elems)) != len(elems):
        raise InvalidArgumentError(f"duplicate element in query: {pairs}")
    if len(set(posns)) != len(posns):
        raise InvalidArgumentError(f"duplicate position in query: {pairs}")
    universe = set(elements)
    for e, p in pairs:
        if e not in universe:
            raise InvalidArgumentError(f"element {e} not in universe {sorted(universe)}")
        if not 1 <= p <= n_pos:
            raise InvalidArgumentError(f"position {p} out of range 1..{n_pos}")
    return tuple(sorted(pairs))


def hoeffding_samples(tau: float, delta: float) -> int:
    """Samples sufficient for additive error tau with prob 1 - delta."""
    if not (0 < tau < 1) or not (0 < delta < 1):
        raise InvalidArgumentError("need 0 < tau < 1 and 0 < delta < 1")
    return math.ceil(math.log(2.0 / delta) / (2.0 * tau * tau))


class PlacementOracle:
    """Answers Pr[each queried element sits at its queried position].

    event_prob extends the query with pairwise before-constraints; the
    learners never need anything richer.  tolerance is the additive error
    guarantee (0 for exact backings).
    """

    elements: tuple[int, ...]
    tolerance: float = 0.0

    @property
    def n(self) -> int:
        return len(self.elements)

    def _col(self, e: int) -> int:
        return self.elements.index(e)

    def placement_prob(self, assignment) -> float:
        raise NotImplementedError

    def event_prob(self, assignment=(), before=()) -> float:
        raise NotImplementedError


class ExactOracle(PlacementOracle):
    """Enumeration-backed oracle.

    placement_prob sums phi-powers grouped by distance (ascending d), so
    two models whose consistent-permutation distance histograms agree
    return bitwise-identical floats.
    """

    def __init__(self, target, max_n: int | None = None):
        self.mixture = as_mixture(target)
        perms.check_enumerable(self.mixture.n, max_n)
        self.elements = self.mixture.elements
        self._pos = position_matrix(self.mixture.n)
        self._profiles = [distance_profile(c.center) for c in self.mixture.components]
        self._dist_weights = [c.distance_weights() for c in self.mixture.components]
        self._pmf = pmf_vector(self.mixture, max_n)

    def _mask(self, assignment, before=()):
        mask = np.ones(self._pos.shape[0], dtype=bool)
        for e, p in assignment:
            mask &= self._pos[:, self._col(e)] == p
        for x, y in before:
            mask &= self._pos[:, self._col(x)] < self._pos[:, self._col(y)]
        return mask

    def placement_prob(self, assignment) -> float:
        assignment = normalize_assignment(assignment, self.elements)
        mask = self._mask(assignment)
        parts = np.array(
            [
                w * float(np.bincount(prof[mask], minlength=len(dw)) @ dw)
                for w, prof, dw in zip(
                    self.mixture.weights, self._profiles, self._dist_weights
                )
            ]
        )
        # canonical (sorted) accumulation: mixtures whose components give
        # the same multiset of answers return bitwise-identical sums
        parts.sort()
        return float(parts.sum())

    def event_prob(self, assignment=(), before=()) -> float:
        assignment = normalize_assignment(assignment, self.elements)
        return float(self._pmf[self._mask(assignment, before)].sum())


class EmpiricalOracle(PlacementOracle):
    """Frequency oracle over a fixed sample pool.

    tolerance is the two-sided Hoeffding radius at confidence 1 - delta
    for a single query; callers issuing many queries should widen delta.
    """

    def __init__(self, samples, elements=None, delta: float = 1e-6):
        rows = np.asarray(
            [tuple(r) for r in samples] if not isinstance(samples, np.ndarray) else samples
        )
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise InvalidArgumentError("need a nonempty (m, n) sample pool")
        self.m = rows.shape[0]
        self.elements = (
            tuple(sorted(int(x) for x in rows[0]))
            if elements is None
            else tuple(sorted(elements))
        )
        # _pos[:, j] = 1-based position of the j-th smallest label
        self._pos = np.argsort(rows, axis=1).astype(np.int16) + 1
        self.delta = float(delta)
        self.tolerance = math.sqrt(math.log(2.0 / self.delta) / (2.0 * self.m))

    @classmethod
    def from_sampling(cls, target, size: int, rng, delta: float = 1e-6):
        rows = sample_mixture(as_mixture(target), rng, size=size)
        return cls(rows, elements=as_mixture(target).elements, delta=delta)

    def _mask(self, assignment, before=()):
        mask = np.ones(self.m, dtype=bool)
        for e, p in assignment:
            mask &= self._pos[:, self._col(e)] == p
        for x, y in before:
            mask &= self._pos[:, self._col(x)] < self._pos[:, self._col(y)]
        return mask

    def placement_prob(self, assignment) -> float:
        assignment = normalize_assignment(assignment, self.elements)
        return float(self._mask(assignment).mean())

    def event_prob(self, assignment=(), before=()) -> float:
        assignment = normalize_assignment(assignment, self.elements)
        return float(self._mask(assignment, before).mean())


# --- moment maps ------------------------------------------------------------


@lru_cache(maxsize=32)
def _placement_tables(n: int, c: int):
    """Canonical key tables for order-c maps over n positions.

    placements: P(n, c) tuples in lexicographic order; lookup maps a
    position tuple (mixed-radix encoded) to its placement index.
    """
    placements = list(itertools.permutations(range(1, n + 1), c))
    lookup = np.full(n**c, -1, dtype=np.int64)
    radix = n ** np.arange(c - 1, -1, -1, dtype=np.int64)
    for i, q in enumerate(placements):
        lookup[int(np.dot(np.array(q) - 1, radix))] = i
    return placements, lookup, radix


@lru_cache(maxsize=16)
def _inverse_rank_map(n: int) -> np.ndarray:
    """Row r of perm_matrix -> lexicographic rank of its position vector."""
    out = perms.rank_rows(position_matrix(n))
    out.setflags(write=False)
    return out


class MomentMap:
    """Signed map over order-c placement queries.

    Keys run over (sorted element subset of size c, injective position
    tuple); values are stored densely in that canonical order.  For
    c == n this carries exactly the information of a signed measure on
    orderings, and event masses take a vectorized fast path.
    """

    def __init__(self, elements, c: int, values: np.ndarray):
        self.elements = tuple(sorted(elements))
        n = len(self.elements)
        if not 1 <= c <= n:
            raise InvalidArgumentError(f"need 1 <= c <= {n}, got {c}")
        self.c = int(c)
        expected = math.comb(n, c) * math.perm(n, c)
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (expected,):
            raise InvalidArgumentError(f"need {expected} entries, got {values.shape}")
        self.values = values

    # -- construction --------------------------------------------------------

    @classmethod
    def zeros(cls, elements, c: int) -> "MomentMap":
        n = len(tuple(elements))
        return cls(elements, c, np.zeros(math.comb(n, c) * math.perm(n, c)))

    @classmethod
    def from_components(cls, weighted_models, c: int, max_n=None) -> "MomentMap":
        """Sum of w * (order-c moments of model); weights may be signed."""
        weighted_models = list(weighted_models)
        if not weighted_models:
            raise InvalidArgumentError("need at least one (weight, model) pair")
        elements = weighted_models[0][1].elements
        n = len(elements)
        perms.check_enumerable(n, max_n)
        vec = np.zeros(math.factorial(n))
        for w, model in weighted_models:
            if model.elements != elements:
                raise InvalidArgumentError("models must share one universe")
            vec += w * model.distance_weights()[distance_profile(model.center)]
        return cls._from_perm_vector(elements, c, vec)

    @classmethod
    def from_mixture(cls, mix, c: int, max_n=None) -> "MomentMap":
        mix = as_mixture(mix)
        return cls.from_components(zip(mix.weights, mix.components), c, max_n)

    @classmethod
    def from_samples(cls, samples, c: int, elements=None) -> "MomentMap":
        """Plug-in order-c moments from a sample pool."""
        oracle = EmpiricalOracle(samples, elements=elements)
        n = len(oracle.elements)
        # lex rank of a sample's position vector is its canonical c == n key
        freq = np.bincount(
            perms.rank_rows(oracle._pos), minlength=math.factorial(n)
        ).astype(np.float64) / oracle.m
        if c == n:
            return cls(oracle.elements, c, freq)
        return cls._aggregate(oracle.elements, c, position_matrix(n), freq[_inverse_rank_map(n)])

    @classmethod
    def _from_perm_vector(cls, elements, c: int, vec: np.ndarray) -> "MomentMap":
        """vec is indexed by lexicographic orderings of the universe."""
        n = len(elements)
        if c == n:
            values = np.empty_like(vec)
            values[_inverse_rank_map(n)] = vec
            return cls(elements, c, values)
        return cls._aggregate(elements, c, position_matrix(n), vec)

    @classmethod
    def _aggregate(cls, elements, c: int, pos, vec) -> "MomentMap":
        n = len(elements)
        placements, lookup, radix = _placement_tables(n, c)
        n_place = len(placements)
        values = np.zeros(math.comb(n, c) * n_place)
        for s_idx, subset in enumerate(itertools.combinations(range(n), c)):
            keys = lookup[(pos[:, subset].astype(np.int64) - 1) @ radix]
            np.add.at(values, s_idx * n_place + keys, vec)
        return cls(elements, c, values)

    # -- key handling ---------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.elements)

    def query_index(self, assignment) -> int:
        assignment = normalize_assignment(assignment, self.elements)
        if len(assignment) != self.c:
            raise InvalidArgumentError(
                f"this map holds order-{self.c} queries, got {len(assignment)}"
            )
        subset = tuple(self._col(e) for e, _ in assignment)
        s_idx = _combination_rank(subset, self.n)
        placements, lookup, radix = _placement_tables(self.n, self.c)
        q = np.array([p for _, p in assignment], dtype=np.int64) - 1
        p_idx = int(lookup[int(q @ radix)])
        return s_idx * len(placements) + p_idx

    def _col(self, e: int) -> int:
        try:
            return self.elements.index(e)
        except ValueError:
            raise InvalidArgumentError(
                f"element {e} not in universe {self.elements}"
            ) from None

    def iter_queries(self):
        placements, _, _ = _placement_tables(self.n, self.c)
        i = 0
        for subset in itertools.combinations(self.elements, self.c):
            for q in placements:
                yield tuple(zip(subset, q)), float(self.values[i])
                i += 1

    def value_at(self, assignment) -> float:
        return float(self.values[self.query_index(assignment)])

    # -- arithmetic -----------------------------------------------------------

    def _like(self, values) -> "MomentMap":
        return MomentMap(self.elements, self.c, values)

    def __sub__(self, other: "MomentMap") -> "MomentMap":
        self._check_compatible(other)
        return self._like(self.values - other.values)

    def __add__(self, other: "MomentMap") -> "MomentMap":
        self._check_compatible(other)
        return self._like(self.values + other.values)

    def scale(self, a: float) -> "MomentMap":
        return self._like(self.values * float(a))

    def _check_compatible(self, other):
        if self.elements != other.elements or self.c != other.c:
            raise InvalidArgumentError("moment maps are not compatible")

    def l1(self) -> float:
        return float(np.abs(self.values).sum())

    def min_entry(self) -> float:
        return float(self.values.min())

    # -- event masses ----------------------------------------------------------

    def perm_view(self) -> np.ndarray:
        """For c == n: values reindexed by lexicographic orderings."""
        if self.c != self.n:
            raise InvalidArgumentError("perm_view needs a full-order map")
        return self.values[_inverse_rank_map(self.n)]

    def event_mass(self, assignment=(), before=()) -> float:
        """Signed mass of [assignment holds and each before-pair is ordered].

        The event must touch at most c elements.
        """
        assignment = normalize_assignment(assignment, self.elements)
        touched = {e for e, _ in assignment} | {e for pair in before for e in pair}
        if len(touched) > self.c:
            raise InvalidArgumentError(
                f"event touches {len(touched)} elements, map order is {self.c}"
            )
        if self.c == self.n:
            pos = position_matrix(self.n)
            mask = np.ones(pos.shape[0], dtype=bool)
            for e, p in assignment:
                mask &= pos[:, self._col(e)] == p
            for x, y in before:
                mask &= pos[:, self._col(x)] < pos[:, self._col(y)]
            return float(self.perm_view()[mask].sum())
        return self._event_mass_marginal(assignment, before, touched)

    def _event_mass_marginal(self, assignment, before, touched) -> float:
        # pad the touched set to exactly c elements with the smallest spares,
        # then sum values over all completions consistent with the event
        spares = [e for e in self.elements if e not in touched]
        padded = sorted(touched) + spares[: self.c - len(touched)]
        padded = sorted(padded)
        fixed = dict(assignment)
        free_elems = [e for e in padded if e not in fixed]
        free_posns = [p for p in range(1, self.n + 1) if p not in set(fixed.values())]
        total = 0.0
        for placing in itertools.permutations(free_posns, len(free_elems)):
            full = dict(fixed)
            full.update(zip(free_elems, placing))
            if any(
                x in full and y in full and full[x] >= full[y] for x, y in before
            ):
                continue
            key = tuple(sorted(full.items()))
            total += self.values[self.query_index(key)]
        return total


def _combination_rank(subset: tuple[int, ...], n: int) -> int:
    """Lexicographic rank of a sorted index-combination out of range(n)."""
    rank = 0
    prev = -1
    c = len(subset)
    for i, s in enumerate(subset):
        for x in range(prev + 1, s):
            rank += math.comb(n - x - 1, c - i - 1)
        prev = s
    return rank


def moment_vector(target, c: int, max_n: int | None = None) -> MomentMap:
    """Order-c placement moments of a model or mixture, exactly."""
    return MomentMap.from_mixture(as_mixture(target), c, max_n)


def placement_prob(target, assignment, max_n: int | None = None) -> float:
    """Exact Pr[each element at its position] under a model or mixture."""
    return ExactOracle(target, max_n).placement_prob(assignment)
