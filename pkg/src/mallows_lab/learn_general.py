"""Peeling learner: k components, arbitrary scales, from placement moments.

The moment map of a mixture is linear in its components, so the pipeline
isolates and subtracts: list near-point-mass components by raw frequency
and guess them away, kill every component whose scale differs from the
current guess with contracted front-pair contrasts, read the survivor's
relative order out of the contracted map, then peel the recovered
component off and recurse.  Candidate k-tuples are screened by cheap
elimination rules and settled by a componentwise closeness test.
"""

from __future__ import annotations

import functools
import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from .distances import make_bound_check
from .errors import (
    DegenerateInputError,
    InvalidArgumentError,
    LearningFailure,
    RecoveryFailure,
)
from .learn_separated import _pattern_assignment, _pattern_seq, _patterns, prefix_prob
from .model import (
    ExactOracle,
    MallowsMixture,
    MallowsModel,
    MomentMap,
    as_mixture,
    pmf_vector,
    sample_mixture,
    vectorize,
)
from .structures import (
    BlockStructure,
    OrderedBlockStructure,
    block_positions,
    block_prob,
    ortho_test_vector,
    pair_test_vector,
    restricted_vector,
)

__all__ = [
    "CandidateEntry",
    "GuessBundle",
    "LearnerBudget",
    "learn_mixture_general",
    "learn_single_general",
    "learn_single_same_phi",
    "peel_components",
    "remove_small_phi",
    "small_phi_candidates",
    "test_componentwise_close",
]

_log = logging.getLogger(__name__)

_DENOM_FLOOR = 1e-12
_TUPLE_SCAN_CAP = 5_000_000


@dataclass(frozen=True)
class CandidateEntry:
    """One guessed component: mixing weight, scale, center."""

    weight: float
    phi: float
    center: tuple

    def __post_init__(self):
        w = float(self.weight)
        if not 0.0 <= w <= 1.0:
            raise InvalidArgumentError(f"weight must lie in [0, 1], got {w}")
        p = float(self.phi)
        if not 0.0 <= p <= 1.0:
            raise InvalidArgumentError(f"phi must lie in [0, 1], got {p}")
        center = tuple(int(e) for e in self.center)
        if len(set(center)) != len(center):
            raise InvalidArgumentError(f"center elements must be distinct: {center}")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "phi", p)
        object.__setattr__(self, "center", center)

    def model(self) -> MallowsModel:
        return MallowsModel(self.phi, self.center)

    def sort_key(self):
        return (self.center, self.phi, self.weight)

    def as_dict(self) -> dict:
        return {"weight": self.weight, "phi": self.phi, "center": list(self.center)}


@dataclass(frozen=True)
class LearnerBudget:
    """Resource and tolerance knobs for the peeling learner.

    alpha: mixing weight floor
    mu: pairwise total-variation separation of the true components
    theta: target parameter accuracy
    delta: failure probability budget
    grid_step: scale grid resolution
    moment_order: working moment order (default min(10 k^2, n))
    sample_count: draws per closeness test in sampled mode
    tolerance: closeness-test threshold override
    max_guesses: cap on (pair, scale, structure) guess branches
    max_removal_guesses: cap on near-point-mass subtraction guesses
    max_candidate_tuples: cap on k-tuples sent to the closeness test
    peel_branches: recovered components recursed on per peeling level
    negativity_tol: most negative residual entry a subtraction may leave
    """

    alpha: float
    mu: float = 0.05
    theta: float = 0.05
    delta: float = 0.1
    grid_step: float = 0.1
    moment_order: int | None = None
    sample_count: int = 100_000
    tolerance: float | None = None
    max_guesses: int = 50_000
    max_removal_guesses: int = 200
    max_candidate_tuples: int = 500_000
    peel_branches: int = 8
    negativity_tol: float = 0.01

    def __post_init__(self):
        for name in ("alpha", "mu", "theta", "delta", "grid_step"):
            x = float(getattr(self, name))
            if not 0.0 < x < 1.0:
                raise InvalidArgumentError(f"{name} must lie in (0, 1), got {x}")
            object.__setattr__(self, name, x)
        if self.moment_order is not None and int(self.moment_order) < 1:
            raise InvalidArgumentError("moment_order must be positive")
        for name in (
            "sample_count",
            "max_guesses",
            "max_removal_guesses",
            "max_candidate_tuples",
            "peel_branches",
        ):
            if int(getattr(self, name)) < 1:
                raise InvalidArgumentError(f"{name} must be positive")
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.tolerance is not None and not float(self.tolerance) > 0.0:
            raise InvalidArgumentError("tolerance must be positive")
        if float(self.negativity_tol) < 0.0:
            raise InvalidArgumentError("negativity_tol must be >= 0")
        object.__setattr__(self, "negativity_tol", float(self.negativity_tol))

    def epsilon(self, n: int) -> float:
        """Accuracy unit mu^2 / (10 n^3); the elimination rules are stated in it."""
        return self.mu**2 / (10.0 * n**3)

    def order(self, k: int, n: int) -> int:
        c = self.moment_order if self.moment_order is not None else min(10 * k * k, n)
        c = int(c)
        if c > n:
            raise InvalidArgumentError(f"moment order {c} exceeds n = {n}")
        return c

    def grid(self) -> tuple:
        """Positive multiples of grid_step strictly inside (0, 1)."""
        steps = int(math.floor(1.0 / self.grid_step + 1e-9))
        vals = (round(i * self.grid_step, 12) for i in range(1, steps + 1))
        return tuple(v for v in vals if v < 1.0)

    def phi_grid(self, n: int) -> tuple:
        """Grid points usable as live scales: 1/(2n) <= phi <= 1 - epsilon."""
        lo = 1.0 / (2 * n)
        hi = 1.0 - self.epsilon(n)
        return tuple(g for g in self.grid() if lo - 1e-12 <= g <= hi)

    def small_phi_grid(self, n: int) -> tuple:
        """Near-point-mass scales: zero plus grid points below 1/(2n)."""
        lo = 1.0 / (2 * n)
        return (0.0,) + tuple(g for g in self.grid() if g < lo - 1e-12)

    def weight_grid(self) -> tuple:
        return tuple(g for g in self.grid() if g >= self.alpha / 2 - 1e-12) + (1.0,)


@dataclass(frozen=True)
class GuessBundle:
    """Ordered-block guess for same-scale order recovery.

    structure holds the target component's blocks with their inner orders;
    other_orders[i][a] is rival i's guessed inner order of block a.
    """

    structure: OrderedBlockStructure
    other_orders: tuple

    def __post_init__(self):
        if not isinstance(self.structure, OrderedBlockStructure):
            raise InvalidArgumentError("structure must be an OrderedBlockStructure")
        blocks = self.structure.blocks
        rows = []
        for row in self.other_orders:
            row = tuple(tuple(int(e) for e in o) for o in row)
            if len(row) != len(blocks):
                raise InvalidArgumentError("one inner order per block required")
            for o, b in zip(row, blocks):
                if sorted(o) != sorted(b):
                    raise InvalidArgumentError(
                        f"{o} is not an ordering of the block {tuple(sorted(b))}"
                    )
            rows.append(row)
        object.__setattr__(self, "other_orders", tuple(rows))

    @property
    def rivals(self) -> int:
        return len(self.other_orders)


# --- near-point-mass components -------------------------------------------------


def small_phi_candidates(samples, alpha: float) -> list:
    """Rankings whose raw sample frequency reaches alpha / 4.

    A component with scale below 1/(2n) keeps at least half its mass on
    its center, so every such center with mixing weight >= alpha surfaces
    here; frequencies sum to one, so at most 4 / alpha rows clear the cut.
    """
    if not 0.0 < float(alpha) <= 1.0:
        raise InvalidArgumentError(f"alpha must lie in (0, 1], got {alpha}")
    rows = np.asarray(samples, dtype=np.int64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise InvalidArgumentError("samples must be a nonempty 2-d array of rankings")
    m = rows.shape[0]
    uniq, counts = np.unique(rows, axis=0, return_counts=True)
    elements = np.sort(uniq[0])
    if not (np.sort(uniq, axis=1) == elements).all():
        raise InvalidArgumentError("rows must all rank the same element set")
    pairs = [
        (int(cnt), tuple(int(x) for x in row))
        for row, cnt in zip(uniq, counts)
        if cnt / m >= float(alpha) / 4.0
    ]
    pairs.sort(key=lambda t: (-t[0], t[1]))
    out = [row for _, row in pairs]
    assert len(out) <= int(4.0 / float(alpha) + 1e-9)
    return out


def remove_small_phi(v: MomentMap, guesses) -> MomentMap:
    """Subtract guessed near-point-mass components from the moment map."""
    if not isinstance(v, MomentMap):
        raise InvalidArgumentError("v must be a MomentMap")
    guesses = list(guesses)
    if not guesses:
        return v
    delta = MomentMap.from_components(
        [(g.weight, MallowsModel(g.phi, g.center)) for g in guesses], v.c
    )
    return v - delta


# --- same-scale order recovery ---------------------------------------------------


def _contract_axes(tensor: np.ndarray, vectors) -> float:
    out = tensor
    for vec in reversed(list(vectors)):
        out = out @ vec
    return float(out)


def _event_tensor(v: MomentMap, blocks, before=()) -> np.ndarray:
    """Block-event masses read out of a signed moment map.

    Entry [i_1, ..., i_j]: mass of [every block a consecutive run, runs in
    block order, block a arranged by its i_a-th lexicographic inner order,
    every before-pair respected].  No blocks means a plain before-mass.
    """
    sets = [tuple(sorted(b)) for b in blocks]
    sizes = [len(s) for s in sets]
    starts = block_positions(sizes, v.n)
    axes = [list(itertools.permutations(s)) for s in sets]
    shape = tuple(math.factorial(s) for s in sizes)
    values = np.zeros(shape)
    for idx in itertools.product(*(range(d) for d in shape)):
        orders = [axes[i][pos] for i, pos in enumerate(idx)]
        total = 0.0
        for st in starts:
            assignment = [
                (e, st[i] + off)
                for i, order in enumerate(orders)
                for off, e in enumerate(order)
            ]
            total += v.event_mass(assignment=assignment, before=before)
        values[idx] = total
    return values


def _bundle_vectors(phi: float, guess: GuessBundle):
    """Per-block unit vectors orthogonal to every differing rival order."""
    vectors, projs = [], []
    for a, block in enumerate(guess.structure.blocks):
        target = restricted_vector(phi, block)
        others = [
            restricted_vector(phi, row[a])
            for row in guess.other_orders
            if row[a] != block
        ]
        unit, proj = ortho_test_vector(target, others)
        vectors.append(unit)
        projs.append(proj)
    return vectors, projs


def _wins_order(items, pref):
    wins = {e: 0 for e in items}
    for (x, y), x_first in pref.items():
        wins[x if x_first else y] += 1
    return tuple(sorted(items, key=lambda e: (-wins[e], e)))


def _three_cycle(items, pref):
    def first(a, b):
        return pref[(a, b)] if (a, b) in pref else not pref[(b, a)]

    for a, b, c in itertools.combinations(items, 3):
        if first(a, b) == first(b, c) == first(c, a):
            return (a, b, c)
    return None


def _interleave_blocks(base, blocks) -> list:
    """All fillings keeping the recovered outside order and the structure:
    blocks stay consecutive runs placed in block order."""
    out = []

    def rec(seq, lo, i):
        if i == len(blocks):
            out.append(tuple(seq))
            return
        run = list(blocks[i])
        for g in range(lo, len(seq) + 1):
            rec(seq[:g] + run + seq[g:], g + len(run), i + 1)

    rec(list(base), 0, 0)
    return out


def learn_single_same_phi(v: MomentMap, phi: float, guess) -> list:
    """Full-universe orderings consistent with one shared-scale component.

    Rivals at the same scale cancel no pairwise contrast on their own, so
    the guess supplies an ordered block structure the target satisfies and
    each rival's inner orders; contracting the block events against
    vectors orthogonal to every differing rival order leaves only the
    target's pairwise signal.  The outside order falls out of a win-count
    tournament; the block runs are then interleaved at every admissible
    spot.  guess None means no rivals.  A tie goes to the smaller element
    (logged); a non-transitive tournament raises RecoveryFailure naming a
    violating triple.
    """
    if not isinstance(v, MomentMap):
        raise InvalidArgumentError("v must be a MomentMap")
    phi = float(phi)
    if not 0.0 <= phi <= 1.0:
        raise InvalidArgumentError(f"need 0 <= phi <= 1, got {phi}")
    if guess is None:
        blocks, vectors = (), []
        k_eff = 1
    else:
        if not isinstance(guess, GuessBundle):
            raise InvalidArgumentError("guess must be a GuessBundle or None")
        blocks = guess.structure.blocks
        missing = set(itertools.chain.from_iterable(blocks)) - set(v.elements)
        if missing:
            raise InvalidArgumentError(
                f"structure elements {sorted(missing)} lie outside the map"
            )
        vectors, _ = _bundle_vectors(phi, guess)
        k_eff = guess.rivals + 1
    placed = set(itertools.chain.from_iterable(blocks))
    outside = [e for e in v.elements if e not in placed]
    size = sum(len(b) for b in blocks)
    if len(outside) >= 2 and size + 2 > v.c:
        raise InvalidArgumentError(
            f"an order-{v.c} map cannot carry the structure plus a pair "
            f"({size} + 2 elements)"
        )
    pref = {}
    for x, y in itertools.combinations(outside, 2):
        s_xy = _contract_axes(_event_tensor(v, blocks, before=((x, y),)), vectors)
        s_yx = _contract_axes(_event_tensor(v, blocks, before=((y, x),)), vectors)
        if s_xy == s_yx:
            _log.debug("order tie between %s and %s; keeping %s first", x, y, x)
        pref[(x, y)] = s_xy >= s_yx
    triple = _three_cycle(outside, pref)
    if triple is not None:
        raise RecoveryFailure(
            f"pairwise order recovery is not transitive on {triple}", triple
        )
    base = _wins_order(outside, pref)
    out = _interleave_blocks(base, blocks)
    assert len(out) <= v.n ** (4 * k_eff) * math.factorial(2 * k_eff) ** k_eff
    return out


# --- single-component listing under mixed scales ---------------------------------


def _pair_guesses(elements, m: int):
    if m == 0:
        yield ()
        return
    for flat in itertools.permutations(elements, 2 * m):
        yield tuple((flat[2 * a], flat[2 * a + 1]) for a in range(m))


def _bundle_guesses(elements, j: int):
    """Deterministic same-scale guesses: the target is told apart from each
    of its j - 1 rivals by one flipped adjacent pair."""
    if j <= 1:
        yield None
        return
    rivals = j - 1
    if len(elements) < 2 * rivals:
        return
    for flat in itertools.permutations(elements, 2 * rivals):
        pairs = tuple((flat[2 * a], flat[2 * a + 1]) for a in range(rivals))
        others = tuple(
            tuple(
                (pairs[a][1], pairs[a][0]) if a == i else pairs[a]
                for a in range(rivals)
            )
            for i in range(rivals)
        )
        yield GuessBundle(OrderedBlockStructure(pairs), others)


def _phi_splits(grid, m: int):
    for p0 in grid:
        if m == 0:
            yield p0, ()
            continue
        fars = [g for g in grid if g != p0]
        for combo in itertools.product(fars, repeat=m):
            yield p0, combo


def _pattern_masses(v: MomentMap, pair_tuple, x_elements, c_res) -> np.ndarray:
    """Joint masses of [front pair pattern] x [restricted placement query].

    Row p, column q: mass of [pair a fills slots 2a+1, 2a+2 oriented by
    bit p_a, and the q-th restricted placement holds]; restricted position
    r means absolute position 2m + r once the front event is in force.
    """
    shift = 2 * len(pair_tuple)
    queries = [asg for asg, _ in MomentMap.zeros(x_elements, c_res).iter_queries()]
    pats = _patterns(len(pair_tuple))
    masses = np.zeros((len(pats), len(queries)))
    for row, pat in enumerate(pats):
        front = list(_pattern_assignment(pair_tuple, pat))
        for col, asg in enumerate(queries):
            masses[row, col] = v.event_mass(
                assignment=front + [(e, p + shift) for e, p in asg]
            )
    return masses


def _insert_pairs(base, pair_tuple) -> list:
    """Each front pair re-enters the center as an adjacent run, anywhere."""
    outs = {tuple(base)}
    for unit in pair_tuple:
        outs = {
            seq[:g] + tuple(unit) + seq[g:]
            for seq in outs
            for g in range(len(seq) + 1)
        }
    return sorted(outs)


def _candidate_weight(residual, p0, base, center, info, pair_tuple, zvec, n_subsets):
    """Invert the isolating contraction at the candidate's own parameters.

    The front contrast scales the survivor by D = sum over patterns of
    (contrast weight x front-sequence probability); a structure guess adds
    the block-event probability times the orthogonal projections.  All
    factors are closed-form at the guessed (scale, center), so the weight
    is the contracted mass divided by them.  None flags a dead denominator.
    """
    if info is None:
        z = float(residual.values.sum()) / n_subsets
    else:
        bundle, vectors, projs = info
        tensor = _event_tensor(residual, bundle.structure.blocks)
        num = _contract_axes(tensor, vectors)
        p_block = block_prob(
            ExactOracle(MallowsModel(p0, base)),
            BlockStructure(tuple(tuple(sorted(b)) for b in bundle.structure.blocks)),
        )
        den = p_block * math.prod(projs)
        if abs(den) < _DENOM_FLOOR:
            return None
        z = num / den
    d = 0.0
    for zw, pat in zip(zvec, _patterns(len(pair_tuple))):
        d += float(zw) * prefix_prob(p0, center, _pattern_seq(pair_tuple, pat))
    if abs(d) < _DENOM_FLOOR or not math.isfinite(z):
        return None
    w = z / d
    if not math.isfinite(w) or w <= _DENOM_FLOOR:
        return None
    return w


def _merge_candidates(entries) -> list:
    """Canonical (center, scale, weight) sort with near-duplicates collapsed.

    Distinct weights for one (center, scale) stay separate entries: a wrong
    guess route can land on a true center with a contaminated weight, and
    collapsing would risk losing the clean one.
    """
    best = {}
    for e in entries:
        best.setdefault((e.center, e.phi, round(e.weight, 6)), e)
    return sorted(best.values(), key=lambda e: e.sort_key())


def learn_single_general(v: MomentMap, k: int, budget: LearnerBudget) -> list:
    """Candidate (weight, scale, center) entries covering every component.

    Outer walk: how many rival scale classes to kill (m), which front
    pairs separate them, and which grid scales everyone carries.  A pair
    contrast cancels each component whose scale matches the far guess and
    whose pair is flipped, leaving a restricted moment map over the
    untouched elements for the shared-scale recovery; the weight of each
    recovered center comes from inverting that same contraction.
    """
    if not isinstance(v, MomentMap):
        raise InvalidArgumentError("v must be a MomentMap")
    if not isinstance(budget, LearnerBudget):
        raise InvalidArgumentError("budget must be a LearnerBudget")
    if int(k) < 1:
        raise InvalidArgumentError(f"need k >= 1, got {k}")
    k = int(k)
    elements, c = v.elements, v.c
    grid = budget.phi_grid(v.n)
    if not grid:
        return []
    found = []
    used = 0
    capped = False
    for m in range(k):
        if capped or 2 * m >= c or 2 * m >= v.n:
            break
        j = k - m
        for pair_tuple in _pair_guesses(elements, m):
            if capped:
                break
            pair_elems = {e for p in pair_tuple for e in p}
            x_elements = tuple(e for e in elements if e not in pair_elems)
            c_res = min(c - 2 * m, len(x_elements))
            if c_res < min(2, len(x_elements)) or c_res < 1:
                continue
            masses = (
                _pattern_masses(v, pair_tuple, x_elements, c_res) if m else None
            )
            n_subsets = math.comb(len(x_elements), c_res)
            for p0, fars in _phi_splits(grid, m):
                if capped:
                    break
                zvec = np.ones(1)
                for f in fars:
                    zvec = np.kron(zvec, pair_test_vector(f, x_first=False))
                residual = (
                    v if m == 0 else MomentMap(x_elements, c_res, zvec @ masses)
                )
                for bundle in _bundle_guesses(x_elements, j):
                    used += 1
                    if used > budget.max_guesses:
                        capped = True
                        break
                    if (
                        bundle is not None
                        and len(x_elements) - bundle.structure.size >= 2
                        and bundle.structure.size + 2 > c_res
                    ):
                        continue
                    info = None
                    try:
                        if bundle is not None:
                            vectors, projs = _bundle_vectors(p0, bundle)
                            info = (bundle, vectors, projs)
                        bases = learn_single_same_phi(residual, p0, bundle)
                    except (RecoveryFailure, DegenerateInputError):
                        continue
                    for base in bases:
                        for center in _insert_pairs(base, pair_tuple):
                            w = _candidate_weight(
                                residual,
                                p0,
                                base,
                                center,
                                info,
                                pair_tuple,
                                zvec,
                                n_subsets,
                            )
                            if w is None:
                                continue
                            found.append(CandidateEntry(min(w, 1.0), p0, center))
    if capped:
        _log.info(
            "guess budget %d exhausted; candidate list truncated", budget.max_guesses
        )
    return _merge_candidates(found)


def peel_components(v: MomentMap, k: int, budget: LearnerBudget) -> list:
    """Learn one component, subtract it, recurse on the rest.

    Returns the union over all levels.  Only the heaviest peel_branches
    candidates branch, and a subtraction that drives the residual far
    negative is discarded as a mis-guess.
    """
    if int(k) < 1:
        raise InvalidArgumentError(f"need k >= 1, got {k}")
    k = int(k)
    found = learn_single_general(v, k, budget)
    if k == 1:
        return found
    out = list(found)
    branch = sorted(
        (e for e in found if e.weight >= budget.alpha / 2),
        key=lambda e: (-e.weight, e.center, e.phi),
    )
    taken = 0
    for cand in branch:
        if taken >= budget.peel_branches:
            break
        u = v - MomentMap.from_components([(cand.weight, cand.model())], v.c)
        # a subtraction that was never there drives the residual negative
        if u.min_entry() < -budget.negativity_tol:
            continue
        taken += 1
        out.extend(peel_components(u, k - 1, budget))
    return _merge_candidates(out)


# --- candidate screening and the end-to-end learner ------------------------------


def _as_exact(source):
    if isinstance(source, (MallowsModel, MallowsMixture)):
        return as_mixture(source)
    if isinstance(source, ExactOracle):
        return source.mixture
    return None


def test_componentwise_close(source, candidate, budget: LearnerBudget, rng=None):
    """Placement-moment L1 gap between source and candidate, thresholded.

    Exact sources (model, mixture, exact oracle) compare closed-form maps
    at the working order; sample pools compare a plug-in map against fresh
    draws from the candidate at order two, with the threshold lifted to
    the sampling noise floor.  Relabeling the candidate's components
    changes nothing: only mixture moments enter.
    """
    if not isinstance(budget, LearnerBudget):
        raise InvalidArgumentError("budget must be a LearnerBudget")
    mix = as_mixture(candidate)
    k = len(mix.components)
    n = mix.n
    elements = mix.components[0].elements
    truth = _as_exact(source)
    if truth is not None:
        if truth.components[0].elements != elements:
            raise InvalidArgumentError("source and candidate universes differ")
        c = budget.order(k, n)
        v_true = MomentMap.from_mixture(truth, c)
        v_cand = MomentMap.from_mixture(mix, c)
        threshold = budget.tolerance if budget.tolerance is not None else 1e-8
        detail = {"mode": "exact", "order": c, "entries": int(v_true.values.size)}
    else:
        rows = np.asarray(source, dtype=np.int64)
        if rows.ndim != 2:
            raise InvalidArgumentError("source must be exact-like or a sample array")
        c = budget.order(k, n) if budget.moment_order is not None else min(2, n)
        v_true = MomentMap.from_samples(rows, c, elements=elements)
        rng = np.random.default_rng(0) if rng is None else rng
        v_cand = MomentMap.from_samples(
            sample_mixture(mix, rng, budget.sample_count), c, elements=elements
        )
        entries = v_true.values.size
        floor = 3.0 * (
            math.sqrt(entries / rows.shape[0])
            + math.sqrt(entries / budget.sample_count)
        )
        threshold = budget.tolerance if budget.tolerance is not None else floor
        detail = {
            "mode": "sampled",
            "order": c,
            "entries": int(entries),
            "true_draws": int(rows.shape[0]),
            "candidate_draws": int(budget.sample_count),
        }
    measured = (v_true - v_cand).l1()
    return make_bound_check("componentwise_close", measured, threshold, "<=", detail)


test_componentwise_close.__test__ = False  # spec-mandated name, not a pytest case


def _heavy_orderings_exact(mix, alpha: float) -> list:
    """Exact-mode stand-in for the frequency cut: orderings with pmf >= alpha/4."""
    vec = vectorize(mix)
    elements = mix.components[0].elements
    pairs = [
        (float(p), perm)
        for p, perm in zip(vec.values, itertools.permutations(elements))
        if p >= alpha / 4.0
    ]
    pairs.sort(key=lambda t: (-t[0], t[1]))
    return [perm for _, perm in pairs]


def _removal_guesses(heavy, k, budget, n):
    """Near-point-mass subtraction guesses, cheapest first: nothing, then
    grid (scale, weight) choices over subsets of the heavy orderings."""
    yield ()
    count = 0
    small_grid = budget.small_phi_grid(n)
    w_grid = budget.weight_grid()
    for j in range(1, min(k, len(heavy)) + 1):
        for subset in itertools.combinations(heavy, j):
            for phis in itertools.product(small_grid, repeat=j):
                for ws in itertools.product(w_grid, repeat=j):
                    if sum(ws) > 1.0 + 1e-9:
                        continue
                    yield tuple(
                        CandidateEntry(w, p, perm)
                        for w, p, perm in zip(ws, phis, subset)
                    )
                    count += 1
                    if count >= budget.max_removal_guesses:
                        return


def _screen_pool(entries, budget: LearnerBudget, eps: float, k: int) -> list:
    # every rival component holds at least alpha of the mass
    ceiling = 1.0 - budget.alpha * (k - 1) + 1e-9
    keep = [
        e
        for e in _merge_candidates(entries)
        if budget.alpha / 2 <= e.weight <= ceiling and e.phi <= 1.0 - eps / 2
    ]
    keep.sort(key=lambda e: (e.weight, e.center, e.phi))
    return keep


def _weight_window_tuples(pool, k: int, lo: float, hi: float):
    """Index tuples over a weight-ascending pool whose weights sum into
    [lo, hi], in lexicographic index order, pruned by partial sums."""
    ws = [e.weight for e in pool]
    n = len(ws)
    if k > n:
        return
    prefix = [0.0]
    for w in ws:
        prefix.append(prefix[-1] + w)

    def min_tail(i, t):
        return prefix[i + t] - prefix[i]

    def max_tail(t):
        return prefix[n] - prefix[n - t]

    def rec(start, left, acc):
        if left == 0:
            yield ()
            return
        for i in range(start, n - left + 1):
            w = ws[i]
            if acc + w + min_tail(i + 1, left - 1) > hi + 1e-12:
                break  # weights ascend, every later i overshoots too
            if acc + w + max_tail(left - 1) < lo - 1e-12:
                continue
            for rest in rec(i + 1, left - 1, acc + w):
                yield (i, *rest)

    yield from rec(0, k, 0.0)


def _tuple_eliminated(tup, eps: float) -> bool:
    for a, b in itertools.combinations(tup, 2):
        if a.center == b.center and abs(a.phi - b.phi) <= eps / 10.0:
            return True
    return False


@functools.lru_cache(maxsize=8)
def _orderings_array(elements) -> np.ndarray:
    return np.array(list(itertools.permutations(elements)), dtype=np.int64)


def _placement_matrix(model: MallowsModel) -> np.ndarray:
    """Single-position marginals: row element index, column position."""
    elements = np.array(model.elements, dtype=np.int64)
    n = len(elements)
    pmf = pmf_vector(model)
    orderings = _orderings_array(model.elements)
    out = np.zeros((n, n))
    for p in range(n):
        idx = np.searchsorted(elements, orderings[:, p])
        np.add.at(out[:, p], idx, pmf)
    return out


def _first_order_map(v: MomentMap) -> np.ndarray:
    """The same marginals read out of a (possibly empirical) moment map."""
    n = v.n
    out = np.zeros((n, n))
    for i, e in enumerate(v.elements):
        for p in range(n):
            out[i, p] = v.event_mass(assignment=((e, p + 1),))
    return out


class _TupleJudge:
    """Moment comparison for candidate k-tuples against one source.

    Exact sources: per-entry order-c maps are cached, so a tuple's gap is
    one linear combination; the threshold matches test_componentwise_close.
    Sample sources: an analytic first-order prescreen throws out tuples
    whose single-position marginals already miss, and survivors get the
    full sampled closeness test, capped because each one draws fresh
    candidate samples.
    """

    SAMPLED_TEST_CAP = 1_000

    def __init__(self, source, truth, rows, v, k, budget, rng):
        self.source = source
        self.budget = budget
        self.rng = rng
        self.exact = truth is not None
        self.sampled_tests = 0
        if self.exact:
            self.v_ref = v  # order matches budget.order(k, n) by construction
            self.threshold = (
                budget.tolerance if budget.tolerance is not None else 1e-8
            )
            self.prescreen = None
        else:
            n = rows.shape[1]
            self.v_ref = None
            self.prescreen = _first_order_map(MomentMap.from_samples(rows, 1))
            self.prescreen_tol = 0.25 * n * budget.grid_step + 5.0 * math.sqrt(
                n * n / rows.shape[0]
            )
        self._entry_maps = {}
        self._entry_placements = {}

    def _component_values(self, entry: CandidateEntry) -> np.ndarray:
        key = (entry.phi, entry.center)
        vals = self._entry_maps.get(key)
        if vals is None:
            vals = MomentMap.from_components(
                [(1.0, entry.model())], self.v_ref.c
            ).values
            self._entry_maps[key] = vals
        return vals

    def _placements(self, entry: CandidateEntry) -> np.ndarray:
        key = (entry.phi, entry.center)
        mat = self._entry_placements.get(key)
        if mat is None:
            mat = _placement_matrix(entry.model())
            self._entry_placements[key] = mat
        return mat

    def positivity_screen(self, pool):
        """Exact mode: drop entries whose lone subtraction dents the map.

        Subtracting one true component leaves the rest of the mixture, so
        the residual stays entrywise nonnegative; junk entries (wrong
        center or inflated weight) dig below zero somewhere.
        """
        if not self.exact:
            return pool
        tol = max(self.budget.negativity_tol, 1e-12)
        return [
            e
            for e in pool
            if float(
                (self.v_ref.values - e.weight * self._component_values(e)).min()
            )
            >= -tol
        ]

    def gap(self, tup, scale: float):
        """(measured, threshold) or None when the sampled prescreen rejects."""
        if self.exact:
            combo = np.zeros_like(self.v_ref.values)
            for e in tup:
                combo += (e.weight / scale) * self._component_values(e)
            return float(np.abs(self.v_ref.values - combo).sum()), self.threshold
        first = np.zeros_like(self.prescreen)
        for e in tup:
            first += (e.weight / scale) * self._placements(e)
        if float(np.abs(self.prescreen - first).sum()) > self.prescreen_tol:
            return None
        if self.sampled_tests >= self.SAMPLED_TEST_CAP:
            if self.sampled_tests == self.SAMPLED_TEST_CAP:
                self.sampled_tests += 1
                _log.info("sampled closeness-test cap reached; skipping the rest")
            return None
        self.sampled_tests += 1
        mix = MallowsMixture(
            tuple(e.model() for e in tup), tuple(e.weight / scale for e in tup)
        )
        check = test_componentwise_close(self.source, mix, self.budget, self.rng)
        return check.measured, check.bound


def learn_mixture_general(source, k: int, budget: LearnerBudget, rng=None,
                          diag_out: dict | None = None):
    """Full pipeline: removal guesses, peeling, elimination, closeness test.

    Within one removal guess every surviving k-tuple is compared and the
    smallest accepted moment gap wins; the first removal guess producing
    an accepted mixture ends the walk.  Raises LearningFailure (with
    counts and the best gap seen) when nothing is accepted.  diag_out,
    when given, receives the same counters on success.
    """
    if not isinstance(budget, LearnerBudget):
        raise InvalidArgumentError("budget must be a LearnerBudget")
    if int(k) < 1:
        raise InvalidArgumentError(f"need k >= 1, got {k}")
    k = int(k)
    truth = _as_exact(source)
    if truth is not None:
        rows = None
        n = truth.n
    else:
        rows = np.asarray(source, dtype=np.int64)
        if rows.ndim != 2:
            raise InvalidArgumentError("source must be exact-like or a sample array")
        n = rows.shape[1]
    c = budget.order(k, n)
    eps = budget.epsilon(n)
    if truth is not None:
        v = MomentMap.from_mixture(truth, c)
        heavy = _heavy_orderings_exact(truth, budget.alpha)
    else:
        v = MomentMap.from_samples(rows, c)
        heavy = small_phi_candidates(rows, budget.alpha)
    judge = _TupleJudge(source, truth, rows, v, k, budget, rng)
    diag = {
        "heavy_orderings": len(heavy),
        "removal_guesses": 0,
        "candidates": 0,
        "tuples_scanned": 0,
        "tuples_tested": 0,
        "best_gap": math.inf,
    }
    for removal in _removal_guesses(heavy, k, budget, n):
        diag["removal_guesses"] += 1
        v_res = remove_small_phi(v, removal)
        live = k - len(removal)
        peeled = peel_components(v_res, live, budget) if live >= 1 else []
        pool = judge.positivity_screen(
            _screen_pool(list(removal) + peeled, budget, eps, k)
        )
        diag["candidates"] = max(diag["candidates"], len(pool))
        accepted = []
        tested = scanned = 0
        for idx in _weight_window_tuples(pool, k, 0.9, 1.1):
            scanned += 1
            if scanned > _TUPLE_SCAN_CAP or tested >= budget.max_candidate_tuples:
                _log.info("tuple budget exhausted inside a removal guess")
                break
            tup = tuple(pool[i] for i in idx)
            if _tuple_eliminated(tup, eps):
                continue
            s = sum(e.weight for e in tup)
            verdict = judge.gap(tup, s)
            if verdict is None:
                continue
            tested += 1
            measured, threshold = verdict
            diag["best_gap"] = min(diag["best_gap"], measured)
            if measured <= threshold:
                accepted.append((measured, tuple(e.sort_key() for e in tup), tup, s))
        diag["tuples_scanned"] += scanned
        diag["tuples_tested"] += tested
        if accepted:
            accepted.sort(key=lambda t: (t[0], t[1]))
            measured, _, tup, s = accepted[0]
            _log.info("accepted a mixture at moment gap %.3g", measured)
            diag["accepted_gap"] = measured
            if diag_out is not None:
                diag_out.update(diag)
            return MallowsMixture(
                tuple(e.model() for e in tup), tuple(e.weight / s for e in tup)
            )
    if diag_out is not None:
        diag_out.update(diag)
    raise LearningFailure(
        "no candidate mixture survived the closeness test", diagnostics=diag
    )
