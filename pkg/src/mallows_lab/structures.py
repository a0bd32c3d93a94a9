"""Block and order structures over rankings, their probability tensors,
and the contrast vectors used to peel mixture components apart.

A block structure asks its element sets to sit in consecutive runs, run
after run; an order structure asks each listed chain to appear in the
stated relative order; the ordered-block form asks for both at once.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError
from .model import MallowsModel, PlacementOracle, vectorize

__all__ = [
    "BlockStructure",
    "OrderStructure",
    "OrderedBlockStructure",
    "satisfies",
    "structure_from_config",
    "structure_to_config",
    "block_positions",
    "block_tensor",
    "BlockTensor",
    "block_prob",
    "block_prob_floor",
    "pair_test_vector",
    "ortho_test_vector",
]


def _check_disjoint_groups(groups, kind):
    groups = tuple(tuple(int(e) for e in g) for g in groups)
    if not groups:
        raise InvalidArgumentError(f"{kind} needs at least one group")
    seen = set()
    for g in groups:
        if not g:
            raise InvalidArgumentError(f"{kind} groups must be nonempty")
        if len(set(g)) != len(g):
            raise InvalidArgumentError(f"repeated element inside group {g}")
        if seen & set(g):
            raise InvalidArgumentError(f"groups must be disjoint, {g} overlaps")
        seen |= set(g)
    return groups


@dataclass(frozen=True)
class BlockStructure:
    """Disjoint element sets, stored as sorted tuples, in block order."""

    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        groups = _check_disjoint_groups(self.blocks, "block structure")
        object.__setattr__(self, "blocks", tuple(tuple(sorted(g)) for g in groups))

    @property
    def size(self) -> int:
        return sum(len(b) for b in self.blocks)


@dataclass(frozen=True)
class OrderStructure:
    """Chains whose stated order must appear in the ranking."""

    chains: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "chains", _check_disjoint_groups(self.chains, "order structure")
        )

    @property
    def size(self) -> int:
        return sum(len(cn) for cn in self.chains)


@dataclass(frozen=True)
class OrderedBlockStructure:
    """Ordered runs: blocks in order, each with a fixed inner order."""

    blocks: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "blocks", _check_disjoint_groups(self.blocks, "ordered block structure")
        )

    @property
    def size(self) -> int:
        return sum(len(b) for b in self.blocks)

    def as_block_structure(self) -> BlockStructure:
        return BlockStructure(self.blocks)

    def as_order_structure(self) -> OrderStructure:
        return OrderStructure(self.blocks)


def _positions(p):
    return {e: i for i, e in enumerate(p)}


def _satisfies_blocks(p, groups) -> bool:
    pos = _positions(p)
    prev_end = -1
    for g in groups:
        where = sorted(pos[e] for e in g)
        if where[-1] - where[0] + 1 != len(g):
            return False  # not consecutive
        if where[0] <= prev_end:
            return False  # out of block order
        prev_end = where[-1]
    return True


def _satisfies_chains(p, chains) -> bool:
    pos = _positions(p)
    for chain in chains:
        spots = [pos[e] for e in chain]
        if any(a >= b for a, b in zip(spots, spots[1:])):
            return False
    return True


def satisfies(p, structure) -> bool:
    """Does ranking p satisfy the structure?"""
    p = tuple(p)
    if isinstance(structure, BlockStructure):
        missing = {e for b in structure.blocks for e in b} - set(p)
        if missing:
            raise InvalidArgumentError(f"elements {sorted(missing)} not in ranking")
        return _satisfies_blocks(p, structure.blocks)
    if isinstance(structure, OrderStructure):
        missing = {e for cn in structure.chains for e in cn} - set(p)
        if missing:
            raise InvalidArgumentError(f"elements {sorted(missing)} not in ranking")
        return _satisfies_chains(p, structure.chains)
    if isinstance(structure, OrderedBlockStructure):
        return _satisfies_blocks(p, structure.blocks) and _satisfies_chains(
            p, structure.blocks
        )
    raise InvalidArgumentError(f"not a structure: {structure!r}")


def structure_from_config(cfg: dict):
    if "chains" in cfg:
        return OrderStructure(tuple(tuple(c) for c in cfg["chains"]))
    try:
        blocks = tuple(tuple(b) for b in cfg["blocks"])
        ordered = bool(cfg["ordered"])
    except (KeyError, TypeError) as exc:
        raise InvalidArgumentError(f"bad structure config: {exc}") from None
    return OrderedBlockStructure(blocks) if ordered else BlockStructure(blocks)


def structure_to_config(structure) -> dict:
    if isinstance(structure, OrderStructure):
        return {"chains": [list(c) for c in structure.chains]}
    ordered = isinstance(structure, OrderedBlockStructure)
    return {"blocks": [list(b) for b in structure.blocks], "ordered": ordered}


# --- probability tensors ------------------------------------------------------


def block_positions(sizes, n: int):
    """All start-position tuples placing runs of the given sizes in order.

    Starts are 1-based; run i occupies starts[i] .. starts[i]+sizes[i]-1.
    """
    sizes = tuple(sizes)

    def rec(i, lo):
        if i == len(sizes):
            yield ()
            return
        room = sum(sizes[i:])
        for a in range(lo, n - room + 2):
            for rest in rec(i + 1, a + sizes[i]):
                yield (a,) + rest

    return list(rec(0, 1))


@dataclass
class BlockTensor:
    """Joint block-event probabilities, one axis per block.

    Axis i enumerates orderings of block i in lexicographic order; the
    entry holds Pr[blocks consecutive and in order, each with that inner
    order, and every extra before-pair respected].
    """

    blocks: tuple[tuple[int, ...], ...]
    values: np.ndarray

    def axis_orderings(self, i: int):
        return list(itertools.permutations(self.blocks[i]))

    def contract(self, vectors) -> float:
        vectors = list(vectors)
        if len(vectors) != len(self.blocks):
            raise InvalidArgumentError("one contrast vector per block required")
        out = self.values
        for v in reversed(vectors):
            out = out @ np.asarray(v, dtype=np.float64)
        return float(out)

    def total(self) -> float:
        return float(self.values.sum())


def block_tensor(oracle: PlacementOracle, blocks, before=()) -> BlockTensor:
    """Exact-or-sampled tensor of inner-order block events.

    blocks are element sets (any iterable); an optional before list adds
    global pair constraints (e.g. the x-before-y contrast entry).
    """
    structure = BlockStructure(tuple(tuple(b) for b in blocks))
    sets = structure.blocks
    n = oracle.n
    sizes = [len(b) for b in sets]
    starts = block_positions(sizes, n)
    axes = [list(itertools.permutations(b)) for b in sets]
    shape = tuple(math.factorial(s) for s in sizes)
    values = np.zeros(shape)
    for idx in itertools.product(*(range(d) for d in shape)):
        orders = [axes[i][j] for i, j in enumerate(idx)]
        total = 0.0
        for st in starts:
            assignment = [
                (e, st[i] + offset)
                for i, order in enumerate(orders)
                for offset, e in enumerate(order)
            ]
            total += oracle.event_prob(assignment=assignment, before=before)
        values[idx] = total
    return BlockTensor(sets, values)


def block_prob(oracle: PlacementOracle, structure) -> float:
    """Probability that a draw satisfies the structure."""
    if isinstance(structure, OrderedBlockStructure):
        sets = [tuple(sorted(b)) for b in structure.blocks]
        tensor = block_tensor(oracle, sets)
        idx = tuple(
            list(itertools.permutations(s)).index(b)
            for s, b in zip(sets, structure.blocks)
        )
        return float(tensor.values[idx])
    if isinstance(structure, BlockStructure):
        return block_tensor(oracle, structure.blocks).total()
    raise InvalidArgumentError("block_prob needs a block or ordered-block structure")


def block_prob_floor(n: int, size: int) -> float:
    """Satisfied-by-the-center block events keep probability >= n^(-2*size)."""
    return float(n) ** (-2 * size)


# --- contrast vectors ----------------------------------------------------------


def pair_test_vector(phi: float, x_first: bool = True) -> np.ndarray:
    """Vector over (x-first, y-first) killing the matching pair marginal.

    Orthogonal to vectorize(M(phi, stated order)); its inner product with
    a pair marginal at phi' has magnitude >= |phi - phi'| / 4.
    """
    if not 0.0 <= phi <= 1.0:
        raise InvalidArgumentError(f"phi must lie in [0, 1], got {phi}")
    if x_first:
        return np.array([phi, -1.0]) / (1.0 + phi)
    return np.array([1.0, -phi]) / (1.0 + phi)


def pair_marginal_vector(phi: float, x_first: bool = True) -> np.ndarray:
    """(Pr[x first], Pr[y first]) for a two-element Mallows marginal."""
    v = np.array([1.0, phi]) if x_first else np.array([phi, 1.0])
    return v / (1.0 + phi)


def ortho_test_vector(target, others, tol: float = 1e-10):
    """Unit projection of target onto the orthocomplement of others.

    Returns (unit vector, projection length).  Two Gram-Schmidt passes
    keep the result orthogonal to working precision; a residual below
    tol * |target| means the target is effectively inside the span.
    """
    target = np.asarray(target, dtype=np.float64)
    basis = []
    for u in others:
        u = np.asarray(u, dtype=np.float64).copy()
        for b in basis:
            u -= (u @ b) * b
        for b in basis:
            u -= (u @ b) * b
        norm = np.linalg.norm(u)
        if norm > tol:
            basis.append(u / norm)
    r = target.copy()
    for _ in range(2):
        for b in basis:
            r -= (r @ b) * b
    norm = float(np.linalg.norm(r))
    scale = float(np.linalg.norm(target))
    if scale == 0.0 or norm <= tol * scale:
        raise DegenerateInputError(
            "target lies in the span of the vectors it must be orthogonal to"
        )
    unit = r / norm
    return unit, float(unit @ target)


def restricted_vector(phi: float, ordering) -> np.ndarray:
    """vectorize(M(phi, ordering)).values: marginal over its label set."""
    return vectorize(MallowsModel(phi, tuple(ordering))).values
