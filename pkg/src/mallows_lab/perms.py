"""Permutation primitives.

A permutation is a plain tuple of distinct positive ints read as
position -> element: p[i] is the element ranked at position i+1.  Most
code runs on the canonical universe 1..n, but every counting routine
also accepts orderings of an arbitrary label set (restrictions of a
larger permutation keep their original labels).

>>> kendall_tau((2, 1, 4, 3), (1, 2, 3, 4))
2
>>> restrict((3, 1, 4, 2), {1, 2})
(1, 2)
"""

from __future__ import annotations

import itertools
import math
import os
from functools import lru_cache

import numpy as np

from .errors import EnumerationLimitError, InvalidArgumentError

__all__ = [
    "DEFAULT_MAX_N",
    "HARD_MAX_N",
    "enumeration_cutoff",
    "check_enumerable",
    "identity",
    "check_permutation",
    "inversions",
    "kendall_tau",
    "max_inversions",
    "compose",
    "inverse",
    "restrict",
    "enumerate_perms",
    "perm_matrix",
    "position_matrix",
    "lex_rank",
    "lex_unrank",
    "rank_rows",
    "mahonian_counts",
    "parse_permutation",
    "format_permutation",
]

DEFAULT_MAX_N = 8
HARD_MAX_N = 10
_ENV_CUTOFF = "MALLOWS_LAB_MAX_N"


def enumeration_cutoff() -> int:
    """Largest n for which full S_n enumeration is allowed.

    Defaults to 8; the env var MALLOWS_LAB_MAX_N can raise it, but never
    past the hard cap of 10 (10! rows is already ~29 MB per int8 matrix).
    """
    raw = os.environ.get(_ENV_CUTOFF)
    if raw is None:
        return DEFAULT_MAX_N
    try:
        value = int(raw)
    except ValueError:
        raise InvalidArgumentError(f"{_ENV_CUTOFF} must be an int, got {raw!r}")
    return max(1, min(value, HARD_MAX_N))


def check_enumerable(n: int, max_n: int | None = None) -> None:
    limit = enumeration_cutoff() if max_n is None else min(max_n, HARD_MAX_N)
    if n > limit:
        raise EnumerationLimitError(
            f"S_{n} enumeration exceeds the cutoff of {limit} "
            f"(set {_ENV_CUTOFF} to raise it, hard cap {HARD_MAX_N})"
        )


def identity(n: int) -> tuple[int, ...]:
    if n < 1:
        raise InvalidArgumentError(f"need n >= 1, got {n}")
    return tuple(range(1, n + 1))


def check_permutation(p, elements=None) -> tuple[int, ...]:
    """Validate p as an ordering of `elements` (default 1..len(p)).

    Returns p as a tuple so callers can normalize lists in one step.
    """
    p = tuple(p)
    if not p:
        raise InvalidArgumentError("empty permutation")
    if any((not isinstance(x, (int, np.integer))) or x < 1 for x in p):
        raise InvalidArgumentError(f"entries must be positive ints: {p}")
    p = tuple(int(x) for x in p)
    expected = set(range(1, len(p) + 1)) if elements is None else set(elements)
    if set(p) != expected or len(p) != len(expected):
        raise InvalidArgumentError(f"{p} is not an ordering of {sorted(expected)}")
    return p


def inversions(p) -> int:
    """Number of out-of-order pairs in the sequence p.

    Quadratic; n never exceeds 10 here.
    """
    p = tuple(p)
    return sum(
        1
        for i in range(len(p))
        for j in range(i + 1, len(p))
        if p[i] > p[j]
    )


def kendall_tau(p, q) -> int:
    """Number of element pairs that p and q order oppositely.

    Equals inversions(compose(inverse(p), q)) on the canonical universe;
    accepts any shared label set.
    """
    p, q = tuple(p), tuple(q)
    if set(p) != set(q) or len(p) != len(q):
        raise InvalidArgumentError("permutations must order the same elements")
    pos = {e: i for i, e in enumerate(p)}
    return inversions([pos[e] for e in q])


def max_inversions(n: int) -> int:
    return n * (n - 1) // 2


def compose(p, q) -> tuple[int, ...]:
    """(p o q)[i] = p[q[i]], both on the universe 1..n."""
    p, q = tuple(p), tuple(q)
    return tuple(p[x - 1] for x in q)


def inverse(p) -> tuple[int, ...]:
    p = tuple(p)
    out = [0] * len(p)
    for i, e in enumerate(p):
        out[e - 1] = i + 1
    return tuple(out)


def restrict(p, elements) -> tuple[int, ...]:
    """Relative order of `elements` inside p, keeping original labels."""
    members = set(elements)
    missing = members - set(p)
    if missing:
        raise InvalidArgumentError(f"elements {sorted(missing)} not in permutation")
    return tuple(e for e in p if e in members)


def enumerate_perms(n: int, max_n: int | None = None):
    """Stream S_n in lexicographic order; refuses n past the cutoff."""
    check_enumerable(n, max_n)
    return itertools.permutations(range(1, n + 1))


@lru_cache(maxsize=None)
def perm_matrix(n: int) -> np.ndarray:
    """All of S_n as an (n!, n) int8 matrix, rows in lexicographic order."""
    check_enumerable(n)
    out = np.fromiter(
        itertools.chain.from_iterable(itertools.permutations(range(1, n + 1))),
        dtype=np.int8,
        count=math.factorial(n) * n,
    )
    out = out.reshape(math.factorial(n), n)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def position_matrix(n: int) -> np.ndarray:
    """position_matrix(n)[r, e-1] = 1-based position of element e in row r."""
    perms = perm_matrix(n)
    pos = np.argsort(perms, axis=1).astype(np.int8) + 1
    pos.setflags(write=False)
    return pos


def lex_rank(p) -> int:
    """Index of p within lexicographic S_n (factorial number system)."""
    p = tuple(p)
    n = len(p)
    rank = 0
    for i in range(n):
        smaller = sum(1 for j in range(i + 1, n) if p[j] < p[i])
        rank += smaller * math.factorial(n - 1 - i)
    return rank


def lex_unrank(n: int, rank: int) -> tuple[int, ...]:
    if not 0 <= rank < math.factorial(n):
        raise InvalidArgumentError(f"rank {rank} out of range for S_{n}")
    pool = list(range(1, n + 1))
    out = []
    for i in range(n, 0, -1):
        f = math.factorial(i - 1)
        idx, rank = divmod(rank, f)
        out.append(pool.pop(idx))
    return tuple(out)


def rank_rows(rows: np.ndarray) -> np.ndarray:
    """Vectorized lex_rank over an (m, n) matrix of 1..n permutations."""
    rows = np.asarray(rows)
    m, n = rows.shape
    ranks = np.zeros(m, dtype=np.int64)
    for i in range(n - 1):
        smaller = (rows[:, i + 1 :] < rows[:, i : i + 1]).sum(axis=1)
        ranks += smaller.astype(np.int64) * math.factorial(n - 1 - i)
    return ranks


def mahonian_counts(n: int) -> np.ndarray:
    """counts[d] = #permutations of n with exactly d inversions.

    Coefficients of prod_j (1 + q + ... + q^(j-1)); int64 is exact for
    n <= 10 (values stay far below 10! = 3.6e6).
    """
    if n < 1:
        raise InvalidArgumentError(f"need n >= 1, got {n}")
    counts = np.array([1], dtype=np.int64)
    for j in range(2, n + 1):
        counts = np.convolve(counts, np.ones(j, dtype=np.int64))
    return counts


def parse_permutation(line: str) -> tuple[int, ...]:
    """Parse a text-format line: space-separated 1-based elements.

    Ignores a trailing '# ...' comment (used for latent-component traces).
    """
    body = line.split("#", 1)[0].strip()
    if not body:
        raise InvalidArgumentError(f"no permutation on line: {line!r}")
    try:
        return check_permutation(int(tok) for tok in body.split())
    except ValueError as exc:
        raise InvalidArgumentError(f"bad permutation line {line!r}: {exc}") from None


def format_permutation(p, component: int | None = None) -> str:
    text = " ".join(str(x) for x in p)
    if component is not None:
        text += f"  # component={component}"
    return text
