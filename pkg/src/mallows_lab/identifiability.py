"""Exact determinant identity for the distance-power matrix, robust
column-independence checks (projection floors and L1 minimization), and
the non-degenerate-mixture L1 separation with its component matching.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import gmpy2
import numpy as np
from scipy.optimize import linprog

from .distances import BoundCheck, make_bound_check, tv_between
from .errors import (
    EnumerationLimitError,
    InvalidArgumentError,
    PreconditionError,
)
from .model import MallowsModel, as_mixture, vectorize
from .perms import (
    check_enumerable,
    check_permutation,
    compose,
    inverse,
    inversions,
    max_inversions,
)

__all__ = [
    "ZagierReport",
    "zagier_matrix",
    "zagier_formula",
    "zagier_check",
    "kruskal_projection",
    "kruskal_l1",
    "kruskal_l1_bound",
    "robust_kruskal_perturbed",
    "robust_kruskal_gap_limit",
    "identifiability_l1",
    "identifiability_bound",
    "check_non_degenerate",
    "match_components",
    "MatchReport",
]

ZAGIER_MAX_N = 5  # n! x n! exact determinant budget


def _perm_list(n):
    return list(itertools.permutations(range(1, n + 1)))


@lru_cache(maxsize=8)
def _exponent_matrix(n: int) -> np.ndarray:
    """E[p][s] = inversion count of p composed with s^-1."""
    ps = _perm_list(n)
    invs = [inverse(s) for s in ps]
    out = np.empty((len(ps), len(ps)), dtype=np.int64)
    for j, sinv in enumerate(invs):
        for i, p in enumerate(ps):
            out[i, j] = inversions(compose(p, sinv))
    out.setflags(write=False)
    return out


def zagier_matrix(n: int, phi: float) -> np.ndarray:
    """The n! x n! matrix with entries phi ** inversions(p s^-1)."""
    check_enumerable(n)
    e = _exponent_matrix(n)
    if phi == 0.0:
        return (e == 0).astype(np.float64)
    return np.asarray(phi, dtype=np.float64) ** e


def _bareiss_det(m) -> "gmpy2.mpz":
    """Fraction-free elimination; m is a square list of mpz lists, consumed."""
    size = len(m)
    sign = 1
    prev = gmpy2.mpz(1)
    for r in range(size - 1):
        if m[r][r] == 0:
            for rr in range(r + 1, size):
                if m[rr][r] != 0:
                    m[r], m[rr] = m[rr], m[r]
                    sign = -sign
                    break
            else:
                return gmpy2.mpz(0)
        pivot = m[r][r]
        row_r = m[r]
        for i in range(r + 1, size):
            row_i = m[i]
            lead = row_i[r]
            for j in range(r + 1, size):
                row_i[j] = (pivot * row_i[j] - lead * row_r[j]) // prev
            row_i[r] = gmpy2.mpz(0)
        prev = pivot
    return sign * m[size - 1][size - 1]


def zagier_formula(n: int, phi: Fraction) -> Fraction:
    """Closed-form product for the determinant.

    Each factor exponent n!(n-i)/(i^2+i) must come out an integer; that
    integrality is itself part of the identity and is asserted here.
    """
    phi = Fraction(phi)
    out = Fraction(1)
    for i in range(1, n):
        num = math.factorial(n) * (n - i)
        den = i * i + i
        if num % den:
            raise InvalidArgumentError(
                f"non-integral exponent {num}/{den} at i={i}, n={n}"
            )
        out *= (1 - phi ** (i * i + i)) ** (num // den)
    return out


@dataclass(frozen=True)
class ZagierReport:
    n: int
    phi: Fraction
    det: Fraction
    formula: Fraction
    equal: bool

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "phi": [self.phi.numerator, self.phi.denominator],
            "det_num": str(self.det.numerator),
            "det_den": str(self.det.denominator),
            "formula_num": str(self.formula.numerator),
            "formula_den": str(self.formula.denominator),
            "equal": self.equal,
        }


def zagier_check(n: int, phi) -> ZagierReport:
    """Exact-rational determinant against the closed-form product.

    Entries are cleared to integers (num^d * den^(D-d)), eliminated with
    integer Bareiss steps, then rescaled; no floats anywhere.
    """
    if not 2 <= n <= ZAGIER_MAX_N:
        raise EnumerationLimitError(
            f"exact determinant supported for 2 <= n <= {ZAGIER_MAX_N}, got {n}"
        )
    phi = Fraction(phi)
    if not 0 <= phi < 1:
        raise InvalidArgumentError(f"need 0 <= phi < 1, got {phi}")
    exps = _exponent_matrix(n)
    d_max = max_inversions(n)
    num, den = phi.numerator, phi.denominator
    pow_num = [gmpy2.mpz(num) ** d for d in range(d_max + 1)]
    pow_den = [gmpy2.mpz(den) ** d for d in range(d_max + 1)]
    scaled = [
        [pow_num[e] * pow_den[d_max - e] for e in row] for row in exps.tolist()
    ]
    det_scaled = _bareiss_det(scaled)
    det = Fraction(int(det_scaled), den ** (d_max * math.factorial(n)))
    formula = zagier_formula(n, phi)
    return ZagierReport(n=n, phi=phi, det=det, formula=formula, equal=det == formula)


# --- column independence -------------------------------------------------------


def _distinct_perms(perms, n):
    perms = [check_permutation(p) for p in perms]
    if any(len(p) != n for p in perms):
        raise InvalidArgumentError("permutations disagree with n")
    if len(set(perms)) != len(perms):
        raise InvalidArgumentError("permutations must be distinct")
    return perms


def _resolve_eps(eps, phis):
    top = max(phis)
    if eps is None:
        eps = 1.0 - top
    if eps <= 0 or top > 1 - eps + 1e-15:
        raise PreconditionError(f"need every phi <= 1-eps; eps={eps}, max phi={top}")
    return float(eps)


def kruskal_projection(n, phi, perms, eps=None) -> BoundCheck:
    """Column of the distance-power matrix against the span of k-1 others.

    Measures the euclidean length of the first column projected onto the
    orthogonal complement of the rest; floor (eps^n / sqrt(n!))^k.
    """
    from .structures import ortho_test_vector

    check_enumerable(n, ZAGIER_MAX_N)
    perms = _distinct_perms(perms, n)
    eps = _resolve_eps(eps, [phi])
    a = zagier_matrix(n, phi)
    ranks = {p: i for i, p in enumerate(_perm_list(n))}
    cols = [a[:, ranks[p]] for p in perms]
    k = len(perms)
    if k == 1:
        proj = float(np.linalg.norm(cols[0]))
    else:
        _, proj = ortho_test_vector(cols[0], cols[1:])
    bound = (eps**n / math.sqrt(math.factorial(n))) ** k
    return make_bound_check(
        "kruskal_projection",
        measured=proj,
        bound=bound,
        direction=">=",
        detail={"n": n, "phi": phi, "k": k, "eps": eps},
    )


def kruskal_l1_bound(n: int, k: int, eps: float) -> float:
    return eps ** (2 * k * k) / (float(n) ** (4 * k) * float(k + 1) ** (k * k + 2 * k))


def _min_l1_pinned(columns: np.ndarray):
    """min over max|z|=1 of the L1 norm of the signed column combination.

    One LP per pinned coordinate (z_p = 1; global sign symmetry covers
    z_p = -1): minimize sum(t) with -t <= C_free z_free + c_p <= t.
    """
    n_rows, k = columns.shape
    best = None
    best_z = None
    for p in range(k):
        free = [j for j in range(k) if j != p]
        c_free = columns[:, free]
        n_free = len(free)
        # variables: z_free (n_free), t (n_rows)
        cost = np.concatenate([np.zeros(n_free), np.ones(n_rows)])
        eye = np.eye(n_rows)
        a_ub = np.block([[c_free, -eye], [-c_free, -eye]])
        b_ub = np.concatenate([-columns[:, p], columns[:, p]])
        bounds = [(-1.0, 1.0)] * n_free + [(0.0, None)] * n_rows
        res = linprog(cost, A_ub=a_ub, b_ub=b_ub, bounds=bounds, method="highs")
        if not res.success:
            raise RuntimeError(f"LP failed while pinning column {p}: {res.message}")
        if best is None or res.fun < best:
            best = float(res.fun)
            z = np.empty(k)
            z[p] = 1.0
            for slot, j in enumerate(free):
                z[j] = res.x[slot]
            best_z = z
    return best, best_z


def kruskal_l1(n, phi, perms, coeff_strategy="lp", eps=None) -> BoundCheck:
    """Signed combinations of normalized distance columns stay long in L1.

    coeff_strategy "lp" minimizes over all coefficients with max|z| = 1;
    an explicit coefficient vector evaluates that combination instead.
    """
    check_enumerable(n)
    perms = _distinct_perms(perms, n)
    eps = _resolve_eps(eps, [phi])
    k = len(perms)
    cols = np.stack([vectorize(MallowsModel(phi, p)).values for p in perms], axis=1)
    if isinstance(coeff_strategy, str):
        if coeff_strategy != "lp":
            raise InvalidArgumentError(f"unknown coeff_strategy {coeff_strategy!r}")
        measured, z = _min_l1_pinned(cols)
    else:
        z = np.asarray(coeff_strategy, dtype=np.float64)
        if z.shape != (k,):
            raise InvalidArgumentError("coefficient vector length must match perms")
        if np.abs(z).max() < 1.0 - 1e-12:
            raise InvalidArgumentError("coefficients need max|z| >= 1")
        measured = float(np.abs(cols @ z).sum())
    return make_bound_check(
        "kruskal_l1",
        measured=measured,
        bound=kruskal_l1_bound(n, k, eps),
        direction=">=",
        detail={"n": n, "phi": phi, "k": k, "eps": eps, "z": [float(v) for v in z]},
    )


def robust_kruskal_gap_limit(n: int, k: int, eps: float) -> float:
    return eps ** (4 * k * k) / (
        160.0 * float(n) ** (8 * k + 3) * float(k + 1) ** (2 * k * k + 4 * k + 2)
    )


def robust_kruskal_perturbed(
    n, phis, perms, coeff_strategy="lp", eps=None, gap_mode="enforce"
) -> BoundCheck:
    """Near-equal scales keep half the equal-scale L1 floor.

    The allowed pairwise scale gap is tiny (it underflows float spacing
    for most parameters); gap_mode "warn" records a violated gap in the
    detail instead of raising, so the conclusion can still be measured.
    """
    check_enumerable(n)
    perms = _distinct_perms(perms, n)
    phis = [float(f) for f in phis]
    if len(phis) != len(perms):
        raise InvalidArgumentError("one scale per permutation required")
    eps = _resolve_eps(eps, phis)
    k = len(perms)
    limit = robust_kruskal_gap_limit(n, k, eps)
    gap = max(abs(a - b) for a in phis for b in phis)
    if gap > limit:
        if gap_mode == "enforce":
            raise PreconditionError(
                f"pairwise scale gap {gap} exceeds the allowed {limit}"
            )
        if gap_mode != "warn":
            raise InvalidArgumentError(f"unknown gap_mode {gap_mode!r}")
    cols = np.stack(
        [vectorize(MallowsModel(f, p)).values for f, p in zip(phis, perms)], axis=1
    )
    if isinstance(coeff_strategy, str):
        if coeff_strategy != "lp":
            raise InvalidArgumentError(f"unknown coeff_strategy {coeff_strategy!r}")
        measured, z = _min_l1_pinned(cols)
    else:
        z = np.asarray(coeff_strategy, dtype=np.float64)
        measured = float(np.abs(cols @ z).sum())
    return make_bound_check(
        "robust_kruskal_l1",
        measured=measured,
        bound=0.5 * kruskal_l1_bound(n, k, eps),
        direction=">=",
        detail={
            "n": n,
            "k": k,
            "eps": eps,
            "max_gap": gap,
            "gap_limit": limit,
            "gap_ok": gap <= limit,
            "z": [float(v) for v in z],
        },
    )


# --- mixture-level separation ----------------------------------------------------


def check_non_degenerate(models, mu: float, max_n=None, weights=None, alpha=None):
    """Pairwise TV and TV-to-uniform both at least mu; optional weight floor."""
    models = list(models)
    if not models:
        raise PreconditionError("empty collection")
    n = models[0].n
    uniform = MallowsModel(1.0, tuple(sorted(models[0].elements)))
    for i, m in enumerate(models):
        gap = tv_between(m, uniform, max_n=max_n).value
        if gap < mu:
            raise PreconditionError(
                f"component {i} is {gap:.6g} from uniform, below mu={mu}"
            )
    for i, j in itertools.combinations(range(len(models)), 2):
        gap = tv_between(models[i], models[j], max_n=max_n).value
        if gap < mu:
            raise PreconditionError(
                f"components {i},{j} are {gap:.6g} apart, below mu={mu}"
            )
    if weights is not None and alpha is not None:
        lo = min(weights)
        if lo < alpha:
            raise PreconditionError(f"weight {lo} below alpha={alpha}")
    return n


def identifiability_bound(n: int, k: int, mu: float) -> float:
    """(mu^2 / (10 n^4 k)) ** (20 k^3); underflows to 0.0 at desk scale."""
    base = mu * mu / (10.0 * float(n) ** 4 * k)
    exponent = 20 * k**3
    try:
        return base**exponent
    except OverflowError:
        return 0.0


def log10_identifiability_bound(n: int, k: int, mu: float) -> float:
    base = mu * mu / (10.0 * float(n) ** 4 * k)
    return 20 * k**3 * math.log10(base)


def identifiability_l1(models, coeffs, mu, max_n=None) -> BoundCheck:
    """Signed combinations of a mu-non-degenerate collection stay long.

    The stated floor is astronomically small; it is asserted literally
    and its log10 is reported so the slack is visible.
    """
    models = list(models)
    coeffs = [float(z) for z in coeffs]
    if len(models) != len(coeffs):
        raise InvalidArgumentError("one coefficient per model required")
    if max(abs(z) for z in coeffs) < 1.0 - 1e-12:
        raise InvalidArgumentError("coefficients need max|z| >= 1")
    n = check_non_degenerate(models, mu, max_n=max_n)
    k = len(models)
    from .distances import l1_combination

    measured = l1_combination(models, coeffs, max_n=max_n)
    return make_bound_check(
        "identifiability_l1",
        measured=measured,
        bound=identifiability_bound(n, k, mu),
        direction=">=",
        detail={
            "n": n,
            "k": k,
            "mu": mu,
            "log10_bound": log10_identifiability_bound(n, k, mu),
        },
    )


@dataclass(frozen=True)
class MatchReport:
    pairs: tuple  # (index_a, index_b, tv_gap, weight_gap) per matched pair
    max_tv_gap: float
    max_weight_gap: float

    def as_dict(self) -> dict:
        return {
            "pairs": [list(p) for p in self.pairs],
            "max_tv_gap": self.max_tv_gap,
            "max_weight_gap": self.max_weight_gap,
        }


def match_components(mix_a, mix_b, max_n=None) -> MatchReport:
    """Greedy closest-pair matching between two mixtures' components.

    Repeatedly merges the globally closest cross-mixture pair, the same
    order the identifiability argument peels them off.
    """
    a, b = as_mixture(mix_a), as_mixture(mix_b)
    if a.k != b.k:
        raise InvalidArgumentError(f"component counts differ: {a.k} vs {b.k}")
    gaps = np.array(
        [
            [tv_between(ca, cb, max_n=max_n).value for cb in b.components]
            for ca in a.components
        ]
    )
    free_a = set(range(a.k))
    free_b = set(range(b.k))
    pairs = []
    while free_a:
        i, j = min(
            ((i, j) for i in free_a for j in free_b), key=lambda ij: gaps[ij[0], ij[1]]
        )
        pairs.append((i, j, float(gaps[i, j]), abs(a.weights[i] - b.weights[j])))
        free_a.remove(i)
        free_b.remove(j)
    return MatchReport(
        pairs=tuple(pairs),
        max_tv_gap=max(p[2] for p in pairs),
        max_weight_gap=max(p[3] for p in pairs),
    )
