"""Total variation distance, exact and plug-in, plus the two parameter
distance checks the learners and lower bounds lean on: distinct centers
force TV >= eps/2, and a same-center scale gap below mu^2/(10 n^3)
keeps TV <= mu.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, PreconditionError
from .model import DistributionVector, MallowsModel, sample_rim, vectorize

__all__ = [
    "TVReport",
    "BoundCheck",
    "tv_exact",
    "tv_between",
    "tv_empirical",
    "check_distinct_centers_bound",
    "check_same_center_bound",
    "l1_combination",
]


@dataclass(frozen=True)
class TVReport:
    value: float
    mode: str  # "exact" | "empirical"
    tolerance: float | None = None

    def __post_init__(self):
        if not -1e-12 <= self.value <= 1.0 + 1e-12:
            raise InvalidArgumentError(f"TV out of range: {self.value}")

    def as_dict(self) -> dict:
        out = {"value": self.value, "mode": self.mode}
        if self.tolerance is not None:
            out["tolerance"] = self.tolerance
        return out


@dataclass(frozen=True)
class BoundCheck:
    """One verified inequality: measured (direction) bound."""

    name: str
    measured: float
    bound: float
    direction: str  # ">=" | "<="
    holds: bool
    detail: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {
            "check": self.name,
            "measured": self.measured,
            "bound": self.bound,
            "direction": self.direction,
            "holds": self.holds,
        }
        if self.detail:
            out["detail"] = dict(self.detail)
        return out


def make_bound_check(name, measured, bound, direction, detail=None) -> BoundCheck:
    if direction not in (">=", "<="):
        raise InvalidArgumentError(f"direction must be >= or <=, got {direction!r}")
    measured = float(measured)
    bound = float(bound)
    holds = measured >= bound if direction == ">=" else measured <= bound
    return BoundCheck(name, measured, bound, direction, holds, detail or {})


def tv_exact(p: DistributionVector, q: DistributionVector) -> TVReport:
    """Half the L1 gap between two distribution vectors."""
    if not isinstance(p, DistributionVector) or not isinstance(q, DistributionVector):
        raise InvalidArgumentError("tv_exact wants DistributionVector inputs")
    if p.elements != q.elements:
        raise InvalidArgumentError("distributions live on different universes")
    return TVReport(value=0.5 * float(np.abs(p.values - q.values).sum()), mode="exact")


def tv_between(a, b, max_n: int | None = None) -> TVReport:
    """tv_exact over vectorized models or mixtures."""
    return tv_exact(vectorize(a, max_n=max_n), vectorize(b, max_n=max_n))


def _draw(sampler, rng, m: int) -> np.ndarray:
    if callable(sampler):
        return np.asarray(sampler(rng, m))
    if isinstance(sampler, np.ndarray):
        return sampler
    from .model import MallowsMixture, sample_mixture

    if isinstance(sampler, MallowsModel):
        return sample_rim(sampler, rng, size=m)
    if isinstance(sampler, MallowsMixture):
        return sample_mixture(sampler, rng, size=m)
    raise InvalidArgumentError(f"cannot sample from {type(sampler).__name__}")


def tv_empirical(a, b, m: int, rng=None) -> TVReport:
    """Plug-in TV between two samplers from m draws each.

    Counts live in dictionaries keyed by ranking, so the universe size is
    unconstrained.  The reported tolerance is the heuristic sqrt(D/m)
    with D the observed joint support size; it is an additive error
    scale, not a confidence bound, and collapses to 0 only when both
    empirical laws agree exactly.
    """
    if m <= 0:
        raise InvalidArgumentError("sample count must be positive")
    rng = np.random.default_rng(rng)
    rows_a = _draw(a, rng, m)
    rows_b = _draw(b, rng, m)
    if rows_a.shape[1] != rows_b.shape[1]:
        raise InvalidArgumentError("samplers disagree on n")

    def freq(rows):
        vals, counts = np.unique(rows, axis=0, return_counts=True)
        return {tuple(v): c / rows.shape[0] for v, c in zip(vals, counts)}

    fa, fb = freq(rows_a), freq(rows_b)
    support = set(fa) | set(fb)
    value = 0.5 * sum(abs(fa.get(p, 0.0) - fb.get(p, 0.0)) for p in support)
    tol = min(1.0, float(np.sqrt(len(support) / min(len(rows_a), len(rows_b)))))
    return TVReport(value=float(value), mode="empirical", tolerance=tol)


def check_distinct_centers_bound(
    m1: MallowsModel, m2: MallowsModel, eps: float, max_n: int | None = None
) -> BoundCheck:
    """Distinct centers with both scales <= 1-eps keep TV >= eps/2."""
    if m1.center == m2.center:
        raise PreconditionError("centers must differ")
    if not 0 < eps <= 1:
        raise PreconditionError(f"eps must be in (0,1], got {eps}")
    if m1.phi > 1 - eps + 1e-15 or m2.phi > 1 - eps + 1e-15:
        raise PreconditionError("both scales must be at most 1-eps")
    tv = tv_between(m1, m2, max_n=max_n).value
    return make_bound_check(
        "distinct_centers_tv",
        measured=tv,
        bound=eps / 2.0,
        direction=">=",
        detail={"eps": eps, "phi": [m1.phi, m2.phi]},
    )


def same_center_gap_limit(n: int, mu: float) -> float:
    return mu * mu / (10.0 * n**3)


def check_same_center_bound(
    m1: MallowsModel, m2: MallowsModel, mu: float, max_n: int | None = None
) -> BoundCheck:
    """A scale gap within mu^2/(10 n^3) at a shared center keeps TV <= mu."""
    if m1.center != m2.center:
        raise PreconditionError("centers must match")
    if m1.n < 2:
        raise PreconditionError("need n >= 2")
    if not 0 < mu <= 1:
        raise PreconditionError(f"mu must be in (0,1], got {mu}")
    limit = same_center_gap_limit(m1.n, mu)
    gap = abs(m1.phi - m2.phi)
    if gap > limit + 1e-15:
        raise PreconditionError(
            f"scale gap {gap} exceeds the allowed {limit} for mu={mu}, n={m1.n}"
        )
    tv = tv_between(m1, m2, max_n=max_n).value
    return make_bound_check(
        "same_center_tv",
        measured=tv,
        bound=mu,
        direction="<=",
        detail={"mu": mu, "phi_gap": gap, "gap_limit": limit},
    )


def l1_combination(models, coeffs, max_n: int | None = None) -> float:
    """L1 norm of a signed combination of vectorized models."""
    models = list(models)
    coeffs = [float(z) for z in coeffs]
    if len(models) != len(coeffs):
        raise InvalidArgumentError("one coefficient per model required")
    if not models:
        return 0.0
    vecs = [vectorize(m, max_n=max_n) for m in models]
    base = vecs[0].elements
    if any(v.elements != base for v in vecs):
        raise InvalidArgumentError("models live on different universes")
    total = np.zeros_like(vecs[0].values)
    for z, v in zip(coeffs, vecs):
        total += z * v.values
    return float(np.abs(total).sum())
