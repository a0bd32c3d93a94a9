import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mallows_lab import (
    ExactOracle,
    MallowsMixture,
    MallowsModel,
    restrict,
    vectorize,
)
from mallows_lab.errors import DegenerateInputError, InvalidArgumentError
from mallows_lab.structures import (
    BlockStructure,
    OrderedBlockStructure,
    OrderStructure,
    block_positions,
    block_prob,
    block_prob_floor,
    block_tensor,
    ortho_test_vector,
    pair_marginal_vector,
    pair_test_vector,
    satisfies,
    structure_from_config,
    structure_to_config,
)


# Brute-force event probability straight off the pmf, independent of the
# tensor code under test.
def brute_event_prob(target, predicate):
    total = 0.0
    for p in itertools.permutations(sorted(target.elements)):
        if predicate(p):
            total += target.pmf(p)
    return total


def ordered_run_predicate(orders, before=()):
    def pred(p):
        pos = {e: i for i, e in enumerate(p)}
        prev_end = -1
        for order in orders:
            spots = [pos[e] for e in order]
            if spots != sorted(spots):
                return False
            if spots[-1] - spots[0] + 1 != len(order):
                return False
            if spots[0] <= prev_end:
                return False
            prev_end = spots[-1]
        return all(pos[x] < pos[y] for x, y in before)

    return pred


# --- satisfies ------------------------------------------------------------


def test_block_structure_worked_example():
    s = BlockStructure(((1, 2), (4, 5, 6)))
    assert satisfies((1, 2, 3, 7, 6, 5, 4), s)
    assert not satisfies((1, 3, 4, 2, 5, 6, 7), s)
    assert satisfies((1, 2, 3, 4, 5, 6, 7), s)
    # blocks out of order
    assert not satisfies((4, 5, 6, 3, 1, 2, 7), s)


def test_order_structure_worked_example():
    s = OrderStructure(((1, 2), (4, 5, 6)))
    assert satisfies((1, 3, 4, 2, 5, 6, 7), s)
    assert satisfies((1, 2, 3, 7, 4, 5, 6), s)
    assert not satisfies((2, 1, 3, 4, 5, 6, 7), s)


def test_ordered_block_structure():
    s = OrderedBlockStructure(((2, 1), (4, 5, 6)))
    assert satisfies((2, 1, 3, 4, 5, 6, 7), s)
    assert satisfies((3, 2, 1, 7, 4, 5, 6), s)
    assert not satisfies((1, 2, 3, 4, 5, 6, 7), s)  # inner order wrong
    assert not satisfies((2, 3, 1, 4, 5, 6, 7), s)  # not consecutive


def test_ordered_block_is_conjunction():
    s = OrderedBlockStructure(((2, 1), (4, 6)))
    for p in itertools.permutations(range(1, 7)):
        both = satisfies(p, s.as_block_structure()) and satisfies(
            p, s.as_order_structure()
        )
        assert satisfies(p, s) == both


def test_structure_validation():
    with pytest.raises(InvalidArgumentError):
        BlockStructure(((1, 2), (2, 3)))
    with pytest.raises(InvalidArgumentError):
        OrderStructure(((1, 1),))
    with pytest.raises(InvalidArgumentError):
        BlockStructure(())
    with pytest.raises(InvalidArgumentError):
        satisfies((1, 2, 3), BlockStructure(((1, 4),)))


def test_structure_config_roundtrip():
    for s in [
        BlockStructure(((1, 2), (4, 5, 6))),
        OrderedBlockStructure(((2, 1), (6, 4, 5))),
        OrderStructure(((3, 1), (2, 5))),
    ]:
        assert structure_from_config(structure_to_config(s)) == s
    with pytest.raises(InvalidArgumentError):
        structure_from_config({"blocks": [[1, 2]]})


# --- block position enumeration --------------------------------------------


def test_block_positions_count():
    # placing runs of sizes s_1..s_j is choosing j slots among n - sum + j
    for n in range(3, 8):
        for sizes in [(2,), (2, 2), (1, 3), (2, 1, 1)]:
            if sum(sizes) > n:
                continue
            starts = block_positions(sizes, n)
            expect = math.comb(n - sum(sizes) + len(sizes), len(sizes))
            assert len(starts) == expect
            assert len(set(starts)) == len(starts)
            for st_ in starts:
                ends = [a + s - 1 for a, s in zip(st_, sizes)]
                assert all(a >= 1 for a in st_) and ends[-1] <= n
                assert all(e < a for e, a in zip(ends, st_[1:]))


# --- block tensors -----------------------------------------------------------


def test_block_tensor_matches_enumeration():
    mix = MallowsMixture(
        weights=(0.6, 0.4),
        components=(MallowsModel(0.3, (2, 1, 3, 4, 5)), MallowsModel(0.8, (5, 4, 3, 2, 1))),
    )
    oracle = ExactOracle(mix)
    blocks = ((1, 3), (4, 5))
    tensor = block_tensor(oracle, blocks)
    assert tensor.values.shape == (2, 2)
    for i, o1 in enumerate(tensor.axis_orderings(0)):
        for j, o2 in enumerate(tensor.axis_orderings(1)):
            want = brute_event_prob(mix, ordered_run_predicate([o1, o2]))
            assert tensor.values[i, j] == pytest.approx(want, abs=1e-12)


def test_block_tensor_with_before_pairs():
    model = MallowsModel(0.5, (1, 2, 3, 4, 5))
    oracle = ExactOracle(model)
    tensor = block_tensor(oracle, ((2, 4),), before=((1, 5),))
    for i, order in enumerate(tensor.axis_orderings(0)):
        want = brute_event_prob(model, ordered_run_predicate([order], before=((1, 5),)))
        assert tensor.values[i] == pytest.approx(want, abs=1e-12)


def test_block_prob_matches_satisfies_enumeration():
    model = MallowsModel(0.6, (3, 1, 2, 5, 4))
    oracle = ExactOracle(model)
    for s in [
        BlockStructure(((1, 2), (4, 5))),
        BlockStructure(((2, 3, 5),)),
        OrderedBlockStructure(((2, 1), (5, 4))),
    ]:
        want = brute_event_prob(model, lambda p: satisfies(p, s))
        assert block_prob(oracle, s) == pytest.approx(want, abs=1e-12)


def test_block_tensor_total_is_block_event_prob():
    model = MallowsModel(0.4, (1, 2, 3, 4, 5, 6))
    oracle = ExactOracle(model)
    tensor = block_tensor(oracle, ((1, 6), (3, 4)))
    want = brute_event_prob(
        model, lambda p: satisfies(p, BlockStructure(((1, 6), (3, 4))))
    )
    assert tensor.total() == pytest.approx(want, abs=1e-12)


def test_block_tensor_contract_indicator_picks_entry():
    oracle = ExactOracle(MallowsModel(0.7, (1, 2, 3, 4)))
    tensor = block_tensor(oracle, ((1, 2), (3, 4)))
    e0 = np.array([1.0, 0.0])
    e1 = np.array([0.0, 1.0])
    assert tensor.contract([e0, e1]) == pytest.approx(tensor.values[0, 1], abs=1e-15)
    ones = np.ones(2)
    assert tensor.contract([ones, ones]) == pytest.approx(tensor.total(), abs=1e-12)


def test_block_tensor_rank_one_for_single_model():
    # single-model tensors factor: block-event mass times per-block
    # restricted marginals, even when the center breaks the structure
    for center in [(1, 2, 3, 4, 5), (4, 2, 5, 1, 3)]:
        model = MallowsModel(0.45, center)
        oracle = ExactOracle(model)
        blocks = ((1, 4), (3, 5))
        tensor = block_tensor(oracle, blocks)
        mass = tensor.total()
        vs = [
            vectorize(MallowsModel(model.phi, restrict(center, set(b)))).values
            for b in blocks
        ]
        outer = mass * np.multiply.outer(vs[0], vs[1])
        np.testing.assert_allclose(tensor.values, outer, atol=1e-12)


def test_inner_order_law_independent_of_run_position():
    # conditioned on a set filling the run [a, a+|S|), the inner order is
    # the restricted model's law, whatever a is
    model = MallowsModel(0.6, (3, 1, 5, 2, 4))
    sub = (1, 3, 4)
    want = vectorize(MallowsModel(0.6, restrict(model.center, set(sub)))).values
    orders = list(itertools.permutations(sorted(sub)))
    for a in range(1, 4):

        def run_at(p, order, a=a):
            pos = {e: i for i, e in enumerate(p)}
            return all(pos[e] == a - 1 + i for i, e in enumerate(order))

        joint = np.array(
            [brute_event_prob(model, lambda p, o=o: run_at(p, o)) for o in orders]
        )
        np.testing.assert_allclose(joint / joint.sum(), want, atol=1e-12)


# --- the probability floor ---------------------------------------------------

PHI_GRID = [0.0, 0.2, 0.5, 0.8, 1.0]


def all_block_structures(universe, max_size):
    """Every block structure over subsets of the universe up to max_size."""
    universe = sorted(universe)
    for size in range(1, max_size + 1):
        for subset in itertools.combinations(universe, size):
            for perm in itertools.permutations(subset):
                for ncuts in range(size):
                    for cuts in itertools.combinations(range(1, size), ncuts):
                        bounds = (0,) + cuts + (size,)
                        segments = [perm[a:b] for a, b in zip(bounds, bounds[1:])]
                        # each block is a set; only keep the sorted writing
                        if any(seg != tuple(sorted(seg)) for seg in segments):
                            continue
                        yield BlockStructure(tuple(segments))


def test_block_prob_floor_exhaustive_small():
    n = 4
    structures = set(all_block_structures(range(1, n + 1), 3))
    for s in structures:
        floor = block_prob_floor(n, s.size)
        for phi in [0.3, 1.0]:
            for center in itertools.permutations(range(1, n + 1)):
                if not satisfies(center, s):
                    continue
                p = block_prob(ExactOracle(MallowsModel(phi, center)), s)
                assert p >= floor, (s, phi, center, p, floor)


def test_block_prob_floor_random_n6():
    rng = np.random.default_rng(20260819)
    n = 6
    for _ in range(60):
        size = int(rng.integers(2, 5))
        chosen = list(rng.choice(np.arange(1, n + 1), size=size, replace=False))
        ncuts = int(rng.integers(0, size))
        cuts = sorted(rng.choice(np.arange(1, size), size=ncuts, replace=False))
        bounds = [0] + list(cuts) + [size]
        s = BlockStructure(
            tuple(tuple(sorted(chosen[a:b])) for a, b in zip(bounds, bounds[1:]))
        )
        center = list(rng.permutation(np.arange(1, n + 1)))
        # rebuild the center so it satisfies the structure
        rest = [e for e in center if e not in set(chosen)]
        blocks_flat = [e for b in s.blocks for e in b]
        center = tuple(rest[: n - size] + blocks_flat)
        assert satisfies(center, s)
        phi = float(rng.uniform(0.0, 1.0))
        p = block_prob(ExactOracle(MallowsModel(phi, center)), s)
        assert p >= block_prob_floor(n, s.size)


# --- contrast vectors ---------------------------------------------------------


def test_pair_test_vector_frozen_example():
    v = pair_test_vector(0.5, x_first=True)
    np.testing.assert_allclose(v, [1.0 / 3.0, -2.0 / 3.0], atol=1e-15)
    m = pair_marginal_vector(0.5, x_first=True)
    np.testing.assert_allclose(m, [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)
    assert abs(v @ m) < 1e-15


@given(
    phi=st.floats(0.0, 1.0, allow_nan=False),
    phi2=st.floats(0.0, 1.0, allow_nan=False),
    order=st.booleans(),
)
def test_pair_test_vector_kills_match_and_sees_mismatch(phi, phi2, order):
    v = pair_test_vector(phi, x_first=order)
    assert abs(v @ pair_marginal_vector(phi, x_first=order)) < 1e-15
    same = abs(v @ pair_marginal_vector(phi2, x_first=order))
    assert abs(same - abs(phi - phi2) / ((1 + phi) * (1 + phi2))) < 1e-12
    assert same >= abs(phi - phi2) / 4 - 1e-12
    flipped = abs(v @ pair_marginal_vector(phi2, x_first=not order))
    assert flipped >= (1 - phi * phi2) / 4 - 1e-12
    assert flipped >= abs(phi - phi2) / 4 - 1e-12


def test_pair_marginal_matches_model():
    # the two-coordinate marginal really is the n=2 model vectorized
    for phi in PHI_GRID:
        np.testing.assert_allclose(
            pair_marginal_vector(phi, x_first=True),
            vectorize(MallowsModel(phi, (1, 2))).values,
            atol=1e-15,
        )
        np.testing.assert_allclose(
            pair_marginal_vector(phi, x_first=False),
            vectorize(MallowsModel(phi, (2, 1))).values,
            atol=1e-15,
        )


def test_pair_test_vector_rejects_bad_phi():
    with pytest.raises(InvalidArgumentError):
        pair_test_vector(1.5)


def test_ortho_test_vector_basic():
    rng = np.random.default_rng(7)
    target = rng.normal(size=6)
    others = [rng.normal(size=6) for _ in range(3)]
    unit, proj = ortho_test_vector(target, others)
    assert np.linalg.norm(unit) == pytest.approx(1.0, abs=1e-12)
    for u in others:
        assert abs(unit @ u) < 1e-9
    assert proj > 0
    assert unit @ target == pytest.approx(proj, abs=1e-12)
    # projection length equals the distance from target to the span
    a = np.stack(others, axis=1)
    coef, *_ = np.linalg.lstsq(a, target, rcond=None)
    assert proj == pytest.approx(float(np.linalg.norm(target - a @ coef)), rel=1e-9)


def test_ortho_test_vector_degenerate_raises():
    v1 = np.array([1.0, 0.0, 0.0])
    v2 = np.array([0.0, 1.0, 0.0])
    with pytest.raises(DegenerateInputError):
        ortho_test_vector(v1 + 2 * v2, [v1, v2])
    with pytest.raises(DegenerateInputError):
        ortho_test_vector(np.zeros(3), [v1])


def test_ortho_test_vector_handles_dependent_others():
    v1 = np.array([1.0, 0.0, 0.0, 0.0])
    unit, proj = ortho_test_vector(np.array([0.0, 0.0, 1.0, 1.0]), [v1, 2 * v1, v1])
    assert abs(unit @ v1) < 1e-12
    assert proj == pytest.approx(math.sqrt(2), rel=1e-12)


def test_ortho_projection_floor_distinct_centers():
    # distinct-center columns at shared phi keep a guaranteed margin:
    # projecting any column off the others' span leaves at least
    # (1/s!) * (eps^s / sqrt(s!))^k with eps = 1 - phi
    s = 3
    fact = math.factorial(s)
    centers = list(itertools.permutations(range(1, s + 1)))
    for phi in [0.0, 0.3, 0.5]:
        eps = 1.0 - phi
        cols = [vectorize(MallowsModel(phi, c)).values for c in centers]
        for k in (2, 3):
            floor = (eps**s / math.sqrt(fact)) ** k / fact
            for chosen in itertools.combinations(range(len(centers)), k):
                for t in chosen:
                    others = [cols[j] for j in chosen if j != t]
                    _, proj = ortho_test_vector(cols[t], others)
                    assert proj >= floor - 1e-15, (phi, chosen, t, proj, floor)


@settings(max_examples=40)
@given(
    phi=st.sampled_from([0.1, 0.4, 0.7]),
    seed=st.integers(0, 10**6),
)
def test_ortho_vector_separates_mixture_components(phi, seed):
    # the vector built to kill k-1 components leaves the target's weight visible
    rng = np.random.default_rng(seed)
    centers = [tuple(rng.permutation(np.arange(1, 5))) for _ in range(3)]
    if len(set(centers)) < 3:
        return
    cols = [vectorize(MallowsModel(phi, c)).values for c in centers]
    w = rng.dirichlet(np.ones(3))
    mixture_vec = sum(wi * c for wi, c in zip(w, cols))
    unit, proj = ortho_test_vector(cols[0], cols[1:])
    assert unit @ mixture_vec == pytest.approx(w[0] * proj, abs=1e-10)
