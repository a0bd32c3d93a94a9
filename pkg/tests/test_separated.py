import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mallows_lab import MallowsMixture, MallowsModel
from mallows_lab.errors import (
    DegenerateContrastError,
    InvalidArgumentError,
    LearningFailure,
    PreconditionError,
    RecoveryFailure,
)
from mallows_lab.learn_separated import (
    CloseTestResult,
    PrefixCandidate,
    QuerySource,
    SeparationParams,
    _as_source,
    _pair_prob_in_rest,
    _ExactSource,
    _outer_contrast,
    _Workspace,
    estimate_weights,
    extend_prefix,
    find_prefixes,
    learn_mixture_separated,
    pair_order_prob,
    prefix_prob,
    test_separated_close,
)
from mallows_lab.lowerbound import LocalQuerySession, QueryLedger
from mallows_lab.model import sample_mixture, sample_rim
from mallows_lab.structures import pair_test_vector


def brute_prefix_prob(model, seq):
    total = 0.0
    t = len(seq)
    for p in itertools.permutations(sorted(model.center)):
        if p[:t] == tuple(seq):
            total += model.pmf(p)
    return total


def brute_pair_prob(model, x, y):
    total = 0.0
    for p in itertools.permutations(sorted(model.center)):
        if p.index(x) < p.index(y):
            total += model.pmf(p)
    return total


def two_component_mixture(n, phis=(0.2, 0.6), weights=(0.5, 0.5)):
    forward = tuple(range(1, n + 1))
    return MallowsMixture(
        components=(
            MallowsModel(phis[0], forward),
            MallowsModel(phis[1], tuple(reversed(forward))),
        ),
        weights=weights,
    )


# --- params and candidates --------------------------------------------------


def test_params_theta_defaults_to_tenth_of_gamma():
    p = SeparationParams(gamma=0.3, alpha=0.2)
    assert p.theta == pytest.approx(0.03)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"gamma": 0.0, "alpha": 0.2},
        {"gamma": 0.3, "alpha": 1.0},
        {"gamma": 0.3, "alpha": 0.2, "theta": -0.1},
        {"gamma": 0.3, "alpha": 0.2, "beta": 0.0},
        {"gamma": 0.3, "alpha": 0.2, "prefix_len": 0},
        {"gamma": 0.3, "alpha": 0.2, "max_tuples": 0},
    ],
)
def test_params_rejects_out_of_range(kwargs):
    with pytest.raises(InvalidArgumentError):
        SeparationParams(**kwargs)


def test_snap_phi_lands_on_grid_and_clips():
    p = SeparationParams(gamma=0.3, alpha=0.2, beta=0.05)
    assert p.snap_phi(0.213) == pytest.approx(0.2)
    assert p.snap_phi(0.98) == pytest.approx(0.7)  # ceiling is 1 - gamma
    assert p.snap_phi(-0.2) == 0.0


def test_prefix_candidate_rejects_repeats():
    with pytest.raises(InvalidArgumentError):
        PrefixCandidate(prefix=(1, 2, 1), phi_estimate=0.3)


# --- closed-form prefix probabilities ----------------------------------------


@pytest.mark.parametrize("phi", [0.0, 0.3, 0.7, 1.0])
@pytest.mark.parametrize("t", [0, 1, 2, 4, 6])
def test_prefix_prob_matches_enumeration(phi, t):
    center = (3, 1, 6, 2, 5, 4)
    model = MallowsModel(phi, center)
    for seq in [center[:t], tuple(reversed(center))[:t], (2, 6, 1, 5, 3, 4)[:t]]:
        assert prefix_prob(phi, center, seq) == pytest.approx(
            brute_prefix_prob(model, seq), abs=1e-12
        )


def test_prefix_prob_point_mass():
    center = (2, 4, 1, 3)
    assert prefix_prob(0.0, center, (2, 4)) == 1.0
    assert prefix_prob(0.0, center, (4, 2)) == 0.0
    with pytest.raises(InvalidArgumentError):
        prefix_prob(0.5, center, (2, 9))


@settings(max_examples=60, deadline=None)
@given(
    phi=st.floats(min_value=0.0, max_value=1.0),
    t=st.integers(min_value=0, max_value=4),
    seed=st.integers(min_value=0, max_value=2**31 - 1),
)
def test_prefix_prob_chain_rule(phi, t, seed):
    rng = np.random.default_rng(seed)
    center = tuple(rng.permutation(np.arange(1, 7)).tolist())
    seq = tuple(rng.permutation(np.asarray(center)).tolist()[:t])
    head = prefix_prob(phi, center, seq)
    tails = sum(
        prefix_prob(phi, center, seq + (e,)) for e in center if e not in seq
    )
    assert head == pytest.approx(tails, abs=1e-12)


def test_pair_order_prob_worked_values():
    assert pair_order_prob(0.4, 2) == pytest.approx(1.0 / 1.4, abs=1e-15)
    for d in range(2, 8):
        assert pair_order_prob(1.0, d) == pytest.approx(0.5, abs=1e-15)
        assert pair_order_prob(0.0, d) == 1.0
    with pytest.raises(InvalidArgumentError):
        pair_order_prob(0.5, 1)


@pytest.mark.parametrize("phi", [0.1, 0.5, 0.9, 1.0])
@pytest.mark.parametrize("d", [2, 3, 4, 5, 6])
def test_pair_order_prob_matches_enumeration(phi, d):
    model = MallowsModel(phi, tuple(range(1, d + 1)))
    assert pair_order_prob(phi, d) == pytest.approx(
        brute_pair_prob(model, 1, d), abs=1e-12
    )


@pytest.mark.parametrize("phi", [0.2, 0.75])
def test_pair_prob_in_rest_matches_enumeration(phi):
    center = (4, 1, 5, 3, 2, 6)
    model = MallowsModel(phi, center)
    for x, y in [(1, 3), (3, 1), (4, 6), (5, 2)]:
        got = _pair_prob_in_rest(phi, center, excluded=(), x=x, y=y)
        assert got == pytest.approx(brute_pair_prob(model, x, y), abs=1e-12)


# --- pattern tensors off the exact source -------------------------------------


def test_workspace_tensors_match_enumeration():
    mix = two_component_mixture(6, phis=(0.3, 0.8), weights=(0.4, 0.6))
    pairs = ((1, 2), (3, 4))
    ws = _Workspace(_ExactSource(mix), pairs)

    def brute(pattern, cond=None):
        seq = []
        for (a, b), bit in zip(pairs, pattern):
            seq.extend((b, a) if bit else (a, b))
        total = 0.0
        for w, c in zip(mix.weights, mix.components):
            for p in itertools.permutations(sorted(c.center)):
                if list(p[:4]) != seq:
                    continue
                if cond is not None and p.index(cond[0]) > p.index(cond[1]):
                    continue
                total += w * c.pmf(p)
        return total

    pattern = ws.pattern_tensor()
    order = ws.order_tensor(5, 6)
    for i, pat in enumerate(ws.patterns):
        assert pattern[i] == pytest.approx(brute(pat), abs=1e-12)
        assert order[i] == pytest.approx(brute(pat, cond=(5, 6)), abs=1e-12)


def test_sample_workspace_approaches_exact():
    mix = two_component_mixture(5, phis=(0.2, 0.6))
    rng = np.random.default_rng(7)
    rows = sample_mixture(mix, rng, size=60_000)
    pairs = ((1, 2),)
    ws_s = _Workspace(_as_source(rows), pairs)
    ws_e = _Workspace(_ExactSource(mix), pairs)
    assert np.abs(ws_s.pattern_tensor() - ws_e.pattern_tensor()).max() < 0.01
    assert np.abs(ws_s.order_tensor(3, 5) - ws_e.order_tensor(3, 5)).max() < 0.01


# --- prefix discovery ---------------------------------------------------------


def test_find_prefixes_point_mass_samples():
    center = (3, 1, 4, 2, 5)
    rows = np.tile(np.array(center), (2000, 1))
    params = SeparationParams(gamma=0.4, alpha=0.5, prefix_len=2)
    got = find_prefixes(rows, 1, params)
    assert got == [PrefixCandidate(prefix=(3, 1), phi_estimate=0.0)]


def test_find_prefixes_two_far_components_sampled():
    mix = two_component_mixture(12, phis=(0.2, 0.6))
    rng = np.random.default_rng(11)
    rows = sample_mixture(mix, rng, size=100_000)
    params = SeparationParams(gamma=0.3, alpha=0.25, beta=0.05, prefix_len=4)
    got = find_prefixes(rows, 2, params)
    by_prefix = {c.prefix: c.phi_estimate for c in got}
    assert (1, 2, 3, 4) in by_prefix
    assert (12, 11, 10, 9) in by_prefix
    assert abs(by_prefix[(1, 2, 3, 4)] - 0.2) <= params.beta
    assert abs(by_prefix[(12, 11, 10, 9)] - 0.6) <= params.beta


def test_find_prefixes_exact_mode_snaps_scales():
    mix = two_component_mixture(8, phis=(0.2, 0.6))
    params = SeparationParams(gamma=0.3, alpha=0.25, beta=0.05, prefix_len=4)
    got = find_prefixes(mix, 2, params)
    by_prefix = {c.prefix: c.phi_estimate for c in got}
    assert by_prefix[(1, 2, 3, 4)] == pytest.approx(0.2, abs=1e-9)
    assert by_prefix[(8, 7, 6, 5)] == pytest.approx(0.6, abs=1e-9)


def test_find_prefixes_ranked_heaviest_first():
    mix = two_component_mixture(8, phis=(0.2, 0.6), weights=(0.8, 0.2))
    params = SeparationParams(gamma=0.3, alpha=0.15, beta=0.05, prefix_len=3)
    got = find_prefixes(mix, 2, params)
    assert got[0].prefix == (1, 2, 3)  # the weight-0.8 component's front


def test_find_prefixes_rejects_overlong_prefix():
    mix = two_component_mixture(8)
    params = SeparationParams(gamma=0.3, alpha=0.25, prefix_len=9)
    with pytest.raises(InvalidArgumentError):
        find_prefixes(mix, 2, params)


# --- prefix extension ----------------------------------------------------------


def test_extend_prefix_single_component_sampled():
    center = tuple(range(1, 9))
    rng = np.random.default_rng(3)
    rows = sample_rim(MallowsModel(0.5, center), rng, size=100_000)
    got = extend_prefix(rows, [()], [0.5], 1)
    assert got == [[center]]


def test_extend_prefix_exact_two_components():
    mix = two_component_mixture(8, phis=(0.2, 0.6))
    prefixes = [(1, 2), (8, 7)]
    got = extend_prefix(mix, prefixes, [0.2, 0.6], 2)
    assert tuple(range(1, 9)) in got[0]
    assert tuple(reversed(range(1, 9))) in got[1]
    again = extend_prefix(mix, prefixes, [0.2, 0.6], 2)
    assert got == again


def test_extend_prefix_requires_long_enough_prefixes():
    mix = two_component_mixture(8)
    with pytest.raises(InvalidArgumentError):
        extend_prefix(mix, [(1,), (8,)], [0.2, 0.6], 2)


def test_pair_test_vector_complement_identity():
    for phi in (0.0, 0.25, 0.5, 0.9, 1.0):
        fwd = pair_test_vector(phi, x_first=True)
        rev = pair_test_vector(phi, x_first=False)
        assert rev[0] == pytest.approx(-fwd[1], abs=1e-15)
        assert rev[1] == pytest.approx(-fwd[0], abs=1e-15)


def test_extend_prefix_guess_flip_collapses_at_uniform_other():
    # the other component sits at scale 1, where both contrast
    # orientations coincide, so the two guesses give one variant
    forward = tuple(range(1, 7))
    mix = MallowsMixture(
        components=(
            MallowsModel(1.0, forward),
            MallowsModel(0.5, tuple(reversed(forward))),
        ),
        weights=(0.5, 0.5),
    )
    got = extend_prefix(mix, [(1, 2), (6, 5)], [1.0, 0.5], 2)
    assert len(got[1]) == 1
    assert got[1][0] == tuple(reversed(forward))


def test_extend_prefix_cyclic_majority_raises():
    rows = np.array([(1, 2, 3), (3, 1, 2), (2, 3, 1)])
    with pytest.raises(RecoveryFailure) as info:
        extend_prefix(rows, [()], [0.5], 1)
    assert set(info.value.triple) == {1, 2, 3}


def test_contrast_gap_meets_separation_floor():
    # exact contrasts with the correct orientation guess clear the
    # alpha * (gamma/4)^(k-1) * gamma^(2k) margin on every outside pair
    mix = two_component_mixture(7, phis=(0.2, 0.6), weights=(0.6, 0.4))
    gamma, alpha, k = 0.4, 0.4, 2
    floor = alpha * (gamma / 4.0) ** (k - 1) * gamma ** (2 * k)
    src = _ExactSource(mix)
    for i, prefix in enumerate([(1, 2), (7, 6)]):
        pairs = ((prefix[0], prefix[1]),)
        other = mix.components[1 - i]
        flipped = other.center.index(prefix[0]) > other.center.index(prefix[1])
        z = _outer_contrast([pair_test_vector(other.phi, x_first=not flipped)])
        ws = _Workspace(src, pairs)
        base = ws.pattern_tensor()
        rest = [e for e in mix.elements if e not in prefix]
        target = mix.components[i]
        for x, y in itertools.combinations(rest, 2):
            t_x = ws.order_tensor(x, y)
            gap = abs(float(z @ t_x)) - abs(float(z @ (base - t_x)))
            if target.center.index(x) > target.center.index(y):
                gap = -gap
            assert gap >= floor


# --- weight estimation ----------------------------------------------------------


def test_estimate_weights_single_component():
    got = estimate_weights(MallowsModel(0.4, (1, 2, 3, 4)), [(1, 2, 3, 4)], [0.4])
    assert got.weights == (1.0,)
    assert got.raw[0] == pytest.approx(1.0, abs=1e-12)


def test_estimate_weights_exact_pair():
    mix = two_component_mixture(8, phis=(0.2, 0.6), weights=(0.3, 0.7))
    centers = [c.center for c in mix.components]
    got = estimate_weights(mix, centers, [0.2, 0.6])
    assert got.weights[0] == pytest.approx(0.3, abs=1e-8)
    assert got.weights[1] == pytest.approx(0.7, abs=1e-8)


@pytest.mark.parametrize(
    "phis,weights,n",
    [
        ((0.1, 0.5), (0.25, 0.75), 6),
        ((0.3, 0.7), (0.5, 0.5), 7),
        ((0.1, 0.4, 0.8), (0.2, 0.3, 0.5), 8),
    ],
)
def test_estimate_weights_exact_grid(phis, weights, n):
    rng = np.random.default_rng(5)
    centers = []
    seen = set()
    while len(centers) < len(phis):
        c = tuple(rng.permutation(np.arange(1, n + 1)).tolist())
        if c[:4] not in seen:  # keep the contrast prefixes distinct
            centers.append(c)
            seen.add(c[:4])
    mix = MallowsMixture(
        components=tuple(MallowsModel(p, c) for p, c in zip(phis, centers)),
        weights=weights,
    )
    got = estimate_weights(mix, centers, list(phis))
    for est, true in zip(got.weights, weights):
        assert est == pytest.approx(true, abs=1e-8)


def test_estimate_weights_equal_scales_degenerate():
    forward = tuple(range(1, 7))
    mix = MallowsMixture(
        components=(
            MallowsModel(0.4, forward),
            MallowsModel(0.4, (1, 2, 6, 5, 4, 3)),
        ),
        weights=(0.5, 0.5),
    )
    with pytest.raises(DegenerateContrastError):
        estimate_weights(mix, [c.center for c in mix.components], [0.4, 0.4])


def test_estimate_weights_normalizes_under_misspecified_scales():
    mix = two_component_mixture(8, phis=(0.2, 0.6), weights=(0.3, 0.7))
    centers = [c.center for c in mix.components]
    got = estimate_weights(mix, centers, [0.3, 0.5])  # both scales off
    assert sum(got.weights) == pytest.approx(1.0, abs=1e-12)
    assert all(0.0 <= w <= 1.0 for w in got.weights)
    assert got.raw != got.weights


def test_estimate_weights_rejects_partial_centers():
    mix = two_component_mixture(6)
    with pytest.raises(InvalidArgumentError):
        estimate_weights(mix, [(1, 2, 3), (6, 5, 4)], [0.2, 0.6])


# --- the closeness tester -------------------------------------------------------


TEST_PARAMS = SeparationParams(gamma=0.3, alpha=0.25, theta=0.03, beta=0.05)


def test_close_accepts_the_truth_exactly():
    mix = two_component_mixture(10, phis=(0.2, 0.6))
    got = test_separated_close(mix, mix, TEST_PARAMS)
    assert got.accept
    assert got.case is None
    assert got.statistic < 1e-3  # worst margin ratio, far under the line


def test_close_rejects_deep_pair_swap_as_order_case():
    mix = two_component_mixture(10, phis=(0.2, 0.6))
    center = list(range(1, 11))
    center[6], center[7] = center[7], center[6]  # swap outside both fronts
    candidate = MallowsMixture(
        components=(
            MallowsModel(0.2, tuple(center)),
            mix.components[1],
        ),
        weights=(0.5, 0.5),
    )
    got = test_separated_close(mix, candidate, TEST_PARAMS)
    assert not got.accept
    assert got.case == "order"
    # the offending pair involves one of the displaced elements
    assert set(got.pair) & {7, 8}


def test_close_rejects_scale_shift_as_scale_case():
    mix = two_component_mixture(10, phis=(0.2, 0.6))
    shifted = MallowsMixture(
        components=(
            MallowsModel(0.2 + 2 * TEST_PARAMS.theta, mix.components[0].center),
            mix.components[1],
        ),
        weights=(0.5, 0.5),
    )
    got = test_separated_close(mix, shifted, TEST_PARAMS)
    assert not got.accept
    assert got.case == "scale"
    assert got.component == 0


def test_close_rejects_front_swap():
    mix = two_component_mixture(10, phis=(0.2, 0.6))
    candidate = MallowsMixture(
        components=(
            MallowsModel(0.2, (2, 1) + tuple(range(3, 11))),
            mix.components[1],
        ),
        weights=(0.5, 0.5),
    )
    assert not test_separated_close(mix, candidate, TEST_PARAMS).accept


def test_close_preconditions():
    mix = two_component_mixture(10, phis=(0.2, 0.6))
    near = MallowsMixture(
        components=(
            MallowsModel(0.55, mix.components[0].center),
            MallowsModel(0.6, mix.components[1].center),
        ),
        weights=(0.5, 0.5),
    )
    with pytest.raises(PreconditionError):
        test_separated_close(mix, near, TEST_PARAMS)
    with pytest.raises(PreconditionError):
        test_separated_close(
            mix, mix, SeparationParams(gamma=0.3, alpha=0.25, theta=0.2)
        )
    small = two_component_mixture(5, phis=(0.2, 0.6))
    with pytest.raises(PreconditionError):
        test_separated_close(small, small, TEST_PARAMS)


def test_close_result_round_trips_to_dict():
    mix = two_component_mixture(10, phis=(0.2, 0.6))
    got = test_separated_close(mix, mix, TEST_PARAMS)
    d = got.as_dict()
    assert d["accept"] is True
    assert set(d) == {
        "accept", "case", "component", "pair",
        "statistic", "threshold", "scaled", "orientation",
    }


# --- the full pipeline ----------------------------------------------------------


def test_learn_exact_single_component():
    model = MallowsModel(0.4, (2, 4, 1, 5, 3, 6))
    params = SeparationParams(gamma=0.35, alpha=0.5, beta=0.05)
    got = learn_mixture_separated(model, 1, params)
    assert got.components[0].center == model.center
    assert got.components[0].phi == pytest.approx(0.4, abs=1e-9)
    assert got.weights == (1.0,)


def test_learn_exact_two_components():
    mix = two_component_mixture(8, phis=(0.2, 0.6), weights=(0.35, 0.65))
    params = SeparationParams(gamma=0.3, alpha=0.25, beta=0.05)
    got = learn_mixture_separated(mix, 2, params)
    by_center = {c.center: (c.phi, w) for c, w in zip(got.components, got.weights)}
    for true_c, true_w in zip(mix.components, mix.weights):
        phi, w = by_center[true_c.center]
        assert phi == pytest.approx(true_c.phi, abs=1e-9)
        assert w == pytest.approx(true_w, abs=1e-6)


def test_learn_sampled_two_components():
    mix = two_component_mixture(10, phis=(0.2, 0.6))
    rng = np.random.default_rng(17)
    rows = sample_mixture(mix, rng, size=300_000)
    params = SeparationParams(
        gamma=0.3, alpha=0.25, theta=0.03, beta=0.025, prefix_len=4
    )
    got = learn_mixture_separated(rows, 2, params)
    by_center = {c.center: (c.phi, w) for c, w in zip(got.components, got.weights)}
    for true_c, true_w in zip(mix.components, mix.weights):
        phi, w = by_center[true_c.center]
        assert abs(phi - true_c.phi) <= 0.05
        assert abs(w - true_w) <= 0.05


def test_learn_equal_scales_fails_with_diagnostics():
    forward = tuple(range(1, 7))
    mix = MallowsMixture(
        components=(
            MallowsModel(0.4, forward),
            MallowsModel(0.4, tuple(reversed(forward))),
        ),
        weights=(0.5, 0.5),
    )
    params = SeparationParams(gamma=0.3, alpha=0.25, beta=0.05, prefix_len=3)
    with pytest.raises(LearningFailure) as info:
        learn_mixture_separated(mix, 2, params)
    assert info.value.diagnostics["tuples_skipped_phi_gap"] > 0


def test_learn_through_local_queries_accrues_cost():
    model = MallowsModel(0.3, (1, 2, 3, 4, 5))
    ledger = QueryLedger()
    session = LocalQuerySession(model, mode="exact", ledger=ledger)
    params = SeparationParams(gamma=0.4, alpha=0.5, beta=0.05, prefix_len=2)
    got = learn_mixture_separated(QuerySource(session, tau=1e-4), 1, params)
    assert got.components[0].center == model.center
    assert got.components[0].phi == pytest.approx(0.3, abs=1e-9)
    assert ledger.total_cost == len(ledger.entries) * Fraction(10**8)
    assert len(ledger.entries) > 0
