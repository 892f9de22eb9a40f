from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from physmo.errors import ContractViolation, PhysmoError
from physmo.motion import Condition, MotionSequence, SpatialControl, TaskCondition
from physmo.preferences import (PreferencePair, ScoredCandidate,
                                acceptance_rate, build_dataset, dominates,
                                fuse_select, select_pair)
from physmo.rewards import RewardVector

COND = Condition(TaskCondition("walk_forward", 0.5))
NAMES = ("track", "slide", "task")


class Vec:
    """Bare reward lookup; lets dominance probes use out-of-range values."""

    def __init__(self, track, slide, task):
        self._d = {"track": track, "slide": slide, "task": task}

    def value(self, name):
        return self._d[name]

    def values(self, names):
        return np.array([self._d[n] for n in names])


def random_vector(rng) -> RewardVector:
    return RewardVector(track=-float(rng.exponential(2.0)),
                        slide=-float(rng.integers(0, 13)) / 12.0,
                        task=float(rng.uniform(-1.0, 1.0)),
                        control=-float(rng.exponential(0.5)))


def make_candidates(vectors) -> list[ScoredCandidate]:
    seq = MotionSequence(np.zeros((2, 3)), 1 / 30)
    return [ScoredCandidate(i, seq, None, v) for i, v in enumerate(vectors)]


def brute_force_pair(vectors, names):
    """Exhaustive max of the minimum standardized margin over dominating
    ordered pairs, consulting only rewards that vary within the batch;
    first maximum in row-major order."""
    raw = np.array([v.values(tuple(names)) for v in vectors])
    live = raw.std(axis=0) > 0.0
    if not live.any():
        return None
    raw = raw[:, live]
    z = (raw - raw.mean(axis=0)) / raw.std(axis=0)
    best, arg = -np.inf, None
    for i in range(len(vectors)):
        for j in range(len(vectors)):
            if i != j and bool(np.all(raw[i] > raw[j])):
                margin = float(np.min(z[i] - z[j]))
                if margin > best:
                    best, arg = margin, (i, j)
    return arg


def test_dominates_matches_direct_comparison():
    rng = np.random.default_rng(3)
    for _ in range(500):
        a, b = random_vector(rng), random_vector(rng)
        expect = all(a.value(n) > b.value(n) for n in NAMES)
        assert dominates(a, b, NAMES) is expect


def test_dominates_is_irreflexive_and_antisymmetric():
    rng = np.random.default_rng(4)
    for _ in range(200):
        a, b = random_vector(rng), random_vector(rng)
        assert not dominates(a, a, NAMES)
        assert not (dominates(a, b, NAMES) and dominates(b, a, NAMES))


def test_one_tie_blocks_dominance():
    a = Vec(-1.0, -0.1, 0.8)
    b = Vec(-2.0, -0.1, 0.5)       # equal slide
    assert not dominates(a, b, NAMES)
    assert dominates(a, Vec(-2.0, -0.2, 0.5), NAMES)


@settings(max_examples=60)
@given(st.integers(0, 2**31 - 1),
       st.sampled_from(["exp", "affine", "cube"]))
def test_dominance_invariant_under_increasing_transforms(seed, kind):
    rng = np.random.default_rng(seed)
    fns = {"exp": np.exp,
           "affine": lambda x: 3.7 * x + 11.0,
           "cube": lambda x: x ** 3}
    f = fns[kind]
    a = rng.standard_normal(3)
    b = np.where(rng.uniform(size=3) < 0.3, a, rng.standard_normal(3))
    va, vb = Vec(*a), Vec(*b)
    ta, tb = Vec(*f(a)), Vec(*f(b))
    assert dominates(va, vb, NAMES) == dominates(ta, tb, NAMES)
    assert dominates(vb, va, NAMES) == dominates(tb, ta, NAMES)


def test_select_pair_matches_brute_force_oracle():
    rng = np.random.default_rng(11)
    hits = 0
    for _ in range(200):
        vectors = [random_vector(rng) for _ in range(12)]
        expect = brute_force_pair(vectors, NAMES)
        got = select_pair(make_candidates(vectors), COND)
        if expect is None:
            assert got is None
        else:
            hits += 1
            i, j = expect
            assert got.win_rewards is vectors[i]
            assert got.lose_rewards is vectors[j]
    assert hits > 100      # the oracle comparison must actually exercise pairs


def test_select_pair_requires_two_candidates():
    with pytest.raises(ContractViolation):
        select_pair(make_candidates([random_vector(np.random.default_rng(0))]),
                    COND)


def test_select_pair_identical_rewards_yields_none():
    v = RewardVector(track=-1.0, slide=-0.5, task=0.1)
    assert select_pair(make_candidates([v] * 5, ), COND) is None


def test_select_pair_forced_choice():
    vs = [RewardVector(track=-1.0, slide=-0.2, task=0.9),
          RewardVector(track=-2.0, slide=-0.1, task=0.5),
          RewardVector(track=-3.0, slide=-0.3, task=0.6)]
    # only (0, 2) dominates: 0 vs 1 loses on slide, 1 vs 2 loses on task
    pair = select_pair(make_candidates(vs), COND)
    assert (pair.win_rewards, pair.lose_rewards) == (vs[0], vs[2])
    assert pair.mode == "dominance"
    assert pair.names == NAMES


def test_select_pair_drops_batch_constant_rewards():
    vs = [RewardVector(track=-1.0, slide=-0.25, task=0.9),
          RewardVector(track=-2.0, slide=-0.25, task=0.5),
          RewardVector(track=-3.0, slide=-0.25, task=0.1)]
    # slide ties across the whole batch, so it carries no information here;
    # the pair is decided on the rewards that actually vary.
    pair = select_pair(make_candidates(vs), COND)
    assert pair is not None
    assert pair.names == ("track", "task")
    assert (pair.win_rewards, pair.lose_rewards) == (vs[0], vs[2])


def test_constructed_dominance_pair_is_checked():
    seq = MotionSequence(np.zeros((2, 3)), 1 / 30)
    win = RewardVector(track=-2.0, slide=-0.1, task=0.5)
    lose = RewardVector(track=-1.0, slide=-0.2, task=0.4)
    with pytest.raises(ContractViolation):
        PreferencePair(COND, seq, seq, win, lose, mode="dominance")
    # under a restricted reward set the same pair is legitimate
    PreferencePair(COND, seq, seq, win, lose, mode="dominance",
                   names=("slide", "task"))


def test_fuse_agrees_with_dominance_under_total_order():
    vs = [RewardVector(track=-1.0, slide=-0.1, task=0.9),
          RewardVector(track=-2.0, slide=-0.2, task=0.6),
          RewardVector(track=-3.0, slide=-0.4, task=0.1)]
    cands = make_candidates(vs)
    dom = select_pair(cands, COND)
    fuse = fuse_select(cands, {n: 1.0 for n in NAMES}, COND)
    assert (fuse.win_rewards, fuse.lose_rewards) == \
        (dom.win_rewards, dom.lose_rewards)
    assert fuse.mode == "fuse"


def test_fuse_two_candidates_better_sum_wins():
    vs = [RewardVector(track=-5.0, slide=-0.9, task=0.0),
          RewardVector(track=-1.0, slide=-0.1, task=0.2)]
    pair = fuse_select(make_candidates(vs), {n: 1.0 for n in NAMES}, COND)
    assert pair.win_rewards is vs[1]


def test_fuse_degenerate_batch_yields_none():
    v = RewardVector(track=-1.0, slide=-0.5, task=0.1)
    assert fuse_select(make_candidates([v] * 4),
                       {n: 1.0 for n in NAMES}, COND) is None


def test_fuse_rejects_nonpositive_weights():
    vs = [random_vector(np.random.default_rng(i)) for i in range(3)]
    with pytest.raises(ContractViolation):
        fuse_select(make_candidates(vs), {"track": 1.0, "slide": 0.0}, COND)


def test_fuse_weight_for_absent_reward_is_an_error():
    vs = [RewardVector(track=-1.0, slide=-0.5, task=0.1),
          RewardVector(track=-2.0, slide=-0.6, task=0.0)]
    with pytest.raises(ContractViolation):
        fuse_select(make_candidates(vs), {"control": 1.0}, COND)


def _mock_build(conditions, reward_fn, k=4, mode="dominance", names=None,
                log_out=None, weights=None):
    def sampler(cond, kk, seed):
        return [MotionSequence(np.full((2, 3), float(i)), 1 / 30)
                for i in range(kk)]

    def tracker(motions):
        return motions                 # stand-in; scorer keys off frames

    def scorer(motion, realized, cond):
        return reward_fn(int(motion.frames[0, 0]), cond)

    return build_dataset(conditions, sampler, tracker, scorer, k=k,
                         round_seed=0, mode=mode, names=names,
                         weights=weights, log_out=log_out)


def graded(i, cond):
    del cond
    return RewardVector(track=-1.0 - i, slide=-i / 8.0, task=0.5 - i / 16.0)


def test_build_dataset_one_pair_per_condition():
    conds = [Condition(TaskCondition("stand_still", 0.0)) for _ in range(5)]
    log: list = []
    pairs = _mock_build(conds, graded, log_out=log)
    assert len(pairs) == 5
    assert acceptance_rate(log) == 1.0
    for p in pairs:
        assert p.win.frames[0, 0] == 0.0        # candidate 0 dominates all
        assert p.lose.frames[0, 0] == 3.0       # widest margin pair


def test_build_dataset_isolates_condition_failures():
    conds = [Condition(TaskCondition("stand_still", 0.0)),
             Condition(TaskCondition("hop_in_place", 1.0)),
             Condition(TaskCondition("crouch_hold", 0.7))]

    def flaky(i, cond):
        if cond.task.family == "hop_in_place":
            raise PhysmoError("tracker exploded")
        return graded(i, cond)

    log: list = []
    pairs = _mock_build(conds, flaky, log_out=log)
    assert len(pairs) == 2
    assert [e["accepted"] for e in log] == [True, False, True]
    assert "exploded" in log[1]["reason"]
    assert acceptance_rate(log) == pytest.approx(2 / 3)


def test_build_dataset_restricted_names_skips_full_set_check():
    conds = [Condition(TaskCondition("stand_still", 0.0))]

    def track_only_order(i, cond):
        # track improves with i while task degrades: no full-set dominance
        return RewardVector(track=-4.0 + i, slide=-0.5, task=0.9 - 0.2 * i)

    assert _mock_build(conds, track_only_order) == []
    pairs = _mock_build(conds, track_only_order, names=("track",))
    assert len(pairs) == 1
    assert pairs[0].names == ("track",)
    assert pairs[0].win_rewards.track == -1.0


def test_build_dataset_drops_control_for_nonspatial_conditions():
    spatial = SpatialControl(np.zeros((2, 3)), np.eye(2, 3))
    conds = [Condition(TaskCondition("walk_forward", 0.3)),
             Condition(TaskCondition("walk_forward", 0.3), spatial)]

    def with_control(i, cond):
        c = -float(i + 1) if cond.has_spatial else None
        return RewardVector(track=-1.0 - i, slide=-i / 8.0,
                            task=0.5 - i / 16.0, control=c)

    log: list = []
    pairs = _mock_build(conds, with_control,
                        names=("track", "slide", "task", "control"),
                        log_out=log)
    assert [e["accepted"] for e in log] == [True, True]
    assert pairs[0].names == ("track", "slide", "task")
    assert pairs[1].names == ("track", "slide", "task", "control")


def test_build_dataset_fuse_mode_filters_control_weight():
    spatial = SpatialControl(np.zeros((2, 3)), np.eye(2, 3))
    conds = [Condition(TaskCondition("walk_forward", 0.3)),
             Condition(TaskCondition("walk_forward", 0.3), spatial)]

    def with_control(i, cond):
        c = -float(i + 1) if cond.has_spatial else None
        return RewardVector(track=-1.0 - i, slide=-i / 8.0,
                            task=0.5 - i / 16.0, control=c)

    pairs = _mock_build(conds, with_control, mode="fuse",
                        weights={"track": 1.0, "control": 2.0})
    assert len(pairs) == 2                 # non-spatial condition still usable


def test_build_dataset_rejects_bad_k_and_mode():
    with pytest.raises(ContractViolation):
        _mock_build([COND], graded, k=1)
    with pytest.raises(ContractViolation):
        _mock_build([COND], graded, mode="argmax")


def test_acceptance_rate_empty_log():
    assert acceptance_rate([]) == 0.0
