import random

import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from quorumcommit import election as el
from quorumcommit.core import InvalidInputError, LeaderAnnounce, Proposal, Vote
from quorumcommit.election import ElectionState, Role


def _active(node=1, round_=3):
    st_ = ElectionState(node)
    st_.enter_round(round_, deadline=100)
    return st_


def test_three_draws_above_threshold_launch():
    s = _active()
    assert el.draw_tick(s, 0.85, 0.8) is None
    assert el.draw_tick(s, 0.91, 0.8) is None
    prop = el.draw_tick(s, 0.83, 0.8)
    assert prop == Proposal(3, 0.91)
    assert s.role is Role.CANDIDATE and s.voted_in[3] == 1


def test_low_draw_breaks_the_run():
    s = _active()
    for d in (0.85, 0.70, 0.95):
        assert el.draw_tick(s, d, 0.8) is None
    assert s.role is Role.FOLLOWER


def test_draw_equal_to_threshold_does_not_count():
    s = _active()
    for d in (0.8, 0.9, 0.9):
        assert el.draw_tick(s, d, 0.8) is None


def test_draw_outside_unit_interval_rejected():
    with pytest.raises(InvalidInputError):
        el.draw_tick(_active(), 1.0, 0.5)


def test_first_proposal_gets_the_vote_only():
    s = _active(node=2)
    s.greatest = 0.4
    assert el.on_proposal(s, Proposal(3, 0.9), src=1, deadline=0) == Vote(3, 2, 0.4)
    assert el.on_proposal(s, Proposal(3, 0.95), src=4, deadline=0) is None


def test_stale_proposal_ignored():
    s = _active(node=2)
    assert el.on_proposal(s, Proposal(2, 0.9), src=1, deadline=0) is None
    assert s.round == 3


def test_proposal_from_later_round_adopts_it():
    s = _active(node=2)
    assert el.on_proposal(s, Proposal(5, 0.9), src=1, deadline=77) == Vote(5, 2, 0.0)
    assert s.round == 5 and s.round_deadline == 77


def _candidate():
    s = _active(node=1)
    for d in (0.9, 0.9, 0.9):
        el.draw_tick(s, d, 0.8)
    return s


def test_majority_of_votes_makes_coordinator():
    s = _candidate()
    rng = random.Random(0)
    assert el.on_vote(s, Vote(3, 2, 0.5), 5, rng) is None
    ann = el.on_vote(s, Vote(3, 3, 0.7), 5, rng)
    assert isinstance(ann, LeaderAnnounce) and ann.round == 3
    assert ann.dispatcher in (1, 2, 3)
    assert s.role is Role.COORDINATOR


def test_stale_and_duplicate_votes_ignored():
    s = _candidate()
    rng = random.Random(0)
    assert el.on_vote(s, Vote(2, 2, 0.5), 5, rng) is None
    el.on_vote(s, Vote(3, 2, 0.5), 5, rng)
    el.on_vote(s, Vote(3, 2, 0.5), 5, rng)
    assert s.votes_for_me == {1, 2}


def test_single_validator_elects_itself():
    s = _active(node=0, round_=1)
    for d in (0.9, 0.9, 0.9):
        el.draw_tick(s, d, 0.8)
    assert el.self_elect_if_alone(s, 1, random.Random(0)) == LeaderAnnounce(1, 0)


def test_round_timeout():
    s = _active()
    assert el.on_round_timeout(s, now=100, next_deadline=250)
    assert s.round == 4 and s.role is Role.FOLLOWER and s.round_deadline == 250
    el.on_announce(s, LeaderAnnounce(4, 2))
    assert not el.on_round_timeout(s, now=10**6, next_deadline=0)


def test_independent_timeouts_advance_independently():
    a, b = _active(node=1), _active(node=2)
    assert el.on_round_timeout(a, 100, 200) and el.on_round_timeout(b, 100, 300)
    assert a.round == b.round == 4


def test_round_never_decreases():
    s = _active()
    with pytest.raises(InvalidInputError):
        s.enter_round(2, 0)
    assert not el.on_announce(s, LeaderAnnounce(2, 0))
    assert s.round == 3


def test_zero_greatest_gets_a_positive_slot():
    wheel = el.wheel_weights({1: 0.0, 2: 0.5}, coordinator=2, include_self=True)
    assert wheel[1] > 0


def test_coordinator_excluded_when_configured():
    assert el.wheel_weights({1: 0.3, 2: 0.5}, 2, include_self=False) == {1: 0.3}
    assert el.wheel_weights({2: 0.5}, 2, include_self=False) == {2: 0.5}


def test_roulette_single_entry():
    rng = random.Random(1)
    assert all(el.roulette_select({7: 0.9}, rng) == 7 for _ in range(1000))


@pytest.mark.parametrize("wheel", [{}, {1: 0.0}, {1: 0.5, 2: -1.0}])
def test_roulette_rejects_bad_wheels(wheel):
    with pytest.raises(InvalidInputError):
        el.roulette_select(wheel, random.Random(0))


def test_roulette_equal_weights_chi_square():
    rng = random.Random(2024)
    n = 100_000
    counts = {1: 0, 2: 0, 3: 0}
    for _ in range(n):
        counts[el.roulette_select({1: 0.4, 2: 0.4, 3: 0.4}, rng)] += 1
    for c in counts.values():
        assert abs(c / n - 1 / 3) <= 0.01
    assert chisquare(list(counts.values())).pvalue > 0.001


def test_roulette_proportional_weights():
    rng = random.Random(7)
    n = 100_000
    hits = sum(el.roulette_select({"A": 0.9, "B": 0.3}, rng) == "A" for _ in range(n))
    # independent oracle: the proportion 0.9 / (0.9 + 0.3)
    assert abs(hits / n - 0.9 / 1.2) <= 0.01


@given(st.dictionaries(st.integers(0, 20), st.floats(min_value=1e-6, max_value=1.0),
                       min_size=1, max_size=8),
       st.integers(0, 2**32))
def test_roulette_returns_a_wheel_member(wheel, seed):
    assert el.roulette_select(wheel, random.Random(seed)) in wheel


@given(st.lists(st.floats(min_value=0.0, max_value=1.0, exclude_max=True), max_size=40),
       st.floats(min_value=0.0, max_value=0.99))
def test_launch_iff_three_consecutive_draws_exceed_threshold(draws, threshold):
    s = _active()
    launched_at = None
    for i, d in enumerate(draws):
        if el.draw_tick(s, d, threshold) is not None:
            launched_at = i
            break
    expected = next((i for i in range(2, len(draws))
                     if all(x > threshold for x in draws[i - 2:i + 1])), None)
    assert launched_at == expected
