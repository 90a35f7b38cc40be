import json
from fractions import Fraction
from math import comb, factorial

import pytest
from hypothesis import given
from hypothesis import strategies as st

from qmatsim.scheduler import (
    SlotId,
    build_round_schedule,
    dof_baselines,
    dof_from_schedule,
    dof_qmat,
    harmonic,
    order1_symbols_per_round,
    rate_exponents,
    repetitions,
    symbol_budget,
)


def test_harmonic_numbers():
    assert harmonic(1) == 1
    assert harmonic(3) == Fraction(11, 6)
    assert harmonic(4) == Fraction(25, 12)


@pytest.mark.parametrize(
    "K,alpha,expected",
    [
        (2, 0, Fraction(4, 3)),
        (2, Fraction(1, 2), Fraction(5, 3)),
        (2, 1, Fraction(2)),
        (3, 0, Fraction(18, 11)),
        (3, Fraction(1, 2), Fraction(51, 22)),
        (3, 1, Fraction(3)),
        (1, Fraction(1, 3), Fraction(1)),
    ],
)
def test_dof_closed_form(K, alpha, expected):
    assert dof_qmat(K, alpha) == expected


def test_baselines_closed_form():
    assert dof_baselines(3, Fraction(1, 2)) == (Fraction(18, 11), Fraction(2), Fraction(1))
    assert dof_baselines(2, 0) == (Fraction(4, 3), Fraction(1), Fraction(1))


def test_alpha_and_users_validated():
    with pytest.raises(ValueError):
        dof_qmat(2, Fraction(3, 2))
    with pytest.raises(ValueError):
        dof_qmat(0, 0)
    with pytest.raises(ValueError):
        build_round_schedule(2, 0)


@pytest.mark.parametrize("K,expected", [(1, 1), (2, 3), (3, 11), (4, 50)])
def test_slots_per_round(K, expected):
    sched = build_round_schedule(K, 2)
    assert sched.slots_per_round() == expected
    assert expected == factorial(K) * harmonic(K)
    assert len(sched.round_slots(2)) == expected


def test_repetitions_small_cases():
    assert repetitions(2) == [1, 1]
    assert repetitions(3) == [2, 1, 2]
    assert repetitions(4) == [6, 2, 2, 6]


@pytest.mark.parametrize("K", range(2, 8))
def test_symbol_flow_balances(K):
    reps = repetitions(K)
    for j in range(1, K):
        _, generated, _ = symbol_budget(K, j)
        consumed, _, _ = symbol_budget(K, j + 1)
        assert reps[j - 1] * generated == reps[j] * consumed


def test_phase_budgets_k3():
    assert symbol_budget(3, 1) == (9, 3, 2)
    assert symbol_budget(3, 2) == (6, 2, 1)
    assert symbol_budget(3, 3) == (1, 0, 0)
    assert order1_symbols_per_round(3) == 18
    with pytest.raises(ValueError):
        symbol_budget(3, 4)


@given(K=st.integers(1, 8), num=st.integers(0, 20))
def test_schedule_count_reproduces_closed_form(K, num):
    alpha = Fraction(num, 20)
    assert dof_from_schedule(K, alpha) == dof_qmat(K, alpha)


def test_slot_order_and_contents():
    sched = build_round_schedule(3, 1)
    phases = [s.phase for s in sched.slots]
    assert phases == sorted(phases)
    assert [sched.phase_slots(j) for j in (1, 2, 3)] == [6, 3, 2]
    for j in (1, 2, 3):
        sets = [s.user_set for s in sched.slots if s.phase == j]
        assert len(sets) == repetitions(3)[j - 1] * comb(3, j)


def test_slot_id_validation_and_complement():
    sid = SlotId(1, 2, 1, (0, 2))
    assert sid.complement(4) == (1, 3)
    assert sid.key == (2, 1, (0, 2))
    with pytest.raises(ValueError):
        SlotId(1, 2, 1, (0,))


def test_rate_exponents():
    assert rate_exponents(0.25) == {"qmat": 0.75, "auxiliary": 0.25, "zf": 0.25}
    assert rate_exponents(0.75)["auxiliary"] == 0.25


def test_schedule_json():
    doc = json.loads(build_round_schedule(2, 2).to_json(alpha=0.5))
    assert doc["slots_per_round"] == 3
    assert len(doc["slots"]) == 6
    assert doc["rate_exponents"]["qmat"] == 0.5
