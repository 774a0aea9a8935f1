import json
from dataclasses import replace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from activelo.efficiency import (
    BudgetParams,
    cost_active_infer,
    cost_active_train,
    cost_full,
    format_report,
    report,
    report_json,
)

DEFAULT = BudgetParams()


def test_full_cost_examples():
    assert cost_full(DEFAULT) == 3450
    assert cost_full(BudgetParams(total=1, initial=1, h=1, iter=0, e_full=1)) == 1
    assert cost_full(BudgetParams(total=10, initial=1, h=1, iter=1, e_full=5)) == 50


def test_train_cost_examples():
    assert cost_active_train(DEFAULT, 7) == 1000
    assert cost_active_train(DEFAULT, 0) == 90
    small = BudgetParams(total=10, initial=2, h=1, iter=2, e_init=1, e_round=1, e_full=1)
    assert cost_active_train(small, 2) == 2 + 3 + 4
    with pytest.raises(ValueError):
        cost_active_train(DEFAULT, -1)


def test_infer_cost_examples():
    assert cost_active_infer(DEFAULT, 6) == 336
    assert cost_active_infer(DEFAULT, 0) == 63
    assert cost_active_train(DEFAULT, 7) + cost_active_infer(DEFAULT, 6) == 1336


def test_literal_summation_bounds():
    # upper bounds of iter + 1 and iter give the larger pair
    assert cost_active_train(DEFAULT, DEFAULT.iter + 1) == 1230
    assert cost_active_infer(DEFAULT, DEFAULT.iter) == 364


def test_infer_errors_exactly_when_pool_runs_out():
    p = BudgetParams(total=20, initial=5, h=5, iter=1)
    assert cost_active_infer(p, 3) == 15 + 10 + 5 + 0
    with pytest.raises(ValueError, match="round 4"):
        cost_active_infer(p, 4)


def test_report_and_format():
    r = report(DEFAULT)
    assert (r.L_full, r.L_train, r.L_remain, r.L_active_total) == (3450, 1000, 336, 1336)
    assert r.selected == 36 and f"{100 * r.selected_fraction:.1f}" == "52.2"
    text = format_report(r)
    assert "L_full = 3450, L_train = 1000, L_remain = 336, total = 1336" in text
    assert "52.2%" in text
    d = json.loads(report_json(r))
    assert d["L_active_total"] == 1336 and d["selected_percent"] == 52.2


def test_params_validation():
    with pytest.raises(ValueError):
        BudgetParams(total=0)
    with pytest.raises(ValueError):
        BudgetParams(h=2.5)
    with pytest.raises(ValueError):
        BudgetParams(iter=-1)
    with pytest.raises(ValueError, match="exceeds"):
        BudgetParams(total=40, initial=6, h=5, iter=7)


params = st.builds(
    BudgetParams,
    total=st.integers(200, 400),
    initial=st.integers(1, 20),
    h=st.integers(1, 10),
    iter=st.integers(1, 15),
    e_init=st.integers(1, 20),
    e_round=st.integers(1, 10),
    e_full=st.integers(1, 60),
)


@given(params, st.integers(0, 10))
def test_train_cost_strictly_increasing(p, rounds):
    base = cost_active_train(p, rounds)
    assert cost_active_train(p, rounds + 1) > base
    assert cost_active_train(replace(p, initial=p.initial + 1), rounds) > base
    if rounds > 0:
        assert cost_active_train(replace(p, h=p.h + 1), rounds) > base


@given(params, st.integers(1, 15))
def test_infer_contribution_shrinks(p, rounds):
    steps = [cost_active_infer(p, k + 1) - cost_active_infer(p, k) for k in range(rounds)]
    assert all(b < a for a, b in zip(steps, steps[1:]))


@given(params)
def test_report_total_is_sum(p):
    r = report(p, p.iter, p.iter)
    assert r.L_active_total == r.L_train + r.L_remain
