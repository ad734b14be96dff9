import math

import pytest
from hypothesis import given, settings, strategies as st

from minislot_aoi.errors import AllInfeasibleError
from minislot_aoi.model import SensorConfig, SystemParams
from minislot_aoi.sampling import (
    LambdaEntry,
    RateEvaluator,
    bisect_unimodal,
    grid_search,
    grid_upper_for,
    optimize_sampling_rate,
)

INF = math.inf


def _from_profile(profile):
    return lambda u: profile[u - 1]


def _scan(profile, hi=None):
    hi = hi or len(profile)
    vals = profile[:hi]
    best = min(vals)
    return vals.index(best) + 1 if math.isfinite(best) else None


class TestBisection:
    def test_synthetic_profile(self):
        prof = [10, 8, 6, 5, 7, INF, INF, INF, INF, INF]
        assert bisect_unimodal(_from_profile(prof), 1, 10) == 4 == _scan(prof)

    def test_only_first_feasible(self):
        prof = [3.0] + [INF] * 9
        assert bisect_unimodal(_from_profile(prof), 1, 10) == 1

    def test_decreasing_to_cliff(self):
        prof = [9, 8, 7, 6, 5, 4, INF, INF, INF, INF]
        assert bisect_unimodal(_from_profile(prof), 1, 10) == 6

    def test_respects_upper_bound(self):
        prof = [9, 8, 7, 6, 5, 4, 3, 2, 1, 0]
        assert bisect_unimodal(_from_profile(prof), 1, 2) == 2

    def test_empty(self):
        with pytest.raises(ValueError):
            bisect_unimodal(lambda u: 0.0, 3, 2)


@st.composite
def unimodal_profiles(draw):
    """Strictly decreasing, then non-decreasing, then an optional infeasible tail."""
    n_feasible = draw(st.integers(1, 10))
    k = draw(st.integers(1, n_feasible))
    steps = draw(st.lists(st.floats(0.01, 5), min_size=n_feasible, max_size=n_feasible))
    vals = [100.0]
    for i in range(1, n_feasible):
        vals.append(vals[-1] - steps[i] if i < k else vals[-1] + steps[i])
    return vals + [INF] * (10 - n_feasible)


@settings(max_examples=300, deadline=None)
@given(prof=unimodal_profiles(), hi=st.integers(1, 10))
def test_bisection_equals_grid_scan(prof, hi):
    assert bisect_unimodal(_from_profile(prof), 1, hi) == _scan(prof, hi)


@pytest.mark.parametrize("n, upper", [(1, 9), (2, 4), (3, 3), (4, 2), (5, 1), (6, 1), (8, 1)])
def test_uniform_upper_bound(n, upper):
    assert grid_upper_for(n) == upper
    assert upper / 10 < 1 / n


def test_entry_score():
    assert LambdaEntry(3, 10, True, avg_aoi=4.0).score == 4.0
    assert LambdaEntry(3, 10, False).score == INF


@pytest.fixture(scope="module")
def evaluator():
    return RateEvaluator(SensorConfig(1, 3, energy_budget=1.0), SystemParams.default())


class TestDefaultParams:
    def test_grid_and_bisection_agree(self, evaluator):
        ev = evaluator
        grid = grid_search(ev.template, ev.params, ev.settings, range(1, 11), evaluator=ev)
        bis = optimize_sampling_rate(ev.template, ev.params, ev.settings, 10, evaluator=ev)
        assert bis.lambda_star == grid.lambda_star == pytest.approx(0.3)
        assert grid.feasibility_monotone

    def test_csv_blanks_infeasible(self, evaluator):
        ev = evaluator
        rows = grid_search(ev.template, ev.params, ev.settings, [3, 4], evaluator=ev).to_csv().splitlines()
        assert rows[0] == "lambda,feasible,avg_aoi,avg_cost,theta"
        assert rows[1].startswith("0.30,1,") and rows[2] == "0.40,0,,,"

    def test_single_point_grid(self, evaluator):
        ev = evaluator
        rep = grid_search(ev.template, ev.params, ev.settings, [2], evaluator=ev)
        assert rep.lambda_star == pytest.approx(0.2)

    def test_upper_bound_respected(self, evaluator):
        ev = evaluator
        rep = optimize_sampling_rate(ev.template, ev.params, ev.settings, 2, evaluator=ev)
        assert rep.lambda_star <= 0.2

    def test_refined_cliff(self, evaluator):
        # synthetic cache: the refinement only needs entries, not solves
        ev = RateEvaluator(evaluator.template, evaluator.params, evaluator.settings)
        for u in range(1, 11):
            ev.cache[(u, 10)] = LambdaEntry(u, 10, u <= 3, avg_aoi=10.0 - u if u <= 3 else None)
        for u in range(31, 40):
            ev.cache[(u, 100)] = LambdaEntry(u, 100, u <= 34, avg_aoi=7.0 - u / 100 if u <= 34 else None)
        rep = grid_search(ev.template, ev.params, ev.settings, range(1, 11), refine_cliff=True, evaluator=ev)
        fine = [e for e in rep.entries if e.rate_scale == 100]
        assert [e.rate_units for e in fine] == list(range(31, 40))
        assert rep.lambda_star == pytest.approx(0.34)

    def test_all_infeasible(self):
        tpl = SensorConfig(1, 3, energy_budget=0.05)
        with pytest.raises(AllInfeasibleError):
            optimize_sampling_rate(tpl, SystemParams.default())
        with pytest.raises(AllInfeasibleError):
            grid_search(tpl, SystemParams.default(), grid=[1, 2])
