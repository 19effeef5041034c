import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sisource.errors import ArgumentError, PathValidationError, ScaleRefusal, UnreachableError
from sisource.graph import Graph
from sisource.si import (
    InfectionPath,
    PathOracle,
    SIParams,
    StopRule,
    enumerate_paths,
    feasible_times,
    is_consistent,
    latest_infection_path,
    path_log_probability,
    path_probability,
    q_lower_bound,
    simulate,
)

from conftest import ids, random_tree

HALF = Fraction(1, 2)


def half(n):
    return SIParams.uniform(HALF, HALF, n)


class TestParams:
    @pytest.mark.parametrize("p,lb", [(Fraction(1, 4), 0), (HALF, 0), (Fraction(2, 3), HALF), (Fraction(9, 10), Fraction(8, 9))])
    def test_lower_bound(self, p, lb):
        assert q_lower_bound(p) == lb

    def test_band_enforced(self):
        with pytest.raises(ArgumentError, match="q\\[1\\]"):
            SIParams(Fraction(9, 10), [1, Fraction(1, 2)])
        assert SIParams(Fraction(9, 10), [1, Fraction(1, 2)], strict=False).violations() == [1]

    @pytest.mark.parametrize("p", [0, 1, -0.1])
    def test_p_open_interval(self, p):
        with pytest.raises(ArgumentError):
            SIParams.uniform(p, 1, 2)

    def test_stop_rule_exclusive(self):
        with pytest.raises(ArgumentError):
            StopRule()
        with pytest.raises(ArgumentError):
            StopRule(horizon=1, threshold=2)


class TestFig2Probabilities:
    def test_latest_path_t1(self, fig2):
        v1, v2, v3, v4 = ids(fig2, "v1", "v2", "v3", "v4")
        path = latest_infection_path(fig2, v1, 1, {v2, v3})
        assert path.infected == {v1: (0, False), v2: (1, True), v3: (1, True)}
        assert [path.state(fig2, u, 1) for u in (v1, v2, v3, v4)] == ["i", "e", "e", "s"]
        assert is_consistent(path, {v2, v3})
        assert path_probability(fig2, path, half(10)) == HALF**6
        assert path_log_probability(fig2, path, half(10)) == pytest.approx(6 * math.log(0.5), abs=1e-12)

    @pytest.mark.parametrize("src,exponent", [("v1", 9), ("v2", 10), ("v3", 10), ("v4", 11)])
    def test_latest_path_t2(self, fig2, src, exponent):
        v, v2, v3 = ids(fig2, src, "v2", "v3")
        path = latest_infection_path(fig2, v, 2, {v2, v3})
        assert path_probability(fig2, path, half(10)) == HALF**exponent
        assert path_log_probability(fig2, path, half(10)) == pytest.approx(exponent * math.log(0.5), abs=1e-12)

    def test_v1_t2_infects_late(self, fig2):
        v1, v2, v3 = ids(fig2, "v1", "v2", "v3")
        path = latest_infection_path(fig2, v1, 2, {v2, v3})
        assert path.first_infection(v2) == path.first_infection(v3) == 2

    def test_simulated_frequency(self, fig2):
        # 200k draws: the (1/2)^6 path should appear at rate 1/64 within 4 sigma
        v1, v2, v3 = ids(fig2, "v1", "v2", "v3")
        target = {v1: (0, False), v2: (1, True), v3: (1, True)}
        rng = np.random.default_rng(7)
        params, stop = SIParams.uniform(0.5, 0.5, 10), StopRule(horizon=1)
        n = 200_000
        hits = sum(dict(simulate(fig2, v1, params, stop, rng).infected) == target for _ in range(n))
        sigma = math.sqrt(n * (1 / 64) * (63 / 64))
        assert abs(hits - n / 64) < 4 * sigma


class TestPathProbability:
    def test_source_alone(self):
        g = Graph(1, [])
        path = InfectionPath(0, 0, {0: (0, False)})
        assert path_probability(g, path, SIParams([Fraction(1, 3)][0], [Fraction(1, 5)])) == Fraction(4, 5)
        assert path_log_probability(g, path, SIParams(0.3, [0.2])) == pytest.approx(math.log(0.8))

    def test_impossible_path_log(self):
        g = Graph(2, [(0, 1)])
        path = InfectionPath(0, 1, {0: (0, False), 1: (1, True)})
        assert path_log_probability(g, path, SIParams(0.5, [0, 0])) == -math.inf

    @pytest.mark.parametrize(
        "infected,t,msg",
        [
            ({1: (0, False)}, 1, "source 0"),
            ({0: (1, False)}, 1, "source 0"),
            ({0: (0, False), 2: (1, False)}, 1, "without an infected neighbor"),
            ({0: (0, False), 1: (2, False)}, 1, "after horizon"),
            ({0: (0, False), 1: (0, False)}, 1, "only the source"),
            ({0: (0, False), 7: (1, False)}, 1, "not in the graph"),
        ],
    )
    def test_validation(self, infected, t, msg):
        g = Graph(3, [(0, 1), (1, 2)])
        with pytest.raises(PathValidationError, match=msg):
            path_probability(g, InfectionPath(0, t, infected), half(3))

    @pytest.mark.parametrize("seed", range(4))
    def test_all_paths_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        g = random_tree(rng, 5)
        params = SIParams(Fraction(int(rng.integers(1, 10)), 10), [Fraction(int(rng.integers(0, 11)), 10) for _ in range(5)], strict=False)
        for t in range(3):
            total = sum(path_probability(g, x, params) for x in enumerate_paths(g, 0, t))
            assert total == 1

    def test_log_matches_exact(self, rng):
        g = random_tree(rng, 6)
        params = SIParams(Fraction(3, 10), [Fraction(k, 7) for k in range(1, 7)])
        for x in enumerate_paths(g, 2, 2):
            pr = path_probability(g, x, params)
            lp = path_log_probability(g, x, params)
            assert lp == pytest.approx(math.log(pr), abs=1e-12)

    def test_json_round_trip(self, fig2):
        path = latest_infection_path(fig2, 1, 3, {1, 2, 6})
        again = InfectionPath.from_json(path.to_json())
        assert again == path


class TestConsistency:
    def test_extra_explicit(self, fig2):
        v1, v2, v3, v4 = ids(fig2, "v1", "v2", "v3", "v4")
        path = InfectionPath(v1, 1, {v1: (0, False), v2: (1, True), v3: (1, True), v4: (1, True)})
        assert not is_consistent(path, {v2, v3})

    def test_matches_definition_on_enumeration(self, fig2):
        g = Graph(4, [(0, 1), (1, 2), (1, 3)])
        ve = {1, 3}
        for x in enumerate_paths(g, 0, 2):
            expected = {u for u, (_, e) in x.infected.items() if e} == ve
            assert is_consistent(x, ve) == expected


class TestFeasibleTimes:
    def test_fig2(self, fig2):
        v1, v2, v3 = ids(fig2, "v1", "v2", "v3")
        r = feasible_times(fig2, v1, {v2, v3})
        assert r.start == 1 and r.stop is None
        assert 0 not in r and 1 in r and 10**6 in r

    def test_self(self, fig2):
        assert feasible_times(fig2, 4, {4}).start == 0

    def test_path(self):
        g = Graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
        assert feasible_times(g, 1, {4, 2}).start == 3

    def test_unreachable(self):
        with pytest.raises(UnreachableError):
            feasible_times(Graph(3, [(0, 1)]), 0, {2})

    def test_below_range(self, fig2):
        with pytest.raises(ArgumentError):
            latest_infection_path(fig2, 0, 0, {1, 2})

    def test_single_explicit_source(self, fig2):
        path = latest_infection_path(fig2, 3, 0, {3})
        assert path.infected == {3: (0, True)}


class TestSimulate:
    def test_star_p_one(self):
        g = Graph(5, [(0, i) for i in range(1, 5)])
        path = simulate(g, 0, SIParams(1 - 1e-12, [1.0] * 5), StopRule(horizon=1), rng=0)
        assert all(path.infected[i] == (1, True) for i in range(1, 5))

    def test_star_small_p(self):
        g = Graph(5, [(0, i) for i in range(1, 5)])
        params = SIParams.uniform(1e-9, 0.5, 5)
        sizes = [len(simulate(g, 0, params, StopRule(horizon=1), rng=s).infected) for s in range(200)]
        assert np.mean(sizes) == pytest.approx(1.0)

    @pytest.mark.parametrize("q", [1.0, 0.6])
    def test_star_marginals(self, q):
        # 10^5 slot-1 exposures per setting
        leaves = 1000
        g = Graph(leaves + 1, [(0, i) for i in range(1, leaves + 1)])
        p = 0.3
        params = SIParams.uniform(p, q, leaves + 1)
        rng = np.random.default_rng(3)
        infected = explicit = 0
        runs = 100
        for _ in range(runs):
            path = simulate(g, 0, params, StopRule(horizon=1), rng)
            rest = [path.infected[u][1] for u in path.infected if u != 0]
            infected += len(rest)
            explicit += sum(rest)
        n = leaves * runs
        assert abs(infected - n * p) < 3 * math.sqrt(n * p * (1 - p))
        assert abs(explicit - n * p * q) <= 3 * math.sqrt(n * p * q * (1 - p * q))

    def test_paths_are_valid_and_seeded(self, rng):
        g = random_tree(rng, 40)
        params = SIParams.uniform(0.4, 0.5, 40)
        a = simulate(g, 0, params, StopRule(threshold=10), rng=11)
        b = simulate(g, 0, params, StopRule(threshold=10), rng=11)
        assert a == b
        assert len(a.infected) > 10 or a.meta["exhausted"]
        assert path_probability(g, a, params.exact()) > 0

    def test_threshold_exhausted(self):
        g = Graph(4, [(0, 1), (2, 3)])
        path = simulate(g, 0, SIParams.uniform(0.9, 0.9, 4), StopRule(threshold=3), rng=0)
        assert path.meta["exhausted"]
        assert path.infected_nodes() == {0, 1}


class TestOracle:
    def test_scale_guard(self):
        g = Graph(9, [(i, i + 1) for i in range(8)])
        with pytest.raises(ScaleRefusal):
            next(enumerate_paths(g, 0, 1))
        with pytest.raises(ScaleRefusal):
            next(enumerate_paths(Graph(2, [(0, 1)]), 0, 5))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.integers(0, 3))
    def test_matches_enumeration(self, seed, t):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 6))
        g = random_tree(rng, n)
        ve = {int(u) for u in rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False)}
        params = SIParams(Fraction(int(rng.integers(1, 10)), 10), [Fraction(int(rng.integers(1, 10)), 10)] * n, strict=False)
        src = int(rng.integers(n))
        best = max((path_probability(g, x, params) for x in enumerate_paths(g, src, t, ve) if is_consistent(x, ve)),
                   default=Fraction(0))
        oracle = PathOracle(g, src, ve, params, t_max=t)
        assert oracle.max_probability(t) == best
        arg = oracle.argmax_path(t)
        if best:
            assert is_consistent(arg, ve) and path_probability(g, arg, params) == best
        else:
            assert arg is None
