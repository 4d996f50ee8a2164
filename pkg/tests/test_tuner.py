import json

import numpy as np
import pytest

from hptune import tuner as tuner_mod
from hptune.errors import DomainError, TunerAbort
from hptune.evaluation import EvalRecord
from hptune.kriging import build_model, expected_improvement
from hptune.space import SPHERE2, TABLE2, ParamSpec, SearchSpace
from hptune.tuner import (
    RESULT_FIELDS, Archive, ControlConfig, TunerResult, best_trace, grid_search, intensify,
    propose_candidates, random_search, result_trace, spot,
)


def sphere(config, seed=0):
    return (config["x1"] - 0.3) ** 2 + (config["x2"] - 0.3) ** 2


def x1_only(config, seed=0):
    return (config["x1"] - 0.5) ** 2


SMALL = ControlConfig(fun_evals=12, seed=0, candidate_pool=200, fit_budget=200)


class TestControl:
    def test_aliases(self):
        c = ControlConfig.from_mapping({"funEvals": 30, "designSize": 5, "maxRepeats": 4})
        assert (c.fun_evals, c.design_size, c.max_repeats) == (30, 5, 4)
        with pytest.raises(DomainError):
            ControlConfig.from_mapping({"budget": 3})

    def test_budget_precondition(self):
        with pytest.raises(DomainError, match="smaller than the initial design"):
            ControlConfig(fun_evals=20, repeats=3).check(TABLE2)
        with pytest.raises(DomainError):
            ControlConfig(fun_evals=20, candidate_pool=0).check(SPHERE2)

    def test_rejected_before_any_evaluation(self):
        calls = []
        with pytest.raises(DomainError):
            spot(lambda c, s: calls.append(c) or 0.0, SPHERE2, ControlConfig(fun_evals=5))
        assert calls == []


class TestArchive:
    def test_mean_and_incumbent_ties(self):
        arc = Archive(SPHERE2)
        a, b = {"x1": 0.1, "x2": 0.1}, {"x1": 0.2, "x2": 0.2}
        arc.add(a, 1.0, 0)
        arc.add(b, 2.0, 1)
        arc.add(b, 0.0, 2)
        assert arc.replicates(b) == 2 and arc.entries[arc.key(b)].mean == 1.0
        assert arc.incumbent().config == a          # tie on 1.0, a was first
        assert arc.worst() == 1.0


class TestIntensify:
    def setup_method(self):
        self.arc = Archive(SPHERE2)
        self.best = {"x1": 0.1, "x2": 0.1}
        for i in range(3):
            self.arc.add(self.best, 1.0, i)
        self.new = {"x1": 0.7, "x2": 0.7}

    def test_plan(self):
        plan = intensify(self.arc, self.best, [self.new], budget_left=100)
        assert plan == [(self.best, 3), (self.new, 0), (self.new, 1), (self.new, 2)]

    def test_truncation(self):
        assert intensify(self.arc, self.best, [self.new], budget_left=2) == \
            [(self.best, 3), (self.new, 0)]
        assert intensify(self.arc, self.best, [self.new], budget_left=0) == []

    def test_cap(self):
        plan = intensify(self.arc, self.best, [self.new], budget_left=100, max_repeats=2)
        assert plan == [(self.new, 0), (self.new, 1)]


class TestTrace:
    def test_running_min(self):
        assert best_trace([3, 1, 2], ["a", "b", "c"], 1) == [1, 1]

    def test_uses_aggregates(self):
        # replicate of "a" lifts its mean to 2.0, so "b" (1.5) becomes best
        assert best_trace([1.0, 1.5, 3.0], ["a", "b", "a"], 1) == [1.0, 1.5]

    def test_length(self):
        assert len(best_trace(range(10), range(10), 4)) == 6


class TestProposal:
    def test_ei_grid_oracle(self):
        model = build_model([[0.0], [0.5], [1.0]], [1.0, 0.0, 1.0], [5.0])
        grid = np.linspace(0, 1, 10_001)[:, None]
        ei = expected_improvement(model.predict(grid), 0.0)
        best_u = grid[np.argmax(ei), 0]
        (u,) = propose_candidates(model, SearchSpace((ParamSpec("x", "numeric", 0, 1),)), 1, 0.0, seed=1)
        assert abs(u[0] - best_u) <= 0.1

    def test_constant_model_uses_space_filling(self):
        X = np.array([[0.1, 0.1], [0.9, 0.9], [0.1, 0.9]])
        model = build_model(X, np.ones(3), [1.0, 1.0])
        assert float(np.max(expected_improvement(model.predict(np.random.default_rng(0).random((50, 2))), 1.0))) <= 1e-12
        (u,) = propose_candidates(model, SPHERE2, 1, 1.0, seed=0, pool=500)
        # far from all three design corners
        assert np.min(np.linalg.norm(X - u, axis=1)) > 0.4

    def test_never_proposes_archived(self):
        space = SearchSpace((ParamSpec("k", "integer", 0, 3),))
        arc = Archive(space)
        for k in (0, 1, 3):
            arc.add({"k": k}, float(abs(k - 2)), k)
        X, y = arc.aggregated()
        model = build_model(X, y, [1.0])
        units = propose_candidates(model, space, 4, float(y.min()), archive=arc)
        assert [space.repair(u)["k"] for u in units] == [2]


class TestSpot:
    def test_constant_objective(self):
        res = spot(lambda c, s: 1.0, SPHERE2, SMALL)
        assert res.ybest == 1.0 and res.ybest_vec == [1.0] * 6 and res.count == 12

    def test_budget_and_invariants(self):
        res = spot(sphere, SPHERE2, ControlConfig(fun_evals=15, seed=3))
        assert res.count == 15 == len(res.y) and res.msg == "budget exhausted"
        assert res.xbest in res.x
        assert all(b <= a for a, b in zip(res.ybest_vec, res.ybest_vec[1:]))
        assert res.ybest_vec[-1] == res.ybest == min(res.y)
        for row in res.x:
            cfg = dict(zip(SPHERE2.names, row))
            assert SPHERE2.as_row(SPHERE2.repair(SPHERE2.to_unit(cfg))) == row

    def test_reproducible(self):
        a = spot(sphere, SPHERE2, SMALL).to_dict()
        b = spot(sphere, SPHERE2, SMALL).to_dict()
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_noise_mode_intensifies(self):
        rng = np.random.default_rng(0)
        noisy = lambda c, s: sphere(c) + 0.01 * rng.normal()
        res = spot(noisy, SPHERE2, ControlConfig(fun_evals=20, repeats=2, noise=True, seed=1))
        assert res.count == 20
        counts = {}
        for row in res.x:
            counts[tuple(row)] = counts.get(tuple(row), 0) + 1
        assert max(counts.values()) >= 3

    def test_failures_imputed_with_worst(self):
        def flaky(c, s):
            return EvalRecord.failure("failed", "boom") if c["x1"] > 0.8 else sphere(c)
        res = spot(flaky, SPHERE2, ControlConfig(fun_evals=12, seed=2))
        fails = res.log_info.get("failures", [])
        assert fails, "design should hit the failing region"
        for f in fails:
            assert f["imputed"] == pytest.approx(max(res.y[: f["index"]] + [f["imputed"]]))

    def test_crash_counts_as_failure(self):
        def crash(c, s):
            if c["x2"] > 0.5:
                raise RuntimeError("segfault")
            return sphere(c)
        res = spot(crash, SPHERE2, ControlConfig(fun_evals=10, seed=0))
        assert res.count == 10 and res.log_info["statuses"]["failed"] >= 1

    def test_abort_when_nothing_succeeds(self):
        with pytest.raises(TunerAbort):
            spot(lambda c, s: EvalRecord.failure("failed"), SPHERE2, SMALL)

    def test_fit_failure_falls_back(self, monkeypatch):
        def broken(*a, **k):
            raise DomainError("synthetic")
        monkeypatch.setattr(tuner_mod, "kriging_fit", broken)
        res = spot(sphere, SPHERE2, SMALL)
        assert res.count == 12 and len(res.log_info["warnings"]) == 6

    def test_interrupt_flushes_partial(self):
        calls = []

        def stop_late(c, s):
            calls.append(c)
            if len(calls) == 8:
                raise KeyboardInterrupt
            return sphere(c)
        res = spot(stop_late, SPHERE2, SMALL)
        assert res.msg == "interrupted" and res.count == 7

    def test_workers_match_sequential(self):
        a = spot(sphere, SPHERE2, ControlConfig(fun_evals=10, seed=4)).to_dict()
        b = spot(sphere, SPHERE2, ControlConfig(fun_evals=10, seed=4, workers=4)).to_dict()
        assert a["y"] == b["y"]


class TestBaselines:
    def test_grid_distinct_values(self):
        res = grid_search(x1_only, SPHERE2, (4, 4))
        # only x1 matters: the 16 runs collapse onto the values at the 4 x1 levels
        oracle = {x1_only({"x1": (k + 0.5) / 4}) for k in range(4)}
        assert res.count == 16 and set(res.y) == oracle and len(oracle) == 2

    def test_grid_center(self):
        res = grid_search(lambda c, s: c["x"], SearchSpace((ParamSpec("x", "numeric", 0, 1),)), (1,))
        assert res.x == [[0.5]]

    def test_grid_cap(self):
        with pytest.raises(DomainError):
            grid_search(sphere, TABLE2, [4] * 8, cap=1000)

    def test_random_single(self):
        res = random_search(sphere, SPHERE2, budget=3, repeats=3, seed=1)
        assert res.count == 3 and len({tuple(r) for r in res.x}) == 1

    def test_random_deterministic(self):
        assert random_search(sphere, SPHERE2, 8, seed=5).y == random_search(sphere, SPHERE2, 8, seed=5).y


class TestResultSerialization:
    def test_round_trip(self, tmp_path):
        res = spot(sphere, SPHERE2, SMALL)
        path = tmp_path / "result.json"
        res.save(path)
        raw = json.loads(path.read_text())
        assert tuple(raw) == RESULT_FIELDS
        again = TunerResult.load(path)
        assert again.ybest == res.ybest and again.x == res.x and again.space == SPHERE2
        assert result_trace(again) == res.ybest_vec
