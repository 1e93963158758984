from __future__ import annotations

import json
import math

import numpy as np
import pytest

from spde_fd.convergence import (
    REPORT_SCHEMA,
    ExperimentPlan,
    PlanError,
    ReportParseError,
    ReportVersionError,
    coupled_sample_error,
    deterministic_rate_experiment,
    estimate_rates,
    fit_slope,
    load_report,
    persist_report,
    write_rate_csv,
)
from spde_fd.grid import make_grid
from spde_fd.noise import aggregate, sample_noise
from spde_fd.ou import ou_pair_coupling_error_sq
from spde_fd.scheme import run

SMALL = dict(levels=(4,), reference_n=8, horizon=0.0625, chunk_size=10)


def test_plan_validation():
    with pytest.raises(PlanError):
        ExperimentPlan(levels=(6,), reference_n=64)
    with pytest.raises(PlanError):
        ExperimentPlan(levels=(8, 4))
    with pytest.raises(PlanError):
        ExperimentPlan(levels=())
    with pytest.raises(PlanError):
        ExperimentPlan(p=1.5)
    with pytest.raises(PlanError):
        ExperimentPlan(samples=0)
    with pytest.raises(PlanError):
        ExperimentPlan(horizon=0.1234567)
    with pytest.raises(PlanError):
        ExperimentPlan.from_dict({"levels": [4], "bogus": 1})
    with pytest.raises(KeyError):
        ExperimentPlan(drift="cubic")


def test_plan_round_trip():
    plan = ExperimentPlan(**SMALL, samples=7, drift="smooth", snapshot_times=(0.0625,))
    assert ExperimentPlan.from_dict(json.loads(json.dumps(plan.to_dict()))) == plan


def test_fit_slope_examples():
    fit = fit_slope([4, 8, 16], [1.0, 0.5, 0.25])
    assert fit.slope == pytest.approx(-1.0)
    assert max(abs(r) for r in fit.residuals) <= 1e-12
    with pytest.raises(ValueError):
        fit_slope([4], [1.0])


def test_level_equal_to_reference_has_zero_error():
    rep = estimate_rates(ExperimentPlan(levels=(4, 8), reference_n=8, horizon=0.0625, samples=5))
    assert rep.per_level[1].error == 0.0
    assert rep.per_level[0].error > 0
    # a single usable level cannot give a slope
    assert rep.degenerate and rep.slope is None


def test_single_level_is_degenerate():
    rep = estimate_rates(ExperimentPlan(**SMALL, samples=3))
    assert rep.degenerate
    assert rep.slope is None and rep.notes


@pytest.mark.parametrize("idx", [0, 3])
def test_lab_is_bitwise_equal_to_direct_runs(idx):
    plan = ExperimentPlan(levels=(4, 8), reference_n=16, horizon=0.0625, samples=4, drift="sign", initial="sine")
    ref = plan.reference
    field = sample_noise(ref, plan.horizon, plan.seed, idx)
    got = coupled_sample_error(plan, idx)
    for li, g in enumerate(plan.grids()):
        r = ref.n // g.n
        kc = g.exact_step_index(plan.horizon)
        times = [k * g.h for k in range(kc + 1)]
        a = run(ref, plan.drift, plan.initial, field, plan.horizon, times)
        b = run(g, plan.drift, plan.initial, aggregate(field, g), plan.horizon, times)
        want = np.stack([np.abs(a.at(t)[::r] - b.at(t)) ** 2 for t in times])
        assert np.array_equal(got.pointwise[li], want)
        assert got.sup[li] == want.max()


def test_ou_pointwise_error_matches_exact_pair_error():
    plan = ExperimentPlan(**SMALL, samples=1000, drift="zero", initial="zero", seed=9)
    d = np.array([coupled_sample_error(plan, i).pointwise[0][-1, 0] for i in range(plan.samples)])
    exact = ou_pair_coupling_error_sq(make_grid(4, 0.25), make_grid(8, 0.25), plan.horizon)
    assert abs(d.mean() - exact) <= 4 * d.std(ddof=1) / math.sqrt(len(d))


def test_stderr_shrinks_like_inverse_root_samples():
    small = estimate_rates(ExperimentPlan(**SMALL, samples=100, seed=1)).per_level[0]
    big = estimate_rates(ExperimentPlan(**SMALL, samples=400, seed=1)).per_level[0]
    assert 0.35 <= big.stderr / small.stderr <= 0.7
    assert abs(big.error - small.error) <= 4 * math.hypot(big.stderr, small.stderr)


def test_worker_count_does_not_change_results():
    plan = ExperimentPlan(levels=(4, 8), reference_n=16, horizon=0.0625, samples=40, chunk_size=10)
    a = estimate_rates(plan, workers=1)
    b = estimate_rates(plan, workers=2)
    for x, y in zip(a.per_level, b.per_level):
        assert x == y
    assert a.slope == b.slope


def test_errors_decrease_with_refinement():
    rep = estimate_rates(ExperimentPlan(levels=(4, 8, 16), reference_n=32, horizon=0.0625, samples=100))
    errs = rep.errors()
    assert errs[0] > errs[1] > errs[2] > 0
    assert rep.slope < 0
    for lv in rep.per_level:
        assert 0 <= lv.sup_argmax_t <= 0.0625 and 0 <= lv.sup_argmax_x < 1
        assert lv.pathwise_error >= lv.error


def test_reference_choice_barely_moves_coarse_error():
    base = dict(levels=(4,), horizon=0.0625, samples=100)
    e32 = estimate_rates(ExperimentPlan(**base, reference_n=32)).per_level[0]
    e64 = estimate_rates(ExperimentPlan(**base, reference_n=64)).per_level[0]
    assert abs(e32.error - e64.error) / e64.error <= 0.25


def test_deterministic_rates():
    levels = [8, 16, 32, 64, 128]
    sine = deterministic_rate_experiment("sine", levels, 0.1)
    assert sine.slope <= -0.9
    w = deterministic_rate_experiment("weierstrass", levels, 0.1)
    assert w.slope <= -0.4
    const = deterministic_rate_experiment("constant", levels, 0.1)
    assert max(const.errors()) <= 1e-14


def test_report_round_trip(tmp_path):
    rep = estimate_rates(ExperimentPlan(levels=(4, 8), reference_n=16, horizon=0.0625, samples=5))
    path = tmp_path / "r.json"
    persist_report(rep, path, {"seed": 0, "command": "converge"})
    back = load_report(path)
    assert back.per_level == rep.per_level
    assert back.slope == rep.slope and back.plan == rep.plan
    doc = json.loads(path.read_text())
    assert doc["schema_version"] == REPORT_SCHEMA and doc["provenance"]["seed"] == 0


def test_report_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ReportParseError):
        load_report(p)
    p.write_text("[1, 2]")
    with pytest.raises(ReportParseError):
        load_report(p)
    p.write_text(json.dumps({"schema_version": "rate-report/0"}))
    with pytest.raises(ReportVersionError):
        load_report(p)
    p.write_text(json.dumps({"schema_version": REPORT_SCHEMA, "plan": {}}))
    with pytest.raises(ReportParseError):
        load_report(p)


def test_rate_csv(tmp_path):
    rep = deterministic_rate_experiment("sine", [8, 16], 0.1)
    path = tmp_path / "r.csv"
    write_rate_csv(rep, path, {"seed": 3})
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed: 3"
    assert lines[1] == "n,error,stderr"
    assert [int(l.split(",")[0]) for l in lines[2:]] == [8, 16]
