from __future__ import annotations

import json
import logging
import math

import numpy as np
import pytest

from spde_fd.grid import make_grid
from spde_fd.kernels import FOUR_PI2, kernel_l2_distance_sq
from spde_fd.lemmas import (
    CHECK_IDS,
    LEMMA_SCHEMA,
    LemmaConfig,
    check_cfl_decay,
    check_det_rate,
    check_discrete_hk,
    check_kernel_distance,
    check_q_lemmas,
    check_random_walk,
    check_semigroup,
    check_summation_bound,
    report_dict,
    run_all,
    summation,
)
from spde_fd.ou import q_disc


@pytest.mark.parametrize("c,n", [(0.25, 8), (0.49, 64)])
def test_cfl_decay_passes(c, n):
    chk = check_cfl_decay(c, [n])
    assert chk.passed, chk.measured
    assert chk.measured["j0_equal_one"]


def test_cfl_delta_values():
    assert check_cfl_decay(0.25, [4]).measured["delta0"] == 1.0
    d = check_cfl_decay(0.49, [4]).measured
    assert d["delta0"] == pytest.approx(-(0.49 / 4) * math.log(4 * 0.49 - 1))
    assert d["delta"] == pytest.approx(16 * d["delta0"])


def _summation_oracle(lam, gamma, t):
    # brute force over a fixed wide window
    j = np.arange(-2000, 2001, dtype=float)
    w = np.abs(j) ** gamma if gamma else np.ones_like(j)
    return math.fsum(w * np.exp(-lam * j**2 * t))


@pytest.mark.parametrize("gamma", [0.0, 1.0, 2.5])
@pytest.mark.parametrize("t", [1e-4, 0.01, 1.0])
def test_summation_matches_brute_force(gamma, t):
    assert summation(FOUR_PI2, gamma, t) == pytest.approx(_summation_oracle(FOUR_PI2, gamma, t), rel=1e-13)


def test_summation_examples():
    assert summation(1e3, 0.0, 1.0) == 1.0
    ts = [2.0**-k for k in range(12, 1, -1)]
    g0 = check_summation_bound(FOUR_PI2, 0.0, ts)
    assert g0.passed
    g1 = check_summation_bound(FOUR_PI2, 1.0, ts)
    assert g1.passed
    assert abs(g1.measured["fitted_exponent"] + 1.0) <= 0.05
    with pytest.raises(ValueError):
        check_summation_bound(-1.0, 0.0, ts)


def test_kernel_distance_examples():
    chk = check_kernel_distance(0.25, [8, 16, 32, 64], [0.1], t_fixed=0.1)
    assert chk.passed and chk.measured["slope"] <= -1.5
    fixed_n = check_kernel_distance(0.25, [16], [0.05, 0.1, 0.2, 0.4])
    assert fixed_n.passed
    g = make_grid(16, 0.25)
    assert abs(kernel_l2_distance_sq(g, 0.1, 0.0) - kernel_l2_distance_sq(g, 0.1, 5 / 32)) <= 1e-10


def test_kernel_distance_records_skipped_pairs():
    chk = check_kernel_distance(0.25, [4, 8], [1e-5, 0.1])
    assert [4, 1e-5] in chk.measured["skipped"] and [8, 1e-5] in chk.measured["skipped"]


def test_q_lemma_examples():
    for n in (4, 16, 64):
        g = make_grid(n, 0.25)
        assert q_disc(g, g.h / 2) == 2 * n * (g.h / 2)
    chk = check_q_lemmas(0.25, [8, 16, 32, 64])
    assert chk.passed
    assert chk.measured["slope"] <= -0.45
    assert chk.measured["lower_constant"] > 0


def test_exact_checks_pass():
    assert check_semigroup(0.25, [2, 4, 8]).passed
    assert check_random_walk(0.3, [2, 4, 8]).passed
    assert check_det_rate(0.25, [8, 16, 32, 64]).passed
    assert check_discrete_hk(0.25, [8, 16, 32, 64]).passed


def test_run_all_defaults_pass():
    checks = run_all()
    assert {ch.id for ch in checks} == set(CHECK_IDS)
    failed = [ch.to_dict() for ch in checks if not ch.passed]
    assert not failed, json.dumps(failed, indent=1, default=str)[:2000]
    doc = report_dict(checks)
    assert doc["schema_version"] == LEMMA_SCHEMA and doc["all_pass"]
    json.dumps(doc)
    for entry in doc["checks"]:
        assert set(entry) >= {"id", "params", "measured", "threshold", "pass"}


def test_run_all_is_deterministic():
    a = report_dict(run_all({"only": ["q_lemmas", "det_rate"]}))
    b = report_dict(run_all({"only": ["q_lemmas", "det_rate"]}))
    assert a == b


def test_invalid_c_becomes_failed_check():
    checks = run_all({"c": 0.6, "only": ["cfl", "semigroup"]})
    assert checks and all(not ch.passed for ch in checks)
    assert all("CFL" in ch.narrative for ch in checks)


def test_empty_sweep_warns(caplog):
    with caplog.at_level(logging.WARNING):
        assert run_all({"n_list": [], "small_n_list": []}) == []
    assert "empty sweep" in caplog.text


def test_only_selects_and_orders():
    checks = run_all(LemmaConfig(only=["semigroup", "cfl"]))
    assert [ch.id for ch in checks] == ["cfl", "semigroup"]
    with pytest.raises(ValueError):
        run_all({"only": ["nope"]})


def test_zero_tolerance_fails_exact_check():
    checks = run_all({"only": ["semigroup"], "tolerances": {"exact": 0.0}})
    assert not checks[0].passed
