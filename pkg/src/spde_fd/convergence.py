"""Coupled multi-resolution Monte Carlo estimates of the strong error and its rate in n.

Every sample draws one white-noise realisation on the reference level.  The
reference run and the run of every coarser level (on exact aggregates of the
same cells) are advanced together, one coarsest time step at a time, and are
compared at the coarse level's own grid points.  Samples are processed in
fixed-size chunks; chunk results are folded in chunk order so the estimate is
bit-identical whatever the number of worker processes.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .grid import GridConfig, GridError, dyadic_ratio, make_grid
from .kernels import apply_semigroup_disc
from .noise import aggregate_cells, noise_rows
from .scheme import Stepper, get_drift, get_initial, initial_values

log = logging.getLogger(__name__)

REPORT_SCHEMA = "rate-report/1"
DEFAULT_CHUNK = 25


class PlanError(ValueError):
    pass


class ReportError(Exception):
    pass


class ReportVersionError(ReportError):
    pass


class ReportParseError(ReportError):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    c: float = 0.25
    levels: tuple = (4, 8, 16, 32)
    reference_n: int = 64
    horizon: float = 0.25
    p: float = 2.0
    samples: int = 200
    seed: int = 0
    drift: str = "sign"
    initial: str = "sine"
    snapshot_times: tuple = ()
    chunk_size: int = DEFAULT_CHUNK
    epsilon: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(n) for n in self.levels))
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))
        if not self.levels:
            raise PlanError("plan needs at least one level")
        if list(self.levels) != sorted(set(self.levels)):
            raise PlanError(f"levels must be strictly ascending, got {list(self.levels)}")
        if self.p < 2:
            raise PlanError(f"moment p must be >= 2, got {self.p}")
        if self.samples < 1:
            raise PlanError(f"need at least one sample, got {self.samples}")
        if self.chunk_size < 1:
            raise PlanError("chunk_size must be positive")
        if self.horizon < 0:
            raise PlanError("horizon must be non-negative")
        ref = make_grid(self.reference_n, self.c)
        try:
            for n in self.levels:
                dyadic_ratio(make_grid(n, self.c), ref)
            ref.exact_step_index(self.horizon)
        except GridError as exc:
            raise PlanError(str(exc)) from exc
        get_drift(self.drift)
        get_initial(self.initial)

    @property
    def reference(self) -> GridConfig:
        return make_grid(self.reference_n, self.c)

    def grids(self) -> list[GridConfig]:
        return [make_grid(n, self.c) for n in self.levels]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        d["snapshot_times"] = list(self.snapshot_times)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise PlanError(f"unknown plan keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class _ChunkResult:
    sums: list  # per level, (K_L + 1, 2n_L) sums of |diff|^p
    sumsq: list
    sup: list  # per level, (B,) pathwise sup of |diff|^p


def _run_chunk(plan: ExperimentPlan, indices) -> _ChunkResult:
    ref = plan.reference
    grids = plan.grids()
    drift = get_drift(plan.drift)
    b = len(indices)
    k_ref = ref.exact_step_index(plan.horizon)
    ratios = [dyadic_ratio(g, ref) for g in grids]
    slab = max(ratios) ** 2

    u_ref = np.broadcast_to(initial_values(ref, plan.initial), (b, ref.num_space)).copy()
    nxt_ref = np.empty_like(u_ref)
    st_ref = Stepper(ref, drift, u_ref.shape)
    us, nxts, steppers = [], [], []
    for g in grids:
        u = np.broadcast_to(initial_values(g, plan.initial), (b, g.num_space)).copy()
        us.append(u)
        nxts.append(np.empty_like(u))
        steppers.append(Stepper(g, drift, u.shape))

    sums, sumsq, sup = [], [], []
    for g, r, u in zip(grids, ratios, us):
        k_lvl = k_ref // (r * r)
        d = np.abs(u_ref[:, ::r] - u) ** plan.p
        s = np.zeros((k_lvl + 1, g.num_space))
        s2 = np.zeros_like(s)
        s[0] = d.sum(axis=0)
        s2[0] = (d * d).sum(axis=0)
        sums.append(s)
        sumsq.append(s2)
        sup.append(d.max(axis=1))

    scale_ref = ref.num_space / ref.h
    states = np.empty((slab + 1, b, ref.num_space))
    for s0 in range(0, k_ref, slab):
        rows = min(slab, k_ref - s0)
        cells = np.stack([noise_rows(ref, plan.seed, i, s0, s0 + rows) for i in indices])
        states[0] = u_ref
        for j in range(rows):
            st_ref.advance(u_ref, cells[:, j, :] * scale_ref, nxt_ref)
            u_ref, nxt_ref = nxt_ref, u_ref
            states[j + 1] = u_ref
        for li, (g, r) in enumerate(zip(grids, ratios)):
            rr = r * r
            steps = rows // rr
            if steps == 0:
                continue
            agg = aggregate_cells(cells[:, : steps * rr, :], r, rr)
            scale = g.num_space / g.h
            u, nxt = us[li], nxts[li]
            k0 = s0 // rr
            for j in range(steps):
                steppers[li].advance(u, agg[:, j, :] * scale, nxt)
                u, nxt = nxt, u
                d = np.abs(states[(j + 1) * rr][:, ::r] - u) ** plan.p
                sums[li][k0 + j + 1] += d.sum(axis=0)
                sumsq[li][k0 + j + 1] += (d * d).sum(axis=0)
                np.maximum(sup[li], d.max(axis=1), out=sup[li])
            us[li], nxts[li] = u, nxt
    return _ChunkResult(sums, sumsq, sup)


@dataclass
class SampleError:
    levels: list
    pointwise: list  # per level, |u^ref - u^n|^p on the level's (t, x) grid
    sup: np.ndarray  # per level, sup over (t, x)


def coupled_sample_error(plan: ExperimentPlan, sample_index: int) -> SampleError:
    """Per-level ``|u^ref - u^n|^p`` at the coarse grid points for one noise sample."""
    res = _run_chunk(plan, [sample_index])
    return SampleError(list(plan.levels), res.sums, np.array([s[0] for s in res.sup]))


@dataclass
class LinearFit:
    slope: float
    intercept: float
    residuals: list
    slope_stderr: float
    levels: list

    def to_dict(self) -> dict:
        return asdict(self)


def fit_slope(ns, errors) -> LinearFit:
    """OLS of ``log error`` on ``log n``."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    if len(x) < 2:
        raise ValueError("slope fit needs at least two levels")
    res = stats.linregress(x, y)
    resid = y - (res.intercept + res.slope * x)
    se = float(res.stderr) if len(x) > 2 else float("nan")
    return LinearFit(float(res.slope), float(res.intercept), resid.tolist(), se, [int(n) for n in ns])


def _headline_fit(ns, errors) -> tuple[LinearFit, LinearFit | None, list]:
    full = fit_slope(ns, errors)
    if len(ns) < 3:
        return full, None, []
    r = np.asarray(full.residuals)
    sd = math.sqrt(float(np.sum(r**2)) / (len(r) - 2))
    if sd > 0 and abs(r[0]) > 2 * sd:
        trimmed = fit_slope(ns[1:], errors[1:])
        return trimmed, full, [int(ns[0])]
    return full, None, []


@dataclass
class LevelError:
    n: int
    error: float
    stderr: float
    sup_argmax_t: float
    sup_argmax_x: float
    pathwise_error: float = 0.0
    pathwise_stderr: float = 0.0


@dataclass
class RateReport:
    plan: dict
    per_level: list
    slope: float | None
    intercept: float | None
    residuals: list
    reference_slope: float
    fit_all: dict | None = None
    excluded_levels: list = field(default_factory=list)
    degenerate: bool = False
    notes: list = field(default_factory=list)
    runtime_seconds: float = 0.0

    def errors(self) -> list:
        return [lv.error for lv in self.per_level]

    def ns(self) -> list:
        return [lv.n for lv in self.per_level]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = REPORT_SCHEMA
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RateReport":
        d = dict(d)
        d.pop("schema_version", None)
        d["per_level"] = [LevelError(**lv) for lv in d["per_level"]]
        return cls(**d)


def _mean_and_se(total, total_sq, count: int, p: float):
    m = total / count
    if count > 1:
        var = np.maximum(total_sq / count - m * m, 0.0) * count / (count - 1)
    else:
        var = np.zeros_like(m)
    se_m = np.sqrt(var / count)
    return m, se_m


def _root_with_se(m: float, se_m: float, p: float) -> tuple[float, float]:
    err = m ** (1.0 / p)
    se = (1.0 / p) * m ** (1.0 / p - 1.0) * se_m if m > 0 else 0.0
    return float(err), float(se)


def _chunks(plan: ExperimentPlan) -> list:
    return [
        list(range(s, min(s + plan.chunk_size, plan.samples)))
        for s in range(0, plan.samples, plan.chunk_size)
    ]


def _fit_report(plan_dict, levels, ref_n, reference_slope, runtime) -> RateReport:
    ns = [lv.n for lv in levels if lv.n != ref_n and lv.error > 0]
    errs = [lv.error for lv in levels if lv.n != ref_n and lv.error > 0]
    notes = []
    if len(ns) < 2:
        notes.append("fewer than two non-reference levels with positive error: no slope fitted")
        return RateReport(plan_dict, levels, None, None, [], reference_slope, degenerate=True, notes=notes,
                          runtime_seconds=runtime)
    head, full, excluded = _headline_fit(ns, errs)
    if excluded:
        notes.append(f"level n={excluded[0]} excluded from headline slope (residual > 2 residual sd)")
    return RateReport(
        plan_dict, levels, head.slope, head.intercept, head.residuals, reference_slope,
        fit_all=(full.to_dict() if full else None), excluded_levels=excluded, notes=notes,
        runtime_seconds=runtime,
    )


def estimate_rates(plan: ExperimentPlan, workers: int = 1) -> RateReport:
    """Monte Carlo strong errors per level and the fitted rate in n.

    The headline error of a level is ``sup_{(t,x)} (E|u^ref - u^n|^p)^{1/p}``
    over its grid points; the pathwise variant ``(E sup |u^ref - u^n|^p)^{1/p}``
    is reported alongside.
    """
    t0 = time.perf_counter()
    chunks = _chunks(plan)
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_chunk, [plan] * len(chunks), chunks))
    else:
        results = [_run_chunk(plan, ch) for ch in chunks]

    grids = plan.grids()
    levels = []
    for li, g in enumerate(grids):
        total = np.zeros_like(results[0].sums[li])
        total_sq = np.zeros_like(total)
        for res in results:  # ordered fold
            total += res.sums[li]
            total_sq += res.sumsq[li]
        sups = np.concatenate([res.sup[li] for res in results])
        if not (np.all(np.isfinite(total)) and np.all(np.isfinite(sups))):
            raise ArithmeticError(f"non-finite errors at level n={g.n}")
        m, se_m = _mean_and_se(total, total_sq, plan.samples, plan.p)
        kt, ix = np.unravel_index(int(np.argmax(m)), m.shape)
        err, se = _root_with_se(float(m[kt, ix]), float(se_m[kt, ix]), plan.p)
        sm, sse = _mean_and_se(np.sum(sups), np.sum(sups * sups), plan.samples, plan.p)
        perr, pse = _root_with_se(float(sm), float(sse), plan.p)
        levels.append(LevelError(g.n, err, se, float(kt * g.h), float(ix / g.num_space), perr, pse))
        log.info("level n=%d error=%.4g stderr=%.2g", g.n, err, se)
    runtime = time.perf_counter() - t0
    return _fit_report(plan.to_dict(), levels, plan.reference_n, -0.5 + plan.epsilon, runtime)


def deterministic_rate_experiment(psi_name: str, levels, t: float, c: float = 0.25) -> RateReport:
    """``sup_x |P^n_t psi - P_t psi|`` over the grid points, per level, and its rate."""
    t0 = time.perf_counter()
    ic = get_initial(psi_name)
    if ic.fourier is None:
        raise ValueError(f"initial condition {psi_name!r} has no exact Fourier representation")
    exact = ic.fourier.heat(t)
    out = []
    for n in levels:
        g = make_grid(n, c)
        x = g.points()
        diff = np.abs(apply_semigroup_disc(g, ic.on_grid(g), t) - exact(x))
        i = int(np.argmax(diff))
        out.append(LevelError(g.n, float(diff[i]), 0.0, float(t), float(x[i])))
    plan = {"kind": "deterministic", "initial": ic.name, "alpha": ic.alpha, "levels": list(levels), "t": t, "c": c}
    return _fit_report(plan, out, None, -ic.alpha, time.perf_counter() - t0)


# --- persistence -------------------------------------------------------------------


def persist_report(report: RateReport, path, provenance: dict | None = None) -> None:
    doc = report.to_dict()
    if provenance:
        doc["provenance"] = provenance
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_report(path) -> RateReport:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ReportParseError(f"{path}: not a valid report ({exc})") from exc
    if not isinstance(doc, dict):
        raise ReportParseError(f"{path}: report must be a JSON object")
    version = doc.get("schema_version")
    if version != REPORT_SCHEMA:
        raise ReportVersionError(f"{path}: schema version {version!r}, expected {REPORT_SCHEMA!r}")
    doc.pop("provenance", None)
    try:
        return RateReport.from_dict(doc)
    except (TypeError, KeyError) as exc:
        raise ReportParseError(f"{path}: malformed report ({exc})") from exc


def provenance_lines(provenance: dict | None) -> list:
    if not provenance:
        return []
    return [f"# {k}: {json.dumps(v, sort_keys=True)}" for k, v in provenance.items()]


def write_rate_csv(report: RateReport, path, provenance: dict | None = None) -> None:
    lines = provenance_lines(provenance) + ["n,error,stderr"]
    lines += [f"{lv.n},{lv.error!r},{lv.stderr!r}" for lv in report.per_level]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
