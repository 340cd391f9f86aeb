"""Seeded Monte-Carlo campaigns, result persistence and QoS audits.

Output directory layout::

    results.csv     one ResultRow per (point, trial, scheme)
    traces.csv      per-iteration objective of every P-AltOp run (convergence kind)
    solutions.npz   decision variables of every feasible row, for ``validate``
    figure.svg      chart of the campaign
    manifest.json   resolved spec, code version, infeasibility counts, wall times

CSVs contain no timing information, so reruns are byte-identical.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .altop import AltOpOptions, InfeasibleError, PenaltyOptions, p_altop
from .baselines import BaselineKind, OmaResult, run_eq_paltop, run_fixed_paltop, run_ris_oma
from .model import SIDES, Solution, SystemConfig, draw_channels, sinr_and_rate, watts_to_dbm
from .model import gain_matrix, solution_rates
from .sdp import SdpOptions

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "SpecError",
    "ExperimentSpec",
    "ResultRow",
    "TRACE_COLUMNS",
    "RESULT_COLUMNS",
    "trial_seed",
    "load_spec",
    "run_experiment",
    "read_results",
    "aggregate",
    "audit",
    "solution_key",
]

KINDS = ("convergence", "sweep_M_NT", "qos_compare")
SCHEMES = ("P-AltOp",) + tuple(k.value for k in BaselineKind)

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SpecError(ValueError):
    """The experiment spec is malformed or inconsistent."""


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def trial_seed(base_seed: int, trial: int) -> int:
    """64-bit seed of ``trial``: ``splitmix64(base ^ splitmix64(trial))``.

    Depends only on the base seed and the trial index, so extending a
    campaign never changes the draws of existing trials.
    """
    return _splitmix64((int(base_seed) & _MASK64) ^ _splitmix64(int(trial)))


# ---------------------------------------------------------------------------
# spec
# ---------------------------------------------------------------------------

_DEFAULT_SWEEPS = {
    "convergence": {"m_values": (10, 15, 20), "nt_values": (4,), "qos_values": (0.2,),
                    "schemes": ("P-AltOp",)},
    "sweep_M_NT": {"m_values": (10, 15, 20, 25, 30), "nt_values": (4, 6), "qos_values": (0.2,),
                   "schemes": ("P-AltOp",)},
    "qos_compare": {"m_values": (10,), "nt_values": (4,), "qos_values": (0.1, 0.2, 0.3, 0.4, 0.5),
                    "schemes": SCHEMES},
}


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    base: SystemConfig = field(default_factory=SystemConfig)
    m_values: tuple[int, ...] = ()
    nt_values: tuple[int, ...] = ()
    qos_values: tuple[float, ...] = ()
    schemes: tuple[str, ...] = ()
    trials: int = 1
    seed: int = 0
    output_dir: str = "results"
    # continue P-AltOp from any restricted-scheme solution that beat its cold start
    warm_start: bool = True
    penalty: PenaltyOptions = field(default_factory=PenaltyOptions)
    altop: AltOpOptions = field(default_factory=AltOpOptions)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        defaults = _DEFAULT_SWEEPS[self.kind]
        for name in ("m_values", "nt_values", "qos_values", "schemes"):
            value = getattr(self, name)
            object.__setattr__(self, name, tuple(value) if value else defaults[name])
        if self.trials < 1:
            raise SpecError("trials must be >= 1")
        if any(int(m) < 1 for m in self.m_values) or any(int(n) < 1 for n in self.nt_values):
            raise SpecError("M and N_T values must be positive integers")
        if any(not q > 0 for q in self.qos_values):
            raise SpecError("QoS values must be positive")
        unknown = [s for s in self.schemes if s not in SCHEMES]
        if unknown:
            raise SpecError(f"unknown schemes {unknown}; expected a subset of {SCHEMES}")

    def points(self) -> list[tuple[int, int, float]]:
        return [(int(m), int(n), float(q))
                for n in self.nt_values for m in self.m_values for q in self.qos_values]

    def config_at(self, m: int, n_t: int, qos: float, seed: int) -> SystemConfig:
        return self.base.with_(n_elements=m, n_antennas=n_t, qos_bits=(qos,), rng_seed=seed)

    def with_(self, **changes) -> ExperimentSpec:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))  # tuples -> lists


def _build(cls, table: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(table) - names
    if unknown:
        raise SpecError(f"unknown keys in [{where}]: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in table.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise SpecError(f"[{where}]: {exc}") from exc


def spec_from_dict(data: dict) -> ExperimentSpec:
    data = dict(data)
    try:
        system = _build(SystemConfig, data.pop("system", {}), "system")
        sdp = _build(SdpOptions, data.pop("sdp", {}), "sdp")
        penalty = _build(PenaltyOptions, {**data.pop("penalty", {}), "sdp": sdp}, "penalty")
        altop = _build(AltOpOptions, data.pop("altop", {}), "altop")
        sweep = data.pop("sweep", {})
        for key in ("m_values", "nt_values", "qos_values", "schemes"):
            if key in sweep:
                data[key] = sweep.pop(key)
        if sweep:
            raise SpecError(f"unknown keys in [sweep]: {sorted(sweep)}")
        if "kind" not in data:
            raise SpecError("missing top-level 'kind'")
        return _build(ExperimentSpec, {**data, "base": system, "penalty": penalty,
                                       "altop": altop}, "top level")
    except SpecError:
        raise
    except (TypeError, ValueError) as exc:
        raise SpecError(str(exc)) from exc


def load_spec(path: str | os.PathLike) -> ExperimentSpec:
    """Read a TOML experiment spec (see ``scenarios/*.toml``)."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise SpecError(f"cannot read spec: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise SpecError(f"malformed TOML: {exc}") from exc
    return spec_from_dict(data)


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

RESULT_COLUMNS = (
    "scheme", "trial", "seed", "M", "N_T", "qos_bits", "total_power_w", "total_power_dbm",
    "iterations", "converged", "infeasible", "lambda_r", "rank_gap", "failure_stage",
)
TRACE_COLUMNS = (
    "scheme", "trial", "seed", "M", "N_T", "qos_bits", "iteration", "total_power_w",
    "total_power_dbm", "p_sum_r_w", "p_sum_t_w", "lambda_r", "max_violation",
)


@dataclass(frozen=True)
class ResultRow:
    """One scheme on one trial.  Units: watts, dBm, bit/s/Hz."""

    scheme: str
    trial: int
    seed: int
    m: int
    n_t: int
    qos_bits: float
    total_power_w: float = math.nan
    iterations: int = 0
    converged: bool = False
    infeasible: bool = False
    lambda_r: float = math.nan
    rank_gap: float = math.nan  # largest nuclear-minus-spectral gap of the relaxed matrices
    failure_stage: str = ""

    @property
    def total_power_dbm(self) -> float:
        return watts_to_dbm(self.total_power_w) if self.total_power_w > 0 else math.nan

    def as_csv(self) -> list[str]:
        return [self.scheme, str(self.trial), str(self.seed), str(self.m), str(self.n_t),
                _fmt(self.qos_bits), _fmt(self.total_power_w), _fmt(self.total_power_dbm),
                str(self.iterations), str(int(self.converged)), str(int(self.infeasible)),
                _fmt(self.lambda_r), _fmt(self.rank_gap), self.failure_stage]


def _fmt(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _parse_float(s: str) -> float:
    return float(s) if s != "" else math.nan


def read_results(path: str | os.PathLike) -> list[ResultRow]:
    """Parse a results CSV; raises :class:`SpecError` on a schema mismatch."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != RESULT_COLUMNS:
            raise SpecError(f"{path}: header {header} does not match {RESULT_COLUMNS}")
        rows = []
        for rec in reader:
            if len(rec) != len(RESULT_COLUMNS):
                raise SpecError(f"{path}: malformed row {rec}")
            rows.append(ResultRow(
                scheme=rec[0], trial=int(rec[1]), seed=int(rec[2]), m=int(rec[3]),
                n_t=int(rec[4]), qos_bits=float(rec[5]), total_power_w=_parse_float(rec[6]),
                iterations=int(rec[8]), converged=rec[9] == "1", infeasible=rec[10] == "1",
                lambda_r=_parse_float(rec[11]), rank_gap=_parse_float(rec[12]),
                failure_stage=rec[13]))
    return rows


# ---------------------------------------------------------------------------
# one trial
# ---------------------------------------------------------------------------

def _rank_gap(mat: np.ndarray) -> float:
    vals = np.linalg.eigvalsh(mat)
    return float(np.sum(np.abs(vals)) - vals[-1])


def solution_rank_gap(sol: Solution) -> float:
    gaps = [0.0]
    for q in SIDES:
        st = sol.side(q)
        gaps.append(_rank_gap(st.big_v))
        gaps.extend(_rank_gap(m) for m in st.big_w)
    return max(gaps)


def solution_key(m: int, n_t: int, qos: float, trial: int, scheme: str) -> str:
    """Prefix of a row's arrays inside ``solutions.npz``."""
    return f"{m}/{n_t}/{float(qos)!r}/{trial}/{scheme}"


def _solution_arrays(prefix: str, sol: Solution | OmaResult) -> dict:
    if isinstance(sol, OmaResult):
        return {f"{prefix}/oma_power": np.array([u.power for u in sol.users]),
                f"{prefix}/oma_v": np.array([u.v for u in sol.users]),
                f"{prefix}/oma_w": np.array([u.w for u in sol.users]),
                f"{prefix}/oma_share": np.array(sol.time_share)}
    out = {f"{prefix}/lambda_r": np.array(sol.lambda_r)}
    for q in SIDES:
        st = sol.side(q)
        out.update({f"{prefix}/{q}/v": st.v, f"{prefix}/{q}/w": st.w,
                    f"{prefix}/{q}/big_v": st.big_v, f"{prefix}/{q}/big_w": st.big_w,
                    f"{prefix}/{q}/powers": st.powers, f"{prefix}/{q}/order": st.order})
    return out


@dataclass
class _TrialOutput:
    rows: list
    traces: list  # (scheme, TraceRecord)
    arrays: dict
    wall_s: dict
    cold_start_power: float = math.nan


def _run_trial(spec: ExperimentSpec, point: tuple[int, int, float], trial: int) -> _TrialOutput:
    m, n_t, qos = point
    seed = trial_seed(spec.seed, trial)
    cfg = spec.config_at(m, n_t, qos, seed)
    chan = draw_channels(cfg, np.random.default_rng([seed, 0]))
    results: dict[str, object] = {}
    traces, rows, wall = [], [], {}
    failures: dict[str, str] = {}

    def attempt(name, fn):
        t0 = time.perf_counter()
        try:
            results[name] = fn()
        except InfeasibleError as exc:
            failures[name] = exc.stage or "infeasible"
        wall[name] = time.perf_counter() - t0

    # baselines first so that P-AltOp can continue from them
    ordered = sorted(spec.schemes, key=lambda s: s == "P-AltOp")
    cold_power = math.nan
    for name in ordered:
        init_rng = np.random.default_rng([seed, 1])
        if name == "P-AltOp":
            attempt(name, lambda: p_altop(chan, cfg, spec.penalty, spec.altop, rng=init_rng))
            if name in results:
                cold_power = results[name][0].total_power
            if spec.warm_start:
                _warm_start(spec, chan, cfg, results, failures, wall)
        elif name == BaselineKind.EQ_PALTOP.value:
            attempt(name, lambda: run_eq_paltop(chan, cfg, spec.penalty, spec.altop, rng=init_rng))
        elif name == BaselineKind.FIXED_PALTOP.value:
            attempt(name, lambda: run_fixed_paltop(chan, cfg, spec.penalty, spec.altop,
                                                   rng=init_rng))
        elif name == BaselineKind.RIS_OMA.value:
            attempt(name, lambda: (run_ris_oma(chan, cfg), []))

    arrays = {}
    for name in spec.schemes:
        base = dict(scheme=name, trial=trial, seed=seed, m=m, n_t=n_t, qos_bits=qos)
        if name not in results:
            rows.append(ResultRow(**base, infeasible=True, failure_stage=failures[name]))
            continue
        sol, trace = results[name]
        for rec in trace:
            traces.append((name, rec))
        if isinstance(sol, OmaResult):
            rows.append(ResultRow(**base, total_power_w=sol.total_power, converged=True))
        else:
            rows.append(ResultRow(**base, total_power_w=sol.total_power,
                                  iterations=sol.iterations, converged=sol.converged,
                                  lambda_r=sol.lambda_r, rank_gap=solution_rank_gap(sol)))
        arrays.update(_solution_arrays(solution_key(m, n_t, qos, trial, name), sol))
    return _TrialOutput(rows, traces, arrays, wall, cold_power)


def _warm_start(spec, chan, cfg, results, failures, wall):
    """Continue P-AltOp from the best restricted solution if it beat the cold start.

    P-AltOp never increases the objective, so the continuation is at least
    as good as the restricted scheme it starts from.
    """
    restricted = [results[s][0] for s in (BaselineKind.EQ_PALTOP.value,
                                          BaselineKind.FIXED_PALTOP.value) if s in results]
    if not restricted:
        return
    best = min(restricted, key=lambda s: s.total_power)
    current = results.get("P-AltOp")
    if current is not None and current[0].total_power <= best.total_power:
        return
    t0 = time.perf_counter()
    try:
        sol, trace = p_altop(chan, cfg, spec.penalty, spec.altop, initial=best)
    except InfeasibleError:
        return
    finally:
        wall["P-AltOp"] = wall.get("P-AltOp", 0.0) + time.perf_counter() - t0
    if current is None or sol.total_power < current[0].total_power:
        prior = 0 if current is None else current[0].iterations
        sol = dataclasses.replace(sol, iterations=prior + sol.iterations)
        trace = [dataclasses.replace(rec, iteration=prior + rec.iteration) for rec in trace]
        results["P-AltOp"] = (sol, trace if current is None else current[1] + trace)
        failures.pop("P-AltOp", None)


# ---------------------------------------------------------------------------
# campaign
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    rows: list
    output_dir: Path
    n_infeasible: int
    paths: dict

    @property
    def all_infeasible(self) -> bool:
        return bool(self.rows) and self.n_infeasible == len(self.rows)


def _trial_job(args):
    spec, point, trial = args
    return _run_trial(spec, point, trial)


def run_experiment(spec: ExperimentSpec, *, workers: int = 1, chart: bool = True,
                   progress=None) -> ExperimentResult:
    """Run every (point, trial) of ``spec`` and write the result files.

    Trials may run in a process pool; results are always reduced in
    (point, trial) order, so outputs do not depend on ``workers``.
    """
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(spec, p, t) for p in spec.points() for t in range(spec.trials)]
    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_trial_job, jobs))
    else:
        outputs = []
        for job in jobs:
            outputs.append(_trial_job(job))
            if progress is not None:
                progress(len(outputs), len(jobs))

    rows = [r for o in outputs for r in o.rows]
    paths = {"results": out / "results.csv", "solutions": out / "solutions.npz",
             "manifest": out / "manifest.json"}
    with open(paths["results"], "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        writer.writerows(r.as_csv() for r in rows)
    if spec.kind == "convergence":
        paths["traces"] = out / "traces.csv"
        with open(paths["traces"], "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRACE_COLUMNS)
            for (_, point, trial), o in zip(jobs, outputs):
                seed = trial_seed(spec.seed, trial)
                for name, rec in o.traces:
                    writer.writerow([name, trial, seed, point[0], point[1], _fmt(point[2]),
                                     rec.iteration, _fmt(rec.total_power),
                                     _fmt(watts_to_dbm(rec.total_power)), _fmt(rec.p_sum_r),
                                     _fmt(rec.p_sum_t), _fmt(rec.lambda_r),
                                     _fmt(rec.max_violation)])
    arrays = {}
    for o in outputs:
        arrays.update(o.arrays)
    np.savez_compressed(paths["solutions"], **arrays)

    n_infeasible = sum(r.infeasible for r in rows)
    if chart and any(not r.infeasible for r in rows):
        from .charts import chart_for_kind, emit_chart
        paths["chart"] = out / "figure.svg"
        source = paths.get("traces", paths["results"])
        emit_chart(source, paths["chart"], chart_for_kind(spec.kind))

    manifest = {
        "package_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "spec": spec.to_dict(),
        "trial_seeds": {str(t): trial_seed(spec.seed, t) for t in range(spec.trials)},
        "rows": len(rows),
        "infeasible_rows": n_infeasible,
        "infeasible_rate": n_infeasible / len(rows) if rows else 0.0,
        "infeasible_by_scheme": {s: sum(r.infeasible for r in rows if r.scheme == s)
                                 for s in spec.schemes},
        "cold_start_power_w": [o.cold_start_power for o in outputs],
        "wall_seconds_total": time.perf_counter() - t0,
        "wall_seconds_per_trial": [o.wall_s for o in outputs],
    }
    with open(paths["manifest"], "w") as fh:
        json.dump(manifest, fh, indent=2, allow_nan=True)
    return ExperimentResult(rows, out, n_infeasible, paths)


def aggregate(rows, key) -> dict:
    """Mean power (watts) of feasible rows grouped by ``key(row)``."""
    groups: dict = {}
    for r in rows:
        if not r.infeasible:
            groups.setdefault(key(r), []).append(r.total_power_w)
    return {k: float(np.mean(v)) for k, v in sorted(groups.items())}


# ---------------------------------------------------------------------------
# audit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AuditFinding:
    row: ResultRow
    worst_slack: float  # min over users of rate - R_min

    @property
    def ok(self) -> bool:
        return self.worst_slack >= -1e-6


def audit(results_csv: str | os.PathLike, manifest_path: str | os.PathLike | None = None,
          solutions_path: str | os.PathLike | None = None) -> list[AuditFinding]:
    """Recompute every feasible row's user rates from stored decisions.

    The channel is redrawn from the row's seed and the spec in the manifest;
    the beamformers and powers come from ``solutions.npz``.
    """
    results_csv = Path(results_csv)
    manifest_path = Path(manifest_path or results_csv.with_name("manifest.json"))
    solutions_path = Path(solutions_path or results_csv.with_name("solutions.npz"))
    try:
        spec = spec_from_dict(_manifest_spec(json.loads(manifest_path.read_text())))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise SpecError(f"cannot read manifest: {exc}") from exc
    rows = read_results(results_csv)
    findings = []
    with np.load(solutions_path) as arrays:
        for row in rows:
            if row.infeasible:
                continue
            cfg = spec.config_at(row.m, row.n_t, row.qos_bits, row.seed)
            chan = draw_channels(cfg, np.random.default_rng([row.seed, 0]))
            prefix = solution_key(row.m, row.n_t, row.qos_bits, row.trial, row.scheme)
            if row.scheme == BaselineKind.RIS_OMA.value:
                slack = _audit_oma(arrays, prefix, chan, cfg)
            else:
                slack = _audit_noma(arrays, prefix, chan, cfg)
            findings.append(AuditFinding(row, slack))
    return findings


def _manifest_spec(manifest: dict) -> dict:
    spec = dict(manifest["spec"])
    penalty = dict(spec.pop("penalty"))
    system = spec.pop("base")
    sweep = {k: spec.pop(k) for k in ("m_values", "nt_values", "qos_values", "schemes")}
    return {**spec, "system": system, "sdp": penalty.pop("sdp"), "penalty": penalty,
            "sweep": sweep}


def _audit_noma(arrays, prefix, chan, cfg) -> float:
    lam_r = float(arrays[f"{prefix}/lambda_r"])
    worst = math.inf
    for q in SIDES:
        order = arrays[f"{prefix}/{q}/order"]
        ordered = chan.permuted(q, order)
        gains = gain_matrix(ordered, q, arrays[f"{prefix}/{q}/v"], arrays[f"{prefix}/{q}/w"])
        lam = lam_r if q == "r" else 1.0 - lam_r
        _, rates = sinr_and_rate(gains, arrays[f"{prefix}/{q}/powers"], cfg.noise_power, lam)
        worst = min(worst, float(np.min(rates - cfg.qos(q)[order])))
    return worst


def _audit_oma(arrays, prefix, chan, cfg) -> float:
    share = float(arrays[f"{prefix}/oma_share"])
    powers, vs, ws = (arrays[f"{prefix}/oma_{k}"] for k in ("power", "v", "w"))
    worst, i = math.inf, 0
    for q in SIDES:
        for k, a in enumerate(chan.a_matrices(q)):
            gain = abs(np.vdot(ws[i], a @ vs[i])) ** 2
            rate = share * np.log2(1.0 + powers[i] * gain / cfg.noise_power)
            worst = min(worst, float(rate - cfg.qos(q)[k]))
            i += 1
    return worst


def solution_qos_slack(sol: Solution, chan, cfg) -> float:
    """Smallest ``rate - R_min`` over all users of ``sol``."""
    return min(float(np.min(r - q)) for r, q in solution_rates(sol, chan, cfg).values())
