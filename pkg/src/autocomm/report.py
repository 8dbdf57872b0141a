"""Run orchestration and reporting.

One scenario + one method = one RunRecord with a flat float metric dict; a
sweep is the cross product of an axis, seeds, and methods, with per-cell
failures recorded rather than aborting the grid.  Serialized records and
CSVs are canonical (sorted keys, repr floats) and carry no timestamps, so
re-running the same scenario yields byte-identical files; wall time is
kept on the in-memory record only.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .configs import (
    ObjectiveKind,
    ObjectiveSpec,
    ScenarioConfig,
    Track,
    scenario_from_dict,
    scenario_to_dict,
    scenario_to_json,
)
from .geochannel import (
    build_ckm,
    fit_linear_gcp,
    geometry_predictor,
    linear_gcp_predict,
    nn_ckm_predict,
    synthesize_channel,
    trace_paths,
    nmse_db,
)
from .opro import MockLocalSearchEngine, OproParams, opro_optimize_segments
from .radio import RadioParams, generate_snr_map
from .rng import stream
from .scheduling import (
    GaParams,
    allocation_rank,
    brute_force_optimal,
    ga_schedule,
    round_robin_alloc,
)
from .traffic import QueueGreedyController, RoundRobinController, run_episode

SCHEDULING_METHODS = ("round_robin", "ga", "brute_force", "opro_mock",
                      "opro_chat")
TRAFFIC_METHODS = ("round_robin", "greedy")
CHANNEL_METHODS = ("geometry", "nn_ckm", "linear_gcp")


@dataclass
class RunRecord:
    track: str
    method: str
    seed: int
    config_digest: str
    package_version: str
    status: str                          # "ok" | "error"
    metrics: dict[str, float]
    details: dict
    error: Optional[str] = None
    wall_time_s: Optional[float] = None  # in-memory only, never serialized


def config_digest(scenario: ScenarioConfig) -> str:
    return hashlib.sha256(
        scenario_to_json(scenario).encode("utf-8")).hexdigest()


def record_to_dict(rec: RunRecord) -> dict:
    doc = dataclasses.asdict(rec)
    doc.pop("wall_time_s", None)
    if doc.get("error") is None:
        doc.pop("error", None)
    return doc


def record_to_json(rec: RunRecord) -> str:
    return json.dumps(record_to_dict(rec), indent=2, sort_keys=True,
                      default=str) + "\n"


# ---------------------------------------------------------------------------
# Track runners


def _run_scheduling(scenario: ScenarioConfig, method: str,
                    opts: dict) -> tuple[dict, dict]:
    cfg = scenario.scheduling
    assert cfg is not None
    seed = scenario.seed
    snr = generate_snr_map(cfg, RadioParams(), stream(seed, "scheduling/snr"))
    objective = cfg.objective

    if method == "round_robin":
        alloc = round_robin_alloc(cfg, snr)
        level, score = allocation_rank(alloc, snr, cfg, objective)
        metrics = {"score": score, "level": float(level)}
        details = {"alloc": list(alloc), "objective": objective.kind.value}
    elif method == "ga":
        alloc, score, gens = ga_schedule(
            cfg, snr, objective, GaParams(), stream(seed, "scheduling/ga"))
        level, _ = allocation_rank(alloc, snr, cfg, objective)
        metrics = {"score": score, "level": float(level),
                   "generations": float(gens)}
        details = {"alloc": list(alloc), "objective": objective.kind.value}
    elif method == "brute_force":
        alloc, score = brute_force_optimal(cfg, snr, objective)
        level, _ = allocation_rank(alloc, snr, cfg, objective)
        metrics = {"score": score, "level": float(level)}
        details = {"alloc": list(alloc), "objective": objective.kind.value}
    elif method in ("opro_mock", "opro_chat"):
        if method == "opro_mock":
            engine = MockLocalSearchEngine(stream(seed, "scheduling/engine"))
        else:
            from .gateway import Cassette, ChatProposalEngine, EndpointConfig
            endpoint = EndpointConfig(
                base_url=opts.get("endpoint_url", ""),
                model=opts.get("model", ""))
            cassette = None
            if opts.get("cassette"):
                cassette = Cassette(opts["cassette"],
                                    opts.get("cassette_mode", "replay"))
            engine = ChatProposalEngine(endpoint, cassette)
        params = OproParams(**opts.get("opro_params", {}))
        switch = opts.get("switch")
        if switch:
            at = int(switch["at_iteration"])
            second = ObjectiveSpec(
                kind=ObjectiveKind(switch["objective"]),
                min_rate_bps=float(switch.get("min_rate_bps",
                                              cfg.min_rate_bps)),
            )
            segments = [(objective, at),
                        (second, params.max_iterations - at)]
        else:
            segments = [(objective, params.max_iterations)]
        result = opro_optimize_segments(cfg, snr, segments, engine, params)
        metrics = {
            "score": result.best_score,
            "level": float(result.final.best_level),
            "iterations": float(sum(s.iterations_run for s in result.segments)),
            "success": 1.0 if result.success else 0.0,
        }
        details = {
            "alloc": list(result.best_alloc) if result.best_alloc else None,
            "objective": result.final.objective.kind.value,
            "segments": [s.objective.kind.value for s in result.segments],
        }
    else:
        raise ValueError(f"unknown scheduling method {method!r}; "
                         f"expected one of {SCHEDULING_METHODS}")
    return metrics, details


def _run_traffic(scenario: ScenarioConfig, method: str,
                 opts: dict) -> tuple[dict, dict]:
    cfg = scenario.traffic
    assert cfg is not None
    observation = opts.get("observation", "vue")
    if method == "round_robin":
        controller = RoundRobinController(
            green_s=float(opts.get("green_s", 10.0)))
    elif method == "greedy":
        controller = QueueGreedyController()
    else:
        raise ValueError(f"unknown traffic method {method!r}; "
                         f"expected one of {TRAFFIC_METHODS}")
    result = run_episode(cfg, controller, stream(scenario.seed, "traffic"),
                         observation)
    return dict(result.metrics), {"observation": observation}


def default_user_positions(scenario: ScenarioConfig,
                           num_users: int = 25,
                           x_range: tuple[float, float] = (0.0, 30.0)
                           ) -> np.ndarray:
    """Deterministic random users on the road for channel evaluation."""
    cfg = scenario.channel
    assert cfg is not None
    rng = stream(scenario.seed, "channel/users")
    half = cfg.road_halfwidth_m
    xs = rng.uniform(x_range[0], x_range[1], num_users)
    ys = rng.uniform(-half + 0.5, half - 0.5, num_users)
    return np.column_stack([xs, ys, np.full(num_users, cfg.user_height_m)])


def ckm_grid_positions(scenario: ScenarioConfig,
                       x_range: tuple[float, float] = (0.0, 30.0),
                       step: float = 0.25) -> np.ndarray:
    """Lane-center sampling grid for building a channel map."""
    cfg = scenario.channel
    assert cfg is not None
    half = cfg.road_halfwidth_m
    centers = [-half + (k + 0.5) * cfg.lane_width_m
               for k in range(cfg.num_lanes)]
    xs = np.arange(x_range[0], x_range[1] + step / 2, step)
    rows = [(x, y, cfg.user_height_m) for y in centers for x in xs]
    return np.asarray(rows)


def _run_channel(scenario: ScenarioConfig, method: str,
                 opts: dict) -> tuple[dict, dict]:
    cfg = scenario.channel
    assert cfg is not None
    users = opts.get("users")
    if users is None:
        users = default_user_positions(
            scenario, num_users=int(opts.get("num_users", 25)))
    users = np.asarray(users, dtype=float)

    if method == "geometry":
        predict = lambda u: geometry_predictor(cfg, u)
    elif method in ("nn_ckm", "linear_gcp"):
        grid = opts.get("grid")
        if grid is None:
            grid = ckm_grid_positions(scenario,
                                      step=float(opts.get("grid_step", 0.25)))
        ckm = build_ckm(cfg, grid)
        if method == "nn_ckm":
            predict = lambda u: nn_ckm_predict(ckm, u)
        else:
            model = fit_linear_gcp(cfg, ckm)
            predict = lambda u: linear_gcp_predict(model, u)
    else:
        raise ValueError(f"unknown channel method {method!r}; "
                         f"expected one of {CHANNEL_METHODS}")

    values = []
    for u in users:
        truth = synthesize_channel(cfg, trace_paths(cfg, u))
        values.append(nmse_db(truth, predict(u)))
    arr = np.asarray(values)
    metrics = {
        "nmse_db_mean": float(arr.mean()),
        "nmse_db_median": float(np.median(arr)),
        "nmse_db_max": float(arr.max()),
        "num_users": float(len(arr)),
    }
    return metrics, {}


def run(scenario: ScenarioConfig, method: str,
        opts: Optional[dict] = None) -> RunRecord:
    """Execute one method on one scenario; raises on failure."""
    opts = dict(opts or {})
    runners = {
        Track.SCHEDULING: _run_scheduling,
        Track.TRAFFIC: _run_traffic,
        Track.CHANNEL: _run_channel,
    }
    t0 = time.perf_counter()
    metrics, details = runners[scenario.track](scenario, method, opts)
    wall = time.perf_counter() - t0
    return RunRecord(
        track=scenario.track.value, method=method, seed=scenario.seed,
        config_digest=config_digest(scenario),
        package_version=__version__, status="ok",
        metrics={k: float(v) for k, v in sorted(metrics.items())},
        details=details, wall_time_s=wall)


def run_safe(scenario: ScenarioConfig, method: str,
             opts: Optional[dict] = None) -> RunRecord:
    """Like run(), but failures become status="error" records."""
    try:
        return run(scenario, method, opts)
    except Exception as exc:
        return RunRecord(
            track=scenario.track.value, method=method, seed=scenario.seed,
            config_digest=config_digest(scenario),
            package_version=__version__, status="error", metrics={},
            details={}, error=f"{type(exc).__name__}: {exc}")


# ---------------------------------------------------------------------------
# Sweeps


@dataclass(frozen=True)
class SweepCell:
    axis_value: object
    seed: int
    method: str
    record: RunRecord


@dataclass
class SweepResult:
    axis_name: Optional[str]
    cells: list[SweepCell] = field(default_factory=list)

    @property
    def all_ok(self) -> bool:
        return all(c.record.status == "ok" for c in self.cells)


def _set_dotted(doc: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def sweep(base: ScenarioConfig, methods: Sequence[str], seeds: Sequence[int],
          axis_name: Optional[str] = None,
          axis_values: Sequence = (None,),
          opts: Optional[dict] = None) -> SweepResult:
    """Cross product of axis values, seeds, and methods.

    The axis is a dotted path into the scenario document (for example
    "scheduling.num_robots"); each cell revalidates the patched document.
    A failing cell is recorded with its error and the sweep continues.
    """
    result = SweepResult(axis_name=axis_name)
    if axis_name is None:
        axis_values = (None,)
    for value in axis_values:
        for seed in seeds:
            doc = scenario_to_dict(base)
            doc["seed"] = int(seed)
            if axis_name is not None:
                _set_dotted(doc, axis_name, value)
            try:
                scenario = scenario_from_dict(doc)
            except Exception as exc:
                for method in methods:
                    result.cells.append(SweepCell(value, int(seed), method,
                        RunRecord(track=base.track.value, method=method,
                                  seed=int(seed), config_digest="",
                                  package_version=__version__,
                                  status="error", metrics={}, details={},
                                  error=f"{type(exc).__name__}: {exc}")))
                continue
            for method in methods:
                rec = run_safe(scenario, method, opts)
                result.cells.append(SweepCell(value, int(seed), method, rec))
    return result


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def cells_csv(sw: SweepResult) -> str:
    """One row per cell, wide over the union of metric names."""
    metric_keys = sorted({k for c in sw.cells for k in c.record.metrics})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "axis_value", "seed", "method", "status", "error"]
               + metric_keys)
    for c in sw.cells:
        row = [sw.axis_name or "", _fmt(c.axis_value), c.seed, c.method,
               c.record.status, c.record.error or ""]
        row += [_fmt(c.record.metrics.get(k)) for k in metric_keys]
        w.writerow(row)
    return buf.getvalue()


def summary_csv(sw: SweepResult) -> str:
    """Mean/min/max per (axis value, method, metric) over seeds; ok cells only."""
    groups: dict[tuple, dict[str, list[float]]] = {}
    for c in sw.cells:
        if c.record.status != "ok":
            continue
        g = groups.setdefault((c.axis_value, c.method), {})
        for k, v in c.record.metrics.items():
            g.setdefault(k, []).append(v)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "axis_value", "method", "metric",
                "mean", "min", "max", "n"])
    for (value, method) in sorted(groups, key=lambda t: (str(t[0]), t[1])):
        for metric in sorted(groups[(value, method)]):
            vals = groups[(value, method)][metric]
            w.writerow([sw.axis_name or "", _fmt(value), method, metric,
                        repr(float(np.mean(vals))), repr(float(min(vals))),
                        repr(float(max(vals))), len(vals)])
    return buf.getvalue()


def format_report(records: Sequence[RunRecord]) -> str:
    """Plain-text table: methods as rows, mean metrics over matching records."""
    groups: dict[str, dict[str, list[float]]] = {}
    for rec in records:
        if rec.status != "ok":
            continue
        g = groups.setdefault(f"{rec.track}/{rec.method}", {})
        for k, v in rec.metrics.items():
            g.setdefault(k, []).append(v)
    lines = []
    errors = [r for r in records if r.status != "ok"]
    for name in sorted(groups):
        lines.append(name)
        for metric in sorted(groups[name]):
            vals = groups[name][metric]
            lines.append(f"  {metric}: mean={np.mean(vals):.6g} "
                         f"min={min(vals):.6g} max={max(vals):.6g} "
                         f"n={len(vals)}")
    if errors:
        lines.append(f"errors: {len(errors)}")
        for r in errors:
            lines.append(f"  {r.track}/{r.method} seed={r.seed}: {r.error}")
    return "\n".join(lines) + "\n"
