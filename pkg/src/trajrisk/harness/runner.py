"""Monte-Carlo replicates, ordered aggregation and CSV output."""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import NumericalFailure, SingularityError, TrajRiskError
from ..model import generate_dataset
from ..risk import RiskSeries, risk_series
from ..trajectory import run_trajectory, sample_batches
from ..weights import DENSE_CAP, SmallDiagonalWarning, dense_weights, hutchinson_weights, solve_wtilde_sub
from .config import ExperimentConfig

CURVES = ("true", "hat", "tilde", "sub")
STATS = ("mean", "median", "se")
RAW_HEADER = ("rep", "t", "r_true", "r_hat", "r_tilde", "r_sub", "noise_term")
FAILURE_LIMIT = 0.20


class ExperimentFailure(TrajRiskError):
    """Too many replicates failed (or none succeeded)."""


class OutputError(TrajRiskError, OSError):
    """Writing results failed; the message names the path."""


@dataclass(frozen=True)
class ReplicateResult:
    rep: int
    series: Optional[RiskSeries] = None
    error: Optional[str] = None
    small_warning: bool = False

    @property
    def ok(self) -> bool:
        return self.series is not None


@dataclass
class AggregateResult:
    T: int
    reps: List[int]
    raw: List[RiskSeries]
    curves: Dict[str, np.ndarray]
    stats: Dict[str, Dict[str, np.ndarray]]
    argmin: Dict[str, np.ndarray]
    argmin_agreement: Dict[str, float]
    argmin_k: int = 3
    failures: List[Dict[str, object]] = field(default_factory=list)
    small_warnings: int = 0
    metadata: Dict[str, object] = field(default_factory=dict)


def _u64(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, np.uint64)[0])


def replicate_seeds(master_seed: int, rep: int, freeze_batches: bool = False) -> Dict[str, int]:
    """Independent data / batch / probe seeds of replicate ``rep``.

    Replicate r owns the substream SeedSequence(master_seed, spawn_key=(r,)),
    so seeds do not depend on how replicates are scheduled.
    """
    child = np.random.SeedSequence(master_seed, spawn_key=(rep,))
    data_ss, batch_ss, probe_ss = child.spawn(3)
    seeds = {"data": _u64(data_ss), "batches": _u64(batch_ss), "probes": _u64(probe_ss)}
    if freeze_batches:
        seeds["batches"] = _u64(np.random.SeedSequence(master_seed))
    return seeds


def run_replicate(cfg: ExperimentConfig, rep: int) -> ReplicateResult:
    seeds = replicate_seeds(cfg.master_seed, rep, cfg.freeze_batches)
    problem = dataclasses.replace(cfg.problem, seed=seeds["data"])
    try:
        data = generate_dataset(problem)
        plan = sample_batches(problem.n, cfg.schedule, seeds["batches"])
        traj = run_trajectory(data, cfg.loss, cfg.penalty, cfg.schedule, plan)
        mode = cfg.weight_mode
        if mode == "auto":
            mode = "dense" if problem.p * cfg.schedule.T <= DENSE_CAP else "hutchinson"
        if mode == "dense":
            ws = dense_weights(traj, data, cap=np.inf, include_sub=cfg.compute_sub)
        else:
            ws = hutchinson_weights(traj, data, m=cfg.probes, probe_seed=seeds["probes"],
                                    include_sub=cfg.compute_sub)
        sub = None
        small = False
        if cfg.compute_sub:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", SmallDiagonalWarning)
                sub = solve_wtilde_sub(ws)
            small = any(issubclass(w.category, SmallDiagonalWarning) for w in caught)
        series = risk_series(traj, data, ws, sub)
        if not np.all(np.isfinite(series.r_tilde)):
            raise NumericalFailure(int(np.flatnonzero(~np.isfinite(series.r_tilde))[0]),
                                   "non-finite risk estimate")
    except (NumericalFailure, SingularityError) as exc:
        return ReplicateResult(rep=rep, error=f"{type(exc).__name__}: {exc}")
    return ReplicateResult(rep=rep, series=series, small_warning=small)


def _worker_count(cfg: ExperimentConfig) -> int:
    workers = cfg.workers
    cap = os.environ.get("TRAJRISK_WORKERS")
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, min(workers, cfg.replicates))


def run_replicates(cfg: ExperimentConfig) -> List[ReplicateResult]:
    reps = range(cfg.replicates)
    workers = _worker_count(cfg)
    if workers == 1:
        return [run_replicate(cfg, r) for r in reps]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves submission order, so the fold below is ordered
        return list(pool.map(run_replicate, [cfg] * cfg.replicates, reps))


def _curve_matrix(series: Sequence[RiskSeries], attr: str) -> Optional[np.ndarray]:
    rows = []
    for s in series:
        v = getattr(s, attr)
        rows.append(np.full(s.r_true.shape, np.nan) if v is None else v - s.noise_term)
    M = np.vstack(rows)
    return None if np.all(np.isnan(M)) else M


def _column_stats(M: np.ndarray) -> Dict[str, np.ndarray]:
    T = M.shape[1]
    mean = np.full(T, np.nan)
    median = np.full(T, np.nan)
    se = np.full(T, np.nan)
    for t in range(T):
        col = M[:, t][~np.isnan(M[:, t])]
        if col.size == 0:
            continue
        mean[t] = col.mean()
        median[t] = np.median(col)
        se[t] = col.std(ddof=1) / np.sqrt(col.size) if col.size > 1 else 0.0
    return {"mean": mean, "median": median, "se": se}


def _argmins(M: np.ndarray) -> np.ndarray:
    out = np.full(M.shape[0], -1)
    for r, row in enumerate(M):
        if not np.all(np.isnan(row)):
            out[r] = int(np.nanargmin(row))
    return out


def aggregate(series: Sequence[RiskSeries], k: int = 3,
              reps: Optional[Sequence[int]] = None) -> AggregateResult:
    """Columnwise mean, median and SE of each curve minus the noise term.

    Argmins are 0-based columns.  Agreement is the fraction of replicates
    whose estimated argmin is within ``k`` steps of the oracle argmin, over
    replicates where that estimate exists.
    """
    series = list(series)
    if not series:
        raise ExperimentFailure("no successful replicate to aggregate")
    T = series[0].r_true.shape[0]
    attrs = {"true": "r_true", "hat": "r_hat", "tilde": "r_tilde", "sub": "r_sub"}
    curves, stats, argmin, agree = {}, {}, {}, {}
    for name, attr in attrs.items():
        M = _curve_matrix(series, attr)
        if M is None:
            continue
        curves[name] = M
        stats[name] = _column_stats(M)
        argmin[name] = _argmins(M)
    oracle = argmin["true"]
    for name, am in argmin.items():
        if name == "true":
            continue
        have = am >= 0
        agree[name] = float(np.mean(np.abs(am[have] - oracle[have]) <= k)) if have.any() else float("nan")
    return AggregateResult(
        T=T, reps=list(range(len(series))) if reps is None else list(reps), raw=series,
        curves=curves, stats=stats, argmin=argmin, argmin_agreement=agree, argmin_k=k,
    )


def _metadata(cfg: ExperimentConfig, result: AggregateResult) -> Dict[str, object]:
    oracle = result.argmin["true"]
    return {
        "config": dict(sorted(cfg.raw.items())),
        "loss_delta": cfg.loss.delta,
        "etas": [float(e) for e in cfg.schedule.etas],
        "replicates": cfg.replicates,
        "successes": len(result.raw),
        "failures": result.failures,
        "small_diagonal_warnings": result.small_warnings,
        "argmin_k": result.argmin_k,
        "argmin": {name: [int(a) + 1 for a in am] for name, am in result.argmin.items()},
        "argmin_agreement": result.argmin_agreement,
        "oracle_interior_fraction": float(np.mean((oracle > 0) & (oracle < result.T - 1))),
        "index_base": 1,
    }


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> AggregateResult:
    results = run_replicates(cfg)
    ok = [r for r in results if r.ok]
    failures = [{"rep": r.rep + 1, "error": r.error} for r in results if not r.ok]
    if len(failures) > FAILURE_LIMIT * cfg.replicates or not ok:
        raise ExperimentFailure(
            f"{len(failures)} of {cfg.replicates} replicates failed (limit {FAILURE_LIMIT:.0%}); "
            f"first: {failures[0]['error']}"
        )
    result = aggregate([r.series for r in ok], k=cfg.argmin_k, reps=[r.rep for r in ok])
    result.failures = failures
    result.small_warnings = sum(r.small_warning for r in ok)
    result.metadata = _metadata(cfg, result)
    if write:
        emit_csv(result, cfg.output_dir)
    return result


def _fmt(x) -> str:
    if x is None:
        return ""
    x = float(x)
    return "" if np.isnan(x) else repr(x)


def emit_csv(result: AggregateResult, out_dir) -> Dict[str, Path]:
    """Write raw.csv, summary.csv and metadata.json; rep and t are 1-based."""
    out_dir = Path(out_dir)
    paths = {"raw": out_dir / "raw.csv", "summary": out_dir / "summary.csv",
             "metadata": out_dir / "metadata.json"}
    current = out_dir
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        current = paths["raw"]
        with open(current, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RAW_HEADER)
            for rep, s in zip(result.reps, result.raw):
                for t in range(result.T):
                    w.writerow([rep + 1, t + 1, _fmt(s.r_true[t]),
                                _fmt(None if s.r_hat is None else s.r_hat[t]),
                                _fmt(None if s.r_tilde is None else s.r_tilde[t]),
                                _fmt(None if s.r_sub is None else s.r_sub[t]),
                                _fmt(s.noise_term)])
        current = paths["summary"]
        with open(current, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("t", "curve", "stat", "value"))
            for t in range(result.T):
                for curve in CURVES:
                    if curve not in result.stats:
                        continue
                    for stat in STATS:
                        w.writerow([t + 1, curve, stat, _fmt(result.stats[curve][stat][t])])
        current = paths["metadata"]
        with open(current, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(result.metadata, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OutputError(f"cannot write {current}: {exc.strerror or exc}") from exc
    return paths
