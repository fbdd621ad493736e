"""
BENCHMARK HARNESS
Static and snowball-streaming benchmarks at the hardest generator setting, comparing the model
pipeline against refinement from scratch. Results are written as JSON lines and summarized with
pandas into per-scale (or per-step) averages plus "Improv." rows.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table
from tqdm import tqdm

from .errors import BlockpartError, RefinerTimeout
from .graph import Graph, Partition
from .infer import generalize_and_refine, scratch_partition
from .model import ModelCheckpoint
from .refine import OOT_SECONDS, RefinerConfig
from .report import ReportWriter, RunReport
from .sbmgen import GeneratorParams, generate, snowball_split
from .seeds import derive_seed

logger = logging.getLogger(__name__)

IMPROV = "Improv."
QUALITY_COLUMNS = ["ac", "ari", "f1", "recall", "precision"]
TIME_COLUMNS = ["total_s", "feat_s", "ffp_s", "init_s", "refine_s"]


@dataclass(frozen=True)
class BenchSettings:
    run_seed: int = 0
    threshold: float = 0.5
    precision: str = "float64"
    avg_degree: float = 82.0
    oot_s: float = OOT_SECONDS
    jobs: int = 1
    progress: bool = True


def _stopped_report(g: Graph, arm: str, phase: str, graph_id: str, settings: BenchSettings,
                    status: str = "OOT", error: str = "") -> RunReport:
    return RunReport(n=g.n, m=g.num_edges, n_super=g.n, k_init=0, k_final=0, phase=phase, arm=arm,
                     status=status, error=error, graph_id=graph_id, run_seed=settings.run_seed,
                     total_s=settings.oot_s if status == "OOT" else 0.0)


def _run_arm(arm: str, run, g: Graph, settings: BenchSettings, phase: str, graph_id: str) -> RunReport:
    try:
        _, report = run()
    except RefinerTimeout:
        return _stopped_report(g, arm, phase, graph_id, settings)
    except BlockpartError as e:
        logger.error(f"[{graph_id} {phase}] {arm} arm failed: {e}")
        return _stopped_report(g, arm, phase, graph_id, settings, status="failed", error=str(e))
    return report


def _run_arms(g: Graph, truth: Partition, ckpt: ModelCheckpoint, cfg: RefinerConfig, settings: BenchSettings,
              phase: str, graph_id: str) -> List[RunReport]:
    common = dict(truth=truth, run_seed=settings.run_seed, phase=phase, graph_id=graph_id)
    pipeline = partial(generalize_and_refine, g, ckpt, cfg, threshold=settings.threshold,
                       precision=settings.precision, **common)
    scratch = partial(scratch_partition, g, cfg, **common)
    reports = [_run_arm("pipeline", pipeline, g, settings, phase, graph_id),
               _run_arm("scratch", scratch, g, settings, phase, graph_id)]
    for report in reports:
        if report.status == "ok" and report.total_s > settings.oot_s:
            report.status = "OOT"
        if report.status == "OOT":
            logger.warning(f"[{graph_id} {phase}] {report.arm} arm out of time (> {settings.oot_s:.0f}s)")
    return reports


def _trial_graph(n: int, trial: int, settings: BenchSettings):
    params = GeneratorParams.hardest(n, seed=derive_seed(settings.run_seed, "bench-graph", n, trial),
                                     avg_degree=min(settings.avg_degree, (n - 1) / 2))
    return generate(params)


def _trial_refiner(cfg: RefinerConfig, n: int, trial: int, settings: BenchSettings) -> RefinerConfig:
    return replace(cfg, seed=derive_seed(settings.run_seed, "refiner", n, trial))


def _static_trial(n: int, trial: int, ckpt: ModelCheckpoint, cfg: RefinerConfig,
                  settings: BenchSettings) -> List[RunReport]:
    g, truth = _trial_graph(n, trial, settings)
    return _run_arms(g, truth, ckpt, _trial_refiner(cfg, n, trial, settings), settings,
                     phase="static", graph_id=f"N{n}-t{trial}")


def _stream_trial(n: int, T: int, trial: int, ckpt: ModelCheckpoint, cfg: RefinerConfig,
                  settings: BenchSettings) -> List[RunReport]:
    g, truth = _trial_graph(n, trial, settings)
    _, steps = snowball_split(g, truth, T, derive_seed(settings.run_seed, "snowball", n, trial))
    trial_cfg = _trial_refiner(cfg, n, trial, settings)
    reports = []
    for step in steps:
        reports.extend(_run_arms(step.graph, step.truth, ckpt, trial_cfg, settings,
                                 phase=f"stream-step {step.t}", graph_id=f"N{n}-t{trial}"))
    return reports


def _run_parallel(tasks: Sequence, fn, settings: BenchSettings, desc: str) -> List[RunReport]:
    with ThreadPoolExecutor(max_workers=max(1, settings.jobs)) as pool:
        futures = [pool.submit(fn, *task) for task in tasks]
        reports: List[RunReport] = []
        for future in tqdm(futures, desc=desc, disable=not settings.progress):
            reports.extend(future.result())
    return reports


def report_rows(reports: Sequence[RunReport]) -> pd.DataFrame:
    rows = []
    for r in reports:
        row: Dict[str, Any] = {
            "graph_id": r.graph_id, "phase": r.phase, "arm": r.arm, "status": r.status,
            "n": r.n, "n_super": r.n_super, "k_final": r.k_final,
            "step": int(r.phase.split()[-1]) if r.phase.startswith("stream-step") else 0,
        }
        row.update({col: getattr(r, col) for col in TIME_COLUMNS})
        metrics = r.metrics.to_dict() if r.metrics is not None else {}
        row.update({col: metrics.get(col, np.nan) for col in QUALITY_COLUMNS})
        rows.append(row)
    return pd.DataFrame(rows)


def summarize(reports: Sequence[RunReport], by: str = "n") -> pd.DataFrame:
    """Mean metrics per (``by``, arm) over completed runs, plus an "Improv." row per group.

    Improv. rows hold the relative time saving of the pipeline, the speedup factor and
    quality deltas (pipeline minus scratch).
    """
    frame = report_rows(reports)
    ok = frame[frame["status"] == "ok"]
    columns = TIME_COLUMNS + QUALITY_COLUMNS + ["n_super"]
    means = ok.groupby([by, "arm"])[columns].mean().reset_index()
    counts = frame.groupby([by, "arm"]).agg(runs=("status", "size"),
                                            oot=("status", lambda s: int((s == "OOT").sum())),
                                            failed=("status", lambda s: int((s == "failed").sum()))).reset_index()
    means = counts.merge(means, on=[by, "arm"], how="left")

    improv = []
    for key, group in means.groupby(by):
        arms = group.set_index("arm")
        if not {"pipeline", "scratch"} <= set(arms.index):
            continue
        pipe, scratch = arms.loc["pipeline"], arms.loc["scratch"]
        row = {by: key, "arm": IMPROV, "runs": int(pipe["runs"]), "oot": int(pipe["oot"] + scratch["oot"]),
               "failed": int(pipe["failed"] + scratch["failed"])}
        row["total_s"] = (scratch["total_s"] - pipe["total_s"]) / scratch["total_s"] if scratch["total_s"] else np.nan
        row["speedup"] = scratch["total_s"] / pipe["total_s"] if pipe["total_s"] else np.nan
        row["refine_speedup"] = scratch["refine_s"] / pipe["refine_s"] if pipe["refine_s"] else np.nan
        for col in QUALITY_COLUMNS:
            row[col] = pipe[col] - scratch[col]
        improv.append(row)
    summary = pd.concat([means, pd.DataFrame(improv)], ignore_index=True, sort=False)
    order = {"pipeline": 0, "scratch": 1, IMPROV: 2}
    summary = summary.sort_values([by, "arm"], key=lambda s: s.map(order) if s.name == "arm" else s)
    return summary.reset_index(drop=True)


def render_table(summary: pd.DataFrame, title: str, by: str = "n", console: Optional[Console] = None) -> None:
    console = console or Console()
    table = Table(title=title)
    for col in (by, "arm", "Time(s)", "AC", "ARI", "F1 (RCL, PCN)", "N~", "OOT"):
        table.add_column(col)
    for _, row in summary.iterrows():
        if row["arm"] == IMPROV:
            time_cell = f"{100 * row['total_s']:+.1f}% (x{row.get('speedup', np.nan):.2f})"
            quality = [f"{100 * row[c]:+.2f}" for c in ("ac", "ari")]
            f1 = f"{100 * row['f1']:+.2f}"
            n_super = ""
        else:
            time_cell = f"{row['total_s']:.2f}"
            quality = [f"{100 * row[c]:.2f}" for c in ("ac", "ari")]
            f1 = f"{100 * row['f1']:.2f} ({100 * row['recall']:.2f}, {100 * row['precision']:.2f})"
            n_super = f"{row['n_super']:.0f}"
        table.add_row(str(row[by]), row["arm"], time_cell, *quality, f1, n_super, str(int(row["oot"])))
    console.print(table)


def bench_static(scales: Sequence[int], trials: int, ckpt: ModelCheckpoint, cfg: RefinerConfig,
                 settings: Optional[BenchSettings] = None,
                 writer: Optional[ReportWriter] = None) -> pd.DataFrame:
    """Both arms on ``trials`` fresh hardest-setting graphs per scale."""
    settings = settings or BenchSettings()
    tasks = [(n, trial, ckpt, cfg, settings) for n in scales for trial in range(trials)]
    logger.info(f"Static benchmark: scales={list(scales)}, trials={trials}, jobs={settings.jobs}")
    reports = _run_parallel(tasks, _static_trial, settings, "bench-static")
    if writer is not None:
        writer.write_all(reports)
    return summarize(reports, by="n")


def bench_stream(n_total: int, T: int, trials: int, ckpt: ModelCheckpoint, cfg: RefinerConfig,
                 settings: Optional[BenchSettings] = None,
                 writer: Optional[ReportWriter] = None) -> pd.DataFrame:
    """Both arms on every snowball step; the summary is indexed by step with mean N_t and N~_t."""
    settings = settings or BenchSettings()
    tasks = [(n_total, T, trial, ckpt, cfg, settings) for trial in range(trials)]
    logger.info(f"Streaming benchmark: N={n_total}, T={T}, trials={trials}, jobs={settings.jobs}")
    reports = _run_parallel(tasks, _stream_trial, settings, "bench-stream")
    if writer is not None:
        writer.write_all(reports)
    summary = summarize(reports, by="step")
    n_t = report_rows(reports).groupby("step")["n"].mean()
    summary.insert(1, "n_t", summary["step"].map(n_t))
    return summary
