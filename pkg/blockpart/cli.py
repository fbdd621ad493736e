"""
Command-line entry point: generate -> pretrain -> partition/stream -> eval -> bench.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from rich.console import Console

from .bench import BenchSettings, bench_static, bench_stream, render_table
from .config import SuiteConfig, load_config
from .errors import BlockpartError, InputError, StreamAborted
from .graph import Graph, Partition
from .infer import generalize_and_refine, stream_partition
from .io import read_edge_list, read_partition, write_edge_list, write_partition
from .log import configure_logging
from .metrics import evaluate
from .model import load_checkpoint, save_checkpoint
from .pretrain import pretrain, write_loss_trace
from .refine import REFINER_KINDS, RefinerConfig
from .report import ReportWriter
from .sbmgen import (
    GeneratorParams,
    generate,
    generate_corpus,
    read_stream_manifest,
    snowball_split,
    write_stream_steps,
)
from .seeds import derive_seed

logger = logging.getLogger(__name__)


def _write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2)


def _run_seed(args, config: SuiteConfig) -> int:
    return args.seed if args.seed is not None else config.run_seed


def _refiner(args, config: SuiteConfig, seed: int) -> RefinerConfig:
    cfg = config.refiner.to_config(derive_seed(seed, "refiner"))
    kind = getattr(args, "refiner", None) or cfg.kind
    template = getattr(args, "refiner_cmd", None) or cfg.external_cmd_template
    return RefinerConfig(kind=kind, max_sweeps=cfg.max_sweeps, min_gain=cfg.min_gain, seed=cfg.seed,
                         external_cmd_template=template, timeout_s=cfg.timeout_s)


def _checkpoint_path(args, config: SuiteConfig) -> Path:
    return Path(args.ckpt or config.paths.checkpoint)


def _threshold(args, config: SuiteConfig) -> float:
    return args.threshold if args.threshold is not None else config.bench.threshold


def cmd_generate(args, config: SuiteConfig) -> int:
    seed = _run_seed(args, config)
    out_dir = Path(args.out_dir or config.paths.data_dir)
    if args.corpus:
        corpus = generate_corpus(args.corpus, config.generator.to_ranges(), derive_seed(seed, "corpus"))
        for i, (g, truth, params) in enumerate(corpus):
            write_edge_list(g, out_dir / f"graph_{i:03d}.tsv", one_based=args.one_based)
            write_partition(truth, out_dir / f"truth_{i:03d}.tsv", one_based=args.one_based)
            _write_json(params.to_dict(), out_dir / f"params_{i:03d}.json")
        logger.info(f"Wrote corpus of {len(corpus)} graphs to {out_dir}")
        return 0

    gen_seed = derive_seed(seed, "generator")
    if args.hardest:
        params = GeneratorParams.hardest(args.n, seed=gen_seed,
                                         avg_degree=args.avg_degree if args.avg_degree is not None else 82.0)
    else:
        params = GeneratorParams(n=args.n, k_target=args.k, within_between_ratio=args.ratio,
                                 size_heterogeneity=args.heterogeneity,
                                 avg_degree=args.avg_degree if args.avg_degree is not None else 82.0,
                                 degree_exponent=args.degree_exponent, seed=gen_seed)
    g, truth = generate(params)
    write_edge_list(g, out_dir / f"{args.name}.tsv", one_based=args.one_based)
    write_partition(truth, out_dir / f"{args.name}_truth.tsv", one_based=args.one_based)
    _write_json({**params.to_dict(), "run_seed": seed}, out_dir / f"{args.name}_params.json")
    logger.info(f"Wrote {args.name} (N={g.n}, |E|={g.num_edges}, K={truth.k}) to {out_dir}")
    return 0


def _read_graph_and_truth(graph_path, truth_path, one_based: bool) -> Tuple[Graph, Optional[Partition]]:
    """The truth file fixes N when given, so trailing isolated nodes survive the edge list."""
    if truth_path is None:
        return read_edge_list(graph_path, one_based=one_based), None
    truth = read_partition(truth_path, one_based=one_based)
    return read_edge_list(graph_path, one_based=one_based, n_hint=truth.n), truth


def cmd_stream_split(args, config: SuiteConfig) -> int:
    seed = _run_seed(args, config)
    g, truth = _read_graph_and_truth(args.graph, args.truth, args.one_based)
    _, steps = snowball_split(g, truth, args.steps, derive_seed(seed, "snowball"))
    manifest = write_stream_steps(steps, args.out_dir, one_based=args.one_based)
    logger.info(f"Wrote {len(steps)} snowball steps, manifest {manifest}")
    return 0


def _read_corpus(corpus_dir: Path, one_based: bool) -> List[Tuple[Graph, Partition]]:
    graphs = sorted(corpus_dir.glob("graph_*.tsv"))
    if not graphs:
        raise InputError(f"no graph_*.tsv files in {corpus_dir}")
    corpus = []
    for graph_path in graphs:
        truth_path = graph_path.with_name(graph_path.name.replace("graph_", "truth_", 1))
        corpus.append(_read_graph_and_truth(graph_path, truth_path, one_based))
    return corpus


def _calibration_graphs(config: SuiteConfig, seed: int) -> Optional[List[Tuple[Graph, Partition]]]:
    train = config.train
    if train.calibration_graphs == 0:
        return None
    logger.info(f"Generating {train.calibration_graphs} hardest-setting calibration graphs at N={train.calibration_n}")
    graphs = []
    for i in range(train.calibration_graphs):
        params = GeneratorParams.hardest(train.calibration_n, seed=derive_seed(seed, "calibration", i),
                                         avg_degree=train.calibration_avg_degree)
        graphs.append(generate(params))
    return graphs


def cmd_pretrain(args, config: SuiteConfig) -> int:
    seed = _run_seed(args, config)
    if args.corpus_dir:
        corpus = _read_corpus(Path(args.corpus_dir), args.one_based)
    else:
        m = args.corpus_size or config.generator.corpus_size
        logger.info(f"Generating a pre-training corpus of {m} graphs")
        corpus = [(g, truth) for g, truth, _ in
                  generate_corpus(m, config.generator.to_ranges(), derive_seed(seed, "corpus"))]
    model_cfg = config.model.to_config(derive_seed(seed, "projection"))
    hyper = config.train.to_hyper(derive_seed(seed, "train"))
    if args.epochs is not None:
        hyper = replace(hyper, epochs=args.epochs)
    ckpt, trace = pretrain(corpus, model_cfg, hyper, jobs=args.jobs or config.train.jobs,
                           progress=not args.quiet, calibration=_calibration_graphs(config, seed),
                           target=config.train.to_target(config.bench.threshold))
    out = _checkpoint_path(args, config)
    save_checkpoint(ckpt, out)
    write_loss_trace(trace, Path(args.loss_trace) if args.loss_trace else out.with_suffix(".loss.csv"))
    return 0


def cmd_partition(args, config: SuiteConfig) -> int:
    seed = _run_seed(args, config)
    g, truth = _read_graph_and_truth(args.graph, args.truth, args.one_based)
    ckpt = load_checkpoint(_checkpoint_path(args, config))
    part, report = generalize_and_refine(g, ckpt, _refiner(args, config, seed), threshold=_threshold(args, config),
                                         truth=truth, precision=args.precision or config.model.precision,
                                         run_seed=seed, graph_id=Path(args.graph).stem)
    write_partition(part, args.out_partition, one_based=args.one_based)
    if args.report:
        ReportWriter(args.report).write(report)
    Console().print_json(json.dumps(report.to_dict()))
    return 0


def cmd_stream(args, config: SuiteConfig) -> int:
    seed = _run_seed(args, config)
    steps = read_stream_manifest(args.manifest)
    ckpt = load_checkpoint(_checkpoint_path(args, config))
    out_dir = Path(args.out_dir)
    writer = ReportWriter(args.report or out_dir / "reports.jsonl", truncate=True)
    try:
        results = stream_partition(steps, ckpt, _refiner(args, config, seed), threshold=_threshold(args, config),
                                   precision=args.precision or config.model.precision, run_seed=seed)
    except StreamAborted as e:
        results = e.partial
        logger.error(f"{e}; keeping {len(results)} completed steps")
        _write_stream_results(results, steps, out_dir, writer, args.one_based)
        return 2
    _write_stream_results(results, steps, out_dir, writer, args.one_based)
    return 0


def _write_stream_results(results, steps, out_dir: Path, writer: ReportWriter, one_based: bool) -> None:
    for (part, report), step in zip(results, steps):
        write_partition(part, out_dir / f"partition_{step.t:02d}.tsv", one_based=one_based)
        writer.write(report)


def cmd_eval(args, config: SuiteConfig) -> int:
    truth = read_partition(args.truth, one_based=args.one_based)
    graph = read_edge_list(args.graph, one_based=args.one_based, n_hint=truth.n) if args.graph else None
    pred = read_partition(args.pred, n=truth.n, one_based=args.one_based)
    print(json.dumps(evaluate(pred, truth, graph).to_dict()))
    return 0


def _bench_settings(args, config: SuiteConfig) -> BenchSettings:
    bench = config.bench
    return BenchSettings(run_seed=_run_seed(args, config), threshold=_threshold(args, config),
                         precision=args.precision or config.model.precision,
                         avg_degree=args.avg_degree if args.avg_degree is not None else bench.avg_degree,
                         oot_s=bench.oot_s, jobs=args.jobs or bench.jobs, progress=not args.quiet)


def _bench_writer(args, config: SuiteConfig, name: str) -> ReportWriter:
    return ReportWriter(args.report or Path(config.paths.report_dir) / name, truncate=True)


def cmd_bench_static(args, config: SuiteConfig) -> int:
    settings = _bench_settings(args, config)
    ckpt = load_checkpoint(_checkpoint_path(args, config))
    summary = bench_static(args.scales or config.bench.scales, args.trials or config.bench.trials, ckpt,
                           _refiner(args, config, settings.run_seed), settings,
                           _bench_writer(args, config, "bench_static.jsonl"))
    render_table(summary, "Static GP (hardest setting)", by="n")
    return 0


def cmd_bench_stream(args, config: SuiteConfig) -> int:
    settings = _bench_settings(args, config)
    ckpt = load_checkpoint(_checkpoint_path(args, config))
    summary = bench_stream(args.n or config.bench.stream_n, args.steps or config.bench.stream_steps,
                           args.trials or config.bench.trials, ckpt,
                           _refiner(args, config, settings.run_seed), settings,
                           _bench_writer(args, config, "bench_stream.jsonl"))
    render_table(summary, "Streaming GP (snowball)", by="step")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockpart", description="Pre-trained graph partitioning with refinement")
    parser.add_argument("--config", default=None, help="suite configuration JSON (default: config/blockpart_config.json)")
    parser.add_argument("--log-level", default="INFO", help="log level (default: INFO)")
    parser.add_argument("--log-file", default=None, help="also write plain-text logs here")
    parser.add_argument("--seed", type=int, default=None, help="run seed (default: config run_seed)")
    parser.add_argument("--one-based", action=argparse.BooleanOptionalAction, default=True,
                        help="node ids in TSV files start at 1 (default: on)")
    parser.add_argument("--quiet", action="store_true", help="hide progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate an SBM graph with ground truth, or a pre-training corpus")
    p.add_argument("--n", type=int, default=10000)
    p.add_argument("--k", type=int, default=None, help="block count (default: round(n^0.35))")
    p.add_argument("--ratio", type=float, default=2.5, help="within/between edge ratio (default: 2.5)")
    p.add_argument("--heterogeneity", type=float, default=3.0, help="max/min block size ratio (default: 3)")
    p.add_argument("--avg-degree", type=float, default=None, help="average degree (default: 82)")
    p.add_argument("--degree-exponent", type=float, default=2.1)
    p.add_argument("--hardest", action="store_true", help="use the hardest benchmark setting")
    p.add_argument("--corpus", type=int, default=None, help="write a corpus of this many sampled graphs instead")
    p.add_argument("--name", default="graph")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("stream-split", help="split a graph into snowball steps")
    p.add_argument("--graph", required=True)
    p.add_argument("--truth", default=None)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_stream_split)

    p = sub.add_parser("pretrain", help="pre-train the model on small generated graphs")
    p.add_argument("--corpus-dir", default=None, help="directory of graph_*.tsv / truth_*.tsv (default: generate)")
    p.add_argument("--corpus-size", type=int, default=None)
    p.add_argument("--out-ckpt", dest="ckpt", default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--loss-trace", default=None, help="loss trace CSV (default: next to the checkpoint)")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=cmd_pretrain)

    for name, func, help_text in (("partition", cmd_partition, "partition one graph"),
                                  ("stream", cmd_stream, "partition every step of a snowball manifest"),
                                  ("bench-static", cmd_bench_static, "static benchmark at the hardest setting"),
                                  ("bench-stream", cmd_bench_stream, "snowball streaming benchmark")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--ckpt", default=None, help="checkpoint path (default: config paths.checkpoint)")
        p.add_argument("--refiner", choices=REFINER_KINDS, default=None)
        p.add_argument("--refiner-cmd", default=None, help="external refiner template with {graph} {init} {out}")
        p.add_argument("--threshold", type=float, default=None, help="edge score threshold (default: bench.threshold)")
        p.add_argument("--precision", choices=("float64", "float32"), default=None)
        p.add_argument("--report", default=None, help="JSON-lines report path")
        p.set_defaults(func=func)
        if name == "partition":
            p.add_argument("--graph", required=True)
            p.add_argument("--truth", default=None)
            p.add_argument("--out-partition", required=True)
        elif name == "stream":
            p.add_argument("--manifest", required=True)
            p.add_argument("--out-dir", required=True)
        else:
            p.add_argument("--trials", type=int, default=None)
            p.add_argument("--jobs", type=int, default=None)
            p.add_argument("--avg-degree", type=float, default=None)
            if name == "bench-static":
                p.add_argument("--scales", type=int, nargs="+", default=None)
            else:
                p.add_argument("--n", type=int, default=None)
                p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("eval", help="score a predicted partition against the truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--graph", default=None, help="adds modularity to the metrics")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level, args.log_file)
    try:
        config = load_config(args.config)
        logger.info(f"blockpart {args.command} (run seed {_run_seed(args, config)})")
        return args.func(args, config)
    except BlockpartError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
