# src/cli.py

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.config.settings import DisorderParams, RunConfig, load_run_config
from src.core.errors import ConfigError, FastFlowError
from src.core.log import get_logger
from src.evaluation.evaluate import evaluate_iterations
from src.evaluation.report import write_aggregate, write_report
from src.evaluation.synthetic import SyntheticFlowFactory
from src.features.augmentation import augment_dataset
from src.ingest.pcap_reader import pcap_to_records
from src.ingest.trace_reader import group_flows, load_flows, parse_trace, save_flows, with_flow_ids
from src.pipeline import (evaluate_checkpoints, load_models, pipeline_config, run_protocol, save_models,
                          train_models, write_jsonl)
from src.selection.flow_runner import StreamingClassifier, result_record

logger = get_logger("fastflow")

DEFAULT_SYNTH_CLASSES = "streaming,chat,transfer,control"


def _disorder_override(value: Optional[str]) -> Dict[str, Any]:
    if value is None:
        return {}
    if value == "none":
        return {"disorder": None}
    if value == "default":
        return {"disorder": {}}
    try:
        rate = float(value)
    except ValueError:
        raise ConfigError(f"--disorder: expected none, default or a drop rate, got '{value}'")
    return {"disorder": {"drop_rate": rate}}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Флаги > файл конфигурации > значения по умолчанию."""
    overrides: Dict[str, Any] = {}
    for flag in ("seed", "workers", "granularity"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[flag] = value
    paths = {k: getattr(args, k) for k in ("input", "output", "models") if getattr(args, k, None) is not None}
    if paths:
        overrides["paths"] = paths
    overrides.update(_disorder_override(getattr(args, "disorder", None)))
    return load_run_config(args.config, overrides)


def _require(value: Optional[str], flag: str) -> str:
    if not value:
        raise ConfigError(f"{flag} is required for this command")
    return value


def write_run_config(cfg: RunConfig, directory: str) -> Path:
    path = Path(directory) / "run_config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(cfg.snapshot() + "\n", encoding="utf-8")
    return path


def _output_dir(path: str) -> str:
    """Каталог вывода: сам путь, если это каталог, иначе его родитель."""
    p = Path(path)
    return str(p.parent if p.suffix else p)


# --- Команды ---

def cmd_ingest(args: argparse.Namespace, cfg: RunConfig) -> int:
    src = _require(cfg.paths.input, "--input")
    dst = _require(cfg.paths.output, "--output")
    if Path(src).suffix in (".pcap", ".cap"):
        records = pcap_to_records(src, label=args.label, mtu=cfg.trace.mtu)
    else:
        with open(src, "r", encoding="utf-8") as f:
            records = parse_trace(f, mtu=cfg.trace.mtu)
    flows = with_flow_ids(group_flows(records))
    if args.label:
        flows = [f.with_label(args.label) for f in flows]
    n = save_flows(flows, dst)
    write_run_config(cfg, _output_dir(dst))
    print(f"Ingested {n} flows into {dst}")
    return 0


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    dst = _require(cfg.paths.output, "--output")
    factory = SyntheticFlowFactory(seed=cfg.seed, mtu=cfg.trace.mtu)
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    try:
        flows = factory.dataset(classes, args.flows_per_class)
    except ValueError as e:
        raise ConfigError(f"--classes: {e}") from e
    n = save_flows(flows, dst)
    write_run_config(cfg, _output_dir(dst))
    print(f"Generated {n} synthetic flows ({', '.join(classes)}) into {dst}")
    return 0


def cmd_augment(args: argparse.Namespace, cfg: RunConfig) -> int:
    src = _require(cfg.paths.input, "--input")
    dst = _require(cfg.paths.output, "--output")
    flows = load_flows(src, mtu=cfg.trace.mtu)
    if args.mode == "disorder":
        out = augment_dataset(flows, "disorder", cfg.seed, disorder=cfg.disorder or DisorderParams())
    else:
        params = cfg.augment.params("strong_unknown" if args.mode == "strong" else "weak_balance", cfg.trace.mtu)
        out = augment_dataset(flows, args.mode, cfg.seed, params=params)
    n = save_flows(with_flow_ids(out), dst)
    write_run_config(cfg, _output_dir(dst))
    print(f"Wrote {n} augmented flows ({args.mode}) into {dst}")
    return 0


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    src = _require(cfg.paths.input, "--input")
    models_dir = _require(cfg.paths.models, "--models")
    flows = load_flows(src, mtu=cfg.trace.mtu)
    Path(models_dir).mkdir(parents=True, exist_ok=True)
    log_path = Path(models_dir) / "training_log.jsonl"
    log_path.write_text("", encoding="utf-8")
    checkpoints = train_models(flows, cfg, log_sink=lambda g, stats: write_jsonl(log_path, {"granularity": g, **stats}))
    for path in save_models(checkpoints, models_dir):
        print(f"Saved {path}")
    for g, ckpt in checkpoints.items():
        print(f"  {g}: classes {ckpt.model.class_names}, calibrated threshold {ckpt.threshold:.4f}")
    write_run_config(cfg, models_dir)
    return 0


def cmd_evaluate(args: argparse.Namespace, cfg: RunConfig) -> int:
    src = _require(cfg.paths.input, "--input")
    out_dir = _require(cfg.paths.output, "--output")
    flows = load_flows(src, mtu=cfg.trace.mtu)
    if cfg.paths.models:
        checkpoints = load_models(cfg.paths.models, cfg)
        reports = evaluate_checkpoints(checkpoints, cfg, flows)
        for report in reports:
            write_report(report, out_dir, stem=f"report_{report.name}")
            print(f"{report.name}: accuracy {report.accuracy:.2f}%, macro F1 {report.macro_f1:.2f}, "
                  f"packets {report.packets_mean:.2f}")
    else:
        log_path = Path(out_dir) / "training_log.jsonl"
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_path.write_text("", encoding="utf-8")
        results = run_protocol(flows, cfg, baselines=args.baseline or (),
                               log_sink=lambda g, stats: write_jsonl(log_path, {"granularity": g, **stats}))
        runs = []
        for it, reports in results:
            for report in reports:
                write_report(report, out_dir, stem=f"iter{it:02d}_{report.name}")
                runs.append((report.name, report))
        table = evaluate_iterations(runs)
        write_aggregate(table, str(Path(out_dir) / "summary.csv"))
        print(table.to_string(index=False))
    write_run_config(cfg, out_dir)
    return 0


def cmd_classify(args: argparse.Namespace, cfg: RunConfig) -> int:
    models_dir = _require(cfg.paths.models, "--models")
    checkpoints = load_models(models_dir, cfg)
    pcfg = pipeline_config(cfg, checkpoints)
    streamer = StreamingClassifier(checkpoints["packet"].model if "packet" in checkpoints else None,
                                   checkpoints["slot"].model if "slot" in checkpoints else None, pcfg)
    src = cfg.paths.input or "-"
    if src == "-":
        records = parse_trace(sys.stdin, mtu=cfg.trace.mtu)
    else:
        with open(src, "r", encoding="utf-8") as f:
            records = parse_trace(f, mtu=cfg.trace.mtu)
    out = sys.stdout if not cfg.paths.output else open(cfg.paths.output, "w", encoding="utf-8")
    try:
        for rec in sorted(records, key=lambda r: r.timestamp):
            finished = streamer.expire(rec.timestamp)
            done = streamer.push(rec)
            if done is not None:
                finished.append(done)
            for item in finished:
                out.write(json.dumps(result_record(*item), sort_keys=True) + "\n")
        for done in streamer.flush():
            out.write(json.dumps(result_record(*done), sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if cfg.paths.output:
        write_run_config(cfg, _output_dir(cfg.paths.output))
    return 0


# --- Разбор аргументов ---

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON-файл RunConfig (по умолчанию встроенные значения)")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--granularity", choices=["packet", "slot", "both"])
    common.add_argument("--disorder", help="none | default | доля потерь, например 0.1")
    common.add_argument("--input")
    common.add_argument("--output")
    common.add_argument("--models")

    parser = argparse.ArgumentParser(prog="fastflow", description="Early flow classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="pcap или trace → нормализованный trace-файл")
    p.add_argument("--label", help="метка для всех потоков входа")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", parents=[common], help="синтетический набор потоков")
    p.add_argument("--classes", default=DEFAULT_SYNTH_CLASSES)
    p.add_argument("--flows-per-class", type=int, default=100)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", parents=[common], help="strong/weak аугментация или потери (--disorder)")
    p.add_argument("--mode", choices=["strong", "weak", "disorder"], default="strong")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", parents=[common], help="обучение моделей и калибровка порогов")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="оценка моделей или полный протокол")
    p.add_argument("--baseline", type=int, action="append", help="базовая линия на первых N точках данных")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("classify", parents=[common], help="потоковая классификация trace-файла")
    p.set_defaults(func=cmd_classify)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except FastFlowError as e:
        print(f"fastflow: error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"fastflow: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.exception(f"[CLI] Unexpected failure: {e}")
        return 1
