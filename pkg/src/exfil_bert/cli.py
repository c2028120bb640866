"""Command line interface for the exfil-bert pipeline."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import yaml
from pydantic import ValidationError

from .config import ExfilBertSettings, configure_logging, get_settings
from .data.corpus import NormalizationCounters, dedup, read_corpus, read_split_set, split_corpus, write_split_set
from .data.stats import compare_corpora, report_rows
from .data.suffixes import SuffixRules
from .data.synth import gen_corpus, write_synth_corpus
from .engine import run_plan
from .errors import ExfilBertError, PlanConfigError
from .evaluation.metrics import compare_runs, evaluate_split_pair, read_metrics, write_metrics
from .evaluation.reports import render_text, write_report
from .evaluation.scores import read_scores, score_records, write_scores
from .model.checkpoint import load_checkpoint
from .model.train import run_training
from .schemas import ExperimentPlan, ModelConfig, SubdomainRecord, SynthSpec, TrainConfig, alpha_label


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_CONFIG = 2


def load_yaml(path: Optional[Path]) -> Dict[str, Any]:
    if path is None:
        return {}
    try:
        with path.open("r", encoding="utf-8") as handle:
            loaded = yaml.safe_load(handle)
    except (OSError, yaml.YAMLError) as exc:
        raise PlanConfigError(f"cannot read config {path}: {exc}") from exc
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise PlanConfigError(f"config {path} must contain a mapping at the top level")
    return loaded


def _set(values: Dict[str, Any], **overrides: Any) -> Dict[str, Any]:
    """CLI values win over config-file values when given."""

    return {**values, **{key: value for key, value in overrides.items() if value is not None}}


def _model_config(preset: str, overrides: Dict[str, Any]) -> ModelConfig:
    try:
        return ModelConfig.preset(preset, **overrides)
    except ValidationError:
        raise
    except ValueError as exc:
        raise PlanConfigError(str(exc)) from exc


def _psl(path: Optional[Path], settings: ExfilBertSettings) -> Optional[SuffixRules]:
    path = path or settings.psl_path
    return SuffixRules.load(path) if path is not None else None


def _print_json(payload: Any) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def cmd_prepare(args: argparse.Namespace, settings: ExfilBertSettings) -> int:
    psl = _psl(args.psl, settings)
    counters = NormalizationCounters()
    records: List[SubdomainRecord] = []
    for path in args.input:
        records.extend(read_corpus(path, psl, extract=args.extract, counters=counters))
    _, stats = dedup(records, counters)
    splits = split_corpus(records, tuple(args.ratios), args.seed or 0)
    out = args.out or settings.output_dir / "data"
    write_split_set(out, splits, stats, counters)
    _print_json({"output": out, "duplicates": stats.model_dump(), "normalization": counters.to_json()})
    return EXIT_OK


def cmd_synth(args: argparse.Namespace, settings: ExfilBertSettings) -> int:
    values = _set(
        load_yaml(args.config),
        n_benign=args.n_benign,
        n_malicious=args.n_malicious,
        malicious_rate=args.malicious_rate,
        encoder=args.encoder,
        seed=args.seed,
    )
    spec = SynthSpec.model_validate(values)
    records = gen_corpus(spec)
    out = args.out or settings.output_dir / "synth.tsv"
    sidecar = write_synth_corpus(out, records, spec)
    _print_json({"output": out, "spec": sidecar, "records": len(records)})
    return EXIT_OK


def cmd_stats(args: argparse.Namespace, settings: ExfilBertSettings) -> int:
    if args.splits is not None:
        splits = read_split_set(args.splits)
        a, b, names = splits.train, splits.test, ("train", "test")
    elif args.a is not None and args.b is not None:
        a = read_corpus(args.a, extract=False)
        b = read_corpus(args.b, extract=False)
        names = ("a", "b")
    else:
        raise PlanConfigError("stats needs either --splits or two corpus files")
    report = compare_corpora(a, b, names)
    rows = report_rows(report)
    out = args.out or settings.output_dir / "stats"
    write_report(out, "corpus_stats", rows)
    print(render_text(rows), end="")
    return EXIT_OK


def _train(args: argparse.Namespace, settings: ExfilBertSettings, task: str) -> int:
    values = load_yaml(args.config)
    model_overrides = values.pop("model", {}) or {}
    preset = values.pop("model_preset", None) or args.model_preset
    values = _set(
        values,
        task=task,
        total_steps=args.steps,
        batch_size=args.batch_size,
        base_lr=args.lr,
        seed=args.seed,
        schedule=args.schedule,
        init_from=str(args.init_from) if args.init_from else None,
        label_fraction=getattr(args, "label_fraction", None),
    )
    values["deterministic"] = bool(values.get("deterministic")) or args.deterministic or settings.deterministic
    cfg = TrainConfig.model_validate(values)
    if cfg.init_from == "random":
        model_config: Optional[ModelConfig] = _model_config(preset, {"max_len": settings.max_len, **model_overrides})
    else:
        model_config = None
    out = args.out or settings.output_dir / f"{task}.ckpt"
    report = run_training(cfg, read_split_set(args.data), out, model_config)
    _print_json(report.model_dump(mode="json", exclude={"records"}))
    return EXIT_OK


def cmd_pretrain(args: argparse.Namespace, settings: ExfilBertSettings) -> int:
    return _train(args, settings, "mlm")


def cmd_finetune(args: argparse.Namespace, settings: ExfilBertSettings) -> int:
    return _train(args, settings, "cls")


def cmd_score(args: argparse.Namespace, settings: ExfilBertSettings) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    if args.input is not None:
        records = read_corpus(args.input, extract=False)
    elif args.data is not None:
        records = read_split_set(args.data).split(args.split)
    else:
        raise PlanConfigError("score needs --data or --input")
    labeled = [record for record in records if record.label is not None]
    if len(labeled) < len(records):
        logger.warning("skipping %d unlabeled records", len(records) - len(labeled))
    rows = score_records(checkpoint.params, labeled, settings.score_batch_size, checkpoint.vocab)
    out = args.out or settings.output_dir / f"{args.split}_scores.jsonl"
    write_scores(out, rows)
    _print_json({"output": out, "scored": len(rows)})
    return EXIT_OK


def cmd_eval(args: argparse.Namespace, settings: ExfilBertSettings) -> int:
    bundle = evaluate_split_pair(
        read_scores(args.val), read_scores(args.test), args.alphas, args.name or args.test.stem
    )
    out = args.out or settings.output_dir / "eval"
    write_metrics(out / "metrics.json", bundle)
    for op in bundle.operating_points:
        (out / f"operating_point_{op.alpha:g}.json").write_text(op.model_dump_json(indent=2) + "\n", encoding="utf-8")
    rows = [
        {
            "alpha": alpha_label(outcome.alpha),
            "pauc": bundle.pauc_at(outcome.alpha),
            "tau": outcome.tau,
            "recall": outcome.recall,
            "realized_fpr": outcome.realized_fpr,
            "tp": outcome.counts.tp,
            "fp": outcome.counts.fp,
        }
        for outcome in bundle.outcomes
    ]
    print(render_text(rows), end="")
    print(f"auc={bundle.auc:.4f} brier={bundle.brier:.4f}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace, settings: ExfilBertSettings) -> int:
    table = compare_runs(read_metrics(args.a), read_metrics(args.b))
    rows = [{"model": table.model_a, "baseline": table.model_b, **table.row()}]
    out = args.out or settings.output_dir / "compare"
    write_report(out, "comparison", rows)
    print(render_text(rows), end="")
    return EXIT_OK


def cmd_plan(args: argparse.Namespace, settings: ExfilBertSettings) -> int:
    values = load_yaml(args.config)
    if not values:
        raise PlanConfigError("plan needs --config pointing at a plan file")
    values = _set(values, output_dir=args.out, seeds=[args.seed] if args.seed is not None else None)
    if args.deterministic or settings.deterministic:
        values["deterministic"] = True
    plan = ExperimentPlan.model_validate(values)
    result = run_plan(plan, settings)
    _print_json(result.model_dump(mode="json"))
    return EXIT_OK if result.ok else EXIT_FAILURES


def cmd_serve(args: argparse.Namespace, settings: ExfilBertSettings) -> int:
    import uvicorn

    from .service import create_app

    if args.checkpoint is not None:
        settings = settings.model_copy(update={"service_checkpoint": args.checkpoint})
    if args.operating_point is not None:
        settings = settings.model_copy(update={"service_operating_point": args.operating_point})
    uvicorn.run(create_app(settings), host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Random seed (split seed for prepare)")
    common.add_argument("--config", type=Path, default=None, help="YAML file with command settings")
    common.add_argument("--deterministic", action="store_true", help="Serialize all work for bit-identical reruns")
    common.add_argument("--out", type=Path, default=None, help="Output file or directory")
    common.add_argument("--log-level", default=None, help="Logging level (default from settings)")

    parser = argparse.ArgumentParser(prog="exfil-bert", description="DNS exfiltration detection with a character-level encoder")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="Normalize, deduplicate and split a labeled corpus")
    p.add_argument("input", type=Path, nargs="+", help="TSV files: name<TAB>label<TAB>count")
    p.add_argument("--psl", type=Path, default=None, help="Public suffix list used for subdomain extraction")
    p.add_argument("--extract", action="store_true", help="Rows are full names; strip domain and suffix")
    p.add_argument("--ratios", type=float, nargs=3, default=[0.8, 0.1, 0.1], metavar=("TRAIN", "VAL", "TEST"))
    p.set_defaults(handler=cmd_prepare)

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic labeled corpus")
    p.add_argument("--n-benign", type=int, default=None)
    p.add_argument("--n-malicious", type=int, default=None)
    p.add_argument("--malicious-rate", type=float, default=None)
    p.add_argument("--encoder", choices=["base32", "hex"], default=None)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("stats", parents=[common], help="Compare two corpora (length, depth, entropy, overlap)")
    p.add_argument("a", type=Path, nargs="?", default=None)
    p.add_argument("b", type=Path, nargs="?", default=None)
    p.add_argument("--splits", type=Path, default=None, help="Split directory: compare train against test")
    p.set_defaults(handler=cmd_stats)

    for name, handler, help_text in (
        ("pretrain", cmd_pretrain, "Masked-language-model pretraining"),
        ("finetune", cmd_finetune, "Classification fine-tuning"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--data", type=Path, required=True, help="Split directory written by prepare")
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--schedule", choices=["constant", "linear_decay"], default=None)
        p.add_argument("--model-preset", choices=["base", "tiny", "custom"], default="tiny")
        p.add_argument("--init-from", type=Path, default=None, help="Checkpoint to start from")
        if name == "finetune":
            p.add_argument("--label-fraction", type=float, default=None)
        p.set_defaults(handler=handler)

    p = sub.add_parser("score", parents=[common], help="Write a score file for one split")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, default=None)
    p.add_argument("--split", choices=["train", "validation", "test"], default="test")
    p.add_argument("--input", type=Path, default=None, help="Labeled TSV to score instead of a split")
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("eval", parents=[common], help="Freeze thresholds on validation scores and apply on test")
    p.add_argument("--val", type=Path, required=True)
    p.add_argument("--test", type=Path, required=True)
    p.add_argument("--alphas", type=float, nargs="+", default=[0.01, 0.001])
    p.add_argument("--name", default=None)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("compare", parents=[common], help="Delta table between two metrics bundles (a - b)")
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("plan", parents=[common], help="Run an experiment plan")
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("serve", parents=[common], help="Serve POST /score over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--operating-point", type=Path, default=None)
    p.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    settings = get_settings()
    configure_logging(args.log_level or settings.log_level)
    handler: Callable[[argparse.Namespace, ExfilBertSettings], int] = args.handler
    try:
        return handler(args, settings)
    except (PlanConfigError, ValidationError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (ExfilBertError, OSError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_FAILURES
    except ValueError as exc:
        logger.error("invalid argument: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover - CLI entry point
    sys.exit(main())
