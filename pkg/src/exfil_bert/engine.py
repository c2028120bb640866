"""LangGraph orchestrator for experiment plans."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, TypedDict

from langgraph.graph import END, StateGraph
from pydantic import BaseModel, Field

from . import __version__
from .config import ExfilBertSettings, get_settings
from .data.corpus import NormalizationCounters, dedup, read_corpus, read_split_set, split_corpus, write_split_set
from .data.stats import compare_corpora, report_rows
from .data.suffixes import SuffixRules
from .data.synth import gen_corpus, write_synth_corpus
from .evaluation.metrics import evaluate_split_pair, read_metrics, write_metrics
from .evaluation.reports import RANDOM_MODEL, CellResult, pretrained_name, render_text, write_all_reports, write_report
from .evaluation.scores import score_records, write_scores
from .model.checkpoint import load_checkpoint
from .model.train import run_training
from .schemas import CorpusSource, ExperimentPlan, SplitSet, SubdomainRecord, TrainConfig


logger = logging.getLogger(__name__)

MARKER = "done.json"
CHECKPOINT = "model.ckpt"
SPLIT_FILES = ("train.tsv", "validation.tsv", "test.tsv")


def digest(payload: Any) -> str:
    """Content hash of a JSON-serialisable payload."""

    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _files_digest(directory: Path, names: Tuple[str, ...] = SPLIT_FILES) -> str:
    sha = hashlib.sha256()
    for name in names:
        sha.update(name.encode("utf-8"))
        sha.update((directory / name).read_bytes())
    return sha.hexdigest()


def _is_done(directory: Path, content_hash: str) -> bool:
    marker = directory / MARKER
    if not marker.exists():
        return False
    try:
        return json.loads(marker.read_text(encoding="utf-8")).get("hash") == content_hash
    except json.JSONDecodeError:
        return False


def _mark_done(directory: Path, content_hash: str) -> None:
    (directory / MARKER).write_text(json.dumps({"hash": content_hash}, sort_keys=True) + "\n", encoding="utf-8")


def _freeze_config(directory: Path, payload: Dict[str, Any]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    frozen = {**payload, "version": __version__}
    (directory / "config.json").write_text(json.dumps(frozen, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


@dataclass
class RunArtifact:
    name: str
    directory: Path
    content_hash: str

    @property
    def checkpoint(self) -> Path:
        return self.directory / CHECKPOINT


@dataclass
class FinetuneCell:
    model_name: str
    pretrain_steps: Optional[int]
    fraction: float
    seed: int
    run: RunArtifact


class PlanResult(BaseModel):
    output_dir: Path
    trained: int = 0
    skipped: int = 0
    cells: int = 0
    failures: List[Dict[str, str]] = Field(default_factory=list)
    reports: Dict[str, Path] = Field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


class PlanState(TypedDict, total=False):
    plan: ExperimentPlan
    splits: SplitSet
    data_hash: str
    pretrain_splits: SplitSet
    pretrain_hash: str
    pretrained: Dict[Tuple[int, int], RunArtifact]
    finetuned: List[FinetuneCell]
    results: List[CellResult]
    counts: Dict[str, int]
    failures: List[Dict[str, str]]
    reports: Dict[str, Path]


class PlanEngine:
    def __init__(self, *, settings: ExfilBertSettings | None = None) -> None:
        self.settings = settings or get_settings()
        self._app = self._build_graph()

    def _build_graph(self):
        graph: StateGraph[PlanState] = StateGraph(PlanState)
        graph.add_node("prepare", self._prepare)
        graph.add_node("stats", self._stats)
        graph.add_node("pretrain", self._pretrain)
        graph.add_node("finetune", self._finetune)
        graph.add_node("evaluate", self._evaluate)
        graph.add_node("report", self._report)

        graph.set_entry_point("prepare")
        graph.add_edge("prepare", "stats")
        graph.add_edge("stats", "pretrain")
        graph.add_edge("pretrain", "finetune")
        graph.add_edge("finetune", "evaluate")
        graph.add_edge("evaluate", "report")
        graph.add_edge("report", END)

        return graph.compile()

    def _load_source(self, source: CorpusSource, directory: Path) -> Tuple[List[SubdomainRecord], NormalizationCounters]:
        counters = NormalizationCounters()
        if source.synth is not None:
            records = gen_corpus(source.synth)
            write_synth_corpus(directory / "corpus.tsv", records, source.synth)
            return records, counters
        psl_path = source.psl_path or self.settings.psl_path
        psl = SuffixRules.load(psl_path) if psl_path is not None else None
        return read_corpus(source.path, psl, extract=source.extract, counters=counters), counters

    def _prepare_splits(self, plan: ExperimentPlan, source: CorpusSource, directory: Path) -> Tuple[SplitSet, str]:
        key = digest(
            {
                "source": source.model_dump(mode="json"),
                "ratios": list(plan.split_ratios),
                "split_seed": plan.split_seed,
            }
        )
        if not _is_done(directory, key):
            directory.mkdir(parents=True, exist_ok=True)
            records, counters = self._load_source(source, directory)
            _, stats = dedup(records, counters)
            splits = split_corpus(records, plan.split_ratios, plan.split_seed)
            write_split_set(directory, splits, stats, counters)
            _mark_done(directory, key)
        else:
            logger.info("skipping data preparation in %s (up to date)", directory)
        return read_split_set(directory), _files_digest(directory)

    def _run_cell(
        self,
        state: PlanState,
        run: RunArtifact,
        work: Callable[[], Any],
        config: Dict[str, Any],
    ) -> bool:
        """Run ``work`` unless the marker matches; record failures instead of raising."""

        counts = state["counts"]
        if _is_done(run.directory, run.content_hash):
            logger.info("skipping %s (up to date)", run.name)
            counts["skipped"] += 1
            return True
        try:
            _freeze_config(run.directory, {**config, "content_hash": run.content_hash})
            work()
        except Exception as exc:  # noqa: BLE001
            logger.exception("cell %s failed", run.name)
            state["failures"].append({"cell": run.name, "error": f"{type(exc).__name__}: {exc}"})
            return False
        _mark_done(run.directory, run.content_hash)
        counts["trained"] += 1
        return True

    def _train_config(self, plan: ExperimentPlan, **fields: Any) -> TrainConfig:
        return TrainConfig(
            batch_size=plan.batch_size,
            base_lr=plan.base_lr,
            weight_decay=plan.weight_decay,
            warmup_frac=plan.warmup_frac,
            schedule=plan.schedule,
            alphas=plan.alphas,
            deterministic=plan.deterministic,
            **fields,
        )

    def _prepare(self, state: PlanState) -> PlanState:
        plan = state["plan"]
        out = plan.output_dir
        out.mkdir(parents=True, exist_ok=True)
        _freeze_config(out, {"plan": plan.model_dump(mode="json")})
        splits, data_hash = self._prepare_splits(plan, plan.corpus, out / "data")
        update: PlanState = {"splits": splits, "data_hash": data_hash}
        if plan.pretrain_corpus is None:
            update.update({"pretrain_splits": splits, "pretrain_hash": data_hash})
            return update

        external, external_hash = self._prepare_splits(plan, plan.pretrain_corpus, out / "pretrain_data")
        held_out = {record.text for record in splits.validation} | {record.text for record in splits.test}
        kept = [record for record in external.train if record.text not in held_out]
        if len(kept) < len(external.train):
            logger.info("dropped %d pretraining texts that occur in held-out splits", len(external.train) - len(kept))
        pretrain_splits = SplitSet(train=kept, validation=external.validation, test=external.test, seed=external.seed)
        update.update({"pretrain_splits": pretrain_splits, "pretrain_hash": digest([external_hash, data_hash])})
        return update

    def _stats(self, state: PlanState) -> PlanState:
        plan = state["plan"]
        directory = plan.output_dir / "stats"
        splits = state["splits"]
        pairs = {"train_vs_test": (splits.train, splits.test, ("train", "test"))}
        if plan.pretrain_corpus is not None:
            pairs["pretrain_vs_test"] = (state["pretrain_splits"].train, splits.test, ("pretrain", "test"))
        for name, (a, b, names) in pairs.items():
            try:
                report = compare_corpora(a, b, names)
            except ValueError as exc:
                logger.warning("skipping corpus statistics %s: %s", name, exc)
                continue
            write_report(directory, name, report_rows(report))
        return {"counts": state["counts"]}

    def _pretrain(self, state: PlanState) -> PlanState:
        plan = state["plan"]
        model_config = plan.model_config_resolved()
        pretrained: Dict[Tuple[int, int], RunArtifact] = {}
        for budget in plan.pretrain_budgets:
            for seed in plan.seeds:
                cfg = self._train_config(plan, task="mlm", total_steps=budget, seed=seed)
                run = RunArtifact(
                    name=f"{pretrained_name(budget)}/seed{seed}",
                    directory=plan.output_dir / "pretrain" / pretrained_name(budget) / f"seed{seed}",
                    content_hash=digest(
                        {
                            "train": cfg.model_dump(mode="json", exclude={"init_from"}),
                            "model": model_config.model_dump(mode="json"),
                            "data": state["pretrain_hash"],
                        }
                    ),
                )
                work = partial(run_training, cfg, state["pretrain_splits"], run.checkpoint, model_config)
                config = {"train_config": cfg.model_dump(mode="json"), "model_config": model_config.model_dump(mode="json")}
                if self._run_cell(state, run, work, config):
                    pretrained[(budget, seed)] = run
        return {"pretrained": pretrained, "counts": state["counts"], "failures": state["failures"]}

    def _finetune(self, state: PlanState) -> PlanState:
        plan = state["plan"]
        model_config = plan.model_config_resolved()
        inits: List[Tuple[str, Optional[int]]] = [(RANDOM_MODEL, None)]
        inits += [(pretrained_name(budget), budget) for budget in plan.pretrain_budgets]
        finetuned: List[FinetuneCell] = []
        for name, budget in inits:
            for fraction in plan.label_fractions:
                for seed in plan.seeds:
                    state["counts"]["cells"] += 1
                    cell_name = f"{name}/frac{fraction:g}/seed{seed}"
                    upstream = None if budget is None else state["pretrained"].get((budget, seed))
                    if budget is not None and upstream is None:
                        state["failures"].append({"cell": cell_name, "error": "pretraining run failed"})
                        continue
                    cfg = self._train_config(
                        plan,
                        task="cls",
                        total_steps=plan.equal_update_steps if budget is None else plan.finetune_steps,
                        seed=seed,
                        label_fraction=fraction,
                        init_from="random" if upstream is None else str(upstream.checkpoint),
                    )
                    run = RunArtifact(
                        name=cell_name,
                        directory=plan.output_dir / "cells" / name / f"frac{fraction:g}" / f"seed{seed}",
                        content_hash=digest(
                            {
                                "train": cfg.model_dump(mode="json", exclude={"init_from"}),
                                "model": model_config.model_dump(mode="json"),
                                "data": state["data_hash"],
                                "upstream": None if upstream is None else upstream.content_hash,
                            }
                        ),
                    )
                    work = partial(run_training, cfg, state["splits"], run.checkpoint, model_config)
                    config = {
                        "train_config": cfg.model_dump(mode="json"),
                        "model_config": model_config.model_dump(mode="json"),
                    }
                    if self._run_cell(state, run, work, config):
                        finetuned.append(FinetuneCell(name, budget, fraction, seed, run))
        return {"finetuned": finetuned, "counts": state["counts"], "failures": state["failures"]}

    def _evaluate(self, state: PlanState) -> PlanState:
        plan = state["plan"]
        splits = state["splits"]
        validation = [record for record in splits.validation if record.label is not None]
        test = [record for record in splits.test if record.label is not None]
        results: List[CellResult] = []
        for cell in state["finetuned"]:
            directory = cell.run.directory / "eval"
            run = RunArtifact(
                name=f"{cell.run.name}/eval",
                directory=directory,
                content_hash=digest({"cell": cell.run.content_hash, "alphas": plan.alphas}),
            )
            metadata = {
                "model": cell.model_name,
                "fraction": cell.fraction,
                "seed": cell.seed,
                "pretrain_steps": cell.pretrain_steps,
                "cell_hash": cell.run.content_hash,
            }

            def work(cell: FinetuneCell = cell, directory: Path = directory, metadata: Dict[str, Any] = metadata) -> None:
                checkpoint = load_checkpoint(cell.run.checkpoint)
                val_rows = score_records(checkpoint.params, validation, self.settings.score_batch_size, checkpoint.vocab)
                test_rows = score_records(checkpoint.params, test, self.settings.score_batch_size, checkpoint.vocab)
                write_scores(directory / "validation_scores.jsonl", val_rows)
                write_scores(directory / "test_scores.jsonl", test_rows)
                bundle = evaluate_split_pair(val_rows, test_rows, plan.alphas, cell.run.name, metadata)
                write_metrics(directory / "metrics.json", bundle)

            if self._run_cell(state, run, work, {"alphas": plan.alphas, "cell": metadata}):
                results.append(
                    CellResult(
                        model_name=cell.model_name,
                        pretrain_steps=cell.pretrain_steps,
                        fraction=cell.fraction,
                        seed=cell.seed,
                        bundle=read_metrics(directory / "metrics.json"),
                    )
                )
        return {"results": results, "counts": state["counts"], "failures": state["failures"]}

    def _report(self, state: PlanState) -> PlanState:
        plan = state["plan"]
        reports = write_all_reports(plan.output_dir / "reports", state["results"], plan.alphas, plan.reference_budget)
        for name, path in reports.items():
            rows = json.loads(path.read_text(encoding="utf-8"))
            logger.info("%s report:\n%s", name, render_text(rows))
        return {"reports": reports}

    def run(self, plan: ExperimentPlan | Dict[str, Any]) -> PlanResult:
        plan = plan if isinstance(plan, ExperimentPlan) else ExperimentPlan.model_validate(plan)
        state: PlanState = {
            "plan": plan,
            "counts": {"trained": 0, "skipped": 0, "cells": 0},
            "failures": [],
        }
        final_state: PlanState = self._app.invoke(state)
        counts = final_state["counts"]
        result = PlanResult(
            output_dir=plan.output_dir,
            trained=counts["trained"],
            skipped=counts["skipped"],
            cells=counts["cells"],
            failures=final_state["failures"],
            reports=final_state.get("reports", {}),
        )
        if result.failures:
            logger.error("%d cell(s) failed", len(result.failures))
        return result


def run_plan(plan: ExperimentPlan, settings: ExfilBertSettings | None = None) -> PlanResult:
    return PlanEngine(settings=settings).run(plan)
