import json

import pytest

from exfil_bert import engine
from exfil_bert.config import ExfilBertSettings
from exfil_bert.engine import PlanEngine, digest
from exfil_bert.errors import TrainingError
from exfil_bert.schemas import ExperimentPlan


def _plan(output_dir, **overrides):
    values = {
        "corpus": {"synth": {"n_benign": 120, "n_malicious": 80, "max_group_size": 3, "seed": 0}},
        "model_preset": "tiny",
        "model_overrides": {"max_len": 32},
        "pretrain_budgets": [4],
        "finetune_steps": 4,
        "label_fractions": [1.0],
        "alphas": [0.1, 0.01],
        "seeds": [0],
        "batch_size": 8,
        "deterministic": True,
        "output_dir": str(output_dir),
    }
    values.update(overrides)
    return ExperimentPlan.model_validate(values)


@pytest.fixture
def settings():
    return ExfilBertSettings(psl_path=None, score_batch_size=64)


def test_digest_ignores_key_order():
    assert digest({"a": 1, "b": [1, 2]}) == digest({"b": [1, 2], "a": 1})
    assert digest({"a": 1}) != digest({"a": 2})


def test_plan_runs_every_cell_and_writes_reports(tmp_path, settings):
    plan = _plan(tmp_path / "run")
    result = PlanEngine(settings=settings).run(plan)

    assert result.ok
    assert result.cells == 2
    assert result.trained == 5
    assert set(result.reports) == {"low_fpr", "pretraining_deltas", "budget_scaling", "confusion"}
    for model in ("random", "pt-4"):
        cell = plan.output_dir / "cells" / model / "frac1" / "seed0"
        assert (cell / "model.ckpt").exists()
        assert (cell / "eval" / "validation_scores.jsonl").exists()
        assert (cell / "eval" / "test_scores.jsonl").exists()
        assert (cell / "eval" / "metrics.json").exists()
    random_config = json.loads((plan.output_dir / "cells" / "random" / "frac1" / "seed0" / "config.json").read_text())
    assert random_config["train_config"]["total_steps"] == plan.equal_update_steps == 8
    deltas = json.loads(result.reports["pretraining_deltas"].read_text())
    assert len(deltas) == 1 and "delta_pauc@1%" in deltas[0]
    assert (plan.output_dir / "stats" / "train_vs_test.csv").exists()


def test_rerunning_a_finished_plan_skips_everything(tmp_path, settings):
    plan = _plan(tmp_path / "run")
    PlanEngine(settings=settings).run(plan)
    again = PlanEngine(settings=settings).run(plan)
    assert again.trained == 0
    assert again.skipped == 5
    assert again.ok


def test_plans_are_reproducible_across_directories(tmp_path, settings):
    first = _plan(tmp_path / "a")
    second = _plan(tmp_path / "b")
    PlanEngine(settings=settings).run(first)
    PlanEngine(settings=settings).run(second)
    for model in ("random", "pt-4"):
        relative = f"cells/{model}/frac1/seed0/eval/metrics.json"
        assert (first.output_dir / relative).read_bytes() == (second.output_dir / relative).read_bytes()


def test_failed_pretraining_is_isolated(tmp_path, settings, monkeypatch):
    real = engine.run_training

    def failing(cfg, *args, **kwargs):
        if cfg.task == "mlm":
            raise TrainingError("non-finite loss at step 1", step=1)
        return real(cfg, *args, **kwargs)

    monkeypatch.setattr(engine, "run_training", failing)
    result = PlanEngine(settings=settings).run(_plan(tmp_path / "run"))

    assert not result.ok
    failed = {failure["cell"] for failure in result.failures}
    assert failed == {"pt-4/seed0", "pt-4/frac1/seed0"}
    assert (tmp_path / "run" / "cells" / "random" / "frac1" / "seed0" / "eval" / "metrics.json").exists()


def test_external_pretraining_corpus_excludes_held_out_texts(tmp_path, settings):
    corpus = tmp_path / "external.tsv"
    corpus.write_text("".join(f"host{i}.example\t\t1\n" for i in range(30)), encoding="utf-8")
    plan = _plan(tmp_path / "run", pretrain_corpus={"path": str(corpus)})
    result = PlanEngine(settings=settings).run(plan)
    assert result.ok
    assert (plan.output_dir / "pretrain_data" / "train.tsv").exists()
    assert (plan.output_dir / "stats" / "pretrain_vs_test.csv").exists()


def test_random_baseline_is_matched_to_the_smallest_budget(tmp_path, settings):
    plan = _plan(tmp_path / "run", pretrain_budgets=[6, 4])
    assert plan.reference_budget == 4
    assert plan.equal_update_steps == 4 + plan.finetune_steps

    result = PlanEngine(settings=settings).run(plan)
    assert result.ok
    random_config = json.loads((plan.output_dir / "cells" / "random" / "frac1" / "seed0" / "config.json").read_text())
    assert random_config["train_config"]["total_steps"] == 8
    deltas = json.loads(result.reports["pretraining_deltas"].read_text())
    assert [row["model"] for row in deltas] == ["pt-4"]
