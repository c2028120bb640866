import json

from exfil_bert.cli import EXIT_CONFIG, EXIT_OK, main
from exfil_bert.data.corpus import read_corpus
from exfil_bert.data.synth import gen_corpus
from exfil_bert.evaluation.scores import ScoreRow, text_hash, write_scores
from exfil_bert.schemas import SynthSpec


def test_synth_and_prepare(tmp_path):
    corpus = tmp_path / "synth.tsv"
    assert main(["synth", "--n-benign", "60", "--n-malicious", "20", "--seed", "3", "--out", str(corpus)]) == EXIT_OK
    assert len(read_corpus(corpus, extract=False)) == 80
    assert json.loads(corpus.with_suffix(".spec.json").read_text())["seed"] == 3

    splits = tmp_path / "splits"
    assert main(["prepare", str(corpus), "--out", str(splits)]) == EXIT_OK
    for name in ("train.tsv", "validation.tsv", "test.tsv", "stats.jsonl"):
        assert (splits / name).exists()
    assert main(["stats", "--splits", str(splits), "--out", str(tmp_path / "stats")]) == EXIT_OK
    assert (tmp_path / "stats" / "corpus_stats.csv").exists()


def test_finetune_score_and_eval(tmp_path):
    corpus = tmp_path / "synth.tsv"
    main(["synth", "--n-benign", "60", "--n-malicious", "40", "--out", str(corpus)])
    splits = tmp_path / "splits"
    main(["prepare", str(corpus), "--out", str(splits)])
    ckpt = tmp_path / "model.ckpt"
    assert main(["finetune", "--data", str(splits), "--steps", "3", "--batch-size", "8", "--deterministic", "--out", str(ckpt)]) == EXIT_OK
    assert ckpt.exists()
    for split in ("validation", "test"):
        assert main(["score", "--checkpoint", str(ckpt), "--data", str(splits), "--split", split, "--out", str(tmp_path / f"{split}.jsonl")]) == EXIT_OK


def test_eval_and_compare(tmp_path):
    records = gen_corpus(SynthSpec(n_benign=40, n_malicious=20, max_group_size=1))
    rows = [ScoreRow(text_hash=text_hash(r.text), y=r.label, s=0.9 if r.label else 0.1 + i / 1000) for i, r in enumerate(records)]
    write_scores(tmp_path / "val.jsonl", rows[:30])
    write_scores(tmp_path / "test.jsonl", rows[30:])
    out = tmp_path / "eval"
    assert main(["eval", "--val", str(tmp_path / "val.jsonl"), "--test", str(tmp_path / "test.jsonl"), "--alphas", "0.1", "0.01", "--out", str(out)]) == EXIT_OK
    assert (out / "metrics.json").exists()
    assert (out / "operating_point_0.01.json").exists()
    metrics = str(out / "metrics.json")
    assert main(["compare", metrics, metrics, "--out", str(tmp_path / "cmp")]) == EXIT_OK
    assert (tmp_path / "cmp" / "comparison.csv").exists()


def test_plan_with_invalid_config_exits_with_config_error(tmp_path):
    config = tmp_path / "plan.yaml"
    config.write_text("corpus: {}\nlabel_fractions: [2.0]\n", encoding="utf-8")
    assert main(["plan", "--config", str(config)]) == EXIT_CONFIG
    config.write_text("- not\n- a mapping\n", encoding="utf-8")
    assert main(["plan", "--config", str(config)]) == EXIT_CONFIG
    assert main(["plan"]) == EXIT_CONFIG


def test_out_of_range_argument_values_exit_with_config_error(tmp_path):
    records = gen_corpus(SynthSpec(n_benign=20, n_malicious=10, max_group_size=1))
    rows = [ScoreRow(text_hash=text_hash(r.text), y=r.label, s=0.8 if r.label else 0.2) for r in records]
    write_scores(tmp_path / "val.jsonl", rows[:15])
    write_scores(tmp_path / "test.jsonl", rows[15:])
    argv = ["eval", "--val", str(tmp_path / "val.jsonl"), "--test", str(tmp_path / "test.jsonl"), "--out", str(tmp_path / "eval")]
    assert main([*argv, "--alphas", "1.5"]) == EXIT_CONFIG
    assert main([*argv, "--alphas", "0.1"]) == EXIT_OK
