"""MLM pretraining and classification fine-tuning loops."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import closing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Literal, Mapping, Optional, Tuple, TypeVar, Union

import numpy as np

from ..data.corpus import stratified_subsample
from ..errors import CorpusError, TrainingError
from ..evaluation.metrics import ScoreSet, auc, brier, pauc, roc_curve
from ..schemas import ModelConfig, SplitSet, TrainConfig, TrainLogRecord, TrainReport, alpha_label
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import ModelParams, backward, forward_logits, init_params
from .losses import bce_from_scores, mlm_loss
from .tokenizer import DEFAULT_VOCAB, IGNORE_INDEX, TokenBatch, encode_batch, mask_batch


logger = logging.getLogger(__name__)

SHUFFLE_STREAM = 0
MASK_STREAM = 1
DROPOUT_STREAM = 2
VALIDATION_MASK_STREAM = 3

T = TypeVar("T")


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to ``base_lr``, then constant or linearly decayed to zero."""

    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    warmup = cfg.warmup_steps
    if step < warmup:
        return cfg.base_lr * step / warmup
    if cfg.schedule == "linear_decay" and cfg.total_steps > warmup:
        return cfg.base_lr * (cfg.total_steps - step) / (cfg.total_steps - warmup)
    return cfg.base_lr


def loss(head: Literal["mlm", "cls"], outputs: np.ndarray, targets: np.ndarray) -> float:
    """MLM: mean token cross-entropy from logits. cls: mean BCE from scores."""

    if head == "mlm":
        return mlm_loss(np.asarray(outputs), np.asarray(targets))[0]
    if head == "cls":
        return bce_from_scores(outputs, targets)
    raise ValueError(f"unknown head {head!r}")


@dataclass
class OptimizerState:
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Union[ModelParams, Mapping[str, np.ndarray]]) -> "OptimizerState":
        tensors = params.tensors if isinstance(params, ModelParams) else params
        return cls(
            first_moment={name: np.zeros_like(value) for name, value in tensors.items()},
            second_moment={name: np.zeros_like(value) for name, value in tensors.items()},
        )


def decays(name: str, value: np.ndarray) -> bool:
    """Weight matrices and embeddings decay; biases and norm parameters do not."""

    return value.ndim >= 2


def adamw_step(
    params: Union[ModelParams, Dict[str, np.ndarray]],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    cfg: TrainConfig,
) -> Tuple[Union[ModelParams, Dict[str, np.ndarray]], OptimizerState]:
    """One decoupled-weight-decay Adam update, applied in place."""

    tensors = params.tensors if isinstance(params, ModelParams) else params
    for name, grad in grads.items():
        if name not in tensors or tensors[name].shape != grad.shape:
            raise ValueError(f"gradient {name!r} does not match any parameter shape")
        if not np.isfinite(grad).all():
            raise TrainingError(f"non-finite gradient for {name}", step=state.step + 1, parameter=name)

    beta1, beta2 = cfg.betas
    state.step += 1
    correction1 = 1.0 - beta1**state.step
    correction2 = 1.0 - beta2**state.step
    for name, grad in grads.items():
        value = tensors[name]
        m = state.first_moment.setdefault(name, np.zeros_like(value))
        v = state.second_moment.setdefault(name, np.zeros_like(value))
        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        if cfg.weight_decay and decays(name, value):
            value *= 1.0 - lr * cfg.weight_decay
        value -= lr * (m / correction1) / (np.sqrt(v / correction2) + cfg.eps)
    return params, state


@dataclass
class _TrainData:
    encoded: TokenBatch
    index: np.ndarray
    labels: Optional[np.ndarray] = None


def _prepare(cfg: TrainConfig, data: SplitSet, max_len: int) -> _TrainData:
    if not data.train:
        raise CorpusError("training split is empty")
    if cfg.task == "mlm":
        texts = [record.text for record in data.train]
        return _TrainData(encoded=encode_batch(texts, max_len), index=np.arange(len(texts)))
    records = stratified_subsample(data.train, cfg.label_fraction, cfg.seed)
    counts = np.array([record.count for record in records], dtype=np.int64)
    labels = np.array([record.label for record in records], dtype=np.float64)
    logger.info(
        "fine-tuning on %d unique texts (%d instances, label fraction %.2f)",
        len(records), int(counts.sum()), cfg.label_fraction,
    )
    return _TrainData(
        encoded=encode_batch([record.text for record in records], max_len),
        index=np.repeat(np.arange(len(records)), counts),
        labels=labels,
    )


def _batches(cfg: TrainConfig, prepared: _TrainData) -> Iterator[Tuple[TokenBatch, Optional[np.ndarray]]]:
    """Endless stream of batches; each epoch is a fresh seeded permutation."""

    mask_rng = np.random.default_rng([cfg.seed, MASK_STREAM])
    epoch = 0
    while True:
        order = prepared.index[np.random.default_rng([cfg.seed, SHUFFLE_STREAM, epoch]).permutation(prepared.index.size)]
        for start in range(0, order.size, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            batch = prepared.encoded.take(rows)
            if cfg.task == "mlm":
                batch = mask_batch(
                    batch, mask_rng, cfg.mask_select_rate, cfg.mask_token_frac, cfg.mask_random_frac
                )
                yield batch, None
            else:
                yield batch, prepared.labels[rows]
        epoch += 1


def _prefetched(items: Iterator[T], enabled: bool) -> Iterator[T]:
    """Assemble the next batch on a worker thread while the current one trains."""

    if not enabled:
        yield from items
        return
    with ThreadPoolExecutor(max_workers=1, thread_name_prefix="batch-prefetch") as pool:
        pending = pool.submit(next, items)
        while True:
            item = pending.result()
            pending = pool.submit(next, items)
            yield item


def _validate_cls(params: ModelParams, cfg: TrainConfig, data: SplitSet) -> Dict[str, float]:
    from ..evaluation.scores import score_texts  # deferred: evaluation.scores imports the model package

    records = [record for record in data.validation if record.label is not None]
    if not records:
        return {}
    scores = score_texts(params, [record.text for record in records], cfg.eval_batch_size)
    labels = np.array([record.label for record in records], dtype=np.int64)
    metrics = {
        "val_loss": bce_from_scores(scores, labels),
        "val_brier": brier(ScoreSet(labels, scores)),
    }
    if 0 < labels.sum() < labels.size:
        roc = roc_curve(ScoreSet(labels, scores))
        metrics["val_auc"] = auc(roc)
        for alpha in cfg.alphas:
            metrics[f"val_pauc@{alpha_label(alpha)}"] = pauc(roc, alpha)
    return metrics


def _validate_mlm(params: ModelParams, cfg: TrainConfig, data: SplitSet) -> Dict[str, float]:
    texts = [record.text for record in data.validation]
    if not texts:
        return {}
    rng = np.random.default_rng([cfg.seed, VALIDATION_MASK_STREAM])
    total_loss = 0.0
    correct = 0
    selected = 0
    for start in range(0, len(texts), cfg.eval_batch_size):
        batch = mask_batch(
            encode_batch(texts[start : start + cfg.eval_batch_size], params.config.max_len),
            rng, cfg.mask_select_rate, cfg.mask_token_frac, cfg.mask_random_frac,
        )
        logits = forward_logits(params, batch, "mlm")
        chosen = batch.mlm_labels != IGNORE_INDEX
        n = int(chosen.sum())
        if n == 0:
            continue
        total_loss += mlm_loss(logits, batch.mlm_labels)[0] * n
        correct += int((logits[chosen].argmax(axis=-1) == batch.mlm_labels[chosen]).sum())
        selected += n
    if selected == 0:
        return {}
    return {"val_loss": total_loss / selected, "val_accuracy": correct / selected}


def validate(params: ModelParams, cfg: TrainConfig, data: SplitSet) -> Dict[str, float]:
    if cfg.task == "cls":
        return _validate_cls(params, cfg, data)
    return _validate_mlm(params, cfg, data)


def step_checkpoint_path(out: Path, step: int) -> Path:
    return out.with_name(f"{out.stem}.step{step}{out.suffix}")


def report_path(out: Path) -> Path:
    return out.with_name(f"{out.stem}.report.jsonl")


def _initial_params(cfg: TrainConfig, model_config: Optional[ModelConfig]) -> ModelParams:
    if cfg.init_from == "random":
        return init_params(model_config or ModelConfig.preset("tiny"), cfg.seed)
    checkpoint = load_checkpoint(cfg.init_from)
    if model_config is not None and model_config != checkpoint.params.config:
        raise ValueError(f"checkpoint {cfg.init_from} was trained with a different model configuration")
    if checkpoint.vocab != DEFAULT_VOCAB:
        raise ValueError(f"checkpoint {cfg.init_from} uses a different vocabulary than the training encoder")
    logger.info("initialising from %s (step %s)", cfg.init_from, checkpoint.metadata.get("step"))
    return checkpoint.params


def run_training(
    cfg: TrainConfig,
    data: SplitSet,
    out: str | Path,
    model_config: Optional[ModelConfig] = None,
) -> TrainReport:
    """Run ``cfg.total_steps`` updates and write checkpoints plus a JSON-lines report."""

    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    params = _initial_params(cfg, model_config)
    prepared = _prepare(cfg, data, params.config.max_len)
    state = OptimizerState.zeros_like(params)
    dropout_rng = np.random.default_rng([cfg.seed, DROPOUT_STREAM]) if params.config.dropout > 0 else None
    checkpoint_every = max(1, int(round(cfg.checkpoint_every_frac * cfg.total_steps)))
    log_every = cfg.log_interval

    records: List[TrainLogRecord] = []
    intermediate: List[Path] = []
    window: List[float] = []
    initial_loss: Optional[float] = None
    final_loss = float("nan")

    def metadata(step: int) -> Dict[str, object]:
        return {
            "task": cfg.task,
            "step": step,
            "seed": cfg.seed,
            "total_steps": cfg.total_steps,
            "init_from": cfg.init_from,
            "label_fraction": cfg.label_fraction,
        }

    report_file = report_path(out)
    with report_file.open("w", encoding="utf-8") as report, closing(
        _prefetched(_batches(cfg, prepared), enabled=not cfg.deterministic)
    ) as batches:
        for step in range(1, cfg.total_steps + 1):
            batch, targets = next(batches)
            value, grads = backward(params, batch, targets, cfg.task, rng=dropout_rng)
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss at step {step}", step=step)
            if initial_loss is None:
                initial_loss = value
            lr = lr_at(step, cfg)
            adamw_step(params, grads, state, lr, cfg)
            window.append(value)

            at_checkpoint = step % checkpoint_every == 0 or step == cfg.total_steps
            if step % log_every == 0 or at_checkpoint:
                final_loss = float(np.mean(window))
                metrics = validate(params, cfg, data) if at_checkpoint else {}
                record = TrainLogRecord(step=step, lr=lr, loss=final_loss, metrics=metrics)
                records.append(record)
                report.write(json.dumps(record.model_dump(mode="json"), sort_keys=True) + "\n")
                report.flush()
                logger.info(
                    "%s step %d/%d lr=%.3g loss=%.4f %s",
                    cfg.task, step, cfg.total_steps, lr, final_loss,
                    " ".join(f"{k}={v:.4f}" for k, v in sorted(metrics.items())),
                )
                window = []
            if at_checkpoint and step < cfg.total_steps:
                intermediate.append(save_checkpoint(step_checkpoint_path(out, step), params, metadata(step)))

    save_checkpoint(out, params, metadata(cfg.total_steps))
    return TrainReport(
        task=cfg.task,
        total_steps=cfg.total_steps,
        initial_loss=float(initial_loss if initial_loss is not None else final_loss),
        final_loss=final_loss,
        checkpoint=out,
        intermediate_checkpoints=intermediate,
        report_path=report_file,
        records=records,
    )
