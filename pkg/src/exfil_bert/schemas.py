"""Pydantic schemas used across the exfil-bert pipeline."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789-_."
ALPHABET_SET = frozenset(ALPHABET)

PRETRAIN_STEP_PRESETS: Tuple[int, ...] = (37_500, 75_000)
FINETUNE_STEP_PRESETS: Tuple[int, ...] = (112_500, 150_000)


def is_valid_subdomain(text: str) -> bool:
    """Character and label-shape rule shared by normalization and records."""

    if not text or text[0] == "." or text[-1] == ".":
        return False
    if ".." in text:
        return False
    return all(ch in ALPHABET_SET for ch in text)


def alpha_label(alpha: float) -> str:
    """Render an FPR budget the way report headers do (0.001 -> '0.1%')."""

    return f"{alpha * 100:g}%"


class SubdomainRecord(BaseModel):
    """One normalized subdomain string with optional label and frequency."""

    model_config = ConfigDict(frozen=True)

    text: str
    label: Optional[Literal[0, 1]] = None
    count: int = Field(default=1, ge=1)

    @field_validator("text")
    @classmethod
    def _check_text(cls, value: str) -> str:
        if not is_valid_subdomain(value):
            raise ValueError(f"not a normalized subdomain: {value!r}")
        return value


class DuplicateStats(BaseModel):
    """Duplicate-group statistics of a raw corpus."""

    raw_rows: int
    unique_groups: int
    inflation_ratio: float
    duplicate_share: float = Field(ge=0.0, le=1.0)
    group_size_percentiles: Dict[str, int]
    label_conflicts: int = 0

    @classmethod
    def from_group_sizes(cls, sizes: Sequence[int] | np.ndarray, label_conflicts: int = 0) -> "DuplicateStats":
        arr = np.sort(np.asarray(sizes, dtype=np.int64))
        if arr.size == 0:
            raise ValueError("at least one duplicate group is required")
        if arr[0] < 1:
            raise ValueError("group sizes must be positive")
        raw_rows = int(arr.sum())
        groups = int(arr.size)
        return cls(
            raw_rows=raw_rows,
            unique_groups=groups,
            inflation_ratio=raw_rows / groups,
            duplicate_share=(raw_rows - groups) / raw_rows,
            group_size_percentiles={
                "p50": _nearest_rank(arr, 50),
                "p90": _nearest_rank(arr, 90),
                "p99": _nearest_rank(arr, 99),
                "max": int(arr[-1]),
            },
            label_conflicts=label_conflicts,
        )


def _nearest_rank(sorted_sizes: np.ndarray, percentile: float) -> int:
    rank = max(1, math.ceil(percentile / 100.0 * sorted_sizes.size))
    return int(sorted_sizes[rank - 1])


class SplitSet(BaseModel):
    """Train split keeps duplicate counts; validation and test are string-unique."""

    train: List[SubdomainRecord]
    validation: List[SubdomainRecord]
    test: List[SubdomainRecord]
    seed: int

    @model_validator(mode="after")
    def _check_unique(self) -> "SplitSet":
        for name in ("validation", "test"):
            texts = [record.text for record in getattr(self, name)]
            if len(texts) != len(set(texts)):
                raise ValueError(f"{name} split contains repeated texts")
        return self

    def split(self, name: str) -> List[SubdomainRecord]:
        if name not in ("train", "validation", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


class CorpusSummary(BaseModel):
    n: int = Field(ge=1)
    mean_length: float
    mean_depth: float
    mean_entropy: float


class KsResult(BaseModel):
    d_statistic: float = Field(ge=0.0, le=1.0)
    p_value: float = Field(ge=0.0, le=1.0)
    n_x: int
    n_y: int


class ModelConfig(BaseModel):
    """Architecture hyperparameters of the character-level encoder."""

    n_layers: int = Field(ge=1)
    hidden: int = Field(ge=1)
    n_heads: int = Field(ge=1)
    ff: int = Field(ge=1)
    max_len: int = Field(default=128, ge=3)
    vocab_size: int = Field(default=5 + len(ALPHABET), ge=6)
    pre_norm: Literal[True] = True
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    layer_norm_eps: float = Field(default=1e-12, gt=0.0)

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        if self.hidden % self.n_heads:
            raise ValueError(f"hidden={self.hidden} is not divisible by n_heads={self.n_heads}")
        if self.ff < self.hidden:
            raise ValueError(f"ff={self.ff} must be at least hidden={self.hidden}")
        return self

    @property
    def head_dim(self) -> int:
        return self.hidden // self.n_heads

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> "ModelConfig":
        presets: Dict[str, Dict[str, int]] = {
            "base": {"n_layers": 12, "hidden": 768, "n_heads": 12, "ff": 3072, "max_len": 128},
            "tiny": {"n_layers": 2, "hidden": 32, "n_heads": 2, "ff": 64, "max_len": 64},
        }
        if name == "custom":
            return cls(**overrides)
        if name not in presets:
            raise ValueError(f"unknown model preset {name!r}")
        return cls(**{**presets[name], **overrides})


class TrainConfig(BaseModel):
    """Optimisation settings for one pretraining or fine-tuning run."""

    task: Literal["mlm", "cls"]
    total_steps: int = Field(ge=1)
    batch_size: int = Field(default=64, ge=1)
    base_lr: float = Field(default=5e-5, gt=0.0)
    weight_decay: float = Field(default=0.01, ge=0.0)
    warmup_frac: float = Field(default=0.01, gt=0.0, lt=1.0)
    seed: int = 0
    label_fraction: float = Field(default=1.0, gt=0.0, le=1.0)
    init_from: str = "random"
    schedule: Literal["constant", "linear_decay"] = "constant"
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    mask_select_rate: float = 0.15
    mask_token_frac: float = 0.8
    mask_random_frac: float = 0.1
    log_every: Optional[int] = Field(default=None, ge=1)
    checkpoint_every_frac: float = Field(default=0.1, gt=0.0, le=1.0)
    alphas: List[float] = Field(default_factory=lambda: [0.01, 0.001])
    eval_batch_size: int = Field(default=256, ge=1)
    deterministic: bool = False

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_frac * self.total_steps))

    @property
    def log_interval(self) -> int:
        return self.log_every or max(1, self.total_steps // 100)


class ScoredSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    y: Literal[0, 1]
    s: float = Field(ge=0.0, le=1.0)


class OperatingPoint(BaseModel):
    """A threshold frozen on one split for a target FPR budget."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    alpha: float = Field(ge=0.0, le=1.0)
    tau: float
    tpr_at_fit: float
    fpr_at_fit: float
    fit_split: str
    tp_at_fit: int = 0
    fp_at_fit: int = 0
    n_pos: int = 0
    n_neg: int = 0

    @model_validator(mode="after")
    def _check_budget(self) -> "OperatingPoint":
        if self.fpr_at_fit > self.alpha:
            raise ValueError(f"fitted FPR {self.fpr_at_fit} exceeds alpha {self.alpha}")
        return self

    @property
    def is_sentinel(self) -> bool:
        return math.isinf(self.tau)


class ConfusionCounts(BaseModel):
    tp: int = Field(ge=0)
    fp: int = Field(ge=0)
    tn: int = Field(ge=0)
    fn: int = Field(ge=0)

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.fp + self.tn


class ThresholdOutcome(BaseModel):
    """Result of applying a frozen operating point on another split."""

    alpha: float
    tau: float
    split: str
    counts: ConfusionCounts
    realized_fpr: Optional[float] = None
    recall: Optional[float] = None
    precision: Optional[float] = None

    model_config = ConfigDict(ser_json_inf_nan="constants")


class MetricsBundle(BaseModel):
    """Low-FPR evaluation of one model on a validation/test pair."""

    model_config = ConfigDict(ser_json_inf_nan="constants", protected_namespaces=())

    model_name: str
    alphas: List[float]
    auc: float
    pauc: Dict[str, float]
    operating_points: List[OperatingPoint]
    outcomes: List[ThresholdOutcome]
    brier: float
    validation_brier: float
    n_test: int
    metadata: Dict[str, Any] = Field(default_factory=dict)

    def pauc_at(self, alpha: float) -> float:
        return self.pauc[alpha_label(alpha)]

    def outcome_at(self, alpha: float) -> ThresholdOutcome:
        for outcome in self.outcomes:
            if outcome.alpha == alpha:
                return outcome
        raise KeyError(f"no operating point for alpha={alpha}")


class SynthSpec(BaseModel):
    """Parameters of a synthetic labeled subdomain corpus."""

    n_benign: int = Field(default=57_000, ge=1)
    n_malicious: int = Field(default=3_000, ge=1)
    malicious_rate: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    mean_length: float = Field(default=22.0, gt=0.0)
    mean_depth: float = Field(default=2.8, ge=1.0)
    zipf_exponent: float = Field(default=2.0, gt=1.0)
    max_group_size: int = Field(default=10_000, ge=1)
    hard_benign_fraction: float = Field(default=0.1, ge=0.0, le=1.0)
    encoder: Literal["base32", "hex"] = "base32"
    seed: int = 0

    @model_validator(mode="after")
    def _derive_malicious(self) -> "SynthSpec":
        if self.malicious_rate is not None:
            derived = round(self.n_benign * self.malicious_rate / (1.0 - self.malicious_rate))
            self.n_malicious = max(1, int(derived))
        return self


class CorpusSource(BaseModel):
    """Where a plan gets its labeled corpus from."""

    path: Optional[Path] = None
    psl_path: Optional[Path] = None
    extract: bool = False
    synth: Optional[SynthSpec] = None

    @model_validator(mode="after")
    def _check_source(self) -> "CorpusSource":
        if (self.path is None) == (self.synth is None):
            raise ValueError("exactly one of 'path' or 'synth' must be given")
        return self


class ExperimentPlan(BaseModel):
    """Declarative experiment matrix."""

    model_config = ConfigDict(protected_namespaces=())

    corpus: CorpusSource
    pretrain_corpus: Optional[CorpusSource] = None
    model_preset: Literal["base", "tiny", "custom"] = "tiny"
    model_overrides: Dict[str, Any] = Field(default_factory=dict)
    pretrain_budgets: List[int] = Field(default_factory=lambda: [37_500])
    finetune_steps: int = Field(default=112_500, ge=1)
    random_init_steps: Optional[int] = Field(default=None, ge=1)
    label_fractions: List[float] = Field(default_factory=lambda: [0.1, 0.25, 0.5, 1.0])
    alphas: List[float] = Field(default_factory=lambda: [0.01, 0.001])
    seeds: List[int] = Field(default_factory=lambda: [0])
    split_seed: int = 0
    split_ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1)
    batch_size: int = Field(default=64, ge=1)
    base_lr: float = Field(default=5e-5, gt=0.0)
    weight_decay: float = Field(default=0.01, ge=0.0)
    warmup_frac: float = Field(default=0.01, gt=0.0, lt=1.0)
    schedule: Literal["constant", "linear_decay"] = "constant"
    output_dir: Path = Path("runs/plan")
    deterministic: bool = False

    @model_validator(mode="after")
    def _check_lists(self) -> "ExperimentPlan":
        for name in ("pretrain_budgets", "label_fractions", "alphas", "seeds"):
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if any(budget < 1 for budget in self.pretrain_budgets):
            raise ValueError("pretrain budgets must be positive")
        if any(not 0.0 < fraction <= 1.0 for fraction in self.label_fractions):
            raise ValueError("label fractions must lie in (0, 1]")
        if any(not 0.0 < alpha <= 1.0 for alpha in self.alphas):
            raise ValueError("alphas must lie in (0, 1]")
        return self

    def model_config_resolved(self) -> ModelConfig:
        return ModelConfig.preset(self.model_preset, **self.model_overrides)

    @property
    def reference_budget(self) -> int:
        """Pretraining budget the random-init baseline is update-matched against."""

        return min(self.pretrain_budgets)

    @property
    def equal_update_steps(self) -> int:
        """Random-init budget: reference pretraining steps plus fine-tuning steps.

        There is one random-init baseline per fraction and seed. Only the
        reference budget is compared against it in the delta report; larger
        budgets are compared with each other in the budget-scaling report.
        """

        return self.random_init_steps or (self.reference_budget + self.finetune_steps)


class TrainLogRecord(BaseModel):
    step: int
    lr: float
    loss: float
    metrics: Dict[str, float] = Field(default_factory=dict)


class TrainReport(BaseModel):
    task: Literal["mlm", "cls"]
    total_steps: int
    initial_loss: float
    final_loss: float
    checkpoint: Path
    intermediate_checkpoints: List[Path] = Field(default_factory=list)
    report_path: Path
    records: List[TrainLogRecord] = Field(default_factory=list)


class ScoreRequest(BaseModel):
    subdomains: List[str] = Field(min_length=1)
    normalize: bool = True


class ScoreItem(BaseModel):
    subdomain: str
    text: Optional[str] = None
    score: Optional[float] = None
    alert: Optional[bool] = None
    error: Optional[str] = None


class ScoreResponse(BaseModel):
    results: List[ScoreItem]
    alpha: Optional[float] = None
    tau: Optional[float] = None

    def to_json(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")
