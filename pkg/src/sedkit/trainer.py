"""Losses, class weights, early stopping and the multi-task training loop."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .corpus import MARKER_OF, TASK_OF, TASKS, ClipRecord, FeatureSet, label_matrix
from .errors import ConfigError, ContractError, DataError, NumericalError
from .metrics import evaluate
from .network import Checkpoint, ConformerBiLSTM, ModelConfig, length_buckets
from .numerics import Array

log = logging.getLogger(__name__)

LOSS_KINDS = ("bce", "weighted_bce", "focal")
MAX_CLASS_WEIGHT = 50.0


class TrainingAborted(NumericalError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, msg: str, epoch: int, batch: int):
        super().__init__(msg)
        self.epoch = epoch
        self.batch = batch


# -- losses -----------------------------------------------------------------------

@dataclass
class LossBatch:
    """Labels ``y`` (N, K) with logits ``p`` shaped (N, K), (N, K, 1) or (N, K, 2).

    ``w`` holds one positive-class weight per task; ``None`` means all ones.
    """

    y: np.ndarray
    p: Array
    w: np.ndarray | None = None

    def __post_init__(self):
        if not isinstance(self.p, Array):
            self.p = nx.as_array(self.p)
        self.y = np.asarray(self.y)
        if self.y.size and not np.isin(self.y, (0, 1)).all():
            raise ContractError("labels must be 0 or 1")
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        shape = self.p.shape
        if shape[:2] != self.y.shape or len(shape) not in (2, 3) or (len(shape) == 3 and shape[2] not in (1, 2)):
            raise ContractError(f"logits of shape {shape} do not match labels of shape {self.y.shape}")
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)
            if self.w.shape != (self.y.shape[1],):
                raise ContractError(f"{self.w.size} class weights for {self.y.shape[1]} tasks")
            if not (self.w > 0).all():
                raise ContractError("class weights must be positive")

    def expanded(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-logit targets and positive weights, both shaped like ``p``.

        For two-logit heads a label becomes the one-hot pair (1 - y, y); the
        task weight then applies to both entries of a positive clip.
        """
        y = self.y.astype(np.float64)
        w = np.ones(self.y.shape[1]) if self.w is None else self.w
        weight = np.where(self.y == 1, w, 1.0)
        if self.p.ndim == 2:
            return y, weight
        if self.p.shape[2] == 1:
            return y[..., None], weight[..., None]
        return np.stack([1.0 - y, y], axis=-1), np.repeat(weight[..., None], 2, axis=-1)


def bce_with_logits(batch: LossBatch) -> Array:
    """Weighted binary cross-entropy on logits, averaged over every logit entry.

    Each entry costs ``w*y*softplus(-p) + (1-y)*softplus(p)``, the stable form
    of ``-(w*y*log sigmoid(p) + (1-y)*log(1-sigmoid(p)))``.
    """
    targets, weight = batch.expanded()
    terms = nx.binary_cross_entropy_terms(batch.p, targets)
    if batch.w is not None:
        terms = terms * weight
    return terms.mean()


def focal_loss(batch: LossBatch, gamma: float = 2.0, alpha: float | None = 0.25, weighted: bool = False) -> Array:
    """Focal loss ``alpha_t * (1 - p_t)**gamma * BCE`` averaged over entries.

    ``alpha=None`` drops the alpha balancing (alpha_t = 1). With ``weighted``
    the class weights of ``batch`` multiply the positive entries as in
    :func:`bce_with_logits`.
    """
    if gamma < 0:
        raise ConfigError(f"focal gamma must be >= 0, got {gamma}")
    if alpha is not None and not (0 < alpha <= 1):
        raise ConfigError(f"focal alpha must be in (0, 1], got {alpha}")
    targets, weight = batch.expanded()
    sign = 2.0 * targets - 1.0
    terms = nx.binary_cross_entropy_terms(batch.p, targets)
    if gamma != 0:
        # (1 - p_t)**gamma = sigmoid(-s*p)**gamma = exp(-gamma * softplus(s*p))
        terms = terms * nx.exp(nx.softplus(batch.p * sign) * -gamma)
    scale = np.ones_like(targets)
    if alpha is not None:
        scale = np.where(targets == 1, alpha, 1.0 - alpha)
    if weighted and batch.w is not None:
        scale = scale * weight
    if alpha is not None or (weighted and batch.w is not None):
        terms = terms * scale
    return terms.mean()


def class_weights(records, task_subset: Sequence[str] = TASKS) -> np.ndarray:
    """``clamp(negatives / positives, 1, 50)`` per task.

    ``records`` is a sequence of :class:`ClipRecord`, a :class:`FeatureSet`,
    or an (n, 5) label matrix.
    """
    if isinstance(records, FeatureSet):
        labels = records.labels
    elif isinstance(records, np.ndarray):
        labels = records
    else:
        records = list(records)
        if records and not isinstance(records[0], ClipRecord):
            labels = np.asarray(records)
        else:
            labels = label_matrix(records)
    if len(labels) == 0:
        raise ContractError("class weights of an empty dataset")
    cols = [TASKS.index(TASK_OF[t]) for t in task_subset]
    pos = labels[:, cols].sum(axis=0)
    neg = len(labels) - pos
    out = np.empty(len(cols))
    for k, t in enumerate(task_subset):
        if pos[k] == 0:
            warnings.warn(f"task {MARKER_OF[TASK_OF[t]]} has no positives; weight clamped to {MAX_CLASS_WEIGHT:g}", stacklevel=2)
            out[k] = MAX_CLASS_WEIGHT
        else:
            out[k] = min(max(neg[k] / pos[k], 1.0), MAX_CLASS_WEIGHT)
    return out


# -- configuration ---------------------------------------------------------------

def build_task_config(spec: str | Sequence[str]) -> tuple[str, ...]:
    """Resolve ``five``, ``three``, ``single:<tag>``, a comma list or a list of tags.

    Tags may be task names (``wr``) or markers (``[]``); the result is in
    canonical order.
    """
    if isinstance(spec, str):
        key = spec.strip()
        if key == "five":
            return TASKS
        if key == "three":
            return ("p", "wr", "i")
        if key.startswith("single:"):
            tags = [key[len("single:"):]]
        else:
            tags = [t for t in key.split(",") if t.strip()]
    else:
        tags = list(spec)
    resolved = []
    for t in tags:
        t = t.strip()
        if t not in TASK_OF:
            raise ConfigError(f"unknown task tag {t!r}; expected one of {list(TASKS)} or {list(MARKER_OF.values())}")
        resolved.append(TASK_OF[t])
    if not resolved:
        raise ConfigError("task subset is empty")
    if len(set(resolved)) != len(resolved):
        raise ConfigError(f"duplicate task in {spec!r}")
    return tuple(t for t in TASKS if t in resolved)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 10
    loss: str = "bce"
    gamma: float = 2.0
    alpha: float | None = 0.25
    weighted_focal: bool = False
    task_subset: tuple[str, ...] | None = None
    seed: int = 0
    eval_batch_size: int = 32

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1 or self.eval_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {LOSS_KINDS}")
        if self.gamma < 0:
            raise ConfigError(f"focal gamma must be >= 0, got {self.gamma}")
        if self.alpha is not None and not (0 < self.alpha <= 1):
            raise ConfigError(f"focal alpha must be in (0, 1], got {self.alpha}")
        if self.task_subset is not None:
            self.task_subset = build_task_config(self.task_subset)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["task_subset"] is not None:
            d["task_subset"] = list(d["task_subset"])
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown training options {unknown}")
        return cls(**known)


# -- history & early stopping ---------------------------------------------------------

@dataclass
class History:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    dev_f1: list[dict[str, float]] = field(default_factory=list)
    dev_f1_final: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def append(self, epoch: int, train_loss: float, dev_f1: dict[str, float], dev_f1_final: float) -> dict:
        if self.epochs and epoch <= self.epochs[-1]:
            raise ContractError(f"epoch {epoch} does not follow {self.epochs[-1]}")
        self.epochs.append(epoch)
        self.train_loss.append(float(train_loss))
        self.dev_f1.append(dict(dev_f1))
        self.dev_f1_final.append(float(dev_f1_final))
        return self.record(len(self) - 1)

    @property
    def best_index(self) -> int:
        """Position of the first epoch reaching the highest dev F1-final."""
        if not self.epochs:
            raise ContractError("empty history has no best epoch")
        return int(np.argmax(self.dev_f1_final))

    @property
    def best_epoch(self) -> int:
        return self.epochs[self.best_index]

    def record(self, k: int) -> dict:
        return {
            "epoch": self.epochs[k],
            "train_loss": self.train_loss[k],
            "dev_f1": self.dev_f1[k],
            "dev_f1_final": self.dev_f1_final[k],
        }

    def to_jsonl(self) -> str:
        return "".join(json.dumps(self.record(k), sort_keys=True) + "\n" for k in range(len(self)))

    @classmethod
    def from_jsonl(cls, text: str) -> "History":
        h = cls()
        for line in text.splitlines():
            if line.strip():
                r = json.loads(line)
                h.append(r["epoch"], r["train_loss"], r["dev_f1"], r["dev_f1_final"])
        return h


def should_stop(history: History | Sequence[float], patience: int) -> bool:
    """True once dev F1-final has gone ``patience`` epochs without a strict improvement."""
    scores = history.dev_f1_final if isinstance(history, History) else list(history)
    if not scores:
        raise ContractError("should_stop needs a non-empty history")
    best = int(np.argmax(scores))
    return len(scores) - 1 - best >= patience


# -- training loop ----------------------------------------------------------------------

def make_loss(cfg: TrainConfig, weights: np.ndarray | None) -> Callable[[np.ndarray, Array], Array]:
    def loss_fn(y: np.ndarray, logits: Array) -> Array:
        if cfg.loss == "focal":
            return focal_loss(LossBatch(y, logits, weights), cfg.gamma, cfg.alpha, cfg.weighted_focal)
        return bce_with_logits(LossBatch(y, logits, weights if cfg.loss == "weighted_bce" else None))

    return loss_fn


def _check_inputs(train_set: FeatureSet, dev_set: FeatureSet) -> None:
    if len(train_set) == 0 or len(dev_set) == 0:
        raise ContractError("training and dev sets must be non-empty")
    shared = (set(train_set.speakers) & set(dev_set.speakers)) - {"?"}
    if shared:
        raise ContractError(f"dev and train share speakers: {sorted(shared)[:5]}")
    for ds in (train_set, dev_set):
        for clip_id, f in zip(ds.ids, ds.features):
            if not np.isfinite(f).all():
                raise DataError(f"clip {clip_id}: features contain non-finite values")


def init_from_checkpoint(model: ConformerBiLSTM, ckpt: Checkpoint) -> list[str]:
    """Copy every parameter whose name and shape match; returns the copied names."""
    copied = []
    for name, value in ckpt.params.items():
        p = model.params.get(name)
        if p is not None and p.shape == tuple(value.shape):
            p.data = np.array(value, dtype=p.dtype)
            copied.append(name)
    return copied


def train(
    model_config: ModelConfig,
    train_set: FeatureSet,
    dev_set: FeatureSet,
    cfg: TrainConfig = TrainConfig(),
    log_path: str | Path | None = None,
    init: Checkpoint | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> tuple[Checkpoint, History]:
    """Fit a fresh model with Adam and early stopping on dev F1-final.

    ``cfg.task_subset`` (when set) overrides the model config's heads. The
    returned checkpoint holds the parameters of the best dev epoch.
    """
    _check_inputs(train_set, dev_set)
    if cfg.task_subset is not None and cfg.task_subset != model_config.task_subset:
        model_config = ModelConfig.from_dict({**model_config.to_dict(), "task_subset": list(cfg.task_subset)})
    tasks = model_config.task_subset
    cols = [TASKS.index(t) for t in tasks]

    model = ConformerBiLSTM(model_config, seed=cfg.seed)
    if init is not None:
        copied = init_from_checkpoint(model, init)
        log.info("initialised %d/%d tensors from checkpoint", len(copied), len(model.params))
    model.fit_normalizer(train_set.features)
    weights = class_weights(train_set.labels, tasks) if cfg.loss != "bce" else None
    loss_fn = make_loss(cfg, weights)
    adam = nx.AdamState(lr=cfg.lr)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    lengths = [len(f) for f in train_set.features]

    history = History()
    best_params = {k: v.copy() for k, v in model.state().items()}
    log_fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            losses, sizes = [], []
            for b, idx in enumerate(length_buckets(lengths, cfg.batch_size, shuffle_rng)):
                feats = np.stack([train_set.features[i] for i in idx])
                y = train_set.labels[np.asarray(idx)][:, cols]
                for p in model.params.values():
                    p.grad = None
                try:
                    loss = loss_fn(y, model.forward(feats, training=True))
                    nx.backward(loss)
                except NumericalError as exc:
                    raise TrainingAborted(f"non-finite value at epoch {epoch}, batch {b}: {exc}", epoch, b) from exc
                value = float(loss.data)
                if not np.isfinite(value):
                    raise TrainingAborted(f"loss is {value} at epoch {epoch}, batch {b}", epoch, b)
                nx.adam_step(model.params, None, adam)
                losses.append(value)
                sizes.append(len(idx))
            train_loss = float(np.average(losses, weights=sizes))
            report = evaluate(model, dev_set, tasks, cfg.eval_batch_size)
            rec = history.append(epoch, train_loss, report.f1, report.f1_final)
            if history.best_index == len(history) - 1:
                best_params = {k: v.copy() for k, v in model.state().items()}
            if log_fh is not None:
                log_fh.write(json.dumps(rec, sort_keys=True) + "\n")
                log_fh.flush()
            if on_epoch is not None:
                on_epoch(rec)
            log.info("epoch %d loss %.4f dev F1-final %.4f", epoch, train_loss, report.f1_final)
            if should_stop(history, cfg.patience):
                break
    finally:
        if log_fh is not None:
            log_fh.close()

    best = history.best_index
    ckpt = Checkpoint(
        model_config,
        best_params,
        {k: v.copy() for k, v in model.buffers.items()},
        adam=adam,
        epoch=history.epochs[best],
        best_metric=history.dev_f1_final[best],
        extra={"train_config": cfg.to_dict(), "class_weights": None if weights is None else weights.tolist()},
    )
    return ckpt, history
