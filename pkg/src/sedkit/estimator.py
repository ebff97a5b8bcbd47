"""scikit-learn style wrappers around the feature front end and the detector."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import TASKS, FeatureSet
from .errors import ContractError
from .frontend import AugmentPolicy, FbankConfig, Waveform, compute_fbank
from .metrics import accumulate_confusion, f1_scores, f1_final, predict_labels
from .network import Checkpoint, ModelConfig, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, build_task_config, train
from .validation import check_features, check_labels, check_waveforms


class FbankExtractor(TransformerMixin, BaseEstimator):
    """Waveforms (1-D float arrays at ``sample_rate``) to log-mel filterbank matrices.

    Stateless: ``fit`` only validates parameters. ``transform`` returns a list
    because clips may differ in length.
    """

    def __init__(self, sample_rate=16000, num_mel_bins=80, frame_length_ms=25.0, frame_shift_ms=10.0,
                 preemphasis=0.97, low_freq=20.0, high_freq=7600.0):
        self.sample_rate = sample_rate
        self.num_mel_bins = num_mel_bins
        self.frame_length_ms = frame_length_ms
        self.frame_shift_ms = frame_shift_ms
        self.preemphasis = preemphasis
        self.low_freq = low_freq
        self.high_freq = high_freq

    def _config(self) -> FbankConfig:
        return FbankConfig(
            sample_rate=int(self.sample_rate),
            num_mel_bins=int(self.num_mel_bins),
            frame_length_ms=float(self.frame_length_ms),
            frame_shift_ms=float(self.frame_shift_ms),
            preemphasis=float(self.preemphasis),
            low_freq=float(self.low_freq),
            high_freq=float(self.high_freq),
        )

    def fit(self, X=None, y=None):
        self.config_ = self._config()
        return self

    def transform(self, X) -> list[np.ndarray]:
        cfg = getattr(self, "config_", None) or self._config()
        return [compute_fbank(Waveform(w, cfg.sample_rate), cfg) for w in check_waveforms(X)]


class StutterDetector(ClassifierMixin, BaseEstimator):
    """Multi-label clip classifier: conformer encoder, BiLSTM, per-task heads.

    ``X`` is a list of (T, num_mel_bins) fbank matrices and ``y`` a (n, 5)
    0/1 matrix in the order p, b, r, wr, i (or one column per active task).
    ``predict`` returns one column per active task; ``score`` is the mean
    per-task F1 over those tasks.
    """

    def __init__(self, tasks="five", num_blocks=2, d_model=64, attention_heads=2, ff_expansion=4, conv_kernel=15,
                 dropout_p=0.1, lstm_layers=2, lstm_hidden=32, lstm_bidirectional=True, proj_dim=32,
                 pooling="mean", head_mode="two_logit", num_mel_bins=80, augment=False, lr=3e-4, batch_size=8,
                 max_epochs=30, patience=10, loss="bce", gamma=2.0, alpha=0.25, dev_fraction=0.1,
                 eval_batch_size=32, random_state=0):
        self.tasks = tasks
        self.num_blocks = num_blocks
        self.d_model = d_model
        self.attention_heads = attention_heads
        self.ff_expansion = ff_expansion
        self.conv_kernel = conv_kernel
        self.dropout_p = dropout_p
        self.lstm_layers = lstm_layers
        self.lstm_hidden = lstm_hidden
        self.lstm_bidirectional = lstm_bidirectional
        self.proj_dim = proj_dim
        self.pooling = pooling
        self.head_mode = head_mode
        self.num_mel_bins = num_mel_bins
        self.augment = augment
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.loss = loss
        self.gamma = gamma
        self.alpha = alpha
        self.dev_fraction = dev_fraction
        self.eval_batch_size = eval_batch_size
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            num_blocks=self.num_blocks, d_model=self.d_model, attention_heads=self.attention_heads,
            ff_expansion=self.ff_expansion, conv_kernel=self.conv_kernel, dropout_p=self.dropout_p,
            lstm_layers=self.lstm_layers, lstm_hidden=self.lstm_hidden, lstm_bidirectional=self.lstm_bidirectional,
            proj_dim=self.proj_dim, pooling=self.pooling, head_mode=self.head_mode,
            task_subset=build_task_config(self.tasks), num_mel_bins=self.num_mel_bins,
            augment=AugmentPolicy(enabled=bool(self.augment)),
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs, patience=self.patience,
            loss=self.loss, gamma=self.gamma, alpha=self.alpha, seed=int(self.random_state or 0),
            eval_batch_size=self.eval_batch_size,
        )

    def fit(self, X, y, X_dev=None, y_dev=None, groups=None):
        """Train with early stopping on a dev set.

        Without ``X_dev`` a ``dev_fraction`` share of the clips is held out;
        ``groups`` (speaker ids) keeps every speaker on one side of that cut.
        """
        model_cfg = self._model_config()
        tasks = model_cfg.task_subset
        feats = check_features(X, model_cfg.num_mel_bins)
        labels = check_labels(y, len(feats), tasks)
        speakers = [str(g) for g in groups] if groups is not None else [f"#{i}" for i in range(len(feats))]
        if len(speakers) != len(feats):
            raise ContractError(f"{len(speakers)} groups for {len(feats)} clips")
        data = FeatureSet([f"clip{i}" for i in range(len(feats))], feats, labels, speakers)
        if X_dev is not None:
            dev_feats = check_features(X_dev, model_cfg.num_mel_bins)
            dev_labels = check_labels(y_dev, len(dev_feats), tasks)
            train_set = data
            dev_set = FeatureSet([f"dev{i}" for i in range(len(dev_feats))], dev_feats, dev_labels)
        else:
            train_set, dev_set = self._holdout(data)
        self.checkpoint_, self.history_ = train(model_cfg, train_set, dev_set, self._train_config())
        self._set_fitted(self.checkpoint_)
        return self

    def _holdout(self, data: FeatureSet) -> tuple[FeatureSet, FeatureSet]:
        if not 0.0 < self.dev_fraction < 1.0:
            raise ContractError(f"dev_fraction must lie in (0, 1), got {self.dev_fraction}")
        groups = sorted(set(data.speakers))
        if len(groups) < 2:
            raise ContractError("need at least two groups to hold out a dev set")
        rng = np.random.default_rng([int(self.random_state or 0), 2])
        order = rng.permutation(len(groups))
        n_dev = min(max(1, int(round(self.dev_fraction * len(groups)))), len(groups) - 1)
        dev_groups = {groups[i] for i in order[:n_dev]}
        dev_idx = [i for i, s in enumerate(data.speakers) if s in dev_groups]
        train_idx = [i for i, s in enumerate(data.speakers) if s not in dev_groups]
        return data.subset(train_idx), data.subset(dev_idx)

    def _set_fitted(self, ckpt: Checkpoint) -> None:
        self.model_ = ckpt.build_model()
        self.tasks_ = tuple(ckpt.config.task_subset)
        self.classes_ = np.array(self.tasks_)
        self.n_features_in_ = ckpt.config.num_mel_bins

    def predict_logits(self, X) -> np.ndarray:
        """Raw logits, shape (n, K, w) with w = 1 or 2 depending on ``head_mode``."""
        check_is_fitted(self, "model_")
        return self.model_.predict_logits(check_features(X, self.n_features_in_), self.eval_batch_size)

    def predict(self, X) -> np.ndarray:
        """0/1 decisions of shape (n, K) for the active tasks."""
        return predict_labels(self.predict_logits(X), self.model_.config.head_mode)

    def score(self, X, y, sample_weight=None) -> float:
        if sample_weight is not None:
            raise ContractError("sample weights are not supported")
        preds = self.predict(X)
        refs = check_labels(y, len(preds), self.tasks_)[:, [TASKS.index(t) for t in self.tasks_]]
        scores = f1_scores(accumulate_confusion(preds, refs, self.tasks_))
        return f1_final([s.f1 for s in scores.values()])

    def save(self, path: str | Path) -> None:
        check_is_fitted(self, "checkpoint_")
        save_checkpoint(self.checkpoint_, path)

    @classmethod
    def from_checkpoint(cls, path: str | Path) -> "StutterDetector":
        ckpt = load_checkpoint(path)
        c = ckpt.config
        est = cls(
            tasks=list(c.task_subset), num_blocks=c.num_blocks, d_model=c.d_model, attention_heads=c.attention_heads,
            ff_expansion=c.ff_expansion, conv_kernel=c.conv_kernel, dropout_p=c.dropout_p, lstm_layers=c.lstm_layers,
            lstm_hidden=c.lstm_hidden, lstm_bidirectional=c.lstm_bidirectional, proj_dim=c.proj_dim,
            pooling=c.pooling, head_mode=c.head_mode, num_mel_bins=c.num_mel_bins, augment=c.augment.enabled,
        )
        est.checkpoint_ = ckpt
        est._set_fitted(ckpt)
        return est
