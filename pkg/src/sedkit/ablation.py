"""Experiment grid over encoder depth, LSTM stack, task strategy and initialisation."""

from __future__ import annotations

import hashlib
import itertools
import json
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from .corpus import TASKS, FeatureSet
from .errors import ConfigError, NumericalError, SedkitError
from .metrics import evaluate, format_table
from .network import ModelConfig, load_checkpoint
from .trainer import TrainConfig, build_task_config, train

_LSTM_TOKEN = re.compile(r"^(uni|bi)?(\d+)$")


def parse_lstm_token(token: str) -> tuple[int, bool]:
    """``"2"`` or ``"bi2"`` -> (2, True); ``"uni1"`` -> (1, False); ``"0"`` -> (0, True)."""
    m = _LSTM_TOKEN.match(token.strip())
    if not m:
        raise ConfigError(f"bad LSTM axis value {token!r}; use e.g. 0, 2, bi2 or uni1")
    return int(m.group(2)), m.group(1) != "uni"


@dataclass(frozen=True)
class GridCell:
    index: int
    layers: int
    lstm_layers: int
    bidirectional: bool
    strategy: str
    pretrained: str | None

    @property
    def name(self) -> str:
        lstm = "nolstm" if self.lstm_layers == 0 else f"{'bi' if self.bidirectional else 'uni'}lstm{self.lstm_layers}"
        strategy = self.strategy
        if strategy.startswith("single:"):
            strategy = "only" + build_task_config(strategy)[0]
        parts = [f"conformer{self.layers}", lstm, strategy]
        if self.pretrained:
            parts.append("pretrained")
        return "-".join(parts)

    @property
    def descriptor(self) -> str:
        return json.dumps(
            [self.layers, self.lstm_layers, self.bidirectional, self.strategy, self.pretrained or ""], separators=(",", ":")
        )

    def seed(self, global_seed: int) -> int:
        digest = hashlib.sha256(f"{global_seed}|{self.descriptor}".encode("utf-8")).hexdigest()
        return int(digest[:8], 16)


@dataclass
class AblationGrid:
    layers: Sequence[int] = (12,)
    lstm: Sequence[str] = ("bi2",)
    strategies: Sequence[str] = ("five",)
    pretrained: Sequence[str | None] = (None,)

    def __post_init__(self):
        axes = {"layers": self.layers, "lstm": self.lstm, "strategies": self.strategies, "pretrained": self.pretrained}
        for name, values in axes.items():
            if not list(values):
                raise ConfigError(f"ablation axis {name!r} is empty")
        if any(int(n) < 0 for n in self.layers):
            raise ConfigError("conformer layer counts must be non-negative")
        for s in self.strategies:
            build_task_config(s)
        for t in self.lstm:
            parse_lstm_token(str(t))
        self.pretrained = [None if p in (None, "", "none") else str(p) for p in self.pretrained]

    def cells(self) -> list[GridCell]:
        out = []
        product = itertools.product(self.layers, self.lstm, self.strategies, self.pretrained)
        for i, (n, tok, strat, pre) in enumerate(product):
            depth, bi = parse_lstm_token(str(tok))
            out.append(GridCell(i, int(n), depth, bi, strat, pre))
        return out


@dataclass
class CellResult:
    cell: GridCell
    tasks: tuple[str, ...] = ()
    f1: dict[str, float] = field(default_factory=dict)
    f1_final: float | None = None
    best_epoch: int | None = None
    error: str | None = None
    numerical: bool = False

    def record(self) -> dict:
        rec = {
            "row": self.cell.name,
            "cell": self.cell.index,
            "layers": self.cell.layers,
            "lstm_layers": self.cell.lstm_layers,
            "bidirectional": self.cell.bidirectional,
            "strategy": self.cell.strategy,
            "pretrained": self.cell.pretrained,
        }
        if self.error is not None:
            rec["error"] = self.error
            return rec
        rec["f1"] = {t: round(100 * self.f1[t], 2) if t in self.f1 else None for t in TASKS}
        rec["f1_final"] = round(100 * self.f1_final, 2)
        rec["best_epoch"] = self.best_epoch
        return rec


def cell_configs(cell: GridCell, base_model: ModelConfig, base_train: TrainConfig, global_seed: int):
    tasks = build_task_config(cell.strategy)
    model = replace(
        base_model,
        num_blocks=cell.layers,
        lstm_layers=cell.lstm_layers,
        lstm_bidirectional=cell.bidirectional,
        task_subset=tasks,
    )
    return model, replace(base_train, task_subset=tasks, seed=cell.seed(global_seed))


def run_cell(
    cell: GridCell,
    base_model: ModelConfig,
    base_train: TrainConfig,
    global_seed: int,
    train_set: FeatureSet,
    dev_set: FeatureSet,
    test_set: FeatureSet,
) -> CellResult:
    try:
        model_cfg, train_cfg = cell_configs(cell, base_model, base_train, global_seed)
        init = load_checkpoint(cell.pretrained) if cell.pretrained else None
        ckpt, history = train(model_cfg, train_set, dev_set, train_cfg, init=init)
        report = evaluate(ckpt.build_model(), test_set, model_cfg.task_subset, train_cfg.eval_batch_size)
        return CellResult(cell, report.tasks, report.f1, report.f1_final, history.best_epoch)
    except (SedkitError, OSError) as exc:
        return CellResult(cell, error=f"{type(exc).__name__}: {exc}", numerical=isinstance(exc, NumericalError))


def _run_packed(args):
    return run_cell(*args)


def run_grid(
    grid: AblationGrid,
    base_model: ModelConfig,
    base_train: TrainConfig,
    train_set: FeatureSet,
    dev_set: FeatureSet,
    test_set: FeatureSet,
    global_seed: int = 0,
    workers: int = 1,
) -> list[CellResult]:
    """Train and test every cell; results come back in grid order."""
    cells = grid.cells()
    jobs = [(c, base_model, base_train, global_seed, train_set, dev_set, test_set) for c in cells]
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_packed, jobs))
    else:
        results = [_run_packed(j) for j in jobs]
    return sorted(results, key=lambda r: r.cell.index)


def composite_row(results: Sequence[CellResult]) -> dict[str, float]:
    """Per-task best test F1 over all successful cells that train that task."""
    best: dict[str, float] = {}
    for r in results:
        for t, v in r.f1.items():
            if r.error is None and v > best.get(t, -1.0):
                best[t] = v
    return best


def render_report(results: Sequence[CellResult], composite: bool = False) -> tuple[str, list[dict]]:
    """Aligned table plus one machine-readable record per row."""
    ok = [r for r in results if r.error is None]
    rows = [(r.cell.name, r.f1) for r in ok]
    records = [r.record() for r in results]
    if composite and ok:
        best = composite_row(ok)
        rows.append(("composite", best))
        f1 = {t: round(100 * best[t], 2) if t in best else None for t in TASKS}
        mean = round(100 * sum(best.values()) / len(best), 2)
        records.append({"row": "composite", "f1": f1, "f1_final": mean})
    table = format_table(rows) if rows else "(no successful cells)"
    failed = [r for r in results if r.error is not None]
    if failed:
        table += "\n" + "\n".join(f"FAILED {r.cell.name}: {r.error}" for r in failed)
    return table, records


def grid_from_mapping(values: Mapping) -> AblationGrid:
    def listify(v):
        if v is None:
            return None
        if isinstance(v, str):
            return [x for x in v.split(",") if x.strip()]
        return list(v)

    kw = {}
    for key, attr in (("layers", "layers"), ("bilstm", "lstm"), ("strategy", "strategies"), ("pretrained", "pretrained")):
        v = listify(values.get(key))
        if v is not None:
            kw[attr] = [int(x) for x in v] if attr == "layers" else [str(x) for x in v]
    return AblationGrid(**kw)
