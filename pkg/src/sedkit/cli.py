"""Command-line entry points: gen-data, train, eval, score, ablate.

Every option can also be given in a YAML or JSON file passed with
``--config``; command-line flags override the file, which overrides the
built-in defaults. The effective settings are printed to standard error at
startup.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .ablation import grid_from_mapping, render_report, run_grid
from .corpus import MARKER_OF, TASKS, FeatureSet, SynthSpec, load_manifest, split_by_speaker, synth_generate, write_manifest
from .errors import ConfigError, DataError, FormatError, NumericalError, ParseError, SedkitError, ContractError, ShapeError
from .frontend import AugmentPolicy
from .metrics import EvalReport, accumulate_confusion, evaluate
from .network import ModelConfig, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, build_task_config, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("sedkit")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# option name -> (type, default, help); the dest doubles as the config-file key
MODEL_OPTIONS: dict[str, tuple[Any, Any, str]] = {
    "num_blocks": (int, 12, "Conformer blocks"),
    "d_model": (int, 256, "encoder width"),
    "attention_heads": (int, 4, "self-attention heads"),
    "ff_expansion": (int, 4, "feed-forward expansion factor"),
    "conv_kernel": (int, 15, "depthwise convolution kernel (odd)"),
    "dropout": (float, 0.1, "dropout probability"),
    "lstm_layers": (int, 2, "stacked LSTM layers after the encoder"),
    "lstm_hidden": (int, 256, "LSTM units per direction"),
    "unidirectional": (bool, False, "run the LSTM forward in time only"),
    "proj_dim": (int, 128, "projection width before pooling"),
    "head_mode": (str, "two_logit", "two_logit or one_logit"),
    "tasks": (str, "five", "five, three, single:<tag> or a comma list of tags"),
    "augment": (bool, True, "SpecAugment during training"),
}
TRAIN_OPTIONS: dict[str, tuple[Any, Any, str]] = {
    "lr": (float, 1e-4, "Adam learning rate"),
    "batch_size": (int, 16, "clips per batch"),
    "max_epochs": (int, 100, "epoch limit"),
    "patience": (int, 10, "early-stopping patience in epochs"),
    "loss": (str, "bce", "bce, weighted_bce or focal"),
    "gamma": (float, 2.0, "focal gamma"),
    "alpha": (float, 0.25, "focal alpha"),
    "weighted_focal": (bool, False, "multiply focal loss by class weights"),
    "seed": (int, 0, "random seed"),
}
GEN_OPTIONS: dict[str, tuple[Any, Any, str]] = {
    "out": (str, None, "output directory"),
    "clips": (int, SynthSpec.num_clips, "number of clips"),
    "seconds": (float, SynthSpec.clip_seconds, "clip duration in seconds"),
    "probs": (str, "0.3,0.3,0.3,0.3,0.3", "event probabilities for /p,/b,/r,[],/i"),
    "speakers": (int, None, "number of synthetic speakers (default clips/10)"),
    "split_seed": (int, 0, "seed of the speaker-wise train/dev/test split"),
    "seed": (int, 0, "random seed"),
}


def _add_options(p: argparse.ArgumentParser, options: dict) -> None:
    for name, (typ, _default, help_) in options.items():
        flag = "--" + name.replace("_", "-")
        if typ is bool:
            p.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None, help=help_)
        else:
            p.add_argument(flag, dest=name, type=typ, default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sedkit", description="Stuttering event detection toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a synthetic stutter corpus")
    g.add_argument("--config", help="YAML/JSON file with option values")
    _add_options(g, GEN_OPTIONS)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="YAML/JSON file with option values")
    t.add_argument("--train", dest="train_manifest", help="training manifest")
    t.add_argument("--dev", dest="dev_manifest", help="dev manifest")
    t.add_argument("--out", help="output directory")
    t.add_argument("--init", help="checkpoint whose matching tensors initialise the model")
    _add_options(t, MODEL_OPTIONS)
    _add_options(t, TRAIN_OPTIONS)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    e.add_argument("--config", help="YAML/JSON file with option values")
    e.add_argument("--ckpt", help="checkpoint file")
    e.add_argument("--data", help="manifest to score")
    e.add_argument("--report", help="write the JSON record here")
    e.add_argument("--tasks", help="restrict scoring to these tasks")

    s = sub.add_parser("score", help="F1 between the labels of two manifests")
    s.add_argument("--config", help="YAML/JSON file with option values")
    s.add_argument("--hyp", help="hypothesis manifest")
    s.add_argument("--ref", help="reference manifest")
    s.add_argument("--tasks", help="restrict scoring to these tasks")

    a = sub.add_parser("ablate", help="train and test every cell of an experiment grid")
    a.add_argument("--config", help="YAML/JSON file with option values")
    a.add_argument("--layers", help="comma list of Conformer depths")
    a.add_argument("--bilstm", help="comma list of LSTM stacks: 0, 2, bi2, uni1 ...")
    a.add_argument("--strategy", help="comma list of task strategies: five, three, single:<tag>")
    a.add_argument("--pretrained", help="comma list of checkpoint paths or 'none'")
    a.add_argument("--train", dest="train_manifest", help="training manifest")
    a.add_argument("--dev", dest="dev_manifest", help="dev manifest")
    a.add_argument("--test", dest="test_manifest", help="test manifest")
    a.add_argument("--out", help="directory for report.txt and report.jsonl")
    a.add_argument("--workers", type=int, help="cells trained in parallel")
    a.add_argument("--composite", action=argparse.BooleanOptionalAction, default=None,
                   help="append a per-task best-of-grid row")
    _add_options(a, {k: v for k, v in MODEL_OPTIONS.items() if k not in ("num_blocks", "lstm_layers", "unidirectional", "tasks")})
    _add_options(a, TRAIN_OPTIONS)
    return parser


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML/JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    flat = {}
    for key, value in data.items():
        if isinstance(value, dict) and key in ("model", "train", "data", "grid"):
            flat.update(value)
        else:
            flat[key] = value
    return {k.replace("-", "_"): v for k, v in flat.items()}


def resolve(args: argparse.Namespace, defaults: dict, file_values: dict) -> tuple[dict, dict]:
    """Merge flag > file > default; returns (values, source of each value)."""
    known = set(vars(args)) - {"command", "config", "verbose"}
    unknown = sorted(set(file_values) - known)
    if unknown:
        raise ConfigError(f"unknown keys in config file: {unknown}")
    values, source = {}, {}
    for key in sorted(known):
        flag = getattr(args, key)
        if flag is not None:
            values[key], source[key] = flag, "flag"
        elif key in file_values:
            values[key], source[key] = file_values[key], "file"
        else:
            values[key], source[key] = defaults.get(key), "default"
    return values, source


def print_settings(command: str, values: dict, source: dict) -> None:
    print(f"sedkit {command} settings:", file=sys.stderr)
    for key in sorted(values):
        print(f"  {key} = {values[key]!r} ({source[key]})", file=sys.stderr)


def _defaults(*tables: dict) -> dict:
    out = {}
    for t in tables:
        out.update({k: v[1] for k, v in t.items()})
    return out


def _require(values: dict, *keys: str) -> None:
    missing = [k for k in keys if not values.get(k)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_manifest", "").replace("_", "-") for k in missing))


def model_config_from(values: dict) -> ModelConfig:
    return ModelConfig(
        num_blocks=int(values.get("num_blocks", 12)),
        d_model=int(values["d_model"]),
        attention_heads=int(values["attention_heads"]),
        ff_expansion=int(values["ff_expansion"]),
        conv_kernel=int(values["conv_kernel"]),
        dropout_p=float(values["dropout"]),
        lstm_layers=int(values.get("lstm_layers", 2)),
        lstm_hidden=int(values["lstm_hidden"]),
        lstm_bidirectional=not values.get("unidirectional", False),
        proj_dim=int(values["proj_dim"]),
        head_mode=str(values["head_mode"]),
        task_subset=build_task_config(str(values.get("tasks", "five"))),
        augment=AugmentPolicy(enabled=bool(values["augment"])),
    )


def train_config_from(values: dict) -> TrainConfig:
    return TrainConfig(
        lr=float(values["lr"]),
        batch_size=int(values["batch_size"]),
        max_epochs=int(values["max_epochs"]),
        patience=int(values["patience"]),
        loss=str(values["loss"]),
        gamma=float(values["gamma"]),
        alpha=float(values["alpha"]),
        weighted_focal=bool(values["weighted_focal"]),
        seed=int(values["seed"]),
    )


def _task_list(spec) -> tuple[str, ...]:
    return TASKS if spec in (None, "") else build_task_config(str(spec))


# -- subcommands ------------------------------------------------------------------

def cmd_gen_data(v: dict) -> int:
    _require(v, "out")
    try:
        probs = tuple(float(x) for x in str(v["probs"]).split(","))
    except ValueError as exc:
        raise ConfigError(f"--probs must be five comma-separated numbers: {exc}") from exc
    if len(probs) != 5:
        raise ConfigError(f"--probs needs five values for {list(MARKER_OF.values())}, got {len(probs)}")
    spec = SynthSpec(num_clips=int(v["clips"]), clip_seconds=float(v["seconds"]), probs=probs, seed=int(v["seed"]),
                     num_speakers=v["speakers"])
    out = Path(v["out"])
    manifest, records = synth_generate(spec, out)
    splits = split_by_speaker(records, seed=int(v["split_seed"]))
    for name, part in zip(("train", "dev", "test"), splits):
        write_manifest(out / f"{name}.jsonl", [_relative(r, out) for r in part])
    counts = ", ".join(f"{n}={len(p)}" for n, p in zip(("train", "dev", "test"), splits))
    print(f"wrote {len(records)} clips to {manifest} ({counts})")
    return EXIT_OK


def _relative(record, root: Path):
    try:
        return replace(record, audio=str(Path(record.audio).relative_to(root)))
    except ValueError:
        return record


def _features(path: str) -> FeatureSet:
    return FeatureSet.from_manifest(path)


def cmd_train(v: dict) -> int:
    _require(v, "train_manifest", "dev_manifest", "out")
    model_cfg = model_config_from(v)
    train_cfg = train_config_from(v)
    out = Path(v["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out}: {exc}") from exc
    train_set, dev_set = _features(v["train_manifest"]), _features(v["dev_manifest"])
    init = load_checkpoint(v["init"]) if v.get("init") else None
    (out / "config.json").write_text(
        json.dumps({"model": model_cfg.to_dict(), "train": train_cfg.to_dict()}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    ckpt, history = train(
        model_cfg, train_set, dev_set, train_cfg, log_path=out / "history.jsonl", init=init,
        on_epoch=lambda r: log.info("epoch %d loss %.4f dev F1-final %.2f", r["epoch"], r["train_loss"], 100 * r["dev_f1_final"]),
    )
    save_checkpoint(ckpt, out / "model.sedk")
    print(f"best epoch {history.best_epoch}: dev F1-final {100 * ckpt.best_metric:.2f}; saved {out / 'model.sedk'}")
    return EXIT_OK


def cmd_eval(v: dict) -> int:
    _require(v, "ckpt", "data")
    ckpt = load_checkpoint(v["ckpt"])
    model = ckpt.build_model()
    tasks = ckpt.config.task_subset if not v.get("tasks") else _task_list(v["tasks"])
    report = evaluate(model, _features(v["data"]), tasks)
    print(report.format_table(Path(v["ckpt"]).stem))
    print(report.format_detail())
    if v.get("report"):
        Path(v["report"]).write_text(report.to_json(checkpoint=str(v["ckpt"]), data=str(v["data"])) + "\n", encoding="utf-8")
    return EXIT_OK


def score_manifests(hyp_path: str, ref_path: str, tasks: Sequence[str] = TASKS) -> EvalReport:
    hyp, ref = load_manifest(hyp_path), load_manifest(ref_path)
    ref_by_id = {r.id: r for r in ref}
    hyp_ids = [r.id for r in hyp]
    if len(set(hyp_ids)) != len(hyp_ids) or len(ref_by_id) != len(ref):
        raise DataError("manifests contain duplicate clip ids")
    if set(hyp_ids) != set(ref_by_id):
        missing = sorted(set(ref_by_id) - set(hyp_ids))[:3]
        extra = sorted(set(hyp_ids) - set(ref_by_id))[:3]
        raise DataError(f"clip ids differ between manifests (missing {missing}, unexpected {extra})")
    cols = [TASKS.index(t) for t in tasks]
    p = np.array([r.labels for r in hyp], dtype=np.int64).reshape(-1, 5)[:, cols]
    r = np.array([ref_by_id[i].labels for i in hyp_ids], dtype=np.int64).reshape(-1, 5)[:, cols]
    if len(p) == 0:
        raise DataError("manifests are empty")
    return EvalReport.from_counts(accumulate_confusion(p, r, tuple(tasks)))


def cmd_score(v: dict) -> int:
    _require(v, "hyp", "ref")
    report = score_manifests(v["hyp"], v["ref"], _task_list(v.get("tasks")))
    print(report.format_table("hyp"))
    print(report.format_detail())
    c = report.counts
    for k, t in enumerate(c.tasks):
        print(f"{MARKER_OF[t]}: TP={c.tp[k]} FP={c.fp[k]} FN={c.fn[k]} TN={c.tn[k]}")
    return EXIT_OK


def cmd_ablate(v: dict) -> int:
    _require(v, "train_manifest", "dev_manifest", "test_manifest")
    grid = grid_from_mapping(v)
    base_model = model_config_from({**v, "num_blocks": 0, "lstm_layers": 0, "tasks": "five"})
    base_train = train_config_from(v)
    sets = [_features(v[k]) for k in ("train_manifest", "dev_manifest", "test_manifest")]
    workers = int(v.get("workers") or 1)
    results = run_grid(grid, base_model, base_train, *sets, global_seed=int(v["seed"]), workers=workers)
    table, records = render_report(results, composite=bool(v.get("composite")))
    print(table)
    jsonl = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    if v.get("out"):
        out = Path(v["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(table + "\n", encoding="utf-8")
        (out / "report.jsonl").write_text(jsonl, encoding="utf-8")
    else:
        sys.stdout.write(jsonl)
    failed = [r for r in results if r.error is not None]
    if any(r.numerical for r in failed):
        return EXIT_NUMERIC
    return EXIT_DATA if failed else EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, (GEN_OPTIONS,)),
    "train": (cmd_train, (MODEL_OPTIONS, TRAIN_OPTIONS)),
    "eval": (cmd_eval, ()),
    "score": (cmd_score, ()),
    "ablate": (cmd_ablate, (MODEL_OPTIONS, TRAIN_OPTIONS)),
}
ABLATE_DEFAULTS = {"layers": "3,6,12,15", "bilstm": "bi2", "strategy": "five", "pretrained": "none", "workers": 1, "composite": False}


def run_cli(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                            format="%(name)s: %(message)s")
        fn, tables = COMMANDS[args.command]
        defaults = _defaults(*tables)
        if args.command == "ablate":
            defaults.update(ABLATE_DEFAULTS)
        values, source = resolve(args, defaults, load_config_file(args.config))
        print_settings(args.command, values, source)
        return fn(values)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"sedkit: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"sedkit: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ParseError, FormatError, ContractError, ShapeError, SedkitError, OSError) as exc:
        print(f"sedkit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
