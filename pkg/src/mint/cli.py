"""Command-line entry point.

Verbs::

    mint preprocess INPUT_DIR --out STORE_ROOT [--config FILE]
    mint stats [STORE_ROOT] --out stats.csv
    mint sample-packs [STORE_ROOT] --sizes 16,32 --packs 3 --seed 0 --out DIR
    mint train --config FILE [--seed S] [--out RUNS] [--sizes 2,4] [--packs K]
    mint ablate --config FILE [--which shuffle,context_switch] ...
    mint infer RUN_OR_CHECKPOINT... [--stores ROOT] [--networks a,b] --out DIR
    mint eval PREDICTION_DIR --out DIR

Configuration files are flat ``key = value`` text (``#`` starts a comment).
Values are Python literals; anything else is taken as a string, and list
keys also accept comma-separated names. A run's ``manifest.json`` is itself
accepted as ``--config`` to re-run it.

The default data root is ``$MINT_DATA_ROOT`` (else ``./data``). Every command
exits 0 on success, 1 on error and 2 when only some items failed; failures
are summarised as one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import ast
import csv
import json
import logging
import os
import shutil
import sys
import time
import warnings
from dataclasses import asdict, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .dtdg import (
    LabelParams,
    build_temporal_graph,
    find_stores,
    ingest_edge_stream,
    load_store,
    network_stats,
    save_store,
    write_stats_csv,
)
from .evaluation import (
    AGGREGATE_HEADER,
    METRICS_HEADER,
    PERSISTENCE,
    PredictionSeries,
    aggregate,
    evaluate,
    persistence_forecast,
    write_rows,
    zero_shot_infer,
)
from .models import ModelConfig
from .training import (
    InputCache,
    TrainConfig,
    load_checkpoint,
    mint_train,
    save_checkpoint,
    train_single,
    write_epoch_logs,
)

log = logging.getLogger("mint")

DATA_ROOT_ENV = "MINT_DATA_ROOT"
EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2
CHECKPOINT_FILE = "model.ckpt"
INDEX_HEADER = ("method", "network", "zero_shot", "path")

_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"model", "label_params"}
_LABEL_KEYS = {"n", "delta1", "delta2"}
_RUN_KEYS = {"name", "data_root", "train", "test"}
CONFIG_KEYS = _MODEL_KEYS | _TRAIN_KEYS | _LABEL_KEYS | _RUN_KEYS
_LIST_KEYS = {"train", "test"}


class CommandError(Exception):
    """Failure reported to the user with a non-zero exit status."""

    def __init__(self, message: str, failures: list | None = None, code: int = EXIT_ERROR):
        super().__init__(message)
        self.failures = failures or []
        self.code = code


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CommandError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise CommandError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _literal(value)
    return out


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise CommandError(f"config file {path} not found")
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        cfg = data.get("config", data)
        unknown = set(cfg) - CONFIG_KEYS
        if unknown:
            raise CommandError(f"unknown config keys: {sorted(unknown)}")
        return dict(cfg)
    return parse_config_text(text)


def _names(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        value = value.strip()
        if value.startswith("@"):
            return read_roster(value[1:])
        return [v.strip() for v in value.split(",") if v.strip()]
    return [str(v) for v in value]


def _ints(text: str | None) -> list[int]:
    if not text:
        return []
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CommandError(f"expected comma-separated integers, got {text!r}") from None
    if any(v < 1 for v in vals):
        raise CommandError("sizes must be positive")
    return vals


def label_params_from(cfg: dict) -> LabelParams:
    d = LabelParams()
    try:
        return LabelParams(int(cfg.get("n", d.n)), int(cfg.get("delta1", d.delta1)), int(cfg.get("delta2", d.delta2)))
    except ValueError as e:
        raise CommandError(str(e)) from None


def train_config_from(cfg: dict, seed: int | None = None, **overrides) -> TrainConfig:
    """Build a TrainConfig; unspecified keys take the mode's documented defaults."""
    mode = cfg.get("mode", "mint")
    factory = {"single": TrainConfig.single, "mint": TrainConfig.mint}.get(mode)
    if factory is None:
        raise CommandError(f"unknown mode {mode!r}")
    kw = {k: cfg[k] for k in _TRAIN_KEYS if k in cfg and k != "mode"}
    kw.update(overrides)
    if seed is not None:
        kw["seed"] = seed
    try:
        model = ModelConfig(**{k: cfg[k] for k in _MODEL_KEYS if k in cfg})
        return factory(model=model, label_params=label_params_from(cfg), **kw)
    except (TypeError, ValueError) as e:
        raise CommandError(f"invalid configuration: {e}") from None


def data_root(cfg: dict | None = None, override: str | None = None) -> Path:
    if override:
        return Path(override)
    if cfg and cfg.get("data_root"):
        return Path(cfg["data_root"])
    return Path(os.environ.get(DATA_ROOT_ENV, "data"))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(directory: Path, command: str, config: dict, seeds: list[int], train: list[str],
                   test: list[str], started: str, **extra) -> Path:
    overlap = sorted(set(train) & set(test))
    if overlap:
        raise CommandError(f"train and test rosters overlap: {overlap}")
    manifest = {
        "command": command, "config": _jsonable(config), "seeds": seeds,
        "roster": {"train": train, "test": test}, "output_dir": str(directory),
        "started": started, "finished": _now(), **_jsonable(extra),
    }
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# stores and rosters
# ---------------------------------------------------------------------------

def store_index(root: Path) -> dict[str, Path]:
    """Network name -> store directory for every store under ``root``."""
    if not root.exists():
        raise CommandError(f"store root {root} does not exist")
    index = {}
    for p in find_stores(root):
        name = json.loads((p / "manifest.json").read_text())["name"]
        index[name] = p
    return index


def load_networks(root: Path, names: list[str]):
    index = store_index(root)
    missing = [n for n in names if n not in index]
    if missing:
        raise CommandError(f"networks not found under {root}: {missing}")
    return [load_store(index[n]) for n in names]


def read_roster(path: str | Path) -> list[str]:
    lines = Path(path).read_text().splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def sample_packs(pool: list[str], sizes: list[int], packs: int, seed: int) -> dict[int, list[list[str]]]:
    """Per size, ``packs`` pairwise-disjoint rosters drawn from ``pool``.

    Deterministic in ``seed``; sizes are sampled independently of each other.
    """
    pool = sorted(set(pool))
    if packs < 1:
        raise CommandError("packs must be >= 1")
    for m in sizes:
        if m * packs > len(pool):
            raise CommandError(
                f"cannot draw {packs} disjoint packs of {m} from a pool of {len(pool)} "
                f"(at most {len(pool) // m} fit)")
    out = {}
    for m in sizes:
        perm = np.random.default_rng([seed, m]).permutation(len(pool))
        out[m] = [sorted(pool[i] for i in perm[k * m:(k + 1) * m]) for k in range(packs)]
    return out


def pack_label(k: int) -> str:
    return chr(ord("A") + k) if k < 26 else f"P{k}"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    cfg = load_config(args.config)
    params = label_params_from(cfg)
    src = Path(args.input) if args.input else data_root(cfg) / "raw"
    files = sorted(src.glob("*.csv")) if src.is_dir() else []
    if not files:
        raise CommandError(f"no edge CSV files in {src}")
    out = Path(args.out or data_root(cfg) / "stores")
    failures, written = [], []
    for f in files:
        try:
            g = build_temporal_graph(f.stem, ingest_edge_stream(f), params)
            target = out / f.stem
            if (target / "manifest.json").exists():
                shutil.rmtree(target)
            save_store(g, target)
            written.append(f.stem)
        except (ValueError, OSError) as e:
            failures.append({"item": str(f), "error": str(e)})
    log.info("preprocessed %d of %d files", len(written), len(files))
    if failures:
        code = EXIT_PARTIAL if written else EXIT_ERROR
        raise CommandError(f"{len(failures)} of {len(files)} files failed", failures, code)
    return EXIT_OK


def cmd_stats(args) -> int:
    root = Path(args.stores) if args.stores else data_root() / "stores"
    index = store_index(root)
    if not index:
        raise CommandError(f"no network stores under {root}")
    stats, failures = [], []
    for name in sorted(index):
        try:
            stats.append(network_stats(load_store(index[name])))
        except (ValueError, OSError) as e:
            failures.append({"item": name, "error": str(e)})
    out = Path(args.out or "stats.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_stats_csv(stats, out)
    if failures:
        raise CommandError("some stores could not be summarised", failures,
                           EXIT_PARTIAL if stats else EXIT_ERROR)
    return EXIT_OK


def cmd_sample_packs(args) -> int:
    if args.pool:
        pool = read_roster(args.pool)
    else:
        pool = list(store_index(Path(args.stores) if args.stores else data_root() / "stores"))
    sizes = _ints(args.sizes)
    if not sizes:
        raise CommandError("--sizes is required")
    packs = sample_packs(pool, sizes, args.packs, args.seed)
    out = Path(args.out or "packs")
    for m, rosters in packs.items():
        for k, roster in enumerate(rosters):
            path = out / f"mint-{m}" / f"pack-{pack_label(k)}.txt"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("\n".join(roster) + "\n")
    return EXIT_OK


def train_run(run_dir: Path, cfg: dict, tcfg: TrainConfig, train: list[str], test: list[str],
              root: Path, command: str) -> list[Path]:
    """Train one run into ``run_dir``; returns the written checkpoint paths."""
    overlap = sorted(set(train) & set(test))
    if overlap:
        raise CommandError(f"train and test rosters overlap: {overlap}")
    if not train:
        raise CommandError("empty train roster")
    started = _now()
    graphs = load_networks(root, train)
    for g in graphs:
        if g.label_params != tcfg.label_params:
            raise CommandError(f"{g.name} was labelled with {g.label_params}, config asks for {tcfg.label_params}")
    ckpt_dir, log_dir = run_dir / "checkpoints", run_dir / "logs"
    for d in (ckpt_dir, log_dir, run_dir / "predictions", run_dir / "reports"):
        d.mkdir(parents=True, exist_ok=True)
    cache = InputCache()
    written = []
    if tcfg.mode == "single":
        jobs = [([g], ckpt_dir / f"{g.name}.ckpt", log_dir / f"{g.name}.csv") for g in graphs]
    else:
        jobs = [(graphs, ckpt_dir / CHECKPOINT_FILE, log_dir / "epochs.csv")]
    for D, ckpt_path, log_path in jobs:
        trainer = train_single if tcfg.mode == "single" else mint_train
        ckpt, logs = trainer(D[0] if tcfg.mode == "single" else D, tcfg, cache=cache)
        save_checkpoint(ckpt, ckpt_path)
        write_epoch_logs(logs, log_path)
        written.append(ckpt_path)
    run_cfg = {**cfg, "train": train, "test": test, "seed": tcfg.seed,
               "ablate_shuffle": tcfg.ablate_shuffle, "ablate_context_switch": tcfg.ablate_context_switch}
    write_manifest(run_dir, command, run_cfg, [tcfg.seed], train, test, started,
                   train_config=tcfg.to_dict(), checkpoints=[str(p.relative_to(run_dir)) for p in written])
    return written


def _runs(args, command: str, **overrides) -> int:
    cfg = load_config(args.config)
    if "seed" in cfg and args.seed is None:
        seed = int(cfg["seed"])
    else:
        seed = args.seed if args.seed is not None else 0
    tcfg = train_config_from(cfg, seed, **overrides)
    train, test = _names(cfg.get("train")), _names(cfg.get("test"))
    root = data_root(cfg, args.stores)
    base = Path(args.out or "runs") / str(cfg.get("name", "run"))
    sizes = _ints(args.sizes)
    if not sizes:
        train_run(base, cfg, tcfg, train, test, root, command)
        return EXIT_OK
    if tcfg.mode != "mint":
        raise CommandError("--sizes needs mode = mint")
    packs = sample_packs(train, sizes, args.packs, seed)
    failures = []
    for m, rosters in packs.items():
        for k, roster in enumerate(rosters):
            run_dir = base / f"mint-{m}" if args.packs == 1 else base / f"mint-{m}" / f"pack-{pack_label(k)}"
            try:
                train_run(run_dir, cfg, tcfg, roster, test, root, command)
            except CommandError as e:
                failures.append({"item": str(run_dir), "error": str(e)})
    if failures:
        total = sum(len(r) for r in packs.values())
        raise CommandError(f"{len(failures)} of {total} runs failed", failures,
                           EXIT_PARTIAL if len(failures) < total else EXIT_ERROR)
    return EXIT_OK


def cmd_train(args) -> int:
    return _runs(args, "train")


ABLATIONS = {"shuffle": "ablate_shuffle", "context_switch": "ablate_context_switch"}


def cmd_ablate(args) -> int:
    which = _names(args.which) or list(ABLATIONS)
    unknown = [w for w in which if w not in ABLATIONS and w != "both"]
    if unknown:
        raise CommandError(f"unknown ablation(s) {unknown}; choose from {sorted(ABLATIONS)} or both")
    base_out = Path(args.out or "runs")
    cfg_name = str(load_config(args.config).get("name", "run"))
    failures = []
    for w in which:
        flags = {f: True for f in ABLATIONS.values()} if w == "both" else {ABLATIONS[w]: True}
        sub = argparse.Namespace(**{**vars(args), "out": str(base_out / cfg_name / f"no-{w.replace('_', '-')}")})
        try:
            _runs(sub, "ablate", **flags)
        except CommandError as e:
            failures.append({"item": w, "error": str(e)})
    if failures:
        raise CommandError("some ablations failed", failures,
                           EXIT_PARTIAL if len(failures) < len(which) else EXIT_ERROR)
    return EXIT_OK


def _checkpoints(targets: list[str]) -> list[tuple[Path, dict | None]]:
    """Expand run directories into their checkpoints (with the run manifest)."""
    out = []
    for t in targets:
        p = Path(t)
        if p.is_dir():
            manifest = json.loads((p / "manifest.json").read_text()) if (p / "manifest.json").exists() else None
            found = sorted((p / "checkpoints").glob("*.ckpt")) if (p / "checkpoints").is_dir() else []
            found += sorted(p.glob("*.ckpt"))
            if not found:
                raise CommandError(f"no checkpoints in {p}")
            out.extend((f, manifest) for f in found)
        elif p.exists():
            out.append((p, None))
        else:
            raise CommandError(f"checkpoint {p} not found")
    return out


def _write_index(rows: list[dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=INDEX_HEADER)
        writer.writeheader()
        writer.writerows(rows)


def write_reports(series: list[PredictionSeries], out: Path, reference: str = PERSISTENCE) -> None:
    rows = evaluate(series)
    write_rows(rows, METRICS_HEADER, out / "metrics.csv")
    try:
        agg = aggregate(rows, reference=reference)
    except ValueError as e:
        log.warning("no aggregate report: %s", e)
        agg = []
    write_rows(agg, AGGREGATE_HEADER, out / "aggregate.csv")


def cmd_infer(args) -> int:
    root = data_root(override=args.stores)
    out = Path(args.out or "runs/infer")
    index_rows, series, failures = [], [], []
    cache = InputCache()
    graphs = {}
    ckpts = _checkpoints(args.checkpoints)
    for path, manifest in ckpts:
        ckpt = load_checkpoint(path)
        method = ckpt.method or path.stem
        if args.networks:
            names = _names(args.networks)
        elif manifest is not None and manifest["roster"]["test"]:
            names = manifest["roster"]["test"]
        elif ckpt.train_config is not None and ckpt.train_config.mode == "single":
            names = list(ckpt.roster)
        else:
            raise CommandError(f"{path}: no networks to score (pass --networks)")
        if ckpt.train_config is not None and ckpt.train_config.mode == "single":
            names = [n for n in names if n in ckpt.roster] or names
        for name in names:
            try:
                if name not in graphs:
                    graphs[name] = load_networks(root, [name])[0]
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    s = zero_shot_infer(ckpt, graphs[name], cache)
                s.method = method
                if not s.zero_shot:
                    log.warning("%s was in %s's training roster; flagged as not zero-shot", name, method)
                dest = out / "predictions" / method / f"{name}.csv"
                s.write_csv(dest)
                series.append(s)
                index_rows.append({"method": method, "network": name, "zero_shot": s.zero_shot,
                                   "path": str(dest.relative_to(out))})
            except (CommandError, ValueError, OSError) as e:
                failures.append({"item": f"{method}:{name}", "error": str(e)})
    for name, g in sorted(graphs.items()):
        try:
            s = persistence_forecast(g)
            dest = out / "predictions" / PERSISTENCE / f"{name}.csv"
            s.write_csv(dest)
            series.append(s)
            index_rows.append({"method": PERSISTENCE, "network": name, "zero_shot": True,
                               "path": str(dest.relative_to(out))})
        except ValueError as e:
            failures.append({"item": f"{PERSISTENCE}:{name}", "error": str(e)})
    _write_index(index_rows, out / "predictions" / "index.csv")
    if series:
        write_reports(series, out / "reports")
    if failures:
        raise CommandError("some networks could not be scored", failures,
                           EXIT_PARTIAL if series else EXIT_ERROR)
    return EXIT_OK


def read_predictions(directory: Path) -> list[PredictionSeries]:
    index = directory / "index.csv"
    if index.exists():
        base = directory.parent
        with open(index, newline="") as fh:
            return [PredictionSeries.read_csv(base / r["path"], r["network"], r["method"],
                                              r["zero_shot"] == "True") for r in csv.DictReader(fh)]
    # bare layout: <method>/<network>.csv
    return [PredictionSeries.read_csv(f, f.stem, f.parent.name)
            for f in sorted(directory.glob("*/*.csv"))]


def cmd_eval(args) -> int:
    src = Path(args.predictions)
    if (src / "predictions").is_dir():
        src = src / "predictions"
    if not src.is_dir():
        raise CommandError(f"prediction directory {src} not found")
    series = read_predictions(src)
    if not series:
        raise CommandError(f"no prediction files under {src}")
    write_reports(series, Path(args.out or src.parent / "reports"), reference=args.reference)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mint", description="Weekly growth prediction on token transaction networks: "
                                     "preprocessing, (multi-network) training and zero-shot evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="edge CSVs -> labelled snapshot stores")
    p.add_argument("input", nargs="?", help="directory of edge CSVs (default $MINT_DATA_ROOT/raw)")
    p.add_argument("--out", help="store root (default $MINT_DATA_ROOT/stores)")
    p.add_argument("--config")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("stats", help="per-network statistics table")
    p.add_argument("stores", nargs="?")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sample-packs", help="disjoint training rosters per size")
    p.add_argument("stores", nargs="?")
    p.add_argument("--pool", help="roster file listing the pool (default: every store)")
    p.add_argument("--sizes", required=True)
    p.add_argument("--packs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample_packs)

    for verb, func in (("train", cmd_train), ("ablate", cmd_ablate)):
        p = sub.add_parser(verb, help="train models" if verb == "train" else "train with ablation flags")
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="runs directory (default ./runs)")
        p.add_argument("--stores", help="store root (overrides config data_root)")
        p.add_argument("--sizes", help="comma-separated MiNT sizes for a scaling sweep")
        p.add_argument("--packs", type=int, default=1)
        if verb == "ablate":
            p.add_argument("--which", help="shuffle, context_switch or both (default: each separately)")
        p.set_defaults(func=func)

    p = sub.add_parser("infer", help="zero-shot predictions, persistence baseline and reports")
    p.add_argument("checkpoints", nargs="+", help="checkpoint files or run directories")
    p.add_argument("--stores")
    p.add_argument("--networks")
    p.add_argument("--out")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="metric and aggregate reports from prediction files")
    p.add_argument("predictions")
    p.add_argument("--out")
    p.add_argument("--reference", default=PERSISTENCE)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CommandError as e:
        code = e.code
        summary = {"command": args.command, "status": "partial" if code == EXIT_PARTIAL else "error",
                   "message": str(e), "failures": e.failures}
    except Exception as e:  # noqa: BLE001 - every failure leaves a machine-readable summary
        code = EXIT_ERROR
        summary = {"command": args.command, "status": "error", "message": f"{type(e).__name__}: {e}",
                   "failures": []}
    print(json.dumps(summary, sort_keys=True), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
