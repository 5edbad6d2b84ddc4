"""Command-line entry point: ``recmeta <subcommand> [options]``.

Pipeline options can come from an INI config file (``--config``), whose
``[recmeta]`` section uses the option names below with underscores::

    [recmeta]
    input = ../fixtures/toy_interactions.csv
    rating_col = rating
    out = ../out/toy
    seed = 0

Relative paths in the file resolve against the file's directory. Flags given
on the command line override the file. The cache directory for fitted models
and performance matrices is ``--cache-dir`` or the ``RECMETA_CACHE_DIR``
environment variable; without either nothing is cached.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import csv
import dataclasses
import hashlib
import json
import logging
import os
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path

from recmeta import __version__
from recmeta import code_metrics as cm
from recmeta.dataset import Schema, dataset_stats, filter_min_interactions, load_interactions, temporal_split
from recmeta.experiment import DEFAULT_GRID, ExperimentConfig, ExperimentReport, StageError, run_meta_experiment, tune_gbt
from recmeta.ground_truth import build_performance_matrix, read_matrix, write_matrix
from recmeta.meta_learner import build_user_algo_dataset, build_user_only_dataset, train_meta_model
from recmeta.portfolio import DEFAULT_MANIFEST, load_manifest
from recmeta.user_features import as_mapping, user_feature_matrix, write_features

log = logging.getLogger("recmeta")

CACHE_ENV = "RECMETA_CACHE_DIR"


@dataclass
class RunConfig:
    input: Path | None = None
    format: str = "csv"
    user_col: str = "user_id"
    item_col: str = "item_id"
    time_col: str = "timestamp"
    rating_col: str | None = None
    manifest: Path = DEFAULT_MANIFEST
    out: Path = Path("out")
    dataset_name: str | None = None
    seed: int = 0
    k: int = 10
    min_interactions: int = 10
    train_fraction: float = 0.8
    n_folds: int = 5
    sba_global: bool = False
    lenient: bool = False
    tie_mode: str = "value"
    threads: int = 1
    cache_dir: Path | None = None

    def schema(self) -> Schema:
        return Schema(self.user_col, self.item_col, self.time_col, self.rating_col)

    def name(self) -> str:
        return self.dataset_name or (self.input.stem if self.input else "dataset")

    def experiment(self) -> ExperimentConfig:
        return ExperimentConfig(
            n_folds=self.n_folds,
            seed=self.seed,
            k=self.k,
            sba_global=self.sba_global,
            tie_mode=self.tie_mode,
            threads=self.threads,
        )


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _convert(key: str, text):
    kind = _FIELD_TYPES[key]
    if not isinstance(text, str):
        return text
    if "bool" in kind:
        low = text.strip().lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"{key}: expected a boolean, got {text!r}")
        return low in ("1", "true", "yes", "on")
    if kind.startswith("int"):
        return int(text)
    if kind.startswith("float"):
        return float(text)
    if "Path" in kind:
        return Path(text)
    return text


def load_config_file(path: Path) -> dict:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    if not cp.has_section("recmeta"):
        raise ValueError(f"{path}: no [recmeta] section")
    out = {}
    for key, value in cp["recmeta"].items():
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ValueError(f"{path}: unknown key {key!r}")
        out[key] = _convert(key, value)
        if isinstance(out[key], Path) and not out[key].is_absolute():
            out[key] = (path.parent / out[key]).resolve()
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(Path(args.config)))
    for key in _FIELD_TYPES:
        if key in vars(args):
            values[key] = _convert(key, getattr(args, key))
    if values.get("cache_dir") is None and os.environ.get(CACHE_ENV):
        values["cache_dir"] = Path(os.environ[CACHE_ENV])
    cfg = RunConfig(**values)
    if cfg.tie_mode not in ("value", "index"):
        raise ValueError("tie_mode must be 'value' or 'index'")
    if cfg.format not in ("csv", "tsv"):
        raise ValueError("format must be csv or tsv")
    if cfg.threads < 1:
        raise ValueError("threads must be >= 1")
    return cfg


# stages ---------------------------------------------------------------------

@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def _need_input(cfg: RunConfig) -> Path:
    if cfg.input is None:
        raise ValueError("no input dataset (use --input or the config file)")
    if not Path(cfg.input).is_file():
        raise FileNotFoundError(f"input {cfg.input} does not exist")
    return Path(cfg.input)


def prepare(cfg: RunConfig):
    with stage("ingest"):
        ds = load_interactions(_need_input(cfg), cfg.format, cfg.schema(), cfg.lenient)
        if ds.skipped_rows:
            log.warning("skipped %d unparseable rows", ds.skipped_rows)
        raw_stats = dataset_stats(ds)
        ds = filter_min_interactions(ds, cfg.min_interactions)
    with stage("split"):
        split = temporal_split(ds, cfg.train_fraction)
    return ds, split, raw_stats


def load_portfolio(cfg: RunConfig):
    with stage("portfolio"):
        return load_manifest(cfg.manifest)


def _stats_json(raw, filtered, skipped: int) -> dict:
    return {"raw": dataclasses.asdict(raw), "filtered": dataclasses.asdict(filtered), "skipped_rows": skipped}


def ground_truth(cfg: RunConfig, ds, split, specs):
    """Performance matrix, reusing a cached copy keyed by content hashes."""
    with stage("ground-truth"):
        key_src = {
            "dataset": ds.content_hash(),
            "specs": [s.spec_hash() for s in specs],
            "k": cfg.k,
            "train_fraction": cfg.train_fraction,
            "version": __version__,
        }
        key = hashlib.sha256(json.dumps(key_src, sort_keys=True).encode()).hexdigest()[:32]
        cached = Path(cfg.cache_dir) / "matrices" / f"{key}.csv" if cfg.cache_dir else None
        if cached is not None and cached.is_file():
            log.info("performance matrix from cache %s", cached)
            return read_matrix(cached), key
        model_cache = Path(cfg.cache_dir) / "models" if cfg.cache_dir else None
        P = build_performance_matrix(split, specs, cfg.k, cfg.threads, model_cache)
        if cached is not None:
            cached.parent.mkdir(parents=True, exist_ok=True)
            write_matrix(P, cached, key_src)
        return P, key


def features(cfg: RunConfig, split, specs, user_ids):
    with stage("features"):
        ids, U = user_feature_matrix(split, list(user_ids))
        vectors = [cm.validate(v, v.algo_id) for v in cm.portfolio_features(specs)]
    return ids, U, vectors


# subcommands ----------------------------------------------------------------

def cmd_ingest(cfg: RunConfig) -> int:
    ds, _, raw = prepare(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "interactions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "item_id", "timestamp", "rating"])
        for it in ds.interactions():
            w.writerow([it.user_id, it.item_id, it.timestamp, "" if it.rating is None else repr(it.rating)])
    stats = _stats_json(raw, dataset_stats(ds), ds.skipped_rows)
    (out / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(stats["filtered"], sort_keys=True))
    return 0


def cmd_ground_truth(cfg: RunConfig) -> int:
    ds, split, raw = prepare(cfg)
    specs = load_portfolio(cfg)
    P, key = ground_truth(cfg, ds, split, specs)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_matrix(P, out / "performance.csv", {"cache_key": key, "k": cfg.k, "train_fraction": cfg.train_fraction})
    stats = _stats_json(raw, dataset_stats(ds), ds.skipped_rows)
    stats["performance_shape"] = list(P.shape)
    (out / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"performance matrix {P.shape[0]} users x {P.shape[1]} algorithms -> {out / 'performance.csv'}")
    return 0


def cmd_features(cfg: RunConfig) -> int:
    ds, split, _ = prepare(cfg)
    specs = load_portfolio(cfg)
    user_ids = [u for u in split.train.user_ids if split.test.get(u)]
    ids, U, vectors = features(cfg, split, specs, user_ids)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_features(out / "user_features.csv", ids, U)
    cm.write_feature_manifest(out / "algo_features.csv", vectors)
    print(f"{len(ids)} user vectors, {len(vectors)} algorithm vectors -> {out}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    ds, split, _ = prepare(cfg)
    specs = load_portfolio(cfg)
    P, _ = ground_truth(cfg, ds, split, specs)
    ids, U, vectors = features(cfg, split, specs, P.user_ids)
    F = as_mapping(ids, U)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with stage("train"):
        for data in (build_user_only_dataset(P, F), build_user_algo_dataset(P, F, vectors)):
            model = train_meta_model(data, tune_gbt(data, DEFAULT_GRID, cfg.seed))
            path = out / f"model_{data.kind}.json"
            path.write_text(model.to_json() + "\n", encoding="utf-8")
            print(f"{data.kind}: {len(data)} rows -> {path}")
    return 0


def cmd_run(cfg: RunConfig) -> int:
    ds, split, _ = prepare(cfg)
    specs = load_portfolio(cfg)
    P, _ = ground_truth(cfg, ds, split, specs)
    ids, U, vectors = features(cfg, split, specs, P.user_ids)
    with stage("experiment"):
        report = run_meta_experiment(P, as_mapping(ids, U), vectors, cfg.experiment(), cfg.name())
    with stage("report"):
        report.write(cfg.out)
    sys.stdout.write(report.to_text())
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    with stage("report"):
        reports = [ExperimentReport.from_json(Path(p).read_text(encoding="utf-8")) for p in args.reports]
        names = [r.dataset for rep in reports for r in rep.rows]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate dataset names across reports: {names}")
        combined = ExperimentReport.combine(reports)
        if args.out:
            combined.write(args.out, args.stem)
    sys.stdout.write(combined.to_text())
    return 0


def cmd_code_metrics(args: argparse.Namespace) -> int:
    with stage("code-metrics"):
        if args.ast_json and len(args.files) != 1:
            raise ValueError("--ast-json applies to exactly one input file")
        vectors = []
        if args.manifest:
            vectors += cm.load_feature_manifest(args.manifest)
        if args.portfolio:
            vectors += cm.portfolio_features(load_manifest(args.portfolio), args.profile)
        for f in args.files:
            vectors.append(cm.extract_features(f, None, args.profile, args.ast_json))
        if not vectors:
            raise ValueError("no input files, --manifest or --portfolio given")
        vectors = [cm.validate(v, v.algo_id) for v in vectors]
        if args.out:
            cm.write_feature_manifest(args.out, vectors)
        else:
            w = csv.writer(sys.stdout, lineterminator="\n")
            w.writerow(["algo_id", *cm.FEATURE_NAMES])
            for v in vectors:
                w.writerow([v.algo_id, *(repr(float(x)) for x in v.values())])
    return 0


def cmd_clear_cache(cfg: RunConfig) -> int:
    if cfg.cache_dir and Path(cfg.cache_dir).is_dir():
        shutil.rmtree(cfg.cache_dir)
    return 0


# parser ---------------------------------------------------------------------

def _pipeline_options() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    g = p.add_argument_group("pipeline options (override the config file)")
    g.add_argument("--config", help="INI file with a [recmeta] section of option defaults")
    g.add_argument("--input", "-i", default=S, help="interaction log (CSV/TSV with header)")
    g.add_argument("--format", choices=("csv", "tsv"), default=S, help="input format (default csv)")
    g.add_argument("--user-col", dest="user_col", default=S, help="user id column (default user_id)")
    g.add_argument("--item-col", dest="item_col", default=S, help="item id column (default item_id)")
    g.add_argument("--time-col", dest="time_col", default=S, help="timestamp column (default timestamp)")
    g.add_argument("--rating-col", dest="rating_col", default=S, help="rating column; omit for implicit data")
    g.add_argument("--manifest", default=S, help="portfolio manifest INI (default: built-in nine members)")
    g.add_argument("--out", "-o", default=S, help="output directory (default out)")
    g.add_argument("--dataset-name", dest="dataset_name", default=S, help="row label in the report")
    g.add_argument("--seed", type=int, default=S, help="base seed for folds and meta-learners (default 0)")
    g.add_argument("--k", type=int, default=S, help="NDCG cut-off (default 10)")
    g.add_argument("--min-interactions", dest="min_interactions", type=int, default=S,
                   help="drop users with fewer interactions (default 10)")
    g.add_argument("--train-fraction", dest="train_fraction", type=float, default=S,
                   help="per-user chronological train share (default 0.8)")
    g.add_argument("--n-folds", dest="n_folds", type=int, default=S, help="user-grouped CV folds (default 5)")
    g.add_argument("--sba-global", dest="sba_global", action="store_true", default=S,
                   help="choose SBA on the full matrix instead of per training fold")
    g.add_argument("--lenient", action="store_true", default=S, help="skip unparseable rows instead of failing")
    g.add_argument("--tie-mode", dest="tie_mode", choices=("value", "index"), default=S,
                   help="top-k accuracy counting: any tied best (value) or lowest-index best (index)")
    g.add_argument("--threads", type=int, default=S, help="worker cap; results do not depend on it (default 1)")
    g.add_argument("--cache-dir", dest="cache_dir", default=S, help=f"artifact cache (default ${CACHE_ENV})")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recmeta", description="Per-user recommender selection with meta-learning.", allow_abbrev=False
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = _pipeline_options()

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_, allow_abbrev=False)
        sp.set_defaults(func=fn, pipeline=True)
        return sp

    add("ingest", cmd_ingest, "load, filter and summarize an interaction log")
    add("ground-truth", cmd_ground_truth, "fit the portfolio and write the NDCG performance matrix")
    add("features", cmd_features, "write user and algorithm feature CSVs")
    add("train", cmd_train, "tune and train both meta-learners on all users")
    add("run", cmd_run, "full cross-validated experiment and report")
    add("clear-cache", cmd_clear_cache, "delete the artifact cache directory")

    sp = sub.add_parser("code-metrics", help="static code metrics for source files", allow_abbrev=False)
    sp.add_argument("files", nargs="*", help="source files; the algo_id is the file stem")
    sp.add_argument("--manifest", help="existing feature CSV to validate and include")
    sp.add_argument("--portfolio", help="portfolio manifest INI; analyze its members' sources")
    sp.add_argument("--profile", default="python", choices=sorted(cm.PROFILES), help="language profile")
    sp.add_argument("--ast-json", dest="ast_json", help="external syntax tree JSON for a single input file")
    sp.add_argument("--out", "-o", help="output CSV (default stdout)")
    sp.set_defaults(func=cmd_code_metrics, pipeline=False)

    sp = sub.add_parser("report", help="combine experiment report JSON files", allow_abbrev=False)
    sp.add_argument("reports", nargs="+", help="report.json files from `run`")
    sp.add_argument("--out", "-o", help="directory for the combined CSV/TXT/JSON")
    sp.add_argument("--stem", default="report", help="output file stem (default report)")
    sp.set_defaults(func=cmd_report, pipeline=False)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if args.pipeline:
            with stage("config"):
                cfg = resolve_config(args)
            return args.func(cfg)
        return args.func(args)
    except StageError as exc:
        print(f"recmeta: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
