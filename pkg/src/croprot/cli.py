"""Command-line front end: ``croprot <subcommand> [--config run.cfg] ...``.

Settings come from an INI file with ``[data]``, ``[model]``, ``[train]``,
``[eval]`` and ``[synth]`` sections. Any key can be overridden from the
environment as ``CROPROT_<SECTION>_<KEY>`` (for example
``CROPROT_TRAIN_SEED=3``); command-line flags win over both.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .data import DataError, load_dataset
from .nn.layers import NumericalDivergence

ENV_PREFIX = "CROPROT_"
SECTIONS = ("data", "model", "train", "eval", "synth")
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("croprot")


class UsageError(Exception):
    pass


class RunConfig:
    """Layered settings: config file, then environment, then flags."""

    def __init__(self, path=None, env=None):
        self.parser = configparser.ConfigParser()
        for s in SECTIONS:
            self.parser.add_section(s)
        if path is not None:
            if not Path(path).is_file():
                raise UsageError(f"config file not found: {path}")
            try:
                self.parser.read(path)
            except configparser.Error as exc:
                raise UsageError(f"{path}: {exc}") from exc
            unknown = set(self.parser.sections()) - set(SECTIONS)
            if unknown:
                raise UsageError(f"{path}: unknown sections {sorted(unknown)}")
        env = os.environ if env is None else env
        for key, value in env.items():
            if not key.startswith(ENV_PREFIX):
                continue
            section, _, name = key[len(ENV_PREFIX):].lower().partition("_")
            if section in SECTIONS and name:
                self.parser.set(section, name, value)

    def set(self, section: str, key: str, value) -> None:
        if value is not None:
            self.parser.set(section, key, str(value))

    def get(self, section: str, key: str, default=None):
        return self.parser.get(section, key, fallback=default)

    def get_int(self, section, key, default=None):
        v = self.get(section, key)
        return default if v is None else int(v)

    def get_float(self, section, key, default=None):
        v = self.get(section, key)
        return default if v is None else float(v)

    def get_bool(self, section, key, default=False):
        v = self.get(section, key)
        return default if v is None else self.parser.getboolean(section, key)

    def items(self, section: str) -> dict[str, str]:
        return dict(self.parser.items(section))

    # paths
    @property
    def data_dir(self) -> Path:
        return Path(self.get("data", "dir", "data"))

    @property
    def cache_dir(self) -> Path:
        return Path(self.get("data", "cache", str(self.data_dir / "cache")))

    @property
    def run_dir(self) -> Path:
        return Path(self.get("train", "out", "run"))

    @property
    def checkpoint(self) -> Path:
        return Path(self.get("eval", "checkpoint", str(self.run_dir / "model.rota")))


def default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


# ---------------------------------------------------------------- helpers

def _dataset(cfg: RunConfig):
    d = cfg.data_dir
    names = {k: cfg.get("data", k, str(d / f"{k}.csv")) for k in ("parcels", "crops", "rs", "taxonomy")}
    for k in ("parcels", "crops", "rs"):
        if not Path(names[k]).is_file():
            raise DataError(f"missing {k} file: {names[k]}")
    taxonomy = names["taxonomy"] if Path(names["taxonomy"]).is_file() else None
    n_classes = cfg.get_int("data", "n_classes")
    return load_dataset(names["parcels"], names["crops"], names["rs"], taxonomy, n_classes=n_classes)


def _smooth(cfg: RunConfig, dataset, workers: int, rebuild: bool = False):
    from .prep import load_smooth_cache, prep_all, save_smooth_cache

    path = cfg.cache_dir / "smooth.rssm"
    if path.is_file() and not rebuild:
        return load_smooth_cache(path)
    smooth = prep_all(dataset.iter_series(), workers=workers)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_smooth_cache(path, smooth.values())
    return smooth


def _features(cfg: RunConfig, dataset, workers: int, rebuild: bool = False):
    from .features import features_all, load_feature_cache, save_feature_cache

    path = cfg.cache_dir / "features.feat"
    if path.is_file() and not rebuild:
        return load_feature_cache(path)
    feats = features_all(_smooth(cfg, dataset, workers), workers=workers)
    # round-trip through float32 so fresh and cached runs see identical inputs
    feats = {k: np.asarray(v, dtype=np.float32) for k, v in feats.items()}
    path.parent.mkdir(parents=True, exist_ok=True)
    save_feature_cache(path, feats)
    return feats


def _sequences(cfg: RunConfig, dataset, feats, year: int):
    from .cropdist import RADIUS_M
    from .pipeline import make_sequences

    T = cfg.get_int("data", "history", 10)
    radius = cfg.get_float("data", "radius_m", RADIUS_M)
    return make_sequences(dataset, feats, year, T=T, radius=radius)


def _dims(cfg: RunConfig, V: int):
    from .nn.model import Dims

    kw = {}
    for f in fields(Dims):
        if f.name != "V" and cfg.get("model", f.name) is not None:
            kw[f.name] = cfg.get_int("model", f.name)
    return Dims(V=V, **kw)


def _train_config(cfg: RunConfig, V: int):
    from .train import TrainConfig

    return TrainConfig(
        variant=cfg.get("model", "variant", "Final"),
        dims=_dims(cfg, V),
        lr=cfg.get_float("train", "lr", 1e-3),
        batch_size=cfg.get_int("train", "batch_size", 128),
        max_epochs=cfg.get_int("train", "max_epochs", 50),
        patience=cfg.get_int("train", "patience", 5),
        seed=cfg.get_int("train", "seed", 0),
        augment=cfg.get_bool("train", "augment", False),
        precision=cfg.get("train", "precision", "float32"),
    )


def _load_model(cfg: RunConfig):
    from .nn.checkpoint import load_checkpoint

    path = cfg.checkpoint
    if not path.is_file():
        raise DataError(f"checkpoint not found: {path}")
    params, _ = load_checkpoint(path)
    return params


def _eval_year(cfg: RunConfig) -> int:
    return cfg.get_int("eval", "year", 2020)


def _levels(cfg: RunConfig) -> list[str]:
    return [v.strip() for v in cfg.get("eval", "level", "c10").split(",") if v.strip()]


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.get("eval", "out", str(cfg.run_dir)))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: RunConfig, args) -> int:
    from .synth import gen_dataset, synth_config_from_items

    try:
        config = synth_config_from_items(cfg.items("synth").items())
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out) if args.out else cfg.data_dir
    paths = gen_dataset(config, out)
    for name, p in paths.items():
        print(f"{name}\t{p}")
    return EXIT_OK


def cmd_prep(cfg: RunConfig, args) -> int:
    smooth = _smooth(cfg, _dataset(cfg), args.workers, rebuild=True)
    print(f"smoothed\t{len(smooth)}\t{cfg.cache_dir / 'smooth.rssm'}")
    return EXIT_OK


def cmd_features(cfg: RunConfig, args) -> int:
    feats = _features(cfg, _dataset(cfg), args.workers, rebuild=True)
    print(f"features\t{len(feats)}\t{cfg.cache_dir / 'features.feat'}")
    return EXIT_OK


def cmd_dist(cfg: RunConfig, args) -> int:
    from .cropdist import RADIUS_M, distributions_for, save_distribution_csv

    dataset = _dataset(cfg)
    year = args.year if args.year is not None else _eval_year(cfg) - 1
    dists = distributions_for(dataset, year, radius=cfg.get_float("data", "radius_m", RADIUS_M))
    path = cfg.cache_dir / f"dist_{year}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    save_distribution_csv(path, dists)
    print(f"distributions\t{len(dists)}\t{path}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    from .nn.checkpoint import save_checkpoint
    from .train import train

    dataset = _dataset(cfg)
    feats = _features(cfg, dataset, args.workers)
    tr = _sequences(cfg, dataset, feats, cfg.get_int("train", "train_year", 2018))
    dev = _sequences(cfg, dataset, feats, cfg.get_int("train", "dev_year", 2019))
    config = _train_config(cfg, dataset.V)
    result = train(tr, dev, config)
    out = cfg.run_dir
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.rota", result.params, result.adam)
    (out / "train_log.tsv").write_text(result.log_text())
    print(f"checkpoint\t{out / 'model.rota'}\nbest_epoch\t{result.best_epoch}")
    if result.diverged:
        print("training diverged; kept the last good checkpoint", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    from .evaluate import evaluate, evaluate_thresholded
    from .train import predict

    dataset = _dataset(cfg)
    params = _load_model(cfg)
    seqs = _sequences(cfg, dataset, _features(cfg, dataset, args.workers), _eval_year(cfg))
    probs = predict(params, seqs)
    tau = cfg.get_float("eval", "threshold")
    out = _out_dir(cfg)
    for level in _levels(cfg):
        if tau is None:
            report = evaluate(probs, seqs.targets, dataset.taxonomy, level)
        else:
            report = evaluate_thresholded(probs, seqs.targets, dataset.taxonomy, level, tau)
        stem = f"report_{level}" if tau is None else f"report_{level}_t{tau:g}"
        (out / f"{stem}.tsv").write_text(report.to_tsv())
        (out / f"{stem}.json").write_text(report.to_json())
        sys.stdout.write(report.to_tsv())
    return EXIT_OK


def cmd_predict(cfg: RunConfig, args) -> int:
    from .evaluate import aggregate_probs, predicted_classes
    from .train import predict

    dataset = _dataset(cfg)
    params = _load_model(cfg)
    seqs = _sequences(cfg, dataset, _features(cfg, dataset, args.workers), _eval_year(cfg))
    cutoff = args.cutoff if args.cutoff is not None else cfg.get_float("eval", "cutoff", 365)
    probs = predict(params, seqs, cutoff_day=cutoff)
    level = _levels(cfg)[0]
    pred, p = predicted_classes(aggregate_probs(probs, dataset.taxonomy, level))
    path = _out_dir(cfg) / f"predictions_{level}.csv"
    with open(path, "w") as fh:
        fh.write("parcel_id,predicted,probability\n")
        for pid, c, q in zip(seqs.parcel_ids, pred, p):
            fh.write(f"{pid},{int(c)},{q:.6f}\n")
    print(f"predictions\t{len(pred)}\t{path}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    from .evaluate import SWEEP_CUTOFFS, inseason_sweep, parse_cutoffs

    raw = cfg.get("eval", "cutoffs")
    cutoffs = parse_cutoffs(raw) if raw else SWEEP_CUTOFFS
    dataset = _dataset(cfg)
    params = _load_model(cfg)
    seqs = _sequences(cfg, dataset, _features(cfg, dataset, args.workers), _eval_year(cfg))
    result = inseason_sweep(params, seqs, dataset.taxonomy, cutoffs, level=_levels(cfg)[0])
    text = result.to_tsv()
    (_out_dir(cfg) / "sweep.tsv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    from .nn.gradcheck import check_all

    reports = check_all(seed=cfg.get_int("train", "seed", 0))
    for r in reports:
        print(r.line())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_NUMERIC


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic dataset"),
    "prep": (cmd_prep, "outlier removal, resampling and smoothing into the cache"),
    "features": (cmd_features, "per-window functionals into the cache"),
    "dist": (cmd_dist, "neighbourhood crop distributions for one year"),
    "train": (cmd_train, "train a model and write checkpoint and log"),
    "eval": (cmd_eval, "evaluate a checkpoint on the test year"),
    "predict": (cmd_predict, "write per-parcel predictions"),
    "sweep": (cmd_sweep, "in-season micro-F1 per cutoff day"),
    "gradcheck": (cmd_gradcheck, "finite-difference check of every model variant"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="croprot", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name, (_, helptext) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext, description=helptext)
        p.add_argument("--config", help="INI settings file")
        p.add_argument("--workers", type=int, default=None, help="parallel processes (default: all cores)")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "synth":
            p.add_argument("--out", help="output directory")
            p.add_argument("--n-parcels", type=int, dest="n_parcels")
        if name == "dist":
            p.add_argument("--year", type=int, help="label year (default: eval year - 1)")
        if name in ("train", "eval", "predict", "sweep"):
            p.add_argument("--data", help="dataset directory")
            p.add_argument("--checkpoint", help="model checkpoint path")
        if name in ("prep", "features", "dist"):
            p.add_argument("--data", help="dataset directory")
        if name == "train":
            p.add_argument("--variant")
            p.add_argument("--out", help="run directory")
            p.add_argument("--augment", action="store_true", default=None)
        if name in ("eval", "predict", "sweep"):
            p.add_argument("--level", help="fine, c28, c12 or c10 (comma list for eval)")
            p.add_argument("--year", type=int, help="test year")
            p.add_argument("--out", help="report directory")
        if name == "eval":
            p.add_argument("--threshold", type=float, help="keep parcels with probability above this")
        if name == "predict":
            p.add_argument("--cutoff", type=float, help="truncate the target season at this day")
        if name == "sweep":
            p.add_argument("--cutoffs", help="start:stop:step or comma list (default 165:360:15 plus 365)")
    return parser


def _apply_flags(cfg: RunConfig, args) -> None:
    name = args.command
    seed_section = "synth" if name == "synth" else "train"
    cfg.set(seed_section, "seed", args.seed)
    get = lambda k: getattr(args, k, None)  # noqa: E731
    cfg.set("data", "dir", get("data"))
    cfg.set("eval", "checkpoint", get("checkpoint"))
    if name == "synth":
        cfg.set("synth", "n_parcels", get("n_parcels"))
    if name == "train":
        cfg.set("model", "variant", get("variant"))
        cfg.set("train", "out", get("out"))
        cfg.set("train", "augment", get("augment"))
    if name in ("eval", "predict", "sweep"):
        cfg.set("eval", "level", get("level"))
        cfg.set("eval", "year", get("year"))
        cfg.set("eval", "out", get("out"))
        cfg.set("eval", "threshold", get("threshold"))
        cfg.set("eval", "cutoffs", get("cutoffs"))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig(args.config)
        _apply_flags(cfg, args)
        if args.workers is None:
            args.workers = cfg.get_int("data", "workers") or default_workers()
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        return COMMANDS[args.command][0](cfg, args)
    except UsageError as exc:
        print(f"croprot: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalDivergence, FloatingPointError) as exc:
        print(f"croprot: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ValueError, OSError) as exc:
        print(f"croprot: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
