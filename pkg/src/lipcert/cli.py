"""Command-line entry point.

    lipcert train --config run.json [--seed N]
    lipcert certify --model m.lipn (--data f.csv | --mnist DIR | --boolean NAME --d D) --eps E
    lipcert attack  --model m.lipn ... --eps E --steps 100
    lipcert construct --kind KIND [...] --out m.lipn
    lipcert verify-theory --suite all|props|impossibility

Exit codes: 0 ok, 1 usage, 2 runtime error, 3 verification failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import certify, constructions, data, modelio, verify
from .estimators import ARCHITECTURES, build_network
from .network import with_standardize
from .numeric import worker_count
from .training import ConfigError, TrainConfig, TrainingDivergedError, fit

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3


class UsageError(Exception):
    pass


# -- run configuration ------------------------------------------------------------

@dataclass
class ModelSpec:
    architecture: str = "sortnet"
    hidden: list = field(default_factory=lambda: [512, 512])
    head_hidden: int | None = None
    activation: str = "abs"
    group_size: int = 2


@dataclass
class DataSpec:
    kind: str = "boolean"           # boolean | mnist | csv | digits
    function: str = "or"
    d: int = 2
    mode: str = "full"
    repeat: int = 1
    balance: bool = False           # oversample so every class has the same count
    dir: str | None = None
    path: str | None = None
    limit: int | None = None
    normalize: bool = False


@dataclass
class OutputSpec:
    model: str = "model.lipn"
    metrics: str = "metrics.csv"


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelSpec = field(default_factory=ModelSpec)
    data: DataSpec = field(default_factory=DataSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    SECTIONS = {"train": TrainConfig, "model": ModelSpec, "data": DataSpec, "output": OutputSpec}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        parts = {}
        for key, value in d.items():
            if key not in cls.SECTIONS:
                raise ConfigError(f"unknown config key {key!r}")
            typ = cls.SECTIONS[key]
            if not isinstance(value, dict):
                raise ConfigError(f"config section {key!r} must be an object")
            known = {f.name for f in fields(typ)}
            for k in value:
                if k not in known:
                    raise ConfigError(f"unknown config key '{key}.{k}'")
            parts[key] = typ.from_dict(value) if typ is TrainConfig else typ(**value)
        cfg = cls(**parts)
        if cfg.model.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {cfg.model.architecture!r}")
        return cfg

    def to_dict(self):
        return {name: asdict(getattr(self, name)) for name in self.SECTIONS}

    @classmethod
    def load(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        return cls.from_dict(raw)


def load_dataset(spec: DataSpec, split="train"):
    if spec.kind == "boolean":
        ds = data.gen_boolean_dataset(spec.function, mode=spec.mode, d=spec.d)
    elif spec.kind == "mnist":
        if not spec.dir:
            raise ConfigError("data.dir is required for MNIST")
        ds = data.load_mnist(*data.find_mnist(spec.dir, split))
    elif spec.kind == "csv":
        if not spec.path:
            raise ConfigError("data.path is required for CSV data")
        ds = data.read_csv_dataset(spec.path)
    elif spec.kind == "digits":
        from sklearn.datasets import load_digits
        X, y = load_digits(return_X_y=True)
        rng = np.random.default_rng(0)
        order = rng.permutation(len(y))
        cut = int(0.8 * len(y))
        idx = order[:cut] if split == "train" else order[cut:]
        ds = data.LabeledDataset(X[idx] / 16.0, y[idx], 10, {"image_shape": (8, 8), "value_range": (0.0, 1.0)})
    else:
        raise ConfigError(f"unknown data kind {spec.kind!r}")
    if spec.limit:
        ds = ds.subset(np.arange(min(spec.limit, len(ds))))
    return ds


def balanced(X, y):
    """Repeat each class up to the largest class count (deterministic, whole copies first)."""
    counts = np.bincount(y)
    top = counts.max()
    idx = []
    for c in np.flatnonzero(counts):
        rows = np.flatnonzero(y == c)
        idx.append(np.resize(rows, top))
    idx = np.sort(np.concatenate(idx), kind="stable")
    return X[idx], y[idx]


# -- commands ----------------------------------------------------------------------

def cmd_train(args):
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.train.seed = args.seed
    ds = load_dataset(cfg.data, "train")
    X, y = ds.X, ds.y
    if cfg.data.balance:
        X, y = balanced(X, y)
    if cfg.data.repeat > 1:
        X, y = np.repeat(X, cfg.data.repeat, 0), np.repeat(y, cfg.data.repeat)
    m = cfg.model
    net = build_network(m.architecture, ds.d, ds.n_classes, m.hidden, cfg.train.rho, m.activation,
                        m.group_size, m.head_hidden, cfg.train.seed)
    net.domain = ds.meta.get("value_range")
    if cfg.data.normalize:
        net = with_standardize(net, X.mean(), X.std())
    cfg.train.stochastic = cfg.train.stochastic and m.architecture == "sortnet"
    cfg.train.log_path = cfg.output.metrics
    augment = None
    if cfg.train.augment_pad and "image_shape" in ds.meta:
        augment = data.crop_augmenter(ds.meta["image_shape"], cfg.train.augment_pad)
    net, log = fit(net, X, y, cfg.train, augment=augment,
                   callback=(lambda r: print(f"epoch {r['epoch']} loss={r['loss']:.4f} acc={r['clean_acc']:.4f}"))
                   if args.verbose else None)
    modelio.save(net, cfg.output.model)
    acc = float(np.mean(certify.predict(net(ds.X, k_trunc=cfg.train.k_trunc)) == ds.y))
    print(f"clean={acc:.4f}")
    print(f"model written to {cfg.output.model}; metrics in {cfg.output.metrics}")
    return EXIT_OK


def _dataset_from_args(args):
    if args.data:
        return data.read_csv_dataset(args.data)
    if args.mnist:
        ds = data.load_mnist(*data.find_mnist(args.mnist, args.split))
    elif args.digits:
        ds = load_dataset(DataSpec(kind="digits"), args.split)
    elif args.boolean:
        if not args.d:
            raise UsageError("--boolean needs --d")
        ds = data.gen_boolean_dataset(args.boolean, mode=args.mode, d=args.d)
    else:
        raise UsageError("give a dataset: --data, --mnist, --digits or --boolean")
    if args.limit:
        ds = ds.subset(np.arange(min(args.limit, len(ds))))
    return ds


def _load_model(path):
    try:
        return modelio.load(path)
    except FileNotFoundError:
        raise UsageError(f"model file not found: {path}")


def _evaluate(args, steps):
    if args.eps < 0:
        raise UsageError("--eps must be non-negative")
    net = _load_model(args.model)
    ds = _dataset_from_args(args)
    rep = certify.evaluate(net, ds.X, ds.y, args.eps, k_trunc=args.k_trunc, pgd_steps=steps,
                           pgd_step_size=args.step_size, pgd_restarts=args.restarts, seed=args.seed or 0,
                           attack=steps > 0)
    if args.out:
        rep.to_csv(args.out)
    print(rep.summary())
    return EXIT_OK


def cmd_certify(args):
    return _evaluate(args, args.pgd_steps)


def cmd_attack(args):
    return _evaluate(args, args.steps)


def _boolean_from_args(args):
    if args.table:
        return constructions.read_truth_table(args.table)
    if args.builtin:
        if not args.d:
            raise UsageError("--builtin needs --d")
        try:
            return constructions.builtin(args.builtin, args.d, args.k)
        except ValueError as exc:
            raise UsageError(str(exc))
    raise UsageError("give --builtin NAME --d D or --table FILE")


def cmd_construct(args):
    rng = np.random.default_rng(args.seed or 0)
    kind = args.kind
    if kind in ("boolean", "maxmin-boolean"):
        f = _boolean_from_args(args)
        net = constructions.boolean_to_linf_net(f) if kind == "boolean" else constructions.maxmin_boolean_net(f)
        X = f.inputs()
        ok = int((net(X)[:, 0] == f.table).sum())
        summary = f"verified on {ok}/{len(X)} inputs"
        passed = ok == len(X)
    elif kind in ("orderstat", "maxmin-orderstat"):
        if not args.d or not args.k:
            raise UsageError(f"--kind {kind} needs --d and --k")
        if not 1 <= args.k <= args.d:
            raise UsageError("need 1 <= k <= d")
        B = args.bound
        if kind == "orderstat":
            net = constructions.order_statistic_linf_net(args.d, args.k, B)
        else:
            net = constructions.maxmin_order_statistic_net(args.d, args.k, (-B, B))
        X = rng.uniform(-B, B, (10_000, args.d))
        err = np.abs(net(X)[:, 0] - (-np.sort(-X, axis=1))[:, args.k - 1]).max()
        passed = err <= 2 * np.spacing(2 * B + 1)
        summary = f"verified on 10000 samples (max error {err:.1e})"
    elif kind == "sortingnet":
        if not args.d or args.d < 2:
            raise UsageError("--kind sortingnet needs --d >= 2")
        net = constructions.maxmin_sorting_net(args.d)
        B = constructions.boolean_cube(args.d)
        passed = bool(np.array_equal(net(B), -np.sort(-B, axis=1)))
        summary = f"depth {net.meta['depth']}, {net.meta['n_comparators']} comparators, " + \
                  ("0-1 verified" if passed else "0-1 check FAILED")
    elif kind == "tight-symmetric":
        f = _boolean_from_args(args)
        net = constructions.tight_symmetric_net(f)
        out = net(f.inputs())
        m = (out[:, 1] - out[:, 0]) * (2.0 * f.table - 1.0)
        passed = bool(np.abs(m - 1.0 / f.d).max() <= 1e-12)
        summary = f"margin {m.min():.6f} on all {len(m)} inputs (1/d = {1.0 / f.d:.6f})"
    elif kind == "tight-linear":
        if not args.d or not args.k:
            raise UsageError("--kind tight-linear needs --d and --k")
        net = constructions.tight_linear_orderstat(args.d, args.k)
        B = constructions.boolean_cube(args.d)
        err = np.abs(net(B)[:, 0] - (-np.sort(-B, axis=1))[:, args.k - 1]).max()
        passed = abs(err - (0.5 - 0.5 / args.d)) <= 1e-12
        summary = f"max corner error {err:.6f} (floor {0.5 - 0.5 / args.d:.6f})"
    elif kind == "nn":
        f = _boolean_from_args(args)
        ds = data.gen_boolean_dataset(f, mode=args.mode)
        net = constructions.nn_classifier_net(ds.X, ds.y)
        r = certify.certified_radius(net(ds.X))
        passed = bool(np.all(certify.predict(net(ds.X)) == ds.y) and np.all(r >= 0.5 - 1e-12))
        summary = f"nearest-neighbour net on {len(ds)} points, min radius {r.min():.4f}"
    elif kind == "convert":
        if not args.source:
            raise UsageError("--kind convert needs --source MODEL")
        src = _load_model(args.source)
        fam = {type(l).__name__ for l in src.layers}
        if fam <= {"Affine", "MaxMin"}:
            net = constructions.groupsort_to_sortnet(src, args.bound)
            X = rng.uniform(-args.bound, args.bound, (10_000, src.input_dim))
        elif fam <= {"LinfDist", "MeanShiftBN"}:
            net = constructions.linfnet_to_sortnet(src)
            lo, hi = src.domain or (-1.0, 1.0)
            X = rng.uniform(lo, hi, (10_000, src.input_dim))
        else:
            raise UsageError("source must be a GroupSort or l_inf-distance network")
        err = np.abs(src(X) - net(X)).max()
        passed = err <= 1e-9
        summary = f"agreement on 10000 samples, max deviation {err:.1e}"
    else:
        raise UsageError(f"unknown kind {kind!r}")
    modelio.save(net, args.out)
    print(f"{kind}: {summary}")
    print(f"model written to {args.out}")
    return EXIT_OK if passed else EXIT_VERIFY


def cmd_verify_theory(args):
    results = verify.run_suite(args.suite, seed=args.seed or 0, out=print)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_OK if not failed else EXIT_VERIFY


# -- parser ------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _dataset_flags(p):
    p.add_argument("--data", help="CSV file: label, then features")
    p.add_argument("--mnist", help="directory with MNIST IDX files")
    p.add_argument("--digits", action="store_true", help="scikit-learn 8x8 digits (held-out split)")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--boolean", help="builtin Boolean function name")
    p.add_argument("--d", type=int)
    p.add_argument("--mode", default="full", choices=["full", "levels", "compact"])
    p.add_argument("--limit", type=int)


def build_parser():
    parser = _Parser(prog="lipcert", description=__doc__.split("\n")[0])
    parser.add_argument("--seed", type=int, default=None, help="seed for every random choice")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a network from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    for name, func in (("certify", cmd_certify), ("attack", cmd_attack)):
        p = sub.add_parser(name, help=f"{name} a saved model on a dataset")
        p.add_argument("--model", required=True)
        _dataset_flags(p)
        p.add_argument("--eps", type=float, required=True)
        p.add_argument("--k-trunc", type=int, default=10)
        p.add_argument("--step-size", type=float, default=None)
        p.add_argument("--restarts", type=int, default=1)
        p.add_argument("--out", help="per-sample report CSV")
        if name == "certify":
            p.add_argument("--pgd-steps", type=int, default=100)
        else:
            p.add_argument("--steps", type=int, default=100)
        p.set_defaults(func=func)

    p = sub.add_parser("construct", help="build one of the explicit constructions")
    p.add_argument("--kind", required=True, choices=["boolean", "maxmin-boolean", "orderstat", "maxmin-orderstat",
                                                     "sortingnet", "tight-symmetric", "tight-linear", "nn", "convert"])
    p.add_argument("--builtin")
    p.add_argument("--table", help="truth-table file (0/1 string of length 2^d)")
    p.add_argument("--d", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--bound", type=float, default=1.0)
    p.add_argument("--mode", default="full", choices=["full", "levels", "compact"])
    p.add_argument("--source", help="model to convert")
    p.add_argument("--out", default="construct.lipn")
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("verify-theory", help="run the theory check suites")
    p.add_argument("--suite", default="all", choices=sorted(verify.SUITES))
    p.set_defaults(func=cmd_verify_theory)
    return parser


def main(argv=None):
    try:
        from threadpoolctl import threadpool_limits
        threadpool_limits(worker_count())
    except ImportError:
        pass
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_help()
            return EXIT_USAGE
        # subcommand-level --seed is not defined; the global one applies
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, data.IDXError, modelio.ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except certify.UncertifiableError as exc:
        print(f"error: uncertifiable: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
