"""Command-line front end: generate, train, analyze, diagnose, validate, preset.

Exit codes: 0 success, 2 usage or configuration error, 3 training failure,
4 data or schema failure.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import analysis as an
from . import datasets as dsm
from .snapshot import SnapshotError, StreamFormatError, read_stream, validate, write_stream
from .training import OPTIMIZERS, VARIANT_HIDDEN, ConfigError, TrainConfig, TrainingError, train

log = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_TRAIN, EXIT_DATA = 0, 2, 3, 4
OUTDIR_ENV = "LAYERHESS_OUTDIR"
DEFAULT_N = 400
DEFAULT_STORE_CAP = 512
VARIANTS = tuple(VARIANT_HIDDEN)

TRAIN_KEYS = ("hidden", "hidden_activation", "output_activation", "optimizer", "lr", "beta1",
              "beta2", "eps", "decay", "loss", "iterations", "checkpoint_every", "init_scale")
THRESHOLD_KEYS = tuple(f.name for f in fields(an.Thresholds))


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def derive_seed(seed: int, component: str) -> int:
    """64-bit seed for one component: first 8 bytes of sha256("<seed>:<component>")."""
    digest = hashlib.sha256(f"{int(seed)}:{component}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


# --------------------------------------------------------------- config

def parse_value(text: str):
    text = text.strip()
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_pairs(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"expected key=value, got {item!r}")
        out[key.strip()] = parse_value(val)
    return out


def read_config(path: str | Path) -> dict[str, object]:
    """Flat ``section.key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep or "." not in key:
            raise UsageError(f"{path}:{lineno}: expected section.key = value")
        out[key.strip()] = parse_value(val)
    return out


def _hidden(value) -> list[int]:
    if isinstance(value, list):
        return value
    try:
        return [int(v) for v in str(value).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"hidden widths must be comma-separated integers, got {value!r}") from None


@dataclass
class ExperimentConfig:
    dataset: str = "blobs"
    n: int = DEFAULT_N
    params: dict = field(default_factory=dict)
    seed: int = 0
    variants: list[str] = field(default_factory=lambda: list(VARIANTS))
    train: dict = field(default_factory=dict)
    per_variant: dict = field(default_factory=dict)
    hessian_store_cap: int = DEFAULT_STORE_CAP
    probe: str = "first_train"
    run_suffix: str = ""
    thresholds: dict = field(default_factory=dict)

    def apply(self, cfg: dict):
        """Merge ``section.key`` entries, rejecting anything unknown."""
        for key, val in cfg.items():
            parts = key.split(".")
            sec = parts[0]
            if sec == "dataset" and len(parts) == 2:
                if parts[1] == "name":
                    self.dataset = str(val)
                elif parts[1] == "n":
                    self.n = int(val)
                else:
                    self.params[parts[1]] = val
            elif sec == "train" and len(parts) == 2 and parts[1] in TRAIN_KEYS:
                self.train[parts[1]] = val
            elif (sec == "variant" and len(parts) == 3 and parts[1] in VARIANTS
                  and parts[2] in TRAIN_KEYS):
                self.per_variant.setdefault(parts[1], {})[parts[2]] = val
            elif sec == "output" and len(parts) == 2 and parts[1] == "hessian_store_cap":
                self.hessian_store_cap = int(val)
            elif sec == "output" and len(parts) == 2 and parts[1] == "variants":
                self.variants = [v.strip() for v in str(val).split(",") if v.strip()]
            elif sec == "output" and len(parts) == 2 and parts[1] == "probe":
                self.probe = str(val)
            elif sec == "diagnose" and len(parts) == 2 and parts[1] in THRESHOLD_KEYS:
                self.thresholds[parts[1]] = float(val)
            else:
                raise UsageError(f"unknown config key {key!r}")

    def check(self):
        dsm.task_of(self.dataset)
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad or not self.variants:
            raise UsageError(f"variants must be drawn from {', '.join(VARIANTS)}, got {self.variants}")
        if self.probe != "first_train":
            raise UsageError("only probe policy 'first_train' is supported")
        if self.hessian_store_cap < 0:
            raise UsageError("hessian_store_cap must be >= 0")
        for v in self.variants:
            self.train_config(v).resolved_loss(dsm.task_of(self.dataset))

    def dataset_seed(self) -> int:
        return derive_seed(self.seed, "dataset")

    def run_id(self, variant: str) -> str:
        return f"{self.dataset}-{variant}-s{self.seed}{self.run_suffix}"

    def train_config(self, variant: str) -> TrainConfig:
        opts = {**self.train, **self.per_variant.get(variant, {})}
        if "hidden" in opts:
            opts["hidden"] = _hidden(opts["hidden"])
        for key in ("iterations", "checkpoint_every"):
            if key in opts:
                opts[key] = int(opts[key])
        return TrainConfig(variant=variant, seed=derive_seed(self.seed, f"init:{variant}"),
                           hessian_store_cap=self.hessian_store_cap,
                           run_id=self.run_id(variant), **opts)


def generate_dataset(cfg: ExperimentConfig) -> dsm.Dataset:
    return dsm.generate(cfg.dataset, cfg.n, cfg.params, cfg.dataset_seed())


# ------------------------------------------------------------ pipeline

@dataclass
class TrainOutcome:
    variant: str
    path: Path
    scores: dict
    n_params: int
    error: str | None = None


def _train_one(cfg: ExperimentConfig, data: dsm.Dataset, variant: str, outdir: Path) -> TrainOutcome:
    tc = cfg.train_config(variant)
    path = outdir / f"{tc.run_id}.snapshots.jsonl"
    try:
        snaps = train(tc, data)
    except TrainingError as exc:
        write_stream(exc.snapshots, path, complete=False)
        return TrainOutcome(variant, path, {}, 0, str(exc))
    write_stream(snaps, path)
    n_params = sum(snaps[-1].layer(i)["n_params"] for i in range(snaps[-1].n_layers))
    return TrainOutcome(variant, path, snaps[-1].scores, n_params)


def train_variants(cfg: ExperimentConfig, outdir: str | Path, workers: int = 1) -> list[TrainOutcome]:
    """Train each configured variant and write one stream per variant.

    Runs are independent, so ``workers > 1`` trains them on threads with
    output identical to the sequential run.
    """
    cfg.check()
    outdir = Path(outdir)
    data = generate_dataset(cfg)
    if workers > 1 and len(cfg.variants) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda v: _train_one(cfg, data, v, outdir), cfg.variants))
    return [_train_one(cfg, data, v, outdir) for v in cfg.variants]


def load_valid(path: str | Path) -> list:
    """Read a stream after schema validation; raises DataError with the violations."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{p}: no such file")
    violations = validate(p)
    if violations:
        raise DataError("\n".join(f"{p}: {v}" for v in violations))
    return read_stream(p)


@dataclass
class AnalysisOutcome:
    artifacts: list[Path]
    notices: list[str]
    silhouette: float | None = None
    score_stats: dict = field(default_factory=dict)


def analyze_streams(paths, outdir: str | Path, name: str | None = None, k: int = 2) -> AnalysisOutcome:
    outdir = Path(outdir)
    streams = [load_valid(p) for p in paths]
    empty = [str(p) for p, s in zip(paths, streams) if not s]
    if empty:
        raise DataError(f"stream(s) without snapshots: {', '.join(empty)}")
    arts, notes = [], []
    variants = [s[0].variant for s in streams]
    labels = variants if len(set(variants)) == len(variants) else [s[0].run_id for s in streams]
    stats = {}
    for label, snaps in zip(labels, streams):
        rid = snaps[0].run_id
        fg = an.extract_features(snaps)
        arts.append(an.write_rows(an.artifact_path(outdir, rid, "correlation", "csv"),
                                  an.correlation_matrix(fg).to_rows()))
        try:
            res = an.cca_features(fg, k=k)
            arts.append(an.write_json(an.artifact_path(outdir, rid, "cca", "json"), res.to_dict()))
            stats[label] = an.score_stats(an.cross_loadings(fg, res))
        except an.AnalysisError as exc:
            notes.append(f"{rid}: CCA skipped ({exc})")
    if name is None:
        names = sorted({s[0].dataset for s in streams})
        name = f"{names[0]}-variants" if len(names) == 1 else "combined"
    if stats:
        arts.append(an.write_rows(an.artifact_path(outdir, name, "score_stats", "csv"),
                                  an.score_stats_rows(stats)))
    sil = None
    if len(streams) >= 2:
        pca = an.pca_architectures(dict(zip(labels, streams)))
        arts.append(an.write_rows(an.artifact_path(outdir, name, "pca", "csv"), pca.to_rows()))
        sil = an.silhouette_score(pca.coords, pca.labels)
    else:
        notes.append("PCA skipped: needs at least 2 variants")
    return AnalysisOutcome(arts, notes, sil, stats)


def diagnose_stream(path, outdir: str | Path, thresholds: dict | None = None):
    snaps = load_valid(path)
    if not snaps:
        raise DataError(f"{path}: stream holds no snapshots")
    report = an.diagnose(snaps, an.Thresholds(**(thresholds or {})))
    out = an.write_json(an.artifact_path(outdir, report.run_id, "diagnostics", "json"),
                        report.to_dict())
    return report, out


# ------------------------------------------------------------- commands

def _outdir(args) -> Path:
    return Path(args.outdir or os.environ.get(OUTDIR_ENV) or "out")


def _experiment(args) -> ExperimentConfig:
    cfg = ExperimentConfig(seed=args.seed if args.seed is not None else 0)
    if args.config:
        cfg.apply(read_config(args.config))
    return cfg


def cmd_generate(args) -> int:
    cfg = _experiment(args)
    if args.name:
        cfg.dataset = args.name
    if args.n is not None:
        cfg.n = args.n
    cfg.params.update(parse_pairs(args.param))
    data = generate_dataset(cfg)
    out = Path(args.out) if args.out else _outdir(args) / f"{cfg.dataset}-n{cfg.n}-s{cfg.seed}.csv"
    dsm.write_csv(data, out)
    print(f"{out}\t{data.n_samples} rows")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _experiment(args)
    if args.dataset:
        cfg.dataset = args.dataset
    if args.n is not None:
        cfg.n = args.n
    cfg.params.update(parse_pairs(args.param))
    if args.variant:
        cfg.variants = list(dict.fromkeys(args.variant))
    for key in TRAIN_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            cfg.train[key] = val
    if args.hessian_store_cap is not None:
        cfg.hessian_store_cap = args.hessian_store_cap
    outcomes = train_variants(cfg, _outdir(args), args.workers)
    failed = [o for o in outcomes if o.error]
    keys = sorted({k for o in outcomes for k in o.scores})
    print("variant\tparams\t" + "\t".join(keys) + "\tstream")
    for o in outcomes:
        vals = "\t".join(f"{o.scores[k]:.4f}" if k in o.scores else "-" for k in keys)
        print(f"{o.variant}\t{o.n_params or '-'}\t{vals}\t{o.path}")
    for o in failed:
        print(f"training failed for {o.variant}: {o.error}; partial stream kept at {o.path}",
              file=sys.stderr)
    return EXIT_TRAIN if failed else EXIT_OK


def cmd_analyze(args) -> int:
    res = analyze_streams(args.streams, _outdir(args), args.name, args.k)
    for note in res.notices:
        print(f"notice: {note}")
    if res.silhouette is not None:
        print(f"PCA silhouette by variant: {res.silhouette:.4f}")
    for p in res.artifacts:
        print(p)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    th = {}
    if args.config:
        th.update(_experiment(args).thresholds)
    for key in THRESHOLD_KEYS:
        val = getattr(args, f"th_{key}")
        if val is not None:
            th[key] = val
    report, out = diagnose_stream(args.stream, _outdir(args), th)
    print(report.to_text())
    print(f"report: {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    bad = 0
    for p in args.streams:
        if not Path(p).is_file():
            print(f"{p}: no such file", file=sys.stderr)
            bad += 1
            continue
        violations = validate(p)
        for v in violations:
            print(f"{p}: {v}")
        if not violations:
            print(f"{p}: OK")
        bad += bool(violations)
    return EXIT_DATA if bad else EXIT_OK


def cmd_preset(args) -> int:
    from .experiments import run_preset

    result = run_preset(args.preset, _outdir(args), seed=args.seed, workers=args.workers)
    print(result.text())
    return EXIT_OK


# --------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int,
                        help="master seed (default 0; presets use their frozen seed)")
    common.add_argument("--outdir", help=f"output directory (default ${OUTDIR_ENV} or ./out)")
    common.add_argument("--config", help="key=value config file with section prefixes")
    common.add_argument("--workers", type=int, default=1,
                        help="worker threads for independent runs (default 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    p = argparse.ArgumentParser(prog="layerhess", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic dataset as CSV")
    g.add_argument("--name", help=f"generator: {', '.join(dsm.GENERATORS)}")
    g.add_argument("--n", type=int, help=f"number of samples (default {DEFAULT_N})")
    g.add_argument("--param", action="append", metavar="KEY=VALUE", help="generator parameter")
    g.add_argument("--out", help="CSV path (default <outdir>/<name>-n<n>-s<seed>.csv)")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train variants and write snapshot streams")
    t.add_argument("--dataset", help="generator name (default blobs)")
    t.add_argument("--n", type=int, help=f"number of samples (default {DEFAULT_N})")
    t.add_argument("--param", action="append", metavar="KEY=VALUE", help="generator parameter")
    t.add_argument("--variant", action="append", choices=VARIANTS,
                   help="variant to train; repeat for several (default all)")
    t.add_argument("--hidden", help="comma-separated hidden widths, overriding the variant")
    t.add_argument("--hidden-activation", dest="hidden_activation",
                   choices=("identity", "relu", "sigmoid", "tanh"))
    t.add_argument("--output-activation", dest="output_activation",
                   choices=("identity", "relu", "sigmoid", "tanh"))
    t.add_argument("--optimizer", choices=OPTIMIZERS)
    t.add_argument("--lr", type=float, help="learning rate")
    t.add_argument("--beta1", type=float, help="Adam first-moment decay")
    t.add_argument("--beta2", type=float, help="Adam second-moment decay")
    t.add_argument("--eps", type=float, help="optimizer epsilon")
    t.add_argument("--decay", type=float, help="RMSProp accumulator decay")
    t.add_argument("--loss", choices=("cross_entropy", "mse"), help="must fit the dataset task")
    t.add_argument("--iterations", type=int, help="full-batch iterations (default 300)")
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int,
                   help="snapshot period (default 20)")
    t.add_argument("--init-scale", dest="init_scale", type=float,
                   help="multiplier on the initialisation bound")
    t.add_argument("--hessian-store-cap", dest="hessian_store_cap", type=int,
                   help=f"store dense Hessians up to this dimension (default {DEFAULT_STORE_CAP})")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("analyze", parents=[common], help="correlation, CCA, score stats, PCA")
    a.add_argument("streams", nargs="+", help="snapshot stream files")
    a.add_argument("--name", help="prefix for combined artifacts (default <dataset>-variants)")
    a.add_argument("--k", type=int, default=2, help="canonical pairs (default 2)")
    a.set_defaults(func=cmd_analyze)

    d = sub.add_parser("diagnose", parents=[common], help="rule-based warnings for one stream")
    d.add_argument("stream", help="snapshot stream file")
    defaults = an.Thresholds()
    for key in THRESHOLD_KEYS:
        d.add_argument(f"--{key.replace('_', '-')}", dest=f"th_{key}", type=float,
                       help=f"threshold (default {getattr(defaults, key)})")
    d.set_defaults(func=cmd_diagnose)

    v = sub.add_parser("validate", parents=[common], help="check streams against the schema")
    v.add_argument("streams", nargs="+", help="snapshot stream files")
    v.set_defaults(func=cmd_validate)

    pr = sub.add_parser("preset", parents=[common], help="run a canned experiment")
    from .experiments import PRESETS
    pr.add_argument("preset", choices=sorted(PRESETS))
    pr.set_defaults(func=cmd_preset)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, dsm.DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except (DataError, SnapshotError, StreamFormatError, an.AnalysisError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
