"""``ecgc`` command line: synth, extract-attrs, pretrain, probe, baseline, report.

Failures print one line ``error: <ErrorClass>: <detail>`` to stderr and exit
with the error's code.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

import ecgc
from ecgc import kernels
from ecgc.config import RunConfig, load_config
from ecgc.data import CLASSES, SplitSpec, SyntheticSpec, generate_synthetic, load_dataset, split, with_attributes, write_dataset
from ecgc.errors import ConfigError, EcgcError, IoError, MissingSummary, OutputLocked, ShapeMismatch
from ecgc.nn.checkpoint import load_checkpoint
from ecgc.nn.encoder import EncoderConfig
from ecgc.objective.losses import LossConfig
from ecgc.objective.training import MetricsReport, TrainConfig, train_baseline, train_pretext, train_probe
from ecgc.pairing import StrategySpec
from ecgc.transforms import AugmentationSpec, SegmentationSpec

logger = logging.getLogger("ecgc")

SUMMARY_COLUMNS = ("label", "phase", "seed", "auroc_macro", *(f"auroc_{c}" for c in CLASSES), "accuracy")
LOCK_NAME = ".ecgc.lock"


# -- config -> library objects ------------------------------------------------
def encoder_config(cfg: RunConfig) -> EncoderConfig:
    return EncoderConfig(**cfg["encoder"], seed=cfg.seed)


def strategy_spec(cfg: RunConfig, total_samples: int) -> StrategySpec:
    s, a = cfg["strategy"], cfg["augment"]
    try:
        return StrategySpec(
            kind=s["kind"],
            temporal_lead_mode=s["temporal_lead_mode"],
            segmentation=SegmentationSpec(s["v_segments"], total_samples),
            augment=AugmentationSpec(
                enabled=a["enabled"],
                jitter_std=a["jitter_std"],
                scale_range=tuple(a["scale_range"]),
                warp_knots=a["warp_knots"],
                warp_strength=a["warp_strength"],
                seed=cfg.seed,
            ),
            h=s["h"],
            rhythm_only=s["rhythm_only"],
            raw_distance=s["raw_distance"],
            fallback=s["fallback"],
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, EcgcError):
            raise
        raise ConfigError(str(exc)) from None


def load_splits(cfg: RunConfig):
    manifest = cfg["data"]["manifest"]
    if not manifest:
        raise ConfigError("[data] manifest is required for this subcommand")
    ds = load_dataset(manifest, normalize=cfg["data"]["normalize"], max_workers=cfg["data"]["workers"])
    return split(ds, SplitSpec(tuple(cfg["data"]["split_ratios"]), cfg["data"]["split_seed"], cfg["data"]["stratify"]))


# -- output handling -------------------------------------------------------------
@contextlib.contextmanager
def locked_output(path: Path):
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {path}: {exc.strerror}") from None
    lock = path / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputLocked(f"{path} is in use by another run (remove {lock} if stale)") from None
    except OSError as exc:
        raise IoError(f"cannot write to {path}: {exc.strerror}") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield path
    finally:
        with contextlib.suppress(FileNotFoundError):
            lock.unlink()


def write_meta(cfg: RunConfig, out: Path, command: str) -> None:
    meta = {"command": command, "version": ecgc.__version__, "kernels": kernels.BACKEND}
    (out / "run.meta").write_text(cfg.to_ini(meta))


def write_summary(path: Path, label: str, report: MetricsReport, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerow([label, report.phase, seed, repr(report.auroc_macro), *(repr(a) for a in report.auroc_per_class), repr(report.accuracy)])


# -- subcommands -----------------------------------------------------------------
def cmd_synth(cfg: RunConfig) -> int:
    d = cfg["data"]
    spec = SyntheticSpec(
        n_records=d["n_records"], class_proportions=tuple(d["class_proportions"]), noise_std=d["noise_std"], seed=cfg.seed, duration_s=d["duration_s"]
    )
    with locked_output(cfg.output_dir) as out:
        manifest = write_dataset(generate_synthetic(spec), out)
        write_meta(cfg, out, "synth")
    print(manifest)
    return 0


def cmd_extract_attrs(cfg: RunConfig) -> int:
    from ecgc.attributes import extract_all

    src = cfg["data"]["manifest"]
    if not src:
        raise ConfigError("[data] manifest is required for extract-attrs")
    target = cfg.output_dir / "manifest.csv"
    if target.resolve() == Path(src).resolve():
        raise IoError(f"refusing to overwrite the input manifest {src}; choose another output_dir")
    ds = load_dataset(src, normalize=False, max_workers=cfg["data"]["workers"])
    attrs = extract_all(ds, on_error="skip")
    with locked_output(cfg.output_dir) as out:
        manifest = write_dataset(with_attributes(ds, attrs), out)
        write_meta(cfg, out, "extract-attrs")
    logger.info("attributes extracted for %d of %d records", len(attrs), len(ds))
    print(manifest)
    return 0


def cmd_pretrain(cfg: RunConfig) -> int:
    from ecgc.attributes import AttributeStats, attribute_matrix

    train, _, _ = load_splits(cfg)
    t = cfg["train"]
    spec = strategy_spec(cfg, train.signals().shape[-1])
    stats = None
    if spec.kind == "Attributes":
        stats = AttributeStats.identity() if spec.raw_distance else AttributeStats.fit(attribute_matrix(train))
    with locked_output(cfg.output_dir) as out:
        _, report = train_pretext(
            train,
            spec,
            encoder_config(cfg),
            TrainConfig("pretrain", t["epochs"], t["lr"], t["batch_size"], cfg.seed, t["optimizer"]),
            LossConfig(t["temperature"], t["loss_variant"], t["stabilize"]),
            stats=stats,
            checkpoint_path=out / "encoder.ckpt",
        )
        if stats is not None:
            stats.save(out / "attribute_stats.csv")
        report.write_csv(out / "metrics.csv")
        write_meta(cfg, out, "pretrain")
    print(out / "encoder.ckpt")
    return 0


def _probe_label(cfg: RunConfig, ckpt: Path) -> str:
    if cfg["eval"]["label"]:
        return cfg["eval"]["label"]
    meta = ckpt.parent / "run.meta"
    if meta.is_file():
        with contextlib.suppress(EcgcError):
            return load_config(meta)["strategy"]["kind"]
    return ckpt.stem


def cmd_probe(cfg: RunConfig) -> int:
    ckpt = cfg["eval"]["checkpoint"]
    if not ckpt:
        raise ConfigError("[eval] checkpoint is required for probe")
    encoder = load_checkpoint(ckpt)
    want = cfg["encoder"]["embed_dim"]
    if encoder.config.embed_dim != want:
        raise ShapeMismatch(f"checkpoint embed_dim {encoder.config.embed_dim} != configured embed_dim {want}")
    train, val, test = load_splits(cfg)
    e = cfg["eval"]
    with locked_output(cfg.output_dir) as out:
        report = train_probe(encoder, train, test, TrainConfig("probe", e["probe_epochs"], e["probe_lr"], e["probe_batch_size"], cfg.seed, cfg["train"]["optimizer"]), val=val)
        report.write_csv(out / "metrics.csv")
        write_summary(out / "summary.csv", _probe_label(cfg, Path(ckpt)), report, cfg.seed)
        write_meta(cfg, out, "probe")
    print(f"macro AUROC {report.auroc_macro:.4f}")
    return 0


def cmd_baseline(cfg: RunConfig) -> int:
    train, val, test = load_splits(cfg)
    e, t = cfg["eval"], cfg["train"]
    with locked_output(cfg.output_dir) as out:
        _, report = train_baseline(
            train, test, encoder_config(cfg), TrainConfig("baseline", e["baseline_epochs"], e["baseline_lr"], t["batch_size"], cfg.seed, t["optimizer"]), val=val
        )
        report.write_csv(out / "metrics.csv")
        write_summary(out / "summary.csv", e["label"] or "Baseline", report, cfg.seed)
        write_meta(cfg, out, "baseline")
    print(f"macro AUROC {report.auroc_macro:.4f}")
    return 0


def aggregate(run_dirs) -> list[tuple[str, int, float, float]]:
    """(label, n_runs, mean, population std) of macro AUROC, in first-seen label order."""
    groups: dict[str, list[float]] = {}
    for d in run_dirs:
        path = Path(d) / "summary.csv"
        if not path.is_file():
            raise MissingSummary(f"{d}: no summary.csv")
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                groups.setdefault(row["label"], []).append(float(row["auroc_macro"]))
    return [(label, len(v), float(np.mean(v)), float(np.std(v))) for label, v in groups.items()]


def cmd_report(cfg: RunConfig, run_dirs) -> int:
    rows = aggregate(run_dirs)
    width = max(len("strategy"), *(len(r[0]) for r in rows))
    lines = [f"{'strategy':<{width}}  {'n':>3}  {'auroc_mean':>10}  {'auroc_std':>9}"]
    lines += [f"{label:<{width}}  {n:>3}  {mean:>10.4f}  {std:>9.4f}" for label, n, mean, std in rows]
    with locked_output(cfg.output_dir) as out:
        with open(out / "summary.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["strategy", "n_runs", "auroc_mean", "auroc_std"])
            w.writerows([label, n, repr(mean), repr(std)] for label, n, mean, std in rows)
        (out / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


# -- entry point -----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration (a previous run.meta works)")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--output-dir", help="overrides [run] output_dir")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override any config key (repeatable)")
    common.add_argument("--resnet18", action="store_true", help="full-size encoder (18 weighted layers); --set still wins")
    common.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    parser = argparse.ArgumentParser(prog="ecgc", description="Patient-group contrastive pretraining for 12-lead ECG.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "write a synthetic dataset (manifest + signal files)"),
        ("extract-attrs", "fill attribute columns from the signals"),
        ("pretrain", "contrastive pretraining; writes encoder.ckpt"),
        ("probe", "linear probe on a frozen checkpoint"),
        ("baseline", "supervised end-to-end baseline"),
        ("report", "aggregate run summaries into a table"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "report":
            p.add_argument("run_dirs", nargs="+", help="run directories containing summary.csv")
    return parser


def _threads() -> int | None:
    raw = os.environ.get("ECGC_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"ECGC_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"ECGC_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = []
        if args.resnet18:
            full = EncoderConfig.resnet18()
            overrides += [f"encoder.{k}={getattr(full, k)}" for k in ("n_blocks", "base_channels", "stem_kernel", "stem_stride")]
        overrides += args.set
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        if args.output_dir is not None:
            overrides.append(f"run.output_dir={args.output_dir}")
        cfg = load_config(args.config, overrides)
        n_threads = _threads()
        limit = contextlib.nullcontext()
        if n_threads is not None:
            from threadpoolctl import threadpool_limits

            limit = threadpool_limits(limits=n_threads)
        with limit:
            if args.command == "report":
                return cmd_report(cfg, args.run_dirs)
            handler = {
                "synth": cmd_synth,
                "extract-attrs": cmd_extract_attrs,
                "pretrain": cmd_pretrain,
                "probe": cmd_probe,
                "baseline": cmd_baseline,
            }[args.command]
            return handler(cfg)
    except EcgcError as exc:
        detail = " ".join(str(exc).split()) or exc.code
        print(f"error: {exc.code}: {detail}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
