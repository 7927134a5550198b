"""Command-line entry point: gen-data, train, eval, export-plots.

Exit codes: 0 success, 2 config/usage error, 3 I/O error, 4 numeric failure.
Every command writes a manifest next to its outputs recording the resolved
configuration and seed, so runs are reproducible from (config, seed) alone.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from . import config as cfgmod
from . import metrics, plots, synthdata, training
from .config import ConfigError, ExperimentConfig
from .synthdata import DatasetFormatError
from .training import CheckpointFormatError, NumericError


def _set_assignments(args) -> dict[str, str]:
    assignments = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, _, v = item.partition("=")
        assignments[k.strip()] = v.strip()
    return assignments


def _build_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.default()
    if getattr(args, "preset", None):
        cfg = cfgmod.from_preset(args.preset)
    if args.config:
        with open(args.config, "r", encoding="utf-8") as f:
            cfg = cfgmod.parse(f.read(), base=cfg)
    assignments = _set_assignments(args)
    if assignments:
        cfg = cfgmod.apply_assignments(cfg, assignments)
    if args.seed is not None:
        cfg.data.seed = args.seed
        cfg.train.seed = args.seed
    cfg.validate()
    return cfg


def _write_manifest(out_dir: Path, cfg: ExperimentConfig, extra: dict) -> None:
    (out_dir / "config.txt").write_text(cfgmod.render(cfg), encoding="utf-8")
    lines = [f"{k} = {v}" for k, v in sorted(extra.items())]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _generate_split(cfg: ExperimentConfig, offset: int, count: int):
    d = cfg.data
    samples = []
    for i in range(count):
        seed = synthdata.derive_seed(d.seed, offset + i)
        if d.kind == "lemniscate":
            spec = synthdata.LemniscateSpec(
                a=d.a, sigma_x=d.sigma, sigma_y=d.sigma,
                image_size=d.image_size, T=d.T, seed=seed)
            ranges = {"scale": (d.scale_min, d.scale_max),
                      "rotation": (-d.rotation_max, d.rotation_max),
                      "translation": (-d.translation_max, d.translation_max)}
            samples.append(synthdata.make_lemniscate_sequence(spec, ranges))
        else:
            sched = synthdata.random_ring_schedule(d.image_size, d.T, seed)
            samples.append(synthdata.make_ring_sequence(d.image_size, d.T, sched, seed))
    return samples


def cmd_gen_data(args) -> int:
    cfg = _build_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    d = cfg.data
    splits = [("train", 0, d.train_count),
              ("val", d.train_count, d.val_count),
              ("test", d.train_count + d.val_count, d.test_count)]
    extra = {"seed": d.seed, "kind": d.kind}
    for name, offset, count in splits:
        samples = _generate_split(cfg, offset, count)
        path = out_dir / f"{name}.tlrndata"
        synthdata.write_dataset(samples, path)
        extra[f"{name}_count"] = count
        extra[f"{name}_file"] = path.name
        print(f"wrote {path} ({count} sequences, {d.image_size}^2, T+1={d.T + 1})")
    _write_manifest(out_dir, cfg, extra)
    return 0


def cmd_train(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.deterministic:
        torch.set_num_threads(1)
    resume = None
    if args.resume:
        resume = training.load_checkpoint(args.resume)
        # the checkpoint's config is authoritative, but --set can still
        # adjust it (e.g. extend train.epochs to continue a finished run)
        cfg = resume.config
        assignments = _set_assignments(args)
        if assignments:
            cfg = cfgmod.apply_assignments(cfg, assignments)
        cfg.validate()
    else:
        cfg = _build_config(args)
        if args.mode:
            cfg.train.mode = args.mode
            cfg.train.__post_init__()
    dataset = synthdata.read_dataset(args.data)
    if dataset[0].frames.shape[-1] != cfg.network.image_size:
        raise ConfigError(
            f"dataset image size {dataset[0].frames.shape[-1]} != "
            f"network.image_size {cfg.network.image_size}")

    def report(row):
        print(f"epoch {row['epoch']:>5d}  loss {row['mean_loss']:.6f}  "
              f"sim {row['similarity']:.6f}  smooth {row['smoothness']:.6f}  "
              f"reg {row['regularity']:.6f}  {row['wall_seconds']:.2f}s",
              flush=True)

    ckpt = training.train(dataset, cfg, resume=resume,
                          checkpoint_path=out_dir / "checkpoint.ckpt",
                          log_path=out_dir / "log.csv", on_epoch=report)
    training.save_checkpoint(ckpt, out_dir / "checkpoint.ckpt")
    _write_manifest(out_dir, cfg, {"seed": cfg.train.seed, "mode": cfg.train.mode,
                                   "data": args.data, "epochs": cfg.train.epochs})
    print(f"final checkpoint: {out_dir / 'checkpoint.ckpt'}")
    return 0


def _eval_one(ckpt_path, dataset):
    ckpt = training.load_checkpoint(ckpt_path)
    report = metrics.evaluate(ckpt, dataset, mode=ckpt.config.train.mode)
    return ckpt, report


def cmd_eval(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = synthdata.read_dataset(args.data)
    ckpt, report = _eval_one(args.checkpoint, dataset)
    report.write_csv(out_dir / "report.csv", out_dir / "summary.csv")
    print(f"wrote {out_dir / 'report.csv'} and {out_dir / 'summary.csv'}")
    if args.compare:
        _, other = _eval_one(args.compare, dataset)
        _write_compare(report, other, out_dir / "compare.csv")
        print(f"wrote {out_dir / 'compare.csv'}")
    _write_manifest(out_dir, ckpt.config,
                    {"checkpoint": args.checkpoint, "data": args.data,
                     "compare": args.compare or ""})
    return 0


def _write_compare(a: metrics.EvalReport, b: metrics.EvalReport, path) -> None:
    import csv as _csv
    with open(path, "w", newline="") as f:
        w = _csv.writer(f)
        names = ["mse", "neg_jac"] + (["dice", "hd"] if a.dice is not None
                                      and b.dice is not None else [])
        header = ["frame"]
        for n in names:
            header += [f"{n}_mean_a", f"{n}_mean_b"]
        w.writerow(header)
        for tau in range(a.num_frames):
            row = [tau + 1]
            for n in names:
                row.append(repr(float(getattr(a, n)[:, tau].mean())))
                row.append(repr(float(getattr(b, n)[:, tau].mean())))
            w.writerow(row)


def cmd_export_plots(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cols = plots.read_summary(args.summary)
    other = (args.compare_summary, "baseline") if args.compare_summary else None
    plots.plot_mse(args.summary, out_dir / "mse.svg", label=args.label, other=other)
    print(f"wrote {out_dir / 'mse.svg'}")
    if "dice_mean" in cols:
        plots.plot_dice_hd(args.summary, out_dir / "dice_hd.svg", label=args.label,
                           other=other)
        print(f"wrote {out_dir / 'dice_hd.svg'}")
    if args.checkpoint and args.data:
        ckpt = training.load_checkpoint(args.checkpoint)
        dataset = synthdata.read_dataset(args.data)
        plots.plot_sequence_strip(ckpt.build_model(), dataset[0],
                                  out_dir / "strip.svg", mode=ckpt.config.train.mode)
        print(f"wrote {out_dir / 'strip.svg'}")
    return 0


def _add_common(p: argparse.ArgumentParser, with_preset: bool = True) -> None:
    p.add_argument("--config", help="experiment config file (flat key = value)")
    p.add_argument("--seed", type=int, default=None, help="override data/train seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--deterministic", action="store_true",
                   help="force single-threaded, bit-reproducible execution")
    if with_preset:
        p.add_argument("--preset", choices=sorted(cfgmod.PRESETS),
                       help="start from a named preset")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a single config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tlrn",
        description="Time-series diffeomorphic registration with temporal "
                    "latent residual networks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic sequence datasets")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    _add_common(p)
    p.add_argument("--data", required=True, help="training dataset (.tlrndata)")
    p.add_argument("--mode", choices=["tlrn", "baseline"], default=None)
    p.add_argument("--resume", help="resume from a checkpoint file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(p, with_preset=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--compare", help="second checkpoint for side-by-side summary")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-plots", help="render report CSVs to SVG")
    _add_common(p, with_preset=False)
    p.add_argument("--summary", required=True, help="summary CSV from eval")
    p.add_argument("--compare-summary", help="second summary CSV to overlay")
    p.add_argument("--label", default="tlrn")
    p.add_argument("--checkpoint", help="checkpoint for deformation strips")
    p.add_argument("--data", help="dataset for deformation strips")
    p.set_defaults(func=cmd_export_plots)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.deterministic:
        torch.set_num_threads(1)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DatasetFormatError, CheckpointFormatError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
