"""Command-line entry point: ``jmpose <subcommand> ...``.

Exit codes: 0 success, 1 failed check, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import glob
import json
import logging
import sys
from pathlib import Path

import tomli

from jmpose.config import ConfigError, ExperimentConfig

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NAN = 0, 1, 2, 3

log = logging.getLogger("jmpose")

SCENE_KEYS = {"n", "seed", "image_shape", "delta", "occlusion_prob", "defocus_prob", "noise_sigma"}


def _load_config(path, overrides=None) -> ExperimentConfig:
    cfg = ExperimentConfig.from_toml(path) if path else ExperimentConfig()
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    return cfg.replace(**overrides) if overrides else cfg


def cmd_generate_data(args):
    from jmpose.data import write_synthetic_dataset

    spec = {}
    if args.spec:
        try:
            with open(args.spec, "rb") as fh:
                spec = tomli.load(fh)
        except FileNotFoundError as e:
            raise ConfigError(f"spec file {args.spec} not found") from e
        except tomli.TOMLDecodeError as e:
            raise ConfigError(f"{args.spec}: {e}") from e
    unknown = set(spec) - SCENE_KEYS
    if unknown:
        raise ConfigError(f"unknown key(s) in scene spec: {', '.join(sorted(unknown))}")
    if args.n is not None:
        spec["n"] = args.n
    if args.seed is not None:
        spec["seed"] = args.seed
    n = int(spec.pop("n", 100))
    seed = int(spec.pop("seed", 0))
    if "image_shape" in spec:
        spec["image_shape"] = tuple(spec["image_shape"])
    paths = write_synthetic_dataset(args.out, n, seed, **spec)
    print(f"wrote {len(paths)} clips to {args.out}")
    return EXIT_OK


def cmd_train(args):
    from jmpose.train import Checkpoint, train

    cfg = _load_config(args.config, {"epochs": args.epochs, "seed": args.seed, "variant": args.variant})
    resume = Checkpoint.load(args.resume) if args.resume else None
    if args.metrics:
        Path(args.metrics).parent.mkdir(parents=True, exist_ok=True)
    ckpt = train(cfg, resume=resume, metrics_path=args.metrics, checkpoint_dir=args.checkpoint_dir)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    ckpt.save(args.out)
    last = ckpt.history[-1] if ckpt.history else None
    print(f"saved {args.out} at epoch {ckpt.epoch}" + (f", val mAP {last['mAP']:.2f}" if last else ""))
    return EXIT_OK


def _eval_dataset(args, cfg):
    from jmpose.data import load_dataset
    from jmpose.train import load_split

    if args.data:
        return load_dataset(args.data, args.flow_provider or cfg.flow_provider, cfg.motion_span)
    return load_split(cfg, "val")


def cmd_eval(args):
    from jmpose.train import Checkpoint, evaluate

    ckpt = Checkpoint.load(args.ckpt)
    cfg = ckpt.experiment
    report = evaluate(ckpt, _eval_dataset(args, cfg), args.tau, args.subset)
    if args.json:
        print(report.to_json())
    else:
        print(f"split {report.split}: {report.num_clips} clips, mAP {report.mAP:.2f}")
        for name, ap in report.per_joint.items():
            print(f"  {name:<15s} {ap:6.2f}")
    return EXIT_OK


def cmd_ablate(args):
    from jmpose.train import ablate

    cfg = _load_config(args.config, {"epochs": args.epochs})
    rows = []
    for seed in args.seeds:
        report = ablate(cfg.replace(seed=seed), args.variant)
        rows.append({"variant": args.variant, "seed": seed, "mAP": report.mAP, "per_joint": report.per_joint})
        print(f"{args.variant} seed {seed}: mAP {report.mAP:.2f}")
    if args.out:
        Path(args.out).write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return EXIT_OK


def cmd_gradcheck(args):
    from jmpose.gradcheck import MODULES, run_gradchecks

    modules = MODULES if args.module == "all" else (args.module,)
    ok = True
    for r in run_gradchecks(modules, seed=args.seed):
        status = "ok" if r.passed(args.tol) else "FAIL"
        ok &= r.passed(args.tol)
        print(f"{r.name:<8s} d/d{r.input:<8s} rel err {r.rel_error:.3e}  {status}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_mi_bench(args):
    from jmpose.info_orthogonality import calibration_table

    rows = calibration_table(tuple(args.rho), steps=args.steps, seed=args.seed)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out)
        w.writerow(["rho", "truth", "lower", "upper"])
        for row in rows:
            w.writerow([f"{v:.6f}" for v in row])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_plot(args):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = sorted({p for pattern in args.metrics for p in glob.glob(pattern)})
    if not paths:
        raise ConfigError(f"no metrics files match {args.metrics}")
    fig, (ax_loss, ax_map) = plt.subplots(1, 2, figsize=(10, 4))
    for path in paths:
        recs = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        epochs = [r["epoch"] for r in recs]
        ax_loss.plot(epochs, [r["l_h"] for r in recs], label=Path(path).stem)
        ax_map.plot(epochs, [r["mAP"] for r in recs], label=Path(path).stem)
    ax_loss.set(xlabel="epoch", ylabel="heatmap loss", yscale="log")
    ax_map.set(xlabel="epoch", ylabel="val mAP (%)")
    ax_map.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jmpose", description="Joint-motion pose estimation toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-data", help="render synthetic clips to disk")
    g.add_argument("--spec", help="TOML scene spec (n, seed, image_shape, delta, occlusion_prob, ...)")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.set_defaults(fn=cmd_generate_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="TOML experiment config")
    t.add_argument("--out", required=True, help="final checkpoint path")
    t.add_argument("--metrics", help="append per-epoch JSON lines here")
    t.add_argument("--checkpoint-dir", help="also save a checkpoint after every epoch")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--variant")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", help="clip directory; defaults to the checkpoint config's validation split")
    e.add_argument("--subset", choices=("challenging", "clean"))
    e.add_argument("--tau", type=float, default=0.2)
    e.add_argument("--flow-provider", choices=("oracle", "blockmatch", "file"))
    e.add_argument("--json", action="store_true")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="train and score one architecture variant")
    a.add_argument("--variant", required=True)
    a.add_argument("--config")
    a.add_argument("--seeds", type=int, nargs="+", default=[0])
    a.add_argument("--epochs", type=int)
    a.add_argument("--out")
    a.set_defaults(fn=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    c.add_argument("--module", default="all", choices=("all", "deform", "jmib", "head", "io_loss"))
    c.add_argument("--tol", type=float, default=1e-3)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_gradcheck)

    m = sub.add_parser("mi-bench", help="calibrate the MI bounds on correlated Gaussians")
    m.add_argument("--out", help="CSV path (stdout if omitted)")
    m.add_argument("--rho", type=float, nargs="+", default=[0.0, 0.5, 0.9])
    m.add_argument("--steps", type=int, default=1500)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(fn=cmd_mi_bench)

    pl = sub.add_parser("plot", help="plot training curves from metrics files")
    pl.add_argument("--metrics", nargs="+", required=True, help="JSON-lines files or glob patterns")
    pl.add_argument("--out", required=True)
    pl.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    from jmpose.train import NumericalError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NotImplementedError as e:
        print(f"not implemented: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        print(json.dumps({"nan_batch": e.batch_id}), file=sys.stderr)
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
