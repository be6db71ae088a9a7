"""Command-line entry point: synth | train | eval | flops | gradcheck | fuse |
export-topology | dump-attention.

Config precedence is built-in defaults, then --config file sections, then
explicit flags; every run echoes its fully-resolved configuration. Exit codes:
0 success, 2 bad flags or config values, 3 I/O failure, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as D
from . import train as TR
from .flops import count_flops, no_pooling_control
from .gradcheck import run_all
from .model import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .skeleton import builtin_names, builtin_partition, builtin_topology, topology_doc
from .tensor import NonFiniteError


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise CliError(3, f"{path}: invalid JSON ({exc})") from exc


def _load_dataset(path: str) -> D.Dataset:
    try:
        return D.load_dataset(path)
    except json.JSONDecodeError as exc:
        raise CliError(3, f"{path}: invalid JSON ({exc})") from exc
    except ValueError as exc:
        raise CliError(3, f"{path}: {exc}") from exc


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v != "")


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v != "")


def _resolve(defaults: dict, file_section: dict | None, flag_overrides: dict) -> dict:
    out = dict(defaults)
    if file_section:
        out.update(file_section)
    out.update({k: v for k, v in flag_overrides.items() if v is not None})
    return out


def _echo_config(doc: dict, out_dir: str | None = None) -> None:
    print("config:", json.dumps(doc, sort_keys=True))
    if out_dir:
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    ds = D.synth_generate(classes=args.classes, per_class=args.per_class,
                          frames=args.frames, topology=args.topology,
                          noise=args.noise, seed=args.seed, split=args.split)
    D.save_dataset(ds, args.out)
    _echo_config({"classes": args.classes, "per_class": args.per_class,
                  "frames": args.frames, "topology": args.topology,
                  "noise": args.noise, "seed": args.seed, "split": args.split,
                  "out": args.out})
    print(f"wrote {len(ds.sequences)} sequences to {args.out}")
    return 0


def _model_dict_from_flags(args) -> dict:
    return {
        "variant": args.variant,
        "channels": _parse_ints(args.channels) if args.channels else None,
        "pooling_locations": _parse_ints(args.pooling_locations)
        if args.pooling_locations else None,
        "ratio": args.ratio, "sigma": args.sigma,
        "fusion_weight": args.fusion_weight, "fusion_mode": args.fusion_mode,
        "temporal_kernel": args.kernel,
        "ism": False if args.no_ism else None,
        "ism_channels": args.ism_channels,
        "adaptive": False if args.no_adaptive else None,
        "residual_pool": False if args.no_residual_pool else None,
        "dtype": args.dtype,
    }


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--variant", choices=("light", "heavy"))
    p.add_argument("--channels", help="per-stage widths, e.g. 64,128,256")
    p.add_argument("--pooling-locations", help="pooled stage prefix, e.g. 1,2,3")
    p.add_argument("--ratio", type=int, help="correlation projection reduction")
    p.add_argument("--sigma", choices=("tanh", "sigmoid", "softmax"))
    p.add_argument("--fusion-weight", type=float)
    p.add_argument("--fusion-mode", choices=("sum", "concat"))
    p.add_argument("--kernel", type=int, help="temporal kernel size (odd)")
    p.add_argument("--no-ism", action="store_true")
    p.add_argument("--ism-channels", type=int)
    p.add_argument("--no-adaptive", action="store_true")
    p.add_argument("--no-residual-pool", action="store_true")
    p.add_argument("--dtype", choices=("f32", "f64"))


def cmd_train(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    train_ds = _load_dataset(args.data)
    eval_ds = _load_dataset(args.eval) if args.eval else None

    frames = {s.frames.shape[0] for s in train_ds.sequences}
    native = frames.pop() if len(frames) == 1 else None
    target = args.frames or (native // 2 if args.half_frames and native else native)
    if target is None:
        raise CliError(3, f"{args.data}: mixed frame counts; pass --frames")

    file_cfg = _read_json(args.config) if args.config else {}
    model_doc = _resolve(ModelConfig().to_dict(), file_cfg.get("model"),
                         _model_dict_from_flags(args))
    model_doc["topology"] = train_ds.topology
    model_doc["classes"] = train_ds.class_count
    model_doc["frames"] = target
    train_defaults = {
        "epochs": TR.TrainConfig.epochs, "warmup": TR.TrainConfig.warmup,
        "base_lr": TR.TrainConfig.base_lr,
        "decay_steps": list(TR.TrainConfig.decay_steps),
        "decay_factor": TR.TrainConfig.decay_factor,
        "momentum": TR.TrainConfig.momentum,
        "weight_decay": TR.TrainConfig.weight_decay,
        "batch_size": TR.TrainConfig.batch_size, "seed": TR.TrainConfig.seed,
        "augment": TR.TrainConfig.augment, "rotate_max": TR.TrainConfig.rotate_max,
        "early_stop_train_acc": None,
    }
    train_doc = _resolve(train_defaults, file_cfg.get("train"), {
        "epochs": args.epochs, "warmup": args.warmup, "base_lr": args.lr,
        "decay_steps": list(_parse_ints(args.decay_steps))
        if args.decay_steps is not None else None,
        "decay_factor": args.decay_factor, "momentum": args.momentum,
        "weight_decay": args.weight_decay, "batch_size": args.batch_size,
        "seed": args.seed, "augment": False if args.no_augment else None,
        "rotate_max": args.rotate_max, "early_stop_train_acc": args.early_stop,
    })

    model_cfg = ModelConfig.from_dict(model_doc)
    train_cfg = TR.TrainConfig(**{**train_doc,
                                  "decay_steps": tuple(train_doc["decay_steps"])}).validate()
    _echo_config({"model": model_cfg.to_dict(),
                  "train": {**train_doc, "decay_steps": list(train_doc["decay_steps"])},
                  "stream": args.stream, "data": args.data, "eval": args.eval},
                 out_dir=args.out)

    def prep(ds):
        ds = D.apply_stream(ds, args.stream)
        return D.resample_dataset(ds, target)

    model = build_model(model_cfg, seed=args.model_seed)
    metrics = TR.train_loop(model, prep(train_ds), train_cfg,
                            eval_set=prep(eval_ds) if eval_ds else None,
                            log=lambda r: print(f"epoch {r.epoch} lr {r.lr:.4g} "
                                                f"loss {r.train_loss:.4f} "
                                                f"acc {r.train_acc:.3f} "
                                                f"eval {r.eval_acc:.3f}"))
    TR.write_metrics(os.path.join(args.out, "metrics.csv"), metrics)
    save_checkpoint(model, os.path.join(args.out, "model.ckpt"))
    print(f"wrote {args.out}/metrics.csv and {args.out}/model.ckpt")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.data)
    ds = D.apply_stream(ds, args.stream)
    ds = D.resample_dataset(ds, model.config.frames)
    x, y, ids = D.to_arrays(ds, dtype=model.dtype)
    scores = TR.predict_scores(model, x, batch_size=args.batch_size)
    sf = D.ScoreFile(ids, y, scores)
    D.save_scores(sf, args.out)
    _echo_config({"checkpoint": args.checkpoint, "data": args.data,
                  "stream": args.stream, "out": args.out})
    print(f"accuracy {sf.accuracy():.4f} over {len(ids)} samples -> {args.out}")
    return 0


def cmd_flops(args) -> int:
    file_cfg = _read_json(args.config) if args.config else {}
    doc = _resolve(ModelConfig().to_dict(), file_cfg.get("model"),
                   _model_dict_from_flags(args))
    doc["topology"] = args.topology or doc.get("topology", "ntu25")
    doc["classes"] = args.classes or doc.get("classes", 8)
    doc["frames"] = args.frames or doc.get("frames", 64)
    if args.no_pooling:
        doc["pooling_locations"] = []
    cfg = ModelConfig.from_dict(doc)
    _echo_config({"model": cfg.to_dict()})
    report = count_flops(cfg)
    lines = report.lines()
    if cfg.pooling_locations:
        control = count_flops(no_pooling_control(cfg))
        lines.append(f"no-pooling control {control.total / 1e6:10.3f} MMACs")
        lines.append(f"reduction ratio {report.total / control.total:.4f} "
                     f"({100 * (1 - report.total / control.total):.1f}% saved)")
    text = "\n".join(lines)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    dtype = np.float64 if args.precision == "f64" else np.float32
    tol = args.tol if args.tol is not None else (1e-4 if args.precision == "f64" else 1e-2)
    eps = 1e-5 if args.precision == "f64" else 1e-3
    names = set(args.ops.split(",")) if args.ops else None
    _echo_config({"precision": args.precision, "seeds": args.seeds, "tol": tol,
                  "eps": eps, "ops": sorted(names) if names else "all"})
    results = run_all(seeds=range(args.seeds), dtype=dtype, eps=eps, tol=tol,
                      names=names)
    worst = 0.0
    for name, err, ok in results:
        print(f"{'ok  ' if ok else 'FAIL'} {name:25s} max rel err {err:.3e}")
        worst = max(worst, err)
    print(f"{len(results)} checks, worst {worst:.3e}, tolerance {tol:.0e}")
    if not results:
        raise CliError(2, f"no checks matched {sorted(names)}")
    if not all(ok for _, _, ok in results):
        print("gradient check FAILED", file=sys.stderr)
        return 4
    return 0


def cmd_fuse(args) -> int:
    files = [D.load_scores(p) for p in args.scores]
    weights = list(_parse_floats(args.weights)) if args.weights else None
    acc, fused = D.fuse_scores(files, weights)
    D.save_scores(fused, args.out)
    _echo_config({"scores": args.scores,
                  "weights": weights or [1.0] * len(files), "out": args.out})
    print(f"fused accuracy {acc:.4f} over {len(fused.ids)} samples -> {args.out}")
    return 0


def cmd_export_topology(args) -> int:
    topo = builtin_topology(args.topology)
    scheme = builtin_partition(args.topology)
    with open(args.out, "w") as fh:
        json.dump(topology_doc(topo, scheme), fh, indent=2)
    _echo_config({"topology": args.topology, "out": args.out})
    print(f"wrote {args.out}")
    return 0


def cmd_dump_attention(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if not (model.config.adaptive and model.config.pooling_locations):
        raise CliError(2, "checkpoint has no adaptive pooling; nothing to dump")
    ds = _load_dataset(args.data)
    ds = D.resample_dataset(ds, model.config.frames)
    x, _, ids = D.to_arrays(ds, dtype=model.dtype)
    if args.limit:
        x, ids = x[: args.limit], ids[: args.limit]
    os.makedirs(args.out, exist_ok=True)
    _echo_config({"checkpoint": args.checkpoint, "data": args.data,
                  "limit": args.limit, "out": args.out})
    collected: dict[int, list] = {}
    for start in range(0, len(ids), args.batch_size):
        sl = slice(start, start + args.batch_size)
        corr: list = []
        model.forward(x[sl], train=False, corr_out=corr)
        for stage_index, values in corr:  # values: (batch, frames, nodes)
            collected.setdefault(stage_index, []).append((ids[sl], values))
    for stage_index, chunks in sorted(collected.items()):
        path = os.path.join(args.out, f"attention_stage{stage_index}.csv")
        with open(path, "w") as fh:
            for batch_ids, values in chunks:
                for i, sample_id in enumerate(batch_ids):
                    for t in range(values.shape[1]):
                        row = ",".join(repr(float(v)) for v in values[i, t])
                        fh.write(f"{sample_id},{t},{row}\n")
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelpool",
        description="Region-aware skeleton graph pooling: data synthesis, training, "
                    "evaluation, MAC accounting, gradient checks, and score fusion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic skeleton-motion dataset")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=16)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--topology", default="ntu25", choices=builtin_names())
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--eval")
    p.add_argument("--config", help="JSON with optional 'model'/'train' sections")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--stream", default="joint", choices=D.STREAMS)
    p.add_argument("--frames", type=int, help="resample sequences to this length")
    p.add_argument("--half-frames", action="store_true",
                   help="train on half the native frame count")
    p.add_argument("--model-seed", type=int, default=0)
    _add_model_flags(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--decay-steps")
    p.add_argument("--decay-factor", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--rotate-max", type=float)
    p.add_argument("--early-stop", type=float,
                   help="stop once in-epoch train accuracy reaches this value")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a dataset with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--stream", default="joint", choices=D.STREAMS)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="analytic multiply-accumulate report")
    p.add_argument("--topology", choices=builtin_names())
    p.add_argument("--classes", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--config")
    p.add_argument("--no-pooling", action="store_true",
                   help="count the pooling-free control instead")
    p.add_argument("--out")
    _add_model_flags(p)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("gradcheck", help="finite-difference check of every operator")
    p.add_argument("--precision", default="f64", choices=("f32", "f64"))
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--tol", type=float)
    p.add_argument("--ops", help="comma-separated case names (default: all)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("fuse", help="weighted fusion of score files")
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--weights", help="comma-separated, one per score file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("export-topology", help="write a built-in topology document")
    p.add_argument("--topology", required=True, choices=builtin_names())
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_topology)

    p = sub.add_parser("dump-attention", help="export per-stage correlation fields")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--limit", type=int, help="only the first N samples")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_attention)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
