"""Command-line entry point.

Subcommands: gen-data, pretrain, finetune, eval, bench, reconstruct,
selfcheck. Exit codes: 0 success, 1 verification failure, 2 usage error,
3 I/O error. Every run writes its fully resolved configuration and an
environment fingerprint beside its outputs so it can be reproduced.
"""

from __future__ import annotations

import argparse
import json
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bench_latency
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    CapacityError,
    ConfigError,
    ContractError,
    FormatError,
    IntegrityError,
    NumericError,
    ShapeError,
    VersionError,
)
from .evaluate import evaluate_retrieval, evaluate_task, vam_accuracy
from .model import HeadKind, Model, TaskHead, count_params
from .modelcfg import preset
from .selfcheck import run_selfcheck
from .synthetic import SyntheticDataset, SyntheticSpec, generate_synthetic_dataset
from .train import FinetuneConfig, TokenCache, TrainConfig, finetune, pretrain
from .viz import reconstruct_sample, write_reconstruction

USAGE_ERRORS = (ConfigError, ContractError, ShapeError, CapacityError)
IO_ERRORS = (OSError, FormatError, IntegrityError, VersionError)

AUDIO_PATCHES = {"16x16": (16, 16), "2x128": (2, 128)}


def _git_commit() -> str | None:
    for base in [Path.cwd(), *Path.cwd().parents]:
        head = base / ".git" / "HEAD"
        if head.exists():
            ref = head.read_text().strip()
            if ref.startswith("ref:"):
                ref_path = base / ".git" / ref.split(" ", 1)[1]
                return ref_path.read_text().strip() if ref_path.exists() else ref
            return ref
    return None


def _write_run_metadata(out: Path, resolved: dict, seed: int) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(json.dumps(resolved, sort_keys=True, indent=2))
    fingerprint = {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": seed,
        "argv": sys.argv[1:],
        "git_commit": _git_commit(),
    }
    (out / "fingerprint.json").write_text(json.dumps(fingerprint, sort_keys=True, indent=2))


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def _merged(args, file_cfg: dict, keys: dict) -> dict:
    """File values fill in wherever the flag was left at its default."""
    out = {}
    for key, default in keys.items():
        flag_val = getattr(args, key)
        if flag_val != default:
            out[key] = flag_val
        elif key in file_cfg:
            out[key] = file_cfg[key]
        else:
            out[key] = default
    return out


def _model_config(args, file_cfg: dict):
    cfg = preset(args.preset)
    overrides = {}
    if args.audio_patch is not None:
        overrides["audio_patch"] = AUDIO_PATCHES[args.audio_patch]
    if args.decoder is not None:
        overrides["decoder_arch"] = args.decoder
    if args.encoder is not None:
        overrides["encoder_arch"] = args.encoder
    for key, value in file_cfg.get("model", {}).items():
        overrides.setdefault(key, tuple(value) if key == "audio_patch" else value)
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


# -- handlers -------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        n_samples=args.n,
        frame_size=args.frame_size,
        frames=args.frames,
        audio_seconds=args.audio_seconds,
        sample_rate=args.sample_rate,
        seed=args.seed,
    )
    generate_synthetic_dataset(spec, args.out, force=args.force)
    print(f"wrote {args.n} samples under {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    file_cfg = _load_config_file(args.config)
    cfg = _model_config(args, file_cfg)
    tdefaults = TrainConfig()
    merged = _merged(
        args,
        file_cfg.get("train", {}),
        {
            "steps": tdefaults.steps,
            "batch_size": tdefaults.batch_size,
            "lr": tdefaults.base_lr,
            "objective": tdefaults.objective,
            "seed": 0,
        },
    )
    tcfg = TrainConfig(
        steps=merged["steps"],
        batch_size=merged["batch_size"],
        base_lr=merged["lr"],
        objective=merged["objective"],
        seed=merged["seed"],
    )
    out = Path(args.out)
    _write_run_metadata(out, {"model": cfg.to_dict(), "train": asdict(tcfg)}, tcfg.seed)
    dataset = SyntheticDataset(args.data)
    model = Model(cfg, seed=tcfg.seed)
    cache = TokenCache(dataset, cfg)
    with open(out / "losses.jsonl", "w") as log:
        reports, opt = pretrain(model, cache, tcfg, log_stream=log)
    save_checkpoint(model, out / "checkpoint.avck", optimizer=opt, global_step=tcfg.steps)
    summary = {
        "final": json.loads(reports[-1].to_json()),
        "vam_train_accuracy": vam_accuracy(model, cache, seed=tcfg.seed),
        "stats": model.stats,
        "param_count": count_params(cfg)["total"],
    }
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
    print(f"pretrained {tcfg.steps} steps; summary at {out / 'summary.json'}")
    return 0


def cmd_finetune(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    model = bundle.model
    dataset = SyntheticDataset(args.data)
    cache = TokenCache(dataset, model.cfg)
    kind = HeadKind(kind=args.head, n_out=args.classes if args.head == "multilabel" else 1)
    fcfg = FinetuneConfig(steps=args.steps, base_lr=args.lr, seed=args.seed)
    out = Path(args.out)
    _write_run_metadata(
        out,
        {"model": model.cfg.to_dict(), "finetune": asdict(fcfg), "head": vars(kind)},
        fcfg.seed,
    )
    head, reports = finetune(model, kind, cache, fcfg)
    save_checkpoint(
        model,
        out / "finetuned.avck",
        global_step=bundle.global_step + fcfg.steps,
        extra_params=head.named(),
        extra_meta={"head": vars(kind)},
    )
    metrics = evaluate_task(model, head, cache)
    (out / "metrics.json").write_text(json.dumps(metrics.to_dict(), sort_keys=True, indent=2))
    (out / "losses.jsonl").write_text("\n".join(json.dumps(r) for r in reports) + "\n")
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return 0


def _restore_head(bundle) -> TaskHead:
    if not bundle.extra or not bundle.extra_meta or "head" not in bundle.extra_meta:
        raise ContractError("checkpoint carries no task head; run finetune first")
    kind = HeadKind(**bundle.extra_meta["head"])
    head = TaskHead(bundle.model.cfg.d_enc, kind, np.random.default_rng(0), bundle.model.dtype)
    for name, p in head.named().items():
        if name not in bundle.extra:
            raise IntegrityError(f"checkpoint is missing tensor 'extra.{name}'")
        p.data = bundle.extra[name].astype(p.data.dtype, copy=False)
    return head


def cmd_eval(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    head = _restore_head(bundle)
    dataset = SyntheticDataset(args.data)
    cache = TokenCache(dataset, bundle.model.cfg)
    out = Path(args.out)
    _write_run_metadata(out, {"model": bundle.model.cfg.to_dict(), "ks": args.ks}, args.seed)
    results = {"task": evaluate_task(bundle.model, head, cache).to_dict()}
    if head.head.kind == "matching":
        ks = [int(k) for k in args.ks.split(",")]
        results["retrieval"] = evaluate_retrieval(bundle.model, head, cache, ks=ks).to_dict()
    (out / "metrics.json").write_text(json.dumps(results, sort_keys=True, indent=2))
    print(json.dumps(results, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    cfg = preset(args.preset)
    lengths = []
    for part in args.lengths.split(","):
        seconds, frames = part.split(":")
        lengths.append((float(seconds), int(frames)))
    report = bench_latency(cfg, input_lengths=tuple(lengths), runs=args.runs, seed=args.seed)
    out = Path(args.out)
    _write_run_metadata(out, {"preset": args.preset, "lengths": args.lengths, "runs": args.runs}, args.seed)
    (out / "latency.json").write_text(json.dumps(report, sort_keys=True, indent=2))
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_reconstruct(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    dataset = SyntheticDataset(args.data)
    if not 0 <= args.sample < len(dataset):
        raise ConfigError(f"sample index {args.sample} outside dataset of {len(dataset)}")
    out = Path(args.out)
    _write_run_metadata(out, {"sample": args.sample, "checkpoint": str(args.checkpoint)}, args.seed)
    result = reconstruct_sample(bundle.model, dataset, args.sample, seed=args.seed)
    written = write_reconstruction(out, result)
    print("\n".join(str(p) for p in written))
    return 0


def cmd_selfcheck(args) -> int:
    report = run_selfcheck(seed=args.seed, inject_fault=args.inject_fault)
    text = json.dumps(report, sort_keys=True, indent=2)
    if args.out:
        out = Path(args.out)
        _write_run_metadata(out, {"seed": args.seed}, args.seed)
        (out / "report.json").write_text(text)
    print(text)
    return 0 if report["passed"] else 1


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avmae",
        description="Desk-scale textless audio-visual transformer toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, default=8)
    g.add_argument("--frame-size", type=int, default=32)
    g.add_argument("--frames", type=int, default=4)
    g.add_argument("--audio-seconds", type=float, default=1.0)
    g.add_argument("--sample-rate", type=int, default=16384)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--force", action="store_true")
    g.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("pretrain", help="matching + masked-autoencoding pretraining")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON config file merged with flags")
    p.add_argument("--preset", choices=["desk", "paper", "paper-patch-count"], default="desk")
    p.add_argument("--steps", type=int, default=TrainConfig().steps)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=TrainConfig().batch_size)
    p.add_argument("--lr", type=float, default=TrainConfig().base_lr)
    p.add_argument("--objective", choices=["vam", "mae", "both"], default="both")
    p.add_argument("--audio-patch", choices=sorted(AUDIO_PATCHES), default=None)
    p.add_argument("--decoder", choices=["separate", "joint"], default=None)
    p.add_argument("--encoder", choices=["joint", "separate"], default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_pretrain)

    f = sub.add_parser("finetune", help="attach and train a task head")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--head", choices=["matching", "multilabel", "regression"], required=True)
    f.add_argument("--classes", type=int, default=4)
    f.add_argument("--steps", type=int, default=FinetuneConfig().steps)
    f.add_argument("--lr", type=float, default=FinetuneConfig().base_lr)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(handler=cmd_finetune)

    e = sub.add_parser("eval", help="evaluate a finetuned checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--ks", default="1,5,10")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(handler=cmd_eval)

    b = sub.add_parser("bench", help="stage-latency micro-benchmark")
    b.add_argument("--out", required=True)
    b.add_argument("--preset", choices=["desk", "paper", "paper-patch-count"], default="desk")
    b.add_argument("--runs", type=int, default=20)
    b.add_argument("--lengths", default="10:4,20:8", help="comma list of seconds:frames")
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(handler=cmd_bench)

    r = sub.add_parser("reconstruct", help="render masked/reconstruction/target images")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--data", required=True)
    r.add_argument("--sample", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(handler=cmd_reconstruct)

    s = sub.add_parser("selfcheck", help="run gradient checks, oracles, and invariants")
    s.add_argument("--out", default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--inject-fault", default=None, help=argparse.SUPPRESS)
    s.set_defaults(handler=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except IO_ERRORS as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
