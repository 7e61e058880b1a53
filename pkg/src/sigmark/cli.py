"""Command-line entry points.

Subcommands mirror the pipeline stages: corpus, augment, train-content,
train-vae, train-diffusion, train-watermark, train-all, sign, verify,
evaluate, report. ``verify`` exits 0 only when every protocol check passes.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import corpus, glyph, payload, pipeline, training
from .config import RunConfig, load_config
from .errors import SigmarkError


def _load_cfg(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.output:
        cfg.output_dir = args.output
    return cfg


def _workdir(cfg):
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_corpus(args):
    cfg = _load_cfg(args)
    manifest = corpus.build_corpus(cfg, _workdir(cfg) / "corpus")
    print(f"wrote {len(manifest['entries'])} entries to "
          f"{_workdir(cfg) / 'corpus'}")
    return 0


def cmd_augment(args):
    cfg = _load_cfg(args)
    image = corpus.load_image(args.input)
    params = glyph.AugmentParams(
        epsilon=cfg.augment.epsilon, n_control=cfg.augment.n_control,
        sigma=cfg.augment.sigma, sigma_scale=cfg.augment.sigma_scale,
        k_trunc=cfg.augment.k_trunc, open_radius=cfg.augment.open_radius,
        bending_reg=cfg.augment.bending_reg)
    rng = np.random.default_rng(cfg.seed)
    out = glyph.augment(image, params, rng)
    corpus.save_image(out, args.out)
    sidecar = {"source": args.input, "seed": cfg.seed,
               "params": params.__dict__}
    Path(str(args.out) + ".json").write_text(
        json.dumps(sidecar, sort_keys=True) + "\n")
    print(f"augmented -> {args.out}")
    return 0


def _load_train_split(cfg):
    root = _workdir(cfg) / "corpus"
    manifest = corpus.read_manifest(root / "manifest.jsonl")
    return corpus.load_split(manifest, root, "train")


def cmd_train_all(args):
    cfg = _load_cfg(args)
    pipeline.train_full_pipeline(cfg, _workdir(cfg))
    print(f"checkpoint: {_workdir(cfg) / 'system.pt'}")
    return 0


def cmd_sign(args):
    cfg = _load_cfg(args)
    system = pipeline.load_system(_workdir(cfg) / "system.pt")
    store = payload.Registry(_workdir(cfg) / "registry.jsonl")
    document = Path(args.document).read_bytes()
    samples = [corpus.load_image(p) for p in args.samples] if args.samples \
        else _signer_samples(cfg, args.signer)
    image, record, entry = pipeline.sign(
        system, args.signer, document, ttl=args.ttl, store=store,
        signer_samples=samples)
    corpus.save_image(image, args.out)
    print(f"record_id={entry.record_id} expires_at={entry.expires_at:.0f} "
          f"-> {args.out}")
    return 0


def _signer_samples(cfg, signer):
    root = _workdir(cfg) / "corpus"
    manifest = corpus.read_manifest(root / "manifest.jsonl")
    out = [corpus.load_image(root / e["path"])
           for e in manifest["entries"]
           if e["identity_id"] == int(signer)]
    return out[:5]


def cmd_verify(args):
    cfg = _load_cfg(args)
    system = pipeline.load_system(_workdir(cfg) / "system.pt")
    store = payload.Registry(_workdir(cfg) / "registry.jsonl")
    document = Path(args.document).read_bytes()
    image = corpus.load_image(args.image)
    report = pipeline.verify(system, image, args.signer, document, store)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return 0 if report.ok else 1


def cmd_evaluate(args):
    cfg = _load_cfg(args)
    t0 = time.time()
    system = pipeline.load_system(_workdir(cfg) / "system.pt")
    root = _workdir(cfg) / "corpus"
    manifest = corpus.read_manifest(root / "manifest.jsonl")
    eval_x, eval_y = corpus.load_split(manifest, root, "eval")
    report = pipeline.evaluate(system, eval_x, eval_y, seed=cfg.seed,
                               n_images=args.n_images,
                               sweeps=not args.no_sweeps,
                               only_kind=args.distortion)
    out = _workdir(cfg) / "eval_report.json"
    pipeline.write_report(report, out)
    (_workdir(cfg) / "eval_runtime.log").write_text(
        f"evaluate took {time.time() - t0:.1f}s\n")
    print(f"clean_accuracy={report['clean_accuracy']:.4f} -> {out}")
    return 0


def cmd_report(args):
    cfg = _load_cfg(args)
    out = _workdir(cfg) / "eval_report.json"
    report = json.loads(out.read_text())
    if report.get("config_hash") != cfg.config_hash():
        print("config hash mismatch between report and config",
              file=sys.stderr)
        return 1
    print(json.dumps(report, sort_keys=True, indent=2))
    return 0


def _stage_command(stage):
    def run(args):
        cfg = _load_cfg(args)
        x, y = _load_train_split(cfg)
        if stage == "content":
            enc, proj, log = training.train_content(x, y, cfg, seed=cfg.seed)
            print(f"content training done, final loss "
                  f"{log[-1]['loss']:.4f}")
        elif stage == "vae":
            codec, log = training.vae_finetune(x, cfg, seed=cfg.seed)
            print(f"vae training done, final loss {log[-1]['loss']:.4f}")
        else:
            print("use train-all for the diffusion and watermark stages "
                  "(they depend on upstream checkpoints)", file=sys.stderr)
            return 1
        return 0
    return run


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sigmark",
        description="Generative signature watermarking with a "
                    "one-signature-one-use protocol")
    parser.add_argument("--config", help="run config YAML path")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--output", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("corpus").set_defaults(func=cmd_corpus)

    p = sub.add_parser("augment")
    p.add_argument("input")
    p.add_argument("out")
    p.set_defaults(func=cmd_augment)

    sub.add_parser("train-content").set_defaults(
        func=_stage_command("content"))
    sub.add_parser("train-vae").set_defaults(func=_stage_command("vae"))
    sub.add_parser("train-diffusion").set_defaults(
        func=_stage_command("diffusion"))
    sub.add_parser("train-watermark").set_defaults(
        func=_stage_command("watermark"))
    sub.add_parser("train-all").set_defaults(func=cmd_train_all)

    p = sub.add_parser("sign")
    p.add_argument("--signer", required=True)
    p.add_argument("--document", required=True)
    p.add_argument("--ttl", type=float, default=3600.0)
    p.add_argument("--samples", nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sign)

    p = sub.add_parser("verify")
    p.add_argument("--signer", required=True)
    p.add_argument("--document", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("evaluate")
    p.add_argument("--n-images", type=int, default=None)
    p.add_argument("--no-sweeps", action="store_true")
    p.add_argument("--distortion", default=None,
                   help="restrict the sweep to one distortion kind")
    p.set_defaults(func=cmd_evaluate)

    sub.add_parser("report").set_defaults(func=cmd_report)
    return parser


def cli(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SigmarkError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
