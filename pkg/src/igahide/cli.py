"""Command line entry points: train, evaluate, embed, extract, visualize,
ablate.

Every command writes a run manifest (effective config + seed + versions) into
the output directory so any run can be reproduced exactly. Exit codes:
0 success, 2 usage error, 1 runtime error.
"""

import argparse
import json
import sys
from pathlib import Path

import torch

from . import __version__, attention, distortions, metrics
from .dataio import (DatasetSpec, format_bits, load_dataset, parse_message,
                     read_image, write_image)
from .nets import NetConfig
from .training import LossWeights, TrainConfig, Trainer

USAGE_ERROR = 2
RUNTIME_ERROR = 1

DEFAULT_EVAL_SPECS = ["identity", "crop:p=0.3", "cropout:p_c=0.3", "dropout:p_d=0.3",
                      "resize:z=0.7", "jpeg:q=50"]


def _read_config_file(path):
    """Plain-text key=value file; '#' starts a comment."""
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line (expected key=value): '{line}'")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _write_manifest(outdir: Path, args: argparse.Namespace) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    lines = [f"igahide_version={__version__}", f"torch_version={torch.__version__}"]
    for key, value in sorted(vars(args).items()):
        if key in ("func", "config"):
            continue
        lines.append(f"{key}={value}")
    (outdir / "run_manifest.txt").write_text("\n".join(lines) + "\n")


def _trainer_from_args(args) -> Trainer:
    net_cfg = NetConfig(height=args.size, width=args.size,
                        message_length=args.k, encoded_length=args.l,
                        use_msgcodec=not args.no_msgcodec,
                        use_attention=not args.no_attention)
    mask_source = (attention.MaskSource.SOBEL if args.mask == "sobel"
                   else attention.MaskSource.ONES if args.no_attention
                   else attention.MaskSource.IGA)
    train_cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                            learning_rate=args.learning_rate, seed=args.seed,
                            mask_source=mask_source,
                            target_bpa=args.target_bpa)
    channel = distortions.ChannelConfig.parse(args.noise)
    return Trainer(net_cfg, channel, LossWeights(), train_cfg)


def cmd_train(args) -> int:
    outdir = Path(args.outdir)
    _write_manifest(outdir, args)
    ckpt_path = outdir / "checkpoint.igah"
    if args.resume:
        if not ckpt_path.exists():
            raise FileNotFoundError(f"cannot resume: {ckpt_path} does not exist")
        trainer = Trainer.load(ckpt_path)
    else:
        trainer = _trainer_from_args(args)
    spec = DatasetSpec(root=args.data, height=trainer.config.height,
                       width=trainer.config.width, limit=args.limit, seed=args.seed)
    images = load_dataset(spec)
    n_val = max(1, len(images) // 10)
    train_images, val_images = images[n_val:], images[:n_val]
    trainer.fit(train_images, val_images, checkpoint_path=ckpt_path,
                log_file=outdir / "training_log.txt", progress=True)
    print(f"checkpoint: {ckpt_path}")
    print(f"log: {outdir / 'training_log.txt'}")
    return 0


def _eval_trainer(args) -> Trainer:
    trainer = Trainer.load(args.checkpoint)
    trainer.pipeline.eval()
    return trainer


def cmd_evaluate(args) -> int:
    outdir = Path(args.outdir)
    _write_manifest(outdir, args)
    trainer = _eval_trainer(args)
    spec = DatasetSpec(root=args.data, height=trainer.config.height,
                       width=trainer.config.width, limit=args.limit, seed=args.seed)
    images = load_dataset(spec)
    spec_texts = args.noise or (DEFAULT_EVAL_SPECS + ["combined"])
    specs = []
    for text in spec_texts:
        if text == "combined":
            specs.append(("combined", distortions.ChannelConfig.parse("combined")))
        else:
            specs.append((text, distortions.DistortionSpec.parse(text)))
    flat_specs = [s for _, s in specs]
    report = metrics.evaluate(trainer.pipeline, images, flat_specs, seed=args.seed)
    report.config_echo = {"checkpoint": str(args.checkpoint),
                          "k": trainer.config.message_length,
                          "l": trainer.config.embedded_length,
                          "seed": args.seed,
                          "noise": [name for name, _ in specs]}
    table = report.format_table()
    print(table)
    (outdir / "eval_report.txt").write_text(table + "\n")
    (outdir / "eval_report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return 0


def cmd_embed(args) -> int:
    _write_manifest(Path(args.output).parent, args)
    trainer = _eval_trainer(args)
    k = trainer.config.message_length
    message = parse_message(args.message, k, hex_input=args.hex)
    cover = read_image(args.image, trainer.config.height, trainer.config.width)
    with torch.no_grad():
        encoded = trainer.pipeline.embed(cover.unsqueeze(0), message.unsqueeze(0))[0]
    write_image(args.output, encoded)
    print(f"encoded image: {args.output}")
    print(f"psnr_db={metrics.psnr(cover, encoded):.2f}")
    return 0


def cmd_extract(args) -> int:
    trainer = _eval_trainer(args)
    image = read_image(args.image)
    h, w = trainer.config.height, trainer.config.width
    if image.shape[-2:] != (h, w):
        print(f"warning: resizing input to {h}x{w}", file=sys.stderr)
        image = read_image(args.image, h, w)
    with torch.no_grad():
        recovered = trainer.pipeline.extract(image.unsqueeze(0))[0]
    print(format_bits((recovered >= 0.5).float()))
    return 0


def cmd_visualize(args) -> int:
    outdir = Path(args.outdir)
    _write_manifest(outdir, args)
    trainer = _eval_trainer(args)
    cover = read_image(args.image, trainer.config.height, trainer.config.width)
    rng = torch.Generator().manual_seed(args.seed)
    k = trainer.config.message_length
    message = (torch.rand(k, generator=rng) < 0.5).float()
    spec = distortions.DistortionSpec(kind=distortions.DistortionKind.IDENTITY)
    cover_in = cover.unsqueeze(0).clone().requires_grad_(True)
    out = trainer.pipeline.forward_full(cover_in, message.unsqueeze(0), None, spec, rng)
    from .msgcodec import message_losses
    l_mr, _ = message_losses(message.unsqueeze(0), out["m_out"], out["m_en"], out["m_de"],
                             trainer.weights.message_reconstruction,
                             trainer.weights.message_decoding)
    (grad_cover,) = torch.autograd.grad(l_mr, cover_in)
    iga = attention.iga_mask(grad_cover)[0]
    sobel = attention.sobel_mask(cover)
    iga_path = outdir / "mask_iga.png"
    sobel_path = outdir / "mask_sobel.png"
    write_image(iga_path, iga)
    write_image(sobel_path, sobel)
    overlap = float(torch.mean(torch.abs(iga - (1.0 - sobel))).item())
    print(f"iga mask: {iga_path}")
    print(f"sobel mask: {sobel_path}")
    print(f"mean_abs_difference={overlap:.4f}")
    return 0


ABLATION_VARIANTS = [
    ("Basic", {"use_msgcodec": False, "use_attention": False}),
    ("w MC.", {"use_msgcodec": True, "use_attention": False}),
    ("w Att.", {"use_msgcodec": False, "use_attention": True}),
    ("Both", {"use_msgcodec": True, "use_attention": True}),
]


def run_ablation(data_root, outdir: Path, size=32, k=16, l=8, epochs=20,
                 batch_size=8, limit=None, seed=0, noise="identity",
                 learning_rate=1e-3):
    """Train the four module-ablation variants with shared seed and data order."""
    spec = DatasetSpec(root=data_root, height=size, width=size, limit=limit, seed=seed)
    images = load_dataset(spec)
    n_val = max(1, len(images) // 10)
    train_images, val_images = images[n_val:], images[:n_val]
    results = {}
    for name, flags in ABLATION_VARIANTS:
        cfg = NetConfig(height=size, width=size, message_length=k, encoded_length=l,
                        **flags)
        mask_source = (attention.MaskSource.IGA if flags["use_attention"]
                       else attention.MaskSource.ONES)
        tcfg = TrainConfig(epochs=epochs, batch_size=batch_size, seed=seed,
                           learning_rate=learning_rate, mask_source=mask_source)
        trainer = Trainer(cfg, distortions.ChannelConfig.parse(noise), LossWeights(), tcfg)
        trainer.fit(train_images, val_images)
        results[name] = trainer.validation_bpa(val_images)
    lines = [f"{'variant':<10} {'BPA':>8}"]
    for name, _ in ABLATION_VARIANTS:
        lines.append(f"{name:<10} {results[name]:>8.4f}")
    table = "\n".join(lines)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "ablation_report.txt").write_text(table + "\n")
    return results, table


def cmd_ablate(args) -> int:
    outdir = Path(args.outdir)
    _write_manifest(outdir, args)
    _, table = run_ablation(args.data, outdir, size=args.size, k=args.k, l=args.l,
                            epochs=args.epochs, batch_size=args.batch_size,
                            limit=args.limit, seed=args.seed, noise=args.noise,
                            learning_rate=args.learning_rate)
    print(table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="igahide",
                                     description="Image data hiding with inverse-gradient attention")
    parser.add_argument("--config", help="plain-text key=value config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--outdir", default="runs/out")

    def add_train_flags(p):
        p.add_argument("--data", required=True, help="image directory")
        p.add_argument("--k", type=int, default=30, help="message length in bits")
        p.add_argument("--l", type=int, default=16, help="compressed message length")
        p.add_argument("--size", type=int, default=128, help="square image size")
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--batch-size", type=int, default=32)
        p.add_argument("--learning-rate", type=float, default=1e-3)
        p.add_argument("--noise", default="combined",
                       help="e.g. identity, jpeg:q=50, crop:p=0.3, combined")
        p.add_argument("--limit", type=int, default=None, help="cap on dataset size")

    p = sub.add_parser("train", help="train a model")
    add_common(p)
    add_train_flags(p)
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--no-msgcodec", action="store_true")
    p.add_argument("--mask", choices=["iga", "sobel"], default="iga")
    p.add_argument("--target-bpa", type=float, default=None)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint over distortions")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--noise", action="append", default=None,
                   help="repeatable; default sweeps all distortions + combined")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("embed", help="embed a message into one image")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--message", required=True, help="bit string, or hex with --hex")
    p.add_argument("--hex", action="store_true")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="recover the bit string from an image")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("visualize", help="write attention/sobel mask images")
    add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("ablate", help="train and score the four module variants")
    add_common(p)
    add_train_flags(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--config" in argv:
        # apply file values as defaults so explicit flags win
        idx = argv.index("--config")
        cfg_path = argv[idx + 1]
        file_values = _read_config_file(cfg_path)
        extra = []
        for key, value in file_values.items():
            flag = "--" + key.replace("_", "-")
            if flag not in argv:
                if value.lower() == "true":
                    extra.append(flag)
                elif value.lower() == "false":
                    pass
                else:
                    extra.extend([flag, value])
        argv = argv[:idx] + argv[idx + 2:] + extra
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return USAGE_ERROR if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
