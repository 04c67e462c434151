"""Command line interface.

Subcommands: train, train-classifier, eval, edit, ablate. Every option can
also come from a JSON config file (--config); explicit flags win over the
file, the file wins over built-in defaults. Commands that write into an
output directory record the fully resolved configuration in manifest.json
there before any heavy work starts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np
import torch
from PIL import Image

from . import __version__
from .data import (
    ATTRIBUTE_NAMES,
    DatasetIndex,
    RAW_HEIGHT,
    RAW_WIDTH,
    apply_attribute_edit,
    celeba_loader,
    load_celeba_index,
    preprocess,
    synthetic_index,
    synthetic_loader,
    to_uint8,
)
from .errors import ConfigurationError, MuganError
from .evaluation import (
    EvalReport,
    attribute_accuracy,
    eval_reconstruction,
    render_report,
    render_report_tsv,
)
from .networks import VariantSpec, count_parameters
from .training import (
    ClassifierConfig,
    TrainConfig,
    Trainer,
    classifier_accuracy,
    load_classifier,
    load_generator,
    save_classifier,
    train_classifier,
)

_TRAIN_DEFAULTS = {
    "variant": "M0",
    "epochs": 100,
    "batch_size": 32,
    "lr": 0.002,
    "n_critic": 5,
    "seed": 0,
    "split": "train+val",
    "image_size": None,  # 128 for celeba, 64 for synthetic
    "data": "celeba",
    "data_root": None,
    "synthetic_train": 500,
    "synthetic_val": 0,
    "synthetic_test": 50,
    "out": "runs/mugan",
    "resume": None,
    "checkpoint_every": 1,
    "sample_every": 1,
}

_CLASSIFIER_DEFAULTS = {
    "epochs": 10,
    "batch_size": 32,
    "lr": 1e-3,
    "seed": 0,
    "split": "train",
    "image_size": None,
    "data": "celeba",
    "data_root": None,
    "synthetic_train": 500,
    "synthetic_val": 0,
    "synthetic_test": 50,
    "out": "runs/classifier",
}

_EVAL_DEFAULTS = {
    "generator": None,
    "classifier": None,
    "mode": "both",
    "split": "test",
    "limit": 0,
    "batch_size": 16,
    "image_size": None,  # inherited from the generator checkpoint
    "data": "celeba",
    "data_root": None,
    "synthetic_train": 500,
    "synthetic_val": 0,
    "synthetic_test": 50,
    "out": None,
    "reference": False,
}

_EDIT_DEFAULTS = {
    "generator": None,
    "out": "edits",
    "source": "",
}

_ABLATE_DEFAULTS = {
    "variants": "M0,M1,M2,M3",
    "epochs": 5,
    "batch_size": 16,
    "lr": 0.002,
    "n_critic": 5,
    "seed": 0,
    "image_size": None,
    "data": "synthetic",
    "data_root": None,
    "synthetic_train": 200,
    "synthetic_val": 0,
    "synthetic_test": 40,
    "limit": 0,
    "classifier": None,
    "out": "runs/ablation",
}


def _add_data_args(p):
    p.add_argument("--data", choices=["celeba", "synthetic"], help="dataset family")
    p.add_argument("--data-root", dest="data_root", help="dataset directory (or $MUGAN_DATA_ROOT)")
    p.add_argument("--image-size", dest="image_size", type=int, help="square working resolution")
    p.add_argument("--synthetic-train", dest="synthetic_train", type=int)
    p.add_argument("--synthetic-val", dest="synthetic_val", type=int)
    p.add_argument("--synthetic-test", dest="synthetic_test", type=int)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mugan",
        description="Train, evaluate, and apply the attention U-Net attribute editor.",
    )
    parser.add_argument("--version", action="version", version=f"mugan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the editing GAN")
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--variant", help="M0..M3, AUC_1..AUC_4, Feat_<size>...")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n-critic", dest="n_critic", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--split", help="train, val, test, or train+val")
    p.add_argument("--out", help="output directory")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--sample-every", dest="sample_every", type=int)
    _add_data_args(p)

    p = sub.add_parser("train-classifier", help="train the evaluation classifier")
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--split")
    p.add_argument("--out", help="output directory")
    _add_data_args(p)

    p = sub.add_parser("eval", help="evaluate a trained generator")
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--generator", help="gan checkpoint path")
    p.add_argument("--classifier", help="classifier checkpoint path (for accuracy)")
    p.add_argument("--mode", choices=["reconstruction", "accuracy", "both"])
    p.add_argument("--split")
    p.add_argument("--limit", type=int, help="evaluate at most this many images (0 = all)")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--out", help="directory for report.tsv (optional)")
    p.add_argument(
        "--reference",
        action="store_true",
        default=None,
        help="append published full-scale numbers for context",
    )
    _add_data_args(p)

    p = sub.add_parser("edit", help="apply attribute edits to image files")
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--generator", help="gan checkpoint path")
    p.add_argument("--image", action="append", default=None, help="input image (repeatable)")
    p.add_argument(
        "--set",
        dest="edits",
        action="append",
        default=None,
        metavar="NAME=V",
        help="attribute to set, e.g. Eyeglasses=1 (repeatable)",
    )
    p.add_argument(
        "--source",
        help="comma-separated NAME=V pairs describing the input face; unlisted are 0",
    )
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("ablate", help="train and compare several variants")
    p.add_argument("--config", help="JSON file with option values")
    p.add_argument("--variants", help="comma-separated variant ids")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--n-critic", dest="n_critic", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--limit", type=int)
    p.add_argument("--classifier", help="classifier checkpoint for accuracy columns")
    p.add_argument("--out", help="output directory")
    _add_data_args(p)

    return parser


def resolve_options(args, defaults):
    """defaults < config file < explicit flags.

    Returns (options, explicit) where `explicit` holds the keys that came
    from the file or the command line rather than from defaults.
    """
    merged = dict(defaults)
    explicit = set()
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                from_file = json.load(fh)
        except OSError as e:
            raise ConfigurationError(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config {path} is not valid JSON: {e}") from None
        if not isinstance(from_file, dict):
            raise ConfigurationError(f"config {path} must hold a JSON object")
        unknown = set(from_file) - set(defaults)
        if unknown:
            raise ConfigurationError(
                f"config {path} has unknown key(s): {', '.join(sorted(unknown))}"
            )
        merged.update(from_file)
        explicit |= set(from_file)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
            explicit.add(key)
    return merged, explicit


def _build_dataset(opts):
    """(index, loader, image_size) from resolved options.

    The synthetic corpus always uses data seed 0, so the same record set
    backs every run regardless of the training seed.
    """
    if opts["data"] == "synthetic":
        size = opts["image_size"] or 64
        index = synthetic_index(
            n_train=opts["synthetic_train"],
            n_val=opts["synthetic_val"],
            n_test=opts["synthetic_test"],
            seed=0,
        )
        return index, synthetic_loader(size=size), size
    size = opts["image_size"] or 128
    index = load_celeba_index(opts["data_root"])
    return index, celeba_loader(opts["data_root"], out_size=size), size


def _write_manifest(out_dir, command, opts):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "options": {k: v for k, v in opts.items()},
        "package_version": __version__,
        "created": datetime.now(timezone.utc).isoformat(),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def cmd_train(args):
    opts, explicit = resolve_options(args, _TRAIN_DEFAULTS)
    index, loader, size = _build_dataset(opts)
    if opts["resume"]:
        trainer = Trainer.from_checkpoint(opts["resume"], index=index, loader=loader)
        # the checkpoint's own config rules unless the user overrode a knob
        if "epochs" in explicit:
            trainer.config.epochs = opts["epochs"]
        if "out" in explicit:
            trainer.config.out_dir = opts["out"]
        print(f"resumed from {opts['resume']} at epoch {trainer.epoch}")
    else:
        config = TrainConfig(
            variant=opts["variant"],
            image_size=size,
            epochs=opts["epochs"],
            batch_size=opts["batch_size"],
            lr=opts["lr"],
            n_critic=opts["n_critic"],
            seed=opts["seed"],
            split=opts["split"],
            out_dir=opts["out"],
            checkpoint_every=opts["checkpoint_every"],
            sample_every=opts["sample_every"],
        )
        trainer = Trainer(config, index=index, loader=loader)
    _write_manifest(trainer.config.out_dir, "train", opts)
    n_params = count_parameters(trainer.generator) + count_parameters(trainer.discriminator)
    print(
        f"variant {trainer.spec.name} at {trainer.config.image_size}px, "
        f"{n_params:,} parameters, {len(index.split(trainer.config.split))} images"
    )
    trainer.run(log=print)
    print(f"final checkpoint: {os.path.join(trainer.config.out_dir, 'final.ckpt')}")
    return 0


def cmd_train_classifier(args):
    opts, _explicit = resolve_options(args, _CLASSIFIER_DEFAULTS)
    index, loader, _size = _build_dataset(opts)
    _write_manifest(opts["out"], "train-classifier", opts)
    config = ClassifierConfig(
        epochs=opts["epochs"],
        batch_size=opts["batch_size"],
        lr=opts["lr"],
        seed=opts["seed"],
        split=opts["split"],
    )
    model = train_classifier(config, index, loader, log=print)
    path = os.path.join(opts["out"], "classifier.ckpt")
    save_classifier(model, path, config)
    eval_split = "test" if index.split("test") else config.split
    per_attr, mean_acc = classifier_accuracy(model, index, eval_split, loader)
    for name in ATTRIBUTE_NAMES:
        print(f"{name:<20} {100 * per_attr[name]:6.2f}%")
    print(f"mean accuracy on {eval_split}: {100 * mean_acc:.2f}%")
    print(f"classifier checkpoint: {path}")
    return 0


def _limited(index, split, limit):
    records = index.split(split)
    if limit and limit > 0:
        records = records[:limit]
    return DatasetIndex(records)


def cmd_eval(args):
    opts, _explicit = resolve_options(args, _EVAL_DEFAULTS)
    if not opts["generator"]:
        raise ConfigurationError("eval needs --generator (a gan checkpoint)")
    generator, gconfig = load_generator(opts["generator"])
    if opts["image_size"] is None:
        opts["image_size"] = gconfig.image_size
    index, loader, _size = _build_dataset(opts)
    sub = _limited(index, opts["split"], opts["limit"])
    n = len(sub.split(opts["split"]))
    report = EvalReport(
        variant=gconfig.variant, split=opts["split"], n_images=n
    )
    if opts["mode"] in ("reconstruction", "both"):
        report.psnr, report.ssim = eval_reconstruction(
            generator, sub, opts["split"], loader, batch_size=opts["batch_size"]
        )
    if opts["mode"] in ("accuracy", "both"):
        if not opts["classifier"]:
            raise ConfigurationError(
                "accuracy evaluation needs --classifier (train one with train-classifier)"
            )
        judge = load_classifier(opts["classifier"])
        report.per_attribute, report.mean_accuracy = attribute_accuracy(
            generator, judge, sub, opts["split"], loader, batch_size=opts["batch_size"]
        )
    print(render_report([report], include_reference=bool(opts["reference"])))
    if opts["out"]:
        _write_manifest(opts["out"], "eval", opts)
        tsv = os.path.join(opts["out"], "report.tsv")
        with open(tsv, "w", encoding="utf-8") as fh:
            fh.write(render_report_tsv([report]) + "\n")
        print(f"report: {tsv}")
    return 0


def _parse_assignment(text):
    if "=" not in text:
        raise ConfigurationError(f"expected NAME=0 or NAME=1, got {text!r}")
    name, _, raw = text.partition("=")
    name = name.strip()
    raw = raw.strip()
    if raw not in ("0", "1"):
        raise ConfigurationError(f"attribute value must be 0 or 1, got {text!r}")
    return name, int(raw)


def _load_edit_image(path, image_size):
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb)
    if arr.shape[:2] == (RAW_HEIGHT, RAW_WIDTH):
        return preprocess(arr, out_size=image_size)
    if arr.shape[0] == arr.shape[1]:
        x = torch.from_numpy(arr.copy()).to(torch.float32).permute(2, 0, 1) / 127.5 - 1.0
        if arr.shape[0] != image_size:
            x = torch.nn.functional.interpolate(
                x.unsqueeze(0),
                size=(image_size, image_size),
                mode="bilinear",
                align_corners=False,
                antialias=True,
            ).squeeze(0)
        return x
    raise ConfigurationError(
        f"{path}: expected a {RAW_WIDTH}x{RAW_HEIGHT} raw face or a square image, "
        f"got {arr.shape[1]}x{arr.shape[0]}"
    )


def cmd_edit(args):
    opts, _explicit = resolve_options(args, _EDIT_DEFAULTS)
    images = args.image or []
    edits = args.edits or []
    if not opts["generator"]:
        raise ConfigurationError("edit needs --generator (a gan checkpoint)")
    if not images:
        raise ConfigurationError("edit needs at least one --image")
    if not edits:
        raise ConfigurationError("edit needs at least one --set NAME=V")
    generator, gconfig = load_generator(opts["generator"])
    size = gconfig.image_size

    source = torch.zeros(gconfig.n_attrs)
    if opts["source"]:
        for part in opts["source"].split(","):
            name, value = _parse_assignment(part)
            source = apply_attribute_edit(source, name, value)
    target = source.clone()
    suffix = []
    for text in edits:
        name, value = _parse_assignment(text)
        target = apply_attribute_edit(target, name, value)
        suffix.append(f"{name}{value}")
    suffix = "_".join(suffix)

    os.makedirs(opts["out"], exist_ok=True)
    generator.eval()
    for path in images:
        x = _load_edit_image(path, size)
        with torch.no_grad():
            y = generator(x.unsqueeze(0), target.unsqueeze(0)).squeeze(0)
        stem = os.path.splitext(os.path.basename(path))[0]
        out_path = os.path.join(opts["out"], f"{stem}_{suffix}.png")
        Image.fromarray(to_uint8(y)).save(out_path)
        print(out_path)
    return 0


def cmd_ablate(args):
    opts, _explicit = resolve_options(args, _ABLATE_DEFAULTS)
    variant_ids = [v.strip() for v in str(opts["variants"]).split(",") if v.strip()]
    if not variant_ids:
        raise ConfigurationError("ablate needs at least one variant id")
    for vid in variant_ids:
        VariantSpec.from_name(vid)  # validate all ids up front
    index, loader, size = _build_dataset(opts)
    _write_manifest(opts["out"], "ablate", opts)
    judge = load_classifier(opts["classifier"]) if opts["classifier"] else None

    reports = []
    for vid in variant_ids:
        run_dir = os.path.join(opts["out"], vid)
        config = TrainConfig(
            variant=vid,
            image_size=size,
            epochs=opts["epochs"],
            batch_size=opts["batch_size"],
            lr=opts["lr"],
            n_critic=opts["n_critic"],
            seed=opts["seed"],
            split="train+val",
            out_dir=run_dir,
            checkpoint_every=0,
            sample_every=0,
        )
        trainer = Trainer(config, index=index, loader=loader)
        print(f"[{vid}] training {config.epochs} epochs")
        trainer.run(log=lambda msg: print(f"[{vid}] {msg}"))
        sub = _limited(index, "test", opts["limit"])
        psnr_mean, ssim_mean = eval_reconstruction(
            trainer.generator, sub, "test", loader, batch_size=opts["batch_size"]
        )
        report = EvalReport(
            variant=vid,
            split="test",
            n_images=len(sub.split("test")),
            psnr=psnr_mean,
            ssim=ssim_mean,
        )
        if judge is not None:
            report.per_attribute, report.mean_accuracy = attribute_accuracy(
                trainer.generator, judge, sub, "test", loader, batch_size=opts["batch_size"]
            )
        reports.append(report)
    print(render_report(reports))
    tsv = os.path.join(opts["out"], "ablation.tsv")
    with open(tsv, "w", encoding="utf-8") as fh:
        fh.write(render_report_tsv(reports) + "\n")
    print(f"table: {tsv}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "train-classifier": cmd_train_classifier,
    "eval": cmd_eval,
    "edit": cmd_edit,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except MuganError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
