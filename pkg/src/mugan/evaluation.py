"""Evaluation: reconstruction quality and attribute-manipulation accuracy.

PSNR and SSIM are computed on the 0..255 scale after undoing the [-1, 1]
normalization. Manipulation accuracy sends each test image through the
generator once per attribute with exactly that attribute flipped (hair
colors stay mutually exclusive) and asks an independently trained
classifier whether the flipped attribute reads back as requested.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F

from .data import ATTRIBUTE_NAMES, N_ATTRS, flip_attribute
from .errors import ContractViolation

PSNR_IDENTICAL = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DYNAMIC_RANGE = 255.0


def _denorm(x):
    return (x + 1.0) * 127.5


def _check_pair(x, y, min_size=1):
    if x.shape != y.shape:
        raise ContractViolation(
            f"image shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}"
        )
    if x.dim() < 3:
        raise ContractViolation(f"expected (..., C, H, W) images, got {x.dim()}d")
    if x.shape[-1] < min_size or x.shape[-2] < min_size:
        raise ContractViolation(
            f"images of {x.shape[-2]}x{x.shape[-1]} are below the {min_size} minimum"
        )


def psnr(x, y) -> float:
    """Peak signal-to-noise ratio in dB between two [-1, 1] images.

    Identical inputs (and anything above the sentinel) report 100 dB so
    aggregates stay finite.
    """
    _check_pair(x, y)
    mse = ((_denorm(x.double()) - _denorm(y.double())) ** 2).mean().item()
    if mse == 0.0:
        return PSNR_IDENTICAL
    value = 10.0 * math.log10(DYNAMIC_RANGE**2 / mse)
    return min(value, PSNR_IDENTICAL)


def _gaussian_kernel(size, sigma, dtype):
    half = (size - 1) / 2.0
    coords = torch.arange(size, dtype=dtype) - half
    g = torch.exp(-(coords**2) / (2.0 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(x, y) -> float:
    """Mean structural similarity between two [-1, 1] images.

    Gaussian 11x11 window (sigma 1.5), valid positions only, computed per
    channel and averaged. Needs at least 11x11 inputs.
    """
    _check_pair(x, y, min_size=SSIM_WINDOW)
    squeeze = x.dim() == 3
    if squeeze:
        x, y = x.unsqueeze(0), y.unsqueeze(0)
    b, c = x.shape[0], x.shape[1]
    xd = _denorm(x.double()).reshape(b * c, 1, *x.shape[-2:])
    yd = _denorm(y.double()).reshape(b * c, 1, *y.shape[-2:])
    kernel = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA, torch.float64).reshape(
        1, 1, SSIM_WINDOW, SSIM_WINDOW
    )

    mu_x = F.conv2d(xd, kernel)
    mu_y = F.conv2d(yd, kernel)
    var_x = F.conv2d(xd * xd, kernel) - mu_x * mu_x
    var_y = F.conv2d(yd * yd, kernel) - mu_y * mu_y
    cov = F.conv2d(xd * yd, kernel) - mu_x * mu_y

    c1 = (SSIM_K1 * DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * DYNAMIC_RANGE) ** 2
    ssim_map = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return ssim_map.mean().item()


@dataclass
class EvalReport:
    variant: str
    split: str
    n_images: int
    psnr: float | None = None
    ssim: float | None = None
    mean_accuracy: float | None = None
    per_attribute: dict = field(default_factory=dict)


def _batched(records, batch_size):
    for start in range(0, len(records), batch_size):
        yield records[start : start + batch_size]


@torch.no_grad()
def eval_reconstruction(generator, index, split, loader, batch_size=16):
    """Mean per-image PSNR and SSIM of reconstructions over a split."""
    records = index.split(split)
    if not records:
        raise ContractViolation(f"split {split!r} is empty")
    if isinstance(generator, torch.nn.Module):
        generator.eval()
    psnrs, ssims = [], []
    for chunk in _batched(records, batch_size):
        x = torch.stack([loader(r) for r in chunk])
        a = torch.tensor([r.labels for r in chunk], dtype=torch.float32)
        x_rec = generator(x, a)
        for i in range(x.shape[0]):
            psnrs.append(psnr(x[i], x_rec[i]))
            ssims.append(ssim(x[i], x_rec[i]))
    return sum(psnrs) / len(psnrs), sum(ssims) / len(ssims)


@torch.no_grad()
def attribute_accuracy(generator, classifier, index, split, loader, batch_size=16):
    """Manipulation success rate per attribute and overall.

    For every image and every attribute, the generator is asked to flip
    exactly that attribute; the edit counts as a success when the
    classifier reads the flipped attribute at its requested value.
    `generator` may be any callable taking (images, target_labels).
    """
    records = index.split(split)
    if not records:
        raise ContractViolation(f"split {split!r} is empty")
    if isinstance(generator, torch.nn.Module):
        generator.eval()
    if isinstance(classifier, torch.nn.Module):
        classifier.eval()
    hits = [0] * N_ATTRS
    total = 0
    for chunk in _batched(records, batch_size):
        x = torch.stack([loader(r) for r in chunk])
        a = torch.tensor([r.labels for r in chunk], dtype=torch.float32)
        total += x.shape[0]
        for k in range(N_ATTRS):
            b = flip_attribute(a, k)
            edited = generator(x, b)
            probs = torch.sigmoid(classifier(edited))
            pred = (probs[:, k] > 0.5).float()
            hits[k] += int((pred == b[:, k]).sum().item())
    per_attr = {
        ATTRIBUTE_NAMES[k]: hits[k] / total for k in range(N_ATTRS)
    }
    mean_acc = sum(per_attr.values()) / N_ATTRS
    return per_attr, mean_acc


# Published full-scale results for context in reports. Reproducing them
# takes the full corpus and schedule; nothing in this package asserts them.
FULL_SCALE_REFERENCE = {
    "accuracy": {"AttGAN": 0.8391, "STGAN": 0.8489, "MU-GAN": 0.8915},
    "reconstruction": {
        "IcGAN": (15.28, 0.430),
        "FaderNet": (30.62, 0.908),
        "StarGAN": (22.80, 0.819),
        "AttGAN": (24.07, 0.841),
        "STGAN": (31.67, 0.948),
        "MU-GAN": (32.53, 0.962),
    },
    "gate_levels": {
        "AUC_1": (26.10, 0.862, 0.8472),
        "AUC_2": (27.43, 0.880, 0.8513),
        "AUC_3": (27.89, 0.891, 0.8497),
        "AUC_4": (28.14, 0.918, 0.8515),
    },
    "structure": {
        "M1": (28.14, 0.918, 0.8515),
        "M2": (25.10, 0.863, 0.8484),
        "M3": (30.06, 0.925, 0.8636),
    },
    "attention_maps": {
        "none": (24.07, 0.841),
        "Feat_8": (24.32, 0.845),
        "Feat_16": (24.65, 0.848),
        "Feat_32": (25.03, 0.859),
        "Feat_64": (24.88, 0.852),
        "Feat_8_16": (24.83, 0.850),
        "Feat_32_64": (25.10, 0.863),
    },
}


def render_report(reports, include_reference=False) -> str:
    """Plain-text table for one or more EvalReports."""
    if not reports:
        raise ContractViolation("no reports to render")
    lines = []
    header = f"{'variant':<12} {'split':<10} {'images':>6} {'psnr':>8} {'ssim':>7} {'acc':>7}"
    lines.append(header)
    lines.append("-" * len(header))
    for r in reports:
        p = f"{r.psnr:.2f}" if r.psnr is not None else "-"
        s = f"{r.ssim:.3f}" if r.ssim is not None else "-"
        a = f"{100 * r.mean_accuracy:.2f}%" if r.mean_accuracy is not None else "-"
        lines.append(
            f"{r.variant:<12} {r.split:<10} {r.n_images:>6} {p:>8} {s:>7} {a:>7}"
        )
    for r in reports:
        if r.per_attribute:
            lines.append("")
            lines.append(f"per-attribute accuracy ({r.variant}):")
            for name in ATTRIBUTE_NAMES:
                if name in r.per_attribute:
                    lines.append(f"  {name:<20} {100 * r.per_attribute[name]:6.2f}%")
    if include_reference:
        lines.append("")
        lines.append("full-scale reference (published, not asserted):")
        for model, (p, s) in FULL_SCALE_REFERENCE["reconstruction"].items():
            acc = FULL_SCALE_REFERENCE["accuracy"].get(model)
            tail = f"  acc {100 * acc:.2f}%" if acc else ""
            lines.append(f"  {model:<10} psnr {p:6.2f}  ssim {s:.3f}{tail}")
    return "\n".join(lines)


def render_report_tsv(reports) -> str:
    """Tab-separated form of the same table, one row per report."""
    if not reports:
        raise ContractViolation("no reports to render")
    cols = ["variant", "split", "n_images", "psnr", "ssim", "mean_accuracy"]
    cols += list(ATTRIBUTE_NAMES)
    rows = ["\t".join(cols)]
    for r in reports:
        vals = [
            r.variant,
            r.split,
            str(r.n_images),
            "" if r.psnr is None else f"{r.psnr:.6f}",
            "" if r.ssim is None else f"{r.ssim:.6f}",
            "" if r.mean_accuracy is None else f"{r.mean_accuracy:.6f}",
        ]
        for name in ATTRIBUTE_NAMES:
            v = r.per_attribute.get(name)
            vals.append("" if v is None else f"{v:.6f}")
        rows.append("\t".join(vals))
    return "\n".join(rows)
