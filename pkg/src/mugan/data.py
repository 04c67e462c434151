"""Data handling: CelebA index files, preprocessing, batching, synthetic faces.

The on-disk layout expected for real data is the standard aligned CelebA
distribution: an attribute file whose first line is the record count,
second line the attribute names, and remaining lines one filename plus 40
signed labels each; a partition file mapping each filename to split code
0 (train), 1 (val), or 2 (test); and the cropped 178x218 JPEGs.

The synthetic dataset is a small procedural stand-in that draws cartoon
faces whose appearance is controlled by the same 13 attributes, so the
training and evaluation paths can be exercised end to end without the real
corpus.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ConfigurationError, ContractViolation, ParseError

ATTRIBUTE_NAMES = (
    "Bald",
    "Bangs",
    "Black_Hair",
    "Blond_Hair",
    "Brown_Hair",
    "Bushy_Eyebrows",
    "Eyeglasses",
    "Male",
    "Mouth_Slightly_Open",
    "Mustache",
    "No_Beard",
    "Pale_Skin",
    "Young",
)
N_ATTRS = len(ATTRIBUTE_NAMES)
HAIR_COLORS = ("Black_Hair", "Blond_Hair", "Brown_Hair")
HAIR_INDICES = tuple(ATTRIBUTE_NAMES.index(n) for n in HAIR_COLORS)

RAW_WIDTH, RAW_HEIGHT = 178, 218
CROP_SIZE = 170
IMAGE_SIZE = 128
SPLIT_CODES = {0: "train", 1: "val", 2: "test"}
DATA_ROOT_ENV = "MUGAN_DATA_ROOT"

ATTR_FILE = "list_attr_celeba.txt"
PARTITION_FILE = "list_eval_partition.txt"
IMAGE_DIR = "img_align_celeba"


@dataclass(frozen=True)
class Record:
    filename: str
    labels: tuple  # 13 ints, 0 or 1, in ATTRIBUTE_NAMES order
    split: str


class DatasetIndex:
    """Parsed dataset listing: one Record per image, split-addressable."""

    def __init__(self, records):
        self.records = list(records)
        self._by_split = {}
        for r in self.records:
            self._by_split.setdefault(r.split, []).append(r)

    def __len__(self):
        return len(self.records)

    def split(self, name: str):
        """Records for a split; "train+val" concatenates those two."""
        if name == "train+val":
            return self._by_split.get("train", []) + self._by_split.get("val", [])
        if name not in SPLIT_CODES.values():
            raise ContractViolation(
                f"unknown split {name!r}; expected train, val, test, or train+val"
            )
        return self._by_split.get(name, [])

    def split_sizes(self):
        return {s: len(self._by_split.get(s, [])) for s in SPLIT_CODES.values()}


def _nonempty_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line:
                yield lineno, line


def load_index(attr_path, partition_path) -> DatasetIndex:
    """Parse the attribute and partition files into a DatasetIndex.

    Signed labels become 0/1, and only the 13 attributes this package
    edits are kept, in ATTRIBUTE_NAMES order regardless of column order in
    the file.
    """
    lines = _nonempty_lines(attr_path)
    try:
        lineno, first = next(lines)
    except StopIteration:
        raise ParseError(attr_path, 1, "file is empty") from None
    try:
        declared = int(first)
    except ValueError:
        raise ParseError(attr_path, lineno, f"expected a record count, got {first!r}") from None
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise ParseError(attr_path, lineno, "missing attribute name header") from None
    columns = header.split()
    missing = [n for n in ATTRIBUTE_NAMES if n not in columns]
    if missing:
        raise ConfigurationError(
            f"{attr_path}: attribute header lacks required column(s): {', '.join(missing)}"
        )
    picks = [columns.index(n) for n in ATTRIBUTE_NAMES]

    labels_by_file = {}
    order = []
    for lineno, line in lines:
        tokens = line.split()
        if len(tokens) != len(columns) + 1:
            raise ParseError(
                attr_path,
                lineno,
                f"expected a filename and {len(columns)} labels, got {len(tokens)} fields",
            )
        fname = tokens[0]
        for tok in tokens[1:]:
            if tok not in ("1", "-1"):
                raise ParseError(
                    attr_path, lineno, f"label must be 1 or -1, got {tok!r}"
                )
        labels_by_file[fname] = tuple(
            1 if tokens[1 + idx] == "1" else 0 for idx in picks
        )
        order.append(fname)
    if len(order) != declared:
        raise ParseError(
            attr_path,
            lineno if order else 2,
            f"header declares {declared} records but file has {len(order)}",
        )

    split_by_file = {}
    for lineno, line in _nonempty_lines(partition_path):
        tokens = line.split()
        if len(tokens) != 2:
            raise ParseError(
                partition_path, lineno, f"expected 'filename code', got {line!r}"
            )
        fname, code = tokens
        try:
            split = SPLIT_CODES[int(code)]
        except (ValueError, KeyError):
            raise ParseError(
                partition_path, lineno, f"partition code must be 0, 1, or 2, got {code!r}"
            ) from None
        split_by_file[fname] = split

    records = []
    for fname in order:
        if fname not in split_by_file:
            raise ParseError(
                partition_path, 0, f"no partition entry for {fname}"
            )
        records.append(Record(fname, labels_by_file[fname], split_by_file[fname]))
    return DatasetIndex(records)


def data_root(explicit=None):
    """Resolve the dataset directory from an argument or MUGAN_DATA_ROOT."""
    root = explicit or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise ConfigurationError(
            f"no data root given and {DATA_ROOT_ENV} is not set"
        )
    if not os.path.isdir(root):
        raise ConfigurationError(f"data root {root} is not a directory")
    return root


def load_celeba_index(root=None) -> DatasetIndex:
    root = data_root(root)
    return load_index(
        os.path.join(root, ATTR_FILE), os.path.join(root, PARTITION_FILE)
    )


def preprocess(image, out_size: int = IMAGE_SIZE):
    """Raw 178x218 RGB to a (3, out_size, out_size) tensor in [-1, 1].

    Accepts an HxWx3 uint8 array (or a PIL image) and applies a centered
    170x170 crop followed by bilinear resampling.
    """
    if isinstance(image, Image.Image):
        image = np.asarray(image.convert("RGB"))
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ContractViolation(f"expected an HxWx3 RGB array, got shape {arr.shape}")
    if arr.shape[:2] != (RAW_HEIGHT, RAW_WIDTH):
        raise ContractViolation(
            f"expected a {RAW_WIDTH}x{RAW_HEIGHT} raw image, got "
            f"{arr.shape[1]}x{arr.shape[0]}"
        )
    top = (RAW_HEIGHT - CROP_SIZE) // 2
    left = (RAW_WIDTH - CROP_SIZE) // 2
    crop = arr[top : top + CROP_SIZE, left : left + CROP_SIZE]
    x = torch.from_numpy(np.ascontiguousarray(crop)).to(torch.float32)
    x = x.permute(2, 0, 1).unsqueeze(0)
    x = F.interpolate(
        x, size=(out_size, out_size), mode="bilinear", align_corners=False, antialias=True
    ).squeeze(0)
    return x / 127.5 - 1.0


def to_uint8(x):
    """[-1, 1] tensor back to a uint8 HxWx3 array."""
    arr = ((x.detach().clamp(-1.0, 1.0) + 1.0) * 127.5).round().to(torch.uint8)
    return arr.permute(1, 2, 0).cpu().numpy()


def celeba_loader(root=None, out_size: int = IMAGE_SIZE):
    """Loader callable mapping a Record to a preprocessed image tensor."""
    root = data_root(root)
    img_dir = os.path.join(root, IMAGE_DIR)

    def load(record: Record):
        with Image.open(os.path.join(img_dir, record.filename)) as im:
            return preprocess(im, out_size=out_size)

    return load


def make_target_labels(a, rng=None):
    """Target attribute rows: a random permutation of the source rows.

    Every target vector is a label combination that actually occurs, just
    for a different face. With a single-row batch the targets equal the
    sources.
    """
    if a.dim() != 2:
        raise ContractViolation(f"expected a (B, n_attrs) label batch, got {a.dim()}d")
    if a.shape[0] == 0:
        raise ContractViolation("label batch is empty")
    perm = torch.randperm(a.shape[0], generator=rng)
    return a[perm]


def apply_attribute_edit(labels, name: str, value: int):
    """Set one named attribute on a label vector or batch.

    Turning on a hair color turns the other two off, keeping the edit
    combination plausible. Returns a new tensor.
    """
    if name not in ATTRIBUTE_NAMES:
        raise ConfigurationError(
            f"unknown attribute {name!r}; valid: {', '.join(ATTRIBUTE_NAMES)}"
        )
    if value not in (0, 1):
        raise ConfigurationError(f"attribute value must be 0 or 1, got {value!r}")
    idx = ATTRIBUTE_NAMES.index(name)
    out = labels.clone()
    if value == 1 and name in HAIR_COLORS:
        for h in HAIR_INDICES:
            out[..., h] = 0
    out[..., idx] = value
    return out


def flip_attribute(labels, idx: int):
    """Flip attribute `idx`, applying the hair-color exclusivity rule."""
    if not 0 <= idx < N_ATTRS:
        raise ContractViolation(f"attribute index {idx} out of range")
    name = ATTRIBUTE_NAMES[idx]
    current = labels[..., idx]
    out = labels.clone()
    if name in HAIR_COLORS:
        flipped = 1 - current
        for h in HAIR_INDICES:
            out[..., h] = torch.where(flipped == 1, torch.zeros_like(out[..., h]), out[..., h])
        out[..., idx] = flipped
    else:
        out[..., idx] = 1 - current
    return out


@dataclass
class Batch:
    images: torch.Tensor  # (B, 3, H, W) in [-1, 1]
    source_labels: torch.Tensor  # (B, n_attrs) float 0/1
    target_labels: torch.Tensor  # (B, n_attrs) float 0/1
    filenames: list


def _epoch_seed(seed: int, epoch: int) -> int:
    return (seed * 1_000_003 + epoch) % (2**63)


def epoch_order(n: int, seed: int, epoch: int):
    """Deterministic shuffle of range(n) for one epoch."""
    g = torch.Generator()
    g.manual_seed(_epoch_seed(seed, epoch))
    return torch.randperm(n, generator=g)


def iter_batches(index, split, batch_size, loader, seed=0, epoch=0, rng=None):
    """Yield Batches covering the split once, in the epoch's shuffled order.

    Target labels are drawn through `rng` when given (so a trainer can
    checkpoint and replay the stream); otherwise a fresh generator seeded
    from (seed, epoch) is used.
    """
    records = index.split(split)
    if not records:
        raise ContractViolation(f"split {split!r} is empty")
    if batch_size < 1 or batch_size > len(records):
        raise ContractViolation(
            f"batch size {batch_size} invalid for a split of {len(records)} records"
        )
    if rng is None:
        rng = torch.Generator()
        rng.manual_seed(_epoch_seed(seed, epoch) ^ 0x5EED)
    order = epoch_order(len(records), seed, epoch)
    for start in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[start : start + batch_size].tolist()]
        images = torch.stack([loader(r) for r in chunk])
        a = torch.tensor([r.labels for r in chunk], dtype=torch.float32)
        b = make_target_labels(a, rng=rng)
        yield Batch(images, a, b, [r.filename for r in chunk])


def sample_batch(index, split, batch_size, loader, seed=0):
    """First batch of epoch 0 for (index, split, seed); a determinism probe."""
    return next(iter_batches(index, split, batch_size, loader, seed=seed, epoch=0))


# ---------------------------------------------------------------------------
# synthetic faces


def _record_rng(seed: int, filename: str):
    digest = hashlib.sha256(f"{seed}/{filename}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def synthetic_index(n_train=500, n_val=0, n_test=50, seed=0) -> DatasetIndex:
    """Deterministic label table for the procedural dataset."""
    total = n_train + n_val + n_test
    if total < 1:
        raise ConfigurationError("synthetic dataset needs at least one record")
    records = []
    for i in range(total):
        fname = f"syn_{i:06d}.png"
        rng = _record_rng(seed, fname)
        labels = [0] * N_ATTRS

        def put(name, v):
            labels[ATTRIBUTE_NAMES.index(name)] = int(v)

        hair = rng.choice(4, p=[0.3, 0.25, 0.25, 0.2])  # black/blond/brown/none
        bald = rng.random() < 0.15
        if bald:
            put("Bald", 1)
        elif hair == 0:
            put("Black_Hair", 1)
        elif hair == 1:
            put("Blond_Hair", 1)
        elif hair == 2:
            put("Brown_Hair", 1)
        put("Bangs", (not bald) and rng.random() < 0.3)
        put("Bushy_Eyebrows", rng.random() < 0.3)
        put("Eyeglasses", rng.random() < 0.5)
        put("Male", rng.random() < 0.5)
        put("Mouth_Slightly_Open", rng.random() < 0.5)
        male = labels[ATTRIBUTE_NAMES.index("Male")]
        put("Mustache", male and rng.random() < 0.4)
        put("No_Beard", (not male) or rng.random() < 0.5)
        put("Pale_Skin", rng.random() < 0.4)
        put("Young", rng.random() < 0.6)

        if i < n_train:
            split = "train"
        elif i < n_train + n_val:
            split = "val"
        else:
            split = "test"
        records.append(Record(fname, tuple(labels), split))
    return DatasetIndex(records)


def render_synthetic_face(labels, filename="", size=64, seed=0):
    """Draw one procedural face as a (3, size, size) tensor in [-1, 1].

    Each attribute has a distinct visual marker (glasses frames, hair
    color patch, mustache band, and so on), strong enough for a small
    classifier to pick up. Jitter comes deterministically from (seed,
    filename), so the same record always renders the same pixels.
    """
    labels = [int(v) for v in labels]
    if len(labels) != N_ATTRS:
        raise ContractViolation(f"expected {N_ATTRS} labels, got {len(labels)}")
    lab = dict(zip(ATTRIBUTE_NAMES, labels))
    rng = _record_rng(seed, filename)
    s = size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float32) / (s - 1)

    img = np.empty((s, s, 3), dtype=np.float32)
    bg = 0.70 + 0.08 * rng.random()
    img[..., 0] = bg - 0.05 + 0.06 * yy
    img[..., 1] = bg + 0.06 * yy
    img[..., 2] = bg + 0.04 + 0.06 * yy

    cx = 0.50 + 0.03 * (rng.random() - 0.5)
    cy = 0.55 + 0.03 * (rng.random() - 0.5)
    rx = 0.30 + (0.04 if lab["Male"] else 0.0) + 0.01 * rng.random()
    ry = 0.38 + 0.01 * rng.random()
    face = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0

    if lab["Pale_Skin"]:
        skin = np.array([0.95, 0.88, 0.80], np.float32)
    else:
        skin = np.array([0.78, 0.58, 0.40], np.float32)
    skin = skin + 0.03 * (rng.random(3).astype(np.float32) - 0.5)
    img[face] = skin
    if lab["Male"]:
        jaw = (np.abs(xx - cx) <= rx * 0.85) & (yy >= cy + 0.24) & (yy <= cy + ry)
        img[jaw] = skin

    hair_color = None
    if lab["Black_Hair"]:
        hair_color = np.array([0.08, 0.08, 0.10], np.float32)
    elif lab["Blond_Hair"]:
        hair_color = np.array([0.88, 0.76, 0.40], np.float32)
    elif lab["Brown_Hair"]:
        hair_color = np.array([0.42, 0.26, 0.12], np.float32)
    elif not lab["Bald"]:
        hair_color = np.array([0.30, 0.26, 0.22], np.float32)
    if not lab["Bald"] and hair_color is not None:
        cap = (((xx - cx) / (rx * 1.12)) ** 2 + ((yy - cy) / (ry * 1.08)) ** 2 <= 1.0) & (
            yy < cy - 0.22
        )
        img[cap] = hair_color
        if lab["Bangs"]:
            fringe = face & (yy >= cy - 0.24) & (yy < cy - 0.16)
            img[fringe] = hair_color

    eye_y = cy - 0.08
    for ex in (cx - 0.11, cx + 0.11):
        eye = ((xx - ex) / 0.035) ** 2 + ((yy - eye_y) / 0.025) ** 2 <= 1.0
        img[eye] = (0.10, 0.10, 0.12)

    brow_h = 0.030 if lab["Bushy_Eyebrows"] else 0.010
    brow_y = eye_y - 0.06
    for ex in (cx - 0.11, cx + 0.11):
        brow = (np.abs(xx - ex) <= 0.055) & (np.abs(yy - brow_y) <= brow_h)
        img[brow] = (0.12, 0.10, 0.08)

    if lab["Eyeglasses"]:
        frame = np.zeros((s, s), dtype=bool)
        for ex in (cx - 0.11, cx + 0.11):
            outer = (np.abs(xx - ex) <= 0.075) & (np.abs(yy - eye_y) <= 0.055)
            inner = (np.abs(xx - ex) <= 0.055) & (np.abs(yy - eye_y) <= 0.035)
            frame |= outer & ~inner
        bridge = (np.abs(xx - cx) <= 0.04) & (np.abs(yy - (eye_y - 0.01)) <= 0.012)
        img[frame | bridge] = (0.05, 0.05, 0.05)

    mouth_y = cy + 0.20
    if lab["Mouth_Slightly_Open"]:
        mouth = ((xx - cx) / 0.085) ** 2 + ((yy - mouth_y) / 0.035) ** 2 <= 1.0
        img[mouth] = (0.55, 0.15, 0.15)
    else:
        mouth = (np.abs(xx - cx) <= 0.085) & (np.abs(yy - mouth_y) <= 0.010)
        img[mouth] = (0.45, 0.20, 0.20)

    if lab["Mustache"]:
        tash = (np.abs(xx - cx) <= 0.10) & (yy >= mouth_y - 0.085) & (yy <= mouth_y - 0.045)
        img[tash & face] = (0.10, 0.08, 0.06)

    if not lab["No_Beard"]:
        beard = face & (yy >= mouth_y + 0.05)
        img[beard] = (0.14, 0.11, 0.08)

    if not lab["Young"]:
        for off in (-0.17, 0.17):
            line = (np.abs(xx - (cx + off)) <= 0.006) & (np.abs(yy - (cy + 0.02)) <= 0.05)
            img[line & face] = (0.35, 0.25, 0.18)

    img += rng.normal(0.0, 0.012, img.shape).astype(np.float32)
    img = np.clip(img, 0.0, 1.0)
    x = torch.from_numpy(img).permute(2, 0, 1)
    return x * 2.0 - 1.0


def synthetic_loader(size=64, seed=0):
    """Loader callable for synthetic Records."""

    def load(record: Record):
        return render_synthetic_face(record.labels, record.filename, size=size, seed=seed)

    return load
