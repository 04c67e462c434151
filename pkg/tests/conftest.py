import os
import sys

import pytest
import torch

sys.path.insert(0, os.path.dirname(__file__))

from mugan.data import synthetic_index, synthetic_loader

# Fixture in the exact on-disk CelebA format: count line, 40-name header,
# then filename plus signed labels. Only 6 records, but each of the 13
# edited attributes appears in both states somewhere.
CELEBA_HEADER = (
    "5_o_Clock_Shadow Arched_Eyebrows Attractive Bags_Under_Eyes Bald Bangs "
    "Big_Lips Big_Nose Black_Hair Blond_Hair Blurry Brown_Hair Bushy_Eyebrows "
    "Chubby Double_Chin Eyeglasses Goatee Gray_Hair Heavy_Makeup High_Cheekbones "
    "Male Mouth_Slightly_Open Mustache Narrow_Eyes No_Beard Oval_Face Pale_Skin "
    "Pointy_Nose Receding_Hairline Rosy_Cheeks Sideburns Smiling Straight_Hair "
    "Wavy_Hair Wearing_Earrings Wearing_Hat Wearing_Lipstick Wearing_Necklace "
    "Wearing_Necktie Young"
)

_ROWS = [
    ("000001.jpg", {"Bald": 1, "Male": 1, "No_Beard": -1, "Mustache": 1, "Young": -1}),
    ("000002.jpg", {"Bangs": 1, "Black_Hair": 1, "Mouth_Slightly_Open": 1, "Young": 1}),
    ("000003.jpg", {"Blond_Hair": 1, "Pale_Skin": 1, "Eyeglasses": 1, "Young": 1}),
    ("000004.jpg", {"Brown_Hair": 1, "Bushy_Eyebrows": 1, "Male": 1, "Young": 1}),
    ("000005.jpg", {"Eyeglasses": 1, "Mouth_Slightly_Open": 1, "Pale_Skin": 1}),
    ("000006.jpg", {"Black_Hair": 1, "Male": 1, "Mustache": -1, "No_Beard": 1}),
]


def celeba_attr_text(rows=None, declared=None):
    rows = _ROWS if rows is None else rows
    names = CELEBA_HEADER.split()
    lines = [str(len(rows) if declared is None else declared), CELEBA_HEADER]
    for fname, overrides in rows:
        vals = []
        for n in names:
            base = 1 if n == "No_Beard" else -1
            vals.append(str(overrides.get(n, base)))
        lines.append(fname + " " + " ".join(vals))
    return "\n".join(lines) + "\n"


def celeba_partition_text(rows=None, codes=None):
    rows = _ROWS if rows is None else rows
    if codes is None:
        codes = [0, 0, 0, 1, 2, 2]
    lines = [f"{fname} {code}" for (fname, _), code in zip(rows, codes)]
    return "\n".join(lines) + "\n"


@pytest.fixture
def celeba_fixture(tmp_path):
    """Write the bundled-format fixture files, return (attr_path, part_path)."""
    attr = tmp_path / "list_attr_celeba.txt"
    part = tmp_path / "list_eval_partition.txt"
    attr.write_text(celeba_attr_text())
    part.write_text(celeba_partition_text())
    return attr, part


@pytest.fixture(scope="session")
def tiny_synth():
    """Small synthetic dataset shared by the faster tests."""
    index = synthetic_index(n_train=24, n_val=0, n_test=8, seed=0)
    return index, synthetic_loader(size=32)


@pytest.fixture(scope="session")
def synth64():
    """64px synthetic dataset for evaluation-flavored tests."""
    index = synthetic_index(n_train=16, n_val=0, n_test=8, seed=0)
    return index, synthetic_loader(size=64)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield
