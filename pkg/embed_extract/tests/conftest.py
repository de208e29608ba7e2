import csv
import shutil

import numpy as np
import pytest
from PIL import Image


def write_png(path, seed, size=(40, 32)):
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
    Image.fromarray(arr, "RGB").save(path)


def write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "path"])
        writer.writerows(rows)


@pytest.fixture(scope="session")
def image_set(tmp_path_factory):
    """Ten manifest rows over nine distinct images; d0 is a byte-identical
    copy of i0's file under a different id."""
    root = tmp_path_factory.mktemp("imgs")
    rows = []
    for k in range(9):
        name = f"img{k}.png"
        write_png(root / name, seed=k)
        rows.append((f"i{k}", name))
    shutil.copyfile(root / "img0.png", root / "dup0.png")
    rows.append(("d0", "dup0.png"))
    manifest = root / "manifest.csv"
    write_manifest(manifest, rows)
    return {"root": root, "manifest": str(manifest), "ids": [r[0] for r in rows],
            "duplicates": ("i0", "d0")}
