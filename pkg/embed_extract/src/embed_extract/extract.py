"""The extraction pipeline plus a self-contained CSEB writer."""

import logging
import os
import struct

import numpy as np
import torch
from PIL import Image
from torchvision import transforms

from .backbones import build_backbone
from .errors import BackboneError, ImageDecodeError, ManifestError

log = logging.getLogger("embed_extract")

# fixed, not configurable: square resize to 224x224 and the usual
# channel statistics
PREPROCESS = transforms.Compose([
    transforms.Resize((224, 224)),
    transforms.ToTensor(),
    transforms.Normalize(mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225)),
])


def load_image(path) -> torch.Tensor:
    try:
        with Image.open(path) as img:
            return PREPROCESS(img.convert("RGB"))
    except Exception as exc:
        raise ImageDecodeError(f"cannot decode {path}: {exc}") from exc


def extract(entries, backbone: str, out_path, batch: int = 8,
            skip_bad: bool = False, weights: str = "pretrained",
            device: str = "cpu"):
    """Embed every manifest entry and write a CSEB table to ``out_path``.

    Returns ``(kept_ids, skipped_ids)``.  ``batch`` only groups file
    loading; every image goes through the model alone, because batched
    CPU convolutions do not promise batch-size-independent floats and the
    output must not depend on how the work was chunked.
    """
    if batch < 1:
        raise ManifestError(f"batch must be >= 1, got {batch}")
    missing = [p for _, p in entries if not os.path.isfile(p)]
    if missing:
        raise ManifestError(
            f"{len(missing)} manifest paths do not exist, first: {missing[0]}")
    model, dim = build_backbone(backbone, weights)
    model.to(device)
    rows = []
    skipped = []
    for start in range(0, len(entries), batch):
        loaded = []
        for image_id, path in entries[start:start + batch]:
            try:
                loaded.append((image_id, load_image(path)))
            except ImageDecodeError as exc:
                if not skip_bad:
                    raise
                log.warning("skipping %s: %s", image_id, exc)
                skipped.append(image_id)
        with torch.inference_mode():
            for image_id, tensor in loaded:
                feats = model(tensor.unsqueeze(0).to(device))
                vec = feats.squeeze(0).to("cpu", torch.float32).numpy()
                if vec.ndim != 1 or vec.shape[0] != dim:
                    raise BackboneError(
                        f"backbone {backbone!r} produced shape "
                        f"{tuple(feats.shape)}, expected (1, {dim})")
                rows.append((image_id, vec))
    if not rows:
        raise ManifestError("no images survived extraction")
    write_cseb(rows, dim, out_path)
    return [image_id for image_id, _ in rows], skipped


def write_cseb(rows, dim: int, path) -> None:
    """Write ``[(id, float vector)]`` rows in the CSEB layout.

    Little-endian throughout: magic, u16 version, u32 count, u32 dim, then
    per row a u16 id byte length, the utf-8 id, and dim float32 values.
    """
    with open(path, "wb") as fh:
        fh.write(b"CSEB")
        fh.write(struct.pack("<HII", 1, len(rows), dim))
        for image_id, vec in rows:
            encoded = image_id.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ManifestError(f"image id too long: {image_id[:32]!r}...")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(np.asarray(vec, dtype="<f4").tobytes())
