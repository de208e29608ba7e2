"""Manifest parsing: a CSV listing image ids and their file paths."""

import csv
import os

from .errors import ManifestError

HEADER = ["id", "path"]


def read_manifest(path) -> list:
    """Return ``[(image_id, resolved_path), ...]`` from a manifest CSV.

    Relative paths resolve against the manifest's own directory, so a
    manifest can travel with its image folder.  Ids must be unique and
    non-empty; existence of the paths is checked later, at extraction time.
    """
    if not os.path.isfile(path):
        raise ManifestError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HEADER:
            raise ManifestError(f"manifest header must be 'id,path', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ManifestError(f"line {lineno}: expected 2 fields, got {len(row)}")
            image_id, rel = row[0].strip(), row[1].strip()
            if not image_id or not rel:
                raise ManifestError(f"line {lineno}: empty id or path")
            if image_id in seen:
                raise ManifestError(f"line {lineno}: duplicate id {image_id!r}")
            seen.add(image_id)
            full = rel if os.path.isabs(rel) else os.path.join(base, rel)
            entries.append((image_id, full))
    if not entries:
        raise ManifestError("manifest lists no images")
    return entries
