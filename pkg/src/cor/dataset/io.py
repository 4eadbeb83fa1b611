"""Manifest JSON and PNG image/mask files."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from cor.dataset.schema import CorSample, Manifest
from cor.errors import InputError, ParseError

FORMAT = "cor-manifest"
VERSION = 1


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_image(path, array: np.ndarray) -> None:
    a = np.asarray(array)
    if a.ndim != 3 or a.shape[-1] != 3 or a.dtype != np.uint8:
        raise InputError(f"expected an 8-bit RGB array, got {a.shape} {a.dtype}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(a, "RGB").save(path, format="PNG")


def read_mask(path) -> np.ndarray:
    """Binary mask as float64 0/1; any nonzero pixel is foreground."""
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) != 0).astype(np.float64)


def write_mask(path, mask: np.ndarray) -> None:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise InputError(f"expected a 2-D mask, got {m.shape}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(m != 0, 255, 0).astype(np.uint8), "L").save(path, format="PNG")


def manifest_to_json(manifest: Manifest) -> str:
    doc = {
        "format": FORMAT,
        "version": manifest.version,
        "allowed_settings": manifest.allowed_settings,
        "base_categories": list(manifest.base_categories),
        "novel_categories": list(manifest.novel_categories),
        "samples": [s.to_record() for s in manifest.samples],
    }
    return json.dumps(doc, indent=1, ensure_ascii=False) + "\n"


def save_manifest(manifest: Manifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest_to_json(manifest), encoding="utf-8")
    return path


def _sample_from(rec, index: int, root: Path | None) -> CorSample:
    if not isinstance(rec, dict):
        raise ParseError("record is not an object", index)
    missing = [k for k in CorSample.FIELDS if k not in rec]
    if missing:
        raise ParseError(f"missing fields {missing}", index)
    extra = sorted(set(rec) - set(CorSample.FIELDS) - {"provenance"})
    if extra:
        raise ParseError(f"unknown fields {extra}", index)
    for k in CorSample.FIELDS:
        want = list if k.endswith("_masks") else str
        if not isinstance(rec[k], want):
            raise ParseError(f"field {k!r} should be {want.__name__}", index)
    for k in ("positive_masks", "negative_masks"):
        if not all(isinstance(p, str) for p in rec[k]):
            raise ParseError(f"field {k!r} should list paths", index)
    prov = rec.get("provenance")
    if prov is not None and not isinstance(prov, dict):
        raise ParseError("field 'provenance' should be an object", index)
    return CorSample(**{k: rec[k] for k in CorSample.FIELDS}, root=root, provenance=prov)


def manifest_from_json(text: str, root: Path | None = None) -> Manifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"manifest is not valid JSON: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ParseError("not a manifest file")
    if doc.get("version") != VERSION:
        raise ParseError(f"unsupported manifest version {doc.get('version')!r}")
    records = doc.get("samples", [])
    if not isinstance(records, list):
        raise ParseError("samples must be a list")
    m = Manifest(
        samples=[_sample_from(r, i, root) for i, r in enumerate(records)],
        base_categories=list(doc.get("base_categories", [])),
        novel_categories=list(doc.get("novel_categories", [])),
        version=doc["version"],
        allowed_settings=doc.get("allowed_settings"),
    )
    m.validate()
    return m


def load_manifest(path) -> Manifest:
    path = Path(path)
    return manifest_from_json(path.read_text(encoding="utf-8"), root=path.parent.resolve())
