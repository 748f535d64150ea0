"""Image files, CFA frames on disk, manifests and synthetic test images."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .cfa import CfaError, CfaFrame, RgbImage
from .seeding import derive_rng

IMAGE_SUFFIXES = (".png", ".ppm", ".bmp", ".tif", ".tiff", ".jpg", ".jpeg")
MANIFEST = "manifest.json"


class DataError(OSError):
    """Unreadable or malformed input data."""


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_rgb(path) -> RgbImage:
    """Read an 8- or 16-bit RGB image as floats in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I"):
                raise DataError(f"{path}: single-channel image where RGB was expected")
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except (FileNotFoundError, IsADirectoryError) as exc:
        raise DataError(f"{path}: no such image") from exc
    except Image.UnidentifiedImageError as exc:
        raise DataError(f"{path}: not a readable image") from exc
    return RgbImage(arr)


def quantize8(pixels: np.ndarray) -> np.ndarray:
    return np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_rgb(path, img) -> None:
    """Write an 8-bit RGB PNG or PPM (chosen by suffix)."""
    pixels = getattr(img, "pixels", img)
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() == ".ppm" else "PNG"
    Image.fromarray(quantize8(pixels), mode="RGB").save(path, format=fmt)


def write_cfa(path, cfa: CfaFrame) -> None:
    """16-bit grayscale PNG; the phase travels in the directory manifest."""
    data = np.round(np.clip(cfa.plane, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(data).save(Path(path), format="PNG")


def read_cfa(path, phase: str | None = None) -> CfaFrame:
    """Read a 16-bit CFA PNG; the phase comes from ``phase`` or the sidecar manifest."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im)
    except (FileNotFoundError, IsADirectoryError) as exc:
        raise DataError(f"{path}: no such CFA file") from exc
    except Image.UnidentifiedImageError as exc:
        raise DataError(f"{path}: not a readable image") from exc
    if arr.ndim != 2:
        raise DataError(f"{path}: CFA file must be single-channel, got shape {arr.shape}")
    scale = 65535.0 if arr.dtype != np.uint8 else 255.0
    if phase is None:
        entry = read_manifest(path.parent).get("files", {}).get(path.name)
        if entry is None or "phase" not in entry:
            raise DataError(f"{path}: no phase tag in {MANIFEST}; pass --phase")
        phase = entry["phase"]
    try:
        return CfaFrame(arr.astype(np.float64) / scale, phase)
    except CfaError as exc:
        raise DataError(str(exc)) from exc


def read_manifest(directory) -> dict:
    p = Path(directory) / MANIFEST
    if not p.exists():
        return {}
    return json.loads(p.read_text())


def update_manifest(directory, filename: str, entry: dict) -> dict:
    """Merge ``entry`` under ``files[filename]`` in the directory manifest."""
    doc = read_manifest(directory)
    doc.setdefault("files", {})[filename] = entry
    write_json(Path(directory) / MANIFEST, doc)
    return doc


def write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d}: not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# -- synthetic content -----------------------------------------------------------

def synthetic_image(size: int, seed: int, kind: str = "smooth") -> RgbImage:
    """Deterministic test image in [0, 1].

    ``smooth`` is a sum of a few low-frequency sinusoids with correlated
    channels; ``texture`` adds higher frequencies and an edge.
    """
    rng = derive_rng(seed, "synthetic", kind)
    y, x = np.mgrid[0:size, 0:size] / size
    base = np.zeros((size, size))
    nterms = 3 if kind == "smooth" else 6
    fmax = 2.0 if kind == "smooth" else 6.0
    for _ in range(nterms):
        fx, fy = rng.uniform(0.3, fmax, size=2)
        ph = rng.uniform(0, 2 * np.pi)
        base += np.sin(2 * np.pi * (fx * x + fy * y) + ph) / nterms
    if kind == "texture":
        base += 0.3 * (x + 0.4 * y > 0.6)
    elif kind != "smooth":
        raise ValueError(f"unknown synthetic kind {kind!r}")
    tint = rng.uniform(0.6, 1.0, size=3)
    offset = rng.uniform(-0.1, 0.1, size=3)
    rgb = 0.5 + 0.35 * base[..., None] * tint + offset
    return RgbImage(np.clip(rgb, 0.0, 1.0))
