"""Dataset ingestion and image/message IO.

Images are decoded with Pillow, bilinearly resized to the configured size,
and handed around as float (C,H,W) tensors in [0,1]. Order is a deterministic
seeded shuffle of the sorted file list.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tiff", ".webp"}


@dataclass
class DatasetSpec:
    root: Path
    height: int = 128
    width: int = 128
    limit: int | None = None
    seed: int = 0


def read_image(path, height: int | None = None, width: int | None = None) -> torch.Tensor:
    """Decode an image file to a float (3,H,W) tensor in [0,1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such image: {path}")
    with Image.open(path) as img:
        img = img.convert("RGB")
        if height is not None and width is not None and img.size != (width, height):
            img = img.resize((width, height), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1)


def write_image(path, image: torch.Tensor) -> None:
    """Write a (3,H,W) tensor in [0,1] as an 8-bit image file."""
    arr = (image.detach().clamp(0.0, 1.0) * 255.0).round().to(torch.uint8)
    Image.fromarray(arr.permute(1, 2, 0).numpy(), mode="RGB").save(path)


def load_dataset(spec: DatasetSpec) -> list:
    """All readable images under the root, resized, deterministically shuffled.

    Unreadable files are skipped with a warning; an empty result is an error.
    """
    root = Path(spec.root)
    if not root.exists():
        raise FileNotFoundError(f"dataset root does not exist: {root}")
    paths = sorted(p for p in root.rglob("*")
                   if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)
    rng = np.random.default_rng(spec.seed)
    rng.shuffle(paths)
    images = []
    for p in paths:
        try:
            images.append(read_image(p, spec.height, spec.width))
        except Exception as exc:
            log.warning("skipping unreadable image %s: %s", p, exc)
            continue
        if spec.limit is not None and len(images) >= spec.limit:
            break
    if not images:
        raise ValueError(f"no usable images under {root}")
    return images


def random_message(k: int, rng: torch.Generator) -> torch.Tensor:
    """k i.i.d. fair bits as a float vector of 0s and 1s."""
    if k <= 0:
        raise ValueError("message length must be positive")
    return (torch.rand(k, generator=rng) < 0.5).float()


def parse_message(text: str, k: int, hex_input: bool = False) -> torch.Tensor:
    """Bit string '0110...' (or hex with explicit bit length) to a bit vector."""
    if hex_input:
        bits = bin(int(text, 16))[2:].zfill(len(text) * 4)
        bits = bits[-len(text) * 4:]
        if len(bits) < k:
            bits = bits.zfill(k)
        bits = bits[-k:] if len(bits) > k else bits
        text = bits
    if any(ch not in "01" for ch in text):
        raise ValueError("message must contain only 0 and 1")
    if len(text) != k:
        raise ValueError(f"message length {len(text)} does not match expected k={k}")
    return torch.tensor([float(ch) for ch in text])


def format_bits(bits: torch.Tensor) -> str:
    return "".join("1" if b >= 0.5 else "0" for b in bits.tolist())
