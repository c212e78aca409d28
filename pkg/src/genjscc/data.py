"""Dataset ingestion and deterministic synthetic corpora.

Real datasets are plain directories of raster images, randomly cropped to the
training size. The synthetic generators build textured images (and labeled
scenes for content-controllable training) entirely from a seed, which keeps
desk-scale training runs and tests reproducible without shipping data.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


def load_image(path: str | Path) -> torch.Tensor:
    """(1, 3, H, W) float tensor in [0, 1]."""
    img = Image.open(path).convert("RGB")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1)).unsqueeze(0)


def save_image(x: torch.Tensor, path: str | Path) -> None:
    """Write a (1, 3, H, W) or (3, H, W) tensor as a lossless PNG."""
    arr = x.detach().cpu().numpy()
    if arr.ndim == 4:
        arr = arr[0]
    arr = np.clip(arr, 0.0, 1.0)
    img = Image.fromarray((arr.transpose(1, 2, 0) * 255.0 + 0.5).astype(np.uint8))
    img.save(path, format="PNG")


def image_to_png_bytes(x: torch.Tensor) -> bytes:
    import io

    buf = io.BytesIO()
    arr = x.detach().cpu().numpy()
    if arr.ndim == 4:
        arr = arr[0]
    arr = np.clip(arr, 0.0, 1.0)
    Image.fromarray((arr.transpose(1, 2, 0) * 255.0 + 0.5).astype(np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


class ImageFolderDataset:
    """Directory of images served as random crops with deterministic order."""

    def __init__(self, root: str | Path, crop: int, seed: int = 0):
        self.root = Path(root)
        self.crop = crop
        self.paths = sorted(p for p in self.root.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
        if not self.paths:
            raise ValueError(f"no images found under {self.root}")
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, len(self.paths)]))

    def __len__(self) -> int:
        return len(self.paths)

    def sample_batch(self, batch_size: int) -> torch.Tensor:
        crops = []
        for _ in range(batch_size):
            path = self.paths[int(self.rng.integers(len(self.paths)))]
            img = load_image(path)[0]
            _, H, W = img.shape
            if H < self.crop or W < self.crop:
                raise ValueError(f"{path} is smaller than the crop size {self.crop}")
            top = int(self.rng.integers(H - self.crop + 1))
            left = int(self.rng.integers(W - self.crop + 1))
            crops.append(img[:, top : top + self.crop, left : left + self.crop])
        return torch.stack(crops)


def _grating(h: int, w: int, freq: float, angle: float, phase: float) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    t = np.cos(angle) * xx + np.sin(angle) * yy
    return 0.5 + 0.5 * np.sin(2.0 * np.pi * freq * t + phase)


def synthetic_texture_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """One (3, size, size) image: smooth color gradient carrying patches of
    high-frequency texture, so pixel fidelity and texture statistics pull in
    different directions."""
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    base = np.stack(
        [
            rng.uniform(0.2, 0.8) + rng.uniform(-0.3, 0.3) * xx + rng.uniform(-0.3, 0.3) * yy
            for _ in range(3)
        ]
    )
    n_patches = int(rng.integers(2, 5))
    for _ in range(n_patches):
        ph = int(rng.integers(size // 4, size // 2 + 1))
        pw = int(rng.integers(size // 4, size // 2 + 1))
        top = int(rng.integers(0, size - ph + 1))
        left = int(rng.integers(0, size - pw + 1))
        tex = _grating(ph, pw, rng.uniform(0.15, 0.4), rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi))
        strength = rng.uniform(0.25, 0.5)
        for ch in range(3):
            block = base[ch, top : top + ph, left : left + pw]
            base[ch, top : top + ph, left : left + pw] = block * (1 - strength) + tex * strength
    base += rng.normal(0, 0.01, size=base.shape)
    return np.clip(base, 0.0, 1.0).astype(np.float32)


def synthetic_texture_dataset(count: int, size: int, seed: int = 0) -> torch.Tensor:
    rng = np.random.default_rng(np.random.SeedSequence([seed, size]))
    return torch.from_numpy(np.stack([synthetic_texture_image(size, rng) for _ in range(count)]))


SCENE_PALETTE = {
    "sky": (70, 130, 200),
    "ground": (110, 80, 50),
    "block": (200, 60, 60),
    "disk": (60, 180, 90),
}


def synthetic_scene(size: int, rng: np.random.Generator):
    """(image, label raster) pair: horizon-split background plus two shapes.

    Texture phases are drawn per image, so the label map pins content layout
    but never the exact pixels; generated regions cannot match the source
    pixel-wise.
    """
    from .content import InstanceLabelMap

    labels = np.zeros((size, size), dtype=np.int64)
    horizon = int(rng.integers(size // 3, 2 * size // 3))
    labels[horizon:, :] = 1

    bh = int(rng.integers(size // 4, size // 2))
    bw = int(rng.integers(size // 4, size // 2))
    top = int(rng.integers(0, size - bh))
    left = int(rng.integers(0, size // 2 - 1))
    labels[top : top + bh, left : left + bw] = 2

    r = int(rng.integers(size // 8, size // 5))
    cy = int(rng.integers(r, size - r))
    cx = int(rng.integers(size // 2, size - r))
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    labels[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 3

    names = list(SCENE_PALETTE)
    img = np.zeros((3, size, size), dtype=np.float64)
    for idx, name in enumerate(names):
        region = labels == idx
        if not region.any():
            continue
        color = np.array(SCENE_PALETTE[name], dtype=np.float64) / 255.0
        tex = _grating(size, size, rng.uniform(0.1, 0.35), rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi))
        jitter = rng.uniform(-0.1, 0.1, size=3)
        for ch in range(3):
            img[ch][region] = np.clip(color[ch] + jitter[ch] + 0.3 * (tex[region] - 0.5), 0, 1)
    img += rng.normal(0, 0.01, size=img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)

    raster = np.zeros((3, size, size), dtype=np.uint8)
    registry = {}
    for idx, name in enumerate(names):
        rgb = SCENE_PALETTE[name]
        registry[rgb] = name
        region = labels == idx
        for ch in range(3):
            raster[ch][region] = rgb[ch]
    w_map = InstanceLabelMap(raster=raster, registry=registry)
    return torch.from_numpy(img), w_map


def synthetic_scene_dataset(count: int, size: int, seed: int = 0):
    rng = np.random.default_rng(np.random.SeedSequence([seed, size, 7]))
    return [synthetic_scene(size, rng) for _ in range(count)]
