"""Evaluation metrics and sweep tooling: PSNR, patch-based Fréchet distance
with a pluggable feature extractor, and distortion-perception sweeps that
reuse a single received signal per image.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .losses import FixedFeatureDistance

logger = logging.getLogger(__name__)

PSNR_CAP_DB = 100.0


def _to_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def psnr(x, x_hat, peak: float = 1.0, cap: float = PSNR_CAP_DB) -> float:
    """Peak signal-to-noise ratio in dB against peak 1.0; identical inputs
    return the configured cap instead of infinity."""
    a = _to_numpy(x).astype(np.float64)
    b = _to_numpy(x_hat).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    err = float(np.mean((a - b) ** 2))
    if err == 0.0:
        return float(cap)
    return min(float(cap), float(10.0 * np.log10(peak * peak / err)))


@dataclass
class PatchSet:
    """Grid crops from a set of images, with the source index of each patch."""

    patches: list[np.ndarray]
    sources: list[int]
    patch_size: int

    def __len__(self) -> int:
        return len(self.patches)

    def as_tensor(self, device=None) -> torch.Tensor:
        if not self.patches:
            return torch.zeros(0, 3, self.patch_size, self.patch_size, device=device)
        return torch.as_tensor(np.stack(self.patches), dtype=torch.float32, device=device)


def extract_patches(images, p: int, stride: int | None = None) -> PatchSet:
    """Raster-order crops of size p (non-overlapping when stride is omitted);
    partial crops at the borders are discarded."""
    stride = p if stride is None else stride
    if stride <= 0 or p <= 0:
        raise ValueError("patch size and stride must be positive")
    patches: list[np.ndarray] = []
    sources: list[int] = []
    for idx, img in enumerate(images):
        arr = _to_numpy(img)
        if arr.ndim == 4:
            arr = arr[0]
        if arr.ndim != 3 or arr.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) image, got {arr.shape}")
        _, H, W = arr.shape
        if p > min(H, W):
            raise ValueError(f"patch size {p} exceeds image size {H}x{W}")
        for top in range(0, H - p + 1, stride):
            for left in range(0, W - p + 1, stride):
                patches.append(arr[:, top : top + p, left : left + p].copy())
                sources.append(idx)
    return PatchSet(patches=patches, sources=sources, patch_size=p)


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray, eps: float = 1e-6) -> float:
    """Fréchet distance between Gaussians fitted to two feature populations:
    |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The cross square root is evaluated in the symmetric form
    sqrt(S_a^(1/2) S_b S_a^(1/2)) via eigendecomposition with negative
    eigenvalues clipped at zero; degenerate covariances are regularized with
    eps * I.
    """
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature sets must be 2-D with matching dimension")
    dim = a.shape[1]
    if a.shape[0] < dim + 1 or b.shape[0] < dim + 1:
        raise ValueError(f"need at least dim+1={dim + 1} samples per feature set")

    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False).reshape(dim, dim)
    cov_b = np.cov(b, rowvar=False).reshape(dim, dim)

    for name, cov in (("a", cov_a), ("b", cov_b)):
        min_eig = float(np.linalg.eigvalsh(cov).min())
        if min_eig <= 0.0:
            logger.warning("covariance %s is degenerate (min eig %.3g); adding %g * I", name, min_eig, eps)
            cov += eps * np.eye(dim)

    sqrt_a = _sym_sqrt(cov_a)
    inner = sqrt_a @ cov_b @ sqrt_a
    inner = 0.5 * (inner + inner.T)
    vals = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    trace_cross = 2.0 * float(np.sqrt(vals).sum())
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - trace_cross)


class PatchFeatureExtractor(nn.Module):
    """Desk-scale FID feature backend: the fixed-weight pyramid globally
    pooled to a vector. Swap in a reference network for comparable absolute
    scores; with this backend only orderings are meaningful."""

    def __init__(self, seed: int = 0, widths: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        self.backbone = FixedFeatureDistance(seed=seed, widths=widths)
        self.feature_dim = widths[-1]

    @torch.no_grad()
    def forward(self, patches: torch.Tensor) -> np.ndarray:
        feats = self.backbone._stage_features(patches)[-1]
        return feats.mean(dim=(2, 3)).cpu().numpy()


def patch_fid(
    real_images,
    fake_images,
    patch_size: int,
    stride: int | None = None,
    extractor: PatchFeatureExtractor | None = None,
) -> float:
    extractor = extractor or PatchFeatureExtractor()
    real = extract_patches(real_images, patch_size, stride)
    fake = extract_patches(fake_images, patch_size, stride)
    return frechet_distance(extractor(real.as_tensor()), extractor(fake.as_tensor()))


@dataclass
class SweepRow:
    cbr: float
    snr_db: float | None
    setting: str
    psnr_db: float
    fid: float
    perceptual: float


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cbr", "snr_db", "setting", "psnr_db", "fid", "perceptual"])
            for r in self.rows:
                writer.writerow([r.cbr, "" if r.snr_db is None else r.snr_db, r.setting, r.psnr_db, r.fid, r.perceptual])

    def plot(self, path_prefix: str) -> list[str]:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        written = []
        for metric, attr in (("psnr", "psnr_db"), ("fid", "fid")):
            fig, ax = plt.subplots(figsize=(5, 4))
            by_setting: dict[str, list[SweepRow]] = {}
            for r in self.rows:
                by_setting.setdefault(r.setting, []).append(r)
            for setting, rows in sorted(by_setting.items()):
                rows = sorted(rows, key=lambda r: r.cbr)
                ax.plot([r.cbr for r in rows], [getattr(r, attr) for r in rows], marker="o", label=setting)
            ax.set_xlabel("CBR")
            ax.set_ylabel(metric.upper())
            ax.legend(fontsize=7)
            out = f"{path_prefix}_{metric}.png"
            fig.savefig(out, dpi=110, bbox_inches="tight")
            plt.close(fig)
            written.append(out)
        return written


def dp_sweep(
    pipeline,
    images: list[torch.Tensor],
    decode_settings: list,
    patch_size: int = 32,
    extractor: PatchFeatureExtractor | None = None,
    perceptual: FixedFeatureDistance | None = None,
) -> SweepResult:
    """Evaluate every decode setting against one transmission per image.

    `decode_settings` entries are realism levels (float) for a
    distortion-perception pipeline or prompt sets (iterable of labels) for a
    content-controllable one; every setting decodes the same received stream,
    so the CBR column comes from the actual transmission report, identical
    across settings of one image.
    """
    # default feature dim kept small: the Gaussian fit needs > dim patches
    extractor = extractor or PatchFeatureExtractor(widths=(8, 16))
    perceptual = perceptual or FixedFeatureDistance()
    per_setting: dict[str, dict] = {}
    for img in images:
        outputs = pipeline.transmit_multi(img, decode_settings)
        for setting_name, (x_hat, report) in outputs.items():
            slot = per_setting.setdefault(
                setting_name, {"psnr": [], "perc": [], "cbr": [], "real": [], "fake": []}
            )
            slot["psnr"].append(psnr(img, x_hat))
            slot["perc"].append(float(perceptual(img, x_hat).mean()))
            slot["cbr"].append(report.cbr)
            slot["real"].append(_to_numpy(img)[0] if _to_numpy(img).ndim == 4 else _to_numpy(img))
            slot["fake"].append(_to_numpy(x_hat)[0] if _to_numpy(x_hat).ndim == 4 else _to_numpy(x_hat))

    result = SweepResult()
    snr = pipeline.channel_cfg.snr_db
    for setting_name, slot in per_setting.items():
        fid = patch_fid(slot["real"], slot["fake"], patch_size, extractor=extractor)
        result.rows.append(
            SweepRow(
                cbr=float(np.mean(slot["cbr"])),
                snr_db=snr,
                setting=setting_name,
                psnr_db=float(np.mean(slot["psnr"])),
                fid=fid,
                perceptual=float(np.mean(slot["perc"])),
            )
        )
    return result
