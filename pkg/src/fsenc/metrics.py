"""Quantitative evaluation: PSNR, SSIM, embedding distance, identity
similarity, identity consistency over frame sequences, and an
embedder-based Frechet distance.

Per-image metrics run in float64 and are accumulated with Kahan
compensation so the averages are independent of evaluation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .encoder import Encoder
from .generator import Generator, NoiseBundle
from .objectives import Embedder, multiscale_lpips

__all__ = [
    "MetricsReport",
    "psnr",
    "ssim",
    "lpips_distance",
    "id_similarity",
    "identity_consistency",
    "fid",
    "evaluate",
    "KahanMean",
]

PSNR_CAP = 100.0


class KahanMean:
    """Compensated running mean; deterministic regardless of batching."""

    def __init__(self):
        self._sum = 0.0
        self._comp = 0.0
        self.count = 0

    def add(self, value: float) -> None:
        y = float(value) - self._comp
        t = self._sum + y
        self._comp = (t - self._sum) - y
        self._sum = t
        self.count += 1

    @property
    def mean(self) -> float:
        return self._sum / self.count if self.count else float("nan")


def psnr(x_hat: torch.Tensor, x: torch.Tensor, max_val: float = 2.0) -> float:
    """10*log10(MAX^2 / MSE), capped at 100 dB for exact matches."""
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    mse = float((x_hat.double() - x.double()).square().mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * math.log10(max_val * max_val / mse), PSNR_CAP)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    half = (size - 1) / 2.0
    coords = torch.arange(size, dtype=torch.float64) - half
    g = torch.exp(-(coords ** 2) / (2 * sigma * sigma))
    win = g[:, None] * g[None, :]
    return win / win.sum()


def ssim(x_hat: torch.Tensor, x: torch.Tensor, window_size: int = 11,
         sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 2.0) -> float:
    """Gaussian-window SSIM over valid positions, averaged across channels."""
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch {tuple(x_hat.shape)} vs {tuple(x.shape)}")
    if x_hat.ndim != 3:
        raise ValueError("ssim expects single images (C,H,W)")
    a = x_hat.detach().double().unsqueeze(1)  # treat channels as batch
    b = x.detach().double().unsqueeze(1)
    win = _gaussian_window(window_size, sigma).unsqueeze(0).unsqueeze(0)

    mu_a = F.conv2d(a, win)
    mu_b = F.conv2d(b, win)
    mu_aa = F.conv2d(a * a, win) - mu_a * mu_a
    mu_bb = F.conv2d(b * b, win) - mu_b * mu_b
    mu_ab = F.conv2d(a * b, win) - mu_a * mu_b

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * mu_ab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (mu_aa + mu_bb + c2)
    return float((num / den).mean())


def lpips_distance(x_hat: torch.Tensor, x: torch.Tensor, embedder: Embedder) -> float:
    """Single-scale perceptual proxy: embedding distance at full resolution."""
    with torch.no_grad():
        return float(multiscale_lpips(x_hat, x, embedder, scales=(0,)))


def id_similarity(x_hat: torch.Tensor, x: torch.Tensor, embedder: Embedder) -> float:
    """Cosine similarity of the final embedder level."""
    with torch.no_grad():
        ea = embedder.levels(x_hat)[-1]
        eb = embedder.levels(x)[-1]
    return float((ea * eb).sum())


def identity_consistency(frames: list[torch.Tensor], embedder: Embedder) -> float:
    """Mean cosine similarity of frames 1..N against frame 0."""
    if len(frames) < 2:
        raise ValueError("identity consistency needs at least 2 frames")
    with torch.no_grad():
        anchor = embedder.levels(frames[0])[-1]
        acc = KahanMean()
        for frame in frames[1:]:
            acc.add(float((embedder.levels(frame)[-1] * anchor).sum()))
    return acc.mean


def _sym_sqrtm(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(real_feats: np.ndarray, fake_feats: np.ndarray, eps: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of two feature sets."""
    real = np.asarray(real_feats, dtype=np.float64)
    fake = np.asarray(fake_feats, dtype=np.float64)
    if real.ndim != 2 or fake.ndim != 2 or real.shape[1] != fake.shape[1]:
        raise ValueError("feature sets must be 2-D with matching dimension")
    dim = real.shape[1]
    if real.shape[0] < dim + 1 or fake.shape[0] < dim + 1:
        raise ValueError(f"need at least {dim + 1} samples per side for a "
                         f"{dim}-dim covariance")
    mu_r, mu_f = real.mean(axis=0), fake.mean(axis=0)
    sig_r = np.cov(real, rowvar=False) + eps * np.eye(dim)
    sig_f = np.cov(fake, rowvar=False) + eps * np.eye(dim)

    root_r = _sym_sqrtm(sig_r)
    cross = _sym_sqrtm(root_r @ sig_f @ root_r)
    delta = mu_r - mu_f
    value = float(delta @ delta + np.trace(sig_r) + np.trace(sig_f)
                  - 2.0 * np.trace(cross))
    return max(value, 0.0)


@dataclass
class MetricsReport:
    """Averaged reconstruction metrics for one inversion variant."""

    mse: float
    psnr_db: float
    ssim: float
    lpips: float
    id_similarity: float
    fid: float | None
    n_samples: int

    def to_dict(self) -> dict:
        return {"mse": self.mse, "psnr_db": self.psnr_db, "ssim": self.ssim,
                "lpips": self.lpips, "id_similarity": self.id_similarity,
                "fid": self.fid, "n_samples": self.n_samples}


def per_image_metrics(x_hat: torch.Tensor, x: torch.Tensor,
                      identity: Embedder, perceptual: Embedder) -> dict:
    return {
        "mse": float((x_hat.double() - x.double()).square().mean()),
        "psnr_db": psnr(x_hat, x),
        "ssim": ssim(x_hat, x),
        "lpips": lpips_distance(x_hat, x, perceptual),
        "id_similarity": id_similarity(x_hat, x, identity),
    }


def evaluate(encoder: Encoder, generator: Generator, dataset, ids: list[int],
             identity: Embedder, perceptual: Embedder, noise: NoiseBundle,
             batch_size: int = 8) -> dict[str, MetricsReport]:
    """Average per-image metrics over an evaluation split.

    Returns one report per delivered variant ("x1" always, "x2" when the
    encoder has a feature branch). FID is included when the split is large
    enough for the embedder's final-level dimension.
    """
    has_x2 = encoder.spec.feature_branch_enabled
    variants = ["x1", "x2"] if has_x2 else ["x1"]
    acc = {v: {k: KahanMean() for k in
               ("mse", "psnr_db", "ssim", "lpips", "id_similarity")}
           for v in variants}
    feats_real: list[np.ndarray] = []
    feats_fake: dict[str, list[np.ndarray]] = {v: [] for v in variants}

    noise_maps = [m.unsqueeze(0) for m in noise.maps]
    with torch.no_grad():
        for start in range(0, len(ids), batch_size):
            chunk = ids[start:start + batch_size]
            images = torch.stack([dataset.load_image(i) for i in chunk])
            nmaps = [m.expand(len(chunk), -1, -1, -1) for m in noise_maps]
            ws, feats = encoder.encode_batch(images)
            x1, _ = generator.run_layers(ws, nmaps)
            outs = {"x1": x1}
            if has_x2:
                outs["x2"] = generator.synthesize_with_feature_batch(ws, feats, nmaps)
            for j in range(len(chunk)):
                feats_real.append(
                    identity.levels(images[j])[-1].double().numpy())
                for v in variants:
                    m = per_image_metrics(outs[v][j], images[j], identity, perceptual)
                    for key, val in m.items():
                        acc[v][key].add(val)
                    feats_fake[v].append(
                        identity.levels(outs[v][j])[-1].double().numpy())

    reports = {}
    dim = feats_real[0].shape[0]
    for v in variants:
        fid_val = None
        if len(ids) >= dim + 1:
            fid_val = fid(np.stack(feats_real), np.stack(feats_fake[v]))
        reports[v] = MetricsReport(
            mse=acc[v]["mse"].mean, psnr_db=acc[v]["psnr_db"].mean,
            ssim=acc[v]["ssim"].mean, lpips=acc[v]["lpips"].mean,
            id_similarity=acc[v]["id_similarity"].mean,
            fid=fid_val, n_samples=len(ids))
    return reports
