"""Figure rendering for report outputs.

Every CLI path that writes a tabular report also renders a PNG figure next
to it through these helpers. Matplotlib runs on the Agg backend so the
functions are safe in headless environments.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["plot_training_log", "plot_metric_reports", "plot_ablation_rows",
           "plot_sequence_report", "plot_gan_log"]


def _finish(fig, out_path) -> Path:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_training_log(log_path, out_path) -> Path:
    """Loss curve plus validation PSNR / perceptual distance curves."""
    steps, totals = [], []
    val_steps, val_psnr1, val_psnr2, val_mlp = [], [], [], []
    for line in Path(log_path).read_text().splitlines():
        if not line.strip():
            continue
        entry = json.loads(line)
        if entry.get("type") == "loss":
            steps.append(entry["step"])
            totals.append(entry["total"])
        elif entry.get("type") == "validation":
            val_steps.append(entry["step"])
            val_psnr1.append(entry.get("psnr_x1"))
            val_psnr2.append(entry.get("psnr_x2"))
            val_mlp.append(entry.get("m_lpips"))

    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    axes[0].plot(steps, totals, lw=0.6)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("total loss")
    axes[0].set_yscale("log")
    if val_steps:
        axes[1].plot(val_steps, val_psnr1, "o-", label="x1")
        if any(v is not None for v in val_psnr2):
            axes[1].plot(val_steps, val_psnr2, "s-", label="x2")
        axes[1].set_xlabel("step")
        axes[1].set_ylabel("val PSNR (dB)")
        axes[1].legend()
        axes[2].plot(val_steps, val_mlp, "o-")
        axes[2].set_xlabel("step")
        axes[2].set_ylabel("val m-LPIPS")
    return _finish(fig, out_path)


def plot_gan_log(log_entries: list[dict], out_path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    steps = [e["step"] for e in log_entries]
    ax.plot(steps, [e["loss_d"] for e in log_entries], label="discriminator")
    ax.plot(steps, [e["loss_g"] for e in log_entries], label="generator")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    return _finish(fig, out_path)


def plot_metric_reports(reports: dict, out_path) -> Path:
    """Bar chart comparing the variants of one evaluation report."""
    metrics = ["psnr_db", "ssim", "lpips", "id_similarity"]
    variants = list(reports)
    fig, axes = plt.subplots(1, len(metrics), figsize=(3 * len(metrics), 3.0))
    for ax, metric in zip(axes, metrics):
        values = [getattr(reports[v], metric) for v in variants]
        ax.bar(variants, values, color=["#4878d0", "#ee854a"][:len(variants)])
        ax.set_title(metric)
    return _finish(fig, out_path)


def plot_ablation_rows(rows: list[dict], out_path) -> Path:
    """Delivered-inversion PSNR per configuration."""
    fig, ax = plt.subplots(figsize=(6, 3.2))
    labels = [r["config"] for r in rows]
    values = [r["delivered_psnr_db"] for r in rows]
    ax.bar(labels, values, color="#4878d0")
    ax.set_ylabel("delivered PSNR (dB)")
    ax.set_xlabel("configuration")
    return _finish(fig, out_path)


def plot_sequence_report(report: dict, out_path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    psnrs = [m["psnr_db"] for m in report["per_frame"]]
    ax.plot(range(len(psnrs)), psnrs, "o-")
    ax.set_xlabel("frame")
    ax.set_ylabel("PSNR (dB)")
    ic_inv = report.get("identity_consistency_inversion")
    ic_src = report.get("identity_consistency_source")
    if ic_inv is not None:
        ax.set_title(f"IC inversion {ic_inv:.4f} / source {ic_src:.4f}")
    return _finish(fig, out_path)
