"""Delimited run reports and the matplotlib figures rendered alongside them."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .trainer import EvalReport, HistoryRow, format_history  # noqa: E402


def write_history_tsv(path, rows: list[HistoryRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("step\tl1\tgradient\ttotal\tlr\n" + format_history(rows))
    return path


def plot_history(path, rows: list[HistoryRow]) -> Path:
    """Loss curves (log scale) with the learning-rate schedule inset."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    steps = [r.step for r in rows]
    fig, (ax, ax_lr) = plt.subplots(
        2, 1, figsize=(7, 5.5), sharex=True,
        gridspec_kw={"height_ratios": [3, 1]})
    ax.plot(steps, [r.total for r in rows], label="total", lw=1.2)
    ax.plot(steps, [r.l1 for r in rows], label="l1", lw=0.9, alpha=0.8)
    ax.plot(steps, [r.gradient for r in rows], label="gradient", lw=0.9, alpha=0.8)
    ax.set_yscale("log")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, alpha=0.3)
    ax_lr.plot(steps, [r.lr for r in rows], color="tab:red", lw=1.0)
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("step")
    ax_lr.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_eval_tsv(path, report: EvalReport, dataset_name: str = "dataset") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["dataset\tscale\ttag\timage\tpsnr\tssim"]
    for row in report:
        lines.append(f"{dataset_name}\t{report.scale}\t{report.tag}\t"
                     f"{row.name}\t{row.psnr:.4f}\t{row.ssim:.4f}")
    lines.append(f"{dataset_name}\t{report.scale}\t{report.tag}\tmean\t"
                 f"{report.psnr_mean:.4f}\t{report.ssim_mean:.4f}")
    path.write_text("\n".join(lines) + "\n")
    return path


def plot_eval(path, report: EvalReport, dataset_name: str = "dataset") -> Path:
    """Per-image PSNR bars with SSIM on a twin axis, mean lines overlaid."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [row.name for row in report]
    psnr = [row.psnr for row in report]
    ssim = [row.ssim for row in report]
    xs = range(len(names))
    fig, ax = plt.subplots(figsize=(max(5.0, 1.1 * len(names)), 4))
    ax.bar(xs, psnr, width=0.55, color="tab:blue", label="PSNR (dB)")
    ax.axhline(report.psnr_mean, color="tab:blue", ls="--", lw=1.0, alpha=0.7)
    ax.set_ylabel("PSNR (dB)")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_title(f"{dataset_name} x{report.scale} ({report.tag.upper()})")
    ax2 = ax.twinx()
    ax2.plot(xs, ssim, "o-", color="tab:orange", lw=1.0, ms=4, label="SSIM")
    ax2.axhline(report.ssim_mean, color="tab:orange", ls="--", lw=1.0, alpha=0.7)
    ax2.set_ylabel("SSIM")
    ax2.set_ylim(0.0, 1.02)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
