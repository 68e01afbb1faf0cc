"""Run artifacts: history serialization, retrieval report files, and the
figure/CSV rendering behind the ``report`` subcommand.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import FormatError
from .metrics import R_AT_KS, RetrievalReport, report_dict, report_lines
from .training import History


def save_history(history: History, path: str | Path) -> None:
    Path(path).write_text(json.dumps(history.as_dict(), indent=2) + "\n")


def load_history(path: str | Path) -> History:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(payload, dict) or "steps" not in payload or "epochs" not in payload:
        raise FormatError(f"{path}: expected a history object with steps and epochs")
    return History(steps=payload["steps"], epochs=payload["epochs"])


def write_report_files(
    t2v: RetrievalReport, v2t: RetrievalReport, out_dir: str | Path
) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    text = out / "report.txt"
    text.write_text("\n".join(report_lines(t2v, v2t)) + "\n")
    structured = out / "report.json"
    structured.write_text(json.dumps(report_dict(t2v, v2t), indent=2) + "\n")
    return {"text": text, "json": structured}


def _write_steps_csv(history: History, path: Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss", "lr_scale"])
        for rec in history.steps:
            writer.writerow([rec["step"], rec["loss"], rec["lr_scale"]])


def _write_epochs_csv(history: History, path: Path) -> None:
    metric_cols = [f"r{k}" for k in R_AT_KS] + ["med_r", "mean_r", "r_sum"]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        header = ["epoch"]
        for direction in ("t2v", "v2t"):
            header += [f"{direction}_{c}" for c in metric_cols]
        header.append("rsum")
        writer.writerow(header)
        for rec in history.epochs:
            row = [rec["epoch"]]
            for direction in ("t2v", "v2t"):
                row += [rec[direction][c] for c in metric_cols]
            row.append(rec["rsum"])
            writer.writerow(row)


def _plot_loss(history: History, path: Path) -> None:
    steps = [rec["step"] for rec in history.steps]
    losses = [rec["loss"] for rec in history.steps]
    scales = [rec["lr_scale"] for rec in history.steps]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(steps, losses, lw=1.2, color="tab:blue")
    ax.set_xlabel("step")
    ax.set_ylabel("training loss", color="tab:blue")
    ax.tick_params(axis="y", labelcolor="tab:blue")
    twin = ax.twinx()
    twin.plot(steps, scales, lw=1.0, color="tab:orange", alpha=0.6)
    twin.set_ylabel("lr scale", color="tab:orange")
    twin.tick_params(axis="y", labelcolor="tab:orange")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _plot_metrics(history: History, path: Path) -> None:
    epochs = [rec["epoch"] for rec in history.epochs]
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6), sharex=True)
    for ax, direction in zip(axes, ("t2v", "v2t")):
        for k in R_AT_KS:
            ax.plot(epochs, [rec[direction][f"r{k}"] for rec in history.epochs],
                    marker="o", ms=3, lw=1.2, label=f"R@{k}")
        ax.set_title(direction)
        ax.set_xlabel("epoch")
        ax.set_ylabel("recall (%)")
        ax.set_ylim(-2, 102)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_history_report(history: History, out_dir: str | Path) -> list[Path]:
    """Write the delimited step/epoch tables and the matching figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if history.steps:
        _write_steps_csv(history, out / "steps.csv")
        _plot_loss(history, out / "loss_curve.png")
        written += [out / "steps.csv", out / "loss_curve.png"]
    if history.epochs:
        _write_epochs_csv(history, out / "epochs.csv")
        _plot_metrics(history, out / "retrieval_curves.png")
        written += [out / "epochs.csv", out / "retrieval_curves.png"]
    return written
