"""Render figures from a run directory's CSV outputs."""

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    return header, rows


def plot_loss_curves(loss_csv, out_path):
    header, rows = _read_csv(loss_csv)
    idx = {name: i for i, name in enumerate(header)}
    steps = [float(r[idx["step"]]) for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for name in ("recon", "kl_z", "kl_s", "total"):
        axes[0].plot(steps, [float(r[idx[name]]) for r in rows], label=name)
    axes[0].set_xlabel("step")
    axes[0].set_ylabel("loss (batch sum)")
    axes[0].legend()
    for name in ("tau", "rho", "lr"):
        axes[1].plot(steps, [float(r[idx[name]]) for r in rows], label=name)
    axes[1].set_xlabel("step")
    axes[1].set_ylabel("schedule value")
    axes[1].legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_transition_heatmap(transition_csv, out_path, title):
    header, rows = _read_csv(transition_csv)
    counts = np.array([[float(v) for v in r[1:]] for r in rows])
    labels = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(counts, cmap="viridis")
    ax.set_xticks(range(len(labels)), labels)
    ax.set_yticks(range(len(labels)), labels)
    ax.set_xlabel("noisy label")
    ax.set_ylabel("latent label")
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_embedding_scatter(embeddings_csv, out_path):
    header, rows = _read_csv(embeddings_csv)
    idx = {name: i for i, name in enumerate(header)}
    mu_cols = [c for c in header if c.startswith("mu")]
    if len(mu_cols) < 2:
        return
    x = np.array([float(r[idx["mu0"]]) for r in rows])
    y = np.array([float(r[idx["mu1"]]) for r in rows])
    cluster = np.array([int(r[idx["cluster"]]) for r in rows])
    fig, ax = plt.subplots(figsize=(5, 4.5))
    for c, color, label in ((0, "tab:blue", "trustworthy"),
                            (1, "tab:green", "non-trustworthy")):
        mask = cluster == c
        ax.scatter(x[mask], y[mask], s=8, c=color, label=label, alpha=0.6)
    ax.set_xlabel("embedding mean dim 0")
    ax.set_ylabel("embedding mean dim 1")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_sweep(sweep_csv, out_path):
    header, rows = _read_csv(sweep_csv)
    idx = {name: i for i, name in enumerate(header)}
    by_model = {}
    for r in rows:
        by_model.setdefault(r[idx["model"]], []).append(
            (float(r[idx["p_noise"]]), float(r[idx["accuracy"]]))
        )
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for model, pts in sorted(by_model.items()):
        levels = sorted(set(p for p, _ in pts))
        means = [np.mean([a for p, a in pts if p == lvl]) for lvl in levels]
        ax.plot(levels, means, marker="o", label=model)
    ax.set_xlabel("corruption probability")
    ax.set_ylabel("mean test accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def render_run(run_dir, out_dir=None):
    """Render every figure the run directory's CSVs support; returns paths written."""
    out_dir = out_dir or os.path.join(run_dir, "figures")
    os.makedirs(out_dir, exist_ok=True)
    written = []

    loss_csv = os.path.join(run_dir, "loss.csv")
    if os.path.exists(loss_csv):
        p = os.path.join(out_dir, "loss_curves.png")
        plot_loss_curves(loss_csv, p)
        written.append(p)

    diag = os.path.join(run_dir, "diagnostics")
    for name, title in (
        ("transition_trustworthy", "trustworthy transitions"),
        ("transition_nontrustworthy", "non-trustworthy transitions"),
    ):
        src = os.path.join(diag, name + ".csv")
        if os.path.exists(src):
            p = os.path.join(out_dir, name + ".png")
            plot_transition_heatmap(src, p, title)
            written.append(p)

    emb = os.path.join(diag, "embeddings.csv")
    if os.path.exists(emb):
        p = os.path.join(out_dir, "embeddings.png")
        plot_embedding_scatter(emb, p)
        written.append(p)

    sweep = os.path.join(run_dir, "sweep.csv")
    if os.path.exists(sweep):
        p = os.path.join(out_dir, "sweep.png")
        plot_sweep(sweep, p)
        written.append(p)

    return written
