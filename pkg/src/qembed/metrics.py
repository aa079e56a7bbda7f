"""Metrics, quality-embedding binarization and noise-transition diagnostics."""

import csv
import os
from dataclasses import dataclass

import numpy as np


def average_precision(scores, relevance):
    """Mean precision-at-rank over relevant items, descending scores, stable ties."""
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance)
    if scores.shape != relevance.shape or scores.ndim != 1:
        raise ValueError("scores and relevance must be 1-D of equal length")
    if relevance.sum() == 0:
        raise ValueError("average precision needs at least one relevant item")
    order = np.argsort(-scores, kind="stable")
    rel_sorted = relevance[order].astype(np.float64)
    hits = np.cumsum(rel_sorted)
    ranks = np.arange(1, len(scores) + 1)
    prec_at = hits / ranks
    return float(prec_at[rel_sorted > 0].mean())


def evaluate(classifier, ds):
    """Per-class AP, mAP and argmax accuracy of classifier scores on clean labels."""
    if ds.clean_labels is None:
        raise ValueError("evaluation needs clean labels")
    scores = classifier.forward(ds.features)
    clean = ds.clean_labels
    per_class = []
    for k in range(ds.n_classes):
        if clean[:, k].sum() == 0:
            per_class.append(float("nan"))
            continue
        per_class.append(average_precision(scores[:, k], clean[:, k]))
    valid = [v for v in per_class if not np.isnan(v)]
    accuracy = float(
        (np.argmax(scores, axis=1) == np.argmax(clean, axis=1)).mean()
    )
    return {
        "per_class_ap": per_class,
        "map": float(np.mean(valid)),
        "accuracy": accuracy,
    }


def kmeans_binarize(points, seed, disagreement=None, max_iter=100, tol=1e-9):
    """2-means over rows via Lloyd iterations from farthest-pair initialization.

    With a disagreement score per point, cluster 1 is oriented to the side
    whose members disagree more with their labels (the non-trustworthy side).
    Identical points collapse to a single cluster labeled 0.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    m = pts.shape[0]
    if m < 2:
        raise ValueError("need at least two points")
    if np.allclose(pts, pts[0]):
        return np.zeros(m, dtype=np.int64)

    # farthest pair as seeds; ties resolved by argmax order, deterministic
    sq = (pts * pts).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * pts @ pts.T
    i, j = np.unravel_index(np.argmax(d2), d2.shape)
    centers = np.stack([pts[i], pts[j]])

    assign = np.zeros(m, dtype=np.int64)
    for _ in range(max_iter):
        dist = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(dist, axis=1)
        new_centers = centers.copy()
        for c in (0, 1):
            members = pts[assign == c]
            if len(members):
                new_centers[c] = members.mean(axis=0)
        move = np.abs(new_centers - centers).max()
        centers = new_centers
        if move < tol:
            break

    if disagreement is not None:
        dis = np.asarray(disagreement, dtype=np.float64)
        mean0 = dis[assign == 0].mean() if np.any(assign == 0) else 0.0
        mean1 = dis[assign == 1].mean() if np.any(assign == 1) else 0.0
        if mean0 > mean1:
            assign = 1 - assign
    return assign


@dataclass
class TransitionReport:
    trustworthy: np.ndarray  # K x K counts, latent -> noisy
    non_trustworthy: np.ndarray
    cluster_assignment: np.ndarray  # per-sample 0 (T) / 1 (N)


def _count_transitions(latent, noisy, k):
    counts = np.zeros((k, k), dtype=np.int64)
    for a, b in zip(latent, noisy):
        counts[a, b] += 1
    return counts


def transition_report(model, ds, seed=0, tau=0.5):
    """Count latent-to-noisy label transitions conditioned on embedding cluster."""
    from .network import model_forward
    from .numkit import RandomSource

    y = ds.noisy_labels.astype(np.float64)
    record = model_forward(model, ds.features, y, tau, src=RandomSource(seed))
    k = ds.n_classes
    latent = np.argmax(record.q_z, axis=1)
    noisy = np.argmax(ds.noisy_labels, axis=1)
    # orient clusters by the classifier's thresholded prediction; the encoder
    # backbone output is not anchored to label order and cannot serve here
    disagreement = ((record.p_z > 0.5).astype(int) != ds.noisy_labels).mean(axis=1)
    clusters = kmeans_binarize(record.mu, seed, disagreement=disagreement)
    trust = _count_transitions(latent[clusters == 0], noisy[clusters == 0], k)
    non_trust = _count_transitions(latent[clusters == 1], noisy[clusters == 1], k)
    return TransitionReport(trust, non_trust, clusters), record


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_transition_csv(path, counts):
    k = counts.shape[0]
    header = ["latent"] + ["c%d" % j for j in range(k)]
    rows = [["c%d" % i] + [int(v) for v in counts[i]] for i in range(k)]
    _write_csv(path, header, rows)


def export_diagnostics(model, ds, out_dir, seed=0, tau=0.5):
    """Write embedding, posterior and transition CSVs for a trained model."""
    os.makedirs(out_dir, exist_ok=True)
    report, record = transition_report(model, ds, seed=seed, tau=tau)
    d = record.mu.shape[1]
    k = ds.n_classes
    disagreement = ((record.p_z > 0.5).astype(int) != ds.noisy_labels).any(axis=1)

    rows = []
    for i in range(ds.n_items):
        rows.append(
            ["%.17g" % v for v in record.mu[i]]
            + [int(report.cluster_assignment[i]), int(disagreement[i])]
        )
    _write_csv(
        os.path.join(out_dir, "embeddings.csv"),
        ["mu%d" % j for j in range(d)] + ["cluster", "disagreement"],
        rows,
    )

    rows = []
    for i in range(ds.n_items):
        rows.append(
            [int(v) for v in ds.noisy_labels[i]]
            + ["%.17g" % v for v in record.yhat[i]]
            + ["%.17g" % v for v in record.q_z[i]]
        )
    _write_csv(
        os.path.join(out_dir, "posteriors.csv"),
        ["y%d" % j for j in range(k)]
        + ["yhat%d" % j for j in range(k)]
        + ["qz%d" % j for j in range(k)],
        rows,
    )

    write_transition_csv(
        os.path.join(out_dir, "transition_trustworthy.csv"), report.trustworthy
    )
    write_transition_csv(
        os.path.join(out_dir, "transition_nontrustworthy.csv"), report.non_trustworthy
    )
    return report
