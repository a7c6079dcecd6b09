"""Latent-space objectives: kernel two-sample penalty, mined triplets, combined loss."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

DEFAULT_KERNEL_SCALES = (0.5, 1.0, 2.0)
BANDWIDTH_FLOOR = 1e-6

WINDOW_MIN_POSITIVE = "min_positive"
WINDOW_CHOSEN_POSITIVE = "chosen_positive"


@dataclass(frozen=True)
class LossWeights:
    """Weights of the combined objective: recon + beta*mmd + alpha*triplet."""

    beta: float = 2.0
    alpha: float = 1.0
    margin: float = 0.5

    def validate(self) -> None:
        if self.beta < 0 or self.alpha < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.margin <= 0:
            raise ValueError("margin must be positive")


@dataclass(frozen=True)
class TripletSet:
    """(anchor, positive, negative) index triples into a mini-batch."""

    triplets: tuple[tuple[int, int, int], ...]

    @property
    def count(self) -> int:
        return len(self.triplets)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.triplets:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty, empty
        arr = np.asarray(self.triplets, dtype=np.int64)
        return arr[:, 0], arr[:, 1], arr[:, 2]


def mmd(
    z_batch: torch.Tensor,
    prior_batch: torch.Tensor,
    kernel_scales: tuple[float, ...] = DEFAULT_KERNEL_SCALES,
) -> torch.Tensor:
    """Biased (V-statistic) squared MMD with a sum of Gaussian kernels.

    Bandwidths are ``kernel_scales`` times the median pairwise distance of the
    joint batch, floored at 1e-6. ``mmd(x, x)`` is exactly 0.
    """
    if z_batch.numel() == 0 or prior_batch.numel() == 0:
        raise ValueError("both batches must be non-empty")
    if z_batch.shape[1] != prior_batch.shape[1]:
        raise ValueError("batches must share dimensionality")
    n = z_batch.shape[0]
    joint = torch.cat([z_batch, prior_batch], dim=0)
    dist = torch.cdist(joint, joint)
    iu = torch.triu_indices(joint.shape[0], joint.shape[0], offset=1)
    median = dist[iu[0], iu[1]].median()

    sq = dist.pow(2)
    kernel = torch.zeros_like(sq)
    for scale in kernel_scales:
        bandwidth = torch.clamp(scale * median, min=BANDWIDTH_FLOOR)
        kernel = kernel + torch.exp(-sq / (2.0 * bandwidth * bandwidth))
    k_zz = kernel[:n, :n].mean()
    k_pp = kernel[n:, n:].mean()
    k_zp = kernel[:n, n:].mean()
    return k_zz + k_pp - 2.0 * k_zp


def mine_triplets(
    mu_batch,
    labels,
    margin: float,
    rng: np.random.Generator,
    window: str = WINDOW_MIN_POSITIVE,
) -> TripletSet:
    """Semi-hard mining over a batch of posterior means.

    Per anchor: positives/negatives are same/other-label rows; anchors lacking
    either are skipped. The positive is the farthest same-label row. The
    semi-hard candidates are negatives whose distance to the anchor lies
    strictly inside (d_ap, d_ap + margin), where d_ap is the closest positive
    distance (or the chosen positive's distance under the
    ``chosen_positive`` window). One candidate is drawn uniformly; with no
    candidates the closest negative is used. Ties break to the lowest index.
    """
    if window not in (WINDOW_MIN_POSITIVE, WINDOW_CHOSEN_POSITIVE):
        raise ValueError(f"unknown semi-hard window {window!r}")
    mu = np.asarray(mu_batch.detach().cpu() if isinstance(mu_batch, torch.Tensor) else mu_batch, dtype=np.float64)
    y = np.asarray(labels)
    if mu.shape[0] < 2:
        raise ValueError("batch must contain at least 2 rows")
    diff = mu[:, None, :] - mu[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=-1))

    triplets = []
    for i in range(mu.shape[0]):
        pos = np.flatnonzero((y == y[i]) & (np.arange(y.size) != i))
        neg = np.flatnonzero(y != y[i])
        if pos.size == 0 or neg.size == 0:
            continue
        positive = pos[int(np.argmax(dist[i, pos]))]
        if window == WINDOW_MIN_POSITIVE:
            d_ap = dist[i, pos].min()
        else:
            d_ap = dist[i, positive]
        semi_hard = neg[(dist[i, neg] > d_ap) & (dist[i, neg] < d_ap + margin)]
        if semi_hard.size:
            negative = int(rng.choice(semi_hard))
        else:
            negative = neg[int(np.argmin(dist[i, neg]))]
        triplets.append((i, int(positive), int(negative)))
    return TripletSet(triplets=tuple(triplets))


def triplet_loss(mu_batch: torch.Tensor, triplets: TripletSet, margin: float) -> torch.Tensor:
    """Mean over triplets of max(||a-p||^2 - ||a-n||^2 + margin, 0); 0 if empty."""
    if triplets.count == 0:
        return mu_batch.new_zeros(())
    a, p, n = triplets.as_arrays()
    d_ap = ((mu_batch[a] - mu_batch[p]) ** 2).sum(dim=1)
    d_an = ((mu_batch[a] - mu_batch[n]) ** 2).sum(dim=1)
    return torch.clamp(d_ap - d_an + margin, min=0.0).mean()


def total_loss(recon_loss, mmd_value, triplet_value, weights: LossWeights):
    """recon + beta*mmd + alpha*triplet; rejects non-finite inputs."""
    for name, value in (("recon_loss", recon_loss), ("mmd_value", mmd_value), ("triplet_value", triplet_value)):
        if not math.isfinite(float(value)):
            raise ValueError(f"non-finite {name}: {float(value)}")
    return recon_loss + weights.beta * mmd_value + weights.alpha * triplet_value
