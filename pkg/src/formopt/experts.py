"""Per-part surrogate experts with geometric gating.

Each part's 3D point cloud is resampled to a common size and embedded by
a small PointNet-style network (shared per-point features, global max
pooling) trained to classify parts. A new part is routed to experts by
the Euclidean distance between embeddings: hard gating picks the single
nearest expert, soft gating weights experts by inverse distance, drops
contributions at or below a cutoff, and renormalizes. Expert posteriors
are combined moment-wise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .surrogate import PosteriorPrediction

RESAMPLE_MODES = ("up_sample", "down_sample")


@dataclass
class PointCloud:
    part_id: str
    points: np.ndarray  # (n, 3)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or self.points.shape[0] < 1:
            raise ValueError(f"{self.part_id}: points must be a nonempty (n, 3) array")
        if not np.isfinite(self.points).all():
            raise ValueError(f"{self.part_id}: non-finite coordinates")

    def __len__(self):
        return self.points.shape[0]

    @classmethod
    def load(cls, part_id: str, path) -> "PointCloud":
        """Plain text, one point per line: x y z."""
        pts = np.loadtxt(path, ndmin=2)
        return cls(part_id=part_id, points=pts)

    def save(self, path):
        np.savetxt(path, self.points)


@dataclass
class EncoderConfig:
    resample_mode: str = "down_sample"
    embedding_dim: Optional[int] = None  # default: the resampled point count
    max_steps: int = 300
    learning_rate: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.resample_mode not in RESAMPLE_MODES:
            raise ValueError(f"unknown resample mode {self.resample_mode!r}")


def resample(cloud: PointCloud, k: int, mode: str, seed: int = 0) -> PointCloud:
    """Bring a cloud to exactly k points.

    down_sample draws k points uniformly without replacement; up_sample
    doubles the full cloud until it has at least k points, then draws k
    without replacement.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    pts = cloud.points
    if mode == "down_sample":
        if len(pts) < k:
            raise ValueError(
                f"{cloud.part_id}: cannot down_sample {len(pts)} points to {k}"
            )
    elif mode == "up_sample":
        while len(pts) < k:
            pts = np.concatenate([pts, pts])
    else:
        raise ValueError(f"unknown resample mode {mode!r}")
    idx = rng.choice(len(pts), size=k, replace=False)
    return PointCloud(part_id=cloud.part_id, points=pts[idx])


def choose_k_emb(clouds: Sequence[PointCloud], mode: str) -> int:
    if not clouds:
        raise ValueError("no clouds given")
    sizes = [len(c) for c in clouds]
    return min(sizes) if mode == "down_sample" else max(sizes)


class _PointNet(torch.nn.Module):
    """Shared per-point features (3->32->64->k_emb), global max pooling."""

    def __init__(self, k_emb: int, k_experts: int):
        super().__init__()
        self.f1 = torch.nn.Linear(3, 32)
        self.f2 = torch.nn.Linear(32, 64)
        self.f3 = torch.nn.Linear(64, k_emb)
        self.classifier = torch.nn.Linear(k_emb, k_experts)

    def embed(self, pts: torch.Tensor) -> torch.Tensor:
        """(batch, n_points, 3) -> (batch, k_emb)."""
        h = torch.tanh(self.f1(pts))
        h = torch.tanh(self.f2(h))
        h = self.f3(h)
        return h.max(dim=1).values

    def forward(self, pts: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.embed(pts))


@dataclass
class GeometricEncoder:
    net: _PointNet
    k_points: int  # resampled point count per cloud
    k_emb: int
    part_ids: list[str]
    config: EncoderConfig
    training_accuracy: float = 0.0

    def embed(self, cloud: PointCloud, seed: int = 0) -> np.ndarray:
        sampled = resample(cloud, self.k_points, self.config.resample_mode, seed=seed)
        with torch.no_grad():
            pts = torch.as_tensor(sampled.points).unsqueeze(0)
            return self.net.embed(pts).squeeze(0).numpy()


def train_encoder(
    clouds: Sequence[PointCloud], config: Optional[EncoderConfig] = None
) -> tuple[GeometricEncoder, dict[str, np.ndarray]]:
    """Train the embedding network to separate the given parts.

    Returns the encoder and the per-part embeddings. Trained once per
    loop start; the geometry does not change between iterations.
    """
    config = config or EncoderConfig()
    if len(clouds) < 2:
        raise ValueError(f"need >= 2 parts to train the encoder, got {len(clouds)}")
    k_points = choose_k_emb(clouds, config.resample_mode)
    k_emb = config.embedding_dim or k_points
    torch.manual_seed(config.seed)
    sampled = [
        resample(c, k_points, config.resample_mode, seed=config.seed + i)
        for i, c in enumerate(clouds)
    ]
    batch = torch.as_tensor(np.stack([c.points for c in sampled]))
    labels = torch.arange(len(clouds))
    net = _PointNet(k_emb, len(clouds))
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    loss_fn = torch.nn.CrossEntropyLoss()
    accuracy = 0.0
    for _ in range(config.max_steps):
        opt.zero_grad()
        logits = net(batch)
        loss = loss_fn(logits, labels)
        loss.backward()
        opt.step()
        accuracy = float((logits.argmax(dim=1) == labels).double().mean())
        if accuracy == 1.0:
            break
    if accuracy < 0.9:
        warnings.warn(
            f"encoder training accuracy {accuracy:.2f} below 0.9 after "
            f"{config.max_steps} steps"
        )
    encoder = GeometricEncoder(
        net=net,
        k_points=k_points,
        k_emb=k_emb,
        part_ids=[c.part_id for c in clouds],
        config=config,
        training_accuracy=accuracy,
    )
    with torch.no_grad():
        embeddings = {
            c.part_id: net.embed(batch[i : i + 1]).squeeze(0).numpy()
            for i, c in enumerate(sampled)
        }
    return encoder, embeddings


@dataclass
class GatingDecision:
    mode: str  # hard | soft
    selected: list[tuple[str, float]]  # (expert part_id, weight), weights sum to 1
    distances: dict[str, float]

    @property
    def weights(self) -> dict[str, float]:
        return dict(self.selected)


def gate(
    new_embedding: np.ndarray,
    expert_embeddings: dict[str, np.ndarray],
    mode: str = "soft",
    cutoff: float = 0.1,
) -> GatingDecision:
    """Route a new part to experts by embedding distance.

    Hard mode picks the nearest expert (ties by part id). Soft mode
    weights by inverse distance, drops weights <= cutoff, renormalizes;
    the max-weight expert is always kept, and an exact embedding match
    short-circuits to weight 1.
    """
    if not expert_embeddings:
        raise ValueError("no expert embeddings")
    ids = sorted(expert_embeddings)
    dist = {a: float(np.linalg.norm(new_embedding - expert_embeddings[a])) for a in ids}
    zero = [a for a in ids if dist[a] == 0.0]
    if mode == "hard" or zero:
        winner = zero[0] if zero else min(ids, key=lambda a: (dist[a], a))
        return GatingDecision(mode=mode, selected=[(winner, 1.0)], distances=dist)
    if mode != "soft":
        raise ValueError(f"unknown gating mode {mode!r}")
    inv = np.array([1.0 / dist[a] for a in ids])
    w = inv / inv.sum()
    keep = w > cutoff
    keep[int(np.argmax(w))] = True  # never drop the top expert
    kept_ids = [a for a, k in zip(ids, keep) if k]
    kept_w = w[keep] / w[keep].sum()
    return GatingDecision(
        mode="soft",
        selected=list(zip(kept_ids, kept_w.tolist())),
        distances=dist,
    )


def mixture_predict(
    decision: GatingDecision,
    experts: dict,
    candidates,
    batch_size: int = 512,
) -> PosteriorPrediction:
    """Moment-matched combination of the selected experts' marginals.

    mu = sum_j w_j mu_j; var = sum_j w_j (var_j + mu_j^2) - mu^2.
    """
    preds = {}
    for part_id, _ in decision.selected:
        if part_id not in experts:
            raise ValueError(f"no expert for part {part_id!r}")
        preds[part_id] = experts[part_id].predict(
            candidates, full_covariance=False, batch_size=batch_size
        )
    mu = sum(w * preds[a].mean for a, w in decision.selected)
    second = sum(
        w * (preds[a].variance + preds[a].mean**2) for a, w in decision.selected
    )
    var = second - mu**2
    if (var < -1e-9).any():
        raise ValueError(f"negative mixture variance: {var.min()}")
    return PosteriorPrediction(mean=mu, variance=np.clip(var, 0.0, None))
