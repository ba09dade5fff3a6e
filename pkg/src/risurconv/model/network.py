"""The five-layer RISurConv classifier and its geometry pipeline.

Geometry (sampling, neighbour search, descriptors) is computed in float64 per
cloud and is independent of the weights; only the float32 descriptor blocks
and the neighbour indices cross into the learnable part.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import nn
from ..cloud import PointCloud, estimate_normals
from ..nn import functional as F
from ..risp import column_names, risp_features
from ..sampling import farthest_point_sample, knn_indices
from .config import ClassifierConfig


class DegenerateCloudError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LayerGeometry:
    reference: np.ndarray   # (N,) indices into the previous layer's point set
    neighbors: np.ndarray   # (N, K) indices into the previous layer's point set
    features: np.ndarray    # (N, K, C) float32 descriptors
    source: np.ndarray      # (N,) indices of the reference points in the input cloud


@dataclass(frozen=True, eq=False)
class CloudGeometry:
    layers: tuple
    label: int | None = None


def cloud_geometry(cloud: PointCloud, cfg: ClassifierConfig) -> CloudGeometry:
    """Per-layer sampling, neighbourhoods and descriptors for one cloud."""
    if not cloud.has_normals:
        cloud = estimate_normals(cloud, k=min(cfg.normal_k, len(cloud)))
    pts, nrm = cloud.points, cloud.normals
    source = np.arange(len(pts))
    layers = []
    for depth, spec in enumerate(cfg.layer_specs):
        if cfg.reestimate_normals and depth > 0:
            nrm = estimate_normals(PointCloud(pts), k=min(cfg.normal_k, len(pts))).normals
        m = min(spec.points, len(pts))
        k = len(pts) - 1 if spec.neighbors is None else spec.neighbors
        if k < 3 or k >= len(pts):
            raise DegenerateCloudError(
                f"layer {depth}: {len(pts)} points cannot supply {k} neighbours per reference")
        ref = farthest_point_sample(pts, m)
        try:
            nbr = knn_indices(pts, ref, k)
        except ValueError as exc:
            raise DegenerateCloudError(f"layer {depth}: {exc}") from None
        feats = risp_features(pts, nrm, ref, nbr, cfg.risp_variant, cfg.surfaces)
        layers.append(LayerGeometry(ref, nbr, feats.astype(np.float32), source[ref]))
        pts, nrm, source = pts[ref], nrm[ref], source[ref]
    return CloudGeometry(tuple(layers), cloud.label)


def worker_count() -> int:
    env = os.environ.get("RISUR_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def batch_geometry(clouds, cfg: ClassifierConfig, threads: int | None = None) -> list[CloudGeometry]:
    """Geometry for many clouds; order of the result follows ``clouds``."""
    threads = worker_count() if threads is None else threads
    if threads <= 1 or len(clouds) < 2:
        return [cloud_geometry(c, cfg) for c in clouds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda c: cloud_geometry(c, cfg), clouds))


class RISurConvClassifier(nn.Module):
    def __init__(self, cfg: ClassifierConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        in_features = len(column_names(cfg.risp_variant, cfg.surfaces))
        prev = 0
        self.convs = []
        for i, spec in enumerate(cfg.layer_specs):
            embed = spec.channels if cfg.embed_channels is None else cfg.embed_channels[i]
            self.convs.append(nn.RISurConv(
                in_features, prev, embed, spec.channels, rng,
                sa1=cfg.sa_flags["sa1"], sa2=cfg.sa_flags["sa2"],
                sa_bias=cfg.sa_bias, sa_residual=cfg.sa_residual))
            prev = spec.channels
        self.encoder = nn.TransformerEncoder(prev, cfg.encoder_heads, rng) if cfg.sa_flags["encoder"] else None
        widths = [prev, *cfg.fc_widths]
        self.fc = [nn.Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]
        self.fc_norms = [nn.BatchNorm(b) for b in widths[1:]]
        self.classifier = nn.Linear(widths[-1], cfg.num_classes, rng)

    def forward(self, geoms, return_trace: bool = False):
        """Logits [B, num_classes] for a batch of precomputed geometries."""
        depth = len(self.convs)
        for g in geoms:
            if len(g.layers) != depth:
                raise ValueError("geometry was built for a different layer count")
        trace = []
        feats = None
        for i, conv in enumerate(self.convs):
            risp = nn.Tensor(np.stack([g.layers[i].features for g in geoms]))
            f_prev = None
            if feats is not None:
                f_prev = F.gather(feats, np.stack([g.layers[i].neighbors for g in geoms]))
            feats = conv(risp, f_prev)
            trace.append(feats)
        if self.encoder is not None:
            feats = self.encoder(feats)
            trace.append(feats)
        x = feats.reshape(feats.shape[0], -1) if feats.shape[1] == 1 else F.maxpool(feats, axis=1)
        for lin, bn in zip(self.fc, self.fc_norms):
            x = F.relu(bn(lin(x)))
            trace.append(x)
        logits = self.classifier(x)
        trace.append(logits)
        return (logits, trace) if return_trace else logits

    def layer_shapes(self, geom: CloudGeometry) -> list[tuple[str, int, int]]:
        """(module, dims, points) rows for one cloud, mirroring the network table layout."""
        was = self.training
        self.eval()
        try:
            logits, trace = self.forward([geom], return_trace=True)
        finally:
            self.train(was)
        names = ["RISurConv"] * len(self.convs)
        if self.encoder is not None:
            names.append("Transformer Encoder")
        names += ["Fully connected"] * len(self.fc)
        rows = []
        for name, t in zip(names, trace):
            if t.ndim == 3:
                rows.append((name, t.shape[2], t.shape[1]))
            else:
                rows.append((name, t.shape[1], 1))
        rows.append(("Softmax", logits.shape[1], 1))
        return rows


def build_classifier(cfg: ClassifierConfig, seed: int = 0) -> RISurConvClassifier:
    return RISurConvClassifier(cfg, seed)


def predict_logits(network: RISurConvClassifier, clouds, batch_size: int = 32) -> np.ndarray:
    """Inference-mode logits for a list of clouds, as a float32 array."""
    was = network.training
    network.eval()
    try:
        out = []
        for start in range(0, len(clouds), batch_size):
            geoms = batch_geometry(clouds[start:start + batch_size], network.cfg)
            out.append(network(geoms).data)
    finally:
        network.train(was)
    return np.concatenate(out, axis=0) if out else np.zeros((0, network.cfg.num_classes), np.float32)


def forward_classify(network: RISurConvClassifier, cloud: PointCloud) -> np.ndarray:
    return predict_logits(network, [cloud])[0]


def softmax_probabilities(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
