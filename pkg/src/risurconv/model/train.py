"""Training loop, rotation protocols and ablation sweeps."""

from __future__ import annotations

import json
import logging
import time

import numpy as np

from .. import nn
from ..cloud import apply_rotation, random_rotation
from ..nn import functional as F
from .config import ClassifierConfig, TrainConfig, config_hash
from .network import RISurConvClassifier, batch_geometry, build_classifier, predict_logits

log = logging.getLogger(__name__)

PROTOCOLS = {"z/z": ("z", "z"), "so3/so3": ("so3", "so3"), "z/so3": ("z", "so3")}
_ALIASES = {"zz": "z/z", "so3so3": "so3/so3", "zso3": "z/so3"}


class TrainingDivergedError(RuntimeError):
    pass


def protocol_name(mode: str) -> str:
    mode = mode.lower()
    mode = _ALIASES.get(mode, mode)
    if mode not in PROTOCOLS:
        raise ValueError(f"unknown protocol {mode!r}; expected one of {sorted(PROTOCOLS)}")
    return mode


def _rotated(clouds, mode: str, seed_seq: np.random.SeedSequence):
    if mode == "none":
        return list(clouds)
    seeds = seed_seq.generate_state(len(clouds))
    return [apply_rotation(c, random_rotation(mode, int(s))) for c, s in zip(clouds, seeds)]


def _batches(order: np.ndarray, batch_size: int):
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # batch norm needs two samples; fold a trailing singleton into the previous batch
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def train(network: RISurConvClassifier, dataset, cfg: TrainConfig, callback=None):
    """Adam on softmax cross-entropy with per-epoch rotation augmentation.

    Returns ``(network, history)``; history holds one record per epoch with the
    mean training loss and accuracy. ``callback(record)`` is called after each epoch.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    labels = np.array([c.label for c in dataset])
    if np.any(labels == None) or labels.max() >= network.cfg.num_classes:  # noqa: E711
        raise ValueError("every cloud needs a label below num_classes")
    labels = labels.astype(np.int64)
    if len(dataset) < 2:
        raise ValueError("training needs at least two clouds (batch norm)")

    params = network.parameters()
    opt = nn.Adam(params, lr=cfg.lr)
    chash = config_hash(network.cfg, cfg)
    root = np.random.SeedSequence(cfg.seed)
    history = []
    network.train()
    for epoch in range(cfg.epochs):
        epoch_seq = root.spawn(1)[0]
        order_rng = np.random.default_rng(epoch_seq.generate_state(1)[0])
        order = order_rng.permutation(len(dataset))
        clouds = _rotated([dataset[i] for i in order], cfg.rotation_mode_train, epoch_seq)
        pos = {int(j): i for i, j in enumerate(order)}
        total, correct, seen = 0.0, 0, 0
        t0 = time.perf_counter()
        for batch in _batches(order, cfg.batch_size):
            geoms = batch_geometry([clouds[pos[int(j)]] for j in batch], network.cfg)
            y = labels[batch]
            opt.zero_grad()
            logits = network(geoms)
            loss = F.cross_entropy(logits, y)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value} at epoch {epoch + 1}; max |logit| "
                    f"{np.nanmax(np.abs(logits.data)):.3g}, lr {cfg.lr}")
            loss.backward()
            opt.step()
            total += value * len(batch)
            correct += int((logits.data.argmax(axis=1) == y).sum())
            seen += len(batch)
        record = {
            "epoch": epoch + 1,
            "loss": total / seen,
            "accuracy": correct / seen,
            "mode": cfg.rotation_mode_train,
            "config_hash": chash,
            "seed": cfg.seed,
            "seconds": round(time.perf_counter() - t0, 3),
        }
        history.append(record)
        log.info("epoch %d loss %.4f acc %.3f", record["epoch"], record["loss"], record["accuracy"])
        if callback is not None:
            callback(record)
    network.eval()
    return network, history


def accuracy(network: RISurConvClassifier, clouds) -> float:
    if not clouds:
        raise ValueError("no clouds to evaluate")
    logits = predict_logits(network, clouds)
    labels = np.array([c.label for c in clouds])
    return float(np.mean(logits.argmax(axis=1) == labels))


def evaluate_protocol(network: RISurConvClassifier, dataset, mode: str, seed: int = 0) -> float:
    """Accuracy on ``dataset`` after the protocol's test-time rotations."""
    test_mode = PROTOCOLS[protocol_name(mode)][1]
    return accuracy(network, _rotated(dataset, test_mode, np.random.SeedSequence(seed)))


def protocol_sweep(network: RISurConvClassifier, dataset, resamples: int = 10, seed: int = 0) -> dict:
    """Accuracy under every protocol, averaged over ``resamples`` rotation draws.

    ``std`` is the population standard deviation of the three protocol means, in
    percentage points.
    """
    result = {}
    for i, mode in enumerate(PROTOCOLS):
        accs = [evaluate_protocol(network, dataset, mode, seed=seed * 1000 + i * 100 + r)
                for r in range(resamples)]
        result[mode] = {"mean": float(np.mean(accs)), "runs": accs}
    means = np.array([result[m]["mean"] for m in PROTOCOLS]) * 100.0
    result["std"] = float(means.std())
    return result


# --------------------------------------------------------------------------- ablations

RISP_ROWS = {
    "A": {"risp_variant": "standard-14"},
    "B": {"risp_variant": "distance-off"},
    "C": {"risp_variant": "angles-only"},
    "D": {"risp_variant": "euclid-only"},
    "E": {"risp_variant": "extended-16"},
}
ATTENTION_ROWS = {
    "A": {"sa_flags": {"sa1": True, "sa2": True, "encoder": True}},
    "B": {"sa_flags": {"sa1": False, "sa2": True, "encoder": True}},
    "C": {"sa_flags": {"sa1": True, "sa2": False, "encoder": True}},
    "D": {"sa_flags": {"sa1": True, "sa2": True, "encoder": False}},
    "E": {"sa_flags": {"sa1": False, "sa2": False, "encoder": False}},
}
SURFACE_ROWS = {str(s): {"surfaces": s} for s in (1, 2, 3, 4)}

GRIDS = {"risp": RISP_ROWS, "attention": ATTENTION_ROWS, "surfaces": SURFACE_ROWS}


def ablation_sweep(base_cfg: ClassifierConfig, train_set, test_set, train_cfg: TrainConfig,
                   grids=("risp", "attention", "surfaces"), init_seed: int = 0, callback=None,
                   rows: dict | None = None) -> list[dict]:
    """Train and evaluate each ablation row; identical configurations are trained once.

    Rows report z/SO3 test accuracy (train rotations follow ``train_cfg``).
    ``rows`` optionally restricts a grid to some of its row names, e.g.
    ``{"attention": ["A", "E"]}``.
    """
    cache: dict[str, float] = {}
    report = []
    for grid in grids:
        for row, change in GRIDS[grid].items():
            if rows is not None and grid in rows and row not in rows[grid]:
                continue
            cfg = base_cfg.replace(**change)
            chash = config_hash(cfg, train_cfg)
            if chash not in cache:
                net = build_classifier(cfg, seed=init_seed)
                train(net, train_set, train_cfg)
                cache[chash] = evaluate_protocol(net, test_set, "z/so3", seed=train_cfg.seed)
            record = {"table": grid, "row": row, "config_hash": chash,
                      "accuracy": cache[chash], "seed": train_cfg.seed, "change": change}
            report.append(record)
            if callback is not None:
                callback(record)
    return report


def write_ndjson(records, fh) -> None:
    for r in records:
        fh.write(json.dumps(r, sort_keys=True) + "\n")
