"""Loss, Adam, step schedule and the deterministic two-stream training loop."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_arrays, save_arrays
from .hand_graph import HandGraph
from .model import TwoStreamModel, two_stream_predict
from .skeleton_data import (
    JointSample,
    bones_to_vertex_layout,
    derive_bones,
    sample_frames,
)

cross_entropy = ad.cross_entropy


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5
    epochs: int = 100
    lr_drops: tuple = (40, 70, 90)
    lr_factor: float = 0.1
    dropout: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.epochs) < 1 or self.lr <= 0:
            raise ValueError("batch_size, epochs and lr must be positive")
        if list(self.lr_drops) != sorted(self.lr_drops):
            raise ValueError("lr_drops must be ascending")


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Initial rate cut by lr_factor after each listed drop epoch."""
    drops = sum(1 for d in config.lr_drops if epoch >= d)
    return config.lr * config.lr_factor**drops


def parse_config_file(path: str) -> TrainConfig:
    """Flat key = value text file; unknown keys rejected."""
    cfg = TrainConfig()
    fields = {f: type(getattr(cfg, f)) for f in cfg.__dataclass_fields__}
    overrides = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#")[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in fields:
                raise ValueError(f"{path}:{ln}: unknown config key {key!r}")
            if key == "lr_drops":
                overrides[key] = tuple(int(x) for x in val.split(",")) if val else ()
            elif fields[key] is int:
                overrides[key] = int(val)
            elif fields[key] is float:
                overrides[key] = float(val)
            else:
                overrides[key] = val
    return replace(cfg, **overrides)


# -- optimizer ----------------------------------------------------------

class AdamState:
    """First/second moment buffers per parameter, plus the step counter."""

    def __init__(self, params):
        self.m = {p.name: np.zeros_like(p.data) for p in params}
        self.v = {p.name: np.zeros_like(p.data) for p in params}
        self.t = 0


def adam_step(params, state: AdamState, lr: float, config: TrainConfig) -> None:
    """Bias-corrected Adam; L2 added to the gradient before the moment update.

    Parameters flagged weight_decay_exempt (batch-norm affine, fusion scalars)
    skip the decay term. Parameters with no gradient are left untouched.
    """
    state.t += 1
    t = state.t
    b1, b2 = config.beta1, config.beta2
    for p in params:
        if p.grad is None:
            continue
        g = p.grad
        if config.weight_decay and not p.weight_decay_exempt:
            g = g + config.weight_decay * p.data
        m = state.m[p.name]
        v = state.v[p.name]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + config.eps)).astype(p.data.dtype)


# -- batch assembly -----------------------------------------------------

def assemble_inputs(
    samples: list[JointSample],
    graph: HandGraph,
    frames: int,
    rng: np.random.Generator,
    dtype=np.float32,
):
    """Sample frames and build (N, 3, T, V) joint and bone input arrays."""
    xj, xb = [], []
    for s in samples:
        idx = sample_frames(s.num_frames, frames, rng)
        clip = JointSample(
            data=s.data[idx],
            person_id=s.person_id,
            sentence_id=s.sentence_id,
            repetition_id=s.repetition_id,
            mode=s.mode,
        )
        xj.append(clip.data.transpose(2, 0, 1))
        bones = bones_to_vertex_layout(derive_bones(clip, graph), graph.num_vertices)
        xb.append(bones.transpose(2, 0, 1))
    return np.stack(xj).astype(dtype), np.stack(xb).astype(dtype)


def batch_accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float((logits.argmax(axis=1) == labels).mean())


# -- training loop ------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_acc: float
    alpha: float
    beta: float


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_val_acc: float = -1.0
    best_arrays: dict | None = None


def history_csv(history) -> str:
    lines = ["epoch,lr,train_loss,train_acc,val_acc,alpha,beta"]
    for h in history:
        lines.append(
            f"{h.epoch},{h.lr:.8g},{h.train_loss:.6f},{h.train_acc:.4f},"
            f"{h.val_acc:.4f},{h.alpha:.6f},{h.beta:.6f}"
        )
    return "\n".join(lines) + "\n"


def _epoch_rng(seed: int, epoch: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(epoch), tag]))


def eval_accuracy(model: TwoStreamModel, dataset, ids, labels, graph, frames, rng) -> float:
    if not ids:
        return float("nan")
    correct = 0
    for chunk in np.array_split(np.asarray(ids), max(1, len(ids) // 64)):
        samples = [dataset[i] for i in chunk]
        xj, xb = assemble_inputs(samples, graph, frames, rng, dtype=model.dtype)
        logits = model.predict_logits(xj, xb)
        correct += int((logits.argmax(axis=1) == labels[chunk]).sum())
    return correct / len(ids)


def train(
    model: TwoStreamModel,
    dataset: list[JointSample],
    split,
    config: TrainConfig,
    graph: HandGraph,
    start_epoch: int = 0,
    adam_state: AdamState | None = None,
    result: TrainResult | None = None,
    verbose: bool = False,
) -> tuple[TrainResult, AdamState]:
    """Jointly optimize both streams and the fusion scalars.

    Fully deterministic given config.seed: data order, frame sampling and
    dropout all derive from (seed, epoch) so training can resume at any epoch
    boundary and reproduce the identical trace.
    """
    train_ids = list(split.train_ids)
    val_ids = list(split.val_ids)
    if not train_ids:
        raise ValueError("empty training split")
    params = model.parameters()
    adam_state = adam_state or AdamState(params)
    result = result or TrainResult()
    labels = class_labels(dataset)
    frames = model.cfg.frames

    for epoch in range(start_epoch, config.epochs):
        lr = lr_at(epoch, config)
        order_rng = _epoch_rng(config.seed, epoch, 0)
        sample_rng = _epoch_rng(config.seed, epoch, 1)
        drop_rng = _epoch_rng(config.seed, epoch, 2)
        order = order_rng.permutation(train_ids)
        losses, accs = [], []
        for b0 in range(0, len(order), config.batch_size):
            batch = order[b0 : b0 + config.batch_size]
            xj, xb = assemble_inputs([dataset[i] for i in batch], graph, frames, sample_rng, model.dtype)
            y = labels[batch]
            for p in params:
                p.zero_grad()
            logits = model.forward(
                Tensor(xj, dtype=model.dtype), Tensor(xb, dtype=model.dtype), training=True, rng=drop_rng
            )
            loss = cross_entropy(logits, y)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(
                    f"non-finite loss {float(loss.data)} at epoch {epoch}, batch {b0 // config.batch_size}"
                )
            loss.backward()
            adam_step(params, adam_state, lr, config)
            losses.append(float(loss.data))
            accs.append(batch_accuracy(logits.data, y))
        val_rng = _epoch_rng(config.seed, epoch, 3)
        val_acc = eval_accuracy(model, dataset, val_ids, labels, graph, frames, val_rng)
        stats = EpochStats(
            epoch=epoch,
            lr=lr,
            train_loss=float(np.mean(losses)),
            train_acc=float(np.mean(accs)),
            val_acc=val_acc,
            alpha=float(model.alpha.data),
            beta=float(model.beta.data),
        )
        result.history.append(stats)
        if verbose:
            print(
                f"epoch {epoch}: loss {stats.train_loss:.4f} acc {stats.train_acc:.3f} "
                f"val {stats.val_acc:.3f}"
            )
        if val_ids and (val_acc > result.best_val_acc):
            result.best_val_acc = val_acc
            result.best_arrays = {k: v.copy() for k, v in model.state_arrays().items()}
    if result.best_arrays is None:
        result.best_arrays = {k: v.copy() for k, v in model.state_arrays().items()}
    return result, adam_state


def class_labels(dataset) -> np.ndarray:
    """Dense class index per sample, ordered by sorted person id."""
    ids = sorted({s.person_id for s in dataset})
    lut = {p: c for c, p in enumerate(ids)}
    return np.array([lut[s.person_id] for s in dataset])


# -- resumable trainer state -------------------------------------------

def save_trainer_state(path: str, model: TwoStreamModel, adam_state: AdamState, result: TrainResult, config: TrainConfig, epoch: int):
    arrays = {f"adam.m.{k}": v for k, v in adam_state.m.items()}
    arrays.update({f"adam.v.{k}": v for k, v in adam_state.v.items()})
    save_arrays(path + ".adam", arrays)
    model.save(path + ".model")
    if result.best_arrays is not None:
        save_arrays(path + ".best", result.best_arrays)
    meta = {
        "epoch": epoch,
        "t": adam_state.t,
        "best_val_acc": result.best_val_acc,
        "history": [vars(h) for h in result.history],
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in vars(config).items()},
    }
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh)


def load_trainer_state(path: str, model: TwoStreamModel):
    with open(path + ".meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    model.load(path + ".model")
    params = model.parameters()
    adam_state = AdamState(params)
    arrays = load_arrays(path + ".adam")
    for p in params:
        adam_state.m[p.name] = arrays[f"adam.m.{p.name}"].astype(p.data.dtype)
        adam_state.v[p.name] = arrays[f"adam.v.{p.name}"].astype(p.data.dtype)
    adam_state.t = meta["t"]
    result = TrainResult(
        history=[EpochStats(**h) for h in meta["history"]],
        best_val_acc=meta["best_val_acc"],
    )
    if os.path.exists(path + ".best"):
        result.best_arrays = load_arrays(path + ".best")
    cfg_kwargs = dict(meta["config"])
    cfg_kwargs["lr_drops"] = tuple(cfg_kwargs["lr_drops"])
    config = TrainConfig(**cfg_kwargs)
    return meta["epoch"], adam_state, result, config
