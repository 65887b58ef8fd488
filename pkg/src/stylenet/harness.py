"""Experimental protocols: sentence-disjoint and repetition splits, repeated
stochastic evaluation with optional occlusion noise, and ablation sweeps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .hand_graph import build_hand_graph
from .model import ModelConfig, TwoStreamModel
from .skeleton_data import (
    DatasetManifest,
    JointSample,
    default_occlusion_weights,
    inject_noise,
)
from .trainer import (
    TrainConfig,
    assemble_inputs,
    class_labels,
    train,
)

PROTOCOL_UNSEEN = "unseen_sentences"
PROTOCOL_SEEN = "seen_sentences"

ABLATION_VARIANTS = (
    "baseline",
    "+downsample",
    "+downsample+TNL",
    "+downsample+SNL",
    "full",
)


class SplitError(ValueError):
    pass


@dataclass
class ExperimentSplit:
    protocol: str
    train_ids: tuple
    val_ids: tuple
    test_ids: tuple
    spec: tuple
    seed: int

    def __post_init__(self):
        sets = [set(self.train_ids), set(self.val_ids), set(self.test_ids)]
        for i in range(3):
            for j in range(i + 1, 3):
                if sets[i] & sets[j]:
                    raise SplitError("split sets overlap")

    def all_ids(self):
        return tuple(self.train_ids) + tuple(self.val_ids) + tuple(self.test_ids)


def split_unseen(manifest: DatasetManifest, counts, seed: int) -> ExperimentSplit:
    """Assign whole sentences to train/val/test; repetitions travel together."""
    a, b, c = counts
    sentences = manifest.sentence_ids()
    if a + b + c != len(sentences):
        raise SplitError(f"counts {counts} do not sum to {len(sentences)} sentences")
    if min(a, b, c) < 1:
        raise SplitError("each of train/val/test needs at least one sentence")
    rng = np.random.default_rng(seed)
    perm = [sentences[i] for i in rng.permutation(len(sentences))]
    tr_s, va_s, te_s = set(perm[:a]), set(perm[a : a + b]), set(perm[a + b :])
    tr, va, te = [], [], []
    for i, r in enumerate(manifest.records):
        (tr if r.sentence_id in tr_s else va if r.sentence_id in va_s else te).append(i)
    split = ExperimentSplit(PROTOCOL_UNSEEN, tuple(tr), tuple(va), tuple(te), tuple(counts), seed)
    _check_unseen(split, manifest)
    return split


def _check_unseen(split: ExperimentSplit, manifest: DatasetManifest):
    by_set = {}
    for name, ids in (("train", split.train_ids), ("val", split.val_ids), ("test", split.test_ids)):
        by_set[name] = {manifest.records[i].sentence_id for i in ids}
    if by_set["train"] & by_set["test"]:
        raise SplitError("train and test share sentence ids")
    if by_set["train"] & by_set["val"] or by_set["val"] & by_set["test"]:
        raise SplitError("sentence ids leak across split sets")


def split_seen(manifest: DatasetManifest, reps, seed: int) -> ExperimentSplit:
    """Deal each (person, sentence)'s repetitions into train/val/test."""
    tr_n, va_n, te_n = reps
    groups = {}
    for i, r in enumerate(manifest.records):
        groups.setdefault((r.person_id, r.sentence_id), []).append(i)
    rng = np.random.default_rng(seed)
    tr, va, te = [], [], []
    for key in sorted(groups):
        ids = groups[key]
        if tr_n + va_n + te_n != len(ids):
            raise SplitError(
                f"reps {reps} do not sum to {len(ids)} repetitions for {key}"
            )
        perm = [ids[j] for j in rng.permutation(len(ids))]
        tr.extend(perm[:tr_n])
        va.extend(perm[tr_n : tr_n + va_n])
        te.extend(perm[tr_n + va_n :])
    return ExperimentSplit(PROTOCOL_SEEN, tuple(tr), tuple(va), tuple(te), tuple(reps), seed)


def save_split(path: str, split: ExperimentSplit) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "protocol": split.protocol,
                "train": list(split.train_ids),
                "val": list(split.val_ids),
                "test": list(split.test_ids),
                "spec": list(split.spec),
                "seed": split.seed,
            },
            fh,
        )


def load_split(path: str) -> ExperimentSplit:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return ExperimentSplit(
        d["protocol"], tuple(d["train"]), tuple(d["val"]), tuple(d["test"]),
        tuple(d["spec"]), d["seed"],
    )


# -- evaluation ---------------------------------------------------------

@dataclass
class EvalReport:
    mean_acc: float
    std_acc: float
    trial_accs: list = field(default_factory=list)


def evaluate(
    model: TwoStreamModel,
    dataset: list[JointSample],
    split: ExperimentSplit,
    trials: int = 30,
    noise: bool = False,
    noise_weights: np.ndarray | None = None,
    seed: int = 0,
) -> EvalReport:
    """Repeated stochastic test passes: frames are resampled per trial (and
    joints optionally zeroed by the occlusion protocol) before classification
    by the fused argmax."""
    test_ids = list(split.test_ids)
    if not test_ids:
        raise SplitError("empty test set")
    graph = build_hand_graph("one" if model.cfg.num_vertices == 21 else "two")
    labels = class_labels(dataset)
    n_classes = labels.max() + 1
    if n_classes > model.cfg.num_classes:
        raise ValueError(
            f"manifest has {n_classes} classes but model outputs {model.cfg.num_classes}"
        )
    if noise and noise_weights is None:
        noise_weights = default_occlusion_weights(model.cfg.num_vertices)
    accs = []
    for trial in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), trial]))
        correct = 0
        for b0 in range(0, len(test_ids), 64):
            chunk = test_ids[b0 : b0 + 64]
            samples = [dataset[i] for i in chunk]
            if noise:
                samples = [inject_noise(s, rng, noise_weights) for s in samples]
            xj, xb = assemble_inputs(samples, graph, model.cfg.frames, rng, model.dtype)
            logits = model.predict_logits(xj, xb)
            correct += int((logits.argmax(axis=1) == labels[chunk]).sum())
        accs.append(correct / len(test_ids))
    return EvalReport(
        mean_acc=float(np.mean(accs)),
        std_acc=float(np.std(accs)),
        trial_accs=[float(a) for a in accs],
    )


# -- ablations ----------------------------------------------------------

def variant_config(base: ModelConfig, variant: str) -> ModelConfig:
    """Toggle the spatial non-local block, temporal non-local block and
    downsampler; the baseline replaces the downsampler with average pooling."""
    if variant not in ABLATION_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    snl = base.spatial_nonlocal_layer
    tnl = base.temporal_nonlocal_layer
    if variant == "baseline":
        return replace(base, spatial_nonlocal_layer=None, temporal_nonlocal_layer=None, use_downsampler=False)
    if variant == "+downsample":
        return replace(base, spatial_nonlocal_layer=None, temporal_nonlocal_layer=None, use_downsampler=True)
    if variant == "+downsample+TNL":
        return replace(base, spatial_nonlocal_layer=None, temporal_nonlocal_layer=tnl, use_downsampler=True)
    if variant == "+downsample+SNL":
        return replace(base, spatial_nonlocal_layer=snl, temporal_nonlocal_layer=None, use_downsampler=True)
    return base


@dataclass
class AblationRow:
    variant: str
    seed_accs: list
    mean_acc: float
    std_acc: float


def run_ablation(
    dataset: list[JointSample],
    manifest: DatasetManifest,
    split_counts,
    variants,
    seeds,
    base_cfg: ModelConfig,
    train_cfg: TrainConfig,
    trials: int = 5,
    noise: bool = False,
    verbose: bool = False,
) -> list[AblationRow]:
    """Train every variant on identical per-seed splits and report accuracies."""
    graph = build_hand_graph("one" if base_cfg.num_vertices == 21 else "two")
    rows = []
    for variant in variants:
        cfg = variant_config(base_cfg, variant)
        accs = []
        for seed in seeds:
            split = split_unseen(manifest, split_counts, seed)
            model = TwoStreamModel(cfg, seed=seed)
            tcfg = replace(train_cfg, seed=seed)
            result, _ = train(model, dataset, split, tcfg, graph, verbose=verbose)
            if result.best_arrays is not None:
                _load_arrays_into(model, result.best_arrays)
            report = evaluate(model, dataset, split, trials=trials, noise=noise, seed=seed)
            accs.append(report.mean_acc)
        rows.append(
            AblationRow(
                variant=variant,
                seed_accs=accs,
                mean_acc=float(np.mean(accs)),
                std_acc=float(np.std(accs)),
            )
        )
    return rows


def _load_arrays_into(model: TwoStreamModel, arrays: dict) -> None:
    for p in model.parameters():
        p.data = arrays[p.name].astype(model.dtype).copy()
    for name, st in model.bn_states().items():
        st.running_mean = arrays[f"{name}.running_mean"].astype(st.running_mean.dtype).copy()
        st.running_var = arrays[f"{name}.running_var"].astype(st.running_var.dtype).copy()


def ablation_csv(rows) -> str:
    lines = ["variant,mean_acc,std_acc," + ",".join(f"seed{i}" for i in range(len(rows[0].seed_accs)))]
    for r in rows:
        lines.append(
            f"{r.variant},{r.mean_acc:.4f},{r.std_acc:.4f},"
            + ",".join(f"{a:.4f}" for a in r.seed_accs)
        )
    return "\n".join(lines) + "\n"
