"""Typing-style person identification: graph model, synthetic data, training."""

from .hand_graph import (
    HandGraph,
    SubsetAdjacency,
    build_hand_graph,
    build_subset_adjacency,
    normalize_subset,
    partition_subsets,
)
from .skeleton_data import (
    BoneSample,
    DatasetManifest,
    JointSample,
    derive_bones,
    inject_noise,
    read_manifest,
    read_sample,
    sample_frames,
    write_manifest,
    write_sample,
)
from .model import ModelConfig, TwoStreamModel, tiny_config, two_stream_predict
from .trainer import TrainConfig, train
from .harness import ExperimentSplit, evaluate, split_seen, split_unseen

__all__ = [
    "HandGraph",
    "SubsetAdjacency",
    "build_hand_graph",
    "build_subset_adjacency",
    "normalize_subset",
    "partition_subsets",
    "BoneSample",
    "DatasetManifest",
    "JointSample",
    "derive_bones",
    "inject_noise",
    "read_manifest",
    "read_sample",
    "sample_frames",
    "write_manifest",
    "write_sample",
    "ModelConfig",
    "TwoStreamModel",
    "tiny_config",
    "two_stream_predict",
    "TrainConfig",
    "train",
    "ExperimentSplit",
    "evaluate",
    "split_seen",
    "split_unseen",
]
