"""Joint sequences, bone derivation, frame sampling, occlusion noise and file I/O."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .hand_graph import HandGraph

MAGIC = b"SKEL"
FORMAT_VERSION = 1

MODE_2D_SCORE = "2d"
MODE_3D = "3d"
_MODE_BYTE = {MODE_2D_SCORE: 0, MODE_3D: 1}
_BYTE_MODE = {v: k for k, v in _MODE_BYTE.items()}


class SampleFormatError(Exception):
    """Raised on malformed sample files (bad magic, truncation, size mismatch)."""


@dataclass
class JointSample:
    """One clip of joint records: (T, V, 3) float32, labels and an input mode."""

    data: np.ndarray
    person_id: int
    sentence_id: int
    repetition_id: int
    mode: str = MODE_2D_SCORE

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ValueError(f"joint data must be (T, V, 3), got {self.data.shape}")
        if self.mode not in _MODE_BYTE:
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_joints(self) -> int:
        return self.data.shape[1]


@dataclass
class BoneSample:
    """Per-edge difference vectors: (T, num_edges, 3) plus the edge map."""

    data: np.ndarray
    edge_index: tuple  # bone slot -> (parent joint, child joint)
    mode: str = MODE_2D_SCORE


def derive_bones(j: JointSample, g: HandGraph) -> BoneSample:
    """Bone vectors child minus parent along increasing hop distance.

    In 2D-score mode the bone score is the product of the endpoint scores; in
    3D mode all three channels are differenced.
    """
    if j.num_joints != g.num_vertices:
        raise ValueError(
            f"sample has {j.num_joints} joints but graph has {g.num_vertices} vertices"
        )
    hop = g.hop_distance
    pairs = []
    for a, b in g.edges:
        p, c = (a, b) if hop[a] < hop[b] else (b, a)
        pairs.append((p, c))
    parents = np.array([p for p, _ in pairs])
    children = np.array([c for _, c in pairs])
    if j.mode == MODE_3D:
        data = j.data[:, children, :] - j.data[:, parents, :]
    else:
        coords = j.data[:, children, :2] - j.data[:, parents, :2]
        score = j.data[:, children, 2:] * j.data[:, parents, 2:]
        data = np.concatenate([coords, score], axis=2)
    return BoneSample(data=data.astype(np.float32), edge_index=tuple(pairs), mode=j.mode)


def bones_to_vertex_layout(b: BoneSample, num_vertices: int) -> np.ndarray:
    """Scatter bones to their child-joint slots, giving a (T, V, 3) array.

    Every non-root vertex of a tree is the child of exactly one bone; root
    slots stay zero. Lets the bone stream reuse the joint-stream graph.
    """
    out = np.zeros((b.data.shape[0], num_vertices, 3), dtype=np.float32)
    for slot, (_, child) in enumerate(b.edge_index):
        out[:, child, :] = b.data[:, slot, :]
    return out


def sample_frames(t_full: int, t_out: int = 32, rng: np.random.Generator | None = None) -> np.ndarray:
    """Segment-random frame sampling: one uniform draw per equal segment.

    Short clips are stretched proportionally so indices repeat. Output is a
    non-decreasing index array of length t_out.
    """
    if t_full < 1:
        raise ValueError("t_full must be >= 1")
    rng = rng or np.random.default_rng()
    bounds = np.linspace(0, t_full, t_out + 1)
    lo = np.floor(bounds[:-1]).astype(int)
    hi = np.ceil(bounds[1:]).astype(int)
    hi = np.minimum(np.maximum(hi, lo + 1), t_full)
    idx = np.array([rng.integers(a, b) for a, b in zip(lo, hi)])
    return np.sort(idx)


def inject_noise(
    j: JointSample,
    rng: np.random.Generator,
    occlusion_weights: np.ndarray,
) -> JointSample:
    """Simulate joint-detector failure: zero 0-2 whole joint columns.

    The failing-joint count is uniform over {0, 1, 2}; joints are drawn
    without replacement with probability proportional to the weights, and
    their (x, y, score) entries are zeroed in every frame.
    """
    w = np.asarray(occlusion_weights, dtype=float)
    if w.shape != (j.num_joints,):
        raise ValueError("occlusion weights must match the joint count")
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("weights must be nonnegative with a positive sum")
    k = int(rng.integers(0, 3))
    data = j.data.copy()
    if k > 0:
        probs = w / w.sum()
        joints = rng.choice(j.num_joints, size=k, replace=False, p=probs)
        data[:, joints, :] = 0.0
    return JointSample(
        data=data,
        person_id=j.person_id,
        sentence_id=j.sentence_id,
        repetition_id=j.repetition_id,
        mode=j.mode,
    )


def default_occlusion_weights(num_joints: int) -> np.ndarray:
    """Thumb joints most occlusion-prone (weight 3), index finger 2, rest 1."""
    w = np.ones(num_joints)
    for off in range(0, num_joints, 21):
        w[off + 1 : off + 5] = 3.0  # thumb chain
        w[off + 5 : off + 9] = 2.0  # index finger chain
    return w


# -- binary sample format ----------------------------------------------

def write_sample(path: str, j: JointSample) -> None:
    t, v, c = j.data.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, t, v, c))
        fh.write(struct.pack("<B", _MODE_BYTE[j.mode]))
        fh.write(j.data.astype("<f4").tobytes())


def read_sample(path: str, person_id=0, sentence_id=0, repetition_id=0) -> JointSample:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise SampleFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 21:
        raise SampleFormatError(f"{path}: truncated header")
    version, t, v, c = struct.unpack("<IIII", blob[4:20])
    if version != FORMAT_VERSION:
        raise SampleFormatError(f"{path}: unsupported version {version}")
    mode_byte = blob[20]
    if mode_byte not in _BYTE_MODE:
        raise SampleFormatError(f"{path}: unknown mode byte {mode_byte}")
    payload = blob[21:]
    expected = t * v * c * 4
    if len(payload) != expected:
        raise SampleFormatError(
            f"{path}: payload holds {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(t, v, c)
    return JointSample(
        data=data.copy(),
        person_id=person_id,
        sentence_id=sentence_id,
        repetition_id=repetition_id,
        mode=_BYTE_MODE[mode_byte],
    )


# -- manifest -----------------------------------------------------------

@dataclass
class ManifestRecord:
    path: str
    person_id: int
    sentence_id: int
    repetition_id: int


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def person_ids(self):
        return sorted({r.person_id for r in self.records})

    def sentence_ids(self):
        return sorted({r.sentence_id for r in self.records})


def write_manifest(path: str, manifest: DatasetManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in manifest.records:
            fh.write(f"{r.path}\t{r.person_id}\t{r.sentence_id}\t{r.repetition_id}\n")


def read_manifest(path: str) -> DatasetManifest:
    records = []
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise SampleFormatError(f"{path}:{ln}: expected 4 tab-separated fields")
            p = parts[0]
            if not os.path.isabs(p):
                p = os.path.join(base, p)
            records.append(
                ManifestRecord(
                    path=p,
                    person_id=int(parts[1]),
                    sentence_id=int(parts[2]),
                    repetition_id=int(parts[3]),
                )
            )
    return DatasetManifest(records=records)


def load_dataset(manifest: DatasetManifest) -> list:
    """Read every referenced sample into memory (corpora here are small)."""
    return [
        read_sample(r.path, r.person_id, r.sentence_id, r.repetition_id)
        for r in manifest.records
    ]
