"""Synthetic typing corpus generator.

Person identity is carried by motion style (posture offsets, stroke velocity
profile, amplitudes) while sentence identity is carried by key order, so
unseen-sentence generalization can be measured on generated data.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .hand_graph import JOINTS_PER_HAND
from .skeleton_data import (
    MODE_2D_SCORE,
    MODE_3D,
    DatasetManifest,
    JointSample,
    ManifestRecord,
    write_manifest,
    write_sample,
)

NUM_KEYS = 26
NUM_COLUMNS = 10
_ROW_SIZES = (10, 9, 7)

# key grid geometry (pixels, in a nominal 320x240 frame)
_KEY_ORIGIN = (60.0, 140.0)
_KEY_PITCH_X = 20.0
_KEY_PITCH_Y = 22.0
_ROW_STAGGER = 6.0

# how much each joint along the active finger follows the fingertip;
# the tip coefficient is exactly 1 so a noiseless stroke lands on the key
_CHAIN_FOLLOW = np.array([0.25, 0.5, 0.8, 1.0])
_WRIST_FOLLOW = 0.05
_NEIGHBOR_FOLLOW = 0.08

# quantized style lattice: level counts per identity-bearing parameter
_LATTICE = (9, 9, 7, 5, 5)  # posture dx, posture dy, peak speed, asymmetry, stroke time
# seed scrambler: coprime to the lattice size (9*9*7*5*5 = 14175) so the map
# seed -> lattice cell is a bijection and consecutive seeds move in every
# style dimension at once rather than walking the lowest-order digit only
_LATTICE_STRIDE = 5821


@dataclass(frozen=True)
class Sentence:
    """Key sequence on the 26-key virtual layout."""

    keys: tuple
    id: int

    def __post_init__(self):
        if len(self.keys) == 0:
            raise ValueError("sentence must contain at least one key")
        if any(k < 0 or k >= NUM_KEYS for k in self.keys):
            raise ValueError("key index out of layout bounds")


@dataclass(frozen=True)
class StyleParams:
    """Per-person typing style knobs."""

    finger_for_column: tuple  # column -> finger index 0..4
    amplitude_scale: np.ndarray  # per-joint secondary-motion scale (21,)
    peak_speed: float  # px/s, controls stroke pace
    asymmetry: float  # fraction of a stroke spent travelling to the key
    stroke_time: float  # seconds per keystroke
    posture_offset: np.ndarray  # resting hand offset (dx, dy) px
    jitter_std: float  # px, per joint per frame
    score_degradation: float  # score loss per px/frame of speed


def key_position(key: int) -> np.ndarray:
    row, col, seen = 0, key, 0
    for r, size in enumerate(_ROW_SIZES):
        if key < seen + size:
            row, col = r, key - seen
            break
        seen += size
    x = _KEY_ORIGIN[0] + _KEY_PITCH_X * col + _ROW_STAGGER * row
    y = _KEY_ORIGIN[1] + _KEY_PITCH_Y * row
    return np.array([x, y])


def _column_of_key(key: int) -> int:
    seen = 0
    for size in _ROW_SIZES:
        if key < seen + size:
            return key - seen
        seen += size
    raise ValueError(f"key {key} out of range")


def make_person_style(seed: int, delta_style: float = 0.15) -> StyleParams:
    """Deterministic style for a person seed.

    The five identity-bearing parameters live on a quantized lattice with
    relative step ``delta_style``; lattice coordinates are a mixed-radix
    decoding of the seed (digit-permuted for variety), so any two seeds below
    the lattice size (~14k) differ in at least one parameter by a full step.
    """
    rng = np.random.default_rng(np.random.SeedSequence([0x57E11E7, int(seed)]))
    perms = [np.random.default_rng(77 + i).permutation(n) for i, n in enumerate(_LATTICE)]
    digits = []
    rem = (int(seed) * _LATTICE_STRIDE) % int(np.prod(_LATTICE))
    for n in _LATTICE:
        digits.append(rem % n)
        rem //= n
    dx_l, dy_l, sp_l, as_l, st_l = (int(p[d]) for p, d in zip(perms, digits))

    # posture steps stay small next to key-stroke displacements (~100 px) so
    # sentence content, not identity, dominates raw coordinates
    posture = np.array([-24.0 + 6.0 * dx_l, -16.8 + 4.2 * dy_l])
    peak_speed = 300.0 * (1.0 + delta_style) ** sp_l
    # narrow band: within-stroke shape stays close enough across persons that
    # a shared sentence remains the dominant raw-coordinate signal
    asymmetry = 0.40 + 0.05 * as_l
    stroke_time = 0.18 * (1.0 + delta_style) ** st_l

    # column coverage: base split of columns across fingers plus a perturbed
    # boundary; every column keeps an assigned finger
    boundary_shift = int(rng.integers(0, 2))
    assignment = tuple(min(4, max(0, (c + boundary_shift) // 2)) for c in range(NUM_COLUMNS))

    amplitude = rng.uniform(0.7, 1.3, size=JOINTS_PER_HAND)
    return StyleParams(
        finger_for_column=assignment,
        amplitude_scale=amplitude,
        peak_speed=peak_speed,
        asymmetry=asymmetry,
        stroke_time=stroke_time,
        posture_offset=posture,
        jitter_std=float(rng.uniform(0.3, 0.8)),
        score_degradation=float(rng.uniform(0.05, 0.10)),
    )


def _rest_skeleton(style: StyleParams) -> np.ndarray:
    """Resting (x, y) of all 21 joints: wrist below the keyboard, fingers fanned."""
    joints = np.zeros((JOINTS_PER_HAND, 2))
    wrist = np.array([_KEY_ORIGIN[0] + 4.5 * _KEY_PITCH_X, _KEY_ORIGIN[1] + 110.0])
    joints[0] = wrist
    home_row = 1
    for f in range(5):
        # fingertip hovers over the finger's home column
        cols = [c for c, fi in enumerate(style.finger_for_column) if fi == f]
        col = cols[len(cols) // 2] if cols else 2 * f
        tip = np.array(
            [
                _KEY_ORIGIN[0] + _KEY_PITCH_X * col + _ROW_STAGGER * home_row,
                _KEY_ORIGIN[1] + _KEY_PITCH_Y * home_row + 8.0,
            ]
        )
        for j in range(4):
            frac = (j + 1) / 4.0
            joints[1 + 4 * f + j] = wrist + frac * (tip - wrist)
    return joints + style.posture_offset


def _stroke_profile(n_frames: int, asymmetry: float) -> np.ndarray:
    """Raised-cosine press profile on [0, 1] hitting exactly 1 at the press frame."""
    press = max(1, min(n_frames - 2, int(round(asymmetry * (n_frames - 1)))))
    s = np.zeros(n_frames)
    up = np.arange(press + 1) / press
    s[: press + 1] = 0.5 * (1.0 - np.cos(np.pi * up))
    down = np.arange(n_frames - press) / (n_frames - 1 - press)
    s[press:] = 0.5 * (1.0 + np.cos(np.pi * down))
    s[press] = 1.0
    return s


def synth_sequence(
    style: StyleParams,
    s: Sentence,
    rng: np.random.Generator,
    fps: float = 30.0,
    mode: str = MODE_2D_SCORE,
) -> JointSample:
    """Render one typing clip for (style, sentence).

    The assigned fingertip travels rest -> key -> rest per keystroke along the
    style's velocity profile; chain joints follow at fixed fractions, the
    score channel degrades with instantaneous speed, and per-joint jitter is
    added last. 3D mode emits (x, y, z) with key-press depth as z and a second
    resting hand (42 joints total).
    """
    rest = _rest_skeleton(style)
    n_f = max(4, int(round(fps * style.stroke_time * 300.0 / style.peak_speed)))
    frames = []
    depths = []
    for key in s.keys:
        col = _column_of_key(key)
        finger = style.finger_for_column[col]
        tip_idx = 4 + 4 * finger
        target = key_position(key) + style.posture_offset
        disp = target - rest[tip_idx]
        prof = _stroke_profile(n_f, style.asymmetry)
        for p in prof:
            pose = rest.copy()
            # active finger chain follows the fingertip, tip exactly on target at peak
            for j in range(4):
                amp = 1.0 if j == 3 else _CHAIN_FOLLOW[j] * style.amplitude_scale[1 + 4 * finger + j]
                pose[1 + 4 * finger + j] += amp * p * disp
            # wrist and neighbor fingers drift sympathetically
            pose[0] += _WRIST_FOLLOW * p * disp
            for nf in (finger - 1, finger + 1):
                if 0 <= nf <= 4:
                    for j in range(4):
                        idx = 1 + 4 * nf + j
                        pose[idx] += _NEIGHBOR_FOLLOW * style.amplitude_scale[idx] * p * disp
            frames.append(pose)
            depths.append(p)
    xy = np.stack(frames)  # (T, 21, 2)
    t = xy.shape[0]

    # per-joint speed from noiseless kinematics (px per frame)
    speed = np.zeros((t, JOINTS_PER_HAND))
    if t > 1:
        speed[1:] = np.linalg.norm(np.diff(xy, axis=0), axis=2)

    if mode == MODE_3D:
        z = np.zeros((t, JOINTS_PER_HAND))
        # press depth on the active fingertip trace
        z[:, :] = 0.0
        depth_trace = -6.0 * np.asarray(depths)
        for fi, key in enumerate(s.keys):
            col = _column_of_key(key)
            finger = style.finger_for_column[col]
            tip_idx = 4 + 4 * finger
            sl = slice(fi * n_f, (fi + 1) * n_f)
            z[sl, tip_idx] = depth_trace[sl]
        right = np.concatenate([xy, z[:, :, None]], axis=2)
        left = right.copy()
        left[:, :, 0] = 2 * _KEY_ORIGIN[0] - 60.0 - left[:, :, 0]  # mirrored resting hand
        left += rng.normal(0.0, 0.2, size=left.shape)
        data = np.concatenate([left, right], axis=1)
        data[:, JOINTS_PER_HAND:, :2] += rng.normal(0.0, style.jitter_std, size=(t, JOINTS_PER_HAND, 2))
        sample_mode = MODE_3D
    else:
        score = np.clip(1.0 - style.score_degradation * speed, 0.05, 1.0)
        noisy_xy = xy + rng.normal(0.0, style.jitter_std, size=xy.shape)
        data = np.concatenate([noisy_xy, score[:, :, None]], axis=2)
        sample_mode = MODE_2D_SCORE

    return JointSample(
        data=data.astype(np.float32),
        person_id=0,
        sentence_id=s.id,
        repetition_id=0,
        mode=sample_mode,
    )


def make_sentence(sentence_id: int, corpus_seed: int, length_range=(6, 10)) -> Sentence:
    """Deterministic key sequence for a sentence id within one corpus."""
    rng = np.random.default_rng(np.random.SeedSequence([0x5E47, int(corpus_seed), int(sentence_id)]))
    n = int(rng.integers(length_range[0], length_range[1] + 1))
    keys = tuple(int(k) for k in rng.integers(0, NUM_KEYS, size=n))
    return Sentence(keys=keys, id=sentence_id)


def generate_corpus(
    n_persons: int,
    n_sentences: int,
    n_reps: int,
    seed: int,
    mode: str = MODE_2D_SCORE,
    out_dir: str = ".",
    fps: float = 30.0,
    delta_style: float = 0.15,
) -> DatasetManifest:
    """Write n_persons * n_sentences * n_reps samples plus a manifest.tsv.

    Every person types the same key order for a given sentence; repetitions
    differ only through the per-sample rng stream.
    """
    if min(n_persons, n_sentences, n_reps) < 1:
        raise ValueError("all corpus counts must be >= 1")
    os.makedirs(out_dir, exist_ok=True)
    sentences = [make_sentence(s, seed) for s in range(n_sentences)]
    manifest = DatasetManifest()
    for p in range(n_persons):
        style = make_person_style(p, delta_style=delta_style)
        for s in sentences:
            for r in range(n_reps):
                rng = np.random.default_rng(np.random.SeedSequence([int(seed), p, s.id, r]))
                sample = synth_sequence(style, s, rng, fps=fps, mode=mode)
                sample.person_id = p
                sample.repetition_id = r
                fname = f"p{p:03d}_s{s.id:03d}_r{r:03d}.skel"
                write_sample(os.path.join(out_dir, fname), sample)
                manifest.records.append(
                    ManifestRecord(
                        path=os.path.join(out_dir, fname),
                        person_id=p,
                        sentence_id=s.id,
                        repetition_id=r,
                    )
                )
    write_manifest(os.path.join(out_dir, "manifest.tsv"), manifest)
    return manifest
