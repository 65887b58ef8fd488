"""Command-line entry points: generate / split / train / eval / gradcheck / ablate."""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .hand_graph import build_hand_graph
from .model import ModelConfig, TwoStreamModel, tiny_config
from .skeleton_data import MODE_2D_SCORE, MODE_3D, load_dataset, read_manifest
from .synth_typing import generate_corpus
from .harness import (
    ABLATION_VARIANTS,
    PROTOCOL_SEEN,
    evaluate,
    load_split,
    run_ablation,
    ablation_csv,
    save_split,
    split_seen,
    split_unseen,
)
from .trainer import (
    TrainConfig,
    TrainResult,
    history_csv,
    parse_config_file,
    train,
)


def _model_config_for(args, manifest) -> ModelConfig:
    n_classes = len(manifest.person_ids())
    rec = manifest.records[0]
    from .skeleton_data import read_sample

    probe = read_sample(rec.path)
    v = probe.num_joints
    if getattr(args, "tiny", False):
        return tiny_config(num_classes=n_classes, num_vertices=v, frames=args.frames)
    return ModelConfig(num_classes=n_classes, num_vertices=v, frames=args.frames)


def cmd_generate(args):
    mode = MODE_3D if args.mode == "3d" else MODE_2D_SCORE
    manifest = generate_corpus(
        args.persons, args.sentences, args.reps, args.seed, mode=mode, out_dir=args.out
    )
    print(f"samples,{len(manifest)}")
    return 0


def cmd_split(args):
    manifest = read_manifest(args.manifest)
    spec = tuple(int(x) for x in args.spec.split(","))
    if len(spec) != 3:
        raise SystemExit("--spec must be three comma-separated counts")
    if args.protocol == "unseen":
        split = split_unseen(manifest, spec, args.seed)
    else:
        split = split_seen(manifest, spec, args.seed)
    save_split(args.out, split)
    print(f"protocol,{split.protocol}")
    print(f"train,{len(split.train_ids)}")
    print(f"val,{len(split.val_ids)}")
    print(f"test,{len(split.test_ids)}")
    return 0


def cmd_train(args):
    manifest = read_manifest(args.manifest)
    dataset = load_dataset(manifest)
    split = load_split(args.split)
    tcfg = parse_config_file(args.config) if args.config else TrainConfig(seed=args.seed, epochs=args.epochs)
    mcfg = _model_config_for(args, manifest)
    graph = build_hand_graph("one" if mcfg.num_vertices == 21 else "two")
    model = TwoStreamModel(mcfg, seed=tcfg.seed)
    result, _ = train(model, dataset, split, tcfg, graph, verbose=args.verbose)
    if result.best_arrays is not None:
        from .harness import _load_arrays_into

        _load_arrays_into(model, result.best_arrays)
    model.save(args.out)
    sys.stdout.write(history_csv(result.history))
    return 0


def cmd_eval(args):
    manifest = read_manifest(args.manifest)
    dataset = load_dataset(manifest)
    split = load_split(args.split)
    mcfg = _model_config_for(args, manifest)
    model = TwoStreamModel(mcfg)
    model.load(args.ckpt)
    report = evaluate(
        model, dataset, split, trials=args.trials, noise=args.noise, seed=args.seed
    )
    print("trial,accuracy")
    for i, a in enumerate(report.trial_accs):
        print(f"{i},{a:.4f}")
    print(f"mean,{report.mean_acc:.4f}")
    print(f"std,{report.std_acc:.4f}")
    return 0


def cmd_gradcheck(args):
    rng = np.random.default_rng(0)
    worst = {}
    x = Tensor(rng.standard_normal((2, 3, 5, 4)), dtype=np.float64)
    w = Tensor(rng.standard_normal((4, 3, 3, 1)) * 0.5, dtype=np.float64)
    worst["conv2d"] = ad.grad_check(lambda t: ad.conv2d(t, w, pad_t=1).sum(), x)
    a = Tensor(rng.standard_normal((3, 4)), dtype=np.float64)
    b = Tensor(rng.standard_normal((4, 2)), dtype=np.float64)
    worst["matmul"] = ad.grad_check(lambda t: ad.matmul(t, b).sum(), a)
    s = Tensor(rng.standard_normal((5, 7)), dtype=np.float64)
    worst["softmax"] = ad.grad_check(lambda t: ad.square(ad.softmax_axis(t, -1)).sum(), s)
    if args.full:
        # batch-statistics mode keeps the untrained loss O(1); the eval path
        # has unit running stats and amplifies activations past finite-
        # difference precision
        cfg = dataclasses.replace(tiny_config(num_classes=3, frames=8), dropout=0.0)
        model = TwoStreamModel(cfg, seed=0, dtype=np.float64)
        for stream in (model.joints, model.bones):  # zero fc2 would silence half the graph
            stream.down.w2.data = rng.standard_normal(stream.down.w2.shape)
        xj = Tensor(rng.standard_normal((2, 3, 8, 21)), dtype=np.float64)
        xb = Tensor(rng.standard_normal((2, 3, 8, 21)), dtype=np.float64)
        labels = np.array([0, 2])

        def loss():
            return ad.cross_entropy(model.forward(xj, xb, training=True), labels)

        worst["full_network"] = ad.grad_check_multi(
            loss, model.parameters(), max_coords=2, rng=np.random.default_rng(1)
        )
    print("check,max_rel_err")
    ok = True
    for k, v in worst.items():
        tol = 1e-4 if k == "full_network" else 1e-6
        ok = ok and v < tol
        print(f"{k},{v:.3g}")
    return 0 if ok else 1


def cmd_ablate(args):
    manifest = read_manifest(args.manifest)
    dataset = load_dataset(manifest)
    variants = args.variants.split(",")
    for v in variants:
        if v not in ABLATION_VARIANTS:
            raise SystemExit(f"unknown variant {v!r}; choose from {ABLATION_VARIANTS}")
    seeds = [int(s) for s in args.seeds.split(",")]
    spec = tuple(int(x) for x in args.spec.split(","))
    mcfg = _model_config_for(args, manifest)
    tcfg = parse_config_file(args.config) if args.config else TrainConfig(epochs=args.epochs)
    rows = run_ablation(dataset, manifest, spec, variants, seeds, mcfg, tcfg, verbose=args.verbose)
    sys.stdout.write(ablation_csv(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stylenet", description="Typing-style person identification toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic typing corpus")
    g.add_argument("--persons", type=int, required=True)
    g.add_argument("--sentences", type=int, required=True)
    g.add_argument("--reps", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--mode", choices=["2d", "3d"], default="2d")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("split", help="build a train/val/test split file")
    s.add_argument("--protocol", choices=["unseen", "seen"], required=True)
    s.add_argument("--spec", required=True, help="a,b,c counts")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_split)

    t = sub.add_parser("train", help="train the two-stream model")
    t.add_argument("--config", default=None, help="key = value training config file")
    t.add_argument("--manifest", required=True)
    t.add_argument("--split", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--frames", type=int, default=32)
    t.add_argument("--tiny", action="store_true", help="use the small test architecture")
    t.add_argument("--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", required=True)
    e.add_argument("--trials", type=int, default=30)
    e.add_argument("--noise", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--frames", type=int, default=32)
    e.add_argument("--tiny", action="store_true")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--full", action="store_true", help="include the whole-network check")
    c.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="train and score ablation variants")
    a.add_argument("--variants", required=True, help="comma list from: " + ",".join(ABLATION_VARIANTS))
    a.add_argument("--seeds", required=True, help="comma list of integer seeds")
    a.add_argument("--spec", required=True, help="a,b,c sentence counts (unseen protocol)")
    a.add_argument("--manifest", required=True)
    a.add_argument("--config", default=None)
    a.add_argument("--epochs", type=int, default=100)
    a.add_argument("--frames", type=int, default=32)
    a.add_argument("--tiny", action="store_true")
    a.add_argument("--verbose", action="store_true")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
