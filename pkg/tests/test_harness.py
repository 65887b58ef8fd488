"""Split protocols, repeated-trial evaluation, ablation report and the CLI."""

import json

import numpy as np
import pytest

from stylenet import cli
from stylenet.harness import (
    ABLATION_VARIANTS,
    PROTOCOL_SEEN,
    PROTOCOL_UNSEEN,
    EvalReport,
    ExperimentSplit,
    SplitError,
    ablation_csv,
    AblationRow,
    evaluate,
    load_split,
    save_split,
    split_seen,
    split_unseen,
    variant_config,
)
from stylenet.model import TwoStreamModel, tiny_config
from stylenet.skeleton_data import (
    MODE_2D_SCORE,
    DatasetManifest,
    JointSample,
    ManifestRecord,
)


def make_manifest(n_persons, n_sentences, n_reps):
    m = DatasetManifest()
    for p in range(n_persons):
        for s in range(n_sentences):
            for r in range(n_reps):
                m.records.append(ManifestRecord(f"p{p}_s{s}_r{r}.skel", p, s, r))
    return m


class TestSplitUnseen:
    def test_sentence_count_arithmetic(self):
        # 60 persons x 10 sentences x 3 reps, 4/2/4 sentences
        split = split_unseen(make_manifest(60, 10, 3), (4, 2, 4), seed=0)
        assert len(split.train_ids) == 60 * 4 * 3 == 720
        assert len(split.val_ids) == 60 * 2 * 3 == 360
        assert len(split.test_ids) == 720

    def test_sentences_do_not_leak(self):
        manifest = make_manifest(5, 6, 2)
        split = split_unseen(manifest, (2, 2, 2), seed=3)
        sent = lambda ids: {manifest.records[i].sentence_id for i in ids}
        assert not sent(split.train_ids) & sent(split.test_ids)
        assert not sent(split.train_ids) & sent(split.val_ids)
        assert not sent(split.val_ids) & sent(split.test_ids)

    def test_counts_must_sum(self):
        with pytest.raises(SplitError, match="do not sum"):
            split_unseen(make_manifest(3, 6, 1), (2, 2, 3), seed=0)

    def test_each_set_nonempty(self):
        with pytest.raises(SplitError, match="at least one"):
            split_unseen(make_manifest(3, 10, 1), (10, 0, 0), seed=0)

    def test_deterministic_per_seed(self):
        m = make_manifest(4, 6, 2)
        a = split_unseen(m, (2, 2, 2), seed=11)
        b = split_unseen(m, (2, 2, 2), seed=11)
        c = split_unseen(m, (2, 2, 2), seed=12)
        assert a == b
        assert (a.train_ids, a.val_ids, a.test_ids) != (c.train_ids, c.val_ids, c.test_ids)

    def test_all_ids_cover_manifest(self):
        m = make_manifest(4, 6, 2)
        split = split_unseen(m, (2, 2, 2), seed=1)
        assert sorted(split.all_ids()) == list(range(len(m.records)))


class TestSplitSeen:
    def test_repetition_arithmetic(self):
        # 80 persons x 2 sentences x 10 reps, 5/1/4 reps
        split = split_seen(make_manifest(80, 2, 10), (5, 1, 4), seed=0)
        assert len(split.train_ids) == 80 * 2 * 5 == 800
        assert len(split.val_ids) == 160
        assert len(split.test_ids) == 640

    def test_every_person_sentence_pair_in_train(self):
        m = make_manifest(4, 3, 4)
        split = split_seen(m, (2, 1, 1), seed=5)
        pairs = {(m.records[i].person_id, m.records[i].sentence_id) for i in split.train_ids}
        assert pairs == {(p, s) for p in range(4) for s in range(3)}

    def test_rep_counts_must_sum(self):
        with pytest.raises(SplitError, match="do not sum"):
            split_seen(make_manifest(2, 2, 5), (3, 1, 2), seed=0)


class TestSplitObject:
    def test_overlap_rejected(self):
        with pytest.raises(SplitError, match="overlap"):
            ExperimentSplit(PROTOCOL_UNSEEN, (0, 1), (1, 2), (3,), (1, 1, 1), 0)

    def test_save_load_round_trip(self, tmp_path):
        split = split_unseen(make_manifest(3, 6, 2), (2, 2, 2), seed=9)
        path = str(tmp_path / "split.json")
        save_split(path, split)
        loaded = load_split(path)
        assert loaded == split
        with open(path, encoding="utf-8") as fh:
            assert json.load(fh)["protocol"] == PROTOCOL_UNSEEN


def constant_person_dataset(n_persons=4, n_sentences=3, n_reps=2, frames=12):
    """Every joint of person p sits at coordinate p: a trivially separable set."""
    dataset, manifest = [], make_manifest(n_persons, n_sentences, n_reps)
    for rec in manifest.records:
        data = np.full((frames, 21, 3), float(rec.person_id), dtype=np.float32)
        dataset.append(
            JointSample(
                data=data,
                person_id=rec.person_id,
                sentence_id=rec.sentence_id,
                repetition_id=rec.repetition_id,
                mode=MODE_2D_SCORE,
            )
        )
    return dataset, manifest


class StubModel:
    """Duck-typed stand-in for evaluate(): classifies by the mean coordinate."""

    def __init__(self, num_classes, kind="oracle", seed=0):
        self.cfg = tiny_config(num_classes=num_classes, frames=8)
        self.dtype = np.float32
        self.kind = kind
        self.rng = np.random.default_rng(seed)

    def predict_logits(self, xj, xb):
        n = xj.shape[0]
        if self.kind == "random":
            return self.rng.standard_normal((n, self.cfg.num_classes))
        logits = np.zeros((n, self.cfg.num_classes))
        cls = np.clip(np.round(xj.mean(axis=(1, 2, 3))), 0, self.cfg.num_classes - 1)
        logits[np.arange(n), cls.astype(int)] = 1.0
        return logits


class TestEvaluate:
    def test_oracle_model_scores_one(self):
        dataset, manifest = constant_person_dataset()
        split = split_unseen(manifest, (1, 1, 1), seed=0)
        report = evaluate(StubModel(4), dataset, split, trials=3)
        assert report.mean_acc == 1.0 and report.std_acc == 0.0
        assert report.trial_accs == [1.0, 1.0, 1.0]

    def test_inverted_oracle_scores_zero(self):
        dataset, manifest = constant_person_dataset()
        model = StubModel(4)
        real = model.predict_logits
        model.predict_logits = lambda xj, xb: -real(xj, xb)
        split = split_unseen(manifest, (1, 1, 1), seed=0)
        assert evaluate(model, dataset, split, trials=2).mean_acc < 1.0 / 4

    def test_random_model_near_chance(self):
        dataset, manifest = constant_person_dataset(n_persons=4, n_reps=4)
        split = split_unseen(manifest, (1, 1, 1), seed=0)
        report = evaluate(StubModel(4, kind="random"), dataset, split, trials=60)
        # 60 trials x 16 test samples: binomial(960, 1/4), 5 sigma ~ 0.07
        assert abs(report.mean_acc - 0.25) < 0.07

    def test_deterministic_per_seed(self):
        dataset, manifest = constant_person_dataset()
        split = split_unseen(manifest, (1, 1, 1), seed=0)
        r1 = evaluate(StubModel(4, kind="random", seed=1), dataset, split, trials=4, seed=7)
        r2 = evaluate(StubModel(4, kind="random", seed=1), dataset, split, trials=4, seed=7)
        assert r1.trial_accs == r2.trial_accs

    def test_noise_protocol_runs(self):
        dataset, manifest = constant_person_dataset()
        split = split_unseen(manifest, (1, 1, 1), seed=0)
        report = evaluate(StubModel(4), dataset, split, trials=2, noise=True, seed=3)
        assert 0.0 <= report.mean_acc <= 1.0

    def test_empty_test_set_rejected(self):
        dataset, _ = constant_person_dataset()
        split = ExperimentSplit(PROTOCOL_UNSEEN, (0, 1), (2,), (), (1, 1, 1), 0)
        with pytest.raises(SplitError, match="empty test set"):
            evaluate(StubModel(4), dataset, split)

    def test_class_overflow_rejected(self):
        dataset, manifest = constant_person_dataset(n_persons=6)
        split = split_unseen(manifest, (1, 1, 1), seed=0)
        with pytest.raises(ValueError, match="classes"):
            evaluate(StubModel(4), dataset, split, trials=1)


class TestVariants:
    def test_parameter_count_ordering(self):
        base = tiny_config()
        counts = {
            v: TwoStreamModel(variant_config(base, v), seed=0).num_parameters()
            for v in ABLATION_VARIANTS
        }
        assert counts["baseline"] < counts["+downsample"]
        assert counts["+downsample"] < counts["+downsample+TNL"]
        assert counts["+downsample"] < counts["+downsample+SNL"]
        assert counts["full"] == max(counts.values())

    def test_full_variant_is_base(self):
        base = tiny_config()
        assert variant_config(base, "full") == base

    def test_unknown_variant(self):
        with pytest.raises(ValueError, match="unknown variant"):
            variant_config(tiny_config(), "extra")

    def test_ablation_csv(self):
        rows = [AblationRow("baseline", [0.5, 0.7], 0.6, 0.1)]
        text = ablation_csv(rows)
        lines = text.strip().split("\n")
        assert lines[0].startswith("variant,")
        assert lines[1].startswith("baseline,")


class TestCli:
    def test_generate_and_split(self, tmp_path, capsys):
        out = tmp_path / "corpus"
        rc = cli.main(
            ["generate", "--persons", "2", "--sentences", "3", "--reps", "1", "--seed", "4", "--out", str(out)]
        )
        assert rc == 0
        assert capsys.readouterr().out.strip() == "samples,6"
        split_path = tmp_path / "split.json"
        rc = cli.main(
            [
                "split", "--protocol", "unseen", "--spec", "1,1,1", "--seed", "0",
                "--manifest", str(out / "manifest.tsv"), "--out", str(split_path),
            ]
        )
        assert rc == 0
        printed = dict(l.split(",") for l in capsys.readouterr().out.strip().split("\n"))
        assert printed == {"protocol": PROTOCOL_UNSEEN, "train": "2", "val": "2", "test": "2"}
        assert load_split(str(split_path)).protocol == PROTOCOL_UNSEEN

    def test_bad_split_spec_reports_error(self, tmp_path, capsys):
        out = tmp_path / "corpus"
        cli.main(["generate", "--persons", "1", "--sentences", "2", "--reps", "1", "--out", str(out)])
        capsys.readouterr()
        rc = cli.main(
            [
                "split", "--protocol", "unseen", "--spec", "1,1,1",
                "--manifest", str(out / "manifest.tsv"), "--out", str(tmp_path / "s.json"),
            ]
        )
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_gradcheck_command(self, capsys):
        assert cli.main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert out.startswith("check,max_rel_err")
        assert "conv2d" in out and "matmul" in out and "softmax" in out
