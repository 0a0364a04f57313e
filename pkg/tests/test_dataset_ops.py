import json
from collections import Counter

import numpy as np
import pytest

from polldist.dataset_ops import (
    ExportMode,
    batch_loss,
    detect_overlap,
    export_training,
    load_training_file,
    reconstruct_targets,
    split,
)
from polldist.errors import DatasetError, EvaluationError, NoDataError
from polldist.metrics import MetricConfig, kl_forward, wasserstein
from polldist.prompting import PromptStyle
from polldist.survey import Distribution, load_dataset, weighted_distribution

from conftest import options, write_dataset
from test_metrics import make_question

CFG = MetricConfig()


def test_export_mode_validation():
    with pytest.raises(ValueError):
        ExportMode.augment(0)
    with pytest.raises(ValueError):
        ExportMode("explicit", 5)
    assert ExportMode.augment(50).tag == "augmentx50"


def grid_dataset(tmp_path, n_groups=3, n_questions=4):
    questions = [
        {"id": f"q{i}", "wave": f"w{i % 2}", "text": f"Question {i}?", "options": options(3)}
        for i in range(n_questions)
    ]
    respondents = []
    responses = []
    rng = np.random.default_rng(0)
    rid = 0
    for gi in range(n_groups):
        for _ in range(5):
            name = f"r{rid}"
            rid += 1
            respondents.append((name, float(rng.uniform(0.5, 2.0)), {"region": f"G{gi}"}))
            for q in questions:
                responses.append((name, q["id"], "ABC"[rng.integers(0, 3)]))
    return load_dataset(write_dataset(tmp_path / "grid", questions, respondents, responses))


def test_explicit_export_cardinality(tmp_path):
    ds = grid_dataset(tmp_path)
    out = tmp_path / "train.jsonl"
    manifest = export_training(ds, ds.subpopulations, PromptStyle.QA,
                               ExportMode.explicit(), out)
    assert manifest["n_examples"] == 3 * 4
    assert len(load_training_file(out)) == 12
    assert manifest["hyperparameters"] == {"lora_rank": 8, "lora_alpha": 32,
                                           "lora_dropout": 0.05}


def test_augment_export_multiplies_lines(tmp_path):
    ds = grid_dataset(tmp_path)
    out = tmp_path / "train.jsonl"
    manifest = export_training(ds, ds.subpopulations, PromptStyle.QA,
                               ExportMode.augment(50), out)
    assert manifest["n_examples"] == 3 * 4 * 50


def test_augment_letters_follow_quantized_counts(tmp_path):
    root = write_dataset(
        tmp_path / "q10",
        [{"id": "q1", "wave": "w", "text": "t?", "options": options(3)}],
        [(f"r{i}", 1.0, {"region": "South"}) for i in range(10)],
        [(f"r{i}", "q1", "AAAAABBBCC"[i]) for i in range(10)],
    )
    ds = load_dataset(root)
    out = tmp_path / "train.jsonl"
    export_training(ds, ds.subpopulations, PromptStyle.QA, ExportMode.augment(10), out)
    letters = Counter(row["target"] for row in load_training_file(out))
    assert letters == {"A": 5, "B": 3, "C": 2}


def test_one_hot_export(tmp_path):
    ds = grid_dataset(tmp_path, n_groups=1, n_questions=2)
    out = tmp_path / "train.jsonl"
    export_training(ds, ds.subpopulations, PromptStyle.BIO, ExportMode.one_hot(), out)
    rows = load_training_file(out)
    assert all(isinstance(row["target"], str) and len(row["target"]) == 1 for row in rows)


def test_skipped_pairs_listed_in_manifest(tmp_path):
    root = write_dataset(
        tmp_path / "gap",
        [{"id": "q1", "wave": "w", "text": "t?", "options": options(2)},
         {"id": "q2", "wave": "w", "text": "u?", "options": options(2)}],
        [("r1", 1.0, {"region": "South"})],
        [("r1", "q1", "A")],
    )
    ds = load_dataset(root)
    manifest = export_training(ds, ds.subpopulations, PromptStyle.QA,
                               ExportMode.explicit(), tmp_path / "t.jsonl")
    assert manifest["skipped"] == [{"group": "region:South", "question_id": "q2"}]


def test_explicit_round_trip_zero_loss(tmp_path):
    ds = grid_dataset(tmp_path)
    out = tmp_path / "train.jsonl"
    export_training(ds, ds.subpopulations, PromptStyle.QA, ExportMode.explicit(), out)
    rebuilt = reconstruct_targets(load_training_file(out), ds)
    questions, targets = [], []
    for (group_label, qid), dist in sorted(rebuilt.items()):
        questions.append(ds.questions[qid])
        targets.append(dist)
    assert batch_loss(targets, targets, "kl", questions, CFG) == 0.0
    assert batch_loss(targets, targets, "wd", questions, CFG) == 0.0


def test_augment_reconstruction_within_quantization_bound(tmp_path):
    ds = grid_dataset(tmp_path)
    n = 100
    out = tmp_path / "train.jsonl"
    export_training(ds, ds.subpopulations, PromptStyle.QA, ExportMode.augment(n), out)
    rebuilt = reconstruct_targets(load_training_file(out), ds)
    for (group_label, qid), dist in rebuilt.items():
        group = ds.subpopulation(*group_label.split(":"))
        human = weighted_distribution(ds, group, ds.questions[qid])
        assert max(abs(a - b) for a, b in zip(dist.probs, human.probs)) <= 1.0 / n


class TestBatchLoss:
    def test_single_pair_equals_metric(self):
        q = make_question(3)
        t = Distribution(q.id, (0.5, 0.3, 0.2))
        p = Distribution(q.id, (0.2, 0.3, 0.5))
        assert batch_loss([t], [p], "wd", [q], CFG) == wasserstein(t, p, q, CFG)
        assert batch_loss([t], [p], "kl", [q], CFG) == kl_forward(t, p, CFG)

    def test_batch_of_eight_is_mean(self):
        rng = np.random.default_rng(1)
        qs, ts, ps = [], [], []
        for _ in range(8):
            q = make_question(4)
            qs.append(q)
            ts.append(Distribution(q.id, tuple(rng.dirichlet(np.ones(4)))))
            ps.append(Distribution(q.id, tuple(rng.dirichlet(np.ones(4)))))
        expected = np.mean([wasserstein(t, p, q, CFG) for t, p, q in zip(ts, ps, qs)])
        assert batch_loss(ts, ps, "wd", qs, CFG) == pytest.approx(expected, abs=1e-15)

    def test_length_mismatch(self):
        q = make_question(2)
        d = Distribution(q.id, (0.5, 0.5))
        with pytest.raises(EvaluationError):
            batch_loss([d, d], [d], "kl", [q, q], CFG)


class TestOverlap:
    def qs(self, ids):
        out = []
        for qid in ids:
            q = make_question(2)
            object.__setattr__(q, "id", qid)
            out.append(q)
        return out

    def test_identical_texts_reported(self):
        a = self.qs(["a1"])
        b = self.qs(["b1"])
        emb = {"a1": [1.0, 0.0], "b1": [2.0, 0.0]}
        pairs = detect_overlap(a, b, emb, 0.87)
        assert pairs == [("a1", "b1", pytest.approx(1.0))]

    def test_orthogonal_embeddings_empty(self):
        pairs = detect_overlap(self.qs(["a1"]), self.qs(["b1"]),
                               {"a1": [1.0, 0.0], "b1": [0.0, 1.0]}, 0.87)
        assert pairs == []

    def test_planted_near_duplicate(self):
        a = self.qs(["a1", "a2"])
        b = self.qs(["b1", "b2"])
        emb = {
            "a1": [1.0, 0.0, 0.0],
            "a2": [0.0, 1.0, 0.0],
            "b1": [0.9, np.sqrt(1 - 0.81), 0.0],  # cosine 0.9 with a1
            "b2": [0.0, 0.0, 1.0],
        }
        pairs = detect_overlap(a, b, emb, 0.87)
        assert len(pairs) == 1
        assert pairs[0][:2] == ("a1", "b1")
        assert pairs[0][2] == pytest.approx(0.9)

    def test_symmetric_in_arguments(self):
        a = self.qs(["a1", "a2"])
        b = self.qs(["b1"])
        emb = {"a1": [1.0, 0.1], "a2": [0.3, 1.0], "b1": [1.0, 0.0]}
        forward = {(x, y, round(s, 12)) for x, y, s in detect_overlap(a, b, emb, 0.5)}
        backward = {(y, x, round(s, 12)) for x, y, s in detect_overlap(b, a, emb, 0.5)}
        assert forward == backward

    def test_missing_embedding_names_id(self):
        with pytest.raises(DatasetError, match="a1"):
            detect_overlap(self.qs(["a1"]), self.qs(["b1"]), {"b1": [1.0]}, 0.87)


class TestSplit:
    def test_full_fraction_takes_everything(self, dataset):
        train, heldout = split(dataset, 1.0, seed=0)
        assert sorted(train) == sorted(dataset.questions)
        assert heldout == []

    def test_quarter_of_hundred(self, tmp_path):
        questions = [
            {"id": f"q{i:03d}", "wave": f"w{i % 4}", "text": "t?", "options": options(2)}
            for i in range(100)
        ]
        ds = load_dataset(write_dataset(tmp_path / "big", questions,
                                        [("r1", 1.0, {"region": "South"})], []))
        train, heldout = split(ds, 0.25, seed=5)
        assert len(train) == 25
        assert len(heldout) == 75
        assert set(train) | set(heldout) == set(ds.questions)
        # wave-stratified: a quarter from each 25-question wave
        for w in range(4):
            assert sum(1 for qid in train if int(qid[1:]) % 4 == w) in (6, 7)

    def test_deterministic(self, dataset):
        assert split(dataset, 0.5, seed=3) == split(dataset, 0.5, seed=3)

    def test_fraction_out_of_range(self, dataset):
        with pytest.raises(ValueError):
            split(dataset, 0.0, seed=0)
        with pytest.raises(ValueError):
            split(dataset, 1.2, seed=0)
