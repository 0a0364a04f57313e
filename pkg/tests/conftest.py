import csv
import json

import numpy as np
import pytest

from polldist.mockserver import MockServer
from polldist.survey import load_dataset


def write_dataset(root, questions, respondents, responses, trait_columns=("region",)):
    """Write the three dataset files. ``questions`` are dicts in the JSONL
    schema; ``respondents`` are (id, weight, {trait: group}); ``responses``
    are (respondent_id, question_id, letter)."""
    root.mkdir(parents=True, exist_ok=True)
    with (root / "questions.jsonl").open("w", encoding="utf-8") as fh:
        for q in questions:
            fh.write(json.dumps(q) + "\n")
    with (root / "respondents.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "weight", *trait_columns])
        for rid, weight, groups in respondents:
            writer.writerow([rid, weight, *[groups.get(t, "") for t in trait_columns]])
    with (root / "responses.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["respondent_id", "question_id", "option_letter"])
        for row in responses:
            writer.writerow(row)
    return root


def options(n_sub, refusal=False):
    letters = "ABCDEFGHIJ"
    opts = [
        {"letter": letters[i], "text": f"Option {letters[i]}", "ordinal": i + 1,
         "is_refusal": False}
        for i in range(n_sub)
    ]
    if refusal:
        opts.append({"letter": letters[n_sub], "text": "Refused", "ordinal": None,
                     "is_refusal": True})
    return opts


def standard_fixture(root):
    questions = [
        {"id": "q1", "wave": "w1", "text": "How likely is outcome X?", "options": options(2)},
        {"id": "q2", "wave": "w1", "text": "How concerned are you about Y?",
         "options": options(3, refusal=True)},
        {"id": "q3", "wave": "w2", "text": "How often do you do Z?", "options": options(4)},
    ]
    respondents = [
        ("r1", 1.0, {"region": "South"}),
        ("r2", 1.0, {"region": "South"}),
        ("r3", 2.0, {"region": "South"}),
        ("r4", 1.0, {"region": "Northeast"}),
    ]
    responses = [
        ("r1", "q1", "A"), ("r2", "q1", "A"), ("r3", "q1", "B"), ("r4", "q1", "A"),
        ("r1", "q2", "A"), ("r2", "q2", "B"), ("r3", "q2", "C"), ("r4", "q2", "D"),
        ("r1", "q3", "A"), ("r2", "q3", "B"), ("r3", "q3", "D"), ("r4", "q3", "C"),
    ]
    return write_dataset(root, questions, respondents, responses)


@pytest.fixture
def fixture_dir(tmp_path):
    return standard_fixture(tmp_path / "data")


@pytest.fixture
def dataset(fixture_dir):
    return load_dataset(fixture_dir)


def synthetic_group_dataset(root, n_respondents, seed, n_questions=5, n_options=4,
                            answer_rate=1.0):
    """One-group dataset with i.i.d. responses from a fixed skewed distribution."""
    rng = np.random.default_rng(seed)
    base = np.arange(1, n_options + 1, dtype=float)
    base /= base.sum()
    questions = [
        {"id": f"q{i}", "wave": "w1", "text": f"Synthetic question {i}?",
         "options": options(n_options)}
        for i in range(n_questions)
    ]
    respondents = [
        (f"r{i}", float(rng.uniform(0.5, 1.5)), {"region": "South"})
        for i in range(n_respondents)
    ]
    responses = []
    letters = "ABCDEFGHIJ"
    for rid, _, _ in respondents:
        for q in questions:
            if rng.uniform() > answer_rate:
                continue
            choice = rng.choice(n_options, p=base)
            responses.append((rid, q["id"], letters[choice]))
    return write_dataset(root, questions, respondents, responses)


@pytest.fixture(scope="session")
def mock_server():
    with MockServer() as server:
        yield server
