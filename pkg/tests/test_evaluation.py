import math

import numpy as np
import pytest

from polldist.bounds import upper_bound
from polldist.errors import DegenerateGapError, EvaluationError
from polldist.evaluation import (
    EvalRecord,
    aggregate,
    evaluate,
    fit_scaling,
    human_distribution_map,
    intergroup_matrix,
    predict,
    relative_improvement,
)
from polldist.metrics import MetricConfig, uniform
from polldist.survey import Distribution, weighted_distribution

from test_metrics import make_question

CFG = MetricConfig()


def groups_and_questions(dataset):
    groups = sorted(dataset.subpopulations, key=lambda g: g.label)
    questions = sorted(dataset.questions.values(), key=lambda q: q.id)
    return groups, questions


def test_human_predictor_scores_zero(dataset):
    groups, questions = groups_and_questions(dataset)
    run = evaluate(dataset, groups, questions,
                   lambda g, q: weighted_distribution(dataset, g, q), "human", CFG)
    assert all(r.wd == 0.0 and r.kl == 0.0 for r in run.records)


def test_uniform_predictor_matches_upper_bound(dataset):
    groups, questions = groups_and_questions(dataset)
    run = evaluate(dataset, groups, questions, lambda g, q: uniform(q), "uniform", CFG)
    for g in groups:
        mine = [r.wd for r in run.records if r.group == g.label]
        assert np.mean(mine) == pytest.approx(
            upper_bound(dataset, g, questions, CFG), abs=1e-12)


def test_record_cardinality(dataset):
    groups, questions = groups_and_questions(dataset)
    run = evaluate(dataset, groups, questions, lambda g, q: uniform(q), "u", CFG)
    # Northeast's q2 target is pure refusal mass, so that pair is skipped
    assert len(run.records) == len(groups) * len(questions) - 1
    assert run.skipped == [{"group": "region:Northeast", "question_id": "q2",
                            "reason": run.skipped[0]["reason"]}]


def test_predictor_failure_skipped_not_fatal(dataset):
    groups, questions = groups_and_questions(dataset)

    def flaky(g, q):
        if q.id == "q2":
            raise RuntimeError("boom")
        return uniform(q)

    run = evaluate(dataset, groups, questions, flaky, "flaky", CFG)
    assert len(run.skipped) == len(groups)
    assert all(s["question_id"] == "q2" for s in run.skipped)
    assert len(run.records) == len(groups) * (len(questions) - 1)


def test_all_failures_abort(dataset):
    groups, questions = groups_and_questions(dataset)

    def broken(g, q):
        raise RuntimeError("dead")

    with pytest.raises(EvaluationError):
        evaluate(dataset, groups, questions, broken, "dead", CFG)


def test_worker_count_does_not_change_records(dataset):
    groups, questions = groups_and_questions(dataset)
    serial = evaluate(dataset, groups, questions, lambda g, q: uniform(q), "u", CFG,
                      workers=1)
    threaded = evaluate(dataset, groups, questions, lambda g, q: uniform(q), "u", CFG,
                        workers=8)
    assert serial.records == threaded.records


def rec(group, qid, wave, wd, kl=0.0):
    return EvalRecord("m", group, qid, wave, wd, kl)


class TestAggregate:
    def test_group_mean(self):
        records = [rec("g1", "q1", "w1", 0.1), rec("g1", "q2", "w1", 0.2)]
        assert aggregate(records, "group")["g1"]["wd"] == pytest.approx(0.15)

    def test_overall_is_flat_mean_not_mean_of_group_means(self):
        records = [rec("g1", "q1", "w", 0.1),
                   rec("g2", "q1", "w", 0.4), rec("g2", "q2", "w", 0.4)]
        assert aggregate(records, "overall")["overall"]["wd"] == pytest.approx(0.3)

    def test_per_wave_hand_computed(self):
        records = [rec("g", "q1", "w1", 0.1), rec("g", "q2", "w1", 0.3),
                   rec("g", "q3", "w2", 0.5)]
        out = aggregate(records, "wave")
        assert out["w1"]["wd"] == pytest.approx(0.2)
        assert out["w2"]["wd"] == pytest.approx(0.5)
        assert out["w1"]["n"] == 2

    def test_overall_between_bucket_extremes(self):
        records = [rec("g1", "q1", "w", 0.1), rec("g2", "q1", "w", 0.7)]
        buckets = aggregate(records, "group")
        overall = aggregate(records, "overall")["overall"]["wd"]
        values = [b["wd"] for b in buckets.values()]
        assert min(values) <= overall <= max(values)

    def test_empty_records_rejected(self):
        with pytest.raises(EvaluationError):
            aggregate([], "overall")


class TestRelativeImprovement:
    def test_reference_values_first(self):
        assert relative_improvement(0.023, 0.185, 0.096) == pytest.approx(0.549, abs=5e-4)

    def test_reference_values_second(self):
        assert relative_improvement(0.021, 0.169, 0.103) == pytest.approx(0.446, abs=5e-4)

    def test_no_improvement_is_zero(self):
        assert relative_improvement(0.02, 0.1, 0.1) == 0.0

    def test_degenerate_gap(self):
        with pytest.raises(DegenerateGapError):
            relative_improvement(0.1, 0.1, 0.05)


def gradient_fixture(n_groups=4, n_questions=2, n_options=5):
    """Groups concentrated at successive ordinal positions."""
    questions = []
    targets = {}
    for qi in range(n_questions):
        q = make_question(n_options)
        object.__setattr__(q, "id", f"g{qi}")
        questions.append(q)
    for gi in range(n_groups):
        dists = {}
        for q in questions:
            probs = np.exp(-2.0 * np.abs(np.arange(n_options) - gi))
            probs /= probs.sum()
            dists[q.id] = Distribution(q.id, tuple(probs))
        targets[f"group{gi}"] = dists
    return questions, targets


class TestIntergroupMatrix:
    def test_zero_diagonal_and_symmetry(self):
        questions, targets = gradient_fixture()
        matrix = intergroup_matrix(targets, targets, questions, CFG)
        arr = matrix.as_array()
        assert np.allclose(np.diag(arr), 0.0, atol=1e-9)
        assert np.allclose(arr, arr.T, atol=1e-9)

    def test_monotone_along_gradient(self):
        questions, targets = gradient_fixture()
        arr = intergroup_matrix(targets, targets, questions, CFG).as_array()
        n = arr.shape[0]
        for t in range(n):
            for s in range(n - 1):
                if s >= t:
                    assert arr[t, s + 1] > arr[t, s] - 1e-12
                if s + 1 <= t:
                    assert arr[t, s] > arr[t, s + 1] - 1e-12

    def test_three_group_hand_computed(self):
        q = make_question(3)
        object.__setattr__(q, "id", "h")
        from polldist.metrics import wasserstein

        d = {
            "a": {"h": Distribution("h", (1.0, 0.0, 0.0))},
            "b": {"h": Distribution("h", (0.0, 1.0, 0.0))},
            "c": {"h": Distribution("h", (0.0, 0.0, 1.0))},
        }
        arr = intergroup_matrix(d, d, [q], CFG).as_array()
        assert arr[0, 1] == pytest.approx(
            wasserstein(d["a"]["h"], d["b"]["h"], q, CFG))
        assert arr[0, 2] == pytest.approx(1.0)  # extremes, normalized

    def test_empty_overlap_rejected(self):
        q = make_question(2)
        with pytest.raises(EvaluationError):
            intergroup_matrix({"a": {}}, {"a": {}}, [q], CFG)

    def test_human_map_from_dataset(self, dataset):
        groups, questions = groups_and_questions(dataset)
        dists = human_distribution_map(dataset, groups, questions)
        assert set(dists) == {g.label for g in groups}
        assert set(dists["region:South"]) == {"q1", "q2", "q3"}


class TestScaling:
    def test_two_point_slope(self):
        fit = fit_scaling([(1.0, 1.0), (0.1, 2.0)])
        assert fit.slope == pytest.approx(-math.log10(2), abs=1e-9)

    def test_exact_power_law_zero_residuals(self):
        fractions = [1.0, 0.5, 0.25]
        wds = [0.1 * f ** -0.3 for f in fractions]
        fit = fit_scaling(list(zip(fractions, wds)))
        for f, w in zip(fractions, wds):
            assert abs(math.log10(predict(fit, f)) - math.log10(w)) <= 1e-12

    def test_predict_at_observed_fraction(self):
        fit = fit_scaling([(1.0, 1.0), (0.1, 2.0)])
        assert predict(fit, 0.1) == pytest.approx(2.0, rel=1e-9)

    def test_invalid_inputs(self):
        with pytest.raises(EvaluationError):
            fit_scaling([(1.0, 1.0)])
        with pytest.raises(EvaluationError):
            fit_scaling([(1.5, 1.0), (0.5, 1.0)])
        with pytest.raises(EvaluationError):
            fit_scaling([(1.0, 0.0), (0.5, 1.0)])
