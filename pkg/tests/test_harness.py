import math

import pytest

from ctxwl.cwlk import SparseVector
from ctxwl.graph import ContextualGraph
from ctxwl.harness import (AuditingLearner, RegimenConfig, StreamSample, UnsortedStreamError, compare_regimens,
                           prepare, run_batch_regimen, run_online, track_weights)
from ctxwl.learners import ConfidenceWeighted, LearnerConfig, Perceptron
from ctxwl.synthgen import SMS_MOTIF, UA, FamilySpec, ScenarioConfig, default_scenario, flip_scenario, generate


def vec_sample(d, y, t, fam=None, sid=""):
    return StreamSample(SparseVector.from_dict(d), y, t, fam, sid)


@pytest.fixture(scope="module")
def default_stream():
    return prepare(generate(default_scenario(seed=0)))


def test_single_sample_stream():
    g = ContextualGraph.build([(0, "A", [UA])], [], graph_id="a", y=1, t=0)
    r = run_online([g])
    assert r.scored == 1 and r.final_error == 1.0 and r.cum_error == [1.0]


def test_repeated_sample_perceptron():
    n = 25
    stream = [vec_sample({0: 1.0, 3: 2.0}, 1, t) for t in range(n)]
    r = run_online(stream, LearnerConfig("perceptron"))
    assert r.mistakes == 1 and r.cum_error[-1] == pytest.approx(1 / n)
    assert r.cum_error[0] == 1.0


def test_unsorted_stream_rejected_before_processing():
    audit = AuditingLearner(Perceptron())
    stream = [vec_sample({0: 1.0}, 1, 2, sid="a"), vec_sample({0: 1.0}, 1, 1, sid="b")]
    with pytest.raises(UnsortedStreamError, match="'b'"):
        run_online(stream, audit)
    assert audit.events == []


def test_seeding_excludes_first_day():
    stream = [vec_sample({0: 1.0}, 1, 0), vec_sample({0: 1.0}, 1, 1)]
    r = run_online(stream, LearnerConfig("perceptron"), score_from=1)
    assert r.scored == 1 and r.mistakes == 0 and r.days == [1]


def test_multi_once_window_equal_to_span_is_empty():
    stream = [vec_sample({t: 1.0}, 1 if t % 2 else -1, t) for t in range(5)]
    r = run_batch_regimen(stream, RegimenConfig("multi-once", 5))
    assert r.days == [] and r.scored == 0 and math.isnan(r.final_error)


def test_window_exceeding_span_rejected():
    stream = [vec_sample({0: 1.0}, 1, t) for t in range(3)]
    with pytest.raises(ValueError, match="exceeds"):
        run_batch_regimen(stream, RegimenConfig("multi-daily", 4))
    with pytest.raises(ValueError):
        RegimenConfig("weekly")
    with pytest.raises(ValueError):
        RegimenConfig("daily", 0)


def test_batch_models_use_frozen_window_features():
    # feature 1 first appears after training, so once must ignore it
    stream = [vec_sample({0: 1.0}, 1, 0), vec_sample({2: 1.0}, -1, 0),
              vec_sample({1: 5.0}, 1, 1), vec_sample({1: 5.0, 0: 1.0}, 1, 1)]
    r = run_batch_regimen(stream, RegimenConfig("once"))
    assert r.cum_vocab == [2] and r.mistakes == 1
    assert r.train_windows == [{"day": 1, "lo": 0, "hi": 0, "n": 2}]


def test_iid_daily_close_to_multi_daily():
    fam = FamilySpec("sms", SMS_MOTIF, 0, 0, 10_000, 30)
    sc = ScenarioConfig(families=[fam], benign_rate=30, days=25, seed=3, label_noise=0.05)
    reps = compare_regimens(generate(sc), window_days=5, kinds=("daily", "multi-daily"))
    d, m = reps["daily"], reps["multi-daily"]
    p = (d.mistakes + m.mistakes) / (d.scored + m.scored)
    noise = 3 * math.sqrt(2 * p * (1 - p) / d.scored)
    assert abs(d.final_error - m.final_error) <= noise


def test_label_flip_once_stalls_daily_recovers():
    fam = FamilySpec("sms", SMS_MOTIF, 0, 0, 300, 30)
    sc = flip_scenario(ScenarioConfig(families=[fam], benign_rate=30, days=30, seed=0), 15, switch_context=False)
    ps = prepare(generate(sc))
    once = run_batch_regimen(ps, RegimenConfig("once"))
    daily = run_batch_regimen(ps, RegimenConfig("daily"))
    assert once.window_error(1, 14) < 0.1 and daily.window_error(1, 14) < 0.1
    assert once.window_error(16, 29) >= 0.35       # about half the traffic is now misread
    assert daily.window_error(16, 29) <= 0.02
    assert once.final_error > daily.final_error


def test_determinism(default_stream):
    a = compare_regimens(default_stream, kinds=("online", "daily"))
    b = compare_regimens(prepare(generate(default_scenario(seed=0))), kinds=("online", "daily"))
    for k in a:
        assert a[k].to_json(include_timings=False) == b[k].to_json(include_timings=False)


def test_regimen_ordering(default_stream):
    r = compare_regimens(default_stream)
    err = {k: v.final_error for k, v in r.items()}
    assert err["daily"] <= err["once"] and err["multi-daily"] <= err["multi-once"]
    assert err["online"] < err["once"]
    assert len({tuple(v.days) for v in r.values()}) == 1


def test_cumulative_error_matches_definition(default_stream):
    audit_pairs = []
    r = run_online(default_stream, observer=lambda k, pred: audit_pairs.append((k, pred.y_hat)))
    wrong = sum(y_hat != default_stream.samples[k].y for k, y_hat in audit_pairs)
    assert wrong == r.mistakes and len(audit_pairs) == r.scored
    assert r.cum_vocab == sorted(r.cum_vocab)
    p, rec = r.precision, r.recall
    assert r.f_measure == pytest.approx(2 * p * rec / (p + rec))


def test_f_measure_zero_when_nothing_detected():
    stream = [vec_sample({0: 1.0}, 1, 0)]
    r = run_online(stream, LearnerConfig("perceptron"))
    assert r.precision == 0 and r.recall == 0 and r.f_measure == 0


def test_audited_run_is_prequential(default_stream):
    audit = AuditingLearner(ConfidenceWeighted())
    r = run_online(default_stream, audit, observer=audit.observe)
    assert audit.violations == []
    assert audit.n_recorded() == r.scored
    # every update is preceded by its own predict and record
    for k in range(0, len(audit.events), 3):
        kinds = [e[0] for e in audit.events[k:k + 3]]
        assert kinds == ["predict", "record", "update"]


def test_track_weights_examples():
    assert track_weights([vec_sample({0: 1.0}, 1, 0)], []) == {}
    stream = []
    for day in range(30):
        for j in range(3):
            if 10 <= day <= 20:
                stream.append(vec_sample({100 + (day * 3 + j): 1.0, 7: 1.0}, 1, day))
            stream.append(vec_sample({200 + (day * 3 + j): 1.0}, -1, day))
    w = track_weights(stream, [7, 999], LearnerConfig("perceptron"))
    assert w["999"] == [0.0] * 30
    series = w["7"]
    assert all(a <= b for a, b in zip(series[10:21], series[11:21]))
    assert series[9] == 0 and series[20] > 0


def test_watch_by_label(default_stream):
    r = run_online(default_stream, watch=["user-unaware⊕AlarmManager.set", "never⊕seen"])
    assert len(r.weights["never⊕seen"]) == len(r.days)
    assert set(r.weights["never⊕seen"]) == {0.0}
    assert max(r.weights["user-unaware⊕AlarmManager.set"]) > 0


def test_report_serialisation(tmp_path, default_stream):
    r = run_online(default_stream, LearnerConfig("pa"))
    d = r.to_dict(include_timings=False)
    assert "timings" not in d and d["final_error"] == r.final_error
    with open(tmp_path / "c.csv", "w", newline="") as fh:
        r.write_csv(fh)
    assert (tmp_path / "c.csv").read_text().count("\n") == len(r.days) + 1
