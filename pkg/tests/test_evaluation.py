import math

import numpy as np
import pytest

from attack.perturbation import UniversalPerturbation
from attack.universal import AttackConfig
from audio.wav_io import Waveform
from evaluation.benchmark import BenchConfig, timing_benchmark
from evaluation.metrics import attack_success_rate, count_successes, mean_noise_level_db, noise_level_db
from evaluation.report import AttackReport, TargetRow, TimingSummary, render_sweep_table, write_reports_csv
from evaluation.suites import run_gradient_suite, run_property_suite
from evaluation.sweep import channels_for, evaluate_perturbations, sweep_epsilons, sweep_targets
from room.rir import Rir
from room.rir_set import RirSet
from utils.errors import ConfigError, EmptyVictimSetError, SilentReferenceError
from xvector.model import predict

from conftest import SMALL_RATE


def _zero_perturbation(target: int) -> UniversalPerturbation:
    return UniversalPerturbation(Waveform(np.zeros(80), SMALL_RATE), epsilon=0.01, target=target)


def test_noise_level_examples():
    x = np.array([0.5, -0.2, 0.1])
    assert noise_level_db(np.array([0.0, -0.5]), x) == pytest.approx(0.0)
    assert noise_level_db(np.array([0.05]), x) == pytest.approx(-20.0)
    assert noise_level_db(np.array([0.05]), np.array([0.4365])) == pytest.approx(-18.82, abs=0.05)


def test_noise_level_of_a_zero_perturbation():
    assert noise_level_db(np.zeros(5), np.ones(5)) == -math.inf


def test_noise_level_against_silence():
    with pytest.raises(SilentReferenceError):
        noise_level_db(np.ones(3), Waveform(np.zeros(3), 16000))


def test_noise_level_is_scale_invariant(rng):
    delta, x = rng.normal(size=50), rng.normal(size=50)
    base = noise_level_db(delta, x)
    for c in (0.001, 7.0):
        assert noise_level_db(c * delta, c * x) == pytest.approx(base, abs=1e-9)


def test_zero_perturbation_success_matches_clean_predictions(trained_model, tiny_corpus):
    victims = [u for u in tiny_corpus.load_split("test") if u.speaker != 1]
    expected = sum(predict(trained_model, u.waveform) == 1 for u in victims) / len(victims)
    assert attack_success_rate(trained_model, _zero_perturbation(1), victims) == pytest.approx(expected)


def test_success_rate_is_permutation_invariant(trained_model, tiny_corpus):
    victims = tiny_corpus.load_split("test")
    p = UniversalPerturbation(
        Waveform(np.random.default_rng(3).uniform(-0.05, 0.05, 160), SMALL_RATE), epsilon=0.05, target=2
    )
    forward = attack_success_rate(trained_model, p, victims, max_workers=1)
    backward = attack_success_rate(trained_model, p, victims[::-1], max_workers=3)
    assert forward == backward


def test_every_channel_is_an_attempt(trained_model, tiny_corpus):
    victims = tiny_corpus.load_split("test")
    channels = [None, Rir.identity(SMALL_RATE), Rir(np.array([0.0, 1.0]), SMALL_RATE)]
    attempts, successes = count_successes(trained_model, _zero_perturbation(0), victims, channels)
    assert attempts == 3 * sum(u.speaker != 0 for u in victims)
    assert 0 <= successes <= attempts


def test_empty_victim_set(trained_model):
    with pytest.raises(EmptyVictimSetError):
        attack_success_rate(trained_model, _zero_perturbation(0), [])


def test_mean_noise_level(tiny_corpus):
    victims = tiny_corpus.load_split("test")
    p = UniversalPerturbation(Waveform(np.full(40, 0.02), SMALL_RATE), epsilon=0.01, target=0)
    expected = np.mean([20 * np.log10(0.01 / u.waveform.peak) for u in victims])
    assert mean_noise_level_db(p, victims) == pytest.approx(expected)


def test_report_aggregates():
    report = AttackReport("no-RIR", [
        TargetRow(0, 0.05, -20.0, 10, 9),
        TargetRow(1, 0.05, -21.0, 10, 10),
        TargetRow(2, 0.05, -19.0, 4, 2),
    ])
    assert report.min_success == 0.5
    assert report.max_success == 1.0
    assert report.min_success <= report.avg_success <= report.max_success
    assert report.avg_success == pytest.approx((0.9 + 1.0 + 0.5) / 3)
    assert report.mean_noise_db == pytest.approx(-20.0)


def test_two_target_report_with_equal_rows():
    report = AttackReport("test-RIR", [TargetRow(0, 0.1, -10.0, 4, 3), TargetRow(1, 0.1, -10.0, 8, 6)])
    assert report.min_success == report.max_success == report.avg_success == 0.75


def test_report_rejects_more_successes_than_attempts():
    with pytest.raises(ValueError):
        TargetRow(0, 0.1, -10.0, 2, 3)


def test_report_csv(tmp_path):
    report = AttackReport("train-RIR", [TargetRow(3, 0.01, -33.96, 20, 17)])
    report.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "condition,target,epsilon,noise_db,n_attempts,n_success,success_rate"
    assert lines[1] == "train-RIR,3,0.01,-33.9600,20,17,0.850000"


def test_combined_csv_has_one_header(tmp_path):
    reports = [AttackReport("no-RIR", [TargetRow(0, eps, -20.0, 5, 5)]) for eps in (0.05, 0.01)]
    write_reports_csv(reports, tmp_path / "sweep.csv")
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("condition,")
    assert "avg" in render_sweep_table(reports)


def test_text_rendering_names_targets():
    report = AttackReport("no-RIR", [TargetRow(1, 0.05, -20.0, 10, 9)])
    text = report.render_text(["spk00", "spk01"])
    assert "spk01" in text and "90.00%" in text


def test_timing_summary_speedup():
    summary = TimingSummary(apply_median_s=0.001, individual_median_s=0.5, n_utterances=3, individual_success_rate=1.0)
    assert summary.speedup == pytest.approx(500.0)
    assert "500.0x" in summary.render_text()


def test_channels_for_conditions():
    rirs = RirSet([Rir.identity(SMALL_RATE), Rir(np.array([0.5]), SMALL_RATE)], ["train", "test"], SMALL_RATE)
    assert channels_for("no-RIR", None) == [None]
    assert len(channels_for("test-RIR", rirs)) == 1
    with pytest.raises(ConfigError):
        channels_for("train-RIR", None)


def test_evaluate_perturbations_one_row_per_target(trained_model, tiny_corpus):
    victims = tiny_corpus.load_split("test")
    report = evaluate_perturbations(
        trained_model, [_zero_perturbation(t) for t in range(3)], victims, [None], "no-RIR"
    )
    assert [row.target for row in report.rows] == [0, 1, 2]
    assert all(row.n_attempts == 2 for row in report.rows)
    assert all(row.noise_db == -math.inf for row in report.rows)


def test_sweep_targets_is_deterministic(trained_model, tiny_corpus):
    train_utts, test_utts = tiny_corpus.load_split("train"), tiny_corpus.load_split("test")
    template = AttackConfig(epsilon=0.1, delta_len_s=0.05, max_epochs=1, seed=4)
    a, pa = sweep_targets(trained_model, train_utts, test_utts, template, [0, 2])
    b, pb = sweep_targets(trained_model, train_utts, test_utts, template, [0, 2])
    assert len(a.rows) == 2 and [p.target for p in pa] == [0, 2]
    assert a.to_csv_text() == b.to_csv_text()
    np.testing.assert_array_equal(pa[1].delta_unit.samples, pb[1].delta_unit.samples)


def test_sweep_epsilons_one_report_per_epsilon(trained_model, tiny_corpus):
    template = AttackConfig(delta_len_s=0.05, max_epochs=1, seed=4)
    reports = sweep_epsilons(
        trained_model, tiny_corpus.load_split("train"), tiny_corpus.load_split("test"),
        template, [0.05, 0.005], [1],
    )
    assert [r.rows[0].epsilon for r in reports] == [0.05, 0.005]
    assert reports[0].mean_noise_db > reports[1].mean_noise_db


def test_timing_benchmark(trained_model, tiny_corpus):
    p = UniversalPerturbation(Waveform(np.zeros(400), SMALL_RATE), epsilon=0.05, target=0)
    attack = AttackConfig(epsilon=0.05, individual_max_iterations=2, seed=0)
    summary = timing_benchmark(
        trained_model, p, tiny_corpus.load_split("test"), attack,
        BenchConfig(n_utterances=2, apply_repeats=3, lengths_s=(0.5, 1.0)),
    )
    assert summary.n_utterances == 2
    assert summary.apply_median_s > 0 and summary.individual_median_s > 0
    assert [n for n, _ in summary.apply_by_length] == [4000, 8000]


def test_timing_benchmark_needs_utterances(trained_model):
    with pytest.raises(EmptyVictimSetError):
        timing_benchmark(
            trained_model, _zero_perturbation(0), [], AttackConfig(seed=0), BenchConfig()
        )


def test_property_suite_passes():
    checks = run_property_suite()
    assert checks and all(c.passed for c in checks), [c for c in checks if not c.passed]


def test_gradient_suite_passes():
    checks = run_gradient_suite()
    assert checks and all(c.passed for c in checks), [c for c in checks if not c.passed]


def test_property_suite_covers_persistence_training_and_channel_invariants():
    names = {c.name for c in run_property_suite()}
    assert {
        "hinge loss never drops below -kappa",
        "convolution is linear",
        "convolution is shift invariant",
        "applied perturbation stays within epsilon",
        "checkpoint round trip is bit exact",
        "seeded training is deterministic",
    } <= names


def test_gradient_suite_covers_every_operator_and_the_attack_chain():
    checks = {c.name: c for c in run_gradient_suite()}
    for name in (
        "dilated convolution adjoint",
        "affine adjoint",
        "ReLU vector-Jacobian product",
        "statistics pooling vector-Jacobian product",
        "scoring head vector-Jacobian product",
        "attack chain w.r.t. the perturbation unit",
        "attack chain, log-probability margin",
    ):
        assert checks[name].passed, checks[name].detail
