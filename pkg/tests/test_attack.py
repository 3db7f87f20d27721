import copy
import json

import numpy as np
import pytest
from pydantic import ValidationError

from attack.individual import train_individual
from attack.perturbation import (
    UniversalPerturbation,
    apply_perturbation,
    build_delta,
    clip_eps,
    clip_mask,
    cw_loss,
    cw_loss_grad,
    hinge_score_grad,
    tile_adjoint,
    tile_samples,
)
from attack.universal import AttackConfig, select_victims, train_universal
from audio.wav_io import Waveform
from netcore import layers
from netcore.gradcheck import adjoint_check
from room.rir import Rir
from room.rir_set import RirSet
from utils.errors import ConfigError, DataError, EmptyVictimSetError, ShapeMismatchError
from xvector.model import predict

from conftest import SMALL_RATE


def _cfg(**overrides):
    values = dict(epsilon=0.2, delta_len_s=0.1, target=0, max_epochs=2, seed=3)
    values.update(overrides)
    return AttackConfig(**values)


def test_tiling_example():
    tiled = build_delta(Waveform(np.array([1.0, 2.0, 3.0]), 16000), 7)
    assert tiled.samples.tolist() == [1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 1.0]


def test_tiling_shorter_target_crops():
    assert tile_samples(np.arange(10.0), 4).tolist() == [0.0, 1.0, 2.0, 3.0]


def test_tiling_rejects_zero_length():
    with pytest.raises(ShapeMismatchError):
        tile_samples(np.ones(3), 0)
    with pytest.raises(ShapeMismatchError):
        tile_samples(np.zeros(0), 5)


def test_tile_adjoint_sums_repetitions():
    assert tile_adjoint(np.ones(7), 3).tolist() == [3.0, 2.0, 2.0]
    error = adjoint_check(lambda v: tile_samples(v, 101), lambda u: tile_adjoint(u, 13), (13,), (101,))
    assert error < 1e-12


def test_clip_example():
    clipped = clip_eps(Waveform(np.array([0.2, -0.05]), 16000), 0.1)
    assert clipped.samples.tolist() == [0.1, -0.05]
    assert clip_eps(Waveform(np.array([0.3, -0.3]), 16000), 0.0).samples.tolist() == [0.0, 0.0]


def test_clip_rejects_negative_epsilon():
    with pytest.raises(ValueError):
        clip_eps(Waveform(np.ones(2), 16000), -0.1)


def test_clip_mask_is_inclusive():
    assert clip_mask(np.array([0.1, 0.05, -0.1, 0.11]), 0.1).tolist() == [True, True, True, False]


def test_hinge_loss_examples():
    probs = np.array([0.7, 0.2, 0.1])
    assert cw_loss(probs, 0) == pytest.approx(0.0)
    assert cw_loss(probs, 1) == pytest.approx(0.5)
    assert cw_loss(probs, 0, kappa=0.3) == pytest.approx(-0.3)
    assert cw_loss(probs, 0, kappa=0.6) == pytest.approx(-0.5)


def test_hinge_loss_needs_two_classes():
    with pytest.raises(ShapeMismatchError):
        cw_loss(np.array([1.0]), 0)


def test_hinge_gradient_routes_to_the_strongest_rival():
    loss, grad = cw_loss_grad(np.array([0.3, 0.3, 0.4]), 2, kappa=0.5)
    assert loss == pytest.approx(-0.1)
    assert grad.tolist() == [1.0, 0.0, -1.0]
    loss, grad = cw_loss_grad(np.array([0.1, 0.1, 0.8]), 2, kappa=0.2)
    assert loss == pytest.approx(-0.2)
    assert grad.tolist() == [0.0, 0.0, 0.0]


def test_hinge_loss_rejects_a_target_outside_the_classes():
    with pytest.raises(ShapeMismatchError, match="target 2"):
        cw_loss(np.array([0.6, 0.4]), 2)
    with pytest.raises(ShapeMismatchError, match="target -1"):
        cw_loss(np.array([0.6, 0.4]), -1)


def test_probability_update_is_the_softmax_backward_of_the_hinge():
    probs = layers.softmax(np.array([0.4, -1.0, 1.3, 0.2]))
    _, grad_probs = cw_loss_grad(probs, 1)
    loss, grad_scores = hinge_score_grad(probs, 1, update_space="probability")
    assert loss == pytest.approx(cw_loss(probs, 1))
    np.testing.assert_allclose(grad_scores, layers.softmax_bwd(probs, grad_probs))


def test_log_probability_update_survives_a_saturated_softmax():
    # A confident model: the target's probability underflows to zero
    probs = layers.softmax(np.array([900.0, 0.0, 15.0]))
    loss, grad = hinge_score_grad(probs, 1, update_space="probability")
    assert loss == pytest.approx(1.0)
    assert np.max(np.abs(grad)) < 1e-300
    loss, grad = hinge_score_grad(probs, 1, update_space="log_probability")
    assert loss == pytest.approx(1.0)
    assert grad.tolist() == [1.0, -1.0, 0.0]


def test_log_probability_update_is_zero_at_the_floor():
    _, grad = hinge_score_grad(np.array([0.1, 0.1, 0.8]), 2, kappa=0.2)
    assert not np.any(grad)


def test_unknown_update_space_is_rejected():
    with pytest.raises(ValueError):
        hinge_score_grad(np.array([0.5, 0.5]), 0, update_space="logits")
    with pytest.raises(ValidationError):
        _cfg(update_space="logits")


def test_apply_keeps_length_and_bound(rng):
    unit = Waveform(rng.uniform(-0.5, 0.5, size=30), 16000)
    p = UniversalPerturbation(unit, epsilon=0.05, target=1)
    x = Waveform(rng.uniform(-0.5, 0.5, size=95), 16000)
    out = apply_perturbation(x, p)
    assert len(out) == 95
    assert np.max(np.abs(out.samples - x.samples)) <= 0.05 + 1e-15


def test_apply_bound_holds_for_a_large_unit_over_many_repeats(rng):
    unit = Waveform(rng.normal(0.0, 5.0, size=7), 16000)
    p = UniversalPerturbation(unit, epsilon=0.003, target=0)
    x = Waveform(rng.uniform(-0.9, 0.9, size=5000), 16000)
    assert np.max(np.abs(apply_perturbation(x, p).samples - x.samples)) <= 0.003 + 1e-15


def test_apply_rejects_empty_and_rate_mismatch():
    p = UniversalPerturbation(Waveform(np.zeros(4), 16000), epsilon=0.1, target=0)
    with pytest.raises(ShapeMismatchError):
        apply_perturbation(Waveform(np.zeros(0), 16000), p)
    with pytest.raises(DataError):
        apply_perturbation(Waveform(np.zeros(10), 8000), p)


def test_perturbation_save_and_load(tmp_path, rng):
    p = UniversalPerturbation(Waveform(rng.uniform(-0.01, 0.01, size=800), 16000), epsilon=0.01, target=2)
    p.save(tmp_path / "target_02")
    back = UniversalPerturbation.load(tmp_path / "target_02")
    np.testing.assert_array_equal(back.delta_unit.samples, p.delta_unit.samples)
    assert back.target == 2 and back.epsilon == 0.01


def test_perturbation_with_unknown_version_is_rejected(tmp_path):
    p = UniversalPerturbation(Waveform(np.zeros(8), 16000), epsilon=0.01, target=0)
    p.save(tmp_path / "p")
    meta = json.loads((tmp_path / "p.json").read_text())
    meta["format_version"] = 99
    (tmp_path / "p.json").write_text(json.dumps(meta))
    with pytest.raises(DataError):
        UniversalPerturbation.load(tmp_path / "p")


def test_default_step_size_follows_epsilon():
    assert _cfg(epsilon=0.04).step_size == pytest.approx(0.002)
    assert _cfg(learning_rate=0.01).step_size == 0.01


def test_attack_config_bounds():
    with pytest.raises(ValidationError):
        _cfg(epsilon=0.0)
    with pytest.raises(ValidationError):
        _cfg(kappa=-1.0)
    with pytest.raises(ValidationError):
        AttackConfig(epsilon=0.1)


def test_victims_exclude_the_target(tiny_corpus):
    victims = select_victims(tiny_corpus.load_split("train"), 1)
    assert victims and all(u.speaker != 1 for u in victims)


def test_only_target_utterances_is_an_error(tiny_corpus, trained_model):
    own = [u for u in tiny_corpus.load_split("train") if u.speaker == 0]
    with pytest.raises(EmptyVictimSetError):
        train_universal(trained_model, own, _cfg(target=0))


def test_unknown_target_is_a_config_error(tiny_corpus, trained_model):
    with pytest.raises(ConfigError):
        train_universal(trained_model, tiny_corpus.load_split("train"), _cfg(target=7))


def test_rir_mode_without_rirs_is_a_config_error(tiny_corpus, trained_model):
    with pytest.raises(ConfigError):
        train_universal(trained_model, tiny_corpus.load_split("train"), _cfg(rir_mode="set"))


def test_zero_epochs_returns_the_initialisation(tiny_corpus, trained_model):
    p, log = train_universal(trained_model, tiny_corpus.load_split("train"), _cfg(max_epochs=0))
    assert log.records == []
    assert len(p.delta_unit) == int(0.1 * SMALL_RATE)
    assert np.max(np.abs(p.delta_unit.samples)) <= 0.2 / 10
    assert p.metadata.epochs_run == 0


def test_universal_training_respects_epsilon(tiny_corpus, trained_model):
    p, log = train_universal(trained_model, tiny_corpus.load_split("train"), _cfg(epsilon=0.01, max_epochs=2))
    assert np.max(np.abs(p.delta_unit.samples)) <= 0.01
    assert 1 <= len(log.records) <= 2
    for record in log.records:
        assert record.updates + record.skipped == 8
        assert 0.0 <= record.success_rate <= 1.0


def test_universal_training_is_deterministic(tiny_corpus, trained_model):
    victims = tiny_corpus.load_split("train")
    a, log_a = train_universal(trained_model, victims, _cfg())
    b, log_b = train_universal(trained_model, victims, _cfg())
    np.testing.assert_array_equal(a.delta_unit.samples, b.delta_unit.samples)
    assert [r.loss for r in log_a.records] == [r.loss for r in log_b.records]


def test_overconfident_model_still_moves_the_perturbation(tiny_corpus, trained_model):
    model = copy.deepcopy(trained_model)
    model.params["head.weight"].values = model.params["head.weight"].values * 200.0
    model.params["head.bias"].values = model.params["head.bias"].values * 200.0
    victims = tiny_corpus.load_split("train")
    cfg = _cfg(max_epochs=1, success_threshold=1.0)

    start, _ = train_universal(model, victims, cfg.model_copy(update={"max_epochs": 0}))
    trained, log = train_universal(model, victims, cfg)
    assert log.records[0].updates >= 1
    moved = np.max(np.abs(trained.delta_unit.samples - start.delta_unit.samples))
    assert moved >= 0.5 * cfg.step_size


def test_identity_rir_matches_the_digital_attack(tiny_corpus, trained_model):
    victims = tiny_corpus.load_split("train")
    identity = RirSet([Rir.identity(SMALL_RATE)], ["train"], SMALL_RATE)
    digital, _ = train_universal(trained_model, victims, _cfg())
    room, _ = train_universal(trained_model, victims, _cfg(rir_mode="set"), identity)
    np.testing.assert_array_equal(digital.delta_unit.samples, room.delta_unit.samples)
    assert room.metadata.rir_provenance == ["taps=1"]


def test_training_log_csv(tiny_corpus, trained_model, tmp_path):
    _, log = train_universal(trained_model, tiny_corpus.load_split("train"), _cfg(max_epochs=1))
    log.to_csv(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,success_rate,updates,skipped"
    assert len(lines) == 2


def test_individual_attack_on_an_already_targeted_utterance(tiny_corpus, trained_model):
    utterance = next(u for u in tiny_corpus.load_split("train") if predict(trained_model, u.waveform) == u.speaker)
    result = train_individual(trained_model, utterance.waveform, _cfg(target=utterance.speaker))
    assert result.success
    assert result.iterations == 0
    np.testing.assert_array_equal(result.delta, 0.0)


def test_individual_attack_respects_the_iteration_cap(tiny_corpus, trained_model):
    utterance = next(u for u in tiny_corpus.load_split("test") if u.speaker != 0)
    result = train_individual(
        trained_model, utterance.waveform, _cfg(epsilon=1e-4, individual_max_iterations=3)
    )
    assert result.iterations <= 3
    assert len(result.delta) == len(utterance.waveform)
    assert np.max(np.abs(result.delta)) <= 1e-4
    assert result.elapsed_s >= 0.0


@pytest.mark.slow
def test_large_epsilon_universal_attack_succeeds(tiny_corpus, trained_model):
    p, _ = train_universal(
        trained_model, tiny_corpus.load_split("train"), _cfg(epsilon=0.5, max_epochs=30, target=1)
    )
    assert p.metadata.train_success_rate >= 0.75


@pytest.mark.slow
def test_large_epsilon_individual_attack_succeeds(tiny_corpus, trained_model):
    utterance = next(u for u in tiny_corpus.load_split("test") if u.speaker == 0)
    result = train_individual(trained_model, utterance.waveform, _cfg(epsilon=0.5, target=2))
    assert result.success
    assert predict(trained_model, Waveform(utterance.waveform.samples + result.delta, SMALL_RATE)) == 2
