import math

import numpy as np
import pytest

from synsum import autodiff as ad
from synsum import training as tr
from synsum.autodiff import Tensor
from synsum.model import ModelConfig, ModelParams
from synsum.training import (
    Checkpoint,
    CheckpointError,
    NonFiniteGradientError,
    TrainConfig,
    adagrad_step,
    clip_gradients,
    load_checkpoint,
    loss_from_steps,
    params_from_checkpoint,
    save_checkpoint,
    sequence_loss,
    train,
)


# ---------------------------------------------------------------------------
# loss


def test_loss_zero_when_gold_has_probability_one():
    dists = [Tensor(np.array([0.0, 1.0, 0.0])), Tensor(np.array([1.0, 0.0, 0.0]))]
    golds = [1, 0]
    attn = [Tensor(np.array([0.5, 0.5]))] * 2
    covs = [Tensor(np.zeros(2))] * 2
    loss, stats = loss_from_steps(dists, golds, attn, covs, coverage_weight=0.0)
    assert loss.item() == 0.0
    assert stats.nll == 0.0


def test_loss_uniform_distribution_is_log_vocab():
    v = 7
    dists = [Tensor(np.full(v, 1.0 / v))] * 3
    golds = [0, 3, 6]
    attn = [Tensor(np.array([1.0]))] * 3
    covs = [Tensor(np.zeros(1))] * 3
    loss, _ = loss_from_steps(dists, golds, attn, covs, coverage_weight=0.0)
    assert abs(loss.item() - math.log(v)) < 1e-12


def test_loss_two_step_hand_fixture():
    # hand evaluation: steps with known distributions, attention and coverage
    d1, d2 = np.array([0.7, 0.2, 0.1]), np.array([0.25, 0.7, 0.05])
    a1, a2 = np.array([0.6, 0.4]), np.array([0.3, 0.7])
    c1, c2 = np.zeros(2), np.array([0.6, 0.4])
    expected = (
        (-math.log(0.7) + 1.0 * 0.0)
        + (-math.log(0.7) + 1.0 * (0.3 + 0.4))
    ) / 2.0
    loss, stats = loss_from_steps(
        [Tensor(d1), Tensor(d2)], [0, 1],
        [Tensor(a1), Tensor(a2)], [Tensor(c1), Tensor(c2)],
        coverage_weight=1.0,
    )
    assert abs(loss.item() - expected) < 1e-10
    assert stats.steps == 2


def test_loss_rejects_empty_target():
    with pytest.raises(ValueError, match="empty"):
        loss_from_steps([], [], [], [], 1.0)


def test_loss_floors_probability_before_log():
    dists = [Tensor(np.array([1.0, 0.0]))]
    loss, _ = loss_from_steps(
        dists, [1], [Tensor(np.array([1.0]))], [Tensor(np.zeros(1))], 0.0
    )
    assert abs(loss.item() - (-math.log(1e-12))) < 1e-6


def test_sequence_loss_lambda_zero_equals_nll_component(tiny_setup):
    _, _, examples, config = tiny_setup
    params = ModelParams(config, seed=0)
    loss0, stats0 = sequence_loss(examples[0], params, coverage_weight=0.0)
    loss1, stats1 = sequence_loss(examples[0], params, coverage_weight=1.0)
    assert abs(loss0.item() - stats1.nll) < 1e-12
    assert stats0.coverage == 0.0
    assert loss1.item() > loss0.item()


def test_sequence_loss_nonnegative(tiny_setup):
    _, _, examples, config = tiny_setup
    params = ModelParams(config, seed=1)
    for ex in examples[:4]:
        loss, stats = sequence_loss(ex, params, coverage_weight=1.0)
        assert loss.item() >= 0.0
        assert stats.nll >= 0.0 and stats.coverage >= 0.0


# ---------------------------------------------------------------------------
# adagrad


def test_adagrad_zero_gradient_is_noop():
    theta = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = {}
    adagrad_step({"theta": theta}, {"theta": np.zeros(2)}, state,
                 lr=0.15, init_acc=0.1)
    np.testing.assert_array_equal(theta.data, [1.0, -2.0])
    np.testing.assert_array_equal(state["theta"], np.full(2, 0.1))


def test_adagrad_hand_evaluated_update():
    theta = Tensor(np.array([1.0]), requires_grad=True)
    state = {}
    adagrad_step({"theta": theta}, {"theta": np.array([1.0])}, state,
                 lr=0.15, init_acc=0.1)
    np.testing.assert_allclose(state["theta"], [1.1], atol=0)
    expected = 1.0 - 0.15 / math.sqrt(1.1)
    assert abs(theta.data[0] - expected) < 1e-12
    assert abs(theta.data[0] - 0.85698) < 1e-5


def test_adagrad_step_magnitude_strictly_decreases():
    theta = Tensor(np.array([0.0]), requires_grad=True)
    state = {}
    deltas = []
    for _ in range(5):
        before = theta.data.copy()
        adagrad_step({"theta": theta}, {"theta": np.array([1.0])}, state,
                     lr=0.15, init_acc=0.1)
        deltas.append(abs(theta.data[0] - before[0]))
    assert all(b < a for a, b in zip(deltas, deltas[1:]))


def test_adagrad_rejects_non_finite_gradient():
    theta = Tensor(np.array([1.0]), requires_grad=True)
    with pytest.raises(NonFiniteGradientError, match="theta"):
        adagrad_step({"theta": theta}, {"theta": np.array([np.nan])}, {},
                     lr=0.1, init_acc=0.1)


def test_gradient_clipping_bounds_global_norm():
    grads = {"a": np.array([3.0, 4.0]), "b": np.array([0.0])}
    clipped, norm = clip_gradients(grads, max_norm=2.0)
    assert abs(norm - 5.0) < 1e-12
    total = sum(float((g * g).sum()) for g in clipped.values())
    assert abs(total ** 0.5 - 2.0) < 1e-12
    # under the limit nothing changes
    same, norm2 = clip_gradients(grads, max_norm=10.0)
    np.testing.assert_array_equal(same["a"], grads["a"])


# ---------------------------------------------------------------------------
# training loop


def small_train_config(**kw):
    defaults = dict(epochs=3, batch_size=4, seed=0)
    defaults.update(kw)
    return TrainConfig(**defaults)


def test_train_determinism_bitwise(tiny_setup):
    _, _, examples, config = tiny_setup
    r1 = train(examples[:6], config, small_train_config())
    r2 = train(examples[:6], config, small_train_config())
    for name, t in r1.params.named_tensors().items():
        assert t.data.tobytes() == r2.params.named_tensors()[name].data.tobytes()
    assert [h.total for h in r1.history] == [h.total for h in r2.history]


def test_train_loss_decreases(tiny_setup):
    _, _, examples, config = tiny_setup
    result = train(examples[:8], config, small_train_config(epochs=8))
    assert result.history[-1].total < result.history[0].total
    assert not result.halted


def test_train_empty_corpus_rejected(tiny_setup):
    _, _, _, config = tiny_setup
    with pytest.raises(ValueError, match="empty"):
        train([], config, small_train_config())


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(coverage_weight=-1.0)


def test_train_halts_on_divergence_and_keeps_last_good(tiny_setup, monkeypatch):
    _, _, examples, config = tiny_setup
    calls = {"n": 0}
    real = tr.sequence_loss

    def exploding(example, params, coverage_weight):
        calls["n"] += 1
        loss, stats = real(example, params, coverage_weight)
        if calls["n"] > 10:
            loss.data = np.asarray(float("nan"))
        return loss, stats

    monkeypatch.setattr(tr, "sequence_loss", exploding)
    result = train(examples[:6], config, small_train_config(epochs=5))
    assert result.halted
    assert "non-finite" in result.halt_reason
    # parameters restored to the last completed epoch's snapshot
    assert all(np.isfinite(t.data).all()
               for t in result.params.named_tensors().values())


# ---------------------------------------------------------------------------
# evaluation helpers


def test_evaluate_model_returns_report(tiny_setup):
    _, vocab, examples, config = tiny_setup
    params = ModelParams(config, seed=0)
    report = tr.evaluate_model(examples[:3], params, vocab, beam=1,
                               max_len=6, alpha=0.0, n_resamples=50)
    assert report.n_examples == 3
    assert set(report.summaries) == {"R1", "R2", "RL"}
    for s in report.summaries.values():
        assert 0.0 <= s.mean_f1 <= 1.0


def test_decode_corpus_deterministic(tiny_setup):
    _, vocab, examples, config = tiny_setup
    params = ModelParams(config, seed=1)
    one = tr.decode_corpus(examples[:2], params, vocab, beam=2, max_len=6)
    two = tr.decode_corpus(examples[:2], params, vocab, beam=2, max_len=6)
    assert one == two


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_bitwise(tiny_setup, tmp_path):
    _, _, examples, config = tiny_setup
    result = train(examples[:4], config, small_train_config(epochs=2))
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, result.params, step=8, vocab_hash="abc123",
                    accumulators=result.accumulators,
                    extras={"selector/w": np.array([1.0, 2.0])})
    ckpt = load_checkpoint(path)
    assert ckpt.step == 8
    assert ckpt.vocab_hash == "abc123"
    assert ckpt.config == config
    for name, t in result.params.named_tensors().items():
        assert ckpt.arrays[name].tobytes() == t.data.tobytes()
    for name, acc in result.accumulators.items():
        assert ckpt.accumulators[name].tobytes() == acc.tobytes()
    np.testing.assert_array_equal(ckpt.extras["selector/w"], [1.0, 2.0])

    # reloaded parameters produce bitwise-identical forward passes
    reloaded = params_from_checkpoint(ckpt)
    example = examples[0]
    loss_a, _ = sequence_loss(example, result.params, 1.0)
    loss_b, _ = sequence_loss(example, reloaded, 1.0)
    assert loss_a.data.tobytes() == loss_b.data.tobytes()


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tiny_setup, tmp_path):
    _, _, examples, config = tiny_setup
    params = ModelParams(config, seed=0)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, step=0, vocab_hash="x")
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_params_from_checkpoint_validates_paths(tiny_setup, tmp_path):
    _, _, _, config = tiny_setup
    params = ModelParams(config, seed=0)
    arrays = {n: t.data for n, t in params.named_tensors().items()}
    arrays.pop("embedding")
    ckpt = Checkpoint(config=config, arrays=arrays, accumulators={},
                      extras={}, step=0, vocab_hash="x")
    with pytest.raises(ValueError, match="embedding"):
        params_from_checkpoint(ckpt)


# ---------------------------------------------------------------------------
# full-model gradient check on a small fixture


def test_full_model_gradient_check_small(tiny_setup):
    _, vocab, examples, _ = tiny_setup
    config = ModelConfig(vocab_size=vocab.size, d_emb=3, d_h=2, d_g=4,
                         gcn_layers=1, d_dec=3, d_attn=3)
    params = ModelParams(config, seed=11)
    for layer in params.gcn:
        layer["bias"].data[...] = 0.2  # keep relu away from its kink
    example = examples[1]
    checked = params.named_tensors()

    def f(p):
        loss, _ = sequence_loss(example, params, coverage_weight=1.0)
        return loss

    report = ad.grad_check(f, checked, eps=1e-5, tol=1e-4)
    assert report.ok, str(report)
