import math

import numpy as np
import pytest

from helpers import TINY, random_graphs, toy_sequences
from oracles import (batchnorm_eval, conv_loops, dense_eval, elu, gat_loops, pool_loops,
                     softmax_vec, temporal_attend_loops)

from dgatnet import autodiff as ad
from dgatnet.autodiff import AdamWState, Tensor, adamw_step, backward
from dgatnet.dfc import DynamicGraphSequence
from dgatnet.model import DGATNet
from dgatnet.train import (TrainConfig, balanced_accuracy, class_weights, predict, stack_adjacency,
                           train, weighted_ce_loss)


def _perturb(model, rng, scale=0.3):
    for _, p in model.store:
        p.value = p.value + scale * rng.standard_normal(p.shape)
    model.conv.bn.running_mean = rng.standard_normal(model.conv.bn.channels)
    model.conv.bn.running_var = rng.uniform(0.5, 2.0, model.conv.bn.channels)


def _oracle_forward(model, A):
    """Chain the per-module loop oracles for one subject A (T, N, N)."""
    z = []
    for At in A:
        h = model.embeddings.value
        for i, layer in enumerate(model.gat):
            h, _ = gat_loops(h, At, layer.W.value, layer.a.value, layer.leaky_slope)
            if i < len(model.gat) - 1:
                h = elu(h)
        z.append(pool_loops(h, model.pool.W1.value, model.pool.b1.value, model.pool.w2.value)[0])
    c = model.conv
    conv = conv_loops(np.array(z), c.kernel.value, c.bias.value)
    u = np.maximum(batchnorm_eval(conv, c.gamma.value, c.beta.value, c.bn.running_mean,
                                  c.bn.running_var, c.bn.eps), 0)
    v, beta = temporal_attend_loops(u, model.tattn.W1.value, model.tattn.b1.value,
                                    model.tattn.w2.value)
    logits = dense_eval(v, [w.value for w in model.head.weights], [b.value for b in model.head.biases])
    return softmax_vec(logits), beta


def test_tiny_model_matches_composed_oracles():
    rng = np.random.default_rng(0)
    model = DGATNet(6, TINY, seed=3)
    _perturb(model, rng)
    A = random_graphs(rng, 2, 3, 6)
    out = model.forward(A, train=False, keep_attention=True)
    for b in range(2):
        probs, beta = _oracle_forward(model, A[b])
        assert np.max(np.abs(out.probs.value[b] - probs)) <= 1e-8
        assert np.max(np.abs(out.attention[b].beta - beta)) <= 1e-8


def test_forward_probabilities_and_attention_shapes():
    rng = np.random.default_rng(1)
    model = DGATNet(6, TINY, seed=1)
    A = random_graphs(rng, 3, 4, 6)
    out = model.forward(A, train=True, rng=np.random.default_rng(0), keep_attention=True,
                        subject_ids=["a", "b", "c"])
    assert np.all(np.abs(out.probs.value.sum(axis=1) - 1) <= 1e-9)
    att = out.attention[1]
    assert att.subject_id == "b"
    assert att.alphas.shape == (3, 4, 6, 6) and att.pool_weights.shape == (4, 6)
    assert len(att.records) == 4
    with pytest.raises(ValueError):
        model.forward(A[0])
    with pytest.raises(ValueError):
        model.forward(random_graphs(rng, 1, 2, 5))


def test_eval_forward_is_bitwise_deterministic():
    rng = np.random.default_rng(2)
    model = DGATNet(6, TINY, seed=2)
    A = random_graphs(rng, 2, 3, 6)
    a = model.forward(A, train=False).probs.value
    b = model.forward(A, train=False).probs.value
    assert a.tobytes() == b.tobytes()


def test_same_seed_same_init_and_state_round_trip():
    a, b = DGATNet(6, TINY, seed=5), DGATNet(6, TINY, seed=5)
    for (na, pa), (nb, pb) in zip(a.store, b.store):
        assert na == nb and pa.value.tobytes() == pb.value.tobytes()
    c = DGATNet(6, TINY, seed=6)
    _perturb(a, np.random.default_rng(0))
    c.load_state_dict(a.state_dict())
    A = random_graphs(np.random.default_rng(3), 2, 3, 6)
    np.testing.assert_array_equal(a.predict_proba(A), c.predict_proba(A))


def test_default_parameter_shapes():
    model = DGATNet(10)
    shapes = {name: p.shape for name, p in model.store}
    assert shapes["roi_embedding"] == (10, 64)
    assert [shapes[f"gat{i}.W"] for i in range(3)] == [(64, 128), (128, 128), (128, 64)]
    assert shapes["pool.W1"] == (64, 32)
    assert shapes["tconv.kernel"] == (3, 64, 96)
    assert shapes["tattn.W1"] == (96, 48) and shapes["tattn.w2"] == (48, 1)
    assert [shapes[f"head.fc{i}.W"] for i in range(3)] == [(96, 64), (64, 32), (32, 2)]


def test_weighted_ce_examples():
    probs = np.array([[0.7, 0.3], [0.2, 0.8], [0.6, 0.4]])
    y = [0, 1, 1]
    loss = weighted_ce_loss(Tensor(probs), y, (1.5, 0.75)).value
    expected = -(1.5 * math.log(0.7) + 0.75 * math.log(0.8) + 0.75 * math.log(0.4)) / 3
    assert abs(float(loss) - expected) <= 1e-12
    assert float(weighted_ce_loss(Tensor(np.array([[1.0, 0.0]])), [0], (1, 1)).value) == 0.0
    uniform = weighted_ce_loss(Tensor(np.full((4, 2), 0.5)), [0, 1, 1, 0], (1, 1)).value
    assert float(uniform) == pytest.approx(math.log(2))


def test_zero_probability_is_clamped(caplog):
    loss = weighted_ce_loss(Tensor(np.array([[1.0, 0.0]])), [1], (1, 1))
    assert float(loss.value) == pytest.approx(-math.log(1e-12))
    assert "clamped" in caplog.text


@pytest.mark.parametrize("labels", [[0, 0, 0, 1], [0, 1] * 5, [1, 1, 1, 1, 1, 0, 0]])
def test_class_weights_balance(labels):
    w = class_weights(labels)
    n0, n1 = labels.count(0), labels.count(1)
    assert w[0] * n0 == pytest.approx(w[1] * n1)
    assert w[0] == pytest.approx(len(labels) / (2 * n0))
    with pytest.raises(ValueError):
        class_weights([1, 1])


def test_balanced_accuracy():
    assert balanced_accuracy([1, 1, 1, 1, 0, 0, 0, 0, 0, 0], [1, 1, 1, 0, 0, 0, 0, 0, 1, 1]) == \
        pytest.approx((0.75 + 4 / 6) / 2)


@pytest.mark.parametrize("instance", range(20))
def test_one_step_decreases_single_example_loss(instance):
    rng = np.random.default_rng([instance, 9])
    model = DGATNet(5, TINY, seed=instance)
    _perturb(model, rng, scale=0.2)
    A = random_graphs(rng, 1, 3, 5)
    y = [int(rng.integers(2))]

    def loss():
        return weighted_ce_loss(model.forward(A, train=False).probs, y, (1.0, 1.0))

    before = loss()
    model.store.zero_grad()
    backward(before)
    adamw_step(model.store, AdamWState(lr=1e-4))
    assert float(loss().value) < float(before.value)


SMALL_TRAIN = TrainConfig(batch_size=4, max_epochs=12, min_epochs=4, patience=3)


def test_training_is_deterministic():
    seqs = toy_sequences()
    a = train(seqs[:8], seqs[8:], SMALL_TRAIN, TINY, seed=4)
    b = train(seqs[:8], seqs[8:], SMALL_TRAIN, TINY, seed=4)
    assert a.curve_csv() == b.curve_csv()
    assert a.curve_csv().splitlines()[0] == "epoch,train_loss,val_balacc"
    for (_, p), (_, q) in zip(a.model.store, b.model.store):
        assert p.value.tobytes() == q.value.tobytes()


def test_early_stopping_bookkeeping():
    seqs = toy_sequences(seed=1)
    cfg = TrainConfig(batch_size=4, max_epochs=30, min_epochs=3, patience=2)
    fitted = train(seqs[:8], seqs[8:], cfg, TINY, seed=1)
    vals = [v for _, _, v in fitted.curve]
    assert fitted.best_val_balacc == max(vals)
    assert fitted.best_epoch == 1 + vals.index(max(vals))
    # the restored snapshot reproduces the best validation score
    val_pred = predict(fitted.model, seqs[8:]).argmax(axis=1)
    assert balanced_accuracy([s.label for s in seqs[8:]], val_pred) == fitted.best_val_balacc
    # stopping epoch is the first one allowed by the rule
    stop = len(vals)
    for e in range(cfg.min_epochs, stop + 1):
        best_e = 1 + vals[:e].index(max(vals[:e]))
        done = e - best_e >= cfg.patience or max(vals[:e]) >= 1.0
        assert done == (e == stop) or (e == cfg.max_epochs)
        if done:
            break


def test_train_config_contract():
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(min_epochs=50, max_epochs=10)
    defaults = TrainConfig()
    assert (defaults.lr, defaults.weight_decay, defaults.batch_size) == (1e-3, 1e-4, 16)
    assert (defaults.max_epochs, defaults.patience, defaults.min_epochs) == (300, 100, 40)


def test_stack_adjacency_requires_equal_lengths():
    a = DynamicGraphSequence("a", np.zeros((2, 3, 3)), np.ones((2, 3, 3), np.int8), 0)
    b = DynamicGraphSequence("b", np.zeros((1, 3, 3)), np.ones((1, 3, 3), np.int8), 1)
    with pytest.raises(ValueError):
        stack_adjacency([a, b])
    probs = predict(DGATNet(3, TINY), [a, b])
    assert probs.shape == (2, 2)


def test_dropout_only_in_training():
    rng = np.random.default_rng(4)
    model = DGATNet(6, TINY, seed=4)
    A = random_graphs(rng, 2, 3, 6)
    t1 = model.forward(A, train=True, rng=np.random.default_rng(1), update_stats=False).probs.value
    t2 = model.forward(A, train=True, rng=np.random.default_rng(2), update_stats=False).probs.value
    assert not np.allclose(t1, t2)
    logits = model.forward(A, train=False).logits
    assert isinstance(logits, ad.Tensor)
