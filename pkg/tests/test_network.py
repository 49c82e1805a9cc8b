import math
import struct

import numpy as np
import pytest

from kanbasis.data import Dataset, synth_regression, xor
from kanbasis.errors import ConfigError, DataError, FormatError, NumericError
from kanbasis.layers import KanLayer, LayerNorm, LinearLayer
from kanbasis.basis import make_basis
from kanbasis.network import (
    Network,
    NetworkSpec,
    TrainConfig,
    build,
    cross_entropy,
    dumps,
    evaluate,
    load,
    loads,
    mse,
    save,
    train,
)

FAMILIES = ["spline", "rbf"]


def fd(loss, arr, eps=1e-5):
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        keep = arr[idx]
        arr[idx] = keep + eps
        up = loss()
        arr[idx] = keep - eps
        down = loss()
        arr[idx] = keep
        out[idx] = (up - down) / (2 * eps)
    return out


def rel_err(a, b):
    return np.abs(a - b).max() / max(np.abs(a).max(), np.abs(b).max(), 1e-300)


def test_build_mnist_shapes():
    net = build(NetworkSpec((784, 64, 10), family="rbf", basis_count=8))
    kinds = [layer.kind for layer in net.layers]
    assert kinds == ["layernorm", "kan", "layernorm", "kan"]
    assert net.layers[1].weights.shape == (64, 784 * 8)
    assert net.layers[3].weights.shape == (10, 64 * 8)
    assert net.in_dim == 784 and net.out_dim == 10


def test_build_spline_has_no_norm():
    net = build(NetworkSpec((100, 100), family="spline"))
    assert [layer.kind for layer in net.layers] == ["kan"]
    assert net.layers[0].weights.shape == (100, 800)


@pytest.mark.parametrize("family", FAMILIES)
def test_minimal_net(family):
    net = build(NetworkSpec((2, 1), family=family))
    assert net.forward(np.zeros((3, 2))).shape == (3, 1)


def test_layernorm_placements():
    kinds = lambda placement: [l.kind for l in build(NetworkSpec((3, 4, 5, 2), layernorm=placement)).layers]
    assert kinds("hidden") == ["kan", "layernorm", "kan", "layernorm", "kan"]
    assert kinds("none") == ["kan"] * 3
    assert build(NetworkSpec((3, 4, 2), linear_head=True)).layers[-1].kind == "linear"


def test_chain_mismatch():
    basis = make_basis("rbf", 8)
    with pytest.raises(ConfigError, match="layer 1"):
        Network([KanLayer(2, 3, basis, rng=0), KanLayer(4, 1, basis, rng=0)])
    with pytest.raises(ConfigError):
        NetworkSpec((5,))


def test_build_is_seeded():
    a = build(NetworkSpec((3, 4, 2), seed=7))
    b = build(NetworkSpec((3, 4, 2), seed=7))
    c = build(NetworkSpec((3, 4, 2), seed=8))
    for (_, pa, _), (_, pb, _), (_, pc, _) in zip(a.parameters(), b.parameters(), c.parameters()):
        assert np.array_equal(pa, pb)
    assert not np.array_equal(a.layers[1].weights, c.layers[1].weights)


def test_single_layer_net_equals_layer(rng):
    layer = KanLayer(3, 2, make_basis("spline", 8), rng=rng)
    x = rng.uniform(-2, 2, (4, 3))
    np.testing.assert_array_equal(Network([layer]).forward(x), layer.forward(x))


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("head", [False, True])
def test_network_gradients(family, head, rng):
    widths = (2, 3, 3, 2) if head else (2, 3, 2)
    net = build(NetworkSpec(widths, family=family, linear_head=head, seed=3))
    x = rng.uniform(-1.5, 1.5, (3, 2))
    labels = np.array([0, 1, 1])
    loss = lambda: cross_entropy(net.forward(x), labels)[0]
    _, g = cross_entropy(net.forward(x), labels)
    grad_in = net.backward(g)
    grads = {k: v.copy() for k, v in net.gradients().items()}
    assert rel_err(grad_in, fd(loss, x)) < 1e-4
    for name, p, _ in net.parameters():
        assert rel_err(grads[name], fd(loss, p)) < 1e-4, name


def test_input_permutation_symmetry(rng):
    net = build(NetworkSpec((3, 2), family="spline", seed=1))
    x = rng.uniform(-2, 2, (4, 3))
    out = net.forward(x)
    w = net.layers[0].weights.reshape(2, 3, 8)
    swapped = w[:, [2, 1, 0], :].reshape(2, 24)
    net2 = Network([KanLayer(3, 2, net.layers[0].basis, weights=swapped)])
    np.testing.assert_allclose(net2.forward(x[:, [2, 1, 0]]), out, rtol=1e-14, atol=1e-15)


def test_cross_entropy_values():
    loss, _ = cross_entropy(np.zeros((3, 10)), np.array([0, 4, 9]))
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    logits = np.zeros((1, 10))
    logits[0, 0] = 100.0
    loss, _ = cross_entropy(logits, np.array([0]))
    assert loss == pytest.approx(0.0, abs=1e-40)


def test_cross_entropy_gradient(rng):
    logits = rng.standard_normal((4, 5))
    labels = np.array([0, 3, 4, 1])
    _, g = cross_entropy(logits, labels)
    num = fd(lambda: cross_entropy(logits, labels)[0], logits, eps=1e-6)
    np.testing.assert_allclose(g, num, atol=1e-6)


def test_cross_entropy_bad_label():
    with pytest.raises(DataError):
        cross_entropy(np.zeros((2, 3)), np.array([0, 3]))


def test_mse_gradient(rng):
    out = rng.standard_normal((4, 2))
    tgt = rng.standard_normal((4, 2))
    _, g = mse(out, tgt)
    np.testing.assert_allclose(g, fd(lambda: mse(out, tgt)[0], out), atol=1e-8)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop")


@pytest.mark.parametrize("optimizer", ["adam", "sgd"])
def test_zero_learning_rate_is_noop(optimizer):
    net = build(NetworkSpec((2, 4, 2), seed=0))
    before = net.copy_params()
    pre = evaluate(net, xor())
    recs = train(net, xor(), TrainConfig(epochs=1, batch_size=2, learning_rate=0.0, optimizer=optimizer))
    for name, p, _ in net.parameters():
        assert np.array_equal(p, before[name])
    assert (recs[0].val_loss, recs[0].val_accuracy) == pre


@pytest.mark.parametrize("family", FAMILIES)
def test_xor_reaches_full_accuracy(family):
    net = build(NetworkSpec((2, 4, 2), family=family, seed=0))
    recs = train(net, xor(), TrainConfig(epochs=2000, batch_size=4, learning_rate=1e-2))
    assert recs[-1].val_accuracy == 1.0


def test_training_is_deterministic():
    data = synth_regression("product", 64, seed=1)
    cfg = TrainConfig(epochs=3, batch_size=16, loss="mse", seed=5)
    runs = []
    for _ in range(2):
        net = build(NetworkSpec((2, 5, 1), seed=2))
        recs = train(net, data, cfg)
        runs.append((recs, net.copy_params()))
    assert runs[0][0] == runs[1][0]
    for name in runs[0][1]:
        assert np.array_equal(runs[0][1][name], runs[1][1][name])


@pytest.mark.parametrize("family", FAMILIES)
def test_loss_decreases_with_defaults(family):
    cfg = TrainConfig(epochs=5)
    net = build(NetworkSpec((2, 4, 2), family=family))
    start, _ = evaluate(net, xor())
    assert train(net, xor(), cfg)[-1].val_loss < start

    data = synth_regression("sine", 256, seed=0)
    # a single input feature has no spread to normalise, so skip the first layernorm
    net = build(NetworkSpec((1, 8, 1), family=family, layernorm="hidden"))
    reg_cfg = TrainConfig(epochs=5, loss="mse")
    start, acc = evaluate(net, data, "mse")
    assert acc is None
    assert train(net, data, reg_cfg)[-1].val_loss < start


def test_nan_aborts_with_diagnostics():
    x = np.array([[0.0, np.nan], [1.0, 1.0]])
    data = Dataset(x, np.array([0, 1]), num_classes=2)
    with pytest.raises(NumericError) as info:
        train(build(NetworkSpec((2, 2), family="spline")), data, TrainConfig(epochs=2, batch_size=2))
    assert info.value.epoch == 1 and info.value.batch == 0
    assert "max |param|" in str(info.value)


def test_epoch_records_stream():
    seen = []
    recs = train(build(NetworkSpec((2, 3, 2))), xor(), TrainConfig(epochs=3, batch_size=2), on_epoch=seen.append)
    assert seen == recs and [r.epoch for r in recs] == [1, 2, 3]
    assert all(0.0 <= r.val_accuracy <= 1.0 for r in recs)


@pytest.mark.parametrize("family", FAMILIES)
def test_save_load_roundtrip(family, tmp_path, rng):
    net = build(NetworkSpec((3, 5, 2), family=family, linear_head=True, seed=4))
    x = rng.uniform(-2, 2, (6, 3))
    path = tmp_path / "model.kanf"
    save(net, path)
    again = load(path)
    assert path.read_bytes()[:4] == b"KANF"
    assert np.array_equal(again.forward(x), net.forward(x))
    assert again.spec == net.spec


def test_truncated_file(tmp_path):
    blob = dumps(build(NetworkSpec((3, 4, 2))))
    for cut in (2, 10, len(blob) // 2, len(blob) - 1):
        with pytest.raises(FormatError):
            loads(blob[:cut])


def test_bad_magic_and_version():
    blob = dumps(build(NetworkSpec((3, 2))))
    with pytest.raises(FormatError, match="magic"):
        loads(b"XXXX" + blob[4:])
    with pytest.raises(FormatError, match="version"):
        loads(blob[:4] + struct.pack("<I", 99) + blob[8:])


def test_mismatched_declared_shape_names_layer():
    net = build(NetworkSpec((2, 3, 2), family="spline"))
    blob = bytearray(dumps(net))
    (spec_len,) = struct.unpack_from("<I", blob, 8)
    first = 12 + spec_len + 4
    layer0 = 1 + struct.calcsize("<IIBIIddd") + 8 * net.layers[0].weights.size
    # second layer declares 4 inputs instead of 3
    struct.pack_into("<I", blob, first + layer0 + 1, 4)
    with pytest.raises(FormatError, match="layer 1"):
        loads(bytes(blob))


def test_chain_mismatch_in_file():
    a = build(NetworkSpec((2, 3), family="spline"))
    b = build(NetworkSpec((4, 2), family="spline"))
    blob_a, blob_b = dumps(a), dumps(b)
    body = lambda blob: blob[12 + struct.unpack_from("<I", blob, 8)[0] + 4 :]
    spliced = blob_a[:8] + struct.pack("<I", 0) + struct.pack("<I", 2) + body(blob_a) + body(blob_b)
    with pytest.raises(FormatError, match="layer 1"):
        loads(spliced)
