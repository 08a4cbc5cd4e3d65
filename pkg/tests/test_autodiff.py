import numpy as np
import pytest

from mimo_sarnn.autodiff import (
    GRU,
    Adam,
    Linear,
    Parameter,
    Tape,
    Tensor,
    check_gradients,
    clip_global_norm,
    debug_mode,
    load_checkpoint,
    save_checkpoint,
)
from mimo_sarnn.autodiff import functional as F
from mimo_sarnn.gradsuite import PRIMITIVES, run_suite


def _grad(fn, *tensors):
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    return [t.grad for t in tensors]


# ------------------------------------------------------------------ forward examples

def test_softmax_examples(rng):
    np.testing.assert_allclose(F.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    out = F.softmax(Tensor(rng.normal(size=(7, 9)) * 30), axis=-1).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-12)


def test_prelu_examples():
    a = Tensor(0.25)
    np.testing.assert_allclose(F.prelu(Tensor([-1.0, 2.0]), a).data, [-0.25, 2.0])


def test_layer_norm_zero_variance():
    out = F.layer_norm(Tensor([1.0, 1.0, 1.0]), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
    assert np.max(np.abs(out)) < 1e-2


def test_layer_norm_matches_direct_formula(rng):
    x = rng.normal(size=(4, 6))
    g, b = rng.normal(size=6), rng.normal(size=6)
    expect = (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + 1e-5) * g + b
    np.testing.assert_allclose(F.layer_norm(Tensor(x), Tensor(g), Tensor(b)).data, expect, atol=1e-12)


def test_attention_single_key_returns_value(rng):
    Q, K, V = rng.normal(size=(5, 3)), rng.normal(size=(1, 3)), rng.normal(size=(1, 4))
    np.testing.assert_allclose(F.scaled_dot_attention(Tensor(Q), Tensor(K), Tensor(V)).data,
                               np.repeat(V, 5, 0), atol=1e-15)


def test_attention_orthogonal_query_is_uniform(rng):
    Q = np.array([[0.0, 0.0, 1.0]])
    K = np.concatenate([rng.normal(size=(6, 2)), np.zeros((6, 1))], 1)
    V = rng.normal(size=(6, 4))
    np.testing.assert_allclose(F.scaled_dot_attention(Tensor(Q), Tensor(K), Tensor(V)).data[0],
                               V.mean(0), atol=1e-14)


def test_attention_two_by_two_hand_value():
    out = F.scaled_dot_attention(Tensor([[1.0, 0.0]]), Tensor(np.eye(2)), Tensor(np.eye(2))).data
    w = 1 / (1 + np.exp(-1 / np.sqrt(2)))  # logits [1/sqrt(2), 0]
    np.testing.assert_allclose(out, [[w, 1 - w]], atol=1e-15)
    assert w == pytest.approx(0.669762, abs=1e-6)


def test_attention_permutation_equivariant_over_keys(rng):
    Q, K, V = rng.normal(size=(2, 5, 4)), rng.normal(size=(2, 7, 4)), rng.normal(size=(2, 7, 3))
    perm = rng.permutation(7)
    a = F.scaled_dot_attention(Tensor(Q), Tensor(K), Tensor(V)).data
    b = F.scaled_dot_attention(Tensor(Q), Tensor(K[:, perm]), Tensor(V[:, perm])).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_attention_weights_rows_sum_to_one(rng):
    _, w = F.scaled_dot_attention(Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(5, 4))),
                                  Tensor(rng.normal(size=(5, 2))), return_weights=True)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-12)


def _zero_gru(n_in, H):
    gru = GRU(n_in, H, np.random.default_rng(0))
    for p in gru.parameters():
        p.data = np.zeros_like(p.data)
    return gru


def test_gru_zero_params_halves_state(rng):
    gru = _zero_gru(3, 4)
    h = rng.normal(size=(2, 4))
    out = F.gru_step(Tensor(rng.normal(size=(2, 3))), Tensor(h), gru.step_params()).data
    np.testing.assert_allclose(out, 0.5 * h, atol=1e-15)
    np.testing.assert_array_equal(F.gru_step(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))),
                                             gru.step_params()).data, 0.0)


def test_gru_sequence_matches_step_loop(rng):
    gru = GRU(3, 4, rng)
    x = rng.normal(size=(2, 6, 3))
    h = Tensor(np.zeros((2, 4)))
    steps = []
    for t in range(6):
        h = F.gru_step(Tensor(x[:, t]), h, gru.step_params())
        steps.append(h.data)
    np.testing.assert_allclose(gru(Tensor(x)).data, np.stack(steps, 1), atol=1e-12)


def test_gru_cell_gradcheck_four_dim(rng):
    gru = GRU(4, 4, rng)
    x, h = Parameter(rng.normal(size=(2, 4))), Parameter(rng.normal(size=(2, 4)))
    w = rng.normal(size=(2, 4))
    fn = lambda: F.sum(F.gru_step(x, h, gru.step_params()) * w)
    assert check_gradients(fn, [x, h] + gru.parameters()) < 1e-5


def test_conv_identity_kernels(rng):
    x = rng.normal(size=(10, 1))
    np.testing.assert_array_equal(F.dilated_conv1d(Tensor(x), Tensor([1.0])).data, x)
    np.testing.assert_array_equal(F.dilated_conv1d(Tensor(x), Tensor([0.0, 1.0, 0.0])).data, x)


def test_conv_impulse_dilation_two():
    x = np.zeros((11, 1))
    x[5] = 1.0
    k = np.array([2.0, 3.0, 5.0])
    y = F.dilated_conv1d(Tensor(x), Tensor(k), dilation=2).data[:, 0]
    # correlation form: reading y at offsets -2, 0, +2 gives the kernel reversed
    np.testing.assert_array_equal(y[[3, 5, 7]], k[::-1])
    assert np.count_nonzero(y) == 3


def test_conv_causal_uses_only_past(rng):
    x = rng.normal(size=(8, 2))
    k = rng.normal(size=(3, 2, 2))
    y = F.dilated_conv1d(Tensor(x), Tensor(k), dilation=2, padding="causal").data
    x2 = x.copy()
    x2[5:] += 10
    y2 = F.dilated_conv1d(Tensor(x2), Tensor(k), dilation=2, padding="causal").data
    np.testing.assert_array_equal(y[:5], y2[:5])


def test_linear_width_mismatch_raises(rng):
    with pytest.raises(ValueError):
        F.linear(Tensor(rng.normal(size=(2, 3))), Tensor(rng.normal(size=(4, 5))))


# ------------------------------------------------------------------ backward

def test_backward_sum_is_ones(rng):
    x = Tensor(rng.normal(size=(3, 4)))
    (g,) = _grad(lambda: F.sum(x), x)
    np.testing.assert_array_equal(g, 1.0)


def test_unordered_sum_is_bitwise_permutation_invariant(rng):
    # magnitudes spread over many decades so that plain summation order matters
    x = rng.normal(size=(5, 200)) * 10.0 ** rng.integers(-8, 8, size=(5, 200))
    perm = [3, 0, 4, 2, 1]
    assert not np.array_equal(x.sum(axis=0), x[perm].sum(axis=0))
    a = F.unordered_sum(Tensor(x), axis=0).data
    np.testing.assert_array_equal(a, F.unordered_sum(Tensor(x[perm]), axis=0).data)
    np.testing.assert_allclose(a, x.sum(axis=0), rtol=1e-12)
    xt = Tensor(x)
    (g,) = _grad(lambda: F.sum(F.unordered_sum(xt, axis=0)), xt)
    np.testing.assert_array_equal(g, 1.0)


def test_backward_quadratic_form(rng):
    W, x = Tensor(rng.normal(size=(3, 4))), rng.normal(size=4)
    (g,) = _grad(lambda: F.sum(F.square(F.matmul(W, Tensor(x)))) * 0.5, W)
    np.testing.assert_allclose(g, np.outer(W.data @ x, x), atol=1e-12)


def test_composite_net_gradcheck(rng):
    lin = Linear(5, 4, rng)
    alpha = Parameter(np.array(0.25))
    gamma, beta = Parameter(rng.normal(size=4)), Parameter(rng.normal(size=4))
    x = rng.normal(size=(2, 6, 5))

    def fn():
        h = F.prelu(lin(x), alpha)
        h = F.scaled_dot_attention(h, h, h)
        return F.sum(F.square(F.layer_norm(h, gamma, beta)) * 0.3 + F.layer_norm(h, gamma, beta))
    assert check_gradients(fn, lin.parameters() + [alpha, gamma, beta], kink_tol=1e-3) < 1e-4


def test_gradient_accumulates_over_reuse(rng):
    x = Tensor(rng.normal(size=3))
    (g,) = _grad(lambda: F.sum(x * x + x), x)
    np.testing.assert_allclose(g, 2 * x.data + 1)


def test_backward_errors():
    x = Parameter(np.ones(3))
    with Tape() as tape:
        y = F.sum(x * 2.0)
    with pytest.raises(ValueError):
        tape.backward(x * 1.0)
    with Tape() as other:
        pass
    with pytest.raises(RuntimeError):
        other.backward(y)
    tape.backward(y)
    with pytest.raises(RuntimeError):
        tape.record(None)


def test_debug_tripwire():
    with debug_mode(), np.errstate(invalid="ignore"):
        with pytest.raises(FloatingPointError):
            F.log(Tensor([-1.0]))
    with np.errstate(invalid="ignore"):
        assert np.isnan(F.log(Tensor([-1.0])).data[0])


def test_no_recording_outside_tape(rng):
    W = Parameter(rng.normal(size=(3, 3)))
    out = F.matmul(Tensor(rng.normal(size=(2, 3))), W)
    assert not out.requires_grad


def test_forward_is_bitwise_deterministic(rng):
    gru = GRU(5, 6, rng)
    x = rng.normal(size=(3, 10, 5))
    np.testing.assert_array_equal(gru(Tensor(x)).data, gru(Tensor(x)).data)


def test_float32_constants_keep_dtype(rng):
    x = Tensor(rng.normal(size=4).astype(np.float32))
    for out in (x * 0.5, x + 1.0, 2.0 - x, x / 3.0, F.sigmoid(x), F.prelu(x, Tensor(np.float32(0.25)))):
        assert out.dtype == np.float32


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_twenty_instances(name):
    (res,) = run_suite(instances=20, seed=hash(name) % 1000, names=[name])
    assert res.worst < 1e-4, f"{name}: {res.worst:.2e}"


def test_composite_beamformer_gradients():
    (res,) = run_suite(seed=3, names=["composite"], composite_instances=2)
    assert res.passed, (res.worst, res.skipped)


# ------------------------------------------------------------------ optimizer

def test_adam_first_step_moves_by_lr():
    p = Parameter(np.array(1.0))
    p.grad = np.array(1.0)
    Adam([p], lr=1e-4).step()
    assert 1.0 - p.data == pytest.approx(1e-4, rel=1e-3)


def test_adam_zero_lr_leaves_params(rng):
    p = Parameter(rng.normal(size=5))
    before = p.data.copy()
    opt = Adam([p], lr=0.0)
    for _ in range(3):
        p.grad = rng.normal(size=5)
        opt.step()
    np.testing.assert_array_equal(p.data, before)
    assert opt.step_count == 3


def test_adam_matches_reference_update(rng):
    p = Parameter(rng.normal(size=4))
    x0 = p.data.copy()
    gs = [rng.normal(size=4) for _ in range(3)]
    opt = Adam([p], lr=1e-2)
    for g in gs:
        p.grad = g
        opt.step()
    m = v = np.zeros(4)
    x = x0
    for t, g in enumerate(gs, 1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x - 1e-2 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, x, atol=1e-14)


def test_clip_global_norm():
    g = [np.array([3.0, 0.0]), np.array([4.0])]
    same, norm = clip_global_norm(g, 10)
    assert norm == 5 and all(np.array_equal(a, b) for a, b in zip(same, g))
    big = [x * 4 for x in g]
    scaled, norm = clip_global_norm(big, 10)
    assert norm == 20
    for a, b in zip(scaled, big):
        np.testing.assert_allclose(a, 0.5 * b)


def test_adam_clips_before_update():
    p = Parameter(np.zeros(2))
    p.grad = np.array([30.0, 40.0])
    assert Adam([p], lr=1e-3, clip_norm=10).step() == pytest.approx(50.0)


# ------------------------------------------------------------------ checkpoint

def test_checkpoint_round_trip_bitexact(tmp_path, rng):
    state = {"a.weight": rng.normal(size=(3, 4)), "b": np.array(0.25), "gru.U_h": rng.normal(size=(2, 2, 2))}
    save_checkpoint(tmp_path / "m.ckpt", state)
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert list(back) == list(state)
    for k in state:
        assert back[k].shape == state[k].shape
        assert back[k].tobytes() == state[k].tobytes()


def test_checkpoint_rejects_bad_files(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", {"x": np.ones(2)})
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "v.ckpt").write_bytes(b"\x02" + raw[1:])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "v.ckpt")
    (tmp_path / "t.ckpt").write_bytes(raw + b"\x00")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "t.ckpt")


def test_module_state_dict_validation(rng):
    lin = Linear(3, 2, rng)
    state = lin.state_dict()
    with pytest.raises(KeyError):
        lin.load_state_dict({"weight": state["weight"]})
    with pytest.raises(ValueError):
        lin.load_state_dict({"weight": np.zeros((2, 3)), "bias": state["bias"]})
