import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seq4 import autodiff as ad
from seq4 import nn
from seq4.autodiff import Tensor, finite_difference_check
from seq4.errors import ContractError, DimensionError, ParseError

TOL = 1e-4


def lstm(rng, D, H, scale=0.5):
    p = nn.LstmParams.init(rng, D, H)
    for t in p.tensors():
        t.data = rng.standard_normal(t.shape) * scale
    return p


def attn(rng, Hq, K, A, scale=0.5):
    p = nn.AttentionParams.init(rng, Hq, K, A)
    for t in p.tensors():
        t.data = rng.standard_normal(t.shape) * scale
    return p


def test_init_layout_and_forget_bias(rng):
    p = nn.LstmParams.init(rng, 3, 5)
    assert p.W_input.shape == (20, 3) and p.W_recurrent.shape == (20, 5)
    assert np.all(p.bias.data[5:10] == nn.FORGET_BIAS)
    rest = np.concatenate([p.bias.data[:5], p.bias.data[10:], p.W_input.data.ravel()])
    assert np.all(np.abs(rest) <= nn.INIT_SCALE)


def test_lstm_step_zero_parameters(backend):
    p = nn.LstmParams(*(Tensor(np.zeros(s), requires_grad=True) for s in ((8, 1), (8, 2), (8,))))
    h, c = nn.lstm_step(p, Tensor([0.7]), nn.zeros(2), nn.zeros(2))
    assert np.all(h.data == 0) and np.all(c.data == 0)


def test_lstm_step_saturated_forget_gate(backend):
    b = np.zeros(4)
    b[1] = 50.0
    p = nn.LstmParams(Tensor(np.zeros((4, 1))), Tensor(np.zeros((4, 1))), Tensor(b))
    h, c = nn.lstm_step(p, Tensor([0.0]), nn.zeros(1), Tensor([1.0]))
    assert c.data[0] == pytest.approx(1.0, abs=1e-12)
    assert h.data[0] == pytest.approx(0.5 * np.tanh(1.0), abs=1e-12)
    assert round(h.data[0], 4) == 0.3808


def test_lstm_step_dimension_error(rng):
    p = nn.LstmParams.init(rng, 3, 2)
    with pytest.raises(DimensionError):
        nn.lstm_step(p, Tensor(np.zeros(4)), nn.zeros(2), nn.zeros(2))


def test_lstm_step_gradient(backend, rng):
    p = lstm(rng, 2, 3)
    x, h0, c0 = (Tensor(rng.standard_normal(n), requires_grad=True) for n in (2, 3, 3))
    f = lambda: ad.sum(nn.lstm_step(p, x, h0, c0)[0])  # noqa: E731
    assert finite_difference_check(f, [x, h0, c0, *p.tensors()]) < TOL


def test_bidir_single_token_structure(rng):
    fwd, bwd = lstm(rng, 4, 3), lstm(rng, 4, 3)
    emb = nn.Embedding.init(rng, 6, 4)
    out = nn.bidir_encode(fwd, bwd, emb, [5]).data
    x = Tensor(emb.matrix.data[5])
    hf, _ = nn.lstm_step(fwd, x, nn.zeros(3), nn.zeros(3))
    hb, _ = nn.lstm_step(bwd, x, nn.zeros(3), nn.zeros(3))
    np.testing.assert_allclose(out[0], np.concatenate([hf.data, hb.data]), atol=1e-14)


def test_bidir_palindrome_with_tied_directions(rng):
    p = lstm(rng, 4, 3)
    emb = nn.Embedding.init(rng, 6, 4)
    out = nn.bidir_encode(p, p, emb, [1, 4, 2, 4, 1]).data
    swapped = np.hstack([out[::-1, 3:], out[::-1, :3]])
    np.testing.assert_allclose(out, swapped, atol=1e-14)


def test_bidir_rejects_empty_and_bad_distributions(rng):
    p = lstm(rng, 4, 3)
    emb = nn.Embedding.init(rng, 3, 4)
    with pytest.raises(ContractError):
        nn.bidir_encode(p, p, emb, [])
    with pytest.raises(ContractError):
        nn.bidir_encode(p, p, emb, Tensor([[0.5, 0.2, 0.2]]))


def test_bidir_gradient_soft_and_hard(backend, rng):
    fwd, bwd = lstm(rng, 4, 3), lstm(rng, 4, 3)
    emb = nn.Embedding(Tensor(rng.standard_normal((5, 4)), requires_grad=True))
    logits = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
    R = Tensor(rng.standard_normal((4, 6)))
    params = [emb.matrix, *fwd.tensors(), *bwd.tensors()]

    def hard():
        return ad.sum(ad.mul(nn.bidir_encode(fwd, bwd, emb, [0, 3, 3, 1]), R))

    def soft():
        rows = [ad.softmax(ad.row(logits, t)) for t in range(4)]
        return ad.sum(ad.mul(nn.bidir_encode(fwd, bwd, emb, rows), R))

    assert finite_difference_check(hard, params) < TOL
    assert finite_difference_check(soft, [logits, *params]) < TOL


def test_attend_zero_parameters_is_uniform(rng):
    p = nn.AttentionParams(*(Tensor(np.zeros(s)) for s in ((2, 3), (2, 4), (2,))))
    keys = [Tensor(rng.standard_normal(4)) for _ in range(5)]
    ctx, w = nn.attend(p, Tensor(rng.standard_normal(3)), keys)
    np.testing.assert_allclose(w, np.full(5, 0.2))
    np.testing.assert_allclose(ctx.data, np.mean([k.data for k in keys], axis=0))


def test_attend_single_key(rng):
    p = attn(rng, 3, 4, 2)
    key = Tensor(rng.standard_normal(4))
    ctx, w = nn.attend(p, Tensor(rng.standard_normal(3)), [key])
    assert w.tolist() == [1.0]
    np.testing.assert_allclose(ctx.data, key.data)
    with pytest.raises(ContractError):
        nn.attend(p, Tensor(np.zeros(3)), [])


def test_attend_gradient(backend, rng):
    p = attn(rng, 3, 4, 5)
    q = Tensor(rng.standard_normal(3), requires_grad=True)
    K = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
    R = Tensor(rng.standard_normal(4))
    _, w = nn.attend(p, q, K)
    assert abs(w.sum() - 1) < 1e-6
    f = lambda: ad.sum(ad.mul(nn.attend(p, q, K)[0], R))  # noqa: E731
    assert finite_difference_check(f, [q, K, *p.tensors()]) < TOL


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 30))
def test_attention_weights_always_a_distribution(seed, scale):
    r = np.random.default_rng(seed)
    p = attn(r, 3, 4, 2, scale)
    _, w = nn.attend(p, Tensor(r.standard_normal(3) * scale), Tensor(r.standard_normal((5, 4))))
    assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-6


def test_embed_soft_cases(rng):
    emb = nn.Embedding.init(rng, 4, 3)
    M = emb.matrix.data
    onehot = np.eye(4)[2]
    assert np.array_equal(nn.embed_soft(emb, Tensor(onehot)).data, M[2])
    np.testing.assert_allclose(nn.embed_soft(emb, Tensor(np.full(4, 0.25))).data, M.mean(0))
    two = nn.Embedding(Tensor(M[:2].copy()))
    np.testing.assert_allclose(nn.embed_soft(two, Tensor([0.25, 0.75])).data,
                               0.25 * M[0] + 0.75 * M[1])
    with pytest.raises(ContractError):
        nn.embed_soft(two, Tensor([-0.5, 1.5]))


def test_one_hot_soft_embedding_is_bit_identical_to_lookup(rng):
    emb = nn.Embedding.init(rng, 7, 5)
    ids = [3, 0, 6, 6]
    hard = nn.embed_tokens(emb, ids).data
    soft = nn.embed_tokens(emb, Tensor(np.eye(7)[ids])).data
    assert np.array_equal(hard, soft)


def test_project_logits_cases(rng):
    lin = nn.Linear(Tensor(np.zeros((3, 2))), Tensor([1.0, 2.0, 3.0]))
    assert nn.project_logits(lin, Tensor([5.0, 6.0])).data.tolist() == [1.0, 2.0, 3.0]
    eye = nn.Linear(Tensor(np.eye(2)), Tensor(np.zeros(2)))
    assert nn.project_logits(eye, Tensor([1.0, 0.0])).data.tolist() == [1.0, 0.0]
    lin = nn.Linear(Tensor(rng.standard_normal((3, 2)), requires_grad=True),
                    Tensor(rng.standard_normal(3), requires_grad=True))
    h = Tensor(rng.standard_normal(2), requires_grad=True)
    f = lambda: ad.sum(ad.tanh(nn.project_logits(lin, h)))  # noqa: E731
    assert finite_difference_check(f, [h, *lin.tensors()]) < TOL


def test_param_file_round_trip_and_stability(tmp_path, rng):
    params = {"b.w": rng.standard_normal((3, 2)), "a": rng.standard_normal(4)}
    p1, p2 = tmp_path / "one.bin", tmp_path / "two.bin"
    nn.save_params(p1, params)
    nn.save_params(p2, dict(reversed(list(params.items()))))
    assert p1.read_bytes() == p2.read_bytes()
    back = nn.load_params(p1)
    assert set(back) == set(params)
    for k in params:
        assert np.array_equal(back[k], params[k])


def test_param_file_rejects_bad_magic(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTAFILE" + b"\0" * 16)
    with pytest.raises(ParseError):
        nn.load_params(bad)
