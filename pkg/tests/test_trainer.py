import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seq4.autodiff import Tensor
from seq4.corpus import EOS
from seq4.errors import ContractError, NumericalError
from seq4.toy import to_instances, toy_config, toy_pairs, toy_vocabs
from seq4.trainer import (FRACTIONS, Instance, SplitSpec, TrainConfig, ablation_split,
                          build_model, crossval_folds, eval_exact_match, infer_latent_ratio,
                          sgd_step, split_indices, substream, train, weighted_accuracy)

SMALL = dict(hidden_size=8, embedding_size=4, attention_size=4, epochs=2)


def toy_data(n_pairs=6, n_unpaired=6):
    vx, vy = toy_vocabs()
    paired = to_instances(toy_pairs(n_pairs, 1), vx, vy)
    unpaired = to_instances(toy_pairs(n_unpaired, 2), vx, vy, with_x=False)
    return vx, vy, paired, unpaired


def fresh(cfg, vx, vy, paired):
    return build_model(cfg, len(vx), len(vy), latent_ratio=infer_latent_ratio(paired))


def run(cfg, paired, unpaired):
    vx, vy, _, _ = toy_data()
    model = fresh(cfg, vx, vy, paired)
    return train(model, paired, unpaired, cfg)


# ---------------------------------------------------------------- sgd

def params_and_grads(values):
    return {k: Tensor(np.array(v, dtype=float)) for k, v in values.items()}


def test_zero_gradients_leave_parameters_unchanged():
    p = params_and_grads({"a": [1.0, 2.0]})
    sgd_step(p, {"a": np.zeros(2)}, TrainConfig())
    assert p["a"].data.tolist() == [1.0, 2.0]


def test_unit_learning_rate_subtracts_gradient():
    p = params_and_grads({"a": [1.0, 2.0], "b": [0.5]})
    g = {"a": np.array([0.25, -0.5]), "b": None}
    norm = sgd_step(p, g, TrainConfig(learning_rate=1.0, grad_clip_norm=5.0))
    assert p["a"].data.tolist() == [0.75, 2.5] and p["b"].data.tolist() == [0.5]
    assert norm == pytest.approx(math.sqrt(0.25 ** 2 + 0.5 ** 2))


def test_clipping_bounds_the_update():
    p = params_and_grads({"a": [0.0, 0.0], "b": [0.0]})
    g = {"a": np.array([6.0, 0.0]), "b": np.array([8.0])}       # norm 10
    lr = 0.3
    assert sgd_step(p, g, TrainConfig(learning_rate=lr, grad_clip_norm=1.0)) == 10.0
    update = np.concatenate([p["a"].data, p["b"].data])
    assert np.linalg.norm(update) <= lr * 1.0 + 1e-12
    np.testing.assert_allclose(update, -lr * np.array([0.6, 0.0, 0.8]))


def test_non_finite_gradient_names_the_parameter():
    p = params_and_grads({"enc.w": [1.0], "dec.w": [1.0]})
    with pytest.raises(NumericalError, match="dec.w"):
        sgd_step(p, {"enc.w": np.zeros(1), "dec.w": np.array([np.nan])}, TrainConfig())
    assert p["enc.w"].data.tolist() == [1.0]


# ---------------------------------------------------------------- config

@pytest.mark.parametrize("bad", [dict(unsup_batch_prob=1.5), dict(learning_rate=0),
                                 dict(alpha=-1), dict(epochs=-1), dict(hidden_size=0)])
def test_config_validation(bad):
    with pytest.raises(ContractError):
        TrainConfig(**bad).validate()


def test_substreams_are_independent_and_reproducible():
    a = substream(3, "schedule").random(4)
    assert np.array_equal(a, substream(3, "schedule").random(4))
    assert not np.array_equal(a, substream(3, "data-shuffle").random(4))
    assert not np.array_equal(a, substream(4, "schedule").random(4))


# ---------------------------------------------------------------- training

def flat(model):
    return {k: v.copy() for k, v in model.state_dict().items()}


def same_state(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def test_empty_unpaired_reproduces_supervised_trajectory():
    _, _, paired, _ = toy_data()
    base = run(toy_config(unsup_batch_prob=0.0, **SMALL), paired, [])
    for lam in (0.3, 0.9):
        other = run(toy_config(unsup_batch_prob=lam, **SMALL), paired, [])
        assert other.history == base.history
        assert same_state(flat(other.model), flat(base.model))


def test_zero_lambda_never_touches_unpaired_data():
    _, _, paired, unpaired = toy_data()
    res = run(toy_config(unsup_batch_prob=0.0, **SMALL), paired, unpaired)
    assert {k for _, k, _ in res.history} == {"sup"}
    assert len(res.history) == 2 * len(paired)


def test_semi_supervised_schedule_mixes_steps():
    _, _, paired, unpaired = toy_data()
    res = run(toy_config(unsup_batch_prob=0.5, **SMALL), paired, unpaired)
    kinds = [k for _, k, _ in res.history]
    assert len(kinds) == 2 * math.ceil(len(paired) / 0.5)
    assert set(kinds) == {"sup", "unsup"}
    assert [s for s, _, _ in res.history] == list(range(len(kinds)))
    assert all(math.isfinite(v) for _, _, v in res.history)


def test_only_unsupervised_steps_at_lambda_one():
    _, _, paired, unpaired = toy_data()
    res = run(toy_config(unsup_batch_prob=1.0, **SMALL), paired, unpaired)
    assert [k for _, k, _ in res.history] == ["unsup"] * (2 * len(unpaired))


def test_training_is_bit_reproducible():
    _, _, paired, unpaired = toy_data()
    cfg = toy_config(unsup_batch_prob=0.5, **SMALL)
    a, b = run(cfg, paired, unpaired), run(cfg, paired, unpaired)
    assert a.history == b.history
    assert same_state(flat(a.model), flat(b.model))
    c = run(toy_config(unsup_batch_prob=0.5, seed=1, **SMALL), paired, unpaired)
    assert c.history != a.history


def test_training_reduces_supervised_loss():
    vx, vy, paired, _ = toy_data(n_pairs=30)
    cfg = toy_config(hidden_size=16, embedding_size=8, attention_size=8, epochs=6)
    res = train(fresh(cfg, vx, vy, paired), paired, [], cfg)
    per_epoch = np.array([v for _, _, v in res.history]).reshape(6, -1)
    medians = np.median(per_epoch, axis=1)
    assert medians[-1] < medians[0]


def test_training_rejects_bad_input():
    vx, vy, paired, unpaired = toy_data()
    cfg = toy_config(**SMALL)
    m = fresh(cfg, vx, vy, paired)
    with pytest.raises(ContractError):
        train(m, [], unpaired, cfg)
    with pytest.raises(ContractError):
        train(m, [Instance([4, 5], [4, EOS])], [], cfg)
    with pytest.raises(ContractError):
        train(m, [Instance([4, EOS])], [], cfg)


def test_non_finite_loss_aborts():
    vx, vy, paired, _ = toy_data()
    cfg = toy_config(**SMALL)
    m = fresh(cfg, vx, vy, paired)
    t = m.parameters()["dec_y.out.bias"]
    t.data = np.full(t.shape, np.nan)
    with pytest.raises(NumericalError):
        train(m, paired, [], cfg)


def test_early_stopping_restores_best_parameters():
    vx, vy, paired, _ = toy_data()
    cfg = toy_config(patience=1, **{**SMALL, "epochs": 5})
    m = fresh(cfg, vx, vy, paired)
    res = train(m, paired, [], cfg, validation=paired[:3])
    assert 1 <= res.epochs_run <= 5 and len(res.validation) == res.epochs_run
    assert res.best_epoch == int(np.argmax(res.validation))
    assert eval_exact_match(m, paired[:3], cfg.max_decode_len) == max(res.validation)


def test_loss_log_lines():
    vx, vy, paired, _ = toy_data()
    buf = io.StringIO()
    cfg = toy_config(**SMALL)
    res = train(fresh(cfg, vx, vy, paired), paired, [], cfg, log=buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == len(res.history)
    step, kind, value = lines[0].split("\t")
    assert (int(step), kind, float(value)) == res.history[0]


# ---------------------------------------------------------------- evaluation

ITEMS = [Instance([4, 5, EOS], [4, EOS]), Instance([6, EOS], [4, EOS]),
         Instance([4, EOS], [5, EOS]), Instance([5, 5, EOS], [5, EOS])]


def test_eval_with_stub_models():
    assert eval_exact_match(lambda it: it.y[:-1], ITEMS) == 1.0
    assert eval_exact_match(lambda it: [], ITEMS) == 0.0
    wrong_last = lambda it: [] if it is ITEMS[3] else it.y[:-1]  # noqa: E731
    assert eval_exact_match(wrong_last, ITEMS) == 0.75


def test_eval_needs_items():
    with pytest.raises(ContractError):
        eval_exact_match(lambda it: [], [])


# ---------------------------------------------------------------- splits

def test_five_percent_of_600():
    data = [Instance([4, EOS], [5, EOS]) for _ in range(600)]
    paired, pool = ablation_split(data, SplitSpec(0.05, "minus"), seed=0)
    assert len(paired) == 30 and len(pool) == 570
    assert all(p.x is None for p in pool)
    assert ablation_split(data, SplitSpec(0.05, "supervised"), seed=0)[1] == []


def test_full_fraction_minus_has_empty_pool():
    data = list(range(40))
    paired, pool = ablation_split(data, SplitSpec(1.0, "minus"), seed=3)
    assert paired == data and pool == []


def test_plus_mode_uses_generated_pool():
    data = list(range(40))
    gen = ["g1", "g2"]
    assert ablation_split(data, SplitSpec(0.5, "plus"), 0, generated=gen)[1] == gen
    with pytest.raises(ContractError):
        ablation_split(data, SplitSpec(0.5, "plus"), 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(20, 700), st.sampled_from(FRACTIONS), st.integers(0, 10**6))
def test_split_properties(n, frac, seed):
    kept, rest = split_indices(n, frac, seed)
    assert (kept, rest) == split_indices(n, frac, seed)
    assert set(kept).isdisjoint(rest) and sorted(kept + rest) == list(range(n))
    assert len(kept) == math.floor(frac * n + 0.5)


def test_split_errors():
    with pytest.raises(ContractError):
        split_indices(19, 0.5, 0)
    with pytest.raises(ContractError):
        SplitSpec(0.3)
    with pytest.raises(ContractError):
        SplitSpec(0.5, "both")


def test_crossval_folds_and_weights():
    folds = crossval_folds({"grid": [1], "jelly": [2], "l": [3]})
    assert [f.test for f in folds] == ["grid", "jelly", "l"]
    assert folds[1].train == ("grid", "l")
    sizes = (100, 200, 300)
    weights = [weighted_accuracy([(float(i == j), n) for j, n in enumerate(sizes)])
               for i in range(3)]
    assert weights == pytest.approx([1 / 6, 1 / 3, 1 / 2])
    assert weighted_accuracy([(0.4, n) for n in sizes]) == pytest.approx(0.4)
    assert weighted_accuracy([(0, 5), (1, 5), (0, 5)]) == pytest.approx(1 / 3)
    with pytest.raises(ContractError):
        crossval_folds({"a": 1, "b": 2})
