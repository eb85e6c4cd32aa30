import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blcs import relation_net as rnet
from blcs.errors import DegenerateDataset, InvalidInput

from oracles import lstm_reference, mlp_reference, rn_reference

VOCAB = ["SC-A", "SC-B", "SC-C", "st:light", "st:heavy", "bh:route", "bh:forward", "bh:corrupt_segment"]


def small_params(seed=0, g_sizes=(96, 64, 64), f_sizes=(64, 32, 1)):
    return rnet.init_params(VOCAB, seed=seed, g_sizes=g_sizes, f_sizes=f_sizes)


def test_encoder_is_32_wide_and_matches_scalar_lstm():
    rn, enc = small_params(1)
    seq = ["<I>", "SC-A"]
    h = rnet.lstm_encode(seq, enc)
    assert h.shape == (32,)
    xs = [enc.embed[enc.token_id(t)] for t in seq]
    np.testing.assert_allclose(h, lstm_reference(xs, enc.W, enc.U, enc.b), rtol=1e-12, atol=1e-12)


def test_zero_weights_give_zero_state_and_unknown_tokens_map_to_unk():
    enc = rnet.EncoderParams.zeros(list(rnet.RESERVED) + VOCAB)
    assert np.all(rnet.lstm_encode(["<I>", "SC-A"], enc) == 0.0)
    _, enc2 = small_params(2)
    np.testing.assert_array_equal(rnet.lstm_encode(["never-seen"], enc2), rnet.lstm_encode([rnet.UNK], enc2))


def test_encode_rejects_empty_sequence():
    _, enc = small_params()
    with pytest.raises(InvalidInput):
        rnet.lstm_encode([], enc)


def test_rn_score_matches_loop_oracle():
    rn, enc = small_params(3)
    sc = rnet.RelationScorer(rn, enc)
    triples = [("SC-A", "st:light", "bh:route"), ("SC-B", "st:heavy", "bh:corrupt_segment")]
    enc_triples = [sc.encoded(t) for t in triples]
    got = rnet.rn_score(enc_triples, rn)
    ref = rn_reference(enc_triples, rn.g, rn.g_acts, rn.f, rn.f_acts)
    assert got == pytest.approx(ref, abs=1e-12)
    assert 0.0 < got < 1.0


def test_relation_vector_is_g_of_concat_ibs():
    rn, enc = small_params(4)
    sc = rnet.RelationScorer(rn, enc)
    i, b, s = sc.encoded(("SC-C", "st:light", "bh:forward"))
    ref = mlp_reference(np.concatenate([i, b, s]), rn.g, rn.g_acts)
    np.testing.assert_allclose(sc.relation_vector(("SC-C", "st:light", "bh:forward")), ref, atol=1e-12)
    assert rn.relation_dim == 64


def test_rn_score_rejects_empty_set():
    rn, _ = small_params()
    with pytest.raises(InvalidInput):
        rnet.rn_score([], rn)


@settings(max_examples=25, deadline=None)
@given(st.permutations(list(range(4))))
def test_rn_score_is_bit_identical_under_permutation(perm):
    rn, enc = small_params(5)
    sc = rnet.RelationScorer(rn, enc)
    trip = [("SC-A", "st:light", "bh:route"), ("SC-B", "st:heavy", "bh:forward"),
            ("SC-C", "st:light", "bh:corrupt_segment"), ("SC-A", "st:heavy", "bh:forward")]
    base = sc.score_set(trip)
    assert sc.score_set([trip[k] for k in perm]) == base


def test_grad_check_small_network_full_probe():
    rn, enc = small_params(6, g_sizes=(96, 8, 8), f_sizes=(8, 4, 1))
    sample = rnet.TrainSample((("SC-A", "st:light", "bh:route"), ("SC-B", "st:heavy", "bh:corrupt_segment")), 0)
    assert rnet.grad_check(rn, enc, sample) < 1e-4


def test_grad_check_flags_probes_straddling_a_relu_kink():
    rn, enc = small_params(6, g_sizes=(96, 8, 8), f_sizes=(8, 4, 1))
    sample = rnet.TrainSample((("SC-A", "st:light", "bh:route"),), 1)
    sc = rnet.RelationScorer(rn, enc)
    x = np.concatenate(sc.encoded(sample.triples[0]))
    W, b = rn.g[0]
    z = x @ W + b
    b[0] -= z[0] - 1e-7          # first hidden unit sits 1e-7 above its kink
    res = rnet.grad_check_stats(rn, enc, sample)
    assert res.kinks >= 1
    assert res.max_rel_error < 1e-4


def test_grad_check_rejects_bad_eps():
    rn, enc = small_params()
    sample = rnet.TrainSample((("SC-A", "st:light", "bh:route"),), 1)
    with pytest.raises(InvalidInput):
        rnet.grad_check(rn, enc, sample, eps=0.0)


def _separable(n=60, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        c = VOCAB[int(rng.integers(3))]
        bad = rng.random() < 0.5
        bh = "bh:corrupt_segment" if bad else ["bh:route", "bh:forward"][int(rng.integers(2))]
        stt = ["st:light", "st:heavy"][int(rng.integers(2))]
        out.append(rnet.TrainSample(((c, stt, bh),), 0 if bad else 1))
    return out


def test_training_learns_separable_data_and_is_deterministic():
    data = _separable()
    a = rnet.train(data, epochs=60, seed=7)
    b = rnet.train(data, epochs=60, seed=7)
    assert a.losses[-1] < a.losses[0]
    assert rnet.accuracy(a.rn, a.encoder, data) == 1.0
    assert rnet.dumps_model(a.rn, a.encoder) == rnet.dumps_model(b.rn, b.encoder)


def test_single_class_training_warns_degenerate():
    data = [s for s in _separable() if s.label == 1]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = rnet.train(data, epochs=2, seed=0)
    assert res.degenerate
    assert any(issubclass(w.category, DegenerateDataset) for w in caught)


def test_model_round_trip_and_version_guard():
    rn, enc = small_params(8)
    text = rnet.dumps_model(rn, enc, {"seed": 8})
    rn2, enc2 = rnet.loads_model(text)
    assert rnet.dumps_model(rn2, enc2, {"seed": 8}) == text
    bad = text.replace('"version": 1', '"version": 99')
    with pytest.raises(InvalidInput):
        rnet.loads_model(bad)


def test_train_sample_validation():
    with pytest.raises(InvalidInput):
        rnet.TrainSample((), 1)
    with pytest.raises(InvalidInput):
        rnet.TrainSample((("a", "b", "c"),), 2)
