import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from actforecast.data import ActionSpan, VideoRecord, generate_corpus, load_profile
from actforecast.errors import ContractError, ValidationError
from actforecast.losses import LOSS_VARIANTS, LossConfig
from actforecast.metrics import seq_item_accuracy
from actforecast.models import (ActionVocabulary, LstmForecaster, MlpForecaster, RandomForecaster, SeqForecaster,
                                TrainConfig, TrainExample, WeakForecaster, augment_sequences, build_model, fit,
                                forecast_frames_supervised, forecast_frames_weak, forecast_sequence,
                                initialize, load_checkpoint, protocol_examples, random_forecast,
                                read_checkpoint, save_checkpoint, train_step, train_step_weak, training_examples)
from actforecast.models.decoder import DecodeResult
from actforecast.models.seqforecast import evaluate_loss
from actforecast.models.weak import frame_scores
from actforecast.nn import Adam
from actforecast.tensor import Tensor

VOCAB = ActionVocabulary(("a", "b", "c", "d"))
D = 6


def video(labels, lengths=None, dim=D, seed=0, vid="v0"):
    lengths = lengths or [3] * len(labels)
    spans, start = [], 0
    for label, n in zip(labels, lengths):
        spans.append(ActionSpan(label, start, start + n))
        start += n
    feats = np.random.default_rng(seed).normal(size=(start, dim))
    return VideoRecord(vid, feats, spans)


def example(obs=("a", "b"), fut=("c", "d"), seed=0):
    rec = video(list(obs) + list(fut), seed=seed)
    return augment_sequences(rec)[len(obs) - 1]


def seq_model(seed=0, max_len=8):
    return initialize(SeqForecaster(VOCAB, D, 8, max_len), seed)


# ---------------------------------------------------------------- vocab


def test_vocabulary_reserved_symbols():
    assert (VOCAB.eos, VOCAB.sos, VOCAB.output_size, VOCAB.input_size) == (4, 5, 5, 6)
    assert VOCAB.onehot_input(VOCAB.sos)[0].tolist() == [0, 0, 0, 0, 0, 1]
    with pytest.raises(ContractError):
        VOCAB.index("zzz")
    with pytest.raises(ContractError):
        ActionVocabulary(("a", "a"))


# ---------------------------------------------------------- augmentation


def test_augment_counts():
    assert len(augment_sequences(video(list("abc")))) == 2
    (only,) = augment_sequences(video(list("ab")))
    assert only.observed == ["a"] and only.future == ["b"]
    assert augment_sequences(video(list("a"))) == []


def test_augment_cuts_features_at_action_boundaries():
    rec = video(list("abc"), [2, 3, 4])
    exs = augment_sequences(rec)
    assert [len(e.features) for e in exs] == [2, 5]
    np.testing.assert_array_equal(exs[1].features, rec.features[:5])


@given(st.lists(st.sampled_from("abcd"), min_size=2, max_size=8))
def test_augment_partitions_the_sequence(labels):
    labels = [x for i, x in enumerate(labels) if i == 0 or x != labels[i - 1]]
    rec = video(labels, [1] * len(labels))
    exs = augment_sequences(rec)
    assert len(exs) == max(0, len(labels) - 1)
    for t, ex in enumerate(exs, 1):
        assert ex.observed + ex.future == labels and len(ex.observed) == t


def test_protocol_examples_carry_frame_labels():
    rec = video(list("abcd"), [5, 5, 5, 5])
    (ex,) = protocol_examples(rec, ["20:30"])
    assert len(ex.features) == 4 and ex.num_future_frames == 6
    assert ex.future_frames == list("abbbbb") and ex.future == ["a", "b"]
    assert ex.observed == ["a"]


# ---------------------------------------------------------- seqforecast


def test_zero_cap_gives_empty_forecast():
    assert forecast_sequence(seq_model(), np.ones((3, D)), max_len=0) == []


def test_immediate_eos_gives_empty_forecast():
    m = seq_model()
    m.decoder.output.bias.data[0, VOCAB.eos] = 100.0
    fc = m.forecast(np.ones((3, D)))
    assert fc.symbols == [] and fc.step_probs.shape == (1, VOCAB.num_classes)


@settings(max_examples=15)
@given(st.integers(0, 1000), st.integers(1, 6))
def test_decoding_terminates_within_cap(seed, cap):
    m = seq_model(seed, cap)
    m.decoder.output.bias.data[0, VOCAB.eos] = -100.0  # never stop on its own
    x = np.random.default_rng(seed).normal(size=(4, D))
    assert len(forecast_sequence(m, x)) == cap


def test_forecast_is_deterministic(rng):
    m, x = seq_model(), rng.normal(size=(5, D))
    assert m.forecast(x).symbols == m.forecast(x).symbols


def test_forecast_rejects_empty_input():
    with pytest.raises(ContractError):
        seq_model().forecast(np.zeros((0, D)))


def test_decoder_starts_from_last_encoder_state(rng):
    m = seq_model()
    memory = m.encode(rng.normal(size=(4, D)))
    recorded = []
    original = m.decoder.cell._step
    m.decoder.cell._step = lambda xg, xc, h, ug, uc: recorded.append(h.data.copy()) or original(xg, xc, h, ug, uc)
    m.decoder.decode(memory, memory[-1:], 1)
    np.testing.assert_array_equal(recorded[0], memory.data[-1:])


def test_train_step_requires_future():
    m = seq_model()
    bad = TrainExample(np.ones((2, D)), ["a"], [])
    with pytest.raises(ContractError):
        train_step(m, Adam(m.named_parameters()), bad, LossConfig(), np.random.default_rng(0))


def test_full_forcing_is_deterministic():
    ex = example()
    losses = []
    for _ in range(2):
        m = seq_model()
        losses.append(train_step(m, Adam(m.named_parameters()), ex, LossConfig(), np.random.default_rng(7), 1.0))
    assert losses[0] == losses[1]


def test_zero_forcing_matches_free_running_inputs(rng):
    m = seq_model()
    memory = m.encode(rng.normal(size=(4, D)))
    targets = [0, 2, 1, VOCAB.eos]
    forced = m.decoder.decode(memory, memory[-1:], 4, targets, 0.0, np.random.default_rng(0), record_inputs=True)
    free = m.decoder.decode(memory, memory[-1:], 4, stop_at_eos=False, record_inputs=True)
    assert len(forced.inputs) == len(free.inputs) == 4
    for a, b in zip(forced.inputs, free.inputs):
        np.testing.assert_array_equal(a, b)


def test_full_forcing_feeds_targets(rng):
    m = seq_model()
    memory = m.encode(rng.normal(size=(3, D)))
    res = m.decoder.decode(memory, memory[-1:], 3, [2, 0, VOCAB.eos], 1.0, np.random.default_rng(0),
                           record_inputs=True)
    assert [int(np.argmax(v)) for v in res.inputs] == [VOCAB.sos, 2, 0]


def _step_does_not_increase(model, ex, cfg, **kw):
    state = model.state_dict()
    before = evaluate_loss(model, ex, cfg, **kw)
    lr = 1e-3
    for _ in range(6):
        model.load_state_dict(state)
        opt = Adam(model.named_parameters(), lr=lr)
        opt.zero_grad()
        model.loss(ex, cfg, rng=np.random.default_rng(0), forcing_prob=0.0, **kw).backward()
        opt.step()
        after = evaluate_loss(model, ex, cfg, **kw)
        if after <= before:
            return True
        lr /= 2
    return False


@pytest.mark.filterwarnings("ignore::actforecast.errors.ConvergenceWarning")
@pytest.mark.parametrize("variant", LOSS_VARIANTS)
def test_small_step_decreases_loss_for_every_loss(variant):
    assert _step_does_not_increase(seq_model(), example(), LossConfig(variant))


def test_seqforecast_loss_gradient(gradcheck):
    m = seq_model(3)
    ex = example(seed=3)
    cfg = LossConfig("un-both")
    params = [m.decoder.output.weight, m.decoder.embed.weight, m.encoder.merge.weight]
    loss = lambda: m.loss(ex, cfg, rng=np.random.default_rng(0), forcing_prob=0.5)
    assert gradcheck(loss, params) < 1e-4


def test_learns_a_tiny_deterministic_task():
    g = load_profile("deterministic-kitchen", feature_dim=16)
    recs = generate_corpus(g, 30, seed=0)
    vocab = ActionVocabulary(tuple(g.actions))
    m = initialize(SeqForecaster(vocab, 16, 16, 12), 0)
    exs = training_examples("seqforecast", recs)
    before = np.mean([seq_item_accuracy(m.forecast(e.features).symbols, e.future) for e in exs])
    fit(m, exs, TrainConfig(epochs=6, seed=0))
    acc = np.mean([seq_item_accuracy(m.forecast(e.features).symbols, e.future) for e in exs])
    assert acc > 0.6 and acc > before + 0.3


# ------------------------------------------------------------------ weak


def weak_model(mode="weak", seed=0):
    return initialize(WeakForecaster(VOCAB, D, mode=mode, max_decode_len=6), seed)


def weak_example():
    rec = video(list("abcd"), [4, 4, 4, 4])
    return protocol_examples(rec, ["25:50"])[0]


def test_weak_requires_equal_dims():
    with pytest.raises(ContractError):
        WeakForecaster(VOCAB, D, hidden_dim=D + 1)


def test_sudo_states_have_length_z(rng):
    _, h_fut = weak_model().sudo_states(rng.normal(size=(3, D)), 7)
    assert h_fut.shape == (7, D)


def test_weak_rejects_nonpositive_z(rng):
    with pytest.raises(ContractError):
        forecast_frames_weak(weak_model(), rng.normal(size=(3, D)), 0)


def test_single_decoded_action_labels_every_frame(rng, monkeypatch):
    m = weak_model()
    z = 5
    scores = np.full((1, VOCAB.output_size), -5.0)
    scores[0, 2] = 3.0
    eos = np.full((1, VOCAB.output_size), -5.0)
    eos[0, VOCAB.eos] = 3.0
    w = rng.dirichlet(np.ones(z), size=2)
    fake = DecodeResult([Tensor(scores), Tensor(eos)], [Tensor(w[:1]), Tensor(w[1:])])
    monkeypatch.setattr(m.dec_future, "decode", lambda *a, **k: fake)
    fc = forecast_frames_weak(m, rng.normal(size=(3, D)), z)
    assert fc.labels == ["c"] * z and fc.sequence == ["c"] and not fc.empty_decode


def test_empty_decode_uses_eos_step_and_is_flagged(rng):
    m = weak_model()
    m.dec_future.output.bias.data[0, VOCAB.eos] = 100.0
    fc = forecast_frames_weak(m, rng.normal(size=(3, D)), 4)
    assert fc.empty_decode and fc.sequence == [] and len(fc.labels) == 4
    assert len(set(fc.labels)) == 1


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 6))
def test_frame_scores_are_convex_combinations(seed, q, z):
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.ones(z), size=q)  # each step normalized over frames
    probs = rng.dirichlet(np.ones(4), size=q)
    s = frame_scores(weights, probs)
    mix = weights / weights.sum(axis=0, keepdims=True)
    assert np.allclose(mix.sum(axis=0), 1.0) and (mix >= 0).all()
    assert (s >= probs.min(axis=0) - 1e-12).all() and (s <= probs.max(axis=0) + 1e-12).all()
    np.testing.assert_allclose(frame_scores(weights, probs, raw=True), weights.T @ probs)


def test_weak_real_forecast_rows_respect_envelope(rng):
    m = weak_model(seed=4)
    m.dec_future.output.bias.data[0, VOCAB.eos] = -100.0
    fc = forecast_frames_weak(m, rng.normal(size=(3, D)), 5)
    assert fc.scores.shape == (5, VOCAB.num_classes) and len(fc.sequence) == 6


def test_gamma_zero_is_observed_branch_only():
    m, ex = weak_model(), weak_example()
    cfg = LossConfig()
    full = m.loss(ex, cfg, rng=np.random.default_rng(0), forcing_prob=0.0, gamma=0.0).item()
    obs_t, _ = m._targets(ex)
    h_obs, _ = m.sudo_states(ex.features, ex.num_future_frames)
    res = m.dec_obs.decode(h_obs, h_obs[-1:], len(obs_t), obs_t, 0.0, np.random.default_rng(0))
    from actforecast.losses import sequence_loss
    assert full == sequence_loss(res.score_matrix(), obs_t, len(ex.observed), cfg).item()


def test_weak_training_reduces_loss_and_is_reproducible():
    ex = weak_example()
    runs = []
    for _ in range(2):
        m = weak_model(seed=1)
        opt = Adam(m.named_parameters(), lr=1e-2)
        rng = np.random.default_rng(5)
        runs.append([train_step_weak(m, opt, ex, 2.0, LossConfig(), rng) for _ in range(50)])
    assert runs[0] == runs[1]
    assert np.mean(runs[0][-5:]) < np.mean(runs[0][:5])


def test_weak_requires_both_sequences():
    m = weak_model()
    ex = weak_example()
    ex.observed = []
    with pytest.raises(ContractError):
        m.loss(ex, LossConfig())


@pytest.mark.parametrize("mode", ["weak", "supervised"])
def test_weak_small_step_decreases_loss(mode):
    assert _step_does_not_increase(weak_model(mode), weak_example(), LossConfig(), gamma=2.0)


def test_supervised_emits_exactly_z_labels(rng):
    m = weak_model("supervised")
    for z in (1, 3, 8):
        assert len(forecast_frames_supervised(m, rng.normal(size=(2, D)), z)) == z


def test_supervised_decoding_needs_supervised_model(rng):
    with pytest.raises(ContractError):
        forecast_frames_supervised(weak_model("weak"), rng.normal(size=(2, D)), 3)


def test_supervised_trains_on_frame_labels():
    m = weak_model("supervised")
    ex = weak_example()
    obs, fut = m._targets(ex)
    assert len(obs) == len(ex.features) and len(fut) == ex.num_future_frames
    assert VOCAB.eos not in obs + fut


# ------------------------------------------------------------- baselines


def test_mlp_mean_pool_idempotent(rng):
    m = initialize(MlpForecaster(VOCAB, D, 8), 0)
    frame = rng.normal(size=(1, D))
    np.testing.assert_allclose(m.scores(np.repeat(frame, 5, axis=0)).data, m.scores(frame).data, rtol=1e-12)


def test_lstm_zero_weights_give_bias():
    m = LstmForecaster(VOCAB, D, 8)
    m.output.bias.data[...] = [[0.1, 0.2, 0.3, 0.4]]
    np.testing.assert_array_equal(m.scores(np.ones((3, D))).data, [[0.1, 0.2, 0.3, 0.4]])


@pytest.mark.parametrize("cls", [MlpForecaster, LstmForecaster])
def test_next_action_baselines(cls, rng):
    m = initialize(cls(VOCAB, D, 8), 0)
    fc = m.forecast(rng.normal(size=(4, D)))
    assert len(fc.symbols) == 1 and fc.symbols[0] in VOCAB.classes
    with pytest.raises(ContractError):
        m.forecast(np.zeros((0, D)))
    assert _step_does_not_increase(m, example(), LossConfig())


def test_random_baseline_accuracy_is_one_over_k():
    rng = np.random.default_rng(0)
    truth = rng.integers(0, 4, size=20_000)
    hits = sum(random_forecast(VOCAB, rng, length=1)[0] == VOCAB.classes[t] for t in truth)
    p, n = 1 / 4, len(truth)
    assert abs(hits / n - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_random_baseline_lengths():
    m = RandomForecaster(VOCAB, max_decode_len=5)
    rng = np.random.default_rng(1)
    assert len(m.forecast(np.ones((1, 2)), rng=rng, length=3).symbols) == 3
    lengths = {len(m.forecast(np.ones((1, 2)), rng=rng).symbols) for _ in range(200)}
    assert lengths == {1, 2, 3, 4, 5}
    with pytest.raises(ContractError):
        m.forecast(np.zeros((0, 2)))


# -------------------------------------------------------------- checkpoints


@pytest.mark.parametrize("make", [
    lambda: seq_model(2), lambda: weak_model("weak", 2), lambda: weak_model("supervised", 2),
    lambda: initialize(MlpForecaster(VOCAB, D, 8), 2), lambda: initialize(LstmForecaster(VOCAB, D, 8), 2),
    lambda: RandomForecaster(VOCAB, 7, seed=3)])
def test_checkpoint_round_trip(make, tmp_path):
    m = make()
    opt = Adam(m.named_parameters())
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m, opt, {"epoch": 3})
    again, opt2, state = load_checkpoint(path)
    assert again.config() == m.config() and state["epoch"] == 3
    for (n1, p1), (n2, p2) in zip(m.named_parameters(), again.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)
    assert opt2.t == opt.t


def test_checkpoint_layout(tmp_path):
    m = seq_model()
    opt = Adam(m.named_parameters())
    ex = example()
    train_step(m, opt, ex, LossConfig(), np.random.default_rng(0))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m, opt, {"epoch": 1})
    raw = path.read_bytes()
    assert raw[:8] == b"ACTFCST\0" and int.from_bytes(raw[8:12], "little") == 1
    header, arrays = read_checkpoint(path)
    assert header["kind"] == "seqforecast" and header["config"]["classes"] == list(VOCAB.classes)
    assert np.array_equal(arrays["opt.m/decoder.output.weight"], opt.m["decoder.output.weight"])
    hlen = int.from_bytes(raw[12:20], "little")
    first = header["arrays"][0]
    start = 20 + hlen + first["offset"]
    direct = np.frombuffer(raw[start:start + 8 * int(np.prod(first["shape"]))], "<f8").reshape(first["shape"])
    np.testing.assert_array_equal(direct, m.state_dict()[first["name"]])


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"not a checkpoint")
    with pytest.raises(ValidationError):
        read_checkpoint(tmp_path / "x")


def test_build_model_unknown_kind():
    from actforecast.errors import ConfigError
    with pytest.raises(ConfigError):
        build_model({"kind": "transformer", "classes": ["a"]})


# --------------------------------------------------------------- training


def test_resume_reproduces_uninterrupted_run(tmp_path):
    g = load_profile("deterministic-kitchen", feature_dim=D)
    recs = generate_corpus(g, 6, seed=0)
    vocab = ActionVocabulary(tuple(g.actions))
    exs = training_examples("seqforecast", recs)
    cfg = TrainConfig(epochs=3, seed=11)

    full = initialize(SeqForecaster(vocab, D, 8, 12), cfg.seed)
    _, hist_full = fit(full, exs, cfg)

    part = initialize(SeqForecaster(vocab, D, 8, 12), cfg.seed)
    opt, hist_a = fit(part, exs, TrainConfig(epochs=1, seed=11))
    save_checkpoint(tmp_path / "p.ckpt", part, opt, {"epoch": 1})
    resumed, opt2, state = load_checkpoint(tmp_path / "p.ckpt")
    _, hist_b = fit(resumed, exs, cfg, opt2, start_epoch=state["epoch"])
    assert hist_a + hist_b == hist_full
    for p1, p2 in zip(full.parameters(), resumed.parameters()):
        assert np.array_equal(p1.data, p2.data)


def test_fit_writes_csv_log(tmp_path):
    m = seq_model()
    fit(m, [example()], TrainConfig(epochs=2), log_path=tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,mean_loss" and [l.split(",")[0] for l in lines[1:]] == ["1", "2"]


def test_training_examples_protocol_rules():
    from actforecast.errors import ConfigError
    recs = [video(list("abcd"), [4, 4, 4, 4])]
    assert len(training_examples("weak", recs)) == 8
    with pytest.raises(ConfigError):
        training_examples("seqforecast", recs, ["20:20"])
