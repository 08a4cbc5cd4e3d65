import json
import warnings

import numpy as np
import pytest

from mimo_sarnn.autodiff import Tensor
from mimo_sarnn.dsp import Waveform, read_wav, write_wav
from mimo_sarnn.pipeline.config import RunConfig, TrainConfig, desk_config
from mimo_sarnn.pipeline.data import Utterance, chunk_index, epoch_batches, load_corpus, make_batch
from mimo_sarnn.pipeline.evaluate import NEURAL_SYSTEMS, SYSTEMS, evaluate_systems, resolve_checkpoint
from mimo_sarnn.pipeline.metrics import active_weights, si_snr, si_snr_graph, si_snr_loss
from mimo_sarnn.pipeline.separate import separate, separate_waveform
from mimo_sarnn.pipeline.system import SeparationSystem, padding_doa, slot_doas
from mimo_sarnn.pipeline.train import NumericFailure, train, train_step

from conftest import tiny_config


# ------------------------------------------------------------------ Si-SNR

def test_si_snr_examples(rng):
    ref = rng.normal(size=1000)
    assert si_snr(ref, ref) == 60.0
    assert si_snr(2 * ref, ref) == si_snr(ref, ref)
    # disjoint supports, each zero-mean so centring keeps them orthogonal
    a, b = np.r_[1.0, -1.0, 0.0, 0.0], np.r_[0.0, 0.0, 1.0, -1.0]
    assert si_snr(a, b) == -60.0
    assert si_snr(np.zeros(1000), ref) == -60.0
    with pytest.raises(ValueError):
        si_snr(ref, np.zeros(1000))
    with pytest.raises(ValueError):
        si_snr(ref[:10], ref)


def test_si_snr_closed_form(rng):
    ref = rng.normal(size=4000)
    noise = rng.normal(size=4000)
    noise -= noise.mean()
    r = ref - ref.mean()
    noise -= (noise @ r) / (r @ r) * r  # exactly orthogonal error
    est = ref + 0.1 * noise
    expect = 10 * np.log10((r @ r) / (0.01 * noise @ noise + 1e-8))
    assert si_snr(est, ref) == pytest.approx(expect, abs=1e-9)


@pytest.mark.parametrize("alpha", [0.1, 0.5, 2.0, 37.0])
def test_si_snr_scale_invariance(alpha, rng):
    ref, est = rng.normal(size=2000), rng.normal(size=2000)
    # invariant up to the 1e-8 epsilon in the denominator, negligible against |e|^2 ~ 20 here
    assert si_snr(alpha * est, ref, clamp=False) == pytest.approx(si_snr(est, ref, clamp=False), abs=1e-8)


def test_si_snr_decreases_with_noise(rng):
    ref = rng.normal(size=4000)
    noise = rng.normal(size=4000)
    vals = [si_snr(ref + s * noise, ref) for s in (0.01, 0.1, 1.0)]
    assert vals[0] > vals[1] > vals[2]


def test_si_snr_graph_matches_metric(rng):
    ref, est = rng.normal(size=(3, 500)), rng.normal(size=(3, 500))
    g = si_snr_graph(Tensor(est), ref).data
    np.testing.assert_allclose(g, [si_snr(e, r, clamp=False) for e, r in zip(est, ref)], atol=1e-6)


def _loss(est, ref, active):
    return float(si_snr_loss(Tensor(est), ref, np.asarray(active)).data)


def test_loss_single_active_slot(rng):
    ref, est = rng.normal(size=(1, 3, 400)), rng.normal(size=(1, 3, 400))
    assert _loss(est, ref, [[True, False, False]]) == pytest.approx(-si_snr(est[0, 0], ref[0, 0], clamp=False))


def test_loss_equal_slots_and_batch_mean(rng):
    ref = rng.normal(size=(1, 1, 400))
    est = ref + 0.3 * rng.normal(size=(1, 1, 400))
    v = float(si_snr_graph(Tensor(est[0, 0]), ref[0, 0]).data)
    two = np.concatenate([est, est], axis=1), np.concatenate([ref, ref], axis=1)
    assert _loss(*two, [[True, True]]) == pytest.approx(-v, abs=1e-12)
    e2, r2 = rng.normal(size=(1, 2, 400)), rng.normal(size=(1, 2, 400))
    a = _loss(two[0], two[1], [[True, True]])
    b = _loss(e2, r2, [[True, False]])
    both = _loss(np.concatenate([two[0], e2]), np.concatenate([two[1], r2]), [[True, True], [True, False]])
    assert both == pytest.approx((a + b) / 2, abs=1e-12)


def test_loss_excludes_empty_utterances(rng):
    with pytest.warns(RuntimeWarning):
        w = active_weights(np.array([[True, False], [False, False]]))
    np.testing.assert_array_equal(w, [[1.0, 0.0], [0.0, 0.0]])


# ------------------------------------------------------------------ config

def test_config_json_round_trip(tmp_path):
    cfg = desk_config()
    cfg.save(tmp_path / "run.json")
    back = RunConfig.load(tmp_path / "run.json")
    assert back.to_dict() == cfg.to_dict()
    assert cfg.stft.sample_rate == 16000 and cfg.num_mics == 4 and cfg.num_speakers == 2
    assert (cfg.beamformer.fc1, cfg.beamformer.gru_hidden, cfg.beamformer.attention_dim) == (256, 128, 64)
    assert cfg.with_variant("iii").beamformer.variant == "grnn"


def test_train_config_defaults_and_validation():
    tc = TrainConfig()
    assert (tc.chunk_seconds, tc.batch_size, tc.lr, tc.clip_norm, tc.patience) == (4.0, 8, 1e-4, 10.0, 5)
    for bad in (dict(patience=0), dict(batch_size=0), dict(precision="half"), dict(lr=-1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad).validate()


# ------------------------------------------------------------------ data

def _utt(rng, S=2, N=800, M=4):
    return Utterance("u", rng.normal(size=(M, N)), rng.normal(size=(S, N)), [30.0, 100.0][:S], 16000)


def test_make_batch_marks_silent_slots(rng):
    u = _utt(rng)
    u.refs[1, :400] = 0
    b = make_batch([(u, 0), (u, 400)], 400, 3)
    np.testing.assert_array_equal(b.active, [[True, False, False], [True, True, False]])
    assert b.mixture.shape == (2, 4, 400) and b.refs.shape == (2, 3, 400)
    with pytest.raises(ValueError):
        make_batch([(u, 0)], 400, 1)


def test_chunks_and_epoch_order(rng):
    us = [_utt(rng, N=1000), _utt(rng, N=300)]
    assert chunk_index(us, 400) == [(0, 0), (0, 400), (1, 0)]
    a = [b.ids for b in epoch_batches(us, 400, 2, np.random.default_rng(3), 2)]
    b = [b.ids for b in epoch_batches(us, 400, 2, np.random.default_rng(3), 2)]
    assert a == b and sum(len(x) for x in a) == 3


def test_padding_doa():
    assert padding_doa([]) == 90.0
    assert padding_doa([0.0]) == 180.0
    assert padding_doa([90.0]) == 0.0
    full, active = slot_doas([20.0], 3)
    assert full == [20.0, 180.0, 180.0] and active.tolist() == [True, False, False]
    with pytest.raises(ValueError):
        slot_doas([1.0, 2.0], 1)


def test_load_corpus(tiny_corpus):
    utts = load_corpus(tiny_corpus)
    assert len(utts) == 4
    for u in utts:
        assert u.mixture.shape[0] == 4 and u.refs.shape[0] == len(u.doas)
        assert u.doas == sorted(u.doas)
    with pytest.raises(FileNotFoundError):
        load_corpus(tiny_corpus / "missing")


# ------------------------------------------------------------------ system and training

def test_analyse_validates_input(rng):
    model = SeparationSystem(tiny_config())
    with pytest.raises(ValueError):
        model.analyse(rng.normal(size=(1, 3, 800)), [[10.0]])
    with pytest.raises(ValueError):
        model.analyse(rng.normal(size=(2, 4, 800)), [[10.0]])


def test_step0_loss_is_deterministic(tiny_corpus):
    utts = load_corpus(tiny_corpus)
    losses = []
    for _ in range(2):
        _, res = train(tiny_config(train__max_steps=1), utts)
        losses.append(res.history[0]["loss"])
    assert losses[0] == losses[1]


def test_zero_lr_leaves_parameters(tiny_corpus):
    utts = load_corpus(tiny_corpus)
    cfg = tiny_config(train__lr=0.0, train__max_steps=3)
    before = {k: v.copy() for k, v in SeparationSystem(cfg).state_dict().items()}
    model, res = train(cfg, utts)
    assert res.steps == 3
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_positive_lr_changes_parameters(tiny_corpus):
    utts = load_corpus(tiny_corpus)
    cfg = tiny_config(train__max_steps=1)
    before = SeparationSystem(cfg).state_dict()
    model, _ = train(cfg, utts)
    assert any(not np.array_equal(v, before[k]) for k, v in model.state_dict().items())


def test_train_writes_checkpoints_and_log(tiny_corpus, tmp_path):
    utts = load_corpus(tiny_corpus)
    model, res = train(tiny_config(train__max_epochs=2), utts[:2], utts[2:], out_dir=tmp_path)
    assert res.epochs == 2 and len(res.val_history) == 2
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()
    lines = [json.loads(x) for x in (tmp_path / "metrics.jsonl").read_text().splitlines()]
    assert {x["kind"] for x in lines} == {"step", "epoch"}
    assert res.best_val == max(res.val_history)
    back = SeparationSystem.load(tmp_path / "last.ckpt")
    mix = utts[0].mixture[None]
    np.testing.assert_array_equal(back.separate_arrays(mix, [utts[0].doas]),
                                  model.separate_arrays(mix, [utts[0].doas]))


def test_nan_loss_aborts_with_batch_ids(tiny_corpus, tmp_path):
    utts = load_corpus(tiny_corpus)
    cfg = tiny_config()
    model = SeparationSystem(cfg)
    model.beamformer.out.weight.data[:] = np.nan
    with pytest.raises(NumericFailure) as info, np.errstate(all="ignore"):
        train(cfg, utts, model=model, out_dir=tmp_path)
    dump = json.loads((tmp_path / "numeric_failure.json").read_text())
    assert dump["batch_ids"] == info.value.batch_ids and dump["batch_ids"]


def test_train_rejects_empty_corpus():
    with pytest.raises(ValueError):
        train(tiny_config(), [])


# ------------------------------------------------------------------ evaluation

def test_mixture_row_on_clean_single_speaker(rng):
    ref = rng.normal(size=3000)
    mix = np.stack([ref, np.roll(ref, 3), ref, ref])
    u = Utterance("clean", mix, ref[None], [40.0], 16000)
    rep = evaluate_systems([u], ["mixture"])
    assert rep.rows["mixture"].average == 60.0


def test_report_layout_and_averages(tiny_corpus):
    utts = load_corpus(tiny_corpus)
    models = {s: SeparationSystem(tiny_config().with_variant(s)) for s in NEURAL_SYSTEMS}
    models["default"] = models["rnn_ts_sa"]
    rep = evaluate_systems(utts, SYSTEMS, models=models)
    rows = rep.table_rows()
    assert [r["system"] for r in rows] == list(SYSTEMS)
    for r in rows:
        assert {"SPK1", "SPK2", "SPK3", "Ave"} <= set(r)
        assert r["SPK3"] is None
        per = rep.rows[r["system"]].per_utt
        assert abs(r["Ave"] - np.mean(per)) < 1e-9
    head = rep.to_text().splitlines()[0].split()
    assert head == ["System", "SPK1", "SPK2", "SPK3", "Ave"]
    assert json.loads(rep.to_json())["num_utts"] == 4


def test_report_rows_independent_of_order(tiny_corpus):
    utts = load_corpus(tiny_corpus)
    model = SeparationSystem(tiny_config())
    a = evaluate_systems(utts, ["mixture", "mvdr", "rnn_ts_sa"], models={"default": model})
    b = evaluate_systems(utts, ["rnn_ts_sa", "mvdr", "mixture"], models={"default": model})
    for s in a.rows:
        assert a.rows[s].per_slot == b.rows[s].per_slot


def test_evaluate_errors(tiny_corpus):
    utts = load_corpus(tiny_corpus)
    with pytest.raises(ValueError):
        evaluate_systems(utts, ["wiener"])
    with pytest.raises(FileNotFoundError):
        evaluate_systems(utts, ["grnn"])
    with pytest.raises(ValueError):
        evaluate_systems(utts, ["grnn"], models={"default": SeparationSystem(tiny_config())})
    with pytest.raises(ValueError):
        evaluate_systems(utts, ["mvdr_oracle"])
    assert resolve_checkpoint("grnn", {"grnn": "a", "default": "b"}).name == "a"
    assert resolve_checkpoint("ts_sa", {"default": "b"}).name == "b"


# ------------------------------------------------------------------ separation

def test_separate_files_and_determinism(tiny_corpus, tmp_path):
    model = SeparationSystem(tiny_config(num_speakers=3))
    utt = load_corpus(tiny_corpus)[0]
    wav = tmp_path / "in.wav"
    write_wav(wav, Waveform(utt.mixture, 16000))
    p1 = separate(model, wav, [120.0, 30.0, 75.0], tmp_path / "a")
    p2 = separate(model, wav, [120.0, 30.0, 75.0], tmp_path / "b")
    assert [p.name for p in p1] == ["in_spk1_doa120.wav", "in_spk2_doa30.wav", "in_spk3_doa75.wav"]
    for a, b in zip(p1, p2):
        assert a.read_bytes() == b.read_bytes()
        assert read_wav(a).samples.shape == (1, utt.num_samples)


def test_separate_orders_outputs_by_request(tiny_corpus):
    model = SeparationSystem(tiny_config())
    mix = load_corpus(tiny_corpus)[0].mixture
    a = separate_waveform(model, mix, [40.0, 130.0])
    b = separate_waveform(model, mix, [130.0, 40.0])
    np.testing.assert_array_equal(a, b[::-1])


def test_separate_rejects_bad_requests(tiny_corpus, tmp_path):
    model = SeparationSystem(tiny_config())
    mix = load_corpus(tiny_corpus)[0].mixture
    with pytest.raises(ValueError):
        separate_waveform(model, mix[:3], [40.0])
    with pytest.raises(ValueError):
        separate_waveform(model, mix, [40.0, 80.0, 120.0])
    with pytest.raises(ValueError):
        separate_waveform(model, mix, [])
    with pytest.raises(ValueError):
        separate_waveform(model, mix, [190.0])
    wav = tmp_path / "r.wav"
    write_wav(wav, Waveform(mix, 8000))
    with pytest.raises(ValueError):
        separate(model, wav, [40.0])
