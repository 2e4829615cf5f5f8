import csv

import numpy as np
import pytest
import torch

from luseel.cli import main as cli_main
from luseel.errors import ConfigurationError, NumericError
from luseel.harness import train as train_mod
from luseel.harness.checkpoint import build_model, load_checkpoint, parameter_names, save_checkpoint
from luseel.harness.config import ExperimentConfig, paper_config, toy_config
from luseel.harness.data import DynamicMixer, FixedScenes, collate, draw_scene, make_renderer, sample_specs
from luseel.harness.evaluate import (ROW_FIELDS, evaluate, model_predictor, oracle_predictor, read_rows, score_scene,
                                     write_rows)
from luseel.harness.report import HIST_FIELDS, SUMMARY_FIELDS, report, separation_bin
from luseel.harness.schedule import PlateauController, lr_at
from luseel.harness.toy import TOY_CLIPS, toy_corpus
from luseel.harness.train import compute_losses, provider_for, train
from luseel.objectives import si_snr
from luseel.scene_sim import SceneSpec, SourceSpec, render_scene
from luseel.system import VARIANTS, get_variant

DUR = 0.25


@pytest.fixture(scope="module")
def corpus():
    return toy_corpus(8, DUR)


def small_config(variant="luseel", **overrides):
    base = {"audio.duration_s": DUR, "optim.batch_size": 2, "data.val_scenes": 2, "optim.steps_per_epoch": 1,
            "optim.max_steps": 3, "optim.warmup_steps": 2}
    base.update(overrides)
    return toy_config(variant, **base)


def test_lr_at_examples():
    assert lr_at(0, 0, 1e-4, 5000) == 0.0
    assert lr_at(2500, 0, 1e-4, 5000) == pytest.approx(5e-5)
    assert lr_at(5000, 0, 1e-4, 5000) == pytest.approx(1e-4)
    assert lr_at(90000, 0, 1e-4, 5000) == pytest.approx(1e-4)
    assert lr_at(6000, 1, 1e-4, 5000) == pytest.approx(5e-5)
    lrs = [lr_at(s, s // 7000, 1e-4, 5000) for s in range(5000, 40000, 500)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_plateau_trace_halving_and_stop():
    ctl = PlateauController(6, 10)
    events = [ctl.update(v) for v in [5.0, 4.0] + [4.0] * 10]
    assert events[:2] == ["improved", "improved"]
    stagnant = events[2:]
    assert stagnant.index("halved") == 5  # sixth stagnant epoch
    assert stagnant.count("halved") == 1
    assert stagnant.index("stop") == 9  # tenth stagnant epoch
    assert ctl.halvings == 1


def test_plateau_improvement_resets_counters():
    ctl = PlateauController(6, 10)
    trace = [1.0] + [2.0] * 5 + [0.5] + [2.0] * 6
    events = [ctl.update(v) for v in trace]
    assert "halved" not in events[:7]
    assert events[-1] == "halved"
    assert ctl.epochs_since_improve == 6


def test_train_halves_and_stops_on_flat_validation(corpus):
    # zero learning rate leaves only batch-norm statistics moving, so validation soon goes flat
    cfg = small_config("mlp_gcc", **{"optim.lr": 0.0, "optim.max_steps": 60, "optim.weight_decay": 0.0})
    res = train(cfg, corpus, save=False)
    events = [e["event"] for e in res.epochs]
    last = max(i for i, e in enumerate(events) if e == "improved")
    assert events[last + 1:] == ["stalled"] * 5 + ["halved"] + ["stalled"] * 3 + ["stop"]
    assert res.state.step == last + 11


def test_variant_matrix(corpus):
    expected = {"t_htdemucs": (1, "extraction", False), "mlp_gcc": (2, "localization", True),
                "luseel_dagger": (2, "extraction", False), "luseel_circle": (2, "both", False),
                "luseel": (2, "both", True)}
    assert set(VARIANTS) == set(expected)
    provider = provider_for(small_config())
    scenes = [render_scene(s, corpus) for s in sample_specs(small_config(), corpus, 2, 0, "m")]
    batch = collate(scenes, provider, 5.0)
    for name, (channels, tasks, gcc) in expected.items():
        v = get_variant(name)
        assert (v.channels, v.tasks, v.use_gcc) == (channels, tasks, gcc)
        model = build_model(small_config(name)).eval()
        with torch.no_grad():
            out = model(batch.mixture, batch.tokens, batch.padding_mask)
        if v.extraction:
            assert out["est"].shape == (2, channels, batch.mixture.shape[-1])
            assert model.extractor.cfg.channels_in == channels
        else:
            assert out["est"] is None and model.extractor is None
        if v.localization:
            assert out["doa"].shape == (2, 360)
            assert torch.all((out["doa"] > 0) & (out["doa"] < 1))
        else:
            assert out["doa"] is None and model.localization is None
        if name in ("luseel", "luseel_circle"):
            assert model.localization.cfg.use_gcc == gcc


def test_loss_routing(corpus):
    provider = provider_for(small_config())
    batch = collate([render_scene(s, corpus) for s in sample_specs(small_config(), corpus, 2, 1, "r")], provider, 5.0)
    for name in VARIANTS:
        cfg = small_config(name)
        parts = compute_losses(build_model(cfg).eval(), batch, cfg)
        v = get_variant(name)
        assert (parts["signal"].item() != 0.0) == v.extraction
        assert (parts["mse"].item() != 0.0) == v.localization
        assert parts["total"].item() == pytest.approx(parts["signal"].item() + 10 * parts["mse"].item(), rel=1e-6)


def test_dagger_checkpoint_has_no_localization(tmp_path):
    cfg = small_config("luseel_dagger")
    save_checkpoint(tmp_path / "ck", build_model(cfg), cfg)
    names = parameter_names(tmp_path / "ck")
    assert names and not any(n.startswith("localization.") for n in names)
    assert any(n.startswith("extractor.") for n in names)
    full = small_config("luseel")
    save_checkpoint(tmp_path / "full", build_model(full), full)
    assert any(n.startswith("localization.") for n in parameter_names(tmp_path / "full"))


def test_checkpoint_round_trip(tmp_path):
    cfg = small_config("luseel")
    torch.manual_seed(0)
    model = build_model(cfg)
    save_checkpoint(tmp_path / "ck", model, cfg, {"step": 3})
    loaded, cfg2 = load_checkpoint(tmp_path / "ck")
    assert cfg2.to_dict() == cfg.to_dict()
    for (n, a), (_, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert torch.equal(a, b), n


def test_training_is_deterministic(corpus, tmp_path):
    cfg = small_config("luseel")
    a = train(cfg, corpus, tmp_path / "a")
    b = train(cfg, corpus, tmp_path / "b")
    assert [h["loss"] for h in a.history] == [h["loss"] for h in b.history]
    assert (tmp_path / "a" / "best" / "weights.npz").exists()
    assert (tmp_path / "a" / "train_log.jsonl").read_text() == (tmp_path / "b" / "train_log.jsonl").read_text()
    assert a.history[0]["lr"] == 0.0 and a.history[2]["lr"] == pytest.approx(cfg.optim.lr)


def test_non_finite_loss_aborts(corpus, monkeypatch):
    def bad(model, batch, cfg):
        nan = torch.tensor(float("nan"), requires_grad=True)
        return {"total": nan, "signal": nan, "mse": nan}
    monkeypatch.setattr(train_mod, "compute_losses", bad)
    with pytest.raises(NumericError, match="step 0"):
        train(small_config("mlp_gcc"), corpus, save=False)


def test_dynamic_mixer_reproducible(corpus):
    cfg = small_config()
    provider = provider_for(cfg)
    a = DynamicMixer(cfg, corpus, provider, 7).batch(3, 2)
    b = DynamicMixer(cfg, corpus, provider, 7).batch(3, 2)
    c = DynamicMixer(cfg, corpus, provider, 7).batch(4, 2)
    assert torch.equal(a.mixture, b.mixture)
    assert not torch.equal(a.mixture, c.mixture)
    spec, _ = draw_scene(cfg, corpus, 7, 12, "x")
    assert spec.scene_id == "x-000012"


def _fixed(cfg, corpus, n=4, seed=5):
    specs = sample_specs(cfg, corpus, n, seed, "e")
    return FixedScenes(specs, corpus, make_renderer(cfg), provider_for(cfg), cfg.loss.sigma_sq)


def test_evaluate_empty_columns(corpus):
    for name, empty in (("t_htdemucs", ("doa_hit", "mae")), ("mlp_gcc", ("si_snri", "sdri"))):
        cfg = small_config(name)
        scenes = _fixed(cfg, corpus)
        rows, doas = evaluate(scenes, get_variant(name), model_predictor(build_model(cfg)), 2)
        assert len(rows) == 4
        for r in rows:
            assert all(r[k] is None for k in empty)
            assert all(r[k] is not None for k in ROW_FIELDS if k not in empty)
        assert (len(doas) == 4) == (name == "mlp_gcc")


def test_evaluate_oracle(corpus):
    cfg = small_config("luseel")
    scenes = _fixed(cfg, corpus)
    rows, doas = evaluate(scenes, get_variant("luseel"), oracle_predictor(get_variant("luseel")), 3)
    for r, sc in zip(rows, scenes.scenes):
        mix_score = float(si_snr(sc.mixture.samples, sc.target.samples))
        assert r["si_snri"] == pytest.approx(60.0 - mix_score, abs=1e-9)
        assert r["doa_hit"] == 1
        assert r["mae"] <= 0.5
    assert np.mean([r["doa_hit"] for r in rows]) == 1.0
    # with integer azimuths the one-hot oracle is exact
    spec = SceneSpec([SourceSpec("toy00", 30.0, 0.0, "x"), SourceSpec("toy01", 200.0, 0.0, "y")], duration_s=DUR)
    sc = render_scene(spec, corpus)
    probs = np.zeros(360)
    probs[30] = 1.0
    row, doa = score_scene(spec, sc, get_variant("luseel"), sc.target.samples, probs)
    assert row["mae"] == 0.0 and row["doa_hit"] == 1
    assert set(doa) == {"scene_id", "true_deg", "pred_deg", "probs_argmax", "mae_deg"}


def test_rows_csv_round_trip(tmp_path, corpus):
    cfg = small_config("t_htdemucs")
    rows, _ = evaluate(_fixed(cfg, corpus, 2), get_variant("t_htdemucs"), oracle_predictor(get_variant("t_htdemucs")))
    write_rows(tmp_path / "r.csv", rows)
    back = read_rows(tmp_path / "r.csv")
    assert [r["scene_id"] for r in back] == [r["scene_id"] for r in rows]
    assert back[0]["mae"] is None and back[0]["si_snri"] == pytest.approx(rows[0]["si_snri"], abs=1e-6)
    with open(tmp_path / "r.csv") as fh:
        assert next(csv.reader(fh)) == ROW_FIELDS


def test_separation_bins():
    spec = SceneSpec([SourceSpec("a", 10.0, 0.0, "x"), SourceSpec("b", 350.0, 0.0, "y")])
    assert spec.separation_deg() == pytest.approx(20.0)
    assert separation_bin(spec.separation_deg()) == 1
    assert separation_bin(179.0) == 8
    assert separation_bin(180.0) == 8
    assert separation_bin(0.0) == 0 and separation_bin(19.999) == 0


def test_report_outputs(tmp_path):
    rows = [{"scene_id": "a", "n_sources": 2, "sep_angle_deg": 20.0, "si_snri": 10.0, "sdri": 8.0, "doa_hit": 1,
             "mae": 2.0, "variant": "luseel"},
            {"scene_id": "b", "n_sources": 2, "sep_angle_deg": 179.0, "si_snri": 14.0, "sdri": 9.0, "doa_hit": 0,
             "mae": 30.0, "variant": "luseel"},
            {"scene_id": "c", "n_sources": 2, "sep_angle_deg": 40.0, "si_snri": None, "sdri": None, "doa_hit": 1,
             "mae": 1.0, "variant": "mlp_gcc"}]
    paths = report(rows, tmp_path)
    with open(paths["summary"]) as fh:
        summary = list(csv.DictReader(fh))
    lus = next(s for s in summary if s["variant"] == "luseel")
    assert float(lus["si_snri"]) == 12.0 and float(lus["accuracy"]) == 50.0 and float(lus["mae"]) == 16.0
    mlp = next(s for s in summary if s["variant"] == "mlp_gcc")
    assert mlp["si_snri"] == "" and mlp["tasks"] == "localization"
    with open(paths["separation_hist"]) as fh:
        hist = [h for h in csv.DictReader(fh) if h["variant"] == "luseel"]
    assert len(hist) == 9
    assert int(hist[1]["count"]) == 1 and int(hist[8]["count"]) == 1
    with open(paths["scatter"]) as fh:
        assert len(list(csv.DictReader(fh))) == 2


def test_report_empty_rows(tmp_path):
    paths = report([], tmp_path)
    with open(paths["summary"]) as fh:
        assert next(csv.reader(fh)) == SUMMARY_FIELDS
        assert fh.read() == ""
    with open(paths["separation_hist"]) as fh:
        assert next(csv.reader(fh)) == HIST_FIELDS


def test_config_yaml_round_trip(tmp_path, monkeypatch):
    monkeypatch.delenv("LUSEEL_SEED", raising=False)
    for cfg in (toy_config("luseel_circle"), paper_config("t_htdemucs")):
        cfg.save(tmp_path / "c.yaml")
        assert ExperimentConfig.load(tmp_path / "c.yaml").to_dict() == cfg.to_dict()
    monkeypatch.setenv("LUSEEL_SEED", "1234")
    assert ExperimentConfig.load(tmp_path / "c.yaml").experiment.seed == 1234


def test_config_rejects_bad_values():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"optim": {"learning_rate": 1.0}})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"experiment": {"variant": "bogus"}})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"experiment": {"n_sources": 4}})


def test_paper_config_dimensions():
    cfg = paper_config()
    assert cfg.localization.decoder_in() == 888
    assert cfg.loss.gamma == 10.0 and cfg.optim.lr == 1e-4 and cfg.optim.warmup_steps == 5000
    assert (cfg.optim.plateau_patience_epochs, cfg.optim.early_stop_epochs) == (6, 10)
    assert cfg.conditioning.n_layers == 5 and cfg.conditioning.d_text == 512
    assert cfg.extractor.n_taps == 5


def test_toy_corpus_prompts_distinct():
    c = toy_corpus(16)
    captions = [c.caption(r.id) for r in c.records]
    assert len(set(captions)) == len(captions) == len(TOY_CLIPS)
    assert all(np.sqrt(np.mean(c.load(r.id, 16000) ** 2)) > 0 for r in c.records)


def test_cli_simulate_and_report(tmp_path, monkeypatch):
    monkeypatch.delenv("LUSEEL_SEED", raising=False)
    assert cli_main(["toy-corpus", "--out", str(tmp_path / "corpus"), "--clips", "6", "--duration", "0.25"]) == 0
    cfg = small_config()
    cfg.data.train_manifest = str(tmp_path / "corpus" / "manifest.jsonl")
    cfg.save(tmp_path / "c.yaml")
    out = tmp_path / "s.jsonl"
    assert cli_main(["simulate", "--config", str(tmp_path / "c.yaml"), "--out", str(out), "--n", "3"]) == 0
    assert len(out.read_text().splitlines()) == 3
    monkeypatch.setenv("LUSEEL_SEED", "99")
    cli_main(["simulate", "--config", str(tmp_path / "c.yaml"), "--out", str(tmp_path / "t.jsonl"), "--n", "3"])
    assert (tmp_path / "t.jsonl").read_text() != out.read_text()
    write_rows(tmp_path / "rows.csv", [])
    assert cli_main(["report", "--rows", str(tmp_path / "rows.csv"), "--out-dir", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "summary.csv").exists()


def test_cli_requires_subcommand():
    with pytest.raises(SystemExit):
        cli_main([])
