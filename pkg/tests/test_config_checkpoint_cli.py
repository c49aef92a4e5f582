import json
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from conftest import small_config
from tapg import cli
from tapg import model as model_mod
from tapg.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from tapg.config import RunConfig, dump_config, load_config, parse_config_text
from tapg.data import FeatureSequence, GroundTruth
from tapg.synth import DatasetSpec, synth_generate
from tapg.tensor import ConfigError
from tapg.train import infer, model_from_checkpoint, prepare_samples, train

SMALL_SPEC = DatasetSpec(num_videos=3, T=8, C=8, instances_per_video=(1, 1), instance_length=(2, 4),
                         noise_prob=0.0, seed=11)

SMALL_KEYS = """\
# tiny model for fast tests
T = 8
C = 8
D = 6
heads = 2
num_samples = 8
bnd_hidden = 8
cmp_hidden_3d = 8
cmp_hidden_2d = 8
dropout = 0.0
"""


@pytest.fixture
def small_videos():
    return [(v.seq, v.gt) for v in synth_generate(SMALL_SPEC)]


# configuration

def test_config_file_parsing(tmp_path):
    (tmp_path / "c.txt").write_text(SMALL_KEYS + "fusion = sum  # trailing comment\nfront_block = no\n")
    cfg = load_config(tmp_path / "c.txt")
    assert (cfg.T, cfg.D, cfg.heads, cfg.fusion, cfg.front_block) == (8, 6, 2, "sum", False)
    assert cfg.precision == "f32" and cfg.lr == 1e-3


def test_config_errors(tmp_path):
    (tmp_path / "u.txt").write_text("T = 8\nnot_a_key = 1\n")
    with pytest.raises(ConfigError, match="not_a_key"):
        load_config(tmp_path / "u.txt")
    with pytest.raises(ConfigError):
        parse_config_text("T 8")
    with pytest.raises(ConfigError, match="heads"):
        RunConfig(C=32, heads=3).validate()
    with pytest.raises(ConfigError, match="D"):
        RunConfig(T=8, D=9).validate()
    with pytest.raises(ConfigError):
        load_config(None, T="eight")


def test_mode_presets_and_precedence(tmp_path):
    cfg = load_config(mode="anet")
    assert (cfg.T, cfg.D, cfg.heads, cfg.delta, cfg.transformer_layers) == (100, 100, 8, 2, 1)
    cfg = load_config(mode="thumos")
    assert (cfg.T, cfg.D, cfg.window_overlap, cfg.max_proposals) == (128, 64, 0.5, 200)
    (tmp_path / "c.txt").write_text("mode = thumos\nD = 32\n")
    cfg = load_config(tmp_path / "c.txt", D=16)
    assert (cfg.mode, cfg.T, cfg.D) == ("thumos", 128, 16)


def test_config_dump_round_trip():
    cfg = small_config(fusion="late", seed=7)
    again = RunConfig.from_dict(parse_config_text(dump_config(cfg))).validate()
    assert again == cfg and again.hash() == cfg.hash()
    assert replace(cfg, seed=8).hash() != cfg.hash()


# checkpoints

def test_checkpoint_round_trip_bit_exact(tmp_path, small_videos):
    cfg = small_config(epochs=2)
    res = train(cfg, small_videos)
    rng = np.random.default_rng(3)
    rng.random(5)
    path = save_checkpoint(tmp_path / "ck.bin", res.model.params, cfg, res.optimizer.state, 2, rng,
                           res.history)
    ck = load_checkpoint(path)
    assert ck.config == cfg and ck.epoch == 2 and ck.history == res.history
    for k, p in res.model.params.items():
        assert ck.params[k].dtype == p.data.dtype and ck.params[k].tobytes() == p.data.tobytes()
        assert ck.optim.m[k].tobytes() == res.optimizer.state.m[k].tobytes()
    assert ck.optim.step == res.optimizer.state.step
    restored = np.random.default_rng(0)
    restored.bit_generator.state = ck.rng_state
    assert restored.random() == rng.random()
    model, _ = model_from_checkpoint(path)
    x = small_videos[0][0].features
    a, b = res.model.predict(x), model.predict(x)
    for f in ("start", "end", "actionness", "cc_map", "cr_map"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()


def test_checkpoint_corruption(tmp_path, small_videos):
    cfg = small_config()
    params = model_mod.ProposalModel(cfg).params
    path = save_checkpoint(tmp_path / "ck.bin", params, cfg)
    raw = path.read_bytes()
    (tmp_path / "magic.bin").write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "magic.bin")
    (tmp_path / "short.bin").write_bytes(raw[:-16])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short.bin")
    edited = raw.replace(b'"seed": 0', b'"seed": 9')
    assert edited != raw
    (tmp_path / "edit.bin").write_bytes(edited)
    with pytest.raises(CheckpointError, match="hash"):
        load_checkpoint(tmp_path / "edit.bin")


def test_checkpoint_is_little_endian(tmp_path):
    cfg = small_config()
    path = save_checkpoint(tmp_path / "ck.bin", {"w": np.arange(3, dtype=">f8")}, cfg)
    assert load_checkpoint(path).params["w"].tolist() == [0.0, 1.0, 2.0]
    header = path.read_bytes()
    assert b'"<f8"' in header


# training

def test_training_is_deterministic(small_videos):
    a = train(small_config(epochs=3, dropout=0.1), small_videos)
    b = train(small_config(epochs=3, dropout=0.1), small_videos)
    assert a.losses == b.losses
    for k in a.model.params:
        assert a.model.params[k].data.tobytes() == b.model.params[k].data.tobytes()
    c = train(small_config(epochs=3, dropout=0.1, seed=1), small_videos)
    assert c.losses != a.losses


def test_resume_matches_uninterrupted_run(tmp_path, small_videos):
    cfg = small_config(epochs=4, dropout=0.1)
    full = train(cfg, small_videos)
    first = train(cfg, small_videos, tmp_path / "a", epochs=2)
    rest = train(cfg, small_videos, tmp_path / "b", resume=first.checkpoint, epochs=2)
    assert rest.losses == full.losses
    for k in full.model.params:
        assert rest.model.params[k].data.tobytes() == full.model.params[k].data.tobytes()
    log = (tmp_path / "a" / "train_log.jsonl").read_text().splitlines()
    assert len(log) == 2 and {"total", "completeness", "actionness", "start", "end", "seconds"} <= set(
        json.loads(log[0]))


def test_nan_loss_halts_and_keeps_last_checkpoint(tmp_path, small_videos, monkeypatch):
    cfg = small_config(epochs=5)
    calls = {"n": 0}
    real = model_mod.weighted_bl_loss

    def flaky(p, g, mask=None):
        calls["n"] += 1
        out = real(p, g, mask)
        # three calls per sample, three samples per epoch: poison epoch 3
        return out * float("nan") if calls["n"] > 18 else out

    monkeypatch.setattr(model_mod, "weighted_bl_loss", flaky)
    res = train(cfg, small_videos, tmp_path)
    assert res.halted and "epoch 3" in res.halted and "actionness" in res.halted
    assert len(res.history) == 2
    ck = load_checkpoint(tmp_path / "checkpoint.bin")
    assert ck.epoch == 2 and all(np.isfinite(a).all() for a in ck.params.values())


def test_zero_auxiliary_weights_leave_the_gradient(small_videos):
    cfg = small_config(lambda_action=0.0, lambda_start=0.0, lambda_end=0.0)
    m = model_mod.ProposalModel(cfg)
    s = prepare_samples(cfg, small_videos)[0]
    total, values = m.loss(m.forward(s.features), s.labels)
    assert values["actionness"] > 0 and values["start"] > 0 and values["end"] > 0
    total.backward()
    for name, p in m.params.items():
        if name.startswith(("tr.act.", "bnd.")):
            assert p.grad is None or not p.grad.any(), name
    assert any(p.grad is not None and p.grad.any() for n, p in m.params.items() if n.startswith("cmp."))


def test_empty_and_mismatched_datasets(small_videos):
    from tapg.data import DataError
    with pytest.raises(DataError):
        train(small_config(), [])
    with pytest.raises(ConfigError):
        train(small_config(T=10, D=6), small_videos)


# inference

def test_suppress_none_emits_every_cell(small_videos):
    cfg = small_config(suppress="none")
    m = model_mod.ProposalModel(cfg)
    props = infer(m, [s for s, _ in small_videos], cfg)
    assert all(len(v) == sum(8 - i for i in range(1, 7)) for v in props.values())


def test_infer_rejects_length_mismatch():
    cfg = small_config()
    with pytest.raises(ConfigError, match="T=8"):
        infer(model_mod.ProposalModel(cfg), [FeatureSequence("v", np.zeros((9, 8)))], cfg)


def test_thumos_windows_stay_inside_the_video(rng):
    cfg = small_config(mode="thumos", suppress="none")
    m = model_mod.ProposalModel(cfg)
    seq = FeatureSequence("long", rng.normal(size=(21, 8)))
    props = infer(m, [seq], cfg)["long"]
    assert props and all(0 <= p.t_s < p.t_e <= 21 for p in props)
    assert max(p.t_e for p in props) == 13 + 8 - 1          # last window, last valid end
    samples = prepare_samples(cfg, [(seq, GroundTruth("long", [(15.0, 19.0)], 21))])
    assert [s.offset for s in samples] == [0, 4, 8, 12, 13]
    assert samples[-1].gt.instances == [(2.0, 6.0)]


def test_anet_proposals_rescaled_to_source(rng):
    cfg = small_config(mode="anet", suppress="none")
    m = model_mod.ProposalModel(cfg)
    props = infer(m, [FeatureSequence("v", rng.normal(size=(16, 8)))], cfg)["v"]
    assert all(0 <= p.t_s < p.t_e <= 16 and p.t_s % 2 == 0 and p.t_e % 2 == 0 for p in props)


# command line

def _run(*argv):
    return cli.main([str(a) for a in argv])


def test_cli_end_to_end(tmp_path, capsys):
    data, cfg_path = tmp_path / "data", tmp_path / "small.txt"
    (tmp_path / "spec.json").write_text(SMALL_SPEC.to_json())
    cfg_path.write_text(SMALL_KEYS)
    assert _run("synth", "--spec", tmp_path / "spec.json", "--out", data) == 0
    assert (data / "annotations.json").exists() and (data / "noise_segments.json").exists()
    for run in ("r1", "r2"):
        assert _run("train", "--data", data, "--config", cfg_path, "--epochs", 3, "--seed", 5,
                    "--out", tmp_path / run) == 0
        assert _run("infer", "--checkpoint", tmp_path / run / "checkpoint.bin", "--data", data,
                    "--out", tmp_path / run) == 0
    a = (tmp_path / "r1" / "proposals.jsonl").read_bytes()
    assert a and a == (tmp_path / "r2" / "proposals.jsonl").read_bytes()
    assert _run("eval", "--proposals", tmp_path / "r1" / "proposals.jsonl",
                "--annotations", data / "annotations.json", "--out", tmp_path / "ev") == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert {"AR@1", "AR@5", "AR@10", "AR@50", "AR@100", "AUC"} <= set(report)
    assert (tmp_path / "ev" / "ar_curve.csv").read_text().startswith("AN,AR")
    assert _run("infer", "--checkpoint", tmp_path / "r1" / "checkpoint.bin", "--data", data,
                "--suppress", "none", "--out", tmp_path / "all") == 0
    lines = (tmp_path / "all" / "proposals.jsonl").read_text().splitlines()
    assert len(lines) == 3 * sum(8 - i for i in range(1, 7))


def test_cli_eval_with_oracle_proposals(tmp_path):
    ann = tmp_path / "ann.json"
    from tapg.data import save_annotations
    save_annotations([GroundTruth("a", [(2.0, 6.0)], 10), GroundTruth("b", [(1.0, 3.0)], 10)], ann)
    rows = [{"video_id": v, "t_start": s, "t_end": e, "score": 1.0}
            for v, s, e in (("a", 2.0, 6.0), ("b", 1.0, 3.0))]
    (tmp_path / "p.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    assert _run("eval", "--proposals", tmp_path / "p.jsonl", "--annotations", ann,
                "--out", tmp_path / "ev") == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert report["AR@1"] == 100.0 and report["AUC"] == 100.0


def test_cli_errors(tmp_path, capsys):
    (tmp_path / "bad.txt").write_text("bogus_key = 3\n")
    (tmp_path / "data" / "features").mkdir(parents=True)
    assert _run("train", "--data", tmp_path / "data", "--config", tmp_path / "bad.txt",
                "--out", tmp_path / "o") == 2
    assert "bogus_key" in capsys.readouterr().err
    assert _run("train", "--data", tmp_path / "missing", "--out", tmp_path / "o") == 2
    assert _run("eval", "--proposals", "x", "--annotations", "y") == 2


def test_cli_gradcheck(tmp_path, capsys):
    assert _run("gradcheck", "--out", tmp_path) == 0
    assert "PASS" in (tmp_path / "gradcheck.txt").read_text()


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "tapg", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("synth", "train", "infer", "eval", "ablate", "gradcheck"):
        assert sub in out.stdout
