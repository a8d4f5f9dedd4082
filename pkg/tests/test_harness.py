import numpy as np
import pytest

from lfs import numgrad as ng
from lfs.harness import cli
from lfs.harness import train as train_mod
from lfs.harness.config import TrainConfig, desk_preset, load_config, parse_config_text
from lfs.harness.framepack import FramePackError, decode_pack, encode_pack, episodes, read_pack, write_pack
from lfs.harness.pretrain import VideoWindows, load_video_episodes, pretrain_on_videos, record_random_videos
from lfs.harness.train import (ObservationStacker, evaluate, load_policy, random_policy_returns, read_metrics,
                               train_end_to_end)
from lfs.protossl import CALLS, NetworkBank


def tiny_config(**kw):
    base = dict(total_steps=400, init_steps=200, eval_interval=200, episode_length=60, eval_episodes=1,
                batch_size=8, prototypes=8, ssl_hidden=16, sac_hidden=16, conv_channels=16, latent_dim=16,
                feature_dim=8)
    base.update(kw)
    return desk_preset(**base)


# ---------------------------------------------------------------- config

def test_config_defaults_follow_reference_settings():
    cfg = TrainConfig()
    assert (cfg.total_steps, cfg.init_steps, cfg.action_repeat, cfg.eval_interval, cfg.eval_episodes) == (
        500000, 4000, 2, 20000, 10)
    assert (cfg.batch_size, cfg.prototypes, cfg.buffer_capacity, cfg.latent_dim) == (512, 512, 40000, 128)
    assert (cfg.lnc_k, cfg.lnc_c, cfg.lnc_r, cfg.tau, cfg.eta) == (1, 0.9, 0.1, 0.1, 0.05)
    assert cfg.fixed_synthetic == 52
    assert cfg.bank_arch().representation_dim == 39200


def test_config_text_roundtrip(tmp_path):
    cfg = tiny_config(seed=3, disable_lnc=True, encoder_checkpoint="x.lfsc")
    assert parse_config_text(cfg.to_text()) == cfg
    path = tmp_path / "run.cfg"
    path.write_text("preset = desk  # small frames\nseed = 4\nlnc-c = 0.6\n\n")
    loaded = load_config(path)
    assert loaded.seed == 4 and loaded.lnc_c == 0.6 and loaded.height == 16


def test_config_rejects_bad_input():
    with pytest.raises(ValueError, match="unknown config key"):
        parse_config_text("batchsize = 3")
    with pytest.raises(ValueError, match="bad value"):
        parse_config_text("seed = three")
    with pytest.raises(ValueError):
        parse_config_text("just words")
    with pytest.raises(ValueError):
        TrainConfig(total_steps=100, init_steps=100)
    with pytest.raises(ValueError):
        TrainConfig(total_steps=1001)


# ---------------------------------------------------------------- frame packs

def test_pack_roundtrip_is_bit_exact(tmp_path):
    frames = np.random.default_rng(0).integers(0, 256, size=(250, 16, 16, 1), dtype=np.uint8)
    write_pack(tmp_path / "a.lfsp", frames, 250)
    back, length = read_pack(tmp_path / "a.lfsp")
    assert length == 250 and back.dtype == np.uint8 and back.tobytes() == frames.tobytes()
    floats = np.random.default_rng(1).random((10, 4, 4, 3))
    back, _ = decode_pack(encode_pack(floats, 5))
    assert np.array_equal(back, floats)
    assert [len(e) for e in episodes(back, 5)] == [5, 5]


def test_pack_failures_have_distinct_codes():
    data = encode_pack(np.zeros((4, 8, 8, 1), dtype=np.uint8), 2)
    codes = []
    for bad in (b"NOPE" + data[4:], data[:-1], data[:4] + (2).to_bytes(4, "little") + data[8:], data[:10]):
        with pytest.raises(FramePackError) as err:
            decode_pack(bad)
        codes.append(err.value.code)
    assert codes == ["bad_magic", "truncated_payload", "version_mismatch", "truncated_payload"]
    assert "truncated payload" in str(FramePackError("truncated_payload", "x")).replace("_", " ")
    with pytest.raises(ValueError):
        encode_pack(np.zeros((5, 8, 8, 1), dtype=np.uint8), 2)


# ---------------------------------------------------------------- stacking

def test_observation_stacker():
    st = ObservationStacker(dtype=np.float64)
    f = [np.full((2, 2, 1), i, dtype=float) for i in range(4)]
    o0 = st.reset(f[0])
    assert o0.t == 0 and not o0.synthetic and np.all(o0.pixels == 0)
    st.push(f[1])
    o2 = st.push(f[2])
    assert o2.t == 2 and list(o2.pixels[0, 0]) == [0, 1, 2]
    o3 = st.push(f[3])
    assert list(o3.pixels[0, 0]) == [1, 2, 3]


# ---------------------------------------------------------------- training

def test_training_run_outputs_and_invariants(tmp_path):
    cfg = tiny_config()
    out = train_end_to_end(cfg, tmp_path / "run")
    m = read_metrics(out / "metrics.csv")
    header = (out / "metrics.csv").read_text().splitlines()[0].split(",")
    assert header == list(train_mod.METRIC_COLUMNS)
    updates = cfg.agent_steps - cfg.init_agent_steps
    assert len(m["step"]) == updates and list(m["update"]) == list(range(1, updates + 1))
    # evaluation at step 200 falls inside warm-up; only the final one lands on an update row
    assert np.sum(~np.isnan(m["episode_return"])) == 1
    assert len((out / "eval.csv").read_text().splitlines()) == 2
    assert (out / "DONE").exists() and not (out / "FAILED").exists()
    arrays = ng.load_checkpoint(out / "final.lfsc")
    assert int(arrays["meta.transitions"]) == cfg.agent_steps
    per_episode = cfg.episode_length // cfg.action_repeat
    # the queue fills after four steps of each episode, then yields one pair per step
    full, rest = divmod(cfg.agent_steps, per_episode)
    assert int(arrays["meta.synthetic_pairs"]) == full * (per_episode - 3) + max(0, rest - 3)


def test_training_is_deterministic(tmp_path):
    cfg = tiny_config(seed=2)
    a = train_end_to_end(cfg, tmp_path / "a")
    b = train_end_to_end(cfg, tmp_path / "b")
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    c = train_end_to_end(cfg.replace(seed=3), tmp_path / "c")
    assert (a / "metrics.csv").read_bytes() != (c / "metrics.csv").read_bytes()


def test_disable_fm_never_writes_aux_buffer(tmp_path):
    out = train_end_to_end(tiny_config(disable_fm=True), tmp_path / "nofm")
    assert int(ng.load_checkpoint(out / "final.lfsc")["meta.synthetic_pairs"]) == 0
    m = read_metrics(out / "metrics.csv")
    assert np.all(m["n_selected"] == 0) and np.all(np.isfinite(m["lfs_loss"]))


def test_disable_lnc_uses_fixed_count(tmp_path):
    cfg = tiny_config(disable_lnc=True, batch_size=20)
    assert cfg.fixed_synthetic == round(20 * 52 / 512) == 2
    m = read_metrics(train_end_to_end(cfg, tmp_path / "nolnc") / "metrics.csv")
    assert set(m["n_selected"].tolist()) == {2.0}


def test_frozen_encoder_skips_ssl(tmp_path):
    out = train_end_to_end(tiny_config(freeze_encoder=True), tmp_path / "frozen")
    m = read_metrics(out / "metrics.csv")
    assert np.all(np.isnan(m["lfs_loss"]))
    fresh = NetworkBank.create(tiny_config().bank_arch(), seed=0)
    policy = load_policy(out / "final.lfsc")
    for name, t in fresh.online.items():
        assert np.array_equal(t.data, policy.bank.online[name].data)


def test_failure_leaves_marker(tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("injected")

    monkeypatch.setattr(train_mod, "ssl_update_step", boom)
    with pytest.raises(RuntimeError, match="injected"):
        train_end_to_end(tiny_config(), tmp_path / "bad")
    assert "injected" in (tmp_path / "bad" / "FAILED").read_text()
    assert (tmp_path / "bad" / "metrics.csv").exists()


def test_value_window_logging(tmp_path):
    cfg = tiny_config(value_window_start=10, value_window_length=20, lnc_c=1.0, lnc_r=1.0)
    out = train_end_to_end(cfg, tmp_path / "vals")
    v = read_metrics(out / "values.csv")
    assert list(v["update"]) == list(range(11, 31))
    stats = train_mod.summarize_values(out / "values.csv")
    assert set(stats) == {"synthetic", "real"}


def test_evaluate_is_deterministic_and_checks_geometry(tmp_path):
    out = train_end_to_end(tiny_config(), tmp_path / "ev")
    policy = load_policy(out / "final.lfsc")
    spec = policy.config.env_spec()
    assert evaluate(policy.bank, policy.nets, spec, 2) == evaluate(policy.bank, policy.nets, spec, 2)
    with pytest.raises(ValueError, match="expects observations"):
        evaluate(policy.bank, policy.nets, policy.config.replace(height=20).env_spec(), 1)
    rets = random_policy_returns(spec, 3)
    assert len(rets) == 3 and all(r >= 0 for r in rets)


# ---------------------------------------------------------------- pre-training

def _packs(tmp_path, n=3, frames=20):
    spec = tiny_config().env_spec()
    paths = []
    for i in range(n):
        p = tmp_path / f"p{i}.lfsp"
        write_pack(p, record_random_videos(spec, 2, frames, seed=i), frames)
        paths.append(p)
    return paths


def test_recorded_videos_follow_agent_steps():
    spec = tiny_config().env_spec()
    frames = record_random_videos(spec, 2, 12, seed=0)
    assert frames.shape == (24, 16, 16, 1) and frames.dtype == np.uint8


def test_windows_never_cross_episodes():
    eps = [np.full((7, 2, 2, 1), i, dtype=np.float32) for i in range(3)]
    w = VideoWindows(eps)
    assert len(w) == 9
    batch = w.sample(50, np.random.default_rng(0))
    assert all(len(np.unique(x)) == 1 for x in batch)


def test_pretrain_zero_updates_is_fresh_init(tmp_path):
    cfg = tiny_config()
    path = pretrain_on_videos(cfg, _packs(tmp_path), tmp_path / "pre0", updates=0)
    arrays = ng.load_checkpoint(path)
    fresh = NetworkBank.create(cfg.bank_arch(), seed=cfg.seed)
    for name, value in fresh.state().items():
        assert np.array_equal(arrays[name], value)


def test_pretrain_shares_update_path_and_feeds_downstream(tmp_path):
    cfg = tiny_config(lnc_c=0.6)
    before = CALLS["ssl_update_step"]
    path = pretrain_on_videos(cfg, _packs(tmp_path), tmp_path / "pre", updates=5)
    assert CALLS["ssl_update_step"] == before + 5
    rows = (tmp_path / "pre" / "pretrain_metrics.csv").read_text().splitlines()
    assert len(rows) == 6
    down = tiny_config(freeze_encoder=True, encoder_checkpoint=str(path))
    out = train_end_to_end(down, tmp_path / "down")
    encoder = ng.load_checkpoint(path)
    policy = load_policy(out / "final.lfsc")
    for name in policy.bank.online.names("encoder."):
        assert np.array_equal(policy.bank.online[name].data, encoder[f"bank.online.{name}"])


def test_pretrain_input_checks(tmp_path, caplog):
    short = tmp_path / "short.lfsp"
    write_pack(short, np.zeros((10, 16, 16, 1), dtype=np.uint8), 5)
    with pytest.raises(ValueError, match="no usable episodes"):
        load_video_episodes([short])
    assert "skipping" in caplog.text
    other = tmp_path / "other.lfsp"
    write_pack(other, np.zeros((8, 12, 12, 1), dtype=np.uint8), 8)
    with pytest.raises(ValueError, match="geometry"):
        load_video_episodes(_packs(tmp_path, 1) + [other])


# ---------------------------------------------------------------- CLI

def test_cli_end_to_end(tmp_path, capsys):
    cfg_path = tmp_path / "tiny.cfg"
    cfg_path.write_text(tiny_config(value_window_start=0, value_window_length=5).to_text())
    assert cli.main(["train", "--config", str(cfg_path), "--seed", "1", "--out", str(tmp_path / "run")]) == 0
    ckpt = str(tmp_path / "run" / "final.lfsc")
    assert cli.main(["eval", "--checkpoint", ckpt, "--episodes", "2"]) == 0
    assert "mean" in capsys.readouterr().out
    assert cli.main(["analyze-values", "--run", str(tmp_path / "run")]) == 0
    assert cli.main(["analyze-values", "--checkpoint", ckpt, "--batches", "2"]) == 0
    text = capsys.readouterr().out
    assert "synthetic" in text and "real" in text

    frames_dir = tmp_path / "frames"
    frames_dir.mkdir()
    for i in range(2):
        np.save(frames_dir / f"ep{i}.npy", np.zeros((9, 16, 16, 1), dtype=np.uint8))
    assert cli.main(["pack", "--frames", str(frames_dir), "--out", str(tmp_path / "x.lfsp")]) == 0
    assert read_pack(tmp_path / "x.lfsp")[1] == 9
    assert cli.main(["record", "--config", str(cfg_path), "--episodes", "2", "--frames-per-episode", "10",
                     "--out", str(tmp_path / "packs")]) == 0
    assert cli.main(["pretrain", "--config", str(cfg_path), "--packs", str(tmp_path / "packs"), "--updates", "2",
                     "--out", str(tmp_path / "pre")]) == 0
    assert (tmp_path / "pre" / "encoder.lfsc").exists()
    with pytest.raises(SystemExit):
        cli.main(["train"])
