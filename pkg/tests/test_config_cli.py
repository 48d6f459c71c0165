import json

import numpy as np
import pytest

from impactrl import nnet
from impactrl.cli import main
from impactrl.config import (
    ConfigError,
    CONTINUOUS_PROFILE,
    DISCRETE_PROFILE,
    parse_config,
    serialize_config,
)
from impactrl.runtime import CSV_HEADER

TINY = [
    "--set", "total_timesteps=400",
    "--set", "sample_batch_size=20",
    "--set", "train_batch_size=40",
    "--set", "buffer_slots=2",
    "--set", "replay_count=2",
    "--set", "workers=1",
    "--set", "hidden=8,8",
    "--set", "seeds=1",
    "--deterministic",
]


class TestProfiles:
    def test_discrete_profile_defaults(self):
        cfg = parse_config(None, {"env": "cartpole"})
        assert cfg.clip_eps == 0.3
        assert cfg.buffer_slots == 4
        assert cfg.replay_count == 2
        assert cfg.sample_batch_size == 50
        assert cfg.train_batch_size == 500
        assert cfg.rho == 2.0
        assert cfg.entropy_coeff == 0.01
        assert cfg.gamma == 0.99
        assert cfg.lam == 0.995
        assert cfg.lr == 3e-4  # desk-scale pick from the published search grid
        assert cfg.grad_clip == 10.0
        assert cfg.kl_coeff == 0.0
        assert cfg.kl_target == 0.01
        assert cfg.value_coeff == 1.0
        assert cfg.t_target == 8  # N*K

    def test_continuous_profile_defaults(self):
        assert CONTINUOUS_PROFILE["sample_batch_size"] == 1024
        assert CONTINUOUS_PROFILE["train_batch_size"] == 32768
        cfg = parse_config(None, {"env": "pointmass1d"})
        assert cfg.clip_eps == 0.4
        assert cfg.buffer_slots == 16
        assert cfg.replay_count == 20
        assert cfg.rho == 2.0
        assert cfg.kl_target == 0.04
        assert cfg.kl_coeff == 1.0
        assert cfg.entropy_coeff == 0.0
        assert cfg.grad_clip == 0.5
        assert cfg.gamma == 0.995
        assert cfg.lr == 3e-4
        # desk-scale divisor 16 applied at finalize
        assert cfg.sample_batch_size == 1024 // 16
        assert cfg.train_batch_size == 32768 // 16
        assert cfg.t_target == 320

    def test_paper_scale_keeps_full_batches(self):
        cfg = parse_config(None, {"env": "pointmass1d", "desk_divisor": "1"})
        assert cfg.sample_batch_size == 1024
        assert cfg.train_batch_size == 32768

    def test_rho_below_one_rejected(self):
        with pytest.raises(ConfigError):
            parse_config(None, {"env": "cartpole", "rho": "0.5"})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config(None, {"env": "cartpole", "bogus_key": "1"})

    def test_batch_multiple_enforced(self):
        with pytest.raises(ConfigError):
            parse_config(None, {"env": "cartpole", "train_batch_size": "501"})

    def test_unknown_env_rejected(self):
        with pytest.raises(ConfigError):
            parse_config(None, {"env": "atari-pong"})


class TestModePresets:
    def test_impala_is(self):
        cfg = parse_config(None, {"env": "cartpole", "mode": "impala_is"})
        assert cfg.replay_count == 1
        assert cfg.eps_clip is False
        assert cfg.ratio_variant == "r2"
        assert cfg.t_target == 1

    def test_appo(self):
        cfg = parse_config(None, {"env": "cartpole", "mode": "appo"})
        assert cfg.eps_clip is True
        assert cfg.ratio_variant == "r2"
        assert cfg.replay_count == 2

    def test_ppo_sync(self):
        cfg = parse_config(None, {"env": "cartpole", "mode": "ppo_sync"})
        assert cfg.deterministic is True
        assert cfg.buffer_selection == "least_traversed"
        assert cfg.t_target == cfg.buffer_slots * cfg.replay_count

    def test_impact_variant_override_for_ablation(self):
        cfg = parse_config(None, {"env": "cartpole", "ratio_variant": "r1"})
        assert cfg.mode == "impact" and cfg.ratio_variant == "r1"
        assert cfg.t_target == cfg.buffer_slots * cfg.replay_count


class TestRoundTrip:
    def test_serialize_parse_idempotent(self, tmp_path):
        cfg = parse_config(None, {"env": "pointmass1d", "workers": "3", "stop_return": "-5.5"})
        path = tmp_path / "cfg.txt"
        path.write_text(serialize_config(cfg))
        cfg2 = parse_config(path)
        assert cfg2 == cfg
        assert serialize_config(cfg2) == serialize_config(cfg)

    def test_file_with_comments_and_overrides(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("# base\nenv = cartpole\nworkers = 4  # inline comment\n")
        cfg = parse_config(path, {"workers": "2"})
        assert cfg.workers == 2 and cfg.env == "cartpole"


class TestCliTrain:
    def test_tiny_train_produces_artifacts(self, tmp_path):
        out = tmp_path / "run"
        code = main(["train", "--out", str(out), "--set", "env=cartpole", *TINY])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["kind"] == "train"
        assert len(manifest["runs"]) == 1
        csv_path = out / manifest["runs"][0]["metrics"]
        lines = csv_path.read_text().splitlines()
        assert lines[0] == CSV_HEADER
        assert len(lines) > 1
        ckpt = out / manifest["runs"][0]["checkpoint"]
        params, extra = nnet.load_checkpoint(ckpt)
        assert extra["env"] == "cartpole"

    def test_invalid_env_exits_nonzero_without_artifacts(self, tmp_path):
        out = tmp_path / "bad"
        code = main(["train", "--out", str(out), "--set", "env=nope", "--set", "seeds=1"])
        assert code == 2
        assert not out.exists()

    def test_three_seeds_three_csvs(self, tmp_path):
        out = tmp_path / "multi"
        args = list(TINY)
        args[args.index("seeds=1")] = "seeds=1,2,3"
        code = main(["train", "--out", str(out), "--set", "env=cartpole", *args])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert [r["seed"] for r in manifest["runs"]] == [1, 2, 3]
        for r in manifest["runs"]:
            assert (out / r["metrics"]).exists()

    def test_impact_threads_env_cap(self, tmp_path, monkeypatch):
        monkeypatch.setenv("IMPACT_THREADS", "1")
        out = tmp_path / "capped"
        code = main(
            ["train", "--out", str(out), "--set", "env=cartpole", "--set", "workers=4", *TINY[:-1],
             "--deterministic"]
        )
        assert code == 0
        cfg_text = (out / "config.txt").read_text()
        assert "workers = 1" in cfg_text


class TestCliEval:
    @pytest.fixture()
    def checkpoint(self, tmp_path):
        from impactrl.nnet import NetLayout, init_params, save_checkpoint

        layout = NetLayout(
            obs_dim=4, hidden=(64, 64), head_kind="categorical", action_dim=2, shared_value=True
        )
        params = init_params(layout, seed=0)
        path = tmp_path / "untrained.json"
        save_checkpoint(params, path, extra={"env": "cartpole"})
        return path

    def test_untrained_policy_scores_low(self, checkpoint, capsys):
        # near-uniform-random behavior keeps the pole up well under 50 steps
        code = main(["eval", "--checkpoint", str(checkpoint), "--episodes", "20", "--seed", "0"])
        assert code == 0
        out = capsys.readouterr().out
        mean = float(out.split("mean_return=")[1].split()[0])
        assert mean < 50.0

    def test_zero_episodes_rejected(self, checkpoint):
        assert main(["eval", "--checkpoint", str(checkpoint), "--episodes", "0"]) == 2

    def test_eval_deterministic(self, checkpoint, capsys):
        outputs = []
        for _ in range(2):
            assert main(["eval", "--checkpoint", str(checkpoint), "--episodes", "5", "--seed", "3"]) == 0
            outputs.append(capsys.readouterr().out)
        assert outputs[0] == outputs[1]


class TestCliReplayCurves:
    def test_graceful_without_plotkit(self, tmp_path, monkeypatch):
        import builtins

        real_import = builtins.__import__

        def blocked(name, *args, **kwargs):
            if name.startswith("plotkit"):
                raise ImportError("blocked for test")
            return real_import(name, *args, **kwargs)

        monkeypatch.setattr(builtins, "__import__", blocked)
        code = main(["replay-curves", "--dir", str(tmp_path), "--out", str(tmp_path / "x.png")])
        assert code == 3
