"""Smoke test for the sma_py extension module.

Run after `pip install --no-build-isolation -e crates/python`.
"""

import math
import tempfile

import sma_py


def main():
    assert abs(sma_py.stabilization(1) - (math.e - 1.0)) < 1e-12
    assert abs(sma_py.stabilization(4) - (math.exp(0.25) - 1.0)) < 1e-12
    assert abs(sma_py.weighted_eval_metric([1.0, 3.0], [0.25, 0.75]) - 2.5) < 1e-12

    wins, losses, ties, p = sma_py.sign_test([2.0] * 15 + [0.0] * 5, [1.0] * 20)
    assert (wins, losses, ties) == (15, 5, 0)
    assert abs(p - 21700 / 1048576) < 1e-12

    adv, ret = sma_py.gae([1.0, 1.0], [0.0, 0.0], [False, False], [False, False], [0.0, 0.0], 0.0, 1.0, 1.0)
    assert adv == [2.0, 1.0] and ret == [2.0, 1.0]

    cfg = sma_py.RunConfig("desk")
    cfg.seed = 3
    cfg.set("pretrain.iterations", "2")
    cfg.set("pretrain.n_envs", "2")
    cfg.set("pretrain.n_steps", "8")
    cfg.set("pretrain.eval_episodes", "1")
    again = sma_py.RunConfig.from_toml(cfg.to_toml())
    assert again.to_toml() == cfg.to_toml()
    try:
        cfg.set("pretrain.no_such_key", "1")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    env = sma_py.VecEnv(4, seed=1, config=cfg)
    assert len(env) == 4
    obs = env.observations()
    assert len(obs) == 4 and len(obs[0]) == env.obs_dim
    for _ in range(20):
        obs, rewards, dones, timeouts = env.step([[0.0] * env.n_actions] * 4)
        assert all(r >= 0.0 for r in rewards)
    assert env.privileged_reads() == 0

    with tempfile.TemporaryDirectory() as tmp:
        cfg.out_dir = tmp
        report = sma_py.train("pretrain", cfg)
        assert report["stage"] == "pretrain"
        print("pretrain summary:", report["summary"])

    print("sma_py smoke test passed")


if __name__ == "__main__":
    main()
