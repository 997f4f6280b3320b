"""Smoke test for the `emac` extension module.

Build and install first:
    maturin build --release -m crates/py/Cargo.toml -o dist && pip install dist/emac-*.whl
then run:
    python python/smoke_test.py
"""

import math
import os
import tempfile

import emac

TINY_SIM = {"n_ue": 2, "buffer_capacity": 3, "episode_len": 6, "history_len": 2}
TINY_PLAN = {
    "sim": TINY_SIM,
    "train": {"hidden": [8, 8], "batch_size": 16, "update_interval": 6, "replay_capacity": 500},
    "train_episodes": 20,
    "eval_episodes": 5,
    "test_episodes": 10,
    "repetitions": 2,
    "eval_period": 10,
    "tune_grid": [0.0, 0.5, 1.0],
    "tune_episodes": 5,
}

NOTHING, TRANSMIT, DELETE = 0, 1, 2


def check_bounds():
    assert emac.max_goodput(0.5, 2) == 1.0
    assert math.isclose(emac.max_goodput(0.083, 2), 0.166)
    assert emac.ARRIVAL_SWEEP == [0.083, 0.16, 0.25, 0.33, 0.41, 0.5]
    assert emac.UE_SWEEP == [2, 3, 4, 5]
    plan = emac.default_plan()
    assert plan["sim"]["n_ue"] == 2 and plan["repetitions"] == 8


def check_env():
    # one UE, always an SDU waiting, perfect channel
    env = emac.Env({"n_ue": 1, "arrival_prob": 1.0, "tbler": 0.0, "episode_len": 8}, seed=3)
    delivered = 0
    while not env.done:
        assert env.sample_arrivals() == [True]
        action = TRANSMIT if env.tti % 2 == 0 else DELETE
        outcome = env.resolve_uplink([action])
        record = env.finish_tti([0], [0])
        assert record["bad_deletes"] == 0
        assert not record["collision"]
        if action == TRANSMIT:
            assert outcome["kind"]["kind"] == "decoded"
        delivered += record["new_delivery"]
    assert delivered == 4
    assert env.goodput() == 0.5
    assert len(env.log()["records"]) == 8

    env = emac.Env({"n_ue": 2, "arrival_prob": 1.0, "tbler": 0.0}, seed=0)
    record = env.step([TRANSMIT, TRANSMIT], [0, 0], [0, 0])
    assert record["collision"] and record["outcome"]["kind"]["kind"] == "garbled"

    for bad in ({"tbler": 2.0}, {"n_ues": 2}):
        try:
            emac.Env(bad)
        except ValueError:
            pass
        else:
            raise AssertionError(f"{bad} accepted")


def check_baselines():
    cf = emac.evaluate_baseline("contention_free", TINY_SIM, episodes=50)
    assert cf["collision_mean"] == 0.0 and cf["episodes"] == 50
    cb = emac.evaluate_baseline("contention_based", TINY_SIM, episodes=50, p_t=0.5)
    assert cb["p_t"] == 0.5 and 0.0 <= cb["goodput_mean"] <= cb["upper_bound"]
    tuned = emac.tune_pt(TINY_SIM, grid=[0.0, 0.5, 1.0], episodes=20)
    assert tuned["best"] in (0.5, 1.0)
    assert [s["p_t"] for s in tuned["scores"]] == [0.0, 0.5, 1.0]
    assert tuned["scores"][0]["goodput_mean"] == 0.0


def check_training():
    survivor, curve, test = emac.train(TINY_PLAN)
    assert len(curve) == 4
    assert {p["episode"] for p in curve} == {10, 20}
    assert survivor.eval_goodput == max(p["eval_goodput"] for p in curve)
    assert test["episodes"] == 10
    assert survivor.evaluate(10) == test

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "best.ckpt")
        survivor.save(path)
        loaded = emac.Checkpoint.load(path)
        assert loaded.to_bytes() == survivor.to_bytes()
        with open(path, "rb") as f:
            assert f.read() == survivor.to_bytes()
        damaged = bytearray(survivor.to_bytes())
        damaged[-1] ^= 0x01
        try:
            emac.Checkpoint.from_bytes(bytes(damaged))
        except ValueError:
            pass
        else:
            raise AssertionError("damaged checkpoint accepted")
    log = survivor.rollout(seed=1)
    assert len(log["records"]) == TINY_SIM["episode_len"]


def main():
    check_bounds()
    check_env()
    check_baselines()
    check_training()
    print("smoke test passed")


if __name__ == "__main__":
    main()
