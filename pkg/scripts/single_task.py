"""Plain DDPG (no latent input) on 1/(s+1) with reward -|e|.

Prints the mean per-step |e| over the last 20 episodes for each seed.

    python3 scripts/single_task.py --seeds 0 1 2 --episodes 60
"""

import argparse

import numpy as np

from metarl_pc.ddpg import Agent, DDPGConfig
from metarl_pc.env import StateVariant, make_task_set
from metarl_pc.meta_embed import MetaHyperparams, meta_train


def run(seed: int, episodes: int, train_steps: int) -> float:
    task = make_task_set("BinaryGain")[0]
    init, train = np.random.SeedSequence(seed).spawn(2)
    agent = Agent(StateVariant.MetaBase.dim, 0, DDPGConfig(), np.random.default_rng(init))
    hp = MetaHyperparams(episodes=episodes, train_steps=train_steps)
    _, _, log = meta_train([task], agent, None, hp, np.random.default_rng(train))
    return float(np.mean(np.asarray(log.abs_error)[-20:]))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    p.add_argument("--episodes", type=int, default=60)
    p.add_argument("--train-steps", type=int, default=100)
    args = p.parse_args()
    for s in args.seeds:
        print(f"seed {s}: final |e| {run(s, args.episodes, args.train_steps):.4f}", flush=True)


if __name__ == "__main__":
    main()
