"""
Run output directory:

    rounds.jsonl             one RoundRecord per line, keys sorted, no wall time
    timing.jsonl             {"round": t, "wall_time": seconds} per line
    checkpoints/round_NNNN/  agent_I.mvfe encoder checkpoints (features_I.npy in direct
                             mode) and bases.mcrb with the bases extracted that round

Identical runs produce byte-identical rounds.jsonl files.
"""
import json
import logging
import os

import numpy as np

from mvfusion.internal.encoder.mlp import load_params, save_params
from mvfusion.internal.fusion.basis_wire import read_messages, write_messages

logger = logging.getLogger(__name__)

ROUNDS_FILE = "rounds.jsonl"
TIMING_FILE = "timing.jsonl"
CHECKPOINT_DIR = "checkpoints"


def record_line(record):
    return json.dumps(record.as_dict(), sort_keys=True)


def checkpoint_path(out_dir, round_index):
    return os.path.join(out_dir, CHECKPOINT_DIR, "round_{:04d}".format(round_index))


class RoundLog:
    """Streams round records and checkpoints into `out_dir`; use as a context manager."""

    def __init__(self, out_dir, checkpoint_every=1):
        self.out_dir = out_dir
        self.checkpoint_every = checkpoint_every
        self.last_checkpoint = None
        os.makedirs(out_dir, exist_ok=True)
        self._rounds = open(os.path.join(out_dir, ROUNDS_FILE), "w")
        self._timing = open(os.path.join(out_dir, TIMING_FILE), "w")

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        self._rounds.close()
        self._timing.close()

    def write(self, record):
        self._rounds.write(record_line(record) + "\n")
        self._timing.write(
            json.dumps({"round": record.round, "wall_time": record.wall_time}, sort_keys=True)
            + "\n"
        )
        self._rounds.flush()

    def __call__(self, state, record):
        self.write(record)
        final = state.round == state.cfg.rounds
        if self.checkpoint_every and (state.round % self.checkpoint_every == 0 or final):
            self.checkpoint(state)

    def checkpoint(self, state):
        path = write_checkpoint(self.out_dir, state)
        self.last_checkpoint = path
        return path


def write_checkpoint(out_dir, state):
    path = checkpoint_path(out_dir, state.round)
    os.makedirs(path, exist_ok=True)
    for agent in state.agents:
        if agent.params is not None:
            save_params(agent.params, os.path.join(path, "agent_{}.mvfe".format(agent.agent_id)))
        else:
            np.save(os.path.join(path, "features_{}.npy".format(agent.agent_id)), agent.features)
    write_messages(os.path.join(path, "bases.mcrb"), state.messages)
    logger.debug("checkpoint written to %s", path)
    return path


def latest_checkpoint(out_dir):
    root = os.path.join(out_dir, CHECKPOINT_DIR)
    if not os.path.isdir(root):
        return None
    rounds = sorted(name for name in os.listdir(root) if name.startswith("round_"))
    return os.path.join(root, rounds[-1]) if rounds else None


def load_checkpoint(path, agent_count):
    """Returns (encoder params or None, features or None, messages) per checkpoint dir."""
    params, features = [], []
    for i in range(agent_count):
        encoder = os.path.join(path, "agent_{}.mvfe".format(i))
        raw = os.path.join(path, "features_{}.npy".format(i))
        params.append(load_params(encoder) if os.path.exists(encoder) else None)
        features.append(np.load(raw) if os.path.exists(raw) else None)
    return params, features, read_messages(os.path.join(path, "bases.mcrb"))


def read_round_log(out_dir):
    with open(os.path.join(out_dir, ROUNDS_FILE)) as f:
        return [json.loads(line) for line in f if line.strip()]
