"""Behavioral-cloning policy: a small MLP with hand-rolled backprop.

Observations are featurized as (translation, rotation vector, gripper)
per history slot; actions as the same 6-DoF encoding plus a gripper
logit. The network has two ReLU hidden layers and trains with decoupled
weight decay (AdamW) on the mean squared action error. Everything is
float64 and fully determined by (dataset, config, seed).
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .geometry import Pose, Rng, rotation_to_axis_angle, rotation_vector_to_rotation
from .trajectory import Action, Dataset, format_floats
from .trajectory import MAX_STEP as DEFAULT_MAX_STEP

log = logging.getLogger(__name__)

FEATURES_PER_OBS = 7
ACTION_DIM = 7
# Normalization floor: dims whose training variation is below ~1 cm or
# ~0.01 rad carry jitter, not signal; standardizing them to unit scale
# makes the fitted net respond to noise and destabilizes rollouts.
STD_FLOOR = 1e-2
MAX_TURN = 0.1  # rad per step, decode-time clamp like max_step
STREAM_INIT = 21
STREAM_SHUFFLE = 22
SCHEMA_HEADER = "#sartbench-policy v1"


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters; defaults follow the reference recipe
    (AdamW, ReLU, 2x512 hidden, history 2, lr 1e-5, decay 1e-4,
    minibatch 32, 40 epochs)."""

    seed: int
    learning_rate: float = 1e-5
    weight_decay: float = 1e-4
    minibatch: int = 32
    epochs: int = 40
    hidden_units: int = 512
    history_len: int = 2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_step: float = DEFAULT_MAX_STEP
    stop_loss: float = 0.0  # end training early below this epoch loss; 0 = off
    lr_schedule: str = "constant"  # constant | cosine (decay to 0 over epochs)

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("rates must be positive")
        if self.epochs < 1 or self.minibatch < 1 or self.hidden_units < 1:
            raise ValueError("epochs, minibatch and hidden_units must be >= 1")
        if self.history_len < 1:
            raise ValueError("history_len must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:12]

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        return TrainConfig(**d)

    @staticmethod
    def from_file(path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return TrainConfig.from_dict(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


@dataclass
class MLPParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def arrays(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def copy(self) -> "MLPParams":
        return MLPParams(*(a.copy() for a in self.arrays()))


def init_params(rng: Rng, dim_in: int, hidden: int, dim_out: int) -> MLPParams:
    """He-scaled Gaussian weights, zero biases."""
    def w(fan_in, shape):
        return rng.normal(size=shape) * np.sqrt(2.0 / fan_in)
    return MLPParams(
        w(dim_in, (dim_in, hidden)), np.zeros(hidden),
        w(hidden, (hidden, hidden)), np.zeros(hidden),
        w(hidden, (hidden, dim_out)), np.zeros(dim_out))


def featurize(history, history_len: int) -> np.ndarray:
    """Flatten an observation history, oldest first.

    Shorter histories are left-padded by repeating the oldest
    observation; longer ones keep the most recent history_len entries.
    Each observation contributes translation (3), the rotation vector of
    goal_in_ee (3), and the gripper state (1).
    """
    if not history:
        raise ValueError("observation history is empty")
    obs = list(history)[-history_len:]
    obs = [obs[0]] * (history_len - len(obs)) + obs
    rows = []
    for o in obs:
        rows.append(np.concatenate([
            o.goal_in_ee.position,
            rotation_to_axis_angle(o.goal_in_ee.rotation),
            [float(o.gripper_state)],
        ]))
    return np.concatenate(rows)


def action_to_vector(action: Action) -> np.ndarray:
    return np.concatenate([
        action.delta.position,
        rotation_to_axis_angle(action.delta.rotation),
        [float(action.gripper_command)],
    ])


def vector_to_action(vec: np.ndarray, max_step: float) -> Action:
    """Decode a network output.

    Translation is clamped to max_step and the rotation step to MAX_TURN;
    the gripper closes on a positive logit.
    """
    v = np.asarray(vec, dtype=np.float64).reshape(ACTION_DIM)
    pos = v[:3]
    norm = float(np.linalg.norm(pos))
    if norm > max_step:
        pos = pos * (max_step / norm)
    rvec = v[3:6]
    angle = float(np.linalg.norm(rvec))
    if angle > MAX_TURN:
        rvec = rvec * (MAX_TURN / angle)
    rot = rotation_vector_to_rotation(rvec)
    return Action(Pose(pos, rot), 1 if v[6] > 0.0 else 0)


def flatten_dataset(dataset: Dataset, history_len: int):
    """(features, targets) arrays over every waypoint of every trajectory."""
    xs, ys = [], []
    for traj in dataset.trajectories:
        history = []
        for wp in traj.waypoints:
            history.append(wp.observation)
            if len(history) > history_len:
                history.pop(0)
            xs.append(featurize(history, history_len))
            ys.append(action_to_vector(wp.action))
    return np.ascontiguousarray(xs, dtype=np.float64), np.ascontiguousarray(
        ys, dtype=np.float64)


def forward(params: MLPParams, x: np.ndarray) -> np.ndarray:
    a1 = np.maximum(x @ params.w1 + params.b1, 0.0)
    a2 = np.maximum(a1 @ params.w2 + params.b2, 0.0)
    return a2 @ params.w3 + params.b3


def loss_batch(params: MLPParams, x: np.ndarray, y: np.ndarray) -> float:
    """Mean over the batch of the squared L2 action error."""
    diff = forward(params, x) - y
    return float((diff * diff).sum() / x.shape[0])


def grad_batch(params: MLPParams, x: np.ndarray, y: np.ndarray) -> MLPParams:
    """Exact analytic gradient of loss_batch w.r.t. every parameter."""
    z1 = x @ params.w1 + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.w2 + params.b2
    a2 = np.maximum(z2, 0.0)
    out = a2 @ params.w3 + params.b3
    g = (2.0 / x.shape[0]) * (out - y)
    g_w3 = a2.T @ g
    g_b3 = g.sum(axis=0)
    g_a2 = np.where(z2 > 0.0, g @ params.w3.T, 0.0)
    g_w2 = a1.T @ g_a2
    g_b2 = g_a2.sum(axis=0)
    g_a1 = np.where(z1 > 0.0, g_a2 @ params.w2.T, 0.0)
    g_w1 = x.T @ g_a1
    g_b1 = g_a1.sum(axis=0)
    return MLPParams(g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)


@dataclass
class Policy:
    """Trained policy: parameters + frozen feature normalization."""

    params: MLPParams
    norm_mean: np.ndarray
    norm_std: np.ndarray
    config: TrainConfig
    loss_curve: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def history_len(self) -> int:
        return self.config.history_len

    def normalize(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.norm_mean) / self.norm_std

    def predict_action(self, history) -> Action:
        feats = featurize(history, self.config.history_len)
        out = forward(self.params, self.normalize(feats)[None, :])[0]
        return vector_to_action(out, self.config.max_step)


def loss(policy: Policy, features: np.ndarray, targets: np.ndarray) -> float:
    """Loss of a policy on raw (unnormalized) feature rows."""
    x = np.atleast_2d(policy.normalize(np.asarray(features, dtype=np.float64)))
    y = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    return loss_batch(policy.params, x, y)


def backward(policy: Policy, features: np.ndarray, targets: np.ndarray) -> MLPParams:
    x = np.atleast_2d(policy.normalize(np.asarray(features, dtype=np.float64)))
    y = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    return grad_batch(policy.params, x, y)


def train(dataset: Dataset, cfg: TrainConfig) -> Policy:
    """Fit the policy on every waypoint of the dataset.

    Per-epoch shuffles come from a seeded permutation stream; the trailing
    partial minibatch is kept. Raises on a non-finite loss.
    """
    t0 = time.perf_counter()
    x, y = flatten_dataset(dataset, cfg.history_len)
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0), STD_FLOOR)
    xn = np.ascontiguousarray((x - mean) / std)

    rng = Rng(cfg.seed)
    params = init_params(rng.derive(STREAM_INIT), x.shape[1], cfg.hidden_units,
                         ACTION_DIM)
    shuffle = rng.derive(STREAM_SHUFFLE)
    perms = np.ascontiguousarray(
        np.stack([shuffle.permutation(x.shape[0]) for _ in range(cfg.epochs)]),
        dtype=np.int64)
    if cfg.lr_schedule == "cosine":
        phase = np.arange(cfg.epochs) / max(1, cfg.epochs - 1)
        lrs = cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * phase))
    else:
        lrs = np.full(cfg.epochs, cfg.learning_rate)
    losses = _kernels.train_loop(
        xn, y, params.w1, params.b1, params.w2, params.b2, params.w3, params.b3,
        perms, cfg.minibatch, np.ascontiguousarray(lrs), cfg.beta1, cfg.beta2,
        cfg.adam_eps, cfg.weight_decay, cfg.stop_loss)
    if not np.all(np.isfinite(losses)):
        bad = int(np.argmax(~np.isfinite(losses)))
        raise RuntimeError(
            f"training diverged: non-finite loss at epoch {bad} "
            f"(lr={cfg.learning_rate}, n={x.shape[0]})")
    log.info("trained on %d samples for %d epochs in %.2f s (final loss %.3e)",
             x.shape[0], cfg.epochs, time.perf_counter() - t0, losses[-1])
    return Policy(params, mean, std, cfg, losses)


# --- serialization -------------------------------------------------------


def save_policy(policy: Policy, path) -> None:
    cfg_json = json.dumps(asdict(policy.config), sort_keys=True,
                          separators=(",", ":"))
    lines = [SCHEMA_HEADER,
             f"config {cfg_json}",
             f"norm_mean {format_floats(policy.norm_mean)}",
             f"norm_std {format_floats(policy.norm_std)}"]
    for name, arr in zip(("w1", "b1", "w2", "b2", "w3", "b3"),
                         policy.params.arrays()):
        shape = " ".join(str(s) for s in arr.shape)
        lines.append(f"param {name} {shape}")
        lines.append(format_floats(arr.ravel()))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def save_loss_curve(policy: Policy, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,mean_loss\n")
        for e, v in enumerate(policy.loss_curve):
            fh.write(f"{e},{v!r}\n")


def load_policy(path) -> Policy:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != SCHEMA_HEADER:
        raise ValueError(f"expected header {SCHEMA_HEADER!r}")
    if not lines[1].startswith("config "):
        raise ValueError("line 2: expected config record")
    cfg = TrainConfig.from_dict(json.loads(lines[1][len("config "):]))
    mean = np.array([float(t) for t in lines[2].split()[1:]])
    std = np.array([float(t) for t in lines[3].split()[1:]])
    arrays = {}
    i = 4
    while i < len(lines):
        fields = lines[i].split()
        if fields[0] != "param":
            raise ValueError(f"line {i + 1}: expected param record")
        name = fields[1]
        shape = tuple(int(s) for s in fields[2:])
        values = np.array([float(t) for t in lines[i + 1].split()])
        arrays[name] = values.reshape(shape)
        i += 2
    params = MLPParams(*(arrays[n] for n in ("w1", "b1", "w2", "b2", "w3", "b3")))
    return Policy(params, mean, std, cfg)
