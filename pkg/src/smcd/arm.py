"""Two-link planar arm: exact kinematics, motor-babbling data generation,
and the telescoping-link variant used to stress continual adaptation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DATASET_MAGIC = b"SMCD"

TRAJECTORY_DTYPE = np.dtype([
    ("task_id", "<u4"), ("episode_id", "<u4"), ("step", "<u4"),
    ("q1", "<f8"), ("q2", "<f8"), ("u1", "<f8"), ("u2", "<f8"),
    ("x", "<f8"), ("y", "<f8"), ("l1", "<f8"), ("l2", "<f8"),
])

DATASET_CSV_HEADER = "task_id,episode_id,step,q1,q2,u1,u2,x,y,l1,l2"


@dataclass
class ArmTask:
    """Link lengths plus the joint state of one two-link arm."""
    l1: float
    l2: float
    q: np.ndarray = field(default_factory=lambda: np.zeros(2))
    qdot: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def lengths(self) -> np.ndarray:
        return np.array([self.l1, self.l2])


@dataclass
class DatasetSpec:
    n_tasks: int = 1000
    episodes_per_task: int = 150
    steps_per_episode: int = 10
    link_mean: float = 1.0
    link_std: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if min(self.n_tasks, self.episodes_per_task, self.steps_per_episode) < 1:
            raise ValueError("all dataset counts must be >= 1")


def forward_kinematics(q, lengths) -> np.ndarray:
    """End-effector position of the two-link arm.

    x = l1*cos(q1) + l2*cos(q1 + q2), y = l1*sin(q1) + l2*sin(q1 + q2).
    q and lengths broadcast on their leading axes; the last axis is 2.
    """
    q = np.asarray(q, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.float64)
    q1 = q[..., 0]
    q12 = q[..., 0] + q[..., 1]
    l1 = lengths[..., 0]
    l2 = lengths[..., 1]
    x = l1 * np.cos(q1) + l2 * np.cos(q12)
    y = l1 * np.sin(q1) + l2 * np.sin(q12)
    return np.stack([x, y], axis=-1)


def step_dynamics(q, u, dt: float = 1.0) -> np.ndarray:
    """Joint velocities equal the action: one Euler step q + u*dt."""
    return np.asarray(q, dtype=np.float64) + np.asarray(u, dtype=np.float64) * dt


def analytic_jacobian(q, lengths) -> np.ndarray:
    """Exact 2x2 Jacobian of forward_kinematics w.r.t. the joint angles."""
    q = np.asarray(q, dtype=np.float64)
    l1, l2 = np.asarray(lengths, dtype=np.float64)
    s1, c1 = np.sin(q[0]), np.cos(q[0])
    s12, c12 = np.sin(q[0] + q[1]), np.cos(q[0] + q[1])
    return np.array([
        [-l1 * s1 - l2 * s12, -l2 * s12],
        [l1 * c1 + l2 * c12, l2 * c12],
    ])


def telescoping_length(k) -> np.ndarray | float:
    """Second-link length of the telescoping arm at timestep k (period 40)."""
    return 1.0 + 0.25 * np.sin(np.pi * np.asarray(k, dtype=np.float64) / 20.0)


def wrap_angle(q):
    """Wrap angles to (-pi, pi]."""
    w = np.mod(np.asarray(q, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def draw_link_lengths(rng: np.random.Generator, mean: float = 1.0, std: float = 0.3) -> np.ndarray:
    """Draw a (l1, l2) pair from N(mean, std), redrawing until both positive."""
    lengths = rng.normal(mean, std, 2)
    while np.any(lengths <= 0.0):
        lengths = rng.normal(mean, std, 2)
    return lengths


def _babble(rng: np.random.Generator, n_episodes: int, n_steps: int):
    """Motor-babbling trajectories: q0 ~ U(-pi, pi), u ~ N(0, 1), integrated
    and wrapped.  Records hold the post-step angles alongside the action
    that produced them.  Returns (qs, us) of shape (E, S, 2)."""
    q0 = rng.uniform(-np.pi, np.pi, (n_episodes, 2))
    us = rng.normal(0.0, 1.0, (n_episodes, n_steps, 2))
    qs = wrap_angle(q0[:, None, :] + np.cumsum(us, axis=1))
    return qs, us


def generate_dataset(spec: DatasetSpec) -> np.ndarray:
    """Generate the multi-task babbling dataset as a structured array.

    Each task draws fixed link lengths once; each episode restarts from a
    uniform random angle; each step applies a standard-normal action.  The
    per-task RNG stream is derived from (seed, task_id), so generation is
    reproducible and parallelizable across tasks.
    """
    n_eps, n_steps = spec.episodes_per_task, spec.steps_per_episode
    records = np.empty(spec.n_tasks * n_eps * n_steps, dtype=TRAJECTORY_DTYPE)
    block = n_eps * n_steps
    ep_ids = np.repeat(np.arange(n_eps, dtype=np.uint32), n_steps)
    step_ids = np.tile(np.arange(n_steps, dtype=np.uint32), n_eps)
    for task in range(spec.n_tasks):
        rng = np.random.default_rng([spec.seed, task])
        lengths = draw_link_lengths(rng, spec.link_mean, spec.link_std)
        qs, us = _babble(rng, n_eps, n_steps)
        xy = forward_kinematics(qs, lengths)
        rows = records[task * block:(task + 1) * block]
        rows["task_id"] = task
        rows["episode_id"] = ep_ids
        rows["step"] = step_ids
        rows["q1"] = qs[..., 0].ravel()
        rows["q2"] = qs[..., 1].ravel()
        rows["u1"] = us[..., 0].ravel()
        rows["u2"] = us[..., 1].ravel()
        rows["x"] = xy[..., 0].ravel()
        rows["y"] = xy[..., 1].ravel()
        rows["l1"] = lengths[0]
        rows["l2"] = lengths[1]
    return records


@dataclass
class EvalEpisode:
    """One held-out babbling episode: burn-in observations then a scored horizon."""
    task: ArmTask
    q: np.ndarray   # (T, 2) wrapped post-step angles
    u: np.ndarray   # (T, 2) actions
    xy: np.ndarray  # (T, 2) true end-effector positions
    burn_in: int
    horizon: int


def make_eval_episode(seed, burn_in: int, horizon: int,
                      link_mean: float = 1.0, link_std: float = 0.3,
                      lengths=None) -> EvalEpisode:
    """Generate a single evaluation episode of burn_in + horizon steps.

    Link lengths are drawn from the task prior unless given explicitly.
    """
    if burn_in < 0 or horizon < 0 or burn_in + horizon < 1:
        raise ValueError("episode needs burn_in + horizon >= 1 steps")
    rng = np.random.default_rng(seed)
    if lengths is None:
        lengths = draw_link_lengths(rng, link_mean, link_std)
    else:
        lengths = np.asarray(lengths, dtype=np.float64)
    qs, us = _babble(rng, 1, burn_in + horizon)
    xy = forward_kinematics(qs, lengths)
    task = ArmTask(float(lengths[0]), float(lengths[1]), q=qs[0, 0].copy())
    return EvalEpisode(task, qs[0], us[0], xy[0], burn_in, horizon)


def encode_angles(q, encoding: str = "raw") -> np.ndarray:
    """Network input featurization of joint angles: raw (q1, q2) or
    (sin q1, cos q1, sin q2, cos q2)."""
    q = np.asarray(q, dtype=np.float64)
    if encoding == "raw":
        return q
    if encoding == "sincos":
        parts = [np.sin(q[..., 0]), np.cos(q[..., 0]), np.sin(q[..., 1]), np.cos(q[..., 1])]
        return np.stack(parts, axis=-1)
    raise ValueError(f"unknown encoding {encoding!r}")


def encoding_jacobian(q, encoding: str = "raw") -> np.ndarray:
    """Derivative of encode_angles w.r.t. q at a single configuration."""
    q = np.asarray(q, dtype=np.float64)
    if encoding == "raw":
        return np.eye(2)
    if encoding == "sincos":
        s1, c1 = np.sin(q[0]), np.cos(q[0])
        s2, c2 = np.sin(q[1]), np.cos(q[1])
        return np.array([[c1, 0.0], [-s1, 0.0], [0.0, c2], [0.0, -s2]])
    raise ValueError(f"unknown encoding {encoding!r}")


def encoded_input_dim(encoding: str) -> int:
    return {"raw": 2, "sincos": 4}[encoding]


def training_arrays(records: np.ndarray, encoding: str = "raw"):
    """Extract (inputs, targets) for training: angles -> end-effector position."""
    q = np.stack([records["q1"], records["q2"]], axis=-1)
    xy = np.stack([records["x"], records["y"]], axis=-1)
    return encode_angles(q, encoding), xy


def write_dataset_csv(records: np.ndarray, path) -> None:
    """Dataset CSV: fixed header, float columns at 17 significant digits, LF endings."""
    with open(path, "w", newline="\n") as f:
        f.write(DATASET_CSV_HEADER + "\n")
        for r in records:
            ints = f'{r["task_id"]},{r["episode_id"]},{r["step"]}'
            floats = ",".join(format(r[name], ".17g") for name in
                              ("q1", "q2", "u1", "u2", "x", "y", "l1", "l2"))
            f.write(f"{ints},{floats}\n")


def read_dataset_csv(path) -> np.ndarray:
    with open(path) as f:
        header = f.readline().strip()
        if header != DATASET_CSV_HEADER:
            raise ValueError(f"{path}: unexpected dataset header {header!r}")
        data = np.loadtxt(f, delimiter=",", ndmin=2)
    records = np.empty(len(data), dtype=TRAJECTORY_DTYPE)
    for i, name in enumerate(TRAJECTORY_DTYPE.names):
        records[name] = data[:, i]
    return records


def write_dataset_bin(records: np.ndarray, path) -> None:
    """Compact binary twin of the CSV: magic, little-endian u64 record count,
    then packed records."""
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(np.uint64(len(records)).astype("<u8").tobytes())
        f.write(records.astype(TRAJECTORY_DTYPE, copy=False).tobytes())


def read_dataset_bin(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != DATASET_MAGIC:
        raise ValueError(f"{path}: not a dataset file (bad magic)")
    count = int(np.frombuffer(data, dtype="<u8", count=1, offset=4)[0])
    records = np.frombuffer(data, dtype=TRAJECTORY_DTYPE, count=count, offset=12)
    if 12 + count * TRAJECTORY_DTYPE.itemsize != len(data):
        raise ValueError(f"{path}: truncated or oversized dataset file")
    return records.copy()
