"""Closed-loop PD tracking of a moving target with a model-derived Jacobian.

The plant is always the exact integrator dynamics and exact kinematics;
only the controller's Jacobian comes from the (possibly adapted) model.
The damped velocity law u = -K1 J^+ (x - x_g) - K2 qdot is solved
simultaneously with qdot = u (the plant is a pure integrator, so commanded
velocity and joint velocity coincide), giving u = -K1 J^+ (x - x_g) / (1 + K2).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .arm import forward_kinematics, telescoping_length, wrap_angle
from .filter import Observation

logger = logging.getLogger(__name__)

CONTROL_CSV_HEADER = "step,q1,q2,u1,u2,x,y,xg,yg,err,l2"


@dataclass
class ControlTask:
    radius: float = 1.0
    start_angle: float = 0.0
    k1: float = 20.0
    k2: float = 5.0
    horizon: int = 100
    telescoping: bool = True
    l1: float = 1.0
    l2: float = 1.0
    dt: float = 0.1
    revolutions: float = 1.0  # target laps around the circle per episode; 0 = stationary

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError("gains must be nonnegative")


@dataclass
class ControlTrace:
    q: np.ndarray    # (H, 2) joint angles at each step
    u: np.ndarray    # (H, 2) applied joint velocities (identical to qdot)
    x: np.ndarray    # (H, 2) true end-effector positions
    xg: np.ndarray   # (H, 2) target positions
    err: np.ndarray  # (H,) tracking error ||x - xg||
    l2: np.ndarray   # (H,) second-link length in effect
    faults: int = 0  # steps where the model Jacobian was non-finite


def sample_control_task(rng: np.random.Generator, **overrides) -> ControlTask:
    """Random tracking task: radius ~ U(0.3, 1.5), start angle ~ U(-pi, pi)."""
    params = dict(radius=float(rng.uniform(0.3, 1.5)),
                  start_angle=float(rng.uniform(-np.pi, np.pi)))
    params.update(overrides)
    return ControlTask(**params)


def target_position(task: ControlTask, k: int) -> np.ndarray:
    """Target at step k, moving around a circle centred on the arm base."""
    phi = task.start_angle + 2.0 * np.pi * task.revolutions * k / task.horizon
    return task.radius * np.array([np.cos(phi), np.sin(phi)])


def pinv_truncated(jac: np.ndarray, sv_cutoff: float = 1e-6) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with singular values below the cutoff dropped."""
    u, s, vt = np.linalg.svd(jac, full_matrices=False)
    inv = np.where(s > sv_cutoff, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return (vt.T * inv) @ u.T


def pd_control(x, x_g, qdot, jac, k1: float = 20.0, k2: float = 5.0,
               sv_cutoff: float = 1e-6) -> np.ndarray:
    """u = -k1 * pinv(jac) @ (x - x_g) - k2 * qdot.

    A non-finite Jacobian yields the safe zero action.
    """
    jac = np.asarray(jac, dtype=np.float64)
    if not np.all(np.isfinite(jac)):
        logger.warning("non-finite Jacobian in pd_control; commanding zero action")
        return np.zeros(jac.shape[1])
    err = np.asarray(x, dtype=np.float64) - np.asarray(x_g, dtype=np.float64)
    return -k1 * (pinv_truncated(jac, sv_cutoff) @ err) - k2 * np.asarray(qdot, dtype=np.float64)


class TrueModelReference:
    """Controller-side exact model: analytic Jacobian at known link lengths.

    lengths_fn(k) -> (l1, l2) supplies the true lengths at step k, so this
    recovers oracle behaviour when the schedule matches the plant.
    """

    def __init__(self, lengths_fn):
        self.lengths_fn = lengths_fn
        self._k = 0

    def observe(self, obs: Observation) -> None:
        self._k += 1

    def predict(self, q) -> np.ndarray:
        return forward_kinematics(np.asarray(q, dtype=np.float64),
                                  np.asarray(self.lengths_fn(self._k), dtype=np.float64))

    def jacobian(self, q) -> np.ndarray:
        from .arm import analytic_jacobian
        return analytic_jacobian(q, self.lengths_fn(self._k))


def run_control_episode(strategy, task: ControlTask, seed) -> ControlTrace:
    """Run one closed-loop episode from a random initial configuration.

    Per step: read the true end-effector position, query the strategy's
    Jacobian at the current angles, command the damped resolved-rate
    velocity, integrate the true dynamics, then feed the new (angles,
    position) observation to the strategy.
    """
    rng = np.random.default_rng(seed)
    q = rng.uniform(-np.pi, np.pi, 2)
    h = task.horizon
    trace = ControlTrace(np.zeros((h, 2)), np.zeros((h, 2)), np.zeros((h, 2)),
                         np.zeros((h, 2)), np.zeros(h), np.zeros(h))

    def lengths_at(k: int) -> np.ndarray:
        l2 = telescoping_length(k) if task.telescoping else task.l2
        return np.array([task.l1, float(l2)])

    x = forward_kinematics(q, lengths_at(0))
    for k in range(h):
        lengths = lengths_at(k)
        xg = target_position(task, k)
        jac = strategy.jacobian(q)
        ok = bool(np.all(np.isfinite(jac)))
        if not ok:
            trace.faults += 1
        # qdot = u exactly, so the damped law is solved simultaneously:
        # u = (-k1 J^+ e - k2 * 0) / (1 + k2)
        u = pd_control(x, xg, np.zeros(2), jac, task.k1, task.k2) / (1.0 + task.k2)
        if not np.all(np.isfinite(u)):
            trace.faults += ok  # count once even when the fault arises here
            u = np.zeros(2)
        trace.q[k] = q
        trace.u[k] = u
        trace.x[k] = x
        trace.xg[k] = xg
        trace.err[k] = np.linalg.norm(x - xg)
        trace.l2[k] = lengths[1]
        q = wrap_angle(q + u * task.dt)
        if not np.all(np.isfinite(q)):
            raise RuntimeError(f"control episode diverged at step {k}")
        x = forward_kinematics(q, lengths_at(k + 1))
        strategy.observe(Observation(prev_input=q.copy(), measured_output=x.copy()))
    return trace


def write_control_trace(trace: ControlTrace, path) -> None:
    """Single-episode trace CSV."""
    with open(path, "w", newline="\n") as f:
        f.write(CONTROL_CSV_HEADER + "\n")
        f.write(_trace_rows(trace))


def write_control_traces(seeded_traces, path) -> None:
    """Aggregated long-format CSV over episodes, with a leading seed column."""
    with open(path, "w", newline="\n") as f:
        f.write("seed," + CONTROL_CSV_HEADER + "\n")
        for seed, trace in seeded_traces:
            f.write(_trace_rows(trace, prefix=f"{seed},"))


def _trace_rows(trace: ControlTrace, prefix: str = "") -> str:
    lines = []
    for k in range(len(trace.err)):
        vals = (trace.q[k, 0], trace.q[k, 1], trace.u[k, 0], trace.u[k, 1],
                trace.x[k, 0], trace.x[k, 1], trace.xg[k, 0], trace.xg[k, 1],
                trace.err[k], trace.l2[k])
        lines.append(prefix + f"{k}," + ",".join(format(v, ".17g") for v in vals))
    return "\n".join(lines) + "\n"
