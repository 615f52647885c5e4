"""Adaptation strategies compared by the benchmarks.

All strategies share a duck-typed interface: observe(obs) consumes one
(angles, measured end-effector) pair, predict(q) returns the model's
end-effector estimate, and jacobian(q) its 2x2 derivative w.r.t. the
joint angles.  Before the first observation every strategy predicts with
the unadapted mean network, except the oracle length filter which uses
the exact kinematics at the prior-mean lengths (1, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import filter as smc
from .arm import (analytic_jacobian, draw_link_lengths, encode_angles,
                  encoding_jacobian, forward_kinematics)
from .net import DropoutNet, forward_masked, forward_mean, gradient_step_online, input_jacobian

STRATEGY_NAMES = ("none", "smcd", "gradient", "oracle_pf")


@dataclass
class OraclePfConfig:
    """Particle filter directly over the physical link lengths."""
    n_particles: int = 500
    jitter: float = 0.005     # random-walk std on each length per step
    sigma: float = 0.01       # measurement noise of the length likelihood
    prior_mean: float = 1.0
    prior_std: float = 0.3
    seed: int | Sequence[int] = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.sigma <= 0.0 or self.jitter < 0.0:
            raise ValueError("sigma must be positive and jitter nonnegative")


class NoAdaptation:
    """Frozen mean network; observations are ignored."""

    def __init__(self, net: DropoutNet, encoding: str = "raw"):
        self.net = net
        self.encoding = encoding

    def observe(self, obs: smc.Observation) -> None:
        pass

    def predict(self, q) -> np.ndarray:
        return forward_mean(self.net, encode_angles(q, self.encoding))

    def jacobian(self, q) -> np.ndarray:
        jac = input_jacobian(self.net, encode_angles(q, self.encoding))
        return jac @ encoding_jacobian(q, self.encoding)

    def predictor_snapshot(self):
        net, enc = self.net, self.encoding
        return lambda qs: forward_mean(net, encode_angles(qs, enc))


class SmcdAdaptation:
    """Particle filtering over dropout masks; predictions condition the
    frozen network on the current particle-mean mask."""

    def __init__(self, net: DropoutNet, cfg: smc.FilterConfig,
                 encoding: str = "raw", record_trace: bool = False):
        self.net = net
        self.cfg = cfg
        self.encoding = encoding
        self.state = smc.init_filter(cfg, net)
        self.trace: list[tuple[int, float, np.ndarray]] | None = [] if record_trace else None

    def observe(self, obs: smc.Observation) -> None:
        net_obs = smc.Observation(encode_angles(obs.prev_input, self.encoding),
                                  obs.measured_output)
        self.state = smc.step(self.state, self.net, net_obs, self.cfg)
        if self.trace is not None:
            self.trace.append((self.state.step_count, self.state.n_eff,
                               smc.mmse_mask(self.state)))

    def current_mask(self) -> np.ndarray | None:
        if self.state.step_count == 0:
            return None
        return smc.mmse_mask(self.state)

    def predict(self, q) -> np.ndarray:
        x = encode_angles(q, self.encoding)
        mask = self.current_mask()
        if mask is None:
            return forward_mean(self.net, x)
        return forward_masked(self.net, x, mask)

    def jacobian(self, q) -> np.ndarray:
        jac = input_jacobian(self.net, encode_angles(q, self.encoding),
                             self.current_mask())
        return jac @ encoding_jacobian(q, self.encoding)

    def predictor_snapshot(self):
        net, enc = self.net, self.encoding
        mask = self.current_mask()
        if mask is None:
            return lambda qs: forward_mean(net, encode_angles(qs, enc))
        mask = mask.copy()
        return lambda qs: forward_masked(net, encode_angles(qs, enc), mask)


class GradientAdaptation:
    """One online gradient step on a private network copy per observation."""

    def __init__(self, net: DropoutNet, lr: float, encoding: str = "raw"):
        self.net = net.copy()
        self.lr = lr
        self.encoding = encoding

    def observe(self, obs: smc.Observation) -> None:
        self.net = gradient_step_online(self.net,
                                        encode_angles(obs.prev_input, self.encoding),
                                        obs.measured_output, self.lr)

    def predict(self, q) -> np.ndarray:
        return forward_mean(self.net, encode_angles(q, self.encoding))

    def jacobian(self, q) -> np.ndarray:
        jac = input_jacobian(self.net, encode_angles(q, self.encoding))
        return jac @ encoding_jacobian(q, self.encoding)

    def predictor_snapshot(self):
        net, enc = self.net.copy(), self.encoding
        return lambda qs: forward_mean(net, encode_angles(qs, enc))


class OraclePfAdaptation:
    """Particle filter over (l1, l2) with the exact kinematics model."""

    def __init__(self, cfg: OraclePfConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.lengths = np.stack([
            draw_link_lengths(self.rng, cfg.prior_mean, cfg.prior_std)
            for _ in range(cfg.n_particles)
        ])
        self.weights = np.full(cfg.n_particles, 1.0 / cfg.n_particles)
        self.step_count = 0

    def observe(self, obs: smc.Observation) -> None:
        q = np.asarray(obs.prev_input, dtype=np.float64)
        z = np.asarray(obs.measured_output, dtype=np.float64)
        # reflect at zero to keep lengths positive
        self.lengths = np.abs(self.lengths
                              + self.rng.normal(0.0, self.cfg.jitter, self.lengths.shape))
        preds = forward_kinematics(q, self.lengths)
        logw = smc._gaussian_loglik(preds, z, self.cfg.sigma)
        top = logw.max()
        if np.isfinite(top):
            w = np.exp(logw - top)
            self.weights = w / w.sum()
        self.lengths = smc.resample(self.lengths, self.weights, self.rng)
        self.weights = np.full(len(self.lengths), 1.0 / len(self.lengths))
        self.step_count += 1

    def mean_lengths(self) -> np.ndarray:
        if self.step_count == 0:
            return np.array([self.cfg.prior_mean, self.cfg.prior_mean])
        return self.weights @ self.lengths

    def predict(self, q) -> np.ndarray:
        return forward_kinematics(np.asarray(q, dtype=np.float64), self.mean_lengths())

    def jacobian(self, q) -> np.ndarray:
        return analytic_jacobian(q, self.mean_lengths())

    def predictor_snapshot(self):
        lengths = self.mean_lengths().copy()
        return lambda qs: forward_kinematics(qs, lengths)


def make_strategy(name: str, net: DropoutNet | None = None, *,
                  filter_cfg: smc.FilterConfig | None = None,
                  gradient_lr: float = 1e-3,
                  oracle_cfg: OraclePfConfig | None = None,
                  encoding: str = "raw",
                  seed=None):
    """Build a named strategy; seed overrides the stochastic configs."""
    if name == "none":
        return NoAdaptation(net, encoding)
    if name == "smcd":
        cfg = filter_cfg or smc.FilterConfig()
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        return SmcdAdaptation(net, cfg, encoding)
    if name == "gradient":
        return GradientAdaptation(net, gradient_lr, encoding)
    if name == "oracle_pf":
        cfg = oracle_cfg or OraclePfConfig()
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        return OraclePfAdaptation(cfg)
    raise ValueError(f"unknown strategy {name!r}; expected one of {STRATEGY_NAMES}")
