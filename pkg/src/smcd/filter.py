"""Bootstrap particle filter over dropout masks.

The filter state is an ensemble of binary masks.  Each step bit-flips every
particle with a small per-bit probability, scores the masked predictions
against the observed output under a Gaussian likelihood, and resamples.
The particle mean is a fractional mask used to condition the network for
downstream prediction and control.  The trained network itself is never
modified, so its original predictions stay recoverable at all times.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .net import DropoutNet, MaskParticle, forward_masked, forward_masked_ensemble

MASK_TRACE_HEADER_PREFIX = "step,n_eff"


@dataclass
class FilterConfig:
    n_particles: int = 500
    flip_rate: float = 0.02
    meas_noise_sigma: float = 0.05
    resample_threshold: float = 1.0  # resample when n_eff <= threshold * N; 1.0 = every step
    seed: int | Sequence[int] = 0
    resample_scheme: str = "systematic"  # or "multinomial"
    exact_count_flips: bool = False

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ValueError("flip_rate must be in [0, 1]")
        if self.meas_noise_sigma <= 0.0:
            raise ValueError("meas_noise_sigma must be positive")
        if not 0.0 < self.resample_threshold <= 1.0:
            raise ValueError("resample_threshold must be in (0, 1]")
        if self.resample_scheme not in ("systematic", "multinomial"):
            raise ValueError(f"unknown resample scheme {self.resample_scheme!r}")


@dataclass
class Observation:
    """One adaptation datum: the network input and the measured output."""
    prev_input: np.ndarray
    measured_output: np.ndarray


@dataclass
class FilterState:
    particles: np.ndarray  # (N, D) of 0.0/1.0
    weights: np.ndarray    # (N,), normalized
    step_count: int
    n_eff: float
    rng: np.random.Generator


@dataclass
class PosteriorPrediction:
    outputs: np.ndarray   # (N, out) per-particle predictions
    mean: np.ndarray      # weighted ensemble mean
    variance: np.ndarray  # weighted per-dimension variance


def init_filter(cfg: FilterConfig, net: DropoutNet) -> FilterState:
    """Draw N masks i.i.d. with keep probability 1 - p, uniform weights."""
    if net.dropout_p == 0.0:
        warnings.warn("network was trained with dropout_p = 0; every particle "
                      "starts as the all-ones mask", RuntimeWarning)
    rng = np.random.default_rng(cfg.seed)
    keep = 1.0 - net.dropout_p
    particles = (rng.random((cfg.n_particles, net.mask_dim)) < keep).astype(np.float64)
    weights = np.full(cfg.n_particles, 1.0 / cfg.n_particles)
    return FilterState(particles, weights, 0, float(cfg.n_particles), rng)


def _flip_batch(particles: np.ndarray, flip_rate: float, rng: np.random.Generator,
                exact_count: bool = False) -> np.ndarray:
    """xor every particle with an independent flip vector.

    By default each bit flips with probability flip_rate; in exact-count
    mode exactly floor(flip_rate * D) distinct bits flip per particle.
    """
    n, dim = particles.shape
    if exact_count:
        k = int(np.floor(flip_rate * dim))
        flips = np.zeros((n, dim), dtype=bool)
        if k > 0:
            cols = np.argsort(rng.random((n, dim)), axis=1)[:, :k]
            flips[np.arange(n)[:, None], cols] = True
    else:
        flips = rng.random((n, dim)) < flip_rate
    return np.logical_xor(particles > 0.5, flips).astype(np.float64)


def transition(mask: MaskParticle, flip_rate: float, rng: np.random.Generator,
               exact_count: bool = False) -> MaskParticle:
    """Mask Markov kernel: independently bit-flip a small fraction of the mask."""
    if not 0.0 <= flip_rate <= 1.0:
        raise ValueError("flip_rate must be in [0, 1]")
    bits = _flip_batch(mask.bits[None, :], flip_rate, rng, exact_count)[0]
    return MaskParticle(bits, mask.layer_offsets)


def _gaussian_loglik(preds: np.ndarray, z: np.ndarray, sigma: float) -> np.ndarray:
    """Log N(z | pred, sigma^2 I) per row; non-finite predictions score -inf."""
    resid = preds - z
    sq = np.sum(resid * resid, axis=-1)
    dim = preds.shape[-1]
    out = -sq / (2.0 * sigma * sigma) - 0.5 * dim * np.log(2.0 * np.pi * sigma * sigma)
    bad = ~np.isfinite(out)
    if np.any(bad):
        warnings.warn(f"{int(bad.sum())} particle prediction(s) were non-finite; "
                      "killing those particles", RuntimeWarning)
        out = np.where(bad, -np.inf, out)
    return out


def log_likelihood(net: DropoutNet, mask, obs: Observation, sigma: float) -> float:
    """Gaussian log-likelihood of the observation under one mask."""
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    pred = forward_masked(net, obs.prev_input, mask)
    z = np.asarray(obs.measured_output, dtype=np.float64)
    return float(_gaussian_loglik(pred[None, :], z, sigma)[0])


def effective_sample_size(weights: np.ndarray) -> float:
    """N_eff = 1 / sum(w_i^2) for normalized weights."""
    weights = np.asarray(weights, dtype=np.float64)
    return float(1.0 / np.sum(weights * weights))


def resample(particles: np.ndarray, weights: np.ndarray, rng: np.random.Generator,
             scheme: str = "systematic") -> np.ndarray:
    """Draw N particles proportional to their weights.

    Systematic resampling places one stratified point per particle, so the
    copy count of particle i is floor or ceil of N * w_i; multinomial draws
    independently.
    """
    n = len(weights)
    if scheme == "systematic":
        positions = (rng.random() + np.arange(n)) / n
        idx = np.searchsorted(np.cumsum(weights), positions)
    elif scheme == "multinomial":
        idx = rng.choice(n, size=n, p=weights)
    else:
        raise ValueError(f"unknown resample scheme {scheme!r}")
    return particles[np.minimum(idx, n - 1)]


def step(state: FilterState, net: DropoutNet, obs: Observation,
         cfg: FilterConfig) -> FilterState:
    """One filter update: transition, weight by likelihood, resample.

    Weights are accumulated in log space and normalized with the
    log-sum-exp trick.  If every likelihood underflows to zero the weights
    reset to uniform and a degeneracy warning is emitted.
    """
    n = len(state.particles)
    particles = _flip_batch(state.particles, cfg.flip_rate, state.rng,
                            cfg.exact_count_flips)
    x = np.asarray(obs.prev_input, dtype=np.float64)
    z = np.asarray(obs.measured_output, dtype=np.float64)
    preds = forward_masked_ensemble(net, x, particles)
    loglik = _gaussian_loglik(preds, z, cfg.meas_noise_sigma)
    with np.errstate(divide="ignore"):
        logw = np.log(state.weights) + loglik
    top = logw.max()
    if not np.isfinite(top):
        warnings.warn("all particle weights collapsed; resetting to uniform",
                      RuntimeWarning)
        weights = np.full(n, 1.0 / n)
    else:
        w = np.exp(logw - top)
        weights = w / w.sum()
    n_eff = effective_sample_size(weights)
    if n_eff <= cfg.resample_threshold * n:
        particles = resample(particles, weights, state.rng, cfg.resample_scheme)
        weights = np.full(n, 1.0 / n)
        n_eff = float(n)
    return FilterState(particles, weights, state.step_count + 1, n_eff, state.rng)


def mmse_mask(state: FilterState) -> np.ndarray:
    """Weight-averaged fractional mask; the plain particle mean after resampling."""
    return state.weights @ state.particles


def posterior_predict(state: FilterState, net: DropoutNet, x) -> PosteriorPrediction:
    """Per-particle predictions at one input, with ensemble mean and variance."""
    outputs = forward_masked_ensemble(net, np.asarray(x, dtype=np.float64),
                                      state.particles)
    mean = state.weights @ outputs
    diff = outputs - mean
    variance = state.weights @ (diff * diff)
    return PosteriorPrediction(outputs, mean, variance)


def write_mask_trace(path, records) -> None:
    """Mask trace CSV: one row per adaptation step with the step index,
    effective sample size, and the fractional mask entries."""
    records = list(records)
    if not records:
        raise ValueError("mask trace needs at least one record")
    dim = len(records[0][2])
    header = MASK_TRACE_HEADER_PREFIX + "".join(f",m_{i}" for i in range(dim))
    with open(path, "w", newline="\n") as f:
        f.write(header + "\n")
        for step_idx, n_eff, mask in records:
            vals = ",".join(format(v, ".17g") for v in np.asarray(mask))
            f.write(f"{int(step_idx)},{format(float(n_eff), '.17g')},{vals}\n")
