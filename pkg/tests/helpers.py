"""Shared test oracles: exact Bayes enumeration over small mask spaces,
finite-difference derivatives, and small hand-built networks."""

from __future__ import annotations

import numpy as np

from smcd.net import DropoutNet, loss_and_grads, forward_masked


def net_bytes(net: DropoutNet) -> bytes:
    """Concatenated parameter bytes, for exact mutation checks."""
    return b"".join(np.ascontiguousarray(p).tobytes() for p in net.weights + net.biases)


def toy_offset_net(coeffs, p: float = 0.5) -> DropoutNet:
    """1-D net whose output is a weighted sum of the mask bits.

    Hidden pre-activations are constant 1 regardless of the input, so the
    masked output is sum_j coeffs[j] * bits[j] / (1 - p).  This makes every
    mask's prediction known in closed form.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    d = len(coeffs)
    weights = [np.zeros((d, 1)), coeffs[None, :].copy()]
    biases = [np.ones(d), np.zeros(1)]
    return DropoutNet((1, d, 1), weights, biases, p, (0,))


def all_masks(dim: int) -> np.ndarray:
    """All 2^dim binary masks, one per row."""
    grid = np.indices((2,) * dim).reshape(dim, -1).T
    return grid[:, ::-1].astype(np.float64)


def exact_bayes_marginals(net: DropoutNet, x, observations, flip_rate: float,
                          sigma: float):
    """Exact posterior bit-marginals by enumeration over every mask.

    Starts from the i.i.d. keep-probability prior, applies the independent
    per-bit flip kernel and the Gaussian likelihood at each observation,
    and returns one marginal vector per step.
    """
    dim = net.mask_dim
    masks = all_masks(dim)
    keep = 1.0 - net.dropout_p
    log_prior = (np.log(keep) * masks + np.log(1.0 - keep) * (1.0 - masks)).sum(axis=1)
    prob = np.exp(log_prior - log_prior.max())
    prob /= prob.sum()

    hamming = (masks[:, None, :] != masks[None, :, :]).sum(axis=2)
    if flip_rate in (0.0, 1.0):
        kernel = (hamming == (0 if flip_rate == 0.0 else dim)).astype(np.float64)
    else:
        kernel = flip_rate ** hamming * (1.0 - flip_rate) ** (dim - hamming)

    preds = np.array([forward_masked(net, np.asarray(x, dtype=np.float64), m)
                      for m in masks])
    marginals = []
    for z in observations:
        prob = kernel.T @ prob
        resid = preds - np.asarray(z, dtype=np.float64)
        loglik = -np.sum(resid * resid, axis=1) / (2.0 * sigma ** 2)
        w = prob * np.exp(loglik - loglik.max())
        prob = w / w.sum()
        marginals.append(masks.T @ prob)
    return marginals


def fd_param_grads(net: DropoutNet, x, y, masks, h: float = 1e-6):
    """Central finite differences of the batch loss w.r.t. every parameter."""
    def loss_of(n):
        value, _, _ = loss_and_grads(n, x, y, masks)
        return value

    grads_w, grads_b = [], []
    for kind, grads in (("w", grads_w), ("b", grads_b)):
        params = net.weights if kind == "w" else net.biases
        for li, p in enumerate(params):
            g = np.zeros_like(p)
            it = np.nditer(p, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                probe = net.copy()
                target = probe.weights[li] if kind == "w" else probe.biases[li]
                target[idx] += h
                up = loss_of(probe)
                target[idx] -= 2 * h
                down = loss_of(probe)
                g[idx] = (up - down) / (2 * h)
            grads.append(g)
    return grads_w, grads_b


def fd_input_jacobian(net: DropoutNet, x, mask, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the (masked) forward pass w.r.t. x."""
    from smcd.net import forward_mean

    def f(x_probe):
        if mask is None:
            return forward_mean(net, x_probe)
        return forward_masked(net, x_probe, mask)

    x = np.asarray(x, dtype=np.float64)
    cols = []
    for i in range(len(x)):
        up, down = x.copy(), x.copy()
        up[i] += h
        down[i] -= h
        cols.append((f(up) - f(down)) / (2 * h))
    return np.stack(cols, axis=1)


def max_rel_err(a, b, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))
