"""Dense feedforward networks with explicit dropout masks.

The mask over hidden activations is the unit of online adaptation: a flat
binary vector selecting which hidden units stay active.  Masked forward
passes use inverted-dropout scaling (kept activations are divided by
1 - p), so the constant fractional mask filled with 1 - p reproduces the
plain "mean" network, and at p = 0 the all-ones mask is the plain network.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"SMCD"
CHECKPOINT_VERSION = 1


@dataclass
class MaskParticle:
    """Flat mask over the masked hidden layers.

    bits holds one value per masked hidden unit, 0/1 for sampled masks or
    fractional values in [0, 1] for averaged masks.  layer_offsets maps
    contiguous bit segments back to hidden layers as (start, end) pairs.
    """

    bits: np.ndarray
    layer_offsets: tuple[tuple[int, int], ...] = ()


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    optimizer: str = "sgd"  # "sgd" or "adam"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(eq=False)
class DropoutNet:
    """Feedforward ReLU network whose hidden units can be dropped.

    weights[i] has shape (layer_sizes[i+1], layer_sizes[i]) and biases[i]
    has length layer_sizes[i+1].  Hidden layers use ReLU, the output layer
    is linear.  masked_layers lists the hidden layers (0-based) whose
    activations are subject to masking; by default all of them.
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    dropout_p: float = 0.5
    masked_layers: tuple[int, ...] = ()
    loss_history: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError("layer_sizes needs >= 2 positive entries")
        self.layer_sizes = sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("need one weight matrix and bias per connection")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]):
                raise ValueError(f"weight {i} has shape {w.shape}, expected {(sizes[i + 1], sizes[i])}")
            if b.shape != (sizes[i + 1],):
                raise ValueError(f"bias {i} has shape {b.shape}, expected {(sizes[i + 1],)}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")
        self.masked_layers = tuple(int(h) for h in self.masked_layers)
        if any(h < 0 or h >= self.n_hidden for h in self.masked_layers):
            raise ValueError("masked_layers must index hidden layers")
        if len(set(self.masked_layers)) != len(self.masked_layers):
            raise ValueError("masked_layers must be unique")

    @property
    def n_hidden(self) -> int:
        return len(self.layer_sizes) - 2

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def mask_dim(self) -> int:
        return sum(self.layer_sizes[h + 1] for h in self.masked_layers)

    def mask_layout(self) -> tuple[tuple[int, int], ...]:
        """(start, end) bit range per masked hidden layer, in layer order."""
        out, start = [], 0
        for h in sorted(self.masked_layers):
            width = self.layer_sizes[h + 1]
            out.append((start, start + width))
            start += width
        return tuple(out)

    def mask_slice(self, hidden_index: int) -> slice | None:
        """Bit slice feeding hidden layer `hidden_index`, or None if unmasked."""
        ordered = sorted(self.masked_layers)
        if hidden_index not in ordered:
            return None
        pos = ordered.index(hidden_index)
        start, end = self.mask_layout()[pos]
        return slice(start, end)

    def copy(self) -> "DropoutNet":
        return DropoutNet(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.dropout_p,
            self.masked_layers,
            list(self.loss_history),
        )


def init_net(
    layer_sizes,
    dropout_p: float = 0.5,
    seed=0,
    masked_layers: tuple[int, ...] | None = None,
) -> DropoutNet:
    """Build a network with He-uniform weights and zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    if masked_layers is None:
        masked_layers = tuple(range(len(sizes) - 2))
    return DropoutNet(sizes, weights, biases, dropout_p, masked_layers)


def sample_mask(p: float, dim: int, rng: np.random.Generator,
                layer_offsets: tuple[tuple[int, int], ...] = ()) -> MaskParticle:
    """Draw a mask whose bits are independently 1 with probability 1 - p."""
    if not 0.0 <= p < 1.0:
        raise ValueError("p must be in [0, 1)")
    bits = (rng.random(dim) < 1.0 - p).astype(np.float64)
    return MaskParticle(bits, layer_offsets or ((0, dim),))


def _mask_bits(net: DropoutNet, mask) -> np.ndarray:
    bits = mask.bits if isinstance(mask, MaskParticle) else np.asarray(mask, dtype=np.float64)
    if bits.shape[-1] != net.mask_dim:
        raise ValueError(f"mask has {bits.shape[-1]} bits, net expects {net.mask_dim}")
    return bits


def _forward(net: DropoutNet, x2d: np.ndarray, masks2d: np.ndarray | None, keep_cache: bool = False):
    """Forward pass on a (B, in) batch; masks2d is (B, D) or None for the mean network."""
    scale = 1.0 / (1.0 - net.dropout_p)
    pre_acts, acts = [], [x2d]
    a = x2d
    for h in range(net.n_hidden):
        z = a @ net.weights[h].T + net.biases[h]
        a = np.maximum(z, 0.0)
        seg = net.mask_slice(h)
        if masks2d is not None and seg is not None:
            a = a * masks2d[:, seg] * scale
        if keep_cache:
            pre_acts.append(z)
            acts.append(a)
    y = a @ net.weights[-1].T + net.biases[-1]
    if keep_cache:
        return y, pre_acts, acts
    return y


def _as_batch(net: DropoutNet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2d = x[None, :] if single else x
    if x2d.ndim != 2 or x2d.shape[1] != net.input_dim:
        raise ValueError(f"input has shape {x.shape}, net expects inputs of length {net.input_dim}")
    return x2d, single


def forward_masked(net: DropoutNet, x, mask) -> np.ndarray:
    """Masked forward pass.

    x may be a single input vector or a (B, in) batch; mask may be a
    MaskParticle, a flat (D,) vector (binary or fractional), or a (B, D)
    batch of per-sample masks.  Pure: never mutates the network.
    """
    x2d, single = _as_batch(net, x)
    bits = _mask_bits(net, mask)
    masks2d = bits[None, :] if bits.ndim == 1 else bits
    if masks2d.shape[0] == 1 and x2d.shape[0] > 1:
        masks2d = np.broadcast_to(masks2d, (x2d.shape[0], net.mask_dim))
    if masks2d.shape[0] != x2d.shape[0]:
        raise ValueError("mask batch does not match input batch")
    y = _forward(net, x2d, masks2d)
    return y[0] if single else y


def forward_mean(net: DropoutNet, x) -> np.ndarray:
    """Expected-value forward pass: plain ReLU network, no mask, no rescale."""
    x2d, single = _as_batch(net, x)
    y = _forward(net, x2d, None)
    return y[0] if single else y


def forward_masked_ensemble(net: DropoutNet, x, masks: np.ndarray) -> np.ndarray:
    """Evaluate one input under N masks; masks is (N, D), returns (N, out)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("ensemble forward takes a single input vector")
    n = masks.shape[0]
    x2d = np.broadcast_to(x, (n, x.shape[0]))
    return forward_masked(net, x2d, masks)


def loss_and_grads(net: DropoutNet, x_batch: np.ndarray, y_batch: np.ndarray,
                   masks: np.ndarray | None):
    """Squared-error loss and its weight/bias gradients on one batch.

    The per-sample loss is the squared residual summed over output
    dimensions; the batch loss is its mean.  masks is a (B, D) array of
    per-sample masks, or None to differentiate the mean network.
    """
    x2d, _ = _as_batch(net, x_batch)
    y_target = np.asarray(y_batch, dtype=np.float64)
    if y_target.ndim == 1:
        y_target = y_target[None, :]
    if y_target.shape != (x2d.shape[0], net.output_dim):
        raise ValueError("targets do not match inputs/output dim")
    # overflow here is the diagnosed divergence path; callers check finiteness
    with np.errstate(over="ignore", invalid="ignore"):
        y, pre_acts, acts = _forward(net, x2d, masks, keep_cache=True)
        diff = y - y_target
        batch = x2d.shape[0]
        loss = float(np.sum(diff * diff) / batch)

        scale = 1.0 / (1.0 - net.dropout_p)
        grads_w = [None] * len(net.weights)
        grads_b = [None] * len(net.biases)
        g = 2.0 * diff / batch
        grads_w[-1] = g.T @ acts[-1]
        grads_b[-1] = g.sum(axis=0)
        g = g @ net.weights[-1]
        for h in reversed(range(net.n_hidden)):
            seg = net.mask_slice(h)
            if masks is not None and seg is not None:
                g = g * masks[:, seg] * scale
            g = g * (pre_acts[h] > 0.0)
            grads_w[h] = g.T @ acts[h]
            grads_b[h] = g.sum(axis=0)
            if h > 0:
                g = g @ net.weights[h]
    return loss, grads_w, grads_b


def _dataset_arrays(net: DropoutNet, dataset):
    if isinstance(dataset, tuple) and len(dataset) == 2:
        x, y = dataset
    else:
        pairs = list(dataset)
        if not pairs:
            raise ValueError("dataset is empty")
        x = np.asarray([p[0] for p in pairs], dtype=np.float64)
        y = np.asarray([p[1] for p in pairs], dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if len(x) == 0:
        raise ValueError("dataset is empty")
    if x.shape[1] != net.input_dim or y.shape[1] != net.output_dim or len(x) != len(y):
        raise ValueError("dataset shapes do not match the network")
    return x, y


def train(net: DropoutNet, dataset, cfg: TrainConfig) -> DropoutNet:
    """Mini-batch training with a fresh random mask per sample per pass.

    Returns a trained copy (the input network is untouched) whose
    loss_history holds the mean per-sample training loss of each epoch.
    Raises RuntimeError if the loss goes non-finite.
    """
    x_all, y_all = _dataset_arrays(net, dataset)
    rng = np.random.default_rng(cfg.seed)
    out = net.copy()
    keep = 1.0 - out.dropout_p
    dim = out.mask_dim

    adam_m = adam_v = None
    adam_t = 0
    if cfg.optimizer == "adam":
        adam_m = [np.zeros_like(p) for p in out.weights + out.biases]
        adam_v = [np.zeros_like(p) for p in out.weights + out.biases]

    losses = []
    n = len(x_all)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            masks = (rng.random((len(idx), dim)) < keep).astype(np.float64) if dim else None
            loss, gw, gb = loss_and_grads(out, x_all[idx], y_all[idx], masks)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training loss became non-finite ({loss}); "
                    f"learning rate {cfg.learning_rate} is likely too large"
                )
            grads = gw + gb
            params = out.weights + out.biases
            if cfg.optimizer == "adam":
                adam_t += 1
                b1, b2, eps = 0.9, 0.999, 1e-8
                for p, g, m, v in zip(params, grads, adam_m, adam_v):
                    m *= b1
                    m += (1 - b1) * g
                    v *= b2
                    v += (1 - b2) * g * g
                    mhat = m / (1 - b1 ** adam_t)
                    vhat = v / (1 - b2 ** adam_t)
                    p -= cfg.learning_rate * mhat / (np.sqrt(vhat) + eps)
            else:
                for p, g in zip(params, grads):
                    p -= cfg.learning_rate * g
            epoch_loss += loss * len(idx)
        losses.append(epoch_loss / n)
    out.loss_history = losses
    return out


def gradient_step_online(net: DropoutNet, x, target, lr: float) -> DropoutNet:
    """One mean-network squared-error gradient step on a single observation.

    Returns an updated copy; the original network is left untouched.
    """
    out = net.copy()
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _, gw, gb = loss_and_grads(out, x[None, :], target[None, :], None)
    for g in gw + gb:
        if not np.all(np.isfinite(g)):
            raise RuntimeError("non-finite gradient in online update")
    if lr != 0.0:
        for p, g in zip(out.weights + out.biases, gw + gb):
            p -= lr * g
    return out


def input_jacobian(net: DropoutNet, x, mask=None) -> np.ndarray:
    """Exact derivative of the (masked) forward pass w.r.t. the input.

    mask may be a MaskParticle, a flat binary/fractional vector, or None
    for the mean network.  The ReLU derivative at exactly 0 is taken as 0.
    Returns an (output_dim, input_dim) matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != net.input_dim:
        raise ValueError(f"input has shape {x.shape}, net expects length {net.input_dim}")
    bits = None if mask is None else _mask_bits(net, mask)
    scale = 1.0 / (1.0 - net.dropout_p)

    pre_acts = []
    a = x
    for h in range(net.n_hidden):
        z = net.weights[h] @ a + net.biases[h]
        pre_acts.append(z)
        a = np.maximum(z, 0.0)
        seg = net.mask_slice(h)
        if bits is not None and seg is not None:
            a = a * bits[seg] * scale

    jac = net.weights[-1].copy()
    for h in reversed(range(net.n_hidden)):
        deriv = (pre_acts[h] > 0.0).astype(np.float64)
        seg = net.mask_slice(h)
        if bits is not None and seg is not None:
            deriv = deriv * bits[seg] * scale
        jac = (jac * deriv) @ net.weights[h]
    return jac


def evaluate_mse(net: DropoutNet, x, y) -> float:
    """Mean-network loss on a dataset (squared residual summed over dims, mean over rows)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    diff = forward_mean(net, x) - y
    return float(np.sum(diff * diff) / len(x))


def save_net(net: DropoutNet, path) -> None:
    """Write a checkpoint: magic, format version, layer sizes, dropout
    probability, then row-major float64 weights and biases per layer."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(bytes([CHECKPOINT_VERSION]))
        f.write(struct.pack("<I", len(net.layer_sizes)))
        f.write(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
        f.write(struct.pack("<d", net.dropout_p))
        for w, b in zip(net.weights, net.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_net(path) -> DropoutNet:
    """Read a checkpoint written by save_net.

    The file stores architecture and parameters only; masked_layers is
    restored to the default (all hidden layers).
    """
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a model checkpoint (bad magic)")
    if data[4] != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {data[4]}")
    off = 5
    (n_layers,) = struct.unpack_from("<I", data, off)
    off += 4
    sizes = struct.unpack_from(f"<{n_layers}I", data, off)
    off += 4 * n_layers
    (dropout_p,) = struct.unpack_from("<d", data, off)
    off += 8
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=off)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.reshape(fan_out, fan_in).copy())
        biases.append(b.copy())
    if off != len(data):
        raise ValueError(f"{path}: truncated or oversized checkpoint")
    return DropoutNet(sizes, weights, biases, float(dropout_p),
                      tuple(range(len(sizes) - 2)))
