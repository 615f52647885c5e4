"""Mask interpretability: nearest-mask retrieval, a distance-weighted
confidence score for label assignment, and leave-one-out link-length
neighbour accuracy.

Masks inferred for different tasks act as context signatures.  The bank
stores the fractional particle-mean mask obtained after a fixed number of
adaptation steps per task, together with the task's link lengths and a
categorical label (by default a short/long second-link bucket).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import filter as smc
from .arm import encode_angles, make_eval_episode
from .net import DropoutNet

MASK_BANK_HEADER_PREFIX = "task_id,l1,l2,label,burn_in,seed"


@dataclass
class MaskBankEntry:
    task_id: int
    l1: float
    l2: float
    label: str
    burn_in: int
    seed: int
    mask: np.ndarray  # fractional, entries in [0, 1]


def default_link_label(l1: float, l2: float) -> str:
    """Bucket tasks by second-link length: "short" below 1, else "long"."""
    return "long" if l2 >= 1.0 else "short"


def infer_task_mask(net: DropoutNet, lengths, filter_cfg: smc.FilterConfig,
                    burn_in: int, episode_seed, encoding: str = "raw") -> np.ndarray:
    """Run the mask filter over one babbling episode and return the final
    fractional particle-mean mask."""
    if burn_in < 1:
        raise ValueError("burn_in must be >= 1")
    episode = make_eval_episode(episode_seed, burn_in, 0, lengths=lengths)
    state = smc.init_filter(filter_cfg, net)
    for t in range(burn_in):
        obs = smc.Observation(encode_angles(episode.q[t], encoding), episode.xy[t])
        state = smc.step(state, net, obs, filter_cfg)
    return smc.mmse_mask(state)


def build_mask_bank(net: DropoutNet, lengths: np.ndarray, labels,
                    filter_cfg: smc.FilterConfig, burn_in: int, seed: int,
                    encoding: str = "raw") -> list[MaskBankEntry]:
    """Infer one mask per labeled task.

    lengths is an (M, 2) array of per-task link lengths and labels an
    M-sequence of strings.  Episode and filter streams are derived from
    (seed, task index), so the bank is reproducible.
    """
    lengths = np.atleast_2d(np.asarray(lengths, dtype=np.float64))
    labels = list(labels)
    if len(labels) != len(lengths):
        raise ValueError("labels must match lengths")
    bank = []
    for i, (l, label) in enumerate(zip(lengths, labels)):
        filt_seed = int(np.random.SeedSequence([seed, i, 1]).generate_state(1)[0])
        mask = infer_task_mask(net, l, replace(filter_cfg, seed=filt_seed),
                               burn_in, episode_seed=[seed, i, 0], encoding=encoding)
        bank.append(MaskBankEntry(i, float(l[0]), float(l[1]), str(label),
                                  burn_in, seed, mask))
    return bank


def _bank_masks(bank) -> np.ndarray:
    if not bank:
        raise ValueError("mask bank is empty")
    return np.stack([entry.mask for entry in bank])


def knn_masks(query_mask, bank, k: int):
    """Indices and distances of the k nearest bank masks, ascending by
    Euclidean distance with ties broken by bank index."""
    masks = _bank_masks(bank)
    if not 1 <= k <= len(bank):
        raise ValueError(f"k must be in [1, {len(bank)}]")
    dists = np.linalg.norm(masks - np.asarray(query_mask, dtype=np.float64), axis=1)
    order = np.argsort(dists, kind="stable")[:k]
    return order, dists[order]


def confidence_score(query_mask, bank, k: int, label: str) -> float:
    """Exponentially distance-weighted fraction of the k nearest masks
    carrying the candidate label.

    score = sum_{j: c_j = label} exp(-d_j) / sum_j exp(-d_j) over the k
    nearest neighbours; 1.0 when all neighbours share the label, 0.0 when
    none do.
    """
    idx, dists = knn_masks(query_mask, bank, k)
    w = np.exp(-dists)
    match = np.array([bank[i].label == label for i in idx], dtype=np.float64)
    return float(np.sum(w * match) / np.sum(w))


def topk_link_accuracy(bank, k: int) -> float:
    """Leave-one-out frequency with which each entry's nearest neighbour in
    link space falls within its top-k neighbours in mask space."""
    n = len(bank)
    if n < k + 1:
        raise ValueError(f"bank of size {n} cannot score top-{k} accuracy")
    masks = _bank_masks(bank)
    links = np.array([[e.l1, e.l2] for e in bank])
    hits = 0
    for i in range(n):
        link_d = np.linalg.norm(links - links[i], axis=1)
        link_d[i] = np.inf
        nn_link = int(np.argmin(link_d))
        mask_d = np.linalg.norm(masks - masks[i], axis=1)
        mask_d[i] = np.inf
        topk = np.argsort(mask_d, kind="stable")[:k]
        hits += nn_link in topk
    return hits / n


def write_mask_bank(bank, path) -> None:
    masks = _bank_masks(bank)
    dim = masks.shape[1]
    header = MASK_BANK_HEADER_PREFIX + "".join(f",m_{i}" for i in range(dim))
    with open(path, "w", newline="\n") as f:
        f.write(header + "\n")
        for e in bank:
            vals = ",".join(format(v, ".17g") for v in e.mask)
            f.write(f"{e.task_id},{format(e.l1, '.17g')},{format(e.l2, '.17g')},"
                    f"{e.label},{e.burn_in},{e.seed},{vals}\n")


def read_mask_bank(path) -> list[MaskBankEntry]:
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith(MASK_BANK_HEADER_PREFIX):
            raise ValueError(f"{path}: unexpected mask bank header")
        bank = []
        for line in f:
            parts = line.rstrip("\n").split(",")
            mask = np.array([float(v) for v in parts[6:]])
            bank.append(MaskBankEntry(int(parts[0]), float(parts[1]), float(parts[2]),
                                      parts[3], int(parts[4]), int(parts[5]), mask))
    return bank
