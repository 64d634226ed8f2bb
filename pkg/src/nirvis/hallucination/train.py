"""Minibatch Adam training of a single-channel hallucination network."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .network import AdamState, HallucinationNet, adam_step, backward

DEFAULT_EPOCHS = 10
DEFAULT_BATCH = 64


class EmptyDatasetError(ValueError):
    """Training needs at least one patch pair."""


@dataclass
class TrainHistory:
    epoch_losses: list = field(default_factory=list)       # mean minibatch loss per epoch
    iteration_losses: list = field(default_factory=list)   # loss before each update
    stopped_early: bool = False

    def write_csv(self, path: str | os.PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "mean_loss"])
            for epoch, loss in enumerate(self.epoch_losses, start=1):
                w.writerow([epoch, repr(float(loss))])


def channel_arrays(pairs, channel: str):
    """Stack NIR inputs and the matching VIS channel targets from a list of patch pairs."""
    if len(pairs) == 0:
        raise EmptyDatasetError("no patch pairs to train on")
    nir = np.stack([p.nir_patch for p in pairs])
    if channel == "Y":
        target = np.stack([p.vis_patch for p in pairs])
    else:
        idx = {"Cb": 0, "Cr": 1}[channel]
        if any(p.vis_chroma is None for p in pairs):
            raise ValueError(f"{channel} training needs patch pairs with chroma")
        target = np.stack([p.vis_chroma[idx] for p in pairs])
    return nir, target


def train(net: HallucinationNet, pairs=None, epochs: int = DEFAULT_EPOCHS,
          batch_size: int = DEFAULT_BATCH, seed: int = 0, *, inputs=None, targets=None,
          state: AdamState | None = None, max_iters: int | None = None,
          stop_ratio: float | None = None, progress=None):
    """Train a copy of ``net`` on patch pairs and return it with its loss history.

    Pairs are reshuffled every epoch by a generator seeded with ``seed``. Instead
    of ``pairs``, raw ``inputs``/``targets`` stacks may be passed. ``max_iters``
    caps the number of updates and ``stop_ratio`` stops as soon as a minibatch
    loss falls to that fraction of the first one.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if inputs is None:
        inputs, targets = channel_arrays(pairs if pairs is not None else [], net.channel)
    inputs = np.asarray(inputs, dtype=net.dtype)
    targets = np.asarray(targets, dtype=net.dtype)
    if len(inputs) == 0:
        raise EmptyDatasetError("no patch pairs to train on")
    if inputs.shape != targets.shape:
        raise ValueError("inputs and targets differ in shape")
    net = net.copy()
    history = TrainHistory()
    if epochs == 0:
        return net, history
    state = state or AdamState()
    rng = np.random.default_rng(seed)
    params = net.parameters()
    n = len(inputs)
    iters = 0
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, grads = backward(net, inputs[idx], targets[idx])
            history.iteration_losses.append(loss)
            total += loss * len(idx)
            if stop_ratio is not None and loss <= stop_ratio * history.iteration_losses[0]:
                history.stopped_early = True
                break
            adam_step(params, grads, state)
            iters += 1
            if progress is not None:
                progress(epoch, iters, loss)
            if max_iters is not None and iters >= max_iters:
                break
        history.epoch_losses.append(total / min(n, start + len(idx)))
        if history.stopped_early or (max_iters is not None and iters >= max_iters):
            break
    net.trained = True
    return net, history
