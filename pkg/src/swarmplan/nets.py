"""Minimal feed-forward network engine: forward, reverse-mode gradients,
Adam updates and a reduce-on-plateau learning-rate schedule.

Everything is float64 numpy; weights use the (fan_in, fan_out) layout so a
batch forward is ``X @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


class FeedForwardNet:
    """Fully-connected layers, ReLU on hidden layers, identity output."""

    def __init__(self, sizes: tuple[int, ...], rng: np.random.Generator):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.Ws: list[np.ndarray] = []
        self.bs: list[np.ndarray] = []
        for n_in, n_out in zip(self.sizes[:-1], self.sizes[1:]):
            scale = 1.0 / np.sqrt(n_in)
            self.Ws.append(rng.uniform(-scale, scale, (n_in, n_out)))
            self.bs.append(rng.uniform(-scale, scale, n_out))

    @property
    def n_layers(self) -> int:
        return len(self.Ws)

    def forward(self, X: np.ndarray) -> np.ndarray:
        H = np.asarray(X, dtype=float)
        last = self.n_layers - 1
        for l, (W, b) in enumerate(zip(self.Ws, self.bs)):
            H = H @ W + b
            if l < last:
                H = np.maximum(H, 0.0)
        return H

    def forward_cached(self, X: np.ndarray):
        """Forward pass keeping layer inputs and pre-activations for backward."""
        H = np.asarray(X, dtype=float)
        cache = []
        last = self.n_layers - 1
        for l, (W, b) in enumerate(zip(self.Ws, self.bs)):
            Z = H @ W + b
            cache.append((H, Z))
            H = np.maximum(Z, 0.0) if l < last else Z
        return H, cache

    def backward(self, cache, G: np.ndarray):
        """Gradient of the cached forward; returns (grad_input, dWs, dbs)."""
        dWs = [None] * self.n_layers
        dbs = [None] * self.n_layers
        last = self.n_layers - 1
        for l in range(last, -1, -1):
            H_in, Z = cache[l]
            if l < last:
                G = G * (Z > 0.0)
            dWs[l] = H_in.T @ G
            dbs[l] = G.sum(axis=0)
            G = G @ self.Ws[l].T
        return G, dWs, dbs

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.Ws, self.bs):
            out.append(W)
            out.append(b)
        return out


class Adam:
    """Adam over a flat list of parameter arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PlateauScheduler:
    """Multiply the learning rate by `factor` after `patience` stale epochs."""

    def __init__(self, initial_lr: float, factor: float = 0.5, patience: int = 10, min_lr: float = 1e-6):
        if not 0 < factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        self.lr = float(initial_lr)
        self.factor = factor
        self.patience = int(patience)
        self.min_lr = min_lr
        self.best = np.inf
        self.stale = 0

    def step(self, val_loss: float) -> bool:
        """Record one epoch's validation loss; True when the lr was reduced."""
        if val_loss < self.best - 1e-12:
            self.best = float(val_loss)
            self.stale = 0
            return False
        self.stale += 1
        if self.stale >= self.patience:
            self.lr = max(self.min_lr, self.lr * self.factor)
            self.stale = 0
            return True
        return False


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch training settings (desk-scale defaults)."""

    initial_lr: float = 1e-3
    batch_size: int = 4096
    epochs: int = 150
    plateau_patience: int = 10
    plateau_factor: float = 0.5
    seed: int = 0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")


# large-scale preset matching the published training recipe
PAPER_TRAIN = TrainConfig(batch_size=32000, epochs=300)


def write_history_csv(history: list[tuple[int, float, float, float]], path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_loss,lr\n")
        for epoch, tr, va, lr in history:
            fh.write(f"{epoch},{tr!r},{va!r},{lr!r}\n")
