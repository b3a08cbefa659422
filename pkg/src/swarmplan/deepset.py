"""Permutation-invariant set model for steer and distance heuristics.

A model evaluates, for one robot observation,

    psi([rel_goal; rho_o(sum_j phi_o(obstacle_j)); rho_r(sum_j phi_r(robot_j))])

followed by a head squash: steer outputs are radially saturated into the
admissible acceleration ball; distance outputs pass through softplus so
cost-to-go predictions stay non-negative. Empty neighbor sets contribute a
zero vector to the inner sums.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .nets import Adam, FeedForwardNet, PlateauScheduler, TrainConfig, TrainingDiverged
from .world import Observation

MODEL_FORMAT = "swarmplan-model"
MODEL_VERSION = 1

_NET_NAMES = ("phi_obstacle", "rho_obstacle", "phi_robot", "rho_robot", "psi")


class ModelFormatError(ValueError):
    """Model file is corrupt, from a different version, or the wrong head."""


# ---------------------------------------------------------------------------
# Packed observation batches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ObservationBatch:
    """Flat storage for n observations with ragged neighbor sets.

    Neighbor rows are concatenated across the batch; ``*_owner`` maps each
    row back to its observation index and is kept sorted ascending.
    """

    rel_goal: np.ndarray  # (n, 4)
    robots: np.ndarray  # (R, 4)
    robot_owner: np.ndarray  # (R,) int64, sorted
    obstacles: np.ndarray  # (O, 2)
    obstacle_owner: np.ndarray  # (O,) int64, sorted

    def __post_init__(self):
        object.__setattr__(self, "rel_goal", np.asarray(self.rel_goal, dtype=float).reshape(-1, 4))
        object.__setattr__(self, "robots", np.asarray(self.robots, dtype=float).reshape(-1, 4))
        object.__setattr__(self, "obstacles", np.asarray(self.obstacles, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "robot_owner", np.asarray(self.robot_owner, dtype=np.int64).ravel())
        object.__setattr__(
            self, "obstacle_owner", np.asarray(self.obstacle_owner, dtype=np.int64).ravel()
        )
        if self.robots.shape[0] != self.robot_owner.shape[0]:
            raise ValueError("robot rows/owner mismatch")
        if self.obstacles.shape[0] != self.obstacle_owner.shape[0]:
            raise ValueError("obstacle rows/owner mismatch")

    def __len__(self) -> int:
        return self.rel_goal.shape[0]

    @staticmethod
    def from_observations(observations) -> "ObservationBatch":
        rel = np.array([o.rel_goal for o in observations]).reshape(-1, 4)
        rob_rows, rob_own, obs_rows, obs_own = [], [], [], []
        for i, o in enumerate(observations):
            if o.neighbor_robots.shape[0]:
                rob_rows.append(o.neighbor_robots)
                rob_own.append(np.full(o.neighbor_robots.shape[0], i, dtype=np.int64))
            if o.neighbor_obstacles.shape[0]:
                obs_rows.append(o.neighbor_obstacles)
                obs_own.append(np.full(o.neighbor_obstacles.shape[0], i, dtype=np.int64))
        robots = np.concatenate(rob_rows) if rob_rows else np.zeros((0, 4))
        robot_owner = np.concatenate(rob_own) if rob_own else np.zeros(0, dtype=np.int64)
        obstacles = np.concatenate(obs_rows) if obs_rows else np.zeros((0, 2))
        obstacle_owner = np.concatenate(obs_own) if obs_own else np.zeros(0, dtype=np.int64)
        return ObservationBatch(rel, robots, robot_owner, obstacles, obstacle_owner)

    def _segment_starts(self, owner: np.ndarray) -> np.ndarray:
        n = len(self)
        return np.searchsorted(owner, np.arange(n + 1))

    def take(self, idx: np.ndarray) -> "ObservationBatch":
        """Sub-batch for the given observation indices (owners remapped)."""
        idx = np.asarray(idx, dtype=np.int64)

        def gather(rows, owner):
            starts = self._segment_starts(owner)
            counts = starts[idx + 1] - starts[idx]
            total = int(counts.sum())
            if not total:
                return rows[:0], np.zeros(0, dtype=np.int64)
            offs = np.concatenate([[0], np.cumsum(counts)])
            pos = np.arange(total) - np.repeat(offs[:-1], counts) + np.repeat(starts[idx], counts)
            return rows[pos], np.repeat(np.arange(idx.size, dtype=np.int64), counts)

        rob, rob_own = gather(self.robots, self.robot_owner)
        obs, obs_own = gather(self.obstacles, self.obstacle_owner)
        return ObservationBatch(self.rel_goal[idx], rob, rob_own, obs, obs_own)

    def to_observations(self) -> list[Observation]:
        rs = self._segment_starts(self.robot_owner)
        os_ = self._segment_starts(self.obstacle_owner)
        return [
            Observation(
                self.rel_goal[i],
                self.robots[rs[i] : rs[i + 1]],
                self.obstacles[os_[i] : os_[i + 1]],
            )
            for i in range(len(self))
        ]


def _segment_sum(values: np.ndarray, owner: np.ndarray, n: int, width: int) -> np.ndarray:
    """Sum rows by (sorted) owner id into an (n, width) array; empty ids stay zero."""
    out = np.zeros((n, width))
    if owner.size:
        starts = np.concatenate([[0], np.flatnonzero(np.diff(owner)) + 1])
        out[owner[starts]] = np.add.reduceat(values, starts, axis=0)
    return out


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

_HEAD_EPS = 1e-12


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class DeepSetModel:
    head: str  # "steer" | "distance"
    phi_obstacle: FeedForwardNet
    rho_obstacle: FeedForwardNet
    phi_robot: FeedForwardNet
    rho_robot: FeedForwardNet
    psi: FeedForwardNet
    u_max: float = 0.5
    goal_inputs: str = "posvel"  # "pos" gives the strict 34-input variant

    def __post_init__(self):
        if self.head not in ("steer", "distance"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.goal_inputs not in ("posvel", "pos"):
            raise ValueError(f"unknown goal_inputs {self.goal_inputs!r}")

    @property
    def out_dim(self) -> int:
        return 2 if self.head == "steer" else 1

    @property
    def embed_dim(self) -> int:
        return self.rho_obstacle.sizes[-1]

    def nets(self) -> dict[str, FeedForwardNet]:
        return {name: getattr(self, name) for name in _NET_NAMES}

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for name in _NET_NAMES:
            out.extend(getattr(self, name).param_arrays())
        return out

    # -- forward -----------------------------------------------------------

    def _goal_slice(self, rel_goal: np.ndarray) -> np.ndarray:
        return rel_goal if self.goal_inputs == "posvel" else rel_goal[:, :2]

    def _head_forward(self, Z: np.ndarray) -> np.ndarray:
        if self.head == "steer":
            r = np.sqrt((Z**2).sum(axis=1, keepdims=True) + _HEAD_EPS)
            return self.u_max * np.tanh(r) / r * Z
        return np.logaddexp(0.0, Z)

    def forward_batch(self, batch: ObservationBatch) -> np.ndarray:
        n = len(batch)
        phi_o = self.phi_obstacle.forward(batch.obstacles)
        sum_o = _segment_sum(phi_o, batch.obstacle_owner, n, self.embed_dim)
        rho_o = self.rho_obstacle.forward(sum_o)
        phi_r = self.phi_robot.forward(batch.robots)
        sum_r = _segment_sum(phi_r, batch.robot_owner, n, self.embed_dim)
        rho_r = self.rho_robot.forward(sum_r)
        Z = self.psi.forward(np.concatenate([self._goal_slice(batch.rel_goal), rho_o, rho_r], axis=1))
        return self._head_forward(Z)

    def forward(self, observation: Observation) -> np.ndarray:
        return self.forward_batch(ObservationBatch.from_observations([observation]))[0]


def make_model(
    head: str,
    seed: int = 0,
    hidden: int = 64,
    embed: int = 16,
    u_max: float = 0.5,
    goal_inputs: str = "posvel",
) -> DeepSetModel:
    rng = np.random.default_rng(seed)
    goal_dim = 4 if goal_inputs == "posvel" else 2
    out_dim = 2 if head == "steer" else 1
    return DeepSetModel(
        head=head,
        phi_obstacle=FeedForwardNet((2, hidden, embed), rng),
        rho_obstacle=FeedForwardNet((embed, hidden, embed), rng),
        phi_robot=FeedForwardNet((4, hidden, embed), rng),
        rho_robot=FeedForwardNet((embed, hidden, embed), rng),
        psi=FeedForwardNet((goal_dim + 2 * embed, hidden, out_dim), rng),
        u_max=u_max,
        goal_inputs=goal_inputs,
    )


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------


def loss_and_gradients(model: DeepSetModel, batch: ObservationBatch, y: np.ndarray):
    """Mean squared loss over the batch and gradients for every parameter.

    Returns (loss, grads) with grads aligned to model.param_arrays().
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    y = np.asarray(y, dtype=float).reshape(n, model.out_dim)
    emb = model.embed_dim

    phi_o_out, phi_o_cache = model.phi_obstacle.forward_cached(batch.obstacles)
    sum_o = _segment_sum(phi_o_out, batch.obstacle_owner, n, emb)
    rho_o_out, rho_o_cache = model.rho_obstacle.forward_cached(sum_o)
    phi_r_out, phi_r_cache = model.phi_robot.forward_cached(batch.robots)
    sum_r = _segment_sum(phi_r_out, batch.robot_owner, n, emb)
    rho_r_out, rho_r_cache = model.rho_robot.forward_cached(sum_r)
    goal = model._goal_slice(batch.rel_goal)
    psi_in = np.concatenate([goal, rho_o_out, rho_r_out], axis=1)
    Z, psi_cache = model.psi.forward_cached(psi_in)

    # head forward + backward
    if model.head == "steer":
        r = np.sqrt((Z**2).sum(axis=1, keepdims=True) + _HEAD_EPS)
        th = np.tanh(r)
        out = model.u_max * th / r * Z
    else:
        out = np.logaddexp(0.0, Z)

    diff = out - y
    loss = float((diff**2).sum() / n)
    G_out = 2.0 * diff / n

    if model.head == "steer":
        s = model.u_max * th / r
        ds_dr = model.u_max * ((1.0 - th**2) * r - th) / r**2
        gz = (G_out * Z).sum(axis=1, keepdims=True)
        G_Z = G_out * s + Z * (gz * ds_dr / r)
    else:
        G_Z = G_out * _sigmoid(Z)

    G_psi_in, psi_dW, psi_db = model.psi.backward(psi_cache, G_Z)
    gdim = goal.shape[1]
    G_rho_o = G_psi_in[:, gdim : gdim + emb]
    G_rho_r = G_psi_in[:, gdim + emb :]

    G_sum_o, rho_o_dW, rho_o_db = model.rho_obstacle.backward(rho_o_cache, G_rho_o)
    _, phi_o_dW, phi_o_db = model.phi_obstacle.backward(phi_o_cache, G_sum_o[batch.obstacle_owner])
    G_sum_r, rho_r_dW, rho_r_db = model.rho_robot.backward(rho_r_cache, G_rho_r)
    _, phi_r_dW, phi_r_db = model.phi_robot.backward(phi_r_cache, G_sum_r[batch.robot_owner])

    grads: list[np.ndarray] = []
    for dWs, dbs in (
        (phi_o_dW, phi_o_db),
        (rho_o_dW, rho_o_db),
        (phi_r_dW, phi_r_db),
        (rho_r_dW, rho_r_db),
        (psi_dW, psi_db),
    ):
        for dW, db in zip(dWs, dbs):
            grads.append(dW)
            grads.append(db)
    return loss, grads


def batch_loss(model: DeepSetModel, batch: ObservationBatch, y: np.ndarray) -> float:
    out = model.forward_batch(batch)
    diff = out - np.asarray(y, dtype=float).reshape(len(batch), model.out_dim)
    return float((diff**2).sum() / len(batch))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def train(
    model: DeepSetModel, data: ObservationBatch, y: np.ndarray, cfg: TrainConfig
) -> tuple[DeepSetModel, list[tuple[int, float, float, float]]]:
    """Mini-batch Adam with plateau lr decay; returns (model, loss history).

    The parameters with the best validation loss seen are restored at the
    end, so the final validation loss never exceeds the initial one.
    History rows are (epoch, train_loss, val_loss, lr).
    """
    n = len(data)
    if n == 0:
        raise ValueError("empty dataset")
    y = np.asarray(y, dtype=float).reshape(n, model.out_dim)
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_val = int(round(n * cfg.validation_fraction))
    if n_val > 0:
        val_idx, train_idx = perm[:n_val], perm[n_val:]
    else:
        val_idx, train_idx = perm, perm  # validate on the training data
    val_batch, val_y = data.take(val_idx), y[val_idx]

    params = model.param_arrays()
    opt = Adam(params, cfg.initial_lr)
    sched = PlateauScheduler(cfg.initial_lr, cfg.plateau_factor, cfg.plateau_patience)
    best_val = batch_loss(model, val_batch, val_y)
    best_params = [p.copy() for p in params]

    history: list[tuple[int, float, float, float]] = []
    for epoch in range(1, cfg.epochs + 1):
        order = train_idx[rng.permutation(train_idx.size)]
        total, seen = 0.0, 0
        for lo in range(0, order.size, cfg.batch_size):
            bidx = order[lo : lo + cfg.batch_size]
            loss, grads = loss_and_gradients(model, data.take(bidx), y[bidx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            opt.step(grads)
            total += loss * bidx.size
            seen += bidx.size
        train_loss = total / max(seen, 1)
        val_loss = batch_loss(model, val_batch, val_y)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        if val_loss < best_val:
            best_val = val_loss
            best_params = [p.copy() for p in params]
        sched.step(val_loss)
        opt.lr = sched.lr
        history.append((epoch, train_loss, val_loss, sched.lr))

    for p, bp in zip(params, best_params):
        p[...] = bp
    return model, history


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_model(model: DeepSetModel, path) -> None:
    meta = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "head": model.head,
        "u_max": model.u_max,
        "goal_inputs": model.goal_inputs,
        "sizes": {name: list(net.sizes) for name, net in model.nets().items()},
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for name, net in model.nets().items():
        for l, (W, b) in enumerate(zip(net.Ws, net.bs)):
            arrays[f"{name}_W{l}"] = W
            arrays[f"{name}_b{l}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path, expect_head: str | None = None) -> DeepSetModel:
    try:
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            if meta.get("format") != MODEL_FORMAT:
                raise ModelFormatError("not a swarmplan model file")
            if meta.get("version") != MODEL_VERSION:
                raise ModelFormatError(f"unsupported model version {meta.get('version')}")
            if expect_head is not None and meta["head"] != expect_head:
                raise ModelFormatError(
                    f"model head is {meta['head']!r}, expected {expect_head!r}"
                )
            rng = np.random.default_rng(0)
            nets = {}
            for name in _NET_NAMES:
                sizes = tuple(meta["sizes"][name])
                net = FeedForwardNet(sizes, rng)
                for l in range(net.n_layers):
                    W = data[f"{name}_W{l}"]
                    b = data[f"{name}_b{l}"]
                    if W.shape != net.Ws[l].shape or b.shape != net.bs[l].shape:
                        raise ModelFormatError(f"shape mismatch in {name} layer {l}")
                    net.Ws[l] = W.astype(float)
                    net.bs[l] = b.astype(float)
                nets[name] = net
    except ModelFormatError:
        raise
    except Exception as exc:  # truncated/corrupt archives surface here
        raise ModelFormatError(f"cannot read model file {path}: {exc}") from exc
    return DeepSetModel(
        head=meta["head"], u_max=float(meta["u_max"]), goal_inputs=meta["goal_inputs"], **nets
    )
