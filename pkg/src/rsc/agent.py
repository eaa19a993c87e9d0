"""DQN agent for per-unit QP selection.

The Q-network has two branches. A convolution stack reads the (luma,
semantic-map) patch pair as a 2-channel image: four 3x3 convolutions with
stride 2 and leaky-ReLU activations, flattened into a dense layer of 128.
A second dense layer embeds the 15 global features into another 128. The
concatenated 256 go through one hidden dense layer of 256 (leaky ReLU)
into a linear output with one Q-value per action. Constructing the network
with the global branch disabled only rewires the hidden layer's input; the
output arity is unchanged.

Training is textbook DQN: epsilon-greedy behavior, a FIFO replay ring with
uniform no-replacement batch sampling, TD targets from a periodically
synced target network, squared TD error, Adam.

Model files are binary: magic ``RSCQ``, a format-version u32, a u32-length
JSON architecture descriptor, then every parameter tensor as 32-bit
little-endian floats in declaration order.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import nn
from .env import ACTION_COUNT, GLOBAL_DIM, CuState, EpisodeConfig, FrameContext

MODEL_MAGIC = b"RSCQ"
MODEL_FORMAT_VERSION = 1

_CHANNELS = (16, 32, 64, 64)
_CONV_DENSE = 128
_GLOBAL_DENSE = 128
_HIDDEN = 256


class ModelLoadError(ValueError):
    """Raised when a model file fails validation."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run."""

    learning_rate: float = 1e-4
    gamma: float = 0.9
    batch_size: int = 64
    target_sync_every: int = 300
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 50_000
    buffer_capacity: int = 50_000
    total_steps: int = 20_000
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if min(self.batch_size, self.target_sync_every, self.epsilon_decay_steps,
               self.buffer_capacity, self.total_steps) < 1:
            raise ValueError("counts must be positive")
        if not 0 <= self.epsilon_end <= self.epsilon_start <= 1:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")

    def epsilon_at(self, step: int) -> float:
        """Exploration rate used at a (0-based) step: linear, then flat."""
        frac = min(step, self.epsilon_decay_steps) / self.epsilon_decay_steps
        return self.epsilon_start - (self.epsilon_start - self.epsilon_end) * frac


class QNetwork:
    """Two-branch action-value network; see the module docstring."""

    def __init__(
        self,
        seed: int = 0,
        action_count: int = ACTION_COUNT,
        global_branch: bool = True,
        dtype=np.float32,
        patch_size: int = 64,
        global_dim: int = GLOBAL_DIM,
        channels: tuple[int, int, int, int] = _CHANNELS,
        conv_dense: int = _CONV_DENSE,
        global_dense: int = _GLOBAL_DENSE,
        hidden: int = _HIDDEN,
    ):
        if patch_size < 16:
            raise ValueError("patch size must be at least 16 to survive four stride-2 halvings")
        self.seed = int(seed)
        self.action_count = int(action_count)
        self.global_branch = bool(global_branch)
        self.dtype = np.dtype(dtype)
        self.patch_size = int(patch_size)
        self.global_dim = int(global_dim)
        self.channels = tuple(int(c) for c in channels)
        self.conv_dense = int(conv_dense)
        self.global_dense = int(global_dense)
        self.hidden = int(hidden)

        rng = np.random.default_rng(self.seed)
        self.convs: list[nn.Conv2d] = []
        self.conv_acts: list[nn.LeakyReLU] = []
        c_in = 2
        side = self.patch_size
        for i, c_out in enumerate(self.channels, start=1):
            conv = nn.Conv2d(f"conv{i}", c_in, c_out, rng, dtype=self.dtype)
            self.convs.append(conv)
            self.conv_acts.append(nn.LeakyReLU())
            c_in = c_out
            side = conv.out_size(side)
        self._flat_dim = side * side * c_in
        self._conv_out_shape = (side, side, c_in)

        self.fc_local = nn.Dense("fc_local", self._flat_dim, self.conv_dense, rng, dtype=self.dtype)
        self.act_local = nn.LeakyReLU()
        if self.global_branch:
            self.fc_global = nn.Dense("fc_global", self.global_dim, self.global_dense, rng, dtype=self.dtype)
            self.act_global = nn.LeakyReLU()
            merged = self.conv_dense + self.global_dense
        else:
            self.fc_global = None
            self.act_global = None
            merged = self.conv_dense
        self.fc_hidden = nn.Dense("fc_hidden", merged, self.hidden, rng, dtype=self.dtype)
        self.act_hidden = nn.LeakyReLU()
        self.fc_out = nn.Dense("fc_out", self.hidden, self.action_count, rng, dtype=self.dtype, gain=1.0)

    def parameters(self) -> list[nn.Param]:
        params: list[nn.Param] = []
        for conv in self.convs:
            params.extend(conv.params())
        params.extend(self.fc_local.params())
        if self.global_branch:
            params.extend(self.fc_global.params())
        params.extend(self.fc_hidden.params())
        params.extend(self.fc_out.params())
        return params

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def forward(self, patches: np.ndarray, globals_vec: np.ndarray) -> np.ndarray:
        """Batched Q-values: (n, 2, p, p) x (n, global_dim) -> (n, actions)."""
        patches = np.asarray(patches)
        g = np.ascontiguousarray(globals_vec, dtype=self.dtype)
        if patches.ndim != 4 or patches.shape[1] != 2 or g.ndim != 2 or g.shape[1] != self.global_dim:
            raise ValueError("bad input shapes")
        # states carry planes-first patches; the conv stack runs channels-last
        h = np.ascontiguousarray(patches.transpose(0, 2, 3, 1), dtype=self.dtype)
        for conv, act in zip(self.convs, self.conv_acts):
            h = act.forward(conv.forward(h))
        flat = h.reshape(h.shape[0], -1)
        local = self.act_local.forward(self.fc_local.forward(flat))
        if self.global_branch:
            glob = self.act_global.forward(self.fc_global.forward(g))
            merged = np.concatenate([local, glob], axis=1)
        else:
            merged = local
        hid = self.act_hidden.forward(self.fc_hidden.forward(merged))
        return self.fc_out.forward(hid)

    def backward(self, dout: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """Backprop a dLoss/dQ batch; returns input gradients."""
        dhid = self.act_hidden.backward(self.fc_out.backward(dout))
        dmerged = self.fc_hidden.backward(dhid)
        if self.global_branch:
            dlocal = dmerged[:, : self.conv_dense]
            dglob_in = self.fc_global.backward(self.act_global.backward(dmerged[:, self.conv_dense :]))
        else:
            dlocal = dmerged
            dglob_in = None
        dflat = self.fc_local.backward(self.act_local.backward(dlocal))
        dh = dflat.reshape(dflat.shape[0], *self._conv_out_shape)
        for conv, act in zip(reversed(self.convs), reversed(self.conv_acts)):
            dh = conv.backward(act.backward(dh))
        return dh.transpose(0, 3, 1, 2), dglob_in

    def clone(self) -> "QNetwork":
        other = QNetwork(
            seed=self.seed,
            action_count=self.action_count,
            global_branch=self.global_branch,
            dtype=self.dtype,
            patch_size=self.patch_size,
            global_dim=self.global_dim,
            channels=self.channels,
            conv_dense=self.conv_dense,
            global_dense=self.global_dense,
            hidden=self.hidden,
        )
        sync_target(self, other)
        return other

    def arch_descriptor(self) -> dict:
        return {
            "action_count": self.action_count,
            "global_branch": self.global_branch,
            "patch_size": self.patch_size,
            "global_dim": self.global_dim,
            "channels": list(self.channels),
            "conv_dense": self.conv_dense,
            "global_dense": self.global_dense,
            "hidden": self.hidden,
            "layers": [{"name": p.name, "shape": list(p.shape)} for p in self.parameters()],
        }


def q_forward(net: QNetwork, state: CuState) -> np.ndarray:
    """Q-values for one state, shape (action_count,)."""
    return net.forward(state.patches[None], state.globals[None])[0]


def select_action(net: QNetwork, state: CuState, epsilon: float,
                  rng: np.random.Generator | None = None) -> int:
    """Epsilon-greedy action; ties in the greedy branch go to the lowest index."""
    if epsilon > 0:
        if rng is None:
            raise ValueError("exploration needs an rng")
        if rng.random() < epsilon:
            return int(rng.integers(net.action_count))
    return int(np.argmax(q_forward(net, state)))


class Transition(NamedTuple):
    state: CuState
    action: int
    reward: float
    next_state: CuState | None
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring with uniform no-replacement batch sampling."""

    def __init__(self, capacity: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._pos = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, state: CuState, action: int, reward: float,
             next_state: CuState | None, terminal: bool) -> None:
        tr = Transition(state, int(action), float(reward), next_state, bool(terminal))
        if len(self._items) < self.capacity:
            self._items.append(tr)
        else:
            self._items[self._pos] = tr
            self._pos = (self._pos + 1) % self.capacity

    def snapshot(self) -> list[Transition]:
        """Contents oldest to newest."""
        return self._items[self._pos :] + self._items[: self._pos]

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[Transition]:
        if batch_size > len(self._items):
            raise ValueError(f"cannot sample {batch_size} of {len(self._items)} transitions")
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in idx]


def sync_target(net: QNetwork, target: QNetwork) -> None:
    """Copy every parameter of net into target, bitwise."""
    src, dst = net.parameters(), target.parameters()
    if len(src) != len(dst):
        raise ValueError("networks differ in architecture")
    for a, b in zip(src, dst):
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch for {a.name}")
        np.copyto(b.value, a.value)


def td_update(net: QNetwork, target_net: QNetwork, batch: Sequence[Transition],
              optimizer: nn.Adam, gamma: float) -> float:
    """One squared-TD-error step on net; returns the pre-step batch loss.

    Targets are r for terminal transitions and r + gamma * max_a' Q_target
    (s', a') otherwise; only the taken action's Q receives gradient.
    """
    n = len(batch)
    patches = np.stack([t.state.patches for t in batch])
    globs = np.stack([t.state.globals for t in batch])
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    actions = np.array([t.action for t in batch], dtype=np.int64)

    if gamma == 0.0:
        # no bootstrap term, so the target pass can be skipped outright
        targets = rewards
    else:
        # terminal rows reuse the current state as a placeholder and get masked
        next_patches = np.stack([
            (t.state if t.next_state is None else t.next_state).patches for t in batch
        ])
        next_globs = np.stack([
            (t.state if t.next_state is None else t.next_state).globals for t in batch
        ])
        live = np.array([not t.terminal for t in batch], dtype=np.float64)
        q_next = target_net.forward(next_patches, next_globs)
        targets = rewards + gamma * live * q_next.max(axis=1).astype(np.float64)

    q = net.forward(patches, globs)
    taken = q[np.arange(n), actions].astype(np.float64)
    err = taken - targets
    loss = float(np.mean(err * err))

    dq = np.zeros_like(q)
    dq[np.arange(n), actions] = (2.0 * err / n).astype(q.dtype)
    net.zero_grad()
    net.backward(dq)
    optimizer.step()
    return loss


@dataclass(frozen=True)
class LogRow:
    """One training step for the CSV log."""

    step: int
    episode: int
    epsilon: float
    loss: float
    episode_return: float


def train(
    env_factory: Callable[[int], object],
    config: TrainConfig,
    global_branch: bool = True,
    dtype=np.float32,
) -> tuple[QNetwork, list[LogRow]]:
    """Run DQN for config.total_steps environment steps.

    Args:
        env_factory: called with the episode index, returns an environment
            exposing reset() -> state and step(action) -> (state|None, r).
        config: hyperparameters; config.seed drives the network init, the
            exploration stream, and replay sampling.
        global_branch: ablation hook, passed through to the network.

    Returns:
        The trained network and one LogRow per environment step.
    """
    net = QNetwork(seed=config.seed, global_branch=global_branch, dtype=dtype)
    target = net.clone()
    optimizer = nn.Adam(net.parameters(), learning_rate=config.learning_rate)
    buffer = ReplayBuffer(config.buffer_capacity)
    rng = np.random.default_rng([config.seed, 1])
    log: list[LogRow] = []
    step = 0
    episode = 0
    while step < config.total_steps:
        env = env_factory(episode)
        state = env.reset()
        ep_return = 0.0
        while state is not None and step < config.total_steps:
            epsilon = config.epsilon_at(step)
            action = select_action(net, state, epsilon, rng)
            next_state, reward = env.step(action)
            buffer.push(state, action, reward, next_state, next_state is None)
            ep_return += reward
            loss = math.nan
            if len(buffer) >= config.batch_size:
                batch = buffer.sample(config.batch_size, rng)
                loss = td_update(net, target, batch, optimizer, config.gamma)
            step += 1
            if step % config.target_sync_every == 0:
                sync_target(net, target)
            log.append(LogRow(step, episode, epsilon, loss, ep_return))
            state = next_state
        episode += 1
    return net, log


def infer_qpmap(net: QNetwork, ctx: FrameContext, config: EpisodeConfig) -> list[int]:
    """Greedy raster-order QP decisions for one frame.

    Earlier choices feed later states through the chosen-QP global slots,
    exactly as during training.
    """
    chosen: list[int | None] = [None] * ctx.n_cus
    for i in range(ctx.n_cus):
        state = ctx.state(i, chosen)
        action = int(np.argmax(q_forward(net, state)))
        chosen[i] = config.qp_of_action(action)
    return chosen  # type: ignore[return-value]


def save_model(net: QNetwork, path, seed: int | None = None) -> None:
    """Write the binary model file (RSCQ magic, descriptor, f32 params)."""
    desc = net.arch_descriptor()
    desc["seed"] = net.seed if seed is None else int(seed)
    blob = json.dumps(desc, sort_keys=True, separators=(",", ":")).encode("ascii")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(np.uint32(MODEL_FORMAT_VERSION).tobytes())
        fh.write(np.uint32(len(blob)).tobytes())
        fh.write(blob)
        for p in net.parameters():
            fh.write(np.ascontiguousarray(p.value, dtype="<f4").tobytes())


def load_model(path, dtype=np.float32) -> QNetwork:
    """Read a model file back into a QNetwork; validates magic and shapes."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MODEL_MAGIC:
        raise ModelLoadError(f"{path}: bad magic {data[:4]!r}")
    version = int(np.frombuffer(data[4:8], dtype="<u4")[0]) if len(data) >= 8 else -1
    if version != MODEL_FORMAT_VERSION:
        raise ModelLoadError(f"{path}: unsupported format version {version}")
    if len(data) < 12:
        raise ModelLoadError(f"{path}: truncated header")
    desc_len = int(np.frombuffer(data[8:12], dtype="<u4")[0])
    desc_end = 12 + desc_len
    if len(data) < desc_end:
        raise ModelLoadError(f"{path}: truncated descriptor")
    try:
        desc = json.loads(data[12:desc_end].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelLoadError(f"{path}: bad descriptor: {exc}") from exc
    try:
        net = QNetwork(
            seed=int(desc.get("seed", 0)),
            action_count=desc["action_count"],
            global_branch=desc["global_branch"],
            dtype=dtype,
            patch_size=desc["patch_size"],
            global_dim=desc["global_dim"],
            channels=tuple(desc["channels"]),
            conv_dense=desc["conv_dense"],
            global_dense=desc["global_dense"],
            hidden=desc["hidden"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelLoadError(f"{path}: bad architecture descriptor: {exc}") from exc
    params = net.parameters()
    declared = desc.get("layers", [])
    if len(declared) != len(params):
        raise ModelLoadError(f"{path}: descriptor lists {len(declared)} tensors, net has {len(params)}")
    offset = desc_end
    for p, spec in zip(params, declared):
        if list(p.shape) != list(spec.get("shape", [])):
            raise ModelLoadError(f"{path}: shape mismatch for {p.name}")
        nbytes = int(np.prod(p.shape)) * 4
        chunk = data[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ModelLoadError(f"{path}: truncated parameter data at {p.name}")
        p.value = np.frombuffer(chunk, dtype="<f4").reshape(p.shape).astype(net.dtype)
        p.grad = np.zeros_like(p.value)
        offset += nbytes
    if offset != len(data):
        raise ModelLoadError(f"{path}: {len(data) - offset} trailing bytes")
    return net
