"""Layer vocabulary: LSTM / Bi-LSTM, dense, dropout, batch norm, frozen embedding,
time-distributed convolution blocks and temporal pooling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor


class ConfigError(ValueError):
    pass


def glorot_uniform(rng: np.random.Generator, shape: tuple, fan_in: int | None = None,
                   fan_out: int | None = None) -> np.ndarray:
    fan_in = fan_in if fan_in is not None else shape[0]
    fan_out = fan_out if fan_out is not None else shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(T.default_dtype())


def param(data: np.ndarray, name: str = "") -> Tensor:
    return Tensor(np.asarray(data, dtype=T.default_dtype()), requires_grad=True, name=name)


class Module:
    """Minimal container: tensors and submodules are discovered from attributes
    in assignment order, which keeps parameter naming deterministic."""

    training: bool = True

    def _children(self) -> Iterator[tuple[str, object]]:
        for key, val in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(val, (Tensor, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{key}.{i}", v

    def named_tensors(self, prefix: str = "") -> list[tuple[str, Tensor]]:
        """Every tensor the module owns: trainable parameters and buffers alike."""
        out = []
        for key, val in self._children():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor):
                out.append((name, val))
            else:
                out.extend(val.named_tensors(name + "."))
        return out

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self.named_tensors() if t.requires_grad]

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, val in self._children():
            if isinstance(val, Module):
                yield from val.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self.named_tensors()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_tensors())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, t in own.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data = arr.astype(t.dtype, copy=True)

    def reseed(self, seed: int) -> None:
        """Reset the random streams of every stochastic submodule."""
        for i, m in enumerate(self.modules()):
            if isinstance(m, (Dropout, LSTM)):
                m.rng = np.random.default_rng([seed, i])

    def count_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


class Dense(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, activation: str | None = None):
        self.W = param(glorot_uniform(rng, (n_in, n_out)))
        self.b = param(np.zeros(n_out))
        if activation not in (None, "relu", "tanh"):
            raise ConfigError(f"unsupported activation {activation!r}")
        self.activation = activation

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.W) + self.b
        if self.activation == "relu":
            return T.relu(y)
        if self.activation == "tanh":
            return T.tanh(y)
        return y


class Dropout(Module):
    """Inverted dropout: kept units are scaled by 1/(1-p) so inference is the identity."""

    def __init__(self, p: float, rng: np.random.Generator | None = None):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {p}")
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def __call__(self, x: Tensor) -> Tensor:
        if not self.training or self.p == 0.0:
            return x
        keep = (self.rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)
        return x * Tensor(keep)


class BatchNorm(Module):
    """Normalizes each channel (last axis) over all leading axes."""

    def __init__(self, num_features: int, eps: float = 1e-5, momentum: float = 0.9):
        self.gamma = param(np.ones(num_features))
        self.beta = param(np.zeros(num_features))
        self.running_mean = Tensor(np.zeros(num_features, dtype=T.default_dtype()))
        self.running_var = Tensor(np.ones(num_features, dtype=T.default_dtype()))
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.gamma.shape[0]:
            raise DimensionError(f"batch norm expects {self.gamma.shape[0]} channels, got shape {x.shape}")
        if self.training:
            y, mu, var = T.batch_norm(x, self.gamma, self.beta, self.eps)
            m = self.momentum
            self.running_mean.data = (m * self.running_mean.data + (1 - m) * mu).astype(x.dtype)
            self.running_var.data = (m * self.running_var.data + (1 - m) * var).astype(x.dtype)
            return y
        inv = 1.0 / np.sqrt(self.running_var.data + self.eps)
        xhat = (x - Tensor(self.running_mean.data)) * Tensor(inv.astype(x.dtype))
        return xhat * self.gamma + self.beta


class Embedding(Module):
    """Frozen lookup table; row 0 is the padding row and stays zero."""

    def __init__(self, table: np.ndarray):
        table = np.asarray(table, dtype=T.default_dtype())
        if table.ndim != 2:
            raise DimensionError(f"embedding table must be 2-D, got {table.shape}")
        self.table = Tensor(table)  # requires_grad=False: never updated

    @property
    def vocab_rows(self) -> int:
        return self.table.shape[0]

    def __call__(self, indices: np.ndarray) -> Tensor:
        indices = np.asarray(indices)
        if indices.size and (indices.min() < 0 or indices.max() >= self.vocab_rows):
            bad = int(indices.max() if indices.max() >= self.vocab_rows else indices.min())
            raise IndexError(f"token index {bad} outside embedding rows [0, {self.vocab_rows})")
        return Tensor(self.table.data[indices])


def embedding_lookup(table: Embedding, indices) -> Tensor:
    return table(indices)


# -- recurrent layers -------------------------------------------------------------

GATES = ("i", "f", "o", "g")


class LSTM(Module):
    """Single-layer LSTM.

    Gate blocks are packed along the last axis in the order input, forget,
    output, modulation: ``W`` is (input, 4*hidden), ``U`` is (hidden, 4*hidden).
    ``recurrent_dropout`` drops units of h_{t-1} before the recurrent product,
    with one mask per sequence.
    """

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator,
                 recurrent_dropout: float = 0.0, forget_bias: float = 1.0):
        self.n_in = n_in
        self.hidden = hidden
        self.W = param(np.concatenate([glorot_uniform(rng, (n_in, hidden)) for _ in GATES], axis=1))
        self.U = param(np.concatenate([glorot_uniform(rng, (hidden, hidden)) for _ in GATES], axis=1))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = forget_bias
        self.b = param(b)
        self.recurrent_dropout = recurrent_dropout
        self.rng = np.random.default_rng(int(rng.integers(2**31)))

    def gate_block(self, which: str, gate: str) -> np.ndarray:
        k = GATES.index(gate)
        arr = getattr(self, which).data
        return arr[..., k * self.hidden:(k + 1) * self.hidden]

    def _check_input(self, n: int) -> None:
        if n != self.n_in:
            raise DimensionError(
                f"input-to-gate weights W_i/W_f/W_o/W_g expect {self.n_in} inputs, got {n}")

    def step(self, x_t: Tensor, h_prev: Tensor, c_prev: Tensor,
             x_proj: Tensor | None = None, h_mask: Tensor | None = None) -> tuple[Tensor, Tensor]:
        if x_proj is None:
            self._check_input(x_t.shape[-1])
            x_proj = T.matmul(x_t, self.W)
        if h_prev.shape[-1] != self.hidden:
            raise DimensionError(
                f"recurrent weights U_i/U_f/U_o/U_g expect hidden size {self.hidden}, got {h_prev.shape[-1]}")
        if c_prev.shape[-1] != self.hidden:
            raise DimensionError(f"memory cell expects hidden size {self.hidden}, got {c_prev.shape[-1]}")
        h_in = h_prev if h_mask is None else h_prev * h_mask
        z = x_proj + T.matmul(h_in, self.U) + self.b
        H = self.hidden
        i = T.sigmoid(z[..., 0:H])
        f = T.sigmoid(z[..., H:2 * H])
        o = T.sigmoid(z[..., 2 * H:3 * H])
        g = T.tanh(z[..., 3 * H:4 * H])
        c = f * c_prev + i * g
        h = o * T.tanh(c)
        return h, c

    def __call__(self, seq: Tensor, return_all: bool = True) -> Tensor:
        """Run over ``seq`` of shape (T, input) or (B, T, input) from zero state."""
        unbatched = seq.ndim == 2
        if unbatched:
            seq = seq.reshape((1,) + seq.shape)
        B, steps, n = seq.shape
        if steps < 1:
            raise ValueError("run_lstm needs at least one timestep")
        self._check_input(n)
        proj = T.matmul(seq, self.W)
        zeros = np.zeros((B, self.hidden), dtype=proj.dtype)
        h, c = Tensor(zeros), Tensor(zeros)
        h_mask = None
        if self.training and self.recurrent_dropout > 0:
            p = self.recurrent_dropout
            h_mask = Tensor((self.rng.random((B, self.hidden)) >= p).astype(proj.dtype) / (1 - p))
        outs = []
        for x_proj in T.unbind(proj, axis=1):
            h, c = self.step(None, h, c, x_proj=x_proj, h_mask=h_mask)
            outs.append(h)
        out = T.stack(outs, axis=1) if return_all else h
        if unbatched:
            out = out.reshape(out.shape[1:])
        return out


def lstm_step(params: LSTM, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    return params.step(x_t, h_prev, c_prev)


def run_lstm(params: LSTM, sequence: Tensor, return_all: bool = True) -> Tensor:
    return params(sequence, return_all=return_all)


class BiLSTM(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, recurrent_dropout: float = 0.0,
                 fwd: LSTM | None = None, bwd: LSTM | None = None):
        self.fwd = fwd if fwd is not None else LSTM(n_in, hidden, rng, recurrent_dropout)
        self.bwd = bwd if bwd is not None else LSTM(n_in, hidden, rng, recurrent_dropout)
        if self.fwd.hidden != self.bwd.hidden:
            raise DimensionError(
                f"forward hidden size {self.fwd.hidden} != backward hidden size {self.bwd.hidden}")
        self.hidden = self.fwd.hidden

    def __call__(self, seq: Tensor, return_all: bool = True) -> Tensor:
        return run_bilstm(self.fwd, self.bwd, seq, return_all)


def run_bilstm(fwd: LSTM, bwd: LSTM, sequence: Tensor, return_all: bool = True) -> Tensor:
    """Row t is [forward h_t, backward state that has read x_{T-1} .. x_t].

    With ``return_all=False`` the summary is [forward h_{T-1}, backward state at
    position 0], i.e. each direction's final state.
    """
    if fwd.hidden != bwd.hidden:
        raise DimensionError(f"forward hidden size {fwd.hidden} != backward hidden size {bwd.hidden}")
    time_axis = sequence.ndim - 2
    f = fwd(sequence, return_all=True)
    b = T.flip(bwd(T.flip(sequence, time_axis), return_all=True), time_axis)
    out = T.concat([f, b], axis=-1)
    if return_all:
        return out
    last_f = f[..., -1, :]
    first_b = b[..., 0, :]
    return T.concat([last_f, first_b], axis=-1)


# -- time-distributed CNN -------------------------------------------------------------

@dataclass(frozen=True)
class TcnnBlockConfig:
    kernel_count: int
    kernel_size: int
    pool_size: int = 2

    def __post_init__(self):
        for field in ("kernel_count", "kernel_size", "pool_size"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be positive, got {getattr(self, field)}")


PROPOSED_TCNN = (
    TcnnBlockConfig(64, 3, 2),
    TcnnBlockConfig(64, 3, 2),
    TcnnBlockConfig(64, 3, 2),
    TcnnBlockConfig(128, 3, 2),
    TcnnBlockConfig(256, 9, 2),
)


def pooled_width(width: int, blocks) -> int:
    for cfg in blocks:
        width = -(-width // cfg.pool_size)
    return width


class TcnnBlock(Module):
    """Convolution along the feature axis, shared across timesteps, then pooling
    along the feature axis, then per-channel batch normalization."""

    def __init__(self, in_channels: int, cfg: TcnnBlockConfig, rng: np.random.Generator,
                 pool_mode: str = "max"):
        k, cout = cfg.kernel_size, cfg.kernel_count
        self.kernel = param(glorot_uniform(rng, (k, in_channels, cout),
                                           fan_in=k * in_channels, fan_out=k * cout))
        self.bias = param(np.zeros(cout))
        self.bn = BatchNorm(cout)
        self.pool_size = cfg.pool_size
        if pool_mode not in ("max", "avg"):
            raise ConfigError(f"pool_mode must be 'max' or 'avg', got {pool_mode!r}")
        self.pool_mode = pool_mode

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-2] < 1:
            raise ConfigError(f"T-CNN block received an empty feature axis (shape {x.shape})")
        y = T.conv1d_features(x, self.kernel, self.bias)
        y = T.pool_features(y, self.pool_size, self.pool_mode)
        return self.bn(y)


def tcnn_block(block: TcnnBlock, x: Tensor) -> Tensor:
    return block(x)


def global_average_pool_time(x: Tensor) -> Tensor:
    """(T, F, C) -> (F*C) or (B, T, F, C) -> (B, F*C): mean over time, then flatten."""
    if x.ndim == 3:
        return x.mean(axis=0).reshape(-1)
    pooled = x.mean(axis=1)
    return pooled.reshape(pooled.shape[0], -1)
