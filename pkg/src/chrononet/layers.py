"""Network building blocks: RNN/GRU cells, strided 1-D convolution, inception
blocks with several kernel lengths, densely wired GRU stacks, linear readout.

Sequence tensors are laid out (batch, channels, time).  Weight matrices are
(hidden, input) so a batched step computes ``x @ W.T``.  The GRU cell:

    z = sigmoid(W_z x + U_z h_prev + b_z)
    r = sigmoid(W_r x + U_r h_prev + b_r)
    h~ = tanh(W_h x + U_h (r * h_prev) + b_h)
    h  = (1 - z) * h_prev + z * h~

``gru_step`` composes these from taped primitives; ``gru_layer_forward`` runs
the whole sequence as one fused tape node with a hand-written
backpropagation-through-time rule (checked against finite differences and
against the step-composed path in the tests).
"""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError, ShapeError
from .tensor import (
    Prng,
    Tensor,
    _sigmoid,
    add,
    concat,
    make_op,
    matmul,
    mul,
    reshape,
    sigmoid,
    slice_axis,
    sub,
    tanh,
)


def glorot_uniform(prng: Prng, shape, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    """Uniform draw in +-sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return prng.uniform(-bound, bound, shape, dtype=dtype)


# ---------------------------------------------------------------------------
# parameter bundles


@dataclass
class RnnParams:
    """Classical recurrent cell h = f(W x + U h_prev + b)."""

    W: Tensor
    U: Tensor
    b: Tensor
    activation: str = "tanh"

    def __post_init__(self):
        m, n = self.W.shape
        if self.U.shape != (m, m) or self.b.shape != (m,):
            raise ConfigError(
                f"rnn params disagree: W {self.W.shape}, U {self.U.shape}, b {self.b.shape}"
            )
        if self.activation not in ("tanh", "sigmoid"):
            raise ConfigError(f"rnn activation must be tanh or sigmoid, got {self.activation!r}")

    @classmethod
    def init(cls, prng: Prng, input_size: int, hidden_size: int,
             activation: str = "tanh", dtype=np.float32) -> "RnnParams":
        W = Tensor(glorot_uniform(prng, (hidden_size, input_size), input_size, hidden_size, dtype),
                   requires_grad=True)
        U = Tensor(glorot_uniform(prng, (hidden_size, hidden_size), hidden_size, hidden_size, dtype),
                   requires_grad=True)
        b = Tensor(np.zeros(hidden_size, dtype=dtype), requires_grad=True)
        return cls(W, U, b, activation)


_GRU_FIELDS = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")


@dataclass
class GruParams:
    """All nine learnable arrays of one GRU layer."""

    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    U_z: Tensor
    U_r: Tensor
    U_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    def __post_init__(self):
        m, n = self.W_z.shape
        for name in ("W_r", "W_h"):
            if getattr(self, name).shape != (m, n):
                raise ConfigError(f"gru input matrices disagree: W_z {(m, n)}, "
                                  f"{name} {getattr(self, name).shape}")
        for name in ("U_z", "U_r", "U_h"):
            if getattr(self, name).shape != (m, m):
                raise ConfigError(f"gru recurrent matrix {name} must be {(m, m)}, "
                                  f"got {getattr(self, name).shape}")
        for name in ("b_z", "b_r", "b_h"):
            if getattr(self, name).shape != (m,):
                raise ConfigError(f"gru bias {name} must have length {m}, "
                                  f"got {getattr(self, name).shape}")

    @property
    def hidden_size(self) -> int:
        return self.W_z.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_z.shape[1]

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [(name, getattr(self, name)) for name in _GRU_FIELDS]

    @classmethod
    def init(cls, prng: Prng, input_size: int, hidden_size: int, dtype=np.float32) -> "GruParams":
        # Draw order is part of the determinism contract: W_z, W_r, W_h, then U's.
        def w():
            return Tensor(glorot_uniform(prng, (hidden_size, input_size),
                                         input_size, hidden_size, dtype), requires_grad=True)

        def u():
            return Tensor(glorot_uniform(prng, (hidden_size, hidden_size),
                                         hidden_size, hidden_size, dtype), requires_grad=True)

        def b():
            return Tensor(np.zeros(hidden_size, dtype=dtype), requires_grad=True)

        return cls(w(), w(), w(), u(), u(), u(), b(), b(), b())

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int, dtype=np.float64) -> "GruParams":
        def z(shape):
            return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

        return cls(z((hidden_size, input_size)), z((hidden_size, input_size)),
                   z((hidden_size, input_size)), z((hidden_size, hidden_size)),
                   z((hidden_size, hidden_size)), z((hidden_size, hidden_size)),
                   z(hidden_size), z(hidden_size), z(hidden_size))


@dataclass
class ConvParams:
    """One strided 1-D convolution: kernels (out_ch, in_ch, k), bias, stride."""

    kernels: Tensor
    bias: Tensor
    stride: int

    def __post_init__(self):
        if self.kernels.data.ndim != 3:
            raise ConfigError(f"conv kernels must be 3-axis, got shape {self.kernels.shape}")
        out_ch, _, k = self.kernels.shape
        if self.bias.shape != (out_ch,):
            raise ConfigError(f"conv bias must have length {out_ch}, got {self.bias.shape}")
        if k < 1:
            raise ConfigError(f"kernel length must be >= 1, got {k}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_length(self) -> int:
        return self.kernels.shape[2]

    def tensors(self) -> list[tuple[str, Tensor]]:
        return [("kernels", self.kernels), ("bias", self.bias)]

    @classmethod
    def init(cls, prng: Prng, in_channels: int, out_channels: int, kernel_length: int,
             stride: int, dtype=np.float32) -> "ConvParams":
        fan_in = in_channels * kernel_length
        fan_out = out_channels * kernel_length
        kernels = Tensor(glorot_uniform(prng, (out_channels, in_channels, kernel_length),
                                        fan_in, fan_out, dtype), requires_grad=True)
        bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
        return cls(kernels, bias, stride)


@dataclass
class InceptionConvBlock:
    """Parallel convolutions over the same input, concatenated on channels."""

    branches: list[ConvParams]

    def __post_init__(self):
        if not self.branches:
            raise ConfigError("inception block needs at least one branch")
        stride = self.branches[0].stride
        in_ch = self.branches[0].in_channels
        for br in self.branches[1:]:
            if br.stride != stride:
                raise ConfigError(f"inception branches must share stride: {stride} vs {br.stride}")
            if br.in_channels != in_ch:
                raise ConfigError(
                    f"inception branches must share in_channels: {in_ch} vs {br.in_channels}")

    @property
    def stride(self) -> int:
        return self.branches[0].stride

    @property
    def in_channels(self) -> int:
        return self.branches[0].in_channels

    @property
    def out_channels(self) -> int:
        return sum(br.out_channels for br in self.branches)

    def tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for j, br in enumerate(self.branches):
            out.extend((f"branch{j}.{name}", t) for name, t in br.tensors())
        return out


@dataclass
class DenseGruStack:
    """Ordered GRU layers, optionally with dense feed-forward wiring.

    Dense wiring feeds layer k (k >= 2) the channel-wise concatenation of
    the hidden sequences of layers 1..k-1; the stack's external input feeds
    layer 1 only.  Plain wiring chains each layer to its predecessor.
    """

    layers: list[GruParams]
    dense: bool = False

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("gru stack needs at least one layer")
        widths = [p.hidden_size for p in self.layers]
        for k, p in enumerate(self.layers[1:], start=1):
            expected = sum(widths[:k]) if self.dense else widths[k - 1]
            if p.input_size != expected:
                raise ConfigError(
                    f"gru layer {k} declares input width {p.input_size}, wiring provides {expected}")

    @property
    def input_size(self) -> int:
        return self.layers[0].input_size

    @property
    def output_size(self) -> int:
        return self.layers[-1].hidden_size

    def tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for k, p in enumerate(self.layers):
            out.extend((f"gru{k}.{name}", t) for name, t in p.tensors())
        return out


def connection_count(num_layers: int, dense: bool) -> int:
    """Direct feed-forward links in the wiring diagram, the external input
    counted as a source node.

    Enumerates (source, layer) pairs over the node chain [input, layer 1, ...,
    layer L]: dense wiring links every source to every later node, giving
    L(L+1)/2; chain wiring links each node to its successor, giving L.
    """
    nodes = num_layers + 1
    if dense:
        return sum(range(1, nodes)) # == C(nodes, 2)
    return num_layers


# ---------------------------------------------------------------------------
# recurrent steps (tape-composed)


def _affine_step(x: Tensor, h_prev: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    return add(add(matmul(x, W, transpose_b=True), matmul(h_prev, U, transpose_b=True)), b)


def rnn_step(p: RnnParams, x: Tensor, h_prev: Tensor) -> Tensor:
    """One classical RNN update on a (batch, features) slice."""
    pre = _affine_step(x, h_prev, p.W, p.U, p.b)
    return tanh(pre) if p.activation == "tanh" else sigmoid(pre)


def gru_step(p: GruParams, x: Tensor, h_prev: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """One GRU update; returns (h, z, r, h_candidate) so gates are testable."""
    z = sigmoid(_affine_step(x, h_prev, p.W_z, p.U_z, p.b_z))
    r = sigmoid(_affine_step(x, h_prev, p.W_r, p.U_r, p.b_r))
    h_cand = tanh(_affine_step(x, mul(r, h_prev), p.W_h, p.U_h, p.b_h))
    one = Tensor(np.ones_like(z.data))
    h = add(mul(sub(one, z), h_prev), mul(z, h_cand))
    return h, z, r, h_cand


# ---------------------------------------------------------------------------
# fused sequence ops


def gru_layer_forward(p: GruParams, seq: Tensor) -> Tensor:
    """Run a GRU over (batch, channels, time); returns the full hidden
    sequence (batch, hidden, time) starting from h_0 = 0.

    One fused tape node: the forward loop stores gate activations and the
    backward rule replays them in reverse (full backpropagation through
    time, no truncation).
    """
    if seq.data.ndim != 3:
        raise ShapeError(f"gru input must be (batch, channels, time), got {seq.shape}")
    batch, in_ch, steps = seq.shape
    if steps == 0:
        raise DataError("gru_layer_forward: empty sequence (time extent 0)")
    if in_ch != p.input_size:
        raise ShapeError(f"gru expects {p.input_size} input channels, got {in_ch}")
    m = p.hidden_size
    dtype = seq.data.dtype

    W_all = np.concatenate([p.W_z.data, p.W_r.data, p.W_h.data], axis=0)   # (3m, n)
    U_zr = np.concatenate([p.U_z.data, p.U_r.data], axis=0)                # (2m, m)
    U_h = p.U_h.data
    b_z, b_r, b_h = p.b_z.data, p.b_r.data, p.b_h.data

    x_tbc = np.ascontiguousarray(seq.data.transpose(2, 0, 1))              # (T, B, n)
    X = (x_tbc.reshape(steps * batch, in_ch) @ W_all.T).reshape(steps, batch, 3 * m)

    H = np.empty((steps, batch, m), dtype=dtype)
    H_prev = np.empty_like(H)
    Z = np.empty_like(H)
    R = np.empty_like(H)
    C = np.empty_like(H)   # candidate states
    h = np.zeros((batch, m), dtype=dtype)
    for t in range(steps):
        H_prev[t] = h
        rec = h @ U_zr.T
        z = _sigmoid(X[t, :, :m] + rec[:, :m] + b_z)
        r = _sigmoid(X[t, :, m:2 * m] + rec[:, m:] + b_r)
        cand = np.tanh(X[t, :, 2 * m:] + (r * h) @ U_h.T + b_h)
        h = (1.0 - z) * h + z * cand
        Z[t], R[t], C[t], H[t] = z, r, cand, h

    out_data = np.ascontiguousarray(H.transpose(1, 2, 0))                  # (B, m, T)

    def bwd(g):
        G = g.transpose(2, 0, 1)                                           # (T, B, m)
        dA_z = np.empty_like(H)
        dA_r = np.empty_like(H)
        dA_h = np.empty_like(H)
        carry = np.zeros((batch, m), dtype=dtype)
        for t in range(steps - 1, -1, -1):
            dh = G[t] + carry
            z, r, cand, hp = Z[t], R[t], C[t], H_prev[t]
            dcand = dh * z
            dhp = dh * (1.0 - z)
            da_h = dcand * (1.0 - cand * cand)
            drh = da_h @ U_h
            dhp += drh * r
            da_z = dh * (cand - hp) * z * (1.0 - z)
            da_r = drh * hp * r * (1.0 - r)
            dA_z[t], dA_r[t], dA_h[t] = da_z, da_r, da_h
            carry = dhp + np.concatenate([da_z, da_r], axis=1) @ U_zr

        flat = steps * batch
        x2 = x_tbc.reshape(flat, in_ch)
        hp2 = H_prev.reshape(flat, m)
        rh2 = (R * H_prev).reshape(flat, m)
        dz2 = dA_z.reshape(flat, m)
        dr2 = dA_r.reshape(flat, m)
        dh2 = dA_h.reshape(flat, m)
        dX = np.concatenate([dz2, dr2, dh2], axis=1) @ W_all               # (T*B, n)
        dseq = np.ascontiguousarray(dX.reshape(steps, batch, in_ch).transpose(1, 2, 0))
        return (dseq,
                dz2.T @ x2, dr2.T @ x2, dh2.T @ x2,
                dz2.T @ hp2, dr2.T @ hp2, dh2.T @ rh2,
                dz2.sum(axis=0), dr2.sum(axis=0), dh2.sum(axis=0))

    inputs = (seq, p.W_z, p.W_r, p.W_h, p.U_z, p.U_r, p.U_h, p.b_z, p.b_r, p.b_h)
    return make_op("gru_layer", inputs, out_data, bwd)


def conv1d_output_length(length: int, stride: int) -> int:
    """Output time extent under "same" padding: ceil(length / stride)."""
    return -(-length // stride)


def conv1d_forward(p: ConvParams, seq: Tensor) -> Tensor:
    """Strided cross-correlation with "same" zero padding, bias, then ReLU.

    Padding splits as floor((k-1)/2) on the left and ceil((k-1)/2) on the
    right, so the output length is ceil(T / stride) for every kernel length.
    """
    if seq.data.ndim != 3:
        raise ShapeError(f"conv input must be (batch, channels, time), got {seq.shape}")
    batch, in_ch, length = seq.shape
    if length == 0:
        raise DataError("conv1d_forward: empty sequence (time extent 0)")
    if in_ch != p.in_channels:
        raise ShapeError(f"conv expects {p.in_channels} input channels, got {in_ch}")
    out_ch, _, k = p.kernels.shape
    stride = p.stride
    pad_left = (k - 1) // 2
    pad_right = (k - 1) - pad_left
    t_out = conv1d_output_length(length, stride)

    padded = np.pad(seq.data, ((0, 0), (0, 0), (pad_left, pad_right)))
    windows = sliding_window_view(padded, k, axis=2)[:, :, ::stride, :]    # (B, C, T_out, k)
    cols = np.ascontiguousarray(windows.transpose(0, 2, 1, 3)).reshape(batch * t_out, in_ch * k)
    k2 = p.kernels.data.reshape(out_ch, in_ch * k)
    pre = (cols @ k2.T).reshape(batch, t_out, out_ch).transpose(0, 2, 1) + p.bias.data[None, :, None]
    out_data = np.maximum(pre, 0.0)

    def bwd(g):
        gp = np.where(out_data > 0, g, 0.0)
        db = gp.sum(axis=(0, 2))
        g2 = np.ascontiguousarray(gp.transpose(0, 2, 1)).reshape(batch * t_out, out_ch)
        dk = (g2.T @ cols).reshape(out_ch, in_ch, k)
        dcols = (g2 @ k2).reshape(batch, t_out, in_ch, k).transpose(0, 2, 1, 3)
        dpad = np.zeros_like(padded)
        for j in range(k):
            # for fixed kernel offset j the written positions never collide
            dpad[:, :, j:j + stride * t_out:stride] += dcols[:, :, :, j]
        dseq = dpad[:, :, pad_left:pad_left + length]
        return np.ascontiguousarray(dseq), dk, db

    return make_op("conv1d", (seq, p.kernels, p.bias), out_data, bwd)


def inception_conv1d_forward(block: InceptionConvBlock, seq: Tensor) -> Tensor:
    """Run every branch convolution and concatenate along the channel axis."""
    outs = [conv1d_forward(br, seq) for br in block.branches]
    if len(outs) == 1:
        return outs[0]
    return concat(outs, axis=1)


def dense_gru_forward(stack: DenseGruStack, seq: Tensor) -> Tensor:
    """Run the GRU stack; returns the last layer's hidden sequence."""
    hidden: list[Tensor] = []
    for k, p in enumerate(stack.layers):
        if k == 0:
            inp = seq
        elif stack.dense:
            inp = concat(hidden, axis=1) if len(hidden) > 1 else hidden[0]
        else:
            inp = hidden[-1]
        if inp.shape[1] != p.input_size:
            raise ConfigError(
                f"gru layer {k} declares input width {p.input_size}, wiring provides {inp.shape[1]}")
        hidden.append(gru_layer_forward(p, inp))
    return hidden[-1]


def linear_forward(W: Tensor, b: Tensor, x: Tensor) -> Tensor:
    """Affine map x @ W.T + b for x of shape (batch, in_features)."""
    if x.data.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"linear expects (batch, {W.shape[1]}) input, got {x.shape}")
    out_data = x.data @ W.data.T + b.data

    def bwd(g):
        return g @ W.data, g.T @ x.data, g.sum(axis=0)

    return make_op("linear", (x, W, b), out_data, bwd)


def last_time_step(seq: Tensor) -> Tensor:
    """Slice the final time index from (batch, channels, time)."""
    batch, ch, length = seq.shape
    tail = slice_axis(seq, 2, length - 1, length)
    return reshape(tail, (batch, ch))
