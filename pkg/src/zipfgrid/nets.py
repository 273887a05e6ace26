"""Minimal differentiable function approximator on numpy arrays.

A network is a strided-conv encoder, a dense trunk, and named linear heads;
when a ``recon`` head is requested it is realized as a deconvolutional decoder
mirroring the encoder back to the input shape. Convolutions run as im2col +
one BLAS matmul, so training batches stay fast on a single core. ``forward``
caches activations, ``backward`` returns exact reverse-mode gradients of a
scalar loss given the loss gradient at each head.

All parameters live in ``float32`` by default; tests switch to ``float64``
for finite-difference comparisons.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from zipfgrid.errors import (
    ContractViolationError,
    InvalidArgumentError,
    NumericalError,
)
from zipfgrid.seeding import stream

RECON_HEAD = "recon"


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: int
    stride: int


@dataclass(frozen=True)
class NetworkSpec:
    """Shape description of encoder, trunk and heads."""

    input_shape: tuple[int, ...]
    encoder: tuple[ConvSpec, ...]
    trunk: tuple[int, ...]
    heads: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "encoder": [[c.out_channels, c.kernel, c.stride] for c in self.encoder],
            "trunk": list(self.trunk),
            "heads": dict(sorted(self.heads.items())),
        }

    @staticmethod
    def from_dict(d: dict) -> "NetworkSpec":
        return NetworkSpec(
            input_shape=tuple(d["input_shape"]),
            encoder=tuple(ConvSpec(*c) for c in d["encoder"]),
            trunk=tuple(d["trunk"]),
            heads=dict(d["heads"]),
        )

    def digest(self) -> bytes:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).digest()


def default_network_spec(heads: dict[str, int]) -> NetworkSpec:
    """Encoder channel widths (16, 32, 32) on 63x63x3 input, 256-wide trunk."""
    return NetworkSpec(
        input_shape=(63, 63, 3),
        encoder=(ConvSpec(16, 3, 2), ConvSpec(32, 3, 2), ConvSpec(32, 3, 2)),
        trunk=(256,),
        heads=heads,
    )


def _fan_in_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                    dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class _Dense:
    def __init__(self, name: str, n_in: int, n_out: int, rng, dtype):
        self.name = name
        self.w = _fan_in_uniform(rng, (n_in, n_out), n_in, dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self._x = None

    def forward(self, x: np.ndarray, cache: bool) -> np.ndarray:
        if cache:
            self._x = x
        return x @ self.w + self.b

    def backward(self, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = self._x
        return dy @ self.w.T, x.T @ dy, dy.sum(axis=0)

    def params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class _Conv:
    """Strided valid convolution in NHWC layout via im2col."""

    def __init__(self, name: str, in_shape, spec: ConvSpec, rng, dtype):
        self.name = name
        h, w, c_in = in_shape
        k, s = spec.kernel, spec.stride
        if h < k or w < k or (h - k) % s or (w - k) % s:
            raise InvalidArgumentError(
                f"{name}: kernel {k} stride {s} does not tile input {in_shape}"
            )
        self.k, self.s, self.c_in = k, s, c_in
        self.out_shape = ((h - k) // s + 1, (w - k) // s + 1, spec.out_channels)
        self.w = _fan_in_uniform(
            rng, (k * k * c_in, spec.out_channels), k * k * c_in, dtype
        )
        self.b = np.zeros(spec.out_channels, dtype=dtype)
        self._cols = None
        self._in_shape = tuple(in_shape)

    def _im2col(self, x: np.ndarray) -> np.ndarray:
        b = x.shape[0]
        ho, wo, _ = self.out_shape
        k, s = self.k, self.s
        if k == s and self._in_shape[0] == k * ho and self._in_shape[1] == k * wo:
            # aligned tiling: pure reshape/transpose, one contiguous copy
            cols = x.reshape(b, ho, k, wo, k, self.c_in).transpose(0, 1, 3, 2, 4, 5)
            return np.ascontiguousarray(cols).reshape(b * ho * wo, k * k * self.c_in)
        cols = np.empty((b, ho, wo, k, k, self.c_in), dtype=x.dtype)
        for ki in range(k):
            for kj in range(k):
                cols[:, :, :, ki, kj, :] = x[:, ki:ki + s * ho:s, kj:kj + s * wo:s, :]
        return cols.reshape(b * ho * wo, k * k * self.c_in)

    def forward(self, x: np.ndarray, cache: bool) -> np.ndarray:
        b = x.shape[0]
        cols = self._im2col(x)
        if cache:
            self._cols = cols
        y = cols @ self.w + self.b
        return y.reshape(b, *self.out_shape)

    def backward(self, dy: np.ndarray, need_dx: bool = True):
        b = dy.shape[0]
        ho, wo, c_out = self.out_shape
        k, s = self.k, self.s
        dy_flat = dy.reshape(b * ho * wo, c_out)
        dw = self._cols.T @ dy_flat
        db = dy_flat.sum(axis=0)
        if not need_dx:
            return None, dw, db
        dcols = (dy_flat @ self.w.T).reshape(b, ho, wo, k, k, self.c_in)
        if k == s and self._in_shape[0] == k * ho and self._in_shape[1] == k * wo:
            dx = np.ascontiguousarray(
                dcols.transpose(0, 1, 3, 2, 4, 5)
            ).reshape(b, *self._in_shape)
            return dx, dw, db
        dx = np.zeros((b, *self._in_shape), dtype=dy.dtype)
        for ki in range(k):
            for kj in range(k):
                dx[:, ki:ki + s * ho:s, kj:kj + s * wo:s, :] += dcols[:, :, :, ki, kj, :]
        return dx, dw, db

    def params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class _ConvTranspose:
    """Transposed counterpart of _Conv; used by the reconstruction decoder."""

    def __init__(self, name: str, in_shape, out_channels: int, kernel: int,
                 stride: int, rng, dtype):
        self.name = name
        hi, wi, c_in = in_shape
        self.k, self.s, self.c_in, self.c_out = kernel, stride, c_in, out_channels
        self.out_shape = ((hi - 1) * stride + kernel, (wi - 1) * stride + kernel,
                          out_channels)
        self.w = _fan_in_uniform(
            rng, (c_in, kernel * kernel * out_channels), c_in, dtype
        )
        self.b = np.zeros(out_channels, dtype=dtype)
        self._x = None
        self._in_shape = tuple(in_shape)

    def forward(self, x: np.ndarray, cache: bool) -> np.ndarray:
        b = x.shape[0]
        hi, wi, _ = self._in_shape
        k, s = self.k, self.s
        if cache:
            self._x = x
        cols = (x.reshape(b * hi * wi, self.c_in) @ self.w).reshape(
            b, hi, wi, k, k, self.c_out
        )
        if k == s:  # aligned tiling: output patches do not overlap
            y = np.ascontiguousarray(cols.transpose(0, 1, 3, 2, 4, 5)).reshape(
                b, *self.out_shape
            )
            return y + self.b
        y = np.zeros((b, *self.out_shape), dtype=x.dtype)
        for ki in range(k):
            for kj in range(k):
                y[:, ki:ki + s * hi:s, kj:kj + s * wi:s, :] += cols[:, :, :, ki, kj, :]
        return y + self.b

    def backward(self, dy: np.ndarray, need_dx: bool = True):
        b = dy.shape[0]
        hi, wi, _ = self._in_shape
        k, s = self.k, self.s
        if k == s:
            dcols = np.ascontiguousarray(
                dy.reshape(b, hi, k, wi, k, self.c_out).transpose(0, 1, 3, 2, 4, 5)
            )
        else:
            dcols = np.empty((b, hi, wi, k, k, self.c_out), dtype=dy.dtype)
            for ki in range(k):
                for kj in range(k):
                    dcols[:, :, :, ki, kj, :] = dy[:, ki:ki + s * hi:s, kj:kj + s * wi:s, :]
        dcols_flat = dcols.reshape(b * hi * wi, k * k * self.c_out)
        x_flat = self._x.reshape(b * hi * wi, self.c_in)
        dw = x_flat.T @ dcols_flat
        db = dy.sum(axis=(0, 1, 2))
        dx = (dcols_flat @ self.w.T).reshape(b, hi, wi, self.c_in)
        return dx, dw, db

    def params(self):
        return [(f"{self.name}.w", self.w), (f"{self.name}.b", self.b)]


class Network:
    """Encoder + trunk + named heads, with exact reverse-mode gradients."""

    def __init__(self, spec: NetworkSpec, seed: int, dtype=np.float32):
        self.spec = spec
        self.dtype = dtype
        if len(spec.input_shape) not in (1, 3):
            raise InvalidArgumentError("input must be flat or HxWxC")
        if spec.encoder and len(spec.input_shape) != 3:
            raise InvalidArgumentError("conv encoder requires an HxWxC input")

        def init_rng(index):
            return stream(seed, "net-init", index)

        idx = 0
        shape = spec.input_shape
        self.encoder: list[_Conv] = []
        for i, conv in enumerate(spec.encoder):
            layer = _Conv(f"enc{i}", shape, conv, init_rng(idx), dtype)
            idx += 1
            shape = layer.out_shape
            self.encoder.append(layer)
        self._enc_out_shape = shape
        flat = int(np.prod(shape))
        self.trunk: list[_Dense] = []
        for i, width in enumerate(spec.trunk):
            self.trunk.append(_Dense(f"trunk{i}", flat, width, init_rng(idx), dtype))
            idx += 1
            flat = width
        self._trunk_dim = flat
        self.heads: dict[str, _Dense] = {}
        for name in sorted(spec.heads):
            if name == RECON_HEAD:
                continue
            self.heads[name] = _Dense(
                f"head.{name}", flat, spec.heads[name], init_rng(idx), dtype
            )
            idx += 1
        # decoder layers are numbered after everything else so that adding the
        # recon head never perturbs the initialization of the shared layers
        self.decoder: list = []
        if RECON_HEAD in spec.heads:
            if not spec.encoder:
                raise InvalidArgumentError("recon head requires a conv encoder")
            dec_in = int(np.prod(self._enc_out_shape))
            self.decoder.append(
                _Dense("dec.in", flat, dec_in, init_rng(idx), dtype)
            )
            idx += 1
            shape = self._enc_out_shape
            mirrored = list(spec.encoder)
            for i in range(len(mirrored) - 1, -1, -1):
                out_c = spec.input_shape[2] if i == 0 else mirrored[i - 1].out_channels
                layer = _ConvTranspose(
                    f"dec{i}", shape, out_c, mirrored[i].kernel, mirrored[i].stride,
                    init_rng(idx), dtype,
                )
                idx += 1
                shape = layer.out_shape
                self.decoder.append(layer)
            if shape != spec.input_shape:
                raise InvalidArgumentError(
                    f"decoder mirror produces {shape}, input is {spec.input_shape}"
                )
            expected = int(np.prod(spec.input_shape))
            if spec.heads[RECON_HEAD] != expected:
                raise InvalidArgumentError(
                    f"recon head width must be {expected}, got {spec.heads[RECON_HEAD]}"
                )
        self._cache_valid = False
        self._cached_heads: dict[str, np.ndarray] = {}

    # ---- parameter plumbing -------------------------------------------------

    def _layers(self):
        yield from self.encoder
        yield from self.trunk
        for name in sorted(self.heads):
            yield self.heads[name]
        yield from self.decoder

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        out = []
        for layer in self._layers():
            out.extend(layer.params())
        return out

    def parameters(self) -> list[np.ndarray]:
        return [p for _, p in self.named_parameters()]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def copy_weights_from(self, other: "Network") -> None:
        for mine, theirs in zip(self.parameters(), other.parameters()):
            np.copyto(mine, theirs)

    # ---- forward / backward -------------------------------------------------

    def forward(
        self, x: np.ndarray, heads: list[str] | None = None, cache: bool = False
    ) -> dict[str, np.ndarray]:
        if x.ndim != len(self.spec.input_shape) + 1 or x.shape[1:] != self.spec.input_shape:
            raise InvalidArgumentError(
                f"input shape {x.shape} does not match (batch, {self.spec.input_shape})"
            )
        wanted = list(self.spec.heads) if heads is None else heads
        x = np.ascontiguousarray(x, dtype=self.dtype)
        h = x
        if cache:
            self._relu_masks_enc = []
            self._relu_masks_trunk = []
        for layer in self.encoder:
            h = layer.forward(h, cache)
            np.maximum(h, 0, out=h)
            if cache:
                self._relu_masks_enc.append(h > 0)
        b = h.shape[0]
        h = h.reshape(b, -1)
        for layer in self.trunk:
            h = layer.forward(h, cache)
            np.maximum(h, 0, out=h)
            if cache:
                self._relu_masks_trunk.append(h > 0)
        out: dict[str, np.ndarray] = {}
        for name in wanted:
            if name == RECON_HEAD:
                out[name] = self._decode(h, cache)
            else:
                out[name] = self.heads[name].forward(h, cache)
        if cache:
            self._cache_valid = True
            self._cached_batch = b
        return out

    def _decode(self, trunk_features: np.ndarray, cache: bool) -> np.ndarray:
        h = self.decoder[0].forward(trunk_features, cache)
        np.maximum(h, 0, out=h)
        if cache:
            self._relu_mask_dec_in = h > 0
            self._relu_masks_dec = []
        h = h.reshape(h.shape[0], *self._enc_out_shape)
        last = len(self.decoder) - 1
        for i, layer in enumerate(self.decoder[1:], start=1):
            h = layer.forward(h, cache)
            if i != last:  # logits at the output, rectify in between
                np.maximum(h, 0, out=h)
                if cache:
                    self._relu_masks_dec.append(h > 0)
        return h

    def backward(self, head_grads: dict[str, np.ndarray]) -> list[np.ndarray]:
        """Gradients for every parameter, ordered like :meth:`parameters`."""
        if not self._cache_valid:
            raise ContractViolationError("backward() without a cached forward()")
        grads: dict[str, np.ndarray] = {}
        dtrunk = np.zeros((self._cached_batch, self._trunk_dim), dtype=self.dtype)
        for name, dy in head_grads.items():
            if name == RECON_HEAD:
                dtrunk += self._backward_decoder(np.asarray(dy, dtype=self.dtype), grads)
                continue
            layer = self.heads[name]
            dx, dw, db = layer.backward(np.asarray(dy, dtype=self.dtype))
            grads[f"{layer.name}.w"] = dw
            grads[f"{layer.name}.b"] = db
            dtrunk += dx
        d = dtrunk
        for i in range(len(self.trunk) - 1, -1, -1):
            d = d * self._relu_masks_trunk[i]
            dx, dw, db = self.trunk[i].backward(d)
            grads[f"{self.trunk[i].name}.w"] = dw
            grads[f"{self.trunk[i].name}.b"] = db
            d = dx
        d = d.reshape(self._cached_batch, *self._enc_out_shape)
        for i in range(len(self.encoder) - 1, -1, -1):
            d = d * self._relu_masks_enc[i]
            # the input gradient of the first conv has no consumer
            dx, dw, db = self.encoder[i].backward(d, need_dx=i > 0)
            grads[f"{self.encoder[i].name}.w"] = dw
            grads[f"{self.encoder[i].name}.b"] = db
            d = dx
        self._cache_valid = False
        out = []
        for name, p in self.named_parameters():
            g = grads.get(name)
            out.append(np.zeros_like(p) if g is None else g)
        return out

    def _backward_decoder(self, dy: np.ndarray, grads: dict) -> np.ndarray:
        d = dy
        for i in range(len(self.decoder) - 1, 0, -1):
            layer = self.decoder[i]
            if i != len(self.decoder) - 1:
                d = d * self._relu_masks_dec[i - 1]
            dx, dw, db = layer.backward(d)
            grads[f"{layer.name}.w"] = dw
            grads[f"{layer.name}.b"] = db
            d = dx
        d = d.reshape(self._cached_batch, -1)
        d = d * self._relu_mask_dec_in
        dx, dw, db = self.decoder[0].backward(d)
        grads[f"{self.decoder[0].name}.w"] = dw
        grads[f"{self.decoder[0].name}.b"] = db
        return dx


# ---- optimizer ---------------------------------------------------------------


@dataclass
class AdamWConfig:
    learning_rate: float = 3e-4
    weight_decay: float = 1e-4
    epsilon: float = 1.25e-6
    max_grad_norm: float | None = 0.5
    beta1: float = 0.9
    beta2: float = 0.999


class AdamW:
    """Decoupled-weight-decay adaptive moments with global grad-norm clipping."""

    def __init__(self, params: list[np.ndarray], config: AdamWConfig):
        self.config = config
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> float:
        """Apply one update in place; returns the pre-clip gradient norm."""
        c = self.config
        sq = 0.0
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericalError("non-finite gradient; training halted")
            sq += float(np.vdot(g, g))
        norm = float(np.sqrt(sq))
        scale = 1.0
        if c.max_grad_norm is not None and norm > c.max_grad_norm:
            scale = c.max_grad_norm / (norm + 1e-12)
        self.step_count += 1
        bc1 = 1.0 - c.beta1 ** self.step_count
        bc2 = 1.0 - c.beta2 ** self.step_count
        for p, g, m, v in zip(params, grads, self.m, self.v):
            g = g * scale
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + c.epsilon)
            if c.weight_decay:
                update = update + c.weight_decay * p
            p -= c.learning_rate * update.astype(p.dtype, copy=False)
        return norm


def adamw_step(opt: AdamW, params: list[np.ndarray], grads: list[np.ndarray]) -> float:
    return opt.step(params, grads)


# ---- checkpoint format ---------------------------------------------------------
#
# Byte layout (all integers little-endian):
#   magic   4s   b"ZGN1"
#   version u32  1
#   digest  32s  sha256 of the canonical NetworkSpec json
#   step    u64  learner step at save time
#   count   u32  number of parameter records, each:
#     name_len u16, name utf-8, ndim u8, dims u32 * ndim, data f32 LE raw
# ------------------------------------------------------------------------------

_MAGIC = b"ZGN1"
_VERSION = 1


def save_checkpoint(path, net: Network, step: int) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(net.spec.digest())
        fh.write(struct.pack("<Q", step))
        named = net.named_parameters()
        fh.write(struct.pack("<I", len(named)))
        for name, p in named:
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", p.ndim))
            fh.write(struct.pack(f"<{p.ndim}I", *p.shape))
            fh.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def load_checkpoint(path, net: Network) -> int:
    """Load parameters into ``net``; returns the stored learner step."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise InvalidArgumentError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise InvalidArgumentError(f"{path}: unsupported version {version}")
        digest = fh.read(32)
        if digest != net.spec.digest():
            raise InvalidArgumentError(f"{path}: checkpoint was saved for a different network spec")
        (step,) = struct.unpack("<Q", fh.read(8))
        (count,) = struct.unpack("<I", fh.read(4))
        named = dict(net.named_parameters())
        if count != len(named):
            raise InvalidArgumentError(f"{path}: expected {len(named)} parameters, found {count}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode()
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            data = np.frombuffer(
                fh.read(4 * int(np.prod(shape))), dtype="<f4"
            ).reshape(shape)
            if name not in named or named[name].shape != data.shape:
                raise InvalidArgumentError(f"{path}: unexpected parameter {name} {shape}")
            np.copyto(named[name], data.astype(net.dtype))
    return step
