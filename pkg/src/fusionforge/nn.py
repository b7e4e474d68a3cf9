"""Named parameter collections and the layer set shared by both networks."""

from __future__ import annotations

import numpy as np

from .tensor import (
    ConfigError,
    RunningStats,
    Tensor,
    batch_norm2d,
    conv2d,
    conv_transpose2d,
    fully_connected,
)

__all__ = [
    "BatchNorm2d",
    "Conv2d",
    "ConvTranspose2d",
    "Linear",
    "ParamStore",
    "Parameter",
]

BN_MODES = ("train", "frozen", "eval")


class Parameter:
    """A named trainable tensor; gradients accumulate in ``value.grad``."""

    __slots__ = ("name", "value")

    def __init__(self, name: str, value: Tensor):
        value.requires_grad = True
        self.name = name
        self.value = value

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self) -> np.ndarray | None:
        return self.value.grad

    def zero_grad(self) -> None:
        self.value.grad = None

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.value.shape})"


class ParamStore:
    """Registry of parameters and persistent buffers under one name prefix.

    Registration order is the RNG consumption order, so a fixed seed yields
    bit-identical initializations. Buffers (batchnorm running stats) are
    plain arrays updated in place, which keeps checkpoint loading a matter
    of copying into the registered storage.
    """

    def __init__(self, prefix: str, seed: int, dtype=np.float32):
        self.prefix = prefix
        self.rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Parameter] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self.batchnorms: list["BatchNorm2d"] = []

    def _full(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def param(self, name: str, array: np.ndarray) -> Parameter:
        full = self._full(name)
        if full in self._params or full in self._buffers:
            raise ConfigError(f"duplicate parameter name {full!r}")
        p = Parameter(full, Tensor(array.astype(self.dtype, copy=False)))
        self._params[full] = p
        return p

    def buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        full = self._full(name)
        if full in self._params or full in self._buffers:
            raise ConfigError(f"duplicate buffer name {full!r}")
        self._buffers[full] = array
        return array

    def parameters(self) -> list[Parameter]:
        return list(self._params.values())

    def parameter_names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def set_trainable(self, flag: bool) -> None:
        for p in self._params.values():
            p.value.requires_grad = flag

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters first, then buffers, in registration order."""
        out: dict[str, np.ndarray] = {}
        for name, p in self._params.items():
            out[name] = p.data
        for name, buf in self._buffers.items():
            out[name] = buf
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        own = set(self._params) | set(self._buffers)
        incoming = {k for k in arrays if k.startswith(self.prefix + ".")}
        if strict:
            missing = sorted(own - incoming)
            extra = sorted(incoming - own)
            if missing or extra:
                raise ConfigError(
                    f"checkpoint does not match network {self.prefix!r}: "
                    f"missing {missing[:5]}, unexpected {extra[:5]}")
        for name in own & incoming:
            src = arrays[name]
            if name in self._params:
                dst = self._params[name].value
                if tuple(src.shape) != tuple(dst.shape):
                    raise ConfigError(
                        f"shape mismatch for {name!r}: checkpoint {src.shape}, "
                        f"network {dst.shape}")
                dst.data = src.astype(self.dtype, copy=True)
            else:
                buf = self._buffers[name]
                if tuple(src.shape) != tuple(buf.shape):
                    raise ConfigError(
                        f"shape mismatch for buffer {name!r}: checkpoint {src.shape}, "
                        f"network {buf.shape}")
                buf[...] = src.astype(buf.dtype, copy=False)


# ---------------------------------------------------------------------------
# layers


def _kaiming(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
             dtype: np.dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(dtype)


class Conv2d:
    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 kernel: int, stride: int = 1, padding: int = 0):
        self.stride = stride
        self.padding = padding
        w = _kaiming(store.rng, (c_out, c_in, kernel, kernel),
                     c_in * kernel * kernel, store.dtype)
        self.weight = store.param(f"{name}.weight", w)
        self.bias = store.param(f"{name}.bias",
                                np.zeros((1, c_out, 1, 1), dtype=store.dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight.value, self.bias.value,
                      stride=self.stride, padding=self.padding)


class ConvTranspose2d:
    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 kernel: int, stride: int = 1, padding: int = 0,
                 output_padding: int = 0):
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding
        w = _kaiming(store.rng, (c_in, c_out, kernel, kernel),
                     c_in * kernel * kernel, store.dtype)
        self.weight = store.param(f"{name}.weight", w)
        self.bias = store.param(f"{name}.bias",
                                np.zeros((1, c_out, 1, 1), dtype=store.dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose2d(x, self.weight.value, self.bias.value,
                                stride=self.stride, padding=self.padding,
                                output_padding=self.output_padding)


class BatchNorm2d:
    """Batchnorm layer with three modes.

    ``train``: batch statistics, running buffers updated in place.
    ``frozen``: batch statistics, running buffers untouched (used when a
    frozen network produces inputs for the other player's update).
    ``eval``: running statistics.
    """

    def __init__(self, store: ParamStore, name: str, channels: int,
                 momentum: float = 0.1, eps: float = 1e-5,
                 zero_gamma: bool = False):
        self.momentum = momentum
        self.eps = eps
        gamma0 = np.zeros if zero_gamma else np.ones
        self.gamma = store.param(f"{name}.gamma",
                                 gamma0((1, channels, 1, 1), dtype=store.dtype))
        self.beta = store.param(f"{name}.beta",
                                np.zeros((1, channels, 1, 1), dtype=store.dtype))
        self.running = RunningStats(channels, dtype=store.dtype)
        store.buffer(f"{name}.running_mean", self.running.mean)
        store.buffer(f"{name}.running_var", self.running.var)
        store.batchnorms.append(self)

    def __call__(self, x: Tensor, mode: str = "eval") -> Tensor:
        if mode not in BN_MODES:
            raise ConfigError(f"batchnorm mode must be one of {BN_MODES}, got {mode!r}")
        if mode == "frozen":
            return batch_norm2d(x, self.gamma.value, self.beta.value,
                                self.running.copy(), mode="train",
                                momentum=self.momentum, eps=self.eps)
        return batch_norm2d(x, self.gamma.value, self.beta.value, self.running,
                            mode=mode, momentum=self.momentum, eps=self.eps)


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int):
        w = _kaiming(store.rng, (1, 1, d_in, d_out), d_in, store.dtype)
        self.weight = store.param(f"{name}.weight", w)
        self.bias = store.param(f"{name}.bias",
                                np.zeros((1, 1, 1, d_out), dtype=store.dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return fully_connected(x, self.weight.value, self.bias.value)
