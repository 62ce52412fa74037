# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""A small deterministic float64 network engine.

Layers follow a forward/backward protocol: `forward` records what `backward`
needs, `apply` evaluates without touching the module so a frozen network can be
shared between threads. Signals are laid out (batch, positions, channels).
"""
import json
import struct
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from ovos_utils.log import LOG

from .exceptions import ConfigError, InvalidInputError, StateError, TrainingError, \
    ModelFormatError, DataIOError

WEIGHT_MAGIC = b"HTWT"
BUNDLE_FORMAT_VERSION = 1


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    def __init__(self):
        self._cache = None

    def forward(self, x):
        out, self._cache = self._forward(x)
        return out

    def apply(self, x):
        return self._forward(x)[0]

    def backward(self, output_grad):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return self._backward(self._cache, np.asarray(output_grad, dtype=np.float64))

    def _forward(self, x):
        raise NotImplementedError

    def _backward(self, cache, output_grad):
        raise NotImplementedError

    def parameters(self):
        return []

    def gradients(self):
        return []

    def zero_grad(self):
        for g in self.gradients():
            g[...] = 0.0

    @property
    def param_count(self):
        return int(sum(p.size for p in self.parameters()))

    def __repr__(self):
        return type(self).__name__


class Dense(Module):
    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = glorot_uniform(rng, (self.out_features, self.in_features),
                                     self.in_features, self.out_features)
        self.bias = np.zeros(self.out_features)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    def _forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_features:
            raise InvalidInputError("dense input width mismatch",
                                    expected=self.in_features, got=x.shape[-1])
        return x @ self.weight.T + self.bias, x

    def _backward(self, x, output_grad):
        g = output_grad.reshape(-1, self.out_features)
        self.grad_weight[...] = g.T @ x.reshape(-1, self.in_features)
        self.grad_bias[...] = g.sum(axis=0)
        return output_grad @ self.weight

    def parameters(self):
        return [self.weight, self.bias]

    def gradients(self):
        return [self.grad_weight, self.grad_bias]

    def __repr__(self):
        return f"Dense({self.in_features}, {self.out_features})"


class Conv1d(Module):
    """Same-padded 1D cross-correlation over the position axis."""

    def __init__(self, in_channels, out_channels, kernel_size=5, padding="zeros", rng=None):
        super().__init__()
        if kernel_size < 1 or kernel_size % 2 == 0:
            raise ConfigError("conv kernel size must be odd", kernel_size=kernel_size)
        if padding not in ("zeros", "reflect"):
            raise ConfigError(f"unknown padding mode '{padding}'")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.padding = padding
        rng = rng if rng is not None else np.random.default_rng(0)
        k = self.kernel_size
        self.weight = glorot_uniform(rng, (self.out_channels, self.in_channels, k),
                                     self.in_channels * k, self.out_channels * k)
        self.bias = np.zeros(self.out_channels)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)

    @property
    def pad(self):
        return (self.kernel_size - 1) // 2

    def _weight_matrix(self):
        # (in * k, out), matching the (channel, tap) order of the unfolded windows
        return self.weight.transpose(1, 2, 0).reshape(-1, self.out_channels)

    def _pad_signal(self, x):
        p = self.pad
        if self.padding == "zeros":
            return np.pad(x, ((0, 0), (p, p), (0, 0)))
        if x.shape[1] <= p:
            raise InvalidInputError("signal too short for reflect padding", length=x.shape[1])
        return np.pad(x, ((0, 0), (p, p), (0, 0)), mode="reflect")

    def _forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
        if x.ndim != 3 or x.shape[-1] != self.in_channels:
            raise InvalidInputError("conv input must be (batch, K, in_channels)",
                                    expected=self.in_channels, shape=x.shape)
        batch, length, _ = x.shape
        windows = sliding_window_view(self._pad_signal(x), self.kernel_size, axis=1)
        cols = windows.reshape(batch * length, self.in_channels * self.kernel_size)
        out = (cols @ self._weight_matrix() + self.bias).reshape(batch, length, -1)
        return (out[0] if single else out), (cols, x.shape, single)

    def _backward(self, cache, output_grad):
        cols, shape, single = cache
        if single:
            output_grad = output_grad[None]
        batch, length, _ = shape
        k, p = self.kernel_size, self.pad
        g = output_grad.reshape(batch * length, self.out_channels)
        grad_w = cols.T @ g
        self.grad_weight[...] = grad_w.reshape(self.in_channels, k, self.out_channels) \
            .transpose(2, 0, 1)
        self.grad_bias[...] = g.sum(axis=0)
        dcols = (g @ self._weight_matrix().T).reshape(batch, length, self.in_channels, k)
        dpadded = np.zeros((batch, length + 2 * p, self.in_channels))
        for j in range(k):
            dpadded[:, j:j + length, :] += dcols[..., j]
        if self.padding == "zeros":
            dx = dpadded[:, p:p + length, :]
        else:
            idx = np.pad(np.arange(length), p, mode="reflect")
            dx = np.zeros((batch, length, self.in_channels))
            np.add.at(dx, (slice(None), idx), dpadded)
        return dx[0] if single else dx

    def parameters(self):
        return [self.weight, self.bias]

    def gradients(self):
        return [self.grad_weight, self.grad_bias]

    def __repr__(self):
        return f"Conv1d({self.in_channels}, {self.out_channels}, k={self.kernel_size})"


class InstanceNorm1d(Module):
    """Per-sample, per-channel standardization over positions; no affine terms."""

    def __init__(self, eps=1e-5):
        super().__init__()
        self.eps = eps

    def _forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 2 or x.shape[-2] < 2:
            raise InvalidInputError("instance norm needs at least two positions",
                                    shape=x.shape)
        mean = x.mean(axis=-2, keepdims=True)
        var = x.var(axis=-2, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        return xhat, (xhat, inv_std)

    def _backward(self, cache, output_grad):
        xhat, inv_std = cache
        n = xhat.shape[-2]
        g_sum = output_grad.sum(axis=-2, keepdims=True)
        gx_sum = (output_grad * xhat).sum(axis=-2, keepdims=True)
        return inv_std / n * (n * output_grad - g_sum - xhat * gx_sum)


class ReLU(Module):
    def _forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        return np.maximum(x, 0.0), x > 0

    def _backward(self, mask, output_grad):
        return output_grad * mask


class LeakyReLU(Module):
    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope

    def _forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        mask = x >= 0
        return np.where(mask, x, self.slope * x), mask

    def _backward(self, mask, output_grad):
        return np.where(mask, output_grad, self.slope * output_grad)

    def __repr__(self):
        return f"LeakyReLU({self.slope})"


class Linear(Module):
    def _forward(self, x):
        return np.asarray(x, dtype=np.float64), True

    def _backward(self, cache, output_grad):
        return output_grad


class ChannelSqueeze(Module):
    """(batch, K, 1) -> (batch, K)."""

    def _forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != 1:
            raise InvalidInputError("can only squeeze a single channel", shape=x.shape)
        return x[..., 0], True

    def _backward(self, cache, output_grad):
        return output_grad[..., None]


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def leaky_relu(x, slope=0.2):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, slope * x)


def linear(x):
    return np.asarray(x, dtype=np.float64)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = list(layers)

    def _forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer._forward(x)
            caches.append(cache)
        return x, caches

    def _backward(self, caches, output_grad):
        g = output_grad
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            g = layer._backward(cache, g)
        return g

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def gradients(self):
        return [g for layer in self.layers for g in layer.gradients()]

    def layer_counts(self):
        """Free parameters of every parametrised layer, in order."""
        return [layer.param_count for layer in self.layers if layer.parameters()]

    def layer_shapes(self):
        return [[list(p.shape) for p in layer.parameters()]
                for layer in self.layers if layer.parameters()]

    def __repr__(self):
        return "Sequential(" + ", ".join(repr(layer) for layer in self.layers) + ")"


def dense_apply(layer, x):
    return layer.apply(x)


def conv1d_apply(layer, x):
    return layer.apply(x)


def instance_norm(x, eps=1e-5):
    return InstanceNorm1d(eps).apply(x)


def backward(network, output_grad):
    """Reverse-mode pass through the last recorded forward of `network`."""
    return network.backward(output_grad)


# losses

class _Loss:
    def __init__(self):
        self._diff = None

    def forward(self, pred, target):
        pred = np.asarray(pred, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if pred.shape != target.shape:
            raise InvalidInputError("loss operands differ in shape",
                                    pred=pred.shape, target=target.shape)
        self._diff = pred - target
        return self._value(self._diff)

    def backward(self):
        if self._diff is None:
            raise StateError("loss backward called before forward")
        return self._grad(self._diff)


class MAELoss(_Loss):
    def _value(self, diff):
        return float(np.mean(np.abs(diff)))

    def _grad(self, diff):
        return np.sign(diff) / diff.size


class MSELoss(_Loss):
    def _value(self, diff):
        return float(np.mean(diff ** 2))

    def _grad(self, diff):
        return 2.0 * diff / diff.size


LOSSES = {"mae": MAELoss, "mse": MSELoss}


def loss_mae(pred, target):
    return MAELoss().forward(pred, target)


def loss_mse(pred, target):
    return MSELoss().forward(pred, target)


def make_loss(name):
    try:
        return LOSSES[name]()
    except KeyError:
        raise ConfigError(f"unknown loss '{name}'", choices=sorted(LOSSES))


# optimisation

@dataclass
class OptimizerState:
    m: list
    v: list
    lr: float
    step: int = 0
    best_loss: float = float("inf")
    bad_epochs: int = 0

    @classmethod
    def create(cls, params, lr):
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], lr=float(lr))


def adam_update(state, params, grads, lr=None, beta1=0.9, beta2=0.999, eps=1e-8):
    lr = state.lr if lr is None else lr
    if len(params) != len(grads) or len(params) != len(state.m):
        raise InvalidInputError("optimizer state does not match the parameters")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise InvalidInputError("gradient shape mismatch", param=p.shape, grad=g.shape)
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient", step=state.step + 1,
                                shape=p.shape)
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def plateau_scheduler_update(state, validation_loss, factor=1.0 / 3.0, patience=5):
    if not np.isfinite(validation_loss):
        raise TrainingError("non-finite validation loss", step=state.step)
    if validation_loss < state.best_loss:
        state.best_loss = float(validation_loss)
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
        if state.bad_epochs >= patience:
            state.lr *= factor
            state.bad_epochs = 0
            LOG.warning("no improvement for %d epochs, learning rate now %.3g",
                        patience, state.lr)
    return state.lr


@dataclass
class TrainingHistory:
    losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    lrs: list = field(default_factory=list)

    @property
    def final_loss(self):
        return self.losses[-1] if self.losses else float("nan")


def evaluate_loss(network, inputs, targets, loss="mae", batch_size=64):
    loss_fn = make_loss(loss)
    total = 0.0
    for start in range(0, len(inputs), batch_size):
        pred = network.apply(inputs[start:start + batch_size])
        total += loss_fn.forward(pred, targets[start:start + batch_size]) \
            * len(pred)
    return total / len(inputs)


def fit(network, inputs, targets, epochs, lr, batch_size=32, loss="mae", seed=0,
        factor=1.0 / 3.0, patience=5, validation=None, stage="train"):
    """Minimise `loss` over (inputs, targets) with Adam and a plateau scheduler.

    Batches are drawn from a seeded permutation per epoch, so identical seeds
    and data give identical parameter trajectories.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(inputs) != len(targets):
        raise InvalidInputError("inputs and targets differ in length",
                                inputs=len(inputs), targets=len(targets))
    if batch_size < 1 or epochs < 0:
        raise ConfigError("batch size and epochs must be positive",
                          batch_size=batch_size, epochs=epochs)
    rng = np.random.default_rng(seed)
    loss_fn = make_loss(loss)
    params = network.parameters()
    state = OptimizerState.create(params, lr)
    history = TrainingHistory()
    n = len(inputs)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for batch, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            pred = network.forward(inputs[idx])
            value = loss_fn.forward(pred, targets[idx])
            if not np.isfinite(value):
                raise TrainingError("non-finite loss", stage=stage, epoch=epoch, batch=batch)
            network.backward(loss_fn.backward())
            try:
                adam_update(state, params, network.gradients())
            except TrainingError as err:
                err.context.update(stage=stage, epoch=epoch, batch=batch)
                raise
            total += value * len(idx)
            LOG.debug("%s epoch %d batch %d loss %.6g", stage, epoch, batch, value)
        train_loss = total / n
        history.losses.append(train_loss)
        monitored = train_loss
        if validation is not None:
            monitored = evaluate_loss(network, validation[0], validation[1], loss,
                                      batch_size)
            history.val_losses.append(monitored)
        history.lrs.append(state.lr)
        plateau_scheduler_update(state, monitored, factor, patience)
        LOG.info("%s epoch %d/%d loss %.6g (monitored %.6g) lr %.3g",
                 stage, epoch, epochs, train_loss, monitored, history.lrs[-1])
    return history


# weight bundles

def flatten_parameters(networks):
    arrays = [p.ravel() for net in networks for p in net.parameters()]
    if not arrays:
        return np.zeros(0)
    return np.concatenate(arrays)


def load_parameters(networks, flat):
    flat = np.asarray(flat, dtype=np.float64)
    expected = sum(net.param_count for net in networks)
    if flat.size != expected:
        raise ModelFormatError("parameter blob does not match the architecture",
                               expected=expected, got=flat.size)
    offset = 0
    for net in networks:
        for p in net.parameters():
            p[...] = flat[offset:offset + p.size].reshape(p.shape)
            offset += p.size


def write_weight_bundle(path, header, flat):
    """JSON header line, then HTWT, a u64 count and little-endian float64s."""
    flat = np.asarray(flat, dtype="<f8")
    header = dict(header, format_version=BUNDLE_FORMAT_VERSION)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(head + b"\n")
            f.write(WEIGHT_MAGIC)
            f.write(struct.pack("<Q", flat.size))
            f.write(flat.tobytes())
    except OSError as err:
        raise DataIOError(f"cannot write weight bundle {path}: {err}")


def read_weight_bundle(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as err:
        raise DataIOError(f"cannot read weight bundle {path}: {err}")
    newline = data.find(b"\n")
    if newline < 0:
        raise ModelFormatError("weight bundle has no header", path=path)
    try:
        header = json.loads(data[:newline].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ModelFormatError(f"weight bundle header is not JSON: {err}", path=path)
    body = data[newline + 1:]
    if len(body) < 12 or body[:4] != WEIGHT_MAGIC:
        raise ModelFormatError("weight bundle magic missing", path=path)
    if header.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise ModelFormatError("unsupported weight bundle version",
                               version=header.get("format_version"))
    (count,) = struct.unpack("<Q", body[4:12])
    blob = body[12:]
    if len(blob) != 8 * count:
        raise ModelFormatError("weight bundle is truncated", expected=8 * count,
                               got=len(blob))
    return header, np.frombuffer(blob, dtype="<f8").astype(np.float64)
