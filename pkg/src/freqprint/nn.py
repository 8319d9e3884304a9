"""Minimal layer stack with hand-written backward passes.

Each layer keeps what it needs from ``forward`` and returns the input
gradient from ``backward``; parameter gradients land in ``layer.grads``
under the same keys as ``layer.params``. Tensors are ``(B, C, H, W)``.
"""

import numpy as np

from .freq_algebra import (
    BILINEAR_KERNEL,
    NEAREST_KERNEL,
    conv_padding,
    convolve,
    zero_interleave,
)


def uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    name = "layer"

    def __init__(self):
        self.params = {}
        self.grads = {}

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError


class AvgPool2(Layer):
    name = "pool"

    def forward(self, x, train=False):
        B, C, H, W = x.shape
        if H % 2 or W % 2:
            raise ValueError(f"average pooling needs even dims, got {H}x{W}")
        return x.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))

    def backward(self, g):
        return np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0


def _conv_backward(x_shape, xp_cache, w, g, pad):
    lo, _ = pad
    k = w.shape[2]
    win = np.lib.stride_tricks.sliding_window_view(xp_cache, (k, k), axis=(2, 3))
    dwf = np.tensordot(win, g, axes=([0, 2, 3], [0, 2, 3]))  # (Ci, kh, kw, Co)
    dw = dwf.transpose(0, 3, 1, 2)[:, :, ::-1, ::-1]
    v = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dxp = convolve(g, v, (k - 1, k - 1))
    H, W = x_shape[2:]
    return dxp[:, :, lo:lo + H, lo:lo + W], np.ascontiguousarray(dw)


class Conv2d(Layer):
    """Stride-1 true convolution with zero ``same`` padding."""

    name = "conv"

    def __init__(self, cin, cout, k, rng, bias=True):
        super().__init__()
        fan_in = cin * k * k
        self.params["w"] = uniform_init(rng, (cin, cout, k, k), fan_in)
        if bias:
            self.params["b"] = uniform_init(rng, (cout,), fan_in)
        self.pad = conv_padding(k, "same")

    def forward(self, x, train=False):
        lo, hi = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (lo, hi), (lo, hi)))
        self._cache = (x.shape, xp)
        out = convolve(xp, self.params["w"])
        if "b" in self.params:
            out += self.params["b"][None, :, None, None]
        return out

    def backward(self, g):
        shape, xp = self._cache
        dx, dw = _conv_backward(shape, xp, self.params["w"], g, self.pad)
        self.grads["w"] = dw
        if "b" in self.params:
            self.grads["b"] = g.sum(axis=(0, 2, 3))
        return dx


class FixedUpsample(Layer):
    """Zero-interleave followed by the fixed nearest or bilinear kernel."""

    def __init__(self, kind):
        super().__init__()
        self.kind = kind
        self.name = kind
        self.kernel = {"nearest": NEAREST_KERNEL, "bilinear": BILINEAR_KERNEL}[kind]
        self.pad = conv_padding(self.kernel.shape[0], "same")

    def forward(self, x, train=False):
        B, C, H, W = x.shape
        z = zero_interleave(x).reshape(B * C, 1, 2 * H, 2 * W)
        out = convolve(z, self.kernel[None, None], self.pad)
        return out.reshape(B, C, 2 * H, 2 * W)

    def backward(self, g):
        B, C, H2, W2 = g.shape
        k = self.kernel.shape[0]
        lo, hi = self.pad
        # adjoint of zero-padded convolution: correlate, then keep the
        # interleaved (even) positions
        v = self.kernel[::-1, ::-1][None, None]
        dz = convolve(g.reshape(B * C, 1, H2, W2), v, (k - 1, k - 1))
        dz = dz[:, :, lo:lo + H2, lo:lo + W2].reshape(B, C, H2, W2)
        return dz[:, :, ::2, ::2]


class Deconv(Layer):
    """Stride-2 transposed convolution written as zero-interleave + conv."""

    name = "deconv"

    def __init__(self, cin, cout, k, rng, bias=False):
        super().__init__()
        self.conv = Conv2d(cin, cout, k, rng, bias=bias)
        self.params = self.conv.params
        self.grads = self.conv.grads

    def forward(self, x, train=False):
        return self.conv.forward(zero_interleave(x), train)

    def backward(self, g):
        return self.conv.backward(g)[:, :, ::2, ::2]


class Norm(Layer):
    """Batch or instance normalization with learnable per-channel gamma/beta.

    Batch statistics are frozen with :meth:`freeze`; afterwards forward
    passes use the stored values and become deterministic per sample.
    """

    def __init__(self, kind, channels, eps=1e-5):
        super().__init__()
        if kind not in ("batch", "instance"):
            raise ValueError(f"unknown norm kind {kind!r}")
        self.kind = kind
        self.name = f"{kind}norm"
        self.eps = eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.running_mean = None
        self.running_var = None

    @property
    def axes(self):
        return (0, 2, 3) if self.kind == "batch" else (2, 3)

    def freeze(self, mean, var):
        self.running_mean = np.asarray(mean).reshape(1, -1, 1, 1)
        self.running_var = np.asarray(var).reshape(1, -1, 1, 1)

    def forward(self, x, train=False):
        use_running = self.kind == "batch" and not train and self.running_mean is not None
        if use_running:
            mu, var = self.running_mean, self.running_var
        else:
            mu = x.mean(axis=self.axes, keepdims=True)
            var = x.var(axis=self.axes, keepdims=True)
        self.last_stats = (mu, var)
        s = np.sqrt(var + self.eps)
        xhat = (x - mu) / s
        self._cache = (xhat, s, use_running)
        gamma = self.params["gamma"][None, :, None, None]
        return gamma * xhat + self.params["beta"][None, :, None, None]

    def backward(self, g):
        xhat, s, use_running = self._cache
        self.grads["gamma"] = (g * xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] = g.sum(axis=(0, 2, 3))
        dxhat = g * self.params["gamma"][None, :, None, None]
        if use_running:
            return dxhat / s
        ax = self.axes
        return (dxhat - dxhat.mean(axis=ax, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=ax, keepdims=True)) / s


class Activation(Layer):
    def __init__(self, kind):
        super().__init__()
        if kind not in ("relu", "sigmoid", "tanh"):
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind
        self.name = kind

    def forward(self, x, train=False):
        if self.kind == "relu":
            self._cache = x > 0
            return np.where(self._cache, x, 0.0)
        if self.kind == "sigmoid":
            y = 0.5 * (1.0 + np.tanh(0.5 * x))
        else:
            y = np.tanh(x)
        self._cache = y
        return y

    def backward(self, g):
        if self.kind == "relu":
            return g * self._cache
        y = self._cache
        if self.kind == "sigmoid":
            return g * y * (1.0 - y)
        return g * (1.0 - y * y)


class Sequential:
    """Named chain of layers; parameters are addressed as ``"<idx>.<key>"``."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train=False, taps=False):
        outs = []
        for layer in self.layers:
            x = layer.forward(x, train)
            if taps:
                outs.append((layer.name, x))
        return (x, outs) if taps else x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for key, value in layer.params.items():
                yield f"{i}.{key}", value

    def named_grads(self):
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                yield f"{i}.{key}", layer.grads[key]

    def get_param(self, name):
        i, key = name.split(".", 1)
        return self.layers[int(i)].params[key]

    def component_names(self):
        return [layer.name for layer in self.layers]

    def freeze_norms(self):
        for layer in self.layers:
            if isinstance(layer, Norm) and layer.kind == "batch":
                layer.freeze(*layer.last_stats)

    def state_dict(self):
        state = {name: value.copy() for name, value in self.named_params()}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Norm) and layer.running_mean is not None:
                state[f"{i}.running_mean"] = layer.running_mean.ravel().copy()
                state[f"{i}.running_var"] = layer.running_var.ravel().copy()
        return state

    def load_state_dict(self, state):
        for name, value in state.items():
            i, key = name.split(".", 1)
            layer = self.layers[int(i)]
            if key in ("running_mean", "running_var"):
                setattr(layer, key, np.asarray(value).reshape(1, -1, 1, 1))
            else:
                if layer.params[key].shape != np.shape(value):
                    raise ValueError(f"shape mismatch for {name}")
                layer.params[key][...] = value


def clip_by_global_norm(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm is None or total <= max_norm or total == 0:
        return grads, total
    scale = max_norm / total
    return [g * scale for g in grads], total


def sgd_step(net, lr, max_norm=None):
    """One plain gradient-descent update, in place. Returns the grad norm."""
    names, grads = zip(*net.named_grads())
    grads, total = clip_by_global_norm(list(grads), max_norm)
    for name, g in zip(names, grads):
        p = net.get_param(name)
        p -= lr * g
    return total


class Adam:
    """Adam with optional global-norm gradient clipping."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, max_norm=None):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.max_norm = max_norm
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, net):
        names, grads = zip(*net.named_grads())
        grads, total = clip_by_global_norm(list(grads), self.max_norm)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in zip(names, grads):
            m = self.m[name] = b1 * self.m.get(name, 0.0) + (1 - b1) * g
            v = self.v[name] = b2 * self.v.get(name, 0.0) + (1 - b2) * g * g
            mhat = m / (1 - b1**self.t)
            vhat = v / (1 - b2**self.t)
            p = net.get_param(name)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return total


class SGD:
    def __init__(self, lr=0.01, max_norm=None):
        self.lr = lr
        self.max_norm = max_norm

    def step(self, net):
        return sgd_step(net, self.lr, self.max_norm)


def make_optimizer(name, lr=None, max_norm=None):
    if name == "adam":
        return Adam(1e-3 if lr is None else lr, max_norm=max_norm)
    if name == "sgd":
        return SGD(0.01 if lr is None else lr, max_norm=max_norm)
    raise ValueError(f"unknown optimizer {name!r}")
