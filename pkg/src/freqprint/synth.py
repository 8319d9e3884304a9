"""Synthetic generator families used to produce fingerprinted images.

* :class:`FreqGenerator` - a pooled-then-upsampled autoencoder built from one
  generative block. Its convolution and upsampling kernels leave a frequency
  distribution pattern on every output.
* :class:`GridGenerator` - a noise-to-noise stack of deconvolution blocks
  whose output, trained to a small magnitude, is overlaid on real images to
  imprint upsampling grids.

Both follow the scikit-learn estimator protocol: ``fit`` trains,
``transform`` maps images to fingerprinted images.
"""

import itertools
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_images
from .nn import (
    Activation,
    AvgPool2,
    Conv2d,
    Deconv,
    FixedUpsample,
    Norm,
    Sequential,
    make_optimizer,
)
from .numeric import make_rng

__all__ = [
    "BlockConfig",
    "GridGenConfig",
    "FreqGenerator",
    "GridGenerator",
    "TrainingDivergedError",
    "enumerate_pool",
    "synth_dataset",
    "random_crop",
    "N_CONVS",
    "ORDERS",
    "UPSAMPLES",
    "ACTS",
    "NORMS",
    "GRID_DEPTHS",
]

N_CONVS = (1, 2)
ORDERS = ("post", "pre")
UPSAMPLES = ("nearest", "bilinear", "deconv")
ACTS = ("relu", "sigmoid", "tanh", "none")
NORMS = ("batch", "instance", "none")
GRID_DEPTHS = (3, 4, 5)

FULL_FREQ_SEEDS = 20
FULL_GRID_SEEDS = 500


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class BlockConfig:
    n_convs: int = 1
    order: str = "post"
    upsample: str = "bilinear"
    activation: str = "relu"
    norm: str = "batch"
    seed: int = 0
    feature_dim: int = 16
    kernel_size: int = 3

    @property
    def model_id(self):
        return (f"freq-L{self.n_convs}-{self.order}-{self.upsample}-"
                f"{self.activation}-{self.norm}-s{self.seed}")


@dataclass(frozen=True)
class GridGenConfig:
    num_blocks: int = 3
    seed: int = 0
    channels: int = 3

    @property
    def model_id(self):
        return f"grid-n{self.num_blocks}-s{self.seed}"


def _mae(out, target):
    return float(np.mean(np.abs(out - target)))


class FreqGenerator(BaseEstimator, TransformerMixin):
    """Single generative block trained to reconstruct its input.

    Forward: 2x2 average pool, entry conv (3 -> ``feature_dim``),
    ``n_convs`` conv/norm/activation groups in ``order``, the ``upsample``
    layer, exit conv back to 3 channels.

    ``order="post"`` means conv -> norm -> act, ``"pre"`` means
    norm -> act -> conv.
    """

    def __init__(self, n_convs=1, order="post", upsample="bilinear", activation="relu",
                 norm="batch", seed=0, feature_dim=16, kernel_size=3, optimizer="adam",
                 lr=None, clip=1.0, target=0.005, max_steps=300, batch_size=4):
        self.n_convs = n_convs
        self.order = order
        self.upsample = upsample
        self.activation = activation
        self.norm = norm
        self.seed = seed
        self.feature_dim = feature_dim
        self.kernel_size = kernel_size
        self.optimizer = optimizer
        self.lr = lr
        self.clip = clip
        self.target = target
        self.max_steps = max_steps
        self.batch_size = batch_size

    @classmethod
    def from_config(cls, config, **kwargs):
        return cls(**{**asdict(config), **kwargs})

    @property
    def config(self):
        return BlockConfig(self.n_convs, self.order, self.upsample, self.activation,
                           self.norm, self.seed, self.feature_dim, self.kernel_size)

    def _validate(self):
        if self.n_convs not in N_CONVS:
            raise ValueError(f"n_convs must be one of {N_CONVS}")
        for value, allowed, name in [(self.order, ORDERS, "order"),
                                     (self.upsample, UPSAMPLES, "upsample"),
                                     (self.activation, ACTS, "activation"),
                                     (self.norm, NORMS, "norm")]:
            if value not in allowed:
                raise ValueError(f"{name} must be one of {allowed}, got {value!r}")

    def build(self):
        """Create ``net_`` with freshly initialised weights (no training)."""
        self._validate()
        rng = make_rng(self.seed, 0)
        F, k = self.feature_dim, self.kernel_size
        layers = [AvgPool2(), Conv2d(3, F, k, rng)]
        layers[1].name = "entry_conv"
        for i in range(1, self.n_convs + 1):
            conv = Conv2d(F, F, k, rng)
            conv.name = f"conv{i}"
            group = []
            if self.norm != "none":
                norm = Norm(self.norm, F)
                norm.name = f"{self.norm}norm{i}"
                group.append(norm)
            if self.activation != "none":
                act = Activation(self.activation)
                act.name = f"{self.activation}{i}"
                group.append(act)
            layers += [conv] + group if self.order == "post" else group + [conv]
        if self.upsample == "deconv":
            up = Deconv(F, F, 3, rng)
        else:
            up = FixedUpsample(self.upsample)
        up.name = f"up_{self.upsample}"
        exit_conv = Conv2d(F, 3, k, rng)
        exit_conv.name = "exit_conv"
        self.net_ = Sequential(layers + [up, exit_conv])
        self.trained_ = False
        self.final_residual_ = None
        self.n_steps_ = 0
        self.history_ = []
        return self

    def _check_input(self, X):
        X = check_images(X)
        if X.shape[1] != 3:
            raise ValueError(f"expected 3-channel images, got {X.shape[1]}")
        if X.shape[2] % 2 or X.shape[3] % 2:
            raise ValueError(f"image dims must be even, got {X.shape[2:]}")
        return X

    def loss_and_grads(self, X, target=None):
        """Mean absolute reconstruction residual and its parameter gradients.

        Runs in training mode (batch statistics from ``X``).
        """
        X = self._check_input(X)
        target = X if target is None else target
        out = self.net_.forward(X, train=True)
        r = out - target
        loss = float(np.mean(np.abs(r)))
        self.net_.backward(np.sign(r) / r.size)
        return loss, dict(self.net_.named_grads())

    def fit(self, X, y=None):
        X = self._check_input(X)
        self.build()
        rng = make_rng(self.seed, 1)
        n = X.shape[0]
        bs = min(self.batch_size, n)
        batch = X
        opt = make_optimizer(self.optimizer, self.lr, self.clip)
        for step in range(self.max_steps):
            batch = X[np.sort(rng.choice(n, size=bs, replace=False))]
            out = self.net_.forward(batch, train=True)
            r = out - batch
            loss = float(np.mean(np.abs(r)))
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"{self.config.model_id}: residual became {loss} at step {step}")
            self.history_.append(loss)
            if loss <= self.target:
                break
            self.net_.backward(np.sign(r) / r.size)
            opt.step(self.net_)
            self.n_steps_ = step + 1
        # freeze batch-norm statistics on the final training batch
        self.net_.forward(batch, train=True)
        self.net_.freeze_norms()
        self.trained_ = True
        self.final_residual_ = _mae(self._forward(X), X)
        return self

    def _forward(self, X, chunk=64):
        outs = [self.net_.forward(X[i:i + chunk]) for i in range(0, X.shape[0], chunk)]
        return np.concatenate(outs)

    def transform(self, X):
        check_is_fitted(self, "net_")
        X = self._check_input(X)
        return self._forward(X)

    def forward_taps(self, img):
        """Per-component outputs for one ``(3, H, W)`` image, in execution order."""
        check_is_fitted(self, "net_")
        X = self._check_input([img])
        _, taps = self.net_.forward(X, taps=True)
        return [(name, out[0]) for name, out in taps]

    def kernels(self):
        """Named conv/upsample weight arrays, ``(Cin, Cout, k, k)`` each."""
        check_is_fitted(self, "net_")
        return {layer.name: layer.params["w"] for layer in self.net_.layers
                if "w" in layer.params}


class GridGenerator(BaseEstimator, TransformerMixin):
    """Noise-to-noise stack of ``num_blocks`` (deconv -> conv) blocks.

    Trained so that the mean absolute output equals ``target``; ``transform``
    overlays freshly sampled output noise on images and clamps to [0, 1].
    """

    def __init__(self, num_blocks=3, seed=0, channels=3, kernel_size=3, activation="relu",
                 target=0.005, optimizer="adam", lr=None, clip=1.0, max_steps=300,
                 batch_size=4, train_size=32, bias=False):
        self.num_blocks = num_blocks
        self.seed = seed
        self.channels = channels
        self.kernel_size = kernel_size
        self.activation = activation
        self.target = target
        self.optimizer = optimizer
        self.lr = lr
        self.clip = clip
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.train_size = train_size
        self.bias = bias

    @property
    def config(self):
        return GridGenConfig(self.num_blocks, self.seed, self.channels)

    def build(self):
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be positive")
        rng = make_rng(self.seed, 0)
        C, k = self.channels, self.kernel_size
        layers = []
        for i in range(1, self.num_blocks + 1):
            up = Deconv(C, C, k, rng, bias=self.bias)
            up.name = f"deconv{i}"
            conv = Conv2d(C, C, k, rng, bias=self.bias)
            conv.name = f"conv{i}"
            layers.append(up)
            if self.activation != "none":
                act = Activation(self.activation)
                act.name = f"{self.activation}{i}"
                layers.append(act)
            layers.append(conv)
            if self.activation != "none" and i < self.num_blocks:
                act = Activation(self.activation)
                act.name = f"{self.activation}{i}b"
                layers.append(act)
        self.net_ = Sequential(layers)
        self.final_magnitude_ = None
        self.n_steps_ = 0
        self.history_ = []
        return self

    def noise_shape(self, size):
        factor = 2 ** self.num_blocks
        if size % factor:
            raise ValueError(f"output size {size} is not a multiple of {factor}")
        return (self.channels, size // factor, size // factor)

    def sample_input(self, n, size, rng):
        return rng.standard_normal((n,) + self.noise_shape(size))

    def loss_and_grads(self, Z):
        out = self.net_.forward(Z, train=True)
        m = float(np.mean(np.abs(out)))
        loss = (m - self.target) ** 2
        g = 2.0 * (m - self.target) * np.sign(out) / out.size
        self.net_.backward(g)
        return loss, dict(self.net_.named_grads())

    def fit(self, X=None, y=None, Z=None):
        """Train the magnitude loss on fresh unit-Gaussian noise each step.

        Passing ``Z`` trains on that fixed noise batch instead.
        """
        self.build()
        rng = make_rng(self.seed, 1)
        opt = make_optimizer(self.optimizer, self.lr, self.clip)
        for step in range(self.max_steps):
            batch = Z if Z is not None else self.sample_input(
                self.batch_size, self.train_size, rng)
            loss, _ = self.loss_and_grads(batch)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"{self.config.model_id}: loss became {loss} at step {step}")
            self.history_.append(loss)
            opt.step(self.net_)
            self.n_steps_ = step + 1
        eval_rng = make_rng(self.seed, 2)
        noise = self.generate(16, self.train_size, eval_rng)
        self.final_magnitude_ = float(np.mean(np.abs(noise)))
        return self

    def forward(self, Z):
        check_is_fitted(self, "net_")
        return self.net_.forward(np.asarray(Z, dtype=np.float64))

    def generate(self, n, size, rng):
        """``n`` output noise maps of spatial size ``size``."""
        return self.forward(self.sample_input(n, size, rng))

    def transform(self, X, rng=None):
        check_is_fitted(self, "net_")
        X = check_images(X)
        if X.shape[1] != self.channels or X.shape[2] != X.shape[3]:
            raise ValueError(f"images must be square with {self.channels} channels")
        rng = make_rng(self.seed, 3) if rng is None else rng
        noise = self.generate(X.shape[0], X.shape[2], rng)
        return np.clip(X + noise, 0.0, 1.0)


def apply_grid_noise(img, model, rng):
    """Overlay one sample of ``model``'s output noise on ``img``; clamp to [0, 1]."""
    return model.transform([img], rng)[0]


def enumerate_pool(scale="desk", seeds_per_config=1):
    """Configurations of both generator families.

    ``full`` gives 20 seeds x 144 block architectures (2880) and 500 seeds x
    3 grid depths (1500); ``desk`` uses ``seeds_per_config`` for both.
    """
    if scale == "full":
        n_freq, n_grid = FULL_FREQ_SEEDS, FULL_GRID_SEEDS
    elif scale == "desk":
        if seeds_per_config < 1:
            raise ValueError("seeds_per_config must be >= 1")
        n_freq = n_grid = seeds_per_config
    else:
        raise ValueError(f"unknown scale {scale!r}")
    freq = [BlockConfig(L, S, U, A, N, seed)
            for seed in range(n_freq)
            for L, S, U, A, N in itertools.product(N_CONVS, ORDERS, UPSAMPLES, ACTS, NORMS)]
    grid = [GridGenConfig(n, seed) for seed in range(n_grid) for n in GRID_DEPTHS]
    return freq, grid


def random_crop(img, size, rng):
    img = np.asarray(img)
    H, W = img.shape[-2:]
    if H < size or W < size:
        raise ValueError(f"image {H}x{W} smaller than crop {size}")
    y = int(rng.integers(0, H - size + 1))
    x = int(rng.integers(0, W - size + 1))
    return img[..., y:y + size, x:x + size], (y, x)


def synth_dataset(pool, images, rng, n, crop=32):
    """Fingerprinted images drawn from a trained pool.

    ``pool`` maps model id -> fitted :class:`FreqGenerator` or
    :class:`GridGenerator`. Each sample crops a random source image and runs
    it through one uniformly chosen model. Grid noise is never composed with
    freq-generator output.

    Returns ``(X, labels, manifest)``: images ``(n, 3, crop, crop)`` in [0, 1],
    model ids, and one dict per sample describing how it was produced.
    """
    ids = sorted(pool)
    if not ids:
        raise ValueError("empty pool")
    images = list(images)
    if not images:
        raise ValueError("no source images")
    picks = rng.integers(0, len(ids), size=n)
    sources = rng.integers(0, len(images), size=n)
    crops, rows = [], []
    for i in range(n):
        patch, (y, x) = random_crop(images[sources[i]], crop, rng)
        crops.append(patch)
        rows.append({"index": i, "model_id": ids[picks[i]], "source": int(sources[i]),
                     "crop_y": y, "crop_x": x})
    X = np.stack(crops).astype(np.float64)
    out = np.empty_like(X)
    for m, model_id in enumerate(ids):
        sel = np.flatnonzero(picks == m)
        if sel.size == 0:
            continue
        model = pool[model_id]
        if isinstance(model, GridGenerator):
            out[sel] = model.transform(X[sel], make_rng(int(rng.integers(2**31)), m))
        else:
            out[sel] = np.clip(model.transform(X[sel]), 0.0, 1.0)
    labels = [r["model_id"] for r in rows]
    return out, labels, rows
