"""Spectral fingerprints and the frequency statistics built on them."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_images, check_unit_interval
from .freq_algebra import kernel_spectrum
from .numeric import dft2, make_rng

__all__ = [
    "Fingerprint",
    "SpectralFingerprint",
    "LinearProbe",
    "channel_view",
    "mean_magnitude_spectrum",
    "radial_distance",
    "highpass_mask",
    "azimuthal_integral",
    "hp_ratio",
    "image_hp_ratio",
    "attenuation_curve",
    "extract_fingerprint",
    "image_feature",
    "cosine",
    "averaged_kernel_spectrum",
    "kernel_spectrum_similarity",
    "log_spectra",
    "weight_map_agreement",
    "lattice_mask",
    "lattice_peak_ratio",
]

DEFAULT_CUTOFF = 0.5
# Spectra are compressed in 8-bit intensity units: with [0, 1] images the
# high band sits where log(1 + x) is still nearly linear.
DEFAULT_SCALE = 255.0


@dataclass
class Fingerprint:
    vector: np.ndarray
    dims: tuple
    cutoff: float
    n_images: int

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64).ravel()
        self.dims = tuple(int(d) for d in self.dims)
        if self.vector.size != int(np.prod(self.dims)):
            raise ValueError("fingerprint length does not match dims")

    def as_matrix(self):
        return self.vector.reshape(self.dims)


def channel_view(images, channel="mean"):
    """Reduce ``(B, C, H, W)`` images to the maps a spectrum is taken of.

    ``"mean"`` averages channels into one map per image, an int selects that
    channel, ``None`` keeps every channel (spectra averaged later) and
    ``"stack"`` keeps every channel as its own spectrum.
    """
    X = check_images(images)
    if channel == "mean":
        return X.mean(axis=1, keepdims=True)
    if channel is None or channel == "stack":
        return X
    return X[:, [int(channel)]]


def mean_magnitude_spectrum(images, channel=None):
    """Elementwise mean of ``|dft2|`` over images (and channels).

    With ``channel="stack"`` the result keeps a leading channel axis.
    """
    maps = channel_view(images, channel)
    axes = 0 if channel == "stack" else (0, 1)
    return np.abs(dft2(maps)).mean(axis=axes)


def radial_distance(shape):
    """Normalized min-image radius of every unshifted bin (1.0 = Nyquist)."""
    M, N = shape
    du = np.minimum(np.arange(M), M - np.arange(M)) / (M / 2.0)
    dv = np.minimum(np.arange(N), N - np.arange(N)) / (N / 2.0)
    return np.sqrt(du[:, None] ** 2 + dv[None, :] ** 2)


def highpass_mask(spectrum, cutoff=DEFAULT_CUTOFF):
    """Zero every bin whose radius is below ``cutoff`` x Nyquist."""
    check_unit_interval(cutoff, "cutoff")
    spectrum = np.asarray(spectrum)
    keep = radial_distance(spectrum.shape[-2:]) >= cutoff
    return np.where(keep, spectrum, 0)


def _square_crop(spectrum):
    M, N = spectrum.shape[-2:]
    if M == N:
        return spectrum
    S = min(M, N)
    shifted = np.fft.fftshift(spectrum, axes=(-2, -1))
    y0, x0 = (M - S) // 2 + (M % 2 and not S % 2), (N - S) // 2 + (N % 2 and not S % 2)
    return np.fft.ifftshift(shifted[..., y0:y0 + S, x0:x0 + S], axes=(-2, -1))


def azimuthal_integral(spectrum):
    """Sum of ``|F|^2`` per integer radius ``k = 0 .. M/2 - 1``.

    Radii are min-image distances to DC rounded to the nearest integer;
    non-square spectra are centre-cropped to a square first.
    """
    F = _square_crop(np.asarray(spectrum))
    M = F.shape[-1]
    half = M // 2
    idx = np.arange(M)
    d = np.minimum(idx, M - idx)
    radius = np.rint(np.sqrt(d[:, None] ** 2 + d[None, :] ** 2)).astype(int)
    power = np.abs(F) ** 2
    inside = radius < half
    return np.bincount(radius[inside], weights=power[inside], minlength=half)[:half]


def hp_ratio(spectrum, return_flag=False):
    """Share of azimuthal power in radii ``M/4 .. M/2 - 1``.

    An all-zero spectrum yields 0; with ``return_flag`` a second value tells
    whether that degenerate case occurred.
    """
    ai = azimuthal_integral(spectrum)
    total = ai.sum()
    degenerate = not total > 0
    ratio = 0.0 if degenerate else float(ai[len(ai) // 2:].sum() / total)
    return (ratio, degenerate) if return_flag else ratio


def image_hp_ratio(x):
    """``hp_ratio`` of the channel-averaged map of a ``(C, H, W)`` tensor."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x.mean(axis=0)
    return hp_ratio(dft2(x))


def attenuation_curve(model, img):
    """``(component, hp_ratio)`` after every component, in execution order.

    ``model`` is anything exposing ``forward_taps(img)`` or a sequence of
    ``(name, callable)`` components applied in turn.
    """
    if hasattr(model, "forward_taps"):
        taps = model.forward_taps(img)
    else:
        taps, x = [], img
        for name, fn in model:
            x = fn(x)
            taps.append((name, x))
    return [(name, image_hp_ratio(out)) for name, out in taps]


def _feature_from_mean(mean_mag, cutoff, scale=DEFAULT_SCALE):
    v = highpass_mask(np.log1p(scale * mean_mag), cutoff).ravel()
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("high-pass spectrum is identically zero")
    return v / norm


def lattice_mask(shape, n):
    """Bins at multiples of ``M / 2**n`` and ``N / 2**n`` (DC included)."""
    M, N = shape
    f = 2 ** n
    if M % f or N % f:
        raise ValueError(f"{M}x{N} is not divisible by {f}")
    mask = np.zeros((M, N), dtype=bool)
    mask[:: M // f, :: N // f] = True
    return mask


def lattice_peak_ratio(spectrum, n):
    """Mean magnitude on the non-DC lattice over the median magnitude off it."""
    mag = np.abs(np.asarray(spectrum))
    lat = lattice_mask(mag.shape, n)
    on = lat.copy()
    on[0, 0] = False
    off = np.median(mag[~lat])
    return float(mag[on].mean() / off) if off > 0 else float("inf")


def extract_fingerprint(images, cutoff=DEFAULT_CUTOFF, channel="mean", scale=DEFAULT_SCALE):
    """L2-normalized, high-pass masked ``log(1 + scale * mean |dft2|)`` of an image set.

    ``scale`` expresses [0, 1] images in 8-bit units before compression.
    """
    X = check_images(images)
    mean_mag = mean_magnitude_spectrum(X, channel)
    return Fingerprint(_feature_from_mean(mean_mag, cutoff, scale), mean_mag.shape, cutoff,
                       X.shape[0])


def image_feature(img, cutoff=DEFAULT_CUTOFF, channel="mean", scale=DEFAULT_SCALE):
    return extract_fingerprint([img], cutoff, channel, scale)


def _vec(a):
    return a.vector if isinstance(a, Fingerprint) else np.asarray(a, dtype=np.float64).ravel()


def cosine(a, b):
    """Cosine similarity; plain dot product for unit-norm fingerprints."""
    u, v = _vec(a), _vec(b)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def averaged_kernel_spectrum(weights, shape, out_channel=0):
    """Mean over input channels of ``|DFT|`` of zero-padded kernels feeding one output."""
    w = np.asarray(weights, dtype=np.float64)
    return np.mean([np.abs(kernel_spectrum(w[i, out_channel], shape))
                    for i in range(w.shape[0])], axis=0)


def kernel_spectrum_similarity(weights, convolved, cutoff=DEFAULT_CUTOFF, out_channel=0):
    """Mean cosine between each image's high-pass spectrum and the kernel spectrum.

    ``convolved`` holds the conv layer's outputs ``(B, Cout, H, W)``; the
    comparison uses output channel ``out_channel`` on both sides.
    """
    X = check_images(convolved)
    shape = X.shape[-2:]
    ref = highpass_mask(averaged_kernel_spectrum(weights, shape, out_channel), cutoff)
    spectra = highpass_mask(np.abs(dft2(X[:, out_channel])), cutoff)
    return float(np.mean([cosine(s, ref) for s in spectra]))


def log_spectra(images, channel="mean", scale=DEFAULT_SCALE):
    """``log(1 + scale * |dft2|)`` per image, shaped ``(B, H, W)``.

    ``channel="stack"`` keeps channels: ``(B, C, H, W)``.
    """
    maps = channel_view(images, channel)
    L = np.log1p(scale * np.abs(dft2(maps)))
    return L if channel == "stack" else L.mean(axis=1)


class SpectralFingerprint(BaseEstimator, TransformerMixin):
    """Training-free spectral feature extractor.

    ``transform`` returns one single-image feature per row; ``fingerprint``
    averages spectra over a set first.
    """

    def __init__(self, cutoff=DEFAULT_CUTOFF, channel="mean", scale=DEFAULT_SCALE):
        self.cutoff = cutoff
        self.channel = channel
        self.scale = scale

    def fit(self, X=None, y=None):
        check_unit_interval(self.cutoff, "cutoff")
        self.fitted_ = True
        return self

    def transform(self, X):
        X = check_images(X)
        mags = np.abs(dft2(channel_view(X, self.channel)))
        if self.channel != "stack":
            mags = mags.mean(axis=1)
        return np.stack([_feature_from_mean(m, self.cutoff, self.scale) for m in mags])

    def fingerprint(self, X):
        return extract_fingerprint(X, self.cutoff, self.channel, self.scale)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class LinearProbe(BaseEstimator, ClassifierMixin):
    """One-layer softmax classifier over flattened spectra.

    With ``standardize`` features are z-scored per bin before training
    (faster, better conditioned); otherwise they are only centred, which keeps
    the weights in spectral units. ``weight_maps`` maps the learned weights
    back to the raw spectral layout, one ``(H, W)`` map per class.
    """

    def __init__(self, epochs=300, lr=0.5, l2=1e-3, seed=0, standardize=True):
        self.epochs = epochs
        self.lr = lr
        self.l2 = l2
        self.seed = seed
        self.standardize = standardize

    def _flatten(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim >= 3:
            return X.reshape(X.shape[0], -1), X.shape[1:]
        if X.ndim == 2:
            return X, (X.shape[1],)
        raise ValueError(f"expected (n, H, W) or (n, D) spectra, got {X.shape}")

    def loss_and_grads(self, W, b, Z, Y):
        """Cross-entropy + L2 on standardized ``Z`` with one-hot ``Y``."""
        P = _softmax(Z @ W.T + b)
        n = Z.shape[0]
        loss = -np.sum(Y * np.log(P + 1e-300)) / n + 0.5 * self.l2 * np.sum(W * W)
        G = (P - Y) / n
        return loss, G.T @ Z + self.l2 * W, G.sum(axis=0)

    def fit(self, X, y):
        Xf, shape = self._flatten(X)
        y = np.asarray(y)
        self.classes_, yi = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        counts = np.bincount(yi)
        if counts.min() < 2:
            raise ValueError("need at least two samples per class")
        self.mean_ = Xf.mean(axis=0)
        if self.standardize:
            self.scale_ = Xf.std(axis=0)
            self.scale_[self.scale_ == 0] = 1.0
        else:
            self.scale_ = np.ones(Xf.shape[1])
        Z = (Xf - self.mean_) / self.scale_
        Y = np.eye(len(self.classes_))[yi]
        rng = make_rng(self.seed)
        W = rng.normal(0.0, 1e-3, size=(len(self.classes_), Z.shape[1]))
        b = np.zeros(len(self.classes_))
        self.loss_curve_ = []
        for _ in range(self.epochs):
            loss, gW, gb = self.loss_and_grads(W, b, Z, Y)
            self.loss_curve_.append(loss)
            W -= self.lr * gW
            b -= self.lr * gb
        self.coef_std_, self.intercept_ = W, b
        self.shape_ = shape
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_std_")
        Xf, _ = self._flatten(X)
        return ((Xf - self.mean_) / self.scale_) @ self.coef_std_.T + self.intercept_

    def predict_proba(self, X):
        return _softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def weight_maps(self):
        """Per-class weights in raw feature units, reshaped to the spectrum."""
        check_is_fitted(self, "coef_std_")
        raw = self.coef_std_ / self.scale_
        return raw.reshape((len(self.classes_),) + tuple(self.shape_))


def weight_map_agreement(maps, references):
    """Cosine between class-specific parts of weight maps and reference maps.

    Softmax weights are only defined up to a vector shared by all classes,
    so both sides are centred across classes before comparing.
    """
    maps = np.asarray(maps, dtype=np.float64)
    refs = np.asarray(references, dtype=np.float64)
    if maps.shape != refs.shape:
        raise ValueError("maps and references must align")
    maps = maps - maps.mean(axis=0)
    refs = refs - refs.mean(axis=0)
    return np.array([cosine(m, r) for m, r in zip(maps, refs)])
