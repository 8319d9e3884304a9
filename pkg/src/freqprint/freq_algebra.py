"""Spatial and frequency-domain forms of generator components.

Every component here comes in two flavours so that their equivalence can be
checked numerically: convolution (direct vs. pointwise product of spectra),
zero-interleaving upsampling (spatial vs. spectrum replication), normalization
(spatial vs. DC-only shift in frequency) and the quadratic ReLU surrogate
(spatial polynomial vs. spectral self-convolution).

Convolution is *true* convolution (flipped kernel). Kernels are stored as
``(in_channels, out_channels, k, k)``.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_tensor3
from .numeric import dft2, idft2, zero_pad

__all__ = [
    "ConvKernel",
    "UpsampleMode",
    "NormParams",
    "NEAREST_KERNEL",
    "BILINEAR_KERNEL",
    "SRELU_COEFFS",
    "ACTIVATIONS",
    "convolve",
    "conv_padding",
    "conv2_spatial",
    "conv2_via_dft",
    "zero_interleave",
    "spectrum_repeat",
    "kernel_spectrum",
    "upsample",
    "fixed_upsample",
    "upsample_spectrum",
    "norm_stats",
    "normalize",
    "normalize_freq",
    "activate",
    "srelu_poly",
    "srelu_freq",
    "circular_convolve_spectra",
]

NEAREST_KERNEL = np.ones((2, 2))
BILINEAR_KERNEL = np.outer([0.5, 1.0, 0.5], [0.5, 1.0, 0.5])

# c0, c1, c2 of the quadratic ReLU fit
SRELU_COEFFS = (0.0, 0.3, 0.021)

ACTIVATIONS = ("relu", "sigmoid", "tanh", "none")


@dataclass
class ConvKernel:
    weights: np.ndarray
    padding: str = "same"
    bias: np.ndarray = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim == 2:
            w = w[None, None]
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ValueError(f"kernel must be (Cin, Cout, k, k), got {w.shape}")
        if w.shape[2] < 1 or w.shape[2] % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {w.shape[2]}")
        if not np.all(np.isfinite(w)):
            raise ValueError("kernel weights contain NaN or Inf")
        if self.padding not in ("same", "valid", "full"):
            raise ValueError(f"unknown padding {self.padding!r}")
        self.weights = w
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float64).reshape(w.shape[1])

    @property
    def in_channels(self):
        return self.weights.shape[0]

    @property
    def out_channels(self):
        return self.weights.shape[1]

    @property
    def k(self):
        return self.weights.shape[2]


@dataclass
class UpsampleMode:
    kind: str
    kernel: ConvKernel = None

    def __post_init__(self):
        if self.kind not in ("nearest", "bilinear", "deconv"):
            raise ValueError(f"unknown upsample kind {self.kind!r}")
        if self.kind == "deconv" and self.kernel is None:
            raise ValueError("deconv upsampling needs a kernel")

    @property
    def fixed_kernel(self):
        return {"nearest": NEAREST_KERNEL, "bilinear": BILINEAR_KERNEL}.get(self.kind)


@dataclass
class NormParams:
    kind: str = "batch"
    gamma: np.ndarray = field(default_factory=lambda: np.ones(1))
    beta: np.ndarray = field(default_factory=lambda: np.zeros(1))
    eps: float = 1e-5
    running_mean: np.ndarray = None
    running_var: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("batch", "instance", "none"):
            raise ValueError(f"unknown norm kind {self.kind!r}")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=np.float64))
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64))

    @property
    def frozen(self):
        return self.running_mean is not None and self.running_var is not None


# --------------------------------------------------------------------------
# convolution


def conv_padding(k, mode):
    """(before, after) zero padding that realises ``mode`` for kernel size k.

    ``same`` anchors the kernel at index ``(k - 1) // 2``; for the 2x2 nearest
    kernel this anchor is 0, which makes zero-interleave + conv reproduce
    pixel replication exactly.
    """
    if mode == "same":
        c = (k - 1) // 2
        return k - 1 - c, c
    if mode == "valid":
        return 0, 0
    if mode == "full":
        return k - 1, k - 1
    raise ValueError(f"unknown padding {mode!r}")


def convolve(x, w, pad=(0, 0), pad_mode="constant"):
    """Batched multi-channel true convolution.

    ``x`` is ``(B, Ci, H, W)``, ``w`` is ``(Ci, Co, kh, kw)``; ``pad`` gives the
    (before, after) padding applied to both spatial axes. Returns
    ``(B, Co, H + before + after - kh + 1, ...)``.
    """
    lo, hi = pad
    if lo or hi:
        x = np.pad(x, ((0, 0), (0, 0), (lo, hi), (lo, hi)), mode=pad_mode)
    kh, kw = w.shape[2:]
    if x.shape[2] < kh or x.shape[3] < kw:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {x.shape[2:]}")
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    out = np.tensordot(win, w[:, :, ::-1, ::-1], axes=([1, 4, 5], [0, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2_spatial(x, K):
    """Direct convolution of a ``(C, H, W)`` tensor with ``K``."""
    x = check_tensor3(x)
    if x.shape[0] != K.in_channels:
        raise ValueError(f"input has {x.shape[0]} channels, kernel expects {K.in_channels}")
    out = convolve(x[None], K.weights, conv_padding(K.k, K.padding))[0]
    if K.bias is not None:
        out += K.bias[:, None, None]
    return out


def conv2_via_dft(x, K):
    """Same result as :func:`conv2_spatial`, computed as a product of spectra.

    Input and kernel are zero-padded to ``(H + k - 1, W + k - 1)`` so the
    circular product equals the full linear convolution; the result is then
    cropped to the region ``conv2_spatial`` returns.
    """
    x = check_tensor3(x)
    if x.shape[0] != K.in_channels:
        raise ValueError(f"input has {x.shape[0]} channels, kernel expects {K.in_channels}")
    _, H, W = x.shape
    k = K.k
    if K.padding == "valid" and (H < k or W < k):
        raise ValueError(f"kernel {k}x{k} larger than input {H}x{W}")
    P, Q = H + k - 1, W + k - 1
    X = dft2(zero_pad(x, P, Q))  # (Ci, P, Q)
    Kf = dft2(zero_pad(K.weights, P, Q))  # (Ci, Co, P, Q)
    O = np.einsum("ipq,iopq->opq", X, Kf)
    full = idft2(O)
    if K.padding == "same":
        c = (k - 1) // 2
        out = full[:, c:c + H, c:c + W]
    elif K.padding == "valid":
        out = full[:, k - 1:H, k - 1:W]
    else:
        out = full
    out = np.array(out)
    if K.bias is not None:
        out += K.bias[:, None, None]
    return out


# --------------------------------------------------------------------------
# upsampling


def zero_interleave(x):
    """Double the resolution by inserting zeros: ``out[2i, 2j] = x[i, j]``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros(x.shape[:-2] + (2 * x.shape[-2], 2 * x.shape[-1]))
    out[..., ::2, ::2] = x
    return out


def spectrum_repeat(F):
    """Tile a spectrum 2x2 along both frequency axes."""
    F = np.asarray(F)
    reps = (1,) * (F.ndim - 2) + (2, 2)
    return np.tile(F, reps)


def kernel_spectrum(kernel, shape):
    """DFT of a 2D kernel zero-padded to ``shape`` with its anchor at (0, 0).

    The anchor is the same one :func:`conv_padding` uses for ``same``
    convolution, so multiplying by this spectrum realises circular ``same``
    convolution.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    k = kernel.shape[-1]
    c = (k - 1) // 2
    padded = zero_pad(kernel, *shape)
    return dft2(np.roll(padded, (-c, -c), axis=(-2, -1)))


def _depthwise(x, kernel, boundary):
    B, C, H, W = x.shape
    k = kernel.shape[-1]
    pad = conv_padding(k, "same")
    mode = "wrap" if boundary == "circular" else "constant"
    out = convolve(x.reshape(B * C, 1, H, W), kernel[None, None], pad, mode)
    return out.reshape(B, C, H, W)


def fixed_upsample(x, kernel, boundary="zero"):
    """Per-channel ``ZeroInter`` + fixed kernel for ``(..., H, W)`` maps.

    ``"replicate"`` clamps at the border the way interpolating upsamplers
    do: the source is edge-padded by one pixel before interleaving and the
    result cropped back to ``(2H, 2W)``.
    """
    x = np.asarray(x, dtype=np.float64)
    lead, (H, W) = x.shape[:-2], x.shape[-2:]
    x4 = x.reshape((-1, 1, H, W))
    kernel = np.asarray(kernel, dtype=np.float64)
    if boundary == "replicate":
        xp = np.pad(x4, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
        out = _depthwise(zero_interleave(xp), kernel, "zero")[..., 2:2 * H + 2, 2:2 * W + 2]
    elif boundary in ("zero", "circular"):
        out = _depthwise(zero_interleave(x4), kernel, boundary)
    else:
        raise ValueError(f"unknown boundary {boundary!r}")
    return out.reshape(lead + (2 * H, 2 * W))


def upsample(x, mode, boundary="zero"):
    """``ZeroInter(x)`` followed by convolution with the upsampling kernel.

    ``boundary`` is ``"zero"`` (network forward), ``"circular"`` (matches
    :func:`upsample_spectrum` exactly) or ``"replicate"`` (edge clamping,
    fixed kernels only).
    """
    x = check_tensor3(x)
    if boundary not in ("zero", "circular", "replicate"):
        raise ValueError(f"unknown boundary {boundary!r}")
    if mode.kind != "deconv":
        return fixed_upsample(x, mode.fixed_kernel, boundary)
    if boundary == "replicate":
        raise ValueError("replicate boundary applies to fixed kernels only")
    K = mode.kernel
    if K.in_channels != x.shape[0]:
        raise ValueError(f"deconv kernel expects {K.in_channels} channels, got {x.shape[0]}")
    pad_mode = "wrap" if boundary == "circular" else "constant"
    out = convolve(zero_interleave(x)[None], K.weights, conv_padding(K.k, "same"), pad_mode)[0]
    if K.bias is not None:
        out += K.bias[:, None, None]
    return out


def upsample_spectrum(F, kernel):
    """Spectrum of a circular-boundary upsample: ``Repeat(F) * DFT(K_up)``.

    ``F`` is a single-channel spectrum ``(M, N)`` (or a stack of them) and
    ``kernel`` a 2D upsampling kernel.
    """
    F = np.asarray(F)
    kernel = np.asarray(getattr(kernel, "weights", kernel), dtype=np.float64)
    if kernel.ndim == 4:
        if kernel.shape[:2] != (1, 1):
            raise ValueError("upsample_spectrum needs a single-channel kernel")
        kernel = kernel[0, 0]
    M, N = F.shape[-2:]
    return spectrum_repeat(F) * kernel_spectrum(kernel, (2 * M, 2 * N))


# --------------------------------------------------------------------------
# normalization


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ValueError(f"expected (C,H,W) or (B,C,H,W), got {x.shape}")
    return x, False


def _per_channel(v, C):
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if v.size == 1:
        v = np.full(C, v.item())
    return v.reshape(1, C, 1, 1)


def norm_stats(x, p):
    """Mean and variance used by :func:`normalize`, broadcastable to ``x``'s batch."""
    xb, _ = _as_batch(x)
    C = xb.shape[1]
    if p.frozen:
        return _per_channel(p.running_mean, C), _per_channel(p.running_var, C)
    if p.kind == "batch":
        return xb.mean(axis=(0, 2, 3), keepdims=True), xb.var(axis=(0, 2, 3), keepdims=True)
    if p.kind == "instance":
        return xb.mean(axis=(2, 3), keepdims=True), xb.var(axis=(2, 3), keepdims=True)
    raise ValueError("norm kind 'none' has no statistics")


def normalize(x, p):
    """``gamma (x - mu) / sqrt(var + eps) + beta`` with batch or instance stats."""
    if p.kind == "none":
        return np.asarray(x, dtype=np.float64).copy()
    xb, single = _as_batch(x)
    mu, var = norm_stats(xb, p)
    denom = var + p.eps
    if np.any(denom <= 0):
        raise ValueError("zero variance with eps=0 cannot be normalized")
    C = xb.shape[1]
    out = _per_channel(p.gamma, C) * (xb - mu) / np.sqrt(denom) + _per_channel(p.beta, C)
    return out[0] if single else out


def _spectral_stats(Fb, kind):
    # mean and variance recovered from the spectrum alone: DC gives the sum,
    # Parseval gives the sum of squares
    M, N = Fb.shape[-2:]
    n = M * N
    sums = Fb[..., 0, 0].real  # (B, C)
    sumsq = (np.abs(Fb) ** 2).sum(axis=(-2, -1)) / n
    if kind == "batch":
        count = n * Fb.shape[0]
        mean = sums.sum(axis=0, keepdims=True) / count
        var = sumsq.sum(axis=0, keepdims=True) / count - mean**2
    else:
        mean = sums / n
        var = sumsq / n - mean**2
    return mean[..., None, None], var[..., None, None]


def normalize_freq(F, p):
    """Normalization applied directly to spectra.

    Non-DC bins are only scaled by ``gamma / sqrt(var + eps)``; the mean and
    the shift ``beta`` live entirely in the DC bin (``M N mu`` and ``M N beta``).
    Statistics come from ``p``'s frozen running values or, if absent, from
    the spectra themselves.
    """
    F = np.asarray(F, dtype=complex)
    if p.kind == "none":
        return F.copy()
    single = F.ndim == 3
    Fb = F[None] if single else F
    B, C, M, N = Fb.shape
    if p.frozen:
        mu, var = _per_channel(p.running_mean, C), _per_channel(p.running_var, C)
    else:
        mu, var = _spectral_stats(Fb, p.kind)
    denom = var + p.eps
    if np.any(denom <= 0):
        raise ValueError("zero variance with eps=0 cannot be normalized")
    dc = np.zeros((M, N))
    dc[0, 0] = M * N
    mu_F = mu * dc
    beta_F = _per_channel(p.beta, C) * dc
    out = _per_channel(p.gamma, C) * (Fb - mu_F) / np.sqrt(denom) + beta_F
    return out[0] if single else out


# --------------------------------------------------------------------------
# activations


def activate(x, kind):
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "sigmoid":
        return 0.5 * (1.0 + np.tanh(0.5 * x))
    if kind == "tanh":
        return np.tanh(x)
    if kind == "none":
        return x.copy()
    raise ValueError(f"unknown activation {kind!r}")


def srelu_poly(x):
    c0, c1, c2 = SRELU_COEFFS
    x = np.asarray(x, dtype=np.float64)
    return c0 + c1 * x + c2 * x * x


def circular_convolve_spectra(A, B):
    """Direct 2D circular convolution over the last two axes.

    ``(A * B)(k) = sum_j A(j) B(k - j)``; O((MN)^2), meant for small maps.
    """
    A = np.asarray(A, dtype=complex)
    B = np.asarray(B, dtype=complex)
    M, N = A.shape[-2:]
    out = np.zeros(np.broadcast_shapes(A.shape, B.shape), dtype=complex)
    for u in range(M):
        for v in range(N):
            out += A[..., u:u + 1, v:v + 1] * np.roll(B, (u, v), axis=(-2, -1))
    return out


def srelu_freq(F):
    """Quadratic ReLU surrogate evaluated on a spectrum.

    ``c1 F + c2 / (M N) (F circ F)`` plus ``c0 M N`` at DC; the ``1/(MN)``
    comes from the unnormalized forward DFT.
    """
    c0, c1, c2 = SRELU_COEFFS
    F = np.asarray(F, dtype=complex)
    M, N = F.shape[-2:]
    out = c1 * F + (c2 / (M * N)) * circular_convolve_spectra(F, F)
    out[..., 0, 0] += c0 * M * N
    return out
