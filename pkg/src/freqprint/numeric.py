"""2D DFT helpers, seeded RNG streams and synthetic power-law images.

Conventions used everywhere in the package:

* images and feature maps are float64 arrays shaped ``(C, H, W)``;
* spectra are complex arrays in the *unshifted* layout (DC at ``[0, 0]``);
* the forward DFT is unnormalized and the inverse carries ``1 / (M N)``.
"""

import numpy as np

from ._validation import check_matrix

__all__ = [
    "make_rng",
    "dft2",
    "idft2",
    "magnitude",
    "log_magnitude",
    "fftshift_view",
    "zero_pad",
    "power_law_envelope",
    "power_law_image",
    "power_law_rgb",
    "white_noise_image",
    "EXPONENT_RANGE",
]

# Sampling range for the power-law exponents of synthetic natural images.
EXPONENT_RANGE = (0.5, 3.5)


def make_rng(seed, *stream):
    """Return a PCG64 generator for ``seed`` and an optional sub-stream key.

    Sub-streams are derived through ``SeedSequence`` so that, e.g.,
    ``make_rng(7, 3)`` and ``make_rng(7, 4)`` are independent while both are
    fully determined by the root seed.
    """
    entropy = [int(seed)] + [int(s) for s in stream]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def dft2(x):
    """Unnormalized 2D DFT over the last two axes.

    ``F(u, v) = sum_x sum_y x(x, y) exp(-i 2 pi (u x / M + v y / N))``.
    Arbitrary (non power-of-two) sizes are supported.
    """
    x = np.asarray(x)
    if x.ndim < 2 or x.shape[-1] == 0 or x.shape[-2] == 0:
        raise ValueError(f"dft2 needs a non-empty matrix, got shape {x.shape}")
    return np.fft.fft2(x, axes=(-2, -1))


def idft2(F, return_residue=False):
    """Inverse of :func:`dft2` (carries the ``1/(MN)`` factor), real part.

    With ``return_residue=True`` also returns the largest absolute imaginary
    part that was discarded.
    """
    F = np.asarray(F)
    if not np.all(np.isfinite(F)):
        raise ValueError("idft2 input contains non-finite values")
    out = np.fft.ifft2(F, axes=(-2, -1))
    if return_residue:
        residue = float(np.max(np.abs(out.imag))) if out.size else 0.0
        return out.real, residue
    return out.real


def magnitude(F):
    return np.abs(F)


def log_magnitude(F):
    """``log(1 + |F|)``, monotone in the magnitude."""
    return np.log1p(np.abs(F))


def fftshift_view(m):
    """Move DC to the centre for display. Analysis code never uses this."""
    return np.fft.fftshift(np.asarray(m), axes=(-2, -1))


def zero_pad(x, height, width):
    """Place ``x`` at the top-left of a ``height x width`` zero canvas."""
    x = np.asarray(x)
    h, w = x.shape[-2:]
    if height < h or width < w:
        raise ValueError(f"cannot pad {h}x{w} down to {height}x{width}")
    out = np.zeros(x.shape[:-2] + (height, width), dtype=x.dtype)
    out[..., :h, :w] = x
    return out


def _signed_freqs(n):
    # integer frequency index with minimum-image sign: 0, 1, ..., -1
    return np.fft.fftfreq(n) * n


def power_law_envelope(M, N, a, b):
    """Spectral envelope ``1 / (|f_x|^a + |f_y|^b)`` on the unshifted grid.

    Frequencies are integer indices folded to ``[-M/2, M/2)``; the DC bin is
    set to zero (the image is rescaled afterwards, so its mean is irrelevant).
    """
    if a <= 0 or b <= 0:
        raise ValueError(f"exponents must be positive, got a={a}, b={b}")
    fx = np.abs(_signed_freqs(M))[:, None]
    fy = np.abs(_signed_freqs(N))[None, :]
    denom = fx**a + fy**b
    env = np.zeros((M, N))
    nz = denom > 0
    env[nz] = 1.0 / denom[nz]
    return env


def _random_phase(M, N, rng):
    # phases of a real white-noise field are conjugate-symmetric, so the
    # inverse transform of envelope * phase is real
    F = np.fft.fft2(rng.standard_normal((M, N)))
    mag = np.abs(F)
    mag[mag == 0] = 1.0
    return F / mag


def _minmax(x):
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def power_law_image(M, N, a=None, b=None, rng=None):
    """Random-phase image with a power-law magnitude envelope, scaled to [0, 1].

    ``a`` and ``b`` default to uniform draws from :data:`EXPONENT_RANGE`.
    """
    rng = make_rng(0) if rng is None else rng
    if a is None:
        a = rng.uniform(*EXPONENT_RANGE)
    if b is None:
        b = rng.uniform(*EXPONENT_RANGE)
    env = power_law_envelope(M, N, a, b)
    img = np.fft.ifft2(env * _random_phase(M, N, rng)).real
    return _minmax(img)


def power_law_rgb(M, N, rng, channels=3, mix=0.2):
    """Three-channel power-law image with correlated channels.

    Each channel is ``(1 - mix) * shared + mix * own`` before rescaling, which
    mimics the strong inter-channel correlation of natural photographs.
    """
    a, b = rng.uniform(*EXPONENT_RANGE, size=2)
    shared = power_law_image(M, N, a, b, rng)
    out = np.empty((channels, M, N))
    for c in range(channels):
        own = power_law_image(M, N, a, b, rng)
        out[c] = _minmax((1.0 - mix) * shared + mix * own)
    return out


def white_noise_image(M, N, rng):
    return rng.standard_normal((M, N))


def check_spectrum_symmetry(F, atol=1e-9):
    """True if ``F(u,v) == conj(F(-u mod M, -v mod N))`` within ``atol``."""
    F = check_matrix(F, "spectrum", dtype=complex)
    flipped = np.roll(F[::-1, ::-1], (1, 1), axis=(0, 1))
    return bool(np.max(np.abs(F - np.conj(flipped))) <= atol)
