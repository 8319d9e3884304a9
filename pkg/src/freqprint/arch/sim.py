"""Random-weight instantiation of an architecture, its forward pass and an
analytic prediction of its mean output magnitude spectrum."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .._validation import check_images, check_tensor3
from ..freq_algebra import (
    BILINEAR_KERNEL,
    NEAREST_KERNEL,
    activate,
    conv_padding,
    convolve,
    fixed_upsample,
    kernel_spectrum,
    spectrum_repeat,
    zero_interleave,
)
from ..nn import uniform_init
from ..numeric import make_rng
from .dsl import ArchSpec, parse

__all__ = ["ArchSimulator", "components"]

PAD_MODES = {"zero": "constant", "reflect": "reflect", "replicate": "edge"}
FIXED = {"nearest": NEAREST_KERNEL, "bilinear": BILINEAR_KERNEL}


def components(spec):
    """Declared component names in execution order, ``b<i>.<stage>``."""
    names = []
    for i, b in enumerate(spec.blocks, 1):
        body = ["conv"]
        if b.norm != "none":
            body.append("norm")
        if b.act != "none":
            body.append("act")
        if b.seq == "pre":
            body = body[1:] + ["conv"]
        stages = ["up"] + body + (["sc"] if b.sc else [])
        names.extend(f"b{i}.{s}" for s in stages)
    return names


class ArchSimulator(BaseEstimator, TransformerMixin):
    """Spatial simulation of an :class:`ArchSpec` with random weights.

    ``spec`` may be an ``ArchSpec`` or DSL text. ``fit`` draws the weights
    from ``seed``: upsample kernels are ``(C, C, k, k)`` for deconv, conv
    kernels ``(C_in, ch, k, k)``, norm gains uniform in [0.5, 1.5].
    Fixed upsamplers wrap around, which is the periodic signal the DFT sees,
    so that stage matches its spectral prediction exactly; deconvolutions
    zero-pad. Shortcuts add the bilinear-upsampled block input, averaged over
    channels when the channel count changes.
    """

    def __init__(self, spec=None, seed=0):
        self.spec = spec
        self.seed = seed

    def _spec(self):
        return parse(self.spec) if isinstance(self.spec, str) else self.spec

    def fit(self, X=None, y=None):
        spec = self._spec()
        if not isinstance(spec, ArchSpec):
            raise ValueError("spec must be an ArchSpec or architecture text")
        self.spec_ = spec
        self.weights_ = []
        C = spec.input[0]
        for i, b in enumerate(spec.blocks):
            rng = make_rng(self.seed, i)
            w = {}
            if b.u == "deconv":
                w["up"] = uniform_init(rng, (C, C, b.k, b.k), C * b.k * b.k)
            conv_in = C
            w["conv"] = uniform_init(rng, (conv_in, b.ch, b.k, b.k), conv_in * b.k * b.k)
            if b.norm != "none":
                norm_c = b.ch if b.seq == "post" else C
                w["gamma"] = rng.uniform(0.5, 1.5, size=norm_c)
                w["beta"] = np.zeros(norm_c)
            self.weights_.append(w)
            C = b.ch
        return self

    def _check_input(self, X):
        X = check_images(X)
        if X.shape[1:] != self.spec_.input:
            raise ValueError(f"input shape {X.shape[1:]} does not match {self.spec_.input}")
        return X

    def _norm(self, x, b, w):
        axes = (0, 2, 3) if b.norm == "batch" else (2, 3)
        mu = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        return (w["gamma"][None, :, None, None] * (x - mu) / np.sqrt(var + 1e-5)
                + w["beta"][None, :, None, None])

    def forward(self, X, taps=False):
        """Batch forward; with ``taps`` also returns ``[(name, output), ...]``."""
        check_is_fitted(self, "weights_")
        x = self._check_input(X)
        outs = []
        names = iter(components(self.spec_))
        for b, w in zip(self.spec_.blocks, self.weights_):
            block_in = x
            if b.u == "deconv":
                x = convolve(zero_interleave(x), w["up"], conv_padding(b.k, "same"))
            else:
                x = fixed_upsample(x, FIXED[b.u], "circular")
            outs.append((next(names), x))
            stages = ["conv", "norm", "act"]
            if b.seq == "pre":
                stages = ["norm", "act", "conv"]
            for stage in stages:
                if stage == "conv":
                    x = convolve(x, w["conv"], conv_padding(b.k, "same"), PAD_MODES[b.pad])
                elif stage == "norm" and b.norm != "none":
                    x = self._norm(x, b, w)
                elif stage == "act" and b.act != "none":
                    x = activate(x, b.act)
                else:
                    continue
                outs.append((next(names), x))
            if b.sc:
                branch = fixed_upsample(block_in, BILINEAR_KERNEL, "circular")
                if branch.shape[1] != x.shape[1]:
                    branch = branch.mean(axis=1, keepdims=True)
                x = x + branch
                outs.append((next(names), x))
        return (x, outs) if taps else x

    def transform(self, X):
        return self.forward(X)

    def forward_taps(self, img):
        """Per-component outputs for a single ``(C, H, W)`` input."""
        _, outs = self.forward(check_tensor3(img)[None], taps=True)
        return [(name, out[0]) for name, out in outs]

    def predict_spectrum(self, input_spectrum):
        """Propagate a mean magnitude spectrum through the architecture.

        Upsampling tiles the spectrum 2x2 and multiplies by ``|DFT(K_up)|``;
        each conv multiplies by the kernel magnitude spectrum averaged over
        all (in, out) channel pairs; norms scale by ``mean |gamma|``;
        activations pass through. A shortcut adds the bilinear branch.
        """
        check_is_fitted(self, "weights_")
        S = np.asarray(input_spectrum, dtype=np.float64)
        if S.shape != self.spec_.input[1:]:
            raise ValueError(f"spectrum shape {S.shape} does not match {self.spec_.input[1:]}")
        for b, w in zip(self.spec_.blocks, self.weights_):
            S_in = spectrum_repeat(S)
            shape = S_in.shape
            if b.u == "deconv":
                up = np.abs(kernel_spectrum(w["up"], shape)).mean(axis=(0, 1))
            else:
                up = np.abs(kernel_spectrum(FIXED[b.u], shape))
            S = S_in * up
            S = S * np.abs(kernel_spectrum(w["conv"], shape)).mean(axis=(0, 1))
            if b.norm != "none":
                S = S * np.mean(np.abs(w["gamma"]))
            if b.sc:
                S = S + S_in * np.abs(kernel_spectrum(BILINEAR_KERNEL, shape))
        return S
