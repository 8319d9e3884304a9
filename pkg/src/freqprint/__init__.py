"""Frequency-domain fingerprints of generative models.

Spectral algebra of generator components, synthetic fingerprinted
generators, spectral fingerprint extraction and model attribution.
"""

__version__ = "0.1.0"

from .attribution import (
    UNKNOWN,
    Gallery,
    OpenSetIdentifier,
    RocCurve,
    VerificationPair,
    best_accuracy,
    identify_open_set,
    lineage_matrix,
    make_pairs,
    open_set_metrics,
    roc,
    verify_pair,
)
from .fingerprint import (
    Fingerprint,
    LinearProbe,
    SpectralFingerprint,
    attenuation_curve,
    azimuthal_integral,
    cosine,
    extract_fingerprint,
    highpass_mask,
    hp_ratio,
    image_feature,
    kernel_spectrum_similarity,
    mean_magnitude_spectrum,
)
from .freq_algebra import (
    ConvKernel,
    NormParams,
    UpsampleMode,
    conv2_spatial,
    conv2_via_dft,
    normalize,
    normalize_freq,
    srelu_freq,
    srelu_poly,
    upsample,
    upsample_spectrum,
    zero_interleave,
)
from .numeric import dft2, idft2, make_rng, power_law_image, power_law_rgb
from .synth import (
    BlockConfig,
    FreqGenerator,
    GridGenConfig,
    GridGenerator,
    apply_grid_noise,
    enumerate_pool,
    synth_dataset,
)

__all__ = [
    "__version__",
    "UNKNOWN",
    "Gallery",
    "OpenSetIdentifier",
    "RocCurve",
    "VerificationPair",
    "best_accuracy",
    "identify_open_set",
    "lineage_matrix",
    "make_pairs",
    "open_set_metrics",
    "roc",
    "verify_pair",
    "Fingerprint",
    "LinearProbe",
    "SpectralFingerprint",
    "attenuation_curve",
    "azimuthal_integral",
    "cosine",
    "extract_fingerprint",
    "highpass_mask",
    "hp_ratio",
    "image_feature",
    "kernel_spectrum_similarity",
    "mean_magnitude_spectrum",
    "ConvKernel",
    "NormParams",
    "UpsampleMode",
    "conv2_spatial",
    "conv2_via_dft",
    "normalize",
    "normalize_freq",
    "srelu_freq",
    "srelu_poly",
    "upsample",
    "upsample_spectrum",
    "zero_interleave",
    "BlockConfig",
    "FreqGenerator",
    "GridGenConfig",
    "GridGenerator",
    "apply_grid_noise",
    "enumerate_pool",
    "synth_dataset",
    "dft2",
    "idft2",
    "make_rng",
    "power_law_image",
    "power_law_rgb",
]
