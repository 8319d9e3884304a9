"""Input validation helpers shared by the estimators and free functions."""

import numpy as np


def check_matrix(x, name="x", dtype=float):
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 2 or x.size == 0:
        raise ValueError(f"{name} must be a non-empty 2D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or Inf")
    return x


def check_tensor3(x, name="x"):
    """Coerce to a finite float64 ``(C, H, W)`` array; 2D input gets C=1."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.size == 0:
        raise ValueError(f"{name} must be shaped (C, H, W), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or Inf")
    return x


def check_images(images, name="images", same_shape=True):
    """Coerce a batch of images to a float64 ``(B, C, H, W)`` array.

    Accepts a 4D array, a 3D array (one image per entry along axis 0, single
    channel) or a sequence of 2D/3D arrays.
    """
    if isinstance(images, np.ndarray) and images.ndim == 4:
        batch = np.asarray(images, dtype=np.float64)
    else:
        if isinstance(images, np.ndarray) and images.ndim == 3:
            images = list(images)
        images = list(images)
        if not images:
            raise ValueError(f"{name} is empty")
        items = [check_tensor3(im, name) for im in images]
        shapes = {im.shape for im in items}
        if same_shape and len(shapes) > 1:
            raise ValueError(f"{name} have mismatched shapes: {sorted(shapes)}")
        batch = np.stack(items)
    if batch.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(batch)):
        raise ValueError(f"{name} contain NaN or Inf")
    return batch


def check_unit_interval(value, name, closed=False):
    ok = 0.0 <= value <= 1.0 if closed else 0.0 < value < 1.0
    if not ok:
        raise ValueError(f"{name} must lie in {'[0, 1]' if closed else '(0, 1)'}, got {value}")
    return float(value)
