"""Shared test utilities: IDX file writing and a deterministic digit corpus."""

import struct

import numpy as np


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write uint8 images (n, rows, cols) and labels (n,) as big-endian IDX."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", 2051, n, rows, cols))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", 2049, n))
        fh.write(labels.tobytes())


def build_digit_images(
    n_total: int = 2500,
    seed: int = 20240601,
    max_shift: int = 2,
    noise: float = 16.0,
) -> tuple[np.ndarray, np.ndarray]:
    """28x28 uint8 handwritten digits at roughly MNIST difficulty.

    Upscales the bundled 8x8 scikit-learn digit scans to 28x28, then
    applies per-sample random translations and pixel noise so a small
    MLP neither saturates immediately nor stalls below the accuracy
    targets. Deterministic in the seed.
    """
    from sklearn.datasets import load_digits

    source = load_digits()
    base = np.kron(source.images, np.ones((3, 3)))  # 8x8 -> 24x24
    base = np.pad(base, ((0, 0), (2, 2), (2, 2))) * 15.9375  # 0..16 -> 0..255

    rng = np.random.default_rng(seed)
    order = rng.permutation(n_total) % base.shape[0]
    images = np.empty((n_total, 28, 28))
    for i, j in enumerate(order):
        dx, dy = rng.integers(-max_shift, max_shift + 1, size=2)
        images[i] = np.roll(np.roll(base[j], dx, axis=1), dy, axis=0)
    images += rng.normal(0.0, noise, images.shape)
    images = np.clip(images, 0, 255).astype(np.uint8)
    labels = source.target[order].astype(np.uint8)
    return images, labels
