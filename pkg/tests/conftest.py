import os

import pytest

from helpers import build_digit_images, write_idx


@pytest.fixture(scope="session")
def digits_idx(tmp_path_factory):
    """Paths to 28x28 digit IDX files (2500 samples, 10 classes).

    Real MNIST IDX files are used instead when AIRFED_MNIST_IMAGES and
    AIRFED_MNIST_LABELS point at them.
    """
    img = os.environ.get("AIRFED_MNIST_IMAGES")
    lbl = os.environ.get("AIRFED_MNIST_LABELS")
    if img and lbl:
        return img, lbl
    root = tmp_path_factory.mktemp("digits")
    images, labels = build_digit_images()
    img_path = root / "digits-images-idx3-ubyte"
    lbl_path = root / "digits-labels-idx1-ubyte"
    write_idx(images, labels, img_path, lbl_path)
    return str(img_path), str(lbl_path)
