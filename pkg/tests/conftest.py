import numpy as np
import pytest
import torch
from PIL import Image

torch.set_num_threads(max(1, torch.get_num_threads()))


def make_synthetic_images(directory, count, size, seed=0):
    """Procedural covers: oriented gradient background + random rectangles."""
    rng = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) / size
        a, b = rng.uniform(-1, 1, 2)
        img = np.stack([(a * xx + b * yy), xx * yy, (1 - xx) * yy], axis=-1)
        img = (img - img.min()) / (img.max() - img.min() + 1e-9)
        img = 0.2 + 0.6 * img
        for _ in range(rng.integers(2, 6)):
            x0, y0 = rng.integers(0, size, 2)
            w, h = rng.integers(size // 8, size // 2, 2)
            color = rng.uniform(0.1, 0.9, 3)
            img[y0:y0 + h, x0:x0 + w] = 0.5 * img[y0:y0 + h, x0:x0 + w] + 0.5 * color
        img += rng.normal(0, 0.02, img.shape)
        arr = (np.clip(img, 0, 1) * 255).astype(np.uint8)
        path = directory / f"img_{i:04d}.png"
        Image.fromarray(arr).save(path)
        paths.append(path)
    return paths


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("covers")
    make_synthetic_images(root, 24, 32, seed=7)
    return root
