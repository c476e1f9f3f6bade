import numpy as np
import pytest
from PIL import Image


def write_png(path, seed, size=(48, 40)):
    rng = np.random.default_rng(seed)
    arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
    Image.fromarray(arr, mode="RGB").save(path)


@pytest.fixture
def toy_dataset(tmp_path):
    """10-image folder: two classes of five deterministic PNGs each."""
    root = tmp_path / "toy-images"
    for cls, name in enumerate(("cat", "dog")):
        cdir = root / name
        cdir.mkdir(parents=True)
        for i in range(5):
            write_png(cdir / f"img_{i:02d}.png", seed=cls * 100 + i)
    return root
