"""Shared helper: the 5000-image MNIST subset that ships with mlxtend,
written once as an IDX pair so the demos go through ``load_idx``."""
import gzip
import importlib.resources
import tempfile
from pathlib import Path

import numpy as np

from hbdr.dataio import load_data, write_idx


def digits_spec(cache=Path(tempfile.gettempdir()) / "hbdr-demo-digits"):
    images, labels = cache / "images-idx3-ubyte", cache / "labels-idx1-ubyte"
    if not images.exists():
        src = importlib.resources.files("mlxtend.data") / "data" / "mnist_5k.csv.gz"
        with gzip.open(src) as fh:
            raw = np.loadtxt(fh, delimiter=",")
        cache.mkdir(parents=True, exist_ok=True)
        write_idx(raw[:, :-1].reshape(-1, 28, 28), raw[:, -1], images, labels)
    return f"idx:{images},{labels}"


def load_digits():
    return load_data(digits_spec())


if __name__ == "__main__":
    print(digits_spec())
