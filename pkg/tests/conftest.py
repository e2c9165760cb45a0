import gzip
import importlib.resources

import numpy as np
import pytest

from hbdr.dataio import write_idx


def mnist_5k_arrays():
    """The 5000-image MNIST subset shipped with mlxtend (500 per class), as
    uint8 ``[N, 28, 28]`` images and labels. ``None`` when unavailable."""
    try:
        path = importlib.resources.files("mlxtend.data") / "data" / "mnist_5k.csv.gz"
        with gzip.open(path) as fh:
            raw = np.loadtxt(fh, delimiter=",")
    except (ModuleNotFoundError, FileNotFoundError):
        return None
    return raw[:, :-1].reshape(-1, 28, 28).astype(np.uint8), raw[:, -1].astype(np.uint8)


@pytest.fixture(scope="session")
def mnist_idx(tmp_path_factory):
    """``idx:<images>,<labels>`` spec of the mlxtend MNIST subset written as IDX."""
    arrays = mnist_5k_arrays()
    if arrays is None:
        pytest.skip("mlxtend MNIST subset not installed")
    d = tmp_path_factory.mktemp("mnist")
    write_idx(*arrays, d / "images-idx3-ubyte", d / "labels-idx1-ubyte")
    return f"idx:{d / 'images-idx3-ubyte'},{d / 'labels-idx1-ubyte'}"


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
