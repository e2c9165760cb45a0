import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from hbdr.dbn import DbnClassifier
from hbdr.modelfile import (ModelFile, ModelFormatError, network_from_file, network_to_file,
                            stack_from_file, stack_to_file)
from hbdr.rbm import init_rbm
from hbdr.tensor import make_rng
from hbdr.training import NetworkConfig, build_network

names = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=12)
tensors = arrays(np.float32, array_shapes(min_dims=1, max_dims=4, max_side=5),
                 elements=st.floats(width=32, allow_nan=False))


@given(st.sampled_from(["cnn", "dbn", "rbm-stack"]), st.text(max_size=200),
       st.dictionaries(names, tensors, max_size=5))
@settings(max_examples=60, deadline=None)
def test_round_trip_is_bit_exact(kind, config_text, tensor_map):
    mf = ModelFile(kind, config_text, tensor_map)
    back = ModelFile.from_bytes(mf.to_bytes())
    assert back.kind == kind and back.config_text == config_text
    assert list(back.tensors) == list(tensor_map)
    for k, v in tensor_map.items():
        assert back.tensors[k].shape == v.shape
        assert back.tensors[k].tobytes() == v.tobytes()


def test_layout_by_hand():
    raw = ModelFile("dbn", "a = 1\n", {"w": np.array([[1.0, -2.0]], np.float32)}).to_bytes()
    expected = (b"HBDR" + struct.pack("<I", 1) + b"\x03dbn" + struct.pack("<I", 6) + b"a = 1\n"
                + struct.pack("<H", 1) + b"w" + b"\x02" + struct.pack("<II", 1, 2)
                + struct.pack("<ff", 1.0, -2.0))
    assert raw == expected


def test_bad_magic_and_version(tmp_path):
    good = ModelFile("cnn", "", {}).to_bytes()
    with pytest.raises(ModelFormatError, match="magic"):
        ModelFile.from_bytes(b"HBDX" + good[4:])
    with pytest.raises(ModelFormatError, match="version"):
        ModelFile.from_bytes(good[:4] + struct.pack("<I", 2) + good[8:])
    (tmp_path / "bad").write_bytes(b"JUNK" + b"\xff" * 100)
    with pytest.raises(ModelFormatError, match="magic"):
        ModelFile.load(tmp_path / "bad")


def test_truncated_and_unknown_kind():
    raw = ModelFile("cnn", "x", {"t": np.ones((3, 3), np.float32)}).to_bytes()
    with pytest.raises(ModelFormatError):
        ModelFile.from_bytes(raw[:-4])
    with pytest.raises(ModelFormatError):
        ModelFile.from_bytes(raw[:6])
    with pytest.raises(ModelFormatError):
        ModelFile("svm", "", {}).to_bytes()


def test_cnn_round_trip_predicts_identically(tmp_path):
    cfg = NetworkConfig(variant="cnn-gabor-dropout", seed=3)
    net = build_network(cfg)
    x = np.random.default_rng(0).random((4, 1, 32, 32)).astype(np.float32)
    network_to_file(net, cfg.to_text()).save(tmp_path / "m.hbdr")
    back = network_from_file(ModelFile.load(tmp_path / "m.hbdr"))
    assert back.predict_proba(x).tobytes() == net.predict_proba(x).tobytes()
    assert back.keep_prob == 0.5


def test_stack_and_dbn_round_trip(tmp_path):
    rng = make_rng(0, "init")
    stack = [init_rbm(16, 5, rng), init_rbm(5, 4, rng)]
    mf = stack_to_file(stack, "variant = dbn\n")
    back = stack_from_file(ModelFile.from_bytes(mf.to_bytes()))
    assert [p.w.tobytes() for p in back] == [p.w.tobytes() for p in stack]
    with pytest.raises(ModelFormatError):
        network_from_file(mf)

    cfg = NetworkConfig(variant="dbn", image_size=4, dbn_hidden=(5, 4))
    net = DbnClassifier.from_stack(stack, 10, rng)
    x = np.random.default_rng(1).random((3, 1, 4, 4)).astype(np.float32)
    restored = network_from_file(ModelFile.from_bytes(network_to_file(net, cfg.to_text()).to_bytes()))
    assert restored.predict_proba(x).tobytes() == net.predict_proba(x).tobytes()


def test_missing_tensor():
    cfg = NetworkConfig()
    with pytest.raises(ModelFormatError, match="lacks"):
        network_from_file(ModelFile("cnn", cfg.to_text(), {}))
    with pytest.raises(ModelFormatError):
        stack_from_file(ModelFile("cnn", "", {}))
