import struct

import numpy as np
import pytest

from eegmobile import FormatError
from eegmobile.checkpoint import load_model, read_tensors, save_model, write_tensors
from eegmobile.models import build_student, build_teacher, predict, tiny_student_config, tiny_teacher_config


def test_tensor_file_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"a": rng.standard_normal((2, 3)).astype(np.float32),
               "scalar": np.array(1.5, np.float32),
               "ünï": np.array([np.float32(1e-40), -0.0], np.float32)}
    write_tensors(tmp_path / "t.ckpt", tensors)
    back = read_tensors(tmp_path / "t.ckpt")
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].shape == tensors[k].shape
        assert back[k].tobytes() == tensors[k].tobytes()


def test_layout(tmp_path):
    write_tensors(tmp_path / "t.ckpt", {"w": np.array([[1.0, 2.0]], np.float32)})
    raw = (tmp_path / "t.ckpt").read_bytes()
    expected = (b"EGMW" + struct.pack("<II", 1, 1) + struct.pack("<I", 1) + b"w" + struct.pack("<I", 2)
                + struct.pack("<2Q", 1, 2) + struct.pack("<2f", 1.0, 2.0))
    assert raw == expected


def test_format_errors(tmp_path):
    path = tmp_path / "t.ckpt"
    write_tensors(path, {"w": np.ones(4, np.float32)})
    good = path.read_bytes()
    path.write_bytes(b"NOPE" + good[4:])
    with pytest.raises(FormatError, match="magic"):
        read_tensors(path)
    path.write_bytes(good[:-1])
    with pytest.raises(FormatError, match="truncated"):
        read_tensors(path)
    path.write_bytes(good + b"x")
    with pytest.raises(FormatError, match="trailing"):
        read_tensors(path)
    dup = good[:8] + struct.pack("<I", 2) + good[12:] + good[12:]
    path.write_bytes(dup)
    with pytest.raises(FormatError, match="duplicate"):
        read_tensors(path)


@pytest.mark.parametrize("arch", ["student", "teacher"])
def test_model_round_trip(tmp_path, arch):
    m = (build_student(tiny_student_config(), seed=4) if arch == "student"
         else build_teacher(tiny_teacher_config(), seed=4))
    m.buffers["head.target_mean"][:] = [400, 300]
    save_model(m, tmp_path / "m.ckpt")
    back = load_model(tmp_path / "m.ckpt")
    assert back.arch == arch and back.config == m.config
    assert all(back.state()[k].tobytes() == v.tobytes() for k, v in m.state().items())
    x = np.random.default_rng(1).standard_normal((2, 129, 500)).astype(np.float32)
    assert predict(back, x).tobytes() == predict(m, x).tobytes()


def test_load_rejects_mismatched_state(tmp_path):
    m = build_student(tiny_student_config(), seed=0)
    save_model(m, tmp_path / "m.ckpt")
    state = read_tensors(tmp_path / "m.ckpt")
    state.pop("head.b")
    write_tensors(tmp_path / "m.ckpt", state)
    with pytest.raises(Exception, match="head.b"):
        load_model(tmp_path / "m.ckpt")
