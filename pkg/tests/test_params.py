"""Parameter store, optimizer semantics, and checkpoint serialization."""

import numpy as np
import pytest

from pvrfusion.errors import FormatError, InputError, UsageError
from pvrfusion.params import ParameterStore, optimizer_step
from pvrfusion.serialization import (
    CHECKPOINT_MAGIC,
    dump_checkpoint_bytes,
    load_checkpoint,
    parse_checkpoint_bytes,
    save_checkpoint,
)


class TestStore:
    def test_duplicate_path_rejected(self):
        store = ParameterStore()
        store.add("w", np.ones(2))
        with pytest.raises(UsageError):
            store.add("w", np.ones(2))

    def test_adam_state_matches_param_shapes(self):
        store = ParameterStore()
        w = store.add("w", np.ones((3, 2)))
        w._accumulate(np.ones((3, 2)))
        optimizer_step(store, 0.1, mode="adam")
        assert store.adam_m["w"].shape == (3, 2)
        assert store.adam_v["w"].shape == (3, 2)


class TestOptimizer:
    def test_sgd_step(self):
        store = ParameterStore()
        w = store.add("w", np.array([1.0]))
        w._accumulate(np.array([2.0]))
        optimizer_step(store, 0.1, mode="sgd")
        assert np.allclose(w.data, [0.8])

    def test_adam_first_step_opposes_gradient(self):
        store = ParameterStore()
        w = store.add("w", np.array([1.0, 1.0]))
        w._accumulate(np.array([0.5, -0.5]))
        optimizer_step(store, 1e-3, mode="adam")
        assert w.data[0] < 1.0 < w.data[1]

    def test_frozen_parameter_bit_identical(self):
        store = ParameterStore()
        w = store.add("enc.w", np.array([1.0, 2.0]))
        h = store.add("head.w", np.array([1.0, 2.0]))
        w._accumulate(np.array([5.0, 5.0]))
        h._accumulate(np.array([5.0, 5.0]))
        before = w.data.tobytes()
        optimizer_step(store, 0.1, mode="adam", frozen=("enc.",))
        assert w.data.tobytes() == before
        assert not np.array_equal(h.data, [1.0, 2.0])

    def test_every_param_with_gradient_moves(self):
        store = ParameterStore()
        rng = np.random.default_rng(0)
        tensors = [store.add(f"p{i}", rng.normal(size=3)) for i in range(4)]
        before = [t.data.copy() for t in tensors]
        for t in tensors:
            t._accumulate(rng.normal(size=3))
        optimizer_step(store, 1e-2, mode="adam")
        for t, prev in zip(tensors, before):
            assert not np.array_equal(t.data, prev)

    def test_gradients_zeroed_after_step(self):
        store = ParameterStore()
        w = store.add("w", np.ones(2))
        w._accumulate(np.ones(2))
        optimizer_step(store, 0.1, mode="sgd")
        assert np.array_equal(w.grad, np.zeros(2))

    def test_missing_gradient_is_usage_error(self):
        store = ParameterStore()
        store.add("w", np.ones(2))
        with pytest.raises(UsageError) as err:
            optimizer_step(store, 0.1)
        assert "w" in str(err.value)

    def test_unknown_mode(self):
        store = ParameterStore()
        with pytest.raises(InputError):
            optimizer_step(store, 0.1, mode="rmsprop")

    def test_adam_matches_reference_formula(self):
        store = ParameterStore()
        w = store.add("w", np.array([0.3]))
        g1, g2 = np.array([0.7]), np.array([-0.4])
        w._accumulate(g1)
        optimizer_step(store, 1e-2, mode="adam")
        w._accumulate(g2)
        optimizer_step(store, 1e-2, mode="adam")

        # straight-line reference
        x = np.array([0.3])
        m = np.zeros(1)
        v = np.zeros(1)
        for t, g in ((1, g1), (2, g2)):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x = x - 1e-2 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert np.allclose(w.data, x, atol=1e-15)


class TestCheckpointFormat:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(1)
        arrays = {
            "enc.w": rng.normal(size=(3, 4)),
            "enc.b": rng.normal(size=4),
            "head.w": rng.normal(size=(4, 2)),
        }
        path = tmp_path / "model.ckpt"
        save_checkpoint(arrays, str(path))
        loaded = load_checkpoint(str(path))
        assert list(loaded) == list(arrays)
        for key in arrays:
            assert arrays[key].tobytes() == loaded[key].tobytes()

    def test_layout_starts_with_magic_and_version(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint({"w": np.zeros(1)}, str(path))
        raw = path.read_bytes()
        assert raw[:4] == CHECKPOINT_MAGIC
        assert int.from_bytes(raw[4:8], "little") == 1

    def test_unknown_version_rejected(self):
        payload = CHECKPOINT_MAGIC + (99).to_bytes(4, "little")
        with pytest.raises(FormatError) as err:
            parse_checkpoint_bytes(payload)
        assert "version" in str(err.value)

    def test_bad_magic_rejected(self):
        with pytest.raises(FormatError):
            parse_checkpoint_bytes(b"XXXX" + (1).to_bytes(4, "little"))

    def test_truncation_rejected(self):
        payload = dump_checkpoint_bytes({"w": np.arange(8.0)})
        with pytest.raises(FormatError):
            parse_checkpoint_bytes(payload[:-5])

    def test_record_encoding_is_little_endian(self, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint({"x": np.array([1.0])}, str(path))
        raw = path.read_bytes()
        offset = 8  # magic + version
        path_len = int.from_bytes(raw[offset : offset + 4], "little")
        assert raw[offset + 4 : offset + 4 + path_len] == b"x"
        rank_at = offset + 4 + path_len
        assert int.from_bytes(raw[rank_at : rank_at + 4], "little") == 1
        assert int.from_bytes(raw[rank_at + 4 : rank_at + 8], "little") == 1
        assert np.frombuffer(raw[rank_at + 8 :], dtype="<f8")[0] == 1.0
