"""Architecture assembly: shape chains, parameter counts, determinism,
checkpoint round trips."""

import os

import numpy as np
import numpy.testing as npt
import pytest

from leancnn import checkpoint
from leancnn.errors import ConfigError, FormatError, ShapeError
from leancnn.models import ModelSpec, build, param_count_formula


def shapes_after_each_layer(model, x):
    out = []
    for name, layer in model.named_layers:
        x = layer.forward(x)
        out.append((name, x.shape))
    return out


class TestModelSpec:
    def test_defaults(self):
        b = ModelSpec(kind="btbcnn")
        m = ModelSpec(kind="btmcnn")
        assert b.num_classes == 1 and b.in_channels == 1 and b.input_size == 224
        assert m.num_classes == 4

    def test_validation(self):
        with pytest.raises(ConfigError):
            ModelSpec(kind="resnet")
        with pytest.raises(ConfigError):
            ModelSpec(kind="btbcnn", num_classes=2)
        with pytest.raises(ConfigError):
            ModelSpec(kind="btmcnn", num_classes=1)
        with pytest.raises(ConfigError):
            ModelSpec(kind="btmcnn", input_size=100)   # 100 % 8 != 0
        with pytest.raises(ConfigError):
            ModelSpec(kind="btbcnn", input_size=6)
        with pytest.raises(ConfigError):
            ModelSpec(kind="btbcnn", in_channels=0)

    def test_dict_round_trip(self):
        spec = ModelSpec(kind="btmcnn", in_channels=1, num_classes=4,
                         input_size=64)
        assert ModelSpec.from_dict(spec.to_dict()) == spec


class TestShapeChain:
    def test_btbcnn_224_chain(self):
        m = build(ModelSpec(kind="btbcnn"), 0)
        m.set_mode(False)
        shapes = dict(shapes_after_each_layer(m, np.zeros((1, 1, 224, 224),
                                                          np.float32)))
        assert shapes["3.pool"] == (1, 32, 112, 112)
        assert shapes["7.pool"] == (1, 64, 56, 56)
        assert shapes["8.flatten"] == (1, 64 * 56 * 56)
        assert shapes["9.dense"] == (1, 512)
        assert shapes["12.dense"] == (1, 1)

    def test_btmcnn_224_chain(self):
        m = build(ModelSpec(kind="btmcnn"), 0)
        m.set_mode(False)
        shapes = dict(shapes_after_each_layer(m, np.zeros((1, 1, 224, 224),
                                                          np.float32)))
        assert shapes["11.pool"] == (1, 128, 28, 28)
        assert shapes["12.flatten"] == (1, 128 * 28 * 28)
        assert shapes["16.dense"] == (1, 4)

    def test_input_shape_enforced(self):
        m = build(ModelSpec(kind="btbcnn", input_size=32), 0)
        with pytest.raises(ShapeError):
            m.forward(np.zeros((1, 1, 64, 64), np.float32))
        with pytest.raises(ShapeError):
            m.forward(np.zeros((1, 3, 32, 32), np.float32))

    def test_default_loss(self):
        assert build(ModelSpec(kind="btbcnn", input_size=16), 0).default_loss == "bce"
        assert build(ModelSpec(kind="btmcnn", input_size=16), 0).default_loss == "ce"


class TestParamCounts:
    """Counts from summing per-layer arithmetic written out longhand here,
    kept independent of both build() and param_count_formula()."""

    def hand_count(self, in_ch, blocks, flat, classes):
        total = 0
        cin = in_ch
        for b in range(blocks):
            cout = 32 * (2 ** b)
            total += cout * cin * 9 + cout      # conv weight + bias
            total += cout + cout                # bn gamma + beta
            cin = cout
        total += flat * 512 + 512               # dense 1
        total += 512 * classes + classes        # dense 2
        return total

    def test_btbcnn_single_channel(self):
        m = build(ModelSpec(kind="btbcnn"), 0)
        want = self.hand_count(1, 2, 64 * 56 * 56, 1)
        assert m.param_count() == want == 102_780_481

    def test_btmcnn_single_channel(self):
        m = build(ModelSpec(kind="btmcnn"), 0)
        want = self.hand_count(1, 3, 128 * 28 * 28, 4)
        assert m.param_count() == want == 51_475_908

    def test_btmcnn_three_channel_matches_published_total(self):
        """With 3 input channels the multi-class model lands exactly on the
        published 51,476,484 figure (the extra 576 = 2 more input channels
        through the first 3x3x32 conv)."""
        spec = ModelSpec(kind="btmcnn", in_channels=3)
        assert param_count_formula(spec) == \
            self.hand_count(3, 3, 128 * 28 * 28, 4) == 51_476_484

    def test_formula_matches_build_across_combos(self):
        for kind in ("btbcnn", "btmcnn"):
            for ch in (1, 2, 3):
                for size in (16, 32, 64):
                    nc = 1 if kind == "btbcnn" else 4
                    spec = ModelSpec(kind=kind, in_channels=ch,
                                     num_classes=nc, input_size=size)
                    m = build(spec, 1)
                    blocks = 2 if kind == "btbcnn" else 3
                    flat = (32 * 2 ** (blocks - 1)) * (size // 2 ** blocks) ** 2
                    assert m.param_count() == \
                        self.hand_count(ch, blocks, flat, nc)

    def test_running_stats_not_counted_but_saved(self):
        m = build(ModelSpec(kind="btbcnn", input_size=16), 0)
        n_params = len(m.params())
        n_state = len(m.state_tensors())
        assert n_state == n_params + 2 * 2   # two bn layers, mean+var each
        bn_sizes = sum(a.size for n, a in m.state_tensors()
                       if n.endswith(("running_mean", "running_var")))
        assert sum(a.size for _, a in m.state_tensors()) \
            == m.param_count() + bn_sizes


class TestBuildDeterminism:
    def test_same_seed_same_weights(self):
        a = build(ModelSpec(kind="btbcnn", input_size=16), 42)
        b = build(ModelSpec(kind="btbcnn", input_size=16), 42)
        assert a.param_hash() == b.param_hash()
        for (_, pa), (_, pb) in zip(a.params(), b.params()):
            npt.assert_array_equal(pa, pb)

    def test_different_seed_different_weights(self):
        a = build(ModelSpec(kind="btbcnn", input_size=16), 1)
        b = build(ModelSpec(kind="btbcnn", input_size=16), 2)
        assert a.param_hash() != b.param_hash()

    def test_seed_validation(self):
        with pytest.raises(ConfigError):
            build(ModelSpec(kind="btbcnn", input_size=16), -1)
        with pytest.raises(ConfigError):
            build(ModelSpec(kind="btbcnn", input_size=16), 1.5)

    def test_dtype_validation(self):
        with pytest.raises(ConfigError):
            build(ModelSpec(kind="btbcnn", input_size=16), 0, dtype=np.float16)


class TestForwardConsistency:
    def test_batch_equals_per_sample_in_eval(self):
        m = build(ModelSpec(kind="btmcnn", input_size=16), 9)
        m.set_mode(False)
        rng = np.random.default_rng(10)
        x = rng.random((6, 1, 16, 16), dtype=np.float32)
        whole = m.forward(x)
        singles = np.concatenate([m.forward(x[i:i + 1]) for i in range(6)])
        npt.assert_allclose(whole, singles, atol=1e-5)

    def test_eval_forward_is_repeatable(self):
        m = build(ModelSpec(kind="btbcnn", input_size=16), 5)
        m.set_mode(False)
        x = np.random.default_rng(0).random((3, 1, 16, 16), dtype=np.float32)
        npt.assert_array_equal(m.forward(x), m.forward(x))

    def test_eval_forward_changes_no_state(self):
        m = build(ModelSpec(kind="btbcnn", input_size=16), 5)
        m.set_mode(False)
        h0 = m.param_hash()
        m.forward(np.random.default_rng(1).random((2, 1, 16, 16),
                                                  dtype=np.float32))
        assert m.param_hash() == h0


class TestCheckpoint:
    def roundtrip(self, tmp_path, model, meta=None):
        path = os.path.join(tmp_path, "model.lcnn")
        checkpoint.save(model, path, meta=meta)
        return path, checkpoint.load(path)

    def test_round_trip_bit_exact(self, tmp_path):
        m = build(ModelSpec(kind="btmcnn", input_size=16), 11)
        path, m2 = self.roundtrip(tmp_path, m, meta={"epochs": 5, "lr": 1e-3})
        assert m2.param_hash() == m.param_hash()
        assert m2.spec == m.spec and m2.seed == m.seed
        assert m2.checkpoint_meta == {"epochs": 5, "lr": 1e-3}
        for (na, a), (nb, b) in zip(m.state_tensors(), m2.state_tensors()):
            assert na == nb
            npt.assert_array_equal(a, b)

    def test_trained_running_stats_survive(self, tmp_path):
        m = build(ModelSpec(kind="btbcnn", input_size=16), 2)
        x = np.random.default_rng(3).random((4, 1, 16, 16), dtype=np.float32)
        m.forward(x)   # train-mode forward updates bn running stats
        path, m2 = self.roundtrip(tmp_path, m)
        assert m2.param_hash() == m.param_hash()

    def test_float64_save_refused(self, tmp_path):
        m = build(ModelSpec(kind="btbcnn", input_size=16), 0, dtype=np.float64)
        with pytest.raises(ConfigError):
            checkpoint.save(m, os.path.join(tmp_path, "x.lcnn"))

    def _bytes(self, tmp_path):
        m = build(ModelSpec(kind="btbcnn", input_size=16), 0)
        path = os.path.join(tmp_path, "m.lcnn")
        checkpoint.save(m, path)
        with open(path, "rb") as f:
            return path, f.read()

    def test_bad_magic(self, tmp_path):
        path, data = self._bytes(tmp_path)
        with open(path, "wb") as f:
            f.write(b"NNCL" + data[4:])
        with pytest.raises(FormatError, match="magic"):
            checkpoint.load(path)

    def test_bad_version(self, tmp_path):
        path, data = self._bytes(tmp_path)
        with open(path, "wb") as f:
            f.write(data[:4] + b"\x63\x00" + data[6:])
        with pytest.raises(FormatError, match="version"):
            checkpoint.load(path)

    def test_truncated(self, tmp_path):
        path, data = self._bytes(tmp_path)
        with open(path, "wb") as f:
            f.write(data[:len(data) // 2])
        with pytest.raises(FormatError, match="truncated"):
            checkpoint.load(path)

    def test_trailing_bytes(self, tmp_path):
        path, data = self._bytes(tmp_path)
        with open(path, "wb") as f:
            f.write(data + b"\x00\x00\x00")
        with pytest.raises(FormatError, match="trailing"):
            checkpoint.load(path)

    def test_corrupted_tensor_name(self, tmp_path):
        path, data = self._bytes(tmp_path)
        pos = data.find(b"0.conv.weight")
        assert pos > 0
        mutated = data[:pos] + b"9" + data[pos + 1:]
        with open(path, "wb") as f:
            f.write(mutated)
        with pytest.raises(FormatError, match="order mismatch"):
            checkpoint.load(path)

    def test_header_magic_value(self, tmp_path):
        """The on-disk prefix is exactly LCNN + little-endian version 1."""
        path, data = self._bytes(tmp_path)
        assert data[:4] == b"LCNN"
        assert data[4:6] == b"\x01\x00"
