import math

import numpy as np
import pytest

from sgmnet import checkpoint as ckpt_io
from sgmnet import hdr
from sgmnet import tensor as T
from sgmnet.checkpoint import CheckpointError
from sgmnet.data import generate_set
from sgmnet.gradcheck import gradcheck
from sgmnet.network import FusionNet
from sgmnet.tensor import Tensor
from sgmnet.training import (LOG_HEADER, Adam, TrainConfig, TrainingError, adam_step, build_net,
                             net_from_checkpoint, read_log, sample_batch, scheduled_lr, stack_batch,
                             train, train_step)


@pytest.fixture(scope="module")
def tiny_set():
    return generate_set(2, 3, n=3, size=12)


def _tiny_cfg(**kw):
    base = dict(batch_size=2, patch_size=8, epochs=1, seed=4, learning_rate=1e-3)
    base.update(kw)
    return TrainConfig(**base)


class TestAdam:
    def test_zero_gradient_leaves_params_and_decays_moments(self, rng):
        p = rng.normal(size=5)
        before = p.copy()
        m, v = rng.normal(size=5), rng.uniform(size=5)
        m0, v0 = m.copy(), v.copy()
        adam_step(p, np.zeros(5), m, v, 1e-3, 0.9, 0.999, 1e-8, 1 - 0.9 ** 3, 1 - 0.999 ** 3)
        np.testing.assert_array_equal(m, 0.9 * m0)
        np.testing.assert_array_equal(v, 0.999 * v0)
        # with nonzero moments the update is driven by m alone; with m = 0 nothing moves
        p2 = before.copy()
        adam_step(p2, np.zeros(5), np.zeros(5), np.zeros(5), 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)
        np.testing.assert_array_equal(p2, before)

    def test_first_step_moves_by_lr(self, rng):
        # |g| >= 1e-2 keeps eps / |g| below 1e-6
        g = rng.choice([-1.0, 1.0], size=100) * 10 ** rng.uniform(-2, 3, size=100)
        p = np.zeros(100)
        adam_step(p, g, np.zeros(100), np.zeros(100), 2e-4, 0.9, 0.999, 1e-8, 0.1, 0.001)
        np.testing.assert_allclose(p, -2e-4 * np.sign(g), rtol=1e-5)

    def test_optimizer_first_step(self):
        w = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        w.grad = np.array([0.5, -3.0])
        opt = Adam({"w": w})
        opt.step(1e-3)
        np.testing.assert_allclose(w.data, [1.0 - 1e-3, -2.0 + 1e-3], rtol=1e-7)
        assert opt.t == 1

    def test_non_finite_gradient_names_parameter(self):
        w = Tensor(np.ones(2), requires_grad=True)
        opt = Adam({"decoder.out.kernel": w})
        with pytest.raises(FloatingPointError, match="decoder.out.kernel"):
            opt.step(1e-3, {"decoder.out.kernel": np.array([1.0, np.nan])})
        assert opt.t == 0


@pytest.mark.parametrize("epoch,expected", [(1, 2e-4), (25, 2e-4), (26, 1e-4), (50, 1e-4), (51, 5e-5), (76, 2.5e-5)])
def test_learning_rate_schedule(epoch, expected):
    assert scheduled_lr(2e-4, epoch) == expected


def test_schedule_rejects_epoch_zero():
    with pytest.raises(ValueError):
        scheduled_lr(1e-3, 0)


@pytest.mark.parametrize("kw", [dict(learning_rate=0), dict(batch_size=0), dict(patch_size=7),
                                dict(mode="both"), dict(precision="f16"), dict(cell_kind="type9")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_config_dict_roundtrip():
    cfg = TrainConfig(variable_length_set=(3, 5), shuffle_exposure_order=True, cell_kind="GRU")
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.cell_kind == "gru"


class TestBatches:
    def test_shuffle_keeps_target_and_reference(self, tiny_set):
        cfg = _tiny_cfg(shuffle_exposure_order=True, patch_size=12)
        rng = np.random.default_rng(1)
        orders = set()
        for _ in range(10):
            batch = sample_batch(tiny_set, [0, 1], cfg, rng)
            for b, seq in enumerate(tiny_set[:2]):
                np.testing.assert_array_equal(batch.target[b], seq.hdr_gt)
                np.testing.assert_array_equal(batch.frames[b, batch.ref_index[b]], seq.frames[seq.ref_index])
                assert sorted(batch.exposures[b]) == sorted(seq.exposure_times)
            orders.add(tuple(batch.exposures[0]))
        assert len(orders) > 1

    def test_variable_lengths(self):
        seqs = generate_set(1, 2, n=7, size=8)
        cfg = _tiny_cfg(variable_length_set=(3, 5, 7))
        rng = np.random.default_rng(0)
        seen = {sample_batch(seqs, [0, 1], cfg, rng).frames.shape[1] for _ in range(30)}
        assert seen == {3, 5, 7}

    def test_stack_requires_equal_lengths(self):
        a = generate_set(1, 1, n=3, size=8)[0]
        b = generate_set(1, 1, n=5, size=8)[0]
        with pytest.raises(ValueError):
            stack_batch([a, b])


class TestTrain:
    def test_zero_epochs_checkpoint_is_initialization(self, tiny_set, tmp_path):
        cfg = _tiny_cfg(epochs=0)
        result = train(cfg, tiny_set, ckpt_path=tmp_path / "m.sgmf")
        init = build_net(cfg).registry()
        saved = ckpt_io.load(tmp_path / "m.sgmf")
        assert result.steps == 0 and saved.step == 0
        for name, t in init.items():
            assert saved.tensors[name].tobytes() == t.data.tobytes()

    def test_same_seed_same_log(self, tiny_set, tmp_path):
        cfg = _tiny_cfg(shuffle_exposure_order=True)
        train(cfg, tiny_set, log_path=tmp_path / "a.csv")
        train(cfg, tiny_set, log_path=tmp_path / "b.csv")
        a = (tmp_path / "a.csv").read_text()
        assert a == (tmp_path / "b.csv").read_text()
        assert a.splitlines()[0] == ",".join(LOG_HEADER)
        rows = read_log(tmp_path / "a.csv")
        assert [int(r["step"]) for r in rows] == [1, 2]

    def test_max_steps_and_checkpoint_reload(self, tiny_set, tmp_path):
        cfg = _tiny_cfg(epochs=5, max_steps=3)
        result = train(cfg, tiny_set, ckpt_path=tmp_path / "m.sgmf")
        assert result.steps == 3
        ck = ckpt_io.load(tmp_path / "m.sgmf")
        assert ck.step == 3
        net = net_from_checkpoint(ck)
        for name, t in net.registry().items():
            assert t.data.tobytes() == result.net.registry()[name].data.tobytes()

    def test_non_finite_loss_keeps_last_good(self, tiny_set, tmp_path):
        path = tmp_path / "m.sgmf"
        snapshot = {}

        def poison(step, net):
            snapshot.update({k: v.data.copy() for k, v in net.registry().items()})
            net.decoder.out.bias.data[:] = np.nan
            return False

        with pytest.raises(TrainingError, match="step 2"):
            train(_tiny_cfg(epochs=3), tiny_set, ckpt_path=path, callback=poison)
        saved = ckpt_io.load(path)
        assert saved.step == 1
        for name, arr in snapshot.items():
            assert saved.tensors[name].tobytes() == arr.tobytes()

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train(_tiny_cfg(), [])

    def test_fixed_batch_loss_decreases(self):
        # overfit fixture (8 scenes, 64x64, N=3, seed 7); four scenes at 32x32 form the fixed batch
        fixture = generate_set(7, 8, n=3, size=64)
        cfg = TrainConfig(learning_rate=2e-4, batch_size=4, patch_size=32, seed=7)
        batch = sample_batch(fixture, [0, 1, 2, 3], cfg, np.random.default_rng(7))
        net = build_net(cfg)
        opt = Adam(net.registry())
        losses = [train_step(net, opt, batch, cfg.learning_rate)[0] for _ in range(51)]
        decreases = sum(b < a for a, b in zip(losses, losses[1:]))
        assert decreases >= 45, losses


class TestCheckpoint:
    def _ckpt(self, rng):
        net = FusionNet("gru", seed=1, ch=8)
        return ckpt_io.from_registry(net.registry(), 17, {"cell_kind": "gru", "lr": 1e-3})

    def test_roundtrip(self, rng, tmp_path):
        ck = self._ckpt(rng)
        ckpt_io.save(tmp_path / "c.sgmf", ck)
        back = ckpt_io.load(tmp_path / "c.sgmf")
        assert back.step == 17 and back.config == ck.config
        assert list(back.tensors) == list(ck.tensors)
        for name in ck.tensors:
            assert back.tensors[name].dtype == ck.tensors[name].dtype
            assert back.tensors[name].tobytes() == ck.tensors[name].tobytes()
        assert ckpt_io.to_bytes(back) == ckpt_io.to_bytes(ck)

    def test_layout_prefix(self, rng):
        ck = ckpt_io.Checkpoint({"w": np.array([1.5], np.float32)}, 2, {})
        raw = ckpt_io.to_bytes(ck)
        assert raw[:4] == b"SGMF"
        assert raw[4:12] == b"\x01\0\0\0\x01\0\0\0"
        assert raw[12:17] == b"\x01\0\0\0w"
        assert raw[17:19] == b"\x01\x01"
        assert raw[19:23] == b"\x01\0\0\0"
        assert np.frombuffer(raw[23:27], "<f4")[0] == 1.5

    def test_load_into_rejects_shape_mismatch(self, rng):
        ck = self._ckpt(rng)
        other = FusionNet("gru", seed=1, ch=16)
        with pytest.raises(CheckpointError, match="shape mismatch"):
            ckpt_io.load_into(other.registry(), ck)

    def test_load_into_rejects_other_names(self, rng):
        ck = self._ckpt(rng)
        with pytest.raises(CheckpointError, match="names"):
            ckpt_io.load_into(FusionNet("sgm", seed=1, ch=8).registry(), ck)

    @pytest.mark.parametrize("mutate,match", [
        (lambda b: b"XXXX" + b[4:], "magic"),
        (lambda b: b[:-3], "truncated|digest"),
        (lambda b: b + b"\0", "trailing"),
        (lambda b: b[:4] + b"\x09" + b[5:], "version"),
    ])
    def test_corruption_detected(self, rng, mutate, match):
        raw = ckpt_io.to_bytes(self._ckpt(rng))
        with pytest.raises(CheckpointError, match=match):
            ckpt_io.from_bytes(mutate(raw))

    def test_config_tamper_detected(self, rng):
        raw = bytearray(ckpt_io.to_bytes(self._ckpt(rng)))
        raw[-3] ^= 1
        with pytest.raises(CheckpointError, match="digest"):
            ckpt_io.from_bytes(bytes(raw))


class TestGradcheck:
    def test_linear_model_is_exact(self, rng):
        w = Tensor(rng.normal(size=(4, 3, 3, 3)), requires_grad=True)
        b = Tensor(rng.normal(size=4), requires_grad=True)
        x = rng.normal(size=(2, 3, 5, 5))
        r = rng.normal(size=(2, 4, 5, 5))
        report = gradcheck(lambda: T.reduce_mean(T.mul(T.conv2d(Tensor(x), w, b), Tensor(r))),
                           {"w": w, "b": b}, full=True, step=0.1)
        assert report.max_rel_error <= 1e-10
        assert report.coords_checked == w.size + b.size

    def test_small_net_passes(self, rng):
        net = FusionNet("sgm", seed=0, dtype=np.float64, ch=4)
        frames = rng.uniform(size=(1, 2, 3, 4, 4))
        target = rng.uniform(size=(1, 3, 4, 4))
        report = gradcheck(lambda: hdr.loss(net(frames, np.array([[0.5, 2.0]]), 0), target),
                           net.registry(), max_coords=10)
        assert report.passed, report.summary()

    def test_corrupted_backward_fails(self, rng, monkeypatch):
        from sgmnet import tensor as tensor_mod
        net = FusionNet("sgm", seed=0, dtype=np.float64, ch=4)
        frames = rng.uniform(size=(1, 2, 3, 4, 4))
        target = rng.uniform(size=(1, 3, 4, 4))
        monkeypatch.setattr(tensor_mod, "_swish_grad", lambda x, s: s)
        report = gradcheck(lambda: hdr.loss(net(frames, np.array([[0.5, 2.0]]), 0), target),
                           net.registry(), max_coords=10)
        assert not report.passed
        assert "FAIL" in report.summary()

    def test_requires_float64(self):
        w = Tensor(np.ones(2, np.float32), requires_grad=True)
        with pytest.raises(TypeError):
            gradcheck(lambda: T.reduce_mean(w), {"w": w})
