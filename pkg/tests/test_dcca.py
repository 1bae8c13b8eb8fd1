import numpy as np
import pytest
import torch

from bdcca._validation import SingularCovarianceError
from bdcca.cca import cca_fit
from bdcca.checkpoint import CheckpointError, load_checkpoint
from bdcca.dcca import DCCA, Encoder, dcca_loss, flatten_frames, write_loss_log

from oracles import central_difference, independent_trace_norm


def loss_value(h1, h2, r1):
    return dcca_loss(h1, h2, r1)[0]


def relative_error(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


class TestLoss:
    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        h1, h2 = rng.normal(size=(4, 30)), rng.normal(size=(4, 30))
        h2 += 0.5 * h1
        _, g1, g2 = dcca_loss(h1, h2, 1e-3)
        fd1 = central_difference(lambda x: loss_value(x, h2, 1e-3), h1)
        fd2 = central_difference(lambda x: loss_value(h1, x, 1e-3), h2)
        assert relative_error(g1, fd1) <= 1e-4
        assert relative_error(g2, fd2) <= 1e-4

    def test_gradient_non_square(self):
        rng = np.random.default_rng(11)
        h1, h2 = rng.normal(size=(3, 25)), rng.normal(size=(5, 25))
        _, g1, g2 = dcca_loss(h1, h2, 1e-2)
        assert relative_error(g1, central_difference(lambda x: loss_value(x, h2, 1e-2), h1)) <= 1e-4
        assert relative_error(g2, central_difference(lambda x: loss_value(h1, x, 1e-2), h2)) <= 1e-4

    def test_identical_views_limit(self):
        h = np.random.default_rng(0).normal(size=(4, 50))
        assert abs(loss_value(h, h, 1e-10) + 4) < 1e-6

    def test_matches_independent_svd(self):
        rng = np.random.default_rng(1)
        h1, h2 = rng.normal(size=(4, 40)), rng.normal(size=(4, 40))
        h2 += h1
        assert abs(loss_value(h1, h2, 1e-3) + independent_trace_norm(h1, h2, 1e-3)) < 1e-8

    def test_stationary_at_maximum(self):
        rng = np.random.default_rng(2)
        h1 = rng.normal(size=(4, 30))
        q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        h2 = q @ h1
        value, g1, g2 = dcca_loss(h1, h2, 0.0)
        assert abs(value + 4) < 1e-10
        assert np.linalg.norm(g1) <= 1e-6 and np.linalg.norm(g2) <= 1e-6

    def test_invertible_map_invariance(self):
        rng = np.random.default_rng(3)
        h1, h2 = rng.normal(size=(4, 40)), rng.normal(size=(4, 40))
        h2 += 0.3 * h1
        a = rng.normal(size=(4, 4)) + 2 * np.eye(4)
        assert abs(loss_value(h1, h2, 0.0) - loss_value(a @ h1, h2, 0.0)) < 1e-6

    def test_singular_without_regularization(self):
        h = np.ones((3, 10))
        h[0] = np.arange(10)
        with pytest.raises(SingularCovarianceError, match="r1 > 0"):
            dcca_loss(h, h, 0.0)

    def test_flatten_frames_order(self):
        h = torch.arange(2 * 3 * 4).reshape(2, 3, 4)
        flat = flatten_frames(h)
        assert flat.shape == (3, 8)
        assert flat[1].tolist() == h[0, 1].tolist() + h[1, 1].tolist()


class TestEncoder:
    def test_reference_shape(self):
        enc = Encoder(257).eval()
        with torch.no_grad():
            out = enc(torch.rand(2, 257, 375))
        assert out.shape == (2, 50, 375)

    def test_zero_output_layer(self):
        torch.manual_seed(0)
        enc = Encoder(20, out_channels=6).eval()
        with torch.no_grad():
            enc.output_layer.weight.zero_()
            enc.output_layer.bias.zero_()
            assert not enc(torch.rand(3, 20, 30)).any()

    def test_repeated_calls_identical(self):
        model = DCCA(n_components=4, channels=(8, 8, 8), n_steps=2, batch_size=2)
        x = np.random.default_rng(0).random((4, 10, 30))
        model.fit(x, x)
        assert np.array_equal(model.transform(x), model.transform(x))

    def test_time_equivariance_interior(self):
        torch.manual_seed(0)
        enc = Encoder(10, channels=(8, 8, 8), out_channels=4).eval()
        x = torch.rand(1, 10, 80)
        s, t, radius = 7, 60, 4 * 2
        with torch.no_grad():
            a = enc(x[:, :, :t])
            b = enc(x[:, :, s:s + t])
        interior = slice(radius, t - s - radius)
        shifted = slice(radius + s, t - radius)
        torch.testing.assert_close(b[:, :, interior], a[:, :, shifted], rtol=1e-5, atol=1e-5)


def linear_pair(seed=0, clips=40, rows=8, frames=40, noise=0.01):
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=(clips, rows, frames))
    a = rng.normal(size=(rows, rows)) + 2 * np.eye(rows)
    x2 = np.einsum("ij,cjt->cit", a, x1) + noise * rng.normal(size=x1.shape)
    return x1, x2


class TestTraining:
    def small(self, **kw):
        params = dict(n_components=4, channels=(16, 16, 8), n_steps=3, batch_size=4,
                      random_state=0)
        params.update(kw)
        return DCCA(**params)

    def test_zero_learning_rate_keeps_parameters(self):
        x1, x2 = linear_pair()
        model = self.small(learning_rate=0.0, n_steps=5)
        model._build(x1.shape[1])
        before = {k: v.clone() for k, v in model.encoder_mic_.named_parameters()}
        model.fit(x1, x2)
        for k, v in model.encoder_mic_.named_parameters():
            assert torch.equal(v, before[k])

    def test_seeded_runs_identical(self):
        x1, x2 = linear_pair()
        a = self.small().fit(x1, x2)
        b = self.small().fit(x1, x2)
        for (ka, va), (_, vb) in zip(a.encoder_accel_.state_dict().items(),
                                     b.encoder_accel_.state_dict().items()):
            assert torch.equal(va, vb), ka
        assert a.loss_curve_ == b.loss_curve_

    def test_recovers_linear_relation(self):
        x1, x2 = linear_pair()
        # classical CCA on the raw views shows every direction is almost perfectly shared
        raw = cca_fit(np.concatenate(list(x1), axis=1), np.concatenate(list(x2), axis=1))
        assert raw.correlations.min() > 0.99
        model = self.small(optimizer="adam", learning_rate=1e-2, n_steps=150)
        model.fit(x1, x2)
        assert model.probe_loss_final_ <= model.probe_loss_initial_
        assert model.score(x1[:8], x2[:8]) > 0.9 * 4

    def test_rejects_unsynchronized_views(self):
        x1, x2 = linear_pair()
        with pytest.raises(ValueError, match="synchronized"):
            self.small().fit(x1, x2[:-1])

    def test_rejects_too_short_clips(self):
        x = np.random.default_rng(0).random((4, 8, 12))
        with pytest.raises(ValueError, match="too short"):
            self.small().fit(x, x)

    def test_get_params(self):
        params = self.small().get_params()
        assert params["n_components"] == 4 and params["optimizer"] == "sgd"


class TestPersistence:
    def test_checkpoint_round_trip(self, tmp_path):
        x1, x2 = linear_pair(clips=8)
        model = DCCA(n_components=4, channels=(8, 8, 8), n_steps=3, batch_size=4).fit(x1, x2)
        path = tmp_path / "m.bdcc"
        model.save(path)
        assert path.read_bytes()[:4] == b"BDCC"
        loaded = DCCA.load(path)
        assert np.array_equal(loaded.transform(x1), model.transform(x1))
        assert np.array_equal(loaded.transform(x2, "accel"), model.transform(x2, "accel"))
        assert loaded.get_params() == model.get_params()

    def test_corrupt_checkpoints(self, tmp_path):
        x1, x2 = linear_pair(clips=8)
        model = DCCA(n_components=4, channels=(8, 8, 8), n_steps=1, batch_size=4).fit(x1, x2)
        path = tmp_path / "m.bdcc"
        model.save(path)
        data = path.read_bytes()
        (tmp_path / "magic.bdcc").write_bytes(b"XXXX" + data[4:])
        with pytest.raises(CheckpointError, match="not a BDCC"):
            load_checkpoint(tmp_path / "magic.bdcc")
        (tmp_path / "short.bdcc").write_bytes(data[:-7])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(tmp_path / "short.bdcc")

    def test_loss_log(self, tmp_path):
        write_loss_log(tmp_path / "log.csv", [-1.5, -2.25])
        assert (tmp_path / "log.csv").read_text() == "step,loss\n0,-1.5\n1,-2.25\n"
