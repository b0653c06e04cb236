"""Neural field: encoding, initialization, derivatives, checkpoints."""

import numpy as np
import pytest
import torch

from azstereo.field import (
    AnalyticTorchField,
    CheckpointFormatError,
    NetworkSpec,
    SDFNetwork,
    field_eval,
    load_checkpoint,
    parameter_gradients,
    positional_encoding,
    save_checkpoint,
)
from azstereo.shapes import Sphere

TINY = NetworkSpec(hidden_width=8, n_layers=2, skip_layer=None, encoding_frequencies=2)
SMALL = NetworkSpec(hidden_width=16, n_layers=4, skip_layer=2, encoding_frequencies=4)


def scrambled(spec, seed=0, scale=0.05):
    net = SDFNetwork.init_sphere(seed, spec)
    gen = torch.Generator().manual_seed(seed + 1000)
    with torch.no_grad():
        for p in net.parameters():
            p += torch.randn(p.shape, generator=gen) * scale
    return net


class TestEncoding:
    def test_zero_point(self):
        enc = positional_encoding(np.zeros(3), 10)
        assert enc.shape == (60,)
        enc = enc.reshape(10, 6)
        assert np.all(enc[:, :3] == 0.0) and np.all(enc[:, 3:] == 1.0)

    def test_first_frequency_values(self):
        enc = positional_encoding(np.array([0.5, 0.0, 0.0]), 10).reshape(10, 6)
        assert enc[0, 0] == pytest.approx(1.0)  # sin(pi/2)
        assert enc[0, 3] == pytest.approx(0.0, abs=1e-12)  # cos(pi/2)

    def test_single_frequency(self):
        enc = positional_encoding(np.ones(3), 1)
        assert enc.shape == (6,)
        assert np.allclose(enc[:3], 0.0, atol=1e-12)
        assert np.allclose(enc[3:], -1.0)

    def test_length_is_six_per_frequency(self):
        for L in (1, 3, 10):
            assert positional_encoding(np.ones(3), L).shape == (6 * L,)

    def test_negation_symmetry(self):
        x = np.array([0.3, -0.7, 0.2])
        L = 6
        a = positional_encoding(x, L).reshape(L, 6)
        b = positional_encoding(-x, L).reshape(L, 6)
        assert np.allclose(b[:, :3], -a[:, :3])
        assert np.allclose(b[:, 3:], a[:, 3:])

    def test_batched(self):
        pts = np.random.default_rng(0).normal(size=(7, 3))
        enc = positional_encoding(pts, 5)
        assert enc.shape == (7, 30)
        assert np.allclose(enc[2], positional_encoding(pts[2], 5))


class TestSphereInit:
    @pytest.mark.parametrize("width", [64, 256])
    def test_zero_set_near_radius(self, width):
        net = SDFNetwork.init_sphere(0, NetworkSpec(hidden_width=width))
        assert abs(net.sdf(np.zeros((1, 3)))[0] + 0.6) < 0.05
        rng = np.random.default_rng(1)
        dirs = rng.normal(size=(100, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        assert np.abs(net.sdf(0.6 * dirs)).max() < 0.05
        assert net.sdf(dirs).min() > 0.0

    def test_deterministic(self):
        a = SDFNetwork.init_sphere(5)
        b = SDFNetwork.init_sphere(5)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_seed_changes_parameters(self):
        a = SDFNetwork.init_sphere(5, SMALL)
        b = SDFNetwork.init_sphere(6, SMALL)
        assert any(not torch.equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters()))

    def test_configurable_radius(self):
        net = SDFNetwork.init_sphere(0, NetworkSpec(hidden_width=64, sphere_radius=0.4))
        assert abs(net.sdf(np.zeros((1, 3)))[0] + 0.4) < 0.05


class TestEvaluation:
    def test_gradient_matches_finite_differences(self):
        net = scrambled(SMALL, seed=3)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.8, 0.8, size=(100, 3))
        _, grad = net.sdf_gradient(pts)
        h = 1e-5
        pts_t = torch.from_numpy(pts)
        with torch.no_grad():
            fd = np.zeros_like(grad)
            for k in range(3):
                e = torch.zeros(3)
                e[k] = h
                fd[:, k] = (net.forward(pts_t + e) - net.forward(pts_t - e)).numpy() / (2 * h)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-6)
        assert rel.max() < 1e-4

    def test_fast_path_matches_graph_path(self):
        net = scrambled(SMALL, seed=4)
        pts = np.random.default_rng(2).uniform(-1, 1, size=(50, 3))
        with torch.no_grad():
            exact = net.forward(torch.from_numpy(pts)).numpy()
        assert np.abs(net.sdf(pts) - exact).max() < 1e-5

    def test_field_eval(self):
        net = SDFNetwork.init_sphere(0, NetworkSpec(hidden_width=64))
        ev = field_eval(net, (0.9, 0.0, 0.0))
        assert ev.value == pytest.approx(0.3, abs=0.05)
        assert ev.gradient.shape == (3,)


def loss_cases(net, x0):
    t = torch.tensor([0.3, 0.9, -0.3], dtype=torch.float64)
    t = t / t.norm()

    def value_loss():
        return net.forward(x0).sum()

    def gradient_norm_loss():
        _, g = net.gradient(x0, create_graph=True)
        return (g.norm(dim=1) ** 2).sum()

    def tangent_loss():
        _, g = net.gradient(x0, create_graph=True)
        return ((g @ t) ** 2).sum()

    return {"value": value_loss, "grad_norm": gradient_norm_loss, "tangent": tangent_loss}


class TestParameterGradients:
    @pytest.mark.parametrize("case", ["value", "grad_norm", "tangent"])
    def test_matches_finite_differences(self, case):
        net = scrambled(TINY, seed=1, scale=0.03)
        x0 = torch.tensor([[0.21, -0.34, 0.11], [-0.4, 0.2, 0.3]], dtype=torch.float64)
        loss_fn = loss_cases(net, x0)[case]
        params = net.parameters()
        grads = parameter_gradients(loss_fn(), params)
        h = 1e-6
        worst = 0.0
        for p, g in zip(params, grads):
            flat = p.detach().reshape(-1)
            gflat = g.reshape(-1)
            for i in range(len(flat)):
                with torch.no_grad():
                    flat[i] += h
                up = float(loss_fn().detach())
                with torch.no_grad():
                    flat[i] -= 2 * h
                down = float(loss_fn().detach())
                with torch.no_grad():
                    flat[i] += h
                fd = (up - down) / (2 * h)
                if abs(fd) > 1e-7:
                    worst = max(worst, abs(float(gflat[i]) - fd) / max(abs(fd), 1e-10))
        assert worst < 1e-4

    def test_nonfinite_loss_rejected(self):
        net = scrambled(TINY, seed=2)
        with pytest.raises(Exception):
            parameter_gradients(torch.tensor(float("nan")), net.parameters())


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        net = scrambled(SMALL, seed=9)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        back = load_checkpoint(path)
        assert back.spec == net.spec
        for a, b in zip(net.parameters(), back.parameters()):
            assert torch.equal(a.detach(), b.detach())

    def test_magic(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_truncated(self, tmp_path):
        net = SDFNetwork.init_sphere(0, TINY)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) // 2])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        net = SDFNetwork.init_sphere(0, TINY)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        raw = bytearray(path.read_bytes())
        raw[8] = 99  # version field
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_little_endian_float64_payload(self, tmp_path):
        net = SDFNetwork.init_sphere(0, TINY)
        path = tmp_path / "net.ckpt"
        save_checkpoint(net, path)
        raw = path.read_bytes()
        assert raw[:8] == b"MVASCKPT"
        header = 8 + 16 + 8 + 8 * net.spec.n_layers
        first = np.frombuffer(raw, dtype="<f8", count=4, offset=header)
        assert np.array_equal(first, net.weights[0].detach().numpy().reshape(-1)[:4])


class TestAnalyticTorchField:
    def test_sphere_values(self):
        field = AnalyticTorchField(Sphere(radius=0.5))
        x = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
        f, g = field.gradient(x, create_graph=False)
        assert float(f) == pytest.approx(0.5)
        assert np.allclose(g.detach().numpy(), [[1, 0, 0]])

    def test_radius_sensitivity(self):
        r = torch.tensor(0.5, dtype=torch.float64, requires_grad=True)
        field = AnalyticTorchField(Sphere(radius=r))
        x = torch.tensor([[0.0, 0.0, 2.0]], dtype=torch.float64)
        f = field.forward(x)
        (dr,) = torch.autograd.grad(f.sum(), r)
        assert float(dr) == pytest.approx(-1.0)
