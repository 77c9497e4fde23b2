import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import gradient_check
from scgan.networks import (
    ArchConfig,
    Discriminator,
    ResBlock,
    ResidualGroup,
    SNConv2d,
    build_degradation_branch,
    build_discriminator,
    build_restoration_branch,
    count_parameters,
    kaiming_init,
    pixel_shuffle,
    pixel_unshuffle,
    spectral_normalize,
)

SMALL = ArchConfig(base_channels=8, degrade_blocks=6, restore_groups=(1, 1, 1))


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


def rand11(*shape, seed=0):
    return torch.rand(*shape, generator=gen(seed)) * 2 - 1


class TestShapes:
    @pytest.mark.parametrize("size", [32, 64])
    def test_degrade(self, size):
        net = build_degradation_branch(SMALL, gen()).eval()
        out = net(rand11(2, 3, size, size), torch.randn(2, 1, size, size))
        assert out.shape == (2, 3, size // 4, size // 4)
        assert out.abs().max() <= 1

    @pytest.mark.parametrize("size", [8, 16])
    def test_restore(self, size):
        net = build_restoration_branch(SMALL, gen()).eval()
        out = net(rand11(2, 3, size, size))
        assert out.shape == (2, 3, 4 * size, 4 * size)
        assert out.abs().max() <= 1

    def test_round_trips(self):
        d = build_degradation_branch(SMALL, gen()).eval()
        r = build_restoration_branch(SMALL, gen(1)).eval()
        lr = rand11(1, 3, 16, 16)
        sr = r(lr)
        assert d(sr, torch.randn(1, 1, 64, 64)).shape == lr.shape
        hr = rand11(1, 3, 64, 64)
        assert r(d(hr, torch.randn(1, 1, 64, 64))).shape == hr.shape

    def test_constant_input(self):
        out = build_restoration_branch(SMALL, gen()).eval()(torch.full((1, 3, 16, 16), 0.3))
        assert out.shape == (1, 3, 64, 64)
        assert torch.isfinite(out).all() and out.abs().max() <= 1

    @pytest.mark.parametrize("size", [(30, 32), (32, 24)])
    def test_degrade_rejects_bad_size(self, size):
        net = build_degradation_branch(SMALL, gen())
        with pytest.raises(ValueError):
            net(torch.zeros(1, 3, *size), torch.zeros(1, 1, *size))

    def test_degrade_rejects_bad_noise(self):
        net = build_degradation_branch(SMALL, gen())
        with pytest.raises(ValueError):
            net(torch.zeros(1, 3, 32, 32), torch.zeros(1, 1, 16, 16))

    def test_noise_plane_without_channel_dim(self):
        net = build_degradation_branch(SMALL, gen()).eval()
        hr, z = rand11(1, 3, 32, 32), torch.randn(1, 32, 32)
        torch.testing.assert_close(net(hr, z), net(hr, z[:, None]), rtol=0, atol=0)


class TestDegradationNoise:
    def test_deterministic(self):
        net = build_degradation_branch(SMALL, gen()).eval()
        hr, z = rand11(1, 3, 32, 32), torch.randn(1, 1, 32, 32, generator=gen(4))
        assert torch.equal(net(hr, z), net(hr, z))

    def test_noise_changes_output_after_a_step(self):
        net = build_degradation_branch(SMALL, gen()).train()
        opt = torch.optim.Adam(net.parameters(), lr=1e-3)
        hr = rand11(4, 3, 32, 32)
        target = rand11(4, 3, 8, 8, seed=1)
        loss = (net(hr, torch.randn(4, 1, 32, 32, generator=gen(2))) - target).abs().mean()
        loss.backward()
        opt.step()
        net.eval()
        a = net(hr[:1], torch.randn(1, 1, 32, 32, generator=gen(5)))
        b = net(hr[:1], torch.randn(1, 1, 32, 32, generator=gen(6)))
        assert (a != b).float().mean() >= 0.01


class TestIdentityMaps:
    def test_resblock_zeroed(self):
        rb = ResBlock(8).eval()
        with torch.no_grad():
            rb.conv2.weight.zero_()
            rb.conv2.bias.zero_()
            rb.conv1.weight.zero_()
        x = torch.randn(2, 8, 5, 5)
        torch.testing.assert_close(rb(x), x, rtol=0, atol=0)

    def test_group_skip_zeroed(self):
        grp = ResidualGroup(8, 3).eval()
        kaiming_init(grp, gen())
        with torch.no_grad():
            for m in grp.modules():
                if isinstance(m, SNConv2d):
                    m.weight.zero_()
                    m.bias.zero_()
        x = torch.randn(2, 8, 6, 6)
        torch.testing.assert_close(grp(x), x, rtol=0, atol=0)


class TestSpectralNorm:
    def test_identity(self):
        w = torch.eye(4, dtype=torch.float64)
        u = torch.ones(4, dtype=torch.float64) / 2
        out, _, _, sigma = spectral_normalize(w, u, u.clone(), 1)
        assert abs(sigma.item() - 1) < 1e-6
        torch.testing.assert_close(out, w, atol=1e-6, rtol=0)

    def test_diag(self):
        w = torch.diag(torch.tensor([3.0, 1.0], dtype=torch.float64))
        u = torch.tensor([0.6, 0.8], dtype=torch.float64)
        out, *_ = spectral_normalize(w, u, u.clone(), 5)
        np.testing.assert_allclose(out.numpy(), np.diag([1, 1 / 3]), atol=1e-3)

    def test_random_matrices_vs_svd(self):
        # the estimate u.Wv never exceeds the top singular value, and closes the gap
        # as iterations accumulate
        rng = np.random.default_rng(0)
        for _ in range(50):
            w = torch.from_numpy(rng.standard_normal((64, 64)))
            u = torch.from_numpy(rng.standard_normal(64))
            u = u / u.norm()
            top = np.linalg.svd(w.numpy(), compute_uv=False)[0]
            prev = np.inf
            for k in (5, 20, 50):
                _, _, _, sigma = spectral_normalize(w, u, u.clone(), k)
                ratio = top / sigma.item()
                assert ratio >= 1 - 1e-12
                assert ratio <= prev + 1e-12
                prev = ratio
            assert prev <= 1.05

    def test_well_separated_spectrum_converges_in_five(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            q1, _ = np.linalg.qr(rng.standard_normal((64, 64)))
            q2, _ = np.linalg.qr(rng.standard_normal((64, 64)))
            s = np.linspace(1.0, 0.05, 64) * 10
            s[0] = 40
            w = torch.from_numpy(q1 @ np.diag(s) @ q2.T)
            u = torch.from_numpy(rng.standard_normal(64))
            out, *_ = spectral_normalize(w, u / u.norm(), u.clone(), 5)
            assert 0.95 <= np.linalg.svd(out.numpy(), compute_uv=False)[0] <= 1.05

    def test_zero_weight(self):
        w = torch.zeros(3, 3)
        u = torch.ones(3) / 3**0.5
        out, *_ = spectral_normalize(w, u, u.clone(), 1)
        assert torch.isfinite(out).all() and (out == 0).all()

    def test_state_advances_only_in_train_mode(self):
        conv = SNConv2d(3, 4)
        kaiming_init(conv, gen())
        before = conv.sn_u.clone()
        conv.eval()(torch.randn(1, 3, 4, 4))
        assert torch.equal(conv.sn_u, before)
        with torch.no_grad():
            conv.weight.mul_(torch.randn_like(conv.weight))
        conv.train()(torch.randn(1, 3, 4, 4))
        assert not torch.equal(conv.sn_u, before)

    def test_layer_is_near_lipschitz_after_init(self):
        conv = SNConv2d(16, 16)
        kaiming_init(conv, gen())
        w = conv.eval().normalized_weight().detach().reshape(16, -1).numpy()
        assert 0.95 <= np.linalg.svd(w, compute_uv=False)[0] <= 1.05

    def test_gradient_reaches_weight(self):
        w = torch.randn(5, 4, requires_grad=True)
        u = torch.randn(5)
        out, *_ = spectral_normalize(w, u / u.norm(), torch.randn(4), 1)
        out.sum().backward()
        assert w.grad is not None and w.grad.abs().sum() > 0


class TestPixelShuffle:
    def test_definition(self):
        a, b, c, d = 1.0, 2.0, 3.0, 4.0
        x = torch.tensor([a, b, c, d]).reshape(1, 4, 1, 1)
        np.testing.assert_array_equal(pixel_shuffle(x, 2)[0, 0].numpy(), [[a, b], [c, d]])

    def test_shape(self):
        assert pixel_shuffle(torch.zeros(1, 256, 8, 8), 2).shape == (1, 64, 16, 16)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 5), st.integers(1, 5))
    def test_inverse(self, r, c, h, w):
        x = torch.randn(2, c * r * r, h, w)
        assert torch.equal(pixel_unshuffle(pixel_shuffle(x, r), r), x)

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            pixel_shuffle(torch.zeros(1, 6, 2, 2), 2)


class TestDiscriminator:
    @pytest.mark.parametrize("kind,size", [("L", 16), ("H", 64)])
    def test_shape_trace(self, kind, size):
        d = build_discriminator(kind, SMALL, gen()).eval()
        feats = d.features(rand11(3, 3, size, size))
        assert feats.shape == (3, 8, 4, 4)
        assert d(rand11(3, 3, size, size)).shape == (3,)

    def test_pool_placement(self):
        for kind, pools in (("L", 2), ("H", 4)):
            layers = list(build_discriminator(kind, SMALL).features)
            kinds = ["P" if isinstance(m, torch.nn.MaxPool2d) else "R" for m in layers
                     if isinstance(m, (torch.nn.MaxPool2d, ResBlock))]
            assert kinds == ["R"] * (6 - pools) + ["P", "R"] * pools

    @pytest.mark.parametrize("kind,size", [("L", 64), ("H", 16), ("L", 32)])
    def test_wrong_size(self, kind, size):
        with pytest.raises(ValueError):
            build_discriminator(kind, SMALL)(torch.zeros(1, 3, size, size))

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            Discriminator("M", SMALL)


class TestInit:
    def test_kaiming_variance(self):
        conv = torch.nn.Conv2d(64, 64, 3)
        kaiming_init(conv, gen())
        w = conv.weight.detach().numpy().ravel()
        assert w.size >= 10_000
        assert abs(w.var() - 2 / 576) <= 0.1 * 2 / 576
        assert (conv.bias == 0).all()

    def test_same_seed_same_init(self):
        a = build_restoration_branch(SMALL, gen(3))
        b = build_restoration_branch(SMALL, gen(3))
        for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert ka == kb and torch.equal(va, vb)

    def test_parameter_counts(self):
        full = ArchConfig(base_channels=8)
        assert count_parameters(build_degradation_branch(full)) == count_parameters(build_degradation_branch(full))
        assert count_parameters(build_degradation_branch(full)) == 22123
        assert count_parameters(build_degradation_branch(SMALL)) == 15115
        assert count_parameters(build_restoration_branch(SMALL)) == 9667
        assert count_parameters(build_discriminator("L", SMALL)) == 7360

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ArchConfig(degrade_blocks=8)
        with pytest.raises(ValueError):
            ArchConfig(base_channels=0)
        with pytest.raises(ValueError):
            ArchConfig(scale=2)


def test_eval_forward_is_pure():
    net = build_restoration_branch(SMALL, gen()).eval()
    state = {k: v.clone() for k, v in net.state_dict().items()}
    x = rand11(1, 3, 8, 8)
    y1 = net(x)
    y2 = net(x)
    assert torch.equal(y1, y2)
    for k, v in net.state_dict().items():
        assert torch.equal(v, state[k])


def _grad_cases():
    g = gen(11)
    return {
        "D_HL": (build_degradation_branch(SMALL, g),
                 (rand11(2, 3, 32, 32, seed=1), torch.randn(2, 1, 32, 32, generator=g)),
                 rand11(2, 3, 8, 8, seed=2)),
        "R_LS": (build_restoration_branch(SMALL, g), (rand11(2, 3, 8, 8, seed=3),), rand11(2, 3, 32, 32, seed=4)),
        "D_L": (build_discriminator("L", SMALL, g), (rand11(2, 3, 16, 16, seed=5),), rand11(2, seed=6)),
    }


@pytest.mark.parametrize("name", ["D_HL", "R_LS", "D_L"])
def test_gradients_double(name):
    net, inputs, target = _grad_cases()[name]
    err, auto, _ = gradient_check(net.double(), inputs, target, dtype=torch.float64)
    assert np.abs(auto).max() > 0
    assert err < 1e-5


@pytest.mark.parametrize("name", ["D_HL", "R_LS", "D_L"])
def test_gradients_single(name):
    net, inputs, target = _grad_cases()[name]
    err, _, _ = gradient_check(net.double(), inputs, target, dtype=torch.float32, reference_dtype=torch.float64)
    assert err < 1e-3
