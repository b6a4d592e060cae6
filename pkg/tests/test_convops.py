import numpy as np
import pytest

from oracles import conv_naive, divnorm_naive, pool_naive, shape_chain
from spoofbench import convops, kernels
from spoofbench.convops import LayerSpec
from spoofbench.errors import InvalidArgument, ShapeError

BACKENDS = {
    "numba": (kernels.conv_valid_numba, kernels.lp_pool_numba, kernels.divisive_norm_numba),
    "numpy": (kernels.conv_valid_numpy, kernels.lp_pool_numpy, kernels.divisive_norm_numpy),
}


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1e-300, np.max(np.abs(b)))


def test_identity_filter():
    img = np.arange(9, dtype=float).reshape(3, 3, 1)
    bank = np.zeros((1, 3, 3, 1))
    bank[0, 1, 1, 0] = 1.0
    out = convops.convolve(img, bank)
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == img[1, 1, 0]


def test_ramp_against_loop_oracle():
    y, x = np.mgrid[0:4, 0:4]
    img = ((x + 4 * y) / 15.0)[:, :, None]
    bank = np.full((1, 3, 3, 1), 1.0 / 9)
    out = convops.convolve(img, bank)
    assert out.shape == (2, 2, 1)
    assert np.allclose(out, conv_naive(img, bank), rtol=1e-12)


def test_conv_dims():
    out = convops.convolve(np.zeros((32, 32, 1)), np.zeros((16, 5, 5, 1)))
    assert out.shape == (28, 28, 16)


def test_conv_errors():
    with pytest.raises(ShapeError):
        convops.convolve(np.zeros((8, 8, 2)), np.zeros((1, 3, 3, 1)))
    with pytest.raises(ShapeError):
        convops.convolve(np.zeros((2, 8, 1)), np.zeros((1, 3, 3, 1)))


def test_relu(rng):
    assert convops.relu(np.array([-2.0]))[0] == 0
    assert convops.relu(np.array([3.0]))[0] == 3
    img = rng.normal(size=(5, 5, 2))
    once = convops.relu(img)
    assert np.array_equal(convops.relu(once), once)


def test_pool_cases(rng):
    img = rng.random((4, 5, 2))
    for alpha in (1, 2, 10):
        assert np.array_equal(convops.pool(img, 1, 1, alpha), img)
    win = np.zeros((3, 3, 1))
    win[0, 0, 0], win[0, 1, 0] = 3.0, 4.0
    assert convops.pool(win, 3, 1, 2)[0, 0, 0] == pytest.approx(5.0, rel=1e-15)
    win[0, 0, 0], win[0, 1, 0] = 1.0, 2.0
    expected = (1.0 ** 10 + 2.0 ** 10) ** 0.1
    assert expected == pytest.approx(2.000195, abs=1e-6)
    assert convops.pool(win, 3, 1, 10)[0, 0, 0] == pytest.approx(expected, rel=1e-12)


def test_pool_grid_anchoring():
    img = np.zeros((7, 7, 1))
    out = convops.pool(img, 3, 2, 2)
    assert out.shape == (3, 3, 1)  # anchors 0, 2, 4
    out = convops.pool(np.zeros((8, 8, 1)), 3, 4, 1)
    assert out.shape == (2, 2, 1)  # anchors 0, 4; anchor 8 would overflow


def test_pool_homogeneity(rng):
    img = rng.random((9, 9, 3))
    for alpha in (1, 2, 10):
        base = convops.pool(img, 3, 2, alpha)
        assert np.allclose(convops.pool(2.5 * img, 3, 2, alpha), 2.5 * base, rtol=1e-12)


def test_divnorm_cases(rng):
    out = convops.divnorm(np.full((4, 4, 1), 2.0), 1)
    assert np.allclose(out, 1.0, atol=1e-8)
    zero = convops.divnorm(np.zeros((5, 5, 2)), 3)
    assert np.array_equal(zero, np.zeros((3, 3, 2)))
    img = rng.random((5, 5, 2))
    out = convops.divnorm(img, 3)
    assert np.allclose(out, divnorm_naive(img, 3), rtol=1e-12)
    assert np.all(np.abs(out) <= 1.0)


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_kernels_match_oracles(backend):
    conv, lp, dn = BACKENDS[backend]
    rng = np.random.default_rng(7)
    for _ in range(25):
        h, w, m = rng.integers(5, 13), rng.integers(5, 13), rng.integers(1, 4)
        img = rng.random((h, w, m))
        L = int(rng.choice([1, 3, 5]))
        bank = rng.normal(size=(int(rng.integers(1, 4)), L, L, m))
        assert rel_err(conv(img, bank), conv_naive(img, bank)) < 1e-9
        P, s, a = int(rng.choice([1, 3])), int(rng.integers(1, 3)), float(rng.choice([1, 2, 10]))
        assert rel_err(lp(img, P, s, a), pool_naive(img, P, s, a)) < 1e-9
        N = int(rng.choice([1, 3]))
        assert rel_err(dn(img, N), divnorm_naive(img, N)) < 1e-9


def test_relu_sparsity_with_random_filters():
    from spoofbench.archsearch import random_filter_bank
    rng = np.random.default_rng(3)
    bank = random_filter_bank(rng, 16, 5, 1)
    img = rng.random((64, 64, 1))
    out = convops.relu(convops.convolve(img, bank))
    assert 0.45 <= np.mean(out == 0) <= 0.55


def test_forward_identity_layer(rng):
    img = rng.normal(size=(6, 6, 1))
    bank = np.zeros((1, 1, 1, 1))
    bank[0, 0, 0, 0] = 1.0
    spec = LayerSpec(1, 1, 1, 1, 2, False)
    feat = convops.forward(img, [spec], [bank])
    assert np.array_equal(feat, np.maximum(img, 0).ravel())


def test_forward_two_layer_shape(rng):
    specs = [LayerSpec(4, 5, 3, 2, 2, False), LayerSpec(3, 5, 3, 2, 1, True, 3)]
    banks = [rng.normal(size=(4, 5, 5, 1)), rng.normal(size=(3, 5, 5, 4))]
    out = convops.forward_image(rng.random((32, 32, 1)), specs, banks)
    assert out.shape == shape_chain(32, 32, specs)[-1]
    assert [e["out"] for e in convops.layer_shapes(32, 32, 1, specs)] == shape_chain(32, 32, specs)


def test_forward_shape_collapse_names_layer(rng):
    specs = [LayerSpec(2, 5, 3, 2, 2, False), LayerSpec(2, 9, 3, 1, 2, False)]
    banks = [rng.normal(size=(2, 5, 5, 1)), rng.normal(size=(2, 9, 9, 2))]
    with pytest.raises(ShapeError, match="layer 2"):
        convops.forward(rng.random((16, 16, 1)), specs, banks)
    with pytest.raises(ShapeError):
        convops.layer_shapes(16, 16, 1, specs)


def test_forward_layer_count():
    with pytest.raises(InvalidArgument):
        convops.forward(np.zeros((4, 4, 1)), [], [])


def test_forward_deterministic(rng):
    specs = [LayerSpec(8, 3, 3, 2, 10, True, 3)]
    banks = [rng.normal(size=(8, 3, 3, 3))]
    img = rng.random((20, 17, 3))
    a = convops.forward(img, specs, banks)
    b = convops.forward(img, specs, banks)
    assert a.tobytes() == b.tobytes()


def test_layerspec_validation():
    with pytest.raises(InvalidArgument):
        LayerSpec(4, 4, 3, 1, 2, False)
    with pytest.raises(InvalidArgument):
        LayerSpec(4, 3, 3, 1, 0.5, False)
    with pytest.raises(InvalidArgument):
        LayerSpec(4, 3, 3, 1, 2, True, 2)
