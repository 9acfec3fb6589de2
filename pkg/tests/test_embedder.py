import numpy as np
import pytest

from monosep.embedder import (
    PAPER_DILATIONS,
    Embedder,
    ResidualBlock,
    from_embeddings,
    to_embeddings,
)
from monosep.numcore import DimensionError, NumericError, numeric_grad, rel_error


def small(rng, dtype=np.float64, dilations=(1, 2)):
    return Embedder(12, 4, 6, 8, list(dilations), 3, rng, dtype=dtype)


def test_paper_dilations():
    assert len(PAPER_DILATIONS) == 32
    assert PAPER_DILATIONS[:8] == [1, 2, 4, 8, 16, 32, 64, 128]


def test_output_shape(rng):
    emb = small(rng)
    v = emb.forward(rng.standard_normal((12, 9)))
    assert v.shape == (9 * 4, 3)


def test_layout_round_trip(rng):
    y = rng.standard_normal((4 * 3, 7))
    v = to_embeddings(y, 4, 3)
    # bin (t, f) holds y[f*L:(f+1)*L, t]
    np.testing.assert_array_equal(v[2 * 4 + 1], y[3:6, 2])
    np.testing.assert_array_equal(from_embeddings(v, 4, 3, 7), y)


def test_feature_axis_checked(rng):
    with pytest.raises(DimensionError, match="12"):
        small(rng).forward(np.zeros((11, 5)))


def test_residual_identity_when_output_zero(rng):
    block = ResidualBlock(6, 8, 2, rng, dtype=np.float64)
    block.out.params["w"][...] = 0
    block.out.params["b"][...] = 0
    x = rng.standard_normal((6, 10))
    np.testing.assert_array_equal(block.forward(x), x)


def test_receptive_field(rng):
    assert small(rng, dilations=(1, 2, 4, 8)).receptive_field() == 31


def test_paper_receptive_field(rng):
    emb = Embedder(4, 1, 2, 2, PAPER_DILATIONS, 1, rng)
    assert emb.receptive_field() == 1 + 4 * 2 * 255


def test_nonfinite_named(rng):
    emb = small(rng)
    emb.blocks[1].out.params["b"][0] = np.inf
    with pytest.raises(NumericError, match="block 1"):
        emb.forward(rng.standard_normal((12, 5)))


def test_float32_preserved(rng):
    emb = small(rng, np.float32)
    assert emb.forward(rng.standard_normal((12, 6)).astype(np.float32)).dtype == np.float32


@pytest.mark.parametrize("seed", range(10))
def test_gradient(seed):
    r = np.random.default_rng(seed)
    emb = small(r)
    h = r.standard_normal((12, 7))
    up = r.standard_normal((28, 3))

    def loss():
        return float(np.sum(emb.forward(h) * up))

    emb.forward(h)
    for layer in emb.named_layers().values():
        layer.zero_grad()
    gh = emb.backward(up)
    assert rel_error(gh, numeric_grad(loss, h)) < 1e-6
    for name, layer in emb.named_layers().items():
        for k, p in layer.params.items():
            assert rel_error(layer.grads[k], numeric_grad(loss, p)) < 1e-6, f"{name}.{k}"
