import numpy as np
import pytest

from mirrormamba.correspondence import (CorrespondenceExtractor, CorrespondenceLevel,
                                        DirectionalAttention, SimpleFusion, fuse_concat)
from mirrormamba.scan import HORIZONTAL_ORDERS
from mirrormamba.tensor import ShapeError, Tensor, sigmoid


def t(arr):
    return Tensor(np.asarray(arr, dtype=np.float32))


def rand(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape).astype(np.float32))


def test_fuse_concat_order_and_shapes():
    a = t(np.full((1, 2, 4, 4), 1.0))
    b = t(np.full((1, 2, 4, 4), 2.0))
    c = t(np.full((1, 2, 4, 4), 3.0))
    out = fuse_concat([a, b, c])
    assert out.shape == (1, 6, 4, 4)
    # modality order is the channel order
    np.testing.assert_array_equal(out.data[0, :, 0, 0], [1, 1, 2, 2, 3, 3])


def test_fuse_concat_single_passthrough():
    a = rand((1, 3, 4, 4))
    assert fuse_concat([a]) is a


def test_fuse_concat_errors():
    with pytest.raises(ValueError):
        fuse_concat([])
    with pytest.raises(ShapeError):
        fuse_concat([rand((1, 2, 4, 4)), rand((1, 2, 4, 8), seed=1)])


def test_compress_zero_input():
    lvl = CorrespondenceLevel(np.random.default_rng(0), channels=4, num_modalities=2,
                              d_state=2)
    z = t(np.zeros((1, 8, 4, 4)))
    carrier, probe = lvl.compress(z)
    assert carrier.shape == probe.shape == (1, 4, 4, 4)
    # conv bias starts at zero so both compressions vanish
    np.testing.assert_array_equal(carrier.data, 0.0)
    np.testing.assert_array_equal(probe.data, 0.0)


def test_gate_strictly_inside_unit_interval():
    att = DirectionalAttention(np.random.default_rng(1), channels=3,
                               orders=HORIZONTAL_ORDERS, d_state=2)
    g = att(rand((2, 3, 4, 6), seed=2))
    assert g.shape == (2, 3, 4, 6)
    assert np.all(g.data > 0.0) and np.all(g.data < 1.0)


def test_output_shape_per_level():
    ext = CorrespondenceExtractor(np.random.default_rng(2), channels_per_level=(2, 4),
                                  num_modalities=3, d_state=2)
    pyramids = [[rand((1, 2, 8, 8), seed=i * 10), rand((1, 4, 4, 4), seed=i * 10 + 1)]
                for i in range(3)]
    outs = ext(pyramids)
    assert [o.shape for o in outs] == [(1, 2, 8, 8), (1, 4, 4, 4)]


def test_recomposition_matches_straight_line():
    """The staged computation equals carrier * Wh-gate then vertical gate."""
    lvl = CorrespondenceLevel(np.random.default_rng(3), channels=3, num_modalities=2,
                              d_state=2, zero_residual_init=False)
    feats = [rand((1, 3, 4, 4), seed=4), rand((1, 3, 4, 4), seed=5)]
    out = lvl(feats)

    carrier, probe = lvl.compress(fuse_concat(feats))
    wh = lvl.horizontal(probe)
    f2 = wh * carrier
    wv = lvl.vertical(f2)
    expected = wv.data * carrier.data
    np.testing.assert_allclose(out.data, expected, rtol=0, atol=0)


def test_gate_on_product_mode():
    rng_args = dict(channels=3, num_modalities=1, d_state=2, zero_residual_init=False)
    a = CorrespondenceLevel(np.random.default_rng(6), **rng_args)
    b = CorrespondenceLevel(np.random.default_rng(6), gate_on_product=True, **rng_args)
    feats = [rand((1, 3, 4, 4), seed=7)]
    out_a = a(feats)
    out_b = b(feats)
    carrier, probe = a.compress(feats[0])
    f2 = a.horizontal(probe) * carrier
    wv = a.vertical(f2)
    np.testing.assert_allclose(out_a.data, (wv * carrier).data, atol=0)
    np.testing.assert_allclose(out_b.data, (wv * f2).data, atol=0)


def test_single_direction_modes_gate_carrier():
    for directions in ("horizontal", "vertical"):
        lvl = CorrespondenceLevel(np.random.default_rng(8), channels=2, num_modalities=1,
                                  d_state=2, directions=directions,
                                  zero_residual_init=False)
        feats = [rand((1, 2, 4, 4), seed=9)]
        out = lvl(feats)
        carrier, probe = lvl.compress(feats[0])
        att = lvl.horizontal if directions == "horizontal" else lvl.vertical
        np.testing.assert_allclose(out.data, (att(probe) * carrier).data, atol=0)
        assert not hasattr(lvl, "vertical" if directions == "horizontal" else "horizontal")


def test_unknown_direction_rejected():
    with pytest.raises(ValueError):
        CorrespondenceLevel(np.random.default_rng(0), channels=2, num_modalities=1,
                            directions="diagonal")


def test_zero_residual_init_gate_is_half_of_fused_zero():
    # with zero-init scan residual branches, the scan blocks pass the probe
    # through unchanged; a zero probe then leaves only the fuse-conv bias,
    # which starts at zero, so the gate is exactly 0.5 everywhere
    att = DirectionalAttention(np.random.default_rng(10), channels=3,
                               orders=HORIZONTAL_ORDERS, d_state=2,
                               zero_residual_init=True)
    g = att(t(np.zeros((1, 3, 4, 4))))
    np.testing.assert_array_equal(g.data, 0.5)


def _share_block_params(att):
    blk0 = att.blocks[0]
    for (name, p_src) in blk0.named_parameters():
        parts = name.split(".")
        obj = att.blocks[1]
        for part in parts[:-1]:
            obj = obj[int(part)] if part.isdigit() else getattr(obj, part)
        getattr(obj, parts[-1]).data[...] = p_src.data


def test_conjugate_pair_swaps_under_flip():
    """With shared block parameters, flipping the probe left-right swaps the
    (M1, M2) scan outputs up to the same flip. This is the conjugacy that
    makes the pair sensitive to horizontal reflections."""
    att = DirectionalAttention(np.random.default_rng(11), channels=2,
                               orders=HORIZONTAL_ORDERS, d_state=2,
                               zero_residual_init=False)
    _share_block_params(att)
    x = rand((1, 2, 6, 8), seed=12)
    xf = Tensor(x.data[:, :, :, ::-1].copy())
    s = [blk(x, orders=(o,)).data for blk, o in zip(att.blocks, att.orders)]
    sf = [blk(xf, orders=(o,)).data for blk, o in zip(att.blocks, att.orders)]
    np.testing.assert_allclose(sf[0][:, :, :, ::-1], s[1], atol=1e-6)
    np.testing.assert_allclose(sf[1][:, :, :, ::-1], s[0], atol=1e-6)


def test_flip_equivariance_of_horizontal_gate():
    """Gate mirrors with the probe once the fuse kernel respects the swap.

    Shared scan blocks make the pair conjugate; tying the fuse convolution's
    second input half to the left-right mirrored first half removes the only
    remaining asymmetry, so the whole gate map must commute with the flip.
    """
    att = DirectionalAttention(np.random.default_rng(11), channels=2,
                               orders=HORIZONTAL_ORDERS, d_state=2,
                               zero_residual_init=False)
    _share_block_params(att)
    w = att.fuse.weight.data
    c = w.shape[1] // 2
    w[:, c:, :, :] = w[:, :c, :, ::-1]
    x = rand((1, 2, 6, 8), seed=12)
    g = att(x)
    g_flip = att(Tensor(x.data[:, :, :, ::-1].copy()))
    np.testing.assert_allclose(g_flip.data[:, :, :, ::-1], g.data, atol=1e-6)


def test_simple_fusion_shapes_and_zero():
    sf = SimpleFusion(np.random.default_rng(13), channels_per_level=(2, 4),
                      num_modalities=2)
    pyramids = [[t(np.zeros((1, 2, 8, 8))), t(np.zeros((1, 4, 4, 4)))]
                for _ in range(2)]
    outs = sf(pyramids)
    assert [o.shape for o in outs] == [(1, 2, 8, 8), (1, 4, 4, 4)]
    for o in outs:
        np.testing.assert_array_equal(o.data, 0.0)
