import numpy as np
import pytest

import gradeshi as g
from gradeshi.architectures import ArchConfig, build, set_trainable_prefix
from gradeshi.errors import ConfigError
from gradeshi.layers import Conv2D, DepthwiseConv2D, PointwiseConv2D
from gradeshi.tensor import Tensor


def forward_acts(net, x, training=False):
    acts = []
    for i, layer in enumerate(net.layers):
        operands = tuple(x if j == -1 else acts[j] for j in net.inputs[i])
        acts.append(layer.forward(*operands, training=training))
    return acts


class TestShapeAudit:
    @pytest.mark.parametrize("family", ["simple-cnn", "mini-resnet", "mini-mobilenet"])
    @pytest.mark.parametrize("image_size", [50, 100, 160])
    def test_output_shape(self, family, image_size):
        net = build(ArchConfig(family, image_size, 7), seed=0)
        x = Tensor.uniform((2, image_size, image_size, 1), 0, 1, seed=1)
        out = net.forward(x, training=True)
        assert out.shape == (2, 1, 1, 7)
        for act in forward_acts(net, x, training=True):
            assert min(act.shape) >= 1

    def test_image_too_small(self):
        with pytest.raises(ConfigError):
            build(ArchConfig("simple-cnn", 8, 4))
        with pytest.raises(ConfigError):
            build(ArchConfig("mini-mobilenet", 20, 4))


class TestSimpleCnn:
    def test_first_conv_has_32_filters(self):
        net = build(ArchConfig("simple-cnn", 32, 84), seed=0)
        conv1 = net.layers[0]
        assert isinstance(conv1, Conv2D)
        assert conv1.params["weights"].shape == (3, 3, 1, 32)

    def test_conv1_parameter_count(self):
        net = build(ArchConfig("simple-cnn", 32, 84), seed=0)
        conv1 = net.layers[0]
        count = conv1.params["weights"].size + conv1.params["bias"].size
        assert count == 3 * 3 * 1 * 32 + 32 == 320

    def test_output_classes(self):
        net = build(ArchConfig("simple-cnn", 32, 84), seed=0)
        out = net.forward(Tensor.uniform((3, 32, 32, 1), 0, 1, seed=2), training=True)
        assert out.shape == (3, 1, 1, 84)


class TestMiniResnet:
    def test_stem_width_64(self):
        net = build(ArchConfig("mini-resnet", 50, 10), seed=0)
        assert net.layers[0].params["weights"].shape == (3, 3, 1, 64)

    def test_dropout_default_half(self):
        net = build(ArchConfig("mini-resnet", 50, 10), seed=0)
        dropout = net.layers[net.index_of("head.dropout")]
        assert dropout.rate == 0.5

    def test_zeroed_convs_give_uniform_output(self):
        net = build(ArchConfig("mini-resnet", 50, 10), seed=3)
        for layer in net.layers:
            if isinstance(layer, Conv2D):
                layer.params["weights"] = Tensor.zeros(layer.params["weights"].shape)
        out = net.forward(Tensor.uniform((2, 50, 50, 1), 0, 1, seed=4), training=True)
        assert np.allclose(out.matrix, 0.1, atol=1e-6)

    def test_residual_block_reduces_to_skip_when_main_zeroed(self):
        net = build(ArchConfig("mini-resnet", 50, 10), seed=5)
        # zero the main branch of the first stage-2 block (it has a projection)
        for name in ("s2.b0.conv1", "s2.b0.conv2"):
            layer = net.layers[net.index_of(name)]
            layer.params["weights"] = Tensor.zeros(layer.params["weights"].shape)
        x = Tensor.uniform((2, 50, 50, 1), 0, 1, seed=6)
        acts = forward_acts(net, x, training=True)
        block_out = acts[net.index_of("s2.b0.relu2")]
        projected_skip = acts[net.index_of("s2.b0.proj_bn")]
        assert np.allclose(block_out.data, np.maximum(projected_skip.data, 0.0), atol=1e-6)

    def test_seven_block_units(self):
        net = build(ArchConfig("mini-resnet", 50, 10), seed=0)
        assert len(net.block_units) == 7  # stem plus 3 stages x 2 blocks


class TestMiniMobilenet:
    def test_output_classes_84(self):
        net = build(ArchConfig("mini-mobilenet", 50, 84), seed=0)
        out = net.forward(Tensor.uniform((2, 50, 50, 1), 0, 1, seed=1), training=True)
        assert out.shape == (2, 1, 1, 84)

    def test_depthwise_kernels_one_per_channel(self):
        net = build(ArchConfig("mini-mobilenet", 50, 84), seed=0)
        dws = [l for l in net.layers if isinstance(l, DepthwiseConv2D)]
        assert dws
        for dw in dws:
            kh, kw, c, per = dw.params["weights"].shape
            assert per == 1 and c == dw.channels and (kh, kw) == (3, 3)

    def test_separable_parameter_savings(self):
        dw = DepthwiseConv2D("dw", 64, kernel=3)
        pw = PointwiseConv2D("pw", 64, 64)
        separable = dw.params["weights"].size + pw.params["weights"].size
        full = Conv2D("full", 64, 64, kernel=3, use_bias=False).params["weights"].size
        assert separable == 3 * 3 * 64 + 64 * 64 == 4672
        assert full == 36864

    def test_skip_edges_empty(self):
        net = build(ArchConfig("mini-mobilenet", 50, 5), seed=0)
        assert net.skip_edges == []


class TestDeterminism:
    @pytest.mark.parametrize("family", ["simple-cnn", "mini-resnet", "mini-mobilenet"])
    def test_same_config_same_seed_bit_identical(self, family):
        a = build(ArchConfig(family, 50, 6), seed=11)
        b = build(ArchConfig(family, 50, 6), seed=11)
        pa, pb = a.named_params(), b.named_params()
        assert pa.keys() == pb.keys()
        for k in pa:
            assert np.array_equal(pa[k].data, pb[k].data), k

    def test_different_seed_differs(self):
        a = build(ArchConfig("simple-cnn", 32, 6), seed=1)
        b = build(ArchConfig("simple-cnn", 32, 6), seed=2)
        assert not np.array_equal(a.layers[0].params["weights"].data,
                                  b.layers[0].params["weights"].data)


class TestFreezing:
    def test_prefix_zero_all_trainable(self):
        net = build(ArchConfig("mini-resnet", 50, 5), seed=0)
        set_trainable_prefix(net, 0, "block")
        assert all(layer.trainable for layer in net.layers)

    def test_resnet_first_seven_blocks(self):
        net = build(ArchConfig("mini-resnet", 50, 5, freeze_prefix=7), seed=0)
        frozen = {i for _, span in net.block_units for i in span}
        for i, layer in enumerate(net.layers):
            assert layer.trainable == (i not in frozen)
        head = net.layers[net.index_of("head.dense")]
        assert head.trainable

    def test_mobilenet_first_twenty_layers(self):
        net = build(ArchConfig("mini-mobilenet", 50, 5, freeze_prefix=20,
                               freeze_granularity="layer"), seed=0)
        for i, layer in enumerate(net.layers):
            assert layer.trainable == (i >= 20)

    def test_out_of_range(self):
        net = build(ArchConfig("mini-resnet", 50, 5), seed=0)
        with pytest.raises(ConfigError):
            set_trainable_prefix(net, 8, "block")
        with pytest.raises(ConfigError):
            set_trainable_prefix(net, len(net.layers) + 1, "layer")
        with pytest.raises(ConfigError):
            set_trainable_prefix(net, -1, "block")

    def test_frozen_params_survive_steps_and_rest_move(self):
        net = build(ArchConfig("mini-mobilenet", 32, 4, stage_widths=(8, 16),
                               blocks_per_stage=1, freeze_prefix=1), seed=7)
        frozen_before = {
            f"{layer.name}.{n}": layer.params[n].data.copy()
            for layer in net.layers if not layer.trainable for n in layer.params}
        adam = g.Adam()
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = Tensor._wrap(rng.uniform(0, 1, (8, 32, 32, 1)).astype(np.float32))
            y = np.zeros((8, 4), dtype=np.float32)
            y[np.arange(8), rng.integers(0, 4, 8)] = 1.0
            probs = net.forward(x, training=True)
            d = g.softmax_cross_entropy_backward(probs, Tensor._wrap(y.reshape(8, 1, 1, 4)))
            adam.step(net, net.backward_from_logits(d))
        after = net.named_params()
        for key, before in frozen_before.items():
            assert np.array_equal(after[key].data, before), key
        moved = [k for k, v in after.items()
                 if k not in frozen_before and not np.array_equal(
                     v.data, build(net.config, seed=7).named_params()[k].data)]
        assert moved
