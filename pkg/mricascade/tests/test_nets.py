import numpy as np
import pytest
import torch

from mricascade.nets import (ArchiveError, DeepSegNetConfig, DenseConfig,
                             MissingCacheError, NetError, ParameterStore,
                             RecurrentConfig, ResNetConfig, UNetConfig, backward,
                             deepsegnet_forward, fit_segmenter_config,
                             fit_valid_input, forward_cached, init_params,
                             parse_net_config, read_archive, recurrent_forward,
                             resnet_forward, segment, unet_forward, valid_shape,
                             write_archive)
from mricascade.nets.archive import decode_archive, encode_archive
from mricascade.nets.configs import conv_output_size
from mricascade.nets.recurrent import GatedCell, PlainCell
from mricascade.nets.resnet import Bottleneck, ResNet, branch_conv_names

SMALL_SAME_UNET = UNetConfig(depth=2, base_channels=4, padding_mode="same",
                             input_size=16)


def _image(size, seed=0):
    return np.random.default_rng(seed).normal(size=(size, size))


def test_init_is_deterministic():
    a = init_params(SMALL_SAME_UNET, seed=3)
    b = init_params(SMALL_SAME_UNET, seed=3)
    c = init_params(SMALL_SAME_UNET, seed=4)
    assert a.equal(b)
    assert not a.equal(c)
    assert a.dtype == torch.float32


def test_resnet50_counts_48_branch_convolutions():
    names = list(init_params(ResNetConfig(variant="resnet50"), seed=0))
    counted = branch_conv_names(names)
    assert len(counted) == 48 + 1 + 1
    assert sum(1 for n in counted if n.startswith("layer")) == 48
    assert "conv_stem.weight" in counted and "fc.weight" in counted
    assert not any("shortcut" in n for n in counted)


def test_gated_forget_bias_starts_at_one():
    params = init_params(RecurrentConfig(cell="gated"), seed=0)
    assert torch.equal(params["cell.b_f"], torch.ones(32))
    assert not params["cell.b_i"].any()


def test_valid_shape_arithmetic():
    assert conv_output_size(256) == 254
    valid = UNetConfig(depth=4, padding_mode="valid")
    assert valid_shape(valid.model_copy(update={"input_size": 572})) == 388
    assert valid_shape(valid.model_copy(update={"input_size": 268})) == 84
    assert valid_shape(valid.model_copy(update={"input_size": 256})) is None
    assert fit_valid_input(64, 4) == (252, 68)


def test_inadmissible_valid_unet_is_rejected():
    with pytest.raises(NetError, match="inadmissible"):
        init_params(UNetConfig(depth=4, padding_mode="valid", input_size=256), 0)


def test_same_unet_keeps_size_and_range():
    config = UNetConfig(depth=4, base_channels=4, padding_mode="same",
                        input_size=64)
    params = init_params(config, seed=0)
    out = unet_forward(params, _image(64), config)
    assert out.shape == (64, 64)
    assert ((out > 0) & (out < 1)).all()
    assert np.array_equal(out, unet_forward(params, _image(64), config))


def test_valid_unet_output_size():
    config = UNetConfig(depth=4, base_channels=2, padding_mode="valid",
                        input_size=268)
    out = unet_forward(init_params(config, seed=0), _image(268), config)
    assert out.shape == (84, 84)


def test_unet_input_must_match_config():
    params = init_params(SMALL_SAME_UNET, seed=0)
    with pytest.raises(NetError):
        unet_forward(params, _image(32), SMALL_SAME_UNET)


def test_deepsegnet_shapes_and_divisibility():
    config = DeepSegNetConfig(depth=4, base_channels=4)
    params = init_params(config, seed=0)
    out = deepsegnet_forward(params, _image(64), config)
    assert out.shape == (64, 64)
    assert ((out > 0) & (out < 1)).all()
    with pytest.raises(NetError, match="divisible"):
        deepsegnet_forward(params, _image(60), config)


def test_deepsegnet_zero_head_outputs_sigmoid_of_bias():
    config = DeepSegNetConfig(depth=2, base_channels=4)
    params = init_params(config, seed=0)
    params = params.replace({
        "head.weight": torch.zeros_like(params["head.weight"]),
        "head.bias": torch.full_like(params["head.bias"], 0.3),
    })
    out = deepsegnet_forward(params, _image(16), config)
    assert np.allclose(out, 1.0 / (1.0 + np.exp(-0.3)), atol=1e-6)


def test_bottleneck_with_zero_branch_is_identity():
    block = Bottleneck(16, 4, stride=1)
    assert block.shortcut is None
    with torch.no_grad():
        block.conv3.weight.zero_()
        x = torch.randn(2, 16, 5, 5)
        assert torch.equal(block(x), x)


def test_resnet_logits_and_pooled_head():
    config = ResNetConfig(variant="resnet_mini", input_size=32)
    logits = resnet_forward(init_params(config, seed=0), _image(32), config)
    assert logits.shape == (2, )

    model = ResNet(config)
    channels = model.fc.in_features
    features = torch.full((1, channels, 3, 3), 0.25)
    with torch.no_grad():
        expected = model.fc(torch.full((1, channels), 0.25))
        assert torch.allclose(model.classify(features), expected)


def test_plain_cell_with_zero_weights_outputs_tanh_bias():
    cell = PlainCell(3, 4)
    bias = torch.tensor([0.5, -1.0, 0.0, 2.0])
    with torch.no_grad():
        cell.W.zero_()
        cell.U.zero_()
        cell.b.copy_(bias)
        state = cell.initial_state(1, torch.zeros(1, 3))
        for _ in range(3):
            state = cell(torch.randn(1, 3), state)
            assert torch.allclose(state[0][0], torch.tanh(bias))


def test_saturated_gated_cell_keeps_its_memory():
    cell = GatedCell(3, 4)
    with torch.no_grad():
        for gate in GatedCell.GATES:
            getattr(cell, f"W_{gate}").zero_()
            getattr(cell, f"U_{gate}").zero_()
            getattr(cell, f"b_{gate}").zero_()
        cell.b_f.fill_(50.0)
        cell.b_i.fill_(-50.0)
        c0 = torch.randn(1, 4)
        state = (torch.zeros(1, 4), c0)
        for _ in range(5):
            state = cell(torch.randn(1, 3), state)
            assert torch.allclose(state[1], c0, atol=1e-6)


def test_recurrent_forward_and_empty_sequence():
    config = RecurrentConfig(cell="plain", roi_size=16)
    params = init_params(config, seed=0)
    logits = recurrent_forward(params, [_image(16, s) for s in range(3)], config)
    assert logits.shape == (2, )
    with pytest.raises(NetError, match="empty"):
        recurrent_forward(params, [], config)


def test_zero_output_gradient_gives_zero_parameter_gradients():
    config = DenseConfig(input_dim=4)
    params = init_params(config, seed=0)
    cache = forward_cached(params, np.ones((3, 4)), config)
    grads = backward(params, cache, torch.zeros(3, 2))
    assert list(grads) == list(params)
    assert all(not g.any() for g in grads.values())


def test_backward_needs_a_fresh_cache():
    config = DenseConfig(input_dim=4)
    params = init_params(config, seed=0)
    with pytest.raises(MissingCacheError):
        backward(params, None, torch.zeros(3, 2))
    cache = forward_cached(params, np.ones((3, 4)), config)
    backward(params, cache, torch.ones(3, 2))
    with pytest.raises(MissingCacheError):
        backward(params, cache, torch.ones(3, 2))


def test_dense_backward_matches_hand_gradient():
    config = DenseConfig(input_dim=2, num_classes=1)
    params = init_params(config, seed=0)
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    grads = backward(params, forward_cached(params, x, config), torch.ones(2, 1))
    assert torch.allclose(grads["fc.weight"], torch.tensor([[4.0, 1.0]]))
    assert torch.allclose(grads["fc.bias"], torch.tensor([2.0]))


def test_valid_unet_segments_on_the_slice_grid():
    config = fit_segmenter_config(UNetConfig(depth=1, base_channels=2), 16)
    assert config.input_size == 32
    images = np.stack([_image(16, 1), _image(16, 2)])
    probs = segment(init_params(config, seed=0), images, config)
    assert probs.shape == (2, 16, 16)
    assert ((probs > 0) & (probs < 1)).all()


def test_parse_net_config_uses_the_kind_tag():
    config = parse_net_config({"kind": "resnet", "variant": "resnet_mini"})
    assert isinstance(config, ResNetConfig)
    with pytest.raises(ValueError):
        parse_net_config({"kind": "unet", "depth": 0})


ARCHITECTURES = {
    "unet": SMALL_SAME_UNET,
    "deepsegnet": DeepSegNetConfig(depth=2, base_channels=4),
    "resnet": ResNetConfig(variant="resnet_mini", input_size=16, base_width=8),
    "plain": RecurrentConfig(cell="plain", input_dim=6, hidden_dim=5,
                             encoder_channels=(4, ), encoder_strides=(2, ),
                             roi_size=8),
    "gated": RecurrentConfig(cell="gated", input_dim=6, hidden_dim=5,
                             encoder_channels=(4, ), encoder_strides=(2, ),
                             roi_size=8),
}


@pytest.mark.parametrize("name", sorted(ARCHITECTURES))
def test_archive_round_trip_is_bit_exact(tmp_path, name):
    params = init_params(ARCHITECTURES[name], seed=5)
    path = write_archive(params, tmp_path / "nested" / f"{name}.nta")
    restored = read_archive(path)
    assert restored.equal(params)
    assert write_archive(restored, tmp_path / "again.nta").read_bytes() == \
        path.read_bytes()


def test_archive_rejects_corruption(tmp_path):
    blob = encode_archive(ParameterStore({"w": torch.ones(2, 2)}))
    with pytest.raises(ArchiveError, match="not an NTA1"):
        decode_archive(b"XXXX" + blob[4:])
    with pytest.raises(ArchiveError):
        decode_archive(blob[:-4])
    with pytest.raises(ArchiveError, match="not found"):
        read_archive(tmp_path / "missing.nta")


def test_store_rejects_non_finite_and_duplicates():
    with pytest.raises(NetError):
        ParameterStore({"w": torch.tensor([float("nan")])})
    with pytest.raises(NetError, match="duplicate"):
        ParameterStore([("w", torch.ones(1)), ("w", torch.ones(1))])
