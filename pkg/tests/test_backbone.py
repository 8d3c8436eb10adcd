import pytest
import torch

from trifuse.backbone import BACKBONE_PRESETS, StagedBackbone, make_stage_config
from trifuse.errors import ConfigError, InputError, ShapeError
from trifuse.model import init_params


def test_vgg16_preset():
    cfg = make_stage_config("vgg16")
    assert cfg.stage_channels == (64, 128, 256, 512, 512)
    assert cfg.convs_per_stage == (2, 2, 3, 3, 3)


def test_vgg11_preset():
    cfg = make_stage_config("vgg11")
    assert cfg.stage_channels == (64, 128, 256, 512, 512)
    assert cfg.convs_per_stage == (1, 1, 2, 2, 2)


def test_desk_preset():
    cfg = make_stage_config("desk")
    assert cfg.stage_channels == (8, 16, 32, 64, 64)
    assert cfg.convs_per_stage == (1, 1, 1, 1, 1)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        make_stage_config("resnet50")


def test_desk_stage_shapes():
    net = StagedBackbone(make_stage_config("desk"))
    feats = net(torch.rand(2, 3, 64, 64))
    shapes = [tuple(f.shape[1:]) for f in feats]
    assert shapes == [
        (8, 64, 64),
        (16, 32, 32),
        (32, 16, 16),
        (64, 8, 8),
        (64, 4, 4),
    ]


def test_vgg16_stage5_shape():
    net = StagedBackbone(make_stage_config("vgg16"))
    feats = net(torch.rand(1, 3, 256, 256))
    assert tuple(feats[4].shape[1:]) == (512, 16, 16)


def test_zero_input_zero_biases_gives_zero():
    net = init_params(StagedBackbone(make_stage_config("desk")), seed=0)
    feats = net(torch.zeros(1, 3, 64, 64))
    for f in feats:
        assert torch.equal(f, torch.zeros_like(f))


def test_outputs_finite_and_nonnegative():
    net = init_params(StagedBackbone(make_stage_config("desk")), seed=1)
    feats = net(torch.rand(1, 3, 64, 64) * 255)
    for f in feats:
        assert torch.isfinite(f).all()
        assert (f >= 0).all()


def test_spatial_halving():
    net = StagedBackbone(make_stage_config("desk"))
    feats = net(torch.rand(1, 3, 128, 64))
    for i in range(4):
        assert feats[i + 1].shape[-2] * 2 == feats[i].shape[-2]
        assert feats[i + 1].shape[-1] * 2 == feats[i].shape[-1]


def test_forward_determinism():
    net = init_params(StagedBackbone(make_stage_config("desk")), seed=3)
    x = torch.rand(1, 3, 64, 64)
    a = net(x)
    b = net(x)
    for fa, fb in zip(a, b):
        assert torch.equal(fa, fb)


def test_indivisible_size_rejected():
    net = StagedBackbone(make_stage_config("desk"))
    with pytest.raises(ShapeError):
        net(torch.rand(1, 3, 60, 64))


def test_nonfinite_input_rejected():
    net = StagedBackbone(make_stage_config("desk"))
    x = torch.rand(1, 3, 64, 64)
    x[0, 0, 0, 0] = float("nan")
    with pytest.raises(InputError):
        net(x)


def test_tail_backbone_matches_full():
    cfg = make_stage_config("desk")
    full = init_params(StagedBackbone(cfg), seed=5)
    tail = StagedBackbone(cfg, start_stage=2)
    # share stage 2..5 parameters, then the tail on F1 must match stages 2..5
    remapped = {}
    for k, v in full.state_dict().items():
        parts = k.split(".")
        if parts[0] == "stages" and int(parts[1]) >= 1:
            remapped[".".join(["stages", str(int(parts[1]) - 1)] + parts[2:])] = v
    tail.load_state_dict(remapped)
    x = torch.rand(1, 3, 64, 64)
    feats_full = full(x)
    feats_tail = tail(feats_full[0])
    for a, b in zip(feats_full[1:], feats_tail):
        assert torch.equal(a, b)


def test_all_presets_build():
    for preset in BACKBONE_PRESETS:
        net = StagedBackbone(make_stage_config(preset))
        feats = net(torch.rand(1, 3, 32, 32))
        assert len(feats) == 5
