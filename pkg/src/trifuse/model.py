"""Full network assembly: three encoder streams, per-stage fusion, decoder.

Input contract: a (B, 3, H, W) tensor of raw [0, 255] pixel values with H and
W divisible by 16. The RGB stream standardizes to zero-ish mean internally;
the frequency and noise streams consume the raw pixels directly (blockwise
DCT and residual filters are defined on intensities).
"""

from __future__ import annotations

import torch
from torch import nn

from .backbone import StagedBackbone, check_backbone_input, make_stage_config
from .blocks import init_module_params
from .config import ModelConfig
from .decoder import Decoder, Predictions
from .errors import InputError
from .frequency import DctFeatureExtractor, FrequencyStage1
from .fusion import StageFusion
from .noise import NoiseExtractor

# fixed per-channel statistics applied to the RGB stream after /255 scaling
RGB_MEAN = (0.485, 0.456, 0.406)
RGB_STD = (0.229, 0.224, 0.225)

# fixed scale between the noise residual map and its backbone; residual
# filters on [0, 255] pixels produce responses of a few tens, which would
# otherwise saturate the downstream attention sigmoids
NOISE_RESIDUAL_SCALE = 1.0 / 32.0


class TriFuseNet(nn.Module):
    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        stage_cfg = make_stage_config(self.cfg.backbone)
        self.stage_cfg = stage_cfg
        c1 = stage_cfg.stage_channels[0]

        self.rgb_backbone = StagedBackbone(stage_cfg)
        self.dct_extractor = DctFeatureExtractor(self.cfg.dct)
        self.freq_stage1 = FrequencyStage1(self.cfg.dct.output_channels, c1)
        self.freq_tail = StagedBackbone(stage_cfg, start_stage=2)
        self.noise_extractor = NoiseExtractor()
        self.noise_backbone = StagedBackbone(stage_cfg)
        self.fusion = nn.ModuleList(
            [
                StageFusion(
                    stage_cfg.stage_channels[i],
                    imperceptible=self.cfg.fusion_imperceptible,
                    rgb=self.cfg.fusion_rgb,
                )
                for i in range(5)
            ]
        )
        self.decoder = Decoder(stage_cfg, self.cfg.schedule)
        self.register_buffer("rgb_mean", torch.tensor(RGB_MEAN).view(1, 3, 1, 1))
        self.register_buffer("rgb_std", torch.tensor(RGB_STD).view(1, 3, 1, 1))

    def project_constraints(self) -> None:
        """Re-project the constrained noise filters; call each train step."""
        self.noise_extractor.project()

    def _encode(self, img: torch.Tensor) -> dict:
        check_backbone_input(img, 3)
        if img.min() < 0 or img.max() > 255:
            raise InputError("image values must lie in [0, 255]")
        rgb_in = (img / 255.0 - self.rgb_mean) / self.rgb_std
        rgb_feats = self.rgb_backbone(rgb_in)

        freq1 = self.freq_stage1(self.dct_extractor(img))
        freq_feats = [freq1] + self.freq_tail(freq1)

        noise_feats = self.noise_backbone(self.noise_extractor(img) * NOISE_RESIDUAL_SCALE)

        fused, encoded = [], []
        for i in range(5):
            imp = self.fusion[i].fuse_imperceptible(freq_feats[i], noise_feats[i])
            fused.append(imp)
            encoded.append(self.fusion[i](rgb_feats[i], freq_feats[i], noise_feats[i]))
        return {
            "rgb": rgb_feats,
            "freq": freq_feats,
            "noise": noise_feats,
            "fused": fused,
            "encoder": encoded,
        }

    def forward(self, img: torch.Tensor) -> Predictions:
        return self.decoder(self._encode(img)["encoder"])

    def collect_features(self, img: torch.Tensor) -> dict:
        """Per-stream stage features for inspection dumps."""
        with torch.no_grad():
            return self._encode(img)


def init_params(model: nn.Module, seed: int) -> nn.Module:
    """Deterministic seeded initialization; re-projects constrained filters."""
    generator = torch.Generator().manual_seed(seed)
    init_module_params(model, generator)
    return model


def build_model(cfg: ModelConfig | None = None) -> TriFuseNet:
    cfg = cfg or ModelConfig()
    model = TriFuseNet(cfg)
    init_params(model, cfg.seed)
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
