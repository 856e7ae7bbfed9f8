"""The four convolutional networks of the hiding pipeline.

Feature extractor -> embedding network -> (noise channel) -> decoder network,
plus the adversarial discriminator. All are stacks of Conv(3x3, stride 1) +
BatchNorm + ReLU blocks in the HiDDeN family style.
"""

from dataclasses import dataclass, asdict

import torch
import torch.nn as nn

DISC_PROB_EPS = 1e-6


@dataclass
class NetConfig:
    height: int = 128
    width: int = 128
    channels: int = 3
    base_width: int = 64
    extractor_blocks: int = 4
    embedder_blocks: int = 2
    decoder_blocks: int = 6
    discriminator_blocks: int = 3
    message_length: int = 90       # k
    encoded_length: int = 30       # l; ignored when use_msgcodec is off
    codec_hidden: int | None = None
    use_msgcodec: bool = True
    use_attention: bool = True

    def __post_init__(self):
        if self.height % 8 or self.width % 8:
            raise ValueError("image dims must be divisible by 8")
        if self.use_msgcodec and self.encoded_length >= self.message_length:
            raise ValueError("encoded length must be < message length")

    @property
    def embedded_length(self) -> int:
        """Channel count of the expanded message plane: l with the codec, k without."""
        return self.encoded_length if self.use_msgcodec else self.message_length

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


def conv_block(c_in: int, c_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, padding=1),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class FeatureExtractor(nn.Module):
    """Stride-1 conv stack over the attended cover; spatial dims preserved."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        w = cfg.base_width
        blocks = [conv_block(cfg.channels, w)]
        blocks += [conv_block(w, w) for _ in range(cfg.extractor_blocks - 1)]
        self.blocks = nn.Sequential(*blocks)

    def forward(self, attended: torch.Tensor) -> torch.Tensor:
        return self.blocks(attended)


def extract_features(extractor: FeatureExtractor, attended: torch.Tensor,
                     m_expanded: torch.Tensor) -> torch.Tensor:
    """Extractor output concatenated with the expanded message along channels."""
    feats = extractor(attended)
    if feats.shape[-2:] != m_expanded.shape[-2:]:
        raise ValueError("spatial dims of message plane do not match features")
    return torch.cat([feats, m_expanded], dim=1)


class EmbeddingNet(nn.Module):
    """Turns (features ++ message ++ cover) into the encoded image in [0,1]."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        w = cfg.base_width
        c_in = w + cfg.embedded_length + cfg.channels
        blocks = [conv_block(c_in, w)]
        blocks += [conv_block(w, w) for _ in range(cfg.embedder_blocks - 1)]
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Conv2d(w, cfg.channels, 1)

    def forward(self, f_co: torch.Tensor, cover: torch.Tensor) -> torch.Tensor:
        x = torch.cat([f_co, cover], dim=1)
        return torch.sigmoid(self.head(self.blocks(x)))


class DecoderNet(nn.Module):
    """Conv stack + global average pool + linear head to the decoded vector."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        w = cfg.base_width
        blocks = [conv_block(cfg.channels, w)]
        blocks += [conv_block(w, w) for _ in range(cfg.decoder_blocks - 1)]
        self.blocks = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(w, cfg.embedded_length)

    def forward(self, noised: torch.Tensor) -> torch.Tensor:
        x = self.pool(self.blocks(noised)).flatten(1)
        return self.head(x)


class Discriminator(nn.Module):
    """Cover-vs-encoded classifier; output clamped away from {0,1} for the logs."""

    def __init__(self, cfg: NetConfig):
        super().__init__()
        w = cfg.base_width
        blocks = [conv_block(cfg.channels, w)]
        blocks += [conv_block(w, w) for _ in range(cfg.discriminator_blocks - 1)]
        self.blocks = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(w, 1)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        x = self.pool(self.blocks(img)).flatten(1)
        p = torch.sigmoid(self.head(x)).squeeze(-1)
        return p.clamp(DISC_PROB_EPS, 1.0 - DISC_PROB_EPS)
