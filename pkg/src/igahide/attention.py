"""Attention masks over cover images.

The inverse-gradient mask weights each pixel by how little the message
reconstruction loss reacts to it: small gradient -> robust pixel -> high
weight. A Sobel high-frequency map is available as a drop-in alternative
mask, and ONES disables masking entirely.
"""

import enum

import torch
import torch.nn.functional as F

EPS_RANGE = 1e-12


class MaskSource(enum.Enum):
    IGA = "iga"
    SOBEL = "sobel"
    ONES = "ones"


class NormalizationKind(enum.Enum):
    MINMAX = "minmax"
    SIGMOID = "sigmoid"


def _minmax(x: torch.Tensor, degenerate_value: float) -> torch.Tensor:
    lo, hi = x.min(), x.max()
    if (hi - lo) < EPS_RANGE:
        return torch.full_like(x, degenerate_value)
    return (x - lo) / (hi - lo + EPS_RANGE)


def iga_mask(grad_image: torch.Tensor,
             normalization: NormalizationKind = NormalizationKind.MINMAX) -> torch.Tensor:
    """Inverse-gradient attention mask, same shape as the cover image.

    MINMAX normalizes |gradient| per image; SIGMOID squashes the raw signed
    gradients. Either way the result is 1 - normalized, detached so the
    attended pass treats the mask as a constant. All-equal gradients give an
    all-ones mask (uniform sensitivity, uniform weighting).
    """
    if not torch.isfinite(grad_image).all():
        raise ValueError("diverged gradients")
    g = grad_image.detach()
    if normalization is NormalizationKind.MINMAX:
        if g.dim() == 4:  # per-image range within a batch
            normalized = torch.stack([_minmax(item.abs(), degenerate_value=0.0) for item in g])
        else:
            normalized = _minmax(g.abs(), degenerate_value=0.0)
    else:
        normalized = torch.sigmoid(g)
    return (1.0 - normalized).clamp(0.0, 1.0)


def apply_attention(cover: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Elementwise product of mask and cover; differentiable w.r.t. cover."""
    if cover.shape != mask.shape:
        raise ValueError(f"mask shape {tuple(mask.shape)} != cover shape {tuple(cover.shape)}")
    return cover * mask


SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0],
                        [-2.0, 0.0, 2.0],
                        [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.t().contiguous()


def sobel_mask(cover: torch.Tensor) -> torch.Tensor:
    """Per-channel Sobel gradient magnitude, min-max normalized to [0,1].

    Not inverted: it highlights edges directly. A constant image maps to all
    zeros (no edges). Accepts (C,H,W) or (N,C,H,W).
    """
    squeeze = cover.dim() == 3
    x = cover.unsqueeze(0) if squeeze else cover
    if x.shape[-1] < 3 or x.shape[-2] < 3:
        raise ValueError("image smaller than the 3x3 Sobel kernel")
    c = x.shape[1]
    kx = SOBEL_X.to(x.dtype).expand(c, 1, 3, 3)
    ky = SOBEL_Y.to(x.dtype).expand(c, 1, 3, 3)
    padded = F.pad(x, (1, 1, 1, 1), mode="replicate")  # no fake border edges
    gx = F.conv2d(padded, kx, groups=c)
    gy = F.conv2d(padded, ky, groups=c)
    mag = torch.sqrt(gx * gx + gy * gy + 0.0)
    out = torch.stack([_minmax(m, degenerate_value=0.0) for m in mag])
    return out.squeeze(0) if squeeze else out


def expand_message(m_en: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """Replicate each message element over all spatial positions.

    (l,) -> (l,H,W); (N,l) -> (N,l,H,W).
    """
    if m_en.dim() == 1:
        return m_en.view(-1, 1, 1).expand(m_en.shape[0], height, width)
    return m_en.view(m_en.shape[0], m_en.shape[1], 1, 1).expand(
        m_en.shape[0], m_en.shape[1], height, width)
