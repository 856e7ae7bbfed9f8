"""The noise channel between embedding and decoding.

Six distortions, each shape-preserving so the decoder always sees H x W x C:
identity, crop (zero-padded back in place), cropout and dropout (pixel mixing
with the cover), resize (bilinear down/up), and JPEG. JPEG has a
differentiable training approximation (blockwise DCT with a quality-dependent
zig-zag coefficient mask) and a real codec path for evaluation.
"""

import enum
import io
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image


class DistortionKind(enum.Enum):
    IDENTITY = "identity"
    CROP = "crop"
    CROPOUT = "cropout"
    DROPOUT = "dropout"
    RESIZE = "resize"
    JPEG = "jpeg"


class JpegMode(enum.Enum):
    TRAIN_APPROX = "train"
    EVAL_REAL = "eval"


COMBINED_POOL = (DistortionKind.CROP, DistortionKind.CROPOUT,
                 DistortionKind.DROPOUT, DistortionKind.RESIZE,
                 DistortionKind.JPEG)


@dataclass
class DistortionSpec:
    kind: DistortionKind
    ratio: float = 0.3        # p, crop area fraction
    cropout_ratio: float = 0.3  # p_c
    dropout_ratio: float = 0.3  # p_d
    zoom: float = 0.7         # z
    quality: float = 50.0     # q

    def __post_init__(self):
        for name, value in (("ratio", self.ratio), ("cropout_ratio", self.cropout_ratio),
                            ("dropout_ratio", self.dropout_ratio), ("zoom", self.zoom)):
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name}={value} outside (0, 1)")
        if not 0.0 < self.quality < 100.0:
            raise ValueError(f"quality={self.quality} outside (0, 100)")

    @classmethod
    def parse(cls, text: str) -> "DistortionSpec":
        """Parse CLI strings like 'jpeg:q=50', 'crop:p=0.3', 'identity'."""
        name, _, args = text.partition(":")
        try:
            kind = DistortionKind(name.strip().lower())
        except ValueError:
            raise ValueError(f"unknown distortion '{name}'") from None
        keymap = {"p": "ratio", "p_c": "cropout_ratio", "pc": "cropout_ratio",
                  "p_d": "dropout_ratio", "pd": "dropout_ratio",
                  "z": "zoom", "q": "quality"}
        kwargs = {}
        if args:
            for part in args.split(","):
                key, _, value = part.partition("=")
                key = key.strip().lower()
                if key not in keymap:
                    raise ValueError(f"unknown distortion parameter '{key}'")
                kwargs[keymap[key]] = float(value)
        return cls(kind=kind, **kwargs)

    def describe(self) -> str:
        params = {DistortionKind.IDENTITY: "",
                  DistortionKind.CROP: f"p={self.ratio}",
                  DistortionKind.CROPOUT: f"p_c={self.cropout_ratio}",
                  DistortionKind.DROPOUT: f"p_d={self.dropout_ratio}",
                  DistortionKind.RESIZE: f"z={self.zoom}",
                  DistortionKind.JPEG: f"q={self.quality:g}"}[self.kind]
        return self.kind.value + (f":{params}" if params else "")


class SamplingMode(enum.Enum):
    FIXED = "fixed"
    COMBINED = "combined"


@dataclass
class ChannelConfig:
    specs: list
    mode: SamplingMode = SamplingMode.FIXED

    def __post_init__(self):
        if not self.specs:
            raise ValueError("channel needs at least one distortion spec")
        if self.mode is SamplingMode.COMBINED and len(self.specs) < 2:
            raise ValueError("combined sampling needs at least two specs")

    @classmethod
    def parse(cls, text: str) -> "ChannelConfig":
        if text.strip().lower() == "combined":
            return cls(specs=[DistortionSpec(kind=k) for k in COMBINED_POOL],
                       mode=SamplingMode.COMBINED)
        return cls(specs=[DistortionSpec.parse(text)], mode=SamplingMode.FIXED)


def sample_channel(cfg: ChannelConfig, rng: torch.Generator) -> DistortionSpec:
    """One distortion per mini-batch: uniform over the pool when COMBINED."""
    if cfg.mode is SamplingMode.FIXED:
        return cfg.specs[0]
    idx = int(torch.randint(len(cfg.specs), (1,), generator=rng).item())
    return cfg.specs[idx]


def identity(i_en: torch.Tensor) -> torch.Tensor:
    return i_en


def _crop_box(h: int, w: int, ratio: float, rng: torch.Generator):
    side = math.sqrt(ratio)
    kh, kw = int(side * h), int(side * w)
    top = int(torch.randint(h - kh + 1, (1,), generator=rng).item())
    left = int(torch.randint(w - kw + 1, (1,), generator=rng).item())
    return top, left, kh, kw


def crop(i_en: torch.Tensor, ratio: float, rng: torch.Generator) -> torch.Tensor:
    """Keep a random square covering `ratio` of the area, zero-pad in place."""
    h, w = i_en.shape[-2:]
    top, left, kh, kw = _crop_box(h, w, ratio, rng)
    mask = torch.zeros(h, w, dtype=i_en.dtype)
    mask[top:top + kh, left:left + kw] = 1.0
    return i_en * mask


def cropout(i_en: torch.Tensor, i_co: torch.Tensor, cropout_ratio: float,
            rng: torch.Generator) -> torch.Tensor:
    """Encoded pixels inside a random square of area fraction p_c, cover outside."""
    if i_en.shape != i_co.shape:
        raise ValueError("encoded/cover shape mismatch")
    h, w = i_en.shape[-2:]
    top, left, kh, kw = _crop_box(h, w, cropout_ratio, rng)
    mask = torch.zeros(h, w, dtype=i_en.dtype)
    mask[top:top + kh, left:left + kw] = 1.0
    return i_en * mask + i_co * (1.0 - mask)


def dropout(i_en: torch.Tensor, i_co: torch.Tensor, dropout_ratio: float,
            rng: torch.Generator) -> torch.Tensor:
    """Per-pixel Bernoulli(p_d) choice of encoded pixel, else cover pixel."""
    if i_en.shape != i_co.shape:
        raise ValueError("encoded/cover shape mismatch")
    h, w = i_en.shape[-2:]
    mask = (torch.rand(h, w, generator=rng) < dropout_ratio).to(i_en.dtype)
    return i_en * mask + i_co * (1.0 - mask)


def resize(i_en: torch.Tensor, zoom: float) -> torch.Tensor:
    """Bilinear downscale by `zoom`, then bilinear upscale back to H x W."""
    squeeze = i_en.dim() == 3
    x = i_en.unsqueeze(0) if squeeze else i_en
    h, w = x.shape[-2:]
    dh, dw = max(int(round(h * zoom)), 1), max(int(round(w * zoom)), 1)
    down = F.interpolate(x, size=(dh, dw), mode="bilinear", align_corners=False)
    up = F.interpolate(down, size=(h, w), mode="bilinear", align_corners=False)
    return up.squeeze(0) if squeeze else up


# Orthonormal 8x8 DCT-II basis: row i of _DCT is the i-th basis vector.
_N = 8
_DCT = torch.tensor([[math.sqrt((1.0 if i == 0 else 2.0) / _N)
                      * math.cos((2 * j + 1) * i * math.pi / (2 * _N))
                      for j in range(_N)] for i in range(_N)], dtype=torch.float64)

_ZIGZAG = sorted(((i, j) for i in range(_N) for j in range(_N)),
                 key=lambda ij: (ij[0] + ij[1],
                                 ij[0] if (ij[0] + ij[1]) % 2 else ij[1]))


def jpeg_coefficient_mask(quality: float, dtype=torch.float32) -> torch.Tensor:
    """8x8 keep-mask: the first round(64*q/100) coefficients in zig-zag order."""
    keep = max(1, int(round(_N * _N * quality / 100.0)))
    mask = torch.zeros(_N, _N, dtype=dtype)
    for i, j in _ZIGZAG[:keep]:
        mask[i, j] = 1.0
    return mask


def jpeg_approx(i_en: torch.Tensor, quality: float) -> torch.Tensor:
    """Differentiable JPEG proxy: blockwise DCT, drop high-frequency
    coefficients outside the quality mask, inverse DCT, clamp to [0,1]."""
    h, w = i_en.shape[-2:]
    if h % _N or w % _N:
        raise ValueError("image dims must be divisible by 8")
    squeeze = i_en.dim() == 3
    x = i_en.unsqueeze(0) if squeeze else i_en
    n, c = x.shape[0], x.shape[1]
    d = _DCT.to(x.dtype)
    mask = jpeg_coefficient_mask(quality, dtype=x.dtype)
    # (n, c, bh, 8, bw, 8) -> blocks on the last two axes
    blocks = x.reshape(n, c, h // _N, _N, w // _N, _N).permute(0, 1, 2, 4, 3, 5)
    coeff = d @ blocks @ d.t()
    rec = d.t() @ (coeff * mask) @ d
    out = rec.permute(0, 1, 2, 4, 3, 5).reshape(n, c, h, w).clamp(0.0, 1.0)
    return out.squeeze(0) if squeeze else out


def jpeg_real(i_en: torch.Tensor, quality: float) -> torch.Tensor:
    """Round trip through an actual JPEG codec; not differentiable."""
    squeeze = i_en.dim() == 3
    x = i_en.unsqueeze(0) if squeeze else i_en
    q = int(min(max(round(quality), 1), 95))
    outs = []
    for img in x.detach():
        arr = (img.clamp(0, 1) * 255.0).round().to(torch.uint8)
        pil = Image.fromarray(arr.permute(1, 2, 0).numpy(), mode="RGB")
        buf = io.BytesIO()
        pil.save(buf, format="JPEG", quality=q)
        buf.seek(0)
        back = torch.from_numpy(np.asarray(Image.open(buf).convert("RGB")).copy())
        outs.append(back.permute(2, 0, 1).to(x.dtype) / 255.0)
    out = torch.stack(outs)
    return out.squeeze(0) if squeeze else out


def jpeg(i_en: torch.Tensor, quality: float, mode: JpegMode) -> torch.Tensor:
    if mode is JpegMode.TRAIN_APPROX:
        return jpeg_approx(i_en, quality)
    return jpeg_real(i_en, quality)


def apply_distortion(spec: DistortionSpec, i_en: torch.Tensor, i_co: torch.Tensor,
                     rng: torch.Generator, jpeg_mode: JpegMode = JpegMode.TRAIN_APPROX
                     ) -> torch.Tensor:
    """Dispatch one distortion; cropout/dropout mix in the cover image."""
    k = spec.kind
    if k is DistortionKind.IDENTITY:
        return identity(i_en)
    if k is DistortionKind.CROP:
        return crop(i_en, spec.ratio, rng)
    if k is DistortionKind.CROPOUT:
        return cropout(i_en, i_co, spec.cropout_ratio, rng)
    if k is DistortionKind.DROPOUT:
        return dropout(i_en, i_co, spec.dropout_ratio, rng)
    if k is DistortionKind.RESIZE:
        return resize(i_en, spec.zoom)
    return jpeg(i_en, spec.quality, jpeg_mode)
