"""Scoring: bit prediction accuracy, PSNR, and the Reed-Solomon
bits-per-pixel capacity proxy, plus the per-distortion evaluation sweep."""

import math
from dataclasses import dataclass, field

import torch

PSNR_CAP_DB = 100.0


def bpa(m_in: torch.Tensor, m_out_bits: torch.Tensor) -> float:
    """Fraction of matching bits between two equal-length bit vectors."""
    if m_in.shape != m_out_bits.shape:
        raise ValueError(f"length mismatch: {tuple(m_in.shape)} vs {tuple(m_out_bits.shape)}")
    return float((m_in == m_out_bits).double().mean().item())


def psnr(x: torch.Tensor, y: torch.Tensor) -> float:
    """Peak signal-to-noise ratio in dB for images in [0,1] (peak = 1).

    Identical images hit the 100 dB cap rather than +inf so reports stay
    aggregatable.
    """
    if x.shape != y.shape:
        raise ValueError("shape mismatch")
    mse = float(torch.mean((x.double() - y.double()) ** 2).item())
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def rs_bpp(k: int, p: float) -> float:
    """Capacity proxy k*(2p - 1); zero at chance-level accuracy p = 0.5."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"accuracy p={p} outside [0, 1]")
    return k * (2.0 * p - 1.0)


@dataclass
class DistortionResult:
    name: str
    bpa_mean: float
    bpa_std: float
    count: int


@dataclass
class EvalReport:
    rows: list
    psnr_mean: float
    rs_bpp_overall: float
    message_length: int
    encoded_length: int
    image_count: int
    config_echo: dict = field(default_factory=dict)

    def format_table(self) -> str:
        lines = [f"{'distortion':<20} {'BPA':>8} {'std':>8} {'n':>5}"]
        for r in self.rows:
            lines.append(f"{r.name:<20} {r.bpa_mean:>8.4f} {r.bpa_std:>8.4f} {r.count:>5}")
        lines.append(f"PSNR(cover, encoded) = {self.psnr_mean:.2f} dB")
        lines.append(f"RS-BPP (overall mean BPA) = {self.rs_bpp_overall:.3f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "rows": [{"distortion": r.name, "bpa_mean": r.bpa_mean,
                      "bpa_std": r.bpa_std, "count": r.count} for r in self.rows],
            "psnr_mean": self.psnr_mean,
            "rs_bpp_overall": self.rs_bpp_overall,
            "message_length": self.message_length,
            "encoded_length": self.encoded_length,
            "image_count": self.image_count,
            "config": self.config_echo,
        }


def evaluate(pipeline, images, specs, seed: int = 0) -> EvalReport:
    """Sweep the trained pipeline over distortions.

    `pipeline` is a training.Pipeline; `images` an iterable of (C,H,W)
    tensors. For each spec: embed -> distort (real JPEG codec) -> extract ->
    binarize -> BPA. Deterministic under a fixed seed.
    """
    from . import distortions as dst
    from .msgcodec import binarize

    images = list(images)
    if not images:
        raise ValueError("empty dataset")
    k = pipeline.config.message_length
    rows = []
    psnrs = []
    all_bpas = []
    for spec_idx, spec in enumerate(specs):
        combined = isinstance(spec, dst.ChannelConfig)
        rng = torch.Generator().manual_seed(seed + 1000 * spec_idx)
        values = []
        with torch.no_grad():
            for img in images:
                message = (torch.rand(k, generator=rng) < 0.5).float()
                encoded = pipeline.embed(img.unsqueeze(0), message.unsqueeze(0))
                if spec_idx == 0:
                    psnrs.append(psnr(img, encoded[0]))
                drawn = dst.sample_channel(spec, rng) if combined else spec
                noised = dst.apply_distortion(drawn, encoded, img.unsqueeze(0), rng,
                                              jpeg_mode=dst.JpegMode.EVAL_REAL)
                recovered = binarize(pipeline.extract(noised)[0])
                values.append(bpa(message, recovered))
        name = "combined" if combined else spec.describe()
        t = torch.tensor(values, dtype=torch.float64)
        rows.append(DistortionResult(name=name, bpa_mean=float(t.mean()),
                                     bpa_std=float(t.std(unbiased=False)), count=len(values)))
        all_bpas.extend(values)
    mean_bpa = sum(all_bpas) / len(all_bpas)
    return EvalReport(rows=rows,
                      psnr_mean=sum(psnrs) / len(psnrs),
                      rs_bpp_overall=rs_bpp(k, mean_bpa),
                      message_length=k,
                      encoded_length=pipeline.config.embedded_length,
                      image_count=len(images))
