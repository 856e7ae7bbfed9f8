"""Training loop: two-pass attended embedding, four objectives, alternating
discriminator/generator updates, checkpointing.

Each step runs the pipeline twice. Pass 1 uses an all-ones mask and only
serves to obtain the gradient of the message reconstruction loss w.r.t. the
cover pixels; pass 2 re-embeds with the resulting (detached) inverse-gradient
mask, pushes the encoded image through one sampled distortion, and decodes.
"""

import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from . import attention, checkpoint, distortions
from .dataio import random_message
from .msgcodec import MessageCodec, binarize, message_losses
from .nets import (DecoderNet, Discriminator, EmbeddingNet, FeatureExtractor,
                   NetConfig, extract_features)

log = logging.getLogger(__name__)

GRAD_CLIP_NORM = 5.0


@dataclass
class LossWeights:
    message_reconstruction: float = 1.0   # on the bits-vs-recovered MSE
    message_decoding: float = 0.001       # on the encoded-vs-decoded MSE
    image: float = 0.7                    # on the cover-vs-encoded MSE
    discriminator: float = 1.0
    generator: float = 0.001


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    mask_source: attention.MaskSource = attention.MaskSource.IGA
    normalization: attention.NormalizationKind = attention.NormalizationKind.MINMAX
    target_bpa: float | None = None       # early stop once validation BPA reaches it


def image_loss(cover: torch.Tensor, encoded: torch.Tensor, weight: float) -> torch.Tensor:
    """Weighted MSE between cover and encoded pixels."""
    if cover.shape != encoded.shape:
        raise ValueError("cover/encoded shape mismatch")
    return weight * torch.mean((cover - encoded) ** 2)


def adversarial_losses(d_cover: torch.Tensor, d_encoded: torch.Tensor,
                       weight_disc: float, weight_gen: float):
    """(discriminator, generator) losses from clamped probabilities.

    The discriminator minimizes -[log D(cover) + log(1 - D(encoded))]; the
    generator minimizes log(1 - D(encoded)).
    """
    l_d = -weight_disc * (torch.log(d_cover) + torch.log(1.0 - d_encoded)).mean()
    l_g = weight_gen * torch.log(1.0 - d_encoded).mean()
    return l_d, l_g


class Pipeline(torch.nn.Module):
    """The five networks plus the stages connecting them."""

    def __init__(self, config: NetConfig):
        super().__init__()
        self.config = config
        self.extractor = FeatureExtractor(config)
        self.embedder = EmbeddingNet(config)
        self.decoder_net = DecoderNet(config)
        self.discriminator = Discriminator(config)
        self.codec = (MessageCodec(config.message_length, config.encoded_length,
                                   config.codec_hidden)
                      if config.use_msgcodec else None)

    def encode_message(self, message: torch.Tensor) -> torch.Tensor:
        return self.codec.encode(message) if self.codec is not None else message

    def embed(self, cover: torch.Tensor, message: torch.Tensor,
              mask: torch.Tensor | None = None) -> torch.Tensor:
        """Cover batch (N,3,H,W) + message batch (N,k) -> encoded images."""
        m_en = self.encode_message(message)
        h, w = cover.shape[-2:]
        expanded = attention.expand_message(m_en, h, w)
        attended = cover if mask is None else attention.apply_attention(cover, mask)
        f_co = extract_features(self.extractor, attended, expanded)
        return self.embedder(f_co, cover)

    def extract(self, noised: torch.Tensor) -> torch.Tensor:
        """Noised batch -> recovered message values (N,k)."""
        m_de = self.decoder_net(noised)
        return self.codec.decode(m_de) if self.codec is not None else m_de

    def forward_full(self, cover, message, mask, spec, channel_rng,
                     jpeg_mode=distortions.JpegMode.TRAIN_APPROX):
        """One full pass; returns every intermediate needed by the losses."""
        m_en = self.encode_message(message)
        h, w = cover.shape[-2:]
        expanded = attention.expand_message(m_en, h, w)
        attended = cover if mask is None else attention.apply_attention(cover, mask)
        f_co = extract_features(self.extractor, attended, expanded)
        encoded = self.embedder(f_co, cover)
        noised = distortions.apply_distortion(spec, encoded, cover.detach(),
                                              channel_rng, jpeg_mode=jpeg_mode)
        m_de = self.decoder_net(noised)
        m_out = self.codec.decode(m_de) if self.codec is not None else m_de
        return {"m_en": m_en, "encoded": encoded, "noised": noised,
                "m_de": m_de, "m_out": m_out}


@dataclass
class LossReport:
    message_reconstruction: float
    message_decoding: float
    image: float
    generator: float
    discriminator: float
    total_generator: float
    distortion: str

    def format_line(self) -> str:
        return (f"L_mr={self.message_reconstruction:.6f} "
                f"L_md={self.message_decoding:.6f} "
                f"L_img={self.image:.6f} "
                f"L_gadv={self.generator:.6f} "
                f"L_disc={self.discriminator:.6f} "
                f"total={self.total_generator:.6f} "
                f"noise={self.distortion}")


class DivergedError(RuntimeError):
    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class Trainer:
    def __init__(self, net_config: NetConfig, channel: distortions.ChannelConfig,
                 weights: LossWeights | None = None,
                 train_config: TrainConfig | None = None):
        self.weights = weights or LossWeights()
        self.train_config = train_config or TrainConfig()
        self.channel = channel
        torch.manual_seed(self.train_config.seed)
        self.pipeline = Pipeline(net_config)
        gen_params = [p for name, p in self.pipeline.named_parameters()
                      if not name.startswith("discriminator.")]
        self.opt_gen = torch.optim.Adam(gen_params, lr=self.train_config.learning_rate)
        self.opt_disc = torch.optim.Adam(self.pipeline.discriminator.parameters(),
                                         lr=self.train_config.learning_rate)
        self.step = 0
        self.epoch = 0
        self.best_bpa = -1.0
        self.last_checkpoint_path = None

    @property
    def config(self) -> NetConfig:
        return self.pipeline.config

    def _build_mask(self, cover, message, spec, channel_seed):
        """Pass 1: gradient of the message loss w.r.t. the cover pixels."""
        src = self.train_config.mask_source
        if src is attention.MaskSource.ONES or not self.config.use_attention:
            return None
        if src is attention.MaskSource.SOBEL:
            return attention.sobel_mask(cover.detach())
        cover_in = cover.detach().clone().requires_grad_(True)
        rng = torch.Generator().manual_seed(channel_seed)
        out = self.pipeline.forward_full(cover_in, message, None, spec, rng)
        l_mr, _ = message_losses(message, out["m_out"], out["m_en"], out["m_de"],
                                 self.weights.message_reconstruction,
                                 self.weights.message_decoding)
        (grad_cover,) = torch.autograd.grad(l_mr, cover_in)
        self.pipeline.zero_grad(set_to_none=True)
        return attention.iga_mask(grad_cover, self.train_config.normalization)

    def train_step(self, cover: torch.Tensor, message: torch.Tensor) -> LossReport:
        """One optimization step on a batch; alternates disc and gen updates."""
        w = self.weights
        self.pipeline.train()
        step_seed = self.train_config.seed * 1_000_003 + self.step
        spec_rng = torch.Generator().manual_seed(step_seed)
        spec = distortions.sample_channel(self.channel, spec_rng)
        channel_seed = step_seed + 1

        mask = self._build_mask(cover, message, spec, channel_seed)

        rng = torch.Generator().manual_seed(channel_seed)
        out = self.pipeline.forward_full(cover, message, mask, spec, rng)
        l_mr, l_md = message_losses(message, out["m_out"], out["m_en"], out["m_de"],
                                    w.message_reconstruction, w.message_decoding)
        l_img = image_loss(cover, out["encoded"], w.image)

        # discriminator step on (cover, detached encoded)
        d_cover = self.pipeline.discriminator(cover)
        d_enc_detached = self.pipeline.discriminator(out["encoded"].detach())
        l_disc, _ = adversarial_losses(d_cover, d_enc_detached,
                                       w.discriminator, w.generator)
        self.opt_disc.zero_grad(set_to_none=True)
        l_disc.backward()
        torch.nn.utils.clip_grad_norm_(self.pipeline.discriminator.parameters(),
                                       GRAD_CLIP_NORM)
        self.opt_disc.step()

        # generator step on the four-part objective
        d_encoded = self.pipeline.discriminator(out["encoded"])
        _, l_gadv = adversarial_losses(d_cover.detach(), d_encoded,
                                       w.discriminator, w.generator)
        total = l_mr + l_md + l_img + l_gadv
        if not torch.isfinite(total):
            raise DivergedError("diverged", self.last_checkpoint_path)
        self.opt_gen.zero_grad(set_to_none=True)
        total.backward()
        torch.nn.utils.clip_grad_norm_(self.opt_gen.param_groups[0]["params"],
                                       GRAD_CLIP_NORM)
        self.opt_gen.step()

        self.step += 1
        return LossReport(message_reconstruction=l_mr.item(),
                          message_decoding=l_md.item(),
                          image=l_img.item(),
                          generator=l_gadv.item(),
                          discriminator=l_disc.item(),
                          total_generator=total.item(),
                          distortion=spec.describe())

    def validation_bpa(self, images, seed_offset: int = 9999) -> float:
        """Mean BPA over a held-out split under the training channel."""
        self.pipeline.eval()
        k = self.config.message_length
        rng = torch.Generator().manual_seed(self.train_config.seed + seed_offset)
        scores = []
        with torch.no_grad():
            for img in images:
                message = random_message(k, rng)
                spec = distortions.sample_channel(self.channel, rng)
                encoded = self.pipeline.embed(img.unsqueeze(0), message.unsqueeze(0))
                noised = distortions.apply_distortion(spec, encoded, img.unsqueeze(0), rng)
                recovered = binarize(self.pipeline.extract(noised)[0])
                scores.append(float((recovered == message).float().mean()))
        self.pipeline.train()
        return sum(scores) / len(scores)

    def fit(self, train_images, val_images=None, checkpoint_path=None,
            log_file=None, progress=False):
        """Run the configured number of epochs; returns the final state dict.

        Checkpoints every epoch when a path is given; the best validation-BPA
        bundle is kept alongside as <path>.best. Early-stops once target_bpa
        is reached on the validation split.
        """
        train_images = list(train_images)
        if not train_images:
            raise ValueError("empty dataset")
        val_images = list(val_images) if val_images else train_images
        tc = self.train_config
        order_rng = np.random.default_rng(tc.seed)
        log_lines = []
        for epoch in range(self.epoch, tc.epochs):
            order = order_rng.permutation(len(train_images))
            epoch_losses = []
            for start in range(0, len(order), tc.batch_size):
                idx = order[start:start + tc.batch_size]
                cover = torch.stack([train_images[i] for i in idx])
                msg_rng = torch.Generator().manual_seed(tc.seed * 7_919 + self.step)
                message = torch.stack([random_message(self.config.message_length, msg_rng)
                                       for _ in idx])
                report = self.train_step(cover, message)
                epoch_losses.append(report)
            self.epoch = epoch + 1
            val_bpa = self.validation_bpa(val_images)
            mean_total = sum(r.total_generator for r in epoch_losses) / len(epoch_losses)
            line = f"epoch={self.epoch} {epoch_losses[-1].format_line()} mean_total={mean_total:.6f} val_bpa={val_bpa:.4f}"
            log_lines.append(line)
            if progress:
                log.info(line)
            if log_file is not None:
                Path(log_file).write_text("\n".join(log_lines) + "\n")
            if checkpoint_path is not None:
                self.save(checkpoint_path)
                if val_bpa > self.best_bpa:
                    self.save(str(checkpoint_path) + ".best")
            if val_bpa > self.best_bpa:
                self.best_bpa = val_bpa
            if tc.target_bpa is not None and val_bpa >= tc.target_bpa:
                log_lines.append(f"early-stop: val_bpa {val_bpa:.4f} >= {tc.target_bpa}")
                break
        if log_file is not None:
            Path(log_file).write_text("\n".join(log_lines) + "\n")
        return log_lines

    # checkpoint glue ------------------------------------------------------

    def _config_dict(self) -> dict:
        return {
            "net": self.config.to_dict(),
            "weights": asdict(self.weights),
            "train": {"epochs": self.train_config.epochs,
                      "batch_size": self.train_config.batch_size,
                      "learning_rate": self.train_config.learning_rate,
                      "seed": self.train_config.seed,
                      "mask_source": self.train_config.mask_source.value,
                      "normalization": self.train_config.normalization.value,
                      "target_bpa": self.train_config.target_bpa},
            "channel": [s.describe() for s in self.channel.specs],
            "channel_mode": self.channel.mode.value,
            "epoch": self.epoch,
            "step": self.step,
            "best_bpa": self.best_bpa,
        }

    def _collect_arrays(self) -> dict:
        arrays = {}
        for name, t in self.pipeline.state_dict().items():
            arrays[f"model/{name}"] = t.detach().cpu().numpy()
        for tag, opt in (("gen", self.opt_gen), ("disc", self.opt_disc)):
            sd = opt.state_dict()
            for pidx, state in sd["state"].items():
                for key, value in state.items():
                    if isinstance(value, torch.Tensor):
                        arrays[f"opt_{tag}/{pidx}/{key}"] = value.detach().cpu().numpy()
                    else:
                        arrays[f"opt_{tag}/{pidx}/{key}"] = np.asarray([value], dtype=np.float64)
        return arrays

    def save(self, path) -> None:
        checkpoint.save_bundle(path, self._config_dict(), self._collect_arrays())
        self.last_checkpoint_path = str(path)

    @classmethod
    def load(cls, path) -> "Trainer":
        config, arrays = checkpoint.load_bundle(path)
        net_cfg = NetConfig.from_dict(config["net"])
        tc = config["train"]
        train_config = TrainConfig(
            epochs=tc["epochs"], batch_size=tc["batch_size"],
            learning_rate=tc["learning_rate"], seed=tc["seed"],
            mask_source=attention.MaskSource(tc["mask_source"]),
            normalization=attention.NormalizationKind(tc["normalization"]),
            target_bpa=tc["target_bpa"])
        mode = distortions.SamplingMode(config["channel_mode"])
        specs = [distortions.DistortionSpec.parse(s) for s in config["channel"]]
        channel = distortions.ChannelConfig(specs=specs, mode=mode)
        weights = LossWeights(**config["weights"])
        trainer = cls(net_cfg, channel, weights, train_config)
        state = {}
        for name, arr in arrays.items():
            if name.startswith("model/"):
                state[name[len("model/"):]] = torch.from_numpy(arr)
        current = trainer.pipeline.state_dict()
        for key in state:  # keep integer buffers (BN counters) at their dtype
            state[key] = state[key].to(current[key].dtype)
        trainer.pipeline.load_state_dict(state)
        for tag, opt in (("gen", trainer.opt_gen), ("disc", trainer.opt_disc)):
            sd = opt.state_dict()
            prefix = f"opt_{tag}/"
            opt_state = {}
            for name, arr in arrays.items():
                if not name.startswith(prefix):
                    continue
                _, pidx, key = name.split("/", 2)
                entry = opt_state.setdefault(int(pidx), {})
                if key == "step":
                    entry[key] = torch.tensor(float(arr[0]))
                else:
                    entry[key] = torch.from_numpy(arr)
            if opt_state:
                sd["state"] = opt_state
                opt.load_state_dict(sd)
        trainer.epoch = config["epoch"]
        trainer.step = config["step"]
        trainer.best_bpa = config["best_bpa"]
        return trainer
