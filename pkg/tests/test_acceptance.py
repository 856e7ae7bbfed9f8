"""Acceptance gate: one test per release criterion.

Each test prints a `[criterion N] PASS` line with the measured numbers so a
release log can be read straight off `pytest -v`.  The training-based criteria
(3, 4, 5) are the slow ones; everything else finishes in seconds.
"""

import time

import pytest
import torch

from conftest import make_synthetic_images
from igahide import attention, distortions, metrics
from igahide.autodiff import check_gradient
from igahide.cli import main as cli_main
from igahide.dataio import DatasetSpec, load_dataset, random_message
from igahide.distortions import DistortionKind, DistortionSpec
from igahide.msgcodec import MessageCodec, binarize, message_losses
from igahide.nets import NetConfig
from igahide.training import (LossWeights, Pipeline, TrainConfig, Trainer,
                              adversarial_losses, image_loss)

GRAD_RTOL = 1e-4


def _scalar(f):
    """Wrap a tensor->tensor map with a fixed projection to a scalar."""
    def wrapped(x):
        out = f(x)
        gen = torch.Generator().manual_seed(99)
        w = torch.rand(out.shape, generator=gen, dtype=out.dtype)
        return (out * w).sum()
    return wrapped


def test_criterion_1_gradient_integrity():
    """Every differentiable stage matches central finite differences."""
    torch.manual_seed(0)
    start = time.time()
    checks = {}

    codec = MessageCodec(8, 4, hidden=6).double()
    m = torch.rand(3, 8)
    checks["codec"] = check_gradient(
        _scalar(lambda x: codec.decode(codec.encode(x))), m, rtol=GRAD_RTOL)

    cfg = NetConfig(height=16, width=16, message_length=8, encoded_length=4,
                    base_width=8)
    pipe = Pipeline(cfg).double().eval()
    img = torch.rand(2, 3, 16, 16) * 0.6 + 0.2
    checks["extractor"] = check_gradient(
        _scalar(pipe.extractor), img, rtol=GRAD_RTOL)
    feats = torch.rand(2, cfg.base_width + cfg.embedded_length, 16, 16)
    checks["embedder"] = check_gradient(
        _scalar(lambda x: pipe.embedder(feats.double(), x)), img, rtol=GRAD_RTOL)
    checks["decoder_net"] = check_gradient(
        _scalar(pipe.decoder_net), img, rtol=GRAD_RTOL)
    checks["discriminator"] = check_gradient(
        _scalar(pipe.discriminator), img, rtol=GRAD_RTOL)

    checks["resize"] = check_gradient(
        _scalar(lambda x: distortions.resize(x, 0.5)), img, rtol=GRAD_RTOL)
    checks["jpeg_approx"] = check_gradient(
        _scalar(lambda x: distortions.jpeg_approx(x, 50.0)),
        torch.rand(1, 3, 16, 16) * 0.2 + 0.4, rtol=GRAD_RTOL)

    mask = torch.rand(2, 3, 16, 16)
    checks["attention_apply"] = check_gradient(
        _scalar(lambda x: attention.apply_attention(x, mask.double())),
        img, rtol=GRAD_RTOL)

    target = torch.rand(2, 3, 16, 16).double()
    checks["image_loss"] = check_gradient(
        lambda x: image_loss(target, x, 0.7), img, rtol=GRAD_RTOL)
    msg = (torch.rand(3, 8) < 0.5).double()
    checks["message_losses"] = check_gradient(
        lambda x: sum(message_losses(msg, torch.sigmoid(x),
                                     torch.sigmoid(x[:, :4]),
                                     torch.sigmoid(x[:, :4] * 0.5),
                                     1.0, 1.0)),
        torch.rand(3, 8), rtol=GRAD_RTOL)
    probs = torch.rand(4, 1) * 0.8 + 0.1
    checks["adversarial_losses"] = check_gradient(
        lambda x: sum(adversarial_losses(torch.sigmoid(x),
                                         torch.sigmoid(1.0 - x),
                                         1.0, 0.001)),
        probs, rtol=GRAD_RTOL)

    elapsed = time.time() - start
    assert elapsed < 120.0
    worst = max(checks.values())
    print(f"[criterion 1] PASS worst_rel_err={worst:.2e} elapsed={elapsed:.1f}s")


def test_criterion_2_chance_level_untrained():
    """Untrained pipeline decodes random messages at chance level."""
    torch.manual_seed(0)
    cfg = NetConfig(height=32, width=32, message_length=30, encoded_length=16)
    pipe = Pipeline(cfg).eval()
    gen = torch.Generator().manual_seed(1)
    hits = []
    with torch.no_grad():
        for _ in range(100):
            cover = torch.rand(1, 3, 32, 32, generator=gen)
            message = random_message(30, gen)
            encoded = pipe.embed(cover, message.unsqueeze(0))
            recovered = pipe.extract(encoded)[0]
            hits.append(metrics.bpa(message, binarize(recovered)))
    mean_bpa = sum(hits) / len(hits)
    assert 0.45 <= mean_bpa <= 0.55
    print(f"[criterion 2] PASS mean_bpa={mean_bpa:.4f} over 3000 bits")


@pytest.fixture(scope="module")
def desk_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk_images")
    make_synthetic_images(root, 200, 64, seed=11)
    return root


def test_criterion_3_desk_scale_identity_training(desk_dataset):
    """200 images, 64x64, k=30, l=16, identity channel: BPA>=0.95, PSNR>=25."""
    images = load_dataset(DatasetSpec(root=desk_dataset, height=64, width=64))
    train_images, val_images = images[20:], images[:20]
    # width 16 / batch 8 is the best measured desk-scale recipe that fits the
    # runtime budget (probes at width 32/64 and batch 32 were slower and no
    # more accurate within 100 epochs)
    cfg = NetConfig(height=64, width=64, message_length=30, encoded_length=16,
                    base_width=16)
    tcfg = TrainConfig(epochs=100, batch_size=8, seed=0, target_bpa=0.95)
    trainer = Trainer(cfg, distortions.ChannelConfig.parse("identity"),
                      LossWeights(), tcfg)
    start = time.time()
    trainer.fit(train_images, val_images)
    elapsed_min = (time.time() - start) / 60.0
    trainer.pipeline.eval()
    spec = DistortionSpec(kind=DistortionKind.IDENTITY)
    report = metrics.evaluate(trainer.pipeline, val_images, [spec], seed=1)
    val_bpa = report.rows[0].bpa_mean
    val_psnr = report.psnr_mean
    assert elapsed_min <= 30.0
    assert val_bpa >= 0.95
    assert val_psnr >= 25.0
    print(f"[criterion 3] PASS bpa={val_bpa:.4f} psnr={val_psnr:.2f}dB "
          f"elapsed={elapsed_min:.1f}min")


ABLATION_SEEDS = (0, 1, 2)
# mild codec ratio (16 bits over 12 reals) so the codec itself can saturate;
# width 16 keeps the fifteen shared-seed runs inside a practical budget
ABLATION_SCALE = dict(size=32, k=16, l=12, epochs=60, batch_size=4, limit=120)


@pytest.fixture(scope="module")
def ablation_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ablation_images")
    make_synthetic_images(root, 120, 32, seed=21)
    return root


def _train_variant(images, *, use_msgcodec, use_attention, mask_source,
                   noise, seed):
    s = ABLATION_SCALE
    cfg = NetConfig(height=s["size"], width=s["size"], message_length=s["k"],
                    encoded_length=s["l"], base_width=16, codec_hidden=64,
                    use_msgcodec=use_msgcodec, use_attention=use_attention)
    tcfg = TrainConfig(epochs=s["epochs"], batch_size=s["batch_size"],
                       seed=seed, mask_source=mask_source)
    trainer = Trainer(cfg, distortions.ChannelConfig.parse(noise),
                      LossWeights(), tcfg)
    n_val = max(1, len(images) // 10)
    trainer.fit(images[n_val:], images[:n_val])
    return trainer.validation_bpa(images[:n_val])


@pytest.fixture(scope="module")
def ablation_scores(ablation_dataset):
    """Shared-seed runs for criteria 4 and 5; keyed by (variant, noise)."""
    s = ABLATION_SCALE
    images = load_dataset(DatasetSpec(root=ablation_dataset, height=s["size"],
                                      width=s["size"], limit=s["limit"]))
    variants = {
        ("basic", "identity"): dict(use_msgcodec=False, use_attention=False,
                                    mask_source=attention.MaskSource.ONES,
                                    noise="identity"),
        ("both", "identity"): dict(use_msgcodec=True, use_attention=True,
                                   mask_source=attention.MaskSource.IGA,
                                   noise="identity"),
        ("sobel", "identity"): dict(use_msgcodec=True, use_attention=True,
                                    mask_source=attention.MaskSource.SOBEL,
                                    noise="identity"),
        ("basic", "combined"): dict(use_msgcodec=False, use_attention=False,
                                    mask_source=attention.MaskSource.ONES,
                                    noise="combined"),
        ("attention", "combined"): dict(use_msgcodec=False, use_attention=True,
                                        mask_source=attention.MaskSource.IGA,
                                        noise="combined"),
    }
    scores = {}
    for key, kwargs in variants.items():
        runs = [_train_variant(images, seed=seed, **kwargs)
                for seed in ABLATION_SEEDS]
        scores[key] = sum(runs) / len(runs)
    return scores


def test_criterion_4_ablation_direction(ablation_scores):
    """Attention helps under combined noise; full model beats basic on identity."""
    cn_gain = ablation_scores[("attention", "combined")] - ablation_scores[("basic", "combined")]
    id_gain = ablation_scores[("both", "identity")] - ablation_scores[("basic", "identity")]
    assert cn_gain >= 0.0
    assert id_gain >= 0.0
    print(f"[criterion 4] PASS combined_gain={cn_gain:+.4f} "
          f"identity_gain={id_gain:+.4f} (mean of {len(ABLATION_SEEDS)} seeds)")


def test_criterion_5_sobel_substitution(ablation_scores):
    """Learned attention >= Sobel mask >= no attention on identity BPA."""
    a = ablation_scores[("both", "identity")]
    s = ablation_scores[("sobel", "identity")]
    b = ablation_scores[("basic", "identity")]
    assert a >= s >= b
    print(f"[criterion 5] PASS iga={a:.4f} >= sobel={s:.4f} >= basic={b:.4f}")


def test_criterion_6_metric_exactness():
    assert metrics.rs_bpp(30, 0.5) == 0.0
    assert metrics.rs_bpp(30, 1.0) == 30.0
    assert metrics.rs_bpp(30, 0.0) == -30.0
    x = torch.zeros(3, 8, 8, dtype=torch.float64)
    y = torch.full((3, 8, 8), 0.1, dtype=torch.float64)
    assert abs(metrics.psnr(x, y) - 20.0) <= 1e-9
    assert metrics.psnr(x, x.clone()) == metrics.PSNR_CAP_DB
    m = torch.tensor([1.0, 0.0, 1.0, 1.0])
    assert metrics.bpa(m, m.clone()) == 1.0
    assert metrics.bpa(m, 1.0 - m) == 0.0
    assert metrics.bpa(m, torch.tensor([1.0, 0.0, 0.0, 0.0])) == 0.5
    print("[criterion 6] PASS metric exactness")


def test_criterion_7_distortion_contracts():
    gen = torch.Generator().manual_seed(5)
    i_en = torch.rand(3, 16, 16, generator=gen)
    i_co = torch.rand(3, 16, 16, generator=gen)

    assert torch.equal(distortions.dropout(i_en, i_co, 1.0, gen), i_en)
    assert torch.equal(distortions.dropout(i_en, i_co, 0.0, gen), i_co)
    assert torch.equal(distortions.cropout(i_en, i_co, 1.0, gen), i_en)
    assert torch.equal(distortions.cropout(i_en, i_co, 0.0, gen), i_co)

    for ratio in (0.3, 0.5, 0.999, 1.0):
        kept = int(distortions.crop(i_en, ratio, gen).abs().sum(dim=0).bool().sum())
        side = int(ratio ** 0.5 * 16)
        assert kept <= side * side
        expected = side * side
        # zero-valued encoded pixels inside the box cannot be counted, so
        # check the exact count via an all-ones image instead
        kept_exact = int(distortions.crop(torch.ones(3, 16, 16), ratio,
                                          torch.Generator().manual_seed(6))
                         .sum().item()) // 3
        assert kept_exact == expected

    smooth = distortions.resize(torch.rand(1, 3, 16, 16, generator=gen), 0.5)
    round_trip = distortions.jpeg_approx(smooth, 100.0)
    assert torch.max(torch.abs(round_trip - smooth)).item() <= 1e-6

    cfg = distortions.ChannelConfig.parse("combined")
    counts = {}
    gen = torch.Generator().manual_seed(7)
    draws = 10_000
    for _ in range(draws):
        kind = distortions.sample_channel(cfg, gen).kind
        counts[kind] = counts.get(kind, 0) + 1
    assert len(counts) == 5
    assert DistortionKind.IDENTITY not in counts
    freqs = {k.value: c / draws for k, c in counts.items()}
    for freq in freqs.values():
        assert abs(freq - 0.2) <= 0.02
    print(f"[criterion 7] PASS sampler_freqs={freqs}")


def test_criterion_8_reproducibility(image_dir, tmp_path):
    flags = ["--k", "8", "--l", "4", "--size", "16", "--epochs", "2",
             "--batch-size", "4", "--limit", "12", "--noise", "combined",
             "--seed", "13", "--data", str(image_dir)]
    logs = []
    for name in ("run_a", "run_b"):
        outdir = tmp_path / name
        assert cli_main(["train", "--outdir", str(outdir)] + flags) == 0
        logs.append((outdir / "training_log.txt").read_text())
    assert logs[0] == logs[1]

    trainer = Trainer.load(tmp_path / "run_a" / "checkpoint.igah")
    trainer.pipeline.eval()
    reloaded = Trainer.load(tmp_path / "run_a" / "checkpoint.igah")
    reloaded.pipeline.eval()
    gen = torch.Generator().manual_seed(3)
    cover = torch.rand(2, 3, 16, 16, generator=gen)
    message = torch.stack([random_message(8, gen) for _ in range(2)])
    with torch.no_grad():
        out_a = trainer.pipeline.embed(cover, message)
        out_b = reloaded.pipeline.embed(cover, message)
        rec_a = trainer.pipeline.extract(out_a)
        rec_b = reloaded.pipeline.extract(out_b)
    assert torch.equal(out_a, out_b)
    assert torch.equal(rec_a, rec_b)
    print("[criterion 8] PASS bit-identical logs and checkpoint round trip")
