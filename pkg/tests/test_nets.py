import pytest
import torch

from igahide.attention import expand_message
from igahide.nets import (DecoderNet, Discriminator, EmbeddingNet,
                          FeatureExtractor, NetConfig, extract_features)


def mini_config(**overrides):
    defaults = dict(height=16, width=16, base_width=8, message_length=8,
                    encoded_length=4)
    defaults.update(overrides)
    return NetConfig(**defaults)


def test_config_rejects_unaligned_dims():
    with pytest.raises(ValueError, match="divisible by 8"):
        NetConfig(height=30, width=30)


def test_feature_channel_arithmetic():
    cfg = NetConfig(height=128, width=128, base_width=64,
                    message_length=90, encoded_length=30)
    ext = FeatureExtractor(cfg)
    attended = torch.rand(1, 3, 128, 128)
    m_exp = expand_message(torch.rand(1, 30), 128, 128)
    f = extract_features(ext, attended, m_exp)
    assert f.shape == (1, 64 + 30, 128, 128)


def test_extractor_preserves_spatial_dims():
    cfg = mini_config()
    ext = FeatureExtractor(cfg)
    out = ext(torch.rand(2, 3, 16, 16))
    assert out.shape == (2, 8, 16, 16)


def test_gradient_flows_to_both_feature_inputs():
    cfg = mini_config()
    ext = FeatureExtractor(cfg)
    attended = torch.rand(1, 3, 16, 16, requires_grad=True)
    m_en = torch.rand(1, 4, requires_grad=True)
    f = extract_features(ext, attended, expand_message(m_en, 16, 16))
    f.sum().backward()
    assert attended.grad.abs().sum() > 0
    assert m_en.grad.abs().sum() > 0


def test_embed_output_shape_and_range():
    cfg = mini_config()
    emb = EmbeddingNet(cfg)
    f = torch.rand(2, 8 + 4, 16, 16) * 4 - 2
    cover = torch.rand(2, 3, 16, 16)
    out = emb(f, cover)
    assert out.shape == cover.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_decoder_output_length():
    cfg = mini_config()
    dec = DecoderNet(cfg)
    out = dec(torch.rand(3, 3, 16, 16))
    assert out.shape == (3, 4)


def test_decoder_deterministic_at_eval():
    cfg = mini_config()
    dec = DecoderNet(cfg).eval()
    x = torch.rand(1, 3, 16, 16)
    with torch.no_grad():
        assert torch.equal(dec(x), dec(x))


def test_decoder_rejects_wrong_channels():
    dec = DecoderNet(mini_config())
    with pytest.raises(RuntimeError):
        dec(torch.rand(1, 5, 16, 16))


def test_discriminator_output_open_interval():
    disc = Discriminator(mini_config())
    p = disc(torch.rand(4, 3, 16, 16))
    assert p.shape == (4,)
    assert ((p > 0) & (p < 1)).all()
    assert torch.isfinite(torch.log(p)).all()
    assert torch.isfinite(torch.log(1 - p)).all()


def test_embedded_length_tracks_ablation_flag():
    cfg = mini_config(use_msgcodec=True)
    assert cfg.embedded_length == 4
    cfg = mini_config(use_msgcodec=False)
    assert cfg.embedded_length == 8


def test_config_round_trips_through_dict():
    cfg = mini_config(use_attention=False)
    assert NetConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("h,w,k,l", [(16, 16, 8, 4), (32, 16, 12, 5)])
def test_end_to_end_shape_chain(h, w, k, l):
    from igahide.training import Pipeline
    cfg = NetConfig(height=h, width=w, base_width=8, message_length=k, encoded_length=l)
    pipe = Pipeline(cfg).eval()
    cover = torch.rand(2, 3, h, w)
    msg = (torch.rand(2, k) < 0.5).float()
    with torch.no_grad():
        encoded = pipe.embed(cover, msg)
        assert encoded.shape == cover.shape
        m_de = pipe.decoder_net(encoded)
        assert m_de.shape == (2, l)
        m_out = pipe.extract(encoded)
        assert m_out.shape == (2, k)
