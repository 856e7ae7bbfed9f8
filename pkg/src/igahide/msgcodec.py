"""Symmetric message coding.

A two-layer MLP compresses a k-bit binary message to an l-dim real vector in
(0,1) before embedding; a mirrored MLP maps the decoded l-dim vector back to
k recovered values. k > l always (compression, never expansion).
"""

import torch
import torch.nn as nn


class MessageEncoder(nn.Module):
    """k bits -> l real values: ReLU hidden layer, sigmoid output."""

    def __init__(self, k: int, l: int, hidden: int | None = None):
        super().__init__()
        if l >= k:
            raise ValueError(f"compressed length l={l} must be < message length k={k}")
        self.k = k
        self.l = l
        self.hidden = hidden if hidden is not None else 2 * k
        self.fc1 = nn.Linear(k, self.hidden)
        self.fc2 = nn.Linear(self.hidden, l)

    def forward(self, m: torch.Tensor) -> torch.Tensor:
        if m.shape[-1] != self.k:
            raise ValueError(f"expected message length {self.k}, got {m.shape[-1]}")
        return torch.sigmoid(self.fc2(torch.relu(self.fc1(m))))


class MessageDecoder(nn.Module):
    """l real values -> k recovered values in (0,1)."""

    def __init__(self, k: int, l: int, hidden: int | None = None):
        super().__init__()
        self.k = k
        self.l = l
        self.hidden = hidden if hidden is not None else 2 * k
        self.fc1 = nn.Linear(l, self.hidden)
        self.fc2 = nn.Linear(self.hidden, k)

    def forward(self, m_de: torch.Tensor) -> torch.Tensor:
        if m_de.shape[-1] != self.l:
            raise ValueError(f"expected decoded length {self.l}, got {m_de.shape[-1]}")
        return torch.sigmoid(self.fc2(torch.relu(self.fc1(m_de))))


class MessageCodec(nn.Module):
    """Paired encoder/decoder with shared (k, l, hidden) configuration."""

    def __init__(self, k: int, l: int, hidden: int | None = None):
        super().__init__()
        self.encoder = MessageEncoder(k, l, hidden)
        self.decoder = MessageDecoder(k, l, hidden)
        self.k = k
        self.l = l

    def encode(self, m: torch.Tensor) -> torch.Tensor:
        return self.encoder(m)

    def decode(self, m_de: torch.Tensor) -> torch.Tensor:
        return self.decoder(m_de)


def message_losses(m, m_out, m_en, m_de, weight_reconstruction: float,
                   weight_decoding: float):
    """(reconstruction, decoding) MSE losses over message elements.

    Reconstruction compares the original bits with the recovered values;
    decoding compares the encoded vector with what came back off the image.
    """
    if m.shape != m_out.shape:
        raise ValueError(f"message shape {tuple(m.shape)} != output shape {tuple(m_out.shape)}")
    if m_en.shape != m_de.shape:
        raise ValueError(f"encoded shape {tuple(m_en.shape)} != decoded shape {tuple(m_de.shape)}")
    l_mr = weight_reconstruction * torch.mean((m - m_out) ** 2)
    l_md = weight_decoding * torch.mean((m_en - m_de) ** 2)
    return l_mr, l_md


def binarize(values: torch.Tensor) -> torch.Tensor:
    """Hard bits from recovered values; threshold 0.5, ties to 1."""
    return (values >= 0.5).to(values.dtype)
