"""Bidirectional recurrent text encoder producing word and sentence features."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .data.batching import TextBatch


@dataclass
class TextEncoderConfig:
    vocab_size: int
    embedding_dim: int = 64
    hidden_dim: int = 64
    dropout_rate: float = 0.0
    cell: str = "lstm"

    @property
    def feature_dim(self) -> int:
        return 2 * self.hidden_dim


class TextEncoder(nn.Module):
    """Returns word features (B x D x T) and sentence embeddings (B x D).

    Word features at padded positions are zero. The sentence embedding is the
    concatenation of the final forward and backward hidden states, computed
    over the valid prefix only.
    """

    def __init__(self, config: TextEncoderConfig):
        super().__init__()
        if min(config.vocab_size, config.embedding_dim, config.hidden_dim) < 1:
            raise ValueError("text encoder dimensions must be >= 1")
        self.config = config
        self.embedding = nn.Embedding(config.vocab_size, config.embedding_dim, padding_idx=0)
        self.dropout = nn.Dropout(config.dropout_rate)
        rnn = {"lstm": nn.LSTM, "gru": nn.GRU}[config.cell]
        self.rnn = rnn(config.embedding_dim, config.hidden_dim, batch_first=True, bidirectional=True)
        nn.init.uniform_(self.embedding.weight, -0.1, 0.1)

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    def forward(self, tokens: torch.Tensor, lengths: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if (tokens < 0).any() or (tokens >= self.config.vocab_size).any():
            raise ValueError(f"token id out of range for vocabulary of size {self.config.vocab_size}")
        if (lengths < 1).any():
            raise ValueError("sequence lengths must be >= 1")
        T = tokens.shape[1]
        emb = self.dropout(self.embedding(tokens))
        packed = pack_padded_sequence(emb, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, hidden = self.rnn(packed)
        out, _ = pad_packed_sequence(out, batch_first=True, total_length=T)
        h_n = hidden[0] if isinstance(hidden, tuple) else hidden
        sentence = torch.cat([h_n[0], h_n[1]], dim=1)
        return out.transpose(1, 2).contiguous(), sentence

    def encode(self, batch: TextBatch) -> tuple[torch.Tensor, torch.Tensor]:
        return self(batch.tokens, batch.lengths)
