"""Text encoders: tokenization, token encoding, embedding injection, pooling.

Two interchangeable backends share one interface:

* ``toy``: a small seeded transformer encoder (learned token + position
  embeddings, pre-norm multi-head self-attention, GELU feed-forward) with a
  hash-based whitespace tokenizer. Fully deterministic, runs on a laptop,
  and is the backend every test uses.
* ``pretrained``: a bidirectional transformer loaded by identifier from
  the standard pretrained-model hub format (requires the ``pretrained``
  extra). Width 768, sequence length 512.

Both backends expose ``forward`` (token ids in) and ``forward_embeddings``
(pre-computed per-token embeddings in, bypassing the lookup table), which is
what lets one encoder's output sequence feed another encoder as input.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
NUM_SPECIAL_TOKENS = 3


class EncoderError(RuntimeError):
    """Encoder produced invalid output (e.g. non-finite states)."""


@dataclass
class EncoderConfig:
    backend: str = "toy"
    max_length: int = 512
    width: int = 8
    layers: int = 1
    heads: int = 2
    ff_width: int = 32
    vocab_size: int = 64
    seed: int = 0
    reapply_positions: bool = True
    verify_finite: bool = True
    pretrained_id: str = "bert-base-uncased"

    def validate(self) -> list[str]:
        problems = []
        if self.backend not in ("toy", "pretrained"):
            problems.append(f"unknown encoder backend {self.backend!r}")
        if self.max_length < 3:
            problems.append("max_length must be >= 3 (start + one token + end)")
        if self.backend == "toy":
            if self.width < 1 or self.width % self.heads != 0:
                problems.append("toy width must be positive and divisible by heads")
            if self.layers < 1:
                problems.append("toy layers must be >= 1")
            if self.ff_width < 1:
                problems.append("toy ff_width must be >= 1")
            if self.vocab_size < NUM_SPECIAL_TOKENS + 1:
                problems.append(f"toy vocab_size must be > {NUM_SPECIAL_TOKENS}")
        if self.backend == "pretrained" and not self.reapply_positions:
            problems.append("pretrained backend always re-applies position embeddings")
        return problems

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "max_length": self.max_length,
            "width": self.width,
            "layers": self.layers,
            "heads": self.heads,
            "ff_width": self.ff_width,
            "vocab_size": self.vocab_size,
            "seed": self.seed,
            "reapply_positions": self.reapply_positions,
            "verify_finite": self.verify_finite,
            "pretrained_id": self.pretrained_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EncoderConfig":
        return cls(**data)


@dataclass
class TokenizedPost:
    """Fixed-length token ids plus the matching attention mask."""

    input_ids: torch.Tensor    # (max_length,), long
    attention_mask: torch.Tensor  # (max_length,), long; prefix of 1s

    @property
    def num_real_tokens(self) -> int:
        return int(self.attention_mask.sum().item())


@dataclass
class SequenceRepresentation:
    """Per-token hidden states plus the pooled start-of-sequence vector.

    ``pooled`` is the final-layer state at position 0 (no extra pooler
    transformation). Tensors carry an optional leading batch dimension.
    """

    hidden: torch.Tensor  # (..., max_length, width)
    pooled: torch.Tensor  # (..., width)


def pool_cls(rep: SequenceRepresentation) -> torch.Tensor:
    """Final-layer hidden state at sequence position 0."""
    return rep.pooled


class ToyTokenizer:
    """Whitespace tokenizer over a fixed seeded vocabulary.

    Words map to ids through a keyed hash, so the mapping is stable across
    processes and runs. Ids 0/1/2 are reserved for pad / start / end.
    """

    def __init__(self, vocab_size: int, max_length: int, seed: int = 0):
        if vocab_size < NUM_SPECIAL_TOKENS + 1:
            raise ValueError(f"vocab_size must be > {NUM_SPECIAL_TOKENS}")
        if max_length < 3:
            raise ValueError("max_length must be >= 3")
        self.vocab_size = vocab_size
        self.max_length = max_length
        self.seed = seed

    def token_id(self, word: str) -> int:
        digest = hashlib.blake2b(
            f"{self.seed}:{word}".encode("utf-8"), digest_size=8
        ).digest()
        bucket = int.from_bytes(digest, "big") % (self.vocab_size - NUM_SPECIAL_TOKENS)
        return NUM_SPECIAL_TOKENS + bucket

    def tokenize(self, text: str) -> TokenizedPost:
        """Pad/truncate to max_length; start/end markers survive truncation."""
        if not text.strip():
            raise ValueError("cannot tokenize empty text")
        words = text.split()
        body = [self.token_id(w) for w in words][: self.max_length - 2]
        ids = [CLS_ID] + body + [SEP_ID]
        mask = [1] * len(ids)
        pad = self.max_length - len(ids)
        ids.extend([PAD_ID] * pad)
        mask.extend([0] * pad)
        return TokenizedPost(
            input_ids=torch.tensor(ids, dtype=torch.long),
            attention_mask=torch.tensor(mask, dtype=torch.long),
        )

    def tokenize_batch(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        tokenized = [self.tokenize(t) for t in texts]
        ids = torch.stack([t.input_ids for t in tokenized])
        mask = torch.stack([t.attention_mask for t in tokenized])
        return ids, mask


class ToyEncoderLayer(nn.Module):
    def __init__(self, width: int, heads: int, ff_width: int):
        super().__init__()
        self.heads = heads
        self.head_dim = width // heads
        self.attn_norm = nn.LayerNorm(width)
        self.qkv = nn.Linear(width, 3 * width)
        self.attn_out = nn.Linear(width, width)
        self.ff_norm = nn.LayerNorm(width)
        self.ff_up = nn.Linear(width, ff_width)
        self.ff_down = nn.Linear(ff_width, width)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        batch, length, width = x.shape
        h = self.attn_norm(x)
        q, k, v = self.qkv(h).chunk(3, dim=-1)
        q = q.view(batch, length, self.heads, self.head_dim).transpose(1, 2)
        k = k.view(batch, length, self.heads, self.head_dim).transpose(1, 2)
        v = v.view(batch, length, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        # padded keys are excluded entirely so pad content cannot leak
        scores = scores.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        attn = scores.softmax(dim=-1)
        context = (attn @ v).transpose(1, 2).reshape(batch, length, width)
        x = x + self.attn_out(context)
        x = x + self.ff_down(F.gelu(self.ff_up(self.ff_norm(x))))
        return x


class ToyEncoder(nn.Module):
    """Small deterministic transformer encoder for desk-scale verification."""

    def __init__(self, config: EncoderConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        problems = config.validate()
        if problems:
            raise ValueError("; ".join(problems))
        self.config = config
        self.token_embedding = nn.Embedding(config.vocab_size, config.width)
        self.position_embedding = nn.Embedding(config.max_length, config.width)
        self.layers = nn.ModuleList(
            ToyEncoderLayer(config.width, config.heads, config.ff_width)
            for _ in range(config.layers)
        )
        self.final_norm = nn.LayerNorm(config.width)
        self.to(dtype)
        seeded_uniform_init_(self, torch.Generator().manual_seed(config.seed))

    @property
    def width(self) -> int:
        return self.config.width

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> SequenceRepresentation:
        if input_ids.dim() != 2 or input_ids.shape[-1] != self.config.max_length:
            raise ValueError(
                f"expected input_ids of shape (batch, {self.config.max_length}), "
                f"got {tuple(input_ids.shape)}"
            )
        x = self.token_embedding(input_ids)
        x = x + self.position_embedding.weight.unsqueeze(0)
        return self._encode(x, attention_mask)

    def forward_embeddings(self, embeddings: torch.Tensor, attention_mask: torch.Tensor) -> SequenceRepresentation:
        """Encode pre-computed embeddings, bypassing the token lookup."""
        expected = (self.config.max_length, self.config.width)
        if embeddings.dim() != 3 or tuple(embeddings.shape[-2:]) != expected:
            raise ValueError(
                f"expected embeddings of shape (batch, {expected[0]}, {expected[1]}), "
                f"got {tuple(embeddings.shape)}"
            )
        x = embeddings
        if self.config.reapply_positions:
            x = x + self.position_embedding.weight.unsqueeze(0)
        return self._encode(x, attention_mask)

    def _encode(self, x: torch.Tensor, attention_mask: torch.Tensor) -> SequenceRepresentation:
        pad_mask = attention_mask == 0
        for layer in self.layers:
            x = layer(x, pad_mask)
        hidden = self.final_norm(x)
        if self.config.verify_finite and not torch.isfinite(hidden).all():
            raise EncoderError("encoder produced non-finite hidden states")
        return SequenceRepresentation(hidden=hidden, pooled=hidden[..., 0, :])


class PretrainedEncoder(nn.Module):
    """Wrapper around a hub-distributed bidirectional transformer encoder."""

    def __init__(self, config: EncoderConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        problems = config.validate()
        if problems:
            raise ValueError("; ".join(problems))
        try:
            from transformers import AutoModel
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise ImportError(
                "the pretrained backend needs the 'pretrained' extra: "
                "pip install mtltext[pretrained]"
            ) from exc
        self.model = AutoModel.from_pretrained(config.pretrained_id)
        config.width = int(self.model.config.hidden_size)
        self.config = config
        self.to(dtype)

    @property
    def width(self) -> int:
        return self.config.width

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> SequenceRepresentation:
        out = self.model(input_ids=input_ids, attention_mask=attention_mask)
        hidden = out.last_hidden_state
        if self.config.verify_finite and not torch.isfinite(hidden).all():
            raise EncoderError("encoder produced non-finite hidden states")
        return SequenceRepresentation(hidden=hidden, pooled=hidden[..., 0, :])

    def forward_embeddings(self, embeddings: torch.Tensor, attention_mask: torch.Tensor) -> SequenceRepresentation:
        # position embeddings are re-applied inside the embedding layer
        out = self.model(inputs_embeds=embeddings, attention_mask=attention_mask)
        hidden = out.last_hidden_state
        if self.config.verify_finite and not torch.isfinite(hidden).all():
            raise EncoderError("encoder produced non-finite hidden states")
        return SequenceRepresentation(hidden=hidden, pooled=hidden[..., 0, :])


class PretrainedTokenizer:
    """Hub tokenizer adapted to the fixed-length TokenizedPost contract."""

    def __init__(self, config: EncoderConfig):
        try:
            from transformers import AutoTokenizer
        except ImportError as exc:  # pragma: no cover - environment dependent
            raise ImportError(
                "the pretrained backend needs the 'pretrained' extra: "
                "pip install mtltext[pretrained]"
            ) from exc
        self.inner = AutoTokenizer.from_pretrained(config.pretrained_id)
        self.max_length = config.max_length

    def tokenize(self, text: str) -> TokenizedPost:
        if not text.strip():
            raise ValueError("cannot tokenize empty text")
        enc = self.inner(text, padding="max_length", truncation=True,
                         max_length=self.max_length, return_tensors="pt")
        return TokenizedPost(
            input_ids=enc["input_ids"][0],
            attention_mask=enc["attention_mask"][0],
        )

    def tokenize_batch(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        for text in texts:
            if not text.strip():
                raise ValueError("cannot tokenize empty text")
        enc = self.inner(list(texts), padding="max_length", truncation=True,
                         max_length=self.max_length, return_tensors="pt")
        return enc["input_ids"], enc["attention_mask"]


def seeded_uniform_init_(module: nn.Module, generator: torch.Generator) -> None:
    """Scaled-uniform init: weights ~ U(±1/sqrt(fan_in)), biases 0, norms identity.

    Parameters are visited in registration order, so one generator gives the
    whole module tree a reproducible initialization.
    """
    for sub in module.modules():
        if isinstance(sub, nn.Linear):
            bound = 1.0 / math.sqrt(sub.in_features)
            sub.weight.data.uniform_(-bound, bound, generator=generator)
            if sub.bias is not None:
                sub.bias.data.zero_()
        elif isinstance(sub, nn.Embedding):
            bound = 1.0 / math.sqrt(sub.embedding_dim)
            sub.weight.data.uniform_(-bound, bound, generator=generator)
        elif isinstance(sub, nn.LayerNorm):
            sub.weight.data.fill_(1.0)
            sub.bias.data.zero_()


def build_tokenizer(config: EncoderConfig):
    if config.backend == "toy":
        return ToyTokenizer(config.vocab_size, config.max_length, seed=config.seed)
    return PretrainedTokenizer(config)


def build_encoder(config: EncoderConfig, dtype: torch.dtype = torch.float32):
    if config.backend == "toy":
        return ToyEncoder(config, dtype=dtype)
    return PretrainedEncoder(config, dtype=dtype)
