"""Sliding-window encoding of documents longer than the encoder's input limit.

A :class:`WindowPlan` lays overlapping windows over the token sequence and
marks, for every slot, whether the slot's output is the token's final
embedding (``1``), context only (``-2``), a CLS/SEP slot (``-3``) or padding
(``-4``).  Every real token is owned by exactly one slot.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

OWNED = 1
CONTEXT_ONLY = -2
SPECIAL = -3
PAD = -4

SPECIAL_SLOT = -1  # slot holds CLS/SEP/PAD rather than a document token


class ConfigError(ValueError):
    pass


class EncodingError(RuntimeError):
    def __init__(self, window_index: int, cause: BaseException):
        super().__init__(f"encoder failed on window {window_index}: {cause}")
        self.window_index = window_index


@dataclass(frozen=True)
class WindowPlan:
    window_size: int
    token_count: int
    slots: np.ndarray  # (num_windows, window_size) token index, SPECIAL_SLOT for CLS/SEP/PAD
    masks: np.ndarray  # (num_windows, window_size) values in {1, -2, -3, -4}

    @property
    def num_windows(self) -> int:
        return self.slots.shape[0]

    @property
    def stride(self) -> int:
        return max((self.window_size - 2) // 2, 1)

    @property
    def windows(self) -> list[tuple[list[int], list[int]]]:
        return [(s.tolist(), m.tolist()) for s, m in zip(self.slots, self.masks)]

    def owners(self) -> np.ndarray:
        """``(token_count, 2)`` array of the (window, position) owning each token."""
        w, p = np.nonzero(self.masks == OWNED)
        tok = self.slots[w, p]
        out = np.empty((self.token_count, 2), dtype=np.int64)
        out[tok, 0] = w
        out[tok, 1] = p
        return out


def build_window_plan(token_count: int, window_size: int = 512) -> WindowPlan:
    """Enumerate overlapping encoder windows over ``token_count`` tokens.

    Each window holds CLS, up to ``window_size - 2`` tokens, SEP and padding.
    Windows advance by ``(window_size - 2) // 2`` tokens.  Within a window the
    first ``inner // 4`` tokens are left context, the next ``inner // 2`` are
    owned and the remainder is right context; the first window also owns its
    left context and the last window its right context.  Documents that fit
    in one window are owned entirely by it.
    """
    n = window_size
    if n < 4:
        raise ConfigError(f"window_size must be >= 4, got {n}")
    if token_count < 0:
        raise ConfigError(f"token_count must be >= 0, got {token_count}")
    inner = n - 2
    if token_count == 0:
        empty = np.zeros((0, n), dtype=np.int64)
        return WindowPlan(n, 0, empty, empty.copy())

    if token_count <= inner:
        starts = [0]
        owned_ranges = [(0, token_count)]
    else:
        left, middle = inner // 4, inner // 2
        num = -(-(token_count - left) // middle)
        starts = [w * middle for w in range(num)]
        owned_ranges = []
        for w, start in enumerate(starts):
            lo = 0 if w == 0 else start + left
            hi = token_count if w == num - 1 else start + left + middle
            owned_ranges.append((lo, hi))

    slots = np.full((len(starts), n), SPECIAL_SLOT, dtype=np.int64)
    masks = np.full((len(starts), n), PAD, dtype=np.int64)
    for w, (start, (lo, hi)) in enumerate(zip(starts, owned_ranges)):
        idx = np.arange(start, min(start + inner, token_count))
        k = len(idx)
        slots[w, 1 : k + 1] = idx
        masks[w, 0] = SPECIAL
        masks[w, k + 1] = SPECIAL
        masks[w, 1 : k + 1] = np.where((idx >= lo) & (idx < hi), OWNED, CONTEXT_ONLY)
    return WindowPlan(n, token_count, slots, masks)


# ---------------------------------------------------------------------------
# encoders


class ContextualEncoder(nn.Module):
    """Interface for window encoders.

    Subclasses map ``(num_windows, window_size)`` token ids plus an attention
    mask to ``(num_windows, window_size, hidden_size)`` outputs.
    """

    hidden_size: int
    max_length: int
    pad_id: int
    cls_id: int
    sep_id: int

    def token_ids(self, tokens: Sequence[str]) -> list[int]:
        raise NotImplementedError

    def forward(self, input_ids: torch.Tensor, attention_mask: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError


class HashEncoder(ContextualEncoder):
    """Small deterministic encoder for tests and demos.

    Tokens are hashed (crc32) into a bucketed embedding table and mixed by a
    single transformer layer, so outputs depend on window context.
    """

    def __init__(self, hidden_size: int = 32, max_length: int = 64, buckets: int = 2048,
                 num_layers: int = 1, num_heads: int = 2, seed: int = 0):
        super().__init__()
        self.hidden_size = hidden_size
        self.max_length = max_length
        self.buckets = buckets
        self.pad_id, self.cls_id, self.sep_id = 0, 1, 2
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.embed = nn.Embedding(buckets + 3, hidden_size, padding_idx=0)
            self.position = nn.Embedding(max_length, hidden_size)
            layer = nn.TransformerEncoderLayer(
                hidden_size, num_heads, dim_feedforward=2 * hidden_size, dropout=0.0, batch_first=True
            )
            self.layers = nn.TransformerEncoder(layer, num_layers, enable_nested_tensor=False)

    def token_ids(self, tokens):
        return [3 + zlib.crc32(t.lower().encode("utf-8")) % self.buckets for t in tokens]

    def forward(self, input_ids, attention_mask):
        pos = torch.arange(input_ids.shape[1], device=input_ids.device)
        x = self.embed(input_ids) + self.position(pos)[None]
        return self.layers(x, src_key_padding_mask=attention_mask == 0)


class PretrainedEncoder(ContextualEncoder):
    """Wraps a Hugging Face encoder such as BioMedBERT.

    The model is downloaded on first use; ``transformers`` is imported lazily.
    """

    def __init__(self, name: str = "microsoft/BiomedNLP-BiomedBERT-base-uncased-abstract-fulltext"):
        super().__init__()
        from transformers import AutoModel, AutoTokenizer

        self.name = name
        self.tokenizer = AutoTokenizer.from_pretrained(name)
        self.model = AutoModel.from_pretrained(name)
        self.hidden_size = self.model.config.hidden_size
        self.max_length = min(self.tokenizer.model_max_length, self.model.config.max_position_embeddings)
        self.pad_id = self.tokenizer.pad_token_id
        self.cls_id = self.tokenizer.cls_token_id
        self.sep_id = self.tokenizer.sep_token_id

    def token_ids(self, tokens):
        return self.tokenizer.convert_tokens_to_ids(list(tokens))

    def tokenize(self, text: str):
        """Tokenizer with character offsets, usable by the corpus readers."""
        enc = self.tokenizer(text, add_special_tokens=False, return_offsets_mapping=True)
        pieces = self.tokenizer.convert_ids_to_tokens(enc["input_ids"])
        return [(p, s, e) for p, (s, e) in zip(pieces, enc["offset_mapping"])]

    def forward(self, input_ids, attention_mask):
        return self.model(input_ids=input_ids, attention_mask=attention_mask).last_hidden_state


def set_frozen(encoder: nn.Module, frozen: bool = True) -> None:
    for p in encoder.parameters():
        p.requires_grad_(not frozen)


@dataclass
class EncodedDocument:
    token_embeddings: torch.Tensor  # (L, d)
    window_summaries: torch.Tensor  # (num_windows, d), CLS-slot outputs
    window_plan: WindowPlan


def encode_document(tokens: Sequence[str], encoder: ContextualEncoder, window_size: int | None = None,
                    batch_size: int = 8) -> EncodedDocument:
    """Run ``encoder`` over a sliding-window plan and assemble one vector per token."""
    n = window_size or encoder.max_length
    if n > encoder.max_length:
        raise ConfigError(f"window_size {n} exceeds encoder max length {encoder.max_length}")
    plan = build_window_plan(len(tokens), n)
    param = next(encoder.parameters(), None)
    device = param.device if param is not None else torch.device("cpu")
    dtype = param.dtype if param is not None else torch.get_default_dtype()
    if plan.num_windows == 0:
        empty = torch.zeros((0, encoder.hidden_size), device=device, dtype=dtype)
        return EncodedDocument(empty, empty.clone(), plan)

    ids = np.asarray(encoder.token_ids(list(tokens)), dtype=np.int64)
    input_ids = np.full(plan.slots.shape, encoder.pad_id, dtype=np.int64)
    real = plan.slots >= 0
    input_ids[real] = ids[plan.slots[real]]
    specials = plan.masks == SPECIAL
    input_ids[:, 0] = encoder.cls_id
    sep_rows, sep_cols = np.nonzero(specials)
    sep = sep_cols > 0
    input_ids[sep_rows[sep], sep_cols[sep]] = encoder.sep_id
    attention = (plan.masks != PAD).astype(np.int64)

    input_ids_t = torch.as_tensor(input_ids, device=device)
    attention_t = torch.as_tensor(attention, device=device)
    outputs = []
    for lo in range(0, plan.num_windows, batch_size):
        hi = min(lo + batch_size, plan.num_windows)
        try:
            outputs.append(encoder(input_ids_t[lo:hi], attention_t[lo:hi]))
        except Exception as exc:
            for w in range(lo, hi):
                try:
                    encoder(input_ids_t[w : w + 1], attention_t[w : w + 1])
                except Exception as inner:
                    raise EncodingError(w, inner) from inner
            raise EncodingError(lo, exc) from exc
    out = torch.cat(outputs, dim=0)
    owners = torch.as_tensor(plan.owners(), device=device)
    rho = out[owners[:, 0], owners[:, 1]]
    return EncodedDocument(rho, out[:, 0], plan)
