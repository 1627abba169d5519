"""Pre-norm decoder-only transformer on top of :mod:`ceulab.autodiff`."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from ..autodiff import Tensor, embedding, gelu, layer_norm, softmax
from ..corpus import PAD
from ..losses import IGNORE_INDEX
from .template import TokenizedExample


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 64
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_seq_len: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 4:
            raise ValueError("vocab_size must be at least 4")
        if self.d_model < 1 or self.n_layers < 1 or self.n_heads < 1 or self.max_seq_len < 1:
            raise ValueError("model dimensions must be positive")
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")

    @property
    def d_ff(self) -> int:
        return 4 * self.d_model

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: dict[str, np.ndarray]

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def leaves(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.arrays.items()}

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.arrays):
            arr = np.ascontiguousarray(self.arrays[name], dtype=np.float64)
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def n_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())


def init_model(cfg: ModelConfig) -> ModelParams:
    """Gaussian init (std 0.02, residual projections scaled by depth) from
    ``cfg.seed``; the same seed gives bitwise-identical parameters."""
    rng = np.random.default_rng(cfg.seed)
    d, v, ff = cfg.d_model, cfg.vocab_size, cfg.d_ff
    resid_std = 0.02 / np.sqrt(2 * cfg.n_layers)

    def normal(shape, std=0.02):
        return rng.normal(0.0, std, size=shape)

    arrays: dict[str, np.ndarray] = {
        "tok_emb": normal((v, d)),
        "pos_emb": normal((cfg.max_seq_len, d)),
    }
    for layer in range(cfg.n_layers):
        p = f"h{layer}."
        arrays[p + "ln1_g"] = np.ones(d)
        arrays[p + "ln1_b"] = np.zeros(d)
        arrays[p + "w_qkv"] = normal((d, 3 * d))
        arrays[p + "b_qkv"] = np.zeros(3 * d)
        arrays[p + "w_o"] = normal((d, d), resid_std)
        arrays[p + "b_o"] = np.zeros(d)
        arrays[p + "ln2_g"] = np.ones(d)
        arrays[p + "ln2_b"] = np.zeros(d)
        arrays[p + "w_fc"] = normal((d, ff))
        arrays[p + "b_fc"] = np.zeros(ff)
        arrays[p + "w_proj"] = normal((ff, d), resid_std)
        arrays[p + "b_proj"] = np.zeros(d)
    arrays["lnf_g"] = np.ones(d)
    arrays["lnf_b"] = np.zeros(d)
    arrays["w_out"] = normal((d, v))
    arrays["b_out"] = np.zeros(v)
    return ModelParams(cfg, arrays)


def pad_batch(batch: Sequence[TokenizedExample]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad examples to a common length.  Returns ``(tokens, labels)``;
    padded positions are ignored by every loss."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    width = max(len(ex) for ex in batch)
    tokens = np.full((len(batch), width), PAD, dtype=np.int64)
    labels = np.full((len(batch), width), IGNORE_INDEX, dtype=np.int64)
    for i, ex in enumerate(batch):
        tokens[i, : len(ex)] = ex.tokens
        labels[i, : len(ex)] = ex.labels()
    return tokens, labels


def _as_token_array(batch) -> np.ndarray:
    if isinstance(batch, np.ndarray):
        tokens = batch
    elif len(batch) and isinstance(batch[0], TokenizedExample):
        tokens, _ = pad_batch(batch)
    else:
        tokens = np.asarray(batch)
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    return tokens.astype(np.int64, copy=False)


def forward(params: ModelParams, batch, leaves: Mapping[str, Tensor] | None = None) -> Tensor:
    """Logits ``[batch, seq_len, vocab]`` for a batch of token sequences.

    ``batch`` is an int array ``[B, T]`` or a list of :class:`TokenizedExample`.
    Pass ``leaves`` (from :meth:`ModelParams.leaves`) to read parameter
    gradients after :func:`~ceulab.autodiff.backward`.
    """
    cfg = params.config
    tokens = _as_token_array(batch)
    if tokens.shape[0] == 0 or tokens.shape[1] == 0:
        raise ValueError("forward needs a non-empty batch")
    B, T = tokens.shape
    if T > cfg.max_seq_len:
        raise ValueError(f"sequence length {T} exceeds max_seq_len {cfg.max_seq_len}")
    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValueError("token id outside the vocabulary")
    P = leaves if leaves is not None else params.leaves()

    d, H = cfg.d_model, cfg.n_heads
    dh = d // H
    scale = 1.0 / np.sqrt(dh)
    future = np.triu(np.ones((T, T), dtype=bool), k=1)

    x = embedding(P["tok_emb"], tokens) + P["pos_emb"][:T]
    for layer in range(cfg.n_layers):
        p = f"h{layer}."
        h = layer_norm(x, P[p + "ln1_g"], P[p + "ln1_b"])
        qkv = (h @ P[p + "w_qkv"] + P[p + "b_qkv"]).reshape(B, T, 3, H, dh)
        qkv = qkv.transpose(2, 0, 3, 1, 4)  # [3, B, H, T, dh]
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = softmax((q @ k.transpose(0, 1, 3, 2)) * scale, mask=future)
        y = (att @ v).transpose(0, 2, 1, 3).reshape(B, T, d)
        x = x + (y @ P[p + "w_o"] + P[p + "b_o"])
        h = layer_norm(x, P[p + "ln2_g"], P[p + "ln2_b"])
        h = gelu(h @ P[p + "w_fc"] + P[p + "b_fc"])
        x = x + (h @ P[p + "w_proj"] + P[p + "b_proj"])
    x = layer_norm(x, P["lnf_g"], P["lnf_b"])
    return x @ P["w_out"] + P["b_out"]
