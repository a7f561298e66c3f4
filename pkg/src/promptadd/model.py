"""Waveform deepfake detector: conv front-end, pre-norm transformer encoder,
pooled classification back-end, and an injectable prompt.

The prompt is a small trainable matrix of pseudo-token embeddings prepended
to the real token sequence at the encoder input. Its rows ride through
self-attention like ordinary tokens but are dropped before pooling, so the
prompt can only influence the score by steering attention over real tokens.

Parameters live in a registry split into three groups:
  frontend      conv stack + encoder layers + final norm
  backend-head  hidden projection after pooling
  backend-last  the final linear classifier (weight and bias only)
Tuning modes select which groups train:
  A  prompt only            B  prompt + backend-last      C  everything
Each mode also has a no-prompt variant; A without a prompt is zero-shot
evaluation and has nothing to train.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .errors import (
    ConfigError,
    CorruptHeaderError,
    ShapeMismatchError,
    TruncatedPayloadError,
    VersionMismatchError,
)

GROUP_FRONTEND = "frontend"
GROUP_HEAD = "backend-head"
GROUP_LAST = "backend-last"
GROUPS = (GROUP_FRONTEND, GROUP_HEAD, GROUP_LAST)

TUNING_MODES = ("A", "B", "C")

PROMPT_NAME = "__prompt__"

CHECKPOINT_MAGIC = b"PADD"
CHECKPOINT_VERSION = 1
_GROUP_TAGS = {GROUP_FRONTEND: 0, GROUP_HEAD: 1, GROUP_LAST: 2, PROMPT_NAME: 3}
_TAG_GROUPS = {v: k for k, v in _GROUP_TAGS.items()}


@dataclass
class ModelConfig:
    """Architecture of the detector, small enough to train on a CPU."""

    d: int = 32
    n_layers: int = 2
    n_heads: int = 2
    conv: Tuple[Tuple[int, int, int], ...] = ((8, 4, 16), (4, 2, 32))
    head_hidden: int = 16
    delta: int = 128
    ff_mult: int = 2

    def __post_init__(self):
        if self.d <= 0 or self.n_layers <= 0 or self.n_heads <= 0:
            raise ConfigError("d, n_layers and n_heads must be positive")
        if self.d % self.n_heads != 0:
            raise ConfigError(
                f"n_heads ({self.n_heads}) must divide d ({self.d})"
            )
        if self.head_hidden <= 0 or self.delta <= 0 or self.ff_mult <= 0:
            raise ConfigError("head_hidden, delta and ff_mult must be positive")
        self.conv = tuple(tuple(int(v) for v in layer) for layer in self.conv)
        if not self.conv:
            raise ConfigError("conv stack must have at least one layer")
        for k, s, c in self.conv:
            if k <= 0 or s <= 0 or c <= 0:
                raise ConfigError(f"bad conv layer (kernel={k}, stride={s}, out={c})")
        if self.conv[-1][2] != self.d:
            raise ConfigError(
                f"last conv out-channels ({self.conv[-1][2]}) must equal d ({self.d})"
            )
        if self.n_tokens() < 1:
            raise ConfigError(
                f"delta={self.delta} too short for the conv stack {self.conv}"
            )

    def n_tokens(self) -> int:
        """Token count produced by the conv stack from a delta-length input."""
        length = self.delta
        for k, s, _ in self.conv:
            if length < k:
                return 0
            length = (length - k) // s + 1
        return length


@dataclass
class TokenStats:
    mean: float
    std: float


class Prompt:
    """Trainable pseudo-token embeddings, d coordinates by n_p positions.

    Stored row-per-position, (n_p, d), so injection is a plain row-concat;
    `values` presents the d x n_p view."""

    def __init__(self, param: ad.Tensor):
        if param.data.ndim != 2:
            raise ShapeMismatchError(f"prompt must be 2-D, got {param.shape}")
        self.param = param

    @property
    def n_p(self) -> int:
        return self.param.shape[0]

    @property
    def d(self) -> int:
        return self.param.shape[1]

    @property
    def values(self) -> np.ndarray:
        return self.param.data.T

    def copy(self) -> "Prompt":
        return Prompt(ad.parameter(self.param.data.copy()))


def init_prompt(d: int, n_p: int, token_stats: TokenStats, seed: int) -> Prompt:
    """Draw prompt entries from N(mean, std^2) of observed token activations.

    std == 0 gives a constant prompt at the mean. The draw is deterministic
    in (d, n_p, seed)."""
    if n_p <= 0:
        raise ConfigError(f"prompt length must be positive, got {n_p}")
    if d <= 0:
        raise ConfigError(f"prompt dimension must be positive, got {d}")
    if token_stats.std < 0:
        raise ConfigError("token std must be non-negative")
    rng = np.random.default_rng(seed)
    vals = token_stats.mean + token_stats.std * rng.standard_normal((n_p, d))
    return Prompt(ad.parameter(vals))


class ParamRegistry:
    """Ordered, uniquely named parameter store with group membership."""

    def __init__(self):
        self._entries: Dict[str, Tuple[ad.Tensor, str]] = {}
        self.prompt: Optional[Prompt] = None

    def add(self, name: str, tensor: ad.Tensor, group: str) -> ad.Tensor:
        if name in self._entries or name == PROMPT_NAME:
            raise ConfigError(f"duplicate parameter name {name!r}")
        if group not in GROUPS:
            raise ConfigError(f"unknown group {group!r}")
        self._entries[name] = (tensor, group)
        return tensor

    def __getitem__(self, name: str) -> ad.Tensor:
        return self._entries[name][0]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def names(self) -> List[str]:
        return list(self._entries)

    def items(self) -> List[Tuple[str, ad.Tensor, str]]:
        return [(n, t, g) for n, (t, g) in self._entries.items()]

    def group_of(self, name: str) -> str:
        return self._entries[name][1]

    def by_group(self, group: str) -> List[Tuple[str, ad.Tensor]]:
        if group not in GROUPS:
            raise ConfigError(f"unknown group {group!r}")
        return [(n, t) for n, (t, g) in self._entries.items() if g == group]

    def total_size(self) -> int:
        """Size of the detector parameter vector theta_f (prompt excluded)."""
        return sum(t.size for t, _ in self._entries.values())

    def copy(self) -> "ParamRegistry":
        out = ParamRegistry()
        for n, (t, g) in self._entries.items():
            out.add(n, ad.parameter(t.data.copy()), g)
        if self.prompt is not None:
            out.prompt = self.prompt.copy()
        return out

    def content_hash(self, names: Optional[Sequence[str]] = None) -> str:
        """Hex digest over named parameter bytes (defaults to all, no prompt)."""
        import hashlib

        h = hashlib.sha256()
        for n in names if names is not None else self.names():
            h.update(n.encode())
            h.update(self._entries[n][0].data.tobytes())
        return h.hexdigest()


def _sinusoidal_pe(n_pos: int, d: int) -> np.ndarray:
    pos = np.arange(n_pos, dtype=np.float64)[:, None]
    i = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(i / 2.0) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def build_model(config: ModelConfig, seed: int) -> "Detector":
    """Initialize a detector deterministically from `seed`."""
    rng = np.random.default_rng(seed)
    reg = ParamRegistry()

    def normal(shape, std):
        return ad.parameter(rng.standard_normal(shape) * std)

    c_in = 1
    for i, (k, s, c_out) in enumerate(config.conv):
        reg.add(f"conv{i}.weight", normal((k, c_in, c_out), np.sqrt(2.0 / (k * c_in))),
                GROUP_FRONTEND)
        reg.add(f"conv{i}.bias", ad.parameter(np.zeros(c_out)), GROUP_FRONTEND)
        c_in = c_out

    d = config.d
    ff = config.ff_mult * d
    w_std = 1.0 / np.sqrt(d)
    for layer in range(config.n_layers):
        p = f"enc{layer}."
        reg.add(p + "norm1.gain", ad.parameter(np.ones(d)), GROUP_FRONTEND)
        reg.add(p + "norm1.bias", ad.parameter(np.zeros(d)), GROUP_FRONTEND)
        for nm in ("wq", "wk", "wv", "wo"):
            reg.add(p + f"attn.{nm}", normal((d, d), w_std), GROUP_FRONTEND)
            reg.add(p + f"attn.{nm[1]}b", ad.parameter(np.zeros(d)), GROUP_FRONTEND)
        reg.add(p + "norm2.gain", ad.parameter(np.ones(d)), GROUP_FRONTEND)
        reg.add(p + "norm2.bias", ad.parameter(np.zeros(d)), GROUP_FRONTEND)
        reg.add(p + "ffn.w1", normal((d, ff), w_std), GROUP_FRONTEND)
        reg.add(p + "ffn.b1", ad.parameter(np.zeros(ff)), GROUP_FRONTEND)
        reg.add(p + "ffn.w2", normal((ff, d), 1.0 / np.sqrt(ff)), GROUP_FRONTEND)
        reg.add(p + "ffn.b2", ad.parameter(np.zeros(d)), GROUP_FRONTEND)

    reg.add("final_norm.gain", ad.parameter(np.ones(d)), GROUP_FRONTEND)
    reg.add("final_norm.bias", ad.parameter(np.zeros(d)), GROUP_FRONTEND)

    reg.add("head.weight", normal((d, config.head_hidden), w_std), GROUP_HEAD)
    reg.add("head.bias", ad.parameter(np.zeros(config.head_hidden)), GROUP_HEAD)
    reg.add("out.weight",
            normal((config.head_hidden, 2), 1.0 / np.sqrt(config.head_hidden)),
            GROUP_LAST)
    reg.add("out.bias", ad.parameter(np.zeros(2)), GROUP_LAST)
    return Detector(config, reg)


def inject_prompt(prompt: Prompt, tokens: ad.Tensor) -> ad.Tensor:
    """Prepend prompt rows to a (T, d) token sequence -> (n_p + T, d)."""
    if tokens.data.ndim != 2 or prompt.d != tokens.shape[1]:
        raise ShapeMismatchError(
            f"prompt width {prompt.d} does not match token width "
            f"{tokens.shape[1] if tokens.data.ndim == 2 else tokens.shape}"
        )
    return ad.concat([prompt.param, tokens], axis=0)


class Detector:
    """A model config bound to a parameter registry."""

    def __init__(self, config: ModelConfig, registry: ParamRegistry):
        self.config = config
        self.registry = registry
        self._pe = _sinusoidal_pe(config.n_tokens(), config.d)

    # -- forward ----------------------------------------------------------

    def _check_waveform(self, waveform) -> np.ndarray:
        arr = np.asarray(waveform, dtype=np.float64)
        if arr.shape != (self.config.delta,):
            raise ShapeMismatchError(
                f"waveform must have shape ({self.config.delta},), got {arr.shape}"
            )
        return arr

    def conv_tokens(self, waveform) -> ad.Tensor:
        """Conv-stack token embeddings, before positional encoding."""
        arr = self._check_waveform(waveform)
        reg = self.registry
        h = ad.constant(arr.reshape(-1, 1))
        for i, (_, s, _) in enumerate(self.config.conv):
            h = ad.conv1d(h, reg[f"conv{i}.weight"], reg[f"conv{i}.bias"], stride=s)
            h = ad.gelu(h)
        return h

    def _encoder_layer(self, x: ad.Tensor, layer: int) -> ad.Tensor:
        reg = self.registry
        cfg = self.config
        p = f"enc{layer}."
        d_h = cfg.d // cfg.n_heads
        scale = 1.0 / np.sqrt(d_h)

        h = ad.layernorm(x, reg[p + "norm1.gain"], reg[p + "norm1.bias"])
        q = ad.add(ad.matmul(h, reg[p + "attn.wq"]), reg[p + "attn.qb"])
        k = ad.add(ad.matmul(h, reg[p + "attn.wk"]), reg[p + "attn.kb"])
        v = ad.add(ad.matmul(h, reg[p + "attn.wv"]), reg[p + "attn.vb"])
        heads = []
        for i in range(cfg.n_heads):
            lo, hi = i * d_h, (i + 1) * d_h
            qh = ad.slice_axis(q, lo, hi, axis=1)
            kh = ad.slice_axis(k, lo, hi, axis=1)
            vh = ad.slice_axis(v, lo, hi, axis=1)
            att = ad.softmax(ad.mul_scalar(ad.matmul(qh, kh, transpose_b=True), scale))
            heads.append(ad.matmul(att, vh))
        mixed = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
        x = ad.add(x, ad.add(ad.matmul(mixed, reg[p + "attn.wo"]), reg[p + "attn.ob"]))

        h = ad.layernorm(x, reg[p + "norm2.gain"], reg[p + "norm2.bias"])
        h = ad.gelu(ad.add(ad.matmul(h, reg[p + "ffn.w1"]), reg[p + "ffn.b1"]))
        h = ad.add(ad.matmul(h, reg[p + "ffn.w2"]), reg[p + "ffn.b2"])
        return ad.add(x, h)

    def forward_graph(self, waveform) -> ad.Tensor:
        """Logit node (2,) for one waveform; uses the prompt when present."""
        reg = self.registry
        tokens = self.conv_tokens(waveform)
        tokens = ad.embedding_add(tokens, self._pe)
        prompt = reg.prompt
        if prompt is not None:
            x = inject_prompt(prompt, tokens)
        else:
            x = tokens
        for layer in range(self.config.n_layers):
            x = self._encoder_layer(x, layer)
        x = ad.layernorm(x, reg["final_norm.gain"], reg["final_norm.bias"])
        if prompt is not None:
            # prompt rows carry no label content; pool over real tokens only
            x = ad.slice_axis(x, prompt.n_p, x.shape[0], axis=0)
        pooled = ad.mean_pool(x)
        h = ad.gelu(ad.add(ad.matmul(pooled, reg["head.weight"]), reg["head.bias"]))
        return ad.add(ad.matmul(h, reg["out.weight"]), reg["out.bias"])

    def logits(self, waveform) -> np.ndarray:
        return self.forward_graph(waveform).data

    def score(self, waveform) -> float:
        """Detection score: logit(fake) - logit(real); higher = more fake."""
        z = self.logits(waveform)
        return float(z[1] - z[0])

    def scores(self, waveforms: np.ndarray) -> np.ndarray:
        return np.array([self.score(w) for w in waveforms])

    def token_statistics(self, waveforms: np.ndarray) -> TokenStats:
        """Mean/std over all conv-token activations of the given waveforms."""
        if len(waveforms) == 0:
            raise ConfigError("need at least one waveform for token statistics")
        acts = np.concatenate([self.conv_tokens(w).data.ravel() for w in waveforms])
        return TokenStats(mean=float(acts.mean()), std=float(acts.std()))


# ---------------------------------------------------------------------------
# tuning-mode selection and parameter counting


def trainable_params(registry: ParamRegistry, mode: str,
                     with_prompt: bool) -> List[Tuple[str, ad.Tensor]]:
    """Named parameters optimized under a tuning mode.

    A: prompt only. B: prompt + final linear. C: prompt + all detector
    parameters. Without a prompt, A has nothing to train and is rejected;
    B degrades to linear probing and C to full fine-tuning.
    """
    if mode not in TUNING_MODES:
        raise ConfigError(f"unknown tuning mode {mode!r}")
    if mode == "A" and not with_prompt:
        raise ConfigError("mode A without a prompt has no trainable parameters")
    out: List[Tuple[str, ad.Tensor]] = []
    if with_prompt:
        if registry.prompt is None:
            raise ConfigError("with_prompt=True but the registry has no prompt")
        out.append((PROMPT_NAME, registry.prompt.param))
    if mode == "B":
        out.extend(registry.by_group(GROUP_LAST))
    elif mode == "C":
        out.extend((n, t) for n, t, _ in registry.items())
    return out


def count_params(registry: ParamRegistry, mode: str, with_prompt: bool,
                 n_p: Optional[int] = None) -> Tuple[int, float]:
    """(trainable count, count / |theta_f|) for a tuning mode.

    The prompt contributes d*n_p to the count but is not part of theta_f.
    `n_p` overrides the registry prompt's length so tables can be computed
    without materializing a prompt."""
    if mode not in TUNING_MODES:
        raise ConfigError(f"unknown tuning mode {mode!r}")
    if mode == "A" and not with_prompt:
        raise ConfigError("mode A without a prompt has no trainable parameters")
    count = 0
    if with_prompt:
        if n_p is None:
            if registry.prompt is None:
                raise ConfigError("with_prompt=True needs a prompt or explicit n_p")
            count += registry.prompt.param.size
        else:
            if n_p <= 0:
                raise ConfigError(f"prompt length must be positive, got {n_p}")
            count += _prompt_width(registry) * n_p
    if mode == "B":
        count += sum(t.size for _, t in registry.by_group(GROUP_LAST))
    elif mode == "C":
        count += registry.total_size()
    return count, count / registry.total_size()


def _prompt_width(registry: ParamRegistry) -> int:
    # d equals the last conv layer's out-channel count
    conv_weights = [n for n in registry.names() if n.endswith(".weight") and n.startswith("conv")]
    last = sorted(conv_weights, key=lambda n: int(n[4:].split(".")[0]))[-1]
    return registry[last].shape[2]


def count_params_config(config: ModelConfig, mode: str, with_prompt: bool,
                        n_p: int = 0) -> Tuple[int, float]:
    """Pure integer-arithmetic parameter counts straight from a config."""
    if mode not in TUNING_MODES:
        raise ConfigError(f"unknown tuning mode {mode!r}")
    if mode == "A" and not with_prompt:
        raise ConfigError("mode A without a prompt has no trainable parameters")
    if with_prompt and n_p <= 0:
        raise ConfigError(f"prompt length must be positive, got {n_p}")
    d, ff = config.d, config.ff_mult * config.d
    frontend = 0
    c_in = 1
    for k, _, c_out in config.conv:
        frontend += k * c_in * c_out + c_out
        c_in = c_out
    frontend += config.n_layers * (
        2 * (2 * d)                       # two norms
        + 4 * (d * d + d)                 # q, k, v, o projections
        + (d * ff + ff) + (ff * d + d)    # ffn
    )
    frontend += 2 * d                     # final norm
    head = d * config.head_hidden + config.head_hidden
    last = config.head_hidden * 2 + 2
    total = frontend + head + last
    count = (d * n_p if with_prompt else 0)
    if mode == "B":
        count += last
    elif mode == "C":
        count += total
    return count, count / total


# ---------------------------------------------------------------------------
# checkpoint format
#
# magic "PADD" | version u32 | records until EOF, each:
#   name_len u32 | name utf-8 | group tag u8 | rank u32 | dims u32[rank]
#   | values f64 little-endian
# The prompt, when present, is stored under the reserved name "__prompt__"
# with group tag 3. All integers little-endian.


def save_checkpoint(registry: ParamRegistry, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        records = [(n, t, _GROUP_TAGS[g]) for n, t, g in registry.items()]
        if registry.prompt is not None:
            records.append((PROMPT_NAME, registry.prompt.param, _GROUP_TAGS[PROMPT_NAME]))
        for name, tensor, tag in records:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", tag))
            dims = tensor.data.shape
            fh.write(struct.pack("<I", len(dims)))
            for dim in dims:
                fh.write(struct.pack("<I", dim))
            fh.write(tensor.data.astype("<f8").tobytes())


def load_checkpoint(path) -> ParamRegistry:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise CorruptHeaderError(f"{path}: not a checkpoint file")
    if len(blob) < 8:
        raise TruncatedPayloadError(f"{path}: header cut short")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    reg = ParamRegistry()
    off = 8

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise TruncatedPayloadError(f"{path}: record cut short at byte {off}")
        chunk = blob[off:off + n]
        off += n
        return chunk

    while off < len(blob):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (tag,) = struct.unpack("<B", take(1))
        if tag not in _TAG_GROUPS:
            raise CorruptHeaderError(f"{path}: unknown group tag {tag}")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank)) if rank else ()
        n_vals = int(np.prod(dims, dtype=np.int64)) if dims else 1
        vals = np.frombuffer(take(8 * n_vals), dtype="<f8").reshape(dims).copy()
        if name == PROMPT_NAME:
            reg.prompt = Prompt(ad.parameter(vals))
        else:
            reg.add(name, ad.parameter(vals), _TAG_GROUPS[tag])
    return reg
