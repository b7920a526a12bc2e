"""Named architectures: audio (LSTM/Bi-LSTM with FC or T-CNN heads), text
(LSTM/Bi-LSTM with FC or attention heads) and three late-fusion variants.

Every model splits into a *trunk* (encoder, plus T-CNN blocks for the audio
T-CNN variants) and a head. In classifier mode the trunk output is pooled
over time and mapped to 5 severity logits. In extractor mode the same dense
stack is applied per timestep and ends in a 32-unit layer, giving the
(batch, time, 32) feature sequence the fusion models align.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AdditiveAttention
from .layers import (PROPOSED_TCNN, LSTM, BatchNorm, BiLSTM, ConfigError, Dense, Dropout,
                     Embedding, Module, TcnnBlock, global_average_pool_time, pooled_width)
from .tensor import Tensor

N_CLASSES = 5
EXTRACTOR_WIDTH = 32
AUDIO_FEATURES = 73
AUDIO_HIDDEN = 73
TEXT_HIDDEN = 100
DROPOUT = 0.2

SEVERITY_NAMES = ("healthy", "mild", "moderate", "moderately_severe", "severe")
BINARY_NAMES = ("no_significant", "significant")

AUDIO_VARIANTS = ("lstm_fc", "bilstm_fc", "lstm_tcnn", "bilstm_tcnn")
TEXT_VARIANTS = ("lstm_fc", "bilstm_fc", "bilstm_attn")
FUSIONS = ("maxpool_concat", "attn_align", "attn_align_fuse")
TIMESTEPS = (16, 32, 64)
WINDOWS = (16, 32, 64, 128)


# -- labels --------------------------------------------------------------------

@dataclass(frozen=True)
class SeverityLabel:
    score: int
    index: int

    @property
    def name(self) -> str:
        return SEVERITY_NAMES[self.index]

    @property
    def binary(self) -> int:
        return int(self.score > 10)

    @property
    def binary_name(self) -> str:
        return BINARY_NAMES[self.binary]


def phq_to_label(score: int) -> SeverityLabel:
    """Left-closed PHQ-8 bins [0,5) [5,10) [10,15) [15,20) [20,24]; significant iff score > 10."""
    if isinstance(score, bool) or int(score) != score:
        raise ValueError(f"PHQ-8 score must be an integer, got {score!r}")
    score = int(score)
    if not 0 <= score <= 24:
        raise ValueError(f"PHQ-8 score must lie in [0, 24], got {score}")
    return SeverityLabel(score, min(score // 5, 4))


# -- shared pieces -------------------------------------------------------------

class DenseStack(Module):
    """relu dense layers with dropout after each, then an output layer."""

    def __init__(self, n_in: int, hidden: tuple[int, ...], n_out: int, rng, out_activation=None,
                 batchnorm_last: bool = False):
        self.hidden = []
        self.drops = []
        width = n_in
        for h in hidden:
            self.hidden.append(Dense(width, h, rng, activation="relu"))
            self.drops.append(Dropout(DROPOUT, np.random.default_rng(int(rng.integers(2**31)))))
            width = h
        if batchnorm_last:
            self.bn = BatchNorm(width)
        self.out = Dense(width, n_out, rng, activation=out_activation)

    def __call__(self, x: Tensor) -> Tensor:
        for layer, drop in zip(self.hidden, self.drops):
            x = drop(layer(x))
        if hasattr(self, "bn"):
            x = self.bn(x)
        return self.out(x)


def _encoder(bidirectional: bool, n_in: int, hidden: int, rng) -> Module:
    if bidirectional:
        return BiLSTM(n_in, hidden, rng, recurrent_dropout=DROPOUT)
    return LSTM(n_in, hidden, rng, recurrent_dropout=DROPOUT)


class SeverityModel(Module):
    """Common surface: ``forward`` gives logits, ``features`` the 32-wide sequence."""

    extractor: bool = False

    def forward(self, inputs, training: bool = False) -> Tensor:
        self.train(training)
        if self.extractor:
            raise ConfigError("extractor-mode models emit features, not class logits")
        return self.classify(inputs)

    def predict_proba(self, inputs) -> np.ndarray:
        self.train(False)
        with T.no_grad():
            return T.softmax(self.forward(inputs, training=False), axis=-1).data

    def metadata(self) -> dict:
        raise NotImplementedError


# -- audio ----------------------------------------------------------------------

class AudioModel(SeverityModel):
    def __init__(self, variant: str, timestep: int, seed: int = 0, extractor: bool = False,
                 pool_mode: str = "max"):
        if variant not in AUDIO_VARIANTS:
            raise ConfigError(f"unknown audio variant {variant!r}; choose from {AUDIO_VARIANTS}")
        if timestep not in TIMESTEPS:
            raise ConfigError(f"audio timestep must be one of {TIMESTEPS}, got {timestep}")
        rng = np.random.default_rng(seed)
        self.variant = variant
        self.timestep = timestep
        self.extractor = extractor
        self.pool_mode = pool_mode
        self.seed = seed
        bi = variant.startswith("bi")
        self.tcnn = variant.endswith("tcnn")
        width = 2 * AUDIO_HIDDEN if bi else AUDIO_HIDDEN
        if not self.tcnn:
            self.input_bn = BatchNorm(AUDIO_FEATURES)
        self.encoder = _encoder(bi, AUDIO_FEATURES, AUDIO_HIDDEN, rng)
        if self.tcnn:
            blocks, channels = [], 1
            for cfg in PROPOSED_TCNN:
                blocks.append(TcnnBlock(channels, cfg, rng, pool_mode))
                channels = cfg.kernel_count
            self.blocks = blocks
            step_width = pooled_width(width, PROPOSED_TCNN) * channels
        else:
            step_width = width
        n_out = EXTRACTOR_WIDTH if extractor else N_CLASSES
        self.head = DenseStack(step_width, (128, 64), n_out, rng,
                               out_activation="tanh" if extractor else None,
                               batchnorm_last=not self.tcnn)

    def trunk(self, x) -> Tensor:
        """(B, T, 73) -> (B, T, W) for FC variants or (B, T, F', 256) for T-CNN variants."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
        if x.shape[-1] != AUDIO_FEATURES:
            raise T.DimensionError(f"audio input must have {AUDIO_FEATURES} features, got {x.shape}")
        if not self.tcnn:
            x = self.input_bn(x)
        states = self.encoder(x, return_all=True)
        if not self.tcnn:
            return states
        y = states.reshape(states.shape + (1,))
        for block in self.blocks:
            y = block(y)
        return y

    def classify(self, x) -> Tensor:
        h = self.trunk(x)
        if self.tcnn:
            pooled = global_average_pool_time(h)
        else:
            pooled = _last_state(self.encoder, h)
        return self.head(pooled)

    def features(self, x) -> Tensor:
        h = self.trunk(x)
        if self.tcnn:
            B, steps = h.shape[:2]
            h = h.reshape(B, steps, -1)
        return self.head(h)

    def metadata(self) -> dict:
        return {"family": "audio", "variant": self.variant, "timestep": self.timestep,
                "extractor": self.extractor, "pool_mode": self.pool_mode}


def _last_state(encoder: Module, states: Tensor) -> Tensor:
    """Sequence summary for FC heads: h_T, or [forward h_T, backward h_1] for Bi-LSTMs."""
    if isinstance(encoder, BiLSTM):
        H = encoder.hidden
        return T.concat([states[:, -1, :H], states[:, 0, H:]], axis=-1)
    return states[:, -1, :]


def build_audio_model(variant: str, timestep: int, seed: int = 0, extractor: bool = False,
                      pool_mode: str = "max") -> AudioModel:
    return AudioModel(variant, timestep, seed, extractor, pool_mode)


# -- text -----------------------------------------------------------------------

class TextModel(SeverityModel):
    def __init__(self, variant: str, window_size: int, embedding: np.ndarray, seed: int = 0,
                 extractor: bool = False):
        if variant not in TEXT_VARIANTS and variant != "lstm_attn":
            raise ConfigError(f"unknown text variant {variant!r}; choose from {TEXT_VARIANTS}")
        if window_size not in WINDOWS:
            raise ConfigError(f"text window must be one of {WINDOWS}, got {window_size}")
        if embedding is None:
            raise ValueError("text models need a vocabulary-aligned embedding table; build the vocabulary first")
        rng = np.random.default_rng(seed)
        self.variant = variant
        self.window_size = window_size
        self.extractor = extractor
        self.seed = seed
        bi = variant.startswith("bi")
        self.attn = variant.endswith("attn")
        self.embedding = Embedding(embedding)
        dim = self.embedding.table.shape[1]
        self.input_bn = BatchNorm(dim)
        self.encoder = _encoder(bi, dim, TEXT_HIDDEN, rng)
        width = 2 * TEXT_HIDDEN if bi else TEXT_HIDDEN
        if self.attn:
            self.attention = AdditiveAttention(width, width, rng, learned_query=True)
        n_out = EXTRACTOR_WIDTH if extractor else N_CLASSES
        self.head = DenseStack(width, (256, 128), n_out, rng,
                               out_activation="tanh" if extractor else None)
        self.last_attention: np.ndarray | None = None

    @property
    def state_width(self) -> int:
        return self.encoder.hidden * (2 if isinstance(self.encoder, BiLSTM) else 1)

    def trunk(self, tokens) -> Tensor:
        emb = self.embedding(np.asarray(tokens))
        return self.encoder(self.input_bn(emb), return_all=True)

    def classify(self, tokens) -> Tensor:
        states = self.trunk(tokens)
        if self.attn:
            out = self.attention(states)
            self.last_attention = out.weights.data
            pooled = out.context
        else:
            pooled = _last_state(self.encoder, states)
        return self.head(pooled)

    def features(self, tokens) -> Tensor:
        return self.head(self.trunk(tokens))

    def metadata(self) -> dict:
        return {"family": "text", "variant": self.variant, "window": self.window_size,
                "extractor": self.extractor, "vocab_rows": int(self.embedding.vocab_rows),
                "embedding_dim": int(self.embedding.table.shape[1])}


def build_text_model(variant: str, window_size: int, embedding: np.ndarray | None, seed: int = 0,
                     extractor: bool = False) -> TextModel:
    return TextModel(variant, window_size, embedding, seed, extractor)


# -- fusion ---------------------------------------------------------------------

class FusedModel(SeverityModel):
    def __init__(self, encoder: str, fusion: str, window_size: int, audio_timestep: int,
                 embedding: np.ndarray, seed: int = 0):
        if encoder not in ("uni", "bi"):
            raise ConfigError(f"encoder must be 'uni' or 'bi', got {encoder!r}")
        if fusion not in FUSIONS:
            raise ConfigError(f"unknown fusion {fusion!r}; choose from {FUSIONS}")
        rng = np.random.default_rng(seed)
        self.encoder_kind = encoder
        self.fusion = fusion
        self.window_size = window_size
        self.timestep = audio_timestep
        self.seed = seed
        self.audio = AudioModel("bilstm_tcnn", audio_timestep, int(rng.integers(2**31)), extractor=True)
        self.text = TextModel("bilstm_fc" if encoder == "bi" else "lstm_fc", window_size, embedding,
                              int(rng.integers(2**31)), extractor=True)
        for name, sub in (("audio", self.audio), ("text", self.text)):
            width = sub.head.out.W.shape[1]
            if width != EXTRACTOR_WIDTH:
                raise ConfigError(f"{name} extractor emits {width} features, fusion needs {EXTRACTOR_WIDTH}")
        if fusion != "maxpool_concat":
            self.align_audio = AdditiveAttention(EXTRACTOR_WIDTH, EXTRACTOR_WIDTH, rng, learned_query=True)
            self.align_text = AdditiveAttention(EXTRACTOR_WIDTH, EXTRACTOR_WIDTH, rng, learned_query=True)
        if fusion == "attn_align_fuse":
            self.fuse = AdditiveAttention(EXTRACTOR_WIDTH, EXTRACTOR_WIDTH, rng, learned_query=True)
            self.out = Dense(EXTRACTOR_WIDTH, N_CLASSES, rng)
        else:
            self.out = Dense(2 * EXTRACTOR_WIDTH, N_CLASSES, rng)
        self.last_attention: dict[str, np.ndarray] = {}

    def aligned(self, inputs) -> tuple[Tensor, Tensor]:
        a_seq = self.audio.features(inputs["audio"])
        t_seq = self.text.features(inputs["text"])
        if self.fusion == "maxpool_concat":
            return a_seq.max(axis=1), t_seq.max(axis=1)
        a = self.align_audio(a_seq)
        t = self.align_text(t_seq)
        self.last_attention = {"audio": a.weights.data, "text": t.weights.data}
        return a.context, t.context

    def classify(self, inputs) -> Tensor:
        a, t = self.aligned(inputs)
        if self.fusion == "attn_align_fuse":
            fused = self.fuse(T.stack([a, t], axis=1))
            self.last_attention["modality"] = fused.weights.data
            return self.out(fused.context)
        return self.out(T.concat([a, t], axis=-1))

    def metadata(self) -> dict:
        return {"family": "fused", "encoder": self.encoder_kind, "fusion": self.fusion,
                "window": self.window_size, "timestep": self.timestep,
                "vocab_rows": int(self.text.embedding.vocab_rows),
                "embedding_dim": int(self.text.embedding.table.shape[1])}


def build_fused_model(encoder: str, fusion: str, window_size: int, audio_timestep: int,
                      embedding: np.ndarray, seed: int = 0) -> FusedModel:
    return FusedModel(encoder, fusion, window_size, audio_timestep, embedding, seed)


def model_from_metadata(meta: dict, seed: int = 0) -> SeverityModel:
    """Rebuild an (untrained) model skeleton with the shapes recorded in ``meta``."""
    family = meta.get("family")
    if family == "audio":
        return AudioModel(meta["variant"], meta["timestep"], seed, meta.get("extractor", False),
                          meta.get("pool_mode", "max"))
    placeholder = np.zeros((meta.get("vocab_rows", 2), meta.get("embedding_dim", 100)), dtype=np.float32)
    if family == "text":
        return TextModel(meta["variant"], meta["window"], placeholder, seed, meta.get("extractor", False))
    if family == "fused":
        return FusedModel(meta["encoder"], meta["fusion"], meta["window"], meta["timestep"], placeholder, seed)
    raise ConfigError(f"unknown model family {family!r}")


# CLI model names -> builder arguments
CLI_MODELS = {
    "lstm_fc": ("audio", "lstm_fc"),
    "bilstm_fc": ("audio", "bilstm_fc"),
    "lstm_tcnn": ("audio", "lstm_tcnn"),
    "bilstm_tcnn": ("audio", "bilstm_tcnn"),
    "text_lstm": ("text", "lstm_fc"),
    "text_bilstm": ("text", "bilstm_fc"),
    "text_bilstm_attn": ("text", "bilstm_attn"),
    "fused_maxpool": ("fused", "maxpool_concat"),
    "fused_attn_align": ("fused", "attn_align"),
    "fused_attn_fuse": ("fused", "attn_align_fuse"),
}
