"""Keyword-spotting model: text encoder, audio encoder, cross-attention,
and discriminator.

Both encoders project into a shared 128-dim space. The text encoder runs a
Bi-GRU (64 per direction) over the embedding rows and a per-position dense
layer. The audio encoder stacks two 3x3 convolutions (32 then 64 channels,
the first with stride 2 on time) with batch norm and leaky ReLU, flattens
channels x frequency per time step, and runs two Bi-GRUs plus a dense layer.
Each text position then cross-attends over audio positions (single head,
scaled dot product; audio is key and value), and a Bi-GRU discriminator (128
per direction) reads the attended rows into one match probability.

Batched internals are time-major; masks are bool arrays with padding as a
suffix. All floats are 64-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dsp import MelSpectrogram
from .embeddings import TtsEmbeddingSequence
from .errors import InvalidArgumentError, ShapeError
from .numerics import BatchNorm, GruParams, Parameter, Tensor, xavier_init
from .numerics import layers as ly
from .numerics import tensor as tz

N_MELS = 80
CONV1_CHANNELS = 32
CONV2_CHANNELS = 64
KERNEL = 3
TIME_STRIDE = 2
ENC_HIDDEN = 64
EMBED_DIM = 128
DISC_HIDDEN = 128
TEXT_WIDTHS = (512, 80)


@dataclass
class ModelConfig:
    text_input_width: int = 512
    rng_seed: int = 0
    dropout_p: float = 0.2

    def __post_init__(self):
        if self.text_input_width not in TEXT_WIDTHS:
            raise InvalidArgumentError(
                "text_input_width must be one of %r, got %r"
                % (TEXT_WIDTHS, self.text_input_width)
            )
        if not 0.0 <= self.dropout_p < 1.0:
            raise InvalidArgumentError("dropout_p must be in [0, 1)")

    def arch_dict(self) -> dict:
        return {
            "text_input_width": self.text_input_width,
            "n_mels": N_MELS,
            "conv_channels": [CONV1_CHANNELS, CONV2_CHANNELS],
            "kernel": KERNEL,
            "time_stride": TIME_STRIDE,
            "enc_hidden": ENC_HIDDEN,
            "embed_dim": EMBED_DIM,
            "disc_hidden": DISC_HIDDEN,
            "dropout_p": self.dropout_p,
        }


@dataclass
class TextEmbedding:
    matrix: np.ndarray  # (EMBED_DIM, m)


@dataclass
class AudioEmbedding:
    matrix: np.ndarray  # (EMBED_DIM, ceil(n/2))


class KwsModel:
    """Holds every trainable parameter; forward passes live in free functions."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self._params: dict = {}
        rng = np.random.default_rng(config.rng_seed)

        self.text_gru_f = self._gru("text_gru.fwd", config.text_input_width, ENC_HIDDEN, rng)
        self.text_gru_b = self._gru("text_gru.bwd", config.text_input_width, ENC_HIDDEN, rng)
        self.text_dense_w = self._xavier("text_dense.w", rng, 2 * ENC_HIDDEN, EMBED_DIM)
        self.text_dense_b = self._zeros("text_dense.b", EMBED_DIM)

        self.conv1_k = self._xavier(
            "conv1.k", rng, 1 * KERNEL * KERNEL, CONV1_CHANNELS * KERNEL * KERNEL,
            shape=(CONV1_CHANNELS, 1, KERNEL, KERNEL),
        )
        self.conv1_b = self._zeros("conv1.b", CONV1_CHANNELS)
        self.bn1 = self._batchnorm("bn1", CONV1_CHANNELS)
        self.conv2_k = self._xavier(
            "conv2.k", rng, CONV1_CHANNELS * KERNEL * KERNEL,
            CONV2_CHANNELS * KERNEL * KERNEL,
            shape=(CONV2_CHANNELS, CONV1_CHANNELS, KERNEL, KERNEL),
        )
        self.conv2_b = self._zeros("conv2.b", CONV2_CHANNELS)
        self.bn2 = self._batchnorm("bn2", CONV2_CHANNELS)
        self.audio_gru1_f = self._gru("audio_gru1.fwd", CONV2_CHANNELS * N_MELS, ENC_HIDDEN, rng)
        self.audio_gru1_b = self._gru("audio_gru1.bwd", CONV2_CHANNELS * N_MELS, ENC_HIDDEN, rng)
        self.audio_gru2_f = self._gru("audio_gru2.fwd", 2 * ENC_HIDDEN, ENC_HIDDEN, rng)
        self.audio_gru2_b = self._gru("audio_gru2.bwd", 2 * ENC_HIDDEN, ENC_HIDDEN, rng)
        self.audio_dense_w = self._xavier("audio_dense.w", rng, 2 * ENC_HIDDEN, EMBED_DIM)
        self.audio_dense_b = self._zeros("audio_dense.b", EMBED_DIM)

        self.attn_wq = self._xavier("attn.wq", rng, EMBED_DIM, EMBED_DIM)
        self.attn_wk = self._xavier("attn.wk", rng, EMBED_DIM, EMBED_DIM)
        self.attn_wv = self._xavier("attn.wv", rng, EMBED_DIM, EMBED_DIM)

        self.disc_gru_f = self._gru("disc_gru.fwd", EMBED_DIM, DISC_HIDDEN, rng)
        self.disc_gru_b = self._gru("disc_gru.bwd", EMBED_DIM, DISC_HIDDEN, rng)
        self.disc_dense_w = self._xavier("disc_dense.w", rng, 2 * DISC_HIDDEN, 1)
        self.disc_dense_b = self._zeros("disc_dense.b", 1)

    # -- parameter registry --

    def _register(self, name: str, tensor: Tensor) -> Tensor:
        self._params[name] = Parameter(name, tensor)
        return tensor

    def _xavier(self, name, rng, fan_in, fan_out, shape=None) -> Tensor:
        return self._register(name, xavier_init(fan_in, fan_out, rng, shape=shape))

    def _zeros(self, name, *shape) -> Tensor:
        return self._register(name, Tensor(np.zeros(shape), requires_grad=True))

    def _gru(self, prefix, in_size, hidden, rng) -> GruParams:
        def w(field):
            return self._xavier("%s.%s" % (prefix, field), rng, in_size, hidden,
                                shape=(hidden, in_size))

        def u(field):
            return self._xavier("%s.%s" % (prefix, field), rng, hidden, hidden)

        return GruParams(
            w("w_z"), w("w_r"), w("w_h"), u("u_z"), u("u_r"), u("u_h"),
            self._zeros("%s.b_z" % prefix, hidden),
            self._zeros("%s.b_r" % prefix, hidden),
            self._zeros("%s.b_h" % prefix, hidden),
        )

    def _batchnorm(self, prefix, channels) -> BatchNorm:
        bn = BatchNorm(channels)
        self._register("%s.gamma" % prefix, bn.gamma)
        self._register("%s.beta" % prefix, bn.beta)
        return bn

    def parameters(self):
        return list(self._params.values())

    def named_parameters(self):
        return [(name, p.tensor) for name, p in self._params.items()]

    def state_arrays(self):
        """Every float array a checkpoint must carry, in a fixed order."""
        out = [(name, p.tensor.data) for name, p in self._params.items()]
        out += [
            ("bn1.running_mean", self.bn1.running_mean),
            ("bn1.running_var", self.bn1.running_var),
            ("bn2.running_mean", self.bn2.running_mean),
            ("bn2.running_var", self.bn2.running_var),
        ]
        return out

    def load_state_arrays(self, arrays: dict):
        for name, value in self.state_arrays():
            if name not in arrays:
                raise ShapeError("checkpoint missing array %r" % (name,))
            new = np.asarray(arrays[name], dtype=np.float64)
            if new.shape != value.shape:
                raise ShapeError(
                    "array %r has shape %r, expected %r" % (name, new.shape, value.shape)
                )
        for name, p in self._params.items():
            p.tensor.data = np.array(arrays[name], dtype=np.float64)
        self.bn1.running_mean = np.array(arrays["bn1.running_mean"], dtype=np.float64)
        self.bn1.running_var = np.array(arrays["bn1.running_var"], dtype=np.float64)
        self.bn2.running_mean = np.array(arrays["bn2.running_mean"], dtype=np.float64)
        self.bn2.running_var = np.array(arrays["bn2.running_var"], dtype=np.float64)

    def snapshot(self) -> dict:
        return {name: arr.copy() for name, arr in self.state_arrays()}


def _require_rng(mode: str, rng):
    if mode == "train" and rng is None:
        raise InvalidArgumentError("train mode requires an rng for dropout")
    if mode not in ("train", "eval"):
        raise InvalidArgumentError("mode must be 'train' or 'eval', got %r" % (mode,))
    return rng


# ---- Batched graph builders ----


def encode_text_batch(model: KwsModel, emb_block: np.ndarray, text_mask: np.ndarray,
                      mode: str = "eval", rng=None) -> Tensor:
    """(B, m, D) embedding rows + (B, m) mask -> (B, m, EMBED_DIM)."""
    rng = _require_rng(mode, rng)
    emb_block = np.asarray(emb_block, dtype=np.float64)
    if emb_block.ndim != 3:
        raise ShapeError("embedding block must be (B, m, D), got %r" % (emb_block.shape,))
    if emb_block.shape[2] != model.config.text_input_width:
        raise ShapeError(
            "embedding width %d does not match model text_input_width %d"
            % (emb_block.shape[2], model.config.text_input_width)
        )
    p = model.config.dropout_p
    x = Tensor(emb_block.transpose(1, 0, 2))  # (m, B, D)
    h = ly.bigru_forward(x, model.text_gru_f, model.text_gru_b, text_mask.T)
    h = ly.dropout(h, p, mode, rng)
    h = ly.dense_forward(h, model.text_dense_w, model.text_dense_b)
    h = ly.dropout(h, p, mode, rng)
    return tz.permute(h, (1, 0, 2))  # (B, m, EMBED_DIM)


def stride_mask(mel_mask: np.ndarray) -> np.ndarray:
    """Time mask after the stride-2 convolution: length ceil(len/2) per row."""
    lengths = mel_mask.sum(axis=1)
    n_out = -(-mel_mask.shape[1] // TIME_STRIDE)
    out_lengths = -(-lengths // TIME_STRIDE)
    return np.arange(n_out)[None, :] < out_lengths[:, None]


def encode_audio_batch(model: KwsModel, mel_block: np.ndarray, mel_mask: np.ndarray,
                       mode: str = "eval", rng=None):
    """(B, n, 80) log-mel + (B, n) mask -> ((B, n', EMBED_DIM), (B, n') mask)."""
    rng = _require_rng(mode, rng)
    mel_block = np.asarray(mel_block, dtype=np.float64)
    if mel_block.ndim != 3 or mel_block.shape[2] != N_MELS:
        raise ShapeError("mel block must be (B, n, %d), got %r" % (N_MELS, mel_block.shape))
    if mel_block.shape[1] < 1:
        raise InvalidArgumentError("mel block has no frames")
    p = model.config.dropout_p
    mask2 = stride_mask(mel_mask)
    # zero features at padded time steps after each block: the next conv's
    # boundary windows must see the zeros a standalone row would
    time_gate = mask2[:, None, :, None].astype(np.float64)
    x = Tensor(mel_block[:, None, :, :])  # (B, 1, n, 80)
    x = ly.conv2d_forward(x, model.conv1_k, model.conv1_b, TIME_STRIDE)
    x = model.bn1(x, mode)
    x = tz.leaky_relu(x, 0.01) * time_gate
    x = ly.dropout(x, p, mode, rng)
    x = ly.conv2d_forward(x, model.conv2_k, model.conv2_b, 1)
    x = model.bn2(x, mode)
    x = tz.leaky_relu(x, 0.01) * time_gate
    x = ly.dropout(x, p, mode, rng)

    n_out = x.shape[2]
    seq = tz.reshape(tz.permute(x, (2, 0, 1, 3)), (n_out, x.shape[0], -1))  # (n',B,C*F)
    h = ly.bigru_forward(seq, model.audio_gru1_f, model.audio_gru1_b, mask2.T)
    h = ly.dropout(h, p, mode, rng)
    h = ly.bigru_forward(h, model.audio_gru2_f, model.audio_gru2_b, mask2.T)
    h = ly.dropout(h, p, mode, rng)
    h = ly.dense_forward(h, model.audio_dense_w, model.audio_dense_b)
    h = ly.dropout(h, p, mode, rng)
    return tz.permute(h, (1, 0, 2)), mask2


def cross_attend_batch(model: KwsModel, text: Tensor, audio: Tensor,
                       audio_mask: np.ndarray):
    """Text queries attend over audio keys/values -> (context, weights).

    text (B, m, d); audio (B, n', d); context (B, m, d); weights (B, m, n')
    with masked audio positions exactly 0 and rows summing to 1.
    """
    wq_t = tz.permute(model.attn_wq, (1, 0))
    wk_t = tz.permute(model.attn_wk, (1, 0))
    wv_t = tz.permute(model.attn_wv, (1, 0))
    q = tz.matmul(text, wq_t)
    k = tz.matmul(audio, wk_t)
    v = tz.matmul(audio, wv_t)
    logits = tz.matmul(q, tz.permute(k, (0, 2, 1))) * (1.0 / math.sqrt(EMBED_DIM))
    weights = ly.masked_softmax(logits, audio_mask[:, None, :])
    return tz.matmul(weights, v), weights


def discriminate_batch(model: KwsModel, context: Tensor, text_mask: np.ndarray) -> Tensor:
    """(B, m, d) attended rows -> (B,) match probabilities.

    Concatenates the forward state at each sequence's last real position with
    the backward state at position 0, then dense + sigmoid.
    """
    seq = tz.permute(context, (1, 0, 2))  # (m, B, d)
    _, h_f, h_b = ly.bigru_scan(seq, model.disc_gru_f, model.disc_gru_b, text_mask.T)
    final = tz.concat([h_f, h_b], axis=1)  # (B, 2*DISC_HIDDEN)
    logit = ly.dense_forward(final, model.disc_dense_w, model.disc_dense_b)
    return tz.reshape(tz.sigmoid(logit), (-1,))


def score_batch(model: KwsModel, mel_block, mel_mask, emb_block, text_mask,
                mode: str = "eval", rng=None) -> Tensor:
    """Full forward pass over a padded batch -> (B,) probabilities."""
    text = encode_text_batch(model, emb_block, text_mask, mode, rng)
    audio, audio_mask = encode_audio_batch(model, mel_block, mel_mask, mode, rng)
    context, _ = cross_attend_batch(model, text, audio, audio_mask)
    return discriminate_batch(model, context, text_mask)


# ---- Single-pair API ----


def _single_text_inputs(e: TtsEmbeddingSequence):
    emb = e.values[None, :, :]
    mask = np.ones((1, e.values.shape[0]), dtype=bool)
    return emb, mask


def _single_audio_inputs(mel: MelSpectrogram):
    values = np.asarray(mel.values, dtype=np.float64)
    block = values[None, :, :]
    mask = np.ones((1, values.shape[0]), dtype=bool)
    return block, mask


def text_encode(e: TtsEmbeddingSequence, model: KwsModel, mode: str = "eval",
                rng=None) -> TextEmbedding:
    emb, mask = _single_text_inputs(e)
    out = encode_text_batch(model, emb, mask, mode, rng)
    return TextEmbedding(matrix=out.data[0].T.copy())


def audio_encode(mel: MelSpectrogram, model: KwsModel, mode: str = "eval",
                 rng=None) -> AudioEmbedding:
    block, mask = _single_audio_inputs(mel)
    out, _ = encode_audio_batch(model, block, mask, mode, rng)
    return AudioEmbedding(matrix=out.data[0].T.copy())


def cross_attend(t: TextEmbedding, a: AudioEmbedding, model: KwsModel):
    """-> (context rows (m, d), attention weights (m, n'))."""
    text = Tensor(t.matrix.T[None, :, :])
    audio = Tensor(a.matrix.T[None, :, :])
    mask = np.ones((1, audio.shape[1]), dtype=bool)
    context, weights = cross_attend_batch(model, text, audio, mask)
    return context.data[0].copy(), weights.data[0].copy()


def discriminate(context_rows: np.ndarray, model: KwsModel,
                 text_mask: np.ndarray | None = None) -> float:
    context_rows = np.asarray(context_rows, dtype=np.float64)
    if text_mask is None:
        text_mask = np.ones((1, context_rows.shape[0]), dtype=bool)
    out = discriminate_batch(model, Tensor(context_rows[None, :, :]), text_mask)
    return float(out.data[0])


def score_pair(mel: MelSpectrogram, e: TtsEmbeddingSequence, model: KwsModel,
               mode: str = "eval", rng=None) -> float:
    """One (audio, keyword) pair -> match probability in [0, 1]."""
    emb, text_mask = _single_text_inputs(e)
    block, mel_mask = _single_audio_inputs(mel)
    out = score_batch(model, block, mel_mask, emb, text_mask, mode, rng)
    return float(out.data[0])


def score_pair_graph(mel: MelSpectrogram, e: TtsEmbeddingSequence, model: KwsModel,
                     mode: str = "eval", rng=None) -> Tensor:
    """As score_pair but returns the scalar graph node (for gradient checks)."""
    emb, text_mask = _single_text_inputs(e)
    block, mel_mask = _single_audio_inputs(mel)
    out = score_batch(model, block, mel_mask, emb, text_mask, mode, rng)
    return tz.reshape(out, ())
