"""A compact Tacotron-2-shaped sequence-to-sequence TTS model.

Module paths follow the reference implementation's state_dict layout
(embedding, encoder.convolutions.N.0.conv, encoder.lstm, decoder.prenet,
decoder.attention_rnn, decoder.attention_layer, decoder.decoder_rnn,
decoder.linear_projection, decoder.gate_layer, postnet.convolutions.N) so a
checkpoint saved from this class reads like the familiar format. Hidden sizes
are scaled down where nothing downstream pins them; the capture widths that
matter (512-wide encoder stack, 512-wide prenet output, 512-channel postnet
body, 80-bin mel) are kept.
"""

from __future__ import annotations

import torch
from torch import nn
from torch.nn import functional as F

SYMBOLS = "abcdefghijklmnopqrstuvwxyz "
N_MEL = 80
ENCODER_DIM = 512
ATTENTION_DIM = 128
RNN_DIM = 256
PRENET_SIZES = (256, 512)
GATE_THRESHOLD = 0.5


def text_to_ids(keyword: str) -> torch.Tensor:
    ids = []
    for ch in keyword.lower():
        idx = SYMBOLS.find(ch)
        if idx < 0:
            raise ValueError(
                "unsupported character %r in keyword %r" % (ch, keyword)
            )
        ids.append(idx)
    if not ids:
        raise ValueError("keyword is empty")
    return torch.tensor(ids, dtype=torch.long)


class ConvNorm(nn.Module):
    def __init__(self, in_ch, out_ch, kernel_size, padding):
        super().__init__()
        self.conv = nn.Conv1d(in_ch, out_ch, kernel_size, padding=padding)

    def forward(self, x):
        return self.conv(x)


class LinearNorm(nn.Module):
    def __init__(self, in_dim, out_dim, bias=True):
        super().__init__()
        self.linear_layer = nn.Linear(in_dim, out_dim, bias=bias)

    def forward(self, x):
        return self.linear_layer(x)


class Encoder(nn.Module):
    def __init__(self):
        super().__init__()
        blocks = []
        for _ in range(3):
            blocks.append(nn.Sequential(
                ConvNorm(ENCODER_DIM, ENCODER_DIM, 5, padding=2),
                nn.BatchNorm1d(ENCODER_DIM),
                nn.ReLU(),
            ))
        self.convolutions = nn.ModuleList(blocks)
        self.lstm = nn.LSTM(ENCODER_DIM, ENCODER_DIM // 2,
                            batch_first=True, bidirectional=True)

    def forward(self, x):
        # x: (1, T_a, 512) -> conv stack works channel-first
        h = x.transpose(1, 2)
        for block in self.convolutions:
            h = block(h)
        h = h.transpose(1, 2)
        out, _ = self.lstm(h)
        return out


class Prenet(nn.Module):
    """Two linear+relu layers with dropout active even at inference,
    as in the reference decoder."""

    def __init__(self):
        super().__init__()
        dims = [N_MEL, *PRENET_SIZES]
        self.layers = nn.ModuleList(
            LinearNorm(a, b, bias=False) for a, b in zip(dims, dims[1:])
        )

    def forward(self, x):
        for layer in self.layers:
            x = F.dropout(F.relu(layer(x)), p=0.5, training=True)
        return x


class LocationLayer(nn.Module):
    def __init__(self):
        super().__init__()
        self.location_conv = ConvNorm(2, 32, 31, padding=15)
        self.location_dense = LinearNorm(32, ATTENTION_DIM, bias=False)

    def forward(self, attention_weights_cat):
        h = self.location_conv(attention_weights_cat)
        return self.location_dense(h.transpose(1, 2))


class Attention(nn.Module):
    """Location-sensitive content attention over the encoder memory."""

    def __init__(self):
        super().__init__()
        self.query_layer = LinearNorm(RNN_DIM, ATTENTION_DIM, bias=False)
        self.memory_layer = LinearNorm(ENCODER_DIM, ATTENTION_DIM, bias=False)
        self.v = LinearNorm(ATTENTION_DIM, 1, bias=False)
        self.location_layer = LocationLayer()

    def forward(self, query, memory, processed_memory, attention_weights_cat):
        processed = self.query_layer(query.unsqueeze(1))
        processed = processed + processed_memory
        processed = processed + self.location_layer(attention_weights_cat)
        energies = self.v(torch.tanh(processed)).squeeze(-1)
        weights = F.softmax(energies, dim=1)
        context = torch.bmm(weights.unsqueeze(1), memory).squeeze(1)
        return context, weights


class Decoder(nn.Module):
    def __init__(self, max_steps=200):
        super().__init__()
        self.max_steps = max_steps
        self.prenet = Prenet()
        self.attention_rnn = nn.LSTMCell(PRENET_SIZES[-1] + ENCODER_DIM, RNN_DIM)
        self.attention_layer = Attention()
        self.decoder_rnn = nn.LSTMCell(RNN_DIM + ENCODER_DIM, RNN_DIM)
        self.linear_projection = LinearNorm(RNN_DIM + ENCODER_DIM, N_MEL)
        self.gate_layer = LinearNorm(RNN_DIM + ENCODER_DIM, 1)

    def forward(self, memory):
        """Free-running decoding from a zero frame until the stop gate fires.

        memory: (1, T_a, 512). Returns (1, T_b, 80) raw mel frames.
        """
        device = memory.device
        t_in = memory.size(1)
        processed_memory = self.attention_layer.memory_layer(memory)
        att_h = torch.zeros(1, RNN_DIM, device=device)
        att_c = torch.zeros(1, RNN_DIM, device=device)
        dec_h = torch.zeros(1, RNN_DIM, device=device)
        dec_c = torch.zeros(1, RNN_DIM, device=device)
        context = torch.zeros(1, ENCODER_DIM, device=device)
        weights = torch.zeros(1, t_in, device=device)
        weights_cum = torch.zeros(1, t_in, device=device)
        frame = torch.zeros(1, N_MEL, device=device)

        frames = []
        for _ in range(self.max_steps):
            pre = self.prenet(frame)
            att_h, att_c = self.attention_rnn(
                torch.cat((pre, context), dim=1), (att_h, att_c)
            )
            weights_cat = torch.stack((weights, weights_cum), dim=1)
            context, weights = self.attention_layer(
                att_h, memory, processed_memory, weights_cat
            )
            weights_cum = weights_cum + weights
            dec_h, dec_c = self.decoder_rnn(
                torch.cat((att_h, context), dim=1), (dec_h, dec_c)
            )
            hidden = torch.cat((dec_h, context), dim=1)
            frame = self.linear_projection(hidden)
            gate = self.gate_layer(hidden)
            frames.append(frame)
            if torch.sigmoid(gate)[0, 0] > GATE_THRESHOLD:
                break
        return torch.stack(frames, dim=1)


class Postnet(nn.Module):
    """Five-conv residual refiner; the last 512-channel activation is the
    capture point for the penultimate representation."""

    def __init__(self):
        super().__init__()
        blocks = [nn.Sequential(
            ConvNorm(N_MEL, ENCODER_DIM, 5, padding=2),
            nn.BatchNorm1d(ENCODER_DIM),
            nn.Tanh(),
        )]
        for _ in range(3):
            blocks.append(nn.Sequential(
                ConvNorm(ENCODER_DIM, ENCODER_DIM, 5, padding=2),
                nn.BatchNorm1d(ENCODER_DIM),
                nn.Tanh(),
            ))
        blocks.append(nn.Sequential(
            ConvNorm(ENCODER_DIM, N_MEL, 5, padding=2),
            nn.BatchNorm1d(N_MEL),
        ))
        self.convolutions = nn.ModuleList(blocks)

    def forward(self, x):
        h = x.transpose(1, 2)
        for block in self.convolutions:
            h = block(h)
        return h.transpose(1, 2)


class Tacotron2Like(nn.Module):
    def __init__(self, max_decoder_steps=200):
        super().__init__()
        self.embedding = nn.Embedding(len(SYMBOLS), ENCODER_DIM)
        self.encoder = Encoder()
        self.decoder = Decoder(max_steps=max_decoder_steps)
        self.postnet = Postnet()

    @torch.no_grad()
    def infer(self, ids: torch.Tensor):
        """ids (T_a,) -> (mel (1, T_b, 80), mel_post (1, T_b, 80))."""
        emb = self.embedding(ids.unsqueeze(0))
        memory = self.encoder(emb)
        mel = self.decoder(memory)
        mel_post = mel + self.postnet(mel)
        return mel, mel_post
