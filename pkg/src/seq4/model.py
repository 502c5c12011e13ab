"""The four-LSTM sequential autoencoder.

Two attention seq2seq halves chained through a soft latent sequence:

* ``enc_y``  bidirectional LSTM over the logical form y,
* ``latent`` attentive LSTM emitting logistic-normal distributions x~,
* ``enc_x``  bidirectional LSTM over x~ (or a one-hot x when observed),
* ``dec_y``  attentive LSTM reconstructing y.

Only ``enc_x`` and ``dec_y`` are used for prediction; trained alone they
form the supervised S2S baseline.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .corpus import EOS, PAD, SOS
from .errors import ContractError
from .latent import draw_latent_step, kl_sequence


@dataclass
class ModelConfig:
    x_vocab_size: int
    y_vocab_size: int
    hidden_size: int = 64
    embedding_size: int = 32
    attention_size: int = 32
    feature_size: int = 0
    share_embeddings: bool = False
    latent_ratio: float = 1.0
    latent_max_len: int = 50
    init_scale: float = 0.08
    # diagnostic: score NLL(x~, x) on the noise-free mean instead of gamma
    x_nll_on_mean: bool = False


@dataclass
class ForwardTrace:
    h_y: Tensor = None
    latent_steps: list = field(default_factory=list)
    h_x: Tensor = None
    logits_y: Tensor = None
    logits_x: Tensor = None


class Decoded(NamedTuple):
    tokens: list
    truncated: bool


DECODER_SEGMENTS = ("enc_x", "dec_y")
ENCODER_SEGMENTS = ("enc_y", "latent")


class Seq4Model:
    def __init__(self, cfg, rng):
        self.cfg = cfg
        Vx, Vy = cfg.x_vocab_size, cfg.y_vocab_size
        H, E, A, F = cfg.hidden_size, cfg.embedding_size, cfg.attention_size, cfg.feature_size
        k = cfg.init_scale
        self.enc_y_emb = nn.Embedding.init(rng, Vy, E, "enc_y.emb", k)
        self.enc_y_fwd = nn.LstmParams.init(rng, E + F, H, "enc_y.fwd", k)
        self.enc_y_bwd = nn.LstmParams.init(rng, E + F, H, "enc_y.bwd", k)
        self.latent_start = Tensor(nn._uniform(rng, Vx, scale=k), requires_grad=True,
                                   name="latent.start_logits")
        self.latent_lstm = nn.LstmParams.init(rng, Vx + 2 * H, H, "latent.lstm", k)
        self.latent_attn = nn.AttentionParams.init(rng, H, 2 * H, A, "latent.attn", k)
        self.latent_proj = nn.Linear.init(rng, H, 2 * Vx, "latent.proj", k)
        self.enc_x_emb = nn.Embedding.init(rng, Vx, E, "enc_x.emb", k)
        self.enc_x_fwd = nn.LstmParams.init(rng, E, H, "enc_x.fwd", k)
        self.enc_x_bwd = nn.LstmParams.init(rng, E, H, "enc_x.bwd", k)
        if cfg.share_embeddings:
            self.dec_emb = self.enc_y_emb
        else:
            self.dec_emb = nn.Embedding.init(rng, Vy, E, "dec_y.emb", k)
        self.dec_lstm = nn.LstmParams.init(rng, E + 2 * H + F, H, "dec_y.lstm", k)
        self.dec_attn = nn.AttentionParams.init(rng, H, 2 * H, A, "dec_y.attn", k)
        self.dec_out = nn.Linear.init(rng, H, Vy, "dec_y.out", k)

    # ------------------------------------------------------------ parameters

    def _segments(self):
        return {
            "enc_y": [self.enc_y_emb, self.enc_y_fwd, self.enc_y_bwd],
            "latent": [self.latent_lstm, self.latent_attn, self.latent_proj],
            "enc_x": [self.enc_x_emb, self.enc_x_fwd, self.enc_x_bwd],
            "dec_y": [self.dec_emb, self.dec_lstm, self.dec_attn, self.dec_out],
        }

    def parameters(self, segments=None):
        """Ordered ``{name: Tensor}``, optionally restricted to some segments."""
        out = {}
        for seg, blocks in self._segments().items():
            if segments is not None and seg not in segments:
                continue
            if seg == "latent":
                out[self.latent_start.name] = self.latent_start
            for block in blocks:
                for t in block.tensors():
                    out.setdefault(t.name, t)
        return out

    def zero_grad(self):
        for t in self.parameters().values():
            t.grad = None

    def state_dict(self):
        return {k: t.data.copy() for k, t in self.parameters().items()}

    def load_state_dict(self, state):
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ContractError(f"parameter names differ: missing {sorted(missing)}, "
                                f"unexpected {sorted(extra)}")
        for k, t in params.items():
            if state[k].shape != t.shape:
                raise ContractError(f"{k}: shape {state[k].shape} != {t.shape}")
            t.data = np.array(state[k], dtype=np.float64)

    def latent_length(self, y_len):
        n = int(np.floor(self.cfg.latent_ratio * y_len + 0.5))
        return min(max(n, 1), self.cfg.latent_max_len)

    # ------------------------------------------------------------ segments

    def _check_ids(self, ids, vocab_size, what):
        if len(ids) == 0:
            raise ContractError(f"empty {what} sequence")
        for i in ids:
            if not 0 <= i < vocab_size:
                raise ContractError(f"{what} id {i} outside [0, {vocab_size})")

    def encode_y(self, y, features=None):
        self._check_ids(y, self.cfg.y_vocab_size, "y")
        return nn.bidir_encode(self.enc_y_fwd, self.enc_y_bwd, self.enc_y_emb, y, features)

    def predict_latent(self, h_y, L_x=None, rng=None, teacher_x=None, epsilons=None):
        """Run the latent LSTM for ``L_x`` steps (or ``len(teacher_x)``).

        With ``teacher_x`` the input at step t >= 2 is the one-hot of the
        previous observed token instead of the previous draw.  ``epsilons``
        (one noise row per step) overrides ``rng``.
        """
        if teacher_x is not None:
            self._check_ids(teacher_x, self.cfg.x_vocab_size, "x")
            L_x = len(teacher_x)
        if L_x is None or L_x < 1:
            raise ContractError("latent length or teacher sequence required")
        H = self.cfg.hidden_size
        keys = nn.AttentionKeys(self.latent_attn, h_y)
        h, c = nn.zeros(H), nn.zeros(H)
        prev = ad.softmax(self.latent_start)
        steps = []
        for t in range(L_x):
            ctx, _ = keys.attend(h)
            h, c = nn.lstm_step(self.latent_lstm, ad.concat(prev, ctx), h, c)
            eps = None if epsilons is None else epsilons[t]
            s = draw_latent_step(h, self.latent_proj, rng, eps)
            steps.append(s)
            if teacher_x is not None:
                onehot = np.zeros(self.cfg.x_vocab_size)
                onehot[teacher_x[t]] = 1.0
                prev = Tensor(onehot)
            else:
                prev = s.xtilde
        return steps

    def encode_x(self, x):
        if not isinstance(x, Tensor) and not (len(x) and isinstance(x[0], Tensor)):
            self._check_ids(x, self.cfg.x_vocab_size, "x")
        return nn.bidir_encode(self.enc_x_fwd, self.enc_x_bwd, self.enc_x_emb, x)

    def _dec_input(self, emb_row, ctx, feat):
        if feat is None:
            return ad.concat(emb_row, ctx)
        return ad.concat(emb_row, ctx, Tensor(feat))

    def decode_y(self, h_x, y, features=None):
        """Teacher-forced decoder logits, one row per position of ``y``."""
        self._check_ids(y, self.cfg.y_vocab_size, "y")
        if y[-1] != EOS:
            raise ContractError("decoder target must end with EOS")
        H = self.cfg.hidden_size
        feats = None if features is None else np.asarray(features, float)
        if feats is not None and feats.shape != (len(y), self.cfg.feature_size):
            raise ContractError(f"features {feats.shape} for {len(y)} decoder steps")
        keys = nn.AttentionKeys(self.dec_attn, h_x)
        prev = ad.take_rows(self.dec_emb.matrix, [SOS] + list(y[:-1]))
        h, c = nn.zeros(H), nn.zeros(H)
        hs = []
        for t in range(len(y)):
            ctx, _ = keys.attend(h)
            inp = self._dec_input(ad.row(prev, t), ctx, None if feats is None else feats[t])
            h, c = nn.lstm_step(self.dec_lstm, inp, h, c)
            hs.append(h)
        return ad.affine(ad.stack(hs), self.dec_out.weight, self.dec_out.bias)

    @staticmethod
    def nll(logits, targets):
        return ad.nll_rows(logits, targets, ignore_index=PAD)

    # ------------------------------------------------------------ losses

    def loss_unsup(self, y, alpha, rng=None, features=None, L_x=None, epsilons=None):
        """Reconstruction NLL of y through soft latent x~, plus ``alpha`` x KL."""
        if alpha < 0:
            raise ContractError("alpha must be non-negative")
        tr = ForwardTrace()
        tr.h_y = self.encode_y(y, features)
        L = L_x if L_x is not None else self.latent_length(len(y))
        tr.latent_steps = self.predict_latent(tr.h_y, L, rng, epsilons=epsilons)
        tr.logits_x = ad.stack([s.gamma for s in tr.latent_steps])
        tr.h_x = self.encode_x(ad.stack([s.xtilde for s in tr.latent_steps]))
        tr.logits_y = self.decode_y(tr.h_x, y, features)
        loss = self.nll(tr.logits_y, y)
        if alpha:
            loss = ad.add(loss, ad.scale(kl_sequence(tr.latent_steps), alpha))
        return loss, tr

    def loss_sup(self, x, y, rng=None, features=None, epsilons=None):
        """NLL(x~, x) + NLL(y^, y) with the latent path teacher-forced on x."""
        tr = ForwardTrace()
        tr.h_y = self.encode_y(y, features)
        tr.latent_steps = self.predict_latent(tr.h_y, rng=rng, teacher_x=x, epsilons=epsilons)
        scores = [s.mu if self.cfg.x_nll_on_mean else s.gamma for s in tr.latent_steps]
        tr.logits_x = ad.stack(scores)
        tr.h_x = self.encode_x(x)
        tr.logits_y = self.decode_y(tr.h_x, y, features)
        loss = ad.add(self.nll(tr.logits_x, x), self.nll(tr.logits_y, y))
        return loss, tr

    def loss_s2s(self, x, y, features=None):
        """Decoder-segment NLL only: the supervised baseline objective."""
        tr = ForwardTrace()
        tr.h_x = self.encode_x(x)
        tr.logits_y = self.decode_y(tr.h_x, y, features)
        return self.nll(tr.logits_y, y), tr

    # ------------------------------------------------------------ inference

    def predict(self, x, max_len=100, tracker=None):
        """Greedy x -> y decoding from one-hot ``x``; EOS is not returned.

        ``tracker`` (optional) supplies per-step state features and is
        advanced with each emitted token.
        """
        H = self.cfg.hidden_size
        with ad.no_grad():
            keys = nn.AttentionKeys(self.dec_attn, self.encode_x(x))
            W_out, b_out = self.dec_out.weight.data, self.dec_out.bias.data
            emb = self.dec_emb.matrix
            h, c = nn.zeros(H), nn.zeros(H)
            prev = SOS
            out = []
            for _ in range(max_len):
                ctx, _ = keys.attend(h)
                feat = tracker.features() if tracker is not None else None
                h, c = nn.lstm_step(self.dec_lstm, self._dec_input(ad.row(emb, prev), ctx, feat),
                                    h, c)
                tok = int(np.argmax(W_out @ h.data + b_out))
                if tok == EOS:
                    return Decoded(out, False)
                out.append(tok)
                prev = tok
                if tracker is not None:
                    tracker.advance(tok)
        return Decoded(out, True)
