"""Recurrent building blocks: LSTM cells, bidirectional encoders, additive
attention, soft embeddings and output projections.
"""
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, ParseError

INIT_SCALE = 0.08
FORGET_BIAS = 1.0


def _param(arr, name):
    return Tensor(arr, requires_grad=True, name=name)


def _uniform(rng, *shape, scale=None):
    scale = INIT_SCALE if scale is None else scale
    return rng.uniform(-scale, scale, size=shape)


@dataclass
class LstmParams:
    W_input: Tensor
    W_recurrent: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng, input_size, hidden_size, name="lstm", scale=None):
        H = hidden_size
        bias = _uniform(rng, 4 * H, scale=scale)
        bias[H:2 * H] = FORGET_BIAS
        return cls(_param(_uniform(rng, 4 * H, input_size, scale=scale), f"{name}.W_input"),
                   _param(_uniform(rng, 4 * H, H, scale=scale), f"{name}.W_recurrent"),
                   _param(bias, f"{name}.bias"))

    @property
    def hidden_size(self):
        return self.W_recurrent.shape[1]

    @property
    def input_size(self):
        return self.W_input.shape[1]

    def tensors(self):
        return [self.W_input, self.W_recurrent, self.bias]


@dataclass
class AttentionParams:
    W_query: Tensor
    W_key: Tensor
    v: Tensor

    @classmethod
    def init(cls, rng, query_size, key_size, attn_size, name="attn", scale=None):
        return cls(_param(_uniform(rng, attn_size, query_size, scale=scale), f"{name}.W_query"),
                   _param(_uniform(rng, attn_size, key_size, scale=scale), f"{name}.W_key"),
                   _param(_uniform(rng, attn_size, scale=scale), f"{name}.v"))

    def tensors(self):
        return [self.W_query, self.W_key, self.v]


@dataclass
class Embedding:
    matrix: Tensor

    @classmethod
    def init(cls, rng, vocab_size, dim, name="emb", scale=None):
        return cls(_param(_uniform(rng, vocab_size, dim, scale=scale), f"{name}.matrix"))

    @property
    def vocab_size(self):
        return self.matrix.shape[0]

    def tensors(self):
        return [self.matrix]


@dataclass
class Linear:
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, rng, in_size, out_size, name="linear", scale=None):
        return cls(_param(_uniform(rng, out_size, in_size, scale=scale), f"{name}.weight"),
                   _param(_uniform(rng, out_size, scale=scale), f"{name}.bias"))

    def tensors(self):
        return [self.weight, self.bias]


def lstm_step(p, x, h_prev, c_prev):
    return ad.lstm_cell(x, h_prev, c_prev, p.W_input, p.W_recurrent, p.bias)


def zeros(n):
    return Tensor(np.zeros(n))


SIMPLEX_TOL = 1e-4


def check_simplex(P, what="distribution"):
    P = np.atleast_2d(P)
    if np.any(P < 0):
        raise ContractError(f"{what} has negative entries")
    if np.any(np.abs(P.sum(axis=1) - 1.0) > SIMPLEX_TOL):
        raise ContractError(f"{what} does not sum to 1")


def embed_soft(emb, dist):
    """Probability-weighted average of embedding rows."""
    check_simplex(dist.data, "soft token")
    return ad.matmul(dist, emb.matrix)


def embed_tokens(emb, tokens):
    """Embed a token sequence into an ``L x E`` matrix.

    ``tokens`` is a list of ids (row lookup) or a ``L x V`` Tensor / list of
    length-V Tensors holding probability vectors (soft embedding).
    """
    if isinstance(tokens, Tensor):
        dists = tokens
    elif len(tokens) and isinstance(tokens[0], Tensor):
        dists = ad.stack(tokens)
    else:
        ids = list(tokens)
        if not ids:
            raise ContractError("empty token sequence")
        return ad.take_rows(emb.matrix, ids)
    if dists.data.ndim != 2 or dists.shape[0] == 0:
        raise ContractError("soft token input must be a non-empty L x V matrix")
    if dists.shape[1] != emb.vocab_size:
        raise DimensionError(f"soft tokens over {dists.shape[1]} symbols, embedding has "
                             f"{emb.vocab_size}")
    check_simplex(dists.data, "soft token")
    return ad.matmul(dists, emb.matrix)


def bidir_encode(fwd, bwd, emb, tokens, features=None):
    """Bidirectional LSTM encoding; row t is ``(forward_t ; backward_t)``.

    ``features`` (an ``L x F`` array) is appended to each token embedding.
    """
    X = embed_tokens(emb, tokens)
    if features is not None:
        X = ad.hcat(X, as_matrix(features, X.shape[0]))
    return ad.hcat(ad.lstm_sequence(X, fwd.W_input, fwd.W_recurrent, fwd.bias),
                   ad.lstm_sequence(X, bwd.W_input, bwd.W_recurrent, bwd.bias, reverse=True))


def as_matrix(features, rows):
    F = features if isinstance(features, Tensor) else Tensor(np.asarray(features, float))
    if F.data.ndim != 2 or F.shape[0] != rows:
        raise DimensionError(f"feature matrix {F.shape} for {rows} positions")
    return F


class AttentionKeys:
    """Keys with their attention-space projection computed once."""

    def __init__(self, p, keys):
        if keys.data.ndim != 2 or keys.shape[0] == 0:
            raise ContractError("attention over an empty key sequence")
        self.p = p
        self.keys = keys
        self.proj = ad.matmul(keys, ad.transpose(p.W_key))

    def attend(self, query):
        return ad.attention(query, self.p.W_query, self.proj, self.p.v, self.keys)


def attend(p, query, keys):
    """Returns ``(context, weights)``; ``keys`` is an ``L x K`` Tensor or a list of vectors."""
    if not isinstance(keys, Tensor):
        keys = list(keys)
        if not keys:
            raise ContractError("attention over an empty key sequence")
        keys = ad.stack(keys)
    return AttentionKeys(p, keys).attend(query)


def project_logits(lin, h):
    return ad.affine(h, lin.weight, lin.bias)


# ---------------------------------------------------------------- serialisation

MAGIC = b"SEQ4PAR\x00"
FORMAT_VERSION = 1


def save_params(path, params):
    """Write ``{name: array}`` as a versioned little-endian float64 container.

    Layout: magic, uint32 version, uint32 count, then per entry uint32 name
    length, utf-8 name, uint32 ndim, ndim x uint32 dims, row-major values.
    Entries are written in sorted name order so output is byte-stable.
    """
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(params)))
        for name in sorted(params):
            arr = params[name]
            arr = np.ascontiguousarray(arr.data if isinstance(arr, Tensor) else arr,
                                       dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(MAGIC)] != MAGIC:
        raise ParseError("not a parameter file (bad magic)", path)
    off = len(MAGIC)
    version, count = struct.unpack_from("<II", blob, off)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported parameter format version {version}", path)
    off += 8
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + n].decode("utf-8")
        off += n
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=off).reshape(shape).copy()
        off += 8 * size
    return out
