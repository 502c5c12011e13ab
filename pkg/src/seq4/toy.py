"""Synthetic transduction task for desk-scale training checks.

Sources are strings over a small word list; each word maps to a fixed
target symbol and the target wraps the mapped symbols in a constant frame,
so a correct model must learn both the lexicon and the output template.
"""
from dataclasses import dataclass

import numpy as np

from .corpus import build_vocab
from .trainer import Instance, TrainConfig


@dataclass(frozen=True)
class ToyGrammar:
    n_words: int = 8
    min_len: int = 2
    max_len: int = 5
    frame: tuple = ("query", "(")
    close: tuple = (")",)

    @property
    def words(self):
        return tuple(f"w{i}" for i in range(self.n_words))

    def translate(self, x):
        return [*self.frame, *(f"S{w[1:]}" for w in x), *self.close]

    def sample(self, rng):
        n = int(rng.integers(self.min_len, self.max_len + 1))
        x = [self.words[int(i)] for i in rng.integers(self.n_words, size=n)]
        return x, self.translate(x)


def toy_pairs(n, seed, grammar=ToyGrammar()):
    rng = np.random.default_rng(seed)
    return [grammar.sample(rng) for _ in range(n)]


def toy_vocabs(grammar=ToyGrammar()):
    xs = [list(grammar.words)]
    ys = [grammar.translate(grammar.words)]
    return build_vocab(xs), build_vocab(ys)


def to_instances(pairs, vx, vy, with_x=True):
    return [Instance(vy.encode(y), vx.encode(x) if with_x else None) for x, y in pairs]


def toy_config(**overrides):
    """Training settings used for the toy task: wider initialisation, otherwise defaults."""
    return TrainConfig(**{"init_scale": 0.2, **overrides})
