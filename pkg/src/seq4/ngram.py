"""Interpolated Kneser-Ney trigram model over token sequences.

Each sequence is framed as ``<s> <s> w1 ... wn </s>``.  The highest order
uses raw counts; the bigram level uses continuation counts N1+(. v w); the
unigram level is the undiscounted continuation distribution N1+(. w) over
distinct bigram types.  One absolute discount per discounted order is
estimated as n1 / (n1 + 2 n2) from that order's count-of-counts.
"""
import bisect
import math
from collections import Counter, defaultdict

from .errors import ContractError, ParseError, Seq4Error

SOS, EOS = "<s>", "</s>"


class SamplerExhausted(Seq4Error):
    def __init__(self, attempts):
        super().__init__(f"no admissible sample in {attempts} attempts")
        self.attempts = attempts


def _discount(counts):
    coc = Counter(counts.values())
    n1, n2 = coc.get(1, 0), coc.get(2, 0)
    if n1 == 0 or n2 == 0:
        return 0.5
    return n1 / (n1 + 2 * n2)


class TrigramModel:
    def __init__(self, trigram_counts):
        self.c3 = dict(trigram_counts)
        if not self.c3:
            raise ContractError("cannot fit a language model to an empty corpus")
        self.c_ctx = Counter()          # c(u v .)
        self.n_ctx = Counter()          # N1+(u v .)
        for (u, v, w), n in self.c3.items():
            self.c_ctx[(u, v)] += n
            self.n_ctx[(u, v)] += 1
        self.cont2 = Counter((v, w) for (_, v, w) in self.c3)      # N1+(. v w)
        self.cont2_ctx = Counter()      # N1+(. v .)
        self.n2_ctx = Counter()         # N1+(v .) at the continuation level
        for (v, _), n in self.cont2.items():
            self.cont2_ctx[v] += n
            self.n2_ctx[v] += 1
        self.cont1 = Counter(w for (_, w) in self.cont2)            # N1+(. w)
        self.cont1_total = sum(self.cont1.values())
        self.d3 = _discount(self.c3)
        self.d2 = _discount(self.cont2)
        self.vocab = tuple(sorted(self.cont1))                      # includes EOS, never SOS
        self._cache = {}

    @classmethod
    def fit(cls, sequences):
        counts = Counter()
        for seq in sequences:
            toks = [SOS, SOS, *seq, EOS]
            for i in range(2, len(toks)):
                counts[tuple(toks[i - 2:i + 1])] += 1
        if not any(len(s) for s in sequences):
            raise ContractError("need at least one non-empty sequence")
        return cls(counts)

    # ------------------------------------------------------------ probabilities

    def p_unigram(self, w):
        return self.cont1.get(w, 0) / self.cont1_total

    def p_bigram(self, v, w):
        total = self.cont2_ctx.get(v, 0)
        if total == 0:
            return self.p_unigram(w)
        d = self.d2
        return (max(self.cont2.get((v, w), 0) - d, 0.0) / total
                + d * self.n2_ctx[v] / total * self.p_unigram(w))

    def prob(self, w, context):
        u, v = context
        total = self.c_ctx.get((u, v), 0)
        if total == 0:
            return self.p_bigram(v, w)
        d = self.d3
        return (max(self.c3.get((u, v, w), 0) - d, 0.0) / total
                + d * self.n_ctx[(u, v)] / total * self.p_bigram(v, w))

    def distribution(self, context):
        """``(tokens, probabilities)`` over the vocabulary for a two-token context."""
        context = tuple(context)
        hit = self._cache.get(context)
        if hit is None:
            probs = [self.prob(w, context) for w in self.vocab]
            cum, acc = [], 0.0
            for p in probs:
                acc += p
                cum.append(acc)
            hit = self._cache[context] = (self.vocab, probs, cum)
        return hit[0], hit[1]

    def _cumulative(self, context):
        self.distribution(context)
        return self._cache[tuple(context)]

    # ------------------------------------------------------------ persistence

    def dumps(self):
        rows = sorted(self.c3.items())
        return "".join(f"3\t{' '.join(k)}\t{n}\n" for k, n in rows)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        counts = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split("\t")
                if not line.strip():
                    continue
                if len(parts) != 3 or parts[0] != "3" or len(parts[1].split()) != 3:
                    raise ParseError("counts line needs 3<TAB>u v w<TAB>count", path, lineno)
                try:
                    counts[tuple(parts[1].split())] = int(parts[2])
                except ValueError:
                    raise ParseError("count is not an integer", path, lineno) from None
        return cls(counts)


def fit(sequences):
    return TrigramModel.fit([list(s) for s in sequences])


def _draw(model, context, rng):
    if isinstance(model, TrigramModel):
        vocab, _, cum = model._cumulative(context)
    else:
        vocab, probs = model.distribution(context)
        cum, acc = [], 0.0
        for p in probs:
            acc += p
            cum.append(acc)
    i = bisect.bisect_right(cum, rng.random() * cum[-1])
    return vocab[min(i, len(vocab) - 1)]


def sample_once(model, rng, max_len=128):
    """One ancestral sample; truncated at ``max_len`` tokens if EOS never comes."""
    if max_len < 1:
        raise ContractError("max_len must be at least 1")
    ctx = (SOS, SOS)
    out = []
    while len(out) < max_len:
        w = _draw(model, ctx, rng)
        if w == EOS:
            break
        out.append(w)
        ctx = (ctx[1], w)
    return tuple(out)


def sample(model, rng, exclude=frozenset(), max_len=128, max_attempts=100):
    """Ancestral sample not in ``exclude`` (a set of token tuples).

    Works with any object exposing ``distribution(context)``.  Raises
    :class:`SamplerExhausted` after ``max_attempts`` rejected draws.
    """
    for _ in range(max_attempts):
        seq = sample_once(model, rng, max_len)
        if seq not in exclude:
            return seq
    raise SamplerExhausted(max_attempts)


def perplexity(model, sequences):
    sequences = [list(s) for s in sequences]
    if not sequences:
        raise ContractError("perplexity of an empty corpus")
    nll, n = 0.0, 0
    for seq in sequences:
        toks = [SOS, SOS, *seq, EOS]
        for i in range(2, len(toks)):
            p = model.prob(toks[i], (toks[i - 2], toks[i - 1]))
            if p <= 0.0:
                raise ContractError(f"token {toks[i]!r} has zero probability")
            nll -= math.log(p)
            n += 1
    return math.exp(nll / n)


def read_sequences(path):
    with open(path, encoding="utf-8") as fh:
        return [line.split() for line in fh if line.strip()]


def sequence_probabilities(model, max_len, exclude=frozenset()):
    """Exact distribution of :func:`sample` by enumeration (small vocabularies only)."""
    out = defaultdict(float)

    def walk(prefix, ctx, p):
        if len(prefix) == max_len:
            out[tuple(prefix)] += p
            return
        vocab, probs = model.distribution(ctx)
        for w, q in zip(vocab, probs):
            if q == 0.0:
                continue
            if w == EOS:
                out[tuple(prefix)] += p * q
            else:
                walk(prefix + [w], (ctx[1], w), p * q)

    walk([], (SOS, SOS), 1.0)
    kept = {k: v for k, v in out.items() if k not in exclude}
    z = sum(kept.values())
    if z == 0.0:
        raise ContractError("every sequence is excluded")
    return {k: v / z for k, v in kept.items()}
