"""Tokenisation, entity anonymisation, vocabularies and corpus files.

Parallel files hold ``natural language<TAB>logical form`` per line; unpaired
files hold one logical form per line.  For the navigation task the logical
form column is a path record (see :mod:`seq4.maze`).
"""
import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field

from .errors import ContractError, ParseError

PAD, SOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<s>", "</s>", "<unk>")

PLACEHOLDERS = ("_CITY_", "_STATE_", "_COUNTRY_", "_RIVER_")

_PUNCT = re.compile(r"([(),])")


def tokenize_nlmaps(text):
    """Drop quotes, split off ``( ) ,`` and a trailing question mark."""
    text = text.replace("'", "").replace('"', "")
    toks = _PUNCT.sub(r" \1 ", text).split()
    if toks and toks[-1] != "?" and toks[-1].endswith("?"):
        toks[-1:] = [toks[-1][:-1], "?"]
    return toks


def detokenize_nlmaps(tokens):
    """Inverse of :func:`tokenize_nlmaps` on quote-free canonical strings."""
    out = []
    last = len(tokens) - 1
    for i, tok in enumerate(tokens):
        glue = (i == 0 or tokens[i - 1] in "(),"
                or tok in ("(", ")", ",") or (tok == "?" and i == last))
        out.append(tok if glue else " " + tok)
    return "".join(out)


def tokenize_logical_form(text, keep_brackets=True):
    toks = tokenize_nlmaps(text)
    if not keep_brackets:
        toks = [t for t in toks if t not in ("(", ")", ",")]
    return toks


# ---------------------------------------------------------------- anonymisation

def load_lexicon(path):
    """Read ``surface<TAB>category`` lines into ``{surface tokens: category}``."""
    lexicon = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("lexicon line needs surface<TAB>category", path, lineno)
            surface, cat = parts[0].split(), parts[1].strip()
            if cat not in PLACEHOLDERS:
                raise ParseError(f"unknown category {cat!r}", path, lineno)
            lexicon[tuple(surface)] = cat
    return lexicon


def anonymise(tokens, lexicon):
    """Replace lexicon surface forms by category placeholders.

    Overlapping matches are resolved longest first, then leftmost.  Returns
    the new tokens and a list of ``(placeholder, surface)`` pairs in
    left-to-right order.
    """
    tokens = list(tokens)
    lex = {tuple(k.split()) if isinstance(k, str) else tuple(k): v for k, v in lexicon.items()}
    for cat in lex.values():
        if cat not in PLACEHOLDERS:
            raise ContractError(f"unknown placeholder category {cat!r}")
    matches = []
    for n in sorted({len(k) for k in lex}, reverse=True):
        for i in range(len(tokens) - n + 1):
            if tuple(tokens[i:i + n]) in lex:
                matches.append((n, i))
    matches.sort(key=lambda m: (-m[0], m[1]))
    taken = [False] * len(tokens)
    chosen = []
    for n, i in matches:
        if not any(taken[i:i + n]):
            taken[i:i + n] = [True] * n
            chosen.append((i, n))
    chosen.sort()
    out, mapping, pos = [], [], 0
    for i, n in chosen:
        out.extend(tokens[pos:i])
        surface = tuple(tokens[i:i + n])
        out.append(lex[surface])
        mapping.append((lex[surface], " ".join(surface)))
        pos = i + n
    out.extend(tokens[pos:])
    return out, mapping


def deanonymise(tokens, mapping):
    out = []
    pending = list(mapping)
    for tok in tokens:
        if pending and tok == pending[0][0]:
            out.extend(pending.pop(0)[1].split())
        else:
            out.append(tok)
    return out


# ---------------------------------------------------------------- vocabulary

class Vocab:
    """Token <-> id map with the reserved block ``<pad> <s> </s> <unk>`` first."""

    def __init__(self, tokens=()):
        self.itos = list(RESERVED)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            if t in self.stoi:
                raise ContractError(f"duplicate token {t!r}")
            self.stoi[t] = len(self.itos)
            self.itos.append(t)
        self.frozen = True

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token):
        return self.stoi.get(token, UNK)

    def encode(self, tokens, eos=True):
        ids = [self.stoi.get(t, UNK) for t in tokens]
        return ids + [EOS] if eos else ids

    def decode(self, ids):
        out = []
        for i in ids:
            if i == EOS:
                break
            if i in (PAD, SOS):
                continue
            out.append(self.itos[i])
        return out

    def dumps(self):
        return "".join(f"{t}\t{i}\n" for i, t in enumerate(self.itos))

    def digest(self):
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        rows = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.rsplit("\t", 1)
                if len(parts) != 2 or not parts[1].isdigit():
                    raise ParseError("vocabulary line needs token<TAB>id", path, lineno)
                rows.append((int(parts[1]), parts[0]))
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))):
            raise ParseError("vocabulary ids are not contiguous", path)
        if tuple(t for _, t in rows[:len(RESERVED)]) != RESERVED:
            raise ParseError("vocabulary does not start with the reserved block", path)
        return cls(t for _, t in rows[len(RESERVED):])


def build_vocab(sequences, min_count=1):
    """Ids ordered by descending count, then token; rarer tokens map to UNK."""
    counts = Counter(t for seq in sequences for t in seq)
    keep = [t for t, n in counts.items() if n >= min_count and t not in RESERVED]
    keep.sort(key=lambda t: (-counts[t], t))
    return Vocab(keep)


# ---------------------------------------------------------------- files

@dataclass
class ParallelExample:
    y_tokens: list
    x_tokens: list = None
    anonymisation_map: list = field(default_factory=list)
    x_anonymisation_map: list = field(default_factory=list)
    start: object = None
    end: object = None
    lineno: int = None


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if line.strip():
                yield lineno, line


def _logical_form(text, task, path, lineno, keep_brackets, lexicon):
    if task == "sail":
        from .maze import parse_path
        try:
            start, actions, end = parse_path(text)
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
        return ParallelExample(list(actions), start=start, end=end, lineno=lineno)
    if task != "query":
        raise ContractError(f"unknown task {task!r}")
    toks = tokenize_logical_form(text, keep_brackets)
    mapping = []
    if lexicon:
        toks, mapping = anonymise(toks, lexicon)
    if not toks:
        raise ParseError("empty logical form", path, lineno)
    return ParallelExample(toks, anonymisation_map=mapping, lineno=lineno)


def load_parallel(path, task="query", keep_brackets=True, lexicon=None):
    examples = []
    for lineno, line in _lines(path):
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(f"expected 2 tab-separated fields, found {len(parts)}", path, lineno)
        ex = _logical_form(parts[1], task, path, lineno, keep_brackets, lexicon)
        if task == "sail":
            ex.x_tokens = parts[0].split()
        else:
            ex.x_tokens = tokenize_nlmaps(parts[0])
            if lexicon:
                ex.x_tokens, ex.x_anonymisation_map = anonymise(ex.x_tokens, lexicon)
        if not ex.x_tokens:
            raise ParseError("empty natural-language side", path, lineno)
        examples.append(ex)
    return examples


def load_unpaired(path, task="query", keep_brackets=True, lexicon=None):
    examples = []
    for lineno, line in _lines(path):
        if "\t" in line:
            raise ParseError("unpaired lines hold a single field", path, lineno)
        examples.append(_logical_form(line, task, path, lineno, keep_brackets, lexicon))
    return examples
