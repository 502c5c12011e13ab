"""Training loop, semi-supervised scheduling, data splits and evaluation."""
import math
import zlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .corpus import EOS
from .errors import ContractError, NumericalError
from .model import ModelConfig, Seq4Model

FRACTIONS = (0.05, 0.10, 0.25, 0.50, 0.75, 1.00)
SPLIT_MODES = ("supervised", "minus", "plus")


def substream(seed, name):
    """Independent generator for one named consumer of randomness."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("ascii"))])


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    grad_clip_norm: float = 5.0
    epochs: int = 30
    alpha: float = 0.1
    unsup_batch_prob: float = 0.3
    seed: int = 0
    latent_ratio: float = 0.0       # 0 means mean |x| / mean |y| over the pairs
    latent_max_len: int = 50
    hidden_size: int = 64
    embedding_size: int = 32
    attention_size: int = 32
    init_scale: float = 0.08
    share_embeddings: bool = False
    patience: int = 5
    max_decode_len: int = 100

    def validate(self):
        for name in ("learning_rate", "grad_clip_norm", "hidden_size", "embedding_size",
                     "attention_size", "init_scale", "latent_max_len", "max_decode_len",
                     "patience"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be positive")
        if self.epochs < 0:
            raise ContractError("epochs must be non-negative")
        if self.alpha < 0 or self.latent_ratio < 0:
            raise ContractError("alpha and latent_ratio must be non-negative")
        if not 0.0 <= self.unsup_batch_prob <= 1.0:
            raise ContractError("unsup_batch_prob must lie in [0, 1]")
        return self

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]


@dataclass
class Instance:
    """One training or test item as vocabulary ids (``EOS`` terminated)."""

    y: list
    x: list = None
    features: np.ndarray = None
    world: object = None


@dataclass
class TrainResult:
    model: Seq4Model
    history: list = field(default_factory=list)     # (step, kind, value)
    best_epoch: int = None
    epochs_run: int = 0
    validation: list = field(default_factory=list)


# ---------------------------------------------------------------- optimiser

def sgd_step(params, grads, cfg):
    """Clip the global gradient norm to ``cfg.grad_clip_norm`` and take one step.

    ``params`` and ``grads`` are dicts keyed by parameter name; missing or
    ``None`` gradients count as zero.  Returns the pre-clipping norm.
    """
    sq = 0.0
    for name, g in grads.items():
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for parameter {name}")
        sq += float(np.sum(g * g))
    norm = math.sqrt(sq)
    scale = cfg.learning_rate
    if norm > cfg.grad_clip_norm:
        scale *= cfg.grad_clip_norm / norm
    for name, t in params.items():
        g = grads.get(name)
        if g is not None:
            t.data = t.data - scale * g
    return norm


# ---------------------------------------------------------------- model setup

def infer_latent_ratio(pairs):
    xs = [len(p.x) for p in pairs]
    ys = [len(p.y) for p in pairs]
    return float(np.mean(xs) / np.mean(ys))


def build_model(cfg, x_vocab_size, y_vocab_size, feature_size=0, latent_ratio=1.0):
    mc = ModelConfig(x_vocab_size, y_vocab_size, hidden_size=cfg.hidden_size,
                     embedding_size=cfg.embedding_size, attention_size=cfg.attention_size,
                     feature_size=feature_size, share_embeddings=cfg.share_embeddings,
                     latent_ratio=latent_ratio, latent_max_len=cfg.latent_max_len,
                     init_scale=cfg.init_scale)
    return Seq4Model(mc, substream(cfg.seed, "model-init"))


def _check_instances(items, paired):
    for it in items:
        if not it.y or it.y[-1] != EOS:
            raise ContractError("targets must be non-empty and EOS terminated")
        if paired and not it.x:
            raise ContractError("paired instance without an x side")


# ---------------------------------------------------------------- training

def train(model, paired, unpaired, cfg, validation=None, log=None):
    """Batch-size-1 SGD over paired data with optional unsupervised steps.

    An epoch is ``ceil(len(paired) / (1 - lambda))`` steps (``len(unpaired)``
    steps when lambda is 1).  Before each step a draw from the schedule
    stream picks an unsupervised step with probability lambda; it is skipped
    entirely when there is no unpaired data, so that case reproduces the
    supervised baseline exactly.  Supervised steps walk the pairs in a
    fresh shuffled order per pass.  Without unpaired data the supervised
    objective is the decoder-segment NLL alone.

    With ``validation`` the model is scored after each epoch, training stops
    after ``cfg.patience`` epochs without improvement and the best
    parameters are restored.
    """
    cfg.validate()
    if not paired:
        raise ContractError("training needs at least one paired example")
    _check_instances(paired, True)
    _check_instances(unpaired, False)
    shuffle = substream(cfg.seed, "data-shuffle")
    schedule = substream(cfg.seed, "schedule")
    noise = substream(cfg.seed, "latent-noise")
    lam = cfg.unsup_batch_prob if unpaired else 0.0
    semi = bool(unpaired) and lam > 0.0
    if lam >= 1.0:
        steps_per_epoch = len(unpaired)
    else:
        steps_per_epoch = math.ceil(len(paired) / (1.0 - lam))
    params = model.parameters()
    result = TrainResult(model)
    best, best_state, bad = -1.0, None, 0
    order, pos, step = [], 0, 0

    for epoch in range(cfg.epochs):
        for _ in range(steps_per_epoch):
            if semi and schedule.random() < lam:
                it = unpaired[int(schedule.integers(len(unpaired)))]
                loss, _ = model.loss_unsup(it.y, cfg.alpha, rng=noise, features=it.features)
                kind = "unsup"
            else:
                if pos == len(order):
                    order, pos = shuffle.permutation(len(paired)), 0
                it = paired[order[pos]]
                pos += 1
                if semi:
                    loss, _ = model.loss_sup(it.x, it.y, rng=noise, features=it.features)
                else:
                    loss, _ = model.loss_s2s(it.x, it.y, features=it.features)
                kind = "sup"
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"non-finite {kind} loss {value} at step {step}")
            model.zero_grad()
            ad.backward(loss)
            sgd_step(params, {k: t.grad for k, t in params.items()}, cfg)
            result.history.append((step, kind, value))
            if log is not None:
                log.write(format_history_line(step, kind, value))
            step += 1
        result.epochs_run = epoch + 1
        if validation:
            acc = eval_exact_match(model, validation, cfg.max_decode_len)
            result.validation.append(acc)
            if acc > best:
                best, best_state, bad, result.best_epoch = acc, model.state_dict(), 0, epoch
            else:
                bad += 1
                if bad >= cfg.patience:
                    break
    if best_state is not None:
        model.load_state_dict(best_state)
    return result


def format_history_line(step, kind, value):
    return f"{step}\t{kind}\t{value!r}\n"


def format_history(history):
    return "".join(format_history_line(*h) for h in history)


# ---------------------------------------------------------------- evaluation

def predict_ids(model_or_callable, item, max_len=100):
    if callable(model_or_callable) and not hasattr(model_or_callable, "predict"):
        return list(model_or_callable(item))
    tracker = item.world.tracker() if item.world is not None else None
    return list(model_or_callable.predict(item.x, max_len, tracker=tracker).tokens)


def is_correct(pred, item):
    if item.world is not None:
        return item.world.correct(pred)
    gold = item.y[:-1] if item.y and item.y[-1] == EOS else item.y
    return list(pred) == list(gold)


def eval_exact_match(model_or_callable, items, max_len=100):
    """Fraction of items whose prediction matches gold.

    Accepts a model with ``predict`` or a callable ``item -> token ids``.
    Items carrying a ``world`` are scored by the final state reached.
    """
    if not items:
        raise ContractError("evaluation needs at least one example")
    hits = sum(is_correct(predict_ids(model_or_callable, it, max_len), it) for it in items)
    return hits / len(items)


# ---------------------------------------------------------------- splits

@dataclass(frozen=True)
class SplitSpec:
    fraction: float
    mode: str = "supervised"

    def __post_init__(self):
        if not any(abs(self.fraction - f) < 1e-9 for f in FRACTIONS):
            raise ContractError(f"fraction {self.fraction} not in {FRACTIONS}")
        if self.mode not in SPLIT_MODES:
            raise ContractError(f"mode {self.mode!r} not in {SPLIT_MODES}")


def split_indices(n, fraction, seed):
    if n < 20:
        raise ContractError(f"ablation needs at least 20 pairs, got {n}")
    k = int(math.floor(fraction * n + 0.5))
    perm = substream(seed, "ablation").permutation(n)
    return sorted(int(i) for i in perm[:k]), sorted(int(i) for i in perm[k:])


def _y_only(item):
    if isinstance(item, Instance):
        return replace(item, x=None)
    if hasattr(item, "x_tokens"):
        return replace(item, x_tokens=None)
    return item


def ablation_split(dataset, spec, seed, generated=None):
    """``(paired subset, unpaired pool)`` for one ablation cell.

    The subset keeps ``floor(fraction * N + 0.5)`` pairs chosen by a seeded
    permutation, in original order.  The pool is empty (supervised), the
    y side of the discarded pairs (minus) or ``generated`` (plus).
    """
    if not isinstance(spec, SplitSpec):
        spec = SplitSpec(*spec)
    kept, rest = split_indices(len(dataset), spec.fraction, seed)
    paired = [dataset[i] for i in kept]
    if spec.mode == "supervised":
        pool = []
    elif spec.mode == "minus":
        pool = [_y_only(dataset[i]) for i in rest]
    else:
        if generated is None:
            raise ContractError("plus mode needs generated y data")
        pool = list(generated)
    return paired, pool


@dataclass
class Fold:
    test: str
    train: tuple


def crossval_folds(groups):
    """One fold per group, holding it out for test; ``groups`` maps name -> items."""
    names = list(groups)
    if len(names) != 3:
        raise ContractError(f"cross-validation needs exactly 3 groups, got {len(names)}")
    return [Fold(n, tuple(m for m in names if m != n)) for n in names]


def weighted_accuracy(results):
    """Sum of ``acc * n`` over sum of ``n`` for ``(acc, n)`` pairs."""
    results = list(results)
    total = sum(n for _, n in results)
    if total <= 0:
        raise ContractError("weighted accuracy over zero test items")
    return sum(a * n for a, n in results) / total
