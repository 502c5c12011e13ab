"""Command-line entry point: ``seq4 {train,eval,generate,ablate}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical abort.
"""
import argparse
import hashlib
import os
import sys
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import maze as mz
from . import ngram
from .corpus import (Vocab, build_vocab, detokenize_nlmaps, load_lexicon, load_parallel,
                     load_unpaired)
from .errors import ContractError, NumericalError, ParseError, Seq4Error
from .model import ModelConfig, Seq4Model
from .nn import load_params, save_params
from .trainer import (FRACTIONS, Instance, SplitSpec, TrainConfig, ablation_split,
                      build_model, format_history, infer_latent_ratio, substream, train)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MODE_COLUMNS = {"S2S": "supervised", "SEQ4-": "minus", "SEQ4+": "plus"}


class ConfigError(Seq4Error):
    pass


class UsageError(Seq4Error):
    pass


@dataclass
class DataConfig:
    task: str = "query"
    min_count: int = 1
    keep_brackets: bool = True
    lexicon: str = ""
    maze: str = ""


# ---------------------------------------------------------------- config

def _convert(raw, typ, key):
    try:
        if typ is bool or typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ is int or typ == "int":
            return int(raw)
        if typ is float or typ == "float":
            return float(raw)
        return raw
    except ValueError:
        name = getattr(typ, "__name__", typ)
        raise ConfigError(f"config key {key}: cannot read {raw!r} as {name}") from None


def config_keys():
    return {f.name: (cls, f) for cls in (TrainConfig, DataConfig) for f in fields(cls)}


def parse_config(text, source="<config>"):
    """Read flat ``key = value`` lines into ``(TrainConfig, DataConfig)``."""
    keys = config_keys()
    values = {TrainConfig: {}, DataConfig: {}}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in keys:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}; valid keys: "
                              + ", ".join(sorted(keys)))
        cls, f = keys[key]
        values[cls][key] = _convert(raw, f.type, key)
    tcfg = TrainConfig(**values[TrainConfig])
    dcfg = DataConfig(**values[DataConfig])
    try:
        tcfg.validate()
    except ContractError as exc:
        raise ConfigError(str(exc)) from None
    if dcfg.task not in ("query", "sail"):
        raise ConfigError(f"task must be 'query' or 'sail', got {dcfg.task!r}")
    return tcfg, dcfg


def read_config(path):
    if path is None:
        return parse_config("")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), path)


def dump_config(*objs):
    lines = []
    for obj in objs:
        for k, v in asdict(obj).items():
            lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"


def config_help():
    rows = [f"  {name} ({f.type if isinstance(f.type, str) else f.type.__name__}, "
            f"default {f.default})" for name, (_, f) in config_keys().items()]
    return "config keys (flat 'key = value' lines):\n" + "\n".join(rows)


# ---------------------------------------------------------------- data

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(path):
    if path and not os.path.exists(path):
        raise FileNotFoundError(f"no such file: {path}")
    return path


def load_maze_for(dcfg, override=None):
    path = override or dcfg.maze
    if not path:
        raise UsageError("the sail task needs a maze file (config key 'maze' or --maze)")
    return mz.read_maze(_require(path))


def read_examples(path, dcfg, paired=True):
    _require(path)
    lexicon = load_lexicon(_require(dcfg.lexicon)) if dcfg.lexicon else None
    loader = load_parallel if paired else load_unpaired
    return loader(path, dcfg.task, dcfg.keep_brackets, lexicon)


def action_table(vy):
    return {vy.id(a): a for a in mz.ACTIONS if a in vy}


def to_instance(ex, vx, vy, maze=None, paired=True):
    feats = world = None
    if maze is not None:
        feats = mz.path_features(maze, ex.start, ex.y_tokens)
        world = mz.SailWorld(maze, ex.start, ex.end, action_table(vy))
    x = vx.encode(ex.x_tokens) if paired and ex.x_tokens is not None else None
    return Instance(vy.encode(ex.y_tokens), x, feats, world)


# ---------------------------------------------------------------- training helper

@dataclass
class TrainedRun:
    model: Seq4Model
    vx: Vocab
    vy: Vocab
    history: list
    model_cfg: ModelConfig


def build_vocabs(dcfg, pairs, unpaired=()):
    vx = build_vocab([e.x_tokens for e in pairs], dcfg.min_count)
    vy = build_vocab([e.y_tokens for e in pairs] + [e.y_tokens for e in unpaired], dcfg.min_count)
    return vx, vy


def fit_model(tcfg, dcfg, pairs, unpaired, vx, vy, maze=None, log=None):
    """Shared by ``train`` and ``ablate``: instances, model, training."""
    paired = [to_instance(e, vx, vy, maze) for e in pairs]
    pool = [to_instance(e, vx, vy, maze, paired=False) for e in unpaired]
    ratio = tcfg.latent_ratio or infer_latent_ratio(paired)
    fsize = mz.feature_size(maze) if maze is not None else 0
    model = build_model(tcfg, len(vx), len(vy), fsize, ratio)
    result = train(model, paired, pool, tcfg, log=log)
    return TrainedRun(model, vx, vy, result.history, model.cfg)


def score(pred_ids, ex, item, vy):
    """Exact match on detokenised strings, or final-state match with a world."""
    if item.world is not None:
        return item.world.correct(pred_ids)
    return detokenize_nlmaps(vy.decode(pred_ids)) == detokenize_nlmaps(ex.y_tokens)


def evaluate(predict, examples, items, vy):
    if not items:
        raise ContractError("evaluation needs at least one example")
    hits = sum(score(list(predict(it)), ex, it, vy) for ex, it in zip(examples, items))
    return hits, len(items)


# ---------------------------------------------------------------- manifest

def write_atomic(path, text, mode="w"):
    tmp = f"{path}.tmp"
    with open(tmp, mode, encoding=None if "b" in mode else "utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_manifest(out_dir, command, config_text, seed, inputs, vocabs, outputs, started):
    lines = [f"command\t{command}", f"seed\t{seed}"]
    lines += [f"config\t{ln}" for ln in config_text.splitlines()]
    lines += [f"input\t{p}\tsha256:{sha256_file(p)}" for p in inputs]
    lines += [f"vocab\t{name}\tsha256:{v.digest()}" for name, v in vocabs]
    lines += [f"output\t{p}" for p in outputs]
    lines.append(f"duration_seconds\t{time.monotonic() - started:.3f}")
    write_atomic(os.path.join(out_dir, "manifest.txt"), "\n".join(lines) + "\n")


def read_manifest(path):
    vocab = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "vocab" and len(parts) == 3:
                vocab[parts[1]] = parts[2].split(":", 1)[1]
    return vocab


# ---------------------------------------------------------------- commands

def cmd_train(args):
    started = time.monotonic()
    tcfg, dcfg = read_config(_require(args.config))
    if args.seed is not None:
        tcfg.seed = args.seed
    maze = load_maze_for(dcfg, args.maze) if dcfg.task == "sail" else None
    pairs = read_examples(args.data, dcfg)
    unpaired = read_examples(args.unpaired, dcfg, paired=False) if args.unpaired else []
    if not pairs:
        raise ContractError(f"{args.data}: no training pairs")
    vx, vy = build_vocabs(dcfg, pairs, unpaired)
    os.makedirs(args.out, exist_ok=True)
    log_path = os.path.join(args.out, "loss.log")
    run = fit_model(tcfg, dcfg, pairs, unpaired, vx, vy, maze)
    write_atomic(log_path, format_history(run.history))
    tmp = os.path.join(args.out, "params.bin.tmp")
    save_params(tmp, run.model.state_dict())
    os.replace(tmp, os.path.join(args.out, "params.bin"))
    vx.save(os.path.join(args.out, "vocab_x.txt"))
    vy.save(os.path.join(args.out, "vocab_y.txt"))
    config_text = dump_config(tcfg, dcfg)
    write_atomic(os.path.join(args.out, "config.txt"), config_text)
    write_atomic(os.path.join(args.out, "model.txt"), dump_config(run.model_cfg))
    inputs = [p for p in (args.config, args.data, args.unpaired, args.maze or dcfg.maze) if p]
    outputs = ["params.bin", "vocab_x.txt", "vocab_y.txt", "loss.log", "config.txt", "model.txt"]
    write_manifest(args.out, "train", config_text, tcfg.seed, inputs,
                   [("x", vx), ("y", vy)], outputs, started)
    kinds = [h[1] for h in run.history]
    print(f"trained {len(run.history)} steps ({kinds.count('sup')} supervised, "
          f"{kinds.count('unsup')} unsupervised) -> {args.out}")
    return EXIT_OK


def load_checkpoint(ckpt):
    for name in ("params.bin", "vocab_x.txt", "vocab_y.txt", "config.txt", "model.txt"):
        _require(os.path.join(ckpt, name))
    _, dcfg = read_config(os.path.join(ckpt, "config.txt"))
    with open(os.path.join(ckpt, "model.txt"), encoding="utf-8") as fh:
        raw = dict(ln.split(" = ", 1) for ln in fh.read().splitlines() if ln)
    mcfg = ModelConfig(**{f.name: _convert(raw[f.name], f.type, f.name)
                          for f in fields(ModelConfig)})
    model = Seq4Model(mcfg, np.random.default_rng(0))
    model.load_state_dict(load_params(os.path.join(ckpt, "params.bin")))
    vx = Vocab.load(os.path.join(ckpt, "vocab_x.txt"))
    vy = Vocab.load(os.path.join(ckpt, "vocab_y.txt"))
    return model, vx, vy, dcfg


def check_vocab_hashes(expected, vocabs):
    for name, v in vocabs:
        want = expected.get(name)
        if want is not None and want != v.digest():
            raise ContractError(f"vocabulary {name} hash mismatch: checkpoint recorded "
                                f"{want}, found {v.digest()}")


def cmd_eval(args):
    model, vx, vy, dcfg = load_checkpoint(args.checkpoint)
    manifest = os.path.join(args.checkpoint, "manifest.txt")
    if os.path.exists(manifest):
        check_vocab_hashes(read_manifest(manifest), [("x", vx), ("y", vy)])
    if args.vocab_x or args.vocab_y:
        check_vocab_hashes({"x": vx.digest(), "y": vy.digest()},
                           [(n, Vocab.load(_require(p))) for n, p in
                            (("x", args.vocab_x), ("y", args.vocab_y)) if p])
    if args.task:
        dcfg.task = args.task
    maze = load_maze_for(dcfg, args.maze) if dcfg.task == "sail" else None
    examples = read_examples(args.test, dcfg)
    if not examples:
        raise ContractError(f"{args.test}: empty test file")
    items = [to_instance(e, vx, vy, maze) for e in examples]

    def predict(it):
        tracker = it.world.tracker() if it.world is not None else None
        return model.predict(it.x, args.max_len, tracker=tracker).tokens

    hits, n = evaluate(predict, examples, items, vy)
    report = f"accuracy {hits / n:.4f}\ncorrect {hits}\ntotal {n}\n"
    sys.stdout.write(report)
    if args.report:
        write_atomic(args.report, report)
    return EXIT_OK


def cmd_generate(args):
    rng = substream(args.seed, "generator")
    lines, short = [], 0
    if args.mode == "queries":
        if not args.source:
            raise UsageError("--mode queries needs --source")
        corpus = ngram.read_sequences(_require(args.source))
        model = ngram.fit(corpus)
        # an empty sample would be a blank line that no later --exclude could name
        exclude = {()} | {tuple(s) for s in corpus}
        if args.exclude:
            exclude |= {tuple(s) for s in ngram.read_sequences(_require(args.exclude))}
        for _ in range(args.count):
            try:
                lines.append(" ".join(ngram.sample(model, rng, exclude, args.max_len,
                                                   args.max_attempts)))
            except ngram.SamplerExhausted:
                short += 1
    else:
        if args.maze:
            world = mz.read_maze(_require(args.maze))
        else:
            world = mz.generate_maze(mz.MazeStats(), seed=int(substream(args.seed, "maze")
                                                              .integers(2**31)))
            if args.maze_out:
                mz.write_maze(world, args.maze_out)
        for _ in range(args.count):
            lines.append(mz.format_path(*mz.sample_path(world, rng)))
    text = "".join(ln + "\n" for ln in lines)
    if args.out:
        write_atomic(args.out, text)
    else:
        sys.stdout.write(text)
    if short:
        print(f"warning: sampler exhausted for {short} of {args.count} samples", file=sys.stderr)
    return EXIT_OK


def _fraction_label(f):
    return f"{f * 100:g}%"


def format_table(rows, columns):
    """TSV and space-aligned renderings of ``rows`` = [(label, {column: cell})]."""
    header = ["sup_data", *columns]
    body = [[label, *(cells.get(c, "") for c in columns)] for label, cells in rows]
    tsv = "\n".join("\t".join(r) for r in [header, *body]) + "\n"
    widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
    text = "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [header, *body])
    return tsv, text + "\n"


def cmd_ablate(args):
    tcfg, dcfg = read_config(_require(args.config))
    if args.seed is not None:
        tcfg.seed = args.seed
    fractions = [float(f) for f in args.fractions.split(",")]
    for f in fractions:
        if not any(abs(f - m) < 1e-9 for m in FRACTIONS):
            raise UsageError(f"fraction {f} not in {FRACTIONS}")
    columns = args.modes.split(",")
    for c in columns:
        if c not in MODE_COLUMNS:
            raise UsageError(f"mode {c!r} not in {sorted(MODE_COLUMNS)}")
    maze = load_maze_for(dcfg, args.maze) if dcfg.task == "sail" else None
    data = read_examples(args.data, dcfg)
    test = read_examples(args.test, dcfg)
    if not test:
        raise ContractError(f"{args.test}: empty test file")
    generated = read_examples(args.generated, dcfg, paired=False) if args.generated else None
    vx, vy = build_vocabs(dcfg, data, generated or [])
    test_items = [to_instance(e, vx, vy, maze) for e in test]
    rows = []
    for f in fractions:
        cells = {}
        for c in columns:
            try:
                pairs, pool = ablation_split(data, SplitSpec(f, MODE_COLUMNS[c]), tcfg.seed,
                                             generated)
                run = fit_model(tcfg, dcfg, pairs, pool, vx, vy, maze)

                def predict(it, model=run.model):
                    tracker = it.world.tracker() if it.world is not None else None
                    return model.predict(it.x, args.max_len, tracker=tracker).tokens

                hits, n = evaluate(predict, test, test_items, vy)
                cells[c] = f"{100 * hits / n:.2f}"
            except (Seq4Error, FloatingPointError) as exc:
                print(f"warning: cell {_fraction_label(f)}/{c} failed: {exc}", file=sys.stderr)
                cells[c] = "FAIL"
        rows.append((_fraction_label(f), cells))
    tsv, text = format_table(rows, columns)
    os.makedirs(args.out, exist_ok=True)
    write_atomic(os.path.join(args.out, "ablation.tsv"), tsv)
    write_atomic(os.path.join(args.out, "ablation.txt"), text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="seq4", description="Semi-supervised sequence transduction toolkit.",
                epilog=config_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model", epilog=config_help(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    t.add_argument("config")
    t.add_argument("data", help="parallel file: source<TAB>target per line")
    t.add_argument("--unpaired", help="target-only file; enables semi-supervised training")
    t.add_argument("--maze", help="maze file for the sail task")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a test file")
    e.add_argument("checkpoint", help="output directory of a train run")
    e.add_argument("test")
    e.add_argument("--task", choices=("query", "sail"))
    e.add_argument("--maze")
    e.add_argument("--vocab-x", dest="vocab_x", help="require this source vocabulary")
    e.add_argument("--vocab-y", dest="vocab_y", help="require this target vocabulary")
    e.add_argument("--max-len", dest="max_len", type=int, default=100)
    e.add_argument("--report", help="also write the metrics report here")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("generate", help="sample synthetic queries or maze paths")
    g.add_argument("--mode", choices=("queries", "paths"), required=True)
    g.add_argument("--source", help="token sequences to fit the query model on")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--exclude", help="extra sequences the samples must differ from")
    g.add_argument("--max-len", dest="max_len", type=int, default=128)
    g.add_argument("--max-attempts", dest="max_attempts", type=int, default=100)
    g.add_argument("--maze", help="maze file for paths (default: generate one)")
    g.add_argument("--maze-out", dest="maze_out", help="save the generated maze here")
    g.add_argument("--out")
    g.set_defaults(func=cmd_generate)

    a = sub.add_parser("ablate", help="supervised-fraction sweep")
    a.add_argument("config")
    a.add_argument("data")
    a.add_argument("--test", required=True)
    a.add_argument("--generated", help="generated targets for the SEQ4+ column")
    a.add_argument("--fractions", default=",".join(str(f) for f in FRACTIONS))
    a.add_argument("--modes", default="S2S,SEQ4-,SEQ4+")
    a.add_argument("--maze")
    a.add_argument("--seed", type=int)
    a.add_argument("--max-len", dest="max_len", type=int, default=100)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:          # argparse usage errors and --help
        return exc.code
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"seq4 {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"seq4 {args.command}: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, ParseError, ContractError, mz.BlockedMove) as exc:
        print(f"seq4 {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
