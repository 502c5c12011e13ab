"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--hidden 64] [--length 8] [--repeat 2000]

Prints microseconds per call for each kernel and backend, then the wall
time of a short end-to-end training run under each backend.
"""
import argparse
import time

import numpy as np

from seq4 import kernels
from seq4.toy import to_instances, toy_pairs, toy_vocabs
from seq4.trainer import TrainConfig, build_model, infer_latent_ratio, train


def _time(fn, repeat):
    fn()
    t = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t) / repeat * 1e6


def kernel_cases(H, E, L, A, rng):
    W_in = rng.standard_normal((4 * H, E)) * 0.1
    W_rec = rng.standard_normal((4 * H, H)) * 0.1
    b = rng.standard_normal(4 * H) * 0.1
    x, h, c = rng.standard_normal(E), rng.standard_normal(H), rng.standard_normal(H)
    X = rng.standard_normal((L, E))
    W_q = rng.standard_normal((A, H)) * 0.1
    keys = rng.standard_normal((L, 2 * H))
    W_k = rng.standard_normal((A, 2 * H)) * 0.1
    kp = np.ascontiguousarray(keys @ W_k.T)
    v = rng.standard_normal(A) * 0.1

    def cases(k):
        _, _, gates, tc = k.lstm_cell_forward(W_in, W_rec, b, x, h, c)
        Hs, Cs, G, TC = k.lstm_seq_forward(W_in, W_rec, b, X, False)
        dHs = np.ones_like(Hs)
        ctx, w, t = k.attention_forward(W_q, kp, v, keys, h)
        return {
            "lstm_cell_forward": lambda: k.lstm_cell_forward(W_in, W_rec, b, x, h, c),
            "lstm_cell_backward": lambda: k.lstm_cell_backward(W_in, W_rec, x, h, c, gates, tc,
                                                               h, c),
            "lstm_seq_forward": lambda: k.lstm_seq_forward(W_in, W_rec, b, X, False),
            "lstm_seq_backward": lambda: k.lstm_seq_backward(W_in, W_rec, X, Hs, Cs, G, TC,
                                                             dHs, False),
            "attention_forward": lambda: k.attention_forward(W_q, kp, v, keys, h),
            "attention_backward": lambda: k.attention_backward(W_q, v, keys, h, w, t, ctx),
        }

    return cases


def training_time(epochs):
    vx, vy = toy_vocabs()
    pairs = to_instances(toy_pairs(50, 0), vx, vy)
    cfg = TrainConfig(epochs=epochs)
    model = build_model(cfg, len(vx), len(vy), latent_ratio=infer_latent_ratio(pairs))
    t = time.perf_counter()
    train(model, pairs, [], cfg)
    return time.perf_counter() - t


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--embedding", type=int, default=32)
    ap.add_argument("--length", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=2000)
    ap.add_argument("--epochs", type=int, default=3)
    args = ap.parse_args()

    backends = kernels.available_backends()
    cases = kernel_cases(args.hidden, args.embedding, args.length, 32,
                         np.random.default_rng(0))
    table = {name: cases(kernels.get_backend(name)) for name in backends}
    print(f"{'kernel':<22}" + "".join(f"{b + ' us':>14}" for b in backends) + f"{'speedup':>10}")
    for kname in table[backends[0]]:
        us = [_time(table[b][kname], args.repeat) for b in backends]
        speed = f"{us[0] / us[-1]:>9.2f}x" if len(us) > 1 else ""
        print(f"{kname:<22}" + "".join(f"{u:>14.2f}" for u in us) + speed)

    print()
    for name in backends:
        kernels.use_backend(name)
        print(f"train {args.epochs} epochs on 50 pairs, {name:<7} backend: "
              f"{training_time(args.epochs):.2f} s")


if __name__ == "__main__":
    main()
