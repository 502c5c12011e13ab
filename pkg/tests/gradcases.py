"""Gradient-check cases shared by the unit and acceptance suites.

Each entry maps a name to ``rng -> (fn, shapes)``: ``fn`` takes one Tensor
per shape and returns a scalar.  Constants are drawn once from ``rng`` and
bound as defaults so repeated calls see the same function.
"""

from seq4 import autodiff as ad
from seq4.autodiff import Tensor


def param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def fixed(rng, n):
    return Tensor(rng.standard_normal(n))


PRIMITIVE_CASES = {
    "matmul_2d": lambda r: (lambda A, B: ad.sum(ad.matmul(A, B)), [(3, 4), (4, 2)]),
    "matmul_mv": lambda r: (lambda A, v: ad.sum(ad.tanh(ad.matmul(A, v))), [(3, 4), (4,)]),
    "matmul_vm": lambda r: (lambda v, A: ad.sum(ad.tanh(ad.matmul(v, A))), [(3,), (3, 4)]),
    "transpose": lambda r: (lambda A: ad.sum(ad.tanh(ad.transpose(A))), [(2, 3)]),
    "affine_vec": lambda r: (lambda x, W, b: ad.sum(ad.tanh(ad.affine(x, W, b))),
                             [(3,), (4, 3), (4,)]),
    "affine_rows": lambda r: (lambda X, W, b: ad.sum(ad.tanh(ad.affine(X, W, b))),
                              [(5, 3), (4, 3), (4,)]),
    "add_mul_chain": lambda r: (lambda a, b, c: ad.sum(ad.mul(ad.add(a, b), ad.sub(c, a))),
                                [(5,), (5,), (5,)]),
    "sigmoid": lambda r: (lambda a: ad.sum(ad.mul(ad.sigmoid(a), ad.sigmoid(a))), [(6,)]),
    "exp_scale": lambda r: (lambda a: ad.sum(ad.exp(ad.scale(a, 0.3))), [(6,)]),
    "log_exp": lambda r: (lambda a: ad.sum(ad.log(ad.exp(ad.tanh(a)))), [(6,)]),
    "softmax": lambda r: (lambda a, w=fixed(r, 7): ad.sum(ad.mul(ad.softmax(a), w)), [(7,)]),
    "log_softmax": lambda r: (lambda a, w=fixed(r, 7): ad.sum(ad.mul(ad.log_softmax(a), w)),
                              [(7,)]),
    "nll_rows": lambda r: (lambda Z: ad.nll_rows(Z, [1, 0, 3, 0], ignore_index=0), [(4, 5)]),
    "concat_hcat_stack": lambda r: (
        lambda a, b, M: ad.sum(ad.tanh(ad.hcat(M, ad.stack([ad.concat(a, b)] * 3)))),
        [(2,), (3,), (3, 4)]),
    "take_rows_row_slice": lambda r: (
        lambda M: ad.sum(ad.mul(ad.slice(ad.row(ad.take_rows(M, [2, 0, 2]), 2), 1, 4),
                                Tensor([1.0, -2.0, 0.5]))), [(3, 5)]),
    "clamp": lambda r: (lambda a: ad.sum(ad.mul(ad.clamp(a, -0.5, 0.5), a)), [(8,)]),
    "softmax_matmul": lambda r: (
        lambda W, x, w=fixed(r, 4): ad.sum(ad.mul(ad.softmax(ad.matmul(W, x)), w)),
        [(4, 3), (3,)]),
}
