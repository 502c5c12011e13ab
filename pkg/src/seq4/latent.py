"""Logistic-normal latent tokens with the reparametrisation trick.

At each step a linear map of the recurrent state gives a mean and a
log-variance over the latent vocabulary; a Gaussian draw built from them is
pushed through softmax to give a point on the probability simplex.
"""
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError

LOGVAR_MIN = -30.0
LOGVAR_MAX = 30.0


@dataclass
class LatentStepSample:
    mu: Tensor
    logvar: Tensor
    epsilon: np.ndarray
    gamma: Tensor
    xtilde: Tensor


def draw_latent_step(h, proj, rng=None, epsilon=None):
    """Draw one soft latent token from recurrent state ``h``.

    ``proj`` is an :class:`~seq4.nn.Linear` with ``2 * V`` outputs; the first
    half is the mean, the second the log-variance (clamped to
    [LOGVAR_MIN, LOGVAR_MAX]).  Noise comes from ``epsilon`` if given, else
    from ``rng.standard_normal``; ``rng=None`` without ``epsilon`` gives the
    zero-noise draw ``softmax(mu)``.
    """
    out = ad.affine(h, proj.weight, proj.bias)
    n = out.shape[0]
    if n % 2:
        raise ContractError(f"latent projection has odd output size {n}")
    V = n // 2
    mu = ad.slice(out, 0, V)
    logvar = ad.clamp(ad.slice(out, V, n), LOGVAR_MIN, LOGVAR_MAX)
    if epsilon is None:
        epsilon = np.zeros(V) if rng is None else rng.standard_normal(V)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if epsilon.shape != (V,):
        raise ContractError(f"noise of shape {epsilon.shape} for {V} latent symbols")
    sigma = ad.exp(ad.scale(logvar, 0.5))
    gamma = ad.add(mu, ad.mul(sigma, Tensor(epsilon)))
    return LatentStepSample(mu, logvar, epsilon, gamma, ad.softmax(gamma))


def kl_step(mu, logvar):
    """Closed-form KL(N(mu, diag(exp(logvar))) || N(0, I))."""
    terms = ad.sub(ad.add(ad.mul(mu, mu), ad.exp(logvar)), logvar)
    return ad.scale(ad.sub(ad.sum(terms), Tensor(float(mu.shape[0]))), 0.5)


def kl_sequence(samples):
    total = None
    for s in samples:
        k = kl_step(s.mu, s.logvar)
        total = k if total is None else ad.add(total, k)
    return Tensor(0.0) if total is None else total

