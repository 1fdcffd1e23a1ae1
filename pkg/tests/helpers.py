"""Independent numeric oracles shared by several test modules."""

import numpy as np

from cevt.model import Batch, LossSpec, ModelParams, backward, forward_batch, init_params

ENCODER_BLOCKS = ("W_e", "b_e", "W_c", "b_c")
DISCRIMINATOR_BLOCKS = ("W_d1", "b_d1", "w_d2", "b_d2")


def oracle_losses(p: ModelParams, batch: Batch):
    """(L_c, L_e, L_d) written out from scratch, no clamping (inputs are benign)."""
    def hidden(x):
        return np.maximum(x @ p.W_e + p.b_e, 0.0)

    def probs(h):
        z = h @ p.W_c + p.b_c
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def disc(h):
        a = np.maximum(h @ p.W_d1 + p.b_d1, 0.0) @ p.w_d2 + p.b_d2[0]
        return 1.0 / (1.0 + np.exp(-a))

    hs, ht = hidden(batch.source_x), hidden(batch.target_x)
    ps, pt = probs(hs), probs(ht)
    l_c = -np.mean(np.log(ps[np.arange(len(ps)), batch.source_y]))
    l_e = np.mean(np.sum(pt * np.log(pt), axis=1))
    w = np.ones(len(pt)) if batch.target_w is None else batch.target_w
    l_d = np.mean(np.log(disc(hs))) + np.mean(w * np.log(1.0 - disc(ht)))
    return l_c, l_e, l_d


def random_problem(seed, n=8, dim=5, n_classes=3, hidden=16, adv=8):
    rng = np.random.default_rng(seed)
    p = init_params(dim, n_classes, hidden, adv, seed=seed)
    # non-zero biases so every path is exercised
    for name in ("b_e", "b_c", "b_d1", "b_d2"):
        setattr(p, name, rng.normal(0, 0.1, getattr(p, name).shape))
    batch = Batch(rng.normal(size=(n, dim)), rng.integers(0, n_classes, n),
                  rng.normal(size=(n, dim)), rng.uniform(0, 1, n))
    spec = LossSpec(beta=float(rng.uniform(0.2, 2)), gamma=float(rng.uniform(0.2, 2)),
                    lam=float(rng.uniform(0.2, 2)))
    return p, batch, spec


def finite_difference_errors(p: ModelParams, batch: Batch, spec: LossSpec, step=1e-5) -> dict[str, float]:
    """Relative error of every analytic gradient block against central differences.

    Encoder/classifier blocks descend L_c + beta*L_e + lam*L_d (the reversed
    adversarial gradient); discriminator blocks descend -gamma*L_d.
    """
    def f_enc(q):
        l_c, l_e, l_d = oracle_losses(q, batch)
        return l_c + spec.beta * l_e + spec.lam * l_d

    def f_disc(q):
        return -spec.gamma * oracle_losses(q, batch)[2]

    analytic = backward(forward_batch(batch, p), p, spec)
    errors = {}
    for name in ENCODER_BLOCKS + DISCRIMINATOR_BLOCKS:
        f = f_enc if name in ENCODER_BLOCKS else f_disc
        theta = getattr(p, name)
        num = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            old = theta[idx]
            theta[idx] = old + step
            up = f(p)
            theta[idx] = old - step
            down = f(p)
            theta[idx] = old
            num[idx] = (up - down) / (2 * step)
        a = getattr(analytic, name)
        scale = max(np.max(np.abs(a)), np.max(np.abs(num)), 1e-12)
        errors[name] = float(np.max(np.abs(a - num)) / scale)
    return errors
