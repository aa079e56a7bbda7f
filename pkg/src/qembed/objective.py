"""Training objective: Monte-Carlo reconstruction plus closed-form KL/entropy terms.

Conventions: losses are summed over the batch; additive constants in the two
closed-form terms are anchored so each is 0 for matching distributions at
regularizer weight 0 (mu=0, var=1 for the Gaussian term).
"""

from dataclasses import dataclass

import numpy as np

from .samplers import clamp_prob


def _check_binary(y):
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be binary")
    return y


def bernoulli_loglik(p_y, y):
    """Per-item sum_k [y ln p + (1-y) ln(1-p)]; probabilities clamped before logs."""
    y = _check_binary(y)
    p = clamp_prob(np.asarray(p_y, dtype=np.float64))
    return (y * np.log(p) + (1.0 - y) * np.log1p(-p)).sum(axis=1)


def aux_cross_entropy(probs, y):
    """Total cross-entropy between predicted Bernoulli probabilities and binary labels."""
    return -bernoulli_loglik(probs, y).sum()


def bernoulli_kl_mi(q_z, p_z, lam):
    """Summed KL(q||p) minus lam times the entropy bonus, per class and item.

    Per entry: sum over v in {0,1} of q_v ln(q_v^{1-lam} / p_v).
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    q = clamp_prob(np.asarray(q_z, dtype=np.float64))
    p = clamp_prob(np.asarray(p_z, dtype=np.float64))
    neg_ent = q * np.log(q) + (1.0 - q) * np.log1p(-q)
    cross = q * np.log(p) + (1.0 - q) * np.log1p(-p)
    return float(((1.0 - lam) * neg_ent - cross).sum())


def gaussian_kl_mi(mu, logvar, lam):
    """Summed Gaussian term against the N(0, I) prior.

    Per dimension: (var + mu^2 - 1 - (1-lam) ln var) / 2, anchored to 0 at
    (mu=0, var=1, lam=0).
    """
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    var = np.exp(logvar)
    return float((0.5 * (var + mu * mu - 1.0 - (1.0 - lam) * logvar)).sum())


@dataclass
class LossBreakdown:
    recon: float
    kl_z: float
    kl_s: float
    total: float
    aux_ce: float
    n_items: int = 0

    def per_item(self):
        n = max(self.n_items, 1)
        return {
            "recon": self.recon / n,
            "kl_z": self.kl_z / n,
            "kl_s": self.kl_s / n,
            "total": self.total / n,
            "aux_ce": self.aux_ce / n,
        }


def total_loss(record, y, lam):
    """Assemble the minimization objective from one forward record."""
    recon = float(-bernoulli_loglik(record.p_y, y).sum())
    kl_z = bernoulli_kl_mi(record.q_z, record.p_z, lam)
    kl_s = gaussian_kl_mi(record.mu, record.logvar, lam)
    aux = float(aux_cross_entropy(record.p_z, y))
    total = recon + kl_z + kl_s
    if not np.isfinite(total):
        raise FloatingPointError("non-finite loss")
    return LossBreakdown(recon, kl_z, kl_s, total, aux, n_items=y.shape[0])
