"""Manual backward pass, annealed gradient mixing and the SGD training loop."""

import copy
from dataclasses import dataclass, field

import numpy as np

from . import objective
from .network import GROUPS, Model, ModelDims, model_forward
from .numkit import RandomSource
from .samplers import PROB_CLAMP, DecaySchedule
from .objective import total_loss


def _clamped(p):
    inside = (p >= PROB_CLAMP) & (p <= 1.0 - PROB_CLAMP)
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP), inside


def backward_full(model, record, y, lam):
    """Gradients of the total loss for every parameter group.

    Pathwise reconstruction terms flow through the relaxed samples; the
    closed-form KL/entropy terms are differentiated directly. The classifier
    group only sees the KL-vs-posterior term (the posterior is a constant
    there, it lives in a different group anyway).
    """
    y = np.asarray(y, dtype=np.float64)

    # reconstruction: d(-loglik)/dp_y
    p, p_in = _clamped(record.p_y)
    d_py = -(y / p - (1.0 - y) / (1.0 - p)) * p_in
    d_z, d_s, dec_grads = model.decoder.backward(d_py)

    # discrete path: dz/dq through the relaxed sample, plus the KL term in q
    q, q_in = _clamped(record.q_z)
    r, r_in = _clamped(record.p_z)
    z = record.z
    d_q_path = d_z * z * (1.0 - z) / (record.tau * q * (1.0 - q)) * q_in
    d_q_kl = ((1.0 - lam) * (np.log(q) - np.log1p(-q))
              - np.log(r) + np.log1p(-r)) * q_in
    d_yhat_add, add_grads = model.additive.backward(d_q_path + d_q_kl)

    # continuous path plus the Gaussian closed form
    var = np.exp(record.logvar)
    sigma = np.exp(0.5 * record.logvar)
    zeta = record.noise[1].zeta
    d_mu = d_s + record.mu
    d_logvar = d_s * 0.5 * sigma * zeta + 0.5 * (var - (1.0 - lam))
    d_yhat_con, con_grads = model.contrastive.backward(d_mu, d_logvar)

    # shared backbone collects both encoder-head signals
    _, bb_grads = model.backbone.backward(d_yhat_add + d_yhat_con)

    # classifier: KL term only, posterior held constant
    d_pz = (r - q) / (r * (1.0 - r)) * r_in
    _, clf_grads = model.classifier.backward(d_pz)

    return {
        "backbone": bb_grads,
        "additive": add_grads,
        "contrastive": con_grads,
        "decoder": dec_grads,
        "classifier": clf_grads,
    }


def classifier_ce_grads(model, record, y):
    """Gradient of the auxiliary cross-entropy w.r.t. the classifier group."""
    y = np.asarray(y, dtype=np.float64)
    r, r_in = _clamped(record.p_z)
    d_pz = -(y / r - (1.0 - y) / (1.0 - r)) * r_in
    _, grads = model.classifier.backward(d_pz)
    return grads


def anneal_mix(grad_elbo, grad_ce, rho):
    """(1 - rho) * elbo gradient + rho * cross-entropy gradient, per layer."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must be in [0, 1]")
    if len(grad_elbo) != len(grad_ce):
        raise ValueError("gradient lists differ in length")
    mixed = []
    for (dw_a, db_a), (dw_b, db_b) in zip(grad_elbo, grad_ce):
        if dw_a.shape != dw_b.shape or db_a.shape != db_b.shape:
            raise ValueError("gradient shapes do not match")
        mixed.append(((1.0 - rho) * dw_a + rho * dw_b,
                      (1.0 - rho) * db_a + rho * db_b))
    return mixed


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    base_lr: float = 0.01
    tau_schedule: DecaySchedule = field(default_factory=DecaySchedule)
    rho_schedule: DecaySchedule = field(default_factory=DecaySchedule)
    batch_size: int = 50
    n_samples: int = 1


def lr_at(state):
    """Base rate divided by 10 every 30 epochs."""
    return state.base_lr * 10.0 ** (-(state.epoch // 30))


def sgd_step(model, grads, lr):
    """theta <- theta - lr * grad, elementwise, aborting on non-finite gradients."""
    if lr <= 0:
        raise ValueError("lr must be > 0")
    for group in GROUPS:
        for layer, (dw, db) in zip(model.group_layers(group), grads[group]):
            if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
                raise FloatingPointError("non-finite gradient in group %r" % group)
            layer.weights -= lr * dw
            layer.bias -= lr * db


@dataclass
class TrainingConfig:
    lam: float = 0.3
    d_quality: int = 4
    n_samples: int = 1
    batch_size: int = 50
    epochs: int = 90
    base_lr: float = 0.01
    tau_scale: float = 3e-5
    tau_floor: float = 0.5
    rho_scale: float = 3e-5
    rho_floor: float = 0.5
    seed: int = 0
    hidden_backbone: tuple = (64, 64)
    hidden_quality: int = 32
    hidden_latent: int = 32
    hidden_decoder: int = 32

    def dims(self, n_features, n_classes):
        return ModelDims(
            n_features=n_features,
            n_classes=n_classes,
            d_quality=self.d_quality,
            hidden_backbone=tuple(self.hidden_backbone),
            hidden_quality=self.hidden_quality,
            hidden_latent=self.hidden_latent,
            hidden_decoder=self.hidden_decoder,
        )

    def to_dict(self):
        d = self.__dict__.copy()
        d["hidden_backbone"] = list(self.hidden_backbone)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hidden_backbone"] = tuple(d["hidden_backbone"])
        return cls(**d)


LOG_FIELDS = ["step", "epoch", "recon", "kl_z", "kl_s", "total", "aux_ce",
              "tau", "rho", "lr"]


def _batches(n, batch_size, src):
    order = src.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train(dataset, config):
    """Train the full model; returns (model, loss log rows)."""
    x = dataset.features
    y = dataset.noisy_labels.astype(np.float64)
    if x.shape[0] == 0:
        raise ValueError("dataset is empty")
    src = RandomSource(config.seed)
    model = Model(config.dims(x.shape[1], y.shape[1]), src)
    state = TrainState(
        base_lr=config.base_lr,
        tau_schedule=DecaySchedule(config.tau_scale, config.tau_floor),
        rho_schedule=DecaySchedule(config.rho_scale, config.rho_floor),
        batch_size=config.batch_size,
        n_samples=config.n_samples,
    )
    log = []
    for epoch in range(config.epochs):
        state.epoch = epoch
        lr = lr_at(state)
        for idx in _batches(x.shape[0], config.batch_size, src):
            tau = state.tau_schedule.value(state.step)
            rho = state.rho_schedule.value(state.step)
            record = model_forward(model, x[idx], y[idx], tau, src)
            loss = total_loss(record, y[idx], config.lam)
            grads = backward_full(model, record, y[idx], config.lam)
            ce = classifier_ce_grads(model, record, y[idx])
            grads["classifier"] = anneal_mix(grads["classifier"], ce, rho)
            sgd_step(model, grads, lr)
            state.step += 1
            log.append({
                "step": state.step, "epoch": epoch,
                "recon": loss.recon, "kl_z": loss.kl_z, "kl_s": loss.kl_s,
                "total": loss.total, "aux_ce": loss.aux_ce,
                "tau": tau, "rho": rho, "lr": lr,
            })
    return model, log


def train_baseline(dataset, config):
    """Plain classifier trained with cross-entropy on the noisy labels."""
    x = dataset.features
    y = dataset.noisy_labels.astype(np.float64)
    if x.shape[0] == 0:
        raise ValueError("dataset is empty")
    src = RandomSource(config.seed)
    from .network import MLP

    sizes = [x.shape[1]] + list(config.hidden_backbone) + [y.shape[1]]
    net = MLP(sizes, src)
    state = TrainState(base_lr=config.base_lr, batch_size=config.batch_size)
    log = []
    for epoch in range(config.epochs):
        state.epoch = epoch
        lr = lr_at(state)
        for idx in _batches(x.shape[0], config.batch_size, src):
            yb = y[idx]
            p = net.forward(x[idx])
            ce = float(objective.aux_cross_entropy(p, yb))
            pc, p_in = _clamped(p)
            d_p = -(yb / pc - (1.0 - yb) / (1.0 - pc)) * p_in
            _, grads = net.backward(d_p)
            for layer, (dw, db) in zip(net.layers, grads):
                if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
                    raise FloatingPointError("non-finite gradient in baseline")
                layer.weights -= lr * dw
                layer.bias -= lr * db
            state.step += 1
            log.append({
                "step": state.step, "epoch": epoch,
                "recon": 0.0, "kl_z": 0.0, "kl_s": 0.0,
                "total": ce, "aux_ce": ce,
                "tau": 0.0, "rho": 0.0, "lr": lr,
            })
    return net, log


SMALL_CHECK_DIMS = ModelDims(
    n_features=3, n_classes=3, d_quality=2,
    hidden_backbone=(5,), hidden_quality=4, hidden_latent=4, hidden_decoder=4,
)


def gradient_check(dims=None, tol=1e-4, seed=7, lam=0.3, tau=0.7, batch=4, h=1e-5):
    """Compare analytic gradients with central finite differences, frozen noise.

    Returns a report mapping each parameter group to its max relative error,
    plus an overall pass flag.
    """
    dims = dims or SMALL_CHECK_DIMS
    src = RandomSource(seed)
    model = Model(dims, src)
    x = src.gaussian((batch, dims.n_features))
    y = (src.uniform01((batch, dims.n_classes)) > 0.5).astype(np.float64)
    y[:, 0] = 1.0  # at least one positive per row
    from .network import draw_noise

    noise = draw_noise(src, batch, dims.n_classes, dims.d_quality)

    def loss_value():
        record = model_forward(model, x, y, tau, noise=noise)
        return total_loss(record, y, lam).total

    record = model_forward(model, x, y, tau, noise=noise)
    analytic = backward_full(model, record, y, lam)

    report = {}
    for group in GROUPS:
        max_err = 0.0
        for layer, (dw, db) in zip(model.group_layers(group), analytic[group]):
            for arr, grad in ((layer.weights, dw), (layer.bias, db)):
                flat = arr.ravel()
                gflat = grad.ravel()
                for j in range(flat.size):
                    orig = flat[j]
                    flat[j] = orig + h
                    up = loss_value()
                    flat[j] = orig - h
                    down = loss_value()
                    flat[j] = orig
                    fd = (up - down) / (2.0 * h)
                    # the floor keeps finite-difference roundoff on near-zero
                    # gradients from reading as a huge relative error
                    denom = max(abs(fd), abs(gflat[j]), 1e-4)
                    max_err = max(max_err, abs(fd - gflat[j]) / denom)
        report[group] = max_err
    report["pass"] = all(report[g] < tol for g in GROUPS)
    report["tol"] = tol
    return report
