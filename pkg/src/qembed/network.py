"""Model components: backbone/classifier MLPs, contrastive and additive heads, decoder.

All components cache their forward intermediates so a caller can run a manual
backward pass; backward never mutates the caches, so it may be called more
than once per forward (the trainer reuses the classifier caches for the
auxiliary cross-entropy gradient).
"""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .numkit import AffineLayer, as_matrix, relu, sigmoid
from .samplers import GaussNoise, GumbelPair, gaussian_reparam, gumbel_softmax_binary


class MLP:
    """Affine layers with ReLU between and a sigmoid head."""

    def __init__(self, sizes, src):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layers = [
            AffineLayer.init(sizes[i], sizes[i + 1], src) for i in range(len(sizes) - 1)
        ]
        self._pre = None  # pre-activations per layer
        self._out = None

    def forward(self, x):
        x = as_matrix(x, "input")
        self._pre = []
        h = x
        for i, layer in enumerate(self.layers):
            a = layer.forward(h)
            self._pre.append(a)
            h = relu(a) if i < len(self.layers) - 1 else sigmoid(a)
        self._out = h
        return h

    def backward(self, grad_out):
        """Return (grad wrt input, [(dW, db) per layer])."""
        if self._pre is None:
            raise RuntimeError("backward called before forward")
        g = np.asarray(grad_out, dtype=np.float64)
        g = g * self._out * (1.0 - self._out)  # sigmoid head
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            g, dw, db = self.layers[i].backward(g)
            grads[i] = (dw, db)
            if i > 0:
                g = g * (self._pre[i - 1] > 0)
        return g, grads


class ContrastiveHead:
    """Shared embedding of the two label views; their difference maps to (mu, logvar)."""

    def __init__(self, k, hidden, d, src):
        self.d = d
        self.fs = AffineLayer.init(k, hidden, src)
        self.ft = AffineLayer.init(hidden, 2 * d, src)
        self._cache = None

    @property
    def layers(self):
        return [self.fs, self.ft]

    def forward(self, y, yhat):
        y = as_matrix(y, "y")
        yhat = as_matrix(yhat, "yhat")
        if y.shape != yhat.shape:
            raise ValueError("y shape %s != yhat shape %s" % (y.shape, yhat.shape))
        a_y = self.fs.apply(y)
        a_h = self.fs.apply(yhat)
        diff = relu(a_y) - relu(a_h)
        t = self.ft.apply(diff)
        self._cache = (y, yhat, a_y, a_h, diff)
        return t[:, : self.d], t[:, self.d :]

    def backward(self, d_mu, d_logvar):
        """Return (grad wrt yhat, [(dW, db) for fs, ft]). The y input carries no gradient."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        y, yhat, a_y, a_h, diff = self._cache
        dt = np.concatenate([d_mu, d_logvar], axis=1)
        d_diff, dw_ft, db_ft = self.ft.grads_for(diff, dt)
        da_y = d_diff * (a_y > 0)
        da_h = -d_diff * (a_h > 0)
        dw_fs = da_y.T @ y + da_h.T @ yhat
        db_fs = da_y.sum(axis=0) + da_h.sum(axis=0)
        d_yhat = da_h @ self.fs.weights
        return d_yhat, [(dw_fs, db_fs), (dw_ft, db_ft)]


class AdditiveHead:
    """Non-shared embeddings of the two label views, summed and squashed to posteriors."""

    def __init__(self, k, hidden, src):
        self.f_ns1 = AffineLayer.init(k, hidden, src)
        self.f_ns2 = AffineLayer.init(k, hidden, src)
        self.f_t = AffineLayer.init(hidden, k, src)
        self._cache = None

    @property
    def layers(self):
        return [self.f_ns1, self.f_ns2, self.f_t]

    def forward(self, y, yhat):
        y = as_matrix(y, "y")
        yhat = as_matrix(yhat, "yhat")
        if y.shape != yhat.shape:
            raise ValueError("y shape %s != yhat shape %s" % (y.shape, yhat.shape))
        a = self.f_ns1.apply(y) + self.f_ns2.apply(yhat)
        q = sigmoid(self.f_t.apply(a))
        self._cache = (y, yhat, a, q)
        return q

    def backward(self, d_q):
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        y, yhat, a, q = self._cache
        d_pre = d_q * q * (1.0 - q)
        d_a, dw_t, db_t = self.f_t.grads_for(a, d_pre)
        dw1 = d_a.T @ y
        dw2 = d_a.T @ yhat
        db = d_a.sum(axis=0)
        d_yhat = d_a @ self.f_ns2.weights
        return d_yhat, [(dw1, db.copy()), (dw2, db.copy()), (dw_t, db_t)]


class DecoderNet:
    """Reconstructs noisy-label Bernoulli parameters from the concatenated (z, s)."""

    def __init__(self, k, d, hidden, src):
        self.k = k
        self.d = d
        self.net = MLP([k + d, hidden, hidden, k], src)

    @property
    def layers(self):
        return self.net.layers

    def forward(self, z, s):
        z = as_matrix(z, "z")
        s = as_matrix(s, "s")
        if z.shape[1] != self.k or s.shape[1] != self.d:
            raise ValueError(
                "decoder expects z cols %d and s cols %d, got %d and %d"
                % (self.k, self.d, z.shape[1], s.shape[1])
            )
        return self.net.forward(np.concatenate([z, s], axis=1))

    def backward(self, grad_out):
        d_in, grads = self.net.backward(grad_out)
        return d_in[:, : self.k], d_in[:, self.k :], grads


# parameter group names, fixed order
GROUPS = ("backbone", "additive", "contrastive", "decoder", "classifier")


@dataclass
class ModelDims:
    n_features: int
    n_classes: int
    d_quality: int = 4
    hidden_backbone: tuple = (64, 64)
    hidden_quality: int = 32
    hidden_latent: int = 32
    hidden_decoder: int = 32

    def to_dict(self):
        d = self.__dict__.copy()
        d["hidden_backbone"] = list(self.hidden_backbone)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["hidden_backbone"] = tuple(d["hidden_backbone"])
        return cls(**d)


class Model:
    """The full quality-embedding network: encoder heads, decoder and classifier."""

    def __init__(self, dims, src):
        self.dims = dims
        f, k = dims.n_features, dims.n_classes
        sizes = [f] + list(dims.hidden_backbone) + [k]
        self.backbone = MLP(sizes, src)
        self.additive = AdditiveHead(k, dims.hidden_latent, src)
        self.contrastive = ContrastiveHead(k, dims.hidden_quality, dims.d_quality, src)
        self.decoder = DecoderNet(k, dims.d_quality, dims.hidden_decoder, src)
        self.classifier = MLP(sizes, src)

    def group_layers(self, group):
        return getattr(self, group).layers if group != "backbone" else self.backbone.layers

    def parameters(self):
        """Iterate (group, layer_index, AffineLayer) over every parameter group."""
        for group in GROUPS:
            for i, layer in enumerate(self.group_layers(group)):
                yield group, i, layer


@dataclass
class ForwardRecord:
    """All intermediates of one stochastic pass, as needed by the loss and backward."""

    x: np.ndarray
    y: np.ndarray
    yhat: np.ndarray
    q_z: np.ndarray
    mu: np.ndarray
    logvar: np.ndarray
    z: np.ndarray
    s: np.ndarray
    p_y: np.ndarray
    p_z: np.ndarray
    noise: tuple  # (GumbelPair, GaussNoise)
    tau: float


def draw_noise(src, batch, k, d):
    pair = GumbelPair(src.gumbel((batch, k)), src.gumbel((batch, k)))
    return pair, GaussNoise(src.gaussian((batch, d)))


def model_forward(model, x, y, tau, src=None, noise=None):
    """One full stochastic pass with a single sample per item."""
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if noise is None:
        if src is None:
            raise ValueError("need either a RandomSource or pre-drawn noise")
        noise = draw_noise(src, x.shape[0], model.dims.n_classes, model.dims.d_quality)
    pair, gauss = noise
    yhat = model.backbone.forward(x)
    mu, logvar = model.contrastive.forward(y, yhat)
    q_z = model.additive.forward(y, yhat)
    z = gumbel_softmax_binary(q_z, pair.g0, pair.g1, tau)
    s = gaussian_reparam(mu, logvar, gauss.zeta)
    p_y = model.decoder.forward(z, s)
    p_z = model.classifier.forward(x)
    return ForwardRecord(x, y, yhat, q_z, mu, logvar, z, s, p_y, p_z, noise, tau)


def _param_entries(model):
    for group, i, layer in model.parameters():
        yield "%s.%d.W" % (group, i), layer.weights
        yield "%s.%d.b" % (group, i), layer.bias


def _write_manifest(path, arrays, extra, seed, config):
    manifest = {
        "tensors": {k: list(v.shape) for k, v in arrays.items()},
        "seed": seed,
        "config_hash": hashlib.sha256(
            json.dumps(config or {}, sort_keys=True).encode()
        ).hexdigest(),
    }
    manifest.update(extra)
    base = path[:-4] if path.endswith(".npz") else path
    with open(base + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def save_checkpoint(path, model, seed=None, config=None):
    """Write parameters as an .npz plus a JSON manifest next to it."""
    arrays = dict(_param_entries(model))
    np.savez(path, **arrays)
    _write_manifest(path, arrays, {"kind": "full", "dims": model.dims.to_dict()},
                    seed, config)


def save_mlp_checkpoint(path, net, seed=None, config=None):
    """Checkpoint a bare classifier network (the baseline trainer's output)."""
    arrays = {}
    for i, layer in enumerate(net.layers):
        arrays["classifier.%d.W" % i] = layer.weights
        arrays["classifier.%d.b" % i] = layer.bias
    np.savez(path, **arrays)
    sizes = [net.layers[0].n_in] + [l.n_out for l in net.layers]
    _write_manifest(path, arrays, {"kind": "baseline", "sizes": sizes}, seed, config)


def load_checkpoint(path):
    """Rebuild a Model or baseline MLP from a saved checkpoint."""
    base = path[:-4] if path.endswith(".npz") else path
    manifest_path = base + ".manifest.json"
    if not os.path.exists(manifest_path):
        raise FileNotFoundError("missing manifest: %s" % manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    from .numkit import RandomSource

    data = np.load(base + ".npz")
    if manifest.get("kind") == "baseline":
        net = MLP(manifest["sizes"], RandomSource(0))
        for i, layer in enumerate(net.layers):
            layer.weights[...] = data["classifier.%d.W" % i]
            layer.bias[...] = data["classifier.%d.b" % i]
        return net, manifest
    dims = ModelDims.from_dict(manifest["dims"])
    model = Model(dims, RandomSource(0))
    for group, i, layer in model.parameters():
        layer.weights[...] = data["%s.%d.W" % (group, i)]
        layer.bias[...] = data["%s.%d.b" % (group, i)]
    return model, manifest
