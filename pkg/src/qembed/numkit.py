"""Dense matrix kernels: affine layers with cached manual backward, activations, seeded RNG.

Everything runs in float64; the gradient-check tolerances elsewhere assume it.
"""

import numpy as np


def as_matrix(a, name="matrix"):
    """Coerce to a finite 2-D float64 array or raise."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("%s must be 2-D, got ndim=%d" % (name, a.ndim))
    if not np.all(np.isfinite(a)):
        raise ValueError("%s contains non-finite entries" % name)
    return a


class RandomSource:
    """Seeded draw source. Identical seeds give identical sequences across runs."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform01(self, shape):
        u = self._gen.random(shape)
        # keep draws strictly inside (0, 1)
        return np.clip(u, 1e-16, 1.0 - 1e-16)

    def gaussian(self, shape):
        return self._gen.standard_normal(shape)

    def gumbel(self, shape):
        u = np.clip(self._gen.random(shape), 1e-12, 1.0 - 1e-12)
        return -np.log(-np.log(u))

    def permutation(self, n):
        return self._gen.permutation(n)

    def uniform_range(self, low, high, shape):
        return self._gen.uniform(low, high, shape)


def rng_draw(src, kind, n):
    """Draw n values of the named kind from a RandomSource."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if kind == "uniform01":
        return src.uniform01(n)
    if kind == "gaussian":
        return src.gaussian(n)
    if kind == "gumbel":
        return src.gumbel(n)
    raise ValueError("unknown draw kind: %r" % (kind,))


def sigmoid(x):
    """Numerically stable elementwise logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    return np.maximum(0.0, x)


def softmax2(x):
    """Softmax over adjacent column pairs; x must have an even column count."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] % 2 != 0:
        raise ValueError("softmax2 needs an even number of columns")
    shp = x.shape
    pairs = x.reshape(-1, 2)
    m = pairs.max(axis=1, keepdims=True)
    e = np.exp(pairs - m)
    out = e / e.sum(axis=1, keepdims=True)
    return out.reshape(shp)


def activation(kind, x, mode="forward", grad_out=None):
    """Elementwise activation dispatch.

    mode="forward" applies the function; mode="backward" returns
    grad_out times the local derivative evaluated at input x.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("activation input contains non-finite entries")
    if mode == "forward":
        if kind == "relu":
            return relu(x)
        if kind == "sigmoid":
            return sigmoid(x)
        if kind == "softmax2":
            return softmax2(x)
        raise ValueError("unknown activation: %r" % (kind,))
    if mode != "backward":
        raise ValueError("mode must be forward or backward")
    if grad_out is None:
        raise ValueError("backward mode needs grad_out")
    g = np.asarray(grad_out, dtype=np.float64)
    if kind == "relu":
        return g * (x > 0)
    if kind == "sigmoid":
        s = sigmoid(x)
        return g * s * (1.0 - s)
    if kind == "softmax2":
        s = softmax2(x).reshape(-1, 2)
        gp = g.reshape(-1, 2)
        dot = (gp * s).sum(axis=1, keepdims=True)
        return (s * (gp - dot)).reshape(x.shape)
    raise ValueError("unknown activation: %r" % (kind,))


class AffineLayer:
    """out = W @ x + b per row, with the input cached for the backward pass."""

    def __init__(self, weights, bias):
        self.weights = as_matrix(weights, "weights")
        self.bias = np.asarray(bias, dtype=np.float64).ravel()
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ValueError(
                "bias length %d != weight rows %d"
                % (self.bias.shape[0], self.weights.shape[0])
            )
        self.cached_input = None

    @classmethod
    def init(cls, n_in, n_out, src):
        # uniform +-sqrt(6/(fan_in+fan_out)), zero bias
        bound = np.sqrt(6.0 / (n_in + n_out))
        w = src.uniform_range(-bound, bound, (n_out, n_in))
        return cls(w, np.zeros(n_out))

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]

    def apply(self, x):
        """Affine map without touching the cache (for shared/multi-use layers)."""
        x = as_matrix(x, "input")
        if x.shape[1] != self.n_in:
            raise ValueError(
                "input has %d cols, layer expects %d" % (x.shape[1], self.n_in)
            )
        return x @ self.weights.T + self.bias

    def forward(self, x):
        out = self.apply(x)
        self.cached_input = np.asarray(x, dtype=np.float64)
        return out

    def backward(self, grad_out):
        if self.cached_input is None:
            raise RuntimeError("backward called before forward")
        g = as_matrix(grad_out, "grad_out")
        if g.shape != (self.cached_input.shape[0], self.n_out):
            raise ValueError(
                "grad_out shape %s does not match output shape (%d, %d)"
                % (g.shape, self.cached_input.shape[0], self.n_out)
            )
        grad_in = g @ self.weights
        grad_w = g.T @ self.cached_input
        grad_b = g.sum(axis=0)
        return grad_in, grad_w, grad_b

    def grads_for(self, x, grad_out):
        """Backward against an explicit input (shared-layer use); no cache needed."""
        g = np.asarray(grad_out, dtype=np.float64)
        return g @ self.weights, g.T @ x, g.sum(axis=0)


def affine_forward(layer, x):
    return layer.forward(x)


def affine_backward(layer, grad_out):
    return layer.backward(grad_out)
