"""Dense numeric core: affine layers, small MLPs with exact manual
backprop, softmax cross-entropy, and Adam with decoupled weight decay.

All arithmetic is float64 and every source of randomness flows through an
explicit seeded generator, so identical seeds give identical runs.
"""

import math

import numpy as np

from .errors import ConfigError, DimensionError

PROB_FLOOR = 1e-12


def make_rng(seed):
    """PCG64 generator from an int seed, SeedSequence, or Generator."""
    return np.random.default_rng(seed)


def glorot_uniform(fan_in, fan_out, rng):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Layer:
    """One affine layer: weight (fan_in, fan_out) and bias (fan_out,),
    plus gradient accumulators and Adam moment buffers of the same shape."""

    def __init__(self, weight, bias):
        weight = np.array(weight, dtype=np.float64)
        bias = np.array(bias, dtype=np.float64)
        if weight.ndim != 2:
            raise DimensionError("layer weight must be 2-D")
        if bias.shape != (weight.shape[1],):
            raise DimensionError(
                f"bias shape {bias.shape} does not match weight {weight.shape}"
            )
        self.weight = weight
        self.bias = bias
        self.grad_weight = np.zeros_like(weight)
        self.grad_bias = np.zeros_like(bias)
        self.m_weight = np.zeros_like(weight)
        self.v_weight = np.zeros_like(weight)
        self.m_bias = np.zeros_like(bias)
        self.v_bias = np.zeros_like(bias)

    @classmethod
    def init(cls, fan_in, fan_out, rng):
        return cls(glorot_uniform(fan_in, fan_out, rng), np.zeros(fan_out))

    @property
    def fan_in(self):
        return self.weight.shape[0]

    @property
    def fan_out(self):
        return self.weight.shape[1]

    def zero_grad(self):
        self.grad_weight[:] = 0.0
        self.grad_bias[:] = 0.0


class ParamSet:
    """Named, ordered collection of layers with bit-exact flatten/unflatten.

    Flattening order is the insertion order of layers, weight entries
    (row-major) before bias entries for each layer.
    """

    def __init__(self):
        self._layers = {}

    def add(self, name, layer):
        if name in self._layers:
            raise ConfigError(f"duplicate layer name {name!r}")
        self._layers[name] = layer
        return layer

    def layer(self, name):
        return self._layers[name]

    def items(self):
        return self._layers.items()

    def __iter__(self):
        return iter(self._layers.values())

    def __len__(self):
        return len(self._layers)

    @property
    def n_params(self):
        return sum(l.weight.size + l.bias.size for l in self)

    def zero_grads(self):
        for layer in self:
            layer.zero_grad()

    def _flatten(self, pick_w, pick_b):
        parts = []
        for layer in self:
            parts.append(pick_w(layer).ravel())
            parts.append(pick_b(layer))
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)

    def flatten_params(self):
        return self._flatten(lambda l: l.weight, lambda l: l.bias)

    def flatten_grads(self):
        return self._flatten(lambda l: l.grad_weight, lambda l: l.grad_bias)

    def _unflatten_into(self, vec, pick_w, pick_b):
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise DimensionError(
                f"flat vector has length {vec.shape}, expected ({self.n_params},)"
            )
        offset = 0
        for layer in self:
            w = pick_w(layer)
            w[:] = vec[offset:offset + w.size].reshape(w.shape)
            offset += w.size
            b = pick_b(layer)
            b[:] = vec[offset:offset + b.size]
            offset += b.size

    def set_flat_params(self, vec):
        self._unflatten_into(vec, lambda l: l.weight, lambda l: l.bias)

    def set_flat_grads(self, vec):
        self._unflatten_into(vec, lambda l: l.grad_weight, lambda l: l.grad_bias)


def linear_forward(x, layer):
    """x @ W + b with the bias broadcast per row."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.fan_in:
        raise DimensionError(
            f"input shape {x.shape} incompatible with layer of fan-in {layer.fan_in}"
        )
    return x @ layer.weight + layer.bias


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(x, upstream):
    """Masks upstream where x <= 0 (subgradient at 0 is 0)."""
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if x.shape != upstream.shape:
        raise DimensionError(f"shapes {x.shape} and {upstream.shape} differ")
    return np.where(x > 0.0, upstream, 0.0)


def softmax(z):
    """Row-wise softmax with max-subtraction for stability."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] < 2:
        raise DimensionError("softmax expects an n x C matrix with C >= 2")
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _check_labels(labels, num_classes):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise DimensionError("labels must be a 1-D array of class indices")
    if labels.size == 0:
        raise DimensionError("empty batch")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise IndexError(f"label out of range [0, {num_classes})")
    return labels.astype(np.int64)


def cross_entropy(probs, labels):
    """Mean over the batch of -log p[label], with p clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = _check_labels(labels, probs.shape[1])
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def ce_logit_grad(pred_probs, labels):
    """Gradient of the batch-mean cross-entropy w.r.t. the logits:
    (softmax - one_hot) / n."""
    pred_probs = np.asarray(pred_probs, dtype=np.float64)
    labels = _check_labels(labels, pred_probs.shape[1])
    n = pred_probs.shape[0]
    grad = pred_probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return grad / n


class Mlp:
    """Stack of affine layers with ReLU between them (none after the last).

    dims = [in, h1, ..., out]; a two-entry list is a bare affine map.
    rng=None builds zero-initialized layers (used when loading checkpoints).
    """

    def __init__(self, dims, rng=None):
        if len(dims) < 2 or any(int(d) < 1 for d in dims):
            raise ConfigError(f"bad layer dims {dims!r}")
        self.dims = [int(d) for d in dims]
        self.params = ParamSet()
        for i in range(len(self.dims) - 1):
            fan_in, fan_out = self.dims[i], self.dims[i + 1]
            if rng is None:
                layer = Layer(np.zeros((fan_in, fan_out)), np.zeros(fan_out))
            else:
                layer = Layer.init(fan_in, fan_out, rng)
            self.params.add(f"fc{i}", layer)

    @property
    def in_dim(self):
        return self.dims[0]

    @property
    def out_dim(self):
        return self.dims[-1]

    def forward(self, x):
        """Returns (output, cache); the cache feeds backward()."""
        a = np.asarray(x, dtype=np.float64)
        layers = list(self.params)
        cache = []
        for i, layer in enumerate(layers):
            z = linear_forward(a, layer)
            cache.append((a, z))
            a = relu_forward(z) if i < len(layers) - 1 else z
        return a, cache

    def predict(self, x):
        return self.forward(x)[0]

    def backward(self, cache, upstream):
        """Accumulates parameter gradients; returns the gradient w.r.t.
        the forward input."""
        layers = list(self.params)
        g = np.asarray(upstream, dtype=np.float64)
        for i in reversed(range(len(layers))):
            a_in, _ = cache[i]
            layer = layers[i]
            layer.grad_weight += a_in.T @ g
            layer.grad_bias += g.sum(axis=0)
            g = g @ layer.weight.T
            if i > 0:
                g = relu_backward(cache[i - 1][1], g)
        return g


def adam_step(params, lr, beta1=0.9, beta2=0.999, weight_decay=0.0,
              eps=1e-8, t=1):
    """One Adam update from the accumulated gradients.

    Decoupled weight decay shrinks parameters by lr*weight_decay before the
    bias-corrected Adam delta is applied.
    """
    if t < 1:
        raise ConfigError("adam step counter starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for layer in params:
        pairs = (
            (layer.weight, layer.grad_weight, layer.m_weight, layer.v_weight),
            (layer.bias, layer.grad_bias, layer.m_bias, layer.v_bias),
        )
        for w, g, m, v in pairs:
            if weight_decay:
                w -= lr * weight_decay * w
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            w -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
