"""Small dense-network engine in float64.

Parameters live in one flat vector. Layout is layer-major; inside a layer
the weight matrix comes first (row-major, shape ``out x in``) followed by
the bias vector when the layer has one. Every Jacobian column index in
this package refers to that layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's precondition."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...] = ()
    output_dim: int = 1
    activation: str = "tanh"
    # None resolves to "biased iff there is a hidden layer"
    bias: bool | None = None

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.bias is None:
            object.__setattr__(self, "bias", bool(self.hidden))
        dims = (self.input_dim, *self.hidden, self.output_dim)
        if any(int(n) < 1 for n in dims):
            raise InvalidInputError(f"all layer sizes must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(
                f"activation must be one of {ACTIVATIONS}, got {self.activation!r}"
            )

    @cached_property
    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) for every affine layer, input to output."""
        sizes = (self.input_dim, *self.hidden, self.output_dim)
        return list(zip(sizes[:-1], sizes[1:]))

    @property
    def is_linear(self) -> bool:
        return not self.hidden and not self.bias

    @cached_property
    def n_params(self) -> int:
        total = 0
        for fan_in, fan_out in self.layer_dims:
            total += fan_out * fan_in + (fan_out if self.bias else 0)
        return total

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "activation": self.activation,
            "bias": self.bias,
        }


@dataclass(frozen=True, eq=False)
class NetworkParams:
    spec: MlpSpec
    theta: np.ndarray = field(repr=False)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if theta.size != self.spec.n_params:
            raise InvalidInputError(
                f"theta has {theta.size} entries, spec needs {self.spec.n_params}"
            )
        if not np.all(np.isfinite(theta)):
            raise InvalidInputError("theta contains non-finite entries")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @cached_property
    def _layers(self):
        return self._split()

    def layers(self) -> list[tuple[np.ndarray, np.ndarray | None]]:
        return self._layers

    def _split(self):
        """Read-only (W, b) views into theta, one pair per layer."""
        out = []
        pos = 0
        for fan_in, fan_out in self.spec.layer_dims:
            W = self.theta[pos:pos + fan_out * fan_in].reshape(fan_out, fan_in)
            pos += fan_out * fan_in
            b = None
            if self.spec.bias:
                b = self.theta[pos:pos + fan_out]
                pos += fan_out
            out.append((W, b))
        return out

    def with_theta(self, theta) -> "NetworkParams":
        return NetworkParams(self.spec, theta)


def init_params(spec: MlpSpec, rng: np.random.Generator, scheme: str = "uniform") -> NetworkParams:
    """Build parameters for ``spec``.

    ``uniform`` draws every layer from U(-1/sqrt(fan_in), 1/sqrt(fan_in));
    ``zero_head`` does the same but zeroes the output layer, which makes the
    initial softmax policy exactly uniform; ``zero`` zeroes everything.
    """
    if scheme not in ("uniform", "zero_head", "zero"):
        raise InvalidInputError(f"unknown init scheme {scheme!r}")
    chunks = []
    n_layers = len(spec.layer_dims)
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims):
        bound = 1.0 / np.sqrt(fan_in)
        n = fan_out * fan_in + (fan_out if spec.bias else 0)
        w = rng.uniform(-bound, bound, size=n)
        if scheme == "zero" or (scheme == "zero_head" and i == n_layers - 1):
            w = np.zeros(n)
        chunks.append(w)
    return NetworkParams(spec, np.concatenate(chunks))


def _act(name, x):
    if name == "tanh":
        return np.tanh(x)
    if name == "relu":
        return np.maximum(x, 0.0)
    return x


def _act_deriv(name, pre, post):
    if name == "tanh":
        return 1.0 - post * post
    if name == "relu":
        return (pre > 0).astype(np.float64)
    return np.ones_like(pre)


def _check_states(params: NetworkParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (params.spec.input_dim,) or x.ndim > 2:
        raise InvalidInputError(
            f"state has shape {x.shape}, expected (..., {params.spec.input_dim})"
        )
    return x


def _forward_trace(params, X):
    """Forward pass over rows of X, keeping every layer's pre/post activations."""
    layers = params.layers()
    act = params.spec.activation
    pres, posts = [], [X]
    h = X
    for i, (W, b) in enumerate(layers):
        pre = h @ W.T
        if b is not None:
            pre = pre + b
        if i == len(layers) - 1:
            h = pre
        else:
            h = _act(act, pre)
        pres.append(pre)
        posts.append(h)
    return pres, posts


def forward(params: NetworkParams, s) -> np.ndarray:
    """Network outputs for one state (1-D) or a batch of states (2-D)."""
    x = _check_states(params, s)
    X = np.atleast_2d(x)
    if params.spec.is_linear:
        W = params.layers()[0][0]
        out = X @ W.T
    else:
        out = _forward_trace(params, X)[1][-1]
    return out[0] if x.ndim == 1 else out


def trace(params: NetworkParams, X):
    """Per-layer (pre-activations, post-activations) for a batch of states.

    ``posts[-1]`` is the output matrix; pass the pair back into
    :func:`backward` to skip a second forward pass.
    """
    X = np.atleast_2d(_check_states(params, X))
    return _forward_trace(params, X)


def backward(params: NetworkParams, X, dZ, cached=None) -> np.ndarray:
    """Sum over rows n of dZ[n] @ dZ(X[n])/dtheta, as one M-vector.

    This is the vector-Jacobian product the training loop uses; it never
    materialises the K x M Jacobian.
    """
    X = np.atleast_2d(_check_states(params, X))
    dZ = np.atleast_2d(np.asarray(dZ, dtype=np.float64))
    if dZ.shape != (X.shape[0], params.spec.output_dim):
        raise InvalidInputError(
            f"upstream gradient has shape {dZ.shape}, expected "
            f"({X.shape[0]}, {params.spec.output_dim})"
        )
    layers = params.layers()
    pres, posts = cached if cached is not None else _forward_trace(params, X)
    act = params.spec.activation
    flat = []
    delta = dZ
    for i in range(len(layers) - 1, -1, -1):
        W, b = layers[i]
        if b is not None:
            flat.append(delta.sum(axis=0))
        flat.append((delta.T @ posts[i]).ravel())
        if i > 0:
            delta = (delta @ W) * _act_deriv(act, pres[i - 1], posts[i])
    return np.concatenate(flat[::-1])


def output_jacobian(params: NetworkParams, s) -> np.ndarray:
    """K x M matrix whose row k is d z_k(s) / d theta."""
    x = _check_states(params, s)
    if x.ndim != 1:
        raise InvalidInputError("output_jacobian takes a single state")
    spec = params.spec
    layers = params.layers()
    pres, posts = _forward_trace(params, x[None, :])
    K = spec.output_dim
    # G holds dZ/d(pre-activation of the current layer), shape K x fan_out
    G = np.eye(K)
    blocks = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        W, b = layers[i]
        h_in = posts[i][0]
        gW = (G[:, :, None] * h_in[None, None, :]).reshape(K, -1)
        blocks[i] = np.hstack([gW, G]) if b is not None else gW
        if i > 0:
            G = (G @ W) * _act_deriv(spec.activation, pres[i - 1][0], posts[i][0])
    return np.hstack(blocks)


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax input contains non-finite entries")
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_action(a, K):
    if not (0 <= int(a) < K) or int(a) != a:
        raise InvalidInputError(f"action {a} outside 0..{K - 1}")
    return int(a)


def softmax_coefficients(pi, a) -> np.ndarray:
    """The row [1(a=k) - pi(k)]_k shared by every policy-gradient formula."""
    coef = -np.asarray(pi, dtype=np.float64).copy()
    coef[a] += 1.0
    return coef


def policy_gradient(params: NetworkParams, s, a) -> np.ndarray:
    """d pi(a|s) / d theta for a softmax policy over all network outputs."""
    a = _check_action(a, params.spec.output_dim)
    pi = softmax(forward(params, s))
    return pi[a] * softmax_coefficients(pi, a) @ output_jacobian(params, s)


def sgd_step(params: NetworkParams, grad, lr: float) -> NetworkParams:
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    if grad.shape != params.theta.shape:
        raise InvalidInputError(
            f"gradient length {grad.size} != parameter count {params.theta.size}"
        )
    if not np.all(np.isfinite(grad)):
        raise InvalidInputError("gradient contains non-finite entries")
    if not lr > 0:
        raise InvalidInputError(f"learning rate must be positive, got {lr}")
    return params.with_theta(params.theta - lr * grad)


def finite_difference_gradient(fn, theta, h: float = 1e-5) -> np.ndarray:
    """Central differences of an arbitrary function of the flat parameters.

    ``fn`` may return a scalar or an array; the result has the shape of
    ``fn``'s output followed by one axis over the parameters.
    """
    if not h > 0:
        raise InvalidInputError(f"step must be positive, got {h}")
    theta = np.asarray(theta, dtype=np.float64)
    cols = []
    for i in range(theta.size):
        tp = theta.copy()
        tm = theta.copy()
        tp[i] += h
        tm[i] -= h
        cols.append((np.asarray(fn(tp)) - np.asarray(fn(tm))) / (2 * h))
    return np.stack(cols, axis=-1)


def finite_difference_jacobian(params: NetworkParams, s, h: float = 1e-5) -> np.ndarray:
    """Oracle for :func:`output_jacobian`; used by tests and the verifier only."""
    _check_states(params, s)
    return finite_difference_gradient(
        lambda t: forward(params.with_theta(t), s), params.theta, h
    )


def relative_error(approx, exact) -> float:
    """||approx - exact|| / max(||approx||, ||exact||); 0 when both vanish."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    scale = max(np.linalg.norm(approx), np.linalg.norm(exact))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(approx - exact) / scale)
