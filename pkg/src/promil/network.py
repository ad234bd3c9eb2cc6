"""Instance classification network: a small MLP with a logistic output.

Forward passes score each instance of a bag independently; the cached trace
makes the reverse pass cheap.  Everything is plain numpy in float64.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

_TINY = np.nextafter(0.0, 1.0)
_ALMOST_ONE = np.nextafter(1.0, 0.0)

ACTIVATIONS = ("relu", "tanh")

# Init gain: weights ~ U(-g/sqrt(fan_in), +g/sqrt(fan_in)).  Small enough
# that all instance scores start near 0.5, so the first epochs establish the
# class orientation from the bag labels instead of amplifying whatever
# orientation the random draw happened to encode.
INIT_GAIN = 0.1


@dataclass(frozen=True)
class NetArch:
    input_dim: int
    hidden_dims: tuple = ()
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def layer_dims(self):
        return (self.input_dim, *self.hidden_dims, 1)


@dataclass
class NetParams:
    """Per-layer weight matrices (fan_in, fan_out) and bias vectors."""

    arch: NetArch
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def copy(self):
        return NetParams(
            arch=self.arch,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


@dataclass
class NetParamGrads:
    weights: list
    biases: list


@dataclass
class BagForwardTrace:
    """Cached activations from forward_bag, consumed by backward_bag."""

    layer_inputs: list   # input to each layer, (bag_size, fan_in)
    preacts: list        # pre-activation of each layer, (bag_size, fan_out)
    predictions: np.ndarray

    def __len__(self):
        return self.predictions.size


def init_params(arch, seed):
    """Uniform(-s, s) weights with s = INIT_GAIN/sqrt(fan_in); zero biases."""
    rng = np.random.default_rng(seed)
    dims = arch.layer_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        s = INIT_GAIN / np.sqrt(fan_in)
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetParams(arch=arch, weights=weights, biases=biases)


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(z, kind):
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def forward_bag(params, instances):
    """Score every instance; returns (predictions, trace).

    ``instances`` is (bag_size, input_dim).  Predictions are clipped into
    the open interval (0, 1): the logistic saturates to exact 0.0/1.0 in
    float64 for |logit| > ~37.
    """
    x = np.asarray(instances, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("bag must be a nonempty (bag_size, input_dim) array")
    if x.shape[1] != params.arch.input_dim:
        raise ValueError(
            f"instance dimension {x.shape[1]} does not match input_dim {params.arch.input_dim}"
        )
    act = params.arch.activation
    layer_inputs, preacts = [], []
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        layer_inputs.append(a)
        z = a @ w + b
        preacts.append(z)
        a = _activate(z, act) if i < last else z
    c = np.clip(expit(a[:, 0]), _TINY, _ALMOST_ONE)
    return c, BagForwardTrace(layer_inputs=layer_inputs, preacts=preacts, predictions=c)


def forward_instance(params, x):
    """Score a single feature vector; returns a float in (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("x must be a 1-D feature vector")
    c, _ = forward_bag(params, x[None, :])
    return float(c[0])


def backward_bag(params, trace, upstream):
    """Parameter gradients of sum_i upstream[i] * c_i, upstream held constant.

    ``upstream[i]`` is d cost / d prediction_i.  Gradients are summed over
    the bag and mirror the NetParams structure.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != trace.predictions.shape:
        raise ValueError(
            f"upstream length {upstream.shape} does not match bag size "
            f"{trace.predictions.shape}"
        )
    if len(trace.layer_inputs) != len(params.weights):
        raise ValueError("trace does not match params layer count")
    act = params.arch.activation
    c = trace.predictions
    dz = (upstream * c * (1.0 - c))[:, None]
    grad_w = [None] * len(params.weights)
    grad_b = [None] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        grad_w[i] = trace.layer_inputs[i].T @ dz
        grad_b[i] = dz.sum(axis=0)
        if i > 0:
            da = dz @ params.weights[i].T
            dz = da * _activate_grad(trace.preacts[i - 1], act)
    return NetParamGrads(weights=grad_w, biases=grad_b)
