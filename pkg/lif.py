# -*- coding: utf-8 -*-
# License: MIT License

"""Discrete-time leaky integrate-and-fire (LIF) layers and their forward
simulation.

Membrane potential, spikes and synaptic trace follow

    U[t+1] = U[t] (1 - 1/tau_m) (1 - S[t]) + W a_in[t]
    S[t]   = H(U[t] - theta)
    a[t+1] = a[t] (1 - 1/tau_s) + S[t+1] / tau_s

with U, S and a all zero at t=0 and H(0) = 0. Arrays are laid out as
(..., n_neurons, n_steps); any leading axes are treated as a batch.
"""

from dataclasses import dataclass
import logging

import numpy as np

logger = logging.getLogger(__name__)


class DimensionError(ValueError):
    """Raised when array shapes do not line up."""


@dataclass(frozen=True)
class LifParams:
    """Neuron constants shared by every neuron of a layer.

    Attributes:
        tau_m: float
            membrane time constant in time-steps, > 1
        tau_s: float
            synaptic time constant in time-steps, > 1
        theta: float
            firing threshold, > 0
        temp: float
            surrogate sigmoid temperature, > 0
    """
    tau_m: float = 6.0
    tau_s: float = 2.0
    theta: float = 1.0
    temp: float = 0.3

    def __post_init__(self):
        if not self.tau_m > 1 or not self.tau_s > 1:
            raise ValueError('time constants must be > 1 (tau_m=%r, tau_s=%r)'
                             % (self.tau_m, self.tau_s))
        if not self.theta > 0:
            raise ValueError('theta must be > 0, got %r' % self.theta)
        if not self.temp > 0:
            raise ValueError('temp must be > 0, got %r' % self.temp)

    @property
    def decay_m(self):
        return 1.0 - 1.0 / self.tau_m

    @property
    def decay_s(self):
        return 1.0 - 1.0 / self.tau_s

    def as_dict(self):
        return {'tau_m': self.tau_m, 'tau_s': self.tau_s,
                'theta': self.theta, 'temp': self.temp}


class SpikeTrain:
    """Binary spike matrix of shape (..., n_neurons, n_steps)."""

    def __init__(self, data):
        data = np.asarray(data)
        if data.ndim < 2:
            raise DimensionError('spike train needs (n_neurons, n_steps), '
                                 'got shape %s' % (data.shape,))
        if data.shape[-1] < 1 or data.shape[-2] < 1:
            raise DimensionError('empty spike train %s' % (data.shape,))
        if not np.isin(data, (0, 1)).all():
            raise ValueError('spike train entries must be 0 or 1')
        self.data = data.astype(np.uint8)
        self.data.flags.writeable = False

    @property
    def n_neurons(self):
        return self.data.shape[-2]

    @property
    def n_steps(self):
        return self.data.shape[-1]

    @property
    def shape(self):
        return self.data.shape

    def counts(self):
        """Total number of spikes per neuron."""
        return self.data.sum(axis=-1, dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, SpikeTrain):
            return NotImplemented
        return (self.data.shape == other.data.shape and
                bool(np.array_equal(self.data, other.data)))

    def __repr__(self):
        return 'SpikeTrain(shape=%s, spikes=%d)' % (self.data.shape,
                                                    int(self.data.sum()))


def as_spike_array(spikes):
    """Float view of a SpikeTrain or raw 0/1 array."""
    if isinstance(spikes, SpikeTrain):
        spikes = spikes.data
    return np.asarray(spikes, dtype=np.float64)


@dataclass(frozen=True)
class LayerTrace:
    """Time series retained from one simulated layer.

    Attributes:
        u: ndarray
            membrane potentials U, (..., n_neurons, n_steps)
        s: SpikeTrain
            output spikes S
        a: ndarray
            filtered synaptic trace a, values in [0, 1]
    """
    u: np.ndarray
    s: SpikeTrain
    a: np.ndarray

    @property
    def n_steps(self):
        return self.u.shape[-1]


@dataclass(frozen=True)
class DenseLifLayer:
    """Fully connected LIF layer; weights has shape (n_out, n_in)."""
    weights: np.ndarray
    params: LifParams = LifParams()

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        if weights.ndim != 2:
            raise DimensionError('weights must be a matrix, got shape %s'
                                 % (weights.shape,))
        if not np.isfinite(weights).all():
            raise ValueError('weights must be finite')
        weights.flags.writeable = False
        object.__setattr__(self, 'weights', weights)

    @property
    def n_in(self):
        return self.weights.shape[1]

    @property
    def n_out(self):
        return self.weights.shape[0]


@dataclass(frozen=True)
class Network:
    """Ordered stack of dense LIF layers."""
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionError('network needs at least one layer')
        for lower, upper in zip(layers, layers[1:]):
            if lower.n_out != upper.n_in:
                raise DimensionError('layer with %d outputs feeds layer with '
                                     '%d inputs' % (lower.n_out, upper.n_in))
        object.__setattr__(self, 'layers', layers)

    @classmethod
    def dense(cls, weights, params=LifParams()):
        """Builds a network from a list of weight matrices sharing params."""
        return cls(tuple(DenseLifLayer(w, params) for w in weights))

    def with_weights(self, weights):
        """New network with the same neuron constants and new weights."""
        if len(weights) != len(self.layers):
            raise DimensionError('expected %d weight matrices, got %d'
                                 % (len(self.layers), len(weights)))
        layers = []
        for layer, w in zip(self.layers, weights):
            if np.shape(w) != layer.weights.shape:
                raise DimensionError('weight shape %s does not match layer %s'
                                     % (np.shape(w), layer.weights.shape))
            layers.append(DenseLifLayer(w, layer.params))
        return Network(tuple(layers))

    @property
    def weights(self):
        return [layer.weights for layer in self.layers]

    @property
    def n_in(self):
        return self.layers[0].n_in

    @property
    def n_out(self):
        return self.layers[-1].n_out

    @property
    def sizes(self):
        return [self.n_in] + [layer.n_out for layer in self.layers]


def heaviside(x):
    """Step function with H(0) = 0: only strictly positive input fires."""
    return np.heaviside(x, 0.0)


def lif_step(u_prev, s_prev, drive, params):
    """One membrane update; a spike at the previous step resets to zero."""
    return u_prev * params.decay_m * (1 - s_prev) + drive


def filter_step(a_prev, s_next, tau_s):
    """One step of the first-order synaptic filter."""
    return a_prev * (1.0 - 1.0 / tau_s) + (1.0 / tau_s) * s_next


def filter_spike_train(s, tau_s):
    """Causally filters every row of a spike train from a zero state.

    Args:
        s: SpikeTrain or ndarray
            spikes of shape (..., n_neurons, n_steps)
        tau_s: float
            synaptic time constant

    Returns:
        float64 array of the same shape, out[..., 0] = s[..., 0] / tau_s
    """
    s = as_spike_array(s)
    out = np.zeros_like(s)
    prev = np.zeros(s.shape[:-1])
    for t in range(s.shape[-1]):
        prev = filter_step(prev, s[..., t], tau_s)
        out[..., t] = prev
    return out


def simulate_layer(layer, a_in):
    """Runs one layer over the full horizon.

    Args:
        layer: DenseLifLayer
        a_in: ndarray
            presynaptic filtered trace, (..., n_in, n_steps)

    Returns:
        LayerTrace with U, S, a of shape (..., n_out, n_steps)
    """
    a_in = np.asarray(a_in, dtype=np.float64)
    if a_in.ndim < 2 or a_in.shape[-2] != layer.n_in:
        raise DimensionError('layer expects %d inputs, got array of shape %s'
                             % (layer.n_in, a_in.shape))
    if not np.isfinite(a_in).all():
        raise ValueError('input trace must be finite')

    params = layer.params
    n_steps = a_in.shape[-1]
    # drive[..., t] reaches the membrane at t+1
    drive = np.matmul(layer.weights, a_in)
    u = np.zeros(drive.shape)
    s = np.zeros(drive.shape)
    a = np.zeros(drive.shape)
    for t in range(n_steps - 1):
        u[..., t + 1] = lif_step(u[..., t], s[..., t], drive[..., t], params)
        s[..., t + 1] = heaviside(u[..., t + 1] - params.theta)
        a[..., t + 1] = filter_step(a[..., t], s[..., t + 1], params.tau_s)
    return LayerTrace(u=u, s=SpikeTrain(s), a=a)


def simulate_network(net, spikes_in):
    """Chains simulate_layer through the network.

    The first layer sees the input train filtered with its own tau_s; every
    later layer sees the a-trace of the layer below.

    Returns:
        list of LayerTrace, input side first
    """
    spikes = as_spike_array(spikes_in)
    if spikes.ndim < 2 or spikes.shape[-2] != net.n_in:
        raise DimensionError('network expects %d input neurons, got %s'
                             % (net.n_in, spikes.shape))
    a_in = filter_spike_train(spikes, net.layers[0].params.tau_s)
    traces = []
    for layer in net.layers:
        trace = simulate_layer(layer, a_in)
        traces.append(trace)
        a_in = trace.a
    logger.debug('simulated %d layers over %d steps', len(traces),
                 spikes.shape[-1])
    return traces
