# -*- coding: utf-8 -*-
# License: MIT License

"""Van Rossum loss and hand-derived backpropagation through time for LIF
networks.

The backward pass splits the potential gradient into a spatial part (through
the synaptic trace) and a temporal part (through the next potential). The
temporal Jacobian optionally carries the reset term

    -(1 - 1/tau_m) U[t] dH(U[t] - theta)/dU[t]

that comes from differentiating the (1 - S[t]) reset factor. Spike
derivatives are replaced by the derivative of a sigmoid with temperature T.
"""

from dataclasses import dataclass, field
import logging

import numpy as np

from lif import DimensionError, as_spike_array, filter_spike_train

logger = logging.getLogger(__name__)


class ConsistencyError(ValueError):
    """Raised when traces were not produced by the given network."""


@dataclass(frozen=True)
class GradConfig:
    """Backward-pass switches.

    Attributes:
        with_reset_term: bool
            include the reset dependency in the temporal Jacobian
        temp: float
            surrogate sigmoid temperature, > 0
    """
    with_reset_term: bool = True
    temp: float = 0.3

    def __post_init__(self):
        if not self.temp > 0:
            raise ValueError('temp must be > 0, got %r' % self.temp)

    @property
    def variant(self):
        return 'reset' if self.with_reset_term else 'no_reset'


@dataclass(frozen=True)
class LossValue:
    """Van Rossum distance; total is the sum of per_step over the last axis."""
    total: object
    per_step: np.ndarray


@dataclass
class GradientReport:
    """Weight gradients plus the output-layer gradient phases.

    phase_a is the filtered output error, phase_b the error carried back
    along the synaptic trace, phase_c the spatial-only potential gradient and
    phase_d the full potential gradient with temporal contributions.
    """
    weight_grads: list
    phase_a: np.ndarray
    phase_b: np.ndarray
    phase_c: np.ndarray
    phase_d: np.ndarray
    loss: LossValue = field(default=None)


def sigmoid_t(x, temp):
    """Sigmoid with temperature; finite for any finite x."""
    z = np.asarray(x, dtype=np.float64) / temp
    return np.exp(-np.logaddexp(0.0, -z))


def sigmoid_t_deriv(x, temp):
    """Derivative of sigmoid_t with respect to x; peak 1/(4 temp) at 0."""
    return sigmoid_t(x, temp) * sigmoid_t(-np.asarray(x, dtype=np.float64),
                                          temp) / temp


def _check_same_shape(out_filtered, target_filtered):
    out_filtered = np.asarray(out_filtered, dtype=np.float64)
    target_filtered = np.asarray(target_filtered, dtype=np.float64)
    if out_filtered.shape != target_filtered.shape:
        raise DimensionError('output %s and target %s differ in shape'
                             % (out_filtered.shape, target_filtered.shape))
    return out_filtered, target_filtered


def van_rossum_loss(out_filtered, target_filtered):
    """Half squared distance between filtered trains, summed over neurons
    (per_step) and then over every simulated step (total)."""
    out_filtered, target_filtered = _check_same_shape(out_filtered,
                                                      target_filtered)
    diff = target_filtered - out_filtered
    per_step = 0.5 * np.sum(diff * diff, axis=-2)
    return LossValue(total=per_step.sum(axis=-1), per_step=per_step)


def loss_grad_filtered(out_filtered, target_filtered):
    """dL/d(filtered output); targets are constants."""
    out_filtered, target_filtered = _check_same_shape(out_filtered,
                                                      target_filtered)
    return out_filtered - target_filtered


def temporal_jacobian(u, s, params, cfg):
    """dU[t+1]/dU[t] for the reset-by-multiplication membrane update."""
    jac = (1 - np.asarray(s, dtype=np.float64))
    if cfg.with_reset_term:
        jac = jac - u * sigmoid_t_deriv(u - params.theta, cfg.temp)
    return params.decay_m * jac


def backpropagate(net, potentials, spikes, inputs, seed, cfg):
    """Backward recurrences shared by the hard and the smoothed model.

    Args:
        net: Network
        potentials: list of ndarray
            U per layer, (..., n_out, n_steps)
        spikes: list of ndarray
            spike values per layer; hard 0/1 or soft values in (0, 1)
        inputs: list of ndarray
            the trace each layer consumed, (..., n_in, n_steps)
        seed: ndarray
            direct dL/da at the output layer
        cfg: GradConfig

    Returns:
        (weight_grads, phases, deltas): phases is the (a, b, c, d) tuple for
        the output layer, deltas the full potential gradient of every layer.
        Weight gradients are summed over leading batch axes.
    """
    n_layers = len(net.layers)
    weight_grads = [None] * n_layers
    deltas = [None] * n_layers
    phases = None
    upstream = np.asarray(seed, dtype=np.float64)

    for l in reversed(range(n_layers)):
        layer = net.layers[l]
        params = layer.params
        u = potentials[l]
        n_steps = u.shape[-1]
        surrogate = sigmoid_t_deriv(u - params.theta, cfg.temp) / params.tau_s
        jac = temporal_jacobian(u, spikes[l], params, cfg)

        delta_a = np.zeros(u.shape)
        spatial = np.zeros(u.shape)
        delta_u = np.zeros(u.shape)
        for t in reversed(range(n_steps)):
            delta_a[..., t] = upstream[..., t]
            if t + 1 < n_steps:
                delta_a[..., t] += params.decay_s * delta_a[..., t + 1]
            spatial[..., t] = delta_a[..., t] * surrogate[..., t]
            delta_u[..., t] = spatial[..., t]
            if t + 1 < n_steps:
                delta_u[..., t] += delta_u[..., t + 1] * jac[..., t]

        # U[t+1] is driven by the input trace at t
        a_in = inputs[l]
        du = delta_u[..., 1:].reshape(-1, layer.n_out, n_steps - 1)
        xin = a_in[..., :-1].reshape(-1, layer.n_in, n_steps - 1)
        weight_grads[l] = np.einsum('bit,bjt->ij', du, xin)
        deltas[l] = delta_u

        if l == n_layers - 1:
            phases = (upstream, delta_a, spatial, delta_u)

        upstream = np.zeros(a_in.shape)
        upstream[..., :-1] = np.matmul(layer.weights.T, delta_u[..., 1:])

    return weight_grads, phases, deltas


def _check_traces(net, traces, input_filtered):
    if len(traces) != len(net.layers):
        raise ConsistencyError('%d traces for a %d-layer network'
                               % (len(traces), len(net.layers)))
    if input_filtered.shape[-2] != net.n_in:
        raise ConsistencyError('input has %d neurons, network expects %d'
                               % (input_filtered.shape[-2], net.n_in))
    for i, (layer, trace) in enumerate(zip(net.layers, traces)):
        if trace.u.shape[-2] != layer.n_out:
            raise ConsistencyError('trace %d has %d neurons, layer has %d'
                                   % (i, trace.u.shape[-2], layer.n_out))
        if trace.u.shape != trace.a.shape or \
                trace.u.shape[:-2] != input_filtered.shape[:-2] or \
                trace.u.shape[-1] != input_filtered.shape[-1]:
            raise ConsistencyError('trace %d shape %s does not match input %s'
                                   % (i, trace.u.shape, input_filtered.shape))


def bptt(net, traces, input_filtered, target, cfg):
    """Full-sequence BPTT of the Van Rossum loss for a simulated network.

    Args:
        net: Network
        traces: list of LayerTrace
            output of simulate_network for net and the same input
        input_filtered: ndarray
            filtered input train consumed by the first layer
        target: SpikeTrain or ndarray
            desired output spikes, filtered here with the output tau_s
        cfg: GradConfig

    Returns:
        GradientReport holding dL/dW (descent subtracts it)
    """
    input_filtered = np.asarray(input_filtered, dtype=np.float64)
    _check_traces(net, traces, input_filtered)
    out = traces[-1]
    target_filtered = filter_spike_train(target,
                                         net.layers[-1].params.tau_s)
    if target_filtered.shape != out.a.shape:
        raise ConsistencyError('target %s does not match output %s'
                               % (target_filtered.shape, out.a.shape))

    loss = van_rossum_loss(out.a, target_filtered)
    seed = loss_grad_filtered(out.a, target_filtered)
    inputs = [input_filtered] + [trace.a for trace in traces[:-1]]
    weight_grads, phases, _ = backpropagate(
        net,
        [trace.u for trace in traces],
        [as_spike_array(trace.s) for trace in traces],
        inputs, seed, cfg)
    return GradientReport(weight_grads, *phases, loss=loss)
