# -*- coding: utf-8 -*-
# License: MIT License

"""Gradient oracle for the BPTT recurrences.

Replacing every H(U - theta) of the forward pass with the sigmoid used as its
surrogate gives a smooth network whose surrogate gradient is the exact
gradient. On that model the analytic backward pass must agree with central
finite differences, and it only does so when the temporal Jacobian keeps the
reset term.
"""

import argparse
from dataclasses import dataclass
from functools import partial
import logging
import sys

import numpy as np
from progressbar import Bar, Percentage, ProgressBar

from lif import (DimensionError, LifParams, Network, filter_spike_train,
                 filter_step, lif_step)
from gradients import GradConfig, backpropagate, sigmoid_t, van_rossum_loss
from MultiprocessTrials import MultiprocessTrials
import spike_data

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
REL_FLOOR = 1e-12
# coordinates far below the largest gradient are judged against this
# fraction of it; see DESIGN.md
SCALE_FLOOR = 1e-2
# soft-spike band where the reset term is not negligible
ACTIVE_BAND = (0.1, 0.9)


@dataclass(frozen=True)
class SoftTrace:
    """Smoothed layer trace; s_soft = sigmoid_T(u - theta)."""
    u: np.ndarray
    s_soft: np.ndarray
    a: np.ndarray


@dataclass
class CheckReport:
    """Outcome of comparing an analytic and a numeric gradient.

    Attributes:
        max_rel_err: float
        max_abs_err: float
        worst_coordinate: tuple
            (layer, row, col) of the largest relative error
        analytic: ndarray
        numeric: ndarray
        floor: float
            denominator floor used for the relative errors
    """
    max_rel_err: float
    max_abs_err: float
    worst_coordinate: tuple
    analytic: np.ndarray
    numeric: np.ndarray
    floor: float = REL_FLOOR


def soft_forward(net, spikes_in, temp):
    """Forward pass with H(U - theta) replaced by sigmoid_T(U - theta) both in
    the reset factor and in the synaptic injection."""
    a_in = filter_spike_train(spikes_in, net.layers[0].params.tau_s)
    return _soft_forward_filtered(net, a_in, temp)


def _soft_forward_filtered(net, a_in, temp):
    if a_in.shape[-2] != net.n_in:
        raise DimensionError('network expects %d input neurons, got %s'
                             % (net.n_in, a_in.shape))
    traces = []
    for layer in net.layers:
        params = layer.params
        drive = np.matmul(layer.weights, a_in)
        u = np.zeros(drive.shape)
        s = np.zeros(drive.shape)
        a = np.zeros(drive.shape)
        s[..., 0] = sigmoid_t(u[..., 0] - params.theta, temp)
        for t in range(drive.shape[-1] - 1):
            u[..., t + 1] = lif_step(u[..., t], s[..., t], drive[..., t],
                                     params)
            s[..., t + 1] = sigmoid_t(u[..., t + 1] - params.theta, temp)
            a[..., t + 1] = filter_step(a[..., t], s[..., t + 1],
                                        params.tau_s)
        traces.append(SoftTrace(u=u, s_soft=s, a=a))
        a_in = a
    return traces


def _soft_backward(net, soft_traces, input_filtered, target_filtered, temp,
                   with_reset_term):
    out = soft_traces[-1]
    seed = out.a - target_filtered
    inputs = [input_filtered] + [trace.a for trace in soft_traces[:-1]]
    cfg = GradConfig(with_reset_term=with_reset_term, temp=temp)
    return backpropagate(net,
                         [trace.u for trace in soft_traces],
                         [trace.s_soft for trace in soft_traces],
                         inputs, seed, cfg)


def soft_bptt(net, soft_traces, spikes_in, target, temp,
              with_reset_term=True):
    """Exact gradient of the smoothed model's Van Rossum loss.

    with_reset_term=False drops the reset term and exists only to show that
    the result then stops matching finite differences.

    Returns:
        flattened gradient, layers in order, each row-major
    """
    tau_in = net.layers[0].params.tau_s
    tau_out = net.layers[-1].params.tau_s
    grads, _, _ = _soft_backward(net, soft_traces,
                                 filter_spike_train(spikes_in, tau_in),
                                 filter_spike_train(target, tau_out),
                                 temp, with_reset_term)
    return flatten(grads)


def soft_loss(net, spikes_in, target, temp):
    """Van Rossum loss of the smoothed model."""
    tau_in = net.layers[0].params.tau_s
    tau_out = net.layers[-1].params.tau_s
    return _soft_loss_filtered(net, filter_spike_train(spikes_in, tau_in),
                               filter_spike_train(target, tau_out), temp)


def _soft_loss_filtered(net, input_filtered, target_filtered, temp):
    traces = _soft_forward_filtered(net, input_filtered, temp)
    return float(van_rossum_loss(traces[-1].a, target_filtered).total)


def central_fd(net, spikes_in, target, temp, h=FD_STEP):
    """Central finite differences of the smoothed loss for every weight.

    Works on private copies; net itself is never touched.
    """
    if not h > 0:
        raise ValueError('h must be > 0, got %r' % h)
    input_filtered = filter_spike_train(spikes_in,
                                        net.layers[0].params.tau_s)
    target_filtered = filter_spike_train(target, net.layers[-1].params.tau_s)
    weights = [np.array(w) for w in net.weights]
    numeric = []
    for w in weights:
        for i in range(w.size):
            orig = w.flat[i]
            w.flat[i] = orig + h
            loss_plus = _soft_loss_filtered(net.with_weights(weights),
                                            input_filtered, target_filtered,
                                            temp)
            w.flat[i] = orig - h
            loss_minus = _soft_loss_filtered(net.with_weights(weights),
                                             input_filtered, target_filtered,
                                             temp)
            w.flat[i] = orig
            numeric.append((loss_plus - loss_minus) / (2 * h))
    return np.array(numeric)


def flatten(weight_list):
    return np.concatenate([np.ravel(w) for w in weight_list])


def _coordinate(index, shapes):
    for layer, shape in enumerate(shapes):
        size = int(np.prod(shape))
        if index < size:
            row, col = np.unravel_index(index, shape)
            return (layer, int(row), int(col))
        index -= size
    raise IndexError(index)


def compare(analytic, numeric, shapes=None, floor=REL_FLOOR):
    """Per-coordinate relative error |a - n| / max(|a|, |n|, floor).

    Args:
        analytic: flattened gradient
        numeric: flattened gradient
        shapes: list of weight shapes used to name the worst coordinate;
            defaults to a single row
        floor: denominator floor

    Returns:
        CheckReport
    """
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    if analytic.shape != numeric.shape:
        raise DimensionError('gradients of length %d and %d'
                             % (analytic.size, numeric.size))
    if shapes is None:
        shapes = [(1, analytic.size)]
    if analytic.size == 0:
        return CheckReport(0.0, 0.0, (0, 0, 0), analytic, numeric, floor)
    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel_err = abs_err / denom
    worst = int(np.argmax(rel_err))
    return CheckReport(max_rel_err=float(rel_err[worst]),
                       max_abs_err=float(abs_err.max()),
                       worst_coordinate=_coordinate(worst, shapes),
                       analytic=analytic, numeric=numeric, floor=floor)


def suite_floor(numeric):
    """Relative-error floor for oracle instances."""
    numeric = np.abs(np.asarray(numeric))
    scale = float(numeric.max()) if numeric.size else 0.0
    return max(REL_FLOOR, SCALE_FLOOR * scale)


def random_instance(seed, params=LifParams()):
    """Seeded random oracle instance.

    1-3 layers, 1-8 neurons per layer, 5-20 steps, weights ~ N(0, 0.5), input
    spikes with p=0.3 and target spikes with p=0.2.

    Returns:
        (net, spikes_in, target)
    """
    rng = spike_data.make_rng(seed)
    n_layers = int(rng.integers(1, 4))
    sizes = [int(n) for n in rng.integers(1, 9, size=n_layers + 1)]
    n_steps = int(rng.integers(5, 21))
    weights = [rng.normal(0.0, 0.5, size=(n_out, n_in))
               for n_in, n_out in zip(sizes, sizes[1:])]
    net = Network.dense(weights, params)
    spikes_in = spike_data.bernoulli_train(sizes[0], n_steps, 0.3, rng)
    target = spike_data.bernoulli_train(sizes[-1], n_steps, 0.2, rng)
    return net, spikes_in, target


def reset_term_active(soft_traces, deltas, band=ACTIVE_BAND):
    """True when some soft spike inside band sits at a step whose successor
    potential still receives gradient, so the reset term can matter.

    U[0] is zero and the reset term is proportional to U, so step 0 never
    counts.
    """
    low, high = band
    for trace, delta in zip(soft_traces, deltas):
        s = trace.s_soft[..., 1:-1]
        downstream = np.abs(delta[..., 2:]) > 0
        if np.any((s > low) & (s < high) & downstream):
            return True
    return False


def check_instance(seed, h=FD_STEP, params=LifParams()):
    """Runs one oracle instance.

    Returns:
        dict with the CSV fields of the oracle suite
    """
    net, spikes_in, target = random_instance(seed, params)
    temp = params.temp
    input_filtered = filter_spike_train(spikes_in,
                                        net.layers[0].params.tau_s)
    target_filtered = filter_spike_train(target, net.layers[-1].params.tau_s)
    traces = _soft_forward_filtered(net, input_filtered, temp)
    grads, _, deltas = _soft_backward(net, traces, input_filtered,
                                      target_filtered, temp, True)
    grads_no_reset, _, _ = _soft_backward(net, traces, input_filtered,
                                          target_filtered, temp, False)
    numeric = central_fd(net, spikes_in, target, temp, h)
    shapes = [w.shape for w in net.weights]
    floor = suite_floor(numeric)
    report = compare(flatten(grads), numeric, shapes, floor)
    report_no_reset = compare(flatten(grads_no_reset), numeric, shapes, floor)
    return {'seed': seed,
            'layers': '-'.join(str(n) for n in net.sizes),
            'steps': spikes_in.n_steps,
            'max_rel_err': report.max_rel_err,
            'max_abs_err': report.max_abs_err,
            'worst_coordinate': report.worst_coordinate,
            'reset_active': reset_term_active(traces, deltas),
            'max_rel_err_without_reset': report_no_reset.max_rel_err}


def run_suite(n_instances=100, seed=0, h=FD_STEP, params=LifParams(),
              num_procs=1, progress=False):
    """Checks n_instances random instances with seeds seed, seed+1, ...

    Returns:
        list of per-instance dicts, each with its instance_id
    """
    seeds = [seed + i for i in range(n_instances)]
    work = partial(check_instance, h=h, params=params)
    if num_procs == 1 and progress:
        pbar = ProgressBar(widgets=[Percentage(), Bar()],
                           max_value=n_instances).start()
        records = []
        for i, s in enumerate(seeds):
            records.append(work(s))
            pbar.update(i + 1)
        pbar.finish()
    else:
        records = MultiprocessTrials(seeds, work, num_procs=num_procs).run()
    for i, record in enumerate(records):
        record['instance_id'] = i
    return records


def summarize(records, tol):
    """Suite-level verdicts for agreement and reset-term necessity."""
    max_rel = max(r['max_rel_err'] for r in records) if records else 0.0
    active = [r for r in records if r['reset_active']]
    summary = {'instances': len(records),
               'max_rel_err': max_rel,
               'passed': max_rel <= tol,
               'active_instances': len(active),
               'max_rel_err_without_reset': 0.0,
               'active_over_1e-2': 0}
    if active:
        summary['max_rel_err_without_reset'] = max(
            r['max_rel_err_without_reset'] for r in active)
        summary['active_over_1e-2'] = sum(
            1 for r in active if r['max_rel_err_without_reset'] >= 1e-2)
    return summary


def main():
    """ main """
    parser = argparse.ArgumentParser(description='finite-difference check '
                                     'of the smoothed BPTT gradient')
    parser.add_argument('-n', '--instances', type=int, default=20)
    parser.add_argument('-s', '--seed', type=int, default=0)
    parser.add_argument('-t', '--tol', type=float, default=1e-5)
    parser.add_argument('-j', '--num_jobs', type=int, default=1,
                        help='0 uses all cores available')
    args = parser.parse_args()

    records = run_suite(args.instances, args.seed, num_procs=args.num_jobs,
                        progress=True)
    summary = summarize(records, args.tol)
    for record in records:
        print('%3d %-12s %.3e %.3e' % (record['instance_id'], record['layers'],
                                       record['max_rel_err'],
                                       record['max_rel_err_without_reset']))
    print('max relative error %.3e (tol %.1e)' % (summary['max_rel_err'],
                                                  args.tol))
    sys.exit(0 if summary['passed'] else 1)


if __name__ == '__main__':
    main()
