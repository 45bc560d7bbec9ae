# -*- coding: utf-8 -*-
# License: MIT License

"""Plain gradient-descent training of LIF networks.

- the single-neuron toy problem: 50 Bernoulli inputs, one output neuron,
  100 steps, fixed random input and target trains
- repeated toy trials over seeds and a learning-rate sweep that pairs the
  reset-term variants on identical seeds
- a dense rate-coded MNIST classifier trained with the Van Rossum loss
"""

import argparse
from dataclasses import dataclass, field, replace
import json
import logging

import numpy as np
from progressbar import Bar, Percentage, ProgressBar

from lif import DimensionError, LifParams, Network, filter_spike_train, \
    simulate_network
from gradients import GradConfig, bptt
from MultiprocessTrials import MultiprocessTrials
import spike_data

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
DEFAULT_LRS = (0.001, 0.005, 0.01, 0.02)
# learning rate the sweep verdict treats as the boundary of the large-rate
# regime
REFERENCE_LR = 0.005


@dataclass(frozen=True)
class TrainConfig:
    """Everything needed to re-run one trial bit-identically.

    Attributes:
        lr: float
            learning rate, >= 0
        iterations: int
            toy iterations (or classifier epochs), >= 1
        lif: LifParams
        grad: GradConfig
        seed: int
        weight_init: string
            'uniform' (toy scheme) or 'gaussian' (std 1/sqrt(n_in))
        n_inputs, n_steps, p_input, p_target:
            toy problem sizes and spike probabilities
    """
    lr: float = 0.005
    iterations: int = 200
    lif: LifParams = LifParams()
    grad: GradConfig = GradConfig()
    seed: int = 0
    weight_init: str = 'uniform'
    n_inputs: int = 50
    n_steps: int = 100
    p_input: float = 0.1
    p_target: float = 0.05

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError('lr must be >= 0, got %r' % self.lr)
        if self.iterations < 1:
            raise ValueError('iterations must be >= 1, got %r'
                             % self.iterations)
        if self.weight_init not in ('uniform', 'gaussian'):
            raise ValueError('unknown weight_init %r' % self.weight_init)
        if self.grad.temp != self.lif.temp:
            raise ValueError('surrogate temperature %r differs from the '
                             'neuron temperature %r'
                             % (self.grad.temp, self.lif.temp))

    @classmethod
    def for_neurons(cls, lif, with_reset_term=True, **kwargs):
        """TrainConfig whose backward pass uses lif's temperature."""
        return cls(lif=lif, grad=GradConfig(with_reset_term, lif.temp),
                   **kwargs)

    @property
    def variant(self):
        return self.grad.variant

    def with_variant(self, with_reset_term):
        return replace(self, grad=replace(self.grad,
                                          with_reset_term=with_reset_term))

    def as_dict(self):
        return {'lr': self.lr, 'iterations': self.iterations,
                'seed': self.seed, 'weight_init': self.weight_init,
                'n_inputs': self.n_inputs, 'n_steps': self.n_steps,
                'p_input': self.p_input, 'p_target': self.p_target,
                'with_reset_term': self.grad.with_reset_term,
                'grad_temp': self.grad.temp, **self.lif.as_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(lr=d['lr'], iterations=d['iterations'], seed=d['seed'],
                   weight_init=d['weight_init'], n_inputs=d['n_inputs'],
                   n_steps=d['n_steps'], p_input=d['p_input'],
                   p_target=d['p_target'],
                   lif=LifParams(d['tau_m'], d['tau_s'], d['theta'],
                                 d['temp']),
                   grad=GradConfig(d['with_reset_term'], d['grad_temp']))


@dataclass
class TrialResult:
    """Loss curve and outcome of one toy trial.

    converged_at is the first iteration whose output train equals the target
    exactly, or None. phases keeps the final iteration's GradientReport when
    requested.
    """
    losses: np.ndarray
    converged_at: object
    final_weights: list
    config: TrainConfig
    phases: object = None


@dataclass
class CurveStats:
    """Per-iteration mean and population std of loss over seeds."""
    mean: np.ndarray
    std: np.ndarray
    trials: list = field(default_factory=list)


@dataclass
class SweepResult:
    """CurveStats per (lr, with_reset_term) cell over a shared seed list."""
    cells: dict
    lrs: list
    seeds: list
    config: TrainConfig


def sgd_step(weights, grads, lr):
    """w <- w - lr * g for every matrix."""
    if len(weights) != len(grads):
        raise DimensionError('%d weight matrices but %d gradients'
                             % (len(weights), len(grads)))
    updated = []
    for w, g in zip(weights, grads):
        if np.shape(w) != np.shape(g):
            raise DimensionError('weight %s and gradient %s differ'
                                 % (np.shape(w), np.shape(g)))
        updated.append(np.asarray(w) - lr * np.asarray(g))
    return updated


def init_toy_weights(n_in, params, p_in, rng):
    """Uniform in [0, 2 theta / (n_in p_in tau_m)].

    The mean drive then holds the undisturbed steady-state potential near
    theta, so the untrained neuron fires.
    """
    high = 2.0 * params.theta / (n_in * p_in * params.tau_m)
    return rng.uniform(0.0, high, size=(1, n_in))


def init_classifier_weights(sizes, rng):
    """Gaussian weights with std 1/sqrt(n_in) per layer."""
    return [rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))
            for n_in, n_out in zip(sizes, sizes[1:])]


def run_toy_trial(cfg, keep_phases=False):
    """Trains the single toy neuron for cfg.iterations iterations.

    Input (p_input) and target (p_target) trains are drawn once from cfg.seed,
    then the weights, and held fixed. Every iteration simulates, records the
    loss, backpropagates and takes one SGD step.

    Returns:
        TrialResult
    """
    rng = spike_data.make_rng(cfg.seed)
    spikes_in = spike_data.bernoulli_train(cfg.n_inputs, cfg.n_steps,
                                           cfg.p_input, rng)
    target = spike_data.bernoulli_train(1, cfg.n_steps, cfg.p_target, rng)
    if cfg.weight_init == 'uniform':
        weights = [init_toy_weights(cfg.n_inputs, cfg.lif, cfg.p_input, rng)]
    else:
        weights = init_classifier_weights([cfg.n_inputs, 1], rng)
    net = Network.dense(weights, cfg.lif)
    input_filtered = filter_spike_train(spikes_in, cfg.lif.tau_s)

    losses = np.zeros(cfg.iterations)
    converged_at = None
    report = None
    for it in range(cfg.iterations):
        traces = simulate_network(net, spikes_in)
        report = bptt(net, traces, input_filtered, target, cfg.grad)
        losses[it] = report.loss.total
        if converged_at is None and traces[-1].s == target:
            converged_at = it
        net = net.with_weights(sgd_step(net.weights, report.weight_grads,
                                        cfg.lr))
    logger.debug('seed %d %s lr %g: loss %.4f -> %.4f, converged at %s',
                 cfg.seed, cfg.variant, cfg.lr, losses[0], losses[-1],
                 converged_at)
    return TrialResult(losses=losses, converged_at=converged_at,
                       final_weights=net.weights, config=cfg,
                       phases=report if keep_phases else None)


def curve_stats(trials):
    losses = np.stack([trial.losses for trial in trials])
    return CurveStats(mean=losses.mean(axis=0), std=losses.std(axis=0),
                      trials=list(trials))


def run_trials(cfg, seeds, num_procs=1):
    """Runs the toy trial for every seed and aggregates the loss curves.

    Args:
        cfg: TrainConfig
            template; its seed is replaced by each entry of seeds
        seeds: list of int
        num_procs: int
            worker processes, 0 for all cores

    Returns:
        CurveStats with population std
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError('run_trials needs at least one seed')
    cells = [replace(cfg, seed=s) for s in seeds]
    trials = MultiprocessTrials(cells, run_toy_trial,
                                num_procs=num_procs).run()
    return curve_stats(trials)


def lr_sweep(lrs, seeds, cfg=TrainConfig(), num_procs=1):
    """Crosses lrs x {reset term on, off} x seeds.

    Both variants of an lr share every seed, hence the same data and initial
    weights.

    Returns:
        SweepResult keyed by (lr, with_reset_term)
    """
    lrs = list(lrs)
    seeds = list(seeds)
    if not lrs or not seeds:
        raise ValueError('lr_sweep needs at least one lr and one seed')
    keys = [(lr, flag) for lr in lrs for flag in (True, False)]
    cells = [replace(cfg.with_variant(flag), lr=lr, seed=s)
             for lr, flag in keys for s in seeds]
    trials = MultiprocessTrials(cells, run_toy_trial,
                                num_procs=num_procs).run()
    result = {}
    for i, key in enumerate(keys):
        result[key] = curve_stats(trials[i * len(seeds):(i + 1) * len(seeds)])
    return SweepResult(cells=result, lrs=lrs, seeds=seeds, config=cfg)


def summarize_sweep(result, reference_lr=REFERENCE_LR):
    """Final-loss comparison of the two variants per learning rate.

    Above reference_lr the reset term should not lose; at or below it the
    variants should stay within one pooled standard deviation.
    """
    rows = []
    for lr in result.lrs:
        on = result.cells[(lr, True)]
        off = result.cells[(lr, False)]
        pooled = float(np.sqrt((on.std[-1] ** 2 + off.std[-1] ** 2) / 2))
        final_on = float(on.mean[-1])
        final_off = float(off.mean[-1])
        if lr > reference_lr:
            holds = final_on <= final_off
        else:
            holds = abs(final_on - final_off) < pooled
        rows.append({'lr': lr, 'final_on': final_on, 'final_off': final_off,
                     'pooled_std': pooled, 'holds': holds})
    return rows


def convergence_summary(trials):
    """Median exact-convergence iteration (unconverged trials count as
    never) and the fraction of trials that converged."""
    its = [np.inf if t.converged_at is None else t.converged_at
           for t in trials]
    converged = sum(1 for t in trials if t.converged_at is not None)
    return {'median_converged_at': float(np.median(its)) if its else np.inf,
            'converged_fraction': converged / len(trials) if trials else 0.0}


def evaluate(net, spikes, labels, chunk=250):
    """Spike-count classification accuracy on pre-encoded inputs."""
    correct = 0
    for start in range(0, len(labels), chunk):
        traces = simulate_network(net, spikes[start:start + chunk])
        predicted = spike_data.decode_spike_count(traces[-1].s)
        correct += int(np.sum(predicted == labels[start:start + chunk]))
    return correct / len(labels)


def _train_classifier_variant(train_set, test_set, sizes, cfg, epochs,
                              batch_size, n_steps, p_max, period, progress):
    init_seq, data_seq, eval_seq = np.random.SeedSequence(cfg.seed).spawn(3)
    net = Network.dense(
        init_classifier_weights(sizes, spike_data.make_rng(init_seq)),
        cfg.lif)
    data_rng = spike_data.make_rng(data_seq)
    eval_rng = spike_data.make_rng(eval_seq)
    n_classes = sizes[-1]
    train_eval = spike_data.rate_encode_image(train_set.pixels, n_steps,
                                              p_max, eval_rng).data
    test_eval = spike_data.rate_encode_image(test_set.pixels, n_steps,
                                             p_max, eval_rng).data

    records = [{'epoch': 0,
                'train_acc': evaluate(net, train_eval, train_set.labels),
                'test_acc': evaluate(net, test_eval, test_set.labels)}]
    n_batches = -(-len(train_set) // batch_size)
    pbar = None
    if progress:
        pbar = ProgressBar(widgets=[Percentage(), Bar()],
                           max_value=max(1, epochs * n_batches)).start()
    for epoch in range(1, epochs + 1):
        order = data_rng.permutation(len(train_set))
        for b, start in enumerate(range(0, len(order), batch_size)):
            idx = order[start:start + batch_size]
            spikes = spike_data.rate_encode_image(train_set.pixels[idx],
                                                  n_steps, p_max, data_rng)
            target = spike_data.class_target_batch(train_set.labels[idx],
                                                   n_classes, n_steps, period)
            traces = simulate_network(net, spikes)
            report = bptt(net, traces,
                          filter_spike_train(spikes, cfg.lif.tau_s),
                          target, cfg.grad)
            grads = [g / len(idx) for g in report.weight_grads]
            net = net.with_weights(sgd_step(net.weights, grads, cfg.lr))
            if pbar is not None:
                pbar.update((epoch - 1) * n_batches + b + 1)
        record = {'epoch': epoch,
                  'train_acc': evaluate(net, train_eval, train_set.labels),
                  'test_acc': evaluate(net, test_eval, test_set.labels)}
        logger.info('%s epoch %d: train %.3f test %.3f', cfg.variant, epoch,
                    record['train_acc'], record['test_acc'])
        records.append(record)
    if pbar is not None:
        pbar.finish()
    return records, net


def train_classifier(train_set, test_set, sizes, cfg, epochs=10,
                     batch_size=32, n_steps=30, p_max=0.5, period=5,
                     variants=(True, False), progress=False):
    """Trains a dense rate-coded classifier once per reset-term variant.

    Every variant starts from the same seed, so initial weights, batch order
    and input encodings are shared; only the backward pass differs. Epoch 0
    is the untrained network.

    Args:
        train_set, test_set: LabeledImages
            disjoint subsets
        sizes: list of int
            layer sizes, e.g. [784, 100, 10]
        cfg: TrainConfig
            lr, seed, neuron constants and surrogate temperature
        epochs, batch_size, n_steps, p_max, period:
            schedule, mini-batch size (gradients are averaged), time steps,
            rate-coding ceiling and target spike period

    Returns:
        dict with_reset_term -> (list of epoch records, final Network)
    """
    if sizes[0] != train_set.pixels.shape[1]:
        raise DimensionError('network takes %d inputs, images have %d pixels'
                             % (sizes[0], train_set.pixels.shape[1]))
    if batch_size < 1:
        raise ValueError('batch_size must be >= 1')
    results = {}
    for flag in variants:
        results[flag] = _train_classifier_variant(
            train_set, test_set, sizes, cfg.with_variant(flag), epochs,
            batch_size, n_steps, p_max, period, progress)
    return results


def save_checkpoint(path, net, config):
    """Writes weights as a versioned text document.

    Header line, JSON config echo, then one 'layer n_out n_in' line per
    layer followed by its rows as round-trip decimal floats.
    """
    with open(path, 'w') as f:
        f.write('spikegrad-checkpoint %d\n' % CHECKPOINT_VERSION)
        f.write('config %s\n' % json.dumps(config, sort_keys=True))
        for w in net.weights:
            f.write('layer %d %d\n' % w.shape)
            for row in w:
                f.write(' '.join(repr(float(x)) for x in row) + '\n')


def load_checkpoint(path):
    """Reads save_checkpoint output.

    Returns:
        (Network, config dict)
    """
    with open(path) as f:
        lines = f.read().splitlines()
    header = lines[0].split()
    if header[:1] != ['spikegrad-checkpoint'] or \
            int(header[1]) != CHECKPOINT_VERSION:
        raise ValueError('%s is not a version %d checkpoint'
                         % (path, CHECKPOINT_VERSION))
    config = json.loads(lines[1][len('config '):])
    weights = []
    i = 2
    while i < len(lines):
        _, n_out, n_in = lines[i].split()
        n_out, n_in = int(n_out), int(n_in)
        rows = [[float(x) for x in line.split()]
                for line in lines[i + 1:i + 1 + n_out]]
        weights.append(np.array(rows, dtype=np.float64).reshape(n_out, n_in))
        i += 1 + n_out
    params = LifParams(**{k: config[k] for k in ('tau_m', 'tau_s', 'theta',
                                                 'temp') if k in config})
    return Network.dense(weights, params), config


def main():
    """
    Trains the toy neuron once and prints its loss curve.
    """
    parser = argparse.ArgumentParser()
    parser.add_argument('-s', '--seed', type=int, default=0)
    parser.add_argument('-l', '--lr', type=float, default=0.005)
    parser.add_argument('-i', '--iterations', type=int, default=200)
    parser.add_argument('-n', '--no_reset_term', action='store_true',
                        default=False)
    args = parser.parse_args()

    cfg = TrainConfig.for_neurons(LifParams(), not args.no_reset_term,
                                  lr=args.lr, iterations=args.iterations,
                                  seed=args.seed)
    result = run_toy_trial(cfg)
    for it in range(0, cfg.iterations, 20):
        print('%4d %.6f' % (it, result.losses[it]))
    print('converged at %s' % result.converged_at)


if __name__ == '__main__':
    main()
