#!/usr/bin/env python
# -*- coding: utf-8 -*-
# License: MIT License

"""
Experiments on surrogate-gradient BPTT for LIF networks, with and without the
reset-mechanism term of the temporal Jacobian.

gradcheck - finite-difference oracle on the smoothed model
toy       - single-neuron training (50 inputs, 100 steps)
sweep     - paired multi-seed learning-rate sweep of both variants
mnist     - dense rate-coded classifier on disjoint MNIST subsets
rerun     - replays a run from its manifest

Every run writes CSV files and a manifest into --out (default:
$SPIKEGRAD_OUT or ./spikegrad_out). Exit codes: 0 success, 1 failed check,
2 usage, 3 I/O.
"""

import argparse
import csv
from dataclasses import replace
from functools import partial
import json
import logging
import os
import sys

import numpy as np

from lif import LifParams, Network
from gradients import GradConfig
from MultiprocessTrials import MultiprocessTrials
import gradcheck
import plots
import spike_data
import train

__version__ = '0.1.0'

CSV_SCHEMA_VERSION = 1
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3

DEFAULTS_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                             'defaults.json')

logger = logging.getLogger('spikegrad')


class RunManifest:
    """Key-value record of a run, written before it starts and finalized
    after it ends.

    Attributes:
        path: string
        command: string
        config: dict
            fully resolved arguments
        seeds: list
        variants: list
        artifacts: list
            file names relative to the output directory
    """

    def __init__(self, out_dir, command, config, seeds, variants):
        self.path = os.path.join(out_dir, 'manifest.txt')
        self.command = command
        self.config = config
        self.seeds = list(seeds)
        self.variants = list(variants)
        self.artifacts = []

    def write(self, status, exit_code=None):
        fields = [('command', self.command),
                  ('version', __version__),
                  ('csv_schema', CSV_SCHEMA_VERSION),
                  ('status', status),
                  ('exit_code', '' if exit_code is None else exit_code),
                  ('seeds', json.dumps(self.seeds)),
                  ('variants', json.dumps(self.variants)),
                  ('artifacts', json.dumps(self.artifacts)),
                  ('config', json.dumps(self.config, sort_keys=True))]
        with open(self.path, 'w') as f:
            for key, value in fields:
                f.write('%s = %s\n' % (key, value))

    @staticmethod
    def read(path):
        """Parses a manifest into a dict of raw string values."""
        fields = {}
        with open(path) as f:
            for line in f:
                if ' = ' in line:
                    key, value = line.rstrip('\n').split(' = ', 1)
                    fields[key] = value
        return fields


def format_value(value):
    """Round-trip text for CSV cells."""
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(out_dir, name, header, rows, manifest):
    path = os.path.join(out_dir, name)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    manifest.artifacts.append(name)
    logger.info('wrote %d rows to %s', len(rows), path)
    return path


def float_list(text):
    try:
        values = [float(x) for x in text.split(',') if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError('expected comma-separated numbers, '
                                         'got %r' % text)
    if not values:
        raise argparse.ArgumentTypeError('empty list')
    return values


def lif_params(args):
    return LifParams(tau_m=args.tau_m, tau_s=args.tau_s, theta=args.theta,
                     temp=args.temp)


def toy_config(args, lr, with_reset_term):
    return train.TrainConfig.for_neurons(
        lif_params(args), with_reset_term, lr=lr, iterations=args.iterations,
        seed=args.seed, n_inputs=args.inputs, n_steps=args.steps,
        p_input=args.p_input, p_target=args.p_target)


def seed_list(args):
    return [args.seed + i for i in range(args.seeds)]


def cmd_gradcheck(args, manifest):
    """Oracle suite; passes iff the largest relative error is within --tol."""
    records = gradcheck.run_suite(args.instances, args.seed, args.fd_step,
                                  lif_params(args), num_procs=args.jobs,
                                  progress=args.jobs == 1 and not args.quiet)
    header = ['instance_id', 'seed', 'layers', 'max_rel_err', 'max_abs_err',
              'reset_active', 'max_rel_err_without_reset']
    write_csv(args.out, 'gradcheck.csv', header,
              [[r[k] for k in header] for r in records], manifest)
    summary = gradcheck.summarize(records, args.tol)
    print('instances: %d (fd step %g, relative floor %g of the largest '
          'component)' % (summary['instances'], args.fd_step,
                          gradcheck.SCALE_FLOOR))
    print('max relative error: %.3e (tol %.1e) %s'
          % (summary['max_rel_err'], args.tol,
             'PASS' if summary['passed'] else 'FAIL'))
    print('reset term active in %d instances; without it max relative error '
          '%.3e, %d instances >= 1e-2'
          % (summary['active_instances'],
             summary['max_rel_err_without_reset'],
             summary['active_over_1e-2']))
    return EXIT_OK if summary['passed'] else EXIT_CHECK_FAILED


def _write_checkpoints(args, trials, manifest):
    for trial in trials:
        cfg = trial.config
        name = 'checkpoint_seed%d_%s.txt' % (cfg.seed, cfg.variant)
        net = Network.dense(trial.final_weights, cfg.lif)
        train.save_checkpoint(os.path.join(args.out, name), net,
                              cfg.as_dict())
        manifest.artifacts.append(name)


def cmd_toy(args, manifest):
    """Single-neuron trials for --seeds consecutive seeds."""
    cfg = toy_config(args, args.lr, not args.no_reset_term)
    cells = [replace(cfg, seed=s) for s in seed_list(args)]
    work = partial(train.run_toy_trial, keep_phases=args.phases)
    trials = MultiprocessTrials(cells, work, num_procs=args.jobs).run()

    rows = []
    for trial in trials:
        for it, loss in enumerate(trial.losses):
            rows.append([it, trial.config.seed, cfg.variant, loss])
    write_csv(args.out, 'toy.csv', ['iteration', 'seed', 'variant', 'loss'],
              rows, manifest)

    if args.phases:
        report = trials[0].phases
        rows = [[t, report.phase_a[0, t], report.phase_b[0, t],
                 report.phase_c[0, t], report.phase_d[0, t]]
                for t in range(report.phase_a.shape[-1])]
        write_csv(args.out, 'phases.csv',
                  ['step', 'phase_a', 'phase_b', 'phase_c', 'phase_d'],
                  rows, manifest)
    if args.checkpoint:
        _write_checkpoints(args, trials, manifest)
    if args.svg:
        plots.plot_toy(trials, os.path.join(args.out, 'toy.svg'))
        manifest.artifacts.append('toy.svg')

    summary = train.convergence_summary(trials)
    for trial in trials:
        print('seed %d: loss %.6f -> %.6f, converged at %s'
              % (trial.config.seed, trial.losses[0], trial.losses[-1],
                 trial.converged_at))
    print('median converged at %s, %.0f%% converged'
          % (summary['median_converged_at'],
             100 * summary['converged_fraction']))
    return EXIT_OK


def cmd_sweep(args, manifest):
    """Learning-rate sweep with paired reset-term variants."""
    cfg = toy_config(args, args.lrs[0], True)
    result = train.lr_sweep(args.lrs, seed_list(args), cfg,
                            num_procs=args.jobs)
    rows = []
    for lr in result.lrs:
        for flag in (True, False):
            stats = result.cells[(lr, flag)]
            variant = GradConfig(flag).variant
            for it in range(len(stats.mean)):
                rows.append([lr, it, variant, stats.mean[it], stats.std[it]])
    write_csv(args.out, 'sweep.csv',
              ['lr', 'iteration', 'variant', 'mean_loss', 'std_loss'],
              rows, manifest)
    if args.svg:
        plots.plot_sweep(result, os.path.join(args.out, 'sweep.svg'))
        manifest.artifacts.append('sweep.svg')

    for row in train.summarize_sweep(result):
        verdict = 'as expected' if row['holds'] else 'NOT as expected'
        print('lr %-6g final loss with reset %.6f, without %.6f, pooled std '
              '%.6f: %s' % (row['lr'], row['final_on'], row['final_off'],
                            row['pooled_std'], verdict))
    return EXIT_OK


def cmd_mnist(args, manifest):
    """Dense classifier on disjoint train/test subsets, both variants."""
    images = spike_data.load_idx(args.mnist_images, args.mnist_labels)
    if 2 * args.subset > len(images):
        print('spikegrad: --subset %d needs %d images, %s has %d'
              % (args.subset, 2 * args.subset, args.mnist_images,
                 len(images)), file=sys.stderr)
        return EXIT_USAGE
    train_set, test_set = spike_data.split_subsets(
        images, args.subset, args.subset, spike_data.make_rng(args.seed))
    sizes = [images.pixels.shape[1], args.hidden, 10]
    rows = []
    final = []
    for seed in seed_list(args):
        cfg = train.TrainConfig.for_neurons(
            lif_params(args), lr=args.lr, iterations=max(1, args.epochs),
            seed=seed, weight_init='gaussian')
        results = train.train_classifier(
            train_set, test_set, sizes, cfg, epochs=args.epochs,
            batch_size=args.batch, n_steps=args.steps, p_max=args.p_max,
            period=args.period, progress=args.jobs == 1 and not args.quiet)
        for flag, (records, net) in results.items():
            variant = GradConfig(flag).variant
            for r in records:
                rows.append([r['epoch'], seed, variant, r['train_acc'],
                             r['test_acc']])
            final.append((seed, variant, records[-1]['test_acc']))
            if args.checkpoint:
                name = 'checkpoint_seed%d_%s.txt' % (seed, variant)
                train.save_checkpoint(os.path.join(args.out, name), net,
                                      cfg.with_variant(flag).as_dict())
                manifest.artifacts.append(name)
    header = ['epoch', 'seed', 'variant', 'train_acc', 'test_acc']
    write_csv(args.out, 'mnist.csv', header, rows, manifest)
    if args.svg:
        plots.plot_mnist([dict(zip(header, r)) for r in rows],
                         os.path.join(args.out, 'mnist.svg'))
        manifest.artifacts.append('mnist.svg')

    for seed, variant, acc in final:
        print('seed %d %-8s test accuracy %.4f' % (seed, variant, acc))
    return EXIT_OK


COMMANDS = {'gradcheck': cmd_gradcheck, 'toy': cmd_toy, 'sweep': cmd_sweep,
            'mnist': cmd_mnist}


def load_defaults(config_file=None):
    """Built-in defaults, optionally overridden by a JSON config file with
    the same sections."""
    with open(DEFAULTS_FILE) as f:
        defaults = json.load(f)
    if config_file:
        with open(config_file) as f:
            override = json.load(f)
        for section, values in override.items():
            defaults.setdefault(section, {}).update(values)
    return defaults


def build_parser(defaults):
    parser = argparse.ArgumentParser(
        prog='spikegrad', description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('--version', action='version', version=__version__)
    parser.add_argument('--config', help='JSON file overriding defaults.json')
    parser.add_argument('-v', '--verbose', action='store_true', default=False)
    parser.add_argument('-q', '--quiet', action='store_true', default=False)
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    def add_command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        # Neuron
        p.add_argument('--tau-m', dest='tau_m', type=float)
        p.add_argument('--tau-s', dest='tau_s', type=float)
        p.add_argument('--theta', type=float)
        p.add_argument('--temp', type=float, help='surrogate temperature T')
        # Run
        p.add_argument('--seed', type=int, help='first seed')
        p.add_argument('-j', '--jobs', type=int,
                       help='worker processes, 0 uses all cores available')
        p.add_argument('--out', default=None,
                       help='output directory (default $SPIKEGRAD_OUT)')
        p.set_defaults(**defaults.get('common', {}))
        p.set_defaults(**defaults.get(name, {}))
        return p

    p = add_command('gradcheck', 'finite-difference gradient oracle')
    p.add_argument('--instances', type=int)
    p.add_argument('--tol', type=float)
    p.add_argument('--fd-step', dest='fd_step', type=float)

    for name, help_text in (('toy', 'single-neuron experiment'),
                            ('sweep', 'paired learning-rate sweep')):
        p = add_command(name, help_text)
        if name == 'toy':
            p.add_argument('--lr', type=float)
            p.add_argument('--no-reset-term', dest='no_reset_term',
                           action='store_true', default=False)
            p.add_argument('--phases', action='store_true', default=False,
                           help='dump the gradient phases of the last '
                           'iteration')
            p.add_argument('--checkpoint', action='store_true', default=False)
        else:
            p.add_argument('--lrs', type=float_list)
        p.add_argument('--seeds', type=int, help='number of seeds')
        p.add_argument('--iterations', type=int)
        p.add_argument('--inputs', type=int)
        p.add_argument('--steps', type=int)
        p.add_argument('--p-input', dest='p_input', type=float)
        p.add_argument('--p-target', dest='p_target', type=float)
        p.add_argument('--svg', action='store_true', default=False)

    p = add_command('mnist', 'dense MNIST-subset classifier')
    p.add_argument('--mnist-images', dest='mnist_images')
    p.add_argument('--mnist-labels', dest='mnist_labels')
    p.add_argument('--lr', type=float)
    p.add_argument('--seeds', type=int, help='number of seeds')
    p.add_argument('--subset', type=int, help='images per split')
    p.add_argument('--epochs', type=int)
    p.add_argument('--batch', type=int)
    p.add_argument('--steps', type=int)
    p.add_argument('--hidden', type=int)
    p.add_argument('--p-max', dest='p_max', type=float)
    p.add_argument('--period', type=int)
    p.add_argument('--svg', action='store_true', default=False)
    p.add_argument('--checkpoint', action='store_true', default=False)

    p = sub.add_parser('rerun', help='replay a run from its manifest')
    p.add_argument('manifest')
    p.add_argument('--out', default=None,
                   help='write into another directory')
    return parser


def validate(parser, args):
    """Rejects values argparse cannot check on its own."""
    if args.command == 'rerun':
        return
    for name in ('tau_m', 'tau_s'):
        if not getattr(args, name) > 1:
            parser.error('--%s must be > 1' % name.replace('_', '-'))
    if not args.theta > 0 or not args.temp > 0:
        parser.error('--theta and --temp must be > 0')
    if args.jobs < 0:
        parser.error('--jobs must be >= 0')
    if args.command == 'gradcheck':
        if args.instances < 1:
            parser.error('--instances must be >= 1')
        if not args.tol > 0 or not args.fd_step > 0:
            parser.error('--tol and --fd-step must be > 0')
        return
    if args.seeds < 1:
        parser.error('--seeds must be >= 1')
    if args.command in ('toy', 'sweep'):
        if args.iterations < 1:
            parser.error('--iterations must be >= 1')
        if args.inputs < 1 or args.steps < 1:
            parser.error('--inputs and --steps must be >= 1')
        lrs = args.lrs if args.command == 'sweep' else [args.lr]
        if any(lr < 0 for lr in lrs):
            parser.error('learning rates must be >= 0')
    if args.command == 'mnist':
        if not args.mnist_images or not args.mnist_labels:
            parser.error('mnist needs --mnist-images and --mnist-labels')
        if args.subset < 1 or args.batch < 1 or args.epochs < 0:
            parser.error('--subset and --batch must be >= 1, --epochs >= 0')


def configure_logging(args):
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format='%(asctime)s %(levelname)s %(name)s: '
                        '%(message)s')


def run_command(args):
    """Runs a resolved command inside its manifest."""
    os.makedirs(args.out, exist_ok=True)
    n_seeds = args.instances if args.command == 'gradcheck' else args.seeds
    seeds = [args.seed + i for i in range(n_seeds)]
    variants = ['reset', 'no_reset']
    if args.command == 'toy':
        variants = ['no_reset' if args.no_reset_term else 'reset']
    manifest = RunManifest(args.out, args.command, dict(vars(args)), seeds,
                           variants)
    manifest.write('running')
    try:
        code = COMMANDS[args.command](args, manifest)
    except Exception:
        manifest.write('failed')
        raise
    manifest.write('done', code)
    return code


def cmd_rerun(args):
    """Rebuilds the resolved arguments stored in a manifest and runs them
    again."""
    fields = RunManifest.read(args.manifest)
    config = json.loads(fields['config'])
    out = args.out
    rerun_args = argparse.Namespace(**config)
    if out is not None:
        rerun_args.out = out
    rerun_args.quiet = args.quiet
    rerun_args.verbose = args.verbose
    logger.info('replaying %s from %s', rerun_args.command, args.manifest)
    return run_command(rerun_args)


def main(argv=None):
    """ main """
    argv = sys.argv[1:] if argv is None else list(argv)

    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument('--config')
    known, _ = pre.parse_known_args(argv)
    try:
        defaults = load_defaults(known.config)
    except (OSError, ValueError) as e:
        print('spikegrad: cannot read config: %s' % e, file=sys.stderr)
        return EXIT_IO

    parser = build_parser(defaults)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code
    try:
        validate(parser, args)
    except SystemExit as e:
        return e.code
    configure_logging(args)

    try:
        if args.command == 'rerun':
            return cmd_rerun(args)
        if args.out is None:
            args.out = os.environ.get('SPIKEGRAD_OUT', 'spikegrad_out')
        return run_command(args)
    except spike_data.IdxError as e:
        print('spikegrad: %s' % e, file=sys.stderr)
        return EXIT_IO
    except OSError as e:
        print('spikegrad: %s' % e, file=sys.stderr)
        return EXIT_IO


if __name__ == '__main__':
    sys.exit(main())
