"""Static SVG line plots of experiment results."""

import logging

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

logger = logging.getLogger(__name__)

# stable element ids so identical data gives identical files
matplotlib.rcParams['svg.hashsalt'] = 'spikegrad'

COLORS = {True: 'tab:red', False: 'tab:blue'}
LABELS = {True: 'with reset term', False: 'without reset term'}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)
    logger.info('wrote %s', path)


def plot_toy(trials, path):
    """Loss per iteration, one line per trial."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for trial in trials:
        flag = trial.config.grad.with_reset_term
        ax.plot(trial.losses, color=COLORS[flag], alpha=0.7,
                label='seed %d' % trial.config.seed)
    ax.set_xlabel('iteration')
    ax.set_ylabel('Van Rossum loss')
    if len(trials) <= 10:
        ax.legend()
    _save(fig, path)


def plot_sweep(result, path):
    """One panel per learning rate: mean loss solid, mean +/- one std
    dashed, both variants overlaid."""
    n = len(result.lrs)
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 3.5), squeeze=False)
    for ax, lr in zip(axes[0], result.lrs):
        for flag in (True, False):
            stats = result.cells[(lr, flag)]
            its = np.arange(len(stats.mean))
            ax.plot(its, stats.mean, color=COLORS[flag], label=LABELS[flag])
            ax.plot(its, stats.mean + stats.std, '--', color=COLORS[flag],
                    linewidth=0.8)
            ax.plot(its, stats.mean - stats.std, '--', color=COLORS[flag],
                    linewidth=0.8)
        ax.set_title('lr = %g' % lr)
        ax.set_xlabel('iteration')
    axes[0][0].set_ylabel('Van Rossum loss')
    axes[0][0].legend()
    _save(fig, path)


def plot_mnist(rows, path):
    """Test accuracy per epoch for every (seed, variant)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    keys = sorted({(r['seed'], r['variant']) for r in rows})
    for seed, variant in keys:
        sel = [r for r in rows
               if r['seed'] == seed and r['variant'] == variant]
        flag = variant == 'reset'
        ax.plot([r['epoch'] for r in sel], [r['test_acc'] for r in sel],
                color=COLORS[flag], marker='o',
                label='%s, seed %d' % (LABELS[flag], seed))
    ax.set_xlabel('epoch')
    ax.set_ylabel('test accuracy')
    ax.legend()
    _save(fig, path)
