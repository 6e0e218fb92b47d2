"""
Metrics, per-branch analyses and the ablation harness.

All metrics are computed per head (the fusion head, reported as "MBC", and
each active branch), each from that head's own probabilities. The model
AUC and LogLoss are those of the fusion head.

"""

import csv
import logging
from collections import namedtuple

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import rankdata

from .branches import BRANCHES, DISPLAY_NAMES, FUSION, HEADS
from .cooperation import VARIANTS
from .errors import ConfigError, DataError, UndefinedAUCError
from .features import CATEGORY_COLUMN, batch_bounds
from .numerics import bce_value

logger = logging.getLogger(__name__)

def auc(scores, labels):
    """
    Area under the ROC curve, via the Mann-Whitney rank statistic.

    Tied scores get their average rank, so each tied positive-negative pair
    counts one half. Raises :class:`~.UndefinedAUCError` unless both classes
    are present.

    >>> from mbcnet.evaluation import auc
    >>> auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    0.75
    >>> auc([0.3, 0.3, 0.3], [0, 1, 0])
    0.5

    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape != labels.shape:
        raise ValueError(f"auc() got {scores.size} scores and {labels.size} labels")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(n_pos, n_neg)
    ranks = rankdata(scores, method='average')
    u = ranks[positive].sum() - n_pos*(n_pos + 1)/2
    return float(u/(n_pos*n_neg))

def per_sample_logloss(probabilities, labels):
    """
    The clamped BCE of every sample, as a 1-D array.
    """
    return bce_value(np.asarray(probabilities, dtype=np.float64).reshape(-1),
                     np.asarray(labels, dtype=np.float64).reshape(-1))

def logloss(probabilities, labels):
    """
    Mean clamped BCE.

    >>> from mbcnet.evaluation import logloss
    >>> round(logloss([0.5, 0.5], [0, 1]), 4)
    0.6931

    """
    losses = per_sample_logloss(probabilities, labels).reshape((-1, 1))
    return float(losses.sum()/losses.size)

EvalReport = namedtuple('EvalReport', ['auc', 'logloss', 'heads', 'samples'])
EvalReport.__doc__ = """
Evaluation of a model on a dataset. `auc` and `logloss` are those of the
fusion head; `heads` maps every head to its ``(auc, logloss)``.
"""

def predict_dataset(model, dataset, batch_size=4096, latents=False):
    """
    Run the model over `dataset` in batches.

    Returns a dict from head to 1-D probabilities, and, with `latents`, also
    a dict from head to the N x d latent matrix.
    """
    if len(dataset) == 0:
        raise DataError("cannot predict on an empty dataset")
    probabilities = {}
    latent_parts = {}
    for start, stop in batch_bounds(len(dataset), batch_size):
        batch = dataset.batch(np.arange(start, stop))
        for head, out in model.forward(batch).items():
            probabilities.setdefault(head, []).append(out.probability.value.reshape(-1))
            if latents:
                latent_parts.setdefault(head, []).append(out.latent.value)
    probabilities = {h: np.concatenate(p) for h, p in probabilities.items()}
    if latents:
        return probabilities, {h: np.concatenate(z) for h, z in latent_parts.items()}
    return probabilities

def evaluate(model, dataset, batch_size=4096):
    """
    AUC and LogLoss of every head of `model` on `dataset`.
    """
    probabilities = predict_dataset(model, dataset, batch_size)
    heads = {head: (auc(p, dataset.labels), logloss(p, dataset.labels))
             for head, p in probabilities.items()}
    return EvalReport(heads[FUSION][0], heads[FUSION][1], heads, len(dataset))

def format_table(header, rows):
    """
    Render rows as an aligned text table. Floats are shown with 4 decimals.

    >>> from mbcnet.evaluation import format_table
    >>> print(format_table(['Variant', 'AUC'], [['full', 0.75]]))
    Variant  AUC
    full     0.7500

    """
    def cell(v):
        if isinstance(v, float):
            return f"{v:.4f}"
        return '-' if v is None else str(v)

    text = [[str(h) for h in header]] + [[cell(v) for v in row] for row in rows]
    widths = [max(len(r[k]) for r in text) for k in range(len(header))]
    lines = ['  '.join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in text]
    return '\n'.join(lines)

def format_report(report):
    """
    The per-head rows of `report`: MBC first, then the branches.
    """
    rows = [[DISPLAY_NAMES[head], *report.heads[head]] for head in HEADS if head in report.heads]
    return format_table(['Model', 'AUC', 'LogLoss'], rows)

def topk_category_profile(model, dataset, k, batch_size=4096):
    """
    For every head, count the categories of the `k` samples it predicts
    best (lowest per-sample LogLoss, ties broken by sample order).

    Returns a dict from head to a dict from category to count, listing every
    category present in `dataset`.
    """
    if dataset.categories is None:
        raise DataError("the top-k category profile needs per-sample category tags",
                        field=CATEGORY_COLUMN)
    if not 1 <= k <= len(dataset):
        raise ValueError(f"k must be between 1 and the dataset size {len(dataset)}, got {k}")
    categories = np.unique(dataset.categories)
    profile = {}
    for head, p in predict_dataset(model, dataset, batch_size).items():
        losses = per_sample_logloss(p, dataset.labels)
        top = np.argsort(losses, kind='stable')[:k]
        counts = np.bincount(np.searchsorted(categories, dataset.categories[top]),
                             minlength=len(categories))
        profile[head] = {int(c): int(n) for c, n in zip(categories, counts)}
    return profile

def write_category_profile(path, profile):
    categories = sorted({c for counts in profile.values() for c in counts})
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['head', *categories])
        for head, counts in profile.items():
            writer.writerow([head, *(counts.get(c, 0) for c in categories)])

LATENT_ORDER = BRANCHES + (FUSION,)

def export_branch_latents(model, dataset, path, batch_size=4096):
    """
    Write every latent of every sample as CSV rows ``sample, branch, z0, ...``.

    Rows are grouped by sample, with the branches in the order EFGC, Deep,
    Cross, fusion. Returns the number of rows written.
    """
    _, latents = predict_dataset(model, dataset, batch_size, latents=True)
    heads = [h for h in LATENT_ORDER if h in latents]
    d = latents[FUSION].shape[1]
    rows = 0
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['sample', 'branch', *(f'z{k}' for k in range(d))])
        for i in range(len(dataset)):
            for head in heads:
                writer.writerow([i, head, *(repr(float(x)) for x in latents[head][i])])
                rows += 1
    return rows

def neuron_softmax(latents):
    """
    For every head, the softmax over latent dimensions averaged over samples.
    """
    result = {}
    for head, z in latents.items():
        e = np.exp(z - z.max(axis=1, keepdims=True))
        result[head] = (e/e.sum(axis=1, keepdims=True)).mean(axis=0)
    return result

def export_neuron_softmax(model, dataset, path, batch_size=4096):
    """
    Write :func:`neuron_softmax` of every head as CSV rows
    ``branch, n0, n1, ...``, and return it.
    """
    _, latents = predict_dataset(model, dataset, batch_size, latents=True)
    result = neuron_softmax({h: latents[h] for h in LATENT_ORDER if h in latents})
    d = len(result[FUSION])
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['branch', *(f'n{k}' for k in range(d))])
        for head, values in result.items():
            writer.writerow([head, *(repr(float(x)) for x in values)])
    return result

# Ablations

REMOVALS = {
    'wo_efgc': ('branch', 'efgc'),
    'wo_deep': ('branch', 'deep'),
    'wo_cross': ('branch', 'cross'),
    'wo_bct': ('loss', 'alpha'),
    'wo_mdr': ('loss', 'beta'),
    'wo_both': ('loss', 'both'),
}
FULL = 'full'
CELL_IDS = (FULL, *VARIANTS, *REMOVALS)

def cell_config(base, cell):
    """
    The run configuration of one ablation cell.

    `cell` is ``'full'``, a cooperation variant, or one or more removals
    joined with ``'+'`` (for instance ``'wo_efgc+wo_bct'``).
    """
    if cell == FULL:
        return base
    if cell in VARIANTS:
        return base.replace(train=base.train.replace(variant=cell))
    config = base
    for part in cell.split('+'):
        if part not in REMOVALS:
            raise ConfigError('grid', f"unknown cell {part!r}, expected one of {', '.join(CELL_IDS)}")
        kind, what = REMOVALS[part]
        if kind == 'branch':
            branches = tuple(b for b in config.model.branches if b != what)
            config = config.replace(model=config.model.replace(branches=branches))
        else:
            coop = config.coop
            if what in ('alpha', 'both'):
                coop = coop.replace(alpha=0.0)
            if what in ('beta', 'both'):
                coop = coop.replace(beta=0.0)
            config = config.replace(coop=coop)
    return config.validate()

def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None

def _run_cell(config, data, seed):
    from .training import train

    config = config.replace(train=config.train.replace(seed=seed))
    result = train(config, data[0], data[1])
    test = data[2] if len(data) > 2 and data[2] is not None else data[1]
    report = evaluate(result.model, test, config.train.eval_batch_size)
    steps = [r.values for r in result.records if r.phase == 'train']
    return report, _mean(v['bct'] for v in steps), _mean(v['mdr'] for v in steps)

def _average_reports(reports):
    heads = {}
    for head in reports[0].heads:
        heads[head] = (_mean(r.heads[head][0] for r in reports),
                       _mean(r.heads[head][1] for r in reports))
    return EvalReport(heads[FUSION][0], heads[FUSION][1], heads, reports[0].samples)

AblationCell = namedtuple('AblationCell', ['cell', 'report', 'seed_aucs', 'bct', 'mdr'])
AblationCell.__doc__ = """
One ablation cell: the seed-averaged test report, the per-seed test AUC of
the fusion head, and the mean co-teaching and differentiation losses over all
training steps of all seeds.
"""

class AblationGrid:
    """
    The results of :func:`run_ablation`, one :class:`AblationCell` per
    cell id, all trained on the same data with the same seeds.
    """
    def __init__(self, cells, seeds):
        self.cells = cells
        self.seeds = tuple(seeds)

    def __len__(self):
        return len(self.cells)

    def __getitem__(self, cell):
        for c in self.cells:
            if c.cell == cell:
                return c
        raise KeyError(cell)

    def to_table(self):
        return format_table(['Variant', 'AUC', 'LogLoss'],
                            [[c.cell, c.report.auc, c.report.logloss] for c in self.cells])

    def records(self):
        for c in self.cells:
            yield {'cell': c.cell, 'auc': c.report.auc, 'logloss': c.report.logloss,
                   'seed_aucs': list(c.seed_aucs), 'seeds': list(self.seeds),
                   'bct': c.bct, 'mdr': c.mdr,
                   'heads': {h: list(v) for h, v in c.report.heads.items()}}

def _run_grid(configs, data, seeds, jobs):
    jobs_list = [(name, config, seed) for name, config in configs for seed in seeds]
    logger.info("running %d training jobs on %d worker(s)", len(jobs_list), jobs)
    results = Parallel(n_jobs=jobs)(delayed(_run_cell)(config, data, seed)
                                    for _, config, seed in jobs_list)
    by_name = {}
    for (name, _, _), result in zip(jobs_list, results):
        by_name.setdefault(name, []).append(result)
    return by_name

def run_ablation(cells, base, data, seeds=None, jobs=1):
    """
    Train and test every cell of an ablation grid.

    `cells` is a sequence of cell ids (see :func:`cell_config`), `base` the
    run configuration, and `data` a ``(train, val, test)`` triple. Every
    cell is trained once per seed (default: ``base.train.seed``) and its
    test metrics are averaged over the seeds. With ``jobs > 1`` the training
    jobs run in parallel.
    """
    cells = list(cells)
    if not cells:
        raise ConfigError('grid', "at least one cell is required")
    seeds = [base.train.seed] if seeds is None else list(seeds)
    configs = [(cell, cell_config(base, cell)) for cell in cells]
    by_name = _run_grid(configs, data, seeds, jobs)
    results = []
    for cell in cells:
        runs = by_name[cell]
        reports = [r for r, _, _ in runs]
        results.append(AblationCell(cell, _average_reports(reports),
                                    tuple(r.auc for r in reports),
                                    _mean(b for _, b, _ in runs), _mean(m for _, _, m in runs)))
    return AblationGrid(results, seeds)

SWEEP_PARAMS = {'alpha': 'coop', 'beta': 'coop', 'density': 'train'}

SweepRow = namedtuple('SweepRow', ['value', 'auc', 'logloss', 'seed_aucs'])

def sweep_config(base, param, value):
    if param not in SWEEP_PARAMS:
        raise ConfigError('param', f"must be one of {', '.join(SWEEP_PARAMS)}, got {param!r}")
    section = SWEEP_PARAMS[param]
    changed = getattr(base, section).replace(**{param: value})
    return base.replace(**{section: changed}).validate()

def sweep(param, values, base, data, seeds=None, jobs=1):
    """
    Train and test one model per value of `param` (``'alpha'``, ``'beta'``
    or ``'density'``), returning a list of :class:`SweepRow`.
    """
    values = list(values)
    if not values:
        raise ConfigError('values', "at least one value is required")
    seeds = [base.train.seed] if seeds is None else list(seeds)
    configs = [(k, sweep_config(base, param, v)) for k, v in enumerate(values)]
    by_name = _run_grid(configs, data, seeds, jobs)
    rows = []
    for k, value in enumerate(values):
        reports = [r for r, _, _ in by_name[k]]
        report = _average_reports(reports)
        rows.append(SweepRow(value, report.auc, report.logloss, tuple(r.auc for r in reports)))
    return rows

def format_sweep(param, rows):
    return format_table([param, 'AUC', 'LogLoss'], [[r.value, r.auc, r.logloss] for r in rows])
