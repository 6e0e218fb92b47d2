"""
The ``mbcnet`` command line.

Every command reads a YAML run configuration (see :mod:`mbcnet.config`).
Errors are reported as a single line ``mbcnet: error: <ErrorClass>:
<message>`` on stderr. The exit code is 2 for configuration and schema
mismatch errors and 1 for any other failure.

"""

import argparse
import json
import logging
import os
import sys

from . import __version__
from .checkpoint import Checkpoint, checkpoint_load
from .config import dump_config, load_config, load_datasets
from .errors import ConfigError, MBCError, SchemaMismatchError
from .evaluation import (CELL_IDS, evaluate, export_branch_latents,
                         export_neuron_softmax, format_report, format_sweep,
                         run_ablation, sweep, SWEEP_PARAMS)
from .features import read_dataset
from .metrics import MetricsWriter
from .model import MBCNet, count_parameters
from .synthetic import generate_synthetic
from .training import train

logger = logging.getLogger('mbcnet')

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(name)s - %(message)s'
LOG_LEVELS = {
    'error': logging.ERROR,
    'warn': logging.WARNING,
    'info': logging.INFO,
    'debug': logging.DEBUG,
}

class UsageError(MBCError):
    pass

class ArgumentParser(argparse.ArgumentParser):
    """
    An ArgumentParser whose errors follow the one-line error format.
    """
    def error(self, message):
        raise UsageError(message)

def configure_logging(stream=None):
    """
    Send the ``mbcnet`` loggers to stderr at the level named by the
    ``MBC_LOG_LEVEL`` environment variable (default ``info``).
    """
    name = os.environ.get('MBC_LOG_LEVEL', 'info').strip().lower()
    if name not in LOG_LEVELS:
        raise ConfigError('MBC_LOG_LEVEL', f"must be one of {', '.join(LOG_LEVELS)}, got {name!r}")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = logging.StreamHandler(stream if stream is not None else sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    logger.addHandler(handler)
    logger.setLevel(LOG_LEVELS[name])
    logger.propagate = False
    return logger

def _config(args):
    return load_config(args.config, args.set, getattr(args, 'profile', None),
                       getattr(args, 'seed', None), getattr(args, 'variant', None))

def _config_root(args):
    return os.path.dirname(os.path.abspath(args.config))

def _model_from_checkpoint(config, path):
    checkpoint = checkpoint_load(path, config.schema)
    model = MBCNet(config.schema, config.groups, config.model, checkpoint.params)
    return model.check_params(), checkpoint

def _floats(text, name):
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ConfigError(name, f"expected comma-separated numbers, got {text!r}") from None

def _ints(text, name):
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ConfigError(name, f"expected comma-separated integers, got {text!r}") from None

def _write_jsonl(path, records):
    with open(path, 'w') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + '\n')

def cmd_train(args):
    config = _config(args)
    os.makedirs(args.out, exist_ok=True)
    dump_config(config, os.path.join(args.out, 'config.yaml'))
    train_data, val_data, test_data = load_datasets(config, _config_root(args))
    resume = None
    if args.resume is not None:
        resume = checkpoint_load(args.resume, config.schema)
    mode = 'a' if resume is not None else 'w'
    with MetricsWriter(os.path.join(args.out, 'metrics.jsonl'),
                       config.train.record_timestamps, mode) as metrics:
        result = train(config, train_data, val_data, metrics=metrics, resume=resume,
                       max_steps=args.max_steps, out_dir=args.out)
        if result.best.meta['best_auc'] is None:
            logger.info("stopped at step %d before the first evaluation",
                        result.last.meta['step'])
        else:
            logger.info("best val auc %.5f at step %d (epoch %d)", result.best.meta['best_auc'],
                        result.best.meta['step'], result.best.meta['epoch'])
        if test_data is not None and result.last.meta.get('done'):
            report = evaluate(result.model, test_data, config.train.eval_batch_size)
            metrics.emit('test', result.best.meta['step'], result.best.meta['epoch'],
                         {'auc': report.auc, 'logloss': report.logloss})
            print(format_report(report))
    return 0

def cmd_evaluate(args):
    config = _config(args)
    model, checkpoint = _model_from_checkpoint(config, args.checkpoint)
    dataset = read_dataset(args.data, config.schema)
    report = evaluate(model, dataset, config.train.eval_batch_size)
    print(format_report(report))
    if args.out is not None:
        os.makedirs(args.out, exist_ok=True)
        values = {'auc': report.auc, 'logloss': report.logloss}
        for head, (auc, logloss) in report.heads.items():
            values[f'auc/{head}'] = auc
            values[f'logloss/{head}'] = logloss
        with MetricsWriter(os.path.join(args.out, 'metrics.jsonl'),
                           config.train.record_timestamps, 'a') as metrics:
            metrics.emit('test', checkpoint.meta.get('step', 0),
                         checkpoint.meta.get('epoch', 0), values)
    return 0

def cmd_gen_data(args):
    config = _config(args)
    generator = config.data.generator
    if generator is None:
        raise ConfigError('data.generator', "gen-data needs a generator section")
    out = args.out or config.data.dir
    if out is None:
        raise ConfigError('data.dir', "give --out or a data.dir to write to")
    data = generate_synthetic(config.schema, generator, out, args.data_seed)
    print(f"wrote {len(data.train)}/{len(data.val)}/{len(data.test)} "
          f"train/val/test samples to {out}")
    return 0

def cmd_ablate(args):
    config = _config(args)
    cells = [c.strip() for c in args.grid.split(',') if c.strip()]
    seeds = _ints(args.seeds, '--seeds') if args.seeds else None
    data = load_datasets(config, _config_root(args))
    grid = run_ablation(cells, config, data, seeds, args.jobs)
    print(grid.to_table())
    os.makedirs(args.out, exist_ok=True)
    _write_jsonl(os.path.join(args.out, 'ablation.jsonl'), grid.records())
    return 0

def cmd_sweep(args):
    config = _config(args)
    values = _floats(args.values, '--values')
    seeds = _ints(args.seeds, '--seeds') if args.seeds else None
    data = load_datasets(config, _config_root(args))
    rows = sweep(args.param, values, config, data, seeds, args.jobs)
    print(format_sweep(args.param, rows))
    os.makedirs(args.out, exist_ok=True)
    _write_jsonl(os.path.join(args.out, 'sweep.jsonl'),
                 ({'param': args.param, 'value': r.value, 'auc': r.auc,
                   'logloss': r.logloss, 'seed_aucs': list(r.seed_aucs)} for r in rows))
    return 0

def cmd_export_latents(args):
    config = _config(args)
    model, _ = _model_from_checkpoint(config, args.checkpoint)
    dataset = read_dataset(args.data, config.schema)
    rows = export_branch_latents(model, dataset, args.out, config.train.eval_batch_size)
    logger.info("wrote %d latent rows to %s", rows, args.out)
    if args.softmax is not None:
        export_neuron_softmax(model, dataset, args.softmax, config.train.eval_batch_size)
        logger.info("wrote neuron softmax to %s", args.softmax)
    return 0

def cmd_inspect_checkpoint(args):
    with open(args.checkpoint, 'rb') as f:
        checkpoint = Checkpoint.from_bytes(f.read())
    meta = checkpoint.meta
    print(f"version: {checkpoint.version}")
    print(f"schema hash: {checkpoint.schema_hash}")
    print(f"step: {meta.get('step')}  epoch: {meta.get('epoch')}")
    print(f"best auc: {meta.get('best_auc')}")
    print("tensors:")
    for name, value in checkpoint.tensors():
        print(f"  {name} {value.shape[0]}x{value.shape[1]}")
    print("parameters:")
    for component, count in count_parameters(checkpoint.params).items():
        print(f"  {component}: {count}")
    return 0

def _add_config_flags(parser, seed=True):
    parser.add_argument('--config', required=True, help="YAML run configuration")
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help="override a configuration value by dotted path (repeatable)")
    parser.add_argument('--profile', choices=('desk', 'paper'), help="model size profile")
    if seed:
        parser.add_argument('--seed', type=int, help="override train.seed")

def build_parser():
    parser = ArgumentParser(prog='mbcnet', description="Multi-branch cooperative CTR trainer")
    parser.add_argument('--version', action='version', version=f'mbcnet {__version__}')
    commands = parser.add_subparsers(dest='command', required=True)

    p = commands.add_parser('train', help="train a model")
    _add_config_flags(p)
    p.add_argument('--variant', help="cooperation variant")
    p.add_argument('--out', default='run', help="run directory")
    p.add_argument('--resume', help="checkpoint to continue from")
    p.add_argument('--max-steps', type=int, help="stop after this many optimizer steps")
    p.set_defaults(func=cmd_train)

    p = commands.add_parser('evaluate', help="score a dataset with a checkpoint")
    _add_config_flags(p, seed=False)
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--data', required=True, help="CSV dataset")
    p.add_argument('--out', help="run directory to append a test record to")
    p.set_defaults(func=cmd_evaluate)

    p = commands.add_parser('gen-data', help="write a synthetic dataset")
    _add_config_flags(p, seed=False)
    p.add_argument('--seed', type=int, dest='data_seed', help="generator seed")
    p.add_argument('--out', help="output directory (default: data.dir)")
    p.set_defaults(func=cmd_gen_data)

    p = commands.add_parser('ablate', help="train and test an ablation grid")
    _add_config_flags(p)
    p.add_argument('--grid', default='full',
                   help=f"comma-separated cells: {', '.join(CELL_IDS)}, or removals joined by '+'")
    p.add_argument('--seeds', help="comma-separated training seeds")
    p.add_argument('--jobs', type=int, default=1)
    p.add_argument('--out', default='ablation')
    p.set_defaults(func=cmd_ablate)

    p = commands.add_parser('sweep', help="train and test one model per parameter value")
    _add_config_flags(p)
    p.add_argument('--param', required=True, choices=tuple(SWEEP_PARAMS))
    p.add_argument('--values', required=True, help="comma-separated values")
    p.add_argument('--seeds', help="comma-separated training seeds")
    p.add_argument('--jobs', type=int, default=1)
    p.add_argument('--out', default='sweep')
    p.set_defaults(func=cmd_sweep)

    p = commands.add_parser('export-latents', help="write branch latents as CSV")
    _add_config_flags(p, seed=False)
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--data', required=True, help="CSV dataset")
    p.add_argument('--out', required=True, help="latent CSV file")
    p.add_argument('--softmax', help="neuron softmax CSV file")
    p.set_defaults(func=cmd_export_latents)

    p = commands.add_parser('inspect-checkpoint', help="describe a checkpoint file")
    p.add_argument('checkpoint')
    p.set_defaults(func=cmd_inspect_checkpoint)
    return parser

def _report(error):
    message = ' '.join(str(error).split())
    print(f"mbcnet: error: {type(error).__name__}: {message}", file=sys.stderr)

def main(argv=None):
    """
    Run the command line and return the exit code.
    """
    try:
        args = build_parser().parse_args(argv)
        configure_logging()
        return args.func(args)
    except (ConfigError, SchemaMismatchError, UsageError) as e:
        _report(e)
        return 2
    except (MBCError, OSError, ValueError) as e:
        _report(e)
        return 1
