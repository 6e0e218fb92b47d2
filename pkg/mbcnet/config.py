"""
Run configurations.

A run configuration is one YAML document with the sections ``schema``,
``groups``, ``model``, ``train``, ``coop`` and ``data``. Only ``schema``
and ``groups`` are required; the other sections default to the desk
profile, the default training settings, and ``alpha = beta = 0.1``.

Dotted overrides such as ``coop.alpha=0.2`` are applied to the raw mapping
before anything is validated, so an override can fix an invalid file.

"""

import logging
import os

import yaml

from .cooperation import CoopConfig
from .errors import ConfigError
from .features import FeatureSchema, GroupSpec, read_dataset
from .immutable import ImmutableObject
from .model import ModelConfig
from .synthetic import GeneratorConfig, generate_datasets
from .training import TrainConfig

logger = logging.getLogger(__name__)

CONFIG_DIR = os.path.join(os.path.dirname(__file__), 'configs')
BUNDLED_CONFIGS = {
    'desk': os.path.join(CONFIG_DIR, 'desk.yaml'),
    'paper': os.path.join(CONFIG_DIR, 'paper.yaml'),
}

SPLIT_NAMES = ('train', 'val', 'test')

class DataConfig(ImmutableObject):
    """
    Where the data comes from.

    Either CSV paths (`train`, `val`, `test`, each defaulting to
    ``<dir>/<split>.csv`` when `dir` is given) or a synthetic `generator`,
    used when no paths are given.

    >>> from mbcnet.config import DataConfig
    >>> DataConfig(dir='data').paths()['val']
    'data/val.csv'

    """
    __slots__ = ()

    def _typecheck(self, dir=None, train=None, val=None, test=None, generator=None):
        for name, value in zip(('dir',) + SPLIT_NAMES, (dir, train, val, test)):
            if value is not None and not isinstance(value, str):
                raise TypeError(f"data.{name} must be a path string, not {type(value).__name__}")
        if isinstance(generator, dict):
            generator = GeneratorConfig.from_dict(generator)
        elif generator is not None and not isinstance(generator, GeneratorConfig):
            raise TypeError("data.generator must be a mapping")
        return (dir, train, val, test, generator)

    dir = property(lambda self: self.args[0])
    train = property(lambda self: self.args[1])
    val = property(lambda self: self.args[2])
    test = property(lambda self: self.args[3])
    generator = property(lambda self: self.args[4])

    def paths(self):
        """
        The CSV path of every split, or None where there is none.
        """
        paths = {}
        for name, path in zip(SPLIT_NAMES, self.args[1:4]):
            if path is None and self.dir is not None:
                path = os.path.join(self.dir, f'{name}.csv')
            paths[name] = path
        return paths

    def to_dict(self):
        d = {name: value for name, value in zip(('dir',) + SPLIT_NAMES, self.args[:4])
             if value is not None}
        if self.generator is not None:
            d['generator'] = self.generator.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls()
        if not isinstance(d, dict):
            raise ConfigError('data', "must be a mapping")
        unknown = set(d) - {'dir', 'generator', *SPLIT_NAMES}
        if unknown:
            raise ConfigError('data', f"unknown keys {sorted(unknown)}")
        return cls(**d)

SECTIONS = {
    'schema': FeatureSchema,
    'groups': GroupSpec,
    'model': ModelConfig,
    'train': TrainConfig,
    'coop': CoopConfig,
    'data': DataConfig,
}
REQUIRED_SECTIONS = ('schema', 'groups')

class RunConfig(ImmutableObject):
    """
    A complete run configuration.

    Construct it from the parsed YAML mapping with :meth:`from_dict` (or
    from a file with :func:`load_config`) and check it as a whole with
    :meth:`validate`.
    """
    __slots__ = ()

    def _typecheck(self, schema, groups, model=None, train=None, coop=None, data=None):
        values = {'schema': schema, 'groups': groups,
                  'model': ModelConfig() if model is None else model,
                  'train': TrainConfig() if train is None else train,
                  'coop': CoopConfig() if coop is None else coop,
                  'data': DataConfig() if data is None else data}
        for name, value in values.items():
            if not isinstance(value, SECTIONS[name]):
                raise TypeError(f"the {name} section must be a {SECTIONS[name].__name__}, "
                                f"not {type(value).__name__}")
        return tuple(values.values())

    schema = property(lambda self: self.args[0])
    groups = property(lambda self: self.args[1])
    model = property(lambda self: self.args[2])
    train = property(lambda self: self.args[3])
    coop = property(lambda self: self.args[4])
    data = property(lambda self: self.args[5])

    def validate(self):
        """
        Cross-check the sections, raising :class:`~.ConfigError` on the
        first problem. Returns the configuration.
        """
        self.model.validate(self.schema, self.groups)
        if self.data.generator is not None:
            self.data.generator.validate(self.schema)
        return self

    def to_dict(self):
        return {name: value.to_dict() for name, value in zip(SECTIONS, self.args)}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError('config', "the configuration must be a mapping of sections")
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigError('config', f"unknown sections {sorted(unknown)}")
        for name in REQUIRED_SECTIONS:
            if d.get(name) is None:
                raise ConfigError(name, f"missing required section {name!r}")
        sections = {}
        for name, section in SECTIONS.items():
            raw = d.get(name)
            if raw is None:
                continue
            try:
                sections[name] = section.from_dict(raw)
            except TypeError as e:
                raise ConfigError(name, str(e)) from None
        return cls(**sections)

def _parse_override(override):
    key, sep, text = override.partition('=')
    key = key.strip()
    if not sep or not key:
        raise ConfigError('--set', f"expected dotted.path=value, got {override!r}")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(key, f"unparseable override value {text!r}: {e}") from None
    # YAML 1.1 reads 1e-3 as a string
    if isinstance(value, str) and any(c.isdigit() for c in value):
        try:
            value = float(value)
        except ValueError:
            pass
    return key, value

def apply_overrides(raw, overrides):
    """
    Apply ``dotted.path=value`` overrides to a raw configuration mapping in
    place. Values are parsed as YAML scalars. List entries are addressed by
    index.

    >>> from mbcnet.config import apply_overrides
    >>> apply_overrides({'coop': {'alpha': 0.1}}, ['coop.alpha=0.2', 'train.seed=3'])
    {'coop': {'alpha': 0.2}, 'train': {'seed': 3}}

    """
    for override in overrides:
        key, value = _parse_override(override)
        parts = key.split('.')
        node = raw
        for depth, part in enumerate(parts):
            path = '.'.join(parts[:depth + 1])
            last = depth == len(parts) - 1
            if isinstance(node, list):
                try:
                    index = int(part)
                except ValueError:
                    raise ConfigError(path, f"{part!r} is not a list index") from None
                if not -len(node) <= index < len(node):
                    raise ConfigError(path, f"index {index} is out of range for {len(node)} entries")
                part = index
            elif isinstance(node, dict):
                if not last and node.get(part) is None:
                    node[part] = {}
            else:
                raise ConfigError(path, "cannot set a key inside a scalar value")
            if last:
                node[part] = value
            else:
                node = node[part]
        logger.debug("override %s = %r", key, value)
    return raw

def parse_config(text, overrides=(), profile=None, seed=None, variant=None):
    """
    Parse and validate a YAML run configuration.

    `overrides` are ``dotted.path=value`` strings; `profile`, `seed` and
    `variant` override ``model.profile``, ``train.seed`` and
    ``train.variant``. All are applied before validation.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError('config', f"invalid YAML: {e}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError('config', "the configuration must be a mapping of sections")
    overrides = list(overrides)
    if profile is not None:
        overrides.append(f'model.profile={profile}')
    if seed is not None:
        overrides.append(f'train.seed={seed}')
    if variant is not None:
        overrides.append(f'train.variant={variant}')
    apply_overrides(raw, overrides)
    return RunConfig.from_dict(raw).validate()

def load_config(path, overrides=(), profile=None, seed=None, variant=None):
    """
    Read, override and validate the run configuration in the file `path`.
    """
    with open(path) as f:
        text = f.read()
    return parse_config(text, overrides, profile, seed, variant)

def dump_config(config, path=None):
    """
    Serialize `config` as YAML, writing it to `path` if given. Parsing the
    result gives back an equal configuration.
    """
    text = yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)
    if path is not None:
        with open(path, 'w') as f:
            f.write(text)
    return text

def load_datasets(config, root=None):
    """
    The ``(train, val, test)`` datasets of `config`.

    CSV paths are read (relative paths are taken relative to `root`); a
    missing test split is None. Without paths, the synthetic generator
    draws all three splits in memory.
    """
    paths = config.data.paths()
    if paths['train'] is None and paths['val'] is None:
        if config.data.generator is None:
            raise ConfigError('data', "needs either CSV paths or a generator section")
        data = generate_datasets(config.schema, config.data.generator)
        return data.train, data.val, data.test
    splits = []
    for name in SPLIT_NAMES:
        path = paths[name]
        if path is None:
            if name != 'test':
                raise ConfigError(f'data.{name}', "missing path")
            splits.append(None)
            continue
        if root is not None and not os.path.isabs(path):
            path = os.path.join(root, path)
        splits.append(read_dataset(path, config.schema))
    return tuple(splits)
