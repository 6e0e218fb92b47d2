__all__ = []

from .errors import (MBCError, ShapeError, ConfigError, DataError, DataAbortError,
                     CheckpointError, CorruptCheckpointError, CheckpointVersionError,
                     SchemaMismatchError, UndefinedAUCError, NaNGradientError)

__all__ += ['MBCError', 'ShapeError', 'ConfigError', 'DataError', 'DataAbortError',
            'CheckpointError', 'CorruptCheckpointError', 'CheckpointVersionError',
            'SchemaMismatchError', 'UndefinedAUCError', 'NaNGradientError']

from .numerics import Matrix, Tape, constant, stop_gradient, backward, grad_check

__all__ += ['Matrix', 'Tape', 'constant', 'stop_gradient', 'backward', 'grad_check']

from .features import FeatureField, FeatureSchema, GroupSpec, Dataset, Batch, read_dataset

__all__ += ['FeatureField', 'FeatureSchema', 'GroupSpec', 'Dataset', 'Batch', 'read_dataset']

from .synthetic import GeneratorConfig, PlantedPair, generate_synthetic

__all__ += ['GeneratorConfig', 'PlantedPair', 'generate_synthetic']

from .branches import EfgcConfig, CrossConfig, DeepConfig, SharedTopConfig

__all__ += ['EfgcConfig', 'CrossConfig', 'DeepConfig', 'SharedTopConfig']

from .cooperation import CoopConfig, bct_loss, mdr_loss, total_loss, VARIANTS

__all__ += ['CoopConfig', 'bct_loss', 'mdr_loss', 'total_loss', 'VARIANTS']

from .model import ModelConfig, MBCNet

__all__ += ['ModelConfig', 'MBCNet']

from .training import TrainConfig, train

__all__ += ['TrainConfig', 'train']

from .checkpoint import Checkpoint, checkpoint_save, checkpoint_load

__all__ += ['Checkpoint', 'checkpoint_save', 'checkpoint_load']

from .evaluation import auc, logloss, evaluate, run_ablation, sweep

__all__ += ['auc', 'logloss', 'evaluate', 'run_ablation', 'sweep']

from .config import RunConfig, DataConfig, load_config

__all__ += ['RunConfig', 'DataConfig', 'load_config']

__version__ = '0.1.0'
