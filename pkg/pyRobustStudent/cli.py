""" pyRobustStudent cli: experiment configs, evaluation protocols and result files """

import argparse
import configparser
import csv
import io
import json
import logging
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .constants import (DEFAULT_C1, DEFAULT_C2, DEFAULT_GAMMA,
                        DEFAULT_LAMBDA, DEFAULT_LR_CONV, DEFAULT_LR_LINEAR,
                        DEFAULT_MOMENTUM, DEFAULT_TAU, EXIT_CONFIG_ERR,
                        EXIT_IO_ERR, EXIT_NUMERIC_ERR, EXIT_OK, EXIT_TXT,
                        FLOAT_DIGITS, METHOD_PLAIN, METHOD_ROBUST,
                        METHOD_TEACHER, PERTURB_NONE, PIPELINES,
                        PROTO_BOUND, PROTO_CROSS_NOISE, PROTO_DOMAIN,
                        PROTO_NOISE, PROTO_OCCLUSION, PROTO_SINGLE, PROTOCOLS,
                        RESULT_COLUMNS, RESULTS_SCHEMA_VERSION, TOY_KINDS,
                        TOY_LR_SCALE, TRACE_COLUMNS, TRAIN_METHODS, VERSION)
from .data import (Dataset, load_idx, pad_to, preprocess, split_validation,
                   stratified_split, toy_dataset)
from .losses import LossConfig
from .nn import Network, NetworkSpec, compare, preset
from .perturb import PerturbationSpec, brightness_shift, perturb_batch
from .robustness import BallSpec, perturbation_bound
from .tensor import Tensor
from .train import (TrainConfig, Trainer, evaluate, prediction_scores,
                    train_student, train_teacher)
from .utils import derive_seed, parse_list, round_sig, text_hash

# add a logger for pyRobustStudent.cli
logger = logging.getLogger(__name__)

# every key a config file may set, with its default
DEFAULTS = {
    'experiment': {'protocol': PROTO_SINGLE, 'seeds': '0', 'methods': 'teacher,kd,robust',
                   'workers': '1', 'format': 'csv'},
    'dataset': {'source': 'toy', 'kind': 'blob-digits', 'classes': '4', 'size': '8',
                'n_train': '256', 'n_test': '128', 'margin': '1.0', 'seed': '0',
                'pipeline': 'none', 'limit': '0',
                'train_images': '', 'train_labels': '', 'test_images': '', 'test_labels': ''},
    'target': {'source': 'same', 'seed': '1', 'offset': '0.0', 'gain': '1.0', 'pad': 'auto',
               'bidirectional': 'no',
               'train_images': '', 'train_labels': '', 'test_images': '', 'test_labels': ''},
    'teacher': {'preset': 'toy-teacher', 'layers': ''},
    'student': {'preset': 'toy-student', 'layers': ''},
    'train': {'lr_linear': '%g' % (DEFAULT_LR_LINEAR * TOY_LR_SCALE),
              'lr_conv': '%g' % (DEFAULT_LR_CONV * TOY_LR_SCALE),
              'momentum': '%g' % DEFAULT_MOMENTUM, 'batch_size': '32', 'epochs': '10',
              'teacher_epochs': '10', 'augment': 'no', 'validation': 'no'},
    'loss': {'tau': '%g' % DEFAULT_TAU, 'lambda': '%g' % DEFAULT_LAMBDA, 'gamma': '%g' % DEFAULT_GAMMA,
             'c1': '%g' % DEFAULT_C1, 'c2': '%g' % DEFAULT_C2},
    'protocol': {'snrs': '10,5,2', 'blocks': '0,2,4,6',
                 'train_noise': 'none,gaussian-snr:5,poisson:20', 'test_noise': 'none,gaussian-snr:5,poisson:20',
                 'radius': '0.5', 'samples': '64', 'norm': '2', 'examples': '16', 'score_examples': '0,1'},
}

# desk-scale presets: overrides of DEFAULTS
PRESETS = {
    'toy-train': {'experiment': {'protocol': PROTO_SINGLE}},
    'toy-noise': {'experiment': {'protocol': PROTO_NOISE, 'seeds': '0,1,2,3,4'}},
    'toy-cross-noise': {'experiment': {'protocol': PROTO_CROSS_NOISE}},
    'toy-occlusion': {'experiment': {'protocol': PROTO_OCCLUSION, 'seeds': '0,1,2,3,4'}},
    'toy-domain': {'experiment': {'protocol': PROTO_DOMAIN},
                   'target': {'offset': '0.2', 'gain': '0.8', 'bidirectional': 'yes'}},
    'toy-bound': {'experiment': {'protocol': PROTO_BOUND, 'seeds': '0,1,2,3,4', 'methods': 'teacher,kd,robust'}},
}

# verb -> protocol
VERBS = {
    'train': PROTO_SINGLE,
    'sweep-noise': PROTO_NOISE,
    'sweep-occlusion': PROTO_OCCLUSION,
    'cross-noise': PROTO_CROSS_NOISE,
    'domain-adapt': PROTO_DOMAIN,
    'bound-report': PROTO_BOUND,
    'eval': None,
    'arch-report': None,
}

SUMMARY_COLUMNS = ('method', 'condition', 'seeds', 'accuracy_mean', 'accuracy_std', 'mean_score_mean')
BOUND_COLUMNS = ('method', 'seed', 'n', 'undefined', 'infinite', 'bound_min', 'bound_q25', 'bound_median',
                 'bound_q75', 'bound_max', 'samples', 'radius', 'norm')
ARCH_COLUMNS = ('student', 'teacher', 'student_depth', 'teacher_depth', 'student_params', 'teacher_params',
                'student_mults', 'teacher_mults', 'param_ratio', 'compression', 'speed_up',
                'reported_params', 'param_deviation')
ARCH_PAIRS = (('mnist-student', 'mnist-teacher'), ('student-1', 'cifar-teacher'), ('student-2', 'cifar-teacher'),
              ('student-3', 'cifar-teacher'), ('student-4', 'cifar-teacher'), ('toy-student', 'toy-teacher'))


class ExperimentConfig:
    """ One experiment fully described by a flat sectioned key-value text """

    class Error(Exception):
        """ Base exception for ExperimentConfig related errors. """
        pass

    class ConfigError(Error):
        """ Exception raise on a missing, unknown or inconsistent setting. """
        pass

    def __init__(self, parser):
        """Constructor.

        :param parser: parser holding every section of DEFAULTS
        :type parser: configparser.ConfigParser
        """
        self.parser = parser

    def __repr__(self):
        return 'ExperimentConfig(protocol=%r, hash=%r)' % (self.get('experiment', 'protocol'), self.hash)

    @classmethod
    def load(cls, preset_name=None, path=None, overrides=None):
        """Defaults, then a named preset, then a config file, then overrides.

        :param preset_name: one of PRESETS (optional)
        :param path: config file (optional)
        :param overrides: {section: {key: value}} applied last (optional)
        :rtype: ExperimentConfig
        """
        parser = configparser.ConfigParser(interpolation=None)
        parser.read_dict(DEFAULTS)
        if preset_name is not None:
            if preset_name not in PRESETS:
                raise cls.ConfigError('unknown preset %r (choose from %s)' % (preset_name, ', '.join(PRESETS)))
            parser.read_dict(PRESETS[preset_name])
        if path is not None:
            file_parser = configparser.ConfigParser(interpolation=None)
            try:
                with open(path) as f:
                    file_parser.read_file(f)
            except OSError as e:
                raise cls.ConfigError('cannot read config %s: %s' % (path, e))
            except configparser.Error as e:
                raise cls.ConfigError('bad config %s: %s' % (path, e))
            for section in file_parser.sections():
                if section not in DEFAULTS:
                    raise cls.ConfigError('%s: unknown section [%s]' % (path, section))
                for key, value in file_parser.items(section):
                    if key not in DEFAULTS[section]:
                        raise cls.ConfigError('%s: unknown key %r in [%s]' % (path, key, section))
                    parser.set(section, key, value)
        for section, values in (overrides or {}).items():
            for key, value in values.items():
                parser.set(section, key, str(value))
        return cls(parser)

    ##########
    # access
    ##########
    def get(self, section, key):
        return self.parser.get(section, key).strip()

    def getint(self, section, key):
        try:
            return self.parser.getint(section, key)
        except ValueError:
            raise self.ConfigError('[%s] %s must be an integer (got %r)' % (section, key, self.get(section, key)))

    def getfloat(self, section, key):
        try:
            return self.parser.getfloat(section, key)
        except ValueError:
            raise self.ConfigError('[%s] %s must be a number (got %r)' % (section, key, self.get(section, key)))

    def getboolean(self, section, key):
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise self.ConfigError('[%s] %s must be yes or no (got %r)' % (section, key, self.get(section, key)))

    def getlist(self, section, key, cast=str):
        try:
            return parse_list(self.get(section, key), cast)
        except ValueError:
            raise self.ConfigError('[%s] %s has a bad list %r' % (section, key, self.get(section, key)))

    @property
    def text(self):
        """Materialized config (every default written out)."""
        buffer = io.StringIO()
        self.parser.write(buffer)
        return buffer.getvalue()

    @property
    def hash(self):
        return text_hash(self.text)

    @property
    def train_hash(self):
        """Hash of the sections that decide trained networks."""
        sections = ('dataset', 'target', 'teacher', 'student', 'train', 'loss')
        return text_hash('\n'.join('%s %s=%s' % (s, k, v) for s in sections for k, v in self.parser.items(s))
                         + '\n' + VERSION)

    @property
    def protocol(self):
        return self.get('experiment', 'protocol')

    @property
    def seeds(self):
        return self.getlist('experiment', 'seeds', int)

    @property
    def methods(self):
        return self.getlist('experiment', 'methods')

    @property
    def workers(self):
        return self.getint('experiment', 'workers')

    @property
    def format(self):
        return self.get('experiment', 'format')

    @property
    def image_shape(self):
        if self.get('dataset', 'source') == 'toy':
            size = self.getint('dataset', 'size')
            return 1, size, size
        return preset(self.get('teacher', 'preset')).input_shape

    @property
    def n_classes(self):
        if self.get('dataset', 'source') == 'toy' and self.get('dataset', 'kind') == 'two-moons-image':
            return 2
        return self.getint('dataset', 'classes')

    ###########
    # builders
    ###########
    def loss_config(self):
        return LossConfig(self.getfloat('loss', 'tau'), self.getfloat('loss', 'lambda'),
                          self.getfloat('loss', 'gamma'), self.getfloat('loss', 'c1'), self.getfloat('loss', 'c2'))

    def train_config(self, method, seed):
        """TrainConfig of one network (teacher_epochs for the teacher).

        :rtype: TrainConfig
        """
        epochs_key = 'teacher_epochs' if method == METHOD_TEACHER else 'epochs'
        return TrainConfig(self.loss_config(), self.getfloat('train', 'lr_linear'),
                           self.getfloat('train', 'lr_conv'), self.getfloat('train', 'momentum'),
                           self.getint('train', 'batch_size'), self.getint('train', epochs_key),
                           seed, METHOD_PLAIN if method == METHOD_TEACHER else method,
                           self.getboolean('train', 'augment'))

    def network_spec(self, role):
        """Architecture of the teacher or the student section.

        layers, when set, is a ';' separated layer list overriding the preset.

        :rtype: NetworkSpec
        """
        layers = self.get(role, 'layers')
        if layers:
            return NetworkSpec('inline-%s' % role, self.image_shape, self.n_classes,
                               tuple(l.strip() for l in layers.split(';') if l.strip()))
        return preset(self.get(role, 'preset'), self.n_classes, self.image_shape)

    def perturbations(self, key):
        return [PerturbationSpec.parse(text) for text in self.getlist('protocol', key)]

    #############
    # validation
    #############
    def validate(self):
        """Reject every inconsistent setting before any compute.

        :raises ExperimentConfig.ConfigError: first problem found
        """
        try:
            self._validate()
        except (ValueError, TypeError, Network.Error) as e:
            raise self.ConfigError(str(e))
        return self

    def _validate(self):
        err = self.ConfigError
        if self.protocol not in PROTOCOLS:
            raise err('unknown protocol %r (choose from %s)' % (self.protocol, ', '.join(PROTOCOLS)))
        seeds = self.seeds
        if not seeds or min(seeds) < 0:
            raise err('seeds must be a non-empty list of integers >= 0')
        if len(set(seeds)) != len(seeds):
            raise err('seeds must be distinct')
        methods = self.methods
        if not methods:
            raise err('methods must not be empty')
        for method in methods:
            if method != METHOD_TEACHER and method not in TRAIN_METHODS:
                raise err('unknown method %r' % method)
        if self.workers < 1:
            raise err('workers out of range (must be >= 1)')
        if self.format not in ('csv', 'json'):
            raise err('format must be csv or json (got %r)' % self.format)
        # data
        source = self.get('dataset', 'source')
        if source == 'toy':
            if self.get('dataset', 'kind') not in TOY_KINDS:
                raise err('unknown toy dataset %r' % self.get('dataset', 'kind'))
            if self.getint('dataset', 'n_train') < self.n_classes or self.getint('dataset', 'n_test') < 1:
                raise err('toy dataset needs n_train >= classes and n_test >= 1')
        elif source == 'idx':
            for key in ('train_images', 'train_labels', 'test_images', 'test_labels'):
                if not self.get('dataset', key):
                    raise err('[dataset] %s is required for idx data' % key)
        else:
            raise err('[dataset] source must be toy or idx (got %r)' % source)
        if self.get('dataset', 'pipeline') not in PIPELINES:
            raise err('[dataset] pipeline must be one of %s' % ', '.join(PIPELINES))
        if self.getint('dataset', 'limit') < 0:
            raise err('[dataset] limit out of range (must be >= 0)')
        # networks
        for role in (METHOD_TEACHER, 'student'):
            spec = self.network_spec(role)
            spec.shapes()
        for method in set(methods) | {METHOD_TEACHER}:
            self.train_config(method, seeds[0])
        # protocol parameters
        protocol = self.protocol
        if protocol == PROTO_NOISE:
            snrs = self.getlist('protocol', 'snrs', float)
            if not snrs or min(snrs) <= 0:
                raise err('[protocol] snrs must be a non-empty list of values > 0')
            n_test = self.getint('dataset', 'n_test') if source == 'toy' else None
            for index in self.getlist('protocol', 'score_examples', int):
                if index < 0 or (n_test is not None and index >= n_test):
                    raise err('[protocol] score_examples index %d out of range' % index)
        elif protocol == PROTO_OCCLUSION:
            blocks = self.getlist('protocol', 'blocks', int)
            _, h, w = self.image_shape
            if not blocks:
                raise err('[protocol] blocks must not be empty')
            for block in blocks:
                if block < 0 or block > min(h, w):
                    raise err('[protocol] block %d does not fit %dx%d images' % (block, h, w))
        elif protocol == PROTO_CROSS_NOISE:
            if not (self.perturbations('train_noise') and self.perturbations('test_noise')):
                raise err('[protocol] train_noise and test_noise must not be empty')
        elif protocol == PROTO_DOMAIN:
            target = self.get('target', 'source')
            if target == 'idx':
                for key in ('test_images', 'test_labels'):
                    if not self.get('target', key):
                        raise err('[target] %s is required for idx data' % key)
                if self.getboolean('target', 'bidirectional'):
                    for key in ('train_images', 'train_labels'):
                        if not self.get('target', key):
                            raise err('[target] %s is required for a bidirectional run' % key)
            elif target != 'same':
                raise err('[target] source must be same or idx (got %r)' % target)
            self.getfloat('target', 'offset')
            if not self.getfloat('target', 'gain') > 0:
                raise err('[target] gain out of range (must be > 0)')
            self.getboolean('target', 'bidirectional')
        elif protocol == PROTO_BOUND:
            if not [m for m in methods if m != METHOD_TEACHER]:
                raise err('bound-report needs at least one student method')
            if not self.getfloat('protocol', 'radius') > 0:
                raise err('[protocol] radius out of range (must be > 0)')
            if self.getint('protocol', 'samples') < 1 or self.getint('protocol', 'examples') < 1:
                raise err('[protocol] samples and examples must be >= 1')
            if not self.getfloat('protocol', 'norm') >= 1:
                raise err('[protocol] norm out of range (must be >= 1)')


class ResultTable:
    """ Thread-safe result rows with stable order and CSV / JSON emission """

    class EmitError(Exception):
        """ Exception raise when results cannot be written. """
        pass

    def __init__(self, columns=RESULT_COLUMNS, config_hash='', code_version=VERSION, sort_key=None):
        """Constructor.

        :param columns: data columns (trace columns are appended)
        :type columns: tuple
        :param config_hash: hash of the materialized config
        :type config_hash: str
        :param sort_key: row -> sort tuple (default: the data columns in order)
        """
        self.columns = tuple(columns) + TRACE_COLUMNS
        self.config_hash = config_hash
        self.code_version = code_version
        self.sort_key = sort_key or (lambda row: tuple(str(row[c]) for c in columns))
        self._rows = []
        self._lock = threading.Lock()

    def __len__(self):
        with self._lock:
            return len(self._rows)

    def add(self, row):
        missing = [c for c in self.columns if c not in row and c not in TRACE_COLUMNS]
        if missing:
            raise ValueError('row misses columns %s' % missing)
        row = dict(row)
        row.setdefault('config_hash', self.config_hash)
        row.setdefault('code_version', self.code_version)
        with self._lock:
            self._rows.append(row)

    @property
    def rows(self):
        """Rows sorted by sort_key (never by completion order)."""
        with self._lock:
            rows = list(self._rows)
        return sorted(rows, key=self.sort_key)

    @staticmethod
    def _json_value(value):
        if isinstance(value, (bool, np.bool_)):
            return bool(value)
        if isinstance(value, (int, np.integer)):
            return int(value)
        if isinstance(value, (float, np.floating)):
            value = float(value)
            if math.isinf(value):
                return 'inf' if value > 0 else '-inf'
            return round_sig(value, FLOAT_DIGITS)
        return value

    @staticmethod
    def _csv_value(value):
        if value is None:
            return ''
        if isinstance(value, (bool, np.bool_)):
            return str(int(value))
        if isinstance(value, (float, np.floating)):
            return '%.*g' % (FLOAT_DIGITS, value)
        return str(value)

    def to_csv(self):
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([self._csv_value(row.get(c)) for c in self.columns])
        return buffer.getvalue()

    def to_json(self):
        doc = {'schema_version': RESULTS_SCHEMA_VERSION,
               'columns': list(self.columns),
               'rows': [{c: self._json_value(row.get(c)) for c in self.columns} for row in self.rows]}
        return json.dumps(doc, indent=1) + '\n'

    def emit(self, path_stem, fmt):
        """Write path_stem.csv or path_stem.json.

        :returns: written path
        :rtype: str
        :raises ResultTable.EmitError: no rows, or the file cannot be written
        """
        if fmt not in ('csv', 'json'):
            raise ValueError('format must be csv or json')
        path = '%s.%s' % (path_stem, fmt)
        if not len(self):
            raise ResultTable.EmitError('no results to write to %s' % path)
        text = self.to_csv() if fmt == 'csv' else self.to_json()
        try:
            with open(path, 'w', newline='') as f:
                f.write(text)
        except OSError as e:
            raise ResultTable.EmitError('cannot write %s: %s' % (path, e))
        logger.info('wrote %d rows to %s', len(self), path)
        return path


def emit(table, path_stem, fmt):
    """Write a result table as CSV or JSON (see :meth:`ResultTable.emit`)."""
    return table.emit(path_stem, fmt)


@dataclass(frozen=True)
class Cell:
    """ One (method, seed, condition) evaluation """
    method: str
    seed: int
    condition: str
    order: int = 0
    train_domain: str = 'source'
    train_noise: str = PERTURB_NONE
    test_domain: str = 'source'
    test_noise: str = PERTURB_NONE


@dataclass
class ProtocolResult:
    """ Tables and extra report data produced by a protocol """
    table: ResultTable
    summary: ResultTable = None
    report: dict = field(default_factory=dict)


def _write_text(path, text):
    try:
        with open(path, 'w') as f:
            f.write(text)
    except OSError as e:
        raise ResultTable.EmitError('cannot write %s: %s' % (path, e))


class Experiment:
    """ Runner of one config: datasets, trained networks and cached cells """

    def __init__(self, config, out_dir):
        """Constructor.

        :param config: validated config
        :type config: ExperimentConfig
        :param out_dir: output directory (created)
        :type out_dir: str
        """
        self.config = config
        self.out_dir = out_dir
        self.cells_dir = os.path.join(out_dir, 'cells')
        self.checkpoints_dir = os.path.join(out_dir, 'checkpoints')
        self.datasets = {}
        self._zca = None
        self._nets = {}
        self._lock = threading.Lock()
        self._key_locks = {}

    def __repr__(self):
        return 'Experiment(protocol=%r, out_dir=%r)' % (self.config.protocol, self.out_dir)

    def setup(self):
        """Create directories, write config.ini and manifest.txt, load the data."""
        for path in (self.out_dir, self.cells_dir, self.checkpoints_dir):
            try:
                os.makedirs(path, exist_ok=True)
            except OSError as e:
                raise ResultTable.EmitError('cannot create %s: %s' % (path, e))
        _write_text(os.path.join(self.out_dir, 'config.ini'), self.config.text)
        self.datasets['source'] = self._load_source()
        if self.config.protocol == PROTO_DOMAIN:
            self.datasets['target'] = self._load_target()
        manifest = []
        for domain, (train, test) in sorted(self.datasets.items()):
            manifest.append('[%s train]\n%s' % (domain, train.manifest()))
            manifest.append('[%s test]\n%s' % (domain, test.manifest()))
        _write_text(os.path.join(self.out_dir, 'manifest.txt'), '\n'.join(manifest))
        return self

    ########
    # data
    ########
    def _toy_pair(self, seed):
        cfg = self.config
        n_train, n_test = cfg.getint('dataset', 'n_train'), cfg.getint('dataset', 'n_test')
        full = toy_dataset(cfg.get('dataset', 'kind'), n_train + n_test, seed, cfg.n_classes,
                           cfg.getfloat('dataset', 'margin'), cfg.getint('dataset', 'size'))
        return stratified_split(full, n_test / float(n_train + n_test), seed)

    def _idx_pair(self, section):
        cfg = self.config
        classes = cfg.getint('dataset', 'classes')
        train = load_idx(cfg.get(section, 'train_images'), cfg.get(section, 'train_labels'), classes) \
            if cfg.get(section, 'train_images') else None
        test = load_idx(cfg.get(section, 'test_images'), cfg.get(section, 'test_labels'), classes)
        limit = cfg.getint('dataset', 'limit')
        if limit and train is not None and limit < len(train):
            train = train.subset(np.arange(limit))
        return train, test

    def _check_shape(self, dataset, what):
        expected = self.config.image_shape
        if dataset.shape != expected:
            raise ExperimentConfig.ConfigError('%s images are %s, networks expect %s'
                                               % (what, list(dataset.shape), list(expected)))

    def _load_source(self):
        cfg = self.config
        if cfg.get('dataset', 'source') == 'toy':
            train, test = self._toy_pair(cfg.getint('dataset', 'seed'))
        else:
            train, test = self._idx_pair('dataset')
        train, zca = preprocess(train, cfg.get('dataset', 'pipeline'))
        test, _ = preprocess(test, cfg.get('dataset', 'pipeline'), zca)
        self._zca = zca
        self._check_shape(train, 'source')
        return train, test

    def _adapt_target(self, dataset):
        cfg = self.config
        if dataset is None:
            return None
        _, h, w = cfg.image_shape
        if dataset.shape[1:] != (h, w):
            if cfg.get('target', 'pad') != 'auto':
                raise ExperimentConfig.ConfigError('target images are %s and [target] pad is not auto'
                                                   % list(dataset.shape))
            dataset = dataset.derive(pad_to(dataset.images, h, w), 'pad %dx%d' % (h, w))
        offset, gain = cfg.getfloat('target', 'offset'), cfg.getfloat('target', 'gain')
        if offset != 0.0 or gain != 1.0:
            dataset = dataset.derive(brightness_shift(dataset.images, offset, gain),
                                     'brightness offset=%g gain=%g' % (offset, gain))
        dataset, _ = preprocess(dataset, cfg.get('dataset', 'pipeline'), self._zca)
        return dataset

    def _load_target(self):
        cfg = self.config
        if cfg.get('target', 'source') == 'same':
            if cfg.get('dataset', 'source') == 'toy':
                train, test = self._toy_pair(cfg.getint('target', 'seed'))
            else:
                train, test = self._idx_pair('dataset')
        else:
            train, test = self._idx_pair('target')
        source_classes = self.datasets['source'][0].n_classes
        for dataset in (train, test):
            if dataset is not None and dataset.n_classes != source_classes:
                raise Trainer.ClassCountError('target has %d classes, source %d' % (dataset.n_classes, source_classes))
        train, test = self._adapt_target(train), self._adapt_target(test)
        self._check_shape(test, 'target')
        return train, test

    ###########
    # networks
    ###########
    def _key(self, *parts):
        return text_hash('|'.join([self.config.train_hash] + [str(p) for p in parts]))

    def _train_set(self, domain, noise, seed):
        train = self.datasets[domain][0]
        if train is None:
            raise ExperimentConfig.ConfigError('no %s training set' % domain)
        if noise != PERTURB_NONE:
            spec = PerturbationSpec.parse(noise, seed=seed)
            train = train.derive(perturb_batch(train.images, spec), 'train noise %s seed=%d' % (noise, seed))
        return train

    def _obtain(self, method, seed, domain, noise, train_fn):
        key = self._key(method, seed, domain, noise)
        with self._lock:
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        # one load or training run per network, concurrent callers wait for it
        with key_lock:
            return self._obtain_locked(key, method, seed, domain, noise, train_fn)

    def _obtain_locked(self, key, method, seed, domain, noise, train_fn):
        with self._lock:
            net = self._nets.get(key)
        if net is not None:
            return net
        path = os.path.join(self.checkpoints_dir, '%s-s%d-%s.rsck' % (method, seed, key))
        if os.path.exists(path):
            net = Network.load(path)
            if method == METHOD_TEACHER:
                net.freeze()
            logger.info('resumed %s seed %d (%s, %s) from %s', method, seed, domain, noise, path)
        else:
            history = os.path.join(self.out_dir, 'history-%s-s%d-%s-%s.jsonl'
                                   % (method, seed, domain, noise.replace(':', '_')))
            try:
                with open(history, 'w') as f:
                    net = train_fn(lambda record: f.write(json.dumps(record, sort_keys=True) + '\n'))
            except OSError as e:
                raise ResultTable.EmitError('cannot write %s: %s' % (history, e))
            net.save(path)
        with self._lock:
            self._nets[key] = net
        return net

    def teacher(self, seed, domain='source', noise=PERTURB_NONE):
        """Trained (or resumed) frozen teacher of a seed and training condition."""
        cfg = self.config

        def train_fn(on_epoch):
            split = self._split(self._train_set(domain, noise, seed))
            return train_teacher(cfg.network_spec(METHOD_TEACHER), split[0],
                                 cfg.train_config(METHOD_TEACHER, seed), split[1], on_epoch)
        return self._obtain(METHOD_TEACHER, seed, domain, noise, train_fn)

    def student(self, method, seed, domain='source', noise=PERTURB_NONE):
        """Trained (or resumed) student of a method, seed and training condition."""
        cfg = self.config
        teacher = self.teacher(seed, domain, noise) if method != METHOD_PLAIN else None

        def train_fn(on_epoch):
            split = self._split(self._train_set(domain, noise, seed))
            return train_student(cfg.network_spec('student'), teacher, split[0],
                                 cfg.train_config(method, seed), split[1], on_epoch)
        return self._obtain(method, seed, domain, noise, train_fn)

    def network(self, method, seed, domain='source', noise=PERTURB_NONE):
        if method == METHOD_TEACHER:
            return self.teacher(seed, domain, noise)
        return self.student(method, seed, domain, noise)

    def _split(self, train):
        if self.config.getboolean('train', 'validation'):
            return split_validation(train)
        return train, None

    ########
    # cells
    ########
    def _map(self, fn, items):
        items = list(items)
        if self.config.workers == 1 or len(items) < 2:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(fn, items))

    def _cell_path(self, cell):
        key = self._key('cell', cell.method, cell.seed, cell.train_domain, cell.train_noise,
                        cell.test_domain, cell.test_noise)
        return os.path.join(self.cells_dir, '%s.json' % key)

    def _cached(self, cell):
        path = self._cell_path(cell)
        if not os.path.exists(path):
            return None
        with open(path) as f:
            return json.load(f)

    def _evaluate_cell(self, cell):
        cached = self._cached(cell)
        if cached is not None:
            logger.info('skip finished cell %s seed %d %s', cell.method, cell.seed, cell.condition)
            # cells sharing a trained network and a test set share the cache file
            return dict(cached, method=cell.method, seed=cell.seed, condition=cell.condition)
        net = self.network(cell.method, cell.seed, cell.train_domain, cell.train_noise)
        test = self.datasets[cell.test_domain][1]
        spec = None if cell.test_noise == PERTURB_NONE else PerturbationSpec.parse(cell.test_noise, seed=cell.seed)
        metrics = evaluate(net, test, spec)
        row = {'method': cell.method, 'seed': cell.seed, 'condition': cell.condition,
               'accuracy': metrics.accuracy, 'mean_score': metrics.mean_score,
               'per_class_accuracy': metrics.per_class_accuracy}
        _write_text(self._cell_path(cell), json.dumps(row, sort_keys=True))
        logger.info('%s seed %d %s: accuracy %.4f', cell.method, cell.seed, cell.condition, metrics.accuracy)
        return row

    def run_cells(self, cells):
        """Train what the unfinished cells need, then evaluate every cell.

        :rtype: ResultTable
        """
        todo = [c for c in cells if self._cached(c) is None]
        teachers = sorted({(c.seed, c.train_domain, c.train_noise) for c in todo if c.method != METHOD_PLAIN})
        self._map(lambda t: self.teacher(*t), teachers)
        students = sorted({(c.method, c.seed, c.train_domain, c.train_noise)
                           for c in todo if c.method != METHOD_TEACHER})
        self._map(lambda s: self.student(*s), students)
        order = {(c.method, c.seed, c.condition): c.order for c in cells}
        table = ResultTable(RESULT_COLUMNS, self.config.hash,
                            sort_key=lambda r: (r['method'], order[(r['method'], r['seed'], r['condition'])],
                                                r['seed']))
        for row in self._map(self._evaluate_cell, cells):
            table.add({c: row[c] for c in RESULT_COLUMNS})
        return table

    def summarize(self, table):
        """Mean and std over seeds per (method, condition)."""
        groups = {}
        for row in table.rows:
            groups.setdefault((row['method'], row['condition']), []).append(row)
        ranks = {}
        for row in table.rows:
            ranks.setdefault((row['method'], row['condition']), len(ranks))
        summary = ResultTable(SUMMARY_COLUMNS, self.config.hash,
                              sort_key=lambda r: ranks[(r['method'], r['condition'])])
        for (method, condition), rows in groups.items():
            acc = np.array([r['accuracy'] for r in rows])
            summary.add({'method': method, 'condition': condition, 'seeds': len(rows),
                         'accuracy_mean': float(acc.mean()), 'accuracy_std': float(acc.std()),
                         'mean_score_mean': float(np.mean([r['mean_score'] for r in rows]))})
        return summary


############
# protocols
############
def _methods_cells(config, conditions, **cell_kwargs):
    cells = []
    for method in config.methods:
        for order, (label, noise) in enumerate(conditions):
            for seed in config.seeds:
                cells.append(Cell(method, seed, label, order, test_noise=noise, **cell_kwargs))
    return cells


def _finish(experiment, cells, report=None):
    table = experiment.run_cells(cells)
    return ProtocolResult(table, experiment.summarize(table), report or {})


def run_single_train(config, out_dir):
    """Train every method per seed and evaluate on the clean test set.

    :rtype: ProtocolResult
    """
    experiment = Experiment(config, out_dir).setup()
    return _finish(experiment, _methods_cells(config, [('clean', PERTURB_NONE)]))


def run_noise_sweep(config, out_dir):
    """Accuracy per method, SNR and seed with clean training.

    :rtype: ProtocolResult
    """
    experiment = Experiment(config, out_dir).setup()
    snrs = config.getlist('protocol', 'snrs', float)
    specs = [PerturbationSpec.parse('gaussian-snr:%r' % snr) for snr in snrs]
    result = _finish(experiment, _methods_cells(config, [(s.condition, s.to_text()) for s in specs]))
    indices = config.getlist('protocol', 'score_examples', int)
    if indices:
        test = experiment.datasets['source'][1]
        scores = []
        for method in config.methods:
            for seed in config.seeds:
                net = experiment.network(method, seed)
                for spec in [None] + [PerturbationSpec.parse(s.to_text(), seed=seed) for s in specs]:
                    probs = prediction_scores(net, test, indices, spec)
                    for index, vector in zip(indices, probs):
                        scores.append({'method': method, 'seed': seed,
                                       'condition': spec.condition if spec else 'clean',
                                       'index': index, 'label': int(test.labels[index]),
                                       'scores': [round_sig(v, FLOAT_DIGITS) for v in vector]})
        result.report['prediction_scores'] = scores
    return result


def run_cross_noise(config, out_dir):
    """Train per training noise, test per test noise.

    The robust student always trains on clean data.

    :rtype: ProtocolResult
    """
    experiment = Experiment(config, out_dir).setup()
    train_specs = config.perturbations('train_noise')
    test_specs = config.perturbations('test_noise')
    cells = []
    order = 0
    for train_spec in train_specs:
        for test_spec in test_specs:
            label = 'train=%s/test=%s' % (train_spec.condition, test_spec.condition)
            for method in config.methods:
                train_noise = PERTURB_NONE if method == METHOD_ROBUST else train_spec.to_text()
                for seed in config.seeds:
                    cells.append(Cell(method, seed, label, order, train_noise=train_noise,
                                      test_noise=test_spec.to_text()))
            order += 1
    return _finish(experiment, cells)


def _trend(summary, sizes):
    """Least-squares slope of mean accuracy against block size, per method."""
    trend = {}
    by_method = {}
    for row in summary.rows:
        by_method.setdefault(row['method'], {})[row['condition']] = row['accuracy_mean']
    for method, means in by_method.items():
        values = [means['block=%d' % b] for b in sizes]
        slope = float(np.polyfit(sizes, values, 1)[0]) if len(set(sizes)) > 1 else None
        monotone = all(b <= a for a, b in zip(values, values[1:]))
        trend[method] = {'slope': None if slope is None else round_sig(slope, FLOAT_DIGITS),
                         'non_increasing': monotone}
        logger.info('%s occlusion trend: slope %s, non-increasing %s', method, trend[method]['slope'], monotone)
    return trend


def run_occlusion_sweep(config, out_dir):
    """Accuracy per method and occluding block size.

    :rtype: ProtocolResult
    """
    experiment = Experiment(config, out_dir).setup()
    blocks = config.getlist('protocol', 'blocks', int)
    specs = [PerturbationSpec('occlusion', (b, b)) for b in blocks]
    result = _finish(experiment, _methods_cells(config, [(s.condition, s.to_text()) for s in specs]))
    result.report['trend'] = _trend(result.summary, blocks)
    return result


def run_domain_adapt(config, out_dir):
    """Train on the source domain, test on source and target (and back when bidirectional).

    :rtype: ProtocolResult
    """
    experiment = Experiment(config, out_dir).setup()
    pairs = [('source', 'source'), ('source', 'target')]
    if config.getboolean('target', 'bidirectional'):
        pairs += [('target', 'target'), ('target', 'source')]
    cells = []
    for order, (train, test) in enumerate(pairs):
        for method in config.methods:
            for seed in config.seeds:
                cells.append(Cell(method, seed, '%s->%s' % (train, test), order,
                                  train_domain=train, test_domain=test))
    return _finish(experiment, cells)


def _quantile(values, q):
    return values[int(round(q * (len(values) - 1)))]


def summarize_bounds(estimates):
    """Counts and quantiles of a list of BoundEstimate.

    Undefined estimates are counted, never dropped.

    :rtype: dict
    """
    defined = sorted(e.bound for e in estimates if e.defined)
    summary = {'n': len(estimates), 'undefined': len(estimates) - len(defined),
               'infinite': sum(1 for b in defined if math.isinf(b))}
    for name, q in (('bound_min', 0.0), ('bound_q25', 0.25), ('bound_median', 0.5),
                    ('bound_q75', 0.75), ('bound_max', 1.0)):
        summary[name] = _quantile(defined, q) if defined else None
    summary['undefined_rate'] = summary['undefined'] / float(len(estimates)) if estimates else 0.0
    return summary


def run_bound_report(config, out_dir):
    """Distribution of the perturbation bound of every student against its teacher.

    :rtype: ProtocolResult
    """
    experiment = Experiment(config, out_dir).setup()
    test = experiment.datasets['source'][1]
    n = min(config.getint('protocol', 'examples'), len(test))
    radius, norm = config.getfloat('protocol', 'radius'), config.getfloat('protocol', 'norm')
    samples = config.getint('protocol', 'samples')
    methods = [m for m in config.methods if m != METHOD_TEACHER]
    table = ResultTable(BOUND_COLUMNS, config.hash, sort_key=lambda r: (r['method'], r['seed']))
    report = {'estimates': []}

    def one(job):
        method, seed = job
        path = os.path.join(experiment.cells_dir, '%s.json' % experiment._key('bound', method, seed, n, radius,
                                                                              norm, samples))
        if os.path.exists(path):
            logger.info('skip finished bound cell %s seed %d', method, seed)
            with open(path) as f:
                return json.load(f)
        teacher, student = experiment.teacher(seed), experiment.student(method, seed)
        estimates = []
        for i in range(n):
            x = test.images.array[i]
            ball = BallSpec(x, radius, norm)
            estimates.append(perturbation_bound(student, teacher, x, int(test.labels[i]), ball, samples,
                                            derive_seed(seed, i)))
        row = {'method': method, 'seed': seed, 'samples': samples, 'radius': radius, 'norm': norm}
        row.update({k: v for k, v in summarize_bounds(estimates).items() if k != 'undefined_rate'})
        row['estimates'] = [e.as_dict() for e in estimates]
        _write_text(path, json.dumps(row, sort_keys=True))
        logger.info('%s seed %d: median bound %s, %d of %d undefined', method, seed, row['bound_median'],
                    row['undefined'], n)
        return row

    for row in experiment._map(one, [(m, s) for m in methods for s in config.seeds]):
        estimates = row.pop('estimates')
        for index, estimate in enumerate(estimates):
            estimate = dict(estimate, index=index, seed=row['seed'], method=row['method'])
            report['estimates'].append({k: ResultTable._json_value(v) for k, v in sorted(estimate.items())})
        table.add(row)
    return ProtocolResult(table, None, report)


PROTOCOL_RUNNERS = {
    PROTO_SINGLE: run_single_train,
    PROTO_NOISE: run_noise_sweep,
    PROTO_CROSS_NOISE: run_cross_noise,
    PROTO_OCCLUSION: run_occlusion_sweep,
    PROTO_DOMAIN: run_domain_adapt,
    PROTO_BOUND: run_bound_report,
}


def run_protocol(config, out_dir, fmt=None):
    """Validate, run the configured protocol and emit its files.

    :returns: the protocol result
    :rtype: ProtocolResult
    """
    config.validate()
    fmt = fmt or config.format
    logger.info('running %s (config %s) into %s', config.protocol, config.hash, out_dir)
    result = PROTOCOL_RUNNERS[config.protocol](config, out_dir)
    result.table.emit(os.path.join(out_dir, 'results'), fmt)
    if result.summary is not None:
        result.summary.emit(os.path.join(out_dir, 'summary'), fmt)
    if result.report:
        doc = dict(result.report, schema_version=RESULTS_SCHEMA_VERSION, config_hash=config.hash,
                   code_version=VERSION)
        _write_text(os.path.join(out_dir, 'report.json'), json.dumps(doc, indent=1, sort_keys=True) + '\n')
    return result


def arch_report(n_classes=None):
    """Size and cost of every preset student against its teacher.

    :rtype: ResultTable
    """
    table = ResultTable(ARCH_COLUMNS, sort_key=lambda r: r['student'])
    for student_name, teacher_name in ARCH_PAIRS:
        student = preset(student_name, n_classes)
        row = compare(student, preset(teacher_name, n_classes))
        row['reported_params'] = student.reported_params
        row['param_deviation'] = None
        if student.reported_params:
            row['param_deviation'] = abs(row['student_params'] - student.reported_params) / student.reported_params
        table.add(row)
    return table


def eval_checkpoint(config, path, perturbation, out_dir, fmt):
    """Evaluate a saved network on the configured test set, once per seed."""
    config.validate()
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise ResultTable.EmitError('cannot create %s: %s' % (out_dir, e))
    net = Network.load(path)
    experiment = Experiment(config, out_dir)
    experiment.datasets['source'] = experiment._load_source()
    test = experiment.datasets['source'][1]
    table = ResultTable(RESULT_COLUMNS, config.hash)
    for seed in config.seeds:
        spec = None if perturbation == PERTURB_NONE else PerturbationSpec.parse(perturbation, seed=seed)
        metrics = evaluate(net, test, spec)
        table.add({'method': net.role, 'seed': seed, 'condition': metrics.condition,
                   'accuracy': metrics.accuracy, 'mean_score': metrics.mean_score})
    table.emit(os.path.join(out_dir, 'results'), fmt)
    return table


######
# CLI
######
def _arg_parser():
    parser = argparse.ArgumentParser(prog='robust-student',
                                     description='Robust student knowledge distillation experiments.')
    parser.add_argument('verb', choices=sorted(VERBS), help='what to run')
    parser.add_argument('--config', help='experiment config file')
    parser.add_argument('--out', default='results', help='output directory (default: results)')
    parser.add_argument('--seeds', help='comma separated seeds (overrides the config)')
    parser.add_argument('--preset', choices=sorted(PRESETS), help='desk-scale preset config')
    parser.add_argument('--format', choices=('csv', 'json'), help='result file format')
    parser.add_argument('--workers', type=int, help='parallel cells (overrides the config)')
    parser.add_argument('--checkpoint', help='network checkpoint (eval)')
    parser.add_argument('--perturb', default=PERTURB_NONE, help='test perturbation for eval, e.g. gaussian-snr:5')
    parser.add_argument('--classes', type=int, help='class count of arch-report presets')
    parser.add_argument('--verbose', action='store_true', help='debug logging')
    return parser


def _run(args):
    if args.verb == 'arch-report':
        os.makedirs(args.out, exist_ok=True)
        arch_report(args.classes).emit(os.path.join(args.out, 'arch'), args.format or 'csv')
        return EXIT_OK
    overrides = {'experiment': {}}
    if args.seeds is not None:
        overrides['experiment']['seeds'] = args.seeds
    if args.workers is not None:
        overrides['experiment']['workers'] = args.workers
    if args.format is not None:
        overrides['experiment']['format'] = args.format
    if VERBS[args.verb] is not None:
        overrides['experiment']['protocol'] = VERBS[args.verb]
    config = ExperimentConfig.load(args.preset, args.config, overrides)
    if args.verb == 'eval':
        if not args.checkpoint:
            raise ExperimentConfig.ConfigError('eval needs --checkpoint')
        try:
            PerturbationSpec.parse(args.perturb)
        except PerturbationSpec.Error as e:
            raise ExperimentConfig.ConfigError('--perturb %s: %s' % (args.perturb, e))
        eval_checkpoint(config, args.checkpoint, args.perturb, args.out, config.format)
        return EXIT_OK
    run_protocol(config, args.out)
    return EXIT_OK


def main(argv=None):
    """Command line entry point.

    :returns: exit code (0 success, 1 input/output error, 2 config error, 3 numeric abort)
    :rtype: int
    """
    args = _arg_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        return _run(args)
    except (ExperimentConfig.Error, PerturbationSpec.Error, Network.Error, Dataset.Error,
            Trainer.ClassCountError) as e:
        logger.error('%s: %s', EXIT_TXT[EXIT_CONFIG_ERR], e)
        return EXIT_CONFIG_ERR
    except (Trainer.NumericError, Tensor.NonFiniteError) as e:
        logger.error('%s: %s', EXIT_TXT[EXIT_NUMERIC_ERR], e)
        return EXIT_NUMERIC_ERR
    except (ResultTable.EmitError, OSError) as e:
        logger.error('%s: %s', EXIT_TXT[EXIT_IO_ERR], e)
        return EXIT_IO_ERR
