"""
Run Configuration Module

`RunConfig` is built from a flat key-value text file with dotted sections:

    # CLFD with experience replay
    strategy.kind = ER
    buffer.capacity = 50
    cffs.lambda = 0.5
    data.tasks = 0,1;2,3;4,5;6,7;8,9

Blank lines and `#` comments are ignored. Unknown keys are rejected with the
line number and the closest known key. Values take the type of the field's
default. `CLFD_OUT` in the environment overrides `output.root`.
"""

import difflib
import hashlib
import logging
import os
from dataclasses import dataclass, field, fields

from backbone import ARCHITECTURES
from benchmark_data import SplitSpec
from errors import ConfigError
from frequency_encoder import INPUT_MODES
from rehearsal_strategies import STRATEGY_KINDS

logger = logging.getLogger(__name__)

# spelling accepted in files for fields whose name is a Python keyword
ALIASES = {'cffs.lambda': 'cffs.lam'}
_SPELLING = {field_key: file_key for file_key, field_key in ALIASES.items()}
STEP_LOG_MODES = ('off', 'digest', 'full')
_TRUE = {'true', 'yes', 'on', '1'}
_FALSE = {'false', 'no', 'off', '0'}


@dataclass
class DataSection:
    format: str = 'cifar_binary'
    path: str = 'data/cifar-10-batches-bin'
    tasks: str = ''
    classes_per_task: int = 2
    limit_per_class: int = 0
    test_limit_per_class: int = 0
    test_fraction: float = 0.2
    mean: list = field(default_factory=list, metadata={'item': float})
    std: list = field(default_factory=list, metadata={'item': float})


@dataclass
class ModelSection:
    arch: str = 'desk'


@dataclass
class StrategySection:
    kind: str = 'ER'


@dataclass
class DerppSection:
    alpha: float = 0.1
    beta: float = 0.5
    single_draw: bool = False


@dataclass
class BufferSection:
    capacity: int = 500
    quantize: bool = False


@dataclass
class FfeSection:
    enabled: bool = True
    input_mode: str = 'ffe'
    bias: bool = True


@dataclass
class CffsSection:
    enabled: bool = True
    lam: float = 0.5
    beta: float = 2.0
    epoch_fraction: float = 0.4
    selection_fraction: float = 0.6
    compare_scope: str = 'all'
    alpha_min: float = 1e-3
    alpha_max: float = 1e3


@dataclass
class OptimSection:
    lr: float = 0.1
    momentum: float = 0.0
    epochs: int = 5
    batch_size: int = 32
    replay_batch: int = 32
    clip: float = 0.0


@dataclass
class AugmentSection:
    enabled: bool = True
    flip_encoded: bool = True


@dataclass
class LoopSection:
    joint: bool = False
    step_log: str = 'off'


@dataclass
class MetricsSection:
    ff_clip: bool = False


@dataclass
class RunSection:
    name: str = ''
    seed: int = 1
    seeds: list = field(default_factory=list, metadata={'item': int})


@dataclass
class OutputSection:
    root: str = 'runs'


@dataclass
class RunConfig:
    """Complete, typed description of one experiment."""

    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    strategy: StrategySection = field(default_factory=StrategySection)
    derpp: DerppSection = field(default_factory=DerppSection)
    buffer: BufferSection = field(default_factory=BufferSection)
    ffe: FfeSection = field(default_factory=FfeSection)
    cffs: CffsSection = field(default_factory=CffsSection)
    optim: OptimSection = field(default_factory=OptimSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    loop: LoopSection = field(default_factory=LoopSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    run: RunSection = field(default_factory=RunSection)
    output: OutputSection = field(default_factory=OutputSection)

    @property
    def input_mode(self):
        """Encoder input mode after the `ffe.enabled` switch."""
        return self.ffe.input_mode if self.ffe.enabled else 'spatial'

    @property
    def run_name(self):
        if self.run.name:
            return self.run.name
        tag = 'CLFD-' if self.input_mode == 'ffe' and self.cffs.enabled else ''
        return f"{tag}{self.strategy.kind}" + ('-JOINT' if self.loop.joint else '')

    def items(self):
        """(dotted key, value) pairs in declaration order."""
        for section in fields(self):
            group = getattr(self, section.name)
            for item in fields(group):
                yield f"{section.name}.{item.name}", getattr(group, item.name)

    def to_text(self):
        lines = []
        for key, value in self.items():
            if isinstance(value, list):
                value = ','.join(str(v) for v in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{_SPELLING.get(key, key)} = {value}")
        return '\n'.join(lines) + '\n'

    def digest(self):
        """sha256 of the canonical text form, ignoring the output location."""
        text = '\n'.join(line for line in self.to_text().splitlines()
                         if not line.startswith('output.'))
        return hashlib.sha256(text.encode('utf-8')).hexdigest()

    def set(self, key, raw, line=None):
        """Assign a dotted key from its text form."""
        key = ALIASES.get(key, key)
        known = [k for k, _ in self.items()]
        if key not in known:
            close = difflib.get_close_matches(key, [_SPELLING.get(k, k) for k in known], n=1)
            raise ConfigError(f"unknown key '{key}'", key=key, line=line,
                              suggestion=close[0] if close else None)
        section, name = key.split('.', 1)
        group = getattr(self, section)
        spec = next(f for f in fields(group) if f.name == name)
        setattr(group, name, _coerce(key, raw, getattr(group, name), spec.metadata.get('item'), line))


def _coerce(key, raw, current, item_type, line):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, list):
            return [item_type(v) for v in raw.split(',') if v.strip()]
    except ValueError:
        kind = 'list' if isinstance(current, list) else type(current).__name__
        raise ConfigError(f"'{raw}' is not a valid {kind} for {key}", key=key, line=line) from None
    return raw


def parse_lines(lines, config=None, errors=None):
    """
    Apply `key = value` lines to a config.

    With an `errors` list, problems are collected there instead of raised.
    """
    config = config or RunConfig()
    for number, text in enumerate(lines, 1):
        text = text.split('#', 1)[0].strip()
        if not text:
            continue
        try:
            if '=' not in text:
                raise ConfigError(f"expected 'key = value', got '{text}'", line=number)
            key, value = text.split('=', 1)
            config.set(key.strip(), value, line=number)
        except ConfigError as e:
            if errors is None:
                raise
            errors.append(e)
    return config


def check(config):
    """Semantic validation; returns a list of ConfigError."""
    problems = []

    def require(condition, key, message):
        if not condition:
            problems.append(ConfigError(message, key=key))

    kind = config.strategy.kind.upper().replace('+', 'P').replace('-', '')
    require(kind in STRATEGY_KINDS and kind != 'CLSER', 'strategy.kind',
            f"unsupported strategy '{config.strategy.kind}'")
    require(config.data.format in ('cifar_binary', 'image_dir'), 'data.format',
            f"unknown dataset format '{config.data.format}'")
    require(config.data.classes_per_task >= 1, 'data.classes_per_task', "must be at least 1")
    require(0.0 <= config.data.test_fraction < 1.0, 'data.test_fraction', "must lie in [0, 1)")
    require(len(config.data.mean) == len(config.data.std), 'data.std',
            "data.mean and data.std must have the same length")
    require(config.model.arch in ARCHITECTURES, 'model.arch', f"unknown architecture '{config.model.arch}'")
    require(config.derpp.alpha >= 0 and config.derpp.beta >= 0, 'derpp.alpha', "weights must be non-negative")
    require(config.buffer.capacity >= 0, 'buffer.capacity', "must be non-negative")
    require(config.ffe.input_mode in INPUT_MODES, 'ffe.input_mode',
            f"unknown input mode '{config.ffe.input_mode}'")
    require(0.0 <= config.cffs.lam <= 1.0, 'cffs.lambda', "must lie in [0, 1]")
    require(config.cffs.beta > 0, 'cffs.beta', "must be positive")
    require(0.0 <= config.cffs.epoch_fraction <= 1.0, 'cffs.epoch_fraction', "must lie in [0, 1]")
    require(0.0 < config.cffs.selection_fraction <= 1.0, 'cffs.selection_fraction', "must lie in (0, 1]")
    require(config.cffs.compare_scope in ('all', 'last'), 'cffs.compare_scope', "must be 'all' or 'last'")
    require(0 < config.cffs.alpha_min <= config.cffs.alpha_max, 'cffs.alpha_min',
            "need 0 < alpha_min <= alpha_max")
    require(config.optim.lr > 0, 'optim.lr', "must be positive")
    require(config.optim.momentum >= 0, 'optim.momentum', "must be non-negative")
    require(config.optim.epochs >= 1, 'optim.epochs', "must be at least 1")
    require(config.optim.batch_size >= 1, 'optim.batch_size', "must be at least 1")
    require(config.optim.replay_batch >= 1, 'optim.replay_batch', "must be at least 1")
    require(config.optim.clip >= 0, 'optim.clip', "must be non-negative (0 disables clipping)")
    require(config.loop.step_log in STEP_LOG_MODES, 'loop.step_log', f"must be one of {STEP_LOG_MODES}")
    if kind != 'SGD' and kind in STRATEGY_KINDS:
        require(config.buffer.capacity > 0 or config.loop.joint, 'buffer.capacity',
                f"strategy {kind} needs a positive buffer capacity")
    if config.data.tasks:
        try:
            SplitSpec.parse(config.data.tasks)
        except ConfigError as e:
            problems.append(e)
    return problems


def _read(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding='utf-8') as f:
        return f.read().splitlines()


def load_config(path=None, overrides=()):
    """
    Build and validate a RunConfig.

    Args:
        path (str, optional): Config file; defaults are used when None.
        overrides (iterable): Extra `key=value` strings applied after the file.

    Returns:
        RunConfig: Validated configuration.

    Raises:
        ConfigError: On the first parse or validation problem.
    """
    config = parse_lines(_read(path)) if path else RunConfig()
    for override in overrides:
        if '=' not in override:
            raise ConfigError(f"override '{override}' must look like key=value")
        key, value = override.split('=', 1)
        config.set(key.strip(), value)
    if os.environ.get('CLFD_OUT'):
        config.output.root = os.environ['CLFD_OUT']
    problems = check(config)
    if problems:
        raise problems[0]
    logger.info(f"Loaded config {path or '<defaults>'} (digest {config.digest()[:12]})")
    return config


def validate_config(path):
    """Every parse and validation diagnostic for a config file, as a list."""
    errors = []
    config = parse_lines(_read(path), errors=errors)
    return errors + check(config)
