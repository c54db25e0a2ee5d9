"""
Training Loop Module

Runs the continual-learning protocol over a task stream: per-epoch dropout
regime switching, mask application, selection counting, reservoir buffer
maintenance, encoder freezing, and Class-IL / Task-IL evaluation.

Within task t with K epochs, the first floor(0.4 * K) epochs use frequency
dropout (from task 2 on; task 1 trains without dropout there) and the
remaining epochs use semantic dropout. Frequency keep-probabilities are
rebuilt at the end of epoch 1, semantic ones at the end of every epoch.
"""

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from backbone import BackboneConfig, ContinualClassifier, load_checkpoint, save_checkpoint
from benchmark_data import DatasetSource, SplitSpec, Task, TaskStream, augment_batch, load, split_tasks
from errors import MissingArtifactError, NonFiniteLossError, PreconditionError, TaskOrderError
from feature_selection import FeatureSelector, SelectionCounter
from frequency_encoder import FrequencyEncoder, build_input_encoder, load_weights, save_weights
from metrics import (AccuracyMatrix, EfficiencyReport, activation_bytes_estimate, average_accuracy,
                     final_forgetting, flops_for_examples, peak_memory_bytes, stability_plasticity)
from rehearsal_strategies import RehearsalStrategy, StrategyConfig
from replay_buffer import ReservoirBuffer
from wavelet_transform import ll_flat

logger = logging.getLogger(__name__)

__all__ = ['Task', 'TaskStream', 'TrainState', 'ContinualTrainer', 'RunResult',
           'regime_for', 'frequency_epochs', 'run_sequence', 'replay_counter', 'restore_trainer']

RNG_STREAMS = ('data', 'augment', 'dropout', 'buffer', 'replay')
EVAL_MODES = ('class_il', 'task_il')
RESULTS_HEADER = '# clfd-results v1'
SUMMARY_HEADER = '# clfd-summary v1'
EVAL_BATCH = 256


def frequency_epochs(epochs, fraction=0.4):
    """Number of leading epochs in the frequency regime, floor(fraction * K)."""
    return int(math.floor(fraction * epochs + 1e-9))


def regime_for(task_id, epoch, epochs, fraction=0.4):
    """Dropout regime of a (1-based) task and epoch."""
    if epoch <= frequency_epochs(epochs, fraction):
        return 'frequency' if task_id > 1 else 'none'
    return 'semantic'


def mask_digest(mask):
    """sha256 of a boolean mask packed to bits."""
    return hashlib.sha256(np.packbits(np.asarray(mask, dtype=bool)).tobytes()).hexdigest()


@dataclass
class TrainState:
    """Loop position, random streams and per-task bookkeeping."""

    seed: int
    task_id: int = 0
    epoch: int = 0
    step: int = 0
    seen_classes: list = field(default_factory=list)
    encoder_digests: list = field(default_factory=list)
    wall_time_per_task: list = field(default_factory=list)
    steps_per_task: list = field(default_factory=list)
    examples_processed: int = 0
    rngs: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.rngs:
            children = np.random.SeedSequence(self.seed).spawn(len(RNG_STREAMS))
            self.rngs = {name: np.random.default_rng(child) for name, child in zip(RNG_STREAMS, children)}

    def to_dict(self):
        return {
            'seed': self.seed,
            'task_id': self.task_id,
            'epoch': self.epoch,
            'step': self.step,
            'seen_classes': list(self.seen_classes),
            'encoder_digests': list(self.encoder_digests),
            'examples_processed': self.examples_processed,
            'rng_states': {name: rng.bit_generator.state for name, rng in self.rngs.items()},
        }


class ContinualTrainer:
    """
    Owns the encoder, backbone, selector, buffer and strategy for one run.
    """

    def __init__(self, config, num_classes, image_shape, seed, out_dir=None, progress=False):
        """
        Args:
            config (RunConfig): Validated run configuration.
            num_classes (int): Total classes across the stream.
            image_shape (tuple): Raw image shape (C, H, W).
            seed (int): Run seed.
            out_dir (str, optional): Directory for step logs and NaN dumps.
            progress (bool): Show tqdm progress bars.
        """
        self.config = config
        self.num_classes = num_classes
        self.out_dir = out_dir
        self.progress = progress
        self.state = TrainState(seed=seed)

        torch.manual_seed(seed)
        self.encoder = build_input_encoder(config.input_mode, config.ffe.bias)
        c, h, w = image_shape
        self.input_shape = (c, h // 2, w // 2) if self.encoder.downsamples else (c, h, w)
        self.space = 'encoded' if self.encoder.downsamples else 'pixel'
        self.model = ContinualClassifier(BackboneConfig(config.model.arch, self.input_shape, num_classes))

        self.strategy = RehearsalStrategy(StrategyConfig(
            kind=config.strategy.kind, alpha=config.derpp.alpha, beta=config.derpp.beta,
            replay_batch=config.optim.replay_batch, single_draw=config.derpp.single_draw,
        ))
        self.buffer = None
        if self.strategy.config.uses_buffer and config.buffer.capacity > 0:
            self.buffer = ReservoirBuffer(config.buffer.capacity, quantize=config.buffer.quantize)

        self.selector = FeatureSelector(
            num_classes=num_classes,
            num_features=self.model.feature_dim,
            signature_dim=c * (h // 2) * (w // 2),
            lam=config.cffs.lam,
            beta=config.cffs.beta,
            selection_fraction=config.cffs.selection_fraction,
            compare_scope=config.cffs.compare_scope,
            alpha_min=config.cffs.alpha_min,
            alpha_max=config.cffs.alpha_max,
            enabled=config.cffs.enabled,
        )
        self.previous_task_classes = []
        self._last_task_classes = None
        self._step_log = None

    def _trainable_parameters(self):
        params = list(self.model.parameters())
        params += [p for p in self.encoder.parameters() if p.requires_grad]
        return params

    def _optimizer(self):
        return torch.optim.SGD(self._trainable_parameters(), lr=self.config.optim.lr,
                               momentum=self.config.optim.momentum)

    def _log_step(self, record):
        if self.config.loop.step_log == 'off' or not self.out_dir:
            return
        if self._step_log is None:
            self._step_log = open(os.path.join(self.out_dir, 'steps.jsonl'), 'w', encoding='utf-8')
        self._step_log.write(json.dumps(record) + '\n')

    def close(self):
        if self._step_log is not None:
            self._step_log.close()
            self._step_log = None

    def _mask_record(self, labels, masks):
        masks = masks.cpu().numpy()
        record = {'digest': mask_digest(masks), 'selected': masks.sum(axis=1).tolist()}
        if self.config.loop.step_log == 'full':
            record['labels'] = [int(v) for v in labels]
            record['masks'] = [np.flatnonzero(row).tolist() for row in masks]
        return record

    def _dump_state(self, loss_value):
        path = os.path.join(self.out_dir or '.', f"nan_dump_task{self.state.task_id}_step{self.state.step}.json")
        dump = self.state.to_dict()
        dump['loss'] = loss_value
        dump['param_norms'] = {name: float(p.detach().norm()) for name, p in self.model.named_parameters()}
        dump['counter_total'] = int(self.selector.counter.counts.sum())
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(dump, f, indent=2)
        logger.error(f"Non-finite loss at task {self.state.task_id} step {self.state.step}; state dumped to {path}")
        return path

    def _replay(self, regime):
        """Draw the strategy's replay batches and run them through the backbone."""
        rngs = self.state.rngs
        draws = []
        if self.buffer is None or self.buffer.is_empty():
            return draws
        for _ in range(self.strategy.config.replay_draws):
            entries = self.buffer.sample_batch(self.config.optim.replay_batch, rngs['replay'])
            maps, labels, _, stored = self.buffer.stacked(entries)
            inputs = torch.from_numpy(maps)
            if self.config.augment.enabled:
                inputs = augment_batch(inputs, self.space, rngs['augment'], self.config.augment.flip_encoded)
            features = self.model.extract(inputs)
            masks = self.selector.training_masks(features, labels, regime, rngs['dropout'])
            logits = self.model.classify(features, masks)
            draws.append((logits, torch.from_numpy(labels),
                          None if stored is None else torch.from_numpy(stored), masks))
        return draws

    def _train_step(self, images, labels, regime, epoch, optimizer, task):
        rngs = self.state.rngs
        x = torch.from_numpy(images)
        y = torch.from_numpy(labels)
        if epoch == 1 and self.selector.enabled:
            self.selector.observe_signatures(ll_flat(x).numpy(), labels)

        pixels = augment_batch(x, 'pixel', rngs['augment']) if self.config.augment.enabled else x
        features = self.model.extract(self.encoder(pixels))
        masks = self.selector.training_masks(features, labels, regime, rngs['dropout'])
        logits = self.model.classify(features, masks)

        draws = self._replay(regime)
        loss = self.strategy.compute_loss(
            logits, y,
            replay=[(lg, lb, st) for lg, lb, st, _ in draws],
            seen_classes=self.previous_task_classes + list(task.classes),
            batch_classes=np.unique(labels).tolist(),
            previous_classes=list(self.previous_task_classes),
        )
        if not torch.isfinite(loss):
            raise NonFiniteLossError("training loss is not finite", dump_path=self._dump_state(float(loss)))

        optimizer.zero_grad()
        loss.backward()
        if self.config.optim.clip > 0:
            torch.nn.utils.clip_grad_norm_(self._trainable_parameters(), self.config.optim.clip)
        optimizer.step()

        self.selector.record(labels, masks)
        for _, replay_labels, _, replay_masks in draws:
            self.selector.record(replay_labels.numpy(), replay_masks)

        if self.buffer is not None:
            with torch.no_grad():
                maps = self.encoder(x).numpy()
            stored = logits.detach().numpy() if self.strategy.config.stores_logits else None
            self.buffer.add_batch(maps, labels, task.task_id, rngs['buffer'], logits=stored)

        examples = len(labels) + sum(len(d[1]) for d in draws)
        self.state.examples_processed += examples
        self.state.step += 1
        if self.config.loop.step_log != 'off':
            record = {'task': task.task_id, 'epoch': epoch, 'step': self.state.step, 'regime': regime,
                      'loss': float(loss), 'fresh': self._mask_record(labels, masks)}
            record['replay'] = [self._mask_record(lb.numpy(), mk) for _, lb, _, mk in draws]
            self._log_step(record)
        else:
            logger.debug(f"step {self.state.step} [{regime}] mask {mask_digest(masks.cpu().numpy())[:12]}")
        return float(loss)

    def train_task(self, task, epochs):
        """
        Train one task for `epochs` epochs.

        Raises:
            TaskOrderError: If the task id is not the next one in order.
            NonFiniteLossError: If the loss becomes NaN or infinite.
        """
        if task.task_id != self.state.task_id + 1:
            raise TaskOrderError(f"expected task {self.state.task_id + 1}, got task {task.task_id}")
        if len(task.train_labels) == 0:
            raise PreconditionError(f"task {task.task_id} has no training samples")
        state = self.state
        state.task_id = task.task_id
        self.selector.register_task(task.classes)
        batch_size = self.config.optim.batch_size
        optimizer = self._optimizer()
        self.model.train()
        self.encoder.train()

        logger.info(f"Task {task.task_id}: classes {list(task.classes)}, "
                    f"{len(task.train_labels)} samples, {epochs} epochs")
        steps_before = state.step
        started = time.perf_counter()
        for epoch in range(1, epochs + 1):
            state.epoch = epoch
            regime = regime_for(task.task_id, epoch, epochs, self.config.cffs.epoch_fraction)
            order = state.rngs['data'].permutation(len(task.train_labels))
            batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
            losses = []
            for idx in tqdm(batches, desc=f"task {task.task_id} epoch {epoch}",
                            leave=False, disable=not self.progress):
                losses.append(self._train_step(task.train_images[idx], task.train_labels[idx],
                                               regime, epoch, optimizer, task))

            if self.selector.enabled:
                if epoch == 1 and task.task_id >= 2:
                    self.selector.rebuild_frequency(list(task.classes), self.previous_task_classes,
                                                    last_task_classes=self._last_task_classes)
                self.selector.rebuild_semantic()
            logger.info(f"Task {task.task_id} epoch {epoch}/{epochs} [{regime}] loss {np.mean(losses):.4f}")

        state.wall_time_per_task.append(time.perf_counter() - started)
        state.steps_per_task.append(state.step - steps_before)
        if task.task_id == 1:
            self.encoder.freeze()
        state.encoder_digests.append(self.encoder.digest())
        self._last_task_classes = list(task.classes)
        self.previous_task_classes += list(task.classes)
        state.seen_classes = list(self.previous_task_classes)
        return state

    def predict_logits(self, images):
        """Evaluation logits (top-k selection, no dropout) and the masks used."""
        self.model.eval()
        self.encoder.eval()
        logits, masks = [], []
        with torch.no_grad():
            for start in range(0, len(images), EVAL_BATCH):
                x = torch.from_numpy(images[start:start + EVAL_BATCH])
                features = self.model.extract(self.encoder(x))
                mask = self.selector.evaluation_masks(features)
                logits.append(self.model.classify(features, mask))
                masks.append(mask)
        self.model.train()
        self.encoder.train()
        if not logits:
            return torch.zeros((0, self.num_classes)), torch.zeros((0, self.model.feature_dim), dtype=torch.bool)
        return torch.cat(logits), torch.cat(masks)

    def evaluate(self, tasks, mode='class_il'):
        """
        Accuracy on each task of `tasks` (the tasks seen so far).

        class_il takes the argmax over every seen class; task_il restricts
        it to the classes of the sample's own task.

        Returns:
            list: One accuracy in [0, 1] per task.
        """
        if mode not in EVAL_MODES:
            raise ValueError(f"unknown evaluation mode '{mode}'")
        if self.state.task_id == 0:
            raise PreconditionError("evaluate needs at least one trained task")
        seen = [c for task in tasks for c in task.classes]
        row = []
        for task in tasks:
            logits, masks = self.predict_logits(task.test_images)
            if len(task.test_labels) == 0:
                logger.warning(f"Task {task.task_id} has no test samples; accuracy reported as 0")
                row.append(0.0)
                continue
            allowed = seen if mode == 'class_il' else list(task.classes)
            keep = torch.zeros(self.num_classes, dtype=torch.bool)
            keep[allowed] = True
            predictions = logits.masked_fill(~keep, float('-inf')).argmax(dim=1).numpy()
            row.append(float(np.mean(predictions == task.test_labels)))
            if self.config.loop.step_log != 'off':
                self._log_step({'eval': mode, 'after_task': self.state.task_id, 'task': task.task_id,
                                'selected': sorted(set(masks.sum(dim=1).tolist()))})
        return row


def replay_counter(trainer, images, labels):
    """
    Selection counts of evaluation passes over `images`, on a fresh counter.

    The trainer's own counter and schedule are left untouched.
    """
    counter = SelectionCounter(trainer.num_classes, trainer.model.feature_dim)
    counter.register(sorted(set(int(c) for c in labels)))
    _, masks = trainer.predict_logits(images)
    counter.update_batch(np.asarray(labels), masks.numpy())
    return counter


@dataclass
class RunResult:
    """Outcome of run_sequence."""

    run_id: str
    seed: int
    class_il: AccuracyMatrix
    task_il: AccuracyMatrix
    efficiency: EfficiencyReport
    summary: dict
    out_dir: str = None
    artifacts: dict = field(default_factory=dict)
    trainer: object = None


def restore_trainer(config, run_dir, num_classes, image_shape, seed):
    """
    Rebuild a trainer for inference from a run directory's model checkpoint
    and encoder weights.

    Raises:
        MissingArtifactError: If the checkpoint (or, for the learned encoder,
            its weights) is absent.
    """
    trainer = ContinualTrainer(config, num_classes, image_shape, seed)
    model_path = os.path.join(run_dir, 'model.ckpt')
    if not os.path.exists(model_path):
        raise MissingArtifactError(f"missing artifact: {model_path}")
    trainer.model = load_checkpoint(model_path)
    if isinstance(trainer.encoder, FrequencyEncoder):
        encoder_path = os.path.join(run_dir, 'encoder.bin')
        if not os.path.exists(encoder_path):
            raise MissingArtifactError(f"missing artifact: {encoder_path}")
        trainer.encoder.load_weights(load_weights(encoder_path))
    trainer.model.eval()
    return trainer


def build_stream(config, dataset, seed):
    """Split a loaded dataset into the configured task stream."""
    if config.loop.joint:
        spec = SplitSpec.joint(dataset.num_classes)
    elif config.data.tasks:
        spec = SplitSpec.parse(config.data.tasks)
    else:
        spec = SplitSpec.default(dataset.num_classes, config.data.classes_per_task)
    return split_tasks(dataset, spec, seed=seed, epochs=config.optim.epochs)


def dataset_source(config):
    return DatasetSource(
        format=config.data.format, path=config.data.path,
        mean=tuple(config.data.mean) or None, std=tuple(config.data.std) or None,
        test_fraction=config.data.test_fraction,
        limit_per_class=config.data.limit_per_class,
        test_limit_per_class=config.data.test_limit_per_class,
    )


def _summary(run_id, class_il, T, efficiency, ff_clip):
    acc = average_accuracy(class_il, T)
    if T >= 2:
        ff = final_forgetting(class_il, T, clip=ff_clip)
        S, P, tradeoff = stability_plasticity(class_il, T)
    else:
        ff = S = tradeoff = float('nan')
        P = float(class_il.R[0, 0])
    return {
        'run_id': run_id, 'acc_final': acc, 'ff_final': ff, 'S': S, 'P': P, 'tradeoff': tradeoff,
        'flops': efficiency.flops_total, 'wall_s': efficiency.wall_time_total,
        'peak_mem_b': efficiency.peak_memory_bytes,
    }


def _write_csv(path, header, frame):
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(header + '\n')
        frame.to_csv(f, index=False)


def result_rows(run_id, seed, matrices, ff_clip=False):
    """Long-format result rows: per-task accuracy cells, ACC and FF per mode."""
    rows = []
    for mode, matrix in matrices.items():
        for t in range(1, matrix.completed_rows + 1):
            for tau, value in enumerate(matrix.row(t), 1):
                rows.append((run_id, seed, t, f"{mode}.R{tau}", value))
            rows.append((run_id, seed, t, f"{mode}.acc", average_accuracy(matrix, t)))
            if t >= 2:
                rows.append((run_id, seed, t, f"{mode}.ff", final_forgetting(matrix, t, clip=ff_clip)))
    return pd.DataFrame(rows, columns=['run_id', 'seed', 'task', 'metric', 'value'])


def write_metadata(path, config, result, trainer):
    lines = [
        f"run_id = {result.run_id}",
        f"seed = {result.seed}",
        f"config_digest = {config.digest()}",
        f"input_mode = {config.input_mode}",
        f"regime_epochs_frequency = {frequency_epochs(config.optim.epochs, config.cffs.epoch_fraction)}",
        f"selection_k = {trainer.selector.k}",
        f"feature_dim = {trainer.model.feature_dim}",
        f"backbone_input_shape = {','.join(str(v) for v in trainer.input_shape)}",
        f"rng_streams = {','.join(RNG_STREAMS)}",
        f"peak_memory_estimated = {str(result.efficiency.peak_memory_estimated).lower()}",
        f"buffer_bytes = {result.efficiency.buffer_bytes}",
        f"seconds_per_step = {result.efficiency.seconds_per_step:.6f}",
        f"wall_s_total = {result.efficiency.wall_time_total:.6f}",
        "flops_note = training FLOPs = 3 x analytic forward FLOPs x examples processed",
        f"host = {result.efficiency.host}",
    ]
    lines += [f"encoder_digest.task{i} = {d}" for i, d in enumerate(trainer.state.encoder_digests, 1)]
    lines += [f"wall_s.task{i} = {s:.6f}" for i, s in enumerate(result.efficiency.wall_time_per_task, 1)]
    lines += [f"steps.task{i} = {n}" for i, n in enumerate(result.efficiency.steps_per_task, 1)]
    lines.append('')
    lines.append('# configuration')
    with open(path, 'w', encoding='utf-8') as f:
        f.write('\n'.join(lines) + '\n' + config.to_text())


def write_artifacts(config, result, trainer):
    """Write every run artifact into result.out_dir and return their paths."""
    out = result.out_dir
    paths = {name: os.path.join(out, filename) for name, filename in (
        ('results', 'results.csv'), ('summary', 'summary.csv'), ('counter', 'counter.csv'),
        ('schedule', 'schedule.csv'), ('metadata', 'metadata.txt'), ('model', 'model.ckpt'),
        ('efficiency', 'efficiency.json'))}

    matrices = {'class_il': result.class_il, 'task_il': result.task_il}
    _write_csv(paths['results'], RESULTS_HEADER,
               result_rows(result.run_id, result.seed, matrices, config.metrics.ff_clip))
    _write_csv(paths['summary'], SUMMARY_HEADER, pd.DataFrame([result.summary]))
    trainer.selector.counter.export_csv(paths['counter'])
    trainer.selector.schedule.export_csv(paths['schedule'], trainer.selector.counter.classes)
    save_checkpoint(trainer.model, paths['model'])
    if trainer.buffer is not None:
        paths['buffer'] = os.path.join(out, 'buffer.bin')
        trainer.buffer.save(paths['buffer'])
    if isinstance(trainer.encoder, FrequencyEncoder):
        paths['encoder'] = os.path.join(out, 'encoder.bin')
        save_weights(trainer.encoder, paths['encoder'])
    write_metadata(paths['metadata'], config, result, trainer)
    with open(paths['efficiency'], 'w', encoding='utf-8') as f:
        json.dump(result.efficiency.to_dict(), f, indent=2)
    if config.loop.step_log != 'off':
        paths['steps'] = os.path.join(out, 'steps.jsonl')
    logger.info(f"Artifacts for {result.run_id} written to {out}")
    return paths


def run_sequence(config, seed=None, dataset=None, progress=False):
    """
    Train every task in order, evaluating all seen tasks after each one.

    Args:
        config (RunConfig): Validated configuration.
        seed (int, optional): Overrides config.run.seed.
        dataset (LabeledImageSet, optional): Pre-loaded data; loaded from
            the configured source when omitted.
        progress (bool): Show progress bars.

    Returns:
        RunResult: Accuracy matrices, efficiency report and artifact paths.
    """
    seed = config.run.seed if seed is None else seed
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True, warn_only=True)

    if dataset is None:
        dataset = load(dataset_source(config), seed=seed)
    stream = build_stream(config, dataset, seed)
    run_id = f"{config.run_name}-s{seed}-{config.digest()[:8]}"
    out_dir = os.path.join(config.output.root, run_id)
    os.makedirs(out_dir, exist_ok=True)

    trainer = ContinualTrainer(config, dataset.num_classes, dataset.image_shape, seed, out_dir, progress)
    T = len(stream)
    class_il, task_il = AccuracyMatrix(T), AccuracyMatrix(T)
    try:
        for task, epochs in zip(stream.tasks, stream.epochs):
            trainer.train_task(task, epochs)
            seen_tasks = stream.tasks[:task.task_id]
            class_il.set_row(task.task_id, trainer.evaluate(seen_tasks, 'class_il'))
            task_il.set_row(task.task_id, trainer.evaluate(seen_tasks, 'task_il'))
            logger.info(f"After task {task.task_id}: Class-IL ACC {average_accuracy(class_il, task.task_id):.4f}, "
                        f"Task-IL ACC {average_accuracy(task_il, task.task_id):.4f}")
    finally:
        trainer.close()

    peak, estimated = peak_memory_bytes()
    if estimated:
        logger.warning("No platform memory reading; reporting an activation-size estimate")
        peak = activation_bytes_estimate(trainer.model, trainer.input_shape,
                                         config.optim.batch_size * (1 + trainer.strategy.config.replay_draws))
    efficiency = EfficiencyReport(
        flops_total=flops_for_examples(trainer.model.config, trainer.state.examples_processed),
        wall_time_per_task=list(trainer.state.wall_time_per_task),
        steps_per_task=list(trainer.state.steps_per_task),
        peak_memory_bytes=peak,
        peak_memory_estimated=estimated,
        buffer_bytes=trainer.buffer.memory_footprint() if trainer.buffer is not None else 0,
    )
    result = RunResult(
        run_id=run_id, seed=seed, class_il=class_il, task_il=task_il, efficiency=efficiency,
        summary=_summary(run_id, class_il, T, efficiency, config.metrics.ff_clip), out_dir=out_dir,
    )
    result.artifacts = write_artifacts(config, result, trainer)
    result.trainer = trainer
    return result
