"""
Command-line interface for the continual-learning engine.

Verbs:
    run               train a configuration for one or more seeds
    compare           side-by-side table, series and heatmaps for finished runs
    inspect-counter   normalized feature-selection report of a run
    validate-config   list every problem in a config file
    export-buffer     convert a buffer checkpoint to .npz (optionally PNG previews)
    list-runs         recently registered runs

Exit status is 0 on success, 1 for configuration or validation problems and
2 for failures while running.
"""

import argparse
import logging
import os
import sys

import numpy as np
from dotenv import load_dotenv
from PIL import Image

from benchmark_data import load
from config import load_config, parse_lines, validate_config
from database import Database
from errors import CLFDError, ConfigError, MissingArtifactError
from replay_buffer import ReservoirBuffer
from reporting import ReportGenerator, load_counter, read_metadata, summarize_seeds
from training_loop import build_stream, dataset_source, replay_counter, restore_trainer, run_sequence

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _seed_list(text):
    try:
        return [int(s) for s in text.split(',') if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{text}' is not a comma-separated list of integers") from None


def cmd_run(args):
    """Train the configured stream for every requested seed."""
    overrides = list(args.set or [])
    config = load_config(args.config, overrides)
    seeds = args.seeds or ([args.seed] if args.seed is not None else None) or config.run.seeds or [config.run.seed]

    summaries = []
    db = None if args.no_register else Database(args.db)
    try:
        for seed in seeds:
            result = run_sequence(config, seed=seed, progress=args.progress)
            summaries.append(result.summary)
            if db is not None:
                db.save_run(result.run_id, config.digest(), config.run_name, seed, result.summary, result.out_dir)
            print(f"{result.run_id}: ACC {result.summary['acc_final']:.4f}  FF {result.summary['ff_final']:.4f}  "
                  f"trade-off {result.summary['tradeoff']:.4f}  wall {result.summary['wall_s']:.1f}s")
    finally:
        if db is not None:
            db.close()

    if len(seeds) > 1:
        out_dir = os.path.join(config.output.root, f"{config.run_name}-{config.digest()[:8]}-seeds")
        os.makedirs(out_dir, exist_ok=True)
        table = summarize_seeds(summaries)
        path = os.path.join(out_dir, 'summary_seeds.csv')
        table.to_csv(path, index=False)
        for row in table.itertuples():
            print(f"  {row.metric:<10} {row.mean:.4f} +/- {row.std:.4f} (n={row.n})")
        logger.info(f"Seed summary written to {path}")
    return EXIT_OK


def cmd_compare(args):
    out_dir = args.out or os.path.join(os.environ.get('CLFD_OUT', 'runs'), 'comparison')
    generator = ReportGenerator()
    paths = generator.write_comparison(args.run_dirs, out_dir)
    with open(paths['comparison.txt'], encoding='utf-8') as f:
        print(f.read())
    return EXIT_OK


def _restore(run_dir):
    """Config, dataset and trainer of a finished run."""
    metadata, config_text = read_metadata(os.path.join(run_dir, 'metadata.txt'))
    config = parse_lines(config_text.splitlines())
    seed = int(metadata.get('seed', config.run.seed))
    dataset = load(dataset_source(config), seed=seed)
    trainer = restore_trainer(config, run_dir, dataset.num_classes, dataset.image_shape, seed)
    return config, dataset, trainer, seed


def cmd_inspect_counter(args):
    generator = ReportGenerator(top_fraction=args.top_fraction)
    out_dir = args.out or args.run_dir
    if args.replay_test:
        config, dataset, trainer, seed = _restore(args.run_dir)
        stream = build_stream(config, dataset, seed)
        images = np.concatenate([task.test_images for task in stream])
        labels = np.concatenate([task.test_labels for task in stream])
        counter = replay_counter(trainer, images, labels)
        stem = 'counter_report_test'
    else:
        counter = load_counter(args.run_dir)
        stem = 'counter_report'
    report, _ = generator.write_counter_report(counter, out_dir, stem=stem)
    print(generator.counter_text(report))
    return EXIT_OK


def cmd_validate_config(args):
    problems = validate_config(args.config)
    for problem in problems:
        print(f"{args.config}: {problem}", file=sys.stderr)
    if problems:
        return EXIT_CONFIG
    print(f"{args.config}: ok")
    return EXIT_OK


def _preview(maps, out_dir, count, scale=4):
    """Write the first `count` maps as PNGs, min-max scaled per channel."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for i, m in enumerate(maps[:count]):
        low = m.min(axis=(1, 2), keepdims=True)
        span = m.max(axis=(1, 2), keepdims=True) - low
        scaled = (m - low) / np.where(span > 0, span, 1)
        pixels = (scaled.transpose(1, 2, 0) * 255).round().astype(np.uint8)
        image = Image.fromarray(pixels)
        image = image.resize((image.width * scale, image.height * scale), Image.Resampling.NEAREST)
        path = os.path.join(out_dir, f"entry_{i:03d}.png")
        image.save(path)
        written.append(path)
    return written


def cmd_export_buffer(args):
    path = os.path.join(args.source, 'buffer.bin') if os.path.isdir(args.source) else args.source
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing artifact: {path}")
    buffer = ReservoirBuffer.load(path)
    if len(buffer):
        maps, labels, task_ids, logits = buffer.stacked()
    else:
        maps, labels, task_ids, logits = (np.zeros((0,), np.float32), np.zeros((0,), np.int64),
                                          np.zeros((0,), np.int64), None)
    out = args.out or os.path.splitext(path)[0] + '.npz'
    arrays = {'maps': maps, 'labels': labels, 'task_ids': task_ids,
              'capacity': np.array(buffer.capacity), 'seen': np.array(buffer.seen)}
    if logits is not None:
        arrays['logits'] = logits
    np.savez(out, **arrays)
    print(f"{len(buffer)} entries ({buffer.memory_footprint()} bytes serialized) exported to {out}")
    if args.preview and len(buffer):
        written = _preview(maps, args.preview, args.count)
        print(f"{len(written)} previews written to {args.preview}")
    return EXIT_OK


def cmd_list_runs(args):
    db = Database(args.db)
    runs = db.get_recent_runs(args.limit)
    db.close()
    if not runs:
        print("no runs registered")
    for run in runs:
        acc = '-' if run['acc_final'] is None else f"{run['acc_final']:.4f}"
        ff = '-' if run['ff_final'] is None else f"{run['ff_final']:.4f}"
        print(f"{run['created_at'][:19]}  {run['id']:<40} seed {run['seed']:<4} ACC {acc}  FF {ff}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog='clfd', description='Frequency-domain continual learning engine')
    parser.add_argument('--log-level', default=os.environ.get('CLFD_LOG_LEVEL', 'INFO'),
                        help='logging level (default: CLFD_LOG_LEVEL or INFO)')
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='train a configuration')
    run.add_argument('--config', required=True)
    run.add_argument('--seed', type=int)
    run.add_argument('--seeds', type=_seed_list, help='comma-separated seeds, e.g. 1,2,3')
    run.add_argument('--set', action='append', metavar='KEY=VALUE', help='override a config key')
    run.add_argument('--progress', action='store_true', help='show progress bars')
    run.add_argument('--db', help='run registry path (default: CLFD_DB or runs.db)')
    run.add_argument('--no-register', action='store_true', help='do not record the run in the registry')
    run.set_defaults(func=cmd_run)

    compare = sub.add_parser('compare', help='compare finished runs')
    compare.add_argument('run_dirs', nargs='+')
    compare.add_argument('--out')
    compare.set_defaults(func=cmd_compare)

    inspect = sub.add_parser('inspect-counter', help='feature-selection report of a run')
    inspect.add_argument('run_dir')
    inspect.add_argument('--out')
    inspect.add_argument('--top-fraction', type=float, default=0.6)
    inspect.add_argument('--replay-test', action='store_true',
                         help='recount selections on the test split with a fresh counter')
    inspect.set_defaults(func=cmd_inspect_counter)

    validate = sub.add_parser('validate-config', help='check a config file')
    validate.add_argument('config')
    validate.set_defaults(func=cmd_validate_config)

    export = sub.add_parser('export-buffer', help='convert a buffer checkpoint to .npz')
    export.add_argument('source', help='run directory or buffer.bin path')
    export.add_argument('--out')
    export.add_argument('--preview', metavar='DIR', help='also write PNG previews of stored maps')
    export.add_argument('--count', type=int, default=8)
    export.set_defaults(func=cmd_export_buffer)

    runs = sub.add_parser('list-runs', help='recent runs in the registry')
    runs.add_argument('--limit', type=int, default=10)
    runs.add_argument('--db')
    runs.set_defaults(func=cmd_list_runs)
    return parser


def main(argv=None):
    load_dotenv()
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        return args.func(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CLFDError, OSError, RuntimeError, ValueError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
