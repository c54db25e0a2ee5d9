"""
Reporting Module

Reads completed run directories and turns them into comparison tables,
plot-ready CSV series, accuracy-matrix heatmaps and selection-counter
reports. Plots are written as SVG through matplotlib's Agg backend.
"""

import json
import logging
import os
from dataclasses import dataclass

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from errors import MissingArtifactError, PreconditionError  # noqa: E402
from feature_selection import SelectionCounter, selection_size  # noqa: E402

logger = logging.getLogger(__name__)

EVAL_MODES = ('class_il', 'task_il')
SUMMARY_METRICS = ('acc_final', 'ff_final', 'S', 'P', 'tradeoff', 'flops', 'wall_s', 'peak_mem_b')


@dataclass
class RunRecord:
    """Artifacts of one finished run."""

    run_dir: str
    run_id: str
    summary: dict
    results: pd.DataFrame
    metadata: dict
    config_text: str

    @property
    def num_tasks(self):
        return int(self.results['task'].max())

    def accuracy_matrix(self, mode='class_il'):
        """Rebuild the T x T accuracy matrix (NaN above the diagonal)."""
        T = self.num_tasks
        R = np.full((T, T), np.nan)
        prefix = f"{mode}.R"
        for row in self.results[self.results['metric'].str.startswith(prefix)].itertuples():
            R[int(row.task) - 1, int(row.metric[len(prefix):]) - 1] = row.value
        return R

    def metric_series(self, metric):
        rows = self.results[self.results['metric'] == metric].sort_values('task')
        return rows['task'].to_numpy(), rows['value'].to_numpy()

    def final(self, metric):
        tasks, values = self.metric_series(metric)
        return float(values[-1]) if len(values) else float('nan')


def _require(path):
    if not os.path.exists(path):
        raise MissingArtifactError(f"missing artifact: {path}")
    return path


def read_metadata(path):
    """Parse metadata.txt into (run metadata dict, configuration text)."""
    metadata, config_lines, in_config = {}, [], False
    with open(_require(path), encoding='utf-8') as f:
        for line in f.read().splitlines():
            if line.strip() == '# configuration':
                in_config = True
                continue
            if in_config:
                config_lines.append(line)
            elif '=' in line:
                key, value = line.split('=', 1)
                metadata[key.strip()] = value.strip()
    return metadata, '\n'.join(config_lines) + '\n'


def load_run(run_dir):
    """
    Load the summary, results and metadata of a run directory.

    Raises:
        MissingArtifactError: If one of the three files is absent.
    """
    summary = pd.read_csv(_require(os.path.join(run_dir, 'summary.csv')), comment='#').iloc[0].to_dict()
    results = pd.read_csv(_require(os.path.join(run_dir, 'results.csv')), comment='#')
    metadata, config_text = read_metadata(os.path.join(run_dir, 'metadata.txt'))
    return RunRecord(run_dir=run_dir, run_id=str(summary['run_id']), summary=summary,
                     results=results, metadata=metadata, config_text=config_text)


def summarize_seeds(summaries):
    """
    Mean and sample standard deviation of each summary metric across seeds.

    Args:
        summaries (list): Summary dicts, one per seed.

    Returns:
        pandas.DataFrame: Columns metric, mean, std, n.
    """
    frame = pd.DataFrame(summaries)
    rows = []
    for metric in SUMMARY_METRICS:
        if metric not in frame:
            continue
        values = frame[metric].astype(float).dropna()
        std = float(values.std(ddof=1)) if len(values) > 1 else 0.0
        rows.append({'metric': metric, 'mean': float(values.mean()) if len(values) else float('nan'),
                     'std': std, 'n': int(len(values))})
    return pd.DataFrame(rows, columns=['metric', 'mean', 'std', 'n'])


class ReportGenerator:
    """
    Builds comparison and counter reports from run directories.
    """

    def __init__(self, top_fraction=0.6):
        self.top_fraction = top_fraction

    def comparison_table(self, runs):
        """
        Side-by-side final metrics, with deltas against the first run.

        Raises:
            PreconditionError: With fewer than two runs or differing task counts.
        """
        if len(runs) < 2:
            raise PreconditionError("compare needs at least two runs")
        counts = {run.run_id: run.num_tasks for run in runs}
        if len(set(counts.values())) != 1:
            raise PreconditionError(f"runs have different task counts: {counts}")

        rows = []
        for run in runs:
            rows.append({
                'run_id': run.run_id,
                'acc_class_il': run.final('class_il.acc'),
                'acc_task_il': run.final('task_il.acc'),
                'ff_class_il': run.final('class_il.ff'),
                'ff_task_il': run.final('task_il.ff'),
                'S': float(run.summary['S']),
                'P': float(run.summary['P']),
                'tradeoff': float(run.summary['tradeoff']),
                'flops': float(run.summary['flops']),
                'wall_s': float(run.summary['wall_s']),
                's_per_step': float(run.metadata.get('seconds_per_step', 'nan')),
                'buffer_bytes': float(run.metadata.get('buffer_bytes', 'nan')),
            })
        table = pd.DataFrame(rows)
        for column in ('acc_class_il', 'acc_task_il', 'ff_class_il', 'tradeoff', 'wall_s', 's_per_step'):
            table[f"delta_{column}"] = table[column] - table[column].iloc[0]
        return table

    def series_frame(self, runs):
        """Per-task average accuracy in both modes, one row per (run, task)."""
        rows = []
        for run in runs:
            for mode in EVAL_MODES:
                tasks, values = run.metric_series(f"{mode}.acc")
                rows += [{'run_id': run.run_id, 'mode': mode, 'task': int(t), 'acc': float(v)}
                         for t, v in zip(tasks, values)]
        return pd.DataFrame(rows, columns=['run_id', 'mode', 'task', 'acc'])

    @staticmethod
    def heatmap_frame(run, mode='class_il'):
        R = run.accuracy_matrix(mode)
        frame = pd.DataFrame(R, columns=[f"task{tau}" for tau in range(1, R.shape[1] + 1)])
        frame.insert(0, 'after_task', range(1, R.shape[0] + 1))
        return frame

    def generate_report(self, table, format='text'):
        """
        Render a comparison table.

        Args:
            table (pandas.DataFrame): Output of comparison_table.
            format (str): 'text', 'csv' or 'json'.
        """
        if format == 'json':
            return json.dumps(table.to_dict(orient='records'), indent=2)
        if format == 'csv':
            return table.to_csv(index=False)
        return self._generate_text_report(table)

    def _generate_text_report(self, table):
        report = ["=" * 100, "CONTINUAL LEARNING RUN COMPARISON", "=" * 100]
        header = (f"{'run':<36} {'ACC Class-IL':>12} {'ACC Task-IL':>12} {'FF Class-IL':>12} "
                  f"{'trade-off':>10} {'FLOPs':>12} {'wall s':>9} {'s/step':>9} {'buffer B':>11}")
        report += [header, "-" * len(header)]
        for row in table.itertuples():
            report.append(f"{row.run_id:<36} {row.acc_class_il:>12.4f} {row.acc_task_il:>12.4f} "
                          f"{row.ff_class_il:>12.4f} {row.tradeoff:>10.4f} {row.flops:>12.3e} {row.wall_s:>9.1f}"
                          f" {row.s_per_step:>9.4f} {row.buffer_bytes:>11.0f}")
        report.append("\nDELTAS AGAINST THE FIRST RUN:")
        for row in table.itertuples():
            report.append(f"   {row.run_id:<36} ACC Class-IL {row.delta_acc_class_il:+.4f}  "
                          f"ACC Task-IL {row.delta_acc_task_il:+.4f}  FF {row.delta_ff_class_il:+.4f}  "
                          f"wall {row.delta_wall_s:+.1f}s  s/step {row.delta_s_per_step:+.4f}")
        return "\n".join(report)

    def plot_series(self, series, path):
        fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
        for ax, mode in zip(axes, EVAL_MODES):
            for run_id, rows in series[series['mode'] == mode].groupby('run_id', sort=False):
                ax.plot(rows['task'], rows['acc'], marker='o', label=run_id)
            ax.set_title('Class-IL' if mode == 'class_il' else 'Task-IL')
            ax.set_xlabel('tasks trained')
            ax.set_ylim(0, 1)
        axes[0].set_ylabel('average accuracy')
        axes[0].legend(fontsize='small')
        fig.tight_layout()
        fig.savefig(path, format='svg')
        plt.close(fig)

    def plot_heatmap(self, run, mode, path):
        R = run.accuracy_matrix(mode)
        fig, ax = plt.subplots(figsize=(4.5, 4))
        image = ax.imshow(np.ma.masked_invalid(R), vmin=0, vmax=1, cmap='viridis')
        ax.set_xticks(range(R.shape[1]), [str(t) for t in range(1, R.shape[1] + 1)])
        ax.set_yticks(range(R.shape[0]), [str(t) for t in range(1, R.shape[0] + 1)])
        ax.set_xlabel('evaluated task')
        ax.set_ylabel('after training task')
        ax.set_title(f"{run.run_id} ({mode})", fontsize='small')
        fig.colorbar(image, ax=ax)
        fig.tight_layout()
        fig.savefig(path, format='svg')
        plt.close(fig)

    def plot_tradeoff(self, table, path):
        positions = np.arange(len(table))
        fig, ax = plt.subplots(figsize=(max(4, 1.5 * len(table)), 4))
        for offset, column in zip((-0.25, 0.0, 0.25), ('S', 'P', 'tradeoff')):
            ax.bar(positions + offset, table[column], width=0.25, label=column)
        ax.set_xticks(positions, table['run_id'], rotation=20, ha='right', fontsize='small')
        ax.set_ylim(0, 1)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format='svg')
        plt.close(fig)

    def write_comparison(self, run_dirs, out_dir):
        """
        Write the comparison table (text, CSV, JSON), per-task series,
        heatmaps and the stability/plasticity chart into `out_dir`.

        Returns:
            dict: Name to path of every file written.
        """
        runs = [load_run(d) for d in run_dirs]
        table = self.comparison_table(runs)
        os.makedirs(out_dir, exist_ok=True)
        paths = {}
        for fmt, filename in (('text', 'comparison.txt'), ('csv', 'comparison.csv'), ('json', 'comparison.json')):
            paths[filename] = os.path.join(out_dir, filename)
            with open(paths[filename], 'w', encoding='utf-8') as f:
                f.write(self.generate_report(table, fmt))

        series = self.series_frame(runs)
        paths['series.csv'] = os.path.join(out_dir, 'series.csv')
        series.to_csv(paths['series.csv'], index=False)
        paths['series.svg'] = os.path.join(out_dir, 'series.svg')
        self.plot_series(series, paths['series.svg'])

        for run in runs:
            for mode in EVAL_MODES:
                stem = f"heatmap_{run.run_id}_{mode}"
                paths[f"{stem}.csv"] = os.path.join(out_dir, f"{stem}.csv")
                self.heatmap_frame(run, mode).to_csv(paths[f"{stem}.csv"], index=False)
                paths[f"{stem}.svg"] = os.path.join(out_dir, f"{stem}.svg")
                self.plot_heatmap(run, mode, paths[f"{stem}.svg"])

        paths['tradeoff.svg'] = os.path.join(out_dir, 'tradeoff.svg')
        self.plot_tradeoff(table, paths['tradeoff.svg'])
        logger.info(f"Comparison of {len(runs)} runs written to {out_dir}")
        return paths

    def top_features(self, counter, class_id):
        """Indices of the most-selected features of a class (positive counts only)."""
        row = counter.row(class_id)
        k = selection_size(counter.num_features, self.top_fraction)
        order = np.lexsort((np.arange(row.shape[0]), -row))
        return [int(j) for j in order[:k] if row[j] > 0]

    def counter_report(self, counter):
        """
        Normalized selection counts and pairwise top-feature overlap.

        Returns:
            dict: 'normalized' (DataFrame, one row per class scaled to its
            maximum) and 'overlap' (DataFrame of class pairs with the share of
            shared top features).
        """
        classes = counter.classes
        normalized = pd.DataFrame(
            [counter.normalized_row(c) for c in classes],
            index=pd.Index(classes, name='class'),
            columns=[f"f{j}" for j in range(counter.num_features)],
        )
        tops = {c: set(self.top_features(counter, c)) for c in classes}
        pairs = []
        for i, a in enumerate(classes):
            for b in classes[i + 1:]:
                smaller = min(len(tops[a]), len(tops[b]))
                shared = len(tops[a] & tops[b])
                pairs.append({'class_a': a, 'class_b': b, 'shared': shared,
                              'overlap': shared / smaller if smaller else 0.0})
        return {'normalized': normalized,
                'overlap': pd.DataFrame(pairs, columns=['class_a', 'class_b', 'shared', 'overlap'])}

    def counter_text(self, report):
        lines = ["=" * 60, "FEATURE SELECTION COUNTER", "=" * 60]
        normalized = report['normalized']
        for class_id, row in normalized.iterrows():
            best = row.sort_values(ascending=False).head(5)
            lines.append(f"class {class_id}: top features " + ", ".join(f"{k}={v:.2f}" for k, v in best.items()))
        lines.append("\nTOP-FEATURE OVERLAP:")
        for row in report['overlap'].itertuples():
            lines.append(f"   {row.class_a} vs {row.class_b}: {row.overlap:.0%} ({row.shared} shared)")
        return "\n".join(lines)

    def write_counter_report(self, counter, out_dir, stem='counter_report'):
        report = self.counter_report(counter)
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            'normalized': os.path.join(out_dir, f"{stem}_normalized.csv"),
            'overlap': os.path.join(out_dir, f"{stem}_overlap.csv"),
            'text': os.path.join(out_dir, f"{stem}.txt"),
        }
        report['normalized'].to_csv(paths['normalized'])
        report['overlap'].to_csv(paths['overlap'], index=False)
        with open(paths['text'], 'w', encoding='utf-8') as f:
            f.write(self.counter_text(report) + '\n')
        return report, paths


def load_counter(run_dir):
    """Counter export of a run directory."""
    return SelectionCounter.from_csv(_require(os.path.join(run_dir, 'counter.csv')))
