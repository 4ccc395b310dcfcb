# processors/report.py - Aggrega i CSV dei run in tabella riassuntiva e CSV long-format per i grafici
import os
from pathlib import Path
from typing import Dict, List, Sequence

import pandas as pd

from config_rastmoe import REPORT_LONG_SCHEMA
from utils.errors import DataError

# nome file → tipo di sorgente
RUN_FILES = {
    'metrics.csv': 'metrics',
    'lambda_trajectory.csv': 'lambda',
    'utilization.csv': 'utilization',
    'eval.csv': 'eval',
    'eval_report.csv': 'eval',
}


class ReportBuilder:
    """
    Raccoglie i CSV di una lista di run (directory o singoli file) e produce:
    summary (una riga per run × label di valutazione), sources (una riga per
    CSV letto) e long (run, series, x, key, value).
    """

    def __init__(self):
        self.sources: List[Dict] = []
        self.summary_rows: List[Dict] = []
        self.long_frames: List[pd.DataFrame] = []

    def _discover(self, target: Path) -> List[Path]:
        if target.is_file():
            return [target]
        if not target.is_dir():
            raise DataError(f"report input not found: {target}")
        return sorted(p for p in target.rglob('*.csv') if p.name in RUN_FILES)

    @staticmethod
    def _run_name(path: Path, root: Path) -> str:
        base = root if root.is_dir() else root.parent
        relative = path.parent.relative_to(base) if path.parent != base else Path('')
        return str(Path(base.name) / relative) if str(relative) not in ('', '.') else base.name

    def _long(self, run: str, series: str, frame: pd.DataFrame, x: str, keys: Sequence[str]):
        present = [key for key in keys if key in frame.columns]
        if not present or x not in frame.columns:
            return
        long = frame.melt(id_vars=[x], value_vars=present, var_name='key', value_name='value')
        long = long.rename(columns={x: 'x'})
        long.insert(0, 'series', series)
        long.insert(0, 'run', run)
        self.long_frames.append(long[REPORT_LONG_SCHEMA])

    def add(self, path: Path, run: str):
        kind = RUN_FILES.get(path.name, 'eval')
        try:
            frame = pd.read_csv(path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataError(f"cannot read {path}: {e}")
        self.sources.append({'run': run, 'kind': kind, 'path': str(path), 'rows': len(frame)})

        if kind == 'metrics':
            self._long(run, 'reward_curve', frame, 'update', ['mean_reward', 'match_wait_s', 'pickup_wait_s'])
        elif kind == 'lambda':
            self._long(run, 'lambda', frame, 'update', ['lambda', 'lambda_mean', 'g_mean'])
        elif kind == 'utilization' and not frame.empty:
            util = frame.rename(columns={'hour': 'x', 'expert_id': 'key', 'activation_count': 'value'})
            util['key'] = 'expert_' + util['key'].astype(str)
            util.insert(0, 'series', 'utilization')
            util.insert(0, 'run', run)
            self.long_frames.append(util[REPORT_LONG_SCHEMA])
        elif kind == 'eval' and not frame.empty:
            if 'label' not in frame.columns:
                raise DataError(f"{path}: evaluation CSV without a label column")
            latest = frame.groupby('label', sort=False).tail(1)
            for row in latest.to_dict('records'):
                self.summary_rows.append({'run': run, **row})
            waits = latest.rename(columns={'label': 'x'})
            self._long(run, 'waits', waits, 'x', ['match_wait_s', 'pickup_wait_s', 'total_reward', 'violation_rate'])

    def build(self, inputs: Sequence) -> Dict[str, pd.DataFrame]:
        for target in inputs:
            root = Path(target)
            for path in self._discover(root):
                self.add(path, self._run_name(path, root))
        if not self.sources:
            raise DataError("report found no metrics or evaluation CSVs in the given inputs")
        long = pd.concat(self.long_frames, ignore_index=True) if self.long_frames \
            else pd.DataFrame(columns=REPORT_LONG_SCHEMA)
        return {
            'summary': pd.DataFrame(self.summary_rows),
            'sources': pd.DataFrame(self.sources),
            'long': long,
        }


def build_report(inputs: Sequence, out_dir) -> Dict[str, str]:
    """
    Scrive summary.csv, sources.csv e report_long.csv in out_dir.

    Returns:
        Dict nome → path
    """
    print(f"\n📊 REPORT - {len(inputs)} input")
    print("=" * 50)
    tables = ReportBuilder().build(inputs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, file_name in (('summary', 'summary.csv'), ('sources', 'sources.csv'), ('long', 'report_long.csv')):
        path = out_dir / file_name
        tables[name].to_csv(path, index=False, encoding='utf-8')
        paths[name] = str(path)
        print(f"  ✅ {file_name}: {len(tables[name])} righe")
    print(f"💾 Report salvato in {os.path.abspath(out_dir)}")
    return paths
