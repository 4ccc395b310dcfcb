# utils/metrics_tracker.py - Tracking CSV (pandas) per metriche di training, λ, utilizzo esperti e valutazioni
import math
import os
from typing import Any, Dict, Iterable, List, Optional, Sequence

import pandas as pd


class MetricsTracker:
    """
    CSV con schema fisso, caricato se esiste (resume) o creato vuoto.
    Le righe si accumulano in memoria e vengono scritte con save().
    """

    def __init__(self, csv_path: str, schema: Sequence[str], resume: bool = False, verbose: bool = True):
        self.csv_path = str(csv_path)
        self.schema = list(schema)
        self.verbose = verbose
        self.df = None
        self._load_or_create_csv(resume)

    def _load_or_create_csv(self, resume: bool):
        """Carica il CSV esistente in resume, altrimenti parte da un DataFrame vuoto."""
        if resume and os.path.exists(self.csv_path):
            self.df = pd.read_csv(self.csv_path)
            missing_cols = [col for col in self.schema if col not in self.df.columns]
            for col in missing_cols:
                self.df[col] = None
            if self.verbose:
                print(f"📊 Caricato tracking esistente: {len(self.df)} righe da {os.path.basename(self.csv_path)}")
        else:
            self.df = pd.DataFrame(columns=self.schema)

    def __len__(self) -> int:
        return len(self.df)

    def append(self, row: Dict[str, Any]):
        entry = {col: row.get(col) for col in self.schema}
        new_row_df = pd.DataFrame([entry], columns=self.schema)
        self.df = new_row_df if self.df.empty else pd.concat([self.df, new_row_df], ignore_index=True)

    def extend(self, rows: Iterable[Dict[str, Any]]):
        rows = [{col: row.get(col) for col in self.schema} for row in rows]
        if not rows:
            return
        frame = pd.DataFrame(rows, columns=self.schema)
        self.df = frame if self.df.empty else pd.concat([self.df, frame], ignore_index=True)

    def truncate(self, column: str, max_value) -> int:
        """Scarta le righe con column > max_value (resume da un checkpoint precedente)"""
        if self.df.empty:
            return 0
        keep = pd.to_numeric(self.df[column]) <= max_value
        dropped = int((~keep).sum())
        self.df = self.df[keep].reset_index(drop=True)
        return dropped

    def last(self) -> Optional[Dict[str, Any]]:
        return None if self.df.empty else self.df.iloc[-1].to_dict()

    def save(self) -> str:
        directory = os.path.dirname(self.csv_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self.df.to_csv(self.csv_path, index=False, encoding='utf-8')
        return self.csv_path

    def export_summary(self) -> Dict[str, Any]:
        if self.df.empty:
            return {'rows': 0}
        summary = {'rows': len(self.df), 'last': self.last()}
        numeric = self.df.apply(pd.to_numeric, errors='coerce')
        summary['mean'] = {col: float(numeric[col].mean()) for col in self.schema
                           if numeric[col].notna().any()}
        return summary

    def print_summary(self, columns: Optional[List[str]] = None):
        summary = self.export_summary()
        print(f"\n📊 {os.path.basename(self.csv_path).upper()} SUMMARY")
        print("=" * 40)
        print(f"📦 Righe: {summary['rows']}")
        last = summary.get('last')
        if last:
            print("📈 Ultima riga:")
            for col in columns or self.schema:
                value = last.get(col)
                if isinstance(value, float) and not math.isnan(value):
                    print(f"  • {col}: {value:.4g}")
                elif value is not None:
                    print(f"  • {col}: {value}")


def non_finite_fields(row: Dict[str, Any]) -> List[str]:
    """Campi numerici NaN/inf di una riga di metriche"""
    return [key for key, value in row.items()
            if isinstance(value, float) and not math.isfinite(value)]
