# utils/text_utils.py - Parsing di file delimitati e slug per nomi di run
import csv
import re
from pathlib import Path
from typing import Iterator, List, Optional, Tuple


def slugify(text: str) -> str:
    """Converte il testo in slug per nomi di directory ("α=0.025" → "alpha_0_025")"""
    text = text.lower().replace('α', 'alpha').replace(':', '_to_')
    text = re.sub(r'[^a-z0-9\s_.=-]', '', text)
    text = re.sub(r'[\s.=-]+', '_', text)
    text = re.sub(r'_+', '_', text)
    return text.strip('_')


def iter_records(path, min_fields: int, max_fields: int,
                 header_prefix: Optional[str] = None,
                 error_cls=ValueError) -> Iterator[Tuple[int, List[str]]]:
    """
    Legge un file delimitato da virgole riga per riga.

    Salta righe vuote, commenti (#) e un eventuale header che inizia con
    header_prefix. Ogni riga restituita ha tra min_fields e max_fields campi.

    Args:
        path: Path del file
        min_fields: Numero minimo di campi
        max_fields: Numero massimo di campi
        header_prefix: Primo campo dell'header da saltare (es. "edge_id")
        error_cls: Eccezione da sollevare su riga malformata

    Returns:
        Iteratore di (numero riga 1-based, campi)
    """
    path = Path(path)
    if not path.exists():
        raise error_cls(f"{path}: file not found")

    with open(path, newline='', encoding='utf-8') as handle:
        for line_no, row in enumerate(csv.reader(handle, skipinitialspace=True), 1):
            fields = [field.strip() for field in row]
            if not fields or not any(fields) or fields[0].startswith('#'):
                continue
            if header_prefix and fields[0] == header_prefix:
                continue
            if not min_fields <= len(fields) <= max_fields:
                raise error_cls(
                    f"{path}:{line_no}: expected {min_fields}-{max_fields} fields, got {len(fields)}"
                )
            yield line_no, fields


def parse_number(value: str, kind, path, line_no: int, field: str, error_cls=ValueError):
    """Converte un campo numerico citando file e riga in caso di errore"""
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise error_cls(f"{path}:{line_no}: {field} is not a valid {kind.__name__}: {value!r}")

