# utils/run_manifest.py - Manifest per run: comando, hash config, seed, build e output
import json
import os
import subprocess
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

from config_rastmoe import MANIFEST_NAME


def build_identifier() -> str:
    """RASTMOE_BUILD_ID, altrimenti l'hash corto di git, altrimenti 'unknown'"""
    build_id = os.getenv('RASTMOE_BUILD_ID')
    if build_id:
        return build_id
    try:
        out = subprocess.run(['git', 'rev-parse', '--short', 'HEAD'], capture_output=True, text=True,
                             timeout=5, cwd=os.path.dirname(os.path.abspath(__file__)))
    except (OSError, subprocess.SubprocessError):
        return 'unknown'
    return out.stdout.strip() or 'unknown'


@dataclass
class RunManifest:
    command: str
    config_path: Optional[str]
    config_hash: str
    seed: int
    out_dir: str
    build_id: str = field(default_factory=build_identifier)
    started_at: str = field(default_factory=lambda: datetime.now().isoformat())
    finished_at: Optional[str] = None
    status: str = 'running'
    exit_code: Optional[int] = None
    outputs: Dict[str, str] = field(default_factory=dict)
    children: List[str] = field(default_factory=list)
    error: Optional[str] = None

    def finish(self, exit_code: int, error: Optional[str] = None) -> 'RunManifest':
        self.finished_at = datetime.now().isoformat()
        self.exit_code = exit_code
        self.status = 'ok' if exit_code == 0 else 'failed'
        self.error = error
        return self

    def write(self) -> Path:
        path = Path(self.out_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True), encoding='utf-8')
        return path

    @classmethod
    def load(cls, path) -> 'RunManifest':
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        return cls(**json.loads(path.read_text(encoding='utf-8')))
