"""
AugRL Bench - Run directory storage
Manifest, config snapshot, CSV tables and checkpoint files of one run

Checkpoint container:
    AUGRLCKPT 1
    <name>\t<dtype>\t<dim0,dim1,...>      one line per tensor
    END
    raw little-endian bytes of every tensor, in header order
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from config.settings import (
    CHECKPOINT_DIR,
    CHECKPOINT_MAGIC,
    CONFIG_SNAPSHOT_FILE,
    EVAL_FILE,
    MANIFEST_FILE,
    METRICS_COLUMNS,
    METRICS_FILE,
    STATS_FILE,
)
from core.errors import CheckpointFormatError
from utils.helpers import git_describe, utc_timestamp
from utils.logger import get_logger, run_audit_logger

logger = get_logger(__name__)

PathLike = Union[str, Path]
CHECKPOINT_END = "END"


# ==================== CHECKPOINT CONTAINER ====================

def encode_checkpoint(tensors: Dict[str, np.ndarray]) -> bytes:
    header = [CHECKPOINT_MAGIC]
    payload = []
    for name, value in tensors.items():
        if any(c in name for c in "\t\n"):
            raise CheckpointFormatError(f"tensor name {name!r} contains a tab or newline")
        array = np.ascontiguousarray(value)
        little = array.astype(array.dtype.newbyteorder("<"), copy=False)
        header.append(f"{name}\t{array.dtype.name}\t{','.join(str(d) for d in array.shape)}")
        payload.append(little.tobytes())
    header.append(CHECKPOINT_END)
    return ("\n".join(header) + "\n").encode("ascii") + b"".join(payload)


def decode_checkpoint(data: bytes) -> Dict[str, np.ndarray]:
    lines = []
    offset = 0
    while True:
        end = data.find(b"\n", offset)
        if end < 0:
            raise CheckpointFormatError("checkpoint header is not terminated by END")
        try:
            line = data[offset:end].decode("ascii")
        except UnicodeDecodeError:
            raise CheckpointFormatError("checkpoint header is not ASCII")
        offset = end + 1
        if not lines and line != CHECKPOINT_MAGIC:
            raise CheckpointFormatError(f"bad magic {line[:32]!r}, expected {CHECKPOINT_MAGIC!r}")
        if line == CHECKPOINT_END:
            break
        lines.append(line)

    tensors: Dict[str, np.ndarray] = {}
    for line in lines[1:]:
        parts = line.split("\t")
        if len(parts) != 3:
            raise CheckpointFormatError(f"malformed tensor line {line!r}")
        name, dtype_name, dims = parts
        try:
            dtype = np.dtype(dtype_name).newbyteorder("<")
            shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        except (TypeError, ValueError):
            raise CheckpointFormatError(f"malformed tensor line {line!r}")
        count = int(np.prod(shape, dtype=np.int64))
        size = count * dtype.itemsize
        if offset + size > len(data):
            raise CheckpointFormatError(f"checkpoint truncated inside tensor {name}")
        array = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape)
        tensors[name] = array.astype(dtype.newbyteorder("="))
        offset += size
    if offset != len(data):
        raise CheckpointFormatError(f"{len(data) - offset} trailing bytes after the last tensor")
    return tensors


def write_checkpoint(path: PathLike, tensors: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(tensors))
    return path


def read_checkpoint(path: PathLike) -> Dict[str, np.ndarray]:
    return decode_checkpoint(Path(path).read_bytes())


# ==================== MANIFEST ====================

@dataclass
class RunManifest:
    run_id: str
    seed: int
    config_file: str
    config_sha256: str
    config: Dict[str, Any]
    git: str = field(default_factory=git_describe)
    started_at: str = field(default_factory=utc_timestamp)
    finished_at: Optional[str] = None
    status: str = "running"
    outputs: Dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


# ==================== RUN STORE ====================

class RunStore:
    """Owns one run directory"""

    def __init__(self, root: PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.run_id = self.root.name
        logger.debug(f"Run store at {self.root}")

    @property
    def checkpoint_dir(self) -> Path:
        return self.root / CHECKPOINT_DIR

    def path(self, name: str) -> Path:
        return self.root / name

    # ---------- manifest ----------

    def start(self, config: Dict[str, Any], seed: int, config_bytes: bytes) -> RunManifest:
        """Write the config snapshot and the manifest before training begins"""
        self.path(CONFIG_SNAPSHOT_FILE).write_bytes(config_bytes)
        manifest = RunManifest(
            run_id=self.run_id,
            seed=seed,
            config_file=CONFIG_SNAPSHOT_FILE,
            config_sha256=hashlib.sha256(config_bytes).hexdigest(),
            config=config,
            outputs={
                "metrics": METRICS_FILE,
                "stats": STATS_FILE,
                "eval": EVAL_FILE,
                "checkpoints": CHECKPOINT_DIR,
            },
        )
        self.write_manifest(manifest)
        run_audit_logger.log_run_event(self.run_id, "started", str(self.root), {"seed": seed})
        return manifest

    def write_manifest(self, manifest: RunManifest) -> Path:
        path = self.path(MANIFEST_FILE)
        path.write_text(manifest.to_json() + "\n", encoding="utf-8")
        return path

    def read_manifest(self) -> RunManifest:
        return RunManifest.from_json(self.path(MANIFEST_FILE).read_text(encoding="utf-8"))

    def finish(self, status: str = "finished") -> RunManifest:
        manifest = self.read_manifest()
        manifest.finished_at = utc_timestamp()
        manifest.status = status
        self.write_manifest(manifest)
        run_audit_logger.log_run_event(self.run_id, status, str(self.root))
        return manifest

    # ---------- tables ----------

    def append_rows(self, name: str, rows: List[Dict[str, Any]], columns: Optional[List[str]] = None) -> Path:
        """Append rows to a CSV table, writing the header on first use"""
        path = self.path(name)
        if not rows:
            return path
        frame = pd.DataFrame(rows, columns=columns)
        frame.to_csv(path, mode="a", header=not path.exists(), index=False)
        return path

    def append_metrics(self, row: Dict[str, Any]) -> Path:
        return self.append_rows(METRICS_FILE, [row], METRICS_COLUMNS)

    def read_table(self, name: str = METRICS_FILE) -> pd.DataFrame:
        return pd.read_csv(self.path(name))

    # ---------- checkpoints ----------

    def checkpoint_path(self, step: int) -> Path:
        return self.checkpoint_dir / f"step_{step:08d}.ckpt"

    def save_checkpoint(self, step: int, tensors: Dict[str, np.ndarray]) -> Path:
        try:
            path = write_checkpoint(self.checkpoint_path(step), tensors)
        except OSError as e:
            logger.error(f"Failed to write checkpoint at step {step}: {e}")
            raise
        run_audit_logger.log_checkpoint(self.run_id, str(path), step, len(tensors))
        return path

    def list_checkpoints(self) -> List[Path]:
        if not self.checkpoint_dir.exists():
            return []
        return sorted(self.checkpoint_dir.glob("step_*.ckpt"))

    def load_checkpoint(self, step: Optional[int] = None) -> Dict[str, np.ndarray]:
        """Checkpoint at `step`, or the latest one"""
        if step is not None:
            return read_checkpoint(self.checkpoint_path(step))
        available = self.list_checkpoints()
        if not available:
            raise FileNotFoundError(f"no checkpoints under {self.checkpoint_dir}")
        return read_checkpoint(available[-1])


# Global instances
_run_stores: Dict[Path, RunStore] = {}


def get_run_store(root: PathLike) -> RunStore:
    """Get or create the store for a run directory"""
    key = Path(root).resolve()
    if key not in _run_stores:
        _run_stores[key] = RunStore(root)
    return _run_stores[key]
