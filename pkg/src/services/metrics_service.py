"""
Training metrics stream: one `step,lr,loss` line per optimizer step, plus
helpers for reading a stream back and smoothing the loss curve.
"""

from pathlib import Path
import threading
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.error_handling import ContractError, IngestionError
from src.utils.logging_config import get_logger

logger = get_logger(__name__)

MetricRow = Tuple[int, float, float]


class MetricsStream:
    """
    Append-only writer for the per-step metrics file.
    Lines are flushed as they are written so an interrupted run keeps its history.
    """

    def __init__(self, path: Union[str, Path], append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._handle = open(self.path, 'a' if append else 'w', encoding='utf-8')
        self._last_step: Optional[int] = None
        logger.info(f"📊 Metrics stream at {self.path}")

    def write(self, step: int, lr: float, loss: float) -> None:
        with self._lock:
            if self._last_step is not None and step <= self._last_step:
                raise ContractError(f"metrics steps must increase: {step} after {self._last_step}")
            self._handle.write(f"{step},{lr!r},{loss!r}\n")
            self._handle.flush()
            self._last_step = step

    def close(self) -> None:
        with self._lock:
            if not self._handle.closed:
                self._handle.close()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


def read_metrics(path: Union[str, Path]) -> List[MetricRow]:
    rows = []
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise IngestionError(f"cannot read metrics stream {path}: {e}")
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split(',')
        if len(parts) != 3:
            raise IngestionError(f"{path}:{number}: expected step,lr,loss")
        rows.append((int(parts[0]), float(parts[1]), float(parts[2])))
    return rows


def smooth(values: Sequence[float], window: int = 10) -> np.ndarray:
    """Trailing moving average; the first entries average what is available."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values
    window = max(1, min(window, values.size))
    cumulative = np.cumsum(np.insert(values, 0, 0.0))
    out = np.empty_like(values)
    for i in range(values.size):
        lo = max(0, i + 1 - window)
        out[i] = (cumulative[i + 1] - cumulative[lo]) / (i + 1 - lo)
    return out
