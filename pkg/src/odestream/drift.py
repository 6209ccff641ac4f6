"""ADWIN drift detection, used to annotate evaluation traces only.

This is the exact variant: every split of the (capped) window is tested on
each update, using prefix sums.  A split into an older part W0 and a newer
part W1 signals drift when

    |mean(W0) - mean(W1)| >= sqrt(ln(4 / delta') / (2 m)),
    m = 1 / (1/|W0| + 1/|W1|),  delta' = delta / |W|.

On drift the older part of the most recent qualifying split is dropped and
the test repeats until no split qualifies.
"""

from __future__ import annotations

import dataclasses
import math
from collections import deque

import numpy as np

from .errors import ContractError


class AdwinDetector:
    def __init__(self, delta: float = 0.002, max_window: int = 5000):
        if not 0.0 < delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {delta}")
        if max_window < 2:
            raise ValueError("max_window must be >= 2")
        self.delta = delta
        self.max_window = max_window
        self.window: deque[float] = deque()
        self.n_detections = 0

    def __len__(self) -> int:
        return len(self.window)

    def reset(self) -> None:
        self.window.clear()
        self.n_detections = 0

    def update(self, value: float) -> bool:
        """Add one observation; return True when a drift was detected."""
        value = float(value)
        if not math.isfinite(value):
            raise ContractError(f"ADWIN received non-finite value {value}")
        self.window.append(value)
        if len(self.window) > self.max_window:
            self.window.popleft()
        drift = False
        while (cut := self._find_cut()) is not None:
            for _ in range(cut):
                self.window.popleft()
            drift = True
        if drift:
            self.n_detections += 1
        return drift

    def _find_cut(self) -> int | None:
        n = len(self.window)
        if n < 2:
            return None
        w = np.fromiter(self.window, dtype=np.float64, count=n)
        prefix = np.cumsum(w)
        n0 = np.arange(1, n, dtype=np.float64)
        n1 = n - n0
        s0 = prefix[:-1]
        gap = np.abs(s0 / n0 - (prefix[-1] - s0) / n1)
        m = 1.0 / (1.0 / n0 + 1.0 / n1)
        eps_cut = np.sqrt(math.log(4.0 * n / self.delta) / (2.0 * m))
        hits = np.flatnonzero(gap >= eps_cut)
        return int(hits[-1]) + 1 if hits.size else None


def adwin_update(det: AdwinDetector, value: float) -> bool:
    return det.update(value)


def detect_drifts(values, delta: float = 0.002, max_window: int = 5000) -> list[int]:
    """Indices at which a fresh detector fed ``values`` in order flags drift."""
    det = AdwinDetector(delta, max_window)
    return [i for i, v in enumerate(values) if det.update(v)]


def annotate_report(report, delta: float = 0.002, max_window: int = 5000):
    """Return a copy of ``report`` with drift flags from ADWIN over the revealed target.

    The detector sees the first target's one-step-ahead truth of every step;
    unobserved truths are skipped.
    """
    det = AdwinDetector(delta, max_window)
    steps = []
    for step in report.steps:
        v = float(step.truth[0, 0])
        flag = det.update(v) if math.isfinite(v) else False
        steps.append(dataclasses.replace(step, drift_flag=flag))
    return dataclasses.replace(report, steps=steps, drift={"delta": delta, "max_window": max_window})
