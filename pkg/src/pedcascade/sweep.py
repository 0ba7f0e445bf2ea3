"""Grid-sweep harness: train/evaluate every cell over several seeds and
report mean +- std, with per-cell failure isolation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np


@dataclass
class SweepCell:
    params: Dict[str, object]
    values: List[float] = field(default_factory=list)
    error: Optional[str] = None

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else math.nan

    @property
    def std(self) -> float:
        return float(np.std(self.values)) if self.values else math.nan


def grid_sweep(
    axes: Sequence[Tuple[str, Sequence[object]]],
    run: Callable[[Dict[str, object], int], float],
    n_seeds: int = 1,
    base_seed: int = 0,
) -> List[SweepCell]:
    """Evaluate `run(params, seed)` on the full grid in row-major order.

    Each cell is run with `n_seeds` seeds; a failing cell is marked with its
    error and does not abort the sweep.
    """
    if not axes or any(len(values) == 0 for _, values in axes):
        raise ValueError("axes must be non-empty")
    cells: List[SweepCell] = []
    shape = [len(values) for _, values in axes]
    for flat in range(int(np.prod(shape))):
        idx = np.unravel_index(flat, shape)
        params = {name: values[i] for (name, values), i in zip(axes, idx)}
        cell = SweepCell(params=params)
        try:
            for s in range(n_seeds):
                cell.values.append(float(run(params, base_seed + s)))
        except Exception as exc:
            cell.values = []
            cell.error = f"{type(exc).__name__}: {exc}"
        cells.append(cell)
    return cells


def sweep_to_csv(cells: Sequence[SweepCell]) -> str:
    if not cells:
        return ""
    names = list(cells[0].params.keys())
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(names + ["mean", "std", "n", "error"])
    for cell in cells:
        row = [repr(cell.params[n]) if isinstance(cell.params[n], (list, tuple))
               else cell.params[n] for n in names]
        if cell.error is None:
            row += [f"{cell.mean:.6g}", f"{cell.std:.6g}", len(cell.values), ""]
        else:
            row += ["", "", 0, cell.error]
        writer.writerow(row)
    return out.getvalue()
