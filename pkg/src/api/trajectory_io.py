"""
Trajectory CSV input/output
Reads and writes killed trajectories in the long format traj_id,step_index,value
"""

import logging
import os
import tempfile
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, ValidationError

from config.settings import settings
from ..core.exceptions import ConfigError, TrajectoryParseError
from ..core.likelihood import KilledTrajectory

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["traj_id", "step_index", "value"]


class X0Rule(str, Enum):
    """Where a trajectory's initial state comes from"""
    AUTO = "auto"            # step 0 row if present, otherwise the fixed x0
    STEP0_ROW = "step0_row"  # every trajectory must carry a step 0 row
    FIXED = "fixed"          # schema x0; step 0 rows are rejected


class TrajectorySchema(BaseModel):
    """Side information the CSV does not carry"""
    delta: float = Field(gt=0, description="Sampling step shared by all trajectories")
    b: Optional[float] = Field(default=None, description="Global threshold")
    b_per_traj: Dict[str, float] = Field(default_factory=dict, description="Thresholds by traj_id, overriding b")
    x0_rule: X0Rule = Field(default=X0Rule.AUTO, description="Initial-state rule")
    x0: Optional[float] = Field(default=None, description="Initial state for the fixed rule")
    crossed: bool = Field(default=True, description="Whether every trajectory ends with an observed crossing")

    def threshold_for(self, traj_id: str) -> float:
        if traj_id in self.b_per_traj:
            return self.b_per_traj[traj_id]
        if self.b is None:
            raise ConfigError(f"no threshold for trajectory '{traj_id}': set b or b_per_traj")
        return self.b


def write_csv_atomic(frame: pd.DataFrame, path: str, float_format: Optional[str] = None) -> str:
    """Write a DataFrame to path through a temporary file in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp_", suffix=".csv", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            frame.to_csv(handle, index=False, float_format=float_format or settings.CSV_FLOAT_FORMAT)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def trajectories_frame(trajs: Sequence[KilledTrajectory]) -> pd.DataFrame:
    """Long-format rows: step 0 holds x0, steps 1..N-1 the observations."""
    rows = []
    for i, traj in enumerate(trajs):
        traj_id = traj.traj_id if traj.traj_id is not None else str(i)
        rows.extend((traj_id, step, value) for step, value in enumerate(traj.path()))
    frame = pd.DataFrame(rows, columns=CSV_COLUMNS)
    return frame.astype({"traj_id": str, "step_index": np.int64, "value": float})


def emit_trajectories(path: str, trajs: Sequence[KilledTrajectory]) -> str:
    """
    Write trajectories as CSV with 17 significant digits, atomically.

    Args:
        path: Destination file
        trajs: Trajectories; a missing traj_id becomes the list index

    Returns:
        The written path
    """
    if any(not t.crossed for t in trajs):
        logger.warning("⚠️ the CSV format does not record non-crossing trajectories; use crossed=false in the schema when reading back")
    write_csv_atomic(trajectories_frame(trajs), path)
    logger.info(f"💾 wrote {len(trajs)} trajectories to {path}")
    return path


def _read_rows(path: str) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, na_filter=False, skip_blank_lines=False)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=CSV_COLUMNS)
    except pd.errors.ParserError as e:
        raise TrajectoryParseError(f"malformed CSV: {e}") from e
    header = [c.strip() for c in frame.columns]
    if header != CSV_COLUMNS:
        raise TrajectoryParseError(f"expected header {','.join(CSV_COLUMNS)}, got {','.join(header)}", line=1)
    frame.columns = CSV_COLUMNS
    return frame


def ingest_trajectories(path: str, schema: TrajectorySchema) -> List[KilledTrajectory]:
    """
    Read killed trajectories from a traj_id,step_index,value CSV.

    Rows of one trajectory may appear in any order but their step indices
    must be contiguous. Trajectories are returned in order of first
    appearance.

    Args:
        path: CSV file
        schema: Sampling step, thresholds and x0 rule

    Returns:
        Validated trajectories

    Raises:
        TrajectoryParseError: Malformed rows (with the file line number),
            values at or above the threshold, gaps in step indices
        ConfigError: Missing threshold or x0 for a trajectory
    """
    frame = _read_rows(path)
    steps: Dict[str, Dict[int, float]] = {}
    lines: Dict[str, Dict[int, int]] = {}

    # Header is line 1, so DataFrame row r sits on line r + 2
    for r, (traj_id, step_text, value_text) in enumerate(frame.itertuples(index=False, name=None)):
        line = r + 2
        traj_id, step_text, value_text = (str(v).strip() for v in (traj_id, step_text, value_text))
        if not (traj_id or step_text or value_text):
            continue
        if not traj_id:
            raise TrajectoryParseError("empty traj_id", line)
        try:
            step = int(step_text)
            value = float(value_text)
        except ValueError:
            raise TrajectoryParseError(f"cannot parse step_index={step_text!r}, value={value_text!r}", line) from None
        if step < 0 or not np.isfinite(value):
            raise TrajectoryParseError(f"invalid row (step_index={step}, value={value})", line)
        if step in steps.setdefault(traj_id, {}):
            raise TrajectoryParseError(f"duplicate step_index {step} for trajectory '{traj_id}'", line)
        if value >= schema.threshold_for(traj_id):
            raise TrajectoryParseError(
                f"value {value} of trajectory '{traj_id}' is not below b={schema.threshold_for(traj_id)}", line
            )
        steps[traj_id][step] = value
        lines.setdefault(traj_id, {})[step] = line

    trajectories = []
    for traj_id, by_step in steps.items():
        has_step0 = 0 in by_step
        if schema.x0_rule == X0Rule.STEP0_ROW and not has_step0:
            raise TrajectoryParseError(f"trajectory '{traj_id}' has no step 0 row")
        if schema.x0_rule == X0Rule.FIXED and has_step0:
            raise TrajectoryParseError("step 0 row not allowed with the fixed x0 rule", lines[traj_id][0])
        if has_step0:
            x0 = by_step.pop(0)
        elif schema.x0 is None:
            raise ConfigError(f"trajectory '{traj_id}' has no step 0 row and no fixed x0 is configured")
        else:
            x0 = schema.x0

        expected = list(range(1, len(by_step) + 1))
        if sorted(by_step) != expected:
            missing = sorted(set(expected) - set(by_step))
            raise TrajectoryParseError(f"trajectory '{traj_id}' has non-contiguous step indices (missing {missing[:5]})")
        try:
            trajectories.append(KilledTrajectory(
                x0=x0,
                delta=schema.delta,
                b=schema.threshold_for(traj_id),
                obs=[by_step[i] for i in expected],
                crossed=schema.crossed,
                traj_id=traj_id,
            ))
        except ValidationError as e:
            raise TrajectoryParseError(f"trajectory '{traj_id}': {e.errors()[0]['msg']}") from e

    logger.info(f"📥 read {len(trajectories)} trajectories from {path}")
    return trajectories
