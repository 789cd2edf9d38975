"""
Recording segmentation
Cuts a uniformly sampled membrane-potential style recording into killed
trajectories, one per inter-spike interval
"""

import logging
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..core.exceptions import ConfigError
from ..core.likelihood import KilledTrajectory

logger = logging.getLogger(__name__)


class ThresholdMode(str, Enum):
    MANUAL = "manual"
    MAX_PLUS_EPS = "max_plus_eps"


class ThresholdRule(BaseModel):
    """How the threshold of a group of segments is chosen"""
    mode: ThresholdMode = Field(default=ThresholdMode.MANUAL)
    value: Optional[float] = Field(default=None, description="Threshold for the manual rule, after translation")
    epsilon: float = Field(default=0.1, gt=0, description="Margin above the highest sub-spike sample")

    @model_validator(mode="after")
    def _check_value(self) -> "ThresholdRule":
        if self.mode == ThresholdMode.MANUAL and self.value is None:
            raise ValueError("the manual threshold rule needs a value")
        return self


class RecordingSegment(BaseModel):
    """One inter-spike piece of a recording, translated and cut below its threshold"""
    samples: List[float] = Field(description="Retained samples, all below b")
    delta: float = Field(gt=0, description="Sampling step of the recording")
    offset: float = Field(description="Translation added to every raw sample")
    start_level: float = Field(description="Level a segment must reach after the post-spike trough")
    b: float = Field(description="Threshold of the segment group")
    start_index: int = Field(ge=0, description="Index of the first retained sample in the recording")
    crossed: bool = Field(description="Whether the segment ends at a threshold crossing")

    def to_trajectory(self, traj_id: Optional[str] = None) -> KilledTrajectory:
        return KilledTrajectory(
            x0=self.samples[0],
            delta=self.delta,
            b=self.b,
            obs=self.samples[1:],
            crossed=self.crossed,
            traj_id=traj_id if traj_id is not None else str(self.start_index),
        )


def find_spikes(x: np.ndarray, spike_level: float) -> List[Tuple[int, int]]:
    """Runs of samples at or above spike_level as (first, one past last) index pairs."""
    above = np.concatenate(([False], x >= spike_level, [False])).astype(np.int8)
    edges = np.diff(above)
    return list(zip(np.flatnonzero(edges == 1).tolist(), np.flatnonzero(edges == -1).tolist()))


def _segment_start(x: np.ndarray, spike_end: int, stop: int, start_level: float) -> Optional[int]:
    """First sample at or above start_level after the trough following a spike."""
    if spike_end >= stop:
        return None
    trough = spike_end + int(np.argmin(x[spike_end:stop]))
    rising = np.flatnonzero(x[trough:stop] >= start_level)
    return trough + int(rising[0]) if rising.size else None


def segment_recording(
    samples: Sequence[float],
    delta: float,
    offset: float,
    start_level: float,
    spike_level: float,
    threshold_rule: ThresholdRule,
) -> List[RecordingSegment]:
    """
    Split a recording into killed trajectories.

    The record is translated by offset. Spikes are runs of samples at or
    above spike_level. The first segment starts at the record start, every
    later one at the first sample at or above start_level after the trough
    that follows a spike. A segment ends before the first sample at or above
    the group threshold, or before the next spike. The piece after the last
    spike is dropped; a record without spikes is a single non-crossing
    segment.

    Args:
        samples: Raw samples at a uniform step
        delta: Sampling step
        offset: Translation added to every sample
        start_level: Start level after translation
        spike_level: Spike detection level after translation
        threshold_rule: Manual threshold or highest sub-spike sample plus epsilon

    Returns:
        Segments in recording order
    """
    if delta <= 0:
        raise ConfigError(f"sampling step must be positive, got {delta}")
    x = np.asarray(samples, dtype=float) + offset
    if x.size == 0:
        return []

    spikes = find_spikes(x, spike_level)
    pieces: List[Tuple[int, int, bool]] = []
    if not spikes:
        logger.warning("⚠️ no spike found: the whole recording is one non-crossing segment")
        pieces.append((0, x.size, False))
    else:
        starts = [0] + [_segment_start(x, end, nxt, start_level)
                        for (_, end), (nxt, _) in zip(spikes[:-1], spikes[1:])]
        for start, (spike_start, _) in zip(starts, spikes):
            if start is None or start >= spike_start:
                logger.warning(f"⚠️ no segment before the spike at sample {spike_start}")
                continue
            pieces.append((start, spike_start, True))

    if threshold_rule.mode == ThresholdMode.MANUAL:
        b = threshold_rule.value
    else:
        b = max(float(x[lo:hi].max()) for lo, hi, _ in pieces) + threshold_rule.epsilon if pieces else np.inf

    segments = []
    for lo, hi, crossed in pieces:
        hits = np.flatnonzero(x[lo:hi] >= b)
        if hits.size:
            hi, crossed = lo + int(hits[0]), True
        if hi <= lo:
            logger.warning(f"⚠️ segment starting at sample {lo} is already at or above b={b}")
            continue
        segments.append(RecordingSegment(
            samples=x[lo:hi].tolist(),
            delta=delta,
            offset=offset,
            start_level=start_level,
            b=b,
            start_index=lo,
            crossed=crossed,
        ))

    if segments:
        mean_len = np.mean([len(s.samples) for s in segments])
        logger.info(f"✂️ {len(segments)} segments, {mean_len:.1f} samples on average, b={b}")
    return segments
