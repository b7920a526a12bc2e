"""COVAREP feature matrices: loading, voicing filter and fixed-length framing."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

N_COVAREP = 74
FRAME_SECONDS = 0.01
DEFAULT_VUV_COLUMN = 1


class CovarepFormatError(ValueError):
    pass


@dataclass
class CovarepMatrix:
    subject_id: str
    rows: np.ndarray  # (frames, 74)
    vuv_column: int = DEFAULT_VUV_COLUMN

    @property
    def n_frames(self) -> int:
        return self.rows.shape[0]

    @property
    def duration_seconds(self) -> float:
        return self.n_frames * FRAME_SECONDS

    def voiced(self) -> np.ndarray:
        """Voiced frames with the VUV column removed: (n_voiced, 73)."""
        mask = self.rows[:, self.vuv_column] == 1
        return np.delete(self.rows[mask], self.vuv_column, axis=1)


@dataclass
class AudioWindow:
    subject_id: str
    sequence: np.ndarray  # (timestep, 73)
    label: int


def load_covarep(path, subject_id: str | None = None, vuv_column: int = DEFAULT_VUV_COLUMN,
                 header: bool = False) -> CovarepMatrix:
    subject_id = subject_id if subject_id is not None else _subject_from_path(path)
    hdr = 0 if header else None
    try:
        df = pd.read_csv(path, header=hdr, dtype=np.float64, float_precision="round_trip")
        arr = df.to_numpy()
    except pd.errors.EmptyDataError:
        return CovarepMatrix(subject_id, np.zeros((0, N_COVAREP)), vuv_column)
    except ValueError:
        arr = _diagnose_cells(path, hdr, header)
    except (pd.errors.ParserError, OSError) as exc:
        raise CovarepFormatError(f"{path}: {exc}") from None
    if arr.shape[1] != N_COVAREP:
        raise CovarepFormatError(f"{path}: expected {N_COVAREP} columns, found {arr.shape[1]}")
    nan_rows = np.isnan(arr).any(axis=1)
    if nan_rows.any():
        log.warning("%s: rejecting %d rows containing NaN", path, int(nan_rows.sum()))
        arr = arr[~nan_rows]
    vuv = arr[:, vuv_column]
    if not np.isin(vuv, (0.0, 1.0)).all():
        raise CovarepFormatError(f"{path}: VUV column {vuv_column} holds values other than 0/1")
    return CovarepMatrix(subject_id, arr, vuv_column)


def _diagnose_cells(path, hdr, header: bool) -> np.ndarray:
    # slow path, only reached when a cell failed to parse: locate it
    df = pd.read_csv(path, header=hdr, dtype=str, keep_default_na=False)
    numeric = df.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    literal_nan = df.apply(lambda col: col.str.strip().str.lower().isin(("nan", "-nan", ""))).to_numpy()
    bad = np.argwhere(np.isnan(numeric) & ~literal_nan)
    if len(bad):
        r, c = bad[0]
        raise CovarepFormatError(
            f"{path}: non-numeric cell {df.iat[r, c]!r} at row {r + 1 + int(header)}, column {c + 1}")
    return numeric


def _subject_from_path(path) -> str:
    name = str(path).replace("\\", "/").rsplit("/", 1)[-1]
    return name.split("_")[0]


def frame_sequences(m: CovarepMatrix, timestep: int, label: int) -> list[AudioWindow]:
    """Consecutive non-overlapping windows of ``timestep`` voiced frames; the
    remainder is discarded."""
    if timestep < 1:
        raise ValueError(f"timestep must be >= 1, got {timestep}")
    voiced = m.voiced()
    count = voiced.shape[0] // timestep
    if voiced.shape[0] == 0:
        log.warning("subject %s has no voiced frames", m.subject_id)
    return [AudioWindow(m.subject_id, voiced[k * timestep:(k + 1) * timestep].copy(), label)
            for k in range(count)]


def frame_array(m: CovarepMatrix, timestep: int) -> np.ndarray:
    """Same windows as ``frame_sequences`` stacked into (n, timestep, 73)."""
    voiced = m.voiced()
    count = voiced.shape[0] // timestep
    return voiced[:count * timestep].reshape(count, timestep, voiced.shape[1])


@dataclass
class FeatureScaler:
    """Per-feature z-score with statistics from the training partition."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, frames: np.ndarray) -> "FeatureScaler":
        frames = frames.reshape(-1, frames.shape[-1]).astype(np.float64)
        std = frames.std(axis=0)
        std[std < 1e-8] = 1.0
        return cls(frames.mean(axis=0), std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.mean) / self.std).astype(np.float32)

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureScaler":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))
