"""CSV reading/writing for motion datasets.

Layout: a header row naming every column, one row per frame.  A ``seq`` column
carries the integer sequence id (frames of one sequence are contiguous) and an
optional ``phase`` column carries the gait phase in radians.  All remaining
columns are observation channels, in order.
"""

from __future__ import annotations

import csv
import io

import numpy as np

RESERVED_COLUMNS = ("seq", "phase")


def dataset_to_csv(path, observations, sequence_ids, channel_names, phase=None):
    observations = np.asarray(observations, dtype=float)
    n, d = observations.shape
    if len(channel_names) != d:
        raise ValueError(f"{len(channel_names)} names for {d} channels")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["seq"] + (["phase"] if phase is not None else []) + list(channel_names)
        writer.writerow(header)
        for i in range(n):
            row = [int(sequence_ids[i])]
            if phase is not None:
                row.append(repr(float(phase[i])))
            row.extend(repr(float(v)) for v in observations[i])
            writer.writerow(row)


def dataset_from_csv(path):
    """Returns (observations, sequence_starts, phase_or_None, channel_names).

    Raises ValueError with the offending line number on malformed input.
    """
    with open(path, "r", newline="") as fh:
        text = fh.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("line 1: empty file") from None
    if "seq" not in header:
        raise ValueError("line 1: missing required 'seq' column")
    seq_col = header.index("seq")
    phase_col = header.index("phase") if "phase" in header else None
    chan_cols = [i for i, name in enumerate(header) if name not in RESERVED_COLUMNS]
    channel_names = [header[i] for i in chan_cols]
    if not chan_cols:
        raise ValueError("line 1: no observation channels")

    rows, seq_ids, phases = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            seq_ids.append(int(row[seq_col]))
            if phase_col is not None:
                phases.append(float(row[phase_col]))
            rows.append([float(row[i]) for i in chan_cols])
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric field") from None
    if not rows:
        raise ValueError("line 2: no data rows")

    observations = np.asarray(rows, dtype=float)
    seq_ids = np.asarray(seq_ids)
    starts = [0] + [i for i in range(1, len(seq_ids)) if seq_ids[i] != seq_ids[i - 1]]
    phase = np.asarray(phases) if phase_col is not None else None
    return observations, starts, phase, channel_names
