"""Manifest CSV ingestion: ``path,labels,fold,group`` rows into a Dataset."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dsp import SAMPLE_RATE, AudioClip, resample_linear
from .errors import ManifestError
from .training import Dataset
from .wavio import load_clip

HEADER = ["path", "labels", "fold", "group"]


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    labels: tuple  # class indices
    fold: Optional[int]
    group: Optional[str]


def read_class_list(path) -> list:
    """One class name per line; blank lines ignored."""
    names = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(set(names)) != len(names):
        raise ManifestError(f"{path}: duplicate class names")
    return names


def load_manifest(path, class_list: Sequence[str], check_files: bool = True) -> list:
    """Validated entries. Relative paths resolve against the manifest's folder.

    Row numbers in errors count the header as row 1.
    """
    path = Path(path)
    index = {name: k for k, name in enumerate(class_list)}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot open manifest {path}: {exc}") from exc
    entries, seen = [], set()
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != HEADER:
            raise ManifestError(f"{path}: header must be {','.join(HEADER)}, got {header}")
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(HEADER):
                raise ManifestError(f"{path} row {row_no}: expected 4 columns, got {len(row)}")
            rel, labels, fold, group = (c.strip() for c in row)
            clip_path = Path(rel) if Path(rel).is_absolute() else path.parent / rel
            key = str(clip_path.resolve())
            if key in seen:
                raise ManifestError(f"{path} row {row_no}: duplicate entry {rel}")
            seen.add(key)
            if check_files and not clip_path.is_file():
                raise ManifestError(f"{path} row {row_no}: missing file {rel}")
            names = [n.strip() for n in labels.split("|") if n.strip()]
            unknown = [n for n in names if n not in index]
            if unknown:
                raise ManifestError(f"{path} row {row_no}: unknown label {unknown[0]!r}")
            try:
                fold_id = int(fold) if fold else None
            except ValueError as exc:
                raise ManifestError(f"{path} row {row_no}: fold {fold!r} is not an integer") from exc
            entries.append(
                ManifestEntry(clip_path, tuple(sorted({index[n] for n in names})), fold_id, group or None)
            )
    return entries


def targets_for(entries: Sequence[ManifestEntry], n_classes: int) -> np.ndarray:
    y = np.zeros((len(entries), n_classes))
    for i, e in enumerate(entries):
        y[i, list(e.labels)] = 1.0
    return y


def load_dataset(entries: Sequence[ManifestEntry], class_list: Sequence[str]) -> Dataset:
    """Decode every WAV to mono 44.1 kHz."""
    clips = []
    for e in entries:
        clip = load_clip(e.path)
        if clip.sample_rate != SAMPLE_RATE:
            clip = resample_linear(clip, SAMPLE_RATE)
        clips.append(AudioClip(clip.samples, SAMPLE_RATE))
    return Dataset(
        clips,
        targets_for(entries, len(class_list)),
        list(class_list),
        [e.fold for e in entries],
        [e.group for e in entries],
    )
