"""Corpus ingestion, normalization, pre-tokenization and line sampling.

Datasets are newline-delimited UTF-8 text files tracked in a versioned JSON
manifest. Invalid UTF-8 byte sequences are replaced with U+FFFD at ingestion
so the rest of the pipeline stays total over crawled data. No Unicode
normalization form is applied.
"""

from __future__ import annotations

import os
import random
import time
import unicodedata
from dataclasses import dataclass, field, replace
from pathlib import Path

from .artifacts import FORMAT_VERSION, dump_artifact, load_artifact
from .errors import ValidationError

KINDS = ("monolingual", "parallel")


@dataclass(frozen=True)
class DatasetRecord:
    """One ingested dataset: a text file plus its counted statistics."""

    id: str
    language: str
    kind: str
    line_count: int
    byte_count: int
    source_path: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.line_count < 0 or self.byte_count < 0:
            raise ValidationError("line_count and byte_count must be non-negative")


@dataclass(frozen=True)
class CorpusManifest:
    """Ordered collection of dataset records, stable across serialization."""

    datasets: tuple[DatasetRecord, ...] = ()
    created_at: str = field(default_factory=lambda: _now_iso())
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        ids = [d.id for d in self.datasets]
        if len(ids) != len(set(ids)):
            raise ValidationError("dataset ids must be unique")

    def get(self, dataset_id: str) -> DatasetRecord:
        for record in self.datasets:
            if record.id == dataset_id:
                return record
        raise ValidationError(f"unknown dataset id {dataset_id!r}")

    def __contains__(self, dataset_id: str) -> bool:
        return any(d.id == dataset_id for d in self.datasets)

    def select(self, dataset_ids: list[str]) -> tuple[DatasetRecord, ...]:
        return tuple(self.get(i) for i in dataset_ids)


@dataclass(frozen=True)
class PreToken:
    """Whitespace-free text unit; digits are always singleton pre-tokens."""

    text: str
    is_word_start: bool


def _now_iso() -> str:
    # SOURCE_DATE_EPOCH (reproducible-builds convention) freezes the timestamp
    # so identical ingestions can produce identical manifest bytes.
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    stamp = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(stamp))


def normalize_line(text: str) -> str:
    """Trim and collapse all Unicode whitespace runs to single spaces."""
    return " ".join(text.split())


def _is_digit(ch: str) -> bool:
    return unicodedata.category(ch) == "Nd"


def pretokenize(text: str) -> list[PreToken]:
    """Split a normalized line on whitespace, then isolate each Nd digit.

    The first pre-token of every whitespace-delimited chunk carries
    ``is_word_start=True``; digit splits inside a chunk do not start words.
    """
    out: list[PreToken] = []
    for chunk in text.split():
        first = True
        buf: list[str] = []
        for ch in chunk:
            if _is_digit(ch):
                if buf:
                    out.append(PreToken("".join(buf), first))
                    first = False
                    buf = []
                out.append(PreToken(ch, first))
                first = False
            else:
                buf.append(ch)
        if buf:
            out.append(PreToken("".join(buf), first))
    return out


def read_lines(record: DatasetRecord) -> list[str]:
    """Raw lines of a dataset, invalid UTF-8 replaced exactly as at ingestion."""
    with open(record.source_path, "r", encoding="utf-8", errors="replace") as handle:
        return handle.read().splitlines()


def _count_file(path: str | Path) -> tuple[int, int]:
    byte_count = os.path.getsize(path)
    with open(path, "r", encoding="utf-8", errors="replace") as handle:
        line_count = sum(1 for _ in handle)
    return line_count, byte_count


def default_dataset_id(path: str | Path, language: str, kind: str) -> str:
    short = "mono" if kind == "monolingual" else "par"
    return f"{language}-{short}-{Path(path).stem}"


def ingest(
    manifest: CorpusManifest,
    path: str | Path,
    language: str,
    kind: str,
    pair_path: str | Path | None = None,
    dataset_id: str | None = None,
) -> tuple[CorpusManifest, DatasetRecord]:
    """Register a dataset, counting its lines and bytes.

    Parallel datasets may supply the aligned target side as ``pair_path``;
    its line count must match and only contributes to ``byte_count``.
    Re-ingesting an identical (path, language, kind) is a no-op.
    """
    if kind not in KINDS:
        raise ValidationError(f"kind must be one of {KINDS}, got {kind!r}")
    if pair_path is not None and kind != "parallel":
        raise ValidationError("pair_path is only valid for parallel datasets")

    line_count, byte_count = _count_file(path)
    if line_count == 0:
        raise ValidationError(f"empty dataset: {path}")
    if pair_path is not None:
        pair_lines, pair_bytes = _count_file(pair_path)
        if pair_lines != line_count:
            raise ValidationError(
                f"unaligned parallel files: {path} has {line_count} lines, "
                f"{pair_path} has {pair_lines}"
            )
        byte_count += pair_bytes

    record = DatasetRecord(
        id=dataset_id or default_dataset_id(path, language, kind),
        language=language,
        kind=kind,
        line_count=line_count,
        byte_count=byte_count,
        source_path=str(path),
    )

    existing = next((d for d in manifest.datasets if d.id == record.id), None)
    if existing == record:
        return manifest, existing
    if existing is not None:
        if (existing.language, existing.kind, existing.source_path) != (
            record.language,
            record.kind,
            record.source_path,
        ):
            raise ValidationError(
                f"dataset id {record.id!r} already registered for a different source; "
                "pass an explicit dataset_id"
            )
        datasets = tuple(record if d.id == record.id else d for d in manifest.datasets)
    else:
        datasets = manifest.datasets + (record,)
    return replace(manifest, datasets=datasets), record


def sample_lines(record: DatasetRecord, count: int, seed: int) -> list[str]:
    """Uniform sample without replacement, deterministic for a fixed seed.

    Returns all lines (in file order) when ``count`` covers the dataset;
    sampled lines keep their original file order.
    """
    if count < 1:
        raise ValidationError("sample count must be >= 1")
    lines = read_lines(record)
    if count >= len(lines):
        return lines
    picked = random.Random(seed).sample(range(len(lines)), count)
    return [lines[i] for i in sorted(picked)]


def manifest_to_payload(manifest: CorpusManifest) -> dict:
    return {
        "kind": "manifest",
        "format_version": manifest.format_version,
        "created_at": manifest.created_at,
        "datasets": [
            {
                "id": d.id,
                "language": d.language,
                "kind": d.kind,
                "line_count": d.line_count,
                "byte_count": d.byte_count,
                "source_path": d.source_path,
            }
            for d in manifest.datasets
        ],
    }


def manifest_from_payload(payload: dict) -> CorpusManifest:
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"unsupported manifest format_version {payload.get('format_version')!r}"
        )
    datasets = tuple(
        DatasetRecord(
            id=d["id"],
            language=d["language"],
            kind=d["kind"],
            line_count=d["line_count"],
            byte_count=d["byte_count"],
            source_path=d["source_path"],
        )
        for d in payload["datasets"]
    )
    return CorpusManifest(
        datasets=datasets,
        created_at=payload["created_at"],
        format_version=payload["format_version"],
    )


def save_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    dump_artifact(manifest_to_payload(manifest), path)


def load_manifest(path: str | Path) -> CorpusManifest:
    return manifest_from_payload(load_artifact(path, kind="manifest"))
