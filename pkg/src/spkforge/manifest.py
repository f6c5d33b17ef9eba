"""Utterance manifests and corpus statistics.

Manifest file format: UTF-8 lines "utt_id speaker_id path duration" with
single spaces; paths may not contain whitespace (the corpus layout is ours,
so this is enforced at write time rather than escaped).
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ManifestError


@dataclass
class ManifestEntry:
    utt_id: str
    speaker_id: str
    path: str
    duration_seconds: float


@dataclass
class DatasetStats:
    num_utts: int
    num_speakers: int
    total_hours: float
    per_speaker: dict


class Manifest:
    def __init__(self, entries):
        self.entries = list(entries)
        seen = set()
        for e in self.entries:
            if e.utt_id in seen:
                raise ManifestError(f"duplicate utt_id {e.utt_id!r}")
            seen.add(e.utt_id)
        if self.entries and not self.speakers():
            raise ManifestError("manifest has entries but no speakers")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def speakers(self):
        return sorted({e.speaker_id for e in self.entries})

    def by_utt(self):
        return {e.utt_id: e for e in self.entries}

    def filter(self, keep):
        return Manifest([e for e in self.entries if keep(e)])


def save_manifest(path, manifest):
    with open(path, "w", encoding="utf-8") as f:
        for e in manifest:
            for fieldname, value in (("utt_id", e.utt_id), ("speaker_id", e.speaker_id), ("path", e.path)):
                if not value or any(c.isspace() for c in value):
                    raise ManifestError(f"{fieldname} {value!r} is empty or contains whitespace")
            f.write(f"{e.utt_id} {e.speaker_id} {e.path} {e.duration_seconds:.6f}\n")


def load_manifest(path):
    entries = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                dur = float(parts[3])
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: bad duration {parts[3]!r}") from exc
            entries.append(ManifestEntry(parts[0], parts[1], parts[2], dur))
    return Manifest(entries)


def compute_stats(manifest):
    """Exact corpus counts; total_hours = sum of durations / 3600."""
    if len(manifest) == 0:
        raise ManifestError("cannot compute statistics of an empty manifest")
    per = {}
    total = 0.0
    for e in manifest:
        per[e.speaker_id] = per.get(e.speaker_id, 0) + 1
        total += e.duration_seconds
    return DatasetStats(len(manifest), len(per), total / 3600.0, dict(sorted(per.items())))
