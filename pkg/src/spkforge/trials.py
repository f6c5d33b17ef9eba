"""Trial lists: (enrollment utterance, test utterance, label) triples.

File format: UTF-8 lines "label enroll_utt test_utt" where label is 1
(target), 0 (nontarget), or the word spoof.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TrialError

LABELS = ("target", "nontarget", "spoof")
_LABEL_TO_FIELD = {"target": "1", "nontarget": "0", "spoof": "spoof"}
_FIELD_TO_LABEL = {"1": "target", "0": "nontarget", "spoof": "spoof"}


@dataclass
class Trial:
    enroll: str
    test: str
    label: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise TrialError(f"bad trial label {self.label!r}; expected one of {LABELS}")


def save_trials(path, trials):
    with open(path, "w", encoding="utf-8") as f:
        for t in trials:
            f.write(f"{_LABEL_TO_FIELD[t.label]} {t.enroll} {t.test}\n")


def load_trials(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 3 or parts[0] not in _FIELD_TO_LABEL:
                raise TrialError(f"{path}:{lineno}: expected 'label enroll test' with label 1/0/spoof")
            out.append(Trial(parts[1], parts[2], _FIELD_TO_LABEL[parts[0]]))
    return out


def make_trials(manifest, num_target, num_nontarget, seed):
    """Sample a deterministic trial list from a manifest.

    Pairs are drawn with replacement (duplicate trials are legal), an
    utterance is never paired with itself, and the requested counts are met
    exactly or the sampling fails.
    """
    if num_target < 0 or num_nontarget < 0:
        raise TrialError("trial counts must be non-negative")
    rng = np.random.default_rng(seed)
    by_spk = {}
    for e in manifest:
        by_spk.setdefault(e.speaker_id, []).append(e.utt_id)
    for utts in by_spk.values():
        utts.sort()
    speakers = sorted(by_spk)
    multi = [s for s in speakers if len(by_spk[s]) >= 2]
    if num_target > 0 and not multi:
        raise TrialError("no speaker has 2 utterances; cannot sample target trials")
    if num_nontarget > 0 and len(speakers) < 2:
        raise TrialError("fewer than 2 speakers; cannot sample nontarget trials")

    trials = []
    for _ in range(num_target):
        spk = multi[rng.integers(len(multi))]
        a, b = rng.choice(len(by_spk[spk]), size=2, replace=False)
        trials.append(Trial(by_spk[spk][a], by_spk[spk][b], "target"))
    for _ in range(num_nontarget):
        ia, ib = rng.choice(len(speakers), size=2, replace=False)
        ua = by_spk[speakers[ia]]
        ub = by_spk[speakers[ib]]
        trials.append(Trial(ua[rng.integers(len(ua))], ub[rng.integers(len(ub))], "nontarget"))
    return trials
