#!/usr/bin/env python3
"""Train the toy recipe with and without its encoder and compare metrics.

Runs configs/toy.cfg and configs/toy_identity.cfg (stages 1-8 each,
already-fresh stages are skipped) and prints the held-out EER / minDCF
side by side. The identity run shares everything with the main run
except the encoder, so the gap is what the encoder buys.
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from spkforge.config import load_config
from spkforge.pipeline import run_pipeline


def read_metrics(path):
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if "=" in line and " " not in line:
                key, value = line.split("=", 1)
                out[key] = float(value)
    return out


def main():
    rows = []
    for label, cfg_path in [
        ("ecapa_lite", os.path.join("configs", "toy.cfg")),
        ("identity", os.path.join("configs", "toy_identity.cfg")),
    ]:
        cfg = load_config(cfg_path)
        print(f"== {label}: {cfg_path}")
        run = run_pipeline(cfg, 1, 8, log=print)
        values = read_metrics(run.metrics_file)
        rows.append((label, values["eer"], values["mindcf"]))

    print(f"\n{'encoder':<12} {'EER':>8} {'minDCF':>8}")
    for label, e, d in rows:
        print(f"{label:<12} {e:>8.4f} {d:>8.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
