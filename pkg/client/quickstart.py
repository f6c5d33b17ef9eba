"""Smallest round trip: open a registered model, embed one wav.

Usage: python3 quickstart.py <model_name> <wav_path>
"""

import sys

import spkclient

model = spkclient.open(sys.argv[1])
vector = spkclient.embed(model, sys.argv[2])
print(f"{model.name}: {len(vector)} dims, first 4 = {vector[:4]}")
