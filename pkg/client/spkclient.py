"""Thin client for a spkforge model registry.

Everything goes through the ``spkforge`` command-line tool in a
subprocess; this module never imports the toolkit and has no
dependencies beyond the standard library, so it can be dropped next to
any script that needs speaker embeddings.

The registry is resolved the same way the tool resolves it: an explicit
``registry_dir`` argument wins, otherwise the SPKFORGE_REGISTRY
environment variable, otherwise ~/.spkforge/registry.

    import spkclient

    model = spkclient.open("toy")
    vector = spkclient.embed(model, "utt.wav")
"""

import subprocess
from dataclasses import dataclass

__all__ = ["ClientError", "ModelHandle", "open", "embed"]


class ClientError(Exception):
    """The spkforge tool is missing, rejected the request, or returned
    output this client cannot parse."""


@dataclass(frozen=True)
class ModelHandle:
    """A looked-up registered model; pass to embed()."""

    name: str
    embed_dim: int
    registry_dir: str = ""


def _run(argv):
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except FileNotFoundError:
        raise ClientError("spkforge executable not found on PATH") from None
    if proc.returncode != 0:
        raise ClientError(proc.stderr.strip() or f"exit code {proc.returncode}")
    return proc.stdout


def open(model_name, registry_dir=""):
    """Look up a registered model and return a handle.

    Unknown names raise ClientError carrying the tool's own message,
    which lists the models the registry does hold.
    """
    argv = ["spkforge", "registry"]
    if registry_dir:
        argv += ["--registry", str(registry_dir)]
    argv += ["info", model_name]
    meta = {}
    out = _run(argv)
    for line in out.splitlines():
        key, sep, value = line.partition(":")
        if sep:
            meta[key.strip()] = value.strip()
    try:
        dim = int(meta["embed_dim"])
    except (KeyError, ValueError):
        raise ClientError(f"unexpected registry info output:\n{out}") from None
    return ModelHandle(model_name, dim, str(registry_dir))


def embed(handle, wav_path):
    """Embed one wav file with an opened model.

    Returns a list of handle.embed_dim floats (the tool prints with six
    decimals; treat small differences across machines accordingly).
    """
    argv = ["spkforge", "embed", "--model", handle.name, "--wav", str(wav_path)]
    if handle.registry_dir:
        argv += ["--registry", handle.registry_dir]
    out = _run(argv)
    try:
        vec = [float(x) for x in out.split()]
    except ValueError:
        raise ClientError(f"could not parse embedding output: {out!r}") from None
    if len(vec) != handle.embed_dim:
        raise ClientError(f"expected {handle.embed_dim} values, got {len(vec)}")
    return vec
