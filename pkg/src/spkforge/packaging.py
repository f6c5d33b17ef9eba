"""Model packages and the local name-keyed registry.

A package is a self-contained directory:

    <name>/
        config.cfg     canonical config snapshot
        params.spkp    extractor parameters and buffers
        metadata.txt   name, embed_dim, created, config_hash, content_hash

The content hash seals config + parameters + identity fields; any edit to
the packaged files surfaces as a "hash mismatch" at load time. Packaging
re-extracts probe embeddings through a reload of the written files and
refuses to seal unless they match the in-memory model bit for bit.

The registry is a directory of packages keyed by model name. Lookup is a
single path join, registration is a copy, duplicates are rejected.
"""

from __future__ import annotations

import datetime
import hashlib
import os
import shutil
from dataclasses import dataclass

import numpy as np

from .audio import Waveform
from .config import RecipeConfig, load_config, save_config
from .container import load_params, save_params
from .errors import PackagingError, RegistryError
from .features import FeatureSequence
from .trainer import checkpoint_extractor

_META_KEYS = ("name", "embed_dim", "created", "config_hash", "content_hash")
_PROBE_SEED = 20260214
_PROBE_COUNT = 3


def _content_hash(config_bytes, params_bytes, name, embed_dim):
    h = hashlib.sha256()
    for tag, blob in (("config", config_bytes), ("params", params_bytes)):
        h.update(tag.encode("ascii") + b"\0")
        h.update(hashlib.sha256(blob).digest())
    h.update(f"name\0{name}\0embed_dim\0{embed_dim}".encode("utf-8"))
    return h.hexdigest()


@dataclass
class ModelPackage:
    root: str
    name: str
    embed_dim: int
    created: str
    config_hash: str
    content_hash: str
    config: RecipeConfig

    def load_extractor(self):
        from .extractor import build_extractor

        ex = build_extractor(self.config.to_extractor_config(), seed=0)
        state = load_params(os.path.join(self.root, "params.spkp"))
        ex.load_state(state)
        return ex


def _probe_inputs(extractor_cfg):
    """Seed-fixed inputs for the pre-seal re-extraction check."""
    rng = np.random.default_rng(_PROBE_SEED)
    probes = []
    for _ in range(_PROBE_COUNT):
        if extractor_cfg.frontend == "precomputed_file":
            frames = rng.normal(size=(40, extractor_cfg.feature_dim or extractor_cfg.n_mels))
            probes.append(FeatureSequence(frames, 100.0))
        else:
            n = int(0.8 * extractor_cfg.sample_rate)
            probes.append(Waveform(rng.normal(size=n) * 0.1, extractor_cfg.sample_rate))
    return probes


def package_model(checkpoint, cfg: RecipeConfig, name, out_dir):
    """Seal a trained checkpoint + its config into <out_dir>/<name>."""
    if not name or any(c.isspace() for c in name) or os.sep in name or name.startswith("."):
        raise PackagingError(f"bad model name {name!r}: need a plain directory-safe token")
    if checkpoint.config_hash and checkpoint.config_hash != cfg.config_hash():
        raise PackagingError(
            f"hash mismatch: checkpoint was trained under config {checkpoint.config_hash[:12]}, "
            f"packaging config is {cfg.config_hash()[:12]}"
        )
    target = os.path.join(out_dir, name)
    if os.path.exists(target):
        raise PackagingError(f"name collision: {target} already exists")

    extractor_cfg = cfg.to_extractor_config()
    ex = checkpoint_extractor(checkpoint, extractor_cfg)
    probes = _probe_inputs(extractor_cfg)
    want = np.stack([ex.extract(p) for p in probes])

    os.makedirs(out_dir, exist_ok=True)
    tmp = target + ".partial"
    if os.path.exists(tmp):
        shutil.rmtree(tmp)
    os.makedirs(tmp)
    try:
        save_config(cfg, os.path.join(tmp, "config.cfg"))
        save_params(os.path.join(tmp, "params.spkp"), ex.state())
        with open(os.path.join(tmp, "config.cfg"), "rb") as f:
            config_bytes = f.read()
        with open(os.path.join(tmp, "params.spkp"), "rb") as f:
            params_bytes = f.read()
        created = datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        meta = {
            "name": name,
            "embed_dim": str(extractor_cfg.embed_dim),
            "created": created,
            "config_hash": cfg.config_hash(),
            "content_hash": _content_hash(config_bytes, params_bytes, name, extractor_cfg.embed_dim),
        }
        with open(os.path.join(tmp, "metadata.txt"), "w", encoding="utf-8") as f:
            for k in _META_KEYS:
                f.write(f"{k}: {meta[k]}\n")

        # Seal only if a cold reload of the written files reproduces the
        # probe embeddings exactly.
        reloaded = load_package(tmp)
        got = np.stack([reloaded.load_extractor().extract(p) for p in probes])
        if not np.array_equal(want, got):
            raise PackagingError("re-extraction after reload does not match; refusing to seal")
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    os.rename(tmp, target)
    return load_package(target)


def load_package(path):
    meta_path = os.path.join(path, "metadata.txt")
    if not os.path.isfile(meta_path):
        raise PackagingError(f"not a model package (no metadata.txt): {path}")
    meta = {}
    with open(meta_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            if ": " not in line:
                raise PackagingError(f"{meta_path}:{lineno}: expected 'key: value'")
            k, v = line.split(": ", 1)
            meta[k] = v
    missing = [k for k in _META_KEYS if k not in meta]
    if missing:
        raise PackagingError(f"{meta_path}: missing fields {missing}")
    try:
        embed_dim = int(meta["embed_dim"])
    except ValueError:
        raise PackagingError(f"{meta_path}: embed_dim must be an integer") from None

    with open(os.path.join(path, "config.cfg"), "rb") as f:
        config_bytes = f.read()
    with open(os.path.join(path, "params.spkp"), "rb") as f:
        params_bytes = f.read()
    want = _content_hash(config_bytes, params_bytes, meta["name"], embed_dim)
    if want != meta["content_hash"]:
        raise PackagingError(f"hash mismatch: package {path} contents do not match their seal")

    cfg = load_config(os.path.join(path, "config.cfg"))
    if cfg.config_hash() != meta["config_hash"]:
        raise PackagingError(f"hash mismatch: config snapshot in {path} disagrees with metadata")
    if cfg.get("extractor", "embed_dim") != embed_dim:
        raise PackagingError(f"{meta_path}: embed_dim {embed_dim} disagrees with config")
    return ModelPackage(
        root=path,
        name=meta["name"],
        embed_dim=embed_dim,
        created=meta["created"],
        config_hash=meta["config_hash"],
        content_hash=meta["content_hash"],
        config=cfg,
    )


# -- registry -----------------------------------------------------------------


@dataclass
class Registry:
    root: str


def resolve_registry_dir(explicit="", fallback=""):
    """SPKFORGE_REGISTRY overrides everything, then the configured
    directory, then a caller fallback, then the per-user default."""
    env = os.environ.get("SPKFORGE_REGISTRY", "")
    if env:
        return env
    if explicit:
        return explicit
    if fallback:
        return fallback
    return os.path.join(os.path.expanduser("~"), ".spkforge", "registry")


def register(package: ModelPackage, registry: Registry):
    os.makedirs(registry.root, exist_ok=True)
    dest = os.path.join(registry.root, package.name)
    if os.path.exists(dest):
        raise RegistryError(f"model {package.name!r} is already registered in {registry.root}")
    shutil.copytree(package.root, dest)
    return load_package(dest)


def list_models(registry: Registry):
    if not os.path.isdir(registry.root):
        return []
    return sorted(
        d for d in os.listdir(registry.root)
        if os.path.isfile(os.path.join(registry.root, d, "metadata.txt"))
    )


def _lookup(name, registry):
    path = os.path.join(registry.root, name)
    if os.sep in name or not os.path.isfile(os.path.join(path, "metadata.txt")):
        names = list_models(registry)
        listing = ", ".join(names) if names else "(none)"
        raise RegistryError(f"unknown model {name!r}; registered models: {listing}")
    return path


def model_info(name, registry: Registry):
    return load_package(_lookup(name, registry))


def load_by_name(name, registry: Registry):
    """Registered name -> ready extractor (plus its package)."""
    pkg = load_package(_lookup(name, registry))
    return pkg.load_extractor(), pkg
