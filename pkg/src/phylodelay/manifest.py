"""Run manifests: canonical JSON with a config hash, the seed, and the package version."""
import hashlib
import json

from . import __version__


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_default)


def _default(o):
    if hasattr(o, "tolist"):
        return o.tolist()
    if hasattr(o, "item"):
        return o.item()
    return str(o)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def build_manifest(kind: str, config: dict, seed, **extra) -> dict:
    out = {
        "kind": kind,
        "version": __version__,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
    }
    out.update(extra)
    return out


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=1, default=_default))
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
