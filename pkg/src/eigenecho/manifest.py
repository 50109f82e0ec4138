"""Experiment manifests: canonical JSON and content hashing.

Result files embed the manifest hash so identical configurations can be
recognised and reruns byte-compared. Canonicalisation sorts keys, so the
hash is stable under key reordering.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def content_hash(obj):
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def family_hash(family):
    return content_hash(family.describe())[:16]


@dataclass
class ExperimentManifest:
    config: dict
    command: str
    seed: int = 0
    version: str = "eigenecho-0.1.0"
    extra: dict = field(default_factory=dict)

    def payload(self):
        return {
            "config": self.config,
            "command": self.command,
            "seed": self.seed,
            "version": self.version,
            "extra": self.extra,
        }

    @property
    def hash(self):
        return content_hash(self.payload())

    def to_dict(self):
        d = self.payload()
        d["hash"] = self.hash
        return d
