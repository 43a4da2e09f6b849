"""Historical prototype bank.

A prototype is the arithmetic mean of the fused vectors of one identity
over training anchors from versions strictly older than the cutoff.  The
bank is immutable after build and shared read-only by query workers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .corpus import Identity, version_key, version_lt
from .vecstore import read_vectors, write_vectors


@dataclass(frozen=True)
class PrototypeEntry:
    vector: np.ndarray
    member_count: int
    newest_version_included: str


@dataclass(frozen=True)
class PrototypeBank:
    entries: Mapping[str, PrototypeEntry]
    cutoff_version: str
    # populated only in debug mode; lets tests re-average members
    member_manifest: Mapping[str, list[np.ndarray]] | None = None

    def lookup(self, identity: Identity) -> np.ndarray | None:
        """Stored prototype, or None when the identity is absent."""
        entry = self.entries.get(identity.name)
        return entry.vector if entry is not None else None

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self.entries))


def build_prototypes(
    anchors: Sequence[tuple[str, Identity, np.ndarray]],
    cutoff_version: str,
    keep_members: bool = False,
) -> PrototypeBank:
    """Mean fused vector per identity over anchors strictly older than cutoff.

    ``anchors`` rows are (version, identity, fused vector).  Identities with
    no eligible member are absent; an empty bank is valid.
    """
    members: dict[str, list[np.ndarray]] = {}
    newest: dict[str, str] = {}
    for version, identity, vec in anchors:
        if not version_lt(version, cutoff_version):
            continue
        members.setdefault(identity.name, []).append(np.asarray(vec, dtype=np.float64))
        prev = newest.get(identity.name)
        if prev is None or version_key(version) > version_key(prev):
            newest[identity.name] = version
    entries = {
        name: PrototypeEntry(
            vector=np.mean(vecs, axis=0),
            member_count=len(vecs),
            newest_version_included=newest[name],
        )
        for name, vecs in members.items()
    }
    return PrototypeBank(
        entries=entries,
        cutoff_version=cutoff_version,
        member_manifest=members if keep_members else None,
    )


def serialize_bank(bank: PrototypeBank) -> tuple[str, bytes]:
    """(manifest text, vector store bytes), rows in manifest order.

    Manifest lines are identity, member count, and newest contributing
    version, tab-separated.
    """
    names = sorted(bank.entries)
    lines = [
        f"{name}\t{bank.entries[name].member_count}"
        f"\t{bank.entries[name].newest_version_included}"
        for name in names
    ]
    manifest = "\n".join([f"cutoff\t{bank.cutoff_version}"] + lines) + "\n"
    if names:
        vectors = np.stack([bank.entries[name].vector for name in names])
    else:
        vectors = np.zeros((0, 0), dtype=np.float64)
    return manifest, write_vectors(vectors if names else vectors.reshape(0, 1))


def deserialize_bank(manifest: str, store: bytes) -> PrototypeBank:
    lines = [ln for ln in manifest.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("cutoff\t"):
        raise ValueError("prototype manifest missing cutoff header")
    cutoff = lines[0].split("\t", 1)[1]
    vectors = read_vectors(store)
    entries = {}
    for row, line in enumerate(lines[1:]):
        name, count, newest = line.split("\t")
        entries[name] = PrototypeEntry(
            vector=vectors[row],
            member_count=int(count),
            newest_version_included=newest,
        )
    if len(entries) != vectors.shape[0]:
        raise ValueError("prototype manifest and vector store disagree")
    return PrototypeBank(entries=entries, cutoff_version=cutoff)
