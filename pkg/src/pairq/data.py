"""Dataset types, ingestion, polarity normalization, and content-aware splits.

A database is a set of rated stimuli. Each stimulus carries the mean and
standard deviation of its human opinion scores (in whatever units that
database uses) plus a precomputed feature representation: either a flat
vector or a (spatial, channel) map.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

MOS = "MOS"
DMOS = "DMOS"
POLARITIES = (MOS, DMOS)
SCENARIOS = ("synthetic", "realistic")


class FormatError(ValueError):
    """Malformed record or violated database invariant."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True, eq=False)
class AnnotatedItem:
    """One rated stimulus.

    ``mu`` and ``sigma`` are the opinion mean and standard deviation in the
    database's native units (sigma is unit-consistent with mu). ``features``
    is a 1-D vector or a 2-D (spatial, channel) map.
    """

    id: str
    db: str
    content: str
    mu: float
    sigma: float
    features: np.ndarray

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "sigma", float(self.sigma))
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise FormatError(f"item {self.id!r}: non-finite mu or sigma")
        if self.sigma < 0.0:
            raise FormatError(f"item {self.id!r}: negative sigma {self.sigma}")
        if feats.ndim not in (1, 2) or feats.size == 0:
            raise FormatError(
                f"item {self.id!r}: features must be a nonempty vector or (s, c) map"
            )
        if not np.all(np.isfinite(feats)):
            raise FormatError(f"item {self.id!r}: non-finite feature values")


@dataclass(eq=False)
class Database:
    """A named collection of items sharing one annotation convention.

    ``polarity`` is MOS (higher mu = better) or DMOS (higher mu = worse).
    All items must share one feature kind and shape.
    """

    name: str
    scenario: str
    polarity: str
    items: list[AnnotatedItem]

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise FormatError(f"unknown scenario {self.scenario!r}")
        if self.polarity not in POLARITIES:
            raise FormatError(f"unknown polarity {self.polarity!r}")
        if not self.items:
            raise FormatError(f"database {self.name!r} is empty")
        seen: set[str] = set()
        shape = self.items[0].features.shape
        for it in self.items:
            if it.id in seen:
                raise FormatError(f"duplicate item id {it.id!r} in {self.name!r}")
            seen.add(it.id)
            if it.db != self.name:
                raise FormatError(
                    f"item {it.id!r} claims database {it.db!r}, expected {self.name!r}"
                )
            if it.features.shape != shape:
                raise FormatError(
                    f"item {it.id!r}: feature shape {it.features.shape} differs "
                    f"from {shape}"
                )

    def __len__(self) -> int:
        return len(self.items)

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return self.items[0].features.shape

    def item_map(self) -> dict[str, AnnotatedItem]:
        return {it.id: it for it in self.items}

    def ids(self) -> frozenset[str]:
        return frozenset(it.id for it in self.items)


@dataclass(frozen=True)
class Split:
    """Disjoint train/test id sets whose union covers a database."""

    train_ids: frozenset[str]
    test_ids: frozenset[str]

    def __post_init__(self):
        if self.train_ids & self.test_ids:
            raise ValueError("train and test ids overlap")


def normalize_polarity(db: Database) -> Database:
    """Negate DMOS means so that higher mu always means better quality.

    Standard deviations are sign-free and stay untouched. MOS databases are
    returned unchanged.
    """
    if db.polarity == MOS:
        return db
    items = [replace(it, mu=-it.mu) for it in db.items]
    return Database(name=db.name, scenario=db.scenario, polarity=MOS, items=items)


def split_by_content(db: Database, train_fraction: float, seed: int) -> Split:
    """Partition content groups (not items) into train/test sides.

    The train side receives the number of groups nearest
    ``train_fraction * n_groups`` (half counts round toward train), clamped
    so both sides stay nonempty. Deterministic for a fixed seed.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    groups = sorted({it.content for it in db.items})
    if len(groups) < 2:
        raise ValueError(
            f"database {db.name!r} has {len(groups)} content group(s); need >= 2"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(groups))
    k = int(math.floor(train_fraction * len(groups) + 0.5))
    k = min(max(k, 1), len(groups) - 1)
    train_groups = {groups[i] for i in order[:k]}
    train_ids = frozenset(it.id for it in db.items if it.content in train_groups)
    test_ids = frozenset(it.id for it in db.items if it.content not in train_groups)
    return Split(train_ids=train_ids, test_ids=test_ids)


# ---------------------------------------------------------------------------
# Line-delimited record format (see docs/formats.md)
# ---------------------------------------------------------------------------

_HEADER_KEYS = {"name", "scenario"}
_RECORD_KEYS = {"id", "db", "content", "polarity", "mu", "sigma", "features", "feature_map"}


def _require(cond: bool, msg: str, line: int):
    if not cond:
        raise FormatError(msg, line=line)


def _parse_number(value, field: str, line: int) -> float:
    _require(isinstance(value, (int, float)) and not isinstance(value, bool),
             f"field {field!r} must be a number", line)
    value = float(value)
    _require(math.isfinite(value), f"field {field!r} is not finite", line)
    return value


def _parse_features(rec: dict, line: int) -> np.ndarray:
    has_vec = "features" in rec
    has_map = "feature_map" in rec
    _require(has_vec != has_map,
             "record needs exactly one of 'features' or 'feature_map'", line)
    if has_vec:
        values = rec["features"]
        _require(isinstance(values, list) and len(values) >= 1,
                 "'features' must be a nonempty list", line)
        return np.array([_parse_number(v, "features", line) for v in values])
    fmap = rec["feature_map"]
    _require(isinstance(fmap, dict), "'feature_map' must be an object", line)
    for key in ("s", "c", "values"):
        _require(key in fmap, f"'feature_map' missing {key!r}", line)
    s, c = fmap["s"], fmap["c"]
    _require(isinstance(s, int) and s >= 1, "'s' must be a positive integer", line)
    _require(isinstance(c, int) and c >= 1, "'c' must be a positive integer", line)
    values = fmap["values"]
    _require(isinstance(values, list) and len(values) == s * c,
             f"'feature_map' values must hold s*c = {s * c} numbers", line)
    flat = np.array([_parse_number(v, "feature_map.values", line) for v in values])
    return flat.reshape(s, c)


def load_database(path: str | Path) -> Database:
    """Read one database from its line-delimited record file.

    Every malformed record is reported with its 1-based line number.
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file")

    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON header: {exc}", line=1) from None
    _require(isinstance(header, dict) and _HEADER_KEYS <= set(header),
             "header must carry 'name' and 'scenario'", 1)
    name = header["name"]
    scenario = header["scenario"]
    _require(isinstance(name, str) and name != "", "'name' must be a nonempty string", 1)
    _require(scenario in SCENARIOS, f"unknown scenario {scenario!r}", 1)

    items: list[AnnotatedItem] = []
    seen: set[str] = set()
    polarity: str | None = None
    shape: tuple[int, ...] | None = None
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON record: {exc}", line=lineno) from None
        _require(isinstance(rec, dict), "record must be an object", lineno)
        unknown = set(rec) - _RECORD_KEYS
        _require(not unknown, f"unknown fields {sorted(unknown)}", lineno)
        for key in ("id", "db", "content", "polarity", "mu", "sigma"):
            _require(key in rec, f"record missing field {key!r}", lineno)
        _require(isinstance(rec["id"], str) and rec["id"], "'id' must be a nonempty string", lineno)
        _require(rec["db"] == name, f"record db {rec['db']!r} != header name {name!r}", lineno)
        _require(rec["polarity"] in POLARITIES, f"unknown polarity {rec['polarity']!r}", lineno)
        if polarity is None:
            polarity = rec["polarity"]
        _require(rec["polarity"] == polarity,
                 f"polarity {rec['polarity']!r} differs from earlier records", lineno)
        mu = _parse_number(rec["mu"], "mu", lineno)
        sigma = _parse_number(rec["sigma"], "sigma", lineno)
        _require(sigma >= 0.0, f"record {rec['id']!r}: sigma must be >= 0, got {sigma}", lineno)
        feats = _parse_features(rec, lineno)
        if shape is None:
            shape = feats.shape
        _require(feats.shape == shape,
                 f"record {rec['id']!r}: feature shape {feats.shape} differs from {shape}", lineno)
        _require(rec["id"] not in seen, f"duplicate item id {rec['id']!r}", lineno)
        seen.add(rec["id"])
        items.append(AnnotatedItem(id=rec["id"], db=name, content=rec["content"],
                                   mu=mu, sigma=sigma, features=feats))
    if not items:
        raise FormatError(f"{path}: no records after header")
    return Database(name=name, scenario=scenario, polarity=polarity, items=items)


def _dump(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def save_database(db: Database, path: str | Path) -> None:
    """Write the canonical record file; loading it back round-trips exactly."""
    path = Path(path)
    lines = [_dump({"name": db.name, "scenario": db.scenario})]
    for it in db.items:
        rec: dict = {
            "id": it.id,
            "db": it.db,
            "content": it.content,
            "polarity": db.polarity,
            "mu": it.mu,
            "sigma": it.sigma,
        }
        if it.features.ndim == 1:
            rec["features"] = [float(v) for v in it.features]
        else:
            s, c = it.features.shape
            rec["feature_map"] = {"s": int(s), "c": int(c),
                                  "values": [float(v) for v in it.features.ravel()]}
        lines.append(_dump(rec))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
