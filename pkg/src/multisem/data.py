"""Few-shot datasets, their text file formats, episode sampling and a
synthetic generator with tunable semantic informativeness.

File formats (UTF-8, LF line endings, ``#`` starts a comment line)::

    FSLFEAT 1            FSLSEM 1               [train]
    dims <D>             modality <name>        <class id>
    <cls> <item> <D x>   dims <D>               [val]
                         <cls> <D x>            ...
                                                [test]
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, DataError
from .numeric import Rng

SPLITS = ("train", "val", "test")
FLOAT_FMT = "%.17g"


@dataclass
class FeatureTable:
    dim: int
    classes: Dict[str, np.ndarray] = field(default_factory=dict)
    items: Dict[str, List[str]] = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, FeatureTable):
            return NotImplemented
        return (self.dim == other.dim and self.items == other.items
                and self.classes.keys() == other.classes.keys()
                and all(np.array_equal(self.classes[c], other.classes[c]) for c in self.classes))


@dataclass
class SemanticTable:
    modality: str
    dim: int
    vectors: Dict[str, np.ndarray] = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, SemanticTable):
            return NotImplemented
        return (self.modality == other.modality and self.dim == other.dim
                and self.vectors.keys() == other.vectors.keys()
                and all(np.array_equal(self.vectors[c], other.vectors[c]) for c in self.vectors))


class FewShotDataset:
    """Immutable store of per-class instances, class semantics and splits."""

    def __init__(self, features: FeatureTable, semantics: Iterable[SemanticTable] = (),
                 splits: Optional[Dict[str, Sequence[str]]] = None):
        self.features = features
        self.semantics: Dict[str, SemanticTable] = {}
        for table in semantics:
            if table.modality in self.semantics:
                raise DataError(f"modality {table.modality!r} supplied twice")
            self.semantics[table.modality] = table
        classes = set(features.classes)
        for name, table in self.semantics.items():
            missing = sorted(classes - set(table.vectors))
            if missing:
                raise DataError(f"modality {name!r} has no vector for classes {missing[:5]}")
        if splits is None:
            splits = {"train": sorted(classes), "val": [], "test": []}
        self.splits = {s: list(splits.get(s, [])) for s in SPLITS}
        seen: Dict[str, str] = {}
        for s in SPLITS:
            for c in self.splits[s]:
                if c not in classes:
                    raise DataError(f"split {s!r} names unknown class {c!r}")
                if c in seen:
                    raise DataError(f"class {c!r} appears in both {seen[c]!r} and {s!r}")
                seen[c] = s

    @property
    def feature_dim(self) -> int:
        return self.features.dim

    @property
    def semantic_dims(self) -> Dict[str, int]:
        return {m: t.dim for m, t in self.semantics.items()}

    def n_instances(self, class_id: str) -> int:
        return self.features.classes[class_id].shape[0]


@dataclass
class Episode:
    way: int
    shot: int
    query_per_class: int
    classes: List[str]
    support: np.ndarray          # (way, shot, D_v)
    query: np.ndarray            # (way * query_per_class, D_v)
    query_labels: np.ndarray     # (way * query_per_class,)
    semantics: Dict[str, np.ndarray]   # modality -> (way, d_m)
    support_items: List[List[str]] = field(default_factory=list)
    query_items: List[List[str]] = field(default_factory=list)


def sample_episode(rng: Rng, dataset: FewShotDataset, split: str, way: int, shot: int,
                   query_per_class: int = 15) -> Episode:
    """Uniform classes without replacement, then uniform disjoint support/query items."""
    if split not in dataset.splits:
        raise ConfigurationError(f"unknown split {split!r}")
    if way < 2 or shot < 1 or query_per_class < 1:
        raise ConfigurationError("need way >= 2, shot >= 1 and query_per_class >= 1")
    pool = dataset.splits[split]
    if len(pool) < way:
        raise DataError(f"split {split!r} has {len(pool)} classes, episode needs {way}")
    classes = [pool[i] for i in rng.choice(len(pool), way)]
    need = shot + query_per_class
    support, query, s_items, q_items = [], [], [], []
    for c in classes:
        X = dataset.features.classes[c]
        if X.shape[0] < need:
            raise DataError(f"class {c!r} has {X.shape[0]} instances, episode needs {need}")
        idx = rng.choice(X.shape[0], need)
        support.append(X[idx[:shot]])
        query.append(X[idx[shot:]])
        ids = dataset.features.items[c]
        s_items.append([ids[i] for i in idx[:shot]])
        q_items.append([ids[i] for i in idx[shot:]])
    assert all(not set(s) & set(q) for s, q in zip(s_items, q_items))
    semantics = {m: np.stack([t.vectors[c] for c in classes]) for m, t in dataset.semantics.items()}
    return Episode(way, shot, query_per_class, classes, np.stack(support),
                   np.concatenate(query), np.repeat(np.arange(way), query_per_class),
                   semantics, s_items, q_items)


# --- synthetic oracle --------------------------------------------------------

@dataclass
class SynthSpec:
    n_classes: int = 100
    instances_per_class: int = 30
    feature_dim: int = 64
    modalities: Dict[str, Tuple[int, float]] = field(
        default_factory=lambda: {"label": (32, 0.9), "description": (32, 0.9)})
    sigma_c: float = 1.0
    sigma_v: float = 0.6
    split: Tuple[int, int, int] = (60, 20, 20)
    seed: int = 0

    def __post_init__(self):
        if min(self.n_classes, self.instances_per_class, self.feature_dim) <= 0:
            raise ConfigurationError("synthetic counts and dims must be positive")
        for name, (dim, rho) in self.modalities.items():
            if dim <= 0 or not 0.0 <= rho <= 1.0:
                raise ConfigurationError(f"modality {name!r}: need dim > 0 and 0 <= rho <= 1")
        if self.sigma_c < 0 or self.sigma_v < 0:
            raise ConfigurationError("standard deviations must be non-negative")
        if len(self.split) != 3 or sum(self.split) != self.n_classes or min(self.split) < 0:
            raise ConfigurationError(f"split {self.split} must be 3 non-negative counts summing to {self.n_classes}")


class SynthDataset(FewShotDataset):
    """Synthetic dataset that also keeps the hidden generator state."""

    def __init__(self, spec: SynthSpec, features, semantics, splits, centroids, maps):
        super().__init__(features, semantics, splits)
        self.spec = spec
        self.centroids = centroids
        self.maps = maps


def generate_synthetic(spec: SynthSpec) -> SynthDataset:
    """Gaussian class centroids, noisy instances and partly informative semantics.

    For modality ``m`` with informativeness ``rho`` and a fixed random map
    ``W_m`` (entries ~ N(0, 1/D_v)), the class vector is
    ``rho * W_m @ mu_c + (1 - rho) * eps`` with ``eps ~ N(0, I)``.
    """
    rng = Rng(spec.seed)
    D = spec.feature_dim
    ids = [f"c{i:04d}" for i in range(spec.n_classes)]
    mu = rng.child("centroids").normal(0.0, 1.0, (spec.n_classes, D)) * spec.sigma_c
    noise = rng.child("instances").normal(0.0, 1.0, (spec.n_classes, spec.instances_per_class, D))
    X = mu[:, None, :] + spec.sigma_v * noise
    features = FeatureTable(D, {c: X[i] for i, c in enumerate(ids)},
                            {c: [f"i{j:04d}" for j in range(spec.instances_per_class)] for c in ids})
    tables, maps = [], {}
    for name in sorted(spec.modalities):
        dim, rho = spec.modalities[name]
        mrng = rng.child("modality", name)
        W = mrng.normal(0.0, 1.0 / np.sqrt(D), (dim, D))
        eps = mrng.normal(0.0, 1.0, (spec.n_classes, dim))
        s = rho * (mu @ W.T) + (1.0 - rho) * eps
        maps[name] = W
        tables.append(SemanticTable(name, dim, {c: s[i] for i, c in enumerate(ids)}))
    order = rng.child("split").permutation(spec.n_classes)
    a, b, _ = spec.split
    splits = {"train": [ids[i] for i in sorted(order[:a])],
              "val": [ids[i] for i in sorted(order[a:a + b])],
              "test": [ids[i] for i in sorted(order[a + b:])]}
    return SynthDataset(spec, features, tables, splits, mu, maps)


# --- file formats ------------------------------------------------------------

def _content_lines(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.strip()
                if line and not line.startswith("#"):
                    yield lineno, line
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from None


def _expect(lines, path, keyword, what):
    try:
        lineno, line = next(lines)
    except StopIteration:
        raise DataError(f"{path}: unexpected end of file, expected {what}") from None
    parts = line.split()
    if len(parts) != 2 or parts[0] != keyword:
        raise DataError(f"{path}:{lineno}: expected '{what}', got {line!r}")
    return lineno, parts[1]


def _parse_dim(path, lineno, token):
    try:
        dim = int(token)
    except ValueError:
        dim = -1
    if dim <= 0:
        raise DataError(f"{path}:{lineno}: dimension must be a positive integer, got {token!r}")
    return dim


def _parse_floats(path, lineno, tokens, dim):
    if len(tokens) != dim:
        raise DataError(f"{path}:{lineno}: expected {dim} values, found {len(tokens)}")
    try:
        vec = np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}:{lineno}: {exc}") from None
    if not np.all(np.isfinite(vec)):
        raise DataError(f"{path}:{lineno}: non-finite value")
    return vec


def _fmt(vec) -> str:
    return " ".join(FLOAT_FMT % v for v in vec)


def load_features(path) -> FeatureTable:
    lines = _content_lines(path)
    lineno, version = _expect(lines, path, "FSLFEAT", "FSLFEAT 1")
    if version != "1":
        raise DataError(f"{path}:{lineno}: unsupported FSLFEAT version {version!r}")
    lineno, tok = _expect(lines, path, "dims", "dims <D>")
    dim = _parse_dim(path, lineno, tok)
    rows: Dict[str, List[np.ndarray]] = {}
    items: Dict[str, List[str]] = {}
    seen = set()
    for lineno, line in lines:
        parts = line.split()
        if len(parts) < 2:
            raise DataError(f"{path}:{lineno}: expected '<class> <item> <values>'")
        cls, item = parts[0], parts[1]
        if (cls, item) in seen:
            raise DataError(f"{path}:{lineno}: duplicate instance ({cls}, {item})")
        seen.add((cls, item))
        rows.setdefault(cls, []).append(_parse_floats(path, lineno, parts[2:], dim))
        items.setdefault(cls, []).append(item)
    return FeatureTable(dim, {c: np.stack(v) for c, v in rows.items()}, items)


def write_features(table: FeatureTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"FSLFEAT 1\ndims {table.dim}\n")
        for cls, X in table.classes.items():
            for item, row in zip(table.items[cls], X):
                fh.write(f"{cls} {item} {_fmt(row)}\n")


def load_semantics(path) -> SemanticTable:
    lines = _content_lines(path)
    lineno, version = _expect(lines, path, "FSLSEM", "FSLSEM 1")
    if version != "1":
        raise DataError(f"{path}:{lineno}: unsupported FSLSEM version {version!r}")
    _, modality = _expect(lines, path, "modality", "modality <name>")
    lineno, tok = _expect(lines, path, "dims", "dims <D>")
    dim = _parse_dim(path, lineno, tok)
    vectors: Dict[str, np.ndarray] = {}
    for lineno, line in lines:
        parts = line.split()
        if parts[0] in vectors:
            raise DataError(f"{path}:{lineno}: duplicate class {parts[0]!r}")
        vectors[parts[0]] = _parse_floats(path, lineno, parts[1:], dim)
    return SemanticTable(modality, dim, vectors)


def write_semantics(table: SemanticTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"FSLSEM 1\nmodality {table.modality}\ndims {table.dim}\n")
        for cls, vec in table.vectors.items():
            fh.write(f"{cls} {_fmt(vec)}\n")


def load_split(path) -> Dict[str, List[str]]:
    out: Dict[str, List[str]] = {s: [] for s in SPLITS}
    section = None
    owner: Dict[str, str] = {}
    for lineno, line in _content_lines(path):
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in out:
                raise DataError(f"{path}:{lineno}: unknown section {line!r}")
            continue
        if section is None:
            raise DataError(f"{path}:{lineno}: class id outside a [train]/[val]/[test] section")
        if len(line.split()) != 1:
            raise DataError(f"{path}:{lineno}: expected one class id per line")
        if line in owner:
            raise DataError(f"{path}:{lineno}: class {line!r} already listed in [{owner[line]}]")
        owner[line] = section
        out[section].append(line)
    return out


def write_split(splits: Dict[str, Sequence[str]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in SPLITS:
            fh.write(f"[{s}]\n")
            for c in splits.get(s, []):
                fh.write(f"{c}\n")


def load_dataset(features_path, semantics_paths: Sequence = (), split_path=None) -> FewShotDataset:
    features = load_features(features_path)
    semantics = [load_semantics(p) for p in semantics_paths]
    splits = load_split(split_path) if split_path else None
    return FewShotDataset(features, semantics, splits)


def write_dataset(dataset: FewShotDataset, directory) -> Dict[str, object]:
    """Write features, one file per modality and the split; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {"features": os.path.join(directory, "features.fslfeat"),
             "semantics": [], "split": os.path.join(directory, "split.fslsplit")}
    write_features(dataset.features, paths["features"])
    for name, table in dataset.semantics.items():
        p = os.path.join(directory, f"{name}.fslsem")
        write_semantics(table, p)
        paths["semantics"].append(p)
    write_split(dataset.splits, paths["split"])
    return paths
