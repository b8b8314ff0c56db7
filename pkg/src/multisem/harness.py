"""Meta-training, evaluation with confidence intervals and ablation grids."""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import fusion
from .data import (FewShotDataset, SynthSpec, generate_synthetic, load_dataset,
                   sample_episode)
from .errors import ConfigurationError, DataError
from .estimator import MultiSemanticProtoNet, check_dataset
from .numeric import Rng, derive_seed, pairwise_sq_euclidean

Z95 = 1.96

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in _BOOL_TRUE:
        return True
    if v in _BOOL_FALSE:
        return False
    raise ConfigurationError(f"expected a boolean, got {value!r}")


@dataclass
class RunConfig:
    way: int = 5
    shot: int = 1
    query: int = 15
    branches: str = ""
    branch_losses: bool = True
    train_episodes: int = 1000
    eval_episodes: int = 1000
    lr: float = 1e-3
    seed: int = 0
    embed_dim: int = 512
    features: Optional[str] = None
    semantics: List[str] = field(default_factory=list)
    split: Optional[str] = None
    synth_classes: Optional[int] = None
    synth_instances: int = 30
    synth_dim: int = 64
    synth_sigma_c: float = 1.0
    synth_sigma_v: float = 0.6
    synth_modality: List[str] = field(default_factory=list)
    synth_split: Optional[str] = None
    synth_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> "RunConfig":
        if self.way < 2:
            raise ConfigurationError("way must be >= 2")
        if self.shot < 1 or self.query < 1:
            raise ConfigurationError("shot and query must be >= 1")
        if self.eval_episodes < 1:
            raise ConfigurationError("eval_episodes must be >= 1")
        if self.train_episodes < 0:
            raise ConfigurationError("train_episodes must be >= 0")
        if not self.lr > 0:
            raise ConfigurationError("lr must be positive")
        if self.embed_dim < 1:
            raise ConfigurationError("embed_dim must be positive")
        fusion.parse_branch_config(self.branches, self.branch_losses)
        return self

    @property
    def branch_config(self) -> fusion.BranchConfig:
        return fusion.parse_branch_config(self.branches, self.branch_losses)

    def replace(self, **changes) -> "RunConfig":
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return RunConfig(**values)

    def echo(self) -> Dict[str, object]:
        """Protocol-relevant settings, in a stable order."""
        return {"way": self.way, "shot": self.shot, "query": self.query,
                "branches": self.branches, "branch_losses": int(self.branch_losses),
                "train_episodes": self.train_episodes, "eval_episodes": self.eval_episodes,
                "lr": self.lr, "seed": self.seed, "embed_dim": self.embed_dim}

    def estimator(self, **overrides) -> MultiSemanticProtoNet:
        params = dict(branches=self.branches, branch_losses=self.branch_losses, way=self.way,
                      shot=self.shot, query=self.query, train_episodes=self.train_episodes,
                      lr=self.lr, embed_dim=self.embed_dim, seed=self.seed)
        params.update(overrides)
        return MultiSemanticProtoNet(**params)

    def synth_spec(self) -> Optional[SynthSpec]:
        if self.synth_classes is None:
            return None
        modalities = {}
        for item in self.synth_modality:
            try:
                name, dim, rho = item.split(":")
                modalities[name] = (int(dim), float(rho))
            except ValueError:
                raise ConfigurationError(f"synth_modality must be name:dim:rho, got {item!r}") from None
        n = self.synth_classes
        if self.synth_split:
            try:
                split = tuple(int(x) for x in self.synth_split.split("/"))
            except ValueError:
                raise ConfigurationError(f"synth_split must be a/b/c, got {self.synth_split!r}") from None
        else:
            a, b = int(round(0.6 * n)), int(round(0.2 * n))
            split = (a, b, n - a - b)
        return SynthSpec(n, self.synth_instances, self.synth_dim, modalities,
                         self.synth_sigma_c, self.synth_sigma_v, split, self.synth_seed)


_LIST_KEYS = {"semantics", "synth_modality"}


def _coerce(name: str, raw: str):
    kinds = {f.name: f.type for f in fields(RunConfig)}
    kind = kinds[name]
    raw = raw.strip()
    if name == "branch_losses":
        return parse_bool(raw)
    try:
        if kind in ("int", "Optional[int]"):
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"config key {name!r}: cannot parse {raw!r}") from None
    return raw


def parse_config_text(text: str, base: Optional[RunConfig] = None, origin: str = "<config>",
                      relative_to: Optional[str] = None) -> RunConfig:
    """Parse ``key=value`` lines on top of ``base`` (defaults if omitted)."""
    values = {f.name: getattr(base or RunConfig(), f.name) for f in fields(RunConfig)}
    values["semantics"] = list(values["semantics"])
    values["synth_modality"] = list(values["synth_modality"])
    cleared = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigurationError(f"{origin}:{lineno}: expected key=value, got {line!r}")
        if key == "query_per_class":
            key = "query"
        if key not in values:
            raise ConfigurationError(f"{origin}:{lineno}: unknown config key {key!r}")
        value = value.strip()
        if key in ("features", "split", "semantics") and relative_to and value and not os.path.isabs(value):
            value = os.path.join(relative_to, value)
        if key in _LIST_KEYS:
            if key not in cleared:
                values[key] = []
                cleared.add(key)
            values[key].append(value)
        else:
            try:
                values[key] = _coerce(key, value)
            except ConfigurationError as exc:
                raise ConfigurationError(f"{origin}:{lineno}: {exc}") from None
    return RunConfig(**values)


def load_config(path, base: Optional[RunConfig] = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_config_text(text, base, str(path), os.path.dirname(os.path.abspath(path)))


def format_config(config: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        if value is None:
            continue
        if isinstance(value, list):
            lines.extend(f"{f.name}={v}" for v in value)
        elif isinstance(value, bool):
            lines.append(f"{f.name}={int(value)}")
        else:
            lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def load_run_dataset(config: RunConfig) -> FewShotDataset:
    if config.features:
        return load_dataset(config.features, config.semantics, config.split)
    spec = config.synth_spec()
    if spec is None:
        raise ConfigurationError("config names neither 'features' files nor synth_* settings")
    return generate_synthetic(spec)


# --- training / evaluation ---------------------------------------------------

def train(config: RunConfig, dataset: FewShotDataset, **estimator_overrides
          ) -> Tuple[fusion.FusionModel, np.ndarray]:
    """Meta-train a fresh model; returns it with the per-episode loss trace."""
    check_dataset(dataset, config.branch_config)
    est = config.estimator(**estimator_overrides).fit(dataset)
    return est.model_, est.loss_trace_


@dataclass
class EvalReport:
    accuracy: float
    ci: float
    n: int
    config: Dict[str, object]
    wall_time: float
    episode_accuracies: np.ndarray = field(repr=False)
    mean_alpha: Optional[float] = None

    def result_line(self, tag: str) -> str:
        return f"RESULT {tag} acc={self.accuracy:.6f} ci={self.ci:.6f} n={self.n}"

    def summary(self) -> str:
        text = f"accuracy {100 * self.accuracy:.2f}% +- {100 * self.ci:.2f}% (95% CI, {self.n} episodes)"
        if self.mean_alpha is not None:
            text += f", mean alpha {self.mean_alpha:.3f}"
        return text


def confidence_halfwidth(values) -> float:
    """``1.96 * sample std / sqrt(n)``; zero for a single value."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0
    return Z95 * float(np.std(v, ddof=1)) / math.sqrt(v.size)


def eval_seed(seed: int, split: str) -> int:
    return derive_seed(seed, "eval", split)


def evaluate(model: fusion.FusionModel, dataset: FewShotDataset, split: str = "test",
             config: Optional[RunConfig] = None, episodes: Optional[int] = None,
             seed: Optional[int] = None) -> EvalReport:
    """Mean query accuracy over freshly sampled episodes, with a 95% CI.

    Episodes come from a stream seeded by ``(seed, split)`` only, so models
    evaluated with the same seed see identical episodes.
    """
    config = config or RunConfig()
    n = config.eval_episodes if episodes is None else int(episodes)
    if n < 1:
        raise ConfigurationError("need at least one evaluation episode")
    if not dataset.splits.get(split):
        raise DataError(f"split {split!r} is empty")
    check_dataset(dataset, model.config)
    rng = Rng(eval_seed(config.seed if seed is None else seed, split))
    start = time.perf_counter()
    accs = np.empty(n)
    alpha_sum, alpha_count = 0.0, 0
    for i in range(n):
        ep = sample_episode(rng, dataset, split, config.way, config.shot, config.query)
        fw = fusion.forward_episode(model, ep, "infer")
        pred = np.argmin(pairwise_sq_euclidean(fw.Q, fw.final), axis=1)
        accs[i] = np.mean(pred == ep.query_labels)
        for a in fw.alphas:
            alpha_sum += float(a.sum())
            alpha_count += a.size
    echo = dict(config.echo())
    echo.update(split=split, eval_episodes=n, branches=model.config.text,
                branch_losses=int(model.config.branch_losses))
    return EvalReport(float(accs.mean()), confidence_halfwidth(accs), n, echo,
                      time.perf_counter() - start, accs,
                      alpha_sum / alpha_count if alpha_count else None)


def paired_difference(a: EvalReport, b: EvalReport) -> Tuple[float, float]:
    """Mean and 95% CI half-width of ``a - b`` over shared episodes."""
    if a.n != b.n:
        raise ConfigurationError("paired comparison needs reports over the same episodes")
    d = a.episode_accuracies - b.episode_accuracies
    return float(d.mean()), confidence_halfwidth(d)


# --- ablation ----------------------------------------------------------------

@dataclass
class GridCell:
    label: str
    branches: str
    branch_losses: bool


@dataclass
class AblationRow:
    label: str
    branches: str
    branch_losses: bool
    report: EvalReport
    seed: int

    def table_line(self) -> str:
        return (f"{self.label}\t{self.branches or '-'}\t{int(self.branch_losses)}\t"
                f"{self.report.accuracy:.6f}\t{self.report.ci:.6f}\t{self.report.n}")


ABLATION_HEADER = "label\tbranches\tbranch_losses\tacc\tci\tn"

# rows of the published branch ablation, in its x/y notation
BRANCH_ABLATION_GRID = [
    GridCell("a", "", False),
    GridCell("b", "l/l", False),
    GridCell("c", "d/d", False),
    GridCell("d", "l/l,l/l", False),
    GridCell("e", "l/l,d/v", False),
    GridCell("f", "l/l,d/v", True),
    GridCell("g", "l/l,d/d", True),
    GridCell("h", "l/l,d/v,d/d", True),
    GridCell("i", "l/l,d/v,d/l", True),
    GridCell("j", "l/l,d/v,d/l,v/l", True),
]


def parse_grid_text(text: str, origin: str = "<grid>") -> List[GridCell]:
    """One cell per line: ``<label> <branches|-> <branch_losses>``."""
    cells, labels = [], set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ConfigurationError(f"{origin}:{lineno}: expected '<label> <branches> <branch_losses>'")
        label, branches, losses = parts
        branches = "" if branches == "-" else branches
        if label in labels:
            raise ConfigurationError(f"{origin}:{lineno}: duplicate cell label {label!r}")
        labels.add(label)
        try:
            cell = GridCell(label, branches, parse_bool(losses))
            fusion.parse_branch_config(branches, cell.branch_losses)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{origin}:{lineno}: {exc}") from None
        cells.append(cell)
    return cells


def load_grid(path) -> List[GridCell]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_grid_text(fh.read(), str(path))


def format_grid(cells: Sequence[GridCell]) -> str:
    return "".join(f"{c.label} {c.branches or '-'} {int(c.branch_losses)}\n" for c in cells)


def cell_seed(base_seed: int, label: str) -> int:
    return derive_seed(base_seed, "cell", label) & 0x7FFFFFFF


def ablate(config: RunConfig, dataset: FewShotDataset, grid: Sequence[GridCell],
           split: str = "test", **estimator_overrides) -> List[AblationRow]:
    """Train and evaluate one model per grid cell.

    Each cell trains under a seed derived from the base seed and its label,
    and every cell is evaluated on the same test episodes.
    """
    for cell in grid:
        check_dataset(dataset, fusion.parse_branch_config(cell.branches, cell.branch_losses))
    rows = []
    for cell in grid:
        seed = cell_seed(config.seed, cell.label)
        cfg = config.replace(branches=cell.branches, branch_losses=cell.branch_losses)
        model, _ = train(cfg.replace(seed=seed), dataset, **estimator_overrides)
        report = evaluate(model, dataset, split, cfg)
        rows.append(AblationRow(cell.label, cell.branches, cell.branch_losses, report, seed))
    return rows
