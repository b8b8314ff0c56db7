"""Multi-semantic prototype fusion.

A class prototype starts as the mean of the embedded support features and is
refined by a cascade of semantic branches. Branch ``r`` maps one semantic
modality (or the visual prototype itself) into the embedding space, an
attention MLP turns some other per-class prototype into a coefficient
``alpha_r`` in (0, 1), and the running prototype becomes

    P_r = alpha_r * P_{r-1} + (1 - alpha_r) * S_r,    P_0 = V.

Queries are scored with a softmax over negative squared distances. Training
sums a cross-entropy term per partial prototype ("branch losses") or uses
only the final one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, ContractError, DataError
from .neural import (INFER, SCALAR_SIGMOID, TRAIN, VECTOR, ForwardCache, MlpParams,
                     init_mlp, mlp_backward, mlp_forward)
from .numeric import Rng, log_softmax, pairwise_sq_euclidean, softmax

LETTERS = {"l": "label", "d": "description", "a": "attributes", "v": "visual"}
LETTER_OF = {v: k for k, v in LETTERS.items()}
VISUAL = "visual"
SEMANTIC_MODALITIES = ("label", "description", "attributes")


@dataclass(frozen=True)
class BranchSpec:
    input_modality: str
    attend_modality: str

    def __post_init__(self):
        for m in (self.input_modality, self.attend_modality):
            if m not in LETTER_OF:
                raise ConfigurationError(f"unknown modality {m!r}")

    @property
    def token(self) -> str:
        return f"{LETTER_OF[self.input_modality]}/{LETTER_OF[self.attend_modality]}"


@dataclass(frozen=True)
class BranchConfig:
    branches: Tuple[BranchSpec, ...] = ()
    branch_losses: bool = True

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        resolve_attend_sources(self.branches)

    @property
    def k(self) -> int:
        return len(self.branches)

    @property
    def text(self) -> str:
        return ",".join(b.token for b in self.branches)

    def __str__(self):
        return self.text

    @property
    def attend_sources(self) -> List[Optional[int]]:
        return resolve_attend_sources(self.branches)

    @property
    def semantic_modalities(self) -> List[str]:
        """Modalities whose raw vectors the model consumes, in first-use order."""
        seen = []
        for b in self.branches:
            if b.input_modality != VISUAL and b.input_modality not in seen:
                seen.append(b.input_modality)
        return seen

    def active_terms(self) -> List[int]:
        """Partial-prototype indices that contribute to the training loss."""
        return list(range(self.k + 1)) if self.branch_losses else [self.k]


def resolve_attend_sources(branches: Sequence[BranchSpec]) -> List[Optional[int]]:
    """Where each branch's attention input comes from.

    ``None`` means the visual prototype. An integer ``j`` means the semantic
    prototype of branch ``j``: the first branch at or before the current one
    whose input is the attended modality.
    """
    sources: List[Optional[int]] = []
    for i, b in enumerate(branches):
        if b.attend_modality == VISUAL:
            sources.append(None)
            continue
        for j in range(i + 1):
            if branches[j].input_modality == b.attend_modality:
                sources.append(j)
                break
        else:
            raise ConfigurationError(
                f"branch {i + 1} ({b.token}): no branch up to this one takes "
                f"{b.attend_modality!r} as input, attention source is unresolvable"
            )
    return sources


def parse_branch_config(text: str, branch_losses: bool = True) -> BranchConfig:
    """Parse the ``"l/l,d/v,d/l"`` grammar. Empty text is the visual-only model."""
    text = (text or "").strip()
    if text in ("", "-"):
        return BranchConfig((), branch_losses)
    specs = []
    for pos, token in enumerate(text.split(","), start=1):
        parts = token.strip().split("/")
        if len(parts) != 2 or not all(len(p.strip()) == 1 for p in parts):
            raise ConfigurationError(f"malformed branch token {token!r} at position {pos}")
        x, y = (p.strip() for p in parts)
        for letter in (x, y):
            if letter not in LETTERS:
                raise ConfigurationError(f"unknown modality letter {letter!r} in token {pos} ({token!r})")
        specs.append(BranchSpec(LETTERS[x], LETTERS[y]))
    try:
        return BranchConfig(tuple(specs), branch_losses)
    except ConfigurationError as exc:
        raise ConfigurationError(f"branch config {text!r}: {exc}") from None


@dataclass
class FusionModel:
    config: BranchConfig
    visual_head: MlpParams
    semantic: List[Optional[MlpParams]]
    attention: List[MlpParams]
    echo: Dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        k = self.config.k
        if len(self.semantic) != k or len(self.attention) != k:
            raise ConfigurationError("one semantic and one attention MLP per branch required")
        D = self.embed_dim
        for i, (b, s, a) in enumerate(zip(self.config.branches, self.semantic, self.attention)):
            if (b.input_modality == VISUAL) != (s is None):
                raise ConfigurationError(f"branch {i + 1}: semantic MLP present iff input is non-visual")
            if s is not None and s.out_dim != D:
                raise ConfigurationError(f"branch {i + 1}: semantic MLP output {s.out_dim} != embed dim {D}")
            if a.in_dim != D or a.output_kind != SCALAR_SIGMOID:
                raise ConfigurationError(f"branch {i + 1}: attention MLP must map {D} -> sigmoid scalar")
        dims: Dict[str, int] = {}
        for b, s in zip(self.config.branches, self.semantic):
            if s is not None and dims.setdefault(b.input_modality, s.in_dim) != s.in_dim:
                raise ConfigurationError(f"inconsistent input dims for modality {b.input_modality}")

    @property
    def embed_dim(self) -> int:
        return self.visual_head.out_dim

    @property
    def visual_dim(self) -> int:
        return self.visual_head.in_dim

    @property
    def semantic_dims(self) -> Dict[str, int]:
        return {b.input_modality: s.in_dim
                for b, s in zip(self.config.branches, self.semantic) if s is not None}

    def mlps(self) -> List[Tuple[str, MlpParams]]:
        out = [("visual", self.visual_head)]
        for i, s in enumerate(self.semantic):
            if s is not None:
                out.append((f"semantic{i}", s))
        out.extend((f"attention{i}", a) for i, a in enumerate(self.attention))
        return out

    def parameters(self) -> Dict[str, np.ndarray]:
        """Live references to every trainable tensor, keyed ``"<mlp>.<tensor>"``."""
        return {f"{name}.{t}": arr for name, mlp in self.mlps() for t, arr in mlp.tensors().items()}

    def copy(self) -> "FusionModel":
        return FusionModel(self.config, self.visual_head.copy(),
                           [None if s is None else s.copy() for s in self.semantic],
                           [a.copy() for a in self.attention], dict(self.echo))


def init_fusion_model(rng: Rng, config: BranchConfig, visual_dim: int,
                      semantic_dims: Dict[str, int], embed_dim: int = 512,
                      visual_hidden: int = 512, semantic_hidden: int = 300,
                      attention_hidden: int = 300, dropout_rate: float = 0.7,
                      visual_dropout: float = 0.0, init_std: float = 0.02) -> FusionModel:
    missing = [m for m in config.semantic_modalities if m not in semantic_dims]
    if missing:
        raise ConfigurationError(f"branch config needs modalities {missing} that the data does not provide")
    visual = init_mlp(rng, visual_dim, visual_hidden, embed_dim, visual_dropout, VECTOR, init_std)
    semantic: List[Optional[MlpParams]] = []
    attention: List[MlpParams] = []
    for b in config.branches:
        if b.input_modality == VISUAL:
            semantic.append(None)
        else:
            semantic.append(init_mlp(rng, semantic_dims[b.input_modality], semantic_hidden,
                                     embed_dim, dropout_rate, VECTOR, init_std))
        attention.append(init_mlp(rng, embed_dim, attention_hidden, 1, dropout_rate,
                                  SCALAR_SIGMOID, init_std))
    return FusionModel(config, visual, semantic, attention)


# --- single operations ------------------------------------------------------

def embed_visual(model: FusionModel, raw, mode: str = INFER, rng: Optional[Rng] = None) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] != model.visual_dim:
        raise ConfigurationError(f"visual features have dim {raw.shape[-1]}, head expects {model.visual_dim}")
    out, _ = mlp_forward(model.visual_head, raw.reshape(-1, model.visual_dim), mode, rng)
    return out.reshape(raw.shape[:-1] + (model.embed_dim,))


def visual_prototype(embedded_support) -> np.ndarray:
    """Mean over the shot axis (second to last)."""
    e = np.asarray(embedded_support, dtype=np.float64)
    if e.ndim < 2 or e.shape[-2] == 0:
        raise ContractError("visual prototype of an empty support set")
    return e.mean(axis=-2)


def semantic_prototype(model: FusionModel, branch_index: int, semantics: Dict[str, np.ndarray],
                       V: np.ndarray, mode: str = INFER, rng: Optional[Rng] = None) -> np.ndarray:
    """Per-class semantic prototypes of one branch, shape ``(way, embed_dim)``."""
    return _semantic_forward(model, branch_index, semantics, V, mode, rng)[0]


def attention_coefficient(model: FusionModel, branch_index: int, attend_prototypes,
                          mode: str = INFER, rng: Optional[Rng] = None) -> np.ndarray:
    """One coefficient per class, each from that class's own attend prototype."""
    alpha, _ = mlp_forward(model.attention[branch_index], np.asarray(attend_prototypes), mode, rng)
    return alpha


def _check_fusion_inputs(V, S_list, alphas):
    V = np.asarray(V, dtype=np.float64)
    S_list = [np.asarray(s, dtype=np.float64) for s in S_list]
    alphas = [np.asarray(a, dtype=np.float64) for a in alphas]
    if len(S_list) != len(alphas):
        raise ContractError("need one coefficient per semantic prototype")
    for s in S_list:
        if s.shape != V.shape:
            raise ContractError(f"prototype shape {s.shape} != visual prototype shape {V.shape}")
    return V, S_list, alphas


def fuse_cascade(V, pairs: Sequence[Tuple[np.ndarray, np.ndarray]]) -> List[np.ndarray]:
    """Partial prototypes ``[P_0, ..., P_k]`` by the convex-combination recursion.

    ``V`` may be one prototype ``(D,)`` or a stack ``(way, D)``; coefficients
    are scalars or ``(way,)`` arrays accordingly.
    """
    V, S_list, alphas = _check_fusion_inputs(V, [p[0] for p in pairs], [p[1] for p in pairs])
    out = [V]
    for S, a in zip(S_list, alphas):
        a = a[..., None]
        out.append(a * out[-1] + (1.0 - a) * S)
    return out


def fuse_closed_form(V, S_list, alphas) -> np.ndarray:
    """Final prototype from the expanded product form."""
    V, S_list, alphas = _check_fusion_inputs(V, S_list, alphas)
    k = len(S_list)
    P = V * _prod(alphas, 0, k)[..., None]
    for i in range(k):
        P = P + S_list[i] * ((1.0 - alphas[i]) * _prod(alphas, i + 1, k))[..., None]
    return P


def _prod(alphas, start, stop):
    out = np.asarray(1.0)
    for a in alphas[start:stop]:
        out = out * a
    return out


def class_probabilities(Q, prototypes) -> np.ndarray:
    """``softmax(-||Q - P_c||^2)`` over classes; ``Q`` may be a batch of queries."""
    Q = np.asarray(Q, dtype=np.float64)
    P = np.asarray(prototypes, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] < 2:
        raise ConfigurationError("class probabilities need at least two class prototypes")
    single = Q.ndim == 1
    probs = softmax(-pairwise_sq_euclidean(np.atleast_2d(Q), P))
    return probs[0] if single else probs


# --- whole-episode forward / backward ---------------------------------------

@dataclass
class EpisodeForward:
    V: np.ndarray
    S: List[np.ndarray]
    alphas: List[np.ndarray]
    partials: List[np.ndarray]
    Q: np.ndarray
    visual_cache: ForwardCache = field(repr=False)
    semantic_caches: List[Optional[ForwardCache]] = field(repr=False)
    attention_caches: List[ForwardCache] = field(repr=False)
    shot: int = 1

    @property
    def final(self) -> np.ndarray:
        return self.partials[-1]


def _semantic_forward(model, i, semantics, V, mode, rng):
    b = model.config.branches[i]
    if b.input_modality == VISUAL:
        return V, None
    if b.input_modality not in semantics:
        raise DataError(f"episode has no {b.input_modality!r} vectors for branch {i + 1}")
    out, cache = mlp_forward(model.semantic[i], semantics[b.input_modality], mode, rng)
    return out, cache


def forward_episode(model: FusionModel, episode, mode: str = INFER,
                    rng: Optional[Rng] = None) -> EpisodeForward:
    """Run every stage of the model on one episode.

    Random draws (dropout masks) happen in a fixed order that depends only on
    shapes, so re-running with an identically seeded ``rng`` reproduces masks.
    """
    support = np.asarray(episode.support, dtype=np.float64)
    way, shot, dv = support.shape
    if dv != model.visual_dim:
        raise ConfigurationError(f"episode features have dim {dv}, model expects {model.visual_dim}")
    rows = np.concatenate([support.reshape(way * shot, dv), np.asarray(episode.query, dtype=np.float64)])
    E, vcache = mlp_forward(model.visual_head, rows, mode, rng)
    V = visual_prototype(E[: way * shot].reshape(way, shot, -1))
    Q = E[way * shot:]
    S, scaches, alphas, acaches = [], [], [], []
    for i, src in enumerate(model.config.attend_sources):
        s, sc = _semantic_forward(model, i, episode.semantics, V, mode, rng)
        S.append(s)
        scaches.append(sc)
        attend = V if src is None else S[src]
        a, ac = mlp_forward(model.attention[i], attend, mode, rng)
        alphas.append(a)
        acaches.append(ac)
    partials = fuse_cascade(V, list(zip(S, alphas)))
    return EpisodeForward(V, S, alphas, partials, Q, vcache, scaches, acaches, shot)


def _centred_mean(x: np.ndarray) -> float:
    """Mean that returns ``x[0]`` exactly when all entries are equal.

    A plain sum-then-divide can round a constant vector's mean off its value
    (e.g. twenty copies of ln 10).
    """
    return float(x[0] + np.mean(x - x[0]))


def _ce_term(Q, P, labels):
    """Mean cross-entropy of queries against one prototype set, with gradients."""
    d = pairwise_sq_euclidean(Q, P)
    logp = log_softmax(-d)
    M = Q.shape[0]
    loss = _centred_mean(-logp[np.arange(M), labels])
    G = np.exp(logp)
    G[np.arange(M), labels] -= 1.0
    G /= M
    # logits = -||q_m - p_c||^2
    gP = 2.0 * (G.T @ Q - G.sum(axis=0)[:, None] * P)
    gQ = 2.0 * (G @ P - G.sum(axis=1)[:, None] * Q)
    return loss, gP, gQ


def _labels(episode) -> np.ndarray:
    labels = np.asarray(episode.query_labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != np.asarray(episode.query).shape[0]:
        raise ContractError("query labels must align with query rows")
    return labels


def term_losses(model: FusionModel, episode, mode: str = INFER, rng: Optional[Rng] = None) -> List[float]:
    """Cross-entropy of every partial prototype set ``P_0 .. P_k``."""
    fw = forward_episode(model, episode, mode, rng)
    labels = _labels(episode)
    out = []
    for P in fw.partials:
        logp = log_softmax(-pairwise_sq_euclidean(fw.Q, P))
        out.append(_centred_mean(-logp[np.arange(len(labels)), labels]))
    return out


def episode_loss(model: FusionModel, episode, mode: str = INFER, rng: Optional[Rng] = None) -> float:
    terms = term_losses(model, episode, mode, rng)
    return float(sum(terms[r] for r in model.config.active_terms()))


def episode_loss_and_grads(model: FusionModel, episode, rng: Optional[Rng] = None,
                           mode: str = TRAIN) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss and exact gradients for every tensor in ``model.parameters()``."""
    fw = forward_episode(model, episode, mode, rng)
    labels = _labels(episode)
    k = model.config.k
    way, D = fw.V.shape

    gP = [np.zeros((way, D)) for _ in range(k + 1)]
    gQ = np.zeros_like(fw.Q)
    loss = 0.0
    for r in model.config.active_terms():
        lr, gp, gq = _ce_term(fw.Q, fw.partials[r], labels)
        loss += lr
        gP[r] += gp
        gQ += gq

    gV = np.zeros((way, D))
    gS = [np.zeros((way, D)) for _ in range(k)]
    galpha: List[np.ndarray] = [None] * k
    for r in range(k, 0, -1):
        a = fw.alphas[r - 1][:, None]
        galpha[r - 1] = (gP[r] * (fw.partials[r - 1] - fw.S[r - 1])).sum(axis=1)
        gP[r - 1] += a * gP[r]
        gS[r - 1] += (1.0 - a) * gP[r]
    gV += gP[0]

    grads: Dict[str, np.ndarray] = {}
    # attention inputs feed back into V or an earlier S, so these go first
    for i, src in enumerate(model.config.attend_sources):
        g, g_in = mlp_backward(model.attention[i], fw.attention_caches[i], galpha[i])
        grads.update({f"attention{i}.{t}": v for t, v in g.items()})
        if src is None:
            gV += g_in
        else:
            gS[src] += g_in
    for i in range(k):
        if model.semantic[i] is None:
            gV += gS[i]
        else:
            g, _ = mlp_backward(model.semantic[i], fw.semantic_caches[i], gS[i])
            grads.update({f"semantic{i}.{t}": v for t, v in g.items()})

    shot = fw.shot
    gE_support = np.repeat(gV[:, None, :] / shot, shot, axis=1).reshape(way * shot, D)
    g, _ = mlp_backward(model.visual_head, fw.visual_cache, np.concatenate([gE_support, gQ]))
    grads.update({f"visual.{t}": v for t, v in g.items()})
    params = model.parameters()
    return float(loss), {name: grads[name] for name in params}


def predict_proba(model: FusionModel, episode) -> np.ndarray:
    fw = forward_episode(model, episode, INFER)
    return class_probabilities(fw.Q, fw.final)


def predict(model: FusionModel, episode) -> np.ndarray:
    """Nearest final prototype per query; ties go to the lowest class index."""
    fw = forward_episode(model, episode, INFER)
    return np.argmin(pairwise_sq_euclidean(fw.Q, fw.final), axis=1)
