"""Post-hoc statistics over snapshot streams, plus rule-based diagnostics."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .network import Network
from .numerics import NumericsError, pca_project, pearson_corr, standardize_columns, svd
from .snapshot import Snapshot, decode_real, encode_real

log = logging.getLogger(__name__)

CLASSIFICATION_A = ("Accuracy", "Precision", "Recall", "F1", "AUC", "train_loss")
REGRESSION_A = ("R2", "neg_MAE", "neg_RMSE", "train_loss")
LAYER_B = (
    "weights.mean", "weights.std", "weights.min", "weights.max",
    "gradient.mean", "gradient.std", "gradient.min", "gradient.max",
    "hessian_eigens.mean", "hessian_eigens.std", "hessian_eigens.min", "hessian_eigens.max",
    "hessian_rank", "hessian_condition_log10", "hessian_near_zero_fraction",
)
PCA_LAYER_FEATURES = (
    "hessian_eigens.mean", "hessian_eigens.std", "hessian_eigens.min", "hessian_eigens.max",
    "hessian_rank", "hessian_condition_log10", "hessian_near_zero_fraction",
)
CONDITION_LOG_CAP = 12.0
STAT_ROWS = ("max", "avg", "median", "min", "std")


class AnalysisError(ValueError):
    pass


def condition_feature(value) -> float:
    """log10 of a stored condition number, capped; 'infinite' maps to the cap."""
    c = decode_real(value)
    if math.isinf(c):
        return CONDITION_LOG_CAP
    return min(CONDITION_LOG_CAP, math.log10(max(c, 1.0)))


def _layer_values(rec: dict) -> list[float]:
    out = []
    for series in ("weights", "gradient", "hessian_eigens"):
        s = rec[f"{series}_spectral"]
        out += [s["mean"], s["std"], s["min"], s["max"]]
    # the strict condition number is infinite for every rank-deficient local
    # Hessian, so the feature uses the above-threshold ratio instead
    out += [float(rec["hessian_rank"]), condition_feature(rec["hessian_pseudo_condition"]),
            rec["hessian_near_zero_fraction"]]
    return out


def _a_values(scores: dict, task: str) -> list[float]:
    if task == "classification":
        return [float(scores[k]) for k in CLASSIFICATION_A]
    return [float(scores["R2"]), -float(scores["MAE"]), -float(scores["RMSE"]),
            float(scores["train_loss"])]


# ------------------------------------------------------------ features

@dataclass
class FeatureGroups:
    A: np.ndarray
    B: np.ndarray
    a_names: list[str]
    b_names: list[str]
    sample_keys: list[tuple[str, int]]
    task: str = "classification"

    def __post_init__(self):
        if self.A.shape[0] != self.B.shape[0] or self.A.shape[0] != len(self.sample_keys):
            raise AnalysisError("A, B and sample keys are not row aligned")
        if self.A.shape[1] != len(self.a_names) or self.B.shape[1] != len(self.b_names):
            raise AnalysisError("column names do not match column counts")

    @property
    def n_samples(self) -> int:
        return self.A.shape[0]

    def standardized(self) -> "FeatureGroups":
        """Z-scored copy with constant columns dropped (and logged by name)."""
        za, ka = standardize_columns(self.A)
        zb, kb = standardize_columns(self.B)
        dropped = [self.a_names[i] for i in range(len(self.a_names)) if i not in set(ka)]
        dropped += [self.b_names[i] for i in range(len(self.b_names)) if i not in set(kb)]
        if dropped:
            log.info("constant feature column(s) dropped: %s", ", ".join(dropped))
        return FeatureGroups(za, zb, [self.a_names[i] for i in ka],
                             [self.b_names[i] for i in kb], list(self.sample_keys), self.task)


def _ordered(snapshots: Sequence[Snapshot]) -> list[Snapshot]:
    return sorted(snapshots, key=lambda s: (s.run_id, s.iteration))


def extract_features(snapshots: Sequence[Snapshot]) -> FeatureGroups:
    """Group A (quality metrics) and group B (15 statistics per layer), one row per snapshot.

    Rows are ordered by ``(run_id, iteration)``; values are the stored
    fields, with the condition number mapped through :func:`condition_feature`.
    """
    snaps = _ordered(snapshots)
    if not snaps:
        raise AnalysisError("no snapshots to extract features from")
    tasks = {s.task for s in snaps}
    if len(tasks) > 1:
        raise AnalysisError(f"mixed tasks in one feature group: {sorted(tasks)}")
    task = tasks.pop()
    n_layers = {s.n_layers for s in snaps}
    if len(n_layers) > 1:
        raise AnalysisError(f"snapshots disagree on layer count: {sorted(n_layers)}")
    n = n_layers.pop()
    a_names = list(CLASSIFICATION_A if task == "classification" else REGRESSION_A)
    b_names = [f"layer.{i}.{f}" for i in range(n) for f in LAYER_B]
    a_rows, b_rows = [], []
    for s in snaps:
        try:
            a_rows.append(_a_values(s.scores, task))
            b_rows.append([v for i in range(n) for v in _layer_values(s.layer(i))])
        except KeyError as exc:
            raise AnalysisError(f"{s.run_id} iteration {s.iteration}: missing field {exc}") from None
    return FeatureGroups(np.array(a_rows, dtype=np.float64), np.array(b_rows, dtype=np.float64),
                         a_names, b_names, [(s.run_id, s.iteration) for s in snaps], task)


# ----------------------------------------------------------------- CCA

@dataclass
class CcaResult:
    x_weights: np.ndarray
    y_weights: np.ndarray
    correlations: np.ndarray
    scores_x: np.ndarray
    scores_y: np.ndarray
    x_names: list[str] = field(default_factory=list)
    y_names: list[str] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.correlations.size

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "correlations": self.correlations.tolist(),
            "x_names": self.x_names, "y_names": self.y_names,
            "x_weights": self.x_weights.tolist(), "y_weights": self.y_weights.tolist(),
            "scores_x": self.scores_x.tolist(), "scores_y": self.scores_y.tolist(),
        }


def _inv_sqrt(c: np.ndarray, name: str) -> np.ndarray:
    eps = 1e-8 * float(np.trace(c)) / c.shape[0]
    if not eps > 0:
        raise AnalysisError(f"{name} covariance is zero; nothing to correlate")
    reg = c + eps * np.eye(c.shape[0])
    w, v = np.linalg.eigh(reg)
    if w[0] <= 0:
        raise AnalysisError(
            f"{name} covariance degenerate after ridge (eigenvalues {w[0]:.3e}..{w[-1]:.3e})")
    return (v / np.sqrt(w)) @ v.T


def _decorrelate(scores: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # the ridge leaves O(eps) cross-talk between variates; a Cholesky sweep removes it
    n = scores.shape[0]
    gram = scores.T @ scores / n
    r = np.linalg.cholesky(gram).T
    rinv = np.linalg.inv(r)
    return scores @ rinv, weights @ rinv


def cca(a, b, k: int = 2, names: tuple[list[str], list[str]] | None = None) -> CcaResult:
    """Canonical correlations between column groups ``a`` and ``b``.

    Columns are standardized (constant ones dropped), a ridge of
    ``1e-8 * trace / dim`` goes on each covariance block, and the whitened
    cross-covariance is decomposed by SVD. Weights apply to the
    standardized columns; reported correlations are those of the returned
    score pairs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise AnalysisError("A and B must be matrices with the same number of rows")
    n = a.shape[0]
    if n < 3:
        raise AnalysisError(f"CCA needs at least 3 rows, got {n}")
    x, kx = standardize_columns(a)
    y, ky = standardize_columns(b)
    if not 1 <= k <= min(x.shape[1], y.shape[1]):
        raise AnalysisError(
            f"k={k} exceeds the usable column counts ({x.shape[1]}, {y.shape[1]})")
    wx = _inv_sqrt(x.T @ x / n, "A")
    wy = _inv_sqrt(y.T @ y / n, "B")
    m = wx @ (x.T @ y / n) @ wy
    res = svd(m)
    xw = wx @ res.u[:, :k]
    yw = wy @ res.v[:, :k]
    sx, xw = _decorrelate(x @ xw, xw)
    sy, yw = _decorrelate(y @ yw, yw)
    corr = np.array([float(np.mean(sx[:, i] * sy[:, i])) for i in range(k)])
    flip = corr < 0
    sy[:, flip] *= -1.0
    yw[:, flip] *= -1.0
    corr = np.minimum(1.0, np.abs(corr))
    order = np.argsort(-corr, kind="stable")
    xn = [names[0][i] for i in kx] if names else []
    yn = [names[1][i] for i in ky] if names else []
    return CcaResult(xw[:, order], yw[:, order], corr[order], sx[:, order], sy[:, order], xn, yn)


def cca_features(fg: FeatureGroups, k: int = 2) -> CcaResult:
    return cca(fg.A, fg.B, k, (fg.a_names, fg.b_names))


def cross_loadings(fg: FeatureGroups, result: CcaResult, component: int = 0) -> np.ndarray:
    """Correlation of each usable group-B column with one canonical variate of A."""
    y, _ = standardize_columns(fg.B)
    s = result.scores_x[:, component]
    return np.array([pearson_corr(y[:, j], s) for j in range(y.shape[1])])


def score_stats(values) -> dict[str, float]:
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if v.size == 0:
        raise AnalysisError("score_stats of an empty sequence")
    mean = float(np.mean(v))
    return {
        "max": float(v[-1]),
        "avg": mean,
        "median": float(v[(v.size - 1) // 2]),
        "min": float(v[0]),
        "std": float(np.sqrt(np.mean((v - mean) ** 2))),
    }


# ------------------------------------------------------- correlations

@dataclass
class LabeledMatrix:
    names: list[str]
    values: np.ndarray
    undefined: np.ndarray  # bool mask; undefined entries hold 0.0

    def to_rows(self) -> list[list[str]]:
        rows = [[""] + self.names]
        for i, name in enumerate(self.names):
            rows.append([name] + ["undefined" if self.undefined[i, j] else repr(float(self.values[i, j]))
                                  for j in range(len(self.names))])
        return rows


def correlation_matrix(fg: FeatureGroups) -> LabeledMatrix:
    x = np.hstack([fg.A, fg.B])
    names = list(fg.a_names) + list(fg.b_names)
    if x.shape[0] < 2:
        raise AnalysisError("correlation matrix needs at least 2 rows")
    m = x.shape[1]
    vals = np.zeros((m, m))
    undefined = np.zeros((m, m), dtype=bool)
    const = np.array([np.all(x[:, j] == x[0, j]) for j in range(m)])
    for i in range(m):
        for j in range(i, m):
            if const[i] or const[j]:
                undefined[i, j] = undefined[j, i] = True
                continue
            r = 1.0 if i == j else pearson_corr(x[:, i], x[:, j])
            vals[i, j] = vals[j, i] = r
    return LabeledMatrix(names, vals, undefined)


# ----------------------------------------------------------------- PCA

def pca_layer_features(snap: Snapshot) -> list[float]:
    """Hessian statistics of the first and the last layer (the only layers every variant shares)."""
    out = []
    for i in (0, snap.n_layers - 1):
        vals = _layer_values(snap.layer(i))
        out += vals[8:]
    return out


def pca_feature_names() -> list[str]:
    return [f"{where}.{f}" for where in ("first", "last") for f in PCA_LAYER_FEATURES]


@dataclass
class PcaCoordinates:
    sample_keys: list[tuple[str, int]]
    labels: list[str]
    coords: np.ndarray  # n x 2
    explained_variance_ratio: np.ndarray

    def to_rows(self) -> list[list[str]]:
        rows = [["run_id", "iteration", "variant", "pc1", "pc2"]]
        for (rid, it), lab, (c1, c2) in zip(self.sample_keys, self.labels, self.coords):
            rows.append([rid, str(it), lab, repr(float(c1)), repr(float(c2))])
        return rows


def pca_architectures(streams: dict[str, Sequence[Snapshot]]) -> PcaCoordinates:
    """Pooled 2-D PCA of Hessian features, one labeled point per snapshot."""
    keys, labels, rows = [], [], []
    for label, snaps in streams.items():
        snaps = _ordered(snaps)
        if len(snaps) < 2:
            raise AnalysisError(f"variant {label!r} needs at least 2 snapshots")
        for s in snaps:
            keys.append((s.run_id, s.iteration))
            labels.append(label)
            rows.append(pca_layer_features(s))
    try:
        res = pca_project(np.array(rows, dtype=np.float64), 2)
    except NumericsError as exc:
        raise AnalysisError(f"degenerate pooled feature matrix: {exc}") from None
    return PcaCoordinates(keys, labels, res.projected, res.explained_variance_ratio)


def silhouette_score(points, labels) -> float:
    """Mean silhouette coefficient under Euclidean distance."""
    x = np.asarray(points, dtype=np.float64)
    lab = np.asarray(labels)
    uniq = np.unique(lab)
    if not 2 <= uniq.size <= x.shape[0] - 1:
        raise AnalysisError("silhouette needs between 2 and n-1 distinct labels")
    dist = np.sqrt(np.maximum(np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=2), 0.0))
    s = np.zeros(x.shape[0])
    for i in range(x.shape[0]):
        same = lab == lab[i]
        if same.sum() == 1:
            continue  # singleton clusters score 0
        a = dist[i, same].sum() / (same.sum() - 1)
        b = min(dist[i, lab == u].mean() for u in uniq if u != lab[i])
        s[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(np.mean(s))


# ------------------------------------------------- layer similarity

def _weight_matrices(source: Network | Snapshot) -> list[np.ndarray]:
    if isinstance(source, Network):
        return [b.weights for b in source.blocks]
    out = []
    for i in range(source.n_layers):
        rec = source.layer(i)
        out.append(np.asarray(rec["weights"], dtype=np.float64).reshape(rec["shape"]))
    return out


def singular_profile(w: np.ndarray) -> np.ndarray:
    return svd(w).s


def _pair_similarity(w1: np.ndarray, w2: np.ndarray) -> float:
    p, r = singular_profile(w1), singular_profile(w2)
    length = max(p.size, r.size)
    p = np.pad(p, (0, length - p.size))
    r = np.pad(r, (0, length - r.size))
    np_, nr = np.linalg.norm(p), np.linalg.norm(r)
    if np_ == 0 or nr == 0:
        raise AnalysisError("zero singular profile, similarity undefined")
    return float(min(1.0, max(0.0, (p / np_) @ (r / nr))))


def adjacent_layer_similarity(source: Network | Snapshot) -> list[float]:
    """Cosine similarity of unit-normalized singular-value profiles of neighboring layers."""
    mats = _weight_matrices(source)
    if len(mats) < 2:
        raise AnalysisError("adjacent-layer similarity needs at least 2 layers")
    out = []
    for i in range(len(mats) - 1):
        try:
            out.append(_pair_similarity(mats[i], mats[i + 1]))
        except AnalysisError:
            raise AnalysisError(
                f"layers {i} and {i + 1}: zero singular profile, similarity undefined") from None
    return out


# --------------------------------------------------------- diagnostics

@dataclass(frozen=True)
class Thresholds:
    near_zero: float = 0.9
    low_expressivity: float = 1e-3
    saddle_symmetry: float = 0.9
    saddle_gradient: float = 1e-3
    ill_conditioned: float = 1e6
    low_rank: float = 0.1


FLAG_NAMES = ("overparameterized_near_zero", "saddle_suspect", "low_expressivity",
              "ill_conditioned", "low_rank_redundancy")

RECOMMENDATIONS = {
    "overparameterized_near_zero":
        "curvature concentrated near zero in late layers: consider fewer parameters or "
        "regularization, and check for saturated units",
    "saddle_suspect":
        "balanced spectrum with a vanishing gradient: likely a saddle region, try momentum "
        "or a learning-rate change",
    "low_expressivity":
        "very flat curvature in early layers: consider wider layers or a different activation",
    "ill_conditioned":
        "large spread between curvature directions: prefer an adaptive optimizer (Adam, RMSProp)",
    "low_rank_redundancy":
        "local Hessian has low relative rank: the layer may be redundant or over-wide",
}


@dataclass
class Flag:
    layer: int
    name: str
    evidence: dict
    threshold: dict


@dataclass
class DiagnosticsReport:
    run_id: str
    iteration: int
    n_layers: int
    flags: list[Flag]
    adjacent_similarity: list[float | None]
    trend: dict
    recommendations: list[str]
    thresholds: dict

    @property
    def fired(self) -> set[str]:
        return {f.name for f in self.flags}

    def layer_flags(self, layer: int) -> list[str]:
        return [f.name for f in self.flags if f.layer == layer]

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id, "iteration": self.iteration, "n_layers": self.n_layers,
            "flags": [asdict(f) for f in self.flags],
            "adjacent_similarity": self.adjacent_similarity,
            "trend": self.trend,
            "recommendations": self.recommendations,
            "thresholds": {k: encode_real(v) for k, v in self.thresholds.items()},
        }

    def to_text(self) -> str:
        lines = [f"run {self.run_id}, iteration {self.iteration}, {self.n_layers} layer(s)"]
        if not self.flags:
            lines.append("no warnings")
        else:
            lines.append(f"{'layer':>5}  {'flag':<28} evidence")
            for f in self.flags:
                ev = ", ".join(f"{k}={_fmt(v)}" for k, v in f.evidence.items())
                th = ", ".join(f"{k}={_fmt(v)}" for k, v in f.threshold.items())
                lines.append(f"{f.layer:>5}  {f.name:<28} {ev} (threshold {th})")
        if self.adjacent_similarity:
            sims = ", ".join("undefined" if s is None else f"{s:.3f}" for s in self.adjacent_similarity)
            lines.append(f"adjacent-layer similarity: {sims}")
        lines += [f"- {r}" for r in self.recommendations]
        return "\n".join(lines)


def _fmt(v) -> str:
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def _grad_inf_norm(rec: dict) -> float:
    g = rec["gradient"] + rec["bias_gradient"]
    return float(max(abs(x) for x in g)) if g else 0.0


def _layer_flags(i: int, n: int, rec: dict, th: Thresholds) -> list[Flag]:
    flags = []
    late = i >= n - math.ceil(n / 2)
    early = i < math.ceil(n / 2)
    nzf = float(rec["hessian_near_zero_fraction"])
    if late and nzf > th.near_zero:
        flags.append(Flag(i, "overparameterized_near_zero", {"near_zero_fraction": nzf},
                          {"near_zero_fraction": th.near_zero}))
    eig = rec["hessian_eigens"]
    lam_max = float(max(abs(eig[0]), abs(eig[-1]))) if eig else 0.0
    if early and lam_max < th.low_expressivity:
        flags.append(Flag(i, "low_expressivity", {"max_abs_eigenvalue": lam_max},
                          {"max_abs_eigenvalue": th.low_expressivity}))
    sym = float(rec["hessian_symmetry_score"])
    gnorm = _grad_inf_norm(rec)
    if sym > th.saddle_symmetry and gnorm < th.saddle_gradient:
        flags.append(Flag(i, "saddle_suspect", {"symmetry_score": sym, "gradient_inf_norm": gnorm},
                          {"symmetry_score": th.saddle_symmetry,
                           "gradient_inf_norm": th.saddle_gradient}))
    cond = decode_real(rec["hessian_pseudo_condition"])
    if math.isfinite(cond) and cond > th.ill_conditioned:
        flags.append(Flag(i, "ill_conditioned", {"condition": cond},
                          {"condition": th.ill_conditioned}))
    ratio = rec["hessian_rank"] / rec["n_params"]
    if ratio < th.low_rank:
        flags.append(Flag(i, "low_rank_redundancy",
                          {"rank": rec["hessian_rank"], "n_params": rec["n_params"],
                           "rank_ratio": ratio}, {"rank_ratio": th.low_rank}))
    return flags


def diagnose(stream: Sequence[Snapshot], thresholds: Thresholds | None = None) -> DiagnosticsReport:
    """Evaluate the warning rules at the final snapshot of a run."""
    th = thresholds or Thresholds()
    snaps = sorted(stream, key=lambda s: s.iteration)
    if not snaps:
        raise AnalysisError("cannot diagnose an empty stream")
    last, first = snaps[-1], snaps[0]
    n = last.n_layers
    flags = [f for i in range(n) for f in _layer_flags(i, n, last.layer(i), th)]
    sims: list[float | None] = []
    if n >= 2:
        mats = _weight_matrices(last)
        for i in range(n - 1):
            try:
                sims.append(_pair_similarity(mats[i], mats[i + 1]))
            except AnalysisError:
                sims.append(None)
    trend = {
        f"layer.{i}": {
            "near_zero_fraction": [first.layer(i)["hessian_near_zero_fraction"],
                                   last.layer(i)["hessian_near_zero_fraction"]],
            "hessian_rank": [first.layer(i)["hessian_rank"], last.layer(i)["hessian_rank"]],
        }
        for i in range(n)
    }
    recs = [RECOMMENDATIONS[name] for name in FLAG_NAMES if any(f.name == name for f in flags)]
    return DiagnosticsReport(last.run_id, last.iteration, n, flags, sims,
                             {"iterations": [first.iteration, last.iteration], **trend},
                             recs, asdict(th))


# ----------------------------------------------------------- artifacts

def artifact_path(outdir: str | Path, run_id: str, artifact: str, ext: str) -> Path:
    return Path(outdir) / f"{run_id}.{artifact}.{ext}"


def write_rows(path: Path, rows: list[list[str]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    return path


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(obj, indent=1, sort_keys=True, allow_nan=False, default=_json_default)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def score_stats_rows(columns: dict[str, dict[str, float]]) -> list[list[str]]:
    """Table layout: one row per statistic, one column per variant."""
    labels = list(columns)
    rows = [["statistic"] + labels]
    for stat in STAT_ROWS:
        rows.append([stat] + [repr(float(columns[c][stat])) for c in labels])
    return rows


def variant_score_stats(fg: FeatureGroups, k: int = 2) -> dict[str, float]:
    """Statistics of the cross-loadings of group B on the first canonical variate of A."""
    res = cca_features(fg, k=min(k, _usable_k(fg)))
    return score_stats(cross_loadings(fg, res))


def _usable_k(fg: FeatureGroups) -> int:
    _, ka = standardize_columns(fg.A)
    _, kb = standardize_columns(fg.B)
    return max(1, min(ka.size, kb.size))
