"""Checkpoint snapshots and their JSON-Lines stream format.

A stream file starts with a header object carrying the schema version,
followed by one snapshot object per line. Layer records live under keys
``layer.0`` .. ``layer.{n-1}``; the field names inside each record are the
public schema documented in ``docs/snapshot_schema.md``. Non-finite
quantities are written as the strings ``"infinite"`` (condition numbers)
or ``null`` (log-determinant of a zero matrix) because JSON has no inf.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .local_hessian import LocalHessian, NeuronBlockHessian
from .network import Network
from .spectral import SpectralSummary, hessian_spectrum, rank_tolerance, series_summary

FORMAT_NAME = "layerhess.snapshots"
SCHEMA_VERSION = "1.0"
INFINITE = "infinite"

SPECTRAL_FIELDS = ("weights", "gradient", "bias", "bias_gradient", "hessian_eigens")
CLASSIFICATION_SCORES = ("Accuracy", "Precision", "Recall", "F1", "AUC", "train_loss")
REGRESSION_SCORES = ("R2", "MAE", "RMSE", "train_loss")
VARIANTS = ("no", "sure", "huge")


class SnapshotError(ValueError):
    pass


class StreamFormatError(SnapshotError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


def encode_real(x: float):
    if math.isinf(x) and x > 0:
        return INFINITE
    if not math.isfinite(x):
        return None
    return float(x)


def decode_real(x) -> float:
    if x == INFINITE:
        return math.inf
    if x is None:
        return -math.inf
    return float(x)


@dataclass
class Snapshot:
    run_id: str
    variant: str
    dataset: str
    task: str
    iteration: int
    layers: dict[str, dict] = field(default_factory=dict)
    scores: dict[str, float] = field(default_factory=dict)
    test_scores: dict[str, float] = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def layer(self, i: int) -> dict:
        return self.layers[f"layer.{i}"]

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id, "variant": self.variant, "dataset": self.dataset,
            "task": self.task, "iteration": self.iteration,
            "layers": self.layers, "scores": self.scores, "test_scores": self.test_scores,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Snapshot":
        return cls(d["run_id"], d["variant"], d["dataset"], d["task"], d["iteration"],
                   d["layers"], d["scores"], d.get("test_scores", {}))


def layer_record(weights: np.ndarray, bias: np.ndarray, activation: str,
                 grad_flat: np.ndarray, hessian: LocalHessian | NeuronBlockHessian,
                 hessian_store_cap: int) -> dict:
    q, d = weights.shape
    p = q * d + q
    grad_flat = np.asarray(grad_flat, dtype=np.float64).reshape(-1)
    if grad_flat.size != p:
        raise SnapshotError(f"gradient of length {grad_flat.size} does not match {p} parameters")
    if hessian.dim != p:
        raise SnapshotError(f"Hessian of dimension {hessian.dim} does not match {p} parameters")
    spec = hessian_spectrum(hessian)
    dense = None
    if p <= hessian_store_cap:
        dense = hessian.to_dense().matrix if isinstance(hessian, NeuronBlockHessian) \
            else hessian.matrix
    w = weights.reshape(-1)
    gw, gb = grad_flat[: q * d], grad_flat[q * d:]
    return {
        "shape": [q, d],
        "activation": activation,
        "n_params": p,
        "weights": w.tolist(),
        "weights_spectral": series_summary(w).to_dict(),
        "gradient": gw.tolist(),
        "gradient_spectral": series_summary(gw).to_dict(),
        "bias": bias.tolist(),
        "bias_spectral": series_summary(bias).to_dict(),
        "bias_gradient": gb.tolist(),
        "bias_gradient_spectral": series_summary(gb).to_dict(),
        "hessian": dense.tolist() if dense is not None else None,
        "hessian_spectral": series_summary(dense).to_dict() if dense is not None else None,
        "hessian_eigens": spec.eigenvalues.tolist(),
        "hessian_eigens_spectral": series_summary(spec.eigenvalues).to_dict(),
        "hessian_rank": spec.rank,
        "hessian_condition": encode_real(spec.condition),
        "hessian_pseudo_condition": encode_real(spec.pseudo_condition),
        "hessian_trace": spec.trace,
        "hessian_log_abs_det": encode_real(spec.log_abs_det),
        "hessian_singular": spec.singular,
        "hessian_near_zero_fraction": spec.near_zero_fraction,
        "hessian_symmetry_score": spec.symmetry_score,
    }


def capture(net: Network, gradients: list[np.ndarray],
            hessians: list[LocalHessian | NeuronBlockHessian], metrics: dict,
            iteration: int, meta: dict, hessian_store_cap: int = 2048,
            test_scores: dict | None = None) -> Snapshot:
    """Build the snapshot for one checkpoint.

    ``gradients`` are per-block flat loss gradients, ``hessians`` per-block
    local Hessians at the probe input, both in block order.
    """
    n = len(net.blocks)
    if len(gradients) != n or len(hessians) != n:
        raise SnapshotError(
            f"{n} blocks but {len(gradients)} gradients and {len(hessians)} Hessians")
    layers = {}
    for i, (blk, g, h) in enumerate(zip(net.blocks, gradients, hessians)):
        layers[f"layer.{i}"] = layer_record(blk.weights, blk.bias, blk.activation.value, g, h,
                                            hessian_store_cap)
    return Snapshot(
        run_id=meta["run_id"], variant=meta["variant"], dataset=meta["dataset"],
        task=meta.get("task", "classification"), iteration=int(iteration), layers=layers,
        scores={k: float(v) for k, v in metrics.items()},
        test_scores={k: float(v) for k, v in (test_scores or {}).items()},
    )


def _dumps(obj) -> str:
    return json.dumps(obj, allow_nan=False, separators=(",", ":"), ensure_ascii=False)


def write_stream(snapshots: Iterable[Snapshot], path: str | Path, complete: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    snapshots = list(snapshots)
    header = {"format": FORMAT_NAME, "schema_version": SCHEMA_VERSION,
              "complete": bool(complete), "count": len(snapshots)}
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dumps(header) + "\n")
        for s in snapshots:
            fh.write(_dumps(s.to_dict()) + "\n")
    return path


def read_header(path: str | Path) -> dict:
    with Path(path).open(encoding="utf-8") as fh:
        first = fh.readline()
    if not first.strip():
        raise StreamFormatError("missing header line", 1)
    try:
        header = json.loads(first)
    except json.JSONDecodeError as exc:
        raise StreamFormatError(f"header is not JSON ({exc.msg})", 1) from None
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise StreamFormatError("not a snapshot stream header", 1)
    if header.get("schema_version") != SCHEMA_VERSION:
        raise StreamFormatError(
            f"schema version {header.get('schema_version')!r}, expected {SCHEMA_VERSION!r}", 1)
    return header


def read_stream(path: str | Path, skip_malformed: bool = False) -> list[Snapshot]:
    """Load a stream; malformed lines raise (with line number) unless skipped."""
    read_header(path)
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        fh.readline()
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                out.append(Snapshot.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                if skip_malformed:
                    continue
                raise StreamFormatError(f"malformed snapshot ({exc})", lineno) from None
    return out


# ------------------------------------------------------------ validation

@dataclass(frozen=True)
class Violation:
    line: int
    field: str
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.field}: {self.message}"


_LAYER_TYPES = {
    "shape": list, "activation": str, "n_params": int,
    "weights": list, "gradient": list, "bias": list, "bias_gradient": list,
    "hessian_eigens": list, "hessian_rank": int, "hessian_trace": (int, float),
    "hessian_singular": bool, "hessian_near_zero_fraction": (int, float),
    "hessian_symmetry_score": (int, float),
}
_SUMMARY_KEYS = ("mean", "std", "min", "max", "histogram", "welch", "welch_window", "top_peaks")


def _is_real_or_inf(v) -> bool:
    return v == INFINITE or (isinstance(v, (int, float)) and not isinstance(v, bool))


def _check_summary(summary, name: str, length: int | None, line: int, out: list):
    if not isinstance(summary, dict):
        out.append(Violation(line, name, "missing or not an object"))
        return
    for key in _SUMMARY_KEYS:
        if key not in summary:
            out.append(Violation(line, f"{name}.{key}", "missing field"))
    if any(k not in summary for k in _SUMMARY_KEYS):
        return
    hist = summary["histogram"]
    if not (isinstance(hist, dict) and isinstance(hist.get("counts"), list)
            and isinstance(hist.get("bin_edges"), list)):
        out.append(Violation(line, f"{name}.histogram", "needs bin_edges and counts lists"))
    elif len(hist["bin_edges"]) != len(hist["counts"]) + 1:
        out.append(Violation(line, f"{name}.histogram", "bin_edges must be one longer than counts"))
    elif length is not None and sum(hist["counts"]) != length:
        out.append(Violation(line, f"{name}.histogram",
                             f"counts sum to {sum(hist['counts'])}, series has {length}"))
    if not (summary["min"] <= summary["mean"] <= summary["max"]) or summary["std"] < 0:
        out.append(Violation(line, name, "needs min <= mean <= max and std >= 0"))
    powers = [p[2] for p in summary["top_peaks"]]
    if len(powers) > 5 or powers != sorted(powers, reverse=True):
        out.append(Violation(line, f"{name}.top_peaks", "at most 5, by descending power"))


def _check_layer(rec, key: str, line: int, out: list):
    if not isinstance(rec, dict):
        out.append(Violation(line, key, "layer record is not an object"))
        return
    for name, typ in _LAYER_TYPES.items():
        if name not in rec:
            out.append(Violation(line, f"{key}.{name}", "missing field"))
        elif not isinstance(rec[name], typ) or (typ is int and isinstance(rec[name], bool)):
            out.append(Violation(line, f"{key}.{name}", f"wrong type {type(rec[name]).__name__}"))
    for name in ("hessian_condition", "hessian_pseudo_condition"):
        if name not in rec:
            out.append(Violation(line, f"{key}.{name}", "missing field"))
        elif not _is_real_or_inf(rec[name]):
            out.append(Violation(line, f"{key}.{name}", "must be a number or 'infinite'"))
        elif rec[name] != INFINITE and rec[name] < 1:
            out.append(Violation(line, f"{key}.{name}", "condition number below 1"))
    for name in ("hessian", "hessian_spectral", "hessian_log_abs_det"):
        if name not in rec:
            out.append(Violation(line, f"{key}.{name}", "missing field"))
    if any(v.line == line and v.field.startswith(key + ".") for v in out):
        return
    q, d = rec["shape"]
    p = q * d + q
    if rec["n_params"] != p:
        out.append(Violation(line, f"{key}.n_params", f"expected {p} for shape {[q, d]}"))
    lengths = {"weights": q * d, "gradient": q * d, "bias": q, "bias_gradient": q,
               "hessian_eigens": p}
    for name, n in lengths.items():
        if len(rec[name]) != n:
            out.append(Violation(line, f"{key}.{name}", f"length {len(rec[name])}, expected {n}"))
        _check_summary(rec.get(f"{name}_spectral"), f"{key}.{name}_spectral", len(rec[name]),
                       line, out)
    eig = np.asarray(rec["hessian_eigens"], dtype=np.float64)
    if eig.size and np.any(np.diff(eig) < 0):
        out.append(Violation(line, f"{key}.hessian_eigens", "not sorted ascending"))
    if eig.size == p:
        rank = int(np.count_nonzero(np.abs(eig) > rank_tolerance(eig)))
        if rank != rec["hessian_rank"]:
            out.append(Violation(line, f"{key}.hessian_rank",
                                 f"stored {rec['hessian_rank']}, eigenvalues give {rank}"))
    if rec["hessian"] is not None:
        h = rec["hessian"]
        if len(h) != p or any(len(r) != p for r in h):
            out.append(Violation(line, f"{key}.hessian", f"must be {p} x {p}"))
        else:
            _check_summary(rec["hessian_spectral"], f"{key}.hessian_spectral", p * p, line, out)
    elif rec["hessian_spectral"] is not None:
        out.append(Violation(line, f"{key}.hessian_spectral", "present without a stored Hessian"))


def validate(path: str | Path) -> list[Violation]:
    """Schema and invariant check of a stream file; an empty list means valid."""
    path = Path(path)
    out: list[Violation] = []
    try:
        read_header(path)
    except StreamFormatError as exc:
        return [Violation(1, "header", str(exc))]
    last_iter: dict[str, int] = {}
    n_snap = 0
    with path.open(encoding="utf-8") as fh:
        fh.readline()
        for line, text in enumerate(fh, start=2):
            if not text.strip():
                continue
            n_snap += 1
            try:
                snap = json.loads(text)
            except json.JSONDecodeError as exc:
                out.append(Violation(line, "<line>", f"invalid JSON ({exc.msg})"))
                continue
            if not isinstance(snap, dict):
                out.append(Violation(line, "<line>", "snapshot is not an object"))
                continue
            for name, typ in (("run_id", str), ("variant", str), ("dataset", str),
                              ("task", str), ("iteration", int), ("layers", dict),
                              ("scores", dict)):
                if name not in snap:
                    out.append(Violation(line, name, "missing field"))
                elif not isinstance(snap[name], typ):
                    out.append(Violation(line, name, f"wrong type {type(snap[name]).__name__}"))
            if any(v.line == line for v in out):
                continue
            if snap["variant"] not in VARIANTS:
                out.append(Violation(line, "variant", f"{snap['variant']!r} not in {VARIANTS}"))
            wanted = CLASSIFICATION_SCORES if snap["task"] == "classification" else REGRESSION_SCORES
            for name in wanted:
                if not isinstance(snap["scores"].get(name), (int, float)):
                    out.append(Violation(line, f"scores.{name}", "missing or not a number"))
            keys = list(snap["layers"])
            expected = [f"layer.{i}" for i in range(len(keys))]
            if sorted(keys, key=lambda k: int(k.split(".")[1]) if k[6:].isdigit() else -1) \
                    != expected:
                out.append(Violation(line, "layers", f"keys {keys} are not layer.0..layer.n-1"))
            else:
                for k in expected:
                    _check_layer(snap["layers"][k], k, line, out)
            prev = last_iter.get(snap["run_id"])
            if prev is not None and snap["iteration"] <= prev:
                out.append(Violation(line, "iteration",
                                     f"{snap['iteration']} does not increase past {prev}"))
            last_iter[snap["run_id"]] = snap["iteration"]
    return out


def hessian_eigens(snap: Snapshot, i: int) -> np.ndarray:
    return np.asarray(snap.layer(i)["hessian_eigens"], dtype=np.float64)


def summary_of(rec: dict, name: str) -> SpectralSummary:
    return SpectralSummary.from_dict(rec[f"{name}_spectral"])
