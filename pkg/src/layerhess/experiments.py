"""Canned end-to-end experiments with directional pass/fail predicates."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

from .cli import (ExperimentConfig, analyze_streams, diagnose_stream, load_valid, train_variants)


@dataclass
class Predicate:
    name: str
    passed: bool
    detail: str


@dataclass
class PresetResult:
    name: str
    predicates: list[Predicate]
    artifacts: list[Path] = field(default_factory=list)
    values: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.predicates)

    def to_dict(self) -> dict:
        return {
            "preset": self.name,
            "passed": self.passed,
            "predicates": [{"name": p.name, "passed": p.passed, "detail": p.detail}
                           for p in self.predicates],
            "values": self.values,
            "artifacts": [str(p) for p in self.artifacts],
        }

    def text(self) -> str:
        lines = [f"preset {self.name}: {'PASS' if self.passed else 'FAIL'}"]
        lines += [f"  [{'PASS' if p.passed else 'FAIL'}] {p.name}: {p.detail}"
                  for p in self.predicates]
        return "\n".join(lines)


def _final(path) -> object:
    return load_valid(path)[-1]


def _write_summary(res: PresetResult, outdir: Path) -> PresetResult:
    js = outdir / f"{res.name}.summary.json"
    js.write_text(json.dumps(res.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    txt = outdir / f"{res.name}.summary.txt"
    txt.write_text(res.text() + "\n", encoding="utf-8")
    res.artifacts += [js, txt]
    return res


# ------------------------------------------------------------- presets

SATURATION_TRAIN = {
    "hidden": [8, 8], "hidden_activation": "tanh", "output_activation": "tanh",
    "optimizer": "sgd", "lr": 0.05, "iterations": 200, "checkpoint_every": 20,
}
SATURATION_SCALE = 20.0


def saturation_configs(seed: int) -> tuple[ExperimentConfig, ExperimentConfig]:
    base = ExperimentConfig(dataset="moons", n=400, params={"noise": 0.1}, seed=seed,
                            variants=["sure"], train=dict(SATURATION_TRAIN))
    control = replace(base, train={**base.train, "init_scale": 1.0}, run_suffix="-control")
    scaled = replace(base, train={**base.train, "init_scale": SATURATION_SCALE},
                     run_suffix="-scaled")
    return control, scaled


def run_saturation(outdir: Path, seed: int, workers: int = 1) -> PresetResult:
    control, scaled = saturation_configs(seed)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=2) as pool:
            runs = list(pool.map(lambda c: train_variants(c, outdir)[0], (control, scaled)))
    else:
        runs = [train_variants(c, outdir)[0] for c in (control, scaled)]
    for r in runs:
        if r.error:
            return _write_summary(PresetResult("saturation", [
                Predicate("training", False, f"{r.variant}: {r.error}")], [r.path]), outdir)
    c_path, s_path = runs[0].path, runs[1].path
    c_last, s_last = _final(c_path), _final(s_path)
    out_layer = c_last.n_layers - 1
    nz_c = c_last.layer(out_layer)["hessian_near_zero_fraction"]
    nz_s = s_last.layer(out_layer)["hessian_near_zero_fraction"]
    rep_c, jc = diagnose_stream(c_path, outdir)
    rep_s, js = diagnose_stream(s_path, outdir)
    ana = analyze_streams([c_path, s_path], outdir, name="saturation")
    preds = [
        Predicate("scaled_more_near_zero", nz_s > nz_c,
                  f"final Tanh layer near_zero_fraction scaled={nz_s:.4f} > control={nz_c:.4f}"),
        Predicate("scaled_near_zero_ge_0.9", nz_s >= 0.9, f"scaled={nz_s:.4f} >= 0.9"),
        Predicate("scaled_flag_fires",
                  "overparameterized_near_zero" in rep_s.layer_flags(out_layer),
                  f"scaled flags: {sorted(rep_s.fired) or 'none'}"),
        Predicate("control_flag_silent",
                  "overparameterized_near_zero" not in rep_c.fired,
                  f"control flags: {sorted(rep_c.fired) or 'none'}"),
    ]
    values = {"near_zero_control": nz_c, "near_zero_scaled": nz_s,
              "control_flags": sorted(rep_c.fired), "scaled_flags": sorted(rep_s.fired),
              "control_scores": c_last.scores, "scaled_scores": s_last.scores}
    return _write_summary(PresetResult("saturation", preds,
                                       [c_path, s_path, jc, js, *ana.artifacts], values), outdir)


def _variants_preset(name: str, cfg: ExperimentConfig, outdir: Path, workers: int,
                     extra: Callable[[dict], list[Predicate]] | None = None) -> PresetResult:
    runs = train_variants(cfg, outdir, workers)
    paths = [r.path for r in runs]
    failed = [r for r in runs if r.error]
    if failed:
        return _write_summary(PresetResult(name, [
            Predicate("training", False, "; ".join(f"{r.variant}: {r.error}" for r in failed))],
            paths), outdir)
    counts = {r.variant: r.n_params for r in runs}
    ana = analyze_streams(paths, outdir, name=name)
    stats_csv = next(p for p in ana.artifacts if p.name.endswith(".score_stats.csv"))
    with stats_csv.open(encoding="utf-8") as fh:
        table = list(csv.reader(fh))
    shape_ok = (table[0][1:] == ["no", "sure", "huge"]
                and [r[0] for r in table[1:]] == ["max", "avg", "median", "min", "std"])
    reports = {r.variant: diagnose_stream(r.path, outdir) for r in runs}
    sure_last = _final(next(r.path for r in runs if r.variant == "sure"))
    preds = [
        Predicate("streams_valid", True, f"{len(paths)} schema-valid streams"),
        Predicate("params_ordered", counts["no"] < counts["sure"] < counts["huge"],
                  f"params no={counts['no']} < sure={counts['sure']} < huge={counts['huge']}"),
        Predicate("score_stats_table", shape_ok, f"{len(table) - 1} rows x {len(table[0]) - 1} columns"),
        Predicate("pca_silhouette_positive", ana.silhouette is not None and ana.silhouette > 0,
                  f"silhouette={ana.silhouette:.4f}"),
    ]
    values = {"params": counts, "silhouette": ana.silhouette, "score_stats": ana.score_stats,
              "final_scores": {r.variant: r.scores for r in runs},
              "flags": {v: sorted(rep.fired) for v, (rep, _) in reports.items()},
              "sure_final": sure_last.scores}
    if extra is not None:
        preds += extra(values)
    arts = paths + ana.artifacts + [p for _, p in reports.values()]
    return _write_summary(PresetResult(name, preds, arts, values), outdir)


def variants_blobs_config(seed: int) -> ExperimentConfig:
    return ExperimentConfig(dataset="blobs", n=400, params={"centers": 3, "noise": 2.0},
                            seed=seed, train={"iterations": 300, "checkpoint_every": 20})


def variants_moons_config(seed: int) -> ExperimentConfig:
    return ExperimentConfig(dataset="moons", n=400, params={"noise": 0.15}, seed=seed,
                            train={"iterations": 300, "checkpoint_every": 20})


def regression_friedman_config(seed: int) -> ExperimentConfig:
    return ExperimentConfig(dataset="friedman1", n=500, params={"noise": 1.0}, seed=seed,
                            train={"iterations": 300, "checkpoint_every": 20, "lr": 0.01})


def run_variants_blobs(outdir: Path, seed: int, workers: int = 1) -> PresetResult:
    return _variants_preset("variants_blobs", variants_blobs_config(seed), outdir, workers)


def run_variants_moons(outdir: Path, seed: int, workers: int = 1) -> PresetResult:
    return _variants_preset("variants_moons", variants_moons_config(seed), outdir, workers)


def run_regression_friedman(outdir: Path, seed: int, workers: int = 1) -> PresetResult:
    def r2_check(values: dict) -> list[Predicate]:
        r2 = values["sure_final"]["R2"]
        return [Predicate("sure_r2_ge_0.8", r2 >= 0.8, f"sure final R2={r2:.4f}")]

    return _variants_preset("regression_friedman", regression_friedman_config(seed), outdir,
                            workers, r2_check)


PRESETS: dict[str, Callable[..., PresetResult]] = {
    "saturation": run_saturation,
    "variants_blobs": run_variants_blobs,
    "variants_moons": run_variants_moons,
    "regression_friedman": run_regression_friedman,
}

DEFAULT_SEEDS = {"saturation": 0, "variants_blobs": 0, "variants_moons": 0,
                 "regression_friedman": 0}


def run_preset(name: str, outdir: str | Path, seed: int | None = None,
               workers: int = 1) -> PresetResult:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    return PRESETS[name](outdir, DEFAULT_SEEDS[name] if seed is None else seed, workers)
