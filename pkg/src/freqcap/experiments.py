"""Train/evaluate harness shared by the CLI sweep and the ablation report."""
from __future__ import annotations

import logging
import statistics
import time
import traceback
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .config import TrainConfig, desk_config
from .corpus import CaptionRecord
from .features import VideoFeatures
from .generation import beam_search
from .metrics import EvalReport, evaluate, format_table
from .synthetic import SyntheticSpec, generate_corpus
from .training import ModelState, corpus_labels, fit, init_state, prepare_data

log = logging.getLogger(__name__)

ARMS = {
    "baseline": dict(fad_enabled=False, dss_enabled=False),
    "w FAD": dict(fad_enabled=True, dss_enabled=False),
    "w DSS": dict(fad_enabled=False, dss_enabled=True),
    "full": dict(fad_enabled=True, dss_enabled=True),
}

SWEEP_PARAMS = {"gamma": "gamma", "delta": "delta", "lambda": "lam", "window_size": "window_size"}

# thresholds giving all three label classes on the default synthetic corpus
DESK_GAMMA = 0.05
DESK_DELTA = 0.1


def split_records(records: Sequence[CaptionRecord], holdout: float) -> tuple[list, list]:
    """Last ``holdout`` fraction of videos (at least two) becomes the test split."""
    n_test = max(2, int(round(len(records) * holdout)))
    if n_test >= len(records):
        raise ValueError("holdout leaves no training videos")
    return list(records[:-n_test]), list(records[-n_test:])


def generate_all(state: ModelState, records: Sequence[CaptionRecord],
                 features: Mapping[str, VideoFeatures], beam_size: int) -> dict[str, list[str]]:
    out = {}
    for rec in records:
        hyp = beam_search(state.model, features[rec.video_id], beam_size, state.config.t_max)
        out[rec.video_id] = state.vocab.decode(hyp.tokens)
    return out


def evaluate_state(state: ModelState, records: Sequence[CaptionRecord],
                   features: Mapping[str, VideoFeatures], beam_size: int | None = None) -> EvalReport:
    beam = state.config.beam_size if beam_size is None else beam_size
    hyps = generate_all(state, records, features, beam)
    refs = {r.video_id: r.captions for r in records}
    lft = [state.vocab.id_to_token[i] for i in state.labels.lft_ids]
    return evaluate(hyps, refs, lft)


def train_and_evaluate(train: Sequence[CaptionRecord], test: Sequence[CaptionRecord],
                       features: Mapping[str, VideoFeatures],
                       cfg: TrainConfig) -> tuple[ModelState, EvalReport, list[dict]]:
    vocab, labels = corpus_labels(train, cfg)
    data = prepare_data(train, features, vocab, cfg.t_max)
    state = init_state(cfg, vocab, labels, data.d_v)
    history = fit(state, data)
    return state, evaluate_state(state, test, features), history


@dataclass
class SweepPoint:
    value: float
    report: EvalReport | None
    error: str | None = None
    seconds: float = 0.0


def sweep(param: str, grid: Sequence[float], train: Sequence[CaptionRecord],
          test: Sequence[CaptionRecord], features: Mapping[str, VideoFeatures],
          cfg: TrainConfig) -> list[SweepPoint]:
    """One run per grid value with a shared seed; failures are recorded, not raised."""
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}; choose from {sorted(SWEEP_PARAMS)}")
    if not grid:
        raise ValueError("sweep grid is empty")
    points = []
    for value in grid:
        t0 = time.perf_counter()
        try:
            if param == "window_size":
                value = int(value)
            point_cfg = cfg.replace(**{SWEEP_PARAMS[param]: value})
            _, report, _ = train_and_evaluate(train, test, features, point_cfg)
            points.append(SweepPoint(value, report, seconds=time.perf_counter() - t0))
        except Exception as exc:  # recorded per point
            log.debug("sweep point %s=%s failed\n%s", param, value, traceback.format_exc())
            points.append(SweepPoint(value, None, f"{type(exc).__name__}: {exc}", time.perf_counter() - t0))
    return points


def sweep_table(param: str, points: Sequence[SweepPoint]) -> str:
    rows = {}
    for p in points:
        name = f"{param}={p.value:g}"
        if p.report is None:
            name += " (failed)"
            rows[name] = {}
        else:
            rows[name] = p.report
    return format_table(rows, title=param)


@dataclass
class AblationResult:
    seeds: list[int]
    reports: dict[str, list[EvalReport]] = field(default_factory=dict)
    seconds: float = 0.0

    def medians(self) -> dict[str, dict[str, float]]:
        out = {}
        for arm, reps in self.reports.items():
            out[arm] = {
                "B-4": statistics.median(r.bleu4 for r in reps),
                "M": None,
                "R": statistics.median(r.rouge_l for r in reps),
                "C": statistics.median(r.cider for r in reps),
                "LFT-R": statistics.median(r.lft_recall for r in reps),
            }
        return out

    def table(self) -> str:
        return format_table(self.medians(), title=f"median over {len(self.seeds)} seeds")

    def to_json(self) -> dict:
        return {
            "seeds": self.seeds,
            "seconds": self.seconds,
            "median": self.medians(),
            "runs": {arm: [r.to_json() | {"per_video": None} for r in reps]
                     for arm, reps in self.reports.items()},
        }


def ablation(seeds: Sequence[int] = (0, 1, 2, 3, 4), spec: SyntheticSpec | None = None,
             cfg: TrainConfig | None = None, holdout: float = 0.2) -> AblationResult:
    """Baseline / +FAD / +DSS / full on seeded synthetic corpora."""
    spec = spec or SyntheticSpec()
    cfg = cfg or desk_config(gamma=DESK_GAMMA, delta=DESK_DELTA, lam=0.07, epochs=40)
    result = AblationResult(seeds=list(seeds), reports={arm: [] for arm in ARMS})
    t0 = time.perf_counter()
    for seed in seeds:
        records, features = generate_corpus(SyntheticSpec(**(spec.to_json() | {"seed": seed})))
        train, test = split_records(records, holdout)
        for arm, flags in ARMS.items():
            _, report, _ = train_and_evaluate(train, test, features, cfg.replace(seed=seed, **flags))
            log.info("seed %d %-8s C %.1f LFT-R %.3f", seed, arm, report.cider, report.lft_recall)
            result.reports[arm].append(report)
    result.seconds = time.perf_counter() - t0
    return result
