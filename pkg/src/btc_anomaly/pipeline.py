"""End-to-end batch pipeline: parse -> graphs -> features -> detectors -> eval.

Configuration is a flat ``key = value`` text file; command-line flags
override file values.  Every stage is deterministic given the inputs and
the seed, so reruns produce byte-identical outputs (modulo log lines, which
never go into output files).  On a stage failure all files written so far
are removed and the failure is tagged with the stage name.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import evaluation, features, gaussian, kmeans, ocsvm
from .graphs import build_transaction_graph, build_user_graph, write_edge_list
from .ledger import load_user_map, parse_ledger, validate_ledger
from .ranking import AnomalyRanking, write_ranking_csv
from .scatter import DegenerateProjectionError, render_scatter

log = logging.getLogger(__name__)

GRAPH_KINDS = ("user", "transaction")
DETECTORS = ("gaussian", "ocsvm")


class PipelineError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    ledger: str = ""
    user_map: str = ""  # optional; blank means every address is a fresh user
    ground_truth: str = ""  # optional
    out: str = "outputs"
    seed: int = 0
    graphs: tuple[str, ...] = GRAPH_KINDS
    detectors: tuple[str, ...] = DETECTORS
    sample_limit: int = 100_000
    k: str = "2:8"  # fixed ("7") or range ("2:8"), shared across graphs
    k_user: str = ""  # optional per-graph overrides
    k_tx: str = ""
    quantile: float = 0.01
    epsilon: float | None = None
    nu: tuple[float, ...] = (0.005,)
    gamma: float | None = None
    smo_tol: float = 1e-3
    smo_max_passes: int = 200_000
    top_n: int = 100
    plots: bool = True
    dump_features: bool = False
    dump_graphs: bool = False

    def validate(self) -> None:
        if not self.ledger:
            raise ValueError("config needs a ledger path")
        if not Path(self.ledger).exists():
            raise ValueError(f"ledger file not found: {self.ledger}")
        for path in (self.user_map, self.ground_truth):
            if path and not Path(path).exists():
                raise ValueError(f"input file not found: {path}")
        if self.sample_limit <= 0:
            raise ValueError("sample_limit must be positive")
        if not self.nu:
            raise ValueError("need at least one nu candidate")
        for g in self.graphs:
            if g not in GRAPH_KINDS:
                raise ValueError(f"unknown graph {g!r}")
        for d in self.detectors:
            if d not in DETECTORS:
                raise ValueError(f"unknown detector {d!r}")


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_value(key: str, value: str, config: PipelineConfig) -> PipelineConfig:
    if key in ("ledger", "user_map", "ground_truth", "out", "k", "k_user", "k_tx"):
        return replace(config, **{key: value})
    if key in ("seed", "sample_limit", "smo_max_passes", "top_n"):
        return replace(config, **{key: int(value)})
    if key in ("quantile", "smo_tol"):
        return replace(config, **{key: float(value)})
    if key in ("epsilon", "gamma"):
        return replace(config, **{key: float(value) if value else None})
    if key == "nu":
        return replace(config, nu=tuple(float(v) for v in value.split(",") if v))
    if key in ("graphs", "detectors"):
        items = tuple(v.strip() for v in value.split(",") if v.strip())
        items = tuple("transaction" if v == "tx" else v for v in items)
        return replace(config, **{key: items})
    if key in ("plots", "dump_features", "dump_graphs"):
        if value.lower() not in _BOOL:
            raise ValueError(f"bad boolean for {key}: {value!r}")
        return replace(config, **{key: _BOOL[value.lower()]})
    raise ValueError(f"unknown config key {key!r}")


def load_config(path) -> PipelineConfig:
    config = PipelineConfig()
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{line_no}: expected key = value")
            config = _parse_value(key.strip(), value.strip(), config)
    return config


def _parse_k(spec: str) -> tuple[int, int]:
    lo, sep, hi = spec.partition(":")
    return (int(lo), int(hi)) if sep else (int(lo), int(lo))


@dataclass
class _GraphRun:
    matrix: features.FeatureMatrix
    node_count: int
    edge_count: int
    sampled: int
    kmeans_model: kmeans.KMeansModel | None = None
    k_curve: list = field(default_factory=list)
    rankings: dict[str, AnomalyRanking] = field(default_factory=dict)


def _sample_rows(matrix: features.FeatureMatrix, limit: int, seed: int, tag: int):
    if matrix.m <= limit:
        return matrix, matrix.m
    rng = np.random.default_rng([seed, tag])
    keep = np.sort(rng.choice(matrix.m, size=limit, replace=False))
    sampled = features.FeatureMatrix(
        entity_ids=tuple(matrix.entity_ids[i] for i in keep),
        values=matrix.values[keep],
        schema=matrix.schema,
        normalized=matrix.normalized,
    )
    return sampled, limit


def run_pipeline(config: PipelineConfig) -> dict:
    """Execute the full pipeline and return the metrics report.

    Writes rankings, metrics.json, entropy and nu-sweep CSVs and optional
    scatter SVGs into the output directory.
    """
    config.validate()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name: str, writer) -> Path:
        path = out / name
        writer(path)
        written.append(path)
        return path

    try:
        return _run_staged(config, out, emit)
    except PipelineError:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    except Exception as exc:  # pragma: no cover - defensive
        for path in written:
            path.unlink(missing_ok=True)
        raise PipelineError("internal", str(exc)) from exc


def _stage(name: str):
    class _Ctx:
        def __enter__(self):
            log.info("stage %s", name)
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, PipelineError):
                raise PipelineError(name, str(exc)) from exc
            return False

    return _Ctx()


def _run_staged(config: PipelineConfig, out: Path, emit) -> dict:
    report: dict = {
        "config": {
            "seed": config.seed,
            "graphs": list(config.graphs),
            "detectors": list(config.detectors),
            "sample_limit": config.sample_limit,
            "nu_candidates": list(config.nu),
            "gamma": config.gamma,
            "top_n": config.top_n,
        },
        "graphs": {},
        "kmeans": {},
        "detectors": {d: {} for d in config.detectors},
    }

    with _stage("parse"):
        with open(config.ledger, encoding="utf-8") as fh:
            records = parse_ledger(fh)
        if not records:
            raise ValueError("ledger is empty")
        validation = validate_ledger(records)
        if validation.error_count:
            log.warning("ledger has %d invariant violations", validation.error_count)
        if config.user_map:
            with open(config.user_map, encoding="utf-8") as fh:
                user_map = load_user_map(fh, records)
        else:
            user_map = load_user_map([], records)
        truth = None
        if config.ground_truth:
            with open(config.ground_truth, encoding="utf-8") as fh:
                truth = evaluation.load_ground_truth(fh)
        report["ledger"] = {
            "records": validation.record_count,
            "validation_errors": validation.error_count,
        }

    runs: dict[str, _GraphRun] = {}
    with _stage("graphs"):
        for kind in config.graphs:
            if kind == "user":
                graph = build_user_graph(records, user_map)
                matrix = features.extract_user_features(graph)
                nodes, edges = len(graph.nodes), len(graph.edges)
            else:
                graph = build_transaction_graph(records)
                matrix = features.extract_transaction_features(graph, records)
                nodes, edges = len(graph.nodes), len(graph.edges)
            if config.dump_graphs:
                emit(f"edges_{kind}.csv", lambda p, g=graph: write_edge_list(g.edges, p))
            runs[kind] = _GraphRun(
                matrix=matrix, node_count=nodes, edge_count=edges, sampled=nodes
            )

    with _stage("features"):
        for tag, kind in enumerate(config.graphs):
            run = runs[kind]
            sampled, count = _sample_rows(
                run.matrix, config.sample_limit, config.seed, tag
            )
            run.matrix = features.normalize(sampled)
            run.sampled = count
            if config.dump_features:
                emit(
                    f"features_{kind}.csv",
                    lambda p, m=run.matrix: features.write_feature_csv(m, p),
                )
            report["graphs"][kind] = {
                "nodes": run.node_count,
                "edges": run.edge_count,
                "sampled": count,
            }

    with _stage("kmeans"):
        for kind in config.graphs:
            run = runs[kind]
            spec = {"user": config.k_user, "transaction": config.k_tx}[kind] or config.k
            k_min, k_max = _parse_k(spec)
            k_max = min(k_max, run.matrix.m)
            k_min = min(k_min, k_max)
            k_star, curve = kmeans.select_k(run.matrix, k_min, k_max, seed=config.seed)
            run.kmeans_model = kmeans.fit_kmeans(run.matrix, k_star, seed=config.seed)
            run.k_curve = curve
            emit(
                f"entropy_curve_{kind}.csv",
                lambda p, c=curve: kmeans.write_entropy_csv(c, p),
            )
            report["kmeans"][kind] = {"k": k_star, "entropy": dict(curve)[k_star]}
        first = config.graphs[0]
        emit(
            "entropy_curve.csv",
            lambda p: kmeans.write_entropy_csv(runs[first].k_curve, p),
        )

    threshold = (
        gaussian.EpsilonThreshold(config.epsilon)
        if config.epsilon is not None
        else gaussian.QuantileThreshold(config.quantile)
    )

    with _stage("detect"):
        if "gaussian" in config.detectors:
            for kind in config.graphs:
                run = runs[kind]
                model = gaussian.fit_gaussian(run.matrix)
                run.rankings["gaussian"] = gaussian.flag_anomalies(
                    model, run.matrix, threshold
                )
        if "ocsvm" in config.detectors:
            _run_ocsvm(config, runs, records, user_map, report, emit)

    with _stage("evaluate"):
        ownership = evaluation.build_ownership(records, user_map)
        for det in config.detectors:
            det_report = report["detectors"][det]
            if all(k in runs and det in runs[k].rankings for k in GRAPH_KINDS):
                n_top = min(config.top_n, len(runs["user"].rankings[det]))
                m_top = min(config.top_n, len(runs["transaction"].rankings[det]))
                res = evaluation.dual_evaluation(
                    runs["user"].rankings[det],
                    runs["transaction"].rankings[det],
                    ownership,
                    n_top,
                    m_top,
                )
                det_report["dual"] = {
                    "A1": res.a1,
                    "A2": res.a2,
                    "m_DE": res.m_de,
                    "N": res.n_top,
                    "M": res.m_top,
                    "x_size": res.x_size,
                    "y_size": res.y_size,
                }
            det_report["centroid_ratio"] = {}
            det_report["flagged"] = {}
            det_report["truth_hits"] = {}
            for kind in config.graphs:
                run = runs[kind]
                if det not in run.rankings:
                    continue
                ranking = run.rankings[det]
                top = min(config.top_n, len(ranking))
                det_report["flagged"][kind] = ranking.flagged_count
                det_report["centroid_ratio"][kind] = evaluation.centroid_distance_ratios(
                    run.kmeans_model, run.matrix, ranking, top
                )
                if truth is not None:
                    ids = truth.users if kind == "user" else truth.txs
                    hits = evaluation.ground_truth_hits(ranking, list(ids), top)
                    det_report["truth_hits"][kind] = {
                        "top_n": hits.top_n,
                        "hit_count": hits.hit_count,
                        "hits": [list(h) for h in hits.hits],
                    }

    with _stage("outputs"):
        primary = "ocsvm" if "ocsvm" in config.detectors else config.detectors[0]
        for kind in config.graphs:
            run = runs[kind]
            short = "user" if kind == "user" else "tx"
            for det, ranking in run.rankings.items():
                emit(
                    f"{short}_ranking_{det}.csv",
                    lambda p, r=ranking: write_ranking_csv(r, p),
                )
            emit(
                f"{short}_ranking.csv",
                lambda p, r=run.rankings[primary]: write_ranking_csv(r, p),
            )
            if config.plots:
                for det, ranking in run.rankings.items():
                    try:
                        emit(
                            f"scatter_{kind}_{det}.svg",
                            lambda p, m=run.matrix, r=ranking: render_scatter(m, r, p),
                        )
                    except DegenerateProjectionError as exc:
                        log.warning("no scatter for %s/%s: %s", kind, det, exc)
        emit(
            "metrics.json",
            lambda p: p.write_text(
                json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            ),
        )
    return report


def _run_ocsvm(config, runs, records, user_map, report, emit) -> None:
    smo = ocsvm.SmoConfig(
        tol=config.smo_tol, max_passes=config.smo_max_passes, seed=config.seed
    )
    fits: dict[tuple[str, float], AnomalyRanking] = {}

    def rank(kind: str, nu: float) -> AnomalyRanking:
        key = (kind, nu)
        if key not in fits:
            matrix = runs[kind].matrix
            model = ocsvm.fit_ocsvm(matrix, nu, gamma=config.gamma, config=smo)
            if not model.converged:
                log.warning("ocsvm on %s graph (nu=%g) hit max_passes", kind, nu)
            fits[key] = ocsvm.flag_anomalies(model, matrix)
        return fits[key]

    both = all(k in runs for k in GRAPH_KINDS)
    if both:
        ownership = evaluation.build_ownership(records, user_map)
        n_top = min(config.top_n, runs["user"].matrix.m)
        m_top = min(config.top_n, runs["transaction"].matrix.m)
        nu_star, curve = ocsvm.tune_nu(
            lambda nu: rank("user", nu),
            lambda nu: rank("transaction", nu),
            config.nu,
            ownership,
            n_top,
            m_top,
        )
    else:
        if len(config.nu) > 1:
            log.warning("nu sweep needs both graphs; using the first candidate")
        nu_star, curve = config.nu[0], [(config.nu[0], math.nan, math.nan)]
    emit("nu_sweep.csv", lambda p: ocsvm.write_nu_sweep_csv(curve, p))
    report["nu"] = {"selected": nu_star, "candidates": list(config.nu)}
    for kind in config.graphs:
        runs[kind].rankings["ocsvm"] = rank(kind, nu_star)
