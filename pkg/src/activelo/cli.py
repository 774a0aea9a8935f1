"""Command-line entry point: analyze, itss, ais, run, report.

Exit codes: 0 success, 1 partial or stage failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .ais import AisConfig, SelectionState, UnusablePairError, run_active_loop
from .config import ConfigError, RunConfig, parse_config, parse_override, read_config_file, set_dotted
from .diversity import InfeasibleSelectionError, ItssResult, score_pool, select_itss
from .efficiency import BudgetParams, CostReport, format_report, report, report_json
from .ingest import ManifestError, SamplePool, build_pool_partial
from .predictor import IcpError, PredictorError, make_predictor
from .trajgraph import SequenceFeatures, sequence_features

log = logging.getLogger("activelo")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2

FEATURE_COLUMNS = [
    "id", "m", "theta_mean", "theta_std", "speed_mean", "speed_std", "length_mean",
    "length_std", "outlier_proportion", "total_length", "turn_energy", "weather",
]


class StageError(RuntimeError):
    def __init__(self, stage: str, err: Exception):
        super().__init__(f"stage {stage} failed: {err}")
        self.stage = stage


@dataclass
class Failures:
    rows: list[tuple[str, str, str]] = field(default_factory=list)

    def add(self, stage: str, sid: str, msg: str):
        log.error("%s: %s: %s", stage, sid, msg)
        self.rows.append((stage, sid, msg))

    def __bool__(self):
        return bool(self.rows)


# --- artifact writing -------------------------------------------------------


def _stamp(cfg: RunConfig | None) -> dict:
    out = {"version": __version__}
    if cfg is not None:
        out["config"] = cfg.snapshot()
    return out


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(obj, f, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=True)
        f.write("\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    path.write_bytes(buf.getvalue().encode("utf-8"))


def features_to_rows(feats: list[SequenceFeatures]):
    for f in feats:
        yield [
            f.id, f.m, f.theta_mean, f.theta_std, f.speed_mean, f.speed_std, f.length_mean,
            f.length_std, f.outlier_proportion, f.total_length, f.turn_energy, f.weather,
        ]


def read_features_csv(path) -> list[SequenceFeatures]:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.DictReader(f))
    missing = [c for c in FEATURE_COLUMNS if rows and c not in rows[0]]
    if missing:
        raise ConfigError(f"{path}: missing columns {missing}")
    out = []
    for r in rows:
        out.append(
            SequenceFeatures(
                r["id"], int(r["m"]), float(r["theta_mean"]), float(r["theta_std"]),
                float(r["speed_mean"]), float(r["speed_std"]), float(r["length_mean"]),
                float(r["length_std"]), float(r["outlier_proportion"]), float(r["total_length"]),
                float(r["turn_energy"]), r["weather"],
            )
        )
    return out


def itss_to_dict(res: ItssResult) -> dict:
    return {
        "selected": list(res.selected),
        "objective": res.objective,
        "exact": res.exact,
        "coverage_outlier": {str(k): v for k, v in res.coverage_outlier.items()},
        "coverage_speed": {str(k): v for k, v in res.coverage_speed.items()},
        "scores": [
            {
                "id": s.id, "f_var": s.f_var, "f_impor": s.f_impor, "score": s.score,
                "bin_outlier": s.bin_outlier, "bin_speed": s.bin_speed,
            }
            for s in sorted(res.scored, key=lambda s: s.id)
        ],
    }


# --- stages -----------------------------------------------------------------


def stage_load(cfg: RunConfig, failures: Failures) -> SamplePool:
    pool, bad = build_pool_partial(cfg.manifest)
    for sid, msg in bad:
        failures.add("load", sid, msg)
    return pool


def stage_analyze(cfg: RunConfig, pool: SamplePool, failures: Failures) -> list[SequenceFeatures]:
    params = cfg.analyze.segment.params()
    feats = []
    for seq in pool:
        try:
            f, _ = sequence_features(seq, params, cfg.analyze.eps, cfg.analyze.stride)
        except (ValueError, OSError, IcpError) as e:
            failures.add("analyze", seq.id, str(e))
            continue
        feats.append(f)
    return feats


def stage_itss(cfg: RunConfig, feats: list[SequenceFeatures]) -> ItssResult:
    w = cfg.itss.weather
    cand = [f for f in feats if w is None or f.weather == w]
    if not cand:
        raise ConfigError(f"no analyzed sequences with weather {w!r} for the initial selection")
    return select_itss(score_pool(cand, cfg.itss.config()), cfg.itss.config())


def _workers(cfg: RunConfig) -> int:
    env = os.environ.get("ACTIVELO_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"ACTIVELO_WORKERS must be an integer, got {env!r}") from None
    return max(1, cfg.workers)


def stage_ais(
    cfg: RunConfig, pool: SamplePool, initial: list[str], out: Path | None, failures: Failures
) -> list[SelectionState]:
    usable = [s for s in pool if s.clouds is not None]
    for s in pool:
        if s.clouds is None:
            failures.add("ais", s.id, "no point clouds")
    sub = SamplePool(tuple(usable), pool.manifest_path)
    missing = [i for i in initial if i not in sub.ids]
    if missing:
        raise ConfigError(f"initial ids not available: {missing}")
    acfg: AisConfig = cfg.ais.config(cfg.seed, _workers(cfg))
    try:
        pred = make_predictor(cfg.ais.predictor, sub, cfg.seed, **_icp_kwargs(cfg))
    except ValueError as e:
        raise ConfigError(str(e)) from None

    def on_round(state: SelectionState):
        if out is None:
            return
        ranked = state.rounds[-1]
        admitted = [sid for sid, r in state.admitted if r == state.itr]
        write_json(
            out / "ais" / f"round_{state.itr:02d}.json",
            {
                **_stamp(cfg),
                "round": state.itr,
                "admitted": admitted,
                "losses": [r.to_dict() for r in ranked],
                "selected": list(state.selected),
                "remaining": list(state.remaining),
            },
        )

    return run_active_loop(sub, initial, lambda selected: pred, acfg, on_round)


def _icp_kwargs(cfg: RunConfig) -> dict:
    # clouds are already voxelized by the AIS stage
    return {"k_neighbors": cfg.ais.k_neighbors, "gate": cfg.ais.gate, "voxel": None}


def stage_report(cfg: RunConfig, total: int, state: SelectionState) -> CostReport:
    rc = cfg.report
    rounds = state.itr
    train = rc.train_rounds if rc.train_rounds is not None else rounds
    infer = rc.infer_rounds if rc.infer_rounds is not None else max(0, rounds - 1)
    n_init = sum(1 for _, r in state.admitted if r == 0)
    total = rc.total or total
    full_rounds = min(rounds, (total - n_init) // cfg.ais.h)
    p = BudgetParams(total, n_init, cfg.ais.h, full_rounds, rc.e_init, rc.e_round, rc.e_full)
    r = report(p, train, infer)
    # the selected count comes from the actual run, not the formula
    return CostReport(r.L_full, r.L_train, r.L_remain, len(state.selected), total)


# --- commands ---------------------------------------------------------------


def cmd_analyze(cfg: RunConfig, out_csv: Path | None = None) -> int:
    failures = Failures()
    pool = stage_load(cfg, failures)
    feats = stage_analyze(cfg, pool, failures)
    out_csv = out_csv or Path(cfg.output) / "features.csv"
    write_csv(out_csv, FEATURE_COLUMNS, features_to_rows(feats))
    _write_failures(out_csv.parent, failures)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_itss(cfg: RunConfig, features: Path | None = None, out_json: Path | None = None) -> int:
    failures = Failures()
    if features is not None:
        feats = read_features_csv(features)
    else:
        feats = stage_analyze(cfg, stage_load(cfg, failures), failures)
    res = stage_itss(cfg, feats)
    out_json = out_json or Path(cfg.output) / "itss.json"
    write_json(out_json, {**_stamp(cfg), **itss_to_dict(res)})
    _write_failures(out_json.parent, failures)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_ais(cfg: RunConfig, initial: list[str] | None = None) -> int:
    failures = Failures()
    out = Path(cfg.output)
    pool = stage_load(cfg, failures)
    if initial is None:
        initial = list(cfg.ais.initial) if cfg.ais.initial else None
    if initial is None:
        initial = list(stage_itss(cfg, stage_analyze(cfg, pool, failures)).selected)
    history = stage_ais(cfg, pool, initial, out, failures)
    _write_selection(out, history[-1])
    _write_failures(out, failures)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    """analyze -> itss -> ais -> report into ``cfg.output``."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.snapshot())
    (out / "VERSION").write_text(__version__ + "\n", encoding="utf-8")
    failures = Failures()
    stage = "load"
    try:
        pool = stage_load(cfg, failures)
        stage = "analyze"
        feats = stage_analyze(cfg, pool, failures)
        write_csv(out / "features.csv", FEATURE_COLUMNS, features_to_rows(feats))
        stage = "itss"
        res = stage_itss(cfg, feats)
        write_json(out / "itss.json", {**_stamp(cfg), **itss_to_dict(res)})
        stage = "ais"
        initial = list(cfg.ais.initial) if cfg.ais.initial else list(res.selected)
        history = stage_ais(cfg, pool, initial, out, failures)
        _write_selection(out, history[-1])
        stage = "report"
        rep = stage_report(cfg, len(pool), history[-1])
        write_json(out / "cost_report.json", {**_stamp(cfg), **rep.to_dict()})
        (out / "cost_report.txt").write_text(format_report(rep) + "\n", encoding="utf-8")
    except (ConfigError, InfeasibleSelectionError):
        _write_failures(out, failures)
        raise
    except (ValueError, OSError, RuntimeError, UnusablePairError, PredictorError) as e:
        failures.add(stage, "*", str(e))
        _write_failures(out, failures)
        raise StageError(stage, e) from e
    _write_failures(out, failures)
    return EXIT_PARTIAL if failures else EXIT_OK


def _write_selection(out: Path, state: SelectionState) -> None:
    write_csv(out / "selection.csv", ["id", "round"], [list(a) for a in state.admitted])


def _write_failures(out: Path, failures: Failures) -> None:
    path = out / "failures.csv"
    if failures:
        write_csv(path, ["stage", "id", "error"], failures.rows)
    elif path.exists():
        path.unlink()


# --- argument parsing -------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON or TOML run config")
    p.add_argument("--manifest", help="sequence manifest (overrides the config)")
    p.add_argument("--seed", type=int, help="random seed (mandatory somewhere)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="worker threads (ACTIVELO_WORKERS wins)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. ais.h=2")


def _add_analyze(p):
    p.add_argument("--eps", type=float, help="outlier distance threshold (m)")
    p.add_argument("--window", type=float, help="turn window (s)")
    p.add_argument("--threshold-deg", type=float, help="turn threshold (deg)")
    p.add_argument("--analyze-stride", type=int, help="pair stride for outlier proportion")


def _add_itss(p):
    p.add_argument("--u", type=int, help="initial set size")
    p.add_argument("--bins-outlier", type=int)
    p.add_argument("--bins-speed", type=int)
    p.add_argument("--weather", help="candidate weather tag for the initial set ('all' for every sequence)")


def _add_ais(p):
    p.add_argument("--initial", help="comma-separated ids or an itss JSON file")
    p.add_argument("--h", type=int, help="sequences admitted per round")
    p.add_argument("--iter", type=int, help="admission rounds")
    p.add_argument("--c", type=int, help="augmentations per pair")
    p.add_argument("--aug-alpha", type=float)
    p.add_argument("--srl-weight", type=float)
    p.add_argument("--pil-weight", type=float)
    p.add_argument("--predictor", help="icp | oracle | noisy:<rot>,<trans>")
    p.add_argument("--stride", type=int, help="pair stride for the losses")
    p.add_argument("--voxel", type=float, help="voxel size (m); 0 disables")


_FLAG_KEYS = {
    "eps": "analyze.eps",
    "window": "analyze.segment.window",
    "threshold_deg": "analyze.segment.threshold_deg",
    "analyze_stride": "analyze.stride",
    "u": "itss.u",
    "bins_outlier": "itss.bins_outlier",
    "bins_speed": "itss.bins_speed",
    "h": "ais.h",
    "iter": "ais.iter",
    "c": "ais.c",
    "aug_alpha": "ais.aug_alpha",
    "srl_weight": "ais.srl_weight",
    "pil_weight": "ais.pil_weight",
    "predictor": "ais.predictor",
    "stride": "ais.stride",
    "workers": "workers",
    "seed": "seed",
    "manifest": "manifest",
    "out": "output",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="activelo", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"activelo {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="trajectory and scene features per sequence")
    _add_common(p)
    _add_analyze(p)
    p.add_argument("--csv", type=Path, help="features CSV path (default <out>/features.csv)")

    p = sub.add_parser("itss", help="initial training-set selection")
    _add_common(p)
    _add_analyze(p)
    _add_itss(p)
    p.add_argument("--features", type=Path, help="reuse a features CSV instead of analyzing")
    p.add_argument("--json", type=Path, help="output path (default <out>/itss.json)")

    p = sub.add_parser("ais", help="active incremental selection")
    _add_common(p)
    _add_analyze(p)
    _add_itss(p)
    _add_ais(p)

    p = sub.add_parser("run", help="analyze, itss, ais and report in one go")
    _add_common(p)
    _add_analyze(p)
    _add_itss(p)
    _add_ais(p)

    p = sub.add_parser("report", help="training cost of active selection vs full training")
    p.add_argument("--total", type=int, default=69)
    p.add_argument("--initial", type=int, default=6)
    p.add_argument("--h", type=int, default=5)
    p.add_argument("--iter", type=int, default=7)
    p.add_argument("--e-init", type=int, default=15)
    p.add_argument("--e-round", type=int, default=5)
    p.add_argument("--e-full", type=int, default=50)
    p.add_argument("--train-rounds", type=int, default=7)
    p.add_argument("--infer-rounds", type=int, default=6)
    p.add_argument("--json", type=Path, help="also write the JSON report here")
    return ap


def config_from_args(args) -> RunConfig:
    if args.config is not None:
        data = read_config_file(args.config)
        base = args.config.resolve().parent
    else:
        data, base = {}, Path.cwd()
    for name, key in _FLAG_KEYS.items():
        v = getattr(args, name, None)
        if v is not None:
            if name in ("manifest", "out"):
                v = str(Path(v).resolve())
            set_dotted(data, key, v)
    if getattr(args, "weather", None) is not None:
        set_dotted(data, "itss.weather", None if args.weather == "all" else args.weather)
    if getattr(args, "voxel", None) is not None:
        set_dotted(data, "ais.voxel", args.voxel or None)
    for text in args.set:
        set_dotted(data, *parse_override(text))
    return parse_config(data, base)


def parse_initial(text: str) -> list[str]:
    p = Path(text)
    if p.suffix == ".json" and p.is_file():
        doc = json.loads(p.read_text(encoding="utf-8"))
        return list(doc["selected"] if isinstance(doc, dict) else doc)
    return [t.strip() for t in text.split(",") if t.strip()]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "report":
            p = BudgetParams(args.total, args.initial, args.h, args.iter, args.e_init, args.e_round, args.e_full)
            r = report(p, args.train_rounds, args.infer_rounds)
            print(format_report(r))
            text = report_json(r)
            print(text)
            if args.json:
                args.json.parent.mkdir(parents=True, exist_ok=True)
                args.json.write_text(text + "\n", encoding="utf-8")
            return EXIT_OK
        cfg = config_from_args(args)
        if args.command == "analyze":
            return cmd_analyze(cfg, args.csv)
        if args.command == "itss":
            return cmd_itss(cfg, args.features, args.json)
        if args.command == "ais":
            return cmd_ais(cfg, parse_initial(args.initial) if args.initial else None)
        return cmd_run(cfg)
    except (ConfigError, ManifestError, InfeasibleSelectionError) as e:
        print(f"activelo: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        if args.command == "report":
            print(f"activelo: config error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"activelo: {e}", file=sys.stderr)
        return EXIT_PARTIAL
    except StageError as e:
        print(f"activelo: {e}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
