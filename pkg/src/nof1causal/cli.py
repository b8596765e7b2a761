"""Command-line interface: simulate | fit | estimate | diagnose | recommend.

Every output file carries the hash of the resolved run configuration: a
``config_hash`` key in JSON files and a leading ``# config_hash=...`` line in
CSV and text files. Writes are atomic (temporary file, then rename).

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 verification-gate failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import re
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from . import gformula, synth
from .estimands import EstimandError, Request, estimand_series, rows_to_csv
from .frame import CoefficientFrame, FrameError
from .kalman import FilterError
from .pipeline import FitConfig, fit_all
from .series import DagConfig, Schema, Series, SeriesError, read_csv
from .ssm import FitError

log = logging.getLogger("nof1causal")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class VerificationError(RuntimeError):
    pass


# --- configuration ----------------------------------------------------------------

@dataclass
class RunConfig:
    input: Path
    schema: Schema
    dag: DagConfig = field(default_factory=DagConfig)
    model: FitConfig = field(default_factory=FitConfig)
    estimands: list = field(default_factory=list)  # [(Request, times spec)]
    mc: dict = field(default_factory=dict)
    diagnose: dict = field(default_factory=dict)
    recommend: dict = field(default_factory=dict)
    out: Path = Path("out")
    fit_dir: Path | None = None
    level: float = 0.90
    K: int = 2000  # coefficient draws for closed-form intervals
    seed: int = 0
    verbosity: int = 1
    raw: dict = field(default_factory=dict)

    FIELDS = ("input", "schema", "dag", "model", "estimands", "mc", "diagnose", "recommend", "out",
              "fit_dir", "level", "K", "seed", "verbosity")

    @classmethod
    def load(cls, path: Path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        return cls.from_dict(d, Path(path).parent)

    @classmethod
    def from_dict(cls, d: dict, base: Path = Path(".")) -> "RunConfig":
        bad = set(d) - set(cls.FIELDS)
        if bad:
            raise ConfigError(f"unknown config fields {sorted(bad)}")
        if "input" not in d or "schema" not in d:
            raise ConfigError("config needs 'input' and 'schema'")

        def path(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        inp = path(d["input"])
        if not inp.exists():
            raise ConfigError(f"input file {inp} does not exist")
        sch = d["schema"]
        if isinstance(sch, str):
            if not path(sch).exists():
                raise ConfigError(f"schema file {path(sch)} does not exist")
            sch = json.loads(path(sch).read_text())
        schema = Schema.from_dict(sch)
        dag = DagConfig.from_dict(d.get("dag"))
        model = FitConfig.from_dict(d.get("model", {}))
        ests = []
        for e in d.get("estimands", []):
            e = dict(e)
            times = e.pop("times", None)
            req = Request.from_dict(e)
            if req.exposure is not None and req.exposure not in schema.exposures:
                raise ConfigError(f"estimand request names undeclared exposure {req.exposure!r}")
            ests.append((req, times))
        level = float(d.get("level", 0.90))
        if not 0 < level < 1:
            raise ConfigError("level must lie in (0, 1)")
        cfg = cls(input=inp, schema=schema, dag=dag, model=model, estimands=ests,
                  mc=dict(d.get("mc", {})), diagnose=dict(d.get("diagnose", {})),
                  recommend=dict(d.get("recommend", {})), out=path(d.get("out", "out")),
                  fit_dir=None if d.get("fit_dir") is None else path(d["fit_dir"]),
                  level=level, K=int(d.get("K", 2000)), seed=int(d.get("seed", 0)),
                  verbosity=int(d.get("verbosity", 1)), raw=d)
        return cfg


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --- output -----------------------------------------------------------------------

def atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return None if math.isnan(x) else x
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


class Writer:
    def __init__(self, out: Path, h: str):
        self.out, self.hash = Path(out), h
        self.written = []

    def json(self, name: str, payload: dict):
        body = {"config_hash": self.hash, **_clean(payload)}
        atomic_write(self.out / name, json.dumps(body, indent=2, sort_keys=True) + "\n")
        self.written.append(name)

    def text(self, name: str, text: str):
        atomic_write(self.out / name, f"# config_hash={self.hash}\n" + text)
        self.written.append(name)


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", label).strip("_")


# --- commands -----------------------------------------------------------------------

def cmd_simulate(args) -> int:
    spec = synth.TruthSpec.load(args.config) if args.config else synth.TruthSpec()
    if args.seed is not None:
        spec = synth.TruthSpec.from_dict({**spec.to_dict(), "seed": args.seed})
    out = Path(args.out or "out")
    h = config_hash({"command": "simulate", "truth": spec.to_dict()})
    syn = synth.generate(spec)
    w = Writer(out, h)
    w.text("series.csv", syn.series.to_csv())
    w.json("truth.json", {"truth_spec": spec.to_dict(), "frame": syn.truth.to_dict()})
    w.json("schema.json", spec.schema.to_dict())
    run = {"input": "series.csv", "schema": "schema.json", "out": ".", "seed": spec.seed,
           "estimands": [{"name": "CE"}, {"name": "LE", "q": 1}, {"name": "TE", "q": 2}]}
    atomic_write(out / "run.json", json.dumps(run, indent=2) + "\n")
    log.info("wrote %s (T=%d) to %s", ", ".join(w.written), spec.T, out)
    return EXIT_OK


def _hash_for(cfg: RunConfig, command: str, args, **extra) -> str:
    return config_hash({"command": command, "config": cfg.raw, "seed": cfg.seed, "level": cfg.level, **extra})


def _prepare(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = RunConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if args.level is not None:
        if not 0 < args.level < 1:
            raise ConfigError("--level must lie in (0, 1)")
        cfg.level = float(args.level)
    if args.out:
        cfg.out = Path(args.out)
    return cfg


def _series(cfg: RunConfig) -> Series:
    return read_csv(cfg.input, cfg.schema)


def _load_frame(cfg: RunConfig) -> CoefficientFrame:
    d = cfg.fit_dir or cfg.out
    p = d / "frame.json"
    if not p.exists():
        raise ConfigError(f"no fitted models at {d}; run 'fit' first")
    payload = json.loads(p.read_text())
    payload.pop("config_hash", None)
    return CoefficientFrame.from_dict(payload)


def _table_text(fit, level) -> str:
    rows = fit.table(level)
    lines = [f"{fit.spec.response} model: V={fit.V:.6g}, loglik={fit.loglik:.4f}, BIC={fit.bic:.4f}",
             f"{'variable':<16}{'estimate':>11}{'SE':>10}{'lower':>11}{'upper':>11}  regime"]
    for r in rows:
        name = r["variable"] + (f" ({r['segment']})" if r["segment"] else "")
        if r["estimate"] is None:
            lines.append(f"{name:<16}{'':>11}{'':>10}{'':>11}{'':>11}  {r['regime']} (W={r['state_variance']:.3g})")
            continue
        star = "*" if r["significant"] else " "
        span = f" t={r['start']}..{r['end']}" if r["segment"] else ""
        lines.append(f"{name:<16}{r['estimate']:>11.4f}{r['se']:>10.4f}{r['lower']:>11.4f}{r['upper']:>11.4f}"
                     f"{star} {r['regime']}{span}")
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    cfg = _prepare(args)
    series = _series(cfg)
    h = _hash_for(cfg, "fit", args)
    fs = fit_all(series, cfg.dag, cfg.model)
    w = Writer(cfg.out, h)
    rows, text = [], []
    for resp, fit in fs.fits.items():
        for note in fit.notes:
            log.info("%s: %s", resp, note)
        w.json(f"fit_{_slug(resp)}.json", fit.to_dict())
        for r in fit.table(cfg.level):
            rows.append({"model": resp, **r})
        text.append(_table_text(fit, cfg.level))
    w.json("frame.json", fs.frame.to_dict())
    fields = ["model", "variable", "regime", "segment", "start", "end", "estimate", "se", "lower", "upper",
              "significant", "state_variance"]
    w.text("coefficients.csv", rows_to_csv([{k: ("" if v is None else v) for k, v in r.items()} for r in rows],
                                           fields))
    w.text("coefficients.txt", f"level={cfg.level}; * marks intervals excluding 0\n\n" + "\n".join(text))
    log.info("wrote %s", ", ".join(w.written))
    return EXIT_OK


def _times(req: Request, frame: CoefficientFrame, spec, series: Series | None = None) -> list[int]:
    adm = req.admissible(frame)
    if spec is None:
        return list(adm)
    if isinstance(spec, dict):
        return list(range(int(spec.get("from", adm.start)), int(spec.get("to", adm.stop - 1)) + 1))
    if isinstance(spec, int):
        return [spec]
    return [int(t) for t in spec]


def _mc_config(cfg: RunConfig) -> gformula.McConfig:
    d = {"seed": cfg.seed, "level": cfg.level, **cfg.mc}
    d["seed"] = cfg.seed if "seed" not in cfg.mc else int(cfg.mc["seed"])
    try:
        return gformula.McConfig(**d)
    except TypeError as e:
        raise ConfigError(f"bad mc config: {e}") from None


def cmd_estimate(args) -> int:
    cfg = _prepare(args)
    if not cfg.estimands:
        raise ConfigError("config lists no estimand requests")
    frame = _load_frame(cfg)
    series = _series(cfg) if (args.mc or args.verify) else None
    mc = _mc_config(cfg)
    h = _hash_for(cfg, "estimate", args, mc=bool(args.mc), verify=bool(args.verify), mc_config=mc.to_dict())
    w = Writer(cfg.out, h)
    summary, failures = [], []
    for req, tspec in cfg.estimands:
        times = _times(req, frame, tspec)
        cf = estimand_series(frame, req, times, cfg.level, cfg.K, cfg.seed)
        rows = cf.rows()
        if args.mc or args.verify:
            for row in rows:
                m = gformula.mc_request(frame, series, req, row["t"], mc)
                row.update(mc_estimate=m.estimate, mc_lower=m.lower, mc_upper=m.upper, mc_se=m.se)
                if args.mc:
                    row.update(closed_form=row["estimate"], estimate=m.estimate, lower=m.lower, upper=m.upper)
                if args.verify:
                    gap = abs(row.get("closed_form", row["estimate"]) - m.estimate)
                    row["verify_ok"] = bool(gap <= 3 * m.se + 1e-12)
                    if not row["verify_ok"]:
                        failures.append((req.label(), row["t"], gap, m.se))
        fields = ["t", "name", "q", "estimate", "lower", "upper"]
        if args.mc or args.verify:
            fields += ["mc_estimate", "mc_lower", "mc_upper", "mc_se"]
            fields += ["closed_form"] if args.mc else []
            fields += ["verify_ok"] if args.verify else []
        slug = _slug(req.label())
        w.text(f"estimand_{slug}.csv", rows_to_csv(rows, fields))
        w.json(f"estimand_{slug}.json", {"request": req.__dict__, "mode": "mc" if args.mc else "closed",
                                        "level": cfg.level, "mc_config": mc.to_dict() if args.mc else None,
                                        "rows": rows})
        summary.append({"label": req.label(), "rows": len(rows)})
    w.json("estimates.json", {"requests": summary, "verify": None if not args.verify else {
        "ok": not failures, "failures": [{"label": l, "t": t, "gap": g, "mc_se": s} for l, t, g, s in failures]}})
    if failures:
        for l, t, g, s in failures[:10]:
            log.error("verification failed: %s at t=%d, |closed - MC| = %.4g > 3 x %.4g", l, t, g, s)
        raise VerificationError(f"{len(failures)} rows failed the closed-form/MC cross-check")
    return EXIT_OK


DEFAULT_STRATEGIES = [(1, 1, 1, 0, 0, 0, 0), (0, 1, 0, 1, 0, 1, 0), (1, 0, 0, 1, 0, 0, 1)]


def cmd_diagnose(args) -> int:
    cfg = _prepare(args)
    frame = _load_frame(cfg)
    series = _series(cfg)
    d = cfg.diagnose
    h = _hash_for(cfg, "diagnose", args)
    w = Writer(cfg.out, h)
    column = d.get("column") or cfg.schema.exposures[0]
    rep = diag.positivity_report(series, column, int(d.get("max_duration", 10)))
    w.text("positivity.csv", rep.to_csv())
    w.json("positivity.json", rep.to_dict())

    max_q = int(d.get("max_q", 14))
    t = int(d.get("t", frame.end - max_q))
    kw = dict(level=cfg.level, K=cfg.K, seed=cfg.seed, exposure=d.get("exposure"))
    imp = diag.impulse_impact(frame, t, max_q, **kw)
    step = diag.step_response(frame, t, max_q, **kw)
    w.text("impulse.csv", diag.responses_to_csv([imp]))
    w.text("step.csv", diag.responses_to_csv([step]) + "".join(
        f"# {k}={'' if v is None else v}\n" for k, v in step.summary.items()))
    strategies = [tuple(s) for s in d.get("strategies", DEFAULT_STRATEGIES)]
    tail = int(d.get("tail", 7))
    tg = int(d.get("general_t", frame.end - (len(strategies[0]) - 1 + tail)))
    gen = diag.general_response(frame, tg, strategies, tail, **kw)
    w.text("general.csv", diag.responses_to_csv(gen))
    w.json("diagnostics.json", {"positivity": rep.to_dict(), "impulse": imp.to_dict(), "step": step.to_dict(),
                                "general": [g.to_dict() for g in gen]})
    return EXIT_OK


def cmd_recommend(args) -> int:
    cfg = _prepare(args)
    frame = _load_frame(cfg)
    series = _series(cfg)
    d = cfg.recommend
    q, k = int(d.get("q", 6)), int(d.get("k", 3))
    t = int(d.get("t", min(frame.end, series.T)))
    mc = _mc_config(cfg)
    h = _hash_for(cfg, "recommend", args, mc_config=mc.to_dict())
    rep = diag.positivity_report(series, d.get("exposure") or cfg.schema.exposures[0],
                                 int(d.get("max_duration", max(10, q + 1))))
    ranked = gformula.recommend_strategy(frame, series, t, q, k, rep, mc, d.get("exposure"),
                                         d.get("direction", "lower"), d.get("method", "mc"))
    n_all = len(gformula.candidate_strategies(q, k))
    w = Writer(cfg.out, h)
    rows = [r.to_dict() for r in ranked]
    w.text("recommend.csv", rows_to_csv(rows, ["rank", "strategy", "n_active", "estimate", "lower", "upper",
                                               "observed"]))
    w.json("recommend.json", {"t": t, "q": q, "k": k, "candidates": n_all, "ranked": rows,
                              "dropped_unobserved": n_all - len(rows), "mc_config": mc.to_dict()})
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "estimate": cmd_estimate, "diagnose": cmd_diagnose,
            "recommend": cmd_recommend}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nof1causal", description="Time-varying causal effects for N-of-1 series.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="run config JSON (truth spec JSON for simulate)")
        s.add_argument("--seed", type=int, help="override the seed")
        s.add_argument("--out", help="output directory")
        s.add_argument("--level", type=float, help="interval level in (0, 1)")
        s.add_argument("--mc", action="store_true", help="estimate by Monte Carlo g-formula")
        s.add_argument("--verify", action="store_true", help="cross-check closed forms against Monte Carlo")
        s.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    if args.seed is not None and args.seed < 0:
        log.error("--seed must be non-negative")
        return EXIT_VALIDATION
    try:
        return COMMANDS[args.command](args)
    except VerificationError as e:
        log.error("%s", e)
        return EXIT_VERIFY
    except (FitError, FilterError, FloatingPointError, np.linalg.LinAlgError) as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERICAL
    except (ConfigError, SeriesError, EstimandError, FrameError, synth.TruthSpecError, ValueError,
            KeyError, OSError) as e:
        log.error("invalid input: %s", e)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
