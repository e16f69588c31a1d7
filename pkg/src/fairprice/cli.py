"""Command line: synth, fit, audit, mitigate, compare.

Exit codes: 0 success, 2 usage / config / schema error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import dataset, glm, metrics, plotting, post, pre, scenarios, synthgen
from .dataset import SchemaError

log = logging.getLogger("fairprice")

METHODS = ("delete", "corr", "smote", "eg", "redist", "avg")


class UsageError(Exception):
    pass


def _dump(obj, path: Path) -> Path:
    path.write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def _load_config(args) -> cfgmod.RunConfig:
    path = getattr(args, "config", None)
    cfg = cfgmod.load(path) if path else cfgmod.from_dict({})
    over = {k: getattr(args, k) for k in ("seed", "out", "workers") if hasattr(args, k)}
    return replace(cfg, **over).check() if over else cfg


def _out_dir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _portfolio(args, cfg) -> dataset.Portfolio:
    """Data from ``--data`` or, failing that, the config's synthetic block."""
    if getattr(args, "data", None):
        return dataset.load_csv(args.data, cfg.schema)
    sc = synthgen.SynthConfig.from_dict({**cfg.synth, "seed": cfg.seed})
    return synthgen.generate(sc)


def _read_predictions(path, n: int) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["row", "prediction"]:
        raise SchemaError(f"{path}: expected header 'row,prediction'")
    vals = np.array([float(r[1]) for r in rows[1:]])
    if vals.size != n:
        raise SchemaError(f"{path}: {vals.size} predictions for {n} rows")
    return vals


def _write_predictions(path: Path, values) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        fh.write("row,prediction\n")
        for i, v in enumerate(values):
            fh.write(f"{i},{float(v)!r}\n")
    return path


# -- commands ----------------------------------------------------------------------


def cmd_synth(args, cfg) -> int:
    d = dict(cfg.synth)
    for key in ("n", "p_male", "gamma_direct", "rho_indirect"):
        v = getattr(args, key)
        if v is not None:
            d[key] = v
    d["seed"] = cfg.seed
    try:
        sc = synthgen.SynthConfig.from_dict(d).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    out = _out_dir(cfg)
    main, truth = synthgen.write(synthgen.generate_full(sc), out / args.name)
    print(f"wrote {main} ({sc.n} rows) and {truth}")
    return 0


def cmd_fit(args, cfg) -> int:
    p = _portfolio(args, cfg)
    spec = cfg.model.replace(include_sensitive=bool(args.with_s))
    m = glm.fit(p, spec)
    if not m.converged:
        log.warning("fit did not converge after %d iterations", m.iterations)
    out = _out_dir(cfg)
    pred = m.predict(p)
    _dump(m.to_dict(), out / "model.json")
    _write_predictions(out / "predictions.csv", pred)
    y = glm.response(p, spec)
    print(f"iterations={m.iterations} converged={m.converged} deviance={m.deviance:.6g} "
          f"rmse={glm.rmse(y, pred):.6g} lr={glm.loss_ratio(y, pred):.6g}")
    return 0


def cmd_audit(args, cfg) -> int:
    p = _portfolio(args, cfg)
    if args.predictions:
        values, what = _read_predictions(args.predictions, p.n), "predictions"
    else:
        values, what = p.y, "historical"
    spec = cfg.metrics.distance([c for c in p.features if c != p.sensitive])
    mc = cfg.metrics
    panel = metrics.fairness_panel(p, values, spec, mc.flip_k, mc.js_bins, grid_cc=mc.grid_cc, grid_bc=mc.grid_bc)
    out = _out_dir(cfg)
    _dump({"v": 1, "audited": what, **panel.to_dict()}, out / "audit.json")
    header = "audited," + ",".join(metrics.PANEL_COLUMNS)
    row = what + "," + ",".join(panel.csv_row())
    (out / "audit.csv").write_text(header + "\n" + row + "\n", encoding="utf-8")
    plotting.plot_distributions(values, p.s, out / "audit_dist.png", label=what)
    print(header)
    print(row)
    return 0


def _metric_opts(cfg) -> dict:
    mc = cfg.metrics
    return {"js_bins": mc.js_bins, "grid_cc": mc.grid_cc, "grid_bc": mc.grid_bc}


def _method_params(args, cfg, method: str) -> dict:
    prm = cfg.method(method)
    for flag, key in (("alpha", "alpha"), ("eta", "eta"), ("zeta", "zeta"), ("st", "st"), ("ft", "ft"),
                      ("M", "M"), ("threshold", "threshold")):
        v = getattr(args, flag, None)
        if v is not None:
            prm[key] = v
    return prm


def cmd_mitigate(args, cfg) -> int:
    method = args.method
    p = _portfolio(args, cfg)
    train, test = dataset.split(p, cfg.test_fraction, cfg.seed)
    out = _out_dir(cfg)
    prm = _method_params(args, cfg, method)
    flip = cfg.metrics.distance([c for c in p.features if c != p.sensitive])
    if method == "smote":
        prm.setdefault("seed", cfg.seed)
    if method == "delete" and "deleted" not in prm:
        profile = pre.dependency_profile(train)
        with (out / "dependency_profile.csv").open("w", encoding="utf-8") as fh:
            fh.write("feature,hgr\n")
            for name, h in profile:
                fh.write(f"{name},{h!r}\n")
        t = prm.get("threshold", (prm.get("thresholds") or [0.1])[0])
        sc = pre.scenarios_from_threshold(profile, [float(t)])[0]
        prm = {"deleted": list(sc.deleted), "threshold": float(t)}
    pl = scenarios.Pipeline(method, method, cfg.model, prm, flip=flip, flip_k=cfg.metrics.flip_k,
                            metric_opts=_metric_opts(cfg))
    run = scenarios.run_pipeline(pl, train, test)
    if not np.all(np.isfinite(run.predictions)):
        raise FloatingPointError("non-finite predictions")
    extra = {}
    art = run.artifacts
    if "model" in art:
        _dump(art["model"].to_dict(), out / f"{method}_model.json")
    if method == "corr":
        dataset.write_csv(art["remover"].transform(train), out / "corr_train.csv")
        _dump({"v": 1, "alpha": art["remover"].alpha, "s_mean": art["remover"].s_mean,
               "slopes": dict(art["remover"].slopes)}, out / "corr_transform.json")
    if method == "smote":
        res = art["smote"]
        res.to_csv(out / "smote_train.csv")
        extra = {"synthetic_rows": float(res.n_synthetic)}
    if method == "eg":
        rep = art["eg_report"]
        _dump(rep.to_dict(), out / "eg_report.json")
        _dump(art["predictor"].to_dict(), out / "eg_predictor.json")
        extra = {"eg_gap": rep.gap, "eg_converged": float(rep.converged)}
        if not rep.converged:
            log.warning("exponentiated gradient did not reach the gap tolerance (gap=%.6g)", rep.gap)
    if method == "redist":
        rep = art["redist_report"]
        _dump(rep.to_dict(), out / "redist_report.json")
        post.write_correction_table(out / "redist_corrections.csv", art["y0"], run.predictions)
        extra = {"integrity": rep.integrity, "global_variation": rep.global_variation}
        if args.grid:
            g = prm.get("grid") or {}
            etas, zetas = g.get("etas", [prm["eta"]]), g.get("zetas", [prm["zeta"]])
            cells = post.redist_grid(test, art["y0"], etas, zetas, flip, int(prm.get("k", 5)),
                                     int(prm.get("max_iter", 10000)), workers=cfg.workers)
            post.write_grid_csv(cells, out / "redist_grid.csv")
            plotting.plot_redist_grid(cells, out / "redist_grid.png")
    rec = scenarios.scenario_from_predictions(pl, test, run.predictions, extra)
    scenarios.write_record(rec, out / f"scenario_{method}.json")
    print(f"{rec.id}: HGR={rec.fairness:.6g} RMSE={rec.performance:.6g} LR={rec.lr:.6g}")
    for k in ("integrity", "global_variation"):
        if k in rec.extras:
            print(f"{k}={rec.extras[k]:.6g}")
    return 0


def cmd_compare(args, cfg) -> int:
    recs = []
    for path in args.records:
        try:
            recs.extend(scenarios.load_record(path))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"malformed scenario record {path}: {exc}") from exc
    if cfg.scenarios:
        p = _portfolio(args, cfg)
        train, test = dataset.split(p, cfg.test_fraction, cfg.seed)
        flip = cfg.metrics.distance([c for c in p.features if c != p.sensitive])
        pls = []
        for sc in cfg.scenarios:
            sc = dict(sc)
            method = sc.pop("method", None)
            sid = str(sc.pop("id", method))
            desc = str(sc.pop("description", ""))
            prm = {**cfg.method(method), **sc} if method in cfg.mitigation else sc
            if method == "smote":
                prm.setdefault("seed", cfg.seed)
            pls.append(scenarios.Pipeline(sid, method, cfg.model, prm, desc, flip=flip, flip_k=cfg.metrics.flip_k,
                                          metric_opts=_metric_opts(cfg)))
        recs.extend(scenarios.evaluate_all(pls, train, test, cfg.workers))
    if not recs:
        raise UsageError("compare needs at least one scenario record or a scenarios list in the config")
    ids = [r.id for r in recs]
    if len(set(ids)) != len(ids):
        raise UsageError(f"duplicate scenario ids: {sorted({i for i in ids if ids.count(i) > 1})}")
    out = _out_dir(cfg)
    files = scenarios.report(recs, out / "compare")
    ordered = sorted(recs, key=lambda r: r.id)
    front = scenarios.pareto_front(ordered)
    plotting.plot_front(ordered, front, out / "compare_front.png")
    print(files["csv"].read_text(encoding="utf-8"), end="")
    print("front: " + ", ".join(r.id for r, f in zip(ordered, front) if f))
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS lets the global flags go before or after the subcommand
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int)
    common.add_argument("-v", "--verbose", action="count")

    ap = argparse.ArgumentParser(prog="fairprice", parents=[common],
                                 description="Fairness audit and mitigation for pricing GLMs.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic portfolio")
    s.add_argument("--n", type=int)
    s.add_argument("--p-male", dest="p_male", type=float)
    s.add_argument("--gamma-direct", dest="gamma_direct", type=float)
    s.add_argument("--rho-indirect", dest="rho_indirect", type=float)
    s.add_argument("--name", default="portfolio.csv")

    f = sub.add_parser("fit", parents=[common], help="fit the pricing GLM")
    f.add_argument("--data")
    f.add_argument("--with-s", action="store_true", help="include the sensitive column")

    a = sub.add_parser("audit", parents=[common], help="fairness panel of Y or of predictions")
    a.add_argument("--data")
    a.add_argument("--predictions")

    m = sub.add_parser("mitigate", parents=[common], help="run one mitigation end to end")
    m.add_argument("method", choices=METHODS)
    m.add_argument("--data")
    m.add_argument("--alpha", type=float)
    m.add_argument("--eta", type=float)
    m.add_argument("--zeta", type=float)
    m.add_argument("--st", type=float)
    m.add_argument("--ft", type=float)
    m.add_argument("--M", type=float)
    m.add_argument("--threshold", type=float)
    m.add_argument("--grid", action="store_true", help="also sweep the redistribution grid")

    c = sub.add_parser("compare", parents=[common], help="merge scenario records into a trade-off report")
    c.add_argument("records", nargs="*")
    c.add_argument("--data")
    return ap


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "audit": cmd_audit, "mitigate": cmd_mitigate,
            "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    verbose = getattr(args, "verbose", 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s %(message)s")
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, cfgmod.ConfigError, SchemaError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (glm.RankDeficientError, FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
