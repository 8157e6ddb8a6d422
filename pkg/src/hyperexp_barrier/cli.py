"""Command-line interface: barrier prices, Greeks, calibration and MC checks.

Percentages (``--spots``, ``--strikes``, ``--barrier-pct``) refer to the spot
stored in the model file.  Exit codes: 0 success, 2 usage or invalid input,
3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from importlib import resources

import numpy as np

from .calibration import CalibrationError, QuoteError, bootstrap_calibrate, load_quotes
from .exceptions import DomainError, ModelError, NumericalFailure
from .model import PiecewiseModel, load_model, model_to_dict
from .montecarlo import McConfig, mc_barrier_strikes, mc_did_spots, mc_european
from .pricing import did_curve, dic_price_grid, european_call
from .transforms import FrfftPlan

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# table scales: a value v is printed as v / scale under "name(x scale)"
DID_SCALES = {"delta": 1e-3, "gamma": 1e-7}
DIC_SCALES = {"delta": 1e-1, "gamma": 1e-4}


class UsageError(ValueError):
    pass


def fixture_path(name: str):
    return resources.files("hyperexp_barrier") / "fixtures" / name


def parse_levels(text: str | None) -> list[float]:
    """``"92,94,96"`` or ``"92:118:2"`` (inclusive range) to a list of numbers."""
    if text is None:
        return []
    text = text.strip()
    if not text:
        raise UsageError("empty level list")
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"range must be start:stop:step, got {text!r}")
        a, b, s = (float(p) for p in parts)
        if s <= 0 or b < a:
            raise UsageError(f"bad range {text!r}")
        n = int(round((b - a) / s))
        return [a + s * j for j in range(n + 1)]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"cannot parse level list {text!r}") from None


def _model(args) -> PiecewiseModel:
    path = args.model or fixture_path("eurostoxx_model.json")
    m = load_model(path)
    if args.schedule:
        sched = [float(x) for x in args.schedule.split(",")]
        if len(sched) > m.N or not np.allclose(sched, m.durations[: len(sched)], rtol=0, atol=1e-12):
            raise UsageError(f"schedule {sched} is not a prefix of the model periods {list(m.durations)}")
        m = m.truncated(len(sched))
    return m


def _plan(args) -> FrfftPlan:
    return FrfftPlan(N=args.fft_n, delta=args.fft_delta, alpha=args.damp_alpha)


def _mc(args) -> McConfig:
    return McConfig(paths=args.mc_paths, dt=args.mc_dt, seed=args.seed, workers=args.threads)


def _check_knobs(args) -> None:
    if not 3 <= args.talbot_m <= 12:
        raise UsageError("--talbot-m must lie in [3, 12]")
    n = args.fft_n
    if n < 2 or n > 2**16 or n & (n - 1):
        raise UsageError("--fft-n must be a power of two <= 65536")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6g}"


def _json_value(x):
    if x is None or isinstance(x, (bool, np.bool_, str)):
        return bool(x) if isinstance(x, np.bool_) else x
    if isinstance(x, (int, np.integer)):
        return int(x)
    return float(f"{float(x):.6g}")


def render(rows: list[dict], fmt: str, meta: dict | None = None) -> str:
    if fmt == "json":
        doc = {"meta": meta or {}, "rows": [{k: _json_value(v) for k, v in r.items()} for r in rows]}
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    if rows:
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])
    return buf.getvalue()


def _emit(args, rows, meta=None) -> None:
    text = render(rows, args.format, meta)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _levels(args):
    spots, strikes = parse_levels(args.spots), parse_levels(args.strikes)
    if args.spots is not None and args.strikes is not None:
        raise UsageError("give either --spots (digital) or --strikes (call), not both")
    if not spots and not strikes:
        raise UsageError("give --spots for down-and-in digitals or --strikes for down-and-in calls")
    return spots, strikes


def _barrier_rows(args, greeks: bool) -> tuple[list[dict], dict]:
    m = _model(args)
    _check_knobs(args)
    spots, strikes = _levels(args)
    H = args.barrier_pct / 100 * m.spot
    meta = {"barrier": H, "maturity": float(np.sum(m.durations)), "talbot_m": args.talbot_m}
    rows = []
    if spots:
        res = did_curve(m, H, [m.spot * s / 100 for s in spots], M=args.talbot_m, greeks=greeks)
        for s, r in zip(spots, res):
            row = {"spot_pct": s, "price": r.price}
            if greeks:
                row.update(_greek_cols(r, DID_SCALES))
            rows.append(row)
        meta["contract"] = "down-and-in digital"
    else:
        plan = _plan(args)
        grid = dic_price_grid(m, H, M=args.talbot_m, plan=plan, greeks=greeks)
        for k, r in zip(strikes, grid.at([m.spot * k / 100 for k in strikes])):
            row = {"strike_pct": k, "price": r.price}
            if greeks:
                row.update(_greek_cols(r, DIC_SCALES))
            row["on_grid"] = r.params["on_grid"]
            rows.append(row)
        meta.update(contract="down-and-in call", fft_n=plan.N, fft_delta=plan.delta, damp_alpha=plan.alpha)
    return rows, meta


def _greek_cols(r, scales) -> dict:
    return {
        "delta": r.delta,
        "gamma": r.gamma,
        f"delta(x{scales['delta']:g})": r.delta / scales["delta"],
        f"gamma(x{scales['gamma']:g})": r.gamma / scales["gamma"],
    }


def cmd_price(args) -> int:
    rows, meta = _barrier_rows(args, greeks=False)
    _emit(args, rows, meta)
    return EXIT_OK


def cmd_greeks(args) -> int:
    rows, meta = _barrier_rows(args, greeks=True)
    _emit(args, rows, meta)
    return EXIT_OK


def cmd_validate(args) -> int:
    rows, meta = _barrier_rows(args, greeks=False)
    m = _model(args)
    H = args.barrier_pct / 100 * m.spot
    cfg = _mc(args)
    t0 = time.perf_counter()
    if "spot_pct" in rows[0]:
        est = mc_did_spots(m, H, [m.spot * r["spot_pct"] / 100 for r in rows], cfg)
    else:
        est = mc_barrier_strikes(m, H, [m.spot * r["strike_pct"] / 100 for r in rows], cfg)
    out = []
    for r, e in zip(rows, est):
        lo, hi = e.ci
        key = "spot_pct" if "spot_pct" in r else "strike_pct"
        out.append({key: r[key], "ta": r["price"], "mc": e.mean, "mc_lo": lo, "mc_hi": hi, "inside": lo <= r["price"] <= hi})
    meta.update(mc_paths=cfg.paths, mc_dt=cfg.dt, seed=cfg.seed, inside=sum(o["inside"] for o in out), rows=len(out))
    if args.timing:
        meta["mc_seconds"] = round(time.perf_counter() - t0, 1)
    _emit(args, out, meta)
    return EXIT_OK


def cmd_european(args) -> int:
    m = _model(args)
    strikes = parse_levels(args.strikes)
    if not strikes:
        raise UsageError("european needs --strikes")
    K = np.array([m.spot * k / 100 for k in strikes])
    rows = []
    for i, T in enumerate(m.maturities, start=1):
        prices = np.atleast_1d(european_call(m, i, K, alpha=args.damp_alpha))
        mc = mc_european(m, i, K, _mc(args)) if args.mc_paths and args.with_mc else None
        for j, (k, p) in enumerate(zip(strikes, prices)):
            row = {"maturity": T, "strike_pct": k, "price": p}
            if mc is not None:
                lo, hi = mc[j].ci
                row.update(mc=mc[j].mean, mc_lo=lo, mc_hi=hi)
            rows.append(row)
    _emit(args, rows, {"contract": "european call"})
    return EXIT_OK


def cmd_calibrate(args) -> int:
    template = _model(args) if args.model else load_model(fixture_path("eurostoxx_model.json"))
    quotes = load_quotes(args.quotes)
    res = bootstrap_calibrate(
        quotes,
        alpha_minus=template.periods[0].alpha_minus,
        r=template.r,
        d=template.d,
        spot=template.spot,
        starts=args.starts,
        seed=args.seed,
    )
    rows = []
    for T, p, e, c in zip(res.model.maturities, res.model.periods, res.per_maturity_rmse, res.converged):
        row = {"maturity": T, "sigma": p.sigma}
        row.update({f"pi_minus_{k + 1}": v for k, v in enumerate(p.pi_minus)})
        row.update(rmse=e, converged=c)
        rows.append(row)
    if args.model_out:
        with open(args.model_out, "w", encoding="utf-8") as fh:
            json.dump(model_to_dict(res.model), fh, indent=2)
            fh.write("\n")
    _emit(args, rows, {"rmse": res.rmse, "arpe": res.arpe})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model JSON file (default: bundled four-period Eurostoxx fit)")
    common.add_argument("--schedule", help="period durations, a prefix of the model's, e.g. 0.5,0.5")
    common.add_argument("--barrier-pct", type=float, default=90.0)
    common.add_argument("--spots", help="spot levels in %% of the model spot: list or start:stop:step")
    common.add_argument("--strikes", help="strike levels in %% of the model spot: list or start:stop:step")
    common.add_argument("--talbot-m", type=int, default=6)
    common.add_argument("--fft-n", type=int, default=1024)
    common.add_argument("--fft-delta", type=float, default=0.25)
    common.add_argument("--damp-alpha", type=float, default=0.75)
    common.add_argument("--mc-paths", type=int, default=200_000)
    common.add_argument("--mc-dt", type=float, default=1e-3)
    common.add_argument("--seed", type=int, default=20070220)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--out", help="write the table here instead of stdout")

    p = argparse.ArgumentParser(prog="hyperexp-barrier", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("price", parents=[common], help="down-and-in digital or call prices").set_defaults(fn=cmd_price)
    sub.add_parser("greeks", parents=[common], help="prices with delta and gamma").set_defaults(fn=cmd_greeks)
    v = sub.add_parser("validate", parents=[common], help="transform prices against Monte Carlo")
    v.add_argument("--timing", action="store_true", help="report MC wall time in the metadata")
    v.set_defaults(fn=cmd_validate)
    e = sub.add_parser("european", parents=[common], help="European calls at every model maturity")
    e.add_argument("--with-mc", action="store_true", help="add Monte Carlo estimates")
    e.set_defaults(fn=cmd_european)
    c = sub.add_parser("calibrate", parents=[common], help="bootstrap fit to call quotes")
    c.add_argument("quotes", nargs="?", default=None, help="CSV maturity,strike,price (default: bundled synthetic)")
    c.add_argument("--starts", type=int, default=5)
    c.add_argument("--model-out", help="write the fitted model JSON here")
    c.set_defaults(fn=cmd_calibrate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "calibrate" and args.quotes is None:
        args.quotes = fixture_path("synthetic_quotes.csv")
    try:
        return args.fn(args)
    except (UsageError, DomainError, ModelError, QuoteError, CalibrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
