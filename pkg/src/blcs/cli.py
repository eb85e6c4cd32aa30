"""Command-line entry point: run, sweep, train."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from importlib import resources
from pathlib import Path

from . import relation_net as rnet
from . import sim_engine as sim
from .errors import BlcsError, ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _scenario(config: str | None, seed: int | None) -> sim.Scenario:
    if config in (None, "default"):
        text = resources.files("blcs.data").joinpath("default_scenario.json").read_text()
        sc = sim.scenario_from_dict(json.loads(text))
    else:
        path = Path(config)
        if not path.is_file():
            raise ConfigError(f"config: cannot read {config}", "config")
        sc = sim.load_scenario(path)
    if seed is not None:
        sc = sc.replace(seed=seed)
    return sc


def _model(path: str | None):
    if path is None:
        return None
    try:
        return rnet.loads_model(Path(path).read_text())
    except OSError as e:
        raise ConfigError(f"model: cannot read {path} ({e})", "model") from None
    except (KeyError, ValueError) as e:
        raise ConfigError(f"model: {path} is not a relation model ({e})", "model") from None


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    sc = _scenario(args.config, args.seed)
    model = _model(args.model)
    if model is None and sc.blcs:
        model = sim.model_for(sc)
    res = sim.run(sc, model)
    out = _out_dir(args.out)
    row = sim.SweepRow("seed", float(sc.seed), sim.variant_name(sc.blcs), res.report)
    (out / "metrics.csv").write_text(sim.csv_text([row]))
    (out / "trace.jsonl").write_text(res.trace_lines())
    report = {"scenario": sc.to_dict(), "malicious": sorted(res.assignment.malicious),
              "metrics": res.report.to_dict()}
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2, default=str) + "\n")
    r = res.report
    print(f"requests={r.requests} mistrust={r.mistrust_rate:.4f} latency={r.latency_ticks:.2f} "
          f"loss={r.packet_loss:.4f} blocking={r.blocking:.4f}")
    return EXIT_OK


def _values(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"values: cannot parse {text!r}", "values") from None


def cmd_sweep(args) -> int:
    sc = _scenario(args.config, args.seed)
    spec = sim.SweepSpec(args.param, _values(args.values), args.seeds, not args.no_baseline)
    rows = sim.sweep(sc, spec, _model(args.model), args.workers)
    out = _out_dir(args.out)
    (out / "metrics.csv").write_text(sim.csv_text(rows))
    report = {"scenario": sc.to_dict(), "sweep": {"param": spec.param, "values": list(spec.values),
                                                  "seeds": spec.seeds, "baseline": spec.baseline},
              "points": [{"value": r.value, "variant": r.variant, "metrics": r.report.to_dict()} for r in rows]}
    (out / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2, default=str) + "\n")
    for r in rows:
        m = r.report
        print(f"{spec.param}={r.value:g} {r.variant:8s} mistrust={m.mistrust_rate:.4f} "
              f"latency={m.latency_ticks:.2f} loss={m.packet_loss:.4f} blocking={m.blocking:.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    sc = _scenario(args.config, args.seed)
    if args.epochs is not None:
        sc = sc.replace(epochs=args.epochs)
    print(f"epochs: {sc.epochs}")
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        rep = sim.train_model(sc)
    if args.model:
        path = Path(args.model)
        path.parent.mkdir(parents=True, exist_ok=True)
    else:
        path = _out_dir(args.out) / "model.json"
    meta = {"seed": sc.seed, "epochs": sc.epochs, "training_key": sim.training_key(sc)}
    path.write_text(rnet.dumps_model(rep.rn, rep.enc, meta))
    print(f"final loss: {rep.final_loss:.6g}")
    print(f"held-out accuracy: {rep.heldout_accuracy:.4f}")
    print(f"honest acceptance at tau={sc.tau:g}: {rep.honest_acceptance:.4f}")
    print(f"model written to {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blcs", description="Secure multi-domain control simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", nargs="?", default="default", help="scenario JSON (default: bundled)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default="out")
        sp.add_argument("--model", default=None, help="trained relation model file")

    r = sub.add_parser("run", help="simulate one scenario")
    common(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="sweep load or malicious ratio, BLCS vs baseline")
    common(s)
    s.add_argument("--param", default="load", choices=sim.SWEEP_PARAMS)
    s.add_argument("--values", default="10,20,30,40,50")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--no-baseline", action="store_true")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("train", help="train the relation model on bootstrap interactions")
    common(t)
    t.add_argument("--epochs", type=int, default=None)
    t.set_defaults(func=cmd_train)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        field = f" [{e.field}]" if e.field else ""
        print(f"config error{field}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (BlcsError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
