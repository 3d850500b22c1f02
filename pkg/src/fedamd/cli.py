"""Command line: ``fedamd run | compare | sweep``.

Exit codes: 0 success, 2 configuration error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import yaml

from . import harness
from .config import ExperimentConfig, from_mapping, load_config
from .errors import ConfigError, FedAMDError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedamd", description="Federated anchor/miner training simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, multi=False):
        if multi:
            sp.add_argument("--config", action="append", required=True, help="config file (repeatable, or a YAML list)")
        else:
            sp.add_argument("--config", required=True, help="YAML config file")
        sp.add_argument("--seed", type=int, default=None, help="override run.seed")
        sp.add_argument("--out", default=None, help="write output here instead of stdout")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--quiet", action="store_true", help="suppress the summary on stderr")

    common(sub.add_parser("run", help="run one experiment and emit per-round rows"))
    cp = sub.add_parser("compare", help="one summary row per algorithm")
    common(cp, multi=True)
    cp.add_argument("--seeds", type=int, default=1, help="average over seeds s, s+1, ...")
    cp.add_argument("--target", default=None, help="target accuracy, or 'fedavg' for the fedavg final accuracy")
    common(sub.add_parser("sweep", help="learning-rate grid from the sweep section"))
    return p


def _load_many(paths: list[str]) -> list[ExperimentConfig]:
    out = []
    for path in paths:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed configuration {path}: {exc}") from None
        for item in doc if isinstance(doc, list) else [doc]:
            out.append(from_mapping(item or {}))
    return out


def _seeded(cfg: ExperimentConfig, seed: int | None) -> ExperimentConfig:
    if seed is None:
        return cfg
    if seed < 0:
        raise ConfigError("--seed must be non-negative")
    return cfg.with_overrides(run={"seed": seed})


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        if args.command == "run":
            cfg = _seeded(load_config(args.config), args.seed)
            art = harness.run_experiment(cfg)
            _emit(art.to_csv() if args.format == "csv" else art.to_json(), args.out)
            if not args.quiet:
                s = art.summary
                print(
                    f"{s['label']}: final loss {s['final_loss']:.6g}, acc {s['final_acc']:.4f}, "
                    f"grad samples {s['cum_grad_samples']}, comm floats {s['cum_comm_floats']}",
                    file=sys.stderr,
                )
        elif args.command == "compare":
            if args.seeds < 1:
                raise ConfigError("--seeds must be >= 1")
            target = args.target
            if target is not None and target != "fedavg":
                try:
                    target = float(target)
                except ValueError:
                    raise ConfigError(f"--target must be a number or 'fedavg', got {target!r}") from None
            cfgs = [_seeded(c, args.seed) for c in _load_many(args.config)]
            rows = harness.compare(cfgs, args.seeds, target)
            _emit(harness.table_csv(rows) if args.format == "csv" else harness.table_json(rows), args.out)
        else:
            cfg = _seeded(load_config(args.config), args.seed)
            rows = harness.sweep(cfg)
            _emit(harness.table_csv(rows) if args.format == "csv" else harness.table_json(rows), args.out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (FedAMDError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
