"""Experiment runners and the ``eov-bench`` command line.

Each sweep runs the simulator once per point with a fixed seed and returns
:class:`SweepRow` objects; the CLI writes them as CSV under a versioned
header comment.
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .config import NetworkConfig, default_config
from .errors import ConfigInvalid, LedgerError
from .ledger import verify_chain
from .simnet import Metrics, run

CSV_HEADER_COMMENT = "# eov-ledger v1"
COLUMNS = (
    "sweep_param",
    "param_value",
    "throughput_tps",
    "mean_latency_ms",
    "median_latency_ms",
    "p95_latency_ms",
    "committed",
    "rejected",
    "invalid",
    "rejected_at_endorsement",
    "rejected_at_ordering",
    "pending",
    "block_fill_bytes",
)
TX_COLUMNS = ("tx_id", "type", "created_at_ms", "committed_at_ms", "flag")


@dataclass(frozen=True)
class SweepRow:
    sweep_param: str
    param_value: float
    metrics: Metrics

    def values(self) -> list[str]:
        m = self.metrics
        return [
            self.sweep_param,
            f"{self.param_value:g}",
            f"{m.throughput_tps:.3f}",
            f"{m.mean_latency_ms:.3f}",
            f"{m.median_latency_ms:.3f}",
            f"{m.p95_latency_ms:.3f}",
            str(m.committed_tx),
            str(m.rejected),
            str(m.invalid_at_validation),
            str(m.rejected_at_endorsement),
            str(m.rejected_at_ordering),
            str(m.pending),
            f"{m.block_fill:.1f}",
        ]


def rows_to_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    buf.write(CSV_HEADER_COMMENT + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow(row.values())
    return buf.getvalue()


def tx_records_csv(metrics: Metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TX_COLUMNS)
    for r in metrics.tx_records:
        committed = "" if r.committed_at_ms is None else f"{r.committed_at_ms:.3f}"
        w.writerow([r.tx_id, r.type, f"{r.created_at_ms:.3f}", committed, r.flag])
    return buf.getvalue()


def relative_increase(rows: Sequence[SweepRow]) -> float:
    """Mean-latency change from the first to the last row, as a fraction."""
    first, last = rows[0].metrics.mean_latency_ms, rows[-1].metrics.mean_latency_ms
    return last / first - 1.0 if first else 0.0


def _ledger_path(ledger_dir, name: str):
    if ledger_dir is None:
        return None
    Path(ledger_dir).mkdir(parents=True, exist_ok=True)
    path = Path(ledger_dir) / name
    path.unlink(missing_ok=True)
    return path


def _check_positive(values, what: str) -> list[float]:
    values = [float(v) for v in values]
    if not values:
        raise ConfigInvalid(f"{what}: at least one value required")
    if any(v <= 0 for v in values):
        raise ConfigInvalid(f"{what}: values must be positive")
    return values


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def blocksize_sweep(
    config: NetworkConfig,
    sizes_mb: Optional[Sequence[float]] = None,
    seed: Optional[int] = None,
    ledger_dir=None,
    **workload_overrides,
) -> list[SweepRow]:
    exp = config.experiment("blocksize_sweep")
    sizes = _check_positive(exp.get("sizes_mb", []) if sizes_mb is None else sizes_mb, "sizes")
    wl = {**exp.get("workload", {}), **workload_overrides}
    if seed is not None:
        wl["rng_seed"] = seed
    workload = config.workload_spec(**wl)
    model = config.network_model(**exp.get("network", {}))
    net = config.build()
    rows = []
    for size in sizes:
        ordering = config.ordering_config(**{**exp.get("ordering", {}), "max_block_mb": size})
        m = run(workload, model, ordering, net, ledger_path=_ledger_path(ledger_dir, f"blocksize-{size:g}.ledger"))
        rows.append(SweepRow("block_size_mb", size, m))
    return rows


def payload_sweep(
    config: NetworkConfig,
    payloads_kb: Optional[Sequence[float]] = None,
    seed: Optional[int] = None,
    ledger_dir=None,
    **workload_overrides,
) -> list[SweepRow]:
    exp = config.experiment("payload_sweep")
    payloads = _check_positive(exp.get("payloads_kb", []) if payloads_kb is None else payloads_kb, "payloads")
    wl = {**exp.get("workload", {}), **workload_overrides}
    if seed is not None:
        wl["rng_seed"] = seed
    model = config.network_model(**exp.get("network", {}))
    ordering = config.ordering_config(**exp.get("ordering", {}))
    net = config.build()
    rows = []
    for kb in payloads:
        workload = config.workload_spec(**{**wl, "payload_bytes": int(round(kb * 1024))})
        m = run(workload, model, ordering, net, ledger_path=_ledger_path(ledger_dir, f"payload-{kb:g}.ledger"))
        rows.append(SweepRow("payload_kb", kb, m))
    return rows


def attack(
    config: NetworkConfig,
    attackers: Optional[int] = None,
    seed: Optional[int] = None,
    ledger_dir=None,
    **workload_overrides,
) -> list[SweepRow]:
    """Baseline run without attackers, then the same honest load under attack.

    The attackers' aggregate proposal rate is ``rate_multiplier`` times the
    honest arrival rate.
    """
    exp = config.experiment("attack")
    count = int(exp.get("attackers", 0) if attackers is None else attackers)
    if count < 0:
        raise ConfigInvalid("attackers must be >= 0")
    wl = {**exp.get("workload", {}), **workload_overrides}
    if seed is not None:
        wl["rng_seed"] = seed
    base = config.workload_spec(**wl)
    rate = float(exp.get("rate_multiplier", 10.0)) * base.arrival_rate if count else 0.0
    hostile = config.workload_spec(**{**wl, "attacker_count": count, "attack_rate": rate})
    model = config.network_model(**exp.get("network", {}))
    ordering = config.ordering_config(**exp.get("ordering", {}))
    net = config.build()
    rows = []
    for n, workload in ((0, base), (count, hostile)):
        m = run(workload, model, ordering, net, ledger_path=_ledger_path(ledger_dir, f"attack-{n}.ledger"))
        rows.append(SweepRow("attackers", n, m))
    return rows


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma separated list of numbers, got {text!r}") from None


def _load(args) -> NetworkConfig:
    return NetworkConfig.load(args.config) if args.config else default_config()


def _emit(text: str, out) -> None:
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _cmd_blocksize(args) -> int:
    rows = blocksize_sweep(_load(args), args.sizes, args.seed, args.ledger_dir)
    _emit(rows_to_csv(rows), args.out)
    best = max(rows, key=lambda r: r.metrics.throughput_tps)
    print(
        f"peak throughput {best.metrics.throughput_tps:.1f} tx/s at {best.param_value:g} MB, "
        f"mean latency {best.metrics.mean_latency_ms:.1f} ms",
        file=sys.stderr,
    )
    return 0


def _cmd_payload(args) -> int:
    rows = payload_sweep(_load(args), args.payloads_kb, args.seed, args.ledger_dir)
    _emit(rows_to_csv(rows), args.out)
    first, last = rows[0], rows[-1]
    print(
        f"mean latency {first.param_value:g} KB -> {last.param_value:g} KB: "
        f"{relative_increase(rows) * 100:.2f}% increase "
        f"(median {last.metrics.median_latency_ms / first.metrics.median_latency_ms * 100 - 100:.2f}%)",
        file=sys.stderr,
    )
    return 0


def _cmd_attack(args) -> int:
    rows = attack(_load(args), args.attackers, args.seed, args.ledger_dir)
    _emit(rows_to_csv(rows), args.out)
    base, hit = rows[0].metrics, rows[1].metrics
    delta = (hit.throughput_tps / base.throughput_tps - 1.0) * 100 if base.throughput_tps else 0.0
    print(
        f"honest throughput {base.throughput_tps:.1f} -> {hit.throughput_tps:.1f} tx/s ({delta:+.2f}%), "
        f"attacker proposals rejected {hit.attacker_rejected}/{hit.attacker_generated}, "
        f"in blocks {hit.attacker_in_blocks}",
        file=sys.stderr,
    )
    return 0


def _cmd_run(args) -> int:
    config = _load(args)
    wl = {} if args.seed is None else {"rng_seed": args.seed}
    if args.attackers is not None:
        base = config.workload_spec()
        mult = float(config.experiment("attack").get("rate_multiplier", 10.0))
        wl.update(attacker_count=args.attackers, attack_rate=mult * base.arrival_rate if args.attackers else 0.0)
    net = config.build()
    if args.ledger:
        Path(args.ledger).unlink(missing_ok=True)
    m = run(
        config.workload_spec(**wl),
        config.network_model(),
        config.ordering_config(),
        net,
        ledger_path=args.ledger,
        record_txs=bool(args.tx_out),
    )
    _emit(rows_to_csv([SweepRow("run", 0, m)]), args.out)
    if args.tx_out:
        Path(args.tx_out).write_text(tx_records_csv(m))
    return 0


def _cmd_verify(args) -> int:
    try:
        report = verify_chain(args.ledger)
    except (LedgerError, OSError) as exc:
        print(f"verify failed: {exc}", file=sys.stderr)
        return 1
    if report.ok:
        print(f"ok: {report.blocks} blocks")
        return 0
    print(f"corrupt block {report.corrupt_block}: {report.reason}")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eov-bench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, attackers=False):
        p.add_argument("--config", help="network config file (JSON); defaults to the shipped config")
        p.add_argument("--seed", type=int, help="override the workload rng seed")
        p.add_argument("--out", help="CSV output path (default: stdout)")
        if attackers:
            p.add_argument("--attackers", type=int, help="number of unregistered attacking devices")
        return p

    p = common(sub.add_parser("blocksize-sweep", help="throughput and latency against block size"))
    p.add_argument("--sizes", type=_float_list, help="comma separated block sizes in MB")
    p.add_argument("--ledger-dir", help="write one ledger file per point into this directory")
    p.set_defaults(func=_cmd_blocksize)

    p = common(sub.add_parser("payload-sweep", help="latency against transaction payload size"))
    p.add_argument("--payloads-kb", type=_float_list, help="comma separated payload sizes in KB")
    p.add_argument("--ledger-dir", help="write one ledger file per point into this directory")
    p.set_defaults(func=_cmd_payload)

    p = common(sub.add_parser("attack", help="honest throughput with and without flooding attackers"), True)
    p.add_argument("--ledger-dir", help="write one ledger file per run into this directory")
    p.set_defaults(func=_cmd_attack)

    p = common(sub.add_parser("run", help="one simulation with the config's workload"), True)
    p.add_argument("--ledger", help="ledger file to write")
    p.add_argument("--tx-out", help="per-transaction latency CSV")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("verify", help="check the hash chain of a ledger file")
    p.add_argument("ledger", help="ledger file")
    p.set_defaults(func=_cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
