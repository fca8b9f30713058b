"""Command-line entry points: ``pp`` (publisher), ``rp`` (validator), ``bench``."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import time
from pathlib import Path
from typing import Sequence

from . import bench, signing
from .formats import CaMode, ChildEntry
from .publisher import PublicationPoint, PublisherError, RateLimits
from .service import HttpTransport, LoopbackTransport, PublicationServer, RepositoryView, ServiceError
from .validator import ValidatorCache, emit_validated, sync_cycle

log = logging.getLogger("ladder_rpki")

TRUST_ANCHOR_FILE = "trust-anchor.json"


def _logging(verbose: int) -> None:
    level = logging.DEBUG if verbose > 1 else logging.INFO if verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-v", "--verbose", action="count", default=0)


def _parse_bind(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    return host or "127.0.0.1", int(port)


# ---------------------------------------------------------------------------
# pp


def _payload(args: argparse.Namespace) -> bytes:
    if args.file is not None:
        return Path(args.file).read_bytes()
    if args.data is not None:
        return args.data.encode()
    return sys.stdin.buffer.read()


def _pp_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pp", description="Publication point: CA state, publishing and serving.")
    _common(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    def cmd(name: str, help: str, ca: bool = True, ca_required: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--repo", required=True, type=Path)
        if ca:
            p.add_argument("--ca", required=ca_required)
        return p

    p = cmd("init", "create the repository and registry, or a CA with --ca", ca_required=False)
    p.add_argument("--registry", default="registry", help="registry id (new repository only)")
    p.add_argument("--scheme", default=signing.TEST_SCHEME)
    p.add_argument("--mode", choices=[m.value for m in CaMode], default=CaMode.HOSTED.value)
    p.add_argument("--dual-stack", action="store_true")
    p.add_argument("--max-deletes", type=int, default=0, help="revocations allowed per epoch (0 = no cap)")
    p.add_argument("--max-updates", type=int, default=0, help="publishes allowed per window (0 = no cap)")
    p.add_argument("--window", type=float, default=60.0)
    p.add_argument("--seed", help="hex seed for deterministic keys")

    for name, help in (("issue", "append a published object"), ("hide", "append a hidden object")):
        p = cmd(name, help)
        p.add_argument("--name", required=True)
        src = p.add_mutually_exclusive_group()
        src.add_argument("--file")
        src.add_argument("--data")

    p = cmd("delete", "mark an object deleted (D) and revoke it")
    p.add_argument("--name", required=True)
    p = cmd("revoke", "revoke a hidden object through the CRL")
    p.add_argument("--name", required=True)

    p = cmd("publish", "refresh metadata rungs and swap the served snapshot", ca_required=False)
    p.add_argument("--max-deletes", type=int, help="override the CA's revocation cap")
    cmd("rebuild-epoch", "drop deleted leaves, reindex and publish a new epoch")
    cmd("registry-add", "add a CA to the registry aggregate")
    cmd("registry-update", "refresh a CA's registry entry and re-sign")
    p = cmd("serve", "serve the repository over HTTP", ca=False)
    p.add_argument("--bind", default="127.0.0.1:8080")
    return parser


def _pp(args: argparse.Namespace) -> int:
    repo: Path = args.repo
    if args.command == "init" and not (repo / ".pp" / "state.json").exists():
        seed = bytes.fromhex(args.seed) if args.seed else None
        pp = PublicationPoint.create(repo, args.registry, args.scheme if args.ca is None else signing.TEST_SCHEME, seed)
        pp.write_trust_anchor(repo.parent / f"{repo.name}.{TRUST_ANCHOR_FILE}")
        print(f"initialised {repo}; trust anchor {repo.parent / f'{repo.name}.{TRUST_ANCHOR_FILE}'}")
        if args.ca is None:
            pp.save()
            return 0
    elif args.command == "serve":
        server = PublicationServer(repo, _parse_bind(args.bind))
        print(f"serving {repo} at {server.url}", flush=True)
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        return 0
    else:
        pp = PublicationPoint.load(repo)

    if args.command == "init":
        limits = RateLimits(args.max_deletes, args.max_updates, args.window)
        seed = bytes.fromhex(args.seed) if args.seed else None
        ca = pp.init_ca(args.ca, args.mode, args.scheme, seed=seed, dual_stack=args.dual_stack, limits=limits)
        print(f"created {ca.mode.value} CA {ca.ca_id}")
    elif args.command in ("issue", "hide"):
        ca = pp.cas[args.ca]
        add = ca.issue_object if args.command == "issue" else ca.hide_object
        obj = add(args.name, _payload(args))
        print(f"{args.name} -> index {obj.leaf_index} commitment {obj.commitment.hex()}")
    elif args.command == "delete":
        obj = pp.cas[args.ca].delete_object(args.name)
        print(f"{args.name} at index {obj.leaf_index} marked D")
    elif args.command == "revoke":
        obj = pp.cas[args.ca].revoke_hidden(args.name)
        print(f"{args.name} at index {obj.leaf_index} revoked")
    elif args.command == "publish":
        ids = [args.ca] if args.ca else list(pp.cas)
        if args.max_deletes is not None:
            for ca_id in ids:
                pp.cas[ca_id].limits.max_deletes = args.max_deletes
        for snap in pp.publish_all(ids):
            print(f"{snap.ca_id} {snap.snapshot_id} root {snap.ladder_root.hex()}")
    elif args.command == "rebuild-epoch":
        snap = pp.rebuild_epoch(args.ca)
        print(f"{snap.ca_id} {snap.snapshot_id} root {snap.ladder_root.hex()}")
    elif args.command in ("registry-add", "registry-update"):
        entry: ChildEntry = pp.cas[args.ca].child_entry()
        result = pp.registry.update(entry, add=args.command == "registry-add")
        pp.registry.write(repo)
        state = "updated" if result.changed else "unchanged"
        print(f"registry {state}; aggregate root {pp.registry.root().hex()}")
    pp.save()
    return 0


def pp_main(argv: Sequence[str] | None = None) -> int:
    args = _pp_parser().parse_args(argv)
    _logging(args.verbose)
    try:
        return _pp(args)
    except (PublisherError, ServiceError, signing.SignatureError, ValueError, KeyError) as exc:
        print(f"pp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


# ---------------------------------------------------------------------------
# rp


def _rp_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rp", description="Relying party: sync and validate a registry.")
    _common(parser)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("sync", help="run sync cycles against an endpoint")
    p.add_argument("--endpoint", required=True, help="http(s):// base URL or file:// repository path")
    p.add_argument("--cache", required=True, type=Path)
    p.add_argument("--trust-anchor", required=True, type=Path)
    when = p.add_mutually_exclusive_group()
    when.add_argument("--once", action="store_true", default=True)
    when.add_argument("--interval", type=float, help="seconds between cycles; runs until interrupted")
    p.add_argument("--cycles", type=int, help="stop after this many cycles (with --interval)")
    p.add_argument("--native-mtl", action="store_true", help="verify one authentication path per object")
    p.add_argument("--report", type=Path, help="append one JSON line per cycle")
    p.add_argument("--output", type=Path, help="write the validated-object listing here")
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--include-stale", action="store_true", help="keep last verified state of failed CAs in output")
    return parser


def _transport(endpoint: str, timeout: float):
    if endpoint.startswith("file://"):
        return LoopbackTransport(RepositoryView(endpoint[len("file://") :]))
    return HttpTransport(endpoint, timeout)


def rp_main(argv: Sequence[str] | None = None) -> int:
    args = _rp_parser().parse_args(argv)
    _logging(args.verbose)
    try:
        anchor = signing_anchor(args.trust_anchor)
        transport = _transport(args.endpoint, args.timeout)
    except (OSError, ValueError, KeyError, ServiceError) as exc:
        print(f"rp: {exc}", file=sys.stderr)
        return 2
    cache = ValidatorCache(args.cache)
    cycles = 0
    status = 0
    while True:
        report = sync_cycle(transport, cache, anchor, native=args.native_mtl)
        cycles += 1
        line = report.to_json()
        print(line, flush=True)
        if args.report is not None:
            with args.report.open("a") as fh:
                fh.write(line + "\n")
        if args.output is not None and not report.aborted:
            emit_validated(cache, report.outcomes, args.output, include_stale=args.include_stale)
        status = 0 if report.ok else 1
        if args.interval is None or (args.cycles is not None and cycles >= args.cycles):
            return status
        try:
            time.sleep(args.interval)
        except KeyboardInterrupt:
            return status


def signing_anchor(path: Path) -> tuple[str, bytes]:
    doc = json.loads(Path(path).read_text())
    signing.get_scheme(doc["scheme"])
    return doc["scheme"], bytes.fromhex(doc["public_key"])


# ---------------------------------------------------------------------------
# bench


def _bench_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bench", description="Synthetic workloads and size accounting.")
    _common(parser)
    parser.add_argument("command", choices=["generate", "churn", "validate", "sync", "all"])
    parser.add_argument("--config", type=Path, help="INI file with [generate], [churn] and [sync] sections")
    parser.add_argument("--out", type=Path, default=Path("report.json"))
    return parser


def _generate(cfg: bench.BenchConfig) -> tuple[PublicationPoint, bench.BenchReport]:
    repo = Path(cfg.repo)
    if repo.exists():
        shutil.rmtree(repo)
    started = time.perf_counter()
    pp = bench.generate_repo(
        repo, cfg.n_cas, cfg.objects_per_ca, cfg.mean_object_bytes, cfg.seed,
        delegated=cfg.delegated, hidden_every=cfg.hidden_every,
    )
    report = bench.size_matrix(repo)
    report.timings["generate"] = time.perf_counter() - started
    return pp, report


def _http_sync(pp: PublicationPoint, cfg: bench.BenchConfig) -> bench.BenchReport:
    churn = bench.ChurnModel(**{**vars(cfg.churn), "steps": cfg.sync_steps})
    with PublicationServer(pp.repo) as server:
        return bench.run_sync_bench(pp, churn, lambda: HttpTransport(server.url))


def bench_main(argv: Sequence[str] | None = None) -> int:
    args = _bench_parser().parse_args(argv)
    _logging(args.verbose)
    cfg = bench.BenchConfig.load(args.config)
    report = bench.BenchReport()
    if args.command in ("generate", "all"):
        pp, sizes = _generate(cfg)
        report.merge(sizes)
    else:
        pp = PublicationPoint.load(cfg.repo)
    anchor = (pp.registry.trust_anchor.scheme.name, pp.trust_anchor)
    if args.command in ("validate", "all"):
        report.merge(bench.run_validation_bench(pp.repo, trust_anchor=anchor))
    if args.command in ("sync", "all"):
        report.merge(_http_sync(pp, cfg))
    if args.command in ("churn", "all"):
        report.merge(bench.run_churn(pp, cfg.churn))
    pp.save()
    args.out.write_text(report.to_json() + "\n")
    print(f"wrote {args.out}")
    return 0
