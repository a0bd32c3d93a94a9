"""Command-line workbench: sampling, exact checks, learners, and services.

Every subcommand appends one JSONL record (config echo, seed, results,
bound-check outcomes) to the --records file, prints its primary output,
and exits nonzero when a check fails.  Streams derive from
(seed, subcommand, index), so worker counts never change the numbers.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import socketserver
import sys
import threading
from fractions import Fraction

import numpy as np

from . import perms
from .distances import tv_between, tv_empirical
from .errors import LearningFailure, MallowsLabError
from .identifiability import (
    identifiability_l1,
    kruskal_l1,
    kruskal_projection,
    zagier_check,
)
from .learn_general import (
    LearnerBudget,
    learn_mixture_general,
    test_componentwise_close,
)
from .learn_separated import SeparationParams, learn_mixture_separated
from .lowerbound import (
    LocalQuerySession,
    build_close_mixtures,
    build_sql_hard_instance,
    verify_close_mixtures,
    verify_sql_instance,
)
from .model import (
    MallowsModel,
    load_mixture,
    mixture_to_config,
    sample_mixture,
    vectorize,
)
from .records import (
    ExperimentRecord,
    append_record,
    derive_rng,
    failed_checks,
    run_trials,
)

__all__ = ["main", "make_oracle_server", "OracleServer"]

SAMPLE_BLOCK = 10_000  # fixed chunking keeps sample streams worker-independent

# these write their own stdout payload; the others echo the results JSON
_STREAMING = frozenset(
    {"sample", "pmf", "oracle-serve", "learn-general", "learn-separated",
     "lowerbound", "sql"}
)

# plumbing flags have no bearing on the numbers, so records omit them
_NO_ECHO = frozenset({"func", "command", "records", "out", "workers", "ledger"})


def _json_safe(value):
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        value = float(value)
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, np.ndarray):
        return _json_safe(value.tolist())
    if isinstance(value, Fraction):
        return str(value)
    return value


def _echo(args) -> dict:
    out = {}
    for key, val in vars(args).items():
        if key in _NO_ECHO or callable(val) or val is None:
            continue
        out[key] = _json_safe(val)
    return out


def _sweep_check(name: str, entries) -> dict:
    """Worst margin over per-trial lower-bound checks."""
    margin = min(e["measured"] - e["bound"] for e in entries)
    return {
        "check": name,
        "measured": margin,
        "bound": 0.0,
        "direction": ">=",
        "holds": all(e["holds"] for e in entries),
    }


def _write_out(args, text: str) -> None:
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dump_json(args, doc: dict) -> None:
    _write_out(args, json.dumps(_json_safe(doc), sort_keys=True, indent=2) + "\n")


# --- sample / pmf / tv ----------------------------------------------------------


def _cmd_sample(args):
    mix = load_mixture(args.config)
    blocks = (args.count + SAMPLE_BLOCK - 1) // SAMPLE_BLOCK

    def trial(i, rng):
        size = min(SAMPLE_BLOCK, args.count - i * SAMPLE_BLOCK)
        return sample_mixture(mix, rng, size, with_components=args.trace_components)

    drawn = run_trials(trial, blocks, args.seed, "sample", workers=args.workers)
    lines = []
    for block in drawn:
        rows, comps = block if args.trace_components else (block, None)
        for j, row in enumerate(rows):
            comp = None if comps is None else int(comps[j])
            lines.append(perms.format_permutation(row, component=comp))
    text = "\n".join(lines) + "\n" if lines else ""
    _write_out(args, text)
    digest = hashlib.sha256(text.encode()).hexdigest()
    return {"count": args.count, "n": mix.n, "sha256": digest}, []


def _cmd_pmf(args):
    mix = load_mixture(args.config)
    if not args.all and not args.perm:
        raise MallowsLabError("pass --perm (repeatable) or --all")
    if args.all:
        vec = vectorize(mix)
        rows = ["perm,prob"]
        for p, prob in zip(perms.enumerate_perms(mix.n), vec.values):
            rows.append(f"{perms.format_permutation(p)},{float(prob)!r}")
        text = "\n".join(rows) + "\n"
        _write_out(args, text)
        digest = hashlib.sha256(text.encode()).hexdigest()
        return {"rows": len(rows) - 1, "total": float(vec.values.sum()),
                "sha256": digest}, []
    entries = []
    out_lines = []
    for spec in args.perm:
        p = perms.parse_permutation(spec)
        value = mix.pmf(p)
        entries.append({"perm": list(p), "pmf": value})
        out_lines.append(f"{perms.format_permutation(p)},{value!r}")
    _write_out(args, "\n".join(["perm,prob"] + out_lines) + "\n")
    return {"entries": entries}, []


def _cmd_tv(args):
    a, b = load_mixture(args.config_a), load_mixture(args.config_b)
    if args.mode == "exact":
        report = tv_between(a, b)
    else:
        report = tv_empirical(a, b, args.samples, derive_rng(args.seed, "tv"))
    doc = report.as_dict()
    doc.setdefault("tolerance", None)
    return doc, []


# --- exact identities and bounds --------------------------------------------------


def _cmd_zagier(args):
    report = zagier_check(args.n, Fraction(args.phi))
    check = {
        "check": "zagier_identity",
        "measured": 0.0 if report.equal else 1.0,
        "bound": 0.0,
        "direction": "<=",
        "holds": report.equal,
    }
    return report.as_dict(), [check]


def _random_distinct_perms(rng, n: int, k: int):
    universe = list(perms.enumerate_perms(n))
    idx = rng.choice(len(universe), size=k, replace=False)
    return [universe[i] for i in sorted(int(i) for i in idx)]


def _cmd_kruskal(args):
    def trial(i, rng):
        chosen = _random_distinct_perms(rng, args.n, args.k)
        l1 = kruskal_l1(args.n, args.phi, chosen)
        proj = kruskal_projection(args.n, args.phi, chosen)
        return l1.as_dict(), proj.as_dict()

    pairs = run_trials(trial, args.trials, args.seed, "kruskal", workers=args.workers)
    l1s = [p[0] for p in pairs]
    projs = [p[1] for p in pairs]
    checks = [
        _sweep_check("kruskal_l1_sweep", l1s),
        _sweep_check("kruskal_projection_sweep", projs),
    ]
    results = {
        "trials": args.trials,
        "l1_margins": [round(e["measured"] - e["bound"], 12) for e in l1s],
        "projection_margins": [round(e["measured"] - e["bound"], 12) for e in projs],
    }
    return results, checks


def _cmd_identifiability(args):
    phi_grid = [round(0.1 * i, 12) for i in range(1, 9)]

    def trial(i, rng):
        for _ in range(50):  # retry draws that land closer than mu apart
            centers = _random_distinct_perms(rng, args.n, args.k)
            phis = [phi_grid[int(j)] for j in rng.integers(0, len(phi_grid), args.k)]
            models = [MallowsModel(f, p) for f, p in zip(phis, centers)]
            coeffs = [float(s) for s in rng.choice((-1.0, 1.0), size=args.k)]
            try:
                return identifiability_l1(models, coeffs, args.mu).as_dict()
            except MallowsLabError:
                continue
        raise MallowsLabError(
            f"could not draw a mu-non-degenerate collection in 50 tries (trial {i})"
        )

    entries = run_trials(
        trial, args.trials, args.seed, "identifiability", workers=args.workers
    )
    checks = [_sweep_check("identifiability_sweep", entries)]
    results = {
        "trials": args.trials,
        "log10_measured": [
            round(math.log10(e["measured"]), 6) if e["measured"] > 0 else None
            for e in entries
        ],
    }
    return results, checks


# --- learners ----------------------------------------------------------------------


def _general_budget(args, k: int) -> LearnerBudget:
    return LearnerBudget(
        alpha=args.alpha,
        grid_step=args.grid_step,
        moment_order=args.moment_order,
        tolerance=args.tolerance,
        sample_count=args.samples,
        negativity_tol=args.negativity_tol,
    )


def _cmd_learn_general(args):
    mix = load_mixture(args.config)
    k = args.k if args.k is not None else len(mix.components)
    budget = _general_budget(args, k)
    if args.mode == "exact":
        source = mix
        rng = None
    else:
        source = sample_mixture(
            mix, derive_rng(args.seed, "learn-general", 0), args.samples
        )
        rng = derive_rng(args.seed, "learn-general", 1)
    diag: dict = {}
    try:
        learned = learn_mixture_general(source, k, budget, rng=rng, diag_out=diag)
    except LearningFailure as exc:
        doc = {"accepted": None, "diagnostics": _json_safe(exc.diagnostics)}
        _dump_json(args, doc)
        check = {
            "check": "learning_succeeded",
            "measured": 0.0,
            "bound": 1.0,
            "direction": ">=",
            "holds": False,
        }
        return doc, [check]
    verify = test_componentwise_close(
        source, learned, budget, rng=derive_rng(args.seed, "learn-general", 2)
    )
    doc = {
        "accepted": mixture_to_config(learned),
        "diagnostics": _json_safe(diag),
    }
    _dump_json(args, doc)
    return doc, [verify.as_dict()]


def _cmd_learn_separated(args):
    mix = load_mixture(args.config)
    k = args.k if args.k is not None else len(mix.components)
    params = SeparationParams(
        gamma=args.gamma, alpha=args.alpha, prefix_len=args.prefix_len
    )
    rows = sample_mixture(
        mix, derive_rng(args.seed, "learn-separated", 0), args.samples
    )
    try:
        learned = learn_mixture_separated(rows, k, params)
    except LearningFailure as exc:
        doc = {"accepted": None, "diagnostics": _json_safe(getattr(exc, "diagnostics", {}))}
        _dump_json(args, doc)
        check = {
            "check": "learning_succeeded",
            "measured": 0.0,
            "bound": 1.0,
            "direction": ">=",
            "holds": False,
        }
        return doc, [check]
    doc = {"accepted": mixture_to_config(learned)}
    _dump_json(args, doc)
    return doc, []


# --- constructions -------------------------------------------------------------------


def _cmd_lowerbound(args):
    pair = build_close_mixtures(args.k, args.mu, args.n, variant=args.variant)
    meta = {
        "k": pair.k,
        "n": pair.n,
        "mu": pair.mu,
        "variant": pair.variant,
        "r": pair.r,
        "lam": pair.lam,
        "claimed_tv_bound": pair.claimed_tv_bound,
        "weight_floor": pair.weight_floor,
    }
    if args.action == "build":
        doc = dict(
            meta,
            positive=mixture_to_config(pair.positive),
            negative=mixture_to_config(pair.negative),
        )
        _dump_json(args, doc)
        return meta, []
    report = verify_close_mixtures(pair)
    checks = [c.as_dict() for c in report.checks]
    doc = dict(meta, report=report.as_dict())
    _dump_json(args, doc)
    return doc, checks


def _cmd_sql(args):
    inst = build_sql_hard_instance(args.ell, args.n)
    if args.action == "build":
        doc = dict(
            inst.as_dict(),
            even=mixture_to_config(inst.even),
            odd=mixture_to_config(inst.odd),
        )
        _dump_json(args, doc)
        return {k: doc[k] for k in ("ell", "n", "k", "phi", "query_cost_floor")}, []
    report = verify_sql_instance(inst)
    doc = report.as_dict()
    _dump_json(args, doc)
    # the separation claim is reported, not asserted, at desk scale
    checks = [report.indist_small_queries.as_dict(), report.placement_cap.as_dict()]
    return doc, checks


# --- oracle service -------------------------------------------------------------------


class _OracleHandler(socketserver.StreamRequestHandler):
    def handle(self):
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace").strip()
            if not line:
                continue
            reply = self.server.answer(line)
            self.wfile.write((reply + "\n").encode())
            self.wfile.flush()
            if self.server.exhausted():
                break


class OracleServer(socketserver.ThreadingTCPServer):
    """Line-protocol placement-query service over one mixture.

    Request  `Q <tau> <elem>:<pos> ...` -> reply `A <value> <cost_total>`;
    anything malformed -> `E <message>` and the connection stays open.
    Connections run concurrently; the shared ledger is lock-protected.
    """

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address, session: LocalQuerySession, max_requests=None):
        super().__init__(address, _OracleHandler)
        self.session = session
        self.max_requests = max_requests
        self.answered = 0
        self._lock = threading.Lock()

    @property
    def port(self) -> int:
        return self.server_address[1]

    def exhausted(self) -> bool:
        with self._lock:
            return self.max_requests is not None and self.answered >= self.max_requests

    def answer(self, line: str) -> str:
        parts = line.split()
        if not parts or parts[0] != "Q" or len(parts) < 3:
            return "E expected: Q <tau> <elem>:<pos> ..."
        try:
            tau = Fraction(parts[1])
        except (ValueError, ZeroDivisionError):
            return f"E bad tolerance {parts[1]!r}"
        pairs = []
        for token in parts[2:]:
            elem, _, pos = token.partition(":")
            try:
                pairs.append((int(elem), int(pos)))
            except ValueError:
                return f"E bad pair {token!r}"
        if len({e for e, _ in pairs}) != len(pairs):
            return "E duplicate element"
        if len({p for _, p in pairs}) != len(pairs):
            return "E duplicate position"
        try:
            with self._lock:
                value = self.session.query(pairs, tau)
                total = float(self.session.ledger.total_cost)
                self.answered += 1
        except MallowsLabError as exc:
            return f"E {exc}"
        if self.exhausted():
            threading.Thread(target=self.shutdown, daemon=True).start()
        return f"A {float(value)} {total}"


def make_oracle_server(mix, host="127.0.0.1", port=0, mode="exact", seed=None,
                       max_requests=None) -> OracleServer:
    session = LocalQuerySession(
        mix, mode=mode, rng=derive_rng(seed if seed is not None else 0, "oracle")
    )
    return OracleServer((host, port), session, max_requests=max_requests)


def _cmd_oracle_serve(args):
    mix = load_mixture(args.config)
    server = make_oracle_server(
        mix, host=args.host, port=args.port, mode=args.mode, seed=args.seed,
        max_requests=args.max_requests,
    )
    print(f"listening on {args.host}:{server.port}", flush=True)
    try:
        server.serve_forever(poll_interval=0.1)
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        ledger = server.session.ledger
        if args.ledger:
            with open(args.ledger, "w") as fh:
                json.dump(_json_safe(ledger.as_dict()), fh, indent=2)
                fh.write("\n")
    return {
        "port": server.port,
        "queries": len(ledger.entries),
        "total_cost": float(ledger.total_cost),
    }, []


# --- parser and entry point -------------------------------------------------------------


def _add_common(p, seed=False, workers=False, out=False):
    p.add_argument("--records", default=None, help="append one JSONL record here")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="master seed")
    if workers:
        p.add_argument("--workers", type=int, default=1, help="thread pool size")
    if out:
        p.add_argument("--out", default=None, help="output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mallows-lab",
        description=__doc__.splitlines()[0],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw seeded samples from a mixture config")
    p.add_argument("--config", required=True, help="mixture JSON")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--trace-components", action="store_true",
                   help="append '# component=i' to every line")
    _add_common(p, seed=True, workers=True, out=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("pmf", help="exact probabilities of a mixture config")
    p.add_argument("--config", required=True)
    p.add_argument("--perm", action="append", help='a line like "2 1 3" (repeatable)')
    p.add_argument("--all", action="store_true", help="emit the full table as CSV")
    _add_common(p, out=True)
    p.set_defaults(func=_cmd_pmf)

    p = sub.add_parser("tv", help="total variation between two mixture configs")
    p.add_argument("--config-a", required=True)
    p.add_argument("--config-b", required=True)
    p.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    p.add_argument("--samples", type=int, default=100_000)
    _add_common(p, seed=True)
    p.set_defaults(func=_cmd_tv)

    p = sub.add_parser("zagier", help="exact-rational determinant identity check")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--phi", required=True, help='rational scale, e.g. "1/2"')
    _add_common(p)
    p.set_defaults(func=_cmd_zagier)

    p = sub.add_parser("kruskal", help="random sweep of the robust rank floors")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--phi", type=float, required=True)
    p.add_argument("--k", type=int, default=3, help="columns per trial")
    p.add_argument("--trials", type=int, default=25)
    _add_common(p, seed=True, workers=True)
    p.set_defaults(func=_cmd_kruskal)

    p = sub.add_parser(
        "identifiability", help="random sweep of the signed-combination floor"
    )
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--mu", type=float, default=0.01)
    p.add_argument("--trials", type=int, default=10)
    _add_common(p, seed=True, workers=True)
    p.set_defaults(func=_cmd_identifiability)

    p = sub.add_parser("learn-general", help="peeling learner over a mixture config")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("exact", "sampled"), default="exact")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--k", type=int, default=None, help="components (default: config)")
    p.add_argument("--alpha", type=float, default=0.2, help="weight floor")
    p.add_argument("--grid-step", type=float, default=0.1)
    p.add_argument("--moment-order", type=int, default=None)
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--negativity-tol", type=float, default=1e-8)
    _add_common(p, seed=True, out=True)
    p.set_defaults(func=_cmd_learn_general)

    p = sub.add_parser(
        "learn-separated", help="prefix learner for well-separated scales"
    )
    p.add_argument("--config", required=True)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--prefix-len", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--gamma", type=float, default=0.1, help="pairwise scale gap")
    p.add_argument("--alpha", type=float, default=0.2, help="weight floor")
    _add_common(p, seed=True, out=True)
    p.set_defaults(func=_cmd_learn_separated)

    p = sub.add_parser(
        "lowerbound", help="close-but-distinct mixture pair (build or verify)"
    )
    p.add_argument("action", choices=("build", "verify"))
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--variant", choices=("k", "2k"), default="k")
    _add_common(p, out=True)
    p.set_defaults(func=_cmd_lowerbound)

    p = sub.add_parser(
        "sql", help="low-order-indistinguishable instance (build or verify)"
    )
    p.add_argument("action", choices=("build", "verify"))
    p.add_argument("--ell", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    _add_common(p, out=True)
    p.set_defaults(func=_cmd_sql)

    p = sub.add_parser("oracle-serve", help="serve placement queries over a socket")
    p.add_argument("--config", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0, help="0 picks a free port")
    p.add_argument("--mode", choices=("exact", "uniform"), default="exact")
    p.add_argument("--max-requests", type=int, default=None,
                   help="shut down after this many answers")
    p.add_argument("--ledger", default=None, help="persist the ledger JSON here")
    _add_common(p, seed=True)
    p.set_defaults(func=_cmd_oracle_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    record = ExperimentRecord(
        command=args.command,
        config=_echo(args),
        seed=getattr(args, "seed", None),
    )
    try:
        results, checks = args.func(args)
    except (MallowsLabError, OSError, ValueError) as exc:
        record.results = {"error": str(exc)}
        record.finish("error")
        if args.records:
            append_record(args.records, record)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    record.results = _json_safe(results)
    record.checks = [_json_safe(c) for c in checks]
    bad = failed_checks(record)
    record.finish("ok" if not bad else "check_failed")
    if args.records:
        append_record(args.records, record)
    if args.command not in _STREAMING and not getattr(args, "out", None):
        print(json.dumps(record.results, sort_keys=True))
    for c in bad:
        print(
            f"check failed: {c.get('check')} measured={c.get('measured')} "
            f"bound={c.get('bound')}",
            file=sys.stderr,
        )
    return 0 if not bad else 1


if __name__ == "__main__":
    sys.exit(main())
