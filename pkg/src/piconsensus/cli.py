"""Thin command-line client for the simulation service.

Every subcommand builds an HTTP request from local files and talks to
the service API.  By default the app is mounted in-process (no server
needed); ``--server URL`` points the same requests at a remote
instance.  ``serve`` runs the service under uvicorn.

Exit codes: 0 success, 2 usage, 3 file I/O, 4 scenario/trajectory
validation, 5 divergence, 6 service unreachable or server fault.
"""

from __future__ import annotations

import argparse
import asyncio
import sys
from pathlib import Path

import httpx
import yaml

EXIT_IO = 3
EXIT_VALIDATION = 4
EXIT_DIVERGENCE = 5
EXIT_SERVICE = 6


class CliFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliFailure(EXIT_IO, f"cannot read {path}: {exc}")


def _write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliFailure(EXIT_IO, f"cannot write {path}: {exc}")


def _load_document(path) -> dict:
    try:
        doc = yaml.safe_load(_read_text(path))
    except yaml.YAMLError as exc:
        raise CliFailure(EXIT_VALIDATION, f"cannot parse {path}: {exc}")
    if not isinstance(doc, dict):
        raise CliFailure(EXIT_VALIDATION, f"{path}: scenario document must be a mapping")
    return doc


def _fail_from_response(resp: httpx.Response) -> CliFailure:
    try:
        detail = resp.json().get("detail")
    except ValueError:
        detail = None
    if isinstance(detail, dict):
        if detail.get("kind") == "divergence":
            return CliFailure(EXIT_DIVERGENCE, detail.get("message", "simulation diverged"))
        if detail.get("kind") == "validation":
            return CliFailure(EXIT_VALIDATION, "\n".join(detail.get("errors", ["invalid input"])))
    if resp.status_code == 422 and isinstance(detail, list):
        lines = []
        for entry in detail:
            loc = ".".join(str(p) for p in entry.get("loc", []) if p != "body")
            lines.append(f"{loc}: {entry.get('msg', 'invalid')}")
        return CliFailure(EXIT_VALIDATION, "\n".join(lines) or "invalid request")
    return CliFailure(EXIT_SERVICE, f"service error (HTTP {resp.status_code}): {resp.text[:500]}")


def _post(server: str | None, path: str, payload: dict) -> dict:
    async def go():
        if server:
            transport, base = None, server
        else:
            from .service.app import app

            transport, base = httpx.ASGITransport(app=app), "http://piconsensus.internal"
        async with httpx.AsyncClient(transport=transport, base_url=base, timeout=None) as client:
            return await client.post(path, json=payload)

    try:
        resp = asyncio.run(go())
    except httpx.HTTPError as exc:
        raise CliFailure(EXIT_SERVICE, f"cannot reach service: {exc}")
    if resp.status_code != 200:
        raise _fail_from_response(resp)
    return resp.json()


def _default_report_path(csv_path: str) -> Path:
    p = Path(csv_path)
    return p.with_suffix(".report") if p.suffix else p.with_name(p.name + ".report")


def cmd_simulate(args) -> int:
    doc = _load_document(args.scenario)
    payload = {"scenario": doc}
    if args.dt is not None:
        payload["dt"] = args.dt
    if args.horizon is not None:
        payload["horizon"] = args.horizon
    data = _post(args.server, "/simulate", payload)
    _write_text(args.out, data["csv"])
    report_path = args.report or _default_report_path(args.out)
    report = data["report"]
    _write_text(report_path, report["text"])
    print(f"predicted consensus {report['predicted_consensus']:.6f}, "
          f"final spread {report['final_spread']:.3g}")
    print(f"wrote {args.out} and {report_path}")
    return 0


def cmd_analyze(args) -> int:
    payload = {"scenario": _load_document(args.scenario), "csv": _read_text(args.csv)}
    data = _post(args.server, "/analyze", payload)
    text = data["report"]["text"]
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(text)
    return 0


def cmd_graph_check(args) -> int:
    doc = _load_document(args.scenario)
    graph = doc.get("graph")
    if not isinstance(graph, dict):
        raise CliFailure(EXIT_VALIDATION, f"{args.scenario}: missing 'graph' section")
    data = _post(args.server, "/graph-check", {"graph": graph})
    print(f"strongly connected: {'true' if data['strongly_connected'] else 'false'}")
    print("laplacian:")
    for row in data["laplacian"]:
        print("  " + " ".join(format(v, "g") for v in row))
    if data["omega"] is not None:
        print("omega = " + " ".join(format(v, ".4f") for v in data["omega"]))
    else:
        print("omega = (undefined: graph is not strongly connected)")
    return 0


def cmd_predict(args) -> int:
    data = _post(args.server, "/predict", {"scenario": _load_document(args.scenario)})
    print(f"{data['consensus']:.6f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="piconsensus",
        description="Simulate leaderless consensus of nonlinear agents with unknown control directions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_server(p):
        p.add_argument("--server", metavar="URL", default=None,
                       help="remote service URL (default: run the service in-process)")

    p = sub.add_parser("simulate", help="run a scenario, write trajectory CSV and report")
    p.add_argument("scenario", help="scenario file (YAML)")
    p.add_argument("--out", required=True, help="trajectory CSV output path")
    p.add_argument("--report", default=None, help="report output path (default: CSV path with .report)")
    p.add_argument("--dt", type=float, default=None, help="override integration step")
    p.add_argument("--horizon", type=float, default=None, help="override simulation horizon")
    p.add_argument("--seedless", action="store_true",
                   help="accepted for compatibility; runs are deterministic and use no randomness")
    add_server(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("analyze", help="recompute the report from a stored trajectory CSV")
    p.add_argument("csv", help="trajectory CSV produced by simulate")
    p.add_argument("scenario", help="scenario file the trajectory came from")
    p.add_argument("--out", default=None, help="also write the report to this path")
    add_server(p)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("graph-check", help="print connectivity, Laplacian and omega for a scenario's graph")
    p.add_argument("scenario")
    add_server(p)
    p.set_defaults(fn=cmd_graph_check)

    p = sub.add_parser("predict", help="print the consensus value omega . xbar")
    p.add_argument("scenario")
    add_server(p)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except CliFailure as exc:
        print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
