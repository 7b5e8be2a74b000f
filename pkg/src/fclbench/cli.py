"""Command-line client for the experiment service.

The CLI never runs experiments itself: it reads the config file, posts it to
the service, and prints the response. By default the service runs in-process
over an ASGI transport (no server needed); --server or FCLBENCH_SERVER points
it at a remote instance instead. FCLBENCH_OUT becomes an out_dir override,
applied before any --set so explicit flags win.
"""

from __future__ import annotations

import argparse
import os
import sys

import httpx

from .errors import EXIT_IO, EXIT_OK, EXIT_RUNTIME, exit_code_for
from .metrics import fmt17

_KIND_EXIT_CODES = {"config": 2, "io": 3, "runtime": 1}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fclbench",
        description="Deterministic federated continual learning benchmark",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("config", help="path to a dotted-key config file")
        p.add_argument(
            "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
            help="override a config key (repeatable; applied in order)",
        )
        p.add_argument(
            "--server", default=None,
            help="base URL of a running service (default: in-process; env FCLBENCH_SERVER)",
        )

    common(sub.add_parser("run", help="run the experiment for every seed"))
    common(sub.add_parser("compare-schemes", help="run under column, balanced, and shuffled"))
    export = sub.add_parser("export-dataset", help="write the synthetic dataset as text")
    common(export)
    export.add_argument("path", help="output file for the exported examples")
    common(sub.add_parser("validate", help="resolve and print the config"))

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


class _SyncASGITransport(httpx.BaseTransport):
    """Drive an ASGI app from a synchronous client, one event loop per request."""

    def __init__(self, app) -> None:
        self._transport = httpx.ASGITransport(app=app)

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        import asyncio

        async def call() -> httpx.Response:
            response = await self._transport.handle_async_request(request)
            await response.aread()
            return response

        response = asyncio.run(call())
        return httpx.Response(
            status_code=response.status_code,
            headers=response.headers,
            content=response.content,
        )


def _client(server: str | None) -> httpx.Client:
    server = server or os.environ.get("FCLBENCH_SERVER")
    if server:
        return httpx.Client(base_url=server, timeout=600.0)
    from .service import create_app

    # In-process service: the CLI stays a pure HTTP client while needing no
    # separately running server.
    return httpx.Client(
        transport=_SyncASGITransport(create_app()),
        base_url="http://fclbench.internal",
        timeout=600.0,
    )


def _read_config(path: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        print(f"error (io): cannot read config file {path}: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_IO)


def _overrides(args: argparse.Namespace) -> list[str]:
    env_out = os.environ.get("FCLBENCH_OUT")
    prefix = [f"out_dir={env_out}"] if env_out else []
    return prefix + list(args.overrides)


def _post(client: httpx.Client, path: str, payload: dict) -> dict:
    try:
        response = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        print(f"error (runtime): cannot reach service: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_RUNTIME)
    if response.status_code >= 400:
        detail = {}
        try:
            detail = response.json().get("detail", {})
        except ValueError:
            pass
        if isinstance(detail, dict) and "kind" in detail:
            kind = detail.get("kind", "runtime")
            message = detail.get("message", response.text)
        else:
            kind, message = "runtime", response.text
        print(f"error ({kind}): {message}", file=sys.stderr)
        raise SystemExit(_KIND_EXIT_CODES.get(kind, EXIT_RUNTIME))
    return response.json()


def cmd_run(args: argparse.Namespace) -> int:
    payload = {"config_text": _read_config(args.config), "overrides": _overrides(args)}
    with _client(args.server) as client:
        doc = _post(client, "/experiments/run", payload)
    for run in doc["runs"]:
        print(
            f"seed={run['seed']} rounds={run['num_rounds']} "
            f"final_avg_accuracy={fmt17(run['final_avg_accuracy'])} "
            f"out={run['artifact_dir']}"
        )
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    payload = {"config_text": _read_config(args.config), "overrides": _overrides(args)}
    with _client(args.server) as client:
        doc = _post(client, "/experiments/compare-schemes", payload)
    print("scheme mean_final_avg_accuracy per_seed")
    for scheme, result in doc["schemes"].items():
        per_seed = " ".join(
            f"{seed}:{fmt17(acc)}" for seed, acc in result["per_seed_final_avg_accuracy"].items()
        )
        print(f"{scheme} {fmt17(result['mean_final_avg_accuracy'])} {per_seed}")
    print(f"comparison written to {doc['comparison_path']}")
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    payload = {
        "config_text": _read_config(args.config),
        "overrides": _overrides(args),
        "path": args.path,
    }
    with _client(args.server) as client:
        doc = _post(client, "/datasets/export", payload)
    print(
        f"wrote {doc['num_examples']} examples "
        f"({doc['num_classes']} classes, {doc['num_tasks']} tasks) to {doc['path']}"
    )
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    payload = {"config_text": _read_config(args.config), "overrides": _overrides(args)}
    with _client(args.server) as client:
        doc = _post(client, "/configs/validate", payload)
    sys.stdout.write(doc["resolved_text"])
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    handlers = {
        "run": cmd_run,
        "compare-schemes": cmd_compare,
        "export-dataset": cmd_export,
        "validate": cmd_validate,
        "serve": cmd_serve,
    }
    try:
        args = build_parser().parse_args(argv)
        return handlers[args.command](args)
    except SystemExit as exc:  # argparse usage errors and explicit exits
        code = exc.code
        return code if isinstance(code, int) else (0 if code is None else EXIT_RUNTIME)
    except Exception as exc:  # engine errors reached without HTTP wrapping
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
