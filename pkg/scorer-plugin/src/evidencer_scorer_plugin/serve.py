"""Request loop for the scorer wire protocol.

JSON lines on stdin/stdout. The engine opens with
``{"proto": "evidencer-scorer", "version": 1, "variant": ...}``; the plugin
replies ``{"ok": true, "name": ...}`` and then answers each
``{"id", "motion", "sentence", "masked"}`` request with
``{"id", "score"}``, in order. A malformed request yields an error response
carrying the offending id (or null) and the loop continues; closing stdin
shuts the plugin down with exit code 0.
"""

from __future__ import annotations

import argparse
import importlib
import json
import sys

from .lexical import VARIANT_FIELDS, VARIANTS, lexical_features, load_model, score_logistic

PROTO_NAME = "evidencer-scorer"
PROTO_VERSION = 1


class RequestError(ValueError):
    pass


def _require_fields(request: dict, variant: str) -> dict[str, str]:
    fields = {}
    for field in VARIANT_FIELDS[variant]:
        value = request.get(field)
        if not isinstance(value, str):
            raise RequestError(f"missing or non-string field {field!r}")
        fields[field] = value
    return fields


def build_scorer(args):
    """Returns (name, fn) where fn(request, variant) -> float in [0, 1]."""
    if args.mode == "echo":
        if not 0.0 <= args.value <= 1.0:
            raise SystemExit("--value must be in [0, 1]")
        return "echo", lambda request, variant: args.value

    if args.mode == "logistic":
        if not args.model:
            raise SystemExit("--mode logistic requires --model")
        bias, weights = load_model(args.model)

        def score(request, variant):
            fv = lexical_features(variant, _require_fields(request, variant))
            return score_logistic(bias, weights, fv)

        return "lexical-logistic", score

    # external-model: thin adapter hook for heavyweight scorers that live in
    # their own package; the adapter is "module:callable" taking
    # (variant, fields dict) and returning a float
    if not args.adapter:
        raise SystemExit("--mode external-model requires --adapter module:callable")
    module_name, _, attr = args.adapter.partition(":")
    try:
        adapter = getattr(importlib.import_module(module_name), attr)
    except (ImportError, AttributeError) as exc:
        raise SystemExit(f"cannot load adapter {args.adapter!r}: {exc}")

    def score(request, variant):
        value = float(adapter(variant, _require_fields(request, variant)))
        if not 0.0 <= value <= 1.0:
            raise RequestError(f"adapter returned {value}, outside [0, 1]")
        return value

    return f"external-model:{args.adapter}", score


def serve(args, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout

    def reply(payload):
        stdout.write(json.dumps(payload) + "\n")
        stdout.flush()

    handshake_line = stdin.readline()
    if not handshake_line:
        return 0
    try:
        handshake = json.loads(handshake_line)
        assert isinstance(handshake, dict)
    except (json.JSONDecodeError, AssertionError):
        reply({"ok": False, "error": "handshake is not a JSON object"})
        return 2
    if handshake.get("proto") != PROTO_NAME or handshake.get("version") != PROTO_VERSION:
        reply({
            "ok": False,
            "error": f"unsupported protocol "
                     f"{handshake.get('proto')!r} v{handshake.get('version')!r}",
        })
        return 2

    variant = handshake.get("variant") or args.variant or "S+M"
    if variant not in VARIANTS:
        reply({"ok": False, "error": f"unknown variant {variant!r}"})
        return 2
    if args.variant and variant != args.variant:
        reply({
            "ok": False,
            "error": f"engine wants variant {variant!r}, "
                     f"plugin is pinned to {args.variant!r}",
        })
        return 2

    name, score = build_scorer(args)
    reply({"ok": True, "name": name})

    for line in stdin:
        if not line.strip():
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            reply({"id": None, "error": "invalid JSON request"})
            continue
        if not isinstance(request, dict) or not isinstance(request.get("id"), str):
            reply({"id": None, "error": "request must be an object with a string id"})
            continue
        try:
            reply({"id": request["id"], "score": score(request, variant)})
        except RequestError as exc:
            reply({"id": request["id"], "error": str(exc)})
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="evidencer-scorer-plugin",
        description="Reference scorer speaking the evidencer wire protocol.",
    )
    parser.add_argument("--variant", choices=VARIANTS,
                        help="pin the input variant; refuses a mismatching handshake")
    parser.add_argument("--mode", choices=("echo", "logistic", "external-model"),
                        default="echo")
    parser.add_argument("--value", type=float, default=0.25,
                        help="constant score for echo mode")
    parser.add_argument("--model", help="model file for logistic mode")
    parser.add_argument("--adapter", help="module:callable for external-model mode")
    args = parser.parse_args(argv)
    build_scorer(args)  # fail fast on bad configuration
    return serve(args)


if __name__ == "__main__":
    sys.exit(main())
