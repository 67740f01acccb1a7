"""Command-line front end tying the library together for demos and CI.

Subcommands
-----------
run           execute the two-party scoring protocol on a fixture
score-oracle  score the same fixture in the clear (no protocol)
plan-audit    cheapest spot-check plan meeting a detection target
detect        exact detection probability of a given (m, s) plan
market-demo   apply a marketplace transaction script to a fresh ledger
make-fixture  write a synthetic model + dataset pair to a directory

All results are JSON on stdout; logs go to stderr.  Given the same
``--seed`` two invocations produce byte-identical stdout.  Exit codes:
0 success, 2 protocol abort or usage error, 1 any other failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path

from .errors import BlindscoreError, ProtocolAbort, TxRejected

log = logging.getLogger("blindscore")

_EXIT_OK = 0
_EXIT_ERROR = 1
_EXIT_ABORT = 2

# RunConfig knobs a --config file may override; n/num_classes apply only
# when the CLI synthesizes the dataset itself (bundled fixtures).
_CONFIG_KEYS = frozenset(
    {"n", "k", "num_classes", "num_challenges", "delta", "jl_dim", "timeout", "audit_b", "audit_c"}
)
_GENERATOR_KEYS = ("n", "num_classes")

_BUNDLED_FIXTURES = ("tiny", "tiny-jl", "mnist-like")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _seed_bytes(text: str) -> bytes:
    return text.encode("utf-8")


def _fraction_arg(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"{text!r} is not a number (use 0.1 or 1/10)")


def _frac_json(value: Fraction) -> dict:
    return {"value": float(value), "exact": f"{value.numerator}/{value.denominator}"}


# --- fixture assembly ----------------------------------------------------------


def _load_config(path, parser) -> dict:
    if not path:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        parser.error(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        parser.error(f"config file is not valid JSON: {exc}")
    if not isinstance(obj, dict):
        parser.error("config file must hold a JSON object")
    unknown = sorted(set(obj) - _CONFIG_KEYS)
    if unknown:
        parser.error(f"unknown config keys {unknown}; allowed: {sorted(_CONFIG_KEYS)}")
    return obj


def _scenario_kwargs(overrides: dict) -> dict:
    kwargs = {
        key: overrides[key]
        for key in ("k", "num_challenges", "delta", "jl_dim", "timeout")
        if key in overrides
    }
    for key in ("audit_b", "audit_c"):
        if key in overrides:
            kwargs[key] = tuple(overrides[key])
    return kwargs


def _load_fixture_dir(path: Path, parser):
    names = ("model.fxm", "dataset.fxd", "meta.json")
    missing = [name for name in names if not (path / name).is_file()]
    if missing:
        parser.error(f"fixture directory {path} is missing {', '.join(missing)}")
    from .layers import Model
    from .selection import Dataset

    try:
        meta = json.loads((path / "meta.json").read_text(encoding="utf-8"))
        cut_bc = meta["cut_bc"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        parser.error(f"fixture meta.json is unusable: {exc}")
    if not isinstance(cut_bc, int):
        parser.error("fixture meta.json needs an integer cut_bc")
    model = Model.load(path / "model.fxm")
    dataset = Dataset.load(path / "dataset.fxd")
    return model, dataset, cut_bc


def _synthesize_model(input_shape, layers, dataset, seed: bytes):
    from .fixedpoint import FixedTensor
    from .fixtures import fill_weights, temper_logits
    from .rng import DetRng

    model = fill_weights(input_shape, layers, DetRng(seed, b"model").take(16))
    probes = [
        FixedTensor.from_raw(dataset.features.raw[i].reshape(input_shape))
        for i in range(min(dataset.n, 8))
    ]
    return temper_logits(model, probes)


def _build_scenario(args, parser):
    """Resolve --fixture/--config/--seed into protocol inputs."""

    from . import fixtures

    overrides = _load_config(getattr(args, "config", None), parser)
    seed = _seed_bytes(args.seed)
    name = args.fixture

    as_path = Path(name)
    if as_path.is_dir():
        model, dataset, cut_bc = _load_fixture_dir(as_path, parser)
        dropped = [key for key in _GENERATOR_KEYS if key in overrides]
        if dropped:
            log.warning("config keys %s only apply to bundled fixtures; ignored", dropped)
        kwargs = _scenario_kwargs(overrides)
        kwargs.setdefault("k", min(4, dataset.n))
        return fixtures.scenario(model, dataset, cut_bc, seed=seed, **kwargs)

    if name in ("tiny", "tiny-jl"):
        return fixtures.protocol_fixture(
            n=overrides.get("n", 24),
            k=overrides.get("k", 4),
            num_classes=overrides.get("num_classes", 4),
            num_challenges=overrides.get("num_challenges", 8),
            delta=overrides.get("delta", 0.0),
            jl_dim=overrides.get("jl_dim", 8 if name == "tiny-jl" else None),
            seed=seed,
            timeout=overrides.get("timeout", 20.0),
        )

    if name == "mnist-like":
        input_shape, layers, cut_bc = fixtures.architecture("lenet-xs")
        n = overrides.get("n", 16)
        num_classes = overrides.get("num_classes", 10)
        dataset = fixtures.digit_dataset(n, input_shape, num_classes, seed)
        model = _synthesize_model(input_shape, layers, dataset, seed)
        kwargs = _scenario_kwargs(overrides)
        kwargs.setdefault("k", min(4, n))
        return fixtures.scenario(model, dataset, cut_bc, seed=seed, **kwargs)

    parser.error(
        f"unknown fixture {name!r}: not one of {list(_BUNDLED_FIXTURES)} and not a fixture directory"
    )


# --- subcommands --------------------------------------------------------------


def cmd_run(args, parser) -> int:
    from .protocol import adversary_names, get_adversary, run_protocol

    alice_inputs, bob_inputs, config = _build_scenario(args, parser)
    adversary = None
    if args.adversary:
        try:
            adversary = get_adversary(args.adversary)
        except KeyError:
            parser.error(
                f"unknown adversary {args.adversary!r}; choose from: " + ", ".join(adversary_names())
            )
    transport = "memory" if args.transport == "inproc" else args.transport
    log.info(
        "running protocol: fixture=%s transport=%s adversary=%s",
        args.fixture,
        transport,
        args.adversary or "none",
    )
    try:
        report, transcript = run_protocol(
            alice_inputs, bob_inputs, config, transport=transport, adversary=adversary
        )
    except ProtocolAbort as exc:
        if args.transcript_out and exc.transcript is not None:
            exc.transcript.save(args.transcript_out)
            log.info("abort transcript written to %s", args.transcript_out)
        log.error("Abort: Stage %s: %s", exc.stage, exc.reason)
        _emit({"abort": {"stage": exc.stage, "reason": exc.reason}})
        return _EXIT_ABORT
    if args.transcript_out:
        transcript.save(args.transcript_out)
        log.info("transcript written to %s", args.transcript_out)
    log.info("accepted after %d frames", len(transcript.frames))
    _emit(json.loads(report.to_json()))
    return _EXIT_OK


def cmd_score_oracle(args, parser) -> int:
    from .protocol.reference import score_reference

    alice_inputs, bob_inputs, config = _build_scenario(args, parser)
    report, _details = score_reference(alice_inputs, bob_inputs, config)
    log.info("scored %d rows in the clear (k=%d)", bob_inputs.dataset.n, config.k)
    _emit(json.loads(report.to_json()))
    return _EXIT_OK


def cmd_plan_audit(args, parser) -> int:
    from .audits import plan_audit

    plan = plan_audit(args.num_inputs, args.rho, args.num_layers, args.target)
    budget = Fraction(plan.cost, args.num_inputs * args.num_layers)
    log.info("plan: m=%d s=%d detection=%s", plan.m, plan.s, float(plan.probability))
    _emit(
        {
            "m": plan.m,
            "s": plan.s,
            "cost": plan.cost,
            "detection_probability": _frac_json(plan.probability),
            "budget_fraction": _frac_json(budget),
            "num_inputs": args.num_inputs,
            "num_layers": args.num_layers,
            "rho": str(args.rho),
            "target": str(args.target),
        }
    )
    return _EXIT_OK


def cmd_detect(args, parser) -> int:
    from .audits import detection_probability, simulate_detection

    probability = detection_probability(args.num_inputs, args.rho, args.num_layers, args.m, args.s)
    body = {
        "m": args.m,
        "s": args.s,
        "cost": args.m * args.s,
        "detection_probability": _frac_json(probability),
        "num_inputs": args.num_inputs,
        "num_layers": args.num_layers,
        "rho": str(args.rho),
    }
    if args.simulate:
        body["simulated"] = simulate_detection(
            args.num_inputs, args.rho, args.num_layers, args.m, args.s,
            runs=args.simulate, seed=_seed_bytes(args.seed),
        )
    _emit(body)
    return _EXIT_OK


def _market_script(name: str, seed: bytes):
    """The bundled demo scripts: honest plus two canonical failures."""

    from . import ledger

    state, txs = ledger.honest_demo(seed=seed)
    if name == "honest":
        return state, txs
    if name == "mismatched-quote":
        txs = list(txs)
        index = next(i for i, tx in enumerate(txs) if tx.kind == "submit-quote")
        payload = dict(txs[index].payload)
        payload["com_x"] = hashlib.sha256(seed + b":forged-commitment").hexdigest()
        txs[index] = ledger.LedgerTx("submit-quote", txs[index].signer, payload)
        return state, txs
    if name == "withheld-key":
        kept = [tx for tx in txs if tx.kind != "reveal-key"]
        lock = next(tx for tx in txs if tx.kind == "post-hashlock")
        kept.append(ledger.LedgerTx("tick", lock.signer, {"blocks": lock.payload["deadline"]}))
        kept.append(ledger.LedgerTx("release", lock.payload["buyer"], {"lock_id": lock.payload["lock_id"]}))
        return state, kept
    raise AssertionError(name)


def _load_market_script(path: Path, seed: bytes):
    from . import ledger

    state, _ = ledger.honest_demo(seed=seed)  # same genesis accounts/authorities
    txs = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise TxRejected(f"cannot read script file: {exc}")
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            txs.append(ledger.tx_from_json(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise TxRejected(f"script line {lineno} is not valid JSON: {exc}")
    return state, txs


def cmd_market_demo(args, parser) -> int:
    from . import ledger

    seed = _seed_bytes(args.seed)
    script = args.script
    if script in ("honest", "mismatched-quote", "withheld-key"):
        state, txs = _market_script(script, seed)
    else:
        state, txs = _load_market_script(Path(script), seed)

    final, tx_log = ledger.run_script(state, txs)  # strict: rejection raises with its index
    if args.log_out:
        ledger.save_tx_log(args.log_out, tx_log)
        log.info("transaction log written to %s", args.log_out)

    lock_statuses = {lid: rec["status"] for lid, rec in final.hashlocks.items()}
    if "settled" in lock_statuses.values():
        outcome = "settled"
    elif "refunded" in lock_statuses.values():
        outcome = "refunded"
    else:
        outcome = "completed"
    log.info(
        "applied %d transactions; outcome=%s total_value=%d",
        len(tx_log), outcome, ledger.total_value(final),
    )
    _emit({"outcome": outcome, "state": ledger.state_to_json(final)})
    return _EXIT_OK


def cmd_make_fixture(args, parser) -> int:
    from . import fixtures

    seed = _seed_bytes(args.seed)
    if args.architecture == "tiny":
        num_classes = args.classes if args.classes is not None else 4
        input_shape, layers, cut_bc = fixtures.tiny_architecture(num_classes)
    else:
        input_shape, layers, cut_bc = fixtures.architecture(args.architecture)
        forced = 100 if args.architecture == "cnn5" else 10
        num_classes = args.classes if args.classes is not None else forced
        if num_classes != forced:
            parser.error(f"{args.architecture} has {forced} outputs; --classes must be {forced}")

    if args.kind == "digits":
        if num_classes > 10:
            parser.error("digit images support at most 10 classes; use --kind gaussians")
        dataset = fixtures.digit_dataset(args.n, input_shape, num_classes, seed)
    else:
        dim = 1
        for side in input_shape:
            dim *= side
        dataset = fixtures.blob_dataset(args.n, dim, num_classes, seed)

    model = _synthesize_model(input_shape, layers, dataset, seed)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.fxm")
    dataset.save(out / "dataset.fxd")
    meta = {
        "format": "blindscore-fixture/1",
        "architecture": args.architecture,
        "cut_bc": cut_bc,
        "kind": args.kind,
        "n": args.n,
        "num_classes": num_classes,
        "input_shape": list(input_shape),
        "seed": seed.hex(),
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    files = {}
    for name in ("model.fxm", "dataset.fxd", "meta.json"):
        files[name] = hashlib.sha256((out / name).read_bytes()).hexdigest()
    log.info("fixture written to %s (%d parameters)", out, model.param_count())
    _emit(
        {
            "out": str(out),
            "architecture": args.architecture,
            "kind": args.kind,
            "cut_bc": cut_bc,
            "param_count": model.param_count(),
            "n": dataset.n,
            "dim": dataset.dim,
            "num_classes": num_classes,
            "input_shape": list(input_shape),
            "files": files,
        }
    )
    return _EXIT_OK


# --- wiring ---------------------------------------------------------------------


def _add_fixture_args(sub, *, seed_default="blindscore-cli"):
    sub.add_argument(
        "--fixture",
        default="tiny",
        metavar="NAME|DIR",
        help="bundled fixture name (%s) or a make-fixture output directory"
        % ", ".join(_BUNDLED_FIXTURES),
    )
    sub.add_argument("--config", metavar="PATH", help="JSON file overriding run parameters")
    sub.add_argument("--seed", default=seed_default, help="determinism seed (text)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blindscore", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="subcommand", required=True, metavar="COMMAND")

    run_p = sub.add_parser("run", help="execute the two-party scoring protocol on a fixture")
    _add_fixture_args(run_p)
    run_p.add_argument(
        "--transport", choices=("inproc", "socket"), default="inproc",
        help="inproc: coordinated state machines in one process; socket: parties on localhost TCP",
    )
    run_p.add_argument("--adversary", metavar="NAME", help="inject a scripted deviation")
    run_p.add_argument("--transcript-out", metavar="PATH", help="save the signed message transcript")
    run_p.set_defaults(func=cmd_run)

    oracle_p = sub.add_parser("score-oracle", help="score the fixture in the clear (no protocol)")
    _add_fixture_args(oracle_p)
    oracle_p.set_defaults(func=cmd_score_oracle)

    plan_p = sub.add_parser("plan-audit", help="cheapest spot-check plan meeting a detection target")
    plan_p.add_argument("num_inputs", type=int, metavar="N")
    plan_p.add_argument("num_layers", type=int, metavar="L")
    plan_p.add_argument("rho", type=_fraction_arg, metavar="RHO")
    plan_p.add_argument("target", type=_fraction_arg, metavar="TARGET")
    plan_p.set_defaults(func=cmd_plan_audit)

    detect_p = sub.add_parser("detect", help="exact detection probability of an (m, s) plan")
    detect_p.add_argument("num_inputs", type=int, metavar="N")
    detect_p.add_argument("num_layers", type=int, metavar="L")
    detect_p.add_argument("rho", type=_fraction_arg, metavar="RHO")
    detect_p.add_argument("m", type=int, metavar="M")
    detect_p.add_argument("s", type=int, metavar="S")
    detect_p.add_argument("--simulate", type=int, metavar="RUNS", help="add a Monte-Carlo estimate")
    detect_p.add_argument("--seed", default="blindscore-cli", help="simulation seed (text)")
    detect_p.set_defaults(func=cmd_detect)

    market_p = sub.add_parser("market-demo", help="apply a marketplace transaction script")
    market_p.add_argument(
        "--script", default="honest", metavar="NAME|PATH",
        help="honest, mismatched-quote, withheld-key, or an NDJSON transaction file",
    )
    market_p.add_argument("--seed", default="market-demo", help="script/genesis seed (text)")
    market_p.add_argument("--log-out", metavar="PATH", help="save the per-transaction log (NDJSON)")
    market_p.set_defaults(func=cmd_market_demo)

    make_p = sub.add_parser("make-fixture", help="write a synthetic model + dataset pair")
    make_p.add_argument("--out", required=True, metavar="DIR")
    make_p.add_argument(
        "--architecture", default="tiny", choices=("tiny", "lenet-xs", "lenet5", "cnn5"),
    )
    make_p.add_argument("--kind", choices=("gaussians", "digits"), default="gaussians")
    make_p.add_argument("--n", type=int, default=24, help="dataset rows")
    make_p.add_argument("--classes", type=int, default=None, help="label classes (fixed per architecture)")
    make_p.add_argument("--seed", default="blindscore-cli", help="determinism seed (text)")
    make_p.set_defaults(func=cmd_make_fixture)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        force=True,  # rebind to the current stderr on every invocation
    )
    try:
        return args.func(args, parser)
    except ProtocolAbort as exc:
        log.error("Abort: Stage %s: %s", exc.stage, exc.reason)
        _emit({"abort": {"stage": exc.stage, "reason": exc.reason}})
        return _EXIT_ABORT
    except TxRejected as exc:
        body = {"error": str(exc)}
        index = getattr(exc, "script_index", None)
        if index is not None:
            body["tx_index"] = index
        log.error("transaction rejected: %s", exc)
        _emit(body)
        return _EXIT_ERROR
    except BlindscoreError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        _emit({"error": str(exc), "kind": type(exc).__name__})
        return _EXIT_ERROR
    except OSError as exc:
        log.error("%s", exc)
        _emit({"error": str(exc)})
        return _EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
