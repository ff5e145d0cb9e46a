"""Thin HTTP client for the gfdmlink service.

Every subcommand turns its config file plus overrides into a request against
the FastAPI app; with no --server the app is driven in-process through an
ASGI test transport, so no running server is needed.  Exit codes: 0 success,
1 configuration error, 2 more than 10% of trials failed numerically.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import httpx

from .configfile import apply_overrides, load_config_file
from .errors import ConfigurationError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
FAILURE_THRESHOLD = 0.10


def make_client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=httpx.Timeout(10.0, read=None))
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # starlette/httpx pairing deprecation noise
        from starlette.testclient import TestClient  # in-process ASGI bridge

    from .service import app
    return TestClient(app)


def _load_flat(args) -> dict:
    flat = load_config_file(args.config) if args.config else {}
    return apply_overrides(flat, args.set or [])


def _post(client: httpx.Client, path: str, payload) -> dict:
    response = client.post(path, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        print(f"error ({response.status_code}): {detail}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)
    return response.json()


def _write(path: str, text: str):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text, encoding="utf-8")
    print(f"wrote {path}")


def cmd_run(args) -> int:
    flat = _load_flat(args)
    with make_client(args.server) as client:
        body = _post(client, "/campaign/from-flat", flat)
    out_dir = Path(args.out_dir)
    _write(str(out_dir / "trials.csv"), body["trial_csv"])
    _write(str(out_dir / "summary.csv"), body["summary_csv"])
    for row in body["summary"]:
        print(f"snr={row['snr_db']:g} mode={row['mode']} ok={row['trials_ok']} "
              f"mse_cfo={row['mean_mse_cfo']} ber={row['mean_ber']} "
              f"outage={row['outage_prob']}")
    if body["failed_fraction"] > FAILURE_THRESHOLD:
        print(f"numerical failures in {body['failed_fraction']:.1%} of trials", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _flat_to_campaign_payload(flat: dict) -> dict:
    """Expand a flat mapping into the nested campaign payload the service expects."""
    from .configfile import build_campaign_config
    cfg = build_campaign_config(flat)
    return {
        "system": {
            "K": cfg.system.K, "M": cfg.system.M, "U": cfg.system.U, "K_D": cfg.system.K_D,
            "L": cfg.system.L, "L_cp": cfg.system.L_cp, "N_r": cfg.system.N_r,
            "N_s": cfg.system.N_s, "rolloff": cfg.system.rolloff, "P_pil": cfg.system.P_pil,
            "delta": cfg.system.delta, "prototype": cfg.system.prototype,
        },
        "assignment": cfg.assignment,
        "explicit_sets": [[list(r) for r in u] for u in cfg.explicit_sets]
        if cfg.explicit_sets else None,
        "snr_db_list": list(cfg.snr_db_list),
        "trials": cfg.trials,
        "master_seed": cfg.master_seed,
        "cfo_max": cfg.cfo_max,
        "eps_range": list(cfg.eps_range),
        "theta_range_deg": list(cfg.theta_range_deg),
        "outage_threshold": cfg.outage_threshold,
        "modes": list(cfg.modes),
        "crlb": cfg.crlb,
        "rms_delay": cfg.rms_delay,
        "timing_in_csv": cfg.timing_in_csv,
        "workers": cfg.workers,
    }


def cmd_cost_curve(args) -> int:
    flat = _load_flat(args)
    with make_client(args.server) as client:
        campaign = _flat_to_campaign_payload(flat)
        body = _post(client, "/cost-curve", {
            "campaign": campaign,
            "snr_db": args.snr_db,
            "trial": args.trial,
            "user": args.user,
            "phi_step": args.step,
        })
    _write(args.out, body["csv"])
    return EXIT_OK


def cmd_crlb(args) -> int:
    flat = _load_flat(args)
    with make_client(args.server) as client:
        campaign = _flat_to_campaign_payload(flat)
        body = _post(client, "/crlb", campaign)
    _write(args.out, body["csv"])
    for row in body["rows"]:
        print(f"snr={row['snr_db']:g} mean_crlb_cfo={row['mean_crlb_cfo']:.6e}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    with make_client(args.server) as client:
        body = _post(client, "/selftest", {})
    for check in body["checks"]:
        status = "PASS" if check["ok"] else "FAIL"
        print(f"{status} {check['name']}: {check['detail']}")
    return EXIT_OK if body["passed"] else EXIT_CONFIG


def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("gfdmlink.service:app", host=args.host, port=args.port)
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("-c", "--config", help="flat key=value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (repeatable)")
    parser.add_argument("--server", help="base URL of a running service; "
                                         "default runs the service in-process")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfdmlink",
                                     description="Multiuser SIMO GFDM link simulator client")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a Monte-Carlo campaign and write CSVs")
    _add_common(p_run)
    p_run.add_argument("--out-dir", default="results", help="output directory")
    p_run.set_defaults(func=cmd_run)

    p_curve = sub.add_parser("cost-curve", help="dump CFO cost samples for one trial")
    _add_common(p_curve)
    p_curve.add_argument("--snr-db", type=float, required=True,
                         help="SNR point (must be in snr_db_list)")
    p_curve.add_argument("--trial", type=int, default=0)
    p_curve.add_argument("--user", type=int, default=1, help="1-based user index")
    p_curve.add_argument("--step", type=float, default=0.001, help="phi grid step")
    p_curve.add_argument("--out", default="cost_curve.csv")
    p_curve.set_defaults(func=cmd_cost_curve)

    p_crlb = sub.add_parser("crlb", help="compute the CFO CRLB curve only")
    _add_common(p_crlb)
    p_crlb.add_argument("--out", default="crlb.csv")
    p_crlb.set_defaults(func=cmd_crlb)

    p_self = sub.add_parser("selftest", help="run the invariant suite")
    p_self.add_argument("--server", help="base URL of a running service")
    p_self.set_defaults(func=cmd_selftest)

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except httpx.HTTPError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
