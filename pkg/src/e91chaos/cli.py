"""Command-line entry point.

Exit codes: 0 success, 2 usage or parse error, 3 security abort (CHSH anomaly),
4 verification failure. Informational timings go to stderr so stdout stays a
pure function of the flags, input files and --seed.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import chaos, cipher, e91, imageio, metrics
from .channel import SessionAborted, run_loopback, run_two_party_session
from .quantum import Angle

EXIT_OK, EXIT_USAGE, EXIT_ABORT, EXIT_VERIFY = 0, 2, 3, 4
# accept-anything threshold used by --force on the networked path
_NO_CHECK = 1e-12


class UsageError(Exception):
    pass


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return value


def _probability(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return value


def _seed(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _angles(text):
    try:
        return tuple(Angle.parse(t) for t in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


class Output:
    def __init__(self, as_json: bool):
        self.as_json = as_json
        self.data: dict = {}

    def line(self, key, value, text=None):
        self.data[key] = value
        if not self.as_json:
            print(text if text is not None else f"{key}: {value}")

    def result(self, text):
        # the verdict line is printed bare so scripts can match it exactly
        self.line("result", text, text)

    def flush(self):
        if self.as_json:
            print(json.dumps(self.data))


def _timing(stages: dict) -> None:
    parts = ", ".join(f"{k}={v * 1e3:.2f}" for k, v in stages.items())
    print(f"timing ms (informational, not a benchmark): {parts}", file=sys.stderr)


def _eve_config(args):
    if args.eve is None:
        return None
    kwargs = {"intercept_probability": args.eve, "target": args.eve_target}
    if args.eve_bases:
        kwargs["basis_set"] = args.eve_bases
    return e91.EveConfig(**kwargs)


def _report_session(out: Output, transcript, threshold):
    n = len(transcript.sifted_key_alice)
    out.line("pairs", transcript.config.num_pairs)
    out.line("sifted_bits", n)
    out.line("qber", e91.qber(transcript) if n else None)
    try:
        report = e91.estimate_chsh(transcript)
    except e91.InsufficientCounts as exc:
        out.line("s_value", None, f"S: unavailable ({exc})")
        out.line("verdict", "ANOMALY")
        return True
    out.line("s_value", report.s_value, f"S: {report.s_value:.4f}")
    anomaly = e91.detect_eavesdropper(report, threshold)
    out.line("verdict", "ANOMALY" if anomaly else "OK")
    return anomaly


def cmd_qkd_run(args, out):
    config = e91.SessionConfig(args.pairs, args.seed, _eve_config(args))
    transcript = e91.run_session(config, workers=args.threads)
    if args.out:
        Path(args.out).write_text(transcript.to_json())
    anomaly = _report_session(out, transcript, args.threshold)
    return EXIT_ABORT if anomaly else EXIT_OK


def cmd_qkd_net(args, out):
    config = e91.SessionConfig(args.pairs, args.seed, _eve_config(args))
    try:
        result = run_two_party_session(args.role, args.endpoint, config, args.threshold, args.timeout)
    except SessionAborted as exc:
        out.line("verdict", f"ABORTED: {exc.reason}")
        return EXIT_ABORT
    if args.role == "source":
        if args.out:
            Path(args.out).write_text(result.transcript.to_json())
        out.line("session_id", result.session_id)
        out.line("verdicts", result.verdicts, f"verdicts: {json.dumps(result.verdicts)}")
        aborted = any(v["type"] == "ABORT" for v in result.verdicts.values())
        return EXIT_ABORT if aborted else EXIT_OK
    if args.out:
        Path(args.out).write_text(result.sifted_key + "\n")
    out.line("sifted_bits", len(result.sifted_key))
    out.line("s_value", result.report.s_value, f"S: {result.report.s_value:.4f}")
    out.line("verdict", "OK")
    return EXIT_OK


def _load_transcript(path):
    try:
        return e91.SessionTranscript.from_json(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"no such transcript: {path}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed transcript {path}: {exc}") from None


def cmd_keygen(args, out):
    transcript = _load_transcript(args.transcript)
    anomaly = _report_session(out, transcript, args.threshold)
    if anomaly and not args.force:
        out.line("result", "refused", "refusing to write a key from an anomalous session (use --force to override)")
        return EXIT_ABORT
    key = transcript.sifted_key_alice
    Path(args.out).write_text(key + "\n")
    out.line("key_bits", len(key))
    return EXIT_OK


def _load_key(path):
    try:
        return chaos.parse_key(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"no such key file: {path}") from None


def _load_image(path):
    try:
        return imageio.load_image(path)
    except FileNotFoundError:
        raise UsageError(f"no such image: {path}") from None


def cmd_params(args, out):
    params = chaos.derive_params(_load_key(args.key))
    if args.json:
        out.data.update(json.loads(params.to_json()))
    else:
        print(f"x0: {params.x0!r}")
        print(f"r: {params.r!r}")
    return EXIT_OK


def cmd_crypt(args, out):
    image = _load_image(args.image)
    key = _load_key(args.key)
    t0 = time.perf_counter()
    result = cipher.encrypt(image, key, burn_in=args.burn_in)
    elapsed = time.perf_counter() - t0
    imageio.save_pgm(result, args.out)
    out.line("image", f"{image.width}x{image.height}")
    out.line("out", str(args.out))
    _timing({args.command: elapsed})
    return EXIT_OK


def cmd_analyze(args, out):
    plain, ciph = _load_image(args.plain), _load_image(args.cipher)
    report = metrics.analyze(plain, ciph)
    out.line("entropy_plain", report.entropy_plain, f"entropy(plain): {report.entropy_plain:.4f}")
    out.line("entropy_cipher", report.entropy_bits, f"entropy(cipher): {report.entropy_bits:.4f}")
    out.line("npcr", report.npcr_percent, f"NPCR: {report.npcr_percent:.4f}%")
    out.line("uaci", report.uaci_percent, f"UACI: {report.uaci_percent:.4f}%")
    if args.hist:
        Path(args.hist).write_text(metrics.histogram_csv(report.histogram))
    if args.csv:
        Path(args.csv).write_text(metrics.reports_csv([report], [Path(args.cipher).name]))
    return EXIT_OK


def cmd_demo(args, out):
    image = _load_image(args.image)
    config = e91.SessionConfig(args.pairs, args.seed, _eve_config(args))
    stages = {}

    t0 = time.perf_counter()
    if args.net:
        threshold = _NO_CHECK if args.force else args.threshold
        lb = run_loopback(config, threshold, endpoint=args.net)
        for part in (lb.alice, lb.bob):
            if isinstance(part, SessionAborted):
                stages["qkd"] = time.perf_counter() - t0
                _timing(stages)
                out.result("ABORTED: CHSH" if part.reason == "CHSH_FAILURE" else f"ABORTED: {part.reason}")
                return EXIT_ABORT
            if isinstance(part, Exception):
                raise part
        key_alice, key_bob = lb.alice.sifted_key, lb.bob.sifted_key
        s_value = lb.alice.report.s_value
        out.line("sifted_bits", len(key_alice))
        out.line("s_value", s_value, f"S: {s_value:.4f}")
    else:
        transcript = e91.run_session(config)
        stages["qkd"] = time.perf_counter() - t0
        anomaly = _report_session(out, transcript, args.threshold)
        if anomaly and not args.force:
            _timing(stages)
            out.result("ABORTED: CHSH")
            return EXIT_ABORT
        key_alice, key_bob = transcript.sifted_key_alice, transcript.sifted_key_bob
    stages.setdefault("qkd", time.perf_counter() - t0)

    t0 = time.perf_counter()
    params = chaos.derive_params(key_alice)
    stages["keygen"] = time.perf_counter() - t0
    out.line("x0", params.x0, f"x0: {params.x0!r}")
    out.line("r", params.r, f"r: {params.r!r}")

    t0 = time.perf_counter()
    encrypted = cipher.encrypt(image, key_alice, burn_in=args.burn_in)
    stages["encrypt"] = time.perf_counter() - t0
    wire = imageio.write_pgm(encrypted)  # what travels over the classical channel

    t0 = time.perf_counter()
    decrypted = cipher.decrypt(imageio.read_pgm(wire), key_bob, burn_in=args.burn_in)
    stages["decrypt"] = time.perf_counter() - t0
    _timing(stages)

    if args.out_dir:
        d = Path(args.out_dir)
        d.mkdir(parents=True, exist_ok=True)
        imageio.save_pgm(encrypted, d / "encrypted.pgm")
        imageio.save_pgm(decrypted, d / "decrypted.pgm")

    if decrypted == image:
        out.result("DECRYPTION OK")
        return EXIT_OK
    out.line("npcr_vs_plain", metrics.npcr(image, decrypted), f"NPCR(plain, decrypted): {metrics.npcr(image, decrypted):.2f}%")
    out.result("DECRYPTION FAILED")
    return EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_seed, default=argparse.SUPPRESS, help="64-bit RNG seed (default 0)")
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS, help="machine-readable output")

    parser = argparse.ArgumentParser(prog="e91chaos", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    def eve_flags(p):
        p.add_argument("--eve", type=_probability, help="intercept-resend probability")
        p.add_argument("--eve-bases", type=_angles, help="comma list, e.g. pi/4,pi/2")
        p.add_argument("--eve-target", choices=("A", "B"), default="A")
        p.add_argument("--threshold", type=float, default=2.0, help="CHSH detection threshold")

    qkd = sub.add_parser("qkd", help="run the E91 protocol", parents=[common])
    qsub = qkd.add_subparsers(dest="qkd_command", required=True)
    run = qsub.add_parser("run", help="in-process session", parents=[common])
    run.add_argument("--pairs", type=_positive_int, required=True)
    run.add_argument("--out", help="transcript JSON path")
    run.add_argument("--threads", type=_positive_int, default=1, help="worker processes for round simulation")
    eve_flags(run)
    run.set_defaults(func=cmd_qkd_run)

    net = qsub.add_parser("net", help="one role of a networked session", parents=[common])
    net.add_argument("--role", choices=("source", "alice", "bob"), required=True)
    net.add_argument("--endpoint", required=True, help="host:port of the source")
    net.add_argument("--pairs", type=_positive_int, required=True)
    net.add_argument("--out", help="transcript (source) or key file (alice/bob)")
    net.add_argument("--timeout", type=float, default=60.0)
    eve_flags(net)
    net.set_defaults(func=cmd_qkd_net)

    kg = sub.add_parser("keygen", help="extract Alice's key from a transcript", parents=[common])
    kg.add_argument("--transcript", required=True)
    kg.add_argument("--out", required=True)
    kg.add_argument("--threshold", type=float, default=2.0)
    kg.add_argument("--force", action="store_true", help="write the key even if CHSH flags an anomaly")
    kg.set_defaults(func=cmd_keygen)

    pr = sub.add_parser("params", help="show the logistic-map parameters of a key", parents=[common])
    pr.add_argument("--key", required=True)
    pr.set_defaults(func=cmd_params)

    for name in ("encrypt", "decrypt"):
        p = sub.add_parser(name, help=f"{name} a grayscale image", parents=[common])
        p.add_argument("--image", required=True)
        p.add_argument("--key", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--burn-in", type=_nonneg_int, default=0)
        p.set_defaults(func=cmd_crypt)

    an = sub.add_parser("analyze", help="entropy, NPCR and UACI of an image pair", parents=[common])
    an.add_argument("--plain", required=True)
    an.add_argument("--cipher", required=True)
    an.add_argument("--hist", help="write the cipher histogram as 256-line CSV")
    an.add_argument("--csv", help="write the report as a CSV row")
    an.set_defaults(func=cmd_analyze)

    demo = sub.add_parser("demo", help="QKD, key derivation, encryption and decryption end to end", parents=[common])
    demo.add_argument("--image", required=True)
    demo.add_argument("--pairs", type=_positive_int, default=9000)
    demo.add_argument("--net", metavar="HOST:PORT", help="run source and Bob as separate processes")
    demo.add_argument("--force", action="store_true", help="continue past a CHSH anomaly")
    demo.add_argument("--burn-in", type=_nonneg_int, default=0)
    demo.add_argument("--out-dir", help="also write encrypted.pgm and decrypted.pgm here")
    eve_flags(demo)
    demo.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.seed = getattr(args, "seed", 0)
    args.json = getattr(args, "json", False)
    if hasattr(args, "threshold") and not 0.0 < args.threshold <= 2 * 2**0.5:
        parser.error("--threshold must lie in (0, 2*sqrt(2)]")
    out = Output(args.json)
    try:
        code = args.func(args, out)
    except (UsageError, imageio.ParseError, chaos.KeyFormatError, metrics.DimensionMismatch,
            cipher.MalformedInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
