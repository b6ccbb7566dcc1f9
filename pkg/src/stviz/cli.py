"""Command-line entry point: calibrate, maximize, render, gradcheck.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric failure.
Tables go to stdout as TSV; human-readable messages go to stderr.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import gradcheck as gc
from . import tensor as stt
from .errors import FormatError, NumericError, ShapeError, SpecError
from .flowviz import encode_appearance, encode_flow, encode_flow_hsv, write_frames
from .kvfile import parse_bool, read_kv
from .maximizer import JobFailure, MaximizationConfig, run_batch, save_bundle
from .network import CalibrationTable, UnitRef, calibrate, load_network, noise_inputs, toy_two_stream
from .regularizers import RegularizerConfig

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("stviz")


class ConfigError(Exception):
    pass


def _err(msg):
    print(f"stviz: {msg}", file=sys.stderr)


class Settings:
    """Command-line flags layered over an optional key=value config file."""

    def __init__(self, args, defaults):
        self.args = args
        self.file = read_kv(args.config) if getattr(args, "config", None) else {}
        self.defaults = defaults

    def get(self, key, conv=str, attr=None):
        attr = attr or key.replace(".", "_").replace("reg_", "")
        v = getattr(self.args, attr, None)
        if v is not None:
            return v
        if key in self.file:
            try:
                return conv(self.file[key])
            except ValueError as exc:
                raise ConfigError(f"config key {key}: {exc}") from None
        return self.defaults.get(key)


def _floats(s):
    return [float(x) for x in str(s).split(",") if x.strip()]


def _load_net(settings):
    spec = settings.get("net")
    seed = settings.get("net.seed", int, attr="seed")
    if spec == "toy":
        return toy_two_stream(seed), {"net": "toy", "net.seed": seed}
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"network spec or weight directory not found: {path}")
    return load_network(path, seed), {"net": str(path), "net.seed": seed}


def _prepare_out(path: Path, force: bool):
    if path.exists() and (path.is_file() or any(path.iterdir())) and not force:
        raise ConfigError(f"{path} already exists; pass --force to overwrite")


def _calibration_inputs(net, source):
    if source.startswith("noise:"):
        try:
            _, count, seed = source.split(":")
            count, seed = int(count), int(seed)
        except ValueError:
            raise ConfigError(f"calibration source must be noise:<count>:<seed>, got {source!r}") from None
        if count < 1:
            raise ConfigError("calibration needs at least one input")
        return noise_inputs(net, count, seed), f"{count} seeded uniform-noise inputs (seed {seed})"
    d = Path(source)
    if not d.is_dir():
        raise FileNotFoundError(f"calibration source directory not found: {d}")
    apps = sorted(d.glob("*_app.stt"))
    if not apps:
        raise ConfigError(f"no *_app.stt / *_mot.stt pairs in {d}")
    pairs = []
    for a in apps:
        m = a.with_name(a.name[: -len("_app.stt")] + "_mot.stt")
        pairs.append((stt.load(a).data, stt.load(m).data))
    return pairs, f"{len(pairs)} input pairs from {d}"


def cmd_calibrate(args):
    s = Settings(args, {"net": "toy", "net.seed": 0, "source": "noise:50:0", "out": "calibration.kv"})
    net, _ = _load_net(s)
    out = Path(s.get("out"))
    _prepare_out(out, args.force)
    inputs, note = _calibration_inputs(net, s.get("source"))
    table = calibrate(net, inputs, note=note)
    table.save(out)
    print(f"calibrated {len(table)} units from {note}; {len(table.dead)} dead units flagged", file=sys.stderr)
    for u in sorted(table.dead):
        print(f"dead unit {u}", file=sys.stderr)
    print(f"units\t{len(table)}\ndead\t{len(table.dead)}")
    return EXIT_OK


def _jobs_from_settings(s, net):
    units_raw = s.args.unit or ([u for u in s.file.get("unit", "").split(",") if u.strip()])
    if not units_raw:
        raise ConfigError("at least one --unit layer:channel is required")
    try:
        units = [UnitRef.parse(u.strip()) for u in units_raw]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for u in units:
        try:
            net.check_unit(u)
        except KeyError as exc:
            raise ConfigError(exc.args[0]) from None
    chis = s.args.chi or _floats(s.file.get("reg.chi", "1.0"))
    kappa = s.get("reg.kappa", float)
    B = s.get("reg.B", float)
    alpha = s.get("reg.alpha", float)
    jitter = s.get("jitter", parse_bool)
    if s.args.no_jitter:
        jitter = False
    eta0 = s.get("eta0", lambda v: None if v == "auto" else float(v))
    common = dict(
        iterations=s.get("iterations", int), eta0=eta0, jitter=jitter, seed=s.get("seed", int, attr="init_seed"),
        window=s.get("window", int), tol=s.get("tol", float), optimizer=s.get("optimizer"),
    )
    H, W = net.height, net.width
    jobs, names = [], []
    for u in units:
        for chi in chis:
            jobs.append(MaximizationConfig(
                unit=u,
                reg_app=RegularizerConfig.appearance(H, W, B=B, alpha=alpha),
                reg_mot=RegularizerConfig.motion(H, W, B=B, alpha=alpha, kappa=kappa, chi=chi),
                **common,
            ))
            names.append(f"{u.layer}-c{u.channel:03d}-chi{chi:g}")
    return jobs, names


def cmd_maximize(args):
    s = Settings(args, {
        "net": "toy", "net.seed": 0, "out": "runs", "jobs": 1, "reg.kappa": 1.0, "reg.B": 160.0,
        "reg.alpha": 3.0, "jitter": True, "eta0": None, "iterations": 400, "seed": 0,
        "window": 25, "tol": 1e-4, "optimizer": "adam",
    })
    net, net_items = _load_net(s)
    cal = s.get("calibration")
    if not cal:
        raise ConfigError("--calibration table is required (run `stviz calibrate` first)")
    table = CalibrationTable.load(cal)
    try:
        jobs, names = _jobs_from_settings(s, net)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(s.get("out"))
    _prepare_out(out, args.force)
    out.mkdir(parents=True, exist_ok=True)
    results = run_batch(net, table, jobs, workers=int(s.get("jobs", int)))

    status = EXIT_OK
    print("unit\tchi\tobjective\tconverged\titerations\tbundle")
    for job, name, res in zip(jobs, names, results):
        chi = job.reg_mot.chi
        if isinstance(res, JobFailure):
            _err(f"{job.unit} (chi={chi:g}) failed: {res.error}")
            code = EXIT_NUMERIC if res.error.startswith("NumericError") else EXIT_CONFIG
            status = max(status, code)
            print(f"{job.unit}\t{chi:g}\tnan\tfalse\t0\t-")
            continue
        extra = dict(net_items, calibration=str(cal))
        bundle = save_bundle(res, out / name, extra_items=extra)
        print(f"{job.unit}\t{chi:g}\t{float(res.objective_trace[-1])!r}\t{str(res.converged).lower()}\t"
              f"{res.iterations_run}\t{bundle}")
        if res.dead_unit:
            _err(f"warning: {job.unit} is flagged dead in the calibration table")
    return status


def cmd_render(args):
    status = EXIT_OK
    print("bundle\tappearance_frames\tflow_frames\tflow_min\tflow_max")
    for b in args.bundles:
        d = Path(b)
        if not (d / "x_app.stt").is_file() or not (d / "x_mot.stt").is_file():
            _err(f"{d}: not a result bundle (x_app.stt / x_mot.stt missing)")
            status = EXIT_IO
            continue
        xa, xm = stt.load(d / "x_app.stt"), stt.load(d / "x_mot.stt")
        if args.encoder == "hsv":
            video = encode_flow_hsv(xm)
        else:
            video = encode_flow(xm, normalization=args.normalization)
        root = Path(args.out) / d.name if args.out else d / "render"
        app_paths = write_frames(encode_appearance(xa), root / "appearance")
        flow_paths = write_frames(video, root / "flow")
        print(f"{d}\t{len(app_paths)}\t{len(flow_paths)}\t{video.scale[0]!r}\t{video.scale[1]!r}")
    return status


def cmd_gradcheck(args):
    s = Settings(args, {"net": "toy", "net.seed": 0})
    net, _ = _load_net(s)
    net_errs = gc.check_network(net, seed=args.input_seed, h=args.h, corrupt=args.corrupt_gradient)
    reg_errs = gc.check_regularizers(count=args.tensors, seed=args.input_seed)
    ok = True
    print("component\tmax_rel_err\ttolerance\tstatus")
    rows = [(f"layer:{k}", v, gc.NETWORK_TOL) for k, v in net_errs.items()]
    rows += [(k, v, gc.REGULARIZER_TOL) for k, v in reg_errs.items()]
    for name, err, tol in rows:
        good = err <= tol
        ok &= good
        print(f"{name}\t{err:.3e}\t{tol:.0e}\t{'pass' if good else 'FAIL'}")
    if not ok:
        _err("gradient check failed")
    return EXIT_OK if ok else EXIT_NUMERIC


def build_parser():
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--net", help="'toy', a network spec file, or a weight directory")
    shared.add_argument("--seed", type=int, help="network initialization seed")
    shared.add_argument("--config", help="key=value config file; flags override it")
    shared.add_argument("--out", help="output path")
    shared.add_argument("--jobs", type=int, help="parallel maximization jobs")
    shared.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = argparse.ArgumentParser(prog="stviz", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", parents=[shared], help="record per-unit maximum activations")
    c.add_argument("--source", help="noise:<count>:<seed> or a directory of *_app.stt/*_mot.stt pairs")
    c.set_defaults(func=cmd_calibrate)

    m = sub.add_parser("maximize", parents=[shared], help="synthesize preferred inputs")
    m.add_argument("--calibration", help="calibration table from `stviz calibrate`")
    m.add_argument("--unit", action="append", help="layer:channel (repeatable)")
    m.add_argument("--kappa", type=float, help="motion spatial TV weight")
    m.add_argument("--chi", type=float, action="append", help="motion temporal TV weight (repeatable)")
    m.add_argument("--B", dest="B", type=float, help="input norm bound")
    m.add_argument("--alpha", type=float, help="norm exponent")
    m.add_argument("--iterations", type=int)
    m.add_argument("--eta0", type=float)
    m.add_argument("--no-jitter", action="store_true")
    m.add_argument("--init-seed", type=int, help="seed for the noise initialization and jitter")
    m.add_argument("--optimizer", choices=("adam", "plain"))
    m.set_defaults(func=cmd_maximize)

    r = sub.add_parser("render", help="write PPM frames for result bundles")
    r.add_argument("bundles", nargs="+")
    r.add_argument("--out", help="render into OUT/<bundle name>/ instead of <bundle>/render/")
    r.add_argument("--encoder", choices=("rgb", "hsv"), default="rgb")
    r.add_argument("--normalization", choices=("joint", "per_channel"), default="joint")
    r.set_defaults(func=cmd_render)

    g = sub.add_parser("gradcheck", parents=[shared], help="finite-difference gradient checks")
    g.add_argument("--h", type=float, default=1e-5)
    g.add_argument("--input-seed", type=int, default=0)
    g.add_argument("--tensors", type=int, default=20, help="random tensors for the regularizer checks")
    g.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, SpecError, FormatError, ShapeError, KeyError, ValueError) as exc:
        _err(exc.args[0] if isinstance(exc, KeyError) else exc)
        return EXIT_CONFIG
    except OSError as exc:
        _err(exc)
        return EXIT_IO
    except (NumericError, FloatingPointError) as exc:
        _err(exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
