"""Regularized activation maximization on the two stream inputs."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as stt
from .errors import NumericError
from .kvfile import format_value, parse_bool, read_kv, write_kv
from .network import CalibrationTable, NetworkGraph, UnitRef
from .regularizers import RegularizerConfig, penalty, penalty_gradient

log = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "plain")


@dataclass(frozen=True)
class MaximizationConfig:
    unit: UnitRef
    reg_app: RegularizerConfig
    reg_mot: RegularizerConfig
    iterations: int = 400
    eta0: float | None = None  # None: 0.05 * B of each stream
    decay: float = 1.0 / 3.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    jitter: bool = True
    seed: int = 0
    init_scale: float | None = None  # None: B / 10 of each stream
    window: int = 25
    tol: float = 1e-4
    optimizer: str = "adam"
    early_stop: bool = True

    def __post_init__(self):
        if self.iterations < 1 or self.window < 1:
            raise ValueError("iterations and window must be positive")
        if self.iterations < self.window:
            raise ValueError(f"iterations ({self.iterations}) must be >= window ({self.window})")
        if self.eta0 is not None and not self.eta0 > 0:
            raise ValueError("eta0 must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")

    @classmethod
    def for_net(cls, net: NetworkGraph, unit: UnitRef, kappa=1.0, chi=1.0, **kw) -> "MaximizationConfig":
        """Default weights for the net's input size; kappa/chi set the motion TV."""
        H, W = net.height, net.width
        return cls(unit=unit, reg_app=RegularizerConfig.appearance(H, W),
                   reg_mot=RegularizerConfig.motion(H, W, kappa=kappa, chi=chi), **kw)

    def replace(self, **changes) -> "MaximizationConfig":
        return replace(self, **changes)

    def eta_at(self, it: int, B: float) -> float:
        eta = self.eta0 if self.eta0 is not None else 0.05 * B
        N = self.iterations
        if it >= N // 2:
            eta *= self.decay
        if it >= (3 * N) // 4:
            eta *= self.decay
        return eta

    def to_items(self) -> dict:
        a, m = self.reg_app, self.reg_mot
        for name in ("B", "alpha", "V", "lambda_b"):
            if getattr(a, name) != getattr(m, name):
                raise ValueError(f"reg.{name} differs between streams; the config file shares it")
        items = {"unit": str(self.unit)}
        for f in fields(self):
            if f.name in ("unit", "reg_app", "reg_mot"):
                continue
            v = getattr(self, f.name)
            items[f.name] = "auto" if v is None else v
        items.update({
            "reg.B": a.B, "reg.alpha": a.alpha, "reg.V": a.V,
            "reg.kappa": m.kappa, "reg.chi": m.chi,
            "reg.kappa_app": a.kappa, "reg.chi_app": a.chi,
            "reg.lambda_b": a.lambda_b,
            "reg.lambda_tv_app": a.lambda_tv, "reg.lambda_tv_mot": m.lambda_tv,
        })
        return items

    @classmethod
    def from_items(cls, items) -> "MaximizationConfig":
        kw = {}
        for f in fields(cls):
            if f.name in ("unit", "reg_app", "reg_mot") or f.name not in items:
                continue
            raw = str(items[f.name])
            if f.name in ("eta0", "init_scale"):
                kw[f.name] = None if raw == "auto" else float(raw)
            elif f.name in ("jitter", "early_stop"):
                kw[f.name] = parse_bool(raw)
            elif f.name in ("iterations", "seed", "window"):
                kw[f.name] = int(raw)
            elif f.name == "optimizer":
                kw[f.name] = raw
            else:
                kw[f.name] = float(raw)
        g = lambda k: float(items[k])  # noqa: E731
        shared = dict(B=g("reg.B"), alpha=g("reg.alpha"), V=g("reg.V"), lambda_b=g("reg.lambda_b"))
        reg_app = RegularizerConfig(kappa=g("reg.kappa_app"), chi=g("reg.chi_app"),
                                    lambda_tv=g("reg.lambda_tv_app"), **shared)
        reg_mot = RegularizerConfig(kappa=g("reg.kappa"), chi=g("reg.chi"),
                                    lambda_tv=g("reg.lambda_tv_mot"), **shared)
        return cls(unit=UnitRef.parse(items["unit"]), reg_app=reg_app, reg_mot=reg_mot, **kw)


@dataclass
class MaximizationResult:
    x_app: stt.SpatiotemporalTensor
    x_mot: stt.SpatiotemporalTensor
    objective_trace: np.ndarray
    activation_trace: np.ndarray
    reg_trace: np.ndarray
    eta_trace: np.ndarray
    iterations_run: int
    converged: bool
    unit: UnitRef
    config: MaximizationConfig
    dead_unit: bool = False
    extra: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, MaximizationResult):
            return NotImplemented
        arrays = ("objective_trace", "activation_trace", "reg_trace", "eta_trace")
        return (
            self.x_app == other.x_app and self.x_mot == other.x_mot
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in arrays)
            and (self.iterations_run, self.converged, self.unit, self.config, self.dead_unit)
            == (other.iterations_run, other.converged, other.unit, other.config, other.dead_unit)
        )


@dataclass
class JobFailure:
    index: int
    config: MaximizationConfig
    error: str
    partial: MaximizationResult | None = None


def project_ball(a: np.ndarray, B: float) -> np.ndarray:
    """Rescale every position whose channel vector is longer than B back onto the sphere."""
    norms = np.sqrt(np.einsum("ijkd,ijkd->ijk", a, a))
    over = norms > B
    if not over.any():
        return a
    a = a.copy()
    factor = B / norms[over]
    while over.any():
        # rounding can leave a rescaled vector an ulp outside; shrink until it is inside
        a[over] *= factor[:, None]
        norms = np.sqrt(np.einsum("ijkd,ijkd->ijk", a, a))
        over = norms > B
        factor = np.full(int(over.sum()), 1.0 - 2.0 ** -52)
    return a


def _activation_scale(net, table, unit):
    rho = net.receptive_field(unit.layer)
    return 1.0 / (rho ** 2 * table[unit])


def objective(net: NetworkGraph, table: CalibrationTable, x_app, x_mot, cfg: MaximizationConfig):
    """(value, activation_term, reg_term) of the normalized, regularized objective."""
    unit = cfg.unit
    scale = _activation_scale(net, table, unit)
    a, m = np.asarray(x_app), np.asarray(x_mot)
    act = float(net.unit_values(unit, a[None], m[None])[0]) * scale
    reg = penalty(a, cfg.reg_app) + penalty(m, cfg.reg_mot)
    return act - reg, act, reg


def _adam_step(x, g, state, t, eta, cfg):
    m, v = state
    m *= cfg.beta1
    m += (1 - cfg.beta1) * g
    v *= cfg.beta2
    v += (1 - cfg.beta2) * g * g
    mhat = m / (1 - cfg.beta1 ** t)
    vhat = v / (1 - cfg.beta2 ** t)
    return x + eta * mhat / (np.sqrt(vhat) + cfg.eps)


def maximize(net: NetworkGraph, table: CalibrationTable, cfg: MaximizationConfig) -> MaximizationResult:
    unit = cfg.unit
    net.check_unit(unit)
    scale = _activation_scale(net, table, unit)
    dead = table.is_dead(unit)
    if dead:
        log.warning("unit %s never fired during calibration; using fallback normalization", unit)
    stride = net.layer_stride(unit.layer)
    ra, rm = cfg.reg_app, cfg.reg_mot

    rng = np.random.default_rng(cfg.seed)
    sa = cfg.init_scale if cfg.init_scale is not None else ra.B / 10
    sm = cfg.init_scale if cfg.init_scale is not None else rm.B / 10
    xa = project_ball(rng.standard_normal(net.app_shape) * sa, ra.B)
    xm = project_ball(rng.standard_normal(net.mot_shape) * sm, rm.B)
    state_a = (np.zeros_like(xa), np.zeros_like(xa))
    state_m = (np.zeros_like(xm), np.zeros_like(xm))

    obj, acts, regs, etas = [], [], [], []
    converged = False
    w = cfg.window

    def result():
        return MaximizationResult(
            stt.SpatiotemporalTensor(xa), stt.SpatiotemporalTensor(xm),
            np.array(obj), np.array(acts), np.array(regs), np.array(etas),
            len(obj), converged, unit, cfg, dead,
        )

    for it in range(cfg.iterations):
        if cfg.jitter:
            dy, dx = (int(v) for v in rng.integers(0, stride, size=2))
        else:
            dy = dx = 0
        ja = np.roll(xa, (dy, dx), axis=(0, 1))
        jm = np.roll(xm, (dy, dx), axis=(0, 1))

        value, ga, gm = net.value_and_gradient(unit, ja, jm)
        act = value * scale
        reg = penalty(ja, ra) + penalty(jm, rm)
        total = act - reg
        if not np.isfinite(total):
            raise NumericError(f"non-finite objective at iteration {it} for unit {unit}", partial=result())
        eta_a, eta_m = cfg.eta_at(it, ra.B), cfg.eta_at(it, rm.B)
        obj.append(total)
        acts.append(act)
        regs.append(reg)
        etas.append(eta_a)

        ga = np.roll(ga * scale - penalty_gradient(ja, ra), (-dy, -dx), axis=(0, 1))
        gm = np.roll(gm * scale - penalty_gradient(jm, rm), (-dy, -dx), axis=(0, 1))
        if cfg.optimizer == "adam":
            xa = _adam_step(xa, ga, state_a, it + 1, eta_a, cfg)
            xm = _adam_step(xm, gm, state_m, it + 1, eta_m, cfg)
        else:
            xa = xa + eta_a * ga
            xm = xm + eta_m * gm
        xa = project_ball(xa, ra.B)
        xm = project_ball(xm, rm.B)

        if cfg.early_stop and len(obj) >= 2 * w:
            recent = np.mean(obj[-w:])
            before = np.mean(obj[-2 * w:-w])
            if abs(recent - before) <= cfg.tol * max(abs(before), 1e-12):
                converged = True
                break

    return result()


def run_batch(net: NetworkGraph, table: CalibrationTable, jobs, workers: int = 1):
    """Run independent jobs; returns results (or JobFailure entries) in job order."""
    jobs = list(jobs)

    def one(i):
        try:
            return maximize(net, table, jobs[i])
        except Exception as exc:  # recorded per job, the batch continues
            partial = getattr(exc, "partial", None)
            log.error("job %d (%s) failed: %s", i, jobs[i].unit, exc)
            return JobFailure(i, jobs[i], f"{type(exc).__name__}: {exc}", partial)

    if workers <= 1 or len(jobs) <= 1:
        return [one(i) for i in range(len(jobs))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(len(jobs))))


TRACE_HEADER = ("iteration", "objective", "activation_term", "reg_term", "eta")


def save_bundle(result: MaximizationResult, directory, extra_items=None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    stt.save(result.x_app, d / "x_app.stt")
    stt.save(result.x_mot, d / "x_mot.stt")
    with open(d / "trace.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(TRACE_HEADER)
        for i in range(result.iterations_run):
            wr.writerow([i] + [format_value(float(t[i])) for t in
                               (result.objective_trace, result.activation_trace, result.reg_trace, result.eta_trace)])
    items = dict(extra_items or {})
    items.update(result.config.to_items())
    items["result.iterations_run"] = result.iterations_run
    items["result.converged"] = result.converged
    items["result.dead_unit"] = result.dead_unit
    write_kv(d / "config.kv", items)
    return d


def load_bundle(directory) -> MaximizationResult:
    d = Path(directory)
    items = read_kv(d / "config.kv")
    cfg = MaximizationConfig.from_items(items)
    known = set(cfg.to_items())
    with open(d / "trace.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    body = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(-1, 4)
    return MaximizationResult(
        stt.load(d / "x_app.stt"), stt.load(d / "x_mot.stt"),
        body[:, 0], body[:, 1], body[:, 2], body[:, 3],
        int(items["result.iterations_run"]), parse_bool(items["result.converged"]),
        cfg.unit, cfg, parse_bool(items["result.dead_unit"]),
        extra={k: v for k, v in items.items() if k not in known and not k.startswith("result.")},
    )
