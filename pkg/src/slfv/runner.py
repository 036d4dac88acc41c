"""Experiment orchestration: strict JSON configs, manifests, replicate fan-out, subcommands."""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import functools
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .analysis import (CSV_HEADER, McReport, averaged_observables, duality_check,
                       exponential_rate_check, hill_estimator, lineage_msd, qv_estimate)
from .dual import DualState, rescaled_dual_config, lineage_paths, run_dual
from .errors import ConfigError, SlfvError
from .events import EventModel, FixedRadius, StableRadii
from .forward import (BallIndicator, CosineMode, ForwardState, GaussianBump, ObservableSpec,
                      cell_centres, encode_snapshot, rescaled_config, run_forward)
from .geometry import TorusDomain, ball_volume
from .limits import (LimitDualConfig, PdeConfig, logistic_decay, simulate_limit_dual, solve_fkpp,
                     solve_fkpp_stochastic_1d, solve_fractional_fkpp)
from .parallel import map_replicates, replicate_rng
from .scaling import KernelSpec, gamma_R, kernel_table_rows, levy_symbol, scaling_params

log = logging.getLogger("slfv")

EXPERIMENTS = ("forward", "dual", "duality-check", "scaling-table", "kernel", "pde", "spde",
               "limit-dual", "diagnostics")
EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3

_REQUIRED = object()


# ---------------------------------------------------------------- schema

@dataclass(frozen=True)
class Field:
    kind: type | tuple
    default: Any = _REQUIRED
    check: Callable[[Any], bool] | None = None
    hint: str = ""


def _num(lo=None, hi=None, strict_lo=False):
    def ok(v):
        if lo is not None and (v <= lo if strict_lo else v < lo):
            return False
        return hi is None or v <= hi
    return ok


_NUM = (int, float)
_RADIUS = {"kind": Field(str, "fixed", lambda v: v in ("fixed", "stable"), "fixed or stable"),
           "R": Field(_NUM, 1.0, _num(0, strict_lo=True), "positive"),
           "alpha": Field(_NUM, None),
           "r_max": Field(_NUM, None, _num(1, strict_lo=True), "greater than 1")}
_MODEL = {"radius": _RADIUS,
          "u": Field(_NUM, _REQUIRED, _num(0, 1, strict_lo=True), "in (0,1]"),
          "s": Field(_NUM, 0.0, _num(0), "non-negative")}
_DOMAIN = {"d": Field(int, 1, lambda v: v in (1, 2, 3), "1, 2 or 3"),
           "L": Field(_NUM, _REQUIRED, _num(0, strict_lo=True), "positive")}
_BLOCKS = {
    "dual": {"positions": Field(list, None)},
    "pde": {"m": Field(int, 64, _num(2)), "dt": Field(_NUM, None, _num(0, strict_lo=True))},
    "limit_dual": {"positions": Field(list, None), "dt": Field(_NUM, 0.01, _num(0, strict_lo=True)),
                   "eps": Field(_NUM, 0.05, _num(0, strict_lo=True)), "coalescence": Field(bool, True)},
    "kernel": {"m_values": Field(list, [0.1, 0.5, 1.0, 2.0, 5.0, 10.0]),
               "theta_values": Field(list, [0.1, 0.3, 1.0, 3.0, 10.0])},
    "scaling_table": {"alpha": Field(list, [1.2, 1.5, 1.8]), "n": Field(list, [100, 10000]),
                      "fixed": Field(bool, True)},
    "diagnostics": {"kind": Field(str, "msd", lambda v: v in ("msd", "stable-jumps", "qv"),
                                  "msd, stable-jumps or qv"),
                    "paths": Field(int, 10000, _num(1)), "n_times": Field(int, 10, _num(1)),
                    "samples": Field(int, 1000, _num(1))},
    "output": {"snapshots": Field(bool, False)},
}
_TOP = {"experiment": Field(str, None, lambda v: v in EXPERIMENTS, "a known experiment"),
        "seed": Field(int, 0, _num(0), "non-negative"),
        "replicates": Field(int, 1, _num(0), "non-negative"),
        "T": Field(_NUM, 1.0, _num(0), "non-negative"),
        "h": Field(_NUM, None, _num(0, strict_lo=True), "positive"),
        "sample_times": Field((list, int), 10),
        "initial": Field(dict, {"kind": "constant", "value": 0.5}),
        "observables": Field(list, []),
        "scaling": {"n": Field(_NUM, _REQUIRED, _num(1), "at least 1")},
        "model": _MODEL,
        "domain": _DOMAIN,
        **_BLOCKS}
_OPTIONAL_SECTIONS = {"scaling", "model", "domain", *_BLOCKS}
_BLOCK_FOR = {"limit-dual": "limit_dual", "scaling-table": "scaling_table", "spde": "pde"}


def _validate(obj: dict, schema: dict, path: str, errors: list, fill_sections: bool) -> dict:
    out = {}
    for key in obj:
        if key not in schema:
            errors.append(f"{path}{key}: unknown key")
    for key, spec in schema.items():
        where = f"{path}{key}"
        if isinstance(spec, dict):
            if key in obj:
                if not isinstance(obj[key], dict):
                    errors.append(f"{where}: expected an object")
                    continue
                out[key] = _validate(obj[key], spec, where + ".", errors, True)
            elif fill_sections and key not in _OPTIONAL_SECTIONS:
                out[key] = _validate({}, spec, where + ".", errors, True)
            continue
        if key not in obj:
            if spec.default is _REQUIRED:
                errors.append(f"{where}: required")
            elif spec.default is not None:
                out[key] = json.loads(json.dumps(spec.default))
            continue
        v = obj[key]
        bad_type = isinstance(v, bool) and spec.kind is not bool and bool not in np.atleast_1d(spec.kind)
        if bad_type or not isinstance(v, spec.kind):
            errors.append(f"{where}: wrong type {type(v).__name__}")
            continue
        if spec.check is not None and not spec.check(v):
            errors.append(f"{where}: must be {spec.hint or 'valid'}, got {v!r}")
            continue
        out[key] = float(v) if spec.kind is _NUM else v
    return out


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class RunConfig:
    experiment: str
    seed: int
    replicates: int
    T: float
    sample_times: tuple
    document: dict  # normalised config with defaults filled in
    model: EventModel | None = None
    domain: TorusDomain | None = None
    n: float | None = None
    h: float | None = None
    observables: tuple = ()

    @property
    def config_hash(self) -> str:
        return config_hash(self.document)

    @property
    def options(self) -> dict:
        return self.document.get(_BLOCK_FOR.get(self.experiment, self.experiment), {})

    def plan(self):
        """Rescaled forward plan (``scaling`` present) or None."""
        if self.n is None:
            return None
        return rescaled_config(self.model, self.n, self.domain.L, self.domain.d, self.h)


def config_hash(document: dict) -> str:
    blob = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _build_model(doc: dict, errors: list) -> EventModel | None:
    if "model" not in doc:
        return None
    m, r = doc["model"], doc["model"]["radius"]
    if "u" not in m:
        return None
    try:
        if r["kind"] == "fixed":
            law = FixedRadius(r["R"])
        else:
            if "alpha" not in r:
                errors.append("model.radius.alpha: required for stable radii")
                return None
            law = StableRadii(r["alpha"], r.get("r_max", math.inf))
        return EventModel(law, m["u"], m["s"])
    except ConfigError as exc:
        errors.append(f"model.radius: {exc}")
        return None


def _observable(spec: dict, i: int, d: int, errors: list) -> ObservableSpec | None:
    where = f"observables[{i}]"
    try:
        kind = spec["kind"]
        extra = set(spec) - {"kind", "centre", "sigma", "radius", "k"}
        if extra:
            errors.append(f"{where}.{sorted(extra)[0]}: unknown key")
            return None
        if kind == "gaussian":
            return GaussianBump(tuple(np.broadcast_to(spec["centre"], (d,)).tolist()), float(spec["sigma"]))
        if kind == "ball":
            return BallIndicator(tuple(np.broadcast_to(spec["centre"], (d,)).tolist()), float(spec["radius"]))
        if kind == "cosine":
            return CosineMode(tuple(np.broadcast_to(spec["k"], (d,)).tolist()))
        errors.append(f"{where}.kind: must be gaussian, ball or cosine, got {kind!r}")
    except (KeyError, TypeError, ValueError) as exc:
        errors.append(f"{where}: invalid observable ({exc})")
    return None


_INITIAL_KEYS = {"constant": {"value"}, "half": {"inside", "outside"},
                 "cosine": {"mean", "amplitude", "k"}, "ball": {"centre", "radius", "inside", "outside"}}


def _check_initial(spec: dict, errors: list) -> None:
    kind = spec.get("kind")
    if kind not in _INITIAL_KEYS:
        errors.append(f"initial.kind: must be one of {sorted(_INITIAL_KEYS)}, got {kind!r}")
        return
    for key in set(spec) - _INITIAL_KEYS[kind] - {"kind"}:
        errors.append(f"initial.{key}: unknown key")


def initial_field(spec: dict, domain: TorusDomain, m: int) -> np.ndarray:
    """Initial frequencies at the cell centres of a grid with ``m`` cells per side."""
    coords = [c * np.ones((m,) * domain.d) for c in cell_centres(domain, m)]
    kind = spec["kind"]
    if kind == "constant":
        w = np.full((m,) * domain.d, float(spec.get("value", 0.5)))
    elif kind == "half":
        w = np.where(coords[0] < domain.L / 2, spec.get("inside", 1.0), spec.get("outside", 0.0))
    elif kind == "cosine":
        k = np.broadcast_to(np.asarray(spec.get("k", 1), dtype=float), (domain.d,))
        wave = np.prod([np.cos(2 * np.pi * ki * c / domain.L) for ki, c in zip(k, coords)], axis=0)
        w = spec.get("mean", 0.5) + spec.get("amplitude", 0.3) * wave
    else:
        centre = np.broadcast_to(np.asarray(spec["centre"], dtype=float), (domain.d,))
        dist = np.sqrt(sum((c - x) ** 2 for c, x in zip(coords, centre)))
        w = np.where(dist <= spec["radius"], spec.get("inside", 1.0), spec.get("outside", 0.0))
    w = np.asarray(w, dtype=float)
    if w.min() < 0 or w.max() > 1:
        raise ConfigError("initial: values must lie in [0,1]")
    return w


_NEEDS_MODEL = {"forward", "dual", "duality-check", "pde", "spde", "limit-dual", "diagnostics"}
_NEEDS_DOMAIN = {"forward", "duality-check", "pde", "spde"}


def parse_document(raw: dict, experiment: str | None = None, seed: int | None = None) -> RunConfig:
    """Validate a config mapping; raises ConfigError carrying every problem found."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    errors: list[str] = []
    doc = _validate(raw, _TOP, "", errors, False)
    kind = experiment or doc.get("experiment")
    if kind is None:
        errors.append("experiment: required (in the file or as the subcommand)")
    elif doc.get("experiment", kind) != kind:
        errors.append(f"experiment: file says {doc['experiment']!r} but {kind!r} was requested")
    if seed is not None:
        if seed < 0:
            errors.append(f"seed: must be non-negative, got {seed}")
        doc["seed"] = seed
    if kind is None or any(e.startswith("experiment") for e in errors):
        raise ConfigError(errors)
    doc["experiment"] = kind
    block = _BLOCK_FOR.get(kind, kind)
    if block in _BLOCKS and block not in doc:
        doc[block] = _validate({}, _BLOCKS[block], block + ".", errors, True)

    model = _build_model(doc, errors)
    if kind in _NEEDS_MODEL and "model" not in doc:
        errors.append("model: required")
    if kind in _NEEDS_DOMAIN and "domain" not in doc:
        errors.append("domain: required")
    domain = None
    if "domain" in doc and {"d", "L"} <= set(doc["domain"]):
        domain = TorusDomain(doc["domain"]["d"], doc["domain"]["L"])
    n = doc["scaling"]["n"] if "scaling" in doc else None
    if kind in ("diagnostics",) and n is None:
        errors.append("scaling.n: required for diagnostics")
    if kind == "duality-check" and n is not None:
        errors.append("scaling: the duality check runs the unscaled process")
    _check_initial(doc.get("initial", {"kind": "constant"}), errors)

    # geometry and grid
    h = doc.get("h")
    if kind in ("forward", "duality-check") and model is not None and domain is not None:
        try:
            if n is None:
                model.check_domain(domain)
                R = model.radius.R if isinstance(model.radius, FixedRadius) else 1.0
                if h is None:
                    h = domain.L / math.ceil(domain.L / (R / 4) - 1e-9)
                elif abs(domain.L / h - round(domain.L / h)) > 1e-9:
                    errors.append(f"h: must divide L = {domain.L}, got {h}")
            elif kind == "forward":
                plan = rescaled_config(model, n, domain.L, domain.d, h)
                h = plan.scaled_h
        except ConfigError as exc:
            errors.append(f"domain.L: {exc}")
    if h is not None:
        doc["h"] = h

    observables = []
    d = domain.d if domain is not None else 1
    for i, spec in enumerate(doc.get("observables", [])):
        if not isinstance(spec, dict):
            errors.append(f"observables[{i}]: expected an object")
            continue
        obs = _observable(spec, i, d, errors)
        if obs is not None and domain is not None:
            try:
                obs.check(domain)
            except ConfigError as exc:
                errors.append(f"observables[{i}]: {exc}")
        observables.append(obs)
    if kind == "duality-check" and not doc.get("observables"):
        errors.append("observables: the duality check needs at least one sampling density")

    T = doc.get("T", 1.0)
    st = doc.get("sample_times", 10)
    if isinstance(st, int):
        if st < 1:
            errors.append("sample_times: count must be positive")
            times = ()
        else:
            times = tuple(T * (j + 1) / st for j in range(st))
    else:
        times = tuple(float(t) for t in st)
        if any(b < a for a, b in zip(times, times[1:])) or any(not 0 <= t <= T for t in times):
            errors.append("sample_times: must be sorted and lie in [0, T]")
    doc["sample_times"] = list(times)
    if errors:
        raise ConfigError(errors)
    return RunConfig(kind, doc["seed"], doc["replicates"], T, times, doc, model, domain, n, h,
                     tuple(observables))


def parse_config(path, experiment: str | None = None, seed: int | None = None) -> RunConfig:
    """Read and validate a JSON config file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return parse_document(raw, experiment, seed)


# ---------------------------------------------------------------- results

@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class Outcome:
    files: dict = field(default_factory=dict)  # name -> bytes
    checks: list = field(default_factory=list)
    streams: tuple = (0,)


def _csv(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _r(x) -> str:
    return repr(float(x))


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    experiment: str
    seed: int
    replicates: int
    seed_scheme: str
    replicate_seeds: dict
    config: dict
    started: str
    finished: str | None = None
    status: str = "running"
    outputs: list = field(default_factory=list)
    checks: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path) -> RunManifest:
        return cls(**json.loads(Path(path).read_text()))


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _seed_list(seed: int, stream: int, n: int) -> list:
    return [int(np.random.SeedSequence([seed, stream, i]).generate_state(1, np.uint64)[0])
            for i in range(n)]


def run_experiment(config: RunConfig, out, jobs: int = 1, check: bool = False) -> RunManifest:
    """Run ``config``, writing manifest.json first and each result file atomically."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    streams = (0, 1) if config.experiment == "duality-check" else (0,)
    manifest = RunManifest(
        config.config_hash, __version__, config.experiment, config.seed, config.replicates,
        "numpy SeedSequence([seed, stream, replicate])",
        {str(s): _seed_list(config.seed, s, config.replicates) for s in streams},
        config.document, _now())
    mpath = out / "manifest.json"
    _atomic_write(mpath, manifest.to_json().encode())
    written: list[Path] = []
    try:
        outcome = Outcome() if config.replicates == 0 else RUNNERS[config.experiment](config, jobs, check)
        for name, data in sorted(outcome.files.items()):
            target = out / name
            target.parent.mkdir(parents=True, exist_ok=True)
            _atomic_write(target, data)
            written.append(target)
            manifest.outputs.append({"file": name, "bytes": len(data),
                                     "sha256": hashlib.sha256(data).hexdigest()})
        manifest.checks = [c.__dict__ for c in outcome.checks]
        manifest.status = "ok"
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        manifest.status = "failed"
        manifest.outputs = []
        manifest.finished = _now()
        _atomic_write(mpath, manifest.to_json().encode())
        raise
    manifest.finished = _now()
    _atomic_write(mpath, manifest.to_json().encode())
    return manifest


# ---------------------------------------------------------------- experiments

def _forward_replicate(i, rng, config: RunConfig, validate: bool):
    plan = config.plan()
    if plan is None:
        domain, h, scale_t = config.domain, config.h, 1.0
        state = ForwardState(domain, h, initial_field(config.document["initial"], domain,
                                                      round(domain.L / h)))
        probe = state
        model = config.model
    else:
        domain, h, scale_t = plan.domain, plan.h, plan.time_factor
        m = round(domain.L / h)
        state = ForwardState(domain, h, initial_field(config.document["initial"], config.domain, m))
        probe = ForwardState(config.domain, plan.scaled_h, state.w)
        model = plan.model
    w0 = state.w.copy()
    weights = [obs.weights(probe) for obs in config.observables]
    weights.append(np.full(state.w.shape, 1.0 / state.w.size))  # spatial mean
    times = [t * scale_t for t in config.sample_times]
    snaps = times if config.document.get("output", {}).get("snapshots") else ()
    traj = run_forward(state, model, config.T * scale_t, weights, times, rng,
                       snapshot_times=snaps, validate=validate)
    rows = [[i, _r(t / scale_t), *map(_r, v)] for t, v in zip(traj.times, traj.values)]
    blobs = {}
    for j, t in enumerate(snaps):
        snap = ForwardState(domain, h, traj.snapshots[t], t)
        blobs[f"snapshots/rep{i:05d}_t{j:03d}.bin"] = encode_snapshot(snap, config.seed, replicate=i)
    absorbing = None
    if np.all(w0 == w0.flat[0]) and w0.flat[0] in (0.0, 1.0):
        absorbing = bool(np.all(state.w == w0))
    return rows, blobs, traj.n_events, absorbing


def run_forward_experiment(config: RunConfig, jobs: int, check: bool) -> Outcome:
    fn = functools.partial(_forward_replicate, config=config, validate=check)
    try:
        results = map_replicates(fn, config.replicates, config.seed, 0, jobs)
        invariant_ok, detail = True, "no cell left [0,1]"
    except AssertionError as exc:
        if not check:
            raise
        return Outcome(checks=[CheckResult("forward-invariants", False, str(exc))])
    header = ["replicate", "t", *[f"obs_{k}" for k in range(len(config.observables))], "mean_w"]
    rows = [r for res in results for r in res[0]]
    files = {"forward.csv": _csv(header, rows)}
    for res in results:
        files.update(res[1])
    checks = []
    if check:
        checks.append(CheckResult("forward-invariants", invariant_ok,
                                  f"{detail}; {sum(r[2] for r in results)} events"))
        absorbing = [r[3] for r in results if r[3] is not None]
        if absorbing:
            checks.append(CheckResult("absorbing-state", all(absorbing), "constant 0/1 field unchanged"))
    return Outcome(files, checks)


def _dual_replicate(i, rng, config: RunConfig):
    d = config.domain.d if config.domain is not None else 1
    pos = config.options.get("positions")
    if pos is None:
        centre = config.domain.L / 2 if config.domain is not None else 0.0
        pos = [[centre] * d]
    pos = np.asarray(pos, dtype=float).reshape(-1, d)
    if config.n is None:
        dual = DualState(pos.copy())
        recs = run_dual(dual, config.model, config.T, config.sample_times, rng, config.domain,
                        with_positions=True)
    else:
        plan = rescaled_dual_config(config.n, config.model)
        domain = None
        if config.domain is not None:
            domain = TorusDomain(d, config.domain.L / plan.space_factor)
        recs = plan.run(pos, config.T, rng, config.sample_times, domain)
    return pos.shape[0], recs


def run_dual_experiment(config: RunConfig, jobs: int, check: bool) -> Outcome:
    fn = functools.partial(_dual_replicate, config=config)
    results = map_replicates(fn, config.replicates, config.seed, 0, jobs)
    rows, lines, ok = [], [], True
    for i, (n0, recs) in enumerate(results):
        for rec in recs:
            rows.append([i, _r(rec["t"]), rec["N"], rec["branches"], rec["coalescences"], rec["jumps"]])
            lines.append(json.dumps({"replicate": i, **rec}, sort_keys=True))
            ok &= rec["N"] == n0 + rec["branches"] - rec["coalescences"] and rec["N"] >= 1
    files = {"dual.csv": _csv(["replicate", "t", "N", "branches", "coalescences", "jumps"], rows),
             "dual.jsonl": ("\n".join(lines) + "\n").encode()}
    checks = [CheckResult("dual-bookkeeping", bool(ok), "N = N0 + branches - coalescences")] if check else []
    return Outcome(files, checks)


def run_duality_experiment(config: RunConfig, jobs: int, check: bool) -> Outcome:
    domain = config.domain
    w0 = initial_field(config.document["initial"], domain, round(domain.L / config.h))
    res = duality_check(config.model, domain, config.h, w0, config.observables, config.T,
                        config.replicates, config.seed, jobs)
    rows = [res.forward.csv_row("forward"), res.dual.csv_row("dual", res.z)]
    files = {"duality.csv": _csv(CSV_HEADER, rows)}
    checks = [CheckResult("duality-z", res.passed(3.0),
                          f"z = {res.z:.3f} (forward {res.forward.estimate:.5f}, dual {res.dual.estimate:.5f})")]
    return Outcome(files, checks if check else [], streams=(0, 1))


def run_scaling_table(config: RunConfig, jobs: int, check: bool) -> Outcome:
    opts = config.options
    u = config.model.u if config.model else 1.0
    sigma = config.model.s if config.model else 1.0
    cases = ([("fixed", FixedRadius(1.0))] if opts["fixed"] else [])
    cases += [("stable", StableRadii(float(a))) for a in opts["alpha"]]
    rows, ok = [], True
    for name, law in cases:
        for n in opts["n"]:
            p = scaling_params(float(n), law, u, sigma)
            rows.append([name, _r(p.alpha), _r(n), _r(p.beta), _r(p.gamma), _r(p.delta),
                         _r(p.u_n), _r(p.s_n)])
            ok &= math.isclose(p.delta, p.alpha * p.beta) and math.isclose(p.gamma, (p.alpha - 1) * p.beta)
    files = {"scaling_table.csv": _csv(["case", "alpha", "n", "beta", "gamma", "delta", "u_n", "s_n"], rows)}
    checks = [CheckResult("exponent-identities", bool(ok), "delta = alpha beta, gamma = (alpha-1) beta")]
    return Outcome(files, checks if check else [])


def _kernel_spec(config: RunConfig) -> KernelSpec:
    model = config.model
    if model is None or not isinstance(model.radius, StableRadii):
        raise ConfigError("kernel: model.radius must be stable")
    d = config.domain.d if config.domain is not None else 1
    return KernelSpec(d, model.radius.alpha, model.u, config.n)


def run_kernel_table(config: RunConfig, jobs: int, check: bool) -> Outcome:
    spec = _kernel_spec(config)
    opts = config.options
    rows = kernel_table_rows(spec, opts["m_values"], opts["theta_values"])
    files = {"kernel.csv": _csv(["quantity", "argument", "value"], rows)}
    checks = []
    if check:
        d, a = spec.d, spec.alpha
        m = np.asarray(opts["m_values"], dtype=float)
        ratio = spec.phi(2 * m) / spec.phi(m)
        err_phi = float(np.max(np.abs(ratio - 2.0 ** (-(d + a)))))
        th = np.asarray(opts["theta_values"], dtype=float)
        err_psi = max(abs(levy_symbol(2 * t, d, a) / levy_symbol(t, d, a) - 2**a) for t in th)
        checks = [CheckResult("phi-homogeneity", err_phi <= 1e-6, f"max error {err_phi:.2e}"),
                  CheckResult("psi-homogeneity", err_psi <= 1e-2, f"max error {err_psi:.2e}")]
    return Outcome(files, checks)


def _pde_config(config: RunConfig, noise: bool) -> PdeConfig:
    opts, dom, model = config.options, config.domain, config.model
    if isinstance(model.radius, FixedRadius):
        return PdeConfig.fixed_radius(dom.d, model.radius.R, model.u, model.s, dom.L, opts["m"],
                                      config.T, opts.get("dt"), noise=noise)
    dt = opts.get("dt") or config.T / 1000 or 1e-3
    return PdeConfig.stable(dom.d, model.radius.alpha, model.u, model.s, dom.L, opts["m"],
                            config.T, dt, noise=noise)


def _field_rows(i, traj, weights, cell):
    rows = []
    for t, w in zip(traj.times, traj.fields):
        vals = [float(np.sum(w * wt)) for wt in weights]
        rows.append([i, _r(t), *map(_r, vals), _r(w.mean()), _r(w.min()), _r(w.max())])
    return rows


def _pde_setup(config: RunConfig, noise: bool):
    pc = _pde_config(config, noise)
    w0 = initial_field(config.document["initial"], config.domain, pc.m)
    probe = ForwardState(config.domain, pc.h, w0)
    weights = [obs.weights(probe) for obs in config.observables]
    header = ["replicate", "t", *[f"obs_{k}" for k in range(len(weights))], "mean_w", "min_w", "max_w"]
    return pc, w0, weights, header


def run_pde_experiment(config: RunConfig, jobs: int, check: bool) -> Outcome:
    pc, w0, weights, header = _pde_setup(config, noise=False)
    times = [0.0, *config.sample_times] if config.sample_times[0] > 0 else list(config.sample_times)
    traj = solve_fkpp(pc, w0, times) if pc.kernel is None else solve_fractional_fkpp(pc, w0, None, times)
    files = {"pde.csv": _csv(header, _field_rows(0, traj, weights, pc.h ** pc.d))}
    if config.document.get("output", {}).get("snapshots"):
        final = ForwardState(config.domain, pc.h, traj.final, config.T)
        files["pde_final.bin"] = encode_snapshot(final, config.seed)
    checks = []
    if check:
        c = float(w0.flat[0])
        if np.all(w0 == c):
            err = max(float(np.max(np.abs(w - logistic_decay(c, pc.reaction, t))))
                      for t, w in zip(traj.times, traj.fields))
            checks.append(CheckResult("logistic-oracle", err <= 1e-6, f"max error {err:.2e}"))
        else:
            ok = all(np.all((w >= 0) & (w <= 1)) for w in traj.fields)
            checks.append(CheckResult("pde-range", bool(ok), "fields stay in [0,1]"))
    return Outcome(files, checks)


def _spde_replicate(i, rng, config: RunConfig):
    pc, w0, weights, _ = _pde_setup(config, noise=True)
    times = list(config.sample_times)
    if pc.kernel is None:
        traj = solve_fkpp_stochastic_1d(pc, w0, rng, times)
    else:
        traj = solve_fractional_fkpp(pc, w0, rng, times)
    ok = all(np.all(np.isfinite(w) & (w >= 0) & (w <= 1)) for w in traj.fields)
    return _field_rows(i, traj, weights, pc.h), traj.clamped, bool(ok)


def run_spde_experiment(config: RunConfig, jobs: int, check: bool) -> Outcome:
    if config.domain.d != 1:
        raise ConfigError("domain.d: the stochastic equation is one-dimensional")
    _, _, _, header = _pde_setup(config, noise=True)
    results = map_replicates(functools.partial(_spde_replicate, config=config), config.replicates,
                             config.seed, 0, jobs)
    files = {"spde.csv": _csv(header, [r for res in results for r in res[0]])}
    clamped = sum(r[1] for r in results)
    checks = [CheckResult("spde-range", all(r[2] for r in results),
                          f"fields in [0,1]; {clamped} cell values clamped")] if check else []
    return Outcome(files, checks)


def _limit_config(config: RunConfig) -> LimitDualConfig:
    opts, model = config.options, config.model
    d = config.domain.d if config.domain is not None else 1
    if isinstance(model.radius, FixedRadius):
        cfg = LimitDualConfig.fixed_radius(d, model.radius.R, model.u, model.s, opts["dt"], opts["eps"])
    else:
        cfg = LimitDualConfig.stable(d, model.radius.alpha, model.u, model.s, opts["dt"], opts["eps"])
    if not opts["coalescence"]:
        cfg = LimitDualConfig(cfg.d, cfg.branch_rate, 0.0, cfg.dt, cfg.eps, cfg.variance,
                              cfg.alpha, cfg.stable_scale)
    return cfg


def _limit_positions(config: RunConfig, d: int) -> np.ndarray:
    pos = config.options.get("positions")
    return np.zeros((1, d)) if pos is None else np.asarray(pos, dtype=float).reshape(-1, d)


def _limit_replicate(i, rng, config: RunConfig):
    cfg = _limit_config(config)
    traj = simulate_limit_dual(cfg, _limit_positions(config, cfg.d), config.T, rng,
                               [0.0, *config.sample_times])
    return [[i, _r(t), int(n)] for t, n in zip(traj.times, traj.N)], traj.branches, traj.coalescences


def run_limit_dual_experiment(config: RunConfig, jobs: int, check: bool) -> Outcome:
    cfg = _limit_config(config)
    results = map_replicates(functools.partial(_limit_replicate, config=config), config.replicates,
                             config.seed, 0, jobs)
    rows = [r for res in results for r in res[0]]
    files = {"limit_dual.csv": _csv(["replicate", "t", "N"], rows)}
    checks = []
    if check and not cfg.coalescing:
        n0 = _limit_positions(config, cfg.d).shape[0]
        final = McReport.from_samples([res[0][-1][2] for res in results])
        growth = math.exp(cfg.branch_rate * config.T)
        target = n0 * growth
        # exact Yule spread: the sample SE is degenerate when no path branches
        se = math.sqrt(n0 * growth * (growth - 1) / final.n_replicates)
        ok = abs(final.estimate - target) <= 4 * se
        checks.append(CheckResult("yule-mean", bool(ok),
                                  f"E[N_T] = {final.estimate:.4f} +- {se:.4f}, target {target:.4f}"))
    elif check:
        ok = all(r[2] >= 1 for r in rows)
        checks.append(CheckResult("limit-dual-alive", ok, "at least one particle at all times"))
    return Outcome(files, checks)


def _qv_replicate(i, rng, config: RunConfig, coefficient: float):
    plan = config.plan()
    m = round(plan.domain.L / plan.h)
    state = ForwardState(plan.domain, plan.h, initial_field(config.document["initial"], config.domain, m))
    probe = ForwardState(config.domain, plan.scaled_h, state.w)
    f = config.observables[0].values(probe.domain, m)
    t, v, g = averaged_observables(plan, state, f, config.T, config.options["samples"], rng)
    return qv_estimate(t, v, g, coefficient).ratio


def run_diagnostics(config: RunConfig, jobs: int, check: bool) -> Outcome:
    opts, model = config.options, config.model
    d = config.domain.d if config.domain is not None else 1
    rows, checks = [], []
    kind = opts["kind"]
    if kind in ("msd", "stable-jumps"):
        plan = rescaled_dual_config(config.n, model)
        times = np.linspace(config.T / opts["n_times"], config.T, opts["n_times"])
        paths = lineage_paths(plan.model, d, times, opts["paths"], replicate_rng(config.seed, 0, 0),
                              plan.time_factor, plan.space_factor)
        branch_target = plan.per_lineage_branch_rate(d)
        rate, p = exponential_rate_check(paths.branch_times, config.T)
        rows.append(["branch_rate", _r(rate.estimate), _r(rate.std_error), _r(branch_target)])
        rows.append(["branch_ks_pvalue", _r(p), "", ""])
        limit_branch = (model.u * model.s * ball_volume(d, model.radius.R) if kind == "msd"
                        else model.u * model.s * ball_volume(d, 1.0) / model.radius.alpha)
        ok_branch = abs(rate.estimate / limit_branch - 1) <= 0.05 and p > 0.01
        if kind == "msd":
            if not isinstance(model.radius, FixedRadius):
                raise ConfigError("diagnostics.kind: msd needs a fixed radius")
            res = lineage_msd(paths.displacement, times)
            slope, se = res.slope()
            target = model.u * gamma_R(d, model.radius.R) * (1 + plan.model.s)
            rows.append(["msd_slope", _r(slope), _r(se), _r(target)])
            for t, v, s in zip(res.times, res.variance, res.std_error):
                rows.append([f"variance_t={t!r}", _r(v), _r(s), ""])
            checks.append(CheckResult("msd-slope", abs(slope / target - 1) <= 0.05,
                                      f"slope {slope:.4f} vs {target:.4f}"))
        else:
            if not isinstance(model.radius, StableRadii):
                raise ConfigError("diagnostics.kind: stable-jumps needs stable radii")
            jumps = np.linalg.norm(paths.jump_sizes, axis=1)
            k = max(10, int(math.sqrt(jumps.size)))
            hill = hill_estimator(jumps, k)
            rows.append(["hill_tail_index", _r(hill), "", _r(model.radius.alpha)])
            checks.append(CheckResult("hill-index", abs(hill - model.radius.alpha) <= 0.15,
                                      f"Hill({k}) = {hill:.4f}"))
        checks.append(CheckResult("branch-rate", bool(ok_branch),
                                  f"{rate.estimate:.4f} vs {limit_branch:.4f}, KS p = {p:.3f}"))
    else:
        if not config.observables:
            raise ConfigError("observables: qv needs a test function")
        noise = _pde_config_noise(config)
        ratios = map_replicates(functools.partial(_qv_replicate, config=config, coefficient=noise ** 2),
                                config.replicates, config.seed, 0, jobs)
        rep = McReport.from_samples(ratios)
        rows += [[f"qv_ratio_rep={i}", _r(r), "", ""] for i, r in enumerate(ratios)]
        rows.append(["qv_ratio_mean", _r(rep.estimate), _r(rep.std_error), "1.0"])
        checks.append(CheckResult("qv-ratio", 0.8 <= rep.estimate <= 1.2, f"mean ratio {rep.estimate:.4f}"))
    files = {"diagnostics.csv": _csv(["quantity", "value", "std_error", "target"], rows)}
    return Outcome(files, checks if check else [])


def _pde_config_noise(config: RunConfig) -> float:
    model = config.model
    if config.domain is None or config.domain.d != 1:
        raise ConfigError("domain.d: quadratic variation is checked in one dimension")
    if isinstance(model.radius, FixedRadius):
        return 2 * model.radius.R * model.u
    return 2 * model.u / math.sqrt(model.radius.alpha - 1)


RUNNERS = {"forward": run_forward_experiment, "dual": run_dual_experiment,
           "duality-check": run_duality_experiment, "scaling-table": run_scaling_table,
           "kernel": run_kernel_table, "pde": run_pde_experiment, "spde": run_spde_experiment,
           "limit-dual": run_limit_dual_experiment, "diagnostics": run_diagnostics}


# ---------------------------------------------------------------- command line

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slfv", description="Spatial Lambda-Fleming-Viot experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=name not in ("scaling-table",))
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", type=Path, default=Path("runs") / name)
        p.add_argument("--check", action="store_true", help="exit 3 if a built-in check fails")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SLFV_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError(f"--jobs must be at least 1, got {args.jobs}")
        if args.config is None:
            config = parse_document({}, args.command, args.seed)
        else:
            config = parse_config(args.config, args.command, args.seed)
        log.info("running %s (hash %s) into %s", config.experiment, config.config_hash[:12], args.out)
        manifest = run_experiment(config, args.out, args.jobs, args.check)
    except ConfigError as exc:
        for line in getattr(exc, "errors", [str(exc)]):
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except (SlfvError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    nested = [item for item in manifest.outputs if "/" in item["file"]]
    for item in manifest.outputs:
        if "/" not in item["file"]:
            print(f"wrote {args.out / item['file']}")
    if nested:
        print(f"wrote {len(nested)} snapshot files under {args.out}")
    failed = [c for c in manifest.checks if not c["passed"]]
    for c in manifest.checks:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: {c['detail']}")
    return EXIT_CHECK if (args.check and failed) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
