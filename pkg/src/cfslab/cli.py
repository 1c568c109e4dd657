"""Command-line runner: one subcommand per module, TOML configs, CSV/JSON outputs.

Exit codes: 0 when every declared assertion passes, 1 when any fails (the
manifest lists which), 2 for configuration errors.
"""
import argparse
import filecmp
import hashlib
import json
import os
import re
import sys
import tempfile
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from importlib import resources

import numpy as np

from . import __version__, cvp, lattice, measure, sea
from . import operators as op
from .io import IoFailure, read_json, write_csv, write_json
from .verify import (ASSERTION_COLUMNS, METRIC_COLUMNS, TOLERANCE_PROFILES, Report, charge_checks, pair_checks,
                     run_criteria)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUT_ENV = "CFSLAB_OUT"
SUBCOMMANDS = ("classify", "minimize", "sea", "lattice", "cvp", "verify")

PAIR_COLUMNS = ["i", "j", "class", "properly_timelike", "lagrangian", "spectral_weight", "time_direction"]
WEIGHT_COLUMNS = ["index", "weight", "trace", "el_profile"]
CONVERGENCE_COLUMNS = ["mass", "t", "x1", "x2", "x3", "eps", "error", "order"]
KERNEL_COLUMNS = ["site_x", "site_y", "xi_t", "xi_x", "xi_y", "xi_z", "re_trace", "im_trace", "norm",
                  "abstract_rel_err"]
CHARGE_COLUMNS = ["vector", "layer_t0", "layer_t1", "dirac_integral", "ratio"]
CVP_WEIGHT_COLUMNS = ["index", "label", "weight", "el_profile"]

# documented CSV schema of every subcommand; every run also writes assertions.csv and metrics.csv
SCHEMAS = {
    "classify": {"pairs.csv": PAIR_COLUMNS},
    "minimize": {"weights.csv": WEIGHT_COLUMNS, "log.csv": measure.LOG_COLUMNS},
    "sea": {"sea_grid.csv": ["mass"] + sea.SEA_COLUMNS, "convergence.csv": CONVERGENCE_COLUMNS},
    "lattice": {"survey.csv": lattice.SURVEY_COLUMNS, "kernel.csv": KERNEL_COLUMNS,
                "charge.csv": CHARGE_COLUMNS},
    "cvp": {"weights.csv": CVP_WEIGHT_COLUMNS, "log.csv": cvp.LOG_COLUMNS},
    "verify": {},
}
COMMON_CSV = {"assertions.csv": ASSERTION_COLUMNS, "metrics.csv": METRIC_COLUMNS}

# fixed stream index per subcommand for the seed splitter
STREAMS = {name: k for k, name in enumerate(SUBCOMMANDS)}


class ConfigError(ValueError):
    """Bad configuration; ``line`` is the 1-based line in the config file when known."""

    def __init__(self, message, path=None, line=None):
        self.path, self.line = path, line
        where = ""
        if path is not None:
            where = "%s:%s: " % (path, line) if line is not None else "%s: " % path
        super().__init__(where + message)


# ---------------------------------------------------------------- seeds

def stream(seed, index):
    """Generator ``index`` of the family keyed by ``seed``.

    Philox is counter based; each stream is the base generator jumped
    ``index`` times (``2^128`` draws apart), so streams never overlap.
    """
    return np.random.Generator(np.random.Philox(key=seed).jumped(index))


def child_seed(rng):
    return int(rng.integers(2 ** 31))


# ---------------------------------------------------------------- config

_HEADER = re.compile(r"^\s*\[+\s*([^\]]+?)\s*\]+\s*(#.*)?$")
_KEY = re.compile(r"^\s*([A-Za-z0-9_\-]+|\"[^\"]*\")\s*=")


def key_lines(text):
    """``(table, key) -> line`` for the keys of a TOML document, and ``table -> line``."""
    out = {}
    table = ""
    for n, raw in enumerate(text.splitlines(), 1):
        m = _HEADER.match(raw)
        if m:
            table = m.group(1).strip()
            out.setdefault((table, None), n)
            continue
        m = _KEY.match(raw)
        if m:
            out.setdefault((table, m.group(1).strip('"')), n)
    return out


# per-subcommand keys with their defaults; None marks an optional key
SECTION_KEYS = {
    "run": {"seed": 0, "workers": 1, "tolerance_profile": "default"},
    "classify": {"fixture": "operators.json", "count": None, "dim_h": 6, "spin_dim": 2, "tol": op.TOL_CLASSIFY,
                 "kappa": 0.0},
    "minimize": dict({"fixture": None, "count": 5, "dim_h": 4, "spin_dim": 1, "support": False},
                     **{f.name: f.default for f in fields(measure.SolverConfig)
                        if f.name not in ("seed", "workers")}),
    "sea": {"masses": [0.5, 1.0, 2.0], "t_min": -2.0, "t_max": 2.0, "t_count": 20, "r_min": 0.0, "r_max": 2.0,
            "r_count": 20, "sweep_points": [list(p) for p in
                                            ((0.3, 1.0, 0.0, 0.0), (1.5, 0.4, 0.0, 0.0), (0.0, 0.8, 0.0, 0.1))],
            "sweep_eps": [1e-2, 1e-3, 1e-4]},
    "lattice": dict({k: v for k, v in lattice.BoxConfig().to_dict().items()},
                    band=None, survey=True, kernel_pairs=20, krein_family=5, krein_support=6,
                    charge_t0=1, charge_t1=2, charge_modes=None, charge_box=None,
                    closed_form_points=[list(x) for x in (xi.tolist() for xi in lattice.REFERENCE_XI)]),
    "cvp": dict({"instance": None, "g": [1.0, 2.0, 1.0], "orbits": ["octahedron", "cube", "cuboctahedron"],
                 "conservation": True},
                **{f.name: f.default for f in fields(cvp.CvpConfig) if f.name != "seed"}),
    "verify": {"criteria": [1, 2, 3, 4, 5, 6, 7], "pairs": 10000},
}
SECTION_KEYS["lattice"].pop("max_f")


def _typecheck(name, value, default):
    if default is None or value is None:
        return
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError("%s must be true or false" % name)
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError("%s must be an integer" % name)
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError("%s must be a number" % name)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise TypeError("%s must be a string" % name)
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise TypeError("%s must be an array" % name)


def load_config(path, subcommand):
    """Parse and validate a TOML config; every error carries the file line."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError("cannot read config: %s" % exc.strerror, path)
    text = raw.decode("utf-8", errors="replace")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else None
        raise ConfigError("malformed TOML: %s" % exc, path, line)
    lines = key_lines(text)
    allowed = {"run", "tolerances", subcommand}
    for table, body in data.items():
        if table not in allowed:
            raise ConfigError("unknown table [%s] for '%s'" % (table, subcommand), path,
                              lines.get((table, None), lines.get(("", table))))
        if not isinstance(body, dict):
            raise ConfigError("'%s' must be a table" % table, path, lines.get(("", table)))
    cfg = {"run": dict(SECTION_KEYS["run"]), "tolerances": {}, subcommand: dict(SECTION_KEYS[subcommand])}
    for table, body in data.items():
        known = TOLERANCE_PROFILES["default"] if table == "tolerances" else SECTION_KEYS[table]
        for key, value in body.items():
            line = lines.get((table, key))
            if key not in known:
                raise ConfigError("unknown key '%s' in [%s]" % (key, table), path, line)
            default = float(known[key]) if table == "tolerances" else known[key]
            try:
                _typecheck(key, value, default)
            except TypeError as exc:
                raise ConfigError(str(exc), path, line)
            cfg[table][key] = float(value) if isinstance(default, float) and value is not None else value
    cfg["_lines"] = lines
    cfg["_path"] = path
    cfg["_dir"] = os.path.dirname(os.path.abspath(path))
    return cfg


def default_config(subcommand):
    return {"run": dict(SECTION_KEYS["run"]), "tolerances": {},
            subcommand: dict(SECTION_KEYS[subcommand]), "_lines": {}, "_path": None, "_dir": os.getcwd()}


def _line(cfg, table, key):
    return cfg["_lines"].get((table, key))


def _fail(cfg, table, key, message):
    raise ConfigError(message, cfg["_path"], _line(cfg, table, key))


def fixture_path(name):
    return str(resources.files("cfslab").joinpath("fixtures", name))


def _resolve(cfg, table, key):
    """A file named in the config: relative to the config file, else a shipped fixture."""
    name = cfg[table][key]
    for cand in (os.path.join(cfg["_dir"], name), fixture_path(name)):
        if os.path.isfile(cand):
            return cand
    _fail(cfg, table, key, "file not found: %s" % name)


def public_config(cfg):
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def config_hash(cfg):
    text = json.dumps(public_config(cfg), sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    subcommand: str
    config_hash: str
    seed: int
    workers: int
    tolerance_profile: str
    tolerances: dict
    started: str
    finished: str = ""
    outputs: list = field(default_factory=list)
    assertions: list = field(default_factory=list)
    version: str = __version__

    @property
    def passed(self):
        return all(a["passed"] for a in self.assertions)

    @property
    def failed(self):
        return ["%s/%s" % (a["group"], a["name"]) for a in self.assertions if not a["passed"]]

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def export(manifest, out_dir, fmt="json"):
    """Write the manifest as ``manifest.json`` or its assertion table as ``manifest.csv``."""
    if fmt == "json":
        return write_json(os.path.join(out_dir, "manifest.json"), manifest.to_dict())
    if fmt == "csv":
        rows = [[a[c] for c in ASSERTION_COLUMNS] for a in manifest.assertions]
        return write_csv(os.path.join(out_dir, "manifest.csv"), ASSERTION_COLUMNS, rows)
    raise ValueError("format must be 'json' or 'csv'")


def load_manifest(path):
    return RunManifest.from_dict(read_json(path))


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------- subcommands

class Run:
    """Output directory, report and generators of one subcommand run."""

    def __init__(self, name, cfg, out_dir, seed, workers, tol):
        self.name, self.cfg, self.out_dir = name, cfg, out_dir
        self.seed, self.workers, self.tol = seed, workers, tol
        self.report = Report()
        self.outputs = []
        self.rng = stream(seed, STREAMS[name])

    @property
    def section(self):
        return self.cfg[self.name]

    def csv(self, name, rows, header=None):
        header = header or SCHEMAS[self.name].get(name) or COMMON_CSV[name]
        self.outputs.append(os.path.basename(write_csv(os.path.join(self.out_dir, name), header, rows)))

    def json(self, name, obj):
        self.outputs.append(os.path.basename(write_json(os.path.join(self.out_dir, name), obj)))


def _operators(run, table):
    sec = run.section
    if sec.get("count") is not None:
        n, f = sec["spin_dim"], sec["dim_h"]
        if sec["count"] < 1 or n < 1 or f < 2 * n:
            _fail(run.cfg, table, "count", "need count >= 1 and dim_h >= 2 spin_dim >= 2")
        return [op.random_operator(run.rng, f, n) for _ in range(sec["count"])]
    path = _resolve(run.cfg, table, "fixture")
    try:
        with open(path) as fh:
            return op.loads_operators(fh.read())
    except (ValueError, KeyError, op.OperatorError) as exc:
        _fail(run.cfg, table, "fixture", "bad operator fixture %s: %s" % (path, exc))


def run_classify(run):
    sec = run.section
    if not 0 < sec["tol"] < 0.5:
        _fail(run.cfg, "classify", "tol", "tol must lie in (0, 0.5)")
    pts = _operators(run, "classify")
    rows, pair_list = [], []
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            x, y = pts[i], pts[j]
            if x.dim_h != y.dim_h:
                _fail(run.cfg, "classify", "fixture", "operators %d and %d act on different spaces" % (i, j))
            c = op.classify_causal(x, y, sec["tol"], check_proper=True)
            sp = op.product_spectrum(x, y)
            rows.append([i, j, c.tag, c.properly_timelike, op.lagrangian(x, y, sec["kappa"]),
                         op.spectral_weight(sp), op.time_direction(x, y)])
            pair_list.append((x, y))
    run.csv("pairs.csv", rows)
    pair_checks(run.report, "classify", pair_list, run.tol, sec["tol"])


def run_minimize(run):
    sec = run.section
    keys = {f.name for f in fields(measure.SolverConfig)} - {"seed", "workers"}
    try:
        cfg = measure.SolverConfig(seed=child_seed(run.rng), workers=run.workers,
                                   **{k: sec[k] for k in keys})
    except ValueError as exc:
        raise ConfigError(str(exc), run.cfg["_path"])
    pts = _operators(run, "minimize")
    m = measure.minimize_weights(pts, cfg)
    kappa = m.info["kappa"]
    log = m.info["log"]
    if sec["support"]:
        m = measure.minimize_support(cfg, m)
        log = m.info["log"] or log
        kappa = m.info.get("kappa", kappa)
        run.report.record("minimize", "el_spread_before_support", m.info.get("el_spread_initial", np.nan))
    cfg_k = measure.SolverConfig(**dict(asdict(cfg), kappa=kappa))
    rep = measure.el_residual(m, cfg_k)
    scale = max(abs(rep.mean), 1e-300)
    sup = m.support
    off = np.setdiff1d(np.arange(len(m)), sup)
    deficit = max(0.0, float(rep.profile[sup].min() - rep.profile[off].min())) / scale if off.size else 0.0
    act = measure.action_report(m, kappa)
    rows = [[i, m.weights[i], m.points[i].trace, rep.profile[i]] for i in range(len(m))]
    run.csv("weights.csv", rows)
    run.csv("log.csv", [r[:len(measure.LOG_COLUMNS)] for r in log])
    run.json("measure.json", m.to_dict())
    run.report.check("minimize", "el_spread", rep.spread / scale, run.tol["el"])
    run.report.check("minimize", "off_support_deficit", deficit, run.tol["el"])
    run.report.check("minimize", "volume", abs(act.volume - cfg.target_volume) / cfg.target_volume,
                     run.tol["lagrangian"])
    run.report.record("minimize", "action", act.action)
    run.report.record("minimize", "boundedness", act.boundedness)
    run.report.record("minimize", "lambda", rep.lam)
    run.report.record("minimize", "support_size", len(sup))


def run_sea(run):
    sec = run.section
    masses = sec["masses"]
    if not masses or any(not isinstance(m, (int, float)) or m <= 0 for m in masses):
        _fail(run.cfg, "sea", "masses", "masses must be a nonempty array of positive numbers")
    for key in ("t_count", "r_count"):
        if sec[key] < 1:
            _fail(run.cfg, "sea", key, "%s must be positive" % key)
    ts = np.linspace(sec["t_min"], sec["t_max"], sec["t_count"])
    rs = np.linspace(sec["r_min"], sec["r_max"], sec["r_count"])
    if rs.min() < 0:
        _fail(run.cfg, "sea", "r_min", "r must be nonnegative")
    rows = []
    for m in masses:
        rows += [[float(m)] + r for r in sea.sea_grid(float(m), ts, rs)]
    run.csv("sea_grid.csv", rows)
    eps = [float(e) for e in sec["sweep_eps"]]
    if len(eps) < 2 or any(e <= 0 for e in eps):
        _fail(run.cfg, "sea", "sweep_eps", "sweep_eps needs at least two positive values")
    conv, orders = [], []
    for m in masses:
        for p in sec["sweep_points"]:
            if len(p) != 4:
                _fail(run.cfg, "sea", "sweep_points", "sweep points are four-vectors")
            xi = sea.FourVector(*map(float, p))
            try:
                errs, order = sea.convergence_sweep(xi, float(m), eps)
            except sea.LightconeSingular:
                _fail(run.cfg, "sea", "sweep_points", "sweep point %s lies on the light cone" % (p,))
            orders.append(order)
            conv += [[float(m)] + [float(v) for v in p] + [e, err, order] for e, err in zip(eps, errs)]
    run.csv("convergence.csv", conv)
    if orders:
        run.report.check("sea", "eps_convergence_order", min(orders), run.tol["order"], ">=")


def run_lattice(run):
    sec = run.section
    box = {k: sec[k] for k in lattice.BoxConfig().to_dict() if k in sec}
    try:
        cfg = lattice.BoxConfig.from_mapping(box)
    except lattice.LatticeError as exc:
        raise ConfigError(str(exc), run.cfg["_path"], _line(run.cfg, "lattice", None))
    s = lattice.build_system(cfg, workers=run.workers)
    run.report.record("lattice", "sites", len(s.coords))
    run.report.record("lattice", "merged_sites", s.merged)
    # kernel grid on sampled site pairs, with the abstract-kernel comparison
    n = len(s.coords)
    rows, worst = [], 0.0
    for _ in range(sec["kernel_pairs"]):
        i, j = (int(v) for v in run.rng.choice(n, 2, replace=False))
        a = lattice.kernel_eps(s, i, j)
        b = lattice.transported_kernel(s, i, j)
        err = float(np.max(np.abs(a - b)) / np.max(np.abs(a)))
        worst = max(worst, err)
        tr = np.trace(a)
        rows.append([i, j] + lattice.minimal_image(s, i, j).tolist() + [tr.real, tr.imag, np.linalg.norm(a), err])
    run.csv("kernel.csv", rows)
    run.report.check("lattice", "kernel_vs_abstract_kernel", worst, run.tol["lattice_kernel"])
    if sec["krein_family"] > 0:
        support = min(sec["krein_support"], n)
        rep = lattice.krein_gram(s, lattice.random_wave_family(s, sec["krein_family"], support, run.rng))
        scale = float(np.max(np.abs(rep.minus_p)))
        run.report.check("lattice", "minus_p_min_eigenvalue", rep.neg_p_min_eig / scale, -run.tol["krein"], ">=")
    if sec["survey"]:
        band = 5 * cfg.eps if sec["band"] is None else float(sec["band"])
        if band < cfg.eps:
            _fail(run.cfg, "lattice", "band", "band must be at least eps")
        sv = lattice.causal_agreement_survey(s, band, workers=run.workers)
        run.csv("survey.csv", sv.rows())
        run.report.check("lattice", "survey_agreement", sv.agreement, run.tol["survey"], ">=")
        for key in ("excluded", "time_forward", "time_backward", "time_undetermined"):
            run.report.record("lattice", key, getattr(sv, key))
        # one orientation on all properly timelike pairs; which sign labels "later" is convention
        decided = sv.time_forward + sv.time_backward
        if decided:
            run.report.check("lattice", "time_orientation_one_sided",
                             max(sv.time_forward, sv.time_backward) / decided, 1.0, ">=")
    else:
        run.csv("survey.csv", [])
    # charge layers need time slices on both sides of Omega; they may use their own box
    cs = s
    if sec["charge_box"] is not None:
        if not isinstance(sec["charge_box"], dict):
            _fail(run.cfg, "lattice", "charge_box", "charge_box must be an inline table of box keys")
        try:
            cs = lattice.build_system(lattice.BoxConfig.from_mapping(sec["charge_box"]), workers=run.workers)
        except lattice.LatticeError as exc:
            _fail(run.cfg, "lattice", "charge_box", "charge_box: %s" % exc)
    t0, t1 = sec["charge_t0"], sec["charge_t1"]
    if not 0 <= t0 <= t1 < cs.config.n_t:
        _fail(run.cfg, "lattice", "charge_t0", "need 0 <= charge_t0 <= charge_t1 < n_t")
    modes = sec["charge_modes"]
    if modes is not None and any(not isinstance(l, int) or not 0 <= l < cs.basis.f for l in modes):
        _fail(run.cfg, "lattice", "charge_modes", "charge modes must be integers in [0, %d)" % cs.basis.f)
    rows = charge_checks(run.report, "lattice", cs, run.rng, run.tol, t0, t1, modes, run.workers)
    run.csv("charge.csv", rows)
    errs = []
    for k, p in enumerate(sec["closed_form_points"]):
        if len(p) != 4:
            _fail(run.cfg, "lattice", "closed_form_points", "closed-form points are four-vectors")
        xi = np.asarray(p, dtype=float)
        errs.append(lattice.closed_form_error(cfg, xi))
        run.report.record("lattice", "regularized_closed_form_error_%d" % k,
                          lattice.closed_form_error(cfg, xi, regularized=True))
    if errs:
        run.report.check("lattice", "closed_form_alpha_beta", max(errs), run.tol["closed_form"])


def run_cvp(run):
    sec = run.section
    try:
        if sec["instance"] is not None:
            with open(_resolve(run.cfg, "cvp", "instance")) as fh:
                space = cvp.space_from_dict(json.load(fh))
        else:
            space = cvp.sphere_space(cvp.Profile(sec["g"]), tuple(sec["orbits"]))
        cfg = cvp.CvpConfig(seed=child_seed(run.rng),
                            **{f.name: sec[f.name] for f in fields(cvp.CvpConfig) if f.name != "seed"})
    except (cvp.CvpError, ValueError, KeyError) as exc:
        key = "instance" if sec["instance"] is not None else "g"
        _fail(run.cfg, "cvp", key, "bad instance: %s" % exc)
    res = cvp.cvp_minimize(space, cfg)
    ell = 2 * space.lagrangian @ res.weights
    rows = [[i, json.dumps(p) if not isinstance(p, (str, int)) else p, res.weights[i], ell[i]]
            for i, p in enumerate(cvp.space_to_dict(space).get("points", space.points))]
    if space.coords is not None:
        rows = [[i, "%.17g %.17g %.17g" % tuple(space.coords[i]), res.weights[i], ell[i]] for i in range(len(space))]
    run.csv("weights.csv", rows)
    run.csv("log.csv", [[k, v] for k, v in enumerate(res.history)])
    run.json("result.json", cvp.result_to_dict(res))
    run.report.check("cvp", "el_spread", res.el_spread, run.tol["el"])
    run.report.check("cvp", "off_support_gap", res.off_support_gap, -run.tol["el"], ">=")
    run.report.record("cvp", "action", res.action)
    if sec["conservation"] and space.coords is not None and space.profile is not None:
        try:
            worst, _ = cvp.symmetry_conservation(space, cfg, result=res)
        except cvp.NotConverged:
            worst = np.inf
        run.report.check("cvp", "rotation_conservation", worst / res.action, run.tol["cvp_conservation"])


DETERMINISM_RUNS = ("classify.toml", "minimize.toml", "sea.toml", "lattice.toml", "cvp.toml")


def _determinism(run):
    """Run the shipped configs twice with this seed and worker count and compare the CSV bytes."""
    mismatched = 0
    with tempfile.TemporaryDirectory() as tmp:
        for name in DETERMINISM_RUNS:
            sub = name.split(".")[0]
            dirs = []
            for k in range(2):
                d = os.path.join(tmp, "%s-%d" % (sub, k))
                execute(sub, fixture_path(name), d, run.seed, run.workers, "default", quiet=True)
                dirs.append(d)
            files = sorted(f for f in os.listdir(dirs[0]) if f.endswith(".csv"))
            same, diff, err = filecmp.cmpfiles(dirs[0], dirs[1], files, shallow=False)
            mismatched += len(diff) + len(err)
            run.report.record(7, "csv_files_%s" % sub, len(files))
    run.report.check(7, "csv_byte_mismatches", mismatched, 0)


def run_verify(run):
    sec = run.section
    crit = sec["criteria"]
    if any(c not in range(1, 8) for c in crit):
        _fail(run.cfg, "verify", "criteria", "criteria are numbered 1 to 7")
    if sec["pairs"] < 1:
        _fail(run.cfg, "verify", "pairs", "pairs must be positive")
    numbered = [c for c in crit if c != 7]
    run_criteria(run.report, lambda k: stream(run.seed, 100 + k), run.tol, numbered, run.workers, sec["pairs"])
    if 7 in crit:
        _determinism(run)


RUNNERS = {"classify": run_classify, "minimize": run_minimize, "sea": run_sea, "lattice": run_lattice,
           "cvp": run_cvp, "verify": run_verify}


def execute(subcommand, config_path, out_dir, seed=None, workers=None, profile=None, quiet=False):
    """Run one subcommand; returns the manifest.  Raises ``ConfigError`` on bad input."""
    cfg = load_config(config_path, subcommand) if config_path else default_config(subcommand)
    runsec = cfg["run"]
    seed = runsec["seed"] if seed is None else seed
    workers = runsec["workers"] if workers is None else workers
    profile = runsec["tolerance_profile"] if profile is None else profile
    if not isinstance(seed, int) or seed < 0:
        _fail(cfg, "run", "seed", "seed must be a nonnegative integer")
    if not isinstance(workers, int) or workers < 1:
        _fail(cfg, "run", "workers", "workers must be a positive integer")
    if profile not in TOLERANCE_PROFILES:
        _fail(cfg, "run", "tolerance_profile",
              "unknown tolerance profile '%s' (have %s)" % (profile, ", ".join(TOLERANCE_PROFILES)))
    tol = dict(TOLERANCE_PROFILES[profile], **cfg["tolerances"])
    cfg["run"] = {"seed": seed, "workers": workers, "tolerance_profile": profile}
    os.makedirs(out_dir, exist_ok=True)
    man = RunManifest(subcommand, config_hash(cfg), seed, workers, profile, tol, _now())
    run = Run(subcommand, cfg, out_dir, seed, workers, tol)
    RUNNERS[subcommand](run)
    run.csv("assertions.csv", [a.row() for a in run.report.assertions])
    run.csv("metrics.csv", run.report.metrics)
    run.json("config.json", public_config(cfg))
    man.outputs = sorted(run.outputs + ["manifest.json"])
    man.assertions = [dict(zip(ASSERTION_COLUMNS, a.row())) for a in run.report.assertions]
    man.finished = _now()
    export(man, out_dir, "json")
    if not quiet:
        for a in run.report.assertions:
            print("%s %s/%s = %.6g (%s %.3g)" % ("PASS" if a.passed else "FAIL", a.group, a.name, a.value,
                                                 a.relation, a.threshold))
    return man


def build_parser():
    p = argparse.ArgumentParser(prog="cfslab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version="cfslab " + __version__)
    sub = p.add_subparsers(dest="subcommand", required=True)
    helps = {"classify": "pairwise causal reports for operator fixtures",
             "minimize": "minimize the causal action over weights (and optionally points)",
             "sea": "closed-form kernel grids and regularization sweeps",
             "lattice": "lattice system: kernel, Krein positivity, survey, charge layers",
             "cvp": "compact causal variational problems",
             "verify": "full property suite"}
    for name in SUBCOMMANDS:
        s = sub.add_parser(name, help=helps[name])
        s.add_argument("--config", help="TOML config (default: built-in defaults)")
        s.add_argument("--out", help="output directory (default: $%s/<subcommand> or runs/<subcommand>)" % OUT_ENV)
        s.add_argument("--seed", type=int, help="global seed (overrides [run] seed)")
        s.add_argument("--workers", type=int, help="worker threads (overrides [run] workers)")
        s.add_argument("--tolerance-profile", choices=sorted(TOLERANCE_PROFILES),
                       help="named threshold set (overrides [run] tolerance_profile)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = args.out or os.path.join(os.environ.get(OUT_ENV, "runs"), args.subcommand)
    try:
        man = execute(args.subcommand, args.config, out, args.seed, args.workers, args.tolerance_profile)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except IoFailure as exc:
        print("i/o error: %s" % exc, file=sys.stderr)
        return 2
    if not man.passed:
        print("failed assertions: %s" % ", ".join(man.failed), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
