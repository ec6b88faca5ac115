"""Batch front end: config file in, CSV reports and a summary out.

Usage::

    peridyn-oc <config-path> [--override key=value ...] [--threads N]

The configuration is one INI-style file ([section] headers, ``key =
value`` pairs, ``#`` comments).  Recognized sections and keys, with
defaults in parentheses:

* ``[domain]``   ``dim`` (1), ``bounds`` ("0,1"; four numbers in 2-d)
* ``[kernel]``   ``family`` (constant), ``delta`` (0 = limit model),
  ``s`` (fractional order, required for the fractional family)
* ``[material]`` ``expr`` (1), ``hmin``, ``hmax`` (optional bounds)
* ``[control]``  ``lambda`` (1.0), ``box_lower`` (-1), ``box_upper`` (1),
  ``gamma`` (1, tracking weight), ``u_des`` (0), ``control_weight`` (1)
* ``[discretization]`` ``h`` (0.0625), ``quad_outer`` (3),
  ``quad_inner`` (3), ``grading_levels`` (20), ``grading_ratio`` (0.5)
* ``[solver]``   ``tol`` (1e-8), ``maxit`` (500), ``inner_tol`` (1e-10)
* ``[study]``    ``type`` (solve | gamma | hstudy | acstudy | poincare |
  omega), ``deltas``, ``h_list`` (comma-separated floats), ``field``
  (gamma-study displacement), ``zero_extend`` (auto), ``ref_factor``
  (4), ``paths`` ("2h,4h,sqrt"), ``probes`` (';'-separated
  expressions), ``ac_tol`` (1e-2), ``manufactured`` (false),
  ``adjoint_probe`` (false), ``local_h`` (optional)
* ``[output]``   ``dir`` (the ``PERIDYN_OC_OUTDIR`` environment
  variable, else the current directory)

``--override section.key=value`` rewrites entries before validation;
``--threads`` sets worker threads for assembly (results are bytewise
independent of the thread count).

Exit status: 0 on success, 2 when any built-in study assertion fails,
1 on errors (a diagnostic file with the traceback is left in the output
directory).  Every float in a CSV is printed with 17 significant
digits, and identical configurations produce byte-identical CSVs.
"""

import argparse
import configparser
import math
import os
import re
import sys
import time
import traceback

import numpy as np

from .control import (ControlBox, ControlProblem, build_operators,
                      export_solution, solve_kkt_projected_gradient,
                      verify_kkt)
from .convergence_lab import (AdjointProbe, Check, StudyReport,
                              asymptotic_compatibility_study,
                              gamma_energy_study, h_refinement_study,
                              manufactured_forward_study, measure_omega,
                              poincare_sweep)
from .errors import ConfigurationError, PeridynError
from .kernel import KernelSpec, MaterialField
from .mesh import Domain, build_mesh
from .quadrature import QuadratureRule

STUDY_TYPES = ("solve", "gamma", "hstudy", "acstudy", "poincare", "omega")

_KNOWN_KEYS = {
    "domain": {"dim", "bounds"},
    "kernel": {"family", "delta", "s"},
    "material": {"expr", "hmin", "hmax"},
    "control": {"lambda", "box_lower", "box_upper", "gamma", "u_des",
                "control_weight"},
    "discretization": {"h", "quad_outer", "quad_inner", "grading_levels",
                       "grading_ratio"},
    "solver": {"tol", "maxit", "inner_tol"},
    "study": {"type", "deltas", "h_list", "field", "zero_extend",
              "ref_factor", "paths", "probes", "ac_tol", "manufactured",
              "adjoint_probe", "local_h"},
    "output": {"dir"},
}


class RunConfig:
    """Validated, fully defaulted run description."""

    def __init__(self, **kw):
        self.__dict__.update(kw)

    def __repr__(self):
        body = ", ".join("%s=%r" % kv for kv in sorted(self.__dict__.items()))
        return "RunConfig(%s)" % body


# ----------------------------------------------------------------------
# parsing

def _key_lines(path):
    """Map section.key to its line number for error messages."""
    lines = {}
    section = None
    try:
        with open(path) as fh:
            for no, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                m = re.match(r"\[(.+)\]$", line)
                if m:
                    section = m.group(1).strip().lower()
                    lines[section] = no
                    continue
                if "=" in line and section is not None:
                    key = line.split("=", 1)[0].strip().lower()
                    lines["%s.%s" % (section, key)] = no
    except OSError:
        pass
    return lines


class _Collector:
    """Typed accessors over the raw parser that record every problem."""

    def __init__(self, parser, lines):
        self.parser = parser
        self.lines = lines
        self.problems = []

    def _where(self, section, key):
        path = "%s.%s" % (section, key)
        no = self.lines.get(path)
        return "%s (line %d)" % (path, no) if no else path

    def fail(self, section, key, message):
        self.problems.append("%s: %s" % (self._where(section, key), message))

    def raw(self, section, key):
        if self.parser.has_option(section, key):
            return self.parser.get(section, key).strip()
        return None

    def string(self, section, key, default=None, choices=None):
        v = self.raw(section, key)
        if v is None:
            return default
        if choices is not None and v not in choices:
            self.fail(section, key, "must be one of %s, got %r"
                      % ("/".join(choices), v))
            return default
        return v

    def number(self, section, key, default=None, kind=float, minimum=None,
               maximum=None, strict_min=False):
        v = self.raw(section, key)
        if v is None:
            return default
        try:
            val = kind(v)
        except ValueError:
            self.fail(section, key, "expected %s, got %r"
                      % (kind.__name__, v))
            return default
        if minimum is not None:
            low_ok = val > minimum if strict_min else val >= minimum
            if not low_ok:
                self.fail(section, key, "must be %s %g, got %g"
                          % (">" if strict_min else ">=", minimum, val))
                return default
        if maximum is not None and val > maximum:
            self.fail(section, key, "must be <= %g, got %g" % (maximum, val))
            return default
        return val

    def boolean(self, section, key, default=False):
        v = self.raw(section, key)
        if v is None:
            return default
        low = v.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        self.fail(section, key, "expected a boolean, got %r" % v)
        return default

    def float_list(self, section, key, default=None):
        v = self.raw(section, key)
        if v is None:
            return default
        out = []
        for tok in v.split(","):
            tok = tok.strip()
            if not tok:
                continue
            try:
                out.append(float(tok))
            except ValueError:
                self.fail(section, key,
                          "expected comma-separated numbers, got %r" % tok)
                return default
        if not out:
            self.fail(section, key, "list is empty")
            return default
        return out


def _apply_overrides(parser, overrides, problems):
    for item in overrides:
        if "=" not in item:
            problems.append("override %r: expected section.key=value" % item)
            continue
        key, value = item.split("=", 1)
        if "." not in key:
            problems.append("override %r: key must be section.key" % item)
            continue
        section, opt = key.strip().lower().split(".", 1)
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, opt.strip(), value.strip())


def parse_config(path, overrides=()):
    """Read and validate a run configuration.

    Validation problems are collected exhaustively (not first-failure)
    and raised together on a :class:`ConfigurationError` whose
    ``problems`` attribute lists one message per issue, each with its
    ``section.key`` path and, when known, the line number.
    """
    parser = configparser.ConfigParser(interpolation=None,
                                       inline_comment_prefixes=("#",))
    problems = []
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except OSError as exc:
        raise ConfigurationError("cannot read config %s: %s" % (path, exc))
    except configparser.Error as exc:
        raise ConfigurationError("cannot parse config %s: %s" % (path, exc))

    _apply_overrides(parser, overrides, problems)
    cc = _Collector(parser, _key_lines(path))
    cc.problems = problems

    for section in parser.sections():
        known = _KNOWN_KEYS.get(section)
        if known is None:
            problems.append("%s: unknown section" % section)
            continue
        for key in parser.options(section):
            if key not in known:
                cc.fail(section, key, "unknown key")

    dim = cc.number("domain", "dim", default=1, kind=int)
    if dim not in (1, 2):
        cc.fail("domain", "dim", "must be 1 or 2, got %r" % dim)
        dim = 1
    bounds = cc.float_list("domain", "bounds",
                           default=[0.0, 1.0] * dim)
    if bounds is not None:
        if len(bounds) != 2 * dim:
            cc.fail("domain", "bounds", "need %d numbers for dim=%d, got %d"
                    % (2 * dim, dim, len(bounds)))
            bounds = [0.0, 1.0] * dim
        elif any(bounds[2 * k] >= bounds[2 * k + 1] for k in range(dim)):
            cc.fail("domain", "bounds", "each axis needs lower < upper")
            bounds = [0.0, 1.0] * dim

    family = cc.string("kernel", "family", default="constant",
                       choices=("constant", "fractional"))
    delta = cc.number("kernel", "delta", default=0.0, minimum=0.0)
    s = cc.number("kernel", "s", default=None)
    if family == "fractional":
        if s is None:
            cc.fail("kernel", "s", "the fractional family requires s")
        elif not 0.0 < s < 1.0:
            cc.fail("kernel", "s", "must lie in (0, 1), got %g" % s)
        elif s == 0.5:
            cc.fail("kernel", "s", "s = 0.5 is excluded (the half-order "
                    "case falls outside the admissible range); pick any "
                    "other value in (0, 1)")
    elif s is not None:
        cc.fail("kernel", "s", "only the fractional family takes s")

    material_expr = cc.string("material", "expr", default="1")
    hmin = cc.number("material", "hmin", default=None, minimum=0.0,
                     strict_min=True)
    hmax = cc.number("material", "hmax", default=None)
    if hmin is not None and hmax is not None and hmin > hmax:
        cc.fail("material", "hmin", "hmin %g exceeds hmax %g" % (hmin, hmax))

    lam = cc.number("control", "lambda", default=1.0, minimum=0.0,
                    strict_min=True)
    box_lower = cc.number("control", "box_lower", default=-1.0)
    box_upper = cc.number("control", "box_upper", default=1.0)
    if box_lower is not None and box_upper is not None:
        if box_lower > box_upper:
            cc.fail("control", "box_lower", "lower bound %g exceeds upper "
                    "bound %g" % (box_lower, box_upper))
        elif box_lower > 0.0 or box_upper < 0.0:
            cc.fail("control", "box_lower",
                    "the admissible box must contain 0, got [%g, %g]"
                    % (box_lower, box_upper))
    gamma = cc.string("control", "gamma", default="1")
    u_des = cc.string("control", "u_des", default="0")
    control_weight = cc.string("control", "control_weight", default="1")

    h = cc.number("discretization", "h", default=0.0625, minimum=0.0,
                  strict_min=True)
    quad_outer = cc.number("discretization", "quad_outer", default=3,
                           kind=int, minimum=1)
    quad_inner = cc.number("discretization", "quad_inner", default=3,
                           kind=int, minimum=1)
    grading_levels = cc.number("discretization", "grading_levels",
                               default=20, kind=int, minimum=0)
    grading_ratio = cc.number("discretization", "grading_ratio",
                              default=0.5)
    if grading_ratio is not None and not 0.0 < grading_ratio < 1.0:
        cc.fail("discretization", "grading_ratio",
                "must lie strictly between 0 and 1, got %g" % grading_ratio)
        grading_ratio = 0.5

    tol = cc.number("solver", "tol", default=1e-8, minimum=0.0,
                    strict_min=True)
    maxit = cc.number("solver", "maxit", default=500, kind=int, minimum=1)
    inner_tol = cc.number("solver", "inner_tol", default=1e-10,
                          minimum=0.0, strict_min=True)

    study_type = cc.string("study", "type", default="solve",
                           choices=STUDY_TYPES)
    deltas = cc.float_list("study", "deltas", default=None)
    h_list = cc.float_list("study", "h_list", default=None)
    field = cc.string("study", "field", default=None)
    zero_extend = cc.string("study", "zero_extend", default="auto",
                            choices=("auto", "true", "false"))
    ref_factor = cc.number("study", "ref_factor", default=4, kind=int,
                           minimum=4)
    paths = cc.string("study", "paths", default="2h,4h,sqrt")
    probes_raw = cc.string("study", "probes", default=None)
    ac_tol = cc.number("study", "ac_tol", default=1e-2, minimum=0.0,
                       strict_min=True)
    manufactured = cc.boolean("study", "manufactured", default=False)
    adjoint_probe = cc.boolean("study", "adjoint_probe", default=False)
    local_h = cc.number("study", "local_h", default=None, minimum=0.0,
                        strict_min=True)

    if study_type in ("gamma", "poincare") and deltas is None:
        cc.fail("study", "deltas",
                "the %s study needs a delta sequence" % study_type)
    if study_type in ("hstudy", "acstudy", "omega") and h_list is None:
        cc.fail("study", "h_list",
                "the %s study needs a mesh-size sequence" % study_type)
    if study_type in ("hstudy", "acstudy") and not manufactured:
        if delta is not None and delta > 0 and h is not None:
            pass  # mesh padding handles any delta/h ratio
    if study_type == "omega" and probes_raw is None and not adjoint_probe:
        cc.fail("study", "probes",
                "the omega study needs probes (or adjoint_probe = true)")

    parsed_paths = None
    if study_type == "acstudy" and paths is not None:
        parsed_paths = []
        for tok in paths.split(","):
            tok = tok.strip().lower()
            if not tok:
                continue
            if tok == "sqrt":
                parsed_paths.append(("sqrt", None))
                continue
            m = re.match(r"^([0-9]*\.?[0-9]+)h$", tok)
            if m:
                parsed_paths.append((tok, float(m.group(1))))
                continue
            cc.fail("study", "paths",
                    "unknown path %r (use forms like 2h, 4h, sqrt)" % tok)

    probes = None
    if probes_raw is not None:
        probes = [p.strip() for p in probes_raw.split(";") if p.strip()]

    out_dir = cc.string("output", "dir", default=None)
    if out_dir is None:
        out_dir = os.environ.get("PERIDYN_OC_OUTDIR", ".")

    if problems:
        raise ConfigurationError(
            "configuration %s is invalid (%d problem%s)"
            % (path, len(problems), "" if len(problems) == 1 else "s"),
            problems=problems)

    return RunConfig(
        dim=dim, bounds=tuple(bounds), family=family, delta=delta, s=s,
        material_expr=material_expr, hmin=hmin, hmax=hmax, lam=lam,
        box_lower=box_lower, box_upper=box_upper, gamma=gamma, u_des=u_des,
        control_weight=control_weight, h=h, quad_outer=quad_outer,
        quad_inner=quad_inner, grading_levels=grading_levels,
        grading_ratio=grading_ratio, tol=tol, maxit=maxit,
        inner_tol=inner_tol, study_type=study_type, deltas=deltas,
        h_list=h_list, field=field, zero_extend=zero_extend,
        ref_factor=ref_factor, paths=parsed_paths, probes=probes,
        ac_tol=ac_tol, manufactured=manufactured,
        adjoint_probe=adjoint_probe, local_h=local_h, out_dir=out_dir)


# ----------------------------------------------------------------------
# run-time object construction

def _domain_of(config):
    b = config.bounds
    if config.dim == 1:
        return Domain.interval(b[0], b[1])
    return Domain.rectangle(b[0], b[1], b[2], b[3])


def _material_of(config):
    return MaterialField(config.material_expr, hmin=config.hmin,
                         hmax=config.hmax, dim=config.dim)


def _quad_of(config):
    return QuadratureRule(outer_order=config.quad_outer,
                          inner_order=config.quad_inner,
                          grading_levels=config.grading_levels,
                          grading_ratio=config.grading_ratio)


def _box_of(config):
    return ControlBox(lower=(config.box_lower,) * config.dim,
                      upper=(config.box_upper,) * config.dim)


def _kernel_of(config, delta):
    if delta <= 0.0:
        return None
    return KernelSpec(config.family, delta, config.dim, config.s)


def _problem_of(config, delta, h, domain=None, material=None):
    domain = domain if domain is not None else _domain_of(config)
    material = material if material is not None else _material_of(config)
    return ControlProblem(
        mesh=build_mesh(domain, delta, h),
        material=material,
        box=_box_of(config),
        lam=config.lam,
        kernel=_kernel_of(config, delta),
        quad=_quad_of(config),
        track_weight=config.gamma,
        control_weight=config.control_weight,
        u_des=config.u_des,
        inner_tol=config.inner_tol)


# ----------------------------------------------------------------------
# study dispatch

def _run_solve(config, threads, out_dir):
    problem = _problem_of(config, config.delta, config.h)
    ops = build_operators(problem, threads=threads)
    triple = solve_kkt_projected_gradient(problem, operators=ops,
                                          tol=config.tol,
                                          maxit=config.maxit)
    export_solution(problem, triple,
                    os.path.join(out_dir, "state.csv"),
                    os.path.join(out_dir, "control.csv"),
                    operators=ops)
    kkt = verify_kkt(problem, triple, tol=config.tol, operators=ops)
    p_scale = 1.0 + float(np.max(np.abs(triple.adjoint))
                          if triple.adjoint.size else 0.0)
    report = StudyReport(
        name="solve",
        columns=("h", "delta", "kkt_residual", "objective", "iterations"),
        rows=[(config.h, config.delta, triple.kkt_residual,
               triple.objective, triple.iterations)])
    report.checks.append(Check(
        "state_equation_residual", kkt.state_res <= 1e-8,
        "relative residual %.3e" % kkt.state_res))
    report.checks.append(Check(
        "adjoint_equation_residual", kkt.adjoint_res <= 1e-8,
        "relative residual %.3e" % kkt.adjoint_res))
    report.checks.append(Check(
        "stationarity_sign_condition",
        kkt.max_sign_violation <= 1e-6 * p_scale,
        "max violation %.3e vs %.3e"
        % (kkt.max_sign_violation, 1e-6 * p_scale)))
    return [report]


def _run_gamma(config, threads, out_dir):
    field = config.field
    if field is None:
        field = "sin(pi*x)" if config.dim == 1 else "x, y"
    zero_extend = {"auto": "auto", "true": True,
                   "false": False}[config.zero_extend]
    h_for = None
    if config.h_list is not None:
        if len(config.h_list) != len(config.deltas):
            raise ConfigurationError(
                "study.h_list must match study.deltas in length")
        h_for = dict(zip(config.deltas, config.h_list))
    report = gamma_energy_study(
        field, _material_of(config), config.family, config.deltas,
        h_for=h_for, dim=config.dim, s=config.s, domain=_domain_of(config),
        quad=_quad_of(config), zero_extend=zero_extend,
        local_h=config.local_h, threads=threads)
    return [report]


def _run_hstudy(config, threads, out_dir):
    if config.manufactured:
        return [manufactured_forward_study(config.h_list, dim=config.dim,
                                           domain=_domain_of(config),
                                           quad=_quad_of(config))]
    template = _problem_of(config, config.delta, config.h_list[0])
    report = h_refinement_study(template, config.h_list,
                                ref_factor=config.ref_factor,
                                tol=config.tol, maxit=config.maxit,
                                threads=threads)
    return [report]


def _run_acstudy(config, threads, out_dir):
    domain = _domain_of(config)
    material = _material_of(config)

    def family(delta, h):
        return _problem_of(config, delta, h, domain=domain,
                           material=material)

    paths = None
    if config.paths:
        h0 = config.h_list[0]
        paths = []
        for name, coef in config.paths:
            if coef is None:
                scale = 2.0 * math.sqrt(h0)
                paths.append(("delta=sqrt(h)",
                              lambda h, c=scale: c * math.sqrt(h)))
            else:
                paths.append(("delta=%sh" % ("%g" % coef),
                              lambda h, c=coef: c * h))
    probes = config.probes if config.probes else ("1", "x")
    report = asymptotic_compatibility_study(
        family, config.h_list, paths=paths, ref_factor=config.ref_factor,
        probes=probes, ac_tol=config.ac_tol, tol=config.tol,
        maxit=config.maxit, threads=threads)
    return [report]


def _run_poincare(config, threads, out_dir):
    report = poincare_sweep(config.family, config.deltas, config.h,
                            dim=config.dim, s=config.s,
                            domain=_domain_of(config), quad=_quad_of(config),
                            threads=threads)
    return [report]


def _run_omega(config, threads, out_dir):
    probes = list(config.probes) if config.probes else []
    if config.adjoint_probe:
        domain = _domain_of(config)
        material = _material_of(config)
        if config.delta <= 0.0:
            raise ConfigurationError(
                "study.adjoint_probe needs a positive kernel.delta")

        def factory(h):
            return _problem_of(config, config.delta, h, domain=domain,
                               material=material)

        probes.append(AdjointProbe(factory=factory, tol=config.tol,
                                   maxit=config.maxit))
    report = measure_omega(config.h_list, probes, dim=config.dim,
                           domain=_domain_of(config), threads=threads)
    return [report]


_RUNNERS = {
    "solve": _run_solve,
    "gamma": _run_gamma,
    "hstudy": _run_hstudy,
    "acstudy": _run_acstudy,
    "poincare": _run_poincare,
    "omega": _run_omega,
}

#: study-report names mapped to their documented CSV file names
_CSV_NAMES = {
    "gamma_energy": "gamma_energy.csv",
    "ac_study": "ac_study.csv",
    "omega": "omega.csv",
    "poincare": "poincare.csv",
    "h_study": "h_study.csv",
    "manufactured": "manufactured.csv",
    "solve": "solve.csv",
}


def run(config, threads=1):
    """Execute the configured study and write its artifacts.

    Returns the process exit status: 0 when every built-in assertion of
    the study passed, 2 when at least one failed, 1 when the run raised
    (the traceback is saved to ``error.txt`` in the output directory).
    """
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    try:
        reports = _RUNNERS[config.study_type](config, threads, out_dir)
        for report in reports:
            report.to_csv(os.path.join(
                out_dir, _CSV_NAMES.get(report.name, report.name + ".csv")))
            report.write_extra_tables(out_dir)
    except Exception as exc:
        detail = traceback.format_exc()
        with open(os.path.join(out_dir, "error.txt"), "w") as fh:
            fh.write(detail)
        kind = "configuration" if isinstance(exc, ConfigurationError) \
            else "solver" if isinstance(exc, PeridynError) else "internal"
        sys.stderr.write("peridyn-oc: %s error: %s\n" % (kind, exc))
        sys.stderr.write("diagnostics written to %s\n"
                         % os.path.join(out_dir, "error.txt"))
        return 1

    lines = ["peridyn-oc run: study type %s" % config.study_type]
    all_passed = True
    for report in reports:
        lines.extend(report.summary_lines())
        all_passed = all_passed and report.passed
    lines.append("total wall time %.2f s" % (time.perf_counter() - t0))
    lines.append("result: %s" % ("PASS" if all_passed else "FAIL"))
    text = "\n".join(lines) + "\n"
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0 if all_passed else 2


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="peridyn-oc",
        description="Pairwise-model control solves and limit studies "
                    "driven by one config file.")
    ap.add_argument("config", help="path to the INI-style run description")
    ap.add_argument("--override", action="append", default=[],
                    metavar="SECTION.KEY=VALUE",
                    help="rewrite a config entry before validation "
                         "(repeatable)")
    ap.add_argument("--threads", type=int, default=1,
                    help="worker threads for assembly (default 1; results "
                         "are identical for any value)")
    ns = ap.parse_args(argv)
    try:
        config = parse_config(ns.config, overrides=ns.override)
    except ConfigurationError as exc:
        sys.stderr.write("peridyn-oc: %s\n" % exc)
        for problem in getattr(exc, "problems", None) or []:
            sys.stderr.write("  - %s\n" % problem)
        return 1
    return run(config, threads=ns.threads)


if __name__ == "__main__":
    sys.exit(main())
