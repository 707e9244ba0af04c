"""Subcommand implementations.  Every command returns its output files as text.

Keeping outputs in memory lets the determinism checks compare bytes without
touching the filesystem; the CLI only writes what it gets back.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import config as cfgmod
from .bose import (MeanFieldProblem, SymmetricBasis, finite_N_mean_field_free_energy,
                   lift_sum_operator, log_symmetric_trace_cycles, log_symmetric_trace_exact,
                   symmetric_dimension, symmetric_trace_permanent,
                   variational_mean_field_free_energy)
from .ensemble import (EnsembleSampler, EnsembleSpec, LinearFunctional, bose_spec,
                       cycle_type, finite_N_free_energy, occupation_measures, path_exponents,
                       self_normalized)
from .errors import ConfigError
from .markov import boltzmann_kernel, expm, feynman_kac_kernel, transition_kernel
from .paths import RngStream
from .rates import J_sym, dv_rate, legendre_rate

COLUMNS = {
    "kernel.csv": ("row", "col", "value"),
    "sample.csv": ("draw", "quantity", "value"),
    "sample_summary.csv": ("N", "f_spec", "estimate", "std_error", "ess", "samples"),
    "dv_rate.csv": ("method", "value"),
    "jsym.csv": ("beta", "lower", "upper", "gap", "beta_dv_rate", "degenerate"),
    "free_energy.csv": ("N", "f_spec", "value", "method"),
    "trace.csv": ("N", "dimension", "exact", "cycles", "permanent", "max_rel_diff"),
    "verify.csv": ("check", "status", "detail"),
}

COMMANDS = ("kernel", "sample", "dv-rate", "jsym", "free-energy", "trace", "verify")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def header(command, cfg):
    return f"# symwalks {command} config_sha256={cfgmod.config_hash(cfg)} seed={cfg['seed']}\n"


def csv_text(name, command, cfg, rows):
    buf = io.StringIO()
    buf.write(header(command, cfg))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS[name])
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def read_csv(text):
    """``(metadata line, column names, rows)`` of a file written by :func:`csv_text`."""
    lines = text.splitlines()
    meta = lines[0]
    reader = csv.reader(lines[1:])
    cols = tuple(next(reader))
    return meta, cols, [row for row in reader]


def _labels(g):
    return [str(s) for s in g.space.states] if g.space is not None else [str(i) for i in range(g.n)]


# -- commands ------------------------------------------------------------------

def cmd_kernel(cfg, threads=1):
    g = cfgmod.generator(cfg)
    beta = cfg["beta"]
    spec = cfg.get("kernel", {})
    kind = spec.get("kind", "transition")
    if kind == "transition":
        K = transition_kernel(g, beta)
    elif kind == "boltzmann":
        K = boltzmann_kernel(g, beta)
    else:
        V = spec.get("potential")
        if V is None:
            raise ConfigError("feynman_kac kernel needs kernel.potential")
        if len(V) != g.n:
            raise ConfigError("potential must have one value per state")
        K = feynman_kac_kernel(g, np.asarray(V, dtype=float), beta)
    lab = _labels(g)
    rows = [(lab[i], lab[j], K.matrix[i, j]) for i in range(g.n) for j in range(g.n)]
    return {"kernel.csv": csv_text("kernel.csv", "kernel", cfg, rows)}, f"{kind} kernel, {g.n} states"


def _spec(cfg):
    g = cfgmod.generator(cfg)
    N = cfg["N"]
    if cfg["ensemble"] == "bose":
        return bose_spec(g, cfg["beta"], N)
    return EnsembleSpec(g, cfg["beta"], N)


def _replica(sampler, spec, f, stream, size, grid):
    batch = sampler.sample_batch(stream, size)
    z = occupation_measures(batch, spec.n)
    expo = path_exponents(spec, f, batch, grid)
    stats = []
    for s in range(batch.size):
        ct = cycle_type(batch.perms[s])
        stats.append((float(batch.log_weights[s]), int(ct.sum()), int(np.flatnonzero(ct)[-1]),
                      float(expo[s]), z[s]))
    return stats


def sample_draws(cfg, threads=1):
    """Per-draw statistics; replica ``r`` always uses stream ``child(r)``."""
    spec = _spec(cfg)
    f, _ = cfgmod.functional(cfg)
    sampler = EnsembleSampler(spec)
    root = RngStream(cfg["seed"], 0)
    total, chunk = cfg["samples"], cfg["chunk"]
    sizes = [min(chunk, total - k) for k in range(0, total, chunk)]
    jobs = [(root.child(r), k) for r, k in enumerate(sizes)]
    if threads <= 1:
        parts = [_replica(sampler, spec, f, s, k, cfg["grid"]) for s, k in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda job: _replica(sampler, spec, f, job[0], job[1], cfg["grid"]),
                                  jobs))
    return spec, [d for part in parts for d in part]


def cmd_sample(cfg, threads=1):
    spec, draws = sample_draws(cfg, threads)
    _, tag = cfgmod.functional(cfg)
    lab = _labels(spec.generator)
    rows = []
    for i, (lw, ncyc, longest, expo, z) in enumerate(draws):
        rows.append((i, "log_weight", lw))
        rows.append((i, "n_cycles", ncyc))
        rows.append((i, "longest_cycle", longest))
        rows.append((i, "exponent", expo))
        for k, v in enumerate(z):
            rows.append((i, f"z[{lab[k]}]", float(v)))
    logw = np.array([d[0] for d in draws])
    logF = np.array([d[3] for d in draws])
    est = self_normalized(logw, logF, spec.N, RngStream(cfg["seed"], 1).generator())
    summary = [(spec.N, tag, est.estimate, est.std_error, est.ess, est.samples)]
    files = {"sample.csv": csv_text("sample.csv", "sample", cfg, rows),
             "sample_summary.csv": csv_text("sample_summary.csv", "sample", cfg, summary)}
    return files, f"estimate {est.estimate:.6g} +- {est.std_error:.2g} (ess {est.ess:.0f})"


def _rate_problem(cfg):
    if "p" not in cfg:
        raise ConfigError("this command needs an occupation vector p")
    space = cfgmod.state_space(cfg)
    if space is None:
        space = cfgmod.generator(cfg)
    p = np.asarray(cfg["p"], dtype=float)
    if p.size != space.n:
        raise ConfigError(f"p has {p.size} entries for {space.n} states")
    if not math.isclose(p.sum(), 1.0, abs_tol=1e-9):
        raise ConfigError("p must sum to one")
    return p, space, cfgmod.boundary(cfg)


def cmd_dv_rate(cfg, threads=1):
    p, space, bnd = _rate_problem(cfg)
    dv = dv_rate(p, space, bnd)
    tol = cfg.get("tolerances", {})
    leg = legendre_rate(p, space, bnd, **({"tol": tol["tol"]} if "tol" in tol else {}))
    rows = [("dirichlet_form", dv), ("legendre", leg)]
    return {"dv_rate.csv": csv_text("dv_rate.csv", "dv-rate", cfg, rows)}, _fmt(dv)


def cmd_jsym(cfg, threads=1):
    p, space, bnd = _rate_problem(cfg)
    beta = cfg["beta"]
    cert = J_sym(p, beta, space, bnd)
    dv = beta * dv_rate(p, space, bnd)
    d = cert.to_dict()
    d.update({"beta": beta, "beta_dv_rate": dv, "config_sha256": cfgmod.config_hash(cfg),
              "seed": cfg["seed"]})
    rows = [(beta, cert.lower, cert.upper, cert.gap, dv, cert.degenerate)]
    files = {"jsym.json": json.dumps(d, indent=2, sort_keys=True) + "\n",
             "jsym.csv": csv_text("jsym.csv", "jsym", cfg, rows)}
    return files, f"lower {cert.lower:.10g} upper {cert.upper:.10g}"


def _symmetric_h(g):
    h = np.asarray(g.h, dtype=float)
    if not np.allclose(h, h.T, atol=1e-12):
        raise ConfigError("this command needs a symmetric generator")
    return 0.5 * (h + h.T)


def cmd_free_energy(cfg, threads=1):
    g = cfgmod.generator(cfg)
    beta = cfg["beta"]
    f, tag = cfgmod.functional(cfg)
    N_list = sorted(set(cfg["N_list"]))
    rows = []
    if isinstance(f, LinearFunctional):
        spec = bose_spec(g, beta, 1)
        for N, v in finite_N_free_energy(spec, f, N_list):
            rows.append((N, tag, v, "cycle_recursion"))
    else:
        h = _symmetric_h(g)
        x = np.diag(np.asarray(g.values, dtype=float).reshape(g.n))
        for N in N_list:
            prob = MeanFieldProblem(h, x, f, beta, N)
            rows.append((N, tag, finite_N_mean_field_free_energy(prob), "occupation_basis"))
    values = np.asarray(g.values, dtype=float)
    if values.ndim == 1 and g.space is not None and not g.space.is_lattice:
        h = _symmetric_h(g)
        x = np.diag(values)
        fun = (lambda u: f(np.asarray(u))) if not isinstance(f, LinearFunctional) else f
        limit, _ = variational_mean_field_free_energy(MeanFieldProblem(h, x, fun, beta, 1))
        rows.append(("limit", tag, limit, "variational"))
    text = csv_text("free_energy.csv", "free-energy", cfg, rows)
    return {"free_energy.csv": text}, _fmt(rows[-1][2])


def cmd_trace(cfg, threads=1):
    g = cfgmod.generator(cfg)
    h = _symmetric_h(g)
    beta = cfg["beta"]
    tr = cfg.get("trace", {})
    N_max = tr.get("N_max", 6)
    limit = tr.get("permanent_limit", 5_000_000)
    n = g.n
    B = expm(-h, beta)
    rows = []
    for N in range(1, N_max + 1):
        dim = symmetric_dimension(n, N)
        exact = log_symmetric_trace_exact(lift_sum_operator(h, SymmetricBasis.build(n, N)), beta)
        cyc = log_symmetric_trace_cycles(h, beta, N)
        vals = [exact, cyc]
        if n ** N * math.factorial(N) <= limit:
            perm = math.log(symmetric_trace_permanent(B, N))
            vals.append(perm)
        else:
            perm = float("nan")
        ref = math.exp(exact)
        diff = max(abs(math.exp(v) - ref) / ref for v in vals)
        rows.append((N, dim, math.exp(exact), math.exp(cyc), math.exp(perm) if vals[2:] else perm,
                     diff))
    worst = max(r[-1] for r in rows)
    return {"trace.csv": csv_text("trace.csv", "trace", cfg, rows)}, f"max relative difference {worst:.3g}"


def cmd_verify(cfg, threads=1):
    from .verify import run_checks
    results = run_checks(cfg, threads)
    rows = [(name, "pass" if ok else "fail", detail) for name, ok, detail in results]
    failed = [r[0] for r in rows if r[1] == "fail"]
    text = csv_text("verify.csv", "verify", cfg, rows)
    summary = "all checks passed" if not failed else "failed: " + ", ".join(failed)
    return {"verify.csv": text}, summary, not failed


HANDLERS = {
    "kernel": cmd_kernel,
    "sample": cmd_sample,
    "dv-rate": cmd_dv_rate,
    "jsym": cmd_jsym,
    "free-energy": cmd_free_energy,
    "trace": cmd_trace,
    "verify": cmd_verify,
}


def run(command, cfg, threads=1):
    """``(files, summary, ok)`` for the subcommand on a resolved config."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown subcommand {command!r}")
    out = HANDLERS[command](cfg, threads)
    if len(out) == 2:
        return out[0], out[1], True
    return out
