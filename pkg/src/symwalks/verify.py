"""Invariant suite run by ``symwalks verify``.

Each check returns ``(name, ok, detail)``.  Randomized checks draw from a
stream derived from the config seed so a failing run can be replayed.
"""

from __future__ import annotations

import copy
import math

import numpy as np

from . import config as cfgmod
from .bose import TELEGRAPH_H, TELEGRAPH_X, inner_rate, telegraph_rate
from .markov import (StateSpace, boltzmann_kernel, build_generator, feynman_kac_kernel,
                     laplacian_matrix)
from .paths import RngStream
from .rates import (J_sym, dv_rate, eigenvalue_derivatives, martingale_kernel,
                    optimal_pair_measure, pair_entropy_min)


def _random_generator(gen, n):
    h = -gen.uniform(0.1, 2.0, (n, n))
    np.fill_diagonal(h, gen.uniform(-1.0, 3.0, n))
    return build_generator(h)


def _random_box(gen):
    if gen.random() < 0.5:
        return StateSpace.box([(0, int(gen.integers(2, 7)))])
    return StateSpace.box([(0, int(gen.integers(1, 3))), (0, int(gen.integers(1, 3)))])


def check_eigenvalue_gradient(gen, trials=10):
    worst = 0.0
    for _ in range(trials):
        space = _random_box(gen)
        A = laplacian_matrix(space, "absorbing")
        f = gen.normal(size=space.n)
        _, grad, _ = eigenvalue_derivatives(A + np.diag(f))
        eps = 1e-6
        fd = np.empty(space.n)
        for i in range(space.n):
            e = np.zeros(space.n)
            e[i] = eps
            fd[i] = (eigenvalue_derivatives(A + np.diag(f + e))[0]
                     - eigenvalue_derivatives(A + np.diag(f - e))[0]) / (2 * eps)
        worst = max(worst, float(np.max(np.abs(fd - grad))))
    return "eigenvalue_gradient_fd", worst < 1e-6, f"max deviation {worst:.2e}"


def check_martingale_rows(gen, trials=10):
    worst = 0.0
    for _ in range(trials):
        space = _random_box(gen)
        f = gen.normal(size=space.n)
        beta = float(gen.choice([0.5, 1.0, 2.0]))
        M = martingale_kernel(f, beta, space, "absorbing").matrix
        if np.any(M < -1e-14):
            return "martingale_row_stochastic", False, "negative entry"
        worst = max(worst, float(np.max(np.abs(M.sum(axis=1) - 1.0))))
    return "martingale_row_stochastic", worst < 1e-10, f"max row defect {worst:.2e}"


def check_q_star_marginals(gen, trials=10):
    worst = 0.0
    for _ in range(trials):
        space = _random_box(gen)
        p = gen.dirichlet(np.ones(space.n)) * 0.98 + 0.02 / space.n
        Q = optimal_pair_measure(p, float(gen.choice([0.5, 1.0, 2.0])), space).q
        worst = max(worst, float(np.max(np.abs(Q.sum(axis=1) - p))),
                    float(np.max(np.abs(Q.sum(axis=0) - p))))
    return "q_star_marginals", worst < 1e-10, f"max marginal defect {worst:.2e}"


def check_certificate(gen, trials=3):
    worst = 0.0
    for _ in range(trials):
        space = _random_box(gen)
        p = gen.dirichlet(np.ones(space.n)) * 0.9 + 0.1 / space.n
        beta = float(gen.choice([0.5, 1.0, 2.0]))
        cert = J_sym(p, beta, space)
        target = beta * dv_rate(p, space)
        worst = max(worst, abs(cert.upper - cert.lower) / target, abs(cert.lower - target) / target)
    return "jsym_certificate", worst < 1e-4, f"max relative gap {worst:.2e}"


def check_boltzmann(gen, trials=20):
    worst = 0.0
    for _ in range(trials):
        g = _random_generator(gen, int(gen.integers(1, 7)))
        beta = float(gen.uniform(0.1, 2.0))
        B = boltzmann_kernel(g, beta).matrix
        K = feynman_kac_kernel(g, g.hD, beta).matrix
        # entrywise, on the scale of the largest entry
        worst = max(worst, float(np.max(np.abs(B - K)) / max(1.0, np.max(np.abs(B)))))
    return "boltzmann_equals_feynman_kac", worst < 1e-12, f"max scaled deviation {worst:.2e}"


def check_entropy_min(gen, trials=5):
    worst_v = worst_m = 0.0
    for _ in range(trials):
        n = int(gen.integers(2, 6))
        B = gen.uniform(0.1, 2.0, (n, n))
        res = pair_entropy_min(B)
        target = -math.log(float(np.max(np.abs(np.linalg.eigvals(B)))))
        Q = res.q_opt.to_float().q
        worst_v = max(worst_v, abs(res.value - target))
        worst_m = max(worst_m, float(np.max(np.abs(Q.sum(axis=0) - Q.sum(axis=1)))))
    ok = worst_v < 1e-6 and worst_m < 1e-8
    return "pair_entropy_min_perron", ok, f"value {worst_v:.2e}, marginals {worst_m:.2e}"


def check_telegraph_rate():
    us = (0.0, 0.3, -0.3, 0.6, -0.6, 0.9, -0.9)
    worst = max(abs(inner_rate(u, TELEGRAPH_H, TELEGRAPH_X) - telegraph_rate(u)) for u in us)
    return "telegraph_rate", worst < 1e-8, f"max deviation {worst:.2e}"


def check_thread_determinism(cfg):
    from .runner import run
    small = copy.deepcopy(cfg)
    small["samples"] = min(cfg["samples"], 400)
    small["chunk"] = min(cfg["chunk"], 50)
    try:
        a, _, _ = run("sample", small, threads=1)
        b, _, _ = run("sample", small, threads=8)
    except Exception as err:  # a model the sampler cannot handle is reported, not hidden
        return "thread_determinism", False, f"{type(err).__name__}: {err}"
    same = a == b
    return "thread_determinism", same, "identical bytes" if same else "outputs differ"


def check_csv_schema(cfg):
    from .runner import COLUMNS, read_csv, run
    small = copy.deepcopy(cfg)
    small["samples"] = 200
    small["chunk"] = 50
    small.setdefault("trace", {})
    small["trace"] = dict(small["trace"], N_max=min(small["trace"].get("N_max", 3), 3))
    small["N_list"] = small["N_list"][:2]
    commands = ["kernel", "sample", "free-energy"]
    h = cfgmod.generator(small).h
    if np.allclose(h, h.T, atol=1e-12):
        commands.append("trace")
    if "p" in small:
        commands += ["dv-rate", "jsym"]
    problems = []
    for c in commands:
        try:
            files, _, _ = run(c, small)
        except Exception as err:
            problems.append(f"{c}: {type(err).__name__}")
            continue
        for name, text in files.items():
            if not name.endswith(".csv"):
                continue
            meta, cols, rows = read_csv(text)
            if not meta.startswith("# symwalks ") or "config_sha256=" not in meta or "seed=" not in meta:
                problems.append(f"{name}: header")
            if cols != COLUMNS[name] or any(len(r) != len(cols) for r in rows):
                problems.append(f"{name}: columns")
    return "csv_schema", not problems, "; ".join(problems) or f"{len(commands)} commands"


def run_checks(cfg, threads=1):
    gen = RngStream(cfg["seed"], 2).generator()
    return [
        check_eigenvalue_gradient(gen),
        check_martingale_rows(gen),
        check_q_star_marginals(gen),
        check_certificate(gen),
        check_boltzmann(gen),
        check_entropy_min(gen),
        check_telegraph_rate(),
        check_thread_determinism(cfg),
        check_csv_schema(cfg),
    ]
