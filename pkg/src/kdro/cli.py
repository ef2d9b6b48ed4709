"""Command-line driver.

    kdro solve          --data X.csv [--config run.ini] [--out DIR]
    kdro relaxed        --data X.csv
    kdro certify        --data X.csv --theta theta.txt
    kdro counterexample
    kdro sfg            [--data XY.csv]
    kdro robustness     [--seeds 0,1,2,3,4]

Exit codes: 0 ok, 1 solver did not converge, 2 input error, 3 a
counterexample check failed.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import documents
from .ambiguity import NormBall
from .batch import (DEFAULT_GRID, KdroProblem, certify, constraint_points, feasible_mixtures,
                    relaxed_solve, solve_kdro)
from .kernels import Embedding, KernelSpec, as_points, mmd
from .models import HingeShift, UncertainLeastSquares
from .sfg import (ProposalSpec, classification_loss, evaluate_robustness, make_two_blobs, train,
                  train_erm, write_log)
from .solver import DiscreteDistribution, SolverConfig, SolverError

log = logging.getLogger("kdro")

EXIT_OK, EXIT_NONCONVERGED, EXIT_INPUT, EXIT_ASSERT = 0, 1, 2, 3

EXAMPLE_EPS = float(np.sqrt(2.0 - 2.0 / np.e))


class InputError(ValueError):
    pass


# --- configuration ----------------------------------------------------------

_SOLVER_KEYS = {f.name for f in fields(SolverConfig)} - {"seed"}

SCHEMA = {
    "general": {"seed"},
    "kernel": {"family", "sigma", "degree", "offset"},
    "ambiguity": {"kind", "epsilon"},
    "domain": {"lo", "hi"},
    "grid": {"points_per_dim"},
    "problem": {"loss", "ls_rows", "ls_params", "ls_noise"},
    "data": {"labels"},
    "solver": _SOLVER_KEYS,
    "sfg": {"n_features", "batch_size", "margin", "theta_step_scale", "proposal", "radius",
            "epsilon", "n_train", "n_test", "deltas", "attack", "hidden", "erm_iters", "erm_step"},
    "output": {"dir"},
}

_INT_SOLVER = {"max_iters", "seed", "theta_iters"}


@dataclass
class RunConfig:
    raw: configparser.ConfigParser

    def get(self, section, key, default=None, cast=str):
        if not self.raw.has_option(section, key):
            return default
        value = self.raw.get(section, key)
        try:
            return cast(value)
        except ValueError:
            raise InputError(f"[{section}] {key} = {value!r} is not a valid {cast.__name__}") from None

    def floats(self, section, key, default=None):
        if not self.raw.has_option(section, key):
            return default
        text = self.raw.get(section, key)
        try:
            return [float(t) for t in text.replace(",", " ").split()]
        except ValueError:
            raise InputError(f"[{section}] {key} = {text!r} is not a list of numbers") from None

    def solver(self, seed: int) -> SolverConfig:
        kw = {}
        for key in _SOLVER_KEYS:
            if self.raw.has_option("solver", key):
                kw[key] = self.get("solver", key, cast=int if key in _INT_SOLVER else float)
        try:
            return SolverConfig(seed=seed, **kw)
        except ValueError as exc:
            raise InputError(f"[solver] {exc}") from None


def _as_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


_as_bool.__name__ = "bool"


def load_config(path=None) -> RunConfig:
    """Read an INI-style file; keys before the first section belong to [general]."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise InputError(f"config file not found: {p}")
        try:
            cp.read_string("[general]\n" + p.read_text(), source=str(p))
        except configparser.Error as exc:
            raise InputError(f"cannot parse {p}: {exc}") from None
    for section in cp.sections():
        if section not in SCHEMA:
            raise InputError(f"unknown config section [{section}]")
        unknown = set(cp.options(section)) - SCHEMA[section]
        if unknown:
            raise InputError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    return RunConfig(cp)


def read_csv(path) -> np.ndarray:
    """Headerless numeric CSV, one sample per row; errors carry the line number."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"data file not found: {p}")
    rows, width = [], None
    with open(p, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise InputError(f"{p}:{lineno}: non-numeric value in row {row!r}") from None
            if not all(np.isfinite(vals)):
                raise InputError(f"{p}:{lineno}: non-finite value")
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise InputError(f"{p}:{lineno}: expected {width} columns, found {len(vals)}")
            rows.append(vals)
    if not rows:
        raise InputError(f"{p}: no data rows")
    return np.array(rows)


# --- problem assembly ---------------------------------------------------------

def _kernel(cfg: RunConfig, data) -> KernelSpec:
    family = cfg.get("kernel", "family", "gaussian")
    if family == "gaussian":
        return KernelSpec.gaussian(sigma=cfg.get("kernel", "sigma", None, float), data=data)
    if family == "polynomial":
        return KernelSpec(family="polynomial", degree=cfg.get("kernel", "degree", 2, int),
                          offset=cfg.get("kernel", "offset", 1.0, float))
    raise InputError(f"unknown kernel family {family!r}")


def _domain(cfg: RunConfig, data, sigma):
    d = data.shape[1]
    lo, hi = cfg.floats("domain", "lo"), cfg.floats("domain", "hi")
    if lo is None or hi is None:
        # pad the data's bounding box by one bandwidth
        pad = sigma if sigma else 1.0
        lo = data.min(0) - pad if lo is None else lo
        hi = data.max(0) + pad if hi is None else hi
        log.info("domain box defaulted to lo=%s hi=%s", np.round(lo, 6), np.round(hi, 6))
    lo = np.broadcast_to(np.asarray(lo, float), (d,)) if len(np.atleast_1d(lo)) in (1, d) else None
    hi = np.broadcast_to(np.asarray(hi, float), (d,)) if len(np.atleast_1d(hi)) in (1, d) else None
    if lo is None or hi is None:
        raise InputError(f"[domain] lo/hi need 1 or {d} values")
    return lo, hi


def _loss(cfg: RunConfig, d: int, seed: int):
    kind = cfg.get("problem", "loss", "hinge_shift")
    if kind == "hinge_shift":
        return HingeShift(dim=d)
    if kind == "least_squares":
        rng = np.random.default_rng(seed)
        log.info("using a seeded synthetic least-squares instance")
        return UncertainLeastSquares.random(cfg.get("problem", "ls_rows", 8, int),
                                            cfg.get("problem", "ls_params", 3, int), d, rng,
                                            cfg.get("problem", "ls_noise", 0.3, float))
    raise InputError(f"unknown loss {kind!r}")


def build_problem(cfg: RunConfig, data, seed: int, epsilon=None) -> KdroProblem:
    kind = cfg.get("ambiguity", "kind", "norm_ball")
    if kind != "norm_ball":
        raise InputError(f"only norm_ball ambiguity sets can be configured, got {kind!r}")
    kernel = _kernel(cfg, data)
    eps = epsilon if epsilon is not None else cfg.get("ambiguity", "epsilon", None, float)
    if eps is not None and eps < 0:
        raise InputError(f"epsilon must be nonnegative, got {eps}")
    lo, hi = _domain(cfg, data, kernel.sigma if kernel.family == "gaussian" else None)
    try:
        return KdroProblem.norm_ball(_loss(cfg, data.shape[1], seed), data, lo, hi, eps, kernel, seed=seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def example_problem(points_per_dim=DEFAULT_GRID) -> KdroProblem:
    """Loss [|theta + xi| - 1]_+, data {0}, Gaussian sigma = sqrt 2, radius sqrt(2 - 2/e), box [-3, 3]."""
    kernel = KernelSpec.gaussian(np.sqrt(2.0))
    data = np.zeros((1, 1))
    return KdroProblem(HingeShift(), [-3.0], [3.0], data, NormBall(Embedding.empirical(data, kernel), EXAMPLE_EPS))


# --- outputs -------------------------------------------------------------------

def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.get("output", "dir", "kdro_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_plot_data(path, sol, cert):
    """Columns xi (one per dimension), loss, majorant, worst_case_prob over the constraint points."""
    X = sol.constraint_points
    prob = np.zeros(len(X))
    W = cert.worst_case_dist
    for pt, p in zip(W.support, W.probs):
        hit = np.flatnonzero(np.all(np.abs(X - pt) <= 1e-12, axis=1))
        if len(hit):
            prob[hit[0]] += p
    order = np.lexsort(X.T[::-1])
    d = X.shape[1]
    head = ["xi"] if d == 1 else [f"xi_{k + 1}" for k in range(d)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(head + ["loss", "majorant", "worst_case_prob"])
        maj = sol.majorant
        for i in order:
            wr.writerow([repr(float(v)) for v in X[i]] + [repr(float(sol.loss_values[i])),
                                                           repr(float(maj[i])), repr(float(prob[i]))])


def _print_seed(seed):
    print(f"seed = {seed}")


# --- commands ------------------------------------------------------------------

def cmd_solve(args, cfg: RunConfig) -> int:
    data = _data(args)
    problem = build_problem(cfg, data, args.seed, args.epsilon)
    scfg = cfg.solver(args.seed)
    ppd = cfg.get("grid", "points_per_dim", DEFAULT_GRID, int)
    t0 = time.perf_counter()
    res = solve_kdro(problem, scfg, points_per_dim=ppd)
    out = _out_dir(args, cfg)
    documents.write(out / "solution.txt", "kdro solution", documents.solution_fields(res.solution))
    documents.write(out / "certificate.txt", "kdro certificate", documents.certificate_fields(res.certificate))
    write_plot_data(out / "plot_data.csv", res.solution, res.certificate)
    print(f"epsilon = {problem.ambiguity.radius!r}")
    print(f"objective = {res.solution.objective!r}")
    print(f"theta = {np.asarray(res.theta).tolist()}")
    print(f"gap = {res.certificate.gap_estimate:.3e} (worst case from {res.certificate.source})")
    if res.local:
        print("note: loss is not convex in theta; the solution is a local one")
    print(f"wrote {out} in {time.perf_counter() - t0:.2f} s")
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_relaxed(args, cfg: RunConfig) -> int:
    data = _data(args)
    problem = build_problem(cfg, data, args.seed, args.epsilon)
    sol = relaxed_solve(problem, cfg.solver(args.seed))
    out = _out_dir(args, cfg)
    documents.write(out / "relaxed_solution.txt", "kdro relaxed solution", documents.solution_fields(sol))
    print(f"relaxed objective = {sol.objective!r} (constraints at the data points only)")
    return EXIT_OK if sol.converged else EXIT_NONCONVERGED


def _read_theta(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"theta file not found: {p}")
    try:
        return np.array([float(t) for t in p.read_text().replace(",", " ").split()])
    except ValueError:
        raise InputError(f"{p}: theta must be whitespace- or comma-separated numbers") from None


def cmd_certify(args, cfg: RunConfig) -> int:
    data = _data(args)
    if not args.theta:
        raise InputError("certify needs --theta FILE")
    theta = _read_theta(args.theta)
    problem = build_problem(cfg, data, args.seed, args.epsilon)
    if len(theta) != problem.loss.n_params:
        raise InputError(f"theta has {len(theta)} entries, the loss needs {problem.loss.n_params}")
    ppd = cfg.get("grid", "points_per_dim", DEFAULT_GRID, int)
    cert = certify(theta, problem, cfg.solver(args.seed), points_per_dim=ppd)
    X = constraint_points(problem, ppd)
    loss = problem.loss.value(theta, X)
    mixtures = feasible_mixtures(problem.ambiguity, X, 100, np.random.default_rng(args.seed))
    excess = max(Q.expect(loss) for Q in mixtures) - cert.dual_value
    out = _out_dir(args, cfg)
    fields_ = documents.certificate_fields(cert)
    fields_.update(sweep_size=len(mixtures), sweep_max_excess=excess)
    documents.write(out / "certificate.txt", "kdro certificate", fields_)
    print(f"certificate = {cert.dual_value!r}, gap = {cert.gap_estimate:.3e}")
    print(f"soundness sweep: {len(mixtures)} feasible mixtures, max E_Q[l] - bound = {excess:.3e} "
          f"({'ok' if excess <= 1e-3 else 'VIOLATED'})")
    return EXIT_OK


def run_counterexample(points_per_dim=DEFAULT_GRID, cfg: SolverConfig | None = None):
    """The relaxation counterexample; returns a list of (name, passed, detail)."""
    cfg = cfg or SolverConfig()
    problem = example_problem()
    kernel = problem.kernel
    relaxed = relaxed_solve(problem, cfg, theta0=[0.0])
    f_max = float(np.max(np.abs(relaxed.f(np.linspace(-3, 3, 61)))))
    witness = DiscreteDistribution([[0.0], [2.0]], [0.5, 0.5])
    dist = mmd(witness.embedding(kernel), problem.ambiguity.center)
    risk = witness.expect(problem.loss.value(np.zeros(1), witness.support))
    full = certify(np.zeros(1), problem, cfg, points_per_dim=points_per_dim)
    return [
        ("relaxed value is 0", abs(relaxed.objective) <= 1e-6, f"(d) = {relaxed.objective:.3e}"),
        ("relaxed solution is theta = f = f0 = 0",
         abs(relaxed.theta[0]) <= 1e-6 and abs(relaxed.f0) <= 1e-6 and f_max <= 1e-6,
         f"theta = {relaxed.theta[0]:.2e}, f0 = {relaxed.f0:.2e}, max|f| = {f_max:.2e}"),
        ("witness is feasible", abs(dist - 0.5 * EXAMPLE_EPS) <= 1e-9 and dist <= EXAMPLE_EPS,
         f"MMD = {dist:.12f}, radius = {EXAMPLE_EPS:.12f}"),
        ("witness risk is 1/2", abs(risk - 0.5) <= 1e-6, f"E l = {risk:.12f}"),
        ("full dual value >= 1/2 - 0.01", full.dual_value >= 0.5 - 1e-2, f"value = {full.dual_value:.6f}"),
    ]


def cmd_counterexample(args, cfg: RunConfig) -> int:
    checks = run_counterexample(cfg.get("grid", "points_per_dim", DEFAULT_GRID, int), cfg.solver(args.seed))
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_ASSERT


def _classification_data(args, cfg: RunConfig, seed: int):
    """(train rows (x, y), test x, test y). A data file's last column is the label."""
    if args is not None and args.data:
        if not cfg.get("data", "labels", True, _as_bool):
            raise InputError("sfg needs a label column; set [data] labels = true")
        xy = _data(args)
        if xy.shape[1] < 2:
            raise InputError("labelled data needs at least one feature column and a label column")
        if not np.all(np.isin(xy[:, -1], (0.0, 1.0))):
            raise InputError("labels must be 0 or 1")
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(xy))
        n_test = max(1, len(xy) // 4)
        test, tr = xy[perm[:n_test]], xy[perm[n_test:]]
        return tr, test[:, :-1], test[:, -1]
    rng = np.random.default_rng(seed)
    x, y = make_two_blobs(cfg.get("sfg", "n_train", 500, int), rng)
    xt, yt = make_two_blobs(cfg.get("sfg", "n_test", 2000, int), rng)
    return np.column_stack([x, y]), xt, yt


def robustness_run(cfg: RunConfig, seed: int, args=None, log_path=None):
    """Train ERM and SFG-DRO under one seed; returns (deltas, erm curve, sfg curve, sfg result)."""
    data, xt, yt = _classification_data(args, cfg, seed)
    d_in = data.shape[1] - 1
    loss = classification_loss(d_in, cfg.get("sfg", "hidden", 16, int))
    eps = cfg.get("sfg", "epsilon", 0.5, float)
    if args is not None and args.epsilon is not None:
        eps = args.epsilon
    radius = cfg.get("sfg", "radius", 0.5, float)
    deltas = cfg.floats("sfg", "deltas", [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    attack = cfg.get("sfg", "attack", "pgd")
    scfg = cfg.solver(seed)
    if not cfg.raw.has_option("solver", "max_iters"):
        scfg.max_iters = 3000
    kernel = KernelSpec.gaussian(sigma=cfg.get("kernel", "sigma", None, float), data=data)
    kind = cfg.get("sfg", "proposal", "data_perturbation")
    if kind == "data_perturbation":
        proposal = ProposalSpec(kind, radius=radius, n_perturbed=d_in,
                                batch_size=cfg.get("sfg", "batch_size", 32, int))
    elif kind == "uniform_box":
        lo, hi = data[:, :-1].min(0) - radius, data[:, :-1].max(0) + radius
        proposal = ProposalSpec(kind, tuple(lo) + (0.0,), tuple(hi) + (1.0,),
                                batch_size=cfg.get("sfg", "batch_size", 32, int))
    else:
        raise InputError(f"unknown proposal {kind!r}")
    erm_cfg = SolverConfig(max_iters=cfg.get("sfg", "erm_iters", scfg.max_iters, int),
                           step_size=cfg.get("sfg", "erm_step", 0.5, float), seed=seed)
    theta_erm = train_erm(loss, data, erm_cfg)
    res = train(loss, data, eps, proposal, cfg.get("sfg", "n_features", 500, int), scfg, kernel=kernel,
                theta_step_scale=cfg.get("sfg", "theta_step_scale", 5.0, float),
                margin=cfg.get("sfg", "margin", 0.0, float))
    if log_path is not None:
        write_log(res.history, log_path)
    erm = [e for _, e in evaluate_robustness(theta_erm, loss, xt, yt, deltas, attack, seed)]
    sfg = [e for _, e in evaluate_robustness(res.state.theta, loss, xt, yt, deltas, attack, seed)]
    return deltas, erm, sfg, res


def _write_curve(path, deltas, erm, sfg):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["delta", "sfg_error", "erm_error"])
        for row in zip(deltas, sfg, erm):
            wr.writerow([repr(float(v)) for v in row])


def cmd_sfg(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    deltas, erm, sfg, res = robustness_run(cfg, args.seed, args, out / "training_log.csv")
    st = res.state
    documents.write(out / "sfg_state.txt", "kdro sfg state", {
        "theta": st.theta, "f0": st.f0, "w": st.w, "iteration": st.iteration, "seed": st.seed,
        "feature_seed": res.features.seed, "sigma": res.features.kernel.sigma,
        "objective": res.objective, "constraint_estimate": res.constraint_estimate, "epsilon": res.epsilon,
    })
    _write_curve(out / "robustness.csv", deltas, erm, sfg)
    print(f"objective = {res.objective:.6f}, constraint estimate = {res.constraint_estimate:.3e}")
    for dlt, e, s in zip(deltas, erm, sfg):
        print(f"delta = {dlt:.2f}  erm = {e:.4f}  sfg = {s:.4f}")
    return EXIT_OK


def cmd_robustness(args, cfg: RunConfig) -> int:
    try:
        seeds = [int(s) for s in args.seeds.split(",")]
    except ValueError:
        raise InputError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    E, S = [], []
    for s in seeds:
        deltas, erm, sfg, _ = robustness_run(cfg, s, args)
        E.append(erm)
        S.append(sfg)
    erm, sfg = np.mean(E, 0), np.mean(S, 0)
    out = _out_dir(args, cfg)
    _write_curve(out / "robustness_mean.csv", deltas, erm, sfg)
    for dlt, e, s in zip(deltas, erm, sfg):
        print(f"delta = {dlt:.2f}  erm = {e:.4f}  sfg = {s:.4f}")
    return EXIT_OK


def _data(args) -> np.ndarray:
    if not args.data:
        raise InputError(f"{args.command} needs --data FILE")
    return read_csv(args.data)


COMMANDS = {
    "solve": cmd_solve,
    "relaxed": cmd_relaxed,
    "certify": cmd_certify,
    "counterexample": cmd_counterexample,
    "sfg": cmd_sfg,
    "robustness": cmd_robustness,
}


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="kdro", description="Kernel distributionally robust optimization")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI-style run configuration")
        p.add_argument("--data", help="headerless CSV, one sample per row")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=_u64, default=None)
        p.add_argument("--epsilon", type=float, default=None, help="overrides the configured radius")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "certify":
            p.add_argument("--theta", help="file with the decision vector")
        if name == "robustness":
            p.add_argument("--seeds", default="0,1,2,3,4")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = cfg.get("general", "seed", 0, int)
        _print_seed(args.seed)
        return COMMANDS[args.command](args, cfg)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
