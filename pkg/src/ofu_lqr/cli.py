"""Command-line experiments: ``dare``, ``simulate``, ``ofu`` and ``verify``.

Scenarios are JSON documents; trajectories are written as CSV and reports as
JSON.  Every output carries the scenario's content hash.
"""

import argparse
import copy
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .confidence import ParameterRegion
from .exceptions import (
    BlowUpError,
    DimensionError,
    DomainError,
    InstabilityError,
    NotStabilizableError,
    SampleSizeOverflow,
    SelectionFailure,
)
from .lqmodel import CostPair, DynamicsParameter, spectral_radius
from .noise import KINDS, NoiseModel
from .ofu import run_algorithm1
from .riccati import solve_dare
from .simulate import Policy, run_policy
from . import verify as vf

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_MODEL, EXIT_RUNTIME, EXIT_VERDICT = 0, 1, 2, 3, 4
CSV_HEADER = "t,episode,cost,cum_cost,regret"
POLICIES = ("optimal", "ce", "fixed", "ofu")

_DEFAULTS = {
    "noise": {"kind": "gaussian", "shape": 2.0, "tail_override": None},
    "algorithm": {"delta": 0.1, "gamma": 2.0, "scale": 1.0, "radius_scale": 1.0, "samples": 50},
    "run": {"T": 1000, "T_grid": None, "seeds": 1, "x0": None, "L": None},
    "verify": {"L": None, "epsilon": None, "trials": 1000, "n": 100, "replications": 1000, "T": 10000},
    "output": {"directory": "out", "formats": ["csv", "json"]},
}


class ConfigError(ValueError):
    """Malformed or inconsistent scenario."""


def _matrix(value, name):
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} is not a numeric matrix") from exc
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise ConfigError(f"{name} must be a finite 2-D array")
    return M


@dataclass
class Scenario:
    """Parsed scenario; ``to_dict`` is the canonical serialization."""

    name: str
    system: dict
    noise: dict
    theta0_set: dict
    algorithm: dict
    run: dict
    verify: dict
    output: dict

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("scenario must be a JSON object")
        data = copy.deepcopy(data)
        unknown = set(data) - {"name", "system", "theta0_set"} - set(_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown scenario sections: {sorted(unknown)}")
        for key in ("system", "theta0_set"):
            if key not in data:
                raise ConfigError(f"scenario is missing the {key!r} section")
        sections = {}
        for key, defaults in _DEFAULTS.items():
            given = data.get(key) or {}
            extra = set(given) - set(defaults)
            if extra:
                raise ConfigError(f"unknown keys in {key!r}: {sorted(extra)}")
            sections[key] = {**defaults, **given}
        sc = cls(name=str(data.get("name", "")), system=data["system"], theta0_set=data["theta0_set"],
                 **sections)
        sc.validate()
        return sc

    def to_dict(self):
        return {
            "name": self.name, "system": self.system, "noise": self.noise,
            "theta0_set": self.theta0_set, "algorithm": self.algorithm, "run": self.run,
            "verify": self.verify, "output": self.output,
        }

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def validate(self):
        sys_ = self.system
        for key in ("A", "B", "Q", "R", "C"):
            if key not in sys_:
                raise ConfigError(f"system is missing {key!r}")
        try:
            theta = self.theta
            self.cost.check_conforms(theta)
            if self.noise_model.p != theta.p:
                raise ConfigError("C must be p x p")
            center = DynamicsParameter(_matrix(self.theta0_set["A"], "theta0_set.A"),
                                       _matrix(self.theta0_set["B"], "theta0_set.B"))
        except KeyError as exc:
            raise ConfigError(f"missing field {exc}") from exc
        except (DimensionError, DomainError) as exc:
            raise ConfigError(str(exc)) from exc
        if center.p != theta.p or center.r != theta.r:
            raise ConfigError("theta0_set center does not match the system dimensions")
        if not float(self.theta0_set.get("radius", -1)) >= 0:
            raise ConfigError("theta0_set.radius must be nonnegative")
        alg = self.algorithm
        if not 0 < float(alg["delta"]) <= 1.0 / 6.0:
            raise ConfigError("algorithm.delta must lie in (0, 1/6]")
        if not float(alg["gamma"]) > 1:
            raise ConfigError("algorithm.gamma must exceed 1")
        if not float(alg["scale"]) > 0 or not float(alg["radius_scale"]) > 0:
            raise ConfigError("algorithm.scale and radius_scale must be positive")
        if int(alg["samples"]) < 1:
            raise ConfigError("algorithm.samples must be at least 1")
        run = self.run
        if int(run["T"]) < 0:
            raise ConfigError("run.T must be nonnegative")
        if run["x0"] is not None and len(run["x0"]) != theta.p:
            raise ConfigError("run.x0 must have p entries")
        for key in ("L",):
            for section in (run, self.verify):
                if section.get(key) is not None:
                    L = _matrix(section[key], key)
                    if L.shape != (theta.r, theta.p):
                        raise ConfigError(f"{key} must be r x p")

    @property
    def theta(self):
        return DynamicsParameter(_matrix(self.system["A"], "A"), _matrix(self.system["B"], "B"))

    @property
    def cost(self):
        return CostPair(_matrix(self.system["Q"], "Q"), _matrix(self.system["R"], "R"))

    @property
    def noise_model(self):
        kind = self.noise["kind"]
        if kind not in KINDS:
            raise ConfigError(f"noise.kind must be one of {KINDS}")
        override = self.noise.get("tail_override")
        return NoiseModel(kind, _matrix(self.system["C"], "C"), shape=float(self.noise["shape"]),
                          tail_override=tuple(override) if override else None)

    @property
    def region(self):
        center = DynamicsParameter(_matrix(self.theta0_set["A"], "theta0_set.A"),
                                   _matrix(self.theta0_set["B"], "theta0_set.B"))
        return ParameterRegion(center, float(self.theta0_set["radius"]))

    @property
    def x0(self):
        x0 = self.run["x0"]
        return None if x0 is None else np.asarray(x0, dtype=float)

    def regret_config(self):
        a = self.algorithm
        return vf.RegretConfig(self.theta, self.cost, self.noise_model, self.region,
                               delta=float(a["delta"]), gamma=float(a["gamma"]), scale=float(a["scale"]),
                               radius_scale=float(a["radius_scale"]), samples=int(a["samples"]),
                               name=self.name)


def load_scenario(path):
    """Read a scenario from a path or from a bundled preset name."""
    p = Path(path)
    try:
        if p.exists():
            text = p.read_text()
        else:
            preset = resources.files("ofu_lqr").joinpath("presets", f"{path}.json")
            if not preset.is_file():
                raise ConfigError(f"no scenario file or preset named {path!r}")
            text = preset.read_text()
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return Scenario.from_dict(data)


def _fmt(x):
    return repr(float(x))


def record_csv(record, config_hash):
    """CSV text for a run: ``#`` comment lines, header, one row per step."""
    lines = [f"# J_star={_fmt(record.J_star)}", f"# seed={record.seed}", f"# config_hash={config_hash}",
             f"# policy={record.policy}", CSV_HEADER]
    cum = record.cum_cost
    for t in range(record.T):
        lines.append(",".join((str(t + 1), str(int(record.episodes[t])), _fmt(record.costs[t]),
                               _fmt(cum[t]), _fmt(record.regret[t]))))
    return "\n".join(lines) + "\n"


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else None
    return obj


def dump_json(obj):
    return json.dumps(_to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def episodes_json(run, config_hash, seed):
    eps = [dict(index=e.index, start=e.start, end=e.end, tau=e.tau, A=e.theta.A, B=e.theta.B,
                gain=e.gain, J_star=e.J_star, N=e.N, radius=e.radius, zeta=e.zeta, D_norm=e.D_norm,
                acceptance_rate=e.acceptance_rate, selection_failed=e.selection_failed)
           for e in run.episodes]
    return dump_json(dict(config_hash=config_hash, seed=seed, settings=run.settings, episodes=eps))


def _write(out, name, text):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def cmd_dare(args, sc):
    sol = solve_dare(sc.theta, sc.cost)
    J = float(np.trace(sol.K @ sc.noise_model.C))
    eig = np.linalg.eigvals(sol.D_closed)
    payload = dict(config_hash=sc.config_hash, K=sol.K, L=sol.L, J_star=J,
                   closed_loop_eigenvalues=[[float(z.real), float(z.imag)] for z in eig],
                   spectral_radius=spectral_radius(sol.D_closed), residual=sol.residual,
                   iterations=sol.iterations)
    text = dump_json(payload)
    if args.out:
        _write(args.out, "dare.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def _policy_for(sc, name):
    if name == "optimal":
        return Policy.optimal()
    L = sc.run.get("L")
    if name == "fixed":
        if L is None:
            raise ConfigError("policy 'fixed' needs run.L in the scenario")
        return Policy.fixed(L)
    if name == "ce":
        if L is None:
            L = solve_dare(sc.region.ball_center, sc.cost).L
        return Policy.certainty_equivalence(L)
    raise ConfigError(f"unknown policy {name!r}")


def _run_ofu(sc, seed):
    a = sc.algorithm
    return run_algorithm1(sc.theta, sc.cost, sc.noise_model, sc.region, float(a["delta"]),
                          float(a["gamma"]), int(sc.run["T"]), scale=float(a["scale"]),
                          radius_scale=float(a["radius_scale"]), samples=int(a["samples"]),
                          seed=seed, x0=sc.x0)


def cmd_simulate(args, sc):
    seed = args.seed
    if args.policy == "ofu":
        return cmd_ofu(args, sc)
    rec = run_policy(sc.theta, sc.cost, sc.noise_model, _policy_for(sc, args.policy), int(sc.run["T"]),
                     x0=sc.x0, seed=seed)
    path = _write(args.out, "run.csv", record_csv(rec, sc.config_hash))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_ofu(args, sc):
    run = _run_ofu(sc, args.seed)
    p1 = _write(args.out, "run.csv", record_csv(run.record, sc.config_hash))
    p2 = _write(args.out, "episodes.json", episodes_json(run, sc.config_hash, args.seed))
    print(f"wrote {p1} and {p2}")
    return EXIT_OK


def cmd_verify(args, sc):
    claim = vf.CLAIM_FLAGS.get(args.claim)
    if claim is None:
        raise ConfigError(f"unknown claim {args.claim!r}; expected one of {sorted(vf.CLAIM_FLAGS)}")
    v = sc.verify
    noise = sc.noise_model
    theta = sc.theta
    delta = float(sc.algorithm["delta"])
    seed = args.seed
    L = v.get("L")
    if L is None:
        L = solve_dare(theta, sc.cost).L
    if claim == "noise_bound_L4":
        report = vf.verify_noise_bound(noise, int(v["n"]), theta.p, delta, int(v["trials"]), seed)
    elif claim == "covariance_floor_T1":
        eps = v.get("epsilon")
        eps = float(np.linalg.eigvalsh(noise.C)[0]) / 2.0 if eps is None else float(eps)
        report = vf.verify_covariance_floor(theta, L, noise, eps, delta, int(v["trials"]), seed, x0=sc.x0)
    elif claim == "prediction_C1":
        mult = 1e-6 if args.self_test else 1.0
        report = vf.verify_prediction(theta, L, noise, delta, int(v["trials"]), seed, x0=sc.x0,
                                      radius_multiplier=mult)
    elif claim == "clt_L2":
        report = vf.verify_clt(theta, sc.cost, noise, int(v["T"]), int(v["replications"]), seed,
                               threads=args.threads)
    else:
        grid = sc.run["T_grid"]
        if not grid:
            raise ConfigError("claim T2 needs run.T_grid")
        seeds = [seed + k for k in range(int(sc.run["seeds"]))]
        report = vf.verify_regret_scaling(sc.regret_config(), grid, seeds,
                                          policy="optimal" if args.self_test else "ofu",
                                          threads=args.threads)
    report.metadata["config_hash"] = sc.config_hash
    report.metadata["self_test"] = bool(args.self_test)
    path = _write(args.out, f"report_{args.claim}.json", dump_json(report.to_dict()))
    print(f"{report.claim}: {report.verdict} ({report.failures}/{report.trials}); wrote {path}")
    return EXIT_OK if report.passed else EXIT_VERDICT


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="ofu-lqr", description="Adaptive LQ regulation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out=True):
        p.add_argument("--scenario", required=True, help="scenario JSON path or preset name")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", default="out" if out else None)

    common(sub.add_parser("dare", help="solve the Riccati equation"), out=False)
    p = sub.add_parser("simulate", help="simulate a policy and write run.csv")
    common(p)
    p.add_argument("--policy", choices=POLICIES, default="optimal")
    common(sub.add_parser("ofu", help="run the adaptive controller"))
    p = sub.add_parser("verify", help="Monte Carlo check of a probabilistic claim")
    common(p)
    p.add_argument("--claim", required=True, help="one of L4, T1, C1, L2, T2")
    p.add_argument("--self-test", action="store_true",
                   help="C1: shrink the radius 1e6-fold (must fail); T2: use the optimal policy")
    return parser


COMMANDS = {"dare": cmd_dare, "simulate": cmd_simulate, "ofu": cmd_ofu, "verify": cmd_verify}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if args.seed < 0 or args.seed >= 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_USAGE
    if args.threads < 1:
        print("error: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        sc = load_scenario(args.scenario)
        return COMMANDS[args.command](args, sc)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NotStabilizableError, SelectionFailure, SampleSizeOverflow) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (BlowUpError, InstabilityError) as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (DomainError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
