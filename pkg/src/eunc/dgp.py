"""Sampling from the linear structural model and its exact population moments."""
from __future__ import annotations

from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
import yaml

from .core import (
    Dataset,
    ExtraConfounder,
    NoiseSpec,
    ScenarioSpec,
    default_column_names,
)
from .errors import ConfigError, InvalidSpec, UnsupportedMoment

MAX_MOMENT_DEGREE = 8

Seed = int
"""A 64-bit unsigned master seed."""


def make_rng(seed: Seed, *stream: int) -> np.random.Generator:
    """Counter-based generator for ``seed`` and an optional stream key.

    Streams with different keys are statistically independent, so replication
    ``r`` of a benchmark can draw from ``make_rng(master, r)`` in any order and
    on any worker.
    """
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in stream))
    return np.random.Generator(np.random.Philox(ss))


def sample(spec: ScenarioSpec, n: int, seed: Union[Seed, np.random.Generator]) -> Dataset:
    """Draw ``n`` i.i.d. rows of (Z, A, Y); U and W stay latent."""
    if n < 2:
        raise ValueError(f"n must be at least 2, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    l, p, t = spec.l, spec.p, spec.t
    zu = rng.standard_normal((n, l + t)) @ spec.zu_factor().T
    z, u = zu[:, :l], zu[:, l:]
    eps_a = np.column_stack([noise.draw(rng, n) for noise in spec.treatment_noise])
    eps_y = spec.outcome_noise.draw(rng, n)

    a = z @ spec.gamma.T + u @ spec.lam.T + eps_a
    y = z @ spec.beta + u @ spec.s + eps_y
    if spec.extra_confounder is not None:
        w = spec.extra_confounder.noise.draw(rng, n)
        a += np.outer(w, spec.extra_confounder.a_loadings)
        y += spec.extra_confounder.y_loading * w
    if spec.treatment_dag is not None:
        for j in range(1, p):
            a[:, j] += a[:, :j] @ spec.treatment_dag[j, :j]
    y += a @ spec.alpha
    return Dataset(z, a, y, default_column_names(l, p))


# ---------------------------------------------------------------------------
# Exact moments
# ---------------------------------------------------------------------------

Monomial = Sequence[tuple]


def _linear_forms(spec: ScenarioSpec):
    """Coefficients of every observed variable over the independent base blocks.

    Base order: the l + t jointly Gaussian (Z, U) coordinates, then one column
    per independent noise term (eps_A1..eps_Ap, eps_Y, optionally W).
    """
    l, p, t = spec.l, spec.p, spec.t
    noises = list(spec.treatment_noise) + [spec.outcome_noise]
    if spec.extra_confounder is not None:
        noises.append(spec.extra_confounder.noise)
    n_base = l + t + len(noises)
    forms = {}
    for k in range(l):
        row = np.zeros(n_base)
        row[k] = 1.0
        forms[f"Z{k + 1}"] = row
    direct = np.zeros((p, n_base))
    direct[:, :l] = spec.gamma
    direct[:, l:l + t] = spec.lam
    direct[:, l + t:l + t + p] = np.eye(p)
    if spec.extra_confounder is not None:
        direct[:, -1] = spec.extra_confounder.a_loadings
    total = spec.dag_inverse() @ direct
    for j in range(p):
        forms[f"A{j + 1}"] = total[j]
    y = spec.alpha @ total
    y[:l] += spec.beta
    y[l:l + t] += spec.s
    y[l + t + p] += 1.0
    if spec.extra_confounder is not None:
        y[-1] += spec.extra_confounder.y_loading
    forms["Y"] = y
    return forms, noises, l + t


def _parse_monomial(mono) -> list:
    if isinstance(mono, str):
        mono = [(mono, 1)]
    out = []
    for item in mono:
        if isinstance(item, str):
            name, power = item, 1
        else:
            name, power = item
        power = int(power)
        if power < 0:
            raise UnsupportedMoment(f"negative power for {name}")
        out.extend([name] * power)
    return out


def _expand(factors: Iterable[np.ndarray]) -> dict:
    """Multiply linear forms into a polynomial {exponent tuple: coefficient}."""
    poly = None
    for form in factors:
        support = np.flatnonzero(form)
        if poly is None:
            poly = {(): 1.0}
            n_base = form.shape[0]
        new = {}
        for expo, coef in poly.items():
            base = list(expo) if expo else [0] * n_base
            for k in support:
                nxt = base.copy()
                nxt[k] += 1
                key = tuple(nxt)
                new[key] = new.get(key, 0.0) + coef * form[k]
        poly = new
    return poly or {(): 1.0}


def gaussian_moment(cov: np.ndarray, counts: Sequence[int]) -> float:
    """E[prod x_i**counts_i] for x ~ N(0, cov), by Isserlis' theorem."""
    cov_t = tuple(map(tuple, np.asarray(cov, dtype=float)))
    return _isserlis(cov_t, tuple(int(c) for c in counts))


@lru_cache(maxsize=65536)
def _isserlis(cov: tuple, counts: tuple) -> float:
    if sum(counts) % 2:
        return 0.0
    try:
        i = next(k for k, c in enumerate(counts) if c)
    except StopIteration:
        return 1.0
    rest = list(counts)
    rest[i] -= 1
    total = 0.0
    for j, c in enumerate(rest):
        if c and cov[i][j] != 0.0:
            nxt = rest.copy()
            nxt[j] -= 1
            total += c * cov[i][j] * _isserlis(cov, tuple(nxt))
    return total


def population_moments(spec: ScenarioSpec, monomials) -> np.ndarray:
    """Exact mixed moments of the observed (Z, A, Y).

    Each monomial is a sequence of ``(variable, power)`` pairs such as
    ``[("Z1", 1), ("A1", 3)]``; variables are named ``Z1..Zl``, ``A1..Ap`` and
    ``Y``. Every observed variable is linear in independent blocks (the
    Gaussian (Z, U) pair and the scalar noises), so a monomial expands into a
    polynomial whose terms factor into a Gaussian moment (Isserlis) times
    closed-form raw noise moments.
    """
    forms, noises, n_gauss = _linear_forms(spec)
    cov = spec.zu_covariance()
    out = []
    for mono in monomials:
        names = _parse_monomial(mono)
        if len(names) > MAX_MOMENT_DEGREE:
            raise UnsupportedMoment(
                f"degree {len(names)} exceeds the supported maximum of {MAX_MOMENT_DEGREE}"
            )
        unknown = [v for v in names if v not in forms]
        if unknown:
            raise UnsupportedMoment(f"unknown variable(s): {', '.join(sorted(set(unknown)))}")
        poly = _expand(forms[v] for v in names)
        total = 0.0
        for expo, coef in poly.items():
            if not expo:
                total += coef
                continue
            g = gaussian_moment(cov, expo[:n_gauss])
            if g == 0.0:
                continue
            term = coef * g
            for noise, k in zip(noises, expo[n_gauss:]):
                if k:
                    term *= noise.raw_moment(k)
            total += term
        out.append(total)
    return np.array(out)


_EXAMPLE3_COLUMNS = ("A1", "A2", "Z1", "Z2")
_EXAMPLE3_TESTS = (("A1", 1), ("A2", 1), ("A1", 3), ("A2", 3))


def example3_condition_matrix(spec: ScenarioSpec):
    """Moment matrix E{(A1, A2, Z1, Z2) g} for g in (A1, A2, A1^3, A2^3).

    A nonzero determinant rules out any nontrivial linear relation between
    (A1, A2) and E(Z | A); returns ``(matrix, determinant)``.
    """
    if spec.p != 2 or spec.l != 2:
        raise InvalidSpec("the condition matrix needs two treatments and two covariates")
    monos = [[(col, 1), test] for test in _EXAMPLE3_TESTS for col in _EXAMPLE3_COLUMNS]
    mat = population_moments(spec, monos).reshape(4, 4)
    return mat, float(np.linalg.det(mat))


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------

def _matrix(value, rows: int, cols: int, key: str) -> np.ndarray:
    arr = np.array(value, dtype=float)
    if arr.size != rows * cols:
        raise ConfigError(f"{key} must have {rows}x{cols} entries, got shape {arr.shape}")
    return arr.reshape(rows, cols)


def spec_from_dict(d: dict) -> ScenarioSpec:
    """Build a :class:`ScenarioSpec` from a parsed scenario tree."""
    try:
        gamma = np.atleast_2d(np.array(d["gamma"], dtype=float))
        p, l = gamma.shape
        lam = np.array(d["lambda"], dtype=float)
        lam = lam.reshape(p, -1) if lam.size else lam.reshape(p, 0)
        t = lam.shape[1]
        sigma = _matrix(d.get("sigma", np.zeros((l, t))), l, t, "sigma")
        noise = d["treatment_noise"]
        if isinstance(noise, dict):
            noise = [noise] * p
        extra = d.get("extra_confounder")
        if extra is not None:
            extra = ExtraConfounder(
                NoiseSpec.from_dict(extra["noise"]),
                np.broadcast_to(np.array(extra["a_loadings"], dtype=float), (p,)),
                extra["y_loading"],
            )
        dag = d.get("treatment_dag")
        return ScenarioSpec(
            gamma=gamma,
            lam=lam,
            sigma=sigma,
            alpha=np.ravel(d["alpha"]),
            beta=np.ravel(d.get("beta", np.zeros(l))),
            s=np.ravel(d["s"]),
            treatment_noise=tuple(NoiseSpec.from_dict(x) for x in noise),
            outcome_noise=NoiseSpec.from_dict(d.get("outcome_noise", {"family": "gaussian"})),
            extra_confounder=extra,
            treatment_dag=None if dag is None else _matrix(dag, p, p, "treatment_dag"),
            name=str(d.get("name", "")),
        )
    except KeyError as exc:
        raise ConfigError(f"scenario is missing required key {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed scenario: {exc}") from None


def spec_to_dict(spec: ScenarioSpec) -> dict:
    d = {
        "name": spec.name,
        "gamma": spec.gamma.tolist(),
        "lambda": spec.lam.tolist(),
        "sigma": spec.sigma.tolist(),
        "alpha": spec.alpha.tolist(),
        "beta": spec.beta.tolist(),
        "s": spec.s.tolist(),
        "treatment_noise": [x.to_dict() for x in spec.treatment_noise],
        "outcome_noise": spec.outcome_noise.to_dict(),
    }
    if spec.treatment_dag is not None:
        d["treatment_dag"] = spec.treatment_dag.tolist()
    if spec.extra_confounder is not None:
        ec = spec.extra_confounder
        d["extra_confounder"] = {
            "noise": ec.noise.to_dict(),
            "a_loadings": ec.a_loadings.tolist(),
            "y_loading": ec.y_loading,
        }
    return d


def load_scenario(path_or_name) -> ScenarioSpec:
    """Load a scenario from a YAML file, or a bundled scenario by name."""
    path = Path(path_or_name)
    if path.suffix not in (".yaml", ".yml") and not path.exists():
        bundled = resources.files("eunc") / "scenarios" / f"{path_or_name}.yaml"
        if not bundled.is_file():
            raise ConfigError(f"no scenario file or bundled scenario named {path_or_name!r}")
        text = bundled.read_text(encoding="utf-8")
        default_name = str(path_or_name)
    else:
        if not path.is_file():
            raise ConfigError(f"scenario file not found: {path}")
        text = path.read_text(encoding="utf-8")
        default_name = path.stem
    tree = yaml.safe_load(text)
    if not isinstance(tree, dict):
        raise ConfigError(f"scenario {path_or_name} is not a mapping")
    tree.setdefault("name", default_name)
    return spec_from_dict(tree)


def bundled_scenarios() -> list:
    root = resources.files("eunc") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))
