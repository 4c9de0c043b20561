"""Domain types, the dataset container and the standardization step."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateColumn, InvalidDataset, InvalidSpec, UnsupportedMoment

PSD_TOLERANCE = 1e-10
MIN_SCALE = 1e-12


def _frozen(x, ndim: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != ndim:
        raise InvalidDataset(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observation table split into covariates ``z``, treatments ``a`` and outcome ``y``."""

    z: np.ndarray
    a: np.ndarray
    y: np.ndarray
    column_names: Optional[tuple] = None

    def __post_init__(self):
        z = _frozen(self.z, 2, "z")
        a = _frozen(self.a, 2, "a")
        y = _frozen(np.ravel(self.y), 1, "y")
        n = y.shape[0]
        if z.shape[0] != n or a.shape[0] != n:
            raise InvalidDataset(
                f"row counts differ: z={z.shape[0]}, a={a.shape[0]}, y={n}"
            )
        if n < 2:
            raise InvalidDataset(f"need at least 2 rows, got {n}")
        if z.shape[1] < 1 or a.shape[1] < 1:
            raise InvalidDataset("need at least one covariate and one treatment column")
        for name, block in (("z", z), ("a", a), ("y", y)):
            if not np.all(np.isfinite(block)):
                raise InvalidDataset(f"non-finite values in {name}")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        names = self.column_names
        if names is None:
            names = default_column_names(z.shape[1], a.shape[1])
        names = tuple(str(c) for c in names)
        if len(names) != z.shape[1] + a.shape[1] + 1:
            raise InvalidDataset(
                f"expected {z.shape[1] + a.shape[1] + 1} column names, got {len(names)}"
            )
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def l(self) -> int:  # noqa: E743
        return self.z.shape[1]

    @property
    def p(self) -> int:
        return self.a.shape[1]

    def to_matrix(self) -> np.ndarray:
        """All columns side by side in the order Z, A, Y."""
        return np.column_stack([self.z, self.a, self.y])

    @classmethod
    def from_matrix(cls, mat: np.ndarray, l: int, p: int, column_names=None) -> "Dataset":
        mat = np.asarray(mat, dtype=float)
        if mat.shape[1] != l + p + 1:
            raise InvalidDataset(f"matrix has {mat.shape[1]} columns, expected {l + p + 1}")
        return cls(mat[:, :l], mat[:, l:l + p], mat[:, l + p], column_names)

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.z[rows], self.a[rows], self.y[rows], self.column_names)


def default_column_names(l: int, p: int) -> tuple:
    return tuple([f"Z{k + 1}" for k in range(l)] + [f"A{j + 1}" for j in range(p)] + ["Y"])


@dataclass(frozen=True, eq=False)
class StandardizedDataset:
    """A dataset with every column centered and scaled to unit sample SD.

    ``centers`` and ``scales`` hold one entry per column in Z, A, Y order and
    map the standardized values back to the raw ones.
    """

    data: Dataset
    centers: np.ndarray
    scales: np.ndarray

    @property
    def scale_z(self) -> np.ndarray:
        return self.scales[: self.data.l]

    @property
    def scale_a(self) -> np.ndarray:
        return self.scales[self.data.l:self.data.l + self.data.p]

    @property
    def scale_y(self) -> float:
        return float(self.scales[-1])

    def to_raw(self) -> Dataset:
        mat = self.data.to_matrix() * self.scales + self.centers
        return Dataset.from_matrix(mat, self.data.l, self.data.p, self.data.column_names)


def standardize(raw: Dataset) -> StandardizedDataset:
    """Center each column at its sample mean and divide by its sample SD (ddof=1)."""
    mat = raw.to_matrix()
    centers = mat.mean(axis=0)
    scales = mat.std(axis=0, ddof=1)
    bad = [raw.column_names[k] for k in np.flatnonzero(~(scales > MIN_SCALE))]
    if bad:
        raise DegenerateColumn(f"constant column(s): {', '.join(bad)}")
    std = (mat - centers) / scales
    centers.setflags(write=False)
    scales.setflags(write=False)
    return StandardizedDataset(
        Dataset.from_matrix(std, raw.l, raw.p, raw.column_names), centers, scales
    )


def destandardize_effect(alpha_std, std: StandardizedDataset) -> np.ndarray:
    """Map standardized-scale treatment effects to raw units."""
    alpha_std = np.atleast_1d(np.asarray(alpha_std, dtype=float))
    return alpha_std * std.scale_y / std.scale_a


# ---------------------------------------------------------------------------
# Noise families
# ---------------------------------------------------------------------------

_FAMILIES = ("gaussian", "uniform", "exponential", "student_t")


@dataclass(frozen=True)
class NoiseSpec:
    """A univariate noise distribution with finite, positive variance.

    Parameters are passed by family: ``gaussian(mean, sd)``, ``uniform(lo, hi)``,
    ``exponential(rate)`` and ``student_t(nu)``. Draws are used as-is: the
    exponential is not centered and the t is not rescaled to unit variance.
    """

    family: str
    params: tuple = ()

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise InvalidSpec(f"unknown noise family {self.family!r}")
        params = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", params)
        expected = {"gaussian": 2, "uniform": 2, "exponential": 1, "student_t": 1}[self.family]
        if len(params) != expected:
            raise InvalidSpec(f"{self.family} takes {expected} parameter(s), got {len(params)}")
        if not all(math.isfinite(v) for v in params):
            raise InvalidSpec("noise parameters must be finite")
        if self.family == "gaussian" and params[1] <= 0:
            raise InvalidSpec("gaussian sd must be > 0")
        if self.family == "uniform" and not params[0] < params[1]:
            raise InvalidSpec("uniform requires lo < hi")
        if self.family == "exponential" and params[0] <= 0:
            raise InvalidSpec("exponential rate must be > 0")
        if self.family == "student_t" and params[0] <= 2:
            raise InvalidSpec("student_t requires nu > 2 for finite variance")

    @classmethod
    def gaussian(cls, mean: float = 0.0, sd: float = 1.0) -> "NoiseSpec":
        return cls("gaussian", (mean, sd))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "NoiseSpec":
        return cls("uniform", (lo, hi))

    @classmethod
    def exponential(cls, rate: float) -> "NoiseSpec":
        return cls("exponential", (rate,))

    @classmethod
    def student_t(cls, nu: float) -> "NoiseSpec":
        return cls("student_t", (nu,))

    @classmethod
    def from_dict(cls, d: Mapping) -> "NoiseSpec":
        d = dict(d)
        family = d.pop("family")
        order = {
            "gaussian": ("mean", "sd"),
            "uniform": ("lo", "hi"),
            "exponential": ("rate",),
            "student_t": ("nu",),
        }.get(family)
        if order is None:
            raise InvalidSpec(f"unknown noise family {family!r}")
        defaults = {"mean": 0.0, "sd": 1.0}
        try:
            params = tuple(d.pop(k) if k in d else defaults[k] for k in order)
        except KeyError as exc:
            raise InvalidSpec(f"{family} noise is missing parameter {exc}") from None
        if d:
            raise InvalidSpec(f"unexpected {family} parameters: {sorted(d)}")
        return cls(family, params)

    def to_dict(self) -> dict:
        keys = {
            "gaussian": ("mean", "sd"),
            "uniform": ("lo", "hi"),
            "exponential": ("rate",),
            "student_t": ("nu",),
        }[self.family]
        return {"family": self.family, **dict(zip(keys, self.params))}

    def dist(self):
        """The equivalent frozen ``scipy.stats`` distribution."""
        f, p = self.family, self.params
        if f == "gaussian":
            return stats.norm(loc=p[0], scale=p[1])
        if f == "uniform":
            return stats.uniform(loc=p[0], scale=p[1] - p[0])
        if f == "exponential":
            return stats.expon(scale=1.0 / p[0])
        return stats.t(df=p[0])

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        f, p = self.family, self.params
        if f == "gaussian":
            return p[0] + p[1] * rng.standard_normal(n)
        if f == "uniform":
            return rng.uniform(p[0], p[1], n)
        if f == "exponential":
            return rng.exponential(1.0 / p[0], n)
        return rng.standard_t(p[0], n)

    @property
    def mean(self) -> float:
        return self.raw_moment(1)

    @property
    def variance(self) -> float:
        return self.raw_moment(2) - self.raw_moment(1) ** 2

    @property
    def is_gaussian(self) -> bool:
        return self.family == "gaussian"

    def raw_moment(self, k: int) -> float:
        """E[X**k] in closed form."""
        if k < 0:
            raise ValueError("moment order must be nonnegative")
        if k == 0:
            return 1.0
        f, p = self.family, self.params
        if f == "gaussian":
            mu, sd = p
            total = 0.0
            for j in range(0, k + 1, 2):
                total += math.comb(k, j) * mu ** (k - j) * sd ** j * _double_factorial(j - 1)
            return total
        if f == "uniform":
            lo, hi = p
            return (hi ** (k + 1) - lo ** (k + 1)) / ((k + 1) * (hi - lo))
        if f == "exponential":
            return math.factorial(k) / p[0] ** k
        nu = p[0]
        if k >= nu:
            raise UnsupportedMoment(f"t_{nu:g} has no finite moment of order {k}")
        if k % 2:
            return 0.0
        h = k // 2
        return math.exp(
            h * math.log(nu)
            + math.lgamma(h + 0.5)
            + math.lgamma(nu / 2 - h)
            - 0.5 * math.log(math.pi)
            - math.lgamma(nu / 2)
        )


def _double_factorial(m: int) -> int:
    out = 1
    while m > 1:
        out *= m
        m -= 2
    return out


@dataclass(frozen=True, eq=False)
class ExtraConfounder:
    """A latent non-Gaussian variable ``W`` loading on every treatment and on ``Y``."""

    noise: NoiseSpec
    a_loadings: np.ndarray
    y_loading: float

    def __post_init__(self):
        object.__setattr__(self, "a_loadings", _frozen(np.ravel(self.a_loadings), 1, "a_loadings"))
        object.__setattr__(self, "y_loading", float(self.y_loading))


@dataclass(frozen=True, eq=False)
class ScenarioSpec:
    """Full parameterization of the linear structural model.

    ``A = (I - B)^{-1} (gamma Z + lam U + eps_A [+ w_A W])`` where ``B`` is the
    optional strictly lower triangular ``treatment_dag``, and
    ``Y = alpha'A + beta'Z + s'U + eps_Y [+ w_Y W]``. ``(Z, U)`` is jointly
    Gaussian with unit variances and ``cov(Z, U) = sigma``.
    """

    gamma: np.ndarray
    lam: np.ndarray
    sigma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    s: np.ndarray
    treatment_noise: tuple
    outcome_noise: NoiseSpec = field(default_factory=NoiseSpec.gaussian)
    extra_confounder: Optional[ExtraConfounder] = None
    treatment_dag: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        gamma = _frozen(self.gamma, 2, "gamma")
        p, l = gamma.shape
        lam = _frozen(self.lam, 2, "lam")
        if lam.shape[0] != p:
            raise InvalidSpec(f"lam must have {p} rows, got shape {lam.shape}")
        t = lam.shape[1]
        sigma = np.array(self.sigma, dtype=float).reshape(l, t) if np.size(self.sigma) == l * t else None
        if sigma is None:
            raise InvalidSpec(f"sigma must be {l}x{t}")
        sigma.setflags(write=False)
        vectors = {}
        for name, size in (("alpha", p), ("beta", l), ("s", t)):
            v = _frozen(np.ravel(getattr(self, name)), 1, name)
            if v.shape[0] != size:
                raise InvalidSpec(f"{name} must have length {size}, got {v.shape[0]}")
            vectors[name] = v
        noise = self.treatment_noise
        if isinstance(noise, NoiseSpec):
            noise = (noise,) * p
        noise = tuple(noise)
        if len(noise) != p:
            raise InvalidSpec(f"need {p} treatment noise specs, got {len(noise)}")
        dag = self.treatment_dag
        if dag is not None:
            dag = _frozen(dag, 2, "treatment_dag")
            if dag.shape != (p, p):
                raise InvalidSpec(f"treatment_dag must be {p}x{p}")
            if np.any(np.triu(dag) != 0):
                raise InvalidSpec("treatment_dag must be strictly lower triangular")
        if self.extra_confounder is not None and self.extra_confounder.a_loadings.shape[0] != p:
            raise InvalidSpec(f"extra confounder needs {p} treatment loadings")
        for key, value in (("gamma", gamma), ("lam", lam), ("sigma", sigma),
                           ("treatment_noise", noise), ("treatment_dag", dag), *vectors.items()):
            object.__setattr__(self, key, value)
        if not (np.all(np.isfinite(gamma)) and np.all(np.isfinite(lam)) and np.all(np.isfinite(sigma))):
            raise InvalidSpec("non-finite coefficients")
        min_eig = float(np.linalg.eigvalsh(self.zu_covariance()).min())
        if min_eig < -PSD_TOLERANCE:
            raise InvalidSpec(
                f"joint covariance of (Z, U) is not positive semidefinite "
                f"(smallest eigenvalue {min_eig:.6g})"
            )

    @property
    def p(self) -> int:
        return self.gamma.shape[0]

    @property
    def l(self) -> int:  # noqa: E743
        return self.gamma.shape[1]

    @property
    def t(self) -> int:
        return self.lam.shape[1]

    def zu_covariance(self) -> np.ndarray:
        l, t = self.l, self.t
        return np.block([[np.eye(l), self.sigma], [self.sigma.T, np.eye(t)]])

    def zu_factor(self) -> np.ndarray:
        """A square root ``F`` of the (Z, U) covariance, ``F @ F.T == cov``.

        Eigenvalues in ``[-PSD_TOLERANCE, 0)`` are clamped to zero, so singular
        but valid covariances factor without failing.
        """
        w, v = np.linalg.eigh(self.zu_covariance())
        return v * np.sqrt(np.clip(w, 0.0, None))

    def dag_inverse(self) -> np.ndarray:
        """``(I - B)^{-1}``, the total-effect map among treatments."""
        if self.treatment_dag is None:
            return np.eye(self.p)
        return np.linalg.inv(np.eye(self.p) - self.treatment_dag)

    def cov_az(self) -> np.ndarray:
        """Population ``cov(A, Z)``, a p x l matrix."""
        return self.dag_inverse() @ (self.gamma + self.lam @ self.sigma.T)

    def replace(self, **changes) -> "ScenarioSpec":
        from dataclasses import replace

        return replace(self, **changes)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

_TRANSFORMS = {"log": np.log, "identity": lambda x: x}


def read_csv(
    path,
    z_cols: Sequence[str],
    a_cols: Sequence[str],
    y_col: str,
    transforms: Optional[Mapping[str, str]] = None,
) -> Dataset:
    """Load a comma-delimited UTF-8 file with a header row into a :class:`Dataset`.

    ``transforms`` maps column names to ``"log"`` or ``"identity"``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidDataset(f"{path} is empty") from None
        rows = [r for r in reader if r]
    index = {name: k for k, name in enumerate(header)}
    wanted = list(z_cols) + list(a_cols) + [y_col]
    missing = [c for c in wanted if c not in index]
    if missing:
        raise InvalidDataset(f"columns not in {path.name} header: {', '.join(missing)}")
    try:
        mat = np.array([[float(r[index[c]]) for c in wanted] for r in rows], dtype=float)
    except ValueError as exc:
        raise InvalidDataset(f"{path.name}: {exc}") from None
    transforms = dict(transforms or {})
    names = []
    for k, c in enumerate(wanted):
        kind = transforms.pop(c, "identity")
        if kind not in _TRANSFORMS:
            raise InvalidDataset(f"unknown transform {kind!r} for column {c}")
        if kind == "log":
            if np.any(mat[:, k] <= 0):
                raise InvalidDataset(f"log transform needs positive values in {c}")
            names.append(f"log_{c}")
        else:
            names.append(c)
        mat[:, k] = _TRANSFORMS[kind](mat[:, k])
    if transforms:
        raise InvalidDataset(f"transforms for unknown columns: {sorted(transforms)}")
    if mat.size == 0:
        raise InvalidDataset(f"{path} has no data rows")
    return Dataset.from_matrix(mat, len(z_cols), len(a_cols), names)


def write_csv(data: Dataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(data.column_names)
        for row in data.to_matrix():
            writer.writerow([repr(float(v)) for v in row])
