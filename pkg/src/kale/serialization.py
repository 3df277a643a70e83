"""File formats: experiment configs, CSV tables, data files and model files."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .convolved import CLOSED_FORM, ConvolvedKernel
from .kernels import KernelSpec, NoiseModel
from .predict import KALE, KALEN, SK, Dataset, FittedModel, build_model

MODEL_FORMAT = "kale-model"
MODEL_FORMAT_VERSION = 1


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class VersionMismatch(ValueError):
    pass


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Settings for one experiment run; every constant can be overridden."""

    experiment: str = "example1"
    seed: int = 20190425
    replicates: int = 100
    sk_replicates: int | None = None
    noise_grid: list = field(default_factory=lambda: [0.05, 0.10, 0.15, 0.20])
    n_design: int = 161
    n_test: int = 8001
    domain: list = field(default_factory=lambda: [0.0, 8.0])
    family: str = "gaussian"
    nu: float = 3.0
    mean_basis: str = "constant"
    n_K: int = 900
    n_r: int = 30
    starts: int = 5
    lhd_restarts: int = 50
    level: float = 0.05
    max_skip_fraction: float = 0.10
    theta: float = 1.0
    sigma_sq: float = 1.0
    dims: list = field(default_factory=lambda: [2, 6])
    probe_sizes: list = field(default_factory=lambda: [20, 40, 80, 160])
    out: str = "out"
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        counts = {
            "replicates": self.replicates,
            "n_design": self.n_design,
            "n_test": self.n_test,
            "n_K": self.n_K,
            "n_r": self.n_r,
            "starts": self.starts,
            "lhd_restarts": self.lhd_restarts,
            "threads": self.threads,
        }
        if self.sk_replicates is not None:
            counts["sk_replicates"] = self.sk_replicates
        for name, value in counts.items():
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not self.noise_grid or any(v < 0 for v in self.noise_grid):
            raise ValueError("noise_grid must be a nonempty list of nonnegative values")
        if len(self.domain) != 2 or not self.domain[1] > self.domain[0]:
            raise ValueError("domain must be [low, high] with low < high")
        if not 0.0 < self.level < 1.0:
            raise ValueError("level must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @property
    def sk_count(self) -> int:
        return self.sk_replicates if self.sk_replicates is not None else self.replicates


def default_config(experiment: str, **overrides) -> ExperimentConfig:
    """Defaults for each experiment, matching the published studies."""
    base: dict = {"experiment": experiment}
    if experiment == "example2":
        base.update(
            replicates=20,
            sk_replicates=100,
            noise_grid=[0.02, 0.03, 0.04, 0.05],
            n_design=20,
            n_test=100,
            domain=[0.0, 1.0],
            family="matern",
            nu=3.0,
        )
    elif experiment == "bounds":
        base.update(noise_grid=[round(0.05 * k, 2) for k in range(9)], replicates=1)
    elif experiment != "example1":
        raise ValueError(f"unknown experiment {experiment!r}")
    base.update(overrides)
    return ExperimentConfig(**base)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isinf(value) or math.isnan(value):
            raise ValueError("non-finite values are not representable")
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot write {type(value).__name__} to a config file")


def dump_config(config: ExperimentConfig) -> str:
    """Flat ``key = value`` text readable by any TOML parser."""
    lines = []
    for f in dataclasses.fields(config):
        value = getattr(config, f.name)
        if value is None:
            continue
        lines.append(f"{f.name} = {_toml_value(value)}")
    return "\n".join(lines) + "\n"


def write_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(dump_config(config), encoding="utf-8")


def parse_config(text: str, experiment: str | None = None, path=None) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        if line is None:
            m = re.search(r"line (\d+)", str(exc))
            line = int(m.group(1)) if m else None
        raise ParseError(str(exc), line, path) from None
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(raw) - known
    if unknown:
        key = sorted(unknown)[0]
        raise ParseError(f"unknown config key {key!r}", _key_line(text, key), path)
    name = experiment or raw.get("experiment", "example1")
    raw = {k: v for k, v in raw.items() if k != "experiment"}
    try:
        return default_config(name, **raw)
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc), None, path) from None


def _key_line(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), 1):
        if line.split("=", 1)[0].strip() == key:
            return i
    return None


def read_config(path, experiment: str | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), experiment, path)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_csv(path, header, rows) -> None:
    """RFC-4180 CSV with a header row and 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Numeric CSV with a header row; raises ParseError with the line number."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("missing header row", 1, path)
    header = [h.strip() for h in rows[0]]
    values = []
    for lineno, row in enumerate(rows[1:], 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", lineno, path)
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise ParseError(f"non-numeric field in {row!r}", lineno, path) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError("non-finite value", lineno, path)
        values.append(vals)
    arr = np.array(values, dtype=float).reshape(len(values), len(header))
    return header, arr


def read_dataset(path, mean_basis: str = "constant") -> Dataset:
    """Training data: columns ``x1..xd`` followed by the response column."""
    header, arr = read_table(path)
    if len(header) < 2:
        raise ParseError("need at least one input column and a response column", 1, path)
    if len(arr) == 0:
        raise ParseError("no data rows", 2, path)
    return Dataset(arr[:, :-1], arr[:, -1], mean_basis)


def read_points(path, dim: int | None = None) -> np.ndarray:
    header, arr = read_table(path)
    if dim is not None and len(header) != dim:
        raise ParseError(f"expected {dim} columns, found {len(header)}", 1, path)
    return arr


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def model_to_dict(model: FittedModel) -> dict:
    k = model.kernel
    doc = {
        "format": MODEL_FORMAT,
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "kernel": {
            "family": k.family,
            "theta": k.theta,
            "nu": k.nu,
            "phi": k.phi,
            "dim": k.dim,
            "scales": None if k.scales is None else [float(s) for s in k.scales],
        },
        "parameters": {"sigma_sq": model.sigma_sq},
        "mean_basis": model.mean_basis,
        "beta": [float(b) for b in model.beta],
        "X": model.X.tolist(),
        "Y": model.Y.tolist(),
    }
    if model.kind == SK:
        doc["parameters"]["nugget"] = model.nugget
    else:
        ck = model.ck
        doc["parameters"]["sigma_eps_sq"] = ck.noise.variance
        doc["parameters"]["extrinsic_var"] = ck.extrinsic_var
        doc["convolution"] = {"mode": ck.mode}
        if ck.mode != CLOSED_FORM:
            doc["convolution"]["z_r"] = ck.z_r.tolist()
            doc["convolution"]["z_pairs"] = ck.z_pairs.tolist()
    return doc


def model_from_dict(doc: dict) -> FittedModel:
    if doc.get("format") != MODEL_FORMAT:
        raise ParseError("not a model file")
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatch(
            f"model file version {version!r}, this build reads version {MODEL_FORMAT_VERSION}"
        )
    try:
        kd = doc["kernel"]
        kernel = KernelSpec(
            kd["family"],
            theta=kd["theta"],
            nu=kd["nu"],
            phi=kd["phi"],
            dim=kd["dim"],
            scales=None if kd["scales"] is None else tuple(kd["scales"]),
        )
        params = doc["parameters"]
        kind = doc["kind"]
        X = np.array(doc["X"], dtype=float).reshape(-1, kernel.dim)
        ds = Dataset(X, np.array(doc["Y"], dtype=float), doc["mean_basis"])
        if kind == SK:
            return build_model(SK, ds, kernel=kernel, sigma_sq=params["sigma_sq"],
                               nugget=params["nugget"])
        if kind not in (KALE, KALEN):
            raise ParseError(f"unknown model kind {kind!r}")
        conv = doc["convolution"]
        noise = NoiseModel("gaussian", params["sigma_eps_sq"], kernel.dim)
        z_r = z_pairs = None
        if conv["mode"] != CLOSED_FORM:
            z_r = np.array(conv["z_r"], dtype=float).reshape(-1, kernel.dim)
            z_pairs = np.array(conv["z_pairs"], dtype=float).reshape(-1, 2, kernel.dim)
        ck = ConvolvedKernel(kernel, noise, params["sigma_sq"], mode=conv["mode"],
                             extrinsic_var=params.get("extrinsic_var", 0.0),
                             z_r=z_r, z_pairs=z_pairs)
        return build_model(kind, ds, kernel=kernel, sigma_sq=params["sigma_sq"], ck=ck)
    except KeyError as exc:
        raise ParseError(f"model file lacks field {exc.args[0]!r}") from None


def save_model(model: FittedModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> FittedModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, path) from None
    return model_from_dict(doc)
