"""Run configuration: strict INI parsing, hashing and atomic artifact writers."""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import ConfigurationError, GridFunction
from .jumps import LevyMeasureSpec
from .operators import LevyIntegralSpec, make_jump_map
from .params import StructureParams
from .solver import EquationSpec, SolverConfig, checkerboard

ARTIFACT_VERSION = "1"

_REQUIRED = object()

# section -> key -> (type, default); _REQUIRED marks mandatory keys
SCHEMA: dict[str, dict[str, tuple]] = {
    "structure": {"delta": (float, _REQUIRED), "q": (float, _REQUIRED), "M": (float, 1.0),
                  "T": (float, 1.0), "tau": (float, 0.2)},
    "grid": {"nx": (int, _REQUIRED), "nt": (int, None), "L": (float, 1.0)},
    "levy": {"s": (float, 1.0), "c": (float, 0.5), "dim": (int, 1)},
    "mc": {"samples": (int, _REQUIRED), "seed": (int, 0),
           "probes": (str, "0.0:0.0, 0.3:0.5, 0.5:0.8, 0.7:0.9, 0.1:0.96")},
    "equation": {"variant": (str, _REQUIRED), "terminal": (str, "cos"), "amplitude": (float, 0.5),
                 "diffusion_scale": (int, 4), "diffusion_high": (float, None)},
    "nonlocal": {"maps": (str, "linear:gamma=1.0, sine:amp=0.5; asymmetric:gamma_pos=1.0, gamma_neg=0.3")},
    "rollout": {"x": (float, 0.3), "t": (float, 0.5), "checkpoints": (int, 10), "repeats": (int, 3)},
    "bridge": {"family_size": (int, 4), "samples": (int, 2000), "alpha": (float, None)},
    "holder": {"family": (bool, True), "tail": (float, None)},
    "reverse_holder": {"cells": (int, 256), "B": (float, 1.0), "start": (float, 0.8), "samples": (int, 400)},
    "output": {"dir": (str, None)},
}
REQUIRED_SECTIONS = ("structure", "grid", "mc", "equation")
VARIANTS = ("lower", "upper", "local", "nonlocal")

TERMINALS = {
    "cos": lambda x, L: np.cos(2 * np.pi * x / L),
    "mix": lambda x, L: 0.8 * np.sin(2 * np.pi * x / L) + 0.4 * np.cos(6 * np.pi * x / L),
    "bump": lambda x, L: 1.6 * np.exp(-20 * (x / L - 0.5) ** 2) - 0.6,
    "zero": lambda x, L: 0.0 * x,
}


def _convert(section: str, key: str, raw: str, kind):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw.strip())
    except ValueError:
        raise ConfigurationError(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}") from None


def parse_maps(text: str) -> list[list]:
    """``name:k=v, name:k=v; name:k=v`` -> list of compositions (``;`` separates terms)."""
    terms = []
    for term in text.split(";"):
        comp = []
        # items are "name:k=v" where further "k=v" pairs may follow after commas
        current = None
        for tok in filter(None, (s.strip() for s in term.split(","))):
            if ":" in tok:
                if current is not None:
                    comp.append(current)
                name, kv = tok.split(":", 1)
                current = [name.strip(), {}]
                tok = kv
            if current is None:
                raise ConfigurationError(f"[nonlocal] maps: {tok!r} has no map name")
            if tok.strip():
                if "=" not in tok:
                    raise ConfigurationError(f"[nonlocal] maps: expected key=value, got {tok!r}")
                k, v = tok.split("=", 1)
                try:
                    current[1][k.strip()] = float(v)
                except ValueError:
                    raise ConfigurationError(f"[nonlocal] maps: {k.strip()}={v!r} is not a number") from None
        if current is not None:
            comp.append(current)
        if comp:
            terms.append(comp)
    if not terms:
        raise ConfigurationError("[nonlocal] maps: empty catalogue")
    return terms


@dataclass
class RunConfig:
    """Parsed configuration; ``tables`` holds every value after defaults."""

    tables: dict
    source: str = ""
    hash: str = field(init=False)

    def __post_init__(self):
        canon = json.dumps(self.tables, sort_keys=True, separators=(",", ":"))
        self.hash = hashlib.sha256(canon.encode()).hexdigest()[:16]

    def __getitem__(self, section: str) -> dict:
        return self.tables[section]

    @property
    def params(self) -> StructureParams:
        s = self.tables["structure"]
        return StructureParams(s["delta"], s["q"], s["M"], s["T"], s["tau"])

    @property
    def seed(self) -> int:
        return int(self.tables["mc"]["seed"])

    @property
    def nt(self) -> int:
        nt = self.tables["grid"]["nt"]
        # derived default: two output slices per space cell
        return int(nt) if nt is not None else 2 * self.tables["grid"]["nx"]

    @property
    def solver_config(self) -> SolverConfig:
        return SolverConfig(nt=self.nt)

    def terminal(self) -> GridFunction:
        g = self.tables["grid"]
        e = self.tables["equation"]
        f = TERMINALS[e["terminal"]]
        amp = e["amplitude"]
        return GridFunction.from_function(lambda x: amp * f(x, g["L"]), g["nx"], g["L"])

    def probes(self) -> list[tuple[float, float]]:
        out = []
        for item in filter(None, (s.strip() for s in self.tables["mc"]["probes"].split(","))):
            try:
                x, t = item.split(":")
                out.append((float(x), float(t)))
            except ValueError:
                raise ConfigurationError(f"[mc] probes: bad point {item!r}") from None
        return out

    def levy(self) -> LevyIntegralSpec:
        lv = self.tables.get("levy") or {k: d for k, (_, d) in SCHEMA["levy"].items()}
        maps = parse_maps(self.tables.get("nonlocal", {}).get("maps", SCHEMA["nonlocal"]["maps"][1]))
        measure = LevyMeasureSpec(dim=lv["dim"], index=lv["s"], intensity=lv["c"])
        return LevyIntegralSpec(measure, [[make_jump_map(n, **kw) for n, kw in comp] for comp in maps])

    def equation(self, variant: str | None = None) -> EquationSpec:
        e = self.tables["equation"]
        variant = variant or e["variant"]
        pr = self.params
        if variant in ("lower", "upper"):
            return EquationSpec(variant, pr, label=variant)
        if variant == "local":
            dx = self.tables["grid"]["L"] / self.tables["grid"]["nx"]
            high = e["diffusion_high"] if e["diffusion_high"] is not None else 0.5 * pr.delta
            return EquationSpec("local", pr, diffusion=checkerboard(dx * e["diffusion_scale"], None, 0.0, high),
                                label=f"local-checker{e['diffusion_scale']}")
        return EquationSpec("nonlocal", pr, levy=self.levy(), label="nonlocal")

    def rough_family(self) -> list[EquationSpec]:
        """Five space-checkerboard local members and one nonlocal member."""
        pr = self.params
        dx = self.tables["grid"]["L"] / self.tables["grid"]["nx"]
        fam = [EquationSpec("local", pr, diffusion=checkerboard(dx * m, None, 0.0, 0.5 * pr.delta),
                            label=f"checker{m}") for m in (1, 2, 4, 8, 16)]
        fam.append(EquationSpec("nonlocal", pr, levy=self.levy(), label="nonlocal"))
        return fam


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    """Parse strict INI text; unknown sections or keys and missing tables are errors."""
    cp = configparser.ConfigParser(interpolation=None, strict=True, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    tables: dict[str, dict] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigurationError(f"{source}: unknown table [{section}]")
        schema = SCHEMA[section]
        values = {}
        for key, raw in cp.items(section):
            if key not in schema:
                raise ConfigurationError(f"{source}: unknown key {key!r} in [{section}]")
            values[key] = _convert(section, key, raw, schema[key][0])
        for key, (_, default) in schema.items():
            if key not in values:
                if default is _REQUIRED:
                    raise ConfigurationError(f"{source}: [{section}] is missing required key {key!r}")
                values[key] = default
        tables[section] = values
    for section in REQUIRED_SECTIONS:
        if section not in tables:
            raise ConfigurationError(f"{source}: missing table [{section}]")
    for section, schema in SCHEMA.items():
        if section not in tables:
            tables[section] = {k: d for k, (_, d) in schema.items()}
    _validate(tables, source)
    cfg = RunConfig(tables, source)
    if float(np.max(np.abs(cfg.terminal().values))) > cfg.params.sup_bound:
        raise ConfigurationError(f"{source}: terminal data exceed the sup bound M")
    return cfg


def _validate(tables: dict, source: str) -> None:
    s = tables["structure"]
    StructureParams(s["delta"], s["q"], s["M"], s["T"], s["tau"])
    e = tables["equation"]
    if e["variant"] not in VARIANTS:
        raise ConfigurationError(f"{source}: variant must be one of {VARIANTS}")
    if e["terminal"] not in TERMINALS:
        raise ConfigurationError(f"{source}: terminal must be one of {sorted(TERMINALS)}")
    if tables["grid"]["nx"] < 8:
        raise ConfigurationError(f"{source}: nx must be at least 8")
    if tables["mc"]["samples"] < 100:
        raise ConfigurationError(f"{source}: at least 100 Monte Carlo samples are required")
    parse_maps(tables["nonlocal"]["maps"])


def load_config(path: str | os.PathLike) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def output_dir(cfg: RunConfig, flag: str | None = None) -> Path:
    """``--out`` beats ``HJLAB_OUT`` beats ``[output] dir`` beats ``./runs/<hash>``."""
    if flag:
        return Path(flag)
    env = os.environ.get("HJLAB_OUT")
    if env:
        return Path(env)
    if cfg.tables["output"]["dir"]:
        return Path(cfg.tables["output"]["dir"])
    return Path("runs") / cfg.hash


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    """Write through a temporary file in the same directory and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    return obj


def write_json(path, data: dict) -> None:
    atomic_write_text(path, json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def write_csv(path, header: list[str], rows, config_hash: str) -> None:
    """CSV with a units header and a ``# config_hash=...`` comment line."""
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    buf.write(f"# config_hash={config_hash}\n")
    w = csv.writer(buf, lineterminator="\n")
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    atomic_write_text(path, buf.getvalue())


def read_csv(path) -> tuple[list[str], str, list[list[str]]]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    if not lines[1].startswith("# config_hash="):
        raise ConfigurationError(f"{path}: missing config hash line")
    rows = list(csv.reader(lines[2:]))
    return header, lines[1].split("=", 1)[1], rows
