"""
Experiment configuration: YAML schema ``drivencce.experiment/1`` and presets.

Example::

    schema: drivencce.experiment/1
    kind: hahn_sweep
    isotope: N15
    concentrations: [5, 10, 20]
    master_seed: 2024
    n_s: 10
    bath: {n_bath: 12, n_mf_shell: 100}
    cce: {M: 2, K: 4, n_mf: 20, mode: internal}
    tau: {stop: 50.0, num: 120, reference_ppm: 20}
    protocols:
      - {name: free}
      - name: hybrid_lg
        tones:
          - {branch: off-, Omega: 7.0, delta: resonant}
          - {branch: off+, Omega: 7.0, delta: magic+}

``tau.stop`` (µs) applies at ``reference_ppm`` and scales as
``reference_ppm / ρ`` for other concentrations. A protocol may override it
with its own ``tau_stop``. Grids start at ``stop/num`` and are masked near
multiples of the effective Rabi period.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from .cce import CCEConfig
from .hamiltonian import DrivingProtocol, DrivingTone, ProtocolName
from .p1 import branch_table

SCHEMA_ID = "drivencce.experiment/1"
KINDS = ("hahn_sweep", "deer", "fit_only", "bootstrap")
DELTA_RULES = ("resonant", "magic+", "magic-")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" or "warning"
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.path}: {self.message}"


@dataclass
class ToneSpec:
    branch: str
    Omega: float = 7.0
    delta: str = "resonant"
    alpha: float = 0.0

    def tone(self) -> DrivingTone:
        d = {"resonant": 0.0, "magic+": 1.0, "magic-": -1.0}[self.delta] * self.Omega / math.sqrt(2)
        return DrivingTone(self.branch, self.Omega, d, self.alpha)


@dataclass
class ProtocolSpec:
    name: str
    label: str = ""
    tones: list = field(default_factory=list)
    tau_stop: float | None = None

    def build(self) -> DrivingProtocol:
        return DrivingProtocol(self.name, tuple(t.tone() for t in self.tones), self.label or self.name)


@dataclass
class TauSpec:
    stop: float = 50.0
    num: int = 121  # not 120: a round step would put 2τΩ̄ on integers for round Rabi frequencies
    reference_ppm: float = 20.0
    mask_threshold: float = 0.1

    def grid(self, concentration_ppm: float, stop: float | None = None) -> np.ndarray:
        s = (stop if stop is not None else self.stop) * self.reference_ppm / concentration_ppm
        return np.linspace(s / self.num, s, self.num)


@dataclass
class BathSpec:
    n_bath: int = 12
    n_mf_shell: int = 100


@dataclass
class FitSpec:
    method: str = "linear"
    fit_fraction: float = 0.6


@dataclass
class BootstrapSpec:
    sample_sizes: list = field(default_factory=lambda: [5, 10])
    n_resamples: int = 2000


@dataclass
class DeerSpec:
    concentration: float = 20.0
    n_bath: int = 8
    n_configs: int = 12
    linewidth: float = 2.0
    probe_min: float = -130.0
    probe_max: float = 130.0
    probe_step: float = 0.5


@dataclass
class ExperimentConfig:
    kind: str = "hahn_sweep"
    isotope: str = "N15"
    concentrations: list = field(default_factory=lambda: [20.0])
    protocols: list = field(default_factory=lambda: [ProtocolSpec("free")])
    cce: dict = field(default_factory=lambda: {"M": 2, "K": 4, "n_mf": 20, "mode": "internal"})
    bath: BathSpec = field(default_factory=BathSpec)
    tau: TauSpec = field(default_factory=TauSpec)
    fit: FitSpec = field(default_factory=FitSpec)
    bootstrap: BootstrapSpec = field(default_factory=BootstrapSpec)
    deer: DeerSpec = field(default_factory=DeerSpec)
    n_s: int = 10
    master_seed: int | None = None
    workers: int | None = None
    out: str = "results"
    schema: str = SCHEMA_ID

    def cce_config(self) -> CCEConfig:
        return CCEConfig(**self.cce)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Hash of everything that affects results (output dir and worker count excluded)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _tones(raw, path):
    out = []
    for k, t in enumerate(raw or []):
        p = f"{path}[{k}]"
        if not isinstance(t, dict) or "branch" not in t:
            raise ConfigError(p, "tone needs a 'branch'")
        unknown = set(t) - {"branch", "Omega", "delta", "alpha"}
        if unknown:
            raise ConfigError(p, f"unknown keys {sorted(unknown)}")
        if t.get("delta", "resonant") not in DELTA_RULES:
            raise ConfigError(f"{p}.delta", f"must be one of {DELTA_RULES}")
        out.append(ToneSpec(str(t["branch"]), float(t.get("Omega", 7.0)), t.get("delta", "resonant"),
                            float(t.get("alpha", 0.0))))
    return out


def _section(cls, raw, path):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a mapping")
    names = set(cls.__dataclass_fields__)
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(path, f"unknown keys {sorted(unknown)}")
    return cls(**raw)


def from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    raw = copy.deepcopy(raw)
    schema = raw.pop("schema", SCHEMA_ID)
    if schema != SCHEMA_ID:
        raise ConfigError("schema", f"unsupported schema {schema!r}; expected {SCHEMA_ID!r}")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError("<root>", f"unknown keys {sorted(unknown)}")
    if raw.get("master_seed") is None:
        raise ConfigError("master_seed", "a seed is required")
    kind = raw.get("kind", "hahn_sweep")
    if kind not in KINDS:
        raise ConfigError("kind", f"must be one of {KINDS}")
    protocols = []
    for k, p in enumerate(raw.get("protocols", [{"name": "free"}])):
        path = f"protocols[{k}]"
        if not isinstance(p, dict) or "name" not in p:
            raise ConfigError(path, "protocol needs a 'name'")
        try:
            ProtocolName(p["name"])
        except ValueError:
            raise ConfigError(f"{path}.name", f"unknown protocol {p['name']!r}") from None
        protocols.append(ProtocolSpec(p["name"], p.get("label", ""), _tones(p.get("tones"), f"{path}.tones"),
                                      p.get("tau_stop")))
    cce = {"M": 2, "K": 4, "n_mf": 20, "mode": "internal"}
    cce.update(raw.get("cce") or {})
    try:
        CCEConfig(**cce)
    except (TypeError, ValueError) as exc:
        raise ConfigError("cce", str(exc)) from None
    try:
        conc = [float(c) for c in raw.get("concentrations", [20.0])]
        cfg = ExperimentConfig(
            kind=kind,
            isotope=str(raw.get("isotope", "N15")),
            concentrations=conc,
            protocols=protocols,
            cce=cce,
            bath=_section(BathSpec, raw.get("bath"), "bath"),
            tau=_section(TauSpec, raw.get("tau"), "tau"),
            fit=_section(FitSpec, raw.get("fit"), "fit"),
            bootstrap=_section(BootstrapSpec, raw.get("bootstrap"), "bootstrap"),
            deer=_section(DeerSpec, raw.get("deer"), "deer"),
            n_s=int(raw.get("n_s", 10)),
            master_seed=int(raw["master_seed"]),
            workers=raw.get("workers"),
            out=str(raw.get("out", "results")),
        )
    except TypeError as exc:
        raise ConfigError("<root>", str(exc)) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"invalid YAML: {exc}") from None
    except OSError as exc:
        raise ConfigError(str(path), str(exc)) from None
    return from_dict(raw)


def validate(config: ExperimentConfig) -> list[Diagnostic]:
    """Consistency checks; problems are returned rather than raised."""
    diags = []
    try:
        branches = branch_table(config.isotope)
    except ValueError:
        return [Diagnostic("error", "isotope", f"unknown isotope {config.isotope!r}")]
    for c in config.concentrations:
        if not 0 < c <= 100:
            diags.append(Diagnostic("error", "concentrations", f"{c} ppm outside (0, 100]"))
    if config.n_s < 1:
        diags.append(Diagnostic("error", "n_s", "must be at least 1"))
    for k, spec in enumerate(config.protocols):
        for j, t in enumerate(spec.tones):
            if t.branch not in branches:
                diags.append(Diagnostic("error", f"protocols[{k}].tones[{j}].branch",
                                        f"branch {t.branch!r} does not exist for {config.isotope}"))
            if t.Omega < 0:
                diags.append(Diagnostic("error", f"protocols[{k}].tones[{j}].Omega", "must be non-negative"))
        try:
            proto = spec.build()
        except ValueError as exc:
            diags.append(Diagnostic("error", f"protocols[{k}]", str(exc)))
            continue
        for c in config.concentrations:
            if c <= 0:
                continue
            grid = config.tau.grid(c, spec.tau_stop)
            from .dynamics import tau_mask

            kept = tau_mask(grid, proto.effective_rabi, config.tau.mask_threshold)
            if kept.sum() < 5:
                diags.append(Diagnostic("error", "tau", f"{proto.label} at {c} ppm keeps {kept.sum()} points"))
            elif kept.mean() < 0.5:
                diags.append(Diagnostic("warning", "tau",
                                        f"{proto.label} at {c} ppm: mask removes {100 * (1 - kept.mean()):.0f}%"))
    try:
        cce = config.cce_config()
    except (TypeError, ValueError) as exc:
        diags.append(Diagnostic("error", "cce", str(exc)))
    else:
        spins = cce.K * cce.M
        dim = 2 ** (spins + 1)
        if dim > cce.max_cluster_dim:
            diags.append(Diagnostic("error", "cce", f"K·M = {spins} gives dimension {dim} "
                                                    f"> max_cluster_dim {cce.max_cluster_dim}"))
    if config.master_seed is None:
        diags.append(Diagnostic("error", "master_seed", "a seed is required"))
    if config.fit.method not in ("linear", "power", "exponential"):
        diags.append(Diagnostic("error", "fit.method", f"unknown method {config.fit.method!r}"))
    return diags


# --- presets ---------------------------------------------------------------------

def _tone(branch, delta="resonant", Omega=7.0):
    return {"branch": branch, "Omega": Omega, "delta": delta}


PROTOCOL_PRESETS = {
    "free": {"name": "free", "label": "free"},
    "resonant2": {"name": "resonant", "label": "resonant2", "tones": [_tone("off+"), _tone("off-")]},
    "hybrid_lg": {"name": "hybrid_lg", "label": "hybrid_lg",
                  "tones": [_tone("off-"), _tone("off+", "magic+")]},
    "resonant4": {"name": "resonant", "label": "resonant4",
                  "tones": [_tone("off+"), _tone("off-"), _tone("on+"), _tone("on-")]},
}


def _protocols(*names, Omega=7.0):
    out = copy.deepcopy([PROTOCOL_PRESETS[n] for n in names])
    for p in out:
        for t in p.get("tones", []):
            t["Omega"] = Omega
    return out


_DESK = {
    "isotope": "N15",
    "master_seed": 2024,
    "n_s": 10,
    "bath": {"n_bath": 12, "n_mf_shell": 100},
    "cce": {"M": 2, "K": 4, "n_mf": 20, "mode": "internal"},
    "tau": {"stop": 60.0, "num": 121, "reference_ppm": 20.0},
}

PRESETS = {
    "fig3-desk": {**_DESK, "kind": "hahn_sweep", "concentrations": [5, 10, 20],
                  "protocols": _protocols("free", "resonant2", "hybrid_lg")},
    "fig3-hpc": {**_DESK, "kind": "hahn_sweep", "concentrations": [1, 2, 5, 10, 20], "n_s": 50,
                 "bath": {"n_bath": 180, "n_mf_shell": 7000},
                 "cce": {"M": 2, "K": 4, "n_mf": 100, "mode": "internal"},
                 "bootstrap": {"sample_sizes": [10, 20, 30, 40, 50], "n_resamples": 20000},
                 "protocols": _protocols("free", "resonant2", "hybrid_lg", "resonant4")},
    "table-s2-desk": {**_DESK, "kind": "hahn_sweep", "concentrations": [20],
                      "protocols": _protocols("free", "hybrid_lg")},
    "lowpower-desk": {**_DESK, "kind": "hahn_sweep", "concentrations": [5, 10, 20],
                      "protocols": [{**p, "label": p["label"] + "_1MHz"}
                                    for p in _protocols("resonant2", "hybrid_lg", Omega=1.0)]
                      + _protocols("free")},
    "deer-n15": {"kind": "deer", "isotope": "N15", "master_seed": 7,
                 "deer": {"concentration": 20.0, "n_bath": 8, "n_configs": 12}},
    "deer-n14": {"kind": "deer", "isotope": "N14", "master_seed": 7,
                 "deer": {"concentration": 20.0, "n_bath": 8, "n_configs": 12}},
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError("--preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    raw = copy.deepcopy(PRESETS[name])
    raw.update(overrides)
    return from_dict(raw)
