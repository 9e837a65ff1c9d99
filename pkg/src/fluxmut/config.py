"""Run configuration: an INI file with five sections, flag overrides, and an env seed.

Precedence, highest first: explicit overrides (CLI flags), ``FLUXMUT_SEED``
(seed only), the config file, built-in defaults.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field

import numpy as np

from .cae import CaeConfig
from .errors import ConfigurationError
from .flow import FlowConfig
from .kde import BinGrid
from .pipeline import PipelineConfig

PROFILES = ("gluex", "lhc")
NORMALIZATIONS = ("standard", "hypersphere")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(" ", "").split(",") if v)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _edges(text: str) -> tuple[tuple[float, ...], ...]:
    """``0,0.5,1; 0,0.25,0.5,0.75,1``: one comma list per condition axis."""
    return tuple(_floats(part) for part in text.split(";") if part.strip())


def _optional(parse):
    def inner(text: str):
        return None if text.strip().lower() in ("", "none", "auto") else parse(text)
    return inner


def _fmt(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return "; ".join(", ".join(repr(v) for v in axis) for axis in value)
    if isinstance(value, tuple):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "cae": {
        "huber_delta": (float, 1.0),
        "latent_dim": (int, 6),
        "lr_cae": (float, 5e-4),
        "encoder_hidden": (_ints, (64, 32)),
        "decoder_hidden": (_ints, (32, 64)),
        "activation": (str, "leaky_relu"),
        "batch_size": (int, 512),
        "max_epochs": (int, 200),
        "patience": (int, 20),
        "val_fraction": (float, 0.1),
    },
    "cmaf": {
        "lr_cmaf": (float, 1e-4),
        "profile": (str, "gluex"),
        "bijections_gluex": (int, 12),
        "bijections_lhc": (int, 10),
        "bijections": (_optional(int), None),
        "hidden": (_ints, (128, 128)),
        "activation": (str, "tanh"),
        "batch_size": (int, 512),
        "max_epochs": (int, 200),
        "patience": (int, 20),
        "alpha_clamp": (float, 7.0),
        "init_scale": (float, 0.1),
        "val_fraction": (float, 0.1),
    },
    "kde": {
        "bin_edges": (_optional(_edges), None),
        "bin_widths": (_optional(_floats), None),
        "min_occupancy": (int, 50),
        "bandwidth_floor": (float, 1e-3),
        "variance_preserving": (_bool, True),
    },
    "cluster": {
        "min_cluster_size": (int, 1000),
        "min_samples": (int, 100),
        "normalization": (str, "standard"),
    },
    "pipeline": {
        "ref_cluster_size": (int, 1500),
        "q": (float, 0.95),
        "seed": (int, 0),
        "space": (str, "augmented"),
        "roc_sample_size": (int, 1000),
        "workers": (int, 1),
    },
}


@dataclass
class RunConfig:
    """Effective values for every key in :data:`SCHEMA`, plus where the seed came from."""

    values: dict[str, dict] = field(default_factory=lambda: {
        s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})
    seed_source: str = "default"

    def __getitem__(self, dotted: str):
        section, key = _split(dotted)
        return self.values[section][key]

    @property
    def seed(self) -> int:
        return self.values["pipeline"]["seed"]

    @property
    def q(self) -> float:
        return self.values["pipeline"]["q"]

    @property
    def bijections(self) -> int:
        c = self.values["cmaf"]
        return c["bijections"] if c["bijections"] is not None else c[f"bijections_{c['profile']}"]

    def baseline_values(self) -> dict[str, float]:
        """The nine baseline hyperparameters."""
        c, f = self.values["cae"], self.values["cmaf"]
        cl, p = self.values["cluster"], self.values["pipeline"]
        return {
            "huber_delta": c["huber_delta"], "latent_dim": c["latent_dim"], "lr_cae": c["lr_cae"],
            "lr_cmaf": f["lr_cmaf"], "bijections_gluex": f["bijections_gluex"],
            "bijections_lhc": f["bijections_lhc"], "min_cluster_size": cl["min_cluster_size"],
            "min_samples": cl["min_samples"], "ref_cluster_size": p["ref_cluster_size"],
        }

    def cae_config(self) -> CaeConfig:
        c = self.values["cae"]
        return CaeConfig(latent_dim=c["latent_dim"], encoder_hidden=c["encoder_hidden"],
                         decoder_hidden=c["decoder_hidden"], activation=c["activation"],
                         huber_delta=c["huber_delta"], lr=c["lr_cae"], batch_size=c["batch_size"],
                         max_epochs=c["max_epochs"], patience=c["patience"],
                         val_fraction=c["val_fraction"], seed=self.seed)

    def flow_config(self) -> FlowConfig:
        f = self.values["cmaf"]
        return FlowConfig(bijections=self.bijections, hidden=f["hidden"], activation=f["activation"],
                          lr=f["lr_cmaf"], batch_size=f["batch_size"], max_epochs=f["max_epochs"],
                          patience=f["patience"], alpha_clamp=f["alpha_clamp"], init_scale=f["init_scale"],
                          val_fraction=f["val_fraction"], seed=self.seed)

    def pipeline_config(self) -> PipelineConfig:
        cl, p = self.values["cluster"], self.values["pipeline"]
        return PipelineConfig(p["ref_cluster_size"], cl["min_cluster_size"], cl["min_samples"],
                              cl["normalization"], p["space"])

    def grid(self, conditions) -> BinGrid:
        """Explicit ``bin_edges`` win; else ``bin_widths`` over the data range; else one bin per axis."""
        k = self.values["kde"]
        conditions = np.atleast_2d(conditions)
        if k["bin_edges"] is not None:
            if len(k["bin_edges"]) != conditions.shape[1]:
                raise ConfigurationError(
                    f"bin_edges lists {len(k['bin_edges'])} axes but the data has {conditions.shape[1]} conditions")
            return BinGrid(list(k["bin_edges"]))
        widths = k["bin_widths"]
        if widths is None:
            widths = conditions.max(axis=0) - conditions.min(axis=0)
            widths = np.where(widths > 0, widths, 1.0)
        return BinGrid.from_widths(conditions, widths)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for section, keys in self.values.items():
            cp[section] = {k: _fmt(v) for k, v in keys.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue().strip()


def _split(dotted: str) -> tuple[str, str]:
    section, _, key = dotted.partition(".")
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigurationError(f"unknown config key {dotted!r}")
    return section, key


def _set(cfg: RunConfig, section: str, key: str, text: str, origin: str) -> None:
    parse = SCHEMA[section][key][0]
    try:
        cfg.values[section][key] = parse(text)
    except ValueError as exc:
        raise ConfigurationError(f"{origin}: bad value for {section}.{key}: {exc}") from None


def _validate(cfg: RunConfig) -> None:
    v = cfg.values
    if v["cmaf"]["profile"] not in PROFILES:
        raise ConfigurationError(f"cmaf.profile must be one of {PROFILES}")
    if v["cluster"]["normalization"] not in NORMALIZATIONS:
        raise ConfigurationError(f"cluster.normalization must be one of {NORMALIZATIONS}")
    if v["pipeline"]["space"] not in ("augmented", "features"):
        raise ConfigurationError("pipeline.space must be 'augmented' or 'features'")
    if not 0.0 < v["pipeline"]["q"] < 1.0:
        raise ConfigurationError("pipeline.q must lie in (0, 1)")
    for dotted in ("cae.latent_dim", "cluster.min_cluster_size", "cluster.min_samples",
                   "pipeline.ref_cluster_size", "kde.min_occupancy", "pipeline.workers"):
        if cfg[dotted] < 1:
            raise ConfigurationError(f"{dotted} must be positive")
    if cfg.bijections < 1:
        raise ConfigurationError("cmaf bijection count must be positive")


def load_config(path=None, overrides=(), env=None) -> RunConfig:
    """Build the effective configuration.

    ``overrides`` are ``section.key=value`` strings and win over everything.
    ``FLUXMUT_SEED`` in ``env`` replaces the file's seed.
    """
    env = os.environ if env is None else env
    cfg = RunConfig()
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
        for section in cp.sections():
            if section not in SCHEMA:
                raise ConfigurationError(f"{path}: unknown section [{section}]")
            for key, text in cp.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigurationError(f"{path}: unknown key {key!r} in [{section}]")
                _set(cfg, section, key, text, str(path))
                if (section, key) == ("pipeline", "seed"):
                    cfg.seed_source = "config"
    if env.get("FLUXMUT_SEED", "").strip():
        _set(cfg, "pipeline", "seed", env["FLUXMUT_SEED"], "FLUXMUT_SEED")
        cfg.seed_source = "env"
    for item in overrides:
        dotted, eq, text = item.partition("=")
        if not eq:
            raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
        section, key = _split(dotted.strip())
        _set(cfg, section, key, text, "override")
        if (section, key) == ("pipeline", "seed"):
            cfg.seed_source = "flag"
    _validate(cfg)
    return cfg
