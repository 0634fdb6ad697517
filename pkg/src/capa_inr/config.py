"""Run configuration: a flat INI file with fixed sections.

Every key is typed and has a default, except the two seeds, which must be
given explicitly.  Keys set to ``auto`` are derived from the others (the
stream count, the BS-side sample counts, the baseline truncation and
spacing).  :meth:`RunConfig.dump` writes the fully resolved configuration
plus a ``[derived]`` section; loading that dump resolves to the same text.
"""
from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .geometry import FREE_SPACE_IMPEDANCE, SPEED_OF_LIGHT, Aperture, PhysicalConfig, UserRegion, stream_count
from .inr import CARRIERS, MODEL_KINDS, NetworkConfig, SamplingConfig, SystemSetup, TrainConfig

AUTO = "auto"
REQUIRED = object()

SWEEP_AXES = ("power", "aperture_bs", "aperture_ue")
BASELINE_METHODS = ("wmmse", "fourier", "spda")
METHODS = BASELINE_METHODS + MODEL_KINDS

# section -> key -> (type, default); types: int, float, str, "auto_int",
# "auto_float", "floats", "strs"
SCHEMA: dict[str, dict[str, tuple]] = {
    "physics": {
        "freq_hz": (float, 300e6),
        "noise_sigma2": (float, 5.6e-3),
        "power_budget": (float, 1000.0),
        "num_streams": ("auto_int", AUTO),
        "impedance": (float, FREE_SPACE_IMPEDANCE),
    },
    "apertures": {
        "bs_len_x": (float, 2.0),
        "bs_len_y": (float, 2.0),
        "ue_len_x": (float, 0.5),
        "ue_len_y": (float, 0.5),
        "region_x": ("floats", (-5.0, 5.0)),
        "region_y": ("floats", (-5.0, 5.0)),
        "region_z": ("floats", (20.0, 30.0)),
    },
    "sampling": {
        "m_ug": (int, 6),
        "m_bg": ("auto_int", AUTO),
        "m_us": (int, 144),
        "m_bs": ("auto_int", AUTO),
        "sobol_seed": (int, REQUIRED),
    },
    "training": {
        "models": ("strs", MODEL_KINDS),
        "num_positions": (int, 2000),
        "batch_size": (int, 64),
        "epochs": (int, 50),
        "lr": (float, 1e-4),
        "lr_decay": (float, 1.0),
        "lambda_mix": (float, 0.1),
        "root_seed": (int, REQUIRED),
    },
    "network": {
        "hidden_width": (int, 256),
        "hidden_layers": (int, 4),
        "num_frequencies": (int, 6),
        "frequency_scale": (float, 1.0),
        "activation": (str, "relu"),
        "precision": (str, "float64"),
        "carrier": (str, "none"),
    },
    "network.beainr": {},
    "network.coefinr": {},
    "eval": {
        "positions": (int, 200),
        "position_tag": (str, "eval"),
        "m_ug": (int, 10),
        "m_bg": ("auto_int", AUTO),
        "wmmse_tol": (float, 1e-6),
        "wmmse_max_iter": (int, 200),
        "fourier_truncation": ("auto_int", AUTO),
        "spda_spacing": ("auto_float", AUTO),
        "sweep_axis": (str, "power"),
        "sweep_values": ("floats", (100.0, 300.0, 1000.0, 3000.0)),
        "sweep_methods": ("strs", METHODS),
        "bench_repeats": (int, 5),
    },
    "output": {
        "dir": (str, "capa_out"),
        "deterministic": (bool, False),
    },
}

INHERIT = object()
for _kind in MODEL_KINDS:
    SCHEMA[f"network.{_kind}"] = {k: (t, INHERIT) for k, (t, _) in SCHEMA["network"].items()}

DERIVED_KEYS = ("wavelength", "num_streams", "m_bg", "m_bs", "eval_m_bg", "fourier_truncation", "spda_spacing")


def _parse(kind, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind in ("auto_int", "auto_float"):
            if raw.lower() == AUTO:
                return AUTO
            return int(raw) if kind == "auto_int" else float(raw)
        if kind == "floats":
            return tuple(float(v) for v in raw.replace(",", " ").split())
        if kind == "strs":
            return tuple(v for v in raw.replace(",", " ").split())
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration; ``values[section][key]`` holds typed values
    (``"auto"`` kept as given, resolved through the properties below)."""

    values: dict

    # --- construction ----------------------------------------------------------

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        values: dict = {}
        for section in parser.sections():
            if section == "derived":
                continue  # recomputed on every load
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            for key in parser[section]:
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}]")
        for section, keys in SCHEMA.items():
            values[section] = {}
            for key, (kind, default) in keys.items():
                if parser.has_option(section, key):
                    values[section][key] = _parse(kind, parser[section][key], f"[{section}] {key}")
                elif default is REQUIRED:
                    raise ConfigError(f"missing required key {key!r} in [{section}]")
                else:
                    values[section][key] = default
        cfg = cls(values)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text)

    def replace(self, section: str, key: str, value) -> "RunConfig":
        if key not in SCHEMA.get(section, {}):
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        values = {s: dict(kv) for s, kv in self.values.items()}
        values[section][key] = value
        cfg = RunConfig(values)
        cfg.validate()
        return cfg

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    # --- validation --------------------------------------------------------------

    def validate(self) -> None:
        v = self.values
        positive = [("physics", "freq_hz"), ("physics", "noise_sigma2"), ("physics", "power_budget"),
                    ("physics", "impedance"), ("apertures", "bs_len_x"), ("apertures", "bs_len_y"),
                    ("apertures", "ue_len_x"), ("apertures", "ue_len_y"), ("sampling", "m_ug"),
                    ("sampling", "m_us"), ("training", "batch_size"), ("training", "lr"),
                    ("training", "lr_decay"), ("eval", "m_ug"),
                    ("eval", "wmmse_tol"), ("eval", "wmmse_max_iter"), ("eval", "bench_repeats")]
        for section, key in positive:
            value = v[section][key]
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"[{section}] {key} must be positive, got {value}")
        for section, key in [("training", "num_positions"), ("training", "epochs"), ("eval", "positions")]:
            if v[section][key] < 0:
                raise ConfigError(f"[{section}] {key} must be >= 0")
        if not (math.isfinite(v["training"]["lambda_mix"]) and v["training"]["lambda_mix"] >= 0):
            raise ConfigError("[training] lambda_mix must be finite and >= 0")
        for section, key in [("physics", "num_streams"), ("sampling", "m_bg"), ("sampling", "m_bs"),
                             ("eval", "m_bg"), ("eval", "fourier_truncation"), ("eval", "spda_spacing")]:
            value = v[section][key]
            if value != AUTO and not value > 0 and not (key == "fourier_truncation" and value == 0):
                raise ConfigError(f"[{section}] {key} must be positive or auto")
        for key in ("region_x", "region_y", "region_z"):
            lo_hi = v["apertures"][key]
            if len(lo_hi) != 2 or not lo_hi[0] <= lo_hi[1]:
                raise ConfigError(f"[apertures] {key} must be 'low, high'")
        if v["apertures"]["region_z"][0] <= 0:
            raise ConfigError("[apertures] region_z must lie in front of the BS (z > 0)")
        try:
            self.num_streams
        except ValueError as exc:
            raise ConfigError(f"[physics] num_streams: {exc}") from None
        for model in v["training"]["models"]:
            if model not in MODEL_KINDS:
                raise ConfigError(f"[training] models: unknown model {model!r}")
        for kind in MODEL_KINDS:
            n = self.network_values(kind)
            where = f"[network.{kind}]"
            if not n["hidden_width"] > 0 or n["hidden_layers"] < 0 or n["num_frequencies"] < 0:
                raise ConfigError(f"{where}: network sizes must be non-negative (width positive)")
            if not (math.isfinite(n["frequency_scale"]) and n["frequency_scale"] > 0):
                raise ConfigError(f"{where}: frequency_scale must be positive")
            if n["activation"] not in ("relu", "tanh", "softplus"):
                raise ConfigError(f"{where}: unknown activation {n['activation']!r}")
            if n["carrier"] not in CARRIERS:
                raise ConfigError(f"{where}: carrier must be one of {CARRIERS}")
            if n["carrier"] != "none" and kind != "beainr":
                raise ConfigError(f"{where}: a carrier applies to BeaINR only")
            if n["precision"] not in ("float64", "float32"):
                raise ConfigError(f"{where}: precision must be float64 or float32")
        if v["eval"]["sweep_axis"] not in SWEEP_AXES:
            raise ConfigError(f"[eval] sweep_axis must be one of {SWEEP_AXES}")
        for method in v["eval"]["sweep_methods"]:
            if method not in METHODS:
                raise ConfigError(f"[eval] sweep_methods: unknown method {method!r}")
        if not all(math.isfinite(x) and x > 0 for x in v["eval"]["sweep_values"]):
            raise ConfigError("[eval] sweep_values must be positive")

    # --- derived quantities ----------------------------------------------------------

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self["physics"]["freq_hz"]

    @property
    def bs(self) -> Aperture:
        a = self["apertures"]
        return Aperture((0.0, 0.0, 0.0), a["bs_len_x"], a["bs_len_y"])

    @property
    def ue(self) -> Aperture:
        a = self["apertures"]
        return Aperture((0.0, 0.0, 0.0), a["ue_len_x"], a["ue_len_y"])

    @property
    def num_streams(self) -> int:
        n = self["physics"]["num_streams"]
        return stream_count(self.bs, self.ue, self.wavelength, None if n == AUTO else n)[2]

    def _bs_order(self, ue_order: int) -> int:
        # consistent sampling density on both apertures
        return max(1, round(self["apertures"]["bs_len_x"] / self["apertures"]["ue_len_x"] * ue_order))

    @property
    def m_bg(self) -> int:
        m = self["sampling"]["m_bg"]
        return self._bs_order(self["sampling"]["m_ug"]) if m == AUTO else m

    @property
    def m_bs(self) -> int:
        m = self["sampling"]["m_bs"]
        if m != AUTO:
            return m
        a = self["apertures"]
        return max(1, round(a["bs_len_x"] ** 2 / a["ue_len_x"] ** 2 * self["sampling"]["m_us"]))

    @property
    def eval_m_bg(self) -> int:
        m = self["eval"]["m_bg"]
        return self._bs_order(self["eval"]["m_ug"]) if m == AUTO else m

    @property
    def fourier_truncation(self) -> int:
        t = self["eval"]["fourier_truncation"]
        return math.ceil(self["apertures"]["bs_len_x"] / self.wavelength - 1e-12) if t == AUTO else t

    @property
    def spda_spacing(self) -> float:
        s = self["eval"]["spda_spacing"]
        return self.wavelength / 2 if s == AUTO else s

    @property
    def root_seed(self) -> int:
        return self["training"]["root_seed"]

    @property
    def out_dir(self) -> Path:
        return Path(self["output"]["dir"])

    @property
    def deterministic(self) -> bool:
        return self["output"]["deterministic"]

    def derived(self) -> dict:
        return {"wavelength": self.wavelength, "num_streams": self.num_streams, "m_bg": self.m_bg,
                "m_bs": self.m_bs, "eval_m_bg": self.eval_m_bg, "fourier_truncation": self.fourier_truncation,
                "spda_spacing": self.spda_spacing}

    # --- typed views -------------------------------------------------------------------

    def phys(self) -> PhysicalConfig:
        p = self["physics"]
        return PhysicalConfig(p["freq_hz"], p["noise_sigma2"], p["power_budget"], self.num_streams,
                              impedance_eta=p["impedance"])

    def setup(self) -> SystemSetup:
        a = self["apertures"]
        region = UserRegion(tuple(a["region_x"]), tuple(a["region_y"]), tuple(a["region_z"]))
        return SystemSetup(self.phys(), self.bs, self.ue, region)

    def sampling(self) -> SamplingConfig:
        s = self["sampling"]
        return SamplingConfig(s["m_ug"], self.m_bg, s["m_us"], self.m_bs, s["sobol_seed"])

    def network_values(self, kind: str | None = None) -> dict:
        """``[network]`` merged with the per-model override section."""
        merged = dict(self["network"])
        if kind is not None:
            merged.update({k: v for k, v in self[f"network.{kind}"].items() if v is not INHERIT})
        return merged

    def network(self, kind: str | None = None) -> NetworkConfig:
        n = self.network_values(kind)
        return NetworkConfig(n["hidden_width"], n["hidden_layers"], n["num_frequencies"], n["frequency_scale"],
                             n["activation"], n["carrier"])

    def train_config(self) -> TrainConfig:
        t, e = self["training"], self["eval"]
        return TrainConfig(num_positions=t["num_positions"], batch_size=t["batch_size"], epochs=t["epochs"],
                           lr=t["lr"], lr_decay=t["lr_decay"], lambda_mix=t["lambda_mix"],
                           root_seed=t["root_seed"], eval_positions=e["positions"], eval_m_ug=e["m_ug"],
                           eval_m_bg=self.eval_m_bg)

    # --- echo ----------------------------------------------------------------------------

    def dump(self) -> str:
        """Resolved configuration text; ``auto`` entries are replaced by
        their values and a ``[derived]`` section is appended."""
        resolved = {
            ("physics", "num_streams"): self.num_streams,
            ("sampling", "m_bg"): self.m_bg,
            ("sampling", "m_bs"): self.m_bs,
            ("eval", "m_bg"): self.eval_m_bg,
            ("eval", "fourier_truncation"): self.fourier_truncation,
            ("eval", "spda_spacing"): self.spda_spacing,
        }
        buf = io.StringIO()
        for section, keys in SCHEMA.items():
            buf.write(f"[{section}]\n")
            merged = self.network_values(section.split(".", 1)[1]) if section.startswith("network.") else None
            for key in keys:
                if merged is not None:
                    value = merged[key]
                else:
                    value = resolved.get((section, key), self.values[section][key])
                buf.write(f"{key} = {_format(value)}\n")
            buf.write("\n")
        buf.write("[derived]\n")
        for key, value in self.derived().items():
            buf.write(f"{key} = {_format(value)}\n")
        return buf.getvalue()

