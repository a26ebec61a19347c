"""Configuration: defaults, environment overrides, file parsing and validation.

Config files are flat ``key = value`` lines with dotted sections, e.g.::

    n_fft = 1024
    csit.sigma_e2 = 0.05
    arrival.kind = deterministic
    arrival.unit = nats_per_slot
    arrival.mean = 1000

Lines are read with python-dotenv's stream parser so every binding keeps its
line number for error reporting.
"""

import dataclasses
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from dotenv.parser import parse_stream

from exceptions import ConfigError, ContractError
from models import ArrivalModel, CsitErrorModel, PhyParams, PolicyConfig, PowerDelayProfile

logger = logging.getLogger(__name__)

load_dotenv()

ARRIVAL_UNITS = ("nats_per_frame", "nats_per_slot", "nats_per_second")

# how a transmission is judged lost: the mutual-information check on the
# realized channel, or a Bernoulli draw at the target PER
OUTAGE_MODES = ("mutual_information", "target")

# total power of the uniform tap profile every config uses
PROFILE_POWER = 1.0


class Config:
    """Defaults: the operating point of the OFDM link studied here."""

    N_FFT = 1024
    BANDWIDTH_HZ = 10e6
    N_TAPS = 16
    DT_S = 0.005
    FRAME_S = 0.1
    TARGET_PER = 0.01
    SIGMA_E2 = 0.05
    P_CCT = 0.0
    ARRIVAL_KIND = "deterministic"
    ARRIVAL_UNIT = "nats_per_frame"
    ARRIVAL_MEAN = 20.0
    POLICY_KIND = "dbp"
    POLICY_V = 1.0
    RATE_MARGIN = 1.5
    L_DELTA_SCALE = 1.0
    N_SLOTS = 1_000_000
    SEED = 2024
    WARMUP_FRACTION = 0.1
    MIN_WARMUP_SLOTS = 1000
    OUTAGE = "mutual_information"
    EXPECTATION_SAMPLES = 100_000
    LOG_LEVEL = "INFO"


def env_overrides():
    """DBPSIM_* environment variables, read at call time."""
    overrides = {}
    mapping = {
        "DBPSIM_SLOTS": ("mc.n_slots", int),
        "DBPSIM_SEED": ("mc.seed", int),
        "DBPSIM_EXPECTATION_SAMPLES": ("mc.expectation_samples", int),
    }
    for env_key, (config_key, cast) in mapping.items():
        raw = os.getenv(env_key)
        if raw is None:
            continue
        try:
            overrides[config_key] = cast(raw)
        except ValueError:
            raise ConfigError(f"{env_key}: expected an integer, got {raw!r}")
    return overrides


def cache_dir_from_env():
    return os.getenv("DBPSIM_CACHE_DIR")


def log_level_from_env():
    return os.getenv("DBPSIM_LOG_LEVEL", Config.LOG_LEVEL)


@dataclass(frozen=True)
class CsitConfig:
    sigma_e2: Optional[float] = None
    pilot_snr: Optional[float] = None
    doppler_hz: Optional[float] = None
    duplex_delay_s: Optional[float] = None

    @property
    def from_pilot(self):
        return self.sigma_e2 is None


@dataclass(frozen=True)
class MonteCarloConfig:
    n_slots: int = Config.N_SLOTS
    seed: int = Config.SEED
    warmup_fraction: float = Config.WARMUP_FRACTION
    expectation_samples: int = Config.EXPECTATION_SAMPLES
    min_warmup_slots: int = Config.MIN_WARMUP_SLOTS
    outage: str = Config.OUTAGE

    def warmup_slots(self, n_slots=None):
        n = self.n_slots if n_slots is None else n_slots
        return max(self.min_warmup_slots, int(math.ceil(self.warmup_fraction * n)))


@dataclass(frozen=True)
class SystemConfig:
    n_fft: int
    bandwidth_hz: float
    n_taps: int
    dt_s: float
    frame_s: float
    target_per: float
    csit: CsitConfig
    p_cct: float
    arrival: ArrivalModel           # nats per frame
    arrival_unit: str
    policy: PolicyConfig
    mc: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    rate_margin: float = Config.RATE_MARGIN
    l_delta_scale: float = Config.L_DELTA_SCALE

    @property
    def slots_per_frame(self):
        return int(round(self.frame_s / self.dt_s))

    @property
    def arrival_rate(self):
        """B-bar in nats per second."""
        return self.arrival.mean_per_frame / self.frame_s

    @property
    def profile(self):
        return PowerDelayProfile.uniform(self.n_taps, PROFILE_POWER)

    @property
    def error_model(self):
        if not self.csit.from_pilot:
            return CsitErrorModel.uniform(self.csit.sigma_e2, self.n_taps)
        from channel import error_model_from_pilot

        return error_model_from_pilot(
            self.csit.pilot_snr, self.csit.doppler_hz, self.csit.duplex_delay_s, self.profile
        )

    @property
    def sigma_e2(self):
        return self.error_model.sigma_e2

    @property
    def phy_params(self):
        return PhyParams(
            n_fft=self.n_fft,
            target_per=self.target_per,
            sigma_e2=self.sigma_e2,
            circuit_power=self.p_cct,
            n_taps=self.n_taps,
        )

    def default_fixed_rate(self):
        return self.rate_margin * self.arrival_rate

    def with_policy(self, kind, value):
        """Same system under another policy; value is V or the fixed power."""
        if kind == "no-csit":
            fixed_rate = self.policy.fixed_rate if self.policy.kind == "no-csit" else None
            policy = PolicyConfig(
                "no-csit",
                fixed_rate=self.default_fixed_rate() if fixed_rate is None else fixed_rate,
                fixed_power=float(value),
            )
        else:
            policy = PolicyConfig(kind, tradeoff_v=float(value))
        return dataclasses.replace(self, policy=policy)

    def with_sigma_e2(self, sigma_e2):
        return dataclasses.replace(self, csit=CsitConfig(sigma_e2=float(sigma_e2)))

    def with_mc(self, **changes):
        return dataclasses.replace(self, mc=dataclasses.replace(self.mc, **changes))

    def to_dict(self):
        return dataclasses.asdict(self)

    @property
    def config_hash(self):
        payload = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# Every accepted key with its type; anything else is reported as unknown
_KEY_TYPES = {
    "n_fft": int,
    "bandwidth_hz": float,
    "n_taps": int,
    "dt_s": float,
    "frame_s": float,
    "target_per": float,
    "p_cct": float,
    "csit.sigma_e2": float,
    "csit.pilot_snr": float,
    "csit.doppler_hz": float,
    "csit.duplex_delay_s": float,
    "arrival.kind": str,
    "arrival.unit": str,
    "arrival.mean": float,
    "arrival.values": "floats",
    "arrival.probabilities": "floats",
    "arrival.max": float,
    "policy.kind": str,
    "policy.v": float,
    "policy.fixed_rate": float,
    "policy.fixed_power": float,
    "policy.rate_margin": float,
    "vcts.l_delta_scale": float,
    "mc.n_slots": int,
    "mc.seed": int,
    "mc.warmup_fraction": float,
    "mc.expectation_samples": int,
    "mc.outage": str,
}


def _convert(key, raw, problems):
    kind = _KEY_TYPES[key]
    try:
        if kind == "floats":
            return [float(part) for part in raw.split(",") if part.strip()]
        if kind is int:
            as_float = float(raw)
            if as_float != int(as_float):
                raise ValueError
            return int(as_float)
        if kind is float:
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError
            return value
        return raw.strip()
    except ValueError:
        expected = {int: "an integer", float: "a finite number", "floats": "a list of numbers"}[kind]
        problems.append(f"{key}: expected {expected}, got {raw!r}")
        return None


def parse_text(text):
    """Parse config text into a flat {key: typed value} mapping."""
    values = {}
    problems = []
    seen_lines = {}
    for binding in parse_stream(io.StringIO(text)):
        line = binding.original.line
        raw_line = binding.original.string
        if binding.error:
            column = len(raw_line) - len(raw_line.lstrip()) + 1
            problems.append(f"line {line}, column {column}: cannot parse {raw_line.strip()!r}")
            continue
        if binding.key is None:
            continue
        key = binding.key.strip()
        if binding.value is None:
            column = raw_line.find(key) + len(key) + 1
            problems.append(f"line {line}, column {column}: expected '=' after {key!r}")
            continue
        if key not in _KEY_TYPES:
            problems.append(f"line {line}, column 1: unknown key {key!r}")
            continue
        if key in seen_lines:
            problems.append(f"line {line}, column 1: {key!r} already set on line {seen_lines[key]}")
            continue
        seen_lines[key] = line
        converted = _convert(key, binding.value, problems)
        if converted is not None:
            values[key] = converted
    if problems:
        raise ConfigError(problems)
    return values


def _unit_factor(unit, slots_per_frame, frame_s):
    # multiply a quantity in `unit` by this to get nats per frame
    return {"nats_per_frame": 1.0, "nats_per_slot": float(slots_per_frame), "nats_per_second": frame_s}[unit]


def build_config(values):
    """Validate a flat mapping and build the SystemConfig, reporting every problem."""
    problems = []
    get = values.get

    n_fft = get("n_fft", Config.N_FFT)
    n_taps = get("n_taps", Config.N_TAPS)
    dt_s = get("dt_s", Config.DT_S)
    frame_s = get("frame_s", Config.FRAME_S)
    target_per = get("target_per", Config.TARGET_PER)
    bandwidth_hz = get("bandwidth_hz", Config.BANDWIDTH_HZ)
    p_cct = get("p_cct", Config.P_CCT)

    if n_fft < 1 or n_fft & (n_fft - 1):
        problems.append(f"n_fft: must be a power of two, got {n_fft}")
    if n_taps < 1:
        problems.append(f"n_taps: must be >= 1, got {n_taps}")
    elif n_fft >= 1 and n_fft % n_taps:
        problems.append(f"n_taps: must divide n_fft ({n_taps} does not divide {n_fft})")
    if not dt_s > 0:
        problems.append(f"dt_s: must be > 0, got {dt_s}")
    if not frame_s > 0:
        problems.append(f"frame_s: must be > 0, got {frame_s}")
    slots_per_frame = 1
    if dt_s > 0 and frame_s > 0:
        ratio = frame_s / dt_s
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio) or round(ratio) < 1:
            problems.append(f"frame_s: frame must be integer slots (frame_s/dt_s = {ratio:g})")
        else:
            slots_per_frame = int(round(ratio))
    if not 0.0 < target_per < 1.0:
        problems.append(f"target_per: must lie in (0,1), got {target_per}")
    if not bandwidth_hz > 0:
        problems.append(f"bandwidth_hz: must be > 0, got {bandwidth_hz}")
    if p_cct < 0:
        problems.append(f"p_cct: power must be >= 0, got {p_cct}")

    csit = _build_csit(values, problems)
    arrival, unit = _build_arrival(values, slots_per_frame, frame_s, problems)
    mc = _build_mc(values, problems)
    rate_margin = get("policy.rate_margin", Config.RATE_MARGIN)
    if not rate_margin > 0:
        problems.append(f"policy.rate_margin: must be > 0, got {rate_margin}")
    l_delta_scale = get("vcts.l_delta_scale", Config.L_DELTA_SCALE)
    if not l_delta_scale > 0:
        problems.append(f"vcts.l_delta_scale: must be > 0, got {l_delta_scale}")

    policy = None
    if arrival is not None:
        policy = _build_policy(values, arrival.mean_per_frame / frame_s * rate_margin, problems)

    if problems:
        raise ConfigError(problems)

    return SystemConfig(
        n_fft=n_fft,
        bandwidth_hz=bandwidth_hz,
        n_taps=n_taps,
        dt_s=dt_s,
        frame_s=frame_s,
        target_per=target_per,
        csit=csit,
        p_cct=p_cct,
        arrival=arrival,
        arrival_unit=unit,
        policy=policy,
        mc=mc,
        rate_margin=rate_margin,
        l_delta_scale=l_delta_scale,
    )


def _build_csit(values, problems):
    sigma_e2 = values.get("csit.sigma_e2")
    pilot_keys = ("csit.pilot_snr", "csit.doppler_hz", "csit.duplex_delay_s")
    given = [key for key in pilot_keys if key in values]
    if sigma_e2 is not None and given:
        problems.append("csit: give either csit.sigma_e2 or the pilot parameters, not both")
        return None
    if given:
        missing = [key for key in pilot_keys if key not in values]
        if missing:
            problems.append(f"csit: missing {', '.join(missing)}")
            return None
        if not values["csit.pilot_snr"] > 0:
            problems.append("csit.pilot_snr: must be > 0")
        if values["csit.doppler_hz"] < 0 or values["csit.duplex_delay_s"] < 0:
            problems.append("csit: doppler and duplex delay must be >= 0")
        return CsitConfig(
            pilot_snr=values["csit.pilot_snr"],
            doppler_hz=values["csit.doppler_hz"],
            duplex_delay_s=values["csit.duplex_delay_s"],
        )
    if sigma_e2 is None:
        sigma_e2 = Config.SIGMA_E2
    if not sigma_e2 > 0:
        problems.append(f"csit.sigma_e2: must be > 0, got {sigma_e2}")
    elif not sigma_e2 < PROFILE_POWER:
        problems.append(
            f"csit.sigma_e2: must be below the channel power {PROFILE_POWER:g}, got {sigma_e2}"
        )
    return CsitConfig(sigma_e2=sigma_e2)


def _build_arrival(values, slots_per_frame, frame_s, problems):
    kind = values.get("arrival.kind", Config.ARRIVAL_KIND)
    unit = values.get("arrival.unit", Config.ARRIVAL_UNIT)
    if unit not in ARRIVAL_UNITS:
        problems.append(f"arrival.unit: must be one of {', '.join(ARRIVAL_UNITS)}, got {unit!r}")
        return None, unit
    factor = _unit_factor(unit, slots_per_frame, frame_s)
    try:
        if kind == "deterministic":
            if "arrival.values" in values or "arrival.probabilities" in values:
                problems.append("arrival.values: only iid arrivals take a table")
            mean = values.get("arrival.mean", Config.ARRIVAL_MEAN)
            if mean < 0:
                problems.append(f"arrival.mean: must be >= 0, got {mean}")
                return None, unit
            return ArrivalModel.deterministic(mean * factor), unit
        if kind == "iid":
            table_values = values.get("arrival.values")
            probabilities = values.get("arrival.probabilities")
            if table_values is None or probabilities is None:
                problems.append("arrival: iid arrivals need arrival.values and arrival.probabilities")
                return None, unit
            model = ArrivalModel.table([v * factor for v in table_values], probabilities)
            if "arrival.max" in values and values["arrival.max"] * factor < model.max_per_frame:
                problems.append("arrival.max: smaller than the largest arrival value")
            if "arrival.mean" in values:
                declared = values["arrival.mean"] * factor
                if abs(declared - model.mean_per_frame) > 1e-9 * max(1.0, declared):
                    problems.append(
                        f"arrival.mean: {values['arrival.mean']} disagrees with the table mean"
                    )
            return model, unit
        problems.append(f"arrival.kind: must be deterministic or iid, got {kind!r}")
    except ContractError as exc:
        problems.append(f"arrival: {exc}")
    return None, unit


def _build_policy(values, default_fixed_rate, problems):
    kind = values.get("policy.kind", Config.POLICY_KIND)
    try:
        if kind == "no-csit":
            if "policy.fixed_power" not in values:
                problems.append("policy.fixed_power: required for no-csit")
                return None
            return PolicyConfig(
                "no-csit",
                fixed_rate=values.get("policy.fixed_rate", default_fixed_rate),
                fixed_power=values["policy.fixed_power"],
            )
        if kind in ("dbp", "csit-only"):
            v = values.get("policy.v", Config.POLICY_V)
            if not v > 0:
                problems.append(f"policy.v: must be > 0, got {v}")
                return None
            return PolicyConfig(kind, tradeoff_v=v)
        problems.append(f"policy.kind: must be one of dbp, csit-only, no-csit, got {kind!r}")
    except ContractError as exc:
        problems.append(f"policy: {exc}")
    return None


def _build_mc(values, problems):
    mc = MonteCarloConfig(
        n_slots=values.get("mc.n_slots", Config.N_SLOTS),
        seed=values.get("mc.seed", Config.SEED),
        warmup_fraction=values.get("mc.warmup_fraction", Config.WARMUP_FRACTION),
        expectation_samples=values.get("mc.expectation_samples", Config.EXPECTATION_SAMPLES),
        outage=values.get("mc.outage", Config.OUTAGE),
    )
    if not 0.0 <= mc.warmup_fraction < 1.0:
        problems.append(f"mc.warmup_fraction: must lie in [0,1), got {mc.warmup_fraction}")
    elif mc.n_slots <= mc.warmup_slots():
        problems.append(f"mc.n_slots: must exceed the {mc.warmup_slots()} warmup slots")
    if mc.seed < 0:
        problems.append("mc.seed: must be >= 0")
    if mc.expectation_samples < 10_000:
        problems.append("mc.expectation_samples: must be >= 10000")
    if mc.outage not in OUTAGE_MODES:
        problems.append(f"mc.outage: must be one of {', '.join(OUTAGE_MODES)}, got {mc.outage!r}")
    return mc


def _names_file(source):
    if isinstance(source, Path):
        return True
    if not isinstance(source, str) or "\n" in source:
        return False
    if "=" not in source:
        return True
    try:
        return Path(source).is_file()
    except OSError:
        return False


def parse_and_validate(source, *, apply_env=True):
    """Read a config file (path) or config text and return a validated SystemConfig.

    A one-line string names a file when that file exists or the string holds
    no binding; anything else is config text.
    """
    if _names_file(source):
        path = Path(source)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})")
    else:
        text = source
    values = parse_text(text)
    if apply_env:
        values.update(env_overrides())
    config = build_config(values)
    logger.debug(f"Loaded config {config.config_hash}")
    return config


def default_config():
    return build_config({})
