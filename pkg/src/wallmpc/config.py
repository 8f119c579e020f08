"""JSON run configuration: packaged defaults plus user overrides.

A run config is a single JSON document mirroring the SimConfig fields;
every value has a default in ``configs/defaults.json`` shipped with the
package, so scenario files only carry the overriding keys. Validation
errors name the offending field.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .controller import MpcConfig, PidConfig
from .dynamics import VehicleParams
from .factors import NoiseParams
from .sim import SimConfig, TrajectorySpec, wall_plane
from .solver import LmOptions
from .suction import SuctionParams, default_rotor_offsets


class ConfigError(ValueError):
    """Invalid or missing configuration value; carries the field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


def load_defaults() -> dict:
    text = resources.files("wallmpc").joinpath("configs/defaults.json").read_text()
    return json.loads(text)


def deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("<file>", f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON in {path}: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError("<file>", "top-level config must be a JSON object")
    return deep_merge(load_defaults(), user)


def _positive(doc: dict, field: str):
    val = doc
    for part in field.split("."):
        if not isinstance(val, dict) or part not in val:
            raise ConfigError(field, "missing")
        val = val[part]
    if not isinstance(val, (int, float)) or not val > 0:
        raise ConfigError(field, f"must be a number > 0, got {val!r}")
    return float(val)


def _suction_from(doc: dict, field: str) -> SuctionParams:
    offsets = doc.get("rotor_offsets")
    if offsets is None:
        offsets = default_rotor_offsets()
    try:
        return SuctionParams(
            k_s=float(doc.get("k_s", 4.1)),
            d_thr=float(doc.get("d_thr", 0.132)),
            rotor_offsets=np.asarray(offsets, dtype=float),
            d_min=float(doc.get("d_min", 0.02)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(field, str(exc)) from None


def _mpc_from(doc: dict) -> MpcConfig:
    q = np.diag(
        [doc["q_pos"]] * 3 + [doc["q_rot"]] * 3 + [doc["q_vel"]] * 3
    ).astype(float)
    u_max = doc.get("u_max")
    return MpcConfig(
        horizon=int(doc["horizon"]),
        Q=q,
        Q_N=doc["terminal_scale"] * q,
        G=np.diag(np.asarray(doc["g_diag"], dtype=float)),
        Q_lim=float(doc["q_limit"]) * np.eye(4),
        u_min=np.asarray(doc["u_min"], dtype=float),
        u_max=None if u_max is None else np.asarray(u_max, dtype=float),
        lm=LmOptions(max_iter=int(doc.get("max_iter", 5))),
    )


def sim_config_from_dict(doc: dict) -> SimConfig:
    """Build and validate a SimConfig from a merged config document."""
    _positive(doc, "duration")
    _positive(doc, "sim_dt")
    _positive(doc, "ctrl_dt")
    _positive(doc, "vehicle.mass")

    controller = doc.get("controller")
    if controller not in ("pid", "mpc", "scmpc"):
        raise ConfigError("controller", f"must be pid|mpc|scmpc, got {controller!r}")

    try:
        vehicle = VehicleParams(
            mass=doc["vehicle"]["mass"],
            drag=np.asarray(doc["vehicle"]["drag"], dtype=float),
            gravity=doc["vehicle"]["gravity"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("vehicle", str(exc)) from None

    suction_true = _suction_from(doc.get("suction_true", {}), "suction_true")
    ctrl_doc = doc.get("suction_ctrl")
    suction_ctrl = None if ctrl_doc is None else _suction_from(ctrl_doc, "suction_ctrl")

    planes = []
    for i, wall in enumerate(doc.get("walls") or []):
        try:
            planes.append(wall_plane(wall["point"], wall["outward_normal"], i))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"walls[{i}]", str(exc)) from None

    traj_doc = dict(doc.get("trajectory", {}))
    kind = traj_doc.pop("kind", "hover")
    try:
        spec = TrajectorySpec(kind=kind, **{
            k: v for k, v in traj_doc.items()
            if k in ("center", "radius", "period", "plane", "start", "end",
                     "speed", "position")
        })
        spec.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError("trajectory", str(exc)) from None

    noise = doc.get("noise", {})
    for key in ("sigma_thrust", "sigma_omega", "sigma_accel"):
        val = noise.get(key, 0.0)
        if not isinstance(val, (int, float)) or val < 0:
            raise ConfigError(f"noise.{key}", f"must be a number >= 0, got {val!r}")

    try:
        mpc = _mpc_from(doc["mpc"])
        mpc.noise = NoiseParams(
            sigma_thrust=max(noise.get("sigma_thrust", 0.2), 1e-3),
            sigma_omega=max(noise.get("sigma_omega", 0.2), 1e-3),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("mpc", str(exc)) from None

    try:
        pid_doc = doc["pid"]
        pid = PidConfig(
            pos_kp=pid_doc["pos_kp"], pos_ki=pid_doc["pos_ki"],
            pos_kd=pid_doc["pos_kd"], vel_kp=pid_doc["vel_kp"],
            att_kp=pid_doc["att_kp"], integral_limit=pid_doc["integral_limit"],
            u_min=mpc.u_min, u_max=mpc.resolved_u_max(vehicle),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError("pid", str(exc)) from None

    cfg = SimConfig(
        vehicle=vehicle,
        suction_true=suction_true,
        suction_ctrl=suction_ctrl,
        planes=tuple(planes),
        controller=controller,
        trajectory=spec,
        sigma_thrust=float(noise.get("sigma_thrust", 0.2)),
        sigma_omega=float(noise.get("sigma_omega", 0.2)),
        sigma_accel=float(noise.get("sigma_accel", 0.0)),
        duration=float(doc["duration"]),
        sim_dt=float(doc["sim_dt"]),
        ctrl_dt=float(doc["ctrl_dt"]),
        rng_seed=int(doc.get("seed", 0)),
        warmup=float(doc.get("warmup", 0.0)),
        mpc=mpc,
        pid=pid,
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError("<run>", str(exc)) from None
    return cfg


def load_sim_config(path) -> tuple[SimConfig, dict]:
    doc = load_config_file(path)
    return sim_config_from_dict(doc), doc
