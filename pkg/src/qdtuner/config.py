"""JSON device/scenario configs and deterministic CSV/JSON writers.

Config files are strict: unknown keys are rejected so typos fail loudly.
All writers use fixed float formatting and LF line endings so repeated runs
produce byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import control, spectral
from .control import Crosstalk, PowerMap, TuningSolution
from .device import (
    DeviceLayout,
    HeatingPad,
    MaterialModel,
    Membrane,
    spread_bridges,
    validate_layout,
)
from .spectral import CavityState, QDState, Spectrum
from .thermal import SolveReport, TemperatureField


class ConfigError(ValueError):
    """A config file is malformed or violates its schema."""


def _check_keys(obj: dict, allowed: set[str], required: set[str], ctx: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{ctx}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{ctx}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{ctx}: missing keys {sorted(missing)}")


def _number(obj: dict, key: str, ctx: str, default: float | None = None) -> float:
    if key not in obj:
        if default is None:
            raise ConfigError(f"{ctx}: missing {key}")
        return default
    v = obj[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool):
        raise ConfigError(f"{ctx}: {key} must be a number")
    return float(v)


def _load_json(path: Path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: malformed JSON ({e})") from e


def _check_id(value, ctx: str) -> str:
    # ids end up as CSV fields and JSON keys
    if not isinstance(value, str) or not value or any(c in value for c in ",\n\r"):
        raise ConfigError(f"{ctx}: id must be a non-empty string without commas")
    return value


@dataclass(frozen=True)
class Device:
    """A layout plus the optical states living on it."""

    layout: DeviceLayout
    qd_states: tuple[QDState, ...]
    cavity: CavityState | None

    def qd(self, qd_id: str) -> QDState:
        for qd in self.qd_states:
            if qd.qd_id == qd_id:
                return qd
        raise ConfigError(f"unknown QD id {qd_id!r}")


def load_device(path: str | Path) -> Device:
    """Parse a device description file."""
    path = Path(path)
    raw = _load_json(path)
    ctx = str(path)
    _check_keys(
        raw,
        {"membrane", "bridges", "pad", "material", "cavity", "qds"},
        {"membrane", "bridges", "pad", "material"},
        ctx,
    )

    m = raw["membrane"]
    _check_keys(m, {"length_um", "width_um", "thickness_nm"}, {"length_um", "width_um", "thickness_nm"}, f"{ctx}: membrane")
    membrane = Membrane(
        length_um=_number(m, "length_um", ctx),
        width_um=_number(m, "width_um", ctx),
        thickness_nm=_number(m, "thickness_nm", ctx),
    )

    b = raw["bridges"]
    _check_keys(b, {"count", "width_nm", "length_um"}, {"count", "width_nm", "length_um"}, f"{ctx}: bridges")
    count = b["count"]
    if not isinstance(count, int) or isinstance(count, bool):
        raise ConfigError(f"{ctx}: bridges.count must be an integer")
    bridges = spread_bridges(
        count, _number(b, "width_nm", ctx), _number(b, "length_um", ctx), membrane
    )

    p = raw["pad"]
    _check_keys(
        p,
        {"x_um", "y_um", "w_um", "h_um", "profile", "sigma_um"},
        {"x_um", "y_um", "w_um", "h_um", "profile"},
        f"{ctx}: pad",
    )
    if p["profile"] not in ("uniform", "gaussian"):
        raise ConfigError(f"{ctx}: pad.profile must be 'uniform' or 'gaussian'")
    pad = HeatingPad(
        x_um=_number(p, "x_um", ctx),
        y_um=_number(p, "y_um", ctx),
        w_um=_number(p, "w_um", ctx),
        h_um=_number(p, "h_um", ctx),
        profile=p["profile"],
        sigma_um=_number(p, "sigma_um", ctx, default=1.0),
    )

    mt = raw["material"]
    _check_keys(
        mt,
        {"kappa_ref", "t_ref", "exponent", "body_scale"},
        {"kappa_ref", "t_ref", "exponent"},
        f"{ctx}: material",
    )
    material = MaterialModel(
        kappa_ref_w_per_k_cm=_number(mt, "kappa_ref", ctx),
        t_ref_k=_number(mt, "t_ref", ctx),
        exponent=_number(mt, "exponent", ctx),
    )
    body_scale = _number(mt, "body_scale", ctx, default=1.0)

    cavity = None
    cavity_xy = None
    c = raw.get("cavity")
    if c is not None:
        _check_keys(
            c,
            {"x_um", "y_um", "lambda0_nm", "q0", "shift_ratio", "q_slope"},
            {"x_um", "y_um", "lambda0_nm"},
            f"{ctx}: cavity",
        )
        cavity_xy = (_number(c, "x_um", ctx), _number(c, "y_um", ctx))
        cavity = CavityState(
            lambda0_nm=_number(c, "lambda0_nm", ctx),
            q0=_number(c, "q0", ctx, default=spectral.DEFAULT_Q0),
            shift_ratio=_number(c, "shift_ratio", ctx, default=spectral.DEFAULT_SHIFT_RATIO),
            q_slope_per_k2=_number(c, "q_slope", ctx, default=spectral.DEFAULT_Q_SLOPE_PER_K2),
        )

    qd_states: list[QDState] = []
    qd_positions: list[tuple[str, tuple[float, float]]] = []
    for k, q in enumerate(raw.get("qds") or []):
        qctx = f"{ctx}: qds[{k}]"
        _check_keys(
            q,
            {
                "id",
                "x_um",
                "y_um",
                "lambda0_nm",
                "fwhm0_nm",
                "alpha_nm_per_k2",
                "fwhm_slope",
                "base_intensity",
                "rolloff_shift_nm",
                "max_shift_nm",
            },
            {"id", "x_um", "y_um", "lambda0_nm"},
            qctx,
        )
        _check_id(q.get("id"), qctx)
        qd_states.append(
            QDState(
                qd_id=q["id"],
                lambda0_nm=_number(q, "lambda0_nm", qctx),
                fwhm0_nm=_number(q, "fwhm0_nm", qctx, default=spectral.DEFAULT_FWHM0_NM),
                alpha_nm_per_k2=_number(
                    q, "alpha_nm_per_k2", qctx, default=spectral.DEFAULT_ALPHA_NM_PER_K2
                ),
                fwhm_slope=_number(q, "fwhm_slope", qctx, default=spectral.DEFAULT_FWHM_SLOPE),
                base_intensity=_number(q, "base_intensity", qctx, default=1.0),
                rolloff_shift_nm=_number(
                    q, "rolloff_shift_nm", qctx, default=spectral.DEFAULT_ROLLOFF_SHIFT_NM
                ),
                max_shift_nm=_number(q, "max_shift_nm", qctx, default=spectral.DEFAULT_MAX_SHIFT_NM),
            )
        )
        qd_positions.append((q["id"], (_number(q, "x_um", qctx), _number(q, "y_um", qctx))))
    ids = [qd.qd_id for qd in qd_states]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"{ctx}: duplicate QD ids")

    layout = DeviceLayout(
        membrane=membrane,
        bridges=bridges,
        pad=pad,
        material=material,
        cavity_xy_um=cavity_xy,
        qds=tuple(qd_positions),
        body_kappa_scale=body_scale,
    )
    try:
        validate_layout(layout)
    except ValueError as e:
        raise ConfigError(f"{ctx}: {e}") from e
    return Device(layout=layout, qd_states=tuple(qd_states), cavity=cavity)


@dataclass(frozen=True)
class SpectrumParams:
    window_nm: tuple[float, float] = (925.0, 935.0)
    samples: int = 1200
    f0: float = spectral.DEFAULT_PURCELL_F0
    cavity_height: float = 0.2
    baseline: float = 0.0


@dataclass(frozen=True)
class SweepParams:
    power_min_mw: float = 0.0
    power_max_mw: float = 3.0
    steps: int = 61


@dataclass(frozen=True)
class ThermalParams:
    power_abs_mw: float = 0.0
    dx_um: float = 0.05
    tol: float = 1e-6
    max_iter: int = 200


@dataclass(frozen=True)
class TuneParams:
    target: str = "qd-to-cavity"   # or "qd-to-qd"
    qd_ids: tuple[str, ...] = ()
    tol_nm: float = 1e-6
    min_q: float | None = None     # optional cavity-quality feasibility floor


@dataclass(frozen=True)
class StructureConfig:
    structure_id: str
    device: Device
    power_map: PowerMap


@dataclass(frozen=True)
class Scenario:
    """One runnable setup: structures, bath, calibration and command defaults."""

    bath_k: float
    structures: tuple[StructureConfig, ...]
    crosstalk: Crosstalk | None
    spectrum: SpectrumParams
    sweep: SweepParams | None
    thermal: ThermalParams | None
    tune: TuneParams | None

    @property
    def main(self) -> StructureConfig:
        return self.structures[0]


def _parse_calibration(raw: dict | None, bath_k: float, structure_id: str, alpha: float, ctx: str) -> PowerMap:
    if raw is None:
        raw = {}
    _check_keys(
        raw,
        {"beta_k2_per_mw", "anchor_shift_nm", "anchor_power_mw", "alpha_nm_per_k2", "p_max_mw"},
        set(),
        ctx,
    )
    has_beta = "beta_k2_per_mw" in raw
    has_anchor = "anchor_shift_nm" in raw or "anchor_power_mw" in raw
    if has_beta and has_anchor:
        raise ConfigError(f"{ctx}: give either beta_k2_per_mw or the anchor pair, not both")
    alpha = _number(raw, "alpha_nm_per_k2", ctx, default=alpha)
    if has_beta:
        beta = _number(raw, "beta_k2_per_mw", ctx)
    else:
        shift = _number(raw, "anchor_shift_nm", ctx, default=control.SHIFT_ANCHOR_NM)
        power = _number(raw, "anchor_power_mw", ctx, default=control.POWER_ANCHOR_MW)
        beta = control.calibrate_beta(shift, power, alpha)
    p_max = _number(raw, "p_max_mw", ctx, default=control.DEFAULT_P_MAX_MW)
    try:
        return PowerMap(structure_id, bath_k, beta, p_max)
    except ValueError as e:
        raise ConfigError(f"{ctx}: {e}") from e


def _structure_alpha(device: Device) -> float:
    return device.qd_states[0].alpha_nm_per_k2 if device.qd_states else spectral.DEFAULT_ALPHA_NM_PER_K2


def load_scenario(path: str | Path) -> Scenario:
    """Parse a scenario file; device paths resolve relative to the scenario."""
    path = Path(path)
    raw = _load_json(path)
    ctx = str(path)
    _check_keys(
        raw,
        {
            "device",
            "structures",
            "bath_k",
            "calibration",
            "crosstalk_k2_per_mw",
            "spectrum",
            "sweep",
            "thermal",
            "tune",
        },
        set(),
        ctx,
    )
    if ("device" in raw) == ("structures" in raw):
        raise ConfigError(f"{ctx}: give exactly one of 'device' or 'structures'")
    bath_k = _number(raw, "bath_k", ctx, default=10.0)

    structures: list[StructureConfig] = []
    if "device" in raw:
        device = load_device(path.parent / raw["device"])
        pm = _parse_calibration(
            raw.get("calibration"), bath_k, "main", _structure_alpha(device), f"{ctx}: calibration"
        )
        structures.append(StructureConfig("main", device, pm))
    else:
        if not isinstance(raw["structures"], list) or not raw["structures"]:
            raise ConfigError(f"{ctx}: structures must be a non-empty list")
        for k, s in enumerate(raw["structures"]):
            sctx = f"{ctx}: structures[{k}]"
            _check_keys(s, {"id", "device", "calibration"}, {"id", "device"}, sctx)
            _check_id(s.get("id"), sctx)
            device = load_device(path.parent / s["device"])
            pm = _parse_calibration(
                s.get("calibration"), bath_k, s["id"], _structure_alpha(device), f"{sctx}: calibration"
            )
            structures.append(StructureConfig(s["id"], device, pm))
        ids = [s.structure_id for s in structures]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"{ctx}: duplicate structure ids")

    crosstalk = None
    if raw.get("crosstalk_k2_per_mw") is not None:
        m = np.asarray(raw["crosstalk_k2_per_mw"], dtype=float)
        try:
            crosstalk = Crosstalk(
                tuple(s.structure_id for s in structures), m
            ).validate([s.power_map for s in structures])
        except ValueError as e:
            raise ConfigError(f"{ctx}: crosstalk: {e}") from e

    sp = raw.get("spectrum") or {}
    _check_keys(
        sp,
        {"window_nm", "samples", "f0", "cavity_height", "baseline"},
        set(),
        f"{ctx}: spectrum",
    )
    window = sp.get("window_nm", list(SpectrumParams().window_nm))
    if (
        not isinstance(window, list)
        or len(window) != 2
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in window)
        or not window[0] < window[1]
    ):
        raise ConfigError(f"{ctx}: spectrum.window_nm must be [lo, hi] with lo < hi")
    samples = sp.get("samples", SpectrumParams().samples)
    if not isinstance(samples, int) or isinstance(samples, bool) or samples < 2:
        raise ConfigError(f"{ctx}: spectrum.samples must be an integer >= 2")
    spectrum = SpectrumParams(
        window_nm=(float(window[0]), float(window[1])),
        samples=samples,
        f0=_number(sp, "f0", ctx, default=SpectrumParams().f0),
        cavity_height=_number(sp, "cavity_height", ctx, default=SpectrumParams().cavity_height),
        baseline=_number(sp, "baseline", ctx, default=SpectrumParams().baseline),
    )

    sweep = None
    if raw.get("sweep") is not None:
        sw = raw["sweep"]
        _check_keys(sw, {"power_min_mw", "power_max_mw", "steps"}, set(), f"{ctx}: sweep")
        steps = sw.get("steps", SweepParams().steps)
        if not isinstance(steps, int) or isinstance(steps, bool) or steps < 2:
            raise ConfigError(f"{ctx}: sweep.steps must be an integer >= 2")
        sweep = SweepParams(
            power_min_mw=_number(sw, "power_min_mw", ctx, default=SweepParams().power_min_mw),
            power_max_mw=_number(sw, "power_max_mw", ctx, default=SweepParams().power_max_mw),
            steps=steps,
        )
        if sweep.power_min_mw > sweep.power_max_mw:
            raise ConfigError(f"{ctx}: sweep needs power_min_mw <= power_max_mw")

    thermal_params = None
    if raw.get("thermal") is not None:
        th = raw["thermal"]
        _check_keys(th, {"power_abs_mw", "dx_um", "tol", "max_iter"}, set(), f"{ctx}: thermal")
        max_iter = th.get("max_iter", ThermalParams().max_iter)
        if not isinstance(max_iter, int) or isinstance(max_iter, bool) or max_iter < 1:
            raise ConfigError(f"{ctx}: thermal.max_iter must be a positive integer")
        thermal_params = ThermalParams(
            power_abs_mw=_number(th, "power_abs_mw", ctx, default=0.0),
            dx_um=_number(th, "dx_um", ctx, default=ThermalParams().dx_um),
            tol=_number(th, "tol", ctx, default=ThermalParams().tol),
            max_iter=max_iter,
        )

    tune = None
    if raw.get("tune") is not None:
        tn = raw["tune"]
        _check_keys(tn, {"target", "qd_ids", "tol_nm", "min_q"}, set(), f"{ctx}: tune")
        target = tn.get("target", "qd-to-cavity")
        if target not in ("qd-to-cavity", "qd-to-qd"):
            raise ConfigError(f"{ctx}: tune.target must be 'qd-to-cavity' or 'qd-to-qd'")
        qd_ids = tn.get("qd_ids", [])
        if not isinstance(qd_ids, list) or not all(isinstance(v, str) for v in qd_ids):
            raise ConfigError(f"{ctx}: tune.qd_ids must be a list of strings")
        min_q = None if tn.get("min_q") is None else _number(tn, "min_q", ctx)
        tune = TuneParams(
            target=target,
            qd_ids=tuple(qd_ids),
            tol_nm=_number(tn, "tol_nm", ctx, default=TuneParams().tol_nm),
            min_q=min_q,
        )

    scenario = Scenario(
        bath_k=bath_k,
        structures=tuple(structures),
        crosstalk=crosstalk,
        spectrum=spectrum,
        sweep=sweep,
        thermal=thermal_params,
        tune=tune,
    )
    _check_referenced_qds(scenario, ctx)
    return scenario


def _check_referenced_qds(scenario: Scenario, ctx: str) -> None:
    if scenario.tune is None or not scenario.tune.qd_ids:
        return
    if scenario.tune.target == "qd-to-cavity":
        scenario.main.device.qd(scenario.tune.qd_ids[0])
        return
    if len(scenario.tune.qd_ids) != len(scenario.structures):
        raise ConfigError(f"{ctx}: tune.qd_ids must name one QD per structure")
    for s, qd_id in zip(scenario.structures, scenario.tune.qd_ids):
        s.device.qd(qd_id)


# ---------------------------------------------------------------------------
# deterministic writers

def fmt9(x: float) -> str:
    return format(float(x), ".9g")


def _round_floats(obj):
    """Round every float in a JSON-ready object to 9 significant digits."""
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return None
        return float(fmt9(obj))
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def write_json(obj: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(_round_floats(obj), f, indent=2, sort_keys=True)
        f.write("\n")


def write_field_csv(field: TemperatureField, path: str | Path) -> None:
    """Temperature map as x_um,y_um,T_K rows (row-major, 6 significant digits)."""
    grid = field.grid
    xs = grid.cell_x_um()
    ys = grid.cell_y_um()
    active = grid.active()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("x_um,y_um,T_K\n")
        for j in range(grid.shape[0]):
            for i in range(grid.shape[1]):
                if active[j, i]:
                    f.write(
                        f"{format(xs[i], '.6g')},{format(ys[j], '.6g')},"
                        f"{format(field.t_k[j, i], '.6g')}\n"
                    )


def write_report_json(report: SolveReport, extras: dict, path: str | Path) -> None:
    out = dict(report.to_dict())
    out.update(extras)
    write_json(out, path)


def write_spectrum_csv(spectrum: Spectrum, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("lambda_nm,intensity\n")
        for lam, inten in zip(spectrum.wavelengths_nm, spectrum.intensities):
            f.write(f"{fmt9(lam)},{fmt9(inten)}\n")


def write_peaks_json(spectrum: Spectrum, path: str | Path) -> None:
    peaks = [
        {
            "kind": p.kind,
            "label": p.label,
            "center_nm": p.center_nm,
            "fwhm_nm": p.fwhm_nm,
            "height": p.height,
        }
        for p in spectrum.peaks
    ]
    write_json({"peaks": peaks}, path)


def write_solution_json(solution: TuningSolution, path: str | Path) -> None:
    write_json(solution.to_dict(), path)
