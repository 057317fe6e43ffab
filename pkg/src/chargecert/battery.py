"""Reduced-order lithium-ion cell with SEI ageing and lumped thermal dynamics.

One representative particle per electrode with finite-volume radial
diffusion, inverse-hyperbolic-sine surface kinetics, an Arrhenius SEI side
reaction on the anode, and a single thermal node.  All operations are pure
functions of their arguments; parameter values are immutable after
sampling and safe to share across workers.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from chargecert import kernels
from chargecert.kernels import FARADAY, KELVIN
from chargecert.ocv import OcvCurve, default_curve

V_MAX = 4.2           # safety ceiling (V)
T_MAX_C = 45.0        # safety ceiling (deg C)
SOC_GOAL = 0.9
N_SOC_BINS = 20       # 19 equal bins on [0, 0.9) plus the goal bin
SOC_BIN_WIDTH = SOC_GOAL / (N_SOC_BINS - 1)

INIT_V_RANGE = (2.8, 4.0)
INIT_T_RANGE_C = (17.0, 32.0)

RUNNING = "running"
GOAL = "goal"
UNSAFE = "unsafe"
TIMEOUT = "timeout"

_SOC_LETTERS = string.ascii_lowercase[:N_SOC_BINS]

T_PLUS_NOMINAL = 0.26
DELTA_SEI_PRISTINE = 5e-9
QUALITY_SD = 0.03
QUALITY_BOUNDS = (0.9, 1.1)
SOH_RANGE = (0.85, 1.0)


class BatteryError(Exception):
    pass


class DomainError(BatteryError):
    """Operation precondition violated (current range, timestep, state flag)."""


class IntegrationError(BatteryError):
    """The integrator produced a non-finite or out-of-range state."""

    def __init__(self, field_name: str, message: str = ""):
        self.field_name = field_name
        super().__init__(message or f"integration failure in field '{field_name}'")


class SamplingError(BatteryError):
    """Initial-condition sampling failed (e.g. OCV inversion out of range)."""


@dataclass(frozen=True, eq=False)
class CellParameters:
    """Physical parameters of one simulated cell.

    ``q_nom`` is the pristine nominal capacity; the effective capacity used
    by the dynamics is ``soh * q_nom`` (the interfacial areas are derived
    from it, so coulomb counting against ``soh * q_nom`` is exact up to the
    SEI side current).
    """

    q_nom: float                  # Ah (pristine nominal)
    n_radial: int
    d_scale_n: float
    d_scale_p: float
    brugg_scale_n: float
    brugg_scale_p: float
    h_scale: float
    soh: float
    t_plus: float
    delta_sei_init: float         # m
    r_sei_per_m: float            # Ohm m^2 per m of thickness
    u_sei: float                  # V
    j0_sei_ref: float             # A/m^2 at T_REF
    e_act_sei: float              # J/mol
    e_act_dn: float
    e_act_dp: float
    v_bar_sei: float              # m^3/mol
    m_cp: float                   # J/K
    r_th: float                   # K/W
    t_amb: float                  # K
    ocv_n: OcvCurve
    ocv_p: OcvCurve
    i_max: float                  # A
    # surrogate internals
    r_particle_n: float
    r_particle_p: float
    c_max_n: float
    c_max_p: float
    theta_n0: float
    theta_n100: float
    theta_p0: float
    theta_p100: float
    j0_ref_n: float
    j0_ref_p: float
    r_ohm: float                  # Ohm, lumped, before transport penalties
    kappa_tplus: float
    substep_s: float
    # derived, packed for the kernels
    pvec: np.ndarray = field(repr=False, default=None)

    @property
    def q_eff(self) -> float:
        return self.soh * self.q_nom

    @property
    def area_n(self) -> float:
        return float(self.pvec[kernels.PV_AREA_N])

    @property
    def area_p(self) -> float:
        return float(self.pvec[kernels.PV_AREA_P])

    def rest_voltage(self, soc: float) -> float:
        th_n = self.theta_n0 + soc * (self.theta_n100 - self.theta_n0)
        th_p = self.theta_p0 - soc * (self.theta_p0 - self.theta_p100)
        return float(self.ocv_p(th_p) - self.ocv_n(th_n))

    def soc_from_rest_voltage(self, volts: float) -> float:
        lo, hi = self.rest_voltage(0.0), self.rest_voltage(1.0)
        if not (lo <= volts <= hi):
            raise SamplingError(
                f"voltage {volts:.3f} V outside the rest OCV range [{lo:.3f}, {hi:.3f}]"
            )
        return float(brentq(lambda s: self.rest_voltage(s) - volts, 0.0, 1.0, xtol=1e-12))


# nominal templates; overrides go through make_cell_parameters(**...)
STANDARD_CELL = dict(
    q_nom=5.0, r_ohm=0.015, m_cp=80.0, r_th=6.0,
)
# smaller fast-charge cell used by the desk-scale synthesis configuration:
# small particles keep the surface stoichiometry close to the bulk at high rates
DESK_CELL = dict(
    q_nom=1.2, r_ohm=0.008, m_cp=30.0, r_th=6.5,
    r_particle_n=2e-6, r_particle_p=2e-6,
)


def make_cell_parameters(
    q_nom: float = 5.0,
    soh: float = 1.0,
    d_scale_n: float = 1.0,
    d_scale_p: float = 1.0,
    brugg_scale_n: float = 1.0,
    brugg_scale_p: float = 1.0,
    h_scale: float = 1.0,
    n_radial: int = 10,
    t_plus: float | None = None,
    delta_sei_init: float | None = None,
    r_sei_per_m: float = 2e4,
    u_sei: float = 0.40,
    j0_sei_ref: float = 1.7e-10,
    e_act_sei: float = 60000.0,
    e_act_dn: float = 17447.0,
    e_act_dp: float = 12084.0,
    v_bar_sei: float = 9.585e-5,
    m_cp: float = 80.0,
    r_th: float = 6.0,
    t_amb: float = 298.15,
    ocv_n: OcvCurve | None = None,
    ocv_p: OcvCurve | None = None,
    i_max: float = 10.0,
    r_particle_n: float = 5e-6,
    r_particle_p: float = 5e-6,
    c_max_n: float = 30000.0,
    c_max_p: float = 50000.0,
    theta_n0: float = 0.03,
    theta_n100: float = 0.90,
    theta_p0: float = 0.95,
    theta_p100: float = 0.30,
    d_n_ref: float = 5e-14,
    d_p_ref: float = 1e-13,
    j0_ref_n: float = 1.5,
    j0_ref_p: float = 2.0,
    r_ohm: float = 0.015,
    kappa_tplus: float = 1.0,
    substep_s: float = 1.0,
) -> CellParameters:
    if q_nom <= 0 or i_max <= 0 or m_cp <= 0 or r_th <= 0 or n_radial < 3:
        raise DomainError("q_nom, i_max, m_cp, r_th must be positive; n_radial >= 3")
    if ocv_n is None:
        ocv_n = default_curve("neg")
    if ocv_p is None:
        ocv_p = default_curve("pos")
    if t_plus is None:
        t_plus = soh * T_PLUS_NOMINAL

    q_eff = soh * q_nom
    vol_n = 3600.0 * q_eff / (FARADAY * c_max_n * (theta_n100 - theta_n0))
    vol_p = 3600.0 * q_eff / (FARADAY * c_max_p * (theta_p0 - theta_p100))
    area_n = 3.0 * vol_n / r_particle_n
    area_p = 3.0 * vol_p / r_particle_p

    if delta_sei_init is None:
        # uniform SEI thickening consistent with the capacity already lost
        lost_ah = q_eff * (1.0 - soh)
        delta_sei_init = DELTA_SEI_PRISTINE + lost_ah * 3600.0 * v_bar_sei / (
            2.0 * FARADAY * area_n
        )

    # the rest window must span the initial-condition sampler's range
    v_lo = float(ocv_p(theta_p0) - ocv_n(theta_n0))
    v_hi = float(ocv_p(theta_p100) - ocv_n(theta_n100))
    if v_lo > 2.51 or v_hi < 4.29:
        raise DomainError(
            f"OCV pair spans [{v_lo:.3f}, {v_hi:.3f}] V; needs to cover [2.5, 4.3]"
        )

    r_ohm_eff = (
        r_ohm
        * 0.5 * (brugg_scale_n + brugg_scale_p)
        * (1.0 + kappa_tplus * (1.0 - t_plus))
    )

    pv = np.zeros(kernels.PV_SIZE)
    pv[kernels.PV_NR] = n_radial
    pv[kernels.PV_AREA_N] = area_n
    pv[kernels.PV_AREA_P] = area_p
    pv[kernels.PV_DR_N] = r_particle_n / n_radial
    pv[kernels.PV_DR_P] = r_particle_p / n_radial
    pv[kernels.PV_CMAX_N] = c_max_n
    pv[kernels.PV_CMAX_P] = c_max_p
    pv[kernels.PV_DN] = d_n_ref * d_scale_n
    pv[kernels.PV_DP] = d_p_ref * d_scale_p
    pv[kernels.PV_EACT_DN] = e_act_dn
    pv[kernels.PV_EACT_DP] = e_act_dp
    pv[kernels.PV_J0N] = j0_ref_n
    pv[kernels.PV_J0P] = j0_ref_p
    pv[kernels.PV_ROHM] = r_ohm_eff
    pv[kernels.PV_RSEI_PER_M] = r_sei_per_m
    pv[kernels.PV_USEI] = u_sei
    pv[kernels.PV_J0SEI] = j0_sei_ref
    pv[kernels.PV_EACT_SEI] = e_act_sei
    pv[kernels.PV_VBAR_SEI] = v_bar_sei
    pv[kernels.PV_MCP] = m_cp
    pv[kernels.PV_RTH] = r_th / h_scale
    pv[kernels.PV_TAMB] = t_amb

    return CellParameters(
        q_nom=q_nom, n_radial=n_radial,
        d_scale_n=d_scale_n, d_scale_p=d_scale_p,
        brugg_scale_n=brugg_scale_n, brugg_scale_p=brugg_scale_p,
        h_scale=h_scale, soh=soh, t_plus=t_plus,
        delta_sei_init=delta_sei_init, r_sei_per_m=r_sei_per_m,
        u_sei=u_sei, j0_sei_ref=j0_sei_ref, e_act_sei=e_act_sei,
        e_act_dn=e_act_dn, e_act_dp=e_act_dp, v_bar_sei=v_bar_sei,
        m_cp=m_cp, r_th=r_th, t_amb=t_amb,
        ocv_n=ocv_n, ocv_p=ocv_p, i_max=i_max,
        r_particle_n=r_particle_n, r_particle_p=r_particle_p,
        c_max_n=c_max_n, c_max_p=c_max_p,
        theta_n0=theta_n0, theta_n100=theta_n100,
        theta_p0=theta_p0, theta_p100=theta_p100,
        j0_ref_n=j0_ref_n, j0_ref_p=j0_ref_p,
        r_ohm=r_ohm, kappa_tplus=kappa_tplus, substep_s=substep_s,
        pvec=pv,
    )


@dataclass(frozen=True, eq=False)
class CellState:
    k: int
    soc: float
    temp: float                   # K
    q_loss: float                 # Ah
    delta_sei: float              # m
    c_n: np.ndarray
    c_p: np.ndarray
    i_prev: float
    terminal: str = RUNNING


@dataclass(frozen=True)
class OutputMeasurement:
    """The five quantities the controller may read; nothing else leaks out."""

    k: int
    soc: float
    volt: float
    temp: float                   # K (converted to deg C for labeling)
    i_prev: float


@dataclass(frozen=True, order=True)
class OutputLabel:
    soc_sym: str
    v_sym: str
    t_sym: str

    @property
    def text(self) -> str:
        return self.soc_sym + self.v_sym + self.t_sym

    @property
    def index(self) -> int:
        return (
            _SOC_LETTERS.index(self.soc_sym) * 4
            + (0 if self.v_sym == "a" else 2)
            + (0 if self.t_sym == "a" else 1)
        )


def battery_alphabet() -> list[str]:
    """All 80 output labels, ordered to match ``OutputLabel.index``."""
    out = []
    for s in _SOC_LETTERS:
        for v in "ab":
            for t in "ab":
                out.append(s + v + t)
    return out


def goal_label_texts() -> set[str]:
    return {lab for lab in battery_alphabet() if lab[0] == _SOC_LETTERS[-1]}


def safe_label_texts() -> set[str]:
    return {lab for lab in battery_alphabet() if lab[1] == "a" and lab[2] == "a"}


def _state_vec(state: CellState) -> np.ndarray:
    nr = state.c_n.size
    y = np.empty(3 + 2 * nr)
    y[kernels.Y_TEMP] = state.temp
    y[kernels.Y_QLOSS] = state.q_loss
    y[kernels.Y_DSEI] = state.delta_sei
    y[kernels.Y_CONC : kernels.Y_CONC + nr] = state.c_n
    y[kernels.Y_CONC + nr :] = state.c_p
    return y


def _soc_from_conc(params: CellParameters, c_n: np.ndarray) -> float:
    th_bar = kernels.mean_shell_value(c_n) / params.c_max_n
    return (th_bar - params.theta_n0) / (params.theta_n100 - params.theta_n0)


def _check_finite(y: np.ndarray, nr: int) -> None:
    names = {kernels.Y_TEMP: "temp", kernels.Y_QLOSS: "q_loss", kernels.Y_DSEI: "delta_sei"}
    for idx, name in names.items():
        if not np.isfinite(y[idx]):
            raise IntegrationError(name)
    if not np.all(np.isfinite(y[kernels.Y_CONC : kernels.Y_CONC + nr])):
        raise IntegrationError("c_n")
    if not np.all(np.isfinite(y[kernels.Y_CONC + nr :])):
        raise IntegrationError("c_p")


def step(
    state: CellState,
    params: CellParameters,
    current: float,
    dt: float = 15.0,
    max_k: int | None = None,
    n_sub: int | None = None,
) -> CellState:
    """Advance the cell one control interval under ``current`` (A, charging > 0).

    The successor's terminal flag is set from its own measurement: unsafe on
    V > V_MAX or T > T_MAX_C, goal on soc >= SOC_GOAL, timeout when ``max_k``
    is given and reached.  Safety dominates goal on ties.
    """
    if state.terminal != RUNNING:
        raise DomainError(f"cannot step a state with terminal={state.terminal!r}")
    if not (0.0 <= current <= params.i_max):
        raise DomainError(f"current {current} A outside [0, {params.i_max}]")
    if dt <= 0:
        raise DomainError("dt must be positive")
    if n_sub is None:
        n_sub = max(1, int(round(dt / params.substep_s)))

    y = kernels.integrate_interval(
        _state_vec(state), params.pvec,
        params.ocv_n.x, params.ocv_n.coeffs,
        params.ocv_p.x, params.ocv_p.coeffs,
        float(current), float(dt), int(n_sub),
    )
    nr = params.n_radial
    _check_finite(y, nr)
    c_n = y[kernels.Y_CONC : kernels.Y_CONC + nr].copy()
    c_p = y[kernels.Y_CONC + nr :].copy()
    if c_n.min() < -1e-9 * params.c_max_n or c_n.max() > params.c_max_n * (1 + 1e-9):
        raise IntegrationError("c_n", "anode concentration left [0, c_max]")
    if c_p.min() < -1e-9 * params.c_max_p or c_p.max() > params.c_max_p * (1 + 1e-9):
        raise IntegrationError("c_p", "cathode concentration left [0, c_max]")

    nxt = CellState(
        k=state.k + 1,
        soc=_soc_from_conc(params, c_n),
        temp=float(y[kernels.Y_TEMP]),
        q_loss=float(y[kernels.Y_QLOSS]),
        delta_sei=float(y[kernels.Y_DSEI]),
        c_n=c_n, c_p=c_p,
        i_prev=float(current),
    )
    z = measure(nxt, params)
    if z.volt > V_MAX or z.temp - KELVIN > T_MAX_C:
        return replace(nxt, terminal=UNSAFE)
    if nxt.soc >= SOC_GOAL:
        return replace(nxt, terminal=GOAL)
    if max_k is not None and nxt.k >= max_k:
        return replace(nxt, terminal=TIMEOUT)
    return nxt


def measure(state: CellState, params: CellParameters) -> OutputMeasurement:
    """Measurable output: (k, SOC, V, T, I_prev).

    The terminal voltage is evaluated at the stored operating point under
    the previous current (OCV difference + overpotentials + ohmic and SEI
    film drops); at rest it equals the OCV difference exactly.
    """
    volt = kernels.terminal_voltage(
        _state_vec(state), params.pvec,
        params.ocv_n.x, params.ocv_n.coeffs,
        params.ocv_p.x, params.ocv_p.coeffs,
        float(state.i_prev),
    )
    if not np.isfinite(volt):
        raise IntegrationError("volt")
    return OutputMeasurement(
        k=state.k, soc=state.soc, volt=float(volt), temp=state.temp, i_prev=state.i_prev
    )


def label(z: OutputMeasurement) -> OutputLabel:
    """Finite output label: 20 SOC bins x {safe, unsafe} voltage x temperature.

    SOC bins are left-closed right-open except the goal bin [0.9, 1];
    safety comparisons are <= as in the limit definitions.
    """
    soc = min(max(z.soc, 0.0), 1.0)
    if soc >= SOC_GOAL:
        soc_sym = _SOC_LETTERS[-1]
    else:
        soc_sym = _SOC_LETTERS[min(int(soc / SOC_BIN_WIDTH), N_SOC_BINS - 2)]
    v_sym = "a" if z.volt <= V_MAX else "b"
    t_sym = "a" if (z.temp - KELVIN) <= T_MAX_C else "b"
    return OutputLabel(soc_sym, v_sym, t_sym)


def initial_state(params: CellParameters, soc0: float, temp0_k: float) -> CellState:
    """Rest state at uniform stoichiometry for the given SOC and temperature."""
    if not (0.0 <= soc0 <= 1.0):
        raise DomainError(f"soc0 {soc0} outside [0, 1]")
    th_n = params.theta_n0 + soc0 * (params.theta_n100 - params.theta_n0)
    th_p = params.theta_p0 - soc0 * (params.theta_p0 - params.theta_p100)
    return CellState(
        k=0, soc=soc0, temp=temp0_k, q_loss=0.0,
        delta_sei=params.delta_sei_init,
        c_n=np.full(params.n_radial, th_n * params.c_max_n),
        c_p=np.full(params.n_radial, th_p * params.c_max_p),
        i_prev=0.0,
    )


def _truncated_gaussian(rng: np.random.Generator, mean=1.0, sd=QUALITY_SD,
                        bounds=QUALITY_BOUNDS) -> float:
    for _ in range(1000):
        x = rng.normal(mean, sd)
        if bounds[0] <= x <= bounds[1]:
            return float(x)
    raise SamplingError("truncated-Gaussian rejection did not terminate")


def sample_cell(
    rng_seed: int,
    template: dict | None = None,
    v_range: tuple[float, float] = INIT_V_RANGE,
    t_range_c: tuple[float, float] = INIT_T_RANGE_C,
) -> tuple[CellParameters, CellState]:
    """Draw one cell: quality scalers, SOH, and a rest initial condition.

    Quality scalers are Normal(1, 0.03) truncated to [0.9, 1.1] by
    rejection; SOH is uniform on [0.85, 1.0]; the initial voltage and
    temperature are uniform on the given ranges, and the initial SOC is
    obtained by inverting the rest OCV relation.  Identical seeds produce
    bitwise-identical results.
    """
    rng = np.random.default_rng(rng_seed)
    scalers = {name: _truncated_gaussian(rng) for name in
               ("d_scale_n", "d_scale_p", "brugg_scale_n", "brugg_scale_p", "h_scale")}
    soh = float(rng.uniform(*SOH_RANGE))
    v0 = float(rng.uniform(*v_range))
    t0_c = float(rng.uniform(*t_range_c))
    params = make_cell_parameters(soh=soh, **scalers, **(template or STANDARD_CELL))
    soc0 = params.soc_from_rest_voltage(v0)
    return params, initial_state(params, soc0, t0_c + KELVIN)
