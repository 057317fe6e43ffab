"""Hot numeric kernels for the cell integrator.

Every function here is compiled with numba ``@njit`` by default.  Setting
the environment variable ``CHARGECERT_NUMBA=0`` before import selects the
pure-NumPy fallback path: the same code runs uncompiled (it is written to
be valid under both).  ``benchmarks/kernel_bench.py`` compares the two.

State vector layout (float64):
    y[0]              cell temperature (K)
    y[1]              cumulative capacity loss (Ah)
    y[2]              SEI thickness (m)
    y[3 : 3+nr]       anode radial concentrations (mol/m^3), center..surface
    y[3+nr : 3+2*nr]  cathode radial concentrations (mol/m^3)

Parameter vector layout: see the ``PV_*`` indices below.
"""

from __future__ import annotations

import math
import os

import numpy as np

USE_NUMBA = os.environ.get("CHARGECERT_NUMBA", "1").lower() not in ("0", "false", "no")

if USE_NUMBA:
    from numba import njit as _njit

    def njit(fn):
        return _njit(fn, cache=True, fastmath=False)

else:

    def njit(fn):
        return fn


R_GAS = 8.314462618
FARADAY = 96485.33212
T_REF = 298.15
KELVIN = 273.15

# parameter-vector indices
PV_NR = 0
PV_AREA_N = 1
PV_AREA_P = 2
PV_DR_N = 3
PV_DR_P = 4
PV_CMAX_N = 5
PV_CMAX_P = 6
PV_DN = 7            # reference diffusivity x quality scaler
PV_DP = 8
PV_EACT_DN = 9
PV_EACT_DP = 10
PV_J0N = 11
PV_J0P = 12
PV_ROHM = 13         # lumped ohmic resistance incl. transport penalties (Ohm)
PV_RSEI_PER_M = 14
PV_USEI = 15
PV_J0SEI = 16
PV_EACT_SEI = 17
PV_VBAR_SEI = 18
PV_MCP = 19
PV_RTH = 20          # effective thermal resistance (K/W)
PV_TAMB = 21
PV_SIZE = 22

Y_TEMP = 0
Y_QLOSS = 1
Y_DSEI = 2
Y_CONC = 3


@njit
def eval_pchip(x, c, t):
    """Scalar piecewise-cubic evaluation, clamped to the table range."""
    if t <= x[0]:
        t = x[0]
    elif t >= x[-1]:
        t = x[-1]
    idx = np.searchsorted(x, t) - 1
    if idx < 0:
        idx = 0
    if idx > x.shape[0] - 2:
        idx = x.shape[0] - 2
    dt = t - x[idx]
    return ((c[0, idx] * dt + c[1, idx]) * dt + c[2, idx]) * dt + c[3, idx]


@njit
def diffuse_radial(c, d_eff, dr, dt, flux_in):
    """One backward-Euler step of finite-volume spherical diffusion.

    ``flux_in`` is the molar flux into the particle surface (mol m^-2 s^-1).
    The tridiagonal system is solved in place with the Thomas algorithm;
    interior fluxes telescope, so total lithium changes only by the surface
    flux term.
    """
    nr = c.shape[0]
    lam = dt * d_eff / (dr * dr)
    lower = np.zeros(nr)
    diag = np.ones(nr)
    upper = np.zeros(nr)
    rhs = c.copy()
    for k in range(nr):
        w = (k + 1.0) ** 3 - k**3
        if k < nr - 1:
            t_up = lam * 3.0 * (k + 1.0) ** 2 / w
            diag[k] += t_up
            upper[k] = -t_up
        if k > 0:
            t_lo = lam * 3.0 * k**2 / w
            diag[k] += t_lo
            lower[k] = -t_lo
    w_last = nr**3 - (nr - 1.0) ** 3
    rhs[nr - 1] += dt * flux_in * 3.0 * nr**2 / (w_last * dr)

    cp = np.zeros(nr)
    dp = np.zeros(nr)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for k in range(1, nr):
        m = diag[k] - lower[k] * cp[k - 1]
        if k < nr - 1:
            cp[k] = upper[k] / m
        dp[k] = (rhs[k] - lower[k] * dp[k - 1]) / m
    out = np.empty(nr)
    out[nr - 1] = dp[nr - 1]
    for k in range(nr - 2, -1, -1):
        out[k] = dp[k] - cp[k] * out[k + 1]
    return out


@njit
def mean_shell_value(c):
    """Volume-weighted mean over finite-volume shells."""
    nr = c.shape[0]
    acc = 0.0
    tot = 0.0
    for k in range(nr):
        w = (k + 1.0) ** 3 - k**3
        acc += w * c[k]
        tot += w
    return acc / tot


@njit
def _clamp_theta(th):
    if th < 1e-4:
        return 1e-4
    if th > 1.0 - 1e-4:
        return 1.0 - 1e-4
    return th


@njit
def _eta_main(j, j0, temp):
    return 2.0 * R_GAS * temp / FARADAY * math.asinh(j / (2.0 * j0))


@njit
def terminal_voltage(y, pv, ocvn_x, ocvn_c, ocvp_x, ocvp_c, current):
    """Terminal voltage at the stored operating point under ``current``.

    OCV difference at the surface stoichiometries, plus main reaction
    overpotentials (inverse-hyperbolic-sine form), lumped ohmic drop and
    the SEI film drop (area-specific resistance r_sei_per_m * delta over
    the anode interfacial area).
    """
    nr = int(pv[PV_NR])
    temp = y[Y_TEMP]
    th_n = _clamp_theta(y[Y_CONC + nr - 1] / pv[PV_CMAX_N])
    th_p = _clamp_theta(y[Y_CONC + 2 * nr - 1] / pv[PV_CMAX_P])
    u_n = eval_pchip(ocvn_x, ocvn_c, th_n)
    u_p = eval_pchip(ocvp_x, ocvp_c, th_p)
    j_n = current / pv[PV_AREA_N]
    j_p = current / pv[PV_AREA_P]
    j0n = pv[PV_J0N] * 2.0 * math.sqrt(th_n * (1.0 - th_n))
    j0p = pv[PV_J0P] * 2.0 * math.sqrt(th_p * (1.0 - th_p))
    eta_n = _eta_main(j_n, j0n, temp)
    eta_p = _eta_main(j_p, j0p, temp)
    r_film = pv[PV_RSEI_PER_M] * y[Y_DSEI] / pv[PV_AREA_N]
    return u_p - u_n + eta_p + eta_n + current * (pv[PV_ROHM] + r_film)


@njit
def integrate_interval(y, pv, ocvn_x, ocvn_c, ocvp_x, ocvp_c, current, dt, n_sub):
    """Advance one control interval of ``dt`` seconds using ``n_sub`` substeps.

    Radial diffusion is implicit per substep; surface kinetics, the SEI
    side reaction (one-substep lag on the intercalation current, active
    only while charging) and the lumped thermal balance are explicit.
    Returns the updated state vector.
    """
    nr = int(pv[PV_NR])
    out = y.copy()
    dt_s = dt / n_sub
    dr_n = pv[PV_DR_N]
    dr_p = pv[PV_DR_P]
    j_sei_prev = 0.0
    for _ in range(n_sub):
        temp = out[Y_TEMP]
        arr_dn = math.exp(pv[PV_EACT_DN] / R_GAS * (1.0 / T_REF - 1.0 / temp))
        arr_dp = math.exp(pv[PV_EACT_DP] / R_GAS * (1.0 / T_REF - 1.0 / temp))
        d_n = pv[PV_DN] * arr_dn
        d_p = pv[PV_DP] * arr_dp

        th_n = _clamp_theta(out[Y_CONC + nr - 1] / pv[PV_CMAX_N])
        th_p = _clamp_theta(out[Y_CONC + 2 * nr - 1] / pv[PV_CMAX_P])
        u_n = eval_pchip(ocvn_x, ocvn_c, th_n)
        j0n = pv[PV_J0N] * 2.0 * math.sqrt(th_n * (1.0 - th_n))
        j0p = pv[PV_J0P] * 2.0 * math.sqrt(th_p * (1.0 - th_p))

        j_tot = current / pv[PV_AREA_N]
        if current > 0.0:
            # side-reaction overpotential with the previous iterate's current
            eta_n_lag = _eta_main(j_tot - j_sei_prev, j0n, temp)
            eta_sei = u_n - eta_n_lag - pv[PV_USEI]
            arr_sei = math.exp(pv[PV_EACT_SEI] / R_GAS * (1.0 / T_REF - 1.0 / temp))
            j_sei = pv[PV_J0SEI] * arr_sei * math.exp(-FARADAY * eta_sei / (R_GAS * temp))
        else:
            j_sei = 0.0
        j_int = j_tot - j_sei

        cn = diffuse_radial(out[Y_CONC : Y_CONC + nr], d_n, dr_n, dt_s, j_int / FARADAY)
        j_p = current / pv[PV_AREA_P]
        cp_ = diffuse_radial(
            out[Y_CONC + nr : Y_CONC + 2 * nr], d_p, dr_p, dt_s, -j_p / FARADAY
        )
        for k in range(nr):
            out[Y_CONC + k] = cn[k]
            out[Y_CONC + nr + k] = cp_[k]

        out[Y_QLOSS] += j_sei * pv[PV_AREA_N] * dt_s / 3600.0
        out[Y_DSEI] += j_sei * pv[PV_VBAR_SEI] / (2.0 * FARADAY) * dt_s

        eta_n = _eta_main(j_int, j0n, temp)
        eta_p = _eta_main(j_p, j0p, temp)
        r_film = pv[PV_RSEI_PER_M] * out[Y_DSEI] / pv[PV_AREA_N]
        heat = abs(current) * (
            abs(eta_p) + abs(eta_n) + abs(current) * (pv[PV_ROHM] + r_film)
        )
        out[Y_TEMP] = temp + dt_s * (
            (pv[PV_TAMB] - temp) / pv[PV_RTH] + heat
        ) / pv[PV_MCP]
        j_sei_prev = j_sei
    return out
