import numpy as np
import pytest

from chargecert import kernels
from chargecert.battery import initial_state, make_cell_parameters


def _kernel_args(current=5.0):
    p = make_cell_parameters()
    st = initial_state(p, 0.3, 300.15)
    y = np.empty(3 + 2 * p.n_radial)
    y[kernels.Y_TEMP] = st.temp
    y[kernels.Y_QLOSS] = st.q_loss
    y[kernels.Y_DSEI] = st.delta_sei
    y[kernels.Y_CONC: kernels.Y_CONC + p.n_radial] = st.c_n
    y[kernels.Y_CONC + p.n_radial:] = st.c_p
    return p, (y, p.pvec, p.ocv_n.x, p.ocv_n.coeffs, p.ocv_p.x, p.ocv_p.coeffs,
               current, 15.0, 15)


@pytest.mark.skipif(not kernels.USE_NUMBA, reason="fallback mode already active")
def test_compiled_and_python_paths_agree():
    # same source, compiled vs interpreted dispatch; fastmath is off, so the
    # float sequences match bit for bit
    _, args = _kernel_args()
    jit = kernels.integrate_interval(*args)
    py = kernels.integrate_interval.py_func(*args)
    np.testing.assert_array_equal(jit, py)
    v_args = args[:6] + (args[6],)
    assert kernels.terminal_voltage(*v_args) == kernels.terminal_voltage.py_func(*v_args)


def test_diffusion_conserves_mass_without_flux():
    c = np.linspace(1000.0, 2000.0, 10)
    out = kernels.diffuse_radial(c, 1e-13, 5e-7, 1.0, 0.0)
    w = np.array([(k + 1.0) ** 3 - k**3 for k in range(10)])
    assert np.dot(w, out) == pytest.approx(np.dot(w, c), rel=1e-12)


def test_diffusion_adds_exactly_the_surface_flux():
    c = np.full(10, 5000.0)
    dr = 5e-7
    dt, flux = 2.0, 3e-5
    out = kernels.diffuse_radial(c, 1e-13, dr, dt, flux)
    w = np.array([(k + 1.0) ** 3 - k**3 for k in range(10)])
    # shells have volume w*dr^3/3 (per 4*pi); surface area is nr^2*dr^2 (per 4*pi)
    added = np.dot(w, out - c) * dr**3 / 3.0
    assert added == pytest.approx(dt * flux * (10.0 * dr) ** 2, rel=1e-9)


def test_pchip_eval_matches_scipy():
    from scipy.interpolate import PchipInterpolator

    x = np.linspace(0.0, 1.0, 17)
    rng = np.random.default_rng(0)
    y = np.cumsum(rng.uniform(0.1, 1.0, size=17))
    interp = PchipInterpolator(x, y)
    c = np.ascontiguousarray(interp.c)
    for t in rng.uniform(0, 1, size=50):
        assert kernels.eval_pchip(x, c, float(t)) == pytest.approx(float(interp(t)), rel=1e-12)
