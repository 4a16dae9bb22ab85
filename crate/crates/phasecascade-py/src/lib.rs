//! Python bindings: small entry points over the phasecascade library.
//! Fields cross the boundary as flat row-major lists of n·n samples.

use phasecascade::assemble::{epsilon_sweep as sweep, order_fit as fit, residual_sweep as sweep_residuals};
use phasecascade::baseflow::BaseScenario;
use phasecascade::cascade::{CascadeConfig, CascadeData};
use phasecascade::direct::experiments::{base_with_phase, run_cascade, single_harmonic_datum, transverse_amplitude};
use phasecascade::field::shell_spectrum as shells;
use phasecascade::operators::leray_project as leray;
use phasecascade::{criteria, Grid, SpectralField};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: phasecascade::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn field(n: usize, samples: Vec<Vec<f64>>) -> PyResult<SpectralField> {
    let grid = Grid::new(2, n, 1, 1.0, 1.0).map_err(err)?;
    if samples.iter().any(|s| s.len() != n * n) {
        return Err(PyValueError::new_err(format!("expected {} samples per component", n * n)));
    }
    SpectralField::to_spectral(&grid, &samples).map_err(err)
}

/// (slope, intercept, stderr) of log norm against log ε.
#[pyfunction]
fn order_fit(eps: Vec<f64>, norms: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let f = fit(&eps, &norms).map_err(err)?;
    Ok((f.slope, f.intercept, f.stderr))
}

#[pyfunction]
fn epsilon_sweep(eps0: f64, count: usize) -> Vec<f64> {
    sweep(eps0, count)
}

/// Leray projection of a 2D velocity given as two sample lists.
#[pyfunction]
fn leray_project(n: usize, u1: Vec<f64>, u2: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let u = field(n, vec![u1, u2])?;
    let mut p = leray(&u).to_physical();
    let b = p.pop().unwrap_or_default();
    let a = p.pop().unwrap_or_default();
    Ok((a, b))
}

#[pyfunction]
fn shell_spectrum(n: usize, samples: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(shells(&field(n, vec![samples])?))
}

/// Profile residual norms of the transverse shear cascade over an ε sweep at
/// the final time. Returns (rows, fits) with rows (ε, t, name, value) and
/// fits (name, slope, stderr).
#[pyfunction]
#[pyo3(signature = (eps, n=32, m_theta=8, dt=0.01, t_end=0.2, l=2, order=4, cleanup=true))]
#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn residual_sweep(
    py: Python<'_>,
    eps: Vec<f64>,
    n: usize,
    m_theta: usize,
    dt: f64,
    t_end: f64,
    l: usize,
    order: usize,
    cleanup: bool,
) -> PyResult<(Vec<(f64, f64, String, f64)>, Vec<(String, f64, f64)>)> {
    py.detach(|| {
        let grid = Grid::new(2, n, m_theta, dt, t_end)?;
        let cfg = CascadeConfig::new(l, order, 0.0, grid.clone())?;
        let base = base_with_phase(BaseScenario::Shear, &grid, false)?;
        let mut data = CascadeData::zeros(&grid, order);
        data.ustar[0] = single_harmonic_datum(&grid, 1, false, transverse_amplitude);
        let st = run_cascade(cfg, base, data)?;
        let r = sweep_residuals(&st, st.snapshots.len() - 1, &eps, cleanup)?;
        let rows = r.rows.iter().map(|x| (x.epsilon, x.t, x.name.clone(), x.value)).collect();
        let fits = r.fits.iter().map(|(name, f)| (name.clone(), f.slope, f.stderr)).collect();
        Ok((rows, fits))
    })
    .map_err(err)
}

/// (passed, summary line) of one acceptance criterion.
#[pyfunction]
fn criterion(py: Python<'_>, id: usize) -> PyResult<(bool, String)> {
    py.detach(|| {
        let ctx = criteria::Context::new();
        criteria::run(id, &ctx).map(|o| (o.passed, o.line()))
    })
    .ok_or_else(|| PyValueError::new_err(format!("no criterion {id}")))
}

#[pymodule]
fn phasecascade_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(order_fit, m)?)?;
    m.add_function(wrap_pyfunction!(epsilon_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(leray_project, m)?)?;
    m.add_function(wrap_pyfunction!(shell_spectrum, m)?)?;
    m.add_function(wrap_pyfunction!(residual_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(criterion, m)?)?;
    Ok(())
}
