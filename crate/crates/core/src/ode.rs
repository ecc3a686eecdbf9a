use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{min_eigenvalue, symmetrize, PSD_TOL};

const BLOW_UP: f64 = 1e12;

/// Classical RK4 for a symmetric matrix ODE `dY/ds = rhs(Y)`, symmetrising after
/// every step. `grid` gives the direction-free step count and size; `times`
/// is only used for diagnostics.
pub(crate) fn rk4_symmetric(
    what: &'static str,
    y0: DMatrix<f64>,
    grid: &TimeGrid,
    backward: bool,
    check_psd: bool,
    mut rhs: impl FnMut(&DMatrix<f64>) -> DMatrix<f64>,
) -> Result<Vec<DMatrix<f64>>> {
    let h = grid.dt();
    let mut out = Vec::with_capacity(grid.len());
    let mut y = y0;
    out.push(y.clone());
    for step in 1..=grid.steps() {
        let k1 = rhs(&y);
        let k2 = rhs(&(&y + &k1 * (0.5 * h)));
        let k3 = rhs(&(&y + &k2 * (0.5 * h)));
        let k4 = rhs(&(&y + &k3 * h));
        y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        symmetrize(&mut y);
        let time = if backward { grid.time(grid.steps() - step) } else { grid.time(step) };
        let norm = y.amax();
        if !norm.is_finite() {
            return Err(Error::NonFinite { what, time });
        }
        if norm > BLOW_UP {
            return Err(Error::BlowUp { what, time, norm });
        }
        if check_psd {
            let min = min_eigenvalue(&y);
            if min < -PSD_TOL {
                return Err(Error::PsdLost { what, time, min_eigenvalue: min });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}
