use nalgebra::{DMatrix, DVector};

use super::Trajectory;
use crate::error::{Error, Result};

/// Local polynomial (Savitzky-Golay style) smoothing.
///
/// Each coordinate is replaced by the value at its own position of the
/// least-squares polynomial of `degree` fitted over a centered window. Near
/// the ends the window shrinks symmetrically, and the degree is capped at
/// `window - 1` so the local fit stays determined.
pub fn smooth_trajectory(traj: &Trajectory, window: usize, degree: usize) -> Result<Trajectory> {
    let n = traj.len();
    if window % 2 == 0 || degree == 0 || degree >= window || window > n {
        return Err(Error::arg(format!(
            "need odd window with 1 <= degree < window <= length, got window {window}, degree {degree}, length {n}"
        )));
    }
    let half = window / 2;
    let y = traj.coords();
    let coords = (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let deg = degree.min(2 * h);
            local_fit_at_center(&y[i - h..=i + h], deg)
        })
        .collect::<Result<_>>()?;
    Ok(Trajectory::new(coords))
}

fn local_fit_at_center(window: &[f64], degree: usize) -> Result<f64> {
    if window.len() == 1 {
        return Ok(window[0]);
    }
    let h = (window.len() / 2) as f64;
    let vander = DMatrix::from_fn(window.len(), degree + 1, |r, c| (r as f64 - h).powi(c as i32));
    let rhs = DVector::from_column_slice(window);
    let coef = vander
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::arg(format!("local polynomial fit failed: {e}")))?;
    // evaluated at offset zero, only the constant term survives
    Ok(coef[0])
}
