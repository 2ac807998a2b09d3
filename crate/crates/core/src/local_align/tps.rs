//! Thin-plate spline interpolation of 2-D displacements.

use nalgebra::{DMatrix, Matrix2};

use crate::error::{Error, Result};

/// Two thin-plate splines (one per displacement component) sharing centers.
///
/// Coordinates are normalised internally (centered, scaled to unit extent)
/// for conditioning; `regularization` is added to the kernel diagonal in
/// those normalised units. With `regularization = 0` the model interpolates.
#[derive(Debug, Clone)]
pub struct TpsModel {
    centers: Vec<[f64; 2]>,
    weights: Vec<[f64; 2]>,
    /// Per component: `[c, a_x, a_y]` in normalised coordinates.
    affine: [[f64; 3]; 2],
    origin: [f64; 2],
    scale: f64,
    regularization: f64,
}

#[inline]
fn kernel(r2: f64) -> f64 {
    // r^2 log r == 0.5 r^2 ln(r^2); zero at the origin.
    if r2 > 0.0 {
        0.5 * r2 * r2.ln()
    } else {
        0.0
    }
}

impl TpsModel {
    /// Fits `locations[i] -> displacements[i]`.
    pub fn fit(
        locations: &[[f64; 2]],
        displacements: &[[f64; 2]],
        regularization: f64,
    ) -> Result<Self> {
        let n = locations.len();
        if n != displacements.len() {
            return Err(Error::Dimension("locations/displacements length mismatch".into()));
        }
        if n < 3 {
            return Err(Error::TpsFit(format!("{n} control points, need at least 3")));
        }
        if !(regularization >= 0.0) || !regularization.is_finite() {
            return Err(Error::Parameter(format!("regularization {regularization} < 0")));
        }
        let origin = [
            locations.iter().map(|p| p[0]).sum::<f64>() / n as f64,
            locations.iter().map(|p| p[1]).sum::<f64>() / n as f64,
        ];
        let extent = locations
            .iter()
            .map(|p| (p[0] - origin[0]).abs().max((p[1] - origin[1]).abs()))
            .fold(0.0, f64::max);
        if extent == 0.0 {
            return Err(Error::TpsFit("control points coincide".into()));
        }
        let centers: Vec<[f64; 2]> = locations
            .iter()
            .map(|p| [(p[0] - origin[0]) / extent, (p[1] - origin[1]) / extent])
            .collect();

        // Collinear configurations leave the affine part undetermined.
        let mut cov = Matrix2::<f64>::zeros();
        for c in &centers {
            cov[(0, 0)] += c[0] * c[0];
            cov[(0, 1)] += c[0] * c[1];
            cov[(1, 1)] += c[1] * c[1];
        }
        cov[(1, 0)] = cov[(0, 1)];
        let eig = cov.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        if hi <= 0.0 || lo / hi < 1e-12 {
            return Err(Error::TpsFit("control points are collinear".into()));
        }

        let m = n + 3;
        let mut a = DMatrix::<f64>::zeros(m, m);
        for i in 0..n {
            for j in 0..n {
                let r2 = (centers[i][0] - centers[j][0]).powi(2)
                    + (centers[i][1] - centers[j][1]).powi(2);
                a[(i, j)] = kernel(r2);
            }
            a[(i, i)] += regularization;
            let row = [1.0, centers[i][0], centers[i][1]];
            for k in 0..3 {
                a[(i, n + k)] = row[k];
                a[(n + k, i)] = row[k];
            }
        }
        let mut rhs = DMatrix::<f64>::zeros(m, 2);
        for i in 0..n {
            rhs[(i, 0)] = displacements[i][0];
            rhs[(i, 1)] = displacements[i][1];
        }
        let lu = a.clone().lu();
        let mut sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::TpsFit("singular system (duplicate control points?)".into()))?;
        // One step of iterative refinement.
        let resid = &rhs - &a * &sol;
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        }
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::TpsFit("non-finite solution".into()));
        }
        let weights = (0..n).map(|i| [sol[(i, 0)], sol[(i, 1)]]).collect();
        let affine = [
            [sol[(n, 0)], sol[(n + 1, 0)], sol[(n + 2, 0)]],
            [sol[(n, 1)], sol[(n + 1, 1)], sol[(n + 2, 1)]],
        ];
        Ok(Self {
            centers,
            weights,
            affine,
            origin,
            scale: extent,
            regularization,
        })
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Displacement at pixel coordinates `(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        let u = (x - self.origin[0]) / self.scale;
        let v = (y - self.origin[1]) / self.scale;
        let mut dx = self.affine[0][0] + self.affine[0][1] * u + self.affine[0][2] * v;
        let mut dy = self.affine[1][0] + self.affine[1][1] * u + self.affine[1][2] * v;
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let phi = kernel((u - c[0]).powi(2) + (v - c[1]).powi(2));
            dx += w[0] * phi;
            dy += w[1] * phi;
        }
        (dx, dy)
    }
}
