//! Transmembrane-voltage front shape and its reconstruction from a particle.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::filter::Particle;
use crate::geodesic::GeodesicTable;

/// Smoothed Heaviside step of half-width `width` (mm): 0 at rest, 1 when activated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontTemplate {
    width: f64,
}

impl FrontTemplate {
    pub fn new(width: f64) -> Result<Self> {
        if !(width > 0.0) || !width.is_finite() {
            return Err(invalid("width", "front width must be positive and finite"));
        }
        Ok(FrontTemplate { width })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Voltage at signed distance `xi` behind the front (positive = inside).
    #[inline]
    pub fn eval(&self, xi: f64) -> f64 {
        let w = self.width;
        if xi < -w {
            0.0
        } else if xi > w {
            1.0
        } else {
            -xi * xi * xi / (4.0 * w * w * w) + 3.0 * xi / (4.0 * w) + 0.5
        }
    }

    /// Voltage of a particle at every vertex: max over centers of
    /// `V(r_i − d(x, c_i))`.
    pub fn reconstruct(&self, particle: &Particle, table: &GeodesicTable) -> Result<VoltageField> {
        let m = table.vertex_count();
        for &c in &particle.centers {
            if c >= m {
                return Err(Error::IndexOutOfRange { index: c, len: m });
            }
        }
        let mut values = vec![0.0; m];
        self.reconstruct_into(&particle.centers, &particle.radii, table, &mut values);
        Ok(VoltageField { values, time_index: 0 })
    }

    /// Unchecked inner loop of [`reconstruct`](Self::reconstruct); `out` must
    /// have one slot per vertex.
    pub(crate) fn reconstruct_into(
        &self,
        centers: &[usize],
        radii: &[f64],
        table: &GeodesicTable,
        out: &mut [f64],
    ) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&c, &r) in centers.iter().zip(radii) {
            // Such a center contributes 0 everywhere.
            if r + self.width <= 0.0 {
                continue;
            }
            // Only vertices within r + width can be nonzero.
            let row = table.row(c);
            for k in 0..table.ball_len(c, r + self.width) {
                let j = table.nth_closest(c, k);
                let v = self.eval(r - row[j]);
                if v > out[j] {
                    out[j] = v;
                }
            }
        }
    }
}

/// `V(xi)` for a template of half-width `width`.
pub fn v_template(xi: f64, width: f64) -> Result<f64> {
    Ok(FrontTemplate::new(width)?.eval(xi))
}

/// Per-vertex voltage in `[0, 1]` at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageField {
    pub values: Vec<f64>,
    pub time_index: usize,
}

/// Voltage for a particle against a table; see [`FrontTemplate::reconstruct`].
pub fn reconstruct_tmv(
    particle: &Particle,
    table: &GeodesicTable,
    template: &FrontTemplate,
) -> Result<VoltageField> {
    template.reconstruct(particle, table)
}
