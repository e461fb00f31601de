//! Linear map from per-vertex transmembrane voltage to electrode potentials.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mesh::{ElectrodeSet, TriMesh};
use crate::template::VoltageField;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Loaded,
    DipoleLayer,
}

/// `q × m` transfer matrix. Stored vertex-major so that a voltage field with
/// many exact zeros costs only its support.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferOperator {
    q: usize,
    m: usize,
    columns: Vec<f64>,
    /// `O · 1`.
    total: Vec<f64>,
    provenance: Provenance,
    mesh_checksum: u64,
}

impl TransferOperator {
    /// Build from a row-major `q × m` matrix (electrode × vertex).
    pub fn from_row_major(
        q: usize,
        m: usize,
        rows: &[f64],
        provenance: Provenance,
        mesh_checksum: u64,
    ) -> Result<Self> {
        if rows.len() != q * m {
            return Err(Error::DimensionMismatch {
                context: "transfer matrix entries",
                expected: q * m,
                found: rows.len(),
            });
        }
        if q == 0 || m == 0 {
            return Err(Error::Empty("transfer matrix"));
        }
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(crate::error::invalid("matrix", "transfer matrix has non-finite entries"));
        }
        let mut columns = vec![0.0; q * m];
        for e in 0..q {
            for v in 0..m {
                columns[v * q + e] = rows[e * m + v];
            }
        }
        let mut total = vec![0.0; q];
        for col in columns.chunks_exact(q) {
            for (t, c) in total.iter_mut().zip(col) {
                *t += c;
            }
        }
        Ok(TransferOperator { q, m, columns, total, provenance, mesh_checksum })
    }

    pub fn electrode_count(&self) -> usize {
        self.q
    }

    pub fn vertex_count(&self) -> usize {
        self.m
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn mesh_checksum(&self) -> u64 {
        self.mesh_checksum
    }

    pub fn entry(&self, electrode: usize, vertex: usize) -> f64 {
        self.columns[vertex * self.q + electrode]
    }

    /// Row-major copy of the matrix.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut rows = vec![0.0; self.q * self.m];
        for v in 0..self.m {
            for e in 0..self.q {
                rows[e * self.m + v] = self.columns[v * self.q + e];
            }
        }
        rows
    }

    pub fn apply(&self, field: &VoltageField) -> Result<Vec<f64>> {
        self.apply_slice(&field.values)
    }

    pub fn apply_slice(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.m {
            return Err(Error::DimensionMismatch {
                context: "voltage field length",
                expected: self.m,
                found: values.len(),
            });
        }
        let mut out = vec![0.0; self.q];
        self.apply_into(values, &mut out);
        Ok(out)
    }

    /// `out = O · values`; lengths are not checked. Mostly-activated fields
    /// are computed as `O · 1 − O · (1 − values)`.
    pub(crate) fn apply_into(&self, values: &[f64], out: &mut [f64]) {
        let nonzero = values.iter().filter(|&&x| x != 0.0).count();
        let non_one = values.iter().filter(|&&x| x != 1.0).count();
        if non_one < nonzero {
            out.copy_from_slice(&self.total);
            for (v, &x) in values.iter().enumerate() {
                if x != 1.0 {
                    let col = &self.columns[v * self.q..(v + 1) * self.q];
                    let y = 1.0 - x;
                    for (o, c) in out.iter_mut().zip(col) {
                        *o -= y * c;
                    }
                }
            }
            return;
        }
        out.iter_mut().for_each(|x| *x = 0.0);
        for (v, &x) in values.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let col = &self.columns[v * self.q..(v + 1) * self.q];
            if x == 1.0 {
                for (o, c) in out.iter_mut().zip(col) {
                    *o += c;
                }
            } else {
                for (o, c) in out.iter_mut().zip(col) {
                    *o += x * c;
                }
            }
        }
    }
}

/// Equivalent dipole layer: entry `(e, v) = −A_v (r_ev · n_v) / (4π |r_ev|³)`
/// with `r_ev` pointing from vertex `v` to electrode `e`.
pub fn build_dipole_layer(mesh: &TriMesh, electrodes: &ElectrodeSet) -> Result<TransferOperator> {
    let q = electrodes.len();
    let m = mesh.vertex_count();
    let mut rows = vec![0.0; q * m];
    let k = 1.0 / (4.0 * core::f64::consts::PI);
    for (e, p) in electrodes.positions().iter().enumerate() {
        for v in 0..m {
            let r = p - mesh.vertex(v);
            let len = r.norm();
            if !(len > 0.0) {
                return Err(Error::SingularKernel { electrode: e, vertex: v });
            }
            rows[e * m + v] = -k * mesh.vertex_area(v) * r.dot(&mesh.normal(v)) / (len * len * len);
        }
    }
    TransferOperator::from_row_major(q, m, &rows, Provenance::DipoleLayer, mesh.checksum())
}

/// Subtract the mean; potentials are defined up to an additive constant.
pub fn zero_mean(vec: &[f64]) -> Vec<f64> {
    let mut out = vec.to_vec();
    zero_mean_in_place(&mut out);
    out
}

pub(crate) fn zero_mean_in_place(vec: &mut [f64]) {
    if vec.is_empty() {
        return;
    }
    let mean = vec.iter().sum::<f64>() / vec.len() as f64;
    vec.iter_mut().for_each(|x| *x -= mean);
}
