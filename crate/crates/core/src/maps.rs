//! Posterior estimators over a filter trace and map comparison.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::filter::{mode_probability, Ensemble, FilterTrace, Model};
use crate::geodesic::GeodesicTable;
use crate::mesh::TriMesh;
use crate::template::VoltageField;

/// Per-vertex activation time in ms; `None` marks a vertex never activated.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub times: Vec<Option<f64>>,
}

impl ActivationMap {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn activated_count(&self) -> usize {
        self.times.iter().filter(|t| t.is_some()).count()
    }

    /// Keep the first `m` vertices (a coarse mesh nested in a finer one).
    pub fn restrict(&self, m: usize) -> ActivationMap {
        ActivationMap { times: self.times[..m.min(self.times.len())].to_vec() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    ActivationProbability,
    EasPseudoProbability,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub values: Vec<f64>,
    pub kind: ScalarKind,
}

/// `Σ_i w_i v_i(x)` over the particles of an ensemble.
pub fn mean_tmv(ensemble: &Ensemble, model: &Model<'_>) -> Result<VoltageField> {
    let m = model.vertex_count();
    let mut acc = vec![0.0; m];
    let mut field = vec![0.0; m];
    for (p, &w) in ensemble.particles.iter().zip(&ensemble.weights) {
        if w == 0.0 {
            continue;
        }
        model.check_particle(p)?;
        model.voltage_into(p, &mut field);
        for (a, v) in acc.iter_mut().zip(&field) {
            *a += w * v;
        }
    }
    for a in acc.iter_mut() {
        *a = a.clamp(0.0, 1.0);
    }
    Ok(VoltageField { values: acc, time_index: ensemble.time_index })
}

/// Posterior probability that the voltage exceeds `threshold` at each vertex.
pub fn activation_probability(ensemble: &Ensemble, model: &Model<'_>, threshold: f64) -> Result<ScalarMap> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(crate::error::invalid("threshold", "must lie in (0, 1)"));
    }
    let m = model.vertex_count();
    let mut acc = vec![0.0; m];
    let mut field = vec![0.0; m];
    for (p, &w) in ensemble.particles.iter().zip(&ensemble.weights) {
        model.check_particle(p)?;
        model.voltage_into(p, &mut field);
        for (a, v) in acc.iter_mut().zip(&field) {
            if *v > threshold {
                *a += w;
            }
        }
    }
    for a in acc.iter_mut() {
        *a = a.clamp(0.0, 1.0);
    }
    Ok(ScalarMap { values: acc, kind: ScalarKind::ActivationProbability })
}

/// Mean voltage at every step of a trace, indexed by physical time
/// (backward traces are re-ordered).
pub fn mean_tmv_series(trace: &FilterTrace, model: &Model<'_>) -> Result<Vec<Vec<f64>>> {
    let records = trace.in_time_order();
    let fields = crate::par::map_range(records.len(), |k| mean_tmv(&records[k].ensemble, model));
    fields.into_iter().map(|f| f.map(|f| f.values)).collect()
}

/// Element-wise average of several voltage series of equal shape.
pub fn average_series(series: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let first = series.first().ok_or(Error::Empty("series list"))?;
    for s in series {
        if s.len() != first.len() {
            return Err(Error::DimensionMismatch { context: "series length", expected: first.len(), found: s.len() });
        }
        for (a, b) in s.iter().zip(first) {
            if a.len() != b.len() {
                return Err(Error::DimensionMismatch { context: "series width", expected: b.len(), found: a.len() });
            }
        }
    }
    let k = series.len() as f64;
    Ok((0..first.len())
        .map(|t| {
            (0..first[t].len())
                .map(|x| series.iter().map(|s| s[t][x]).sum::<f64>() / k)
                .collect()
        })
        .collect())
}

/// First upward 0.5-crossing per vertex, linearly interpolated; sample `k`
/// sits at time `t0 + k·dt`. A vertex already above 0.5 at the first sample
/// gets time `t0`.
pub fn activation_map_from_series(series: &[Vec<f64>], dt: f64, t0: f64) -> Result<ActivationMap> {
    let first = series.first().ok_or(Error::Empty("voltage series"))?;
    if !(dt > 0.0) {
        return Err(crate::error::invalid("dt", "must be positive"));
    }
    let m = first.len();
    let mut times = vec![None; m];
    for (x, slot) in times.iter_mut().enumerate() {
        let mut prev: Option<f64> = None;
        for (k, step) in series.iter().enumerate() {
            let v = step[x];
            if v >= 0.5 {
                let t = match prev {
                    None => t0,
                    Some(p) => {
                        let frac = if v > p { (0.5 - p) / (v - p) } else { 1.0 };
                        t0 + (k as f64 - 1.0 + frac) * dt
                    }
                };
                *slot = Some(t);
                break;
            }
            prev = Some(v);
        }
    }
    Ok(ActivationMap { times })
}

/// Activation map of a single trace on the physical time axis.
pub fn activation_map(trace: &FilterTrace, model: &Model<'_>, dt: f64) -> Result<ActivationMap> {
    activation_map_from_series(&mean_tmv_series(trace, model)?, dt, 0.0)
}

/// Activation map from the averaged mean-voltage series of several traces,
/// typically forward and backward runs of the same data.
pub fn combined_activation_map(traces: &[&FilterTrace], model: &Model<'_>, dt: f64) -> Result<ActivationMap> {
    let series = traces
        .iter()
        .map(|t| mean_tmv_series(t, model))
        .collect::<Result<Vec<_>>>()?;
    activation_map_from_series(&average_series(&series)?, dt, 0.0)
}

/// `P̃(x) = Σ_k Σ_i w_k^i · #{j : c_j^i = x}`.
pub fn eas_pseudo_probability(trace: &FilterTrace, vertex_count: usize) -> Result<ScalarMap> {
    let mut acc = vec![0.0; vertex_count];
    for rec in &trace.steps {
        for (p, &w) in rec.ensemble.particles.iter().zip(&rec.ensemble.weights) {
            for &c in &p.centers {
                if c >= vertex_count {
                    return Err(Error::IndexOutOfRange { index: c, len: vertex_count });
                }
                acc[c] += w;
            }
        }
    }
    Ok(ScalarMap { values: acc, kind: ScalarKind::EasPseudoProbability })
}

/// Per-vertex arithmetic mean of two maps of the same kind.
pub fn combine_fwd_bwd(map_f: &ScalarMap, map_b: &ScalarMap) -> Result<ScalarMap> {
    if map_f.values.len() != map_b.values.len() {
        return Err(Error::DimensionMismatch {
            context: "combined map length",
            expected: map_f.values.len(),
            found: map_b.values.len(),
        });
    }
    if map_f.kind != map_b.kind {
        return Err(crate::error::invalid("map kind", "cannot combine maps of different kinds"));
    }
    Ok(ScalarMap {
        values: map_f.values.iter().zip(&map_b.values).map(|(a, b)| 0.5 * (a + b)).collect(),
        kind: map_f.kind,
    })
}

/// Average of any number of maps of the same kind.
pub fn average_maps(maps: &[ScalarMap]) -> Result<ScalarMap> {
    let first = maps.first().ok_or(Error::Empty("map list"))?;
    let mut acc = vec![0.0; first.values.len()];
    for map in maps {
        if map.values.len() != acc.len() {
            return Err(Error::DimensionMismatch { context: "map length", expected: acc.len(), found: map.values.len() });
        }
        if map.kind != first.kind {
            return Err(crate::error::invalid("map kind", "cannot average maps of different kinds"));
        }
        for (a, v) in acc.iter_mut().zip(&map.values) {
            *a += v;
        }
    }
    let k = maps.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(ScalarMap { values: acc, kind: first.kind })
}

/// Mode probabilities at each step, in physical time order.
pub fn mode_timeline(trace: &FilterTrace) -> Vec<Vec<f64>> {
    trace
        .in_time_order()
        .iter()
        .map(|r| mode_probability(&r.ensemble, trace.n_modes))
        .collect()
}

/// Pearson coefficient with the share of vertices it was computed on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub r: f64,
    /// Vertices activated in both maps.
    pub support: usize,
    /// `support / vertex count`.
    pub coverage: f64,
}

/// Pearson correlation over the vertices activated in both maps.
pub fn compare_maps(map_a: &ActivationMap, map_b: &ActivationMap) -> Result<Correlation> {
    if map_a.len() != map_b.len() {
        return Err(Error::DimensionMismatch { context: "activation map length", expected: map_a.len(), found: map_b.len() });
    }
    let pairs: Vec<(f64, f64)> = map_a
        .times
        .iter()
        .zip(&map_b.times)
        .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
        .collect();
    let n = pairs.len();
    if n < 2 {
        return Err(Error::UndefinedCorrelation(n));
    }
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma) * (a - ma);
        sbb += (b - mb) * (b - mb);
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(Error::UndefinedCorrelation(n));
    }
    let r = (sab / libm::sqrt(saa * sbb)).clamp(-1.0, 1.0);
    Ok(Correlation { r, support: n, coverage: n as f64 / map_a.len() as f64 })
}

pub fn pearson_correlation(map_a: &ActivationMap, map_b: &ActivationMap) -> Result<f64> {
    compare_maps(map_a, map_b).map(|c| c.r)
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if values[b] >= v => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Positive values at least as large as every mesh neighbour, then thinned so
/// that no two kept maxima lie within `separation` of each other under
/// `table`. Sorted by decreasing value.
pub fn local_maxima(values: &[f64], mesh: &TriMesh, table: &GeodesicTable, separation: f64) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..values.len())
        .filter(|&x| values[x] > 0.0 && mesh.neighbors(x).iter().all(|&y| values[y] <= values[x]))
        .collect();
    candidates.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| table.distance(k, c) >= separation) {
            kept.push(c);
        }
    }
    kept
}

/// Mean of each mode's probability over the steps in `range` (physical time).
pub fn mean_mode_probability(timeline: &[Vec<f64>], range: core::ops::Range<usize>) -> Result<Vec<f64>> {
    let rows = timeline.get(range).ok_or(Error::Empty("mode timeline range"))?;
    let first = rows.first().ok_or(Error::Empty("mode timeline range"))?;
    let mut acc = vec![0.0; first.len()];
    for row in rows {
        for (a, p) in acc.iter_mut().zip(row) {
            *a += p;
        }
    }
    let k = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    Ok(acc)
}
