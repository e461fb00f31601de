//! Ground-truth activation generator: geodesic front propagation from
//! stimulation sites at constant speed, plus observation noise.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::forward::{zero_mean_in_place, TransferOperator};
use crate::geodesic::{build_table, Backend, GeodesicTable};
use crate::maps::ActivationMap;
use crate::mesh::{set_conductivity, ConductivitySpec, Region, Tensor, TriMesh};
use crate::template::FrontTemplate;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StimSite {
    pub vertex: usize,
    pub delay_ms: f64,
}

/// Conduction block: conductivity inside `region` multiplied by `factor`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub region: Region,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthSpec {
    pub sites: Vec<StimSite>,
    /// Conduction speed (mm/ms).
    pub speed: f64,
    pub duration_ms: f64,
    pub dt_ms: f64,
}

impl TruthSpec {
    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        if self.sites.is_empty() {
            return Err(invalid("sites", "at least one stimulation site is required"));
        }
        for s in &self.sites {
            if s.vertex >= vertex_count {
                return Err(Error::IndexOutOfRange { index: s.vertex, len: vertex_count });
            }
            if !(s.delay_ms >= 0.0) || !s.delay_ms.is_finite() {
                return Err(invalid("delay_ms", "must be finite and nonnegative"));
            }
        }
        if !(self.speed > 0.0) || !self.speed.is_finite() {
            return Err(invalid("speed", "must be positive"));
        }
        if !(self.dt_ms > 0.0) || !self.dt_ms.is_finite() {
            return Err(invalid("dt_ms", "must be positive"));
        }
        if !(self.duration_ms >= 0.0) || !self.duration_ms.is_finite() {
            return Err(invalid("duration_ms", "must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Samples at `0, dt, …, duration`.
    pub fn step_count(&self) -> usize {
        libm::floor(self.duration_ms / self.dt_ms + 1e-9) as usize + 1
    }
}

/// Noise added to an observation sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseInfo {
    pub level: f64,
    pub std: f64,
    /// `10 log10(Σ Y² / Σ noise²)` over the realized noise.
    pub snr_db: f64,
    /// The signal was identically zero, so no noise was added.
    pub zero_signal: bool,
}

/// `n × q` electrode potentials sampled every `dt_ms`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeq {
    pub data: Vec<Vec<f64>>,
    pub dt_ms: f64,
    pub noise: Option<NoiseInfo>,
}

impl ObservationSeq {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn electrode_count(&self) -> usize {
        self.data.first().map_or(0, |r| r.len())
    }

    /// Mean of `|Y|` over all entries.
    pub fn mean_abs(&self) -> f64 {
        let n: usize = self.data.iter().map(|r| r.len()).sum();
        if n == 0 {
            return 0.0;
        }
        self.data.iter().flatten().map(|x| libm::fabs(*x)).sum::<f64>() / n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub activation: ActivationMap,
    /// Voltage per step, one value per vertex.
    pub voltages: Vec<Vec<f64>>,
    pub observations: ObservationSeq,
}

/// `t(x) = min_i (delay_i + d(x, s_i) / speed)`.
pub fn activation_times(spec: &TruthSpec, table: &GeodesicTable) -> Result<Vec<f64>> {
    let m = table.vertex_count();
    spec.validate(m)?;
    Ok((0..m)
        .map(|x| {
            spec.sites
                .iter()
                .map(|s| s.delay_ms + table.distance(s.vertex, x) / spec.speed)
                .fold(f64::INFINITY, f64::min)
        })
        .collect())
}

/// Propagate the truth and record noiseless zero-mean observations.
pub fn simulate_truth(
    spec: &TruthSpec,
    table: &GeodesicTable,
    template: &FrontTemplate,
    operator: &TransferOperator,
) -> Result<Truth> {
    let m = table.vertex_count();
    if operator.vertex_count() != m {
        return Err(Error::DimensionMismatch {
            context: "operator vertex count",
            expected: m,
            found: operator.vertex_count(),
        });
    }
    let t_act = activation_times(spec, table)?;
    let n = spec.step_count();
    let q = operator.electrode_count();
    let steps = crate::par::map_range(n, |k| {
        let t = k as f64 * spec.dt_ms;
        let v: Vec<f64> = t_act
            .iter()
            .map(|&ta| template.eval(spec.speed * (t - ta)).clamp(0.0, 1.0))
            .collect();
        let mut y = vec![0.0; q];
        operator.apply_into(&v, &mut y);
        zero_mean_in_place(&mut y);
        (v, y)
    });
    let (voltages, data): (Vec<_>, Vec<_>) = steps.into_iter().unzip();
    let end = (n - 1) as f64 * spec.dt_ms;
    let activation = ActivationMap {
        times: t_act.iter().map(|&t| if t <= end { Some(t) } else { None }).collect(),
    };
    Ok(Truth {
        activation,
        voltages,
        observations: ObservationSeq { data, dt_ms: spec.dt_ms, noise: None },
    })
}

const NOISE_PURPOSE: u64 = 0x6e_6f69_7365;

/// White Gaussian noise with std `level · mean|Y|`.
pub fn add_noise(obs: &ObservationSeq, level: f64, seed: u64) -> Result<ObservationSeq> {
    if !(level > 0.0) || !level.is_finite() {
        return Err(invalid("level", "noise level must be positive"));
    }
    if obs.is_empty() {
        return Err(Error::Empty("observation sequence"));
    }
    let std = level * obs.mean_abs();
    if std == 0.0 {
        return Ok(ObservationSeq {
            data: obs.data.clone(),
            dt_ms: obs.dt_ms,
            noise: Some(NoiseInfo { level, std: 0.0, snr_db: f64::INFINITY, zero_signal: true }),
        });
    }
    let mut rng = crate::filter::stream_rng(seed, 0, NOISE_PURPOSE, 0);
    let (mut signal, mut noise) = (0.0, 0.0);
    let data = obs
        .data
        .iter()
        .map(|row| {
            row.iter()
                .map(|&y| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let e = std * z;
                    signal += y * y;
                    noise += e * e;
                    y + e
                })
                .collect()
        })
        .collect();
    Ok(ObservationSeq {
        data,
        dt_ms: obs.dt_ms,
        noise: Some(NoiseInfo {
            level,
            std,
            snr_db: 10.0 * libm::log10(signal / noise),
            zero_signal: false,
        }),
    })
}

/// Homogeneous table followed by one table per block, each built on `mesh`
/// with the block region scaled by its factor over the `base` tensor.
pub fn make_block_metrics(
    mesh: &TriMesh,
    base: &Tensor,
    blocks: &[BlockSpec],
    backend: Backend,
) -> Result<Vec<GeodesicTable>> {
    let mut specs = vec![ConductivitySpec::RegionScaled { base: *base, region: Region::Empty, factor: 1.0 }];
    specs.extend(blocks.iter().map(|b| ConductivitySpec::RegionScaled {
        base: *base,
        region: b.region.clone(),
        factor: b.factor,
    }));
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let m = set_conductivity(mesh, spec)?;
            let mut t = build_table(&m, backend)?;
            t.set_label(if i == 0 { alloc::string::String::from("homogeneous") } else { alloc::format!("block{i}") });
            Ok(t)
        })
        .collect()
}

/// One metric with several blocks applied together (factors multiply where
/// regions overlap).
pub fn combined_block_metric(
    mesh: &TriMesh,
    base: &Tensor,
    blocks: &[BlockSpec],
    backend: Backend,
) -> Result<GeodesicTable> {
    let mut scale = vec![1.0; mesh.vertex_count()];
    for b in blocks {
        if !(b.factor > 0.0) || !b.factor.is_finite() {
            return Err(Error::InvalidConductivity(alloc::format!(
                "region factor must be positive, got {}",
                b.factor
            )));
        }
        for (s, inside) in scale.iter_mut().zip(b.region.members(mesh, base)?) {
            if inside {
                *s *= b.factor;
            }
        }
    }
    let field = scale.iter().map(|s| base * *s).collect();
    build_table(&mesh.with_conductivity(field)?, backend)
}
