//! Scene construction, simulation, filter runs and summary statistics.

use std::path::{Path, PathBuf};

use ecgi_sir_core::filter::{run_filter, Direction, FilterTrace, Mode, Model};
use ecgi_sir_core::maps::{
    self, activation_map, combine_fwd_bwd, compare_maps, eas_pseudo_probability, local_maxima, mode_timeline,
    ActivationMap, Correlation, ScalarMap,
};
use ecgi_sir_core::mesh::{set_conductivity, ElectrodeSet, MeshKind, Tensor, TriMesh};
use ecgi_sir_core::synth::{activation_times, add_noise, combined_block_metric, simulate_truth, ObservationSeq};
use ecgi_sir_core::{build_dipole_layer, build_table, make_test_mesh, Backend, FrontTemplate, GeodesicTable, TransferOperator};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, MeshShape};
use crate::error::{AppError, Result};
use crate::io;

/// Minimum geodesic separation between EAS peaks when several sites are sought.
pub const PEAK_SEPARATION_MM: f64 = 15.0;
/// Voltage level that counts as activated for probability maps.
pub const ACTIVATION_THRESHOLD: f64 = 0.5;

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn generated_mesh(cfg: &ExperimentConfig, subdivisions: u32) -> Result<TriMesh> {
    let kind = match cfg.mesh.shape {
        MeshShape::Sphere => MeshKind::Sphere,
        MeshShape::Ellipsoid => MeshKind::Ellipsoid { scales: cfg.mesh.scales },
    };
    Ok(make_test_mesh(kind, cfg.mesh.radius_mm, subdivisions)?)
}

/// Everything the filter needs: mesh, electrodes, operator and one metric per mode.
pub struct Scene {
    pub mesh: TriMesh,
    pub electrodes: ElectrodeSet,
    pub operator: TransferOperator,
    pub tables: Vec<GeodesicTable>,
    pub labels: Vec<String>,
    pub template: FrontTemplate,
    pub backend: Backend,
    base_dir: PathBuf,
}

impl Scene {
    /// Relative paths in `cfg` are resolved against `base_dir`.
    pub fn build(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Scene> {
        let backend: Backend = cfg.mesh.backend.into();
        let mesh = match &cfg.mesh.path {
            Some(p) => io::load_mesh(&resolve(base_dir, p))?,
            None => generated_mesh(cfg, cfg.mesh.subdivisions)?,
        };
        let electrodes = match &cfg.electrodes.path {
            Some(p) => ElectrodeSet::new(io::load_electrodes(&resolve(base_dir, p))?, &mesh)?,
            None => ElectrodeSet::shell(&mesh, cfg.electrodes.count, cfg.electrodes.radius_mm)?,
        };
        let operator = match &cfg.operator.path {
            Some(p) => {
                let op = io::read_operator(&resolve(base_dir, p), &mesh)?;
                if op.electrode_count() != electrodes.len() {
                    return Err(AppError::Config(format!(
                        "operator has {} rows but {} electrodes are configured",
                        op.electrode_count(),
                        electrodes.len()
                    )));
                }
                op
            }
            None => build_dipole_layer(&mesh, &electrodes)?,
        };
        let id = Tensor::identity();
        let (tables, labels) = if cfg.modes.is_empty() {
            let mut t = build_table(&mesh, backend)?;
            t.set_label("homogeneous");
            (vec![t], vec!["homogeneous".to_string()])
        } else {
            let tables = cfg
                .modes
                .par_iter()
                .map(|m| {
                    let blocks: Vec<_> = m.blocks.iter().map(|b| b.to_spec()).collect();
                    let mut t = combined_block_metric(&mesh, &id, &blocks, backend)?;
                    t.set_label(m.label.clone());
                    Ok(t)
                })
                .collect::<Result<Vec<_>>>()?;
            (tables, cfg.mode_labels())
        };
        let template = FrontTemplate::new(cfg.filter.width)?;
        Ok(Scene { mesh, electrodes, operator, tables, labels, template, backend, base_dir: base_dir.to_path_buf() })
    }

    pub fn model(&self) -> Result<Model<'_>> {
        let modes = self.tables.iter().map(|table| Mode { table, operator: &self.operator }).collect();
        Ok(Model::new(modes, self.template)?)
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    /// Metric used for reporting distances (the first mode).
    pub fn reference_table(&self) -> &GeodesicTable {
        &self.tables[0]
    }

    /// Generate the ground truth and one noisy observation sequence per repetition.
    pub fn simulate(&self, cfg: &ExperimentConfig) -> Result<Simulation> {
        let truth_mesh = match (&cfg.mesh.truth_path, &cfg.mesh.path) {
            (Some(p), _) => io::load_mesh(&resolve(&self.base_dir, p))?,
            (None, Some(_)) => self.mesh.clone(),
            (None, None) => generated_mesh(cfg, cfg.mesh.truth_subdivisions)?,
        };
        let truth_mesh = with_truth_conductivity(&truth_mesh, cfg)?;
        let to_truth = nearest_vertices(&self.mesh, &truth_mesh);
        let mut spec = cfg.truth.to_spec();
        spec.validate(self.vertex_count())?;
        for s in spec.sites.iter_mut() {
            s.vertex = to_truth[s.vertex];
        }
        let table = build_table(&truth_mesh, self.backend)?;
        let electrodes = ElectrodeSet::new(self.electrodes.positions().to_vec(), &truth_mesh)?;
        let operator = if cfg.mesh.truth_path.is_none() && cfg.mesh.path.is_some() {
            self.operator.clone()
        } else {
            build_dipole_layer(&truth_mesh, &electrodes)?
        };
        let truth = simulate_truth(&spec, &table, &self.template, &operator)?;
        let times = activation_times(&spec, &table)?;
        let activation = ActivationMap { times: to_truth.iter().map(|&v| truth.activation.times[v]).collect() };
        let observations = (0..cfg.reps)
            .map(|r| {
                if cfg.truth.noise_level > 0.0 {
                    add_noise(&truth.observations, cfg.truth.noise_level, rep_seed(cfg.seed, r))
                } else {
                    Ok(truth.observations.clone())
                }
            })
            .collect::<ecgi_sir_core::Result<Vec<_>>>()?;
        Ok(Simulation {
            activation,
            raw_times: to_truth.iter().map(|&v| times[v]).collect(),
            truth_vertex_count: truth_mesh.vertex_count(),
            clean: truth.observations,
            observations,
        })
    }
}

/// Seed used for repetition `rep` (noise and filter alike).
pub fn rep_seed(seed: u64, rep: usize) -> u64 {
    seed.wrapping_add(rep as u64)
}

fn with_truth_conductivity(mesh: &TriMesh, cfg: &ExperimentConfig) -> Result<TriMesh> {
    let base = set_conductivity(mesh, &cfg.truth.conductivity.to_spec())?;
    if cfg.truth.blocks.is_empty() {
        return Ok(base);
    }
    let mut field: Vec<Tensor> = (0..base.vertex_count()).map(|i| base.conductivity(i)).collect();
    let id = Tensor::identity();
    for b in &cfg.truth.blocks {
        let spec = b.to_spec();
        if !(spec.factor > 0.0) || !spec.factor.is_finite() {
            return Err(AppError::Config(format!("block factor must be positive, got {}", spec.factor)));
        }
        for (t, inside) in field.iter_mut().zip(spec.region.members(&base, &id)?) {
            if inside {
                *t *= spec.factor;
            }
        }
    }
    Ok(base.with_conductivity(field)?)
}

/// For every vertex of `coarse`, the nearest vertex of `fine` (exact for nested meshes).
pub fn nearest_vertices(coarse: &TriMesh, fine: &TriMesh) -> Vec<usize> {
    let fv = fine.vertices();
    coarse
        .vertices()
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            if i < fv.len() && fv[i] == *p {
                return i;
            }
            let mut best = (f64::INFINITY, 0);
            for (j, q) in fv.iter().enumerate() {
                let d = (p - q).norm_squared();
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

pub struct Simulation {
    /// Truth activation times on the filter mesh (`None` past the end of the recording).
    pub activation: ActivationMap,
    /// Unclipped activation times on the filter mesh.
    pub raw_times: Vec<f64>,
    pub truth_vertex_count: usize,
    /// Noiseless zero-mean electrode potentials.
    pub clean: ObservationSeq,
    pub observations: Vec<ObservationSeq>,
}

/// One filter run.
pub struct Run {
    pub rep: usize,
    pub seed: u64,
    pub trace: FilterTrace,
}

pub fn directions(spec: &str) -> Option<Vec<Direction>> {
    match spec {
        "fwd" | "forward" => Some(vec![Direction::Forward]),
        "bwd" | "backward" => Some(vec![Direction::Backward]),
        "both" => Some(vec![Direction::Forward, Direction::Backward]),
        _ => None,
    }
}

/// Run every (repetition, direction) pair on a pool of `workers` threads.
/// Results come back ordered by repetition, then direction, and do not depend
/// on `workers`.
pub fn run_all(
    scene: &Scene,
    cfg: &ExperimentConfig,
    observations: &[ObservationSeq],
    dirs: &[Direction],
    workers: usize,
) -> Result<Vec<Run>> {
    let model = scene.model()?;
    let jobs: Vec<(usize, Direction)> =
        (0..observations.len()).flat_map(|r| dirs.iter().map(move |&d| (r, d))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| AppError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(rep, direction)| {
                let seed = rep_seed(cfg.seed, rep);
                let fc = cfg.filter.to_config(direction, seed);
                let trace = run_filter(&observations[rep].data, &model, &fc)?;
                Ok(Run { rep, seed, trace })
            })
            .collect()
    })
}

/// Maps derived from the runs of one repetition.
pub struct RepMaps {
    pub rep: usize,
    pub activation: Vec<(Direction, ActivationMap)>,
    pub combined_activation: ActivationMap,
    pub eas: Vec<(Direction, ScalarMap)>,
    pub combined_eas: ScalarMap,
    pub timelines: Vec<(Direction, Vec<Vec<f64>>)>,
}

pub fn rep_maps(scene: &Scene, runs: &[&Run], dt_ms: f64) -> Result<RepMaps> {
    let model = scene.model()?;
    let rep = runs.first().map(|r| r.rep).ok_or_else(|| AppError::Config("no runs to map".into()))?;
    let traces: Vec<&FilterTrace> = runs.iter().map(|r| &r.trace).collect();
    let activation = traces
        .iter()
        .map(|t| Ok((t.direction, activation_map(t, &model, dt_ms)?)))
        .collect::<Result<Vec<_>>>()?;
    let combined_activation = if traces.len() == 1 {
        activation[0].1.clone()
    } else {
        maps::combined_activation_map(&traces, &model, dt_ms)?
    };
    let eas = traces
        .iter()
        .map(|t| Ok((t.direction, eas_pseudo_probability(t, scene.vertex_count())?)))
        .collect::<Result<Vec<_>>>()?;
    let combined_eas = match eas.as_slice() {
        [(_, f), (_, b)] => combine_fwd_bwd(f, b)?,
        _ => maps::average_maps(&eas.iter().map(|e| e.1.clone()).collect::<Vec<_>>())?,
    };
    let timelines = traces.iter().map(|t| (t.direction, mode_timeline(t))).collect();
    Ok(RepMaps { rep, activation, combined_activation, eas, combined_eas, timelines })
}

/// Outputs averaged over every run: the activation map of the averaged
/// mean-voltage series, the average combined EAS map and the average mode timeline.
pub struct AveragedMaps {
    pub activation: ActivationMap,
    pub eas: ScalarMap,
    pub timeline: Vec<Vec<f64>>,
}

pub fn averaged_maps(scene: &Scene, runs: &[Run], reps: &[RepMaps], dt_ms: f64) -> Result<AveragedMaps> {
    let model = scene.model()?;
    let traces: Vec<&FilterTrace> = runs.iter().map(|r| &r.trace).collect();
    let activation = maps::combined_activation_map(&traces, &model, dt_ms)?;
    let eas = maps::average_maps(&reps.iter().map(|m| m.combined_eas.clone()).collect::<Vec<_>>())?;
    let timelines: Vec<Vec<Vec<f64>>> = traces.iter().map(|t| mode_timeline(t)).collect();
    let timeline = maps::average_series(&timelines)?;
    Ok(AveragedMaps { activation, eas, timeline })
}

/// Group runs by repetition, keeping run order within each group.
pub fn by_rep(runs: &[Run]) -> Vec<Vec<&Run>> {
    let mut groups: Vec<Vec<&Run>> = Vec::new();
    for r in runs {
        match groups.last_mut() {
            Some(g) if g[0].rep == r.rep => g.push(r),
            _ => groups.push(vec![r]),
        }
    }
    groups
}

/// The `k` strongest separated peaks of an EAS map.
pub fn eas_peaks(scene: &Scene, eas: &ScalarMap, k: usize) -> Vec<usize> {
    let mut peaks = local_maxima(&eas.values, &scene.mesh, scene.reference_table(), PEAK_SEPARATION_MM);
    peaks.truncate(k);
    peaks
}

/// Distance from each site to the nearest of `peaks` (infinite if there are none).
pub fn site_errors(table: &GeodesicTable, sites: &[usize], peaks: &[usize]) -> Vec<f64> {
    sites
        .iter()
        .map(|&s| peaks.iter().map(|&p| table.distance(s, p)).fold(f64::INFINITY, f64::min))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub seed: u64,
    pub reps: usize,
    pub directions: Vec<String>,
    /// Combined activation-map correlation with the truth, per repetition.
    pub pearson_r: Vec<f64>,
    pub pearson_r_mean: f64,
    pub coverage: Vec<f64>,
    /// Per-site distance to the nearest EAS peak of the repetition-averaged map.
    pub eas_error_mm: Vec<f64>,
    pub eas_peaks: Vec<usize>,
    pub mode_labels: Vec<String>,
    /// Mode probability averaged over all steps, runs and repetitions.
    pub mode_prob_mean: Vec<f64>,
}

/// Summary statistics over all repetitions.
pub fn report(
    scene: &Scene,
    cfg: &ExperimentConfig,
    maps: &[RepMaps],
    truth: &ActivationMap,
    stamp: &io::Stamp,
) -> Result<Report> {
    let parts = ReportInputs {
        directions: maps.first().map(|m| m.activation.iter().map(|a| a.0).collect()).unwrap_or_default(),
        combined_activation: maps.iter().map(|m| m.combined_activation.clone()).collect(),
        combined_eas: maps.iter().map(|m| m.combined_eas.clone()).collect(),
        timelines: maps.iter().flat_map(|m| m.timelines.iter().map(|t| t.1.clone())).collect(),
    };
    report_from_parts(scene, cfg, &parts, truth, stamp)
}

/// Per-repetition combined maps plus every mode timeline.
pub struct ReportInputs {
    pub directions: Vec<Direction>,
    pub combined_activation: Vec<ActivationMap>,
    pub combined_eas: Vec<ScalarMap>,
    pub timelines: Vec<Vec<Vec<f64>>>,
}

pub fn report_from_parts(
    scene: &Scene,
    cfg: &ExperimentConfig,
    parts: &ReportInputs,
    truth: &ActivationMap,
    stamp: &io::Stamp,
) -> Result<Report> {
    let corr: Vec<Option<Correlation>> =
        parts.combined_activation.iter().map(|a| compare_maps(a, truth).ok()).collect();
    let pearson_r: Vec<f64> = corr.iter().map(|c| c.map_or(f64::NAN, |c| c.r)).collect();
    let coverage: Vec<f64> = corr.iter().map(|c| c.map_or(0.0, |c| c.coverage)).collect();
    let eas = maps::average_maps(&parts.combined_eas)?;
    let sites: Vec<usize> = cfg.truth.sites.iter().map(|s| s.vertex).collect();
    let peaks = eas_peaks(scene, &eas, sites.len());
    let eas_error_mm = site_errors(scene.reference_table(), &sites, &peaks);
    let timelines: Vec<&Vec<Vec<f64>>> = parts.timelines.iter().collect();
    Ok(Report {
        config_hash: stamp.config_hash.clone(),
        seed: stamp.seed,
        reps: parts.combined_activation.len(),
        directions: parts.directions.iter().map(|d| d.name().to_string()).collect(),
        pearson_r_mean: pearson_r.iter().sum::<f64>() / pearson_r.len().max(1) as f64,
        pearson_r,
        coverage,
        eas_error_mm,
        eas_peaks: peaks,
        mode_labels: scene.labels.clone(),
        mode_prob_mean: mean_over_timelines(&timelines, scene.labels.len()),
    })
}

pub fn mean_over_timelines(timelines: &[&Vec<Vec<f64>>], n_modes: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n_modes];
    let mut count = 0usize;
    for t in timelines {
        for row in t.iter() {
            for (a, p) in acc.iter_mut().zip(row) {
                *a += p;
            }
            count += 1;
        }
    }
    acc.iter().map(|a| a / count.max(1) as f64).collect()
}
