//! Sequential importance resampling over wavefront states.
//!
//! A particle holds `l` activation centers (mesh vertices), one geodesic
//! radius per center, and a discrete mode selecting which (metric, operator)
//! pair it is evaluated against. One filter step is
//! [`predict`] → [`correct`] → [`maybe_resample`]; [`run_filter`] drives the
//! steps over an observation sequence in either time direction.
//!
//! Every random draw comes from a ChaCha stream keyed by
//! `(seed, step, purpose)` with the particle index as stream id, so results do
//! not depend on how particles are scheduled across threads.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::forward::{zero_mean_in_place, TransferOperator};
use crate::geodesic::GeodesicTable;
use crate::template::FrontTemplate;

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub centers: Vec<usize>,
    /// Geodesic radius of each center's ball (mm), never negative.
    pub radii: Vec<f64>,
    pub mode: usize,
}

/// Weighted particle cloud at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
    pub weights: Vec<f64>,
    pub time_index: usize,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResamplingScheme {
    Multinomial,
    Systematic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub n_particles: usize,
    pub centers_per_particle: usize,
    /// Standard deviation of the radius random walk (mm).
    pub sigma_r: f64,
    /// Mean of the exponential bound on center displacement (mm).
    pub lambda_mm: f64,
    /// Observation noise standard deviation.
    pub sigma_w: f64,
    /// Front template half-width (mm).
    pub width: f64,
    pub direction: Direction,
    /// Resample when `N_eff < resample_fraction · N`.
    pub resample_fraction: f64,
    pub mode_keep_prob: f64,
    pub r_init_fwd: f64,
    pub r_init_bwd: f64,
    pub seed: u64,
    pub resampling: ResamplingScheme,
    /// When set, radii are snapped to the nearest grid value after each walk.
    pub radius_grid: Option<Vec<f64>>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_particles: 1000,
            centers_per_particle: 3,
            sigma_r: 10.0,
            lambda_mm: 5.0,
            sigma_w: 0.02,
            width: 5.0,
            direction: Direction::Backward,
            resample_fraction: 1.0 / 3.0,
            mode_keep_prob: 0.99,
            r_init_fwd: 1.0,
            r_init_bwd: 150.0,
            seed: 0,
            resampling: ResamplingScheme::Multinomial,
            radius_grid: None,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(invalid("n_particles", "must be at least 1"));
        }
        if self.centers_per_particle == 0 {
            return Err(invalid("centers_per_particle", "must be at least 1"));
        }
        let nonneg = [
            ("sigma_r", self.sigma_r),
            ("lambda_mm", self.lambda_mm),
            ("r_init_fwd", self.r_init_fwd),
            ("r_init_bwd", self.r_init_bwd),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(name, "must be finite and nonnegative"));
            }
        }
        if !(self.sigma_w > 0.0) || !self.sigma_w.is_finite() {
            return Err(invalid("sigma_w", "must be positive"));
        }
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(invalid("width", "must be positive"));
        }
        if !(self.resample_fraction > 0.0 && self.resample_fraction <= 1.0) {
            return Err(invalid("resample_fraction", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.mode_keep_prob) {
            return Err(invalid("mode_keep_prob", "must lie in [0, 1]"));
        }
        if let Some(grid) = &self.radius_grid {
            if grid.is_empty() || grid.iter().any(|r| !(*r >= 0.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(invalid("radius_grid", "must be nonempty, nonnegative and strictly increasing"));
            }
        }
        Ok(())
    }

    pub fn initial_radius(&self) -> f64 {
        let r = match self.direction {
            Direction::Forward => self.r_init_fwd,
            Direction::Backward => self.r_init_bwd,
        };
        self.snap_radius(r)
    }

    fn snap_radius(&self, r: f64) -> f64 {
        match &self.radius_grid {
            None => r,
            Some(grid) => {
                let k = grid.partition_point(|&g| g < r);
                if k == 0 {
                    grid[0]
                } else if k == grid.len() || r - grid[k - 1] <= grid[k] - r {
                    grid[k - 1]
                } else {
                    grid[k]
                }
            }
        }
    }
}

/// One (geodesic metric, transfer operator) pair a particle can select.
#[derive(Debug, Clone, Copy)]
pub struct Mode<'a> {
    pub table: &'a GeodesicTable,
    pub operator: &'a TransferOperator,
}

/// The modes a filter chooses among plus the front template.
#[derive(Debug, Clone)]
pub struct Model<'a> {
    modes: Vec<Mode<'a>>,
    template: FrontTemplate,
}

impl<'a> Model<'a> {
    pub fn new(modes: Vec<Mode<'a>>, template: FrontTemplate) -> Result<Self> {
        let first = modes.first().ok_or(Error::Empty("mode set"))?;
        let m = first.table.vertex_count();
        let q = first.operator.electrode_count();
        for mode in &modes {
            if mode.table.vertex_count() != m || mode.operator.vertex_count() != m {
                return Err(Error::DimensionMismatch {
                    context: "mode vertex count",
                    expected: m,
                    found: if mode.table.vertex_count() != m {
                        mode.table.vertex_count()
                    } else {
                        mode.operator.vertex_count()
                    },
                });
            }
            if mode.operator.electrode_count() != q {
                return Err(Error::DimensionMismatch {
                    context: "mode electrode count",
                    expected: q,
                    found: mode.operator.electrode_count(),
                });
            }
        }
        Ok(Model { modes, template })
    }

    /// Single-mode model.
    pub fn single(table: &'a GeodesicTable, operator: &'a TransferOperator, template: FrontTemplate) -> Result<Self> {
        Model::new(vec![Mode { table, operator }], template)
    }

    pub fn modes(&self) -> &[Mode<'a>] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.modes[0].table.vertex_count()
    }

    pub fn electrode_count(&self) -> usize {
        self.modes[0].operator.electrode_count()
    }

    pub fn template(&self) -> &FrontTemplate {
        &self.template
    }

    pub fn table(&self, mode: usize) -> &'a GeodesicTable {
        self.modes[mode].table
    }

    pub(crate) fn check_particle(&self, p: &Particle) -> Result<()> {
        let m = self.vertex_count();
        if p.mode >= self.modes.len() {
            return Err(Error::IndexOutOfRange { index: p.mode, len: self.modes.len() });
        }
        if let Some(&c) = p.centers.iter().find(|&&c| c >= m) {
            return Err(Error::IndexOutOfRange { index: c, len: m });
        }
        Ok(())
    }

    /// Voltage field of `particle` written into `out` (length `m`).
    pub(crate) fn voltage_into(&self, particle: &Particle, out: &mut [f64]) {
        let table = self.modes[particle.mode].table;
        self.template
            .reconstruct_into(&particle.centers, &particle.radii, table, out);
    }

    pub fn voltage(&self, particle: &Particle) -> Result<Vec<f64>> {
        self.check_particle(particle)?;
        let mut out = vec![0.0; self.vertex_count()];
        self.voltage_into(particle, &mut out);
        Ok(out)
    }

    /// Zero-mean model potentials of a particle.
    fn centered_potentials(&self, particle: &Particle, field: &mut [f64], out: &mut [f64]) {
        self.voltage_into(particle, field);
        self.modes[particle.mode].operator.apply_into(field, out);
        zero_mean_in_place(out);
    }

    /// `−‖Y₀ − (O v)₀‖² / (2σ_w²)` with `Y₀` an already zero-mean observation.
    fn log_likelihood_centered(&self, particle: &Particle, centered_obs: &[f64], sigma_w: f64) -> f64 {
        let mut field = vec![0.0; self.vertex_count()];
        let mut pot = vec![0.0; self.electrode_count()];
        self.centered_potentials(particle, &mut field, &mut pot);
        let sq: f64 = centered_obs
            .iter()
            .zip(&pot)
            .map(|(y, p)| (y - p) * (y - p))
            .sum();
        -sq / (2.0 * sigma_w * sigma_w)
    }
}

const PURPOSE_INIT: u64 = 1;
const PURPOSE_PREDICT: u64 = 2;
const PURPOSE_RESAMPLE: u64 = 3;

/// Counter-based random stream for `(seed, step, purpose)`, sub-stream `index`.
pub fn stream_rng(seed: u64, step: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&step.to_le_bytes());
    key[16..24].copy_from_slice(&purpose.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Uniform centers over all vertices, every radius at the direction's
/// initial value, uniform modes, equal weights.
pub fn init_ensemble(config: &FilterConfig, model: &Model<'_>) -> Result<Ensemble> {
    config.validate()?;
    let m = model.vertex_count();
    let n_modes = model.mode_count();
    let l = config.centers_per_particle;
    let r0 = config.initial_radius();
    let particles = crate::par::map_range(config.n_particles, |i| {
        let mut rng = stream_rng(config.seed, 0, PURPOSE_INIT, i as u64);
        let centers = (0..l).map(|_| rng.random_range(0..m)).collect();
        let mode = if n_modes > 1 { rng.random_range(0..n_modes) } else { 0 };
        Particle { centers, radii: vec![r0; l], mode }
    });
    let n = config.n_particles;
    Ok(Ensemble {
        particles,
        weights: vec![1.0 / n as f64; n],
        time_index: 0,
    })
}

fn predict_particle(p: &mut Particle, model: &Model<'_>, config: &FilterConfig, rng: &mut ChaCha8Rng) {
    for r in p.radii.iter_mut() {
        let noise: f64 = rng.sample(StandardNormal);
        *r = config.snap_radius((*r + config.sigma_r * noise).max(0.0));
    }
    let table = model.table(p.mode);
    for c in p.centers.iter_mut() {
        let bound = if config.lambda_mm > 0.0 {
            let e: f64 = rng.sample(Exp1);
            e * config.lambda_mm
        } else {
            0.0
        };
        let len = table.ball_len(*c, bound);
        let k = if len > 1 { rng.random_range(0..len) } else { 0 };
        *c = table.nth_closest(*c, k);
    }
    let n_modes = model.mode_count();
    if n_modes > 1 {
        let u: f64 = rng.random();
        if u >= config.mode_keep_prob {
            p.mode = rng.random_range(0..n_modes);
        }
    }
}

/// Propagate every particle through the state dynamics; weights are untouched.
pub fn predict(ensemble: &mut Ensemble, model: &Model<'_>, config: &FilterConfig) {
    let step = (ensemble.time_index + 1) as u64;
    let seed = config.seed;
    crate::par::for_each_mut(&mut ensemble.particles, |i, p| {
        let mut rng = stream_rng(seed, step, PURPOSE_PREDICT, i as u64);
        predict_particle(p, model, config, &mut rng);
    });
    ensemble.time_index += 1;
}

/// Gaussian likelihood of one particle after zero-mean adjustment of both the
/// observation and the model potentials.
pub fn likelihood(particle: &Particle, observation: &[f64], model: &Model<'_>, config: &FilterConfig) -> Result<f64> {
    Ok(libm::exp(log_likelihood(particle, observation, model, config)?))
}

pub fn log_likelihood(particle: &Particle, observation: &[f64], model: &Model<'_>, config: &FilterConfig) -> Result<f64> {
    model.check_particle(particle)?;
    check_observation(observation, model)?;
    let mut y = observation.to_vec();
    zero_mean_in_place(&mut y);
    Ok(model.log_likelihood_centered(particle, &y, config.sigma_w))
}

fn check_observation(observation: &[f64], model: &Model<'_>) -> Result<()> {
    if observation.len() != model.electrode_count() {
        return Err(Error::DimensionMismatch {
            context: "observation length",
            expected: model.electrode_count(),
            found: observation.len(),
        });
    }
    Ok(())
}

/// Outcome of a weight update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CorrectionReport {
    /// `Σ w_j L_j` underflows in linear arithmetic; weights were normalized
    /// in the log domain instead.
    pub underflow: bool,
    /// No particle had a positive weighted likelihood; weights were reset to uniform.
    pub reset: bool,
}

/// `w_i ← w_i L_i / Σ_j w_j L_j` from log-likelihoods, normalized in the log domain.
pub fn reweight(weights: &mut [f64], log_likelihoods: &[f64]) -> CorrectionReport {
    let n = weights.len();
    let logw: Vec<f64> = weights
        .iter()
        .zip(log_likelihoods)
        .map(|(&w, &ll)| if w > 0.0 { libm::log(w) + ll } else { f64::NEG_INFINITY })
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        weights.iter_mut().for_each(|w| *w = 1.0 / n as f64);
        return CorrectionReport { underflow: true, reset: true };
    }
    let underflow = max + libm::log(n as f64) < libm::log(f64::MIN_POSITIVE);
    for (w, lw) in weights.iter_mut().zip(&logw) {
        *w = libm::exp(lw - max);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    CorrectionReport { underflow, reset: false }
}

/// Reweight the ensemble by the likelihood of `observation`; particles are untouched.
pub fn correct(
    ensemble: &mut Ensemble,
    observation: &[f64],
    model: &Model<'_>,
    config: &FilterConfig,
) -> Result<CorrectionReport> {
    check_observation(observation, model)?;
    for p in &ensemble.particles {
        model.check_particle(p)?;
    }
    let mut y = observation.to_vec();
    zero_mean_in_place(&mut y);
    let particles = &ensemble.particles;
    let ll = crate::par::map_range(particles.len(), |i| {
        model.log_likelihood_centered(&particles[i], &y, config.sigma_w)
    });
    Ok(reweight(&mut ensemble.weights, &ll))
}

/// `1 / Σ w²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Indices drawn with probability proportional to `weights`.
pub fn resample_indices(weights: &[f64], scheme: ResamplingScheme, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = weights.len();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    let total = acc;
    let pick = |u: f64| cumulative.partition_point(|&c| c <= u * total).min(n - 1);
    match scheme {
        ResamplingScheme::Multinomial => (0..n).map(|_| pick(rng.random::<f64>())).collect(),
        ResamplingScheme::Systematic => {
            let u0: f64 = rng.random::<f64>() / n as f64;
            (0..n).map(|i| pick(u0 + i as f64 / n as f64)).collect()
        }
    }
}

/// Resample when `N_eff < resample_fraction · N`. Returns whether it did.
pub fn maybe_resample(ensemble: &mut Ensemble, config: &FilterConfig) -> bool {
    let n = ensemble.len();
    let n_eff = effective_sample_size(&ensemble.weights);
    if !(n_eff < config.resample_fraction * n as f64) {
        return false;
    }
    let mut rng = stream_rng(config.seed, ensemble.time_index as u64, PURPOSE_RESAMPLE, 0);
    let idx = resample_indices(&ensemble.weights, config.resampling, &mut rng);
    ensemble.particles = idx.iter().map(|&i| ensemble.particles[i].clone()).collect();
    ensemble.weights = vec![1.0 / n as f64; n];
    true
}

/// Weighted share of particles in each mode.
pub fn mode_probability(ensemble: &Ensemble, n_modes: usize) -> Vec<f64> {
    let mut p = vec![0.0; n_modes];
    for (particle, w) in ensemble.particles.iter().zip(&ensemble.weights) {
        if particle.mode < n_modes {
            p[particle.mode] += w;
        }
    }
    p
}

/// State of the filter after the correction of one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Position in filter order, 0-based.
    pub step: usize,
    /// Index of the observation consumed, i.e. the physical time index.
    pub obs_index: usize,
    /// Weighted posterior ensemble (before any resampling at this step).
    pub ensemble: Ensemble,
    pub n_eff: f64,
    pub resampled: bool,
    pub underflow: bool,
    pub mode_probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub direction: Direction,
    pub n_modes: usize,
    pub centers_per_particle: usize,
    pub steps: Vec<StepRecord>,
}

impl FilterTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Records ordered by physical time (reverses a backward trace).
    pub fn in_time_order(&self) -> Vec<&StepRecord> {
        let mut v: Vec<&StepRecord> = self.steps.iter().collect();
        v.sort_by_key(|r| r.obs_index);
        v
    }
}

/// Run the filter over `observations` (one potential vector per time step),
/// feeding them in reverse order for the backward direction.
pub fn run_filter(observations: &[Vec<f64>], model: &Model<'_>, config: &FilterConfig) -> Result<FilterTrace> {
    if observations.is_empty() {
        return Err(Error::Empty("observation sequence"));
    }
    for obs in observations {
        check_observation(obs, model)?;
    }
    let n = observations.len();
    let order: Vec<usize> = match config.direction {
        Direction::Forward => (0..n).collect(),
        Direction::Backward => (0..n).rev().collect(),
    };
    let mut ensemble = init_ensemble(config, model)?;
    let mut steps = Vec::with_capacity(n);
    for (step, &k) in order.iter().enumerate() {
        predict(&mut ensemble, model, config);
        let report = correct(&mut ensemble, &observations[k], model, config)?;
        let n_eff = effective_sample_size(&ensemble.weights);
        let mode_probabilities = mode_probability(&ensemble, model.mode_count());
        let snapshot = ensemble.clone();
        let resampled = maybe_resample(&mut ensemble, config);
        steps.push(StepRecord {
            step,
            obs_index: k,
            ensemble: snapshot,
            n_eff,
            resampled,
            underflow: report.underflow,
            mode_probabilities,
        });
    }
    Ok(FilterTrace {
        direction: config.direction,
        n_modes: model.mode_count(),
        centers_per_particle: config.centers_per_particle,
        steps,
    })
}
