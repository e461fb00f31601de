//! Command-line front end. Each stage reads the previous stage's files from
//! `--out` and writes its own there.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use ecgi_sir_core::filter::{Direction, FilterTrace};
use ecgi_sir_core::maps::{activation_probability, compare_maps, ScalarKind, ScalarMap};

use crate::config::{BackendName, ExperimentConfig};
use crate::error::{AppError, Result};
use crate::experiment::{self, ReportInputs, Scene, ACTIVATION_THRESHOLD};
use crate::io::{self, Stamp, TraceHeader};

#[derive(Debug, Parser)]
#[command(name = "ecgi-sir", version, about = "Particle-filter reconstruction of cardiac activation from body-surface potentials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the ground truth and noisy observations.
    Simulate,
    /// Run the particle filter on the observations.
    Filter,
    /// Derive activation, EAS and mode maps from the filter traces.
    Maps,
    /// Compare the maps with the truth and summarize.
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Fwd,
    Bwd,
    Both,
}

impl DirectionArg {
    pub fn directions(self) -> Vec<Direction> {
        match self {
            DirectionArg::Fwd => vec![Direction::Forward],
            DirectionArg::Bwd => vec![Direction::Backward],
            DirectionArg::Both => vec![Direction::Forward, Direction::Backward],
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value = "both")]
    pub direction: DirectionArg,
    /// Overrides `reps` from the config.
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `mesh.backend` from the config.
    #[arg(long = "distance-backend", global = true, value_enum)]
    pub distance_backend: Option<BackendArg>,
    /// Spacing of activation-probability snapshots in the maps stage.
    #[arg(long = "snapshot-ms", global = true, default_value_t = 20.0)]
    pub snapshot_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    Dijkstra,
    Fmm,
}

/// Load the config and apply command-line overrides.
pub fn effective_config(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let path = common.config.as_ref().ok_or_else(|| AppError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(reps) = common.reps {
        cfg.reps = reps;
    }
    if let Some(b) = common.distance_backend {
        cfg.mesh.backend = match b {
            BackendArg::Dijkstra => BackendName::Dijkstra,
            BackendArg::Fmm => BackendName::Fmm,
        };
    }
    if common.workers == 0 {
        return Err(AppError::Config("--workers must be at least 1".into()));
    }
    if !(common.snapshot_ms > 0.0) {
        return Err(AppError::Config("--snapshot-ms must be positive".into()));
    }
    cfg.validate()?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

pub fn run(cli: &Cli) -> Result<()> {
    let (cfg, base) = effective_config(&cli.common)?;
    let stamp = Stamp { config_hash: cfg.hash(), seed: cfg.seed };
    let ctx = Context { cfg, base, stamp, common: cli.common.clone() };
    match cli.command {
        Command::Simulate => ctx.simulate(),
        Command::Filter => ctx.filter(),
        Command::Maps => ctx.maps(),
        Command::Report => ctx.report().map(|r| {
            println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
        }),
    }
}

pub fn observations_path(out: &Path, rep: usize) -> PathBuf {
    out.join(format!("observations_r{rep}.csv"))
}

pub fn trace_path(out: &Path, dir: Direction, rep: usize, ext: &str) -> PathBuf {
    out.join(format!("trace_{}_r{rep}.{ext}", short(dir)))
}

fn short(dir: Direction) -> &'static str {
    match dir {
        Direction::Forward => "fwd",
        Direction::Backward => "bwd",
    }
}

/// Provenance line of a text output, if present.
pub fn read_stamp(path: &Path) -> Result<Option<Stamp>> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let first = text.lines().next().unwrap_or("");
    let Some(rest) = first.strip_prefix("# ecgi-sir ") else { return Ok(None) };
    let mut hash = None;
    let mut seed = None;
    for kv in rest.split_whitespace() {
        match kv.split_once('=') {
            Some(("config", v)) => hash = Some(v.to_string()),
            Some(("seed", v)) => seed = v.parse().ok(),
            _ => {}
        }
    }
    Ok(hash.zip(seed).map(|(config_hash, seed)| Stamp { config_hash, seed }))
}

struct Context {
    cfg: ExperimentConfig,
    base: PathBuf,
    stamp: Stamp,
    common: Common,
}

impl Context {
    fn out(&self) -> &Path {
        &self.common.out
    }

    fn check_stamp(&self, found: Option<Stamp>, path: &Path) -> Result<()> {
        match found {
            Some(s) if s == self.stamp => Ok(()),
            Some(s) => Err(AppError::Config(format!(
                "{} was written with config={} seed={}, expected config={} seed={}",
                path.display(),
                s.config_hash,
                s.seed,
                self.stamp.config_hash,
                self.stamp.seed
            ))),
            None => Err(AppError::parse(path, 1, "missing provenance header")),
        }
    }

    fn simulate(&self) -> Result<()> {
        let scene = Scene::build(&self.cfg, &self.base)?;
        let sim = scene.simulate(&self.cfg)?;
        let out = self.out();
        let mut toml = format!("# {}\n", self.stamp.line());
        toml.push_str(&self.cfg.to_toml());
        io::write_text(&out.join("config.toml"), &toml)?;
        let truth = io::activation_values(&sim.activation);
        io::write_scalar_csv(&out.join("truth_activation.csv"), &truth, &self.stamp)?;
        io::write_vtk(&out.join("truth.vtk"), &scene.mesh, &[("truth_activation_ms", &truth)], &self.stamp)?;
        io::write_observations_csv(&out.join("observations_clean.csv"), &sim.clean, &self.stamp)?;
        for (r, obs) in sim.observations.iter().enumerate() {
            io::write_observations_csv(&observations_path(out, r), obs, &self.stamp)?;
            if let Some(n) = &obs.noise {
                eprintln!("rep {r}: noise std {:.3e}, SNR {:.2} dB", n.std, n.snr_db);
            }
        }
        eprintln!(
            "truth: {} of {} vertices activated, {} steps, {} electrodes",
            sim.activation.activated_count(),
            sim.activation.len(),
            sim.observations[0].len(),
            scene.electrodes.len()
        );
        Ok(())
    }

    fn filter(&self) -> Result<()> {
        let out = self.out();
        let observations = (0..self.cfg.reps)
            .map(|r| {
                let path = observations_path(out, r);
                self.check_stamp(read_stamp(&path)?, &path)?;
                io::read_observations_csv(&path)
            })
            .collect::<Result<Vec<_>>>()?;
        let scene = Scene::build(&self.cfg, &self.base)?;
        let dirs = self.common.direction.directions();
        let runs = experiment::run_all(&scene, &self.cfg, &observations, &dirs, self.common.workers)?;
        for run in &runs {
            let header = self.trace_header(&scene, &run.trace, run.rep);
            io::write_trace_jsonl(&trace_path(out, run.trace.direction, run.rep, "jsonl"), &run.trace, &header)?;
            io::write_trace_bin(&trace_path(out, run.trace.direction, run.rep, "bin"), &run.trace, &header)?;
            let resampled = run.trace.steps.iter().filter(|s| s.resampled).count();
            let underflow = run.trace.steps.iter().filter(|s| s.underflow).count();
            eprintln!(
                "rep {} {}: {} steps, {resampled} resampled, {underflow} underflow",
                run.rep,
                run.trace.direction.name(),
                run.trace.len()
            );
        }
        Ok(())
    }

    fn trace_header(&self, scene: &Scene, trace: &FilterTrace, rep: usize) -> TraceHeader {
        TraceHeader {
            stamp: self.stamp.clone(),
            direction: trace.direction.name().to_string(),
            repetition: rep,
            n_particles: self.cfg.filter.n_particles,
            centers_per_particle: trace.centers_per_particle,
            modes: scene.labels.clone(),
            steps: trace.len(),
        }
    }

    fn load_runs(&self) -> Result<Vec<experiment::Run>> {
        let mut runs = Vec::new();
        for rep in 0..self.cfg.reps {
            for dir in self.common.direction.directions() {
                let path = trace_path(self.out(), dir, rep, "bin");
                let (header, trace) = io::read_trace_bin(&path)?;
                self.check_stamp(Some(header.stamp.clone()), &path)?;
                runs.push(experiment::Run { rep, seed: experiment::rep_seed(self.cfg.seed, rep), trace });
            }
        }
        Ok(runs)
    }

    fn maps(&self) -> Result<()> {
        let scene = Scene::build(&self.cfg, &self.base)?;
        let runs = self.load_runs()?;
        let model = scene.model()?;
        let dt = self.cfg.truth.dt_ms;
        let out = self.out();
        let truth_path = out.join("truth_activation.csv");
        let truth = if truth_path.exists() {
            self.check_stamp(read_stamp(&truth_path)?, &truth_path)?;
            Some(io::read_scalar_csv(&truth_path)?)
        } else {
            None
        };
        let truth_map = truth.as_deref().map(io::activation_from_values);
        let mut corr = String::from("run,direction,rep,r,coverage\n");
        let mut all = Vec::new();
        for group in experiment::by_rep(&runs) {
            let m = experiment::rep_maps(&scene, &group, dt)?;
            if let Some(t) = &truth_map {
                let rows = m.activation.iter().map(|(d, a)| (short(*d), a)).chain([("combined", &m.combined_activation)]);
                for (name, a) in rows {
                    let (r_val, cov) = match compare_maps(a, t) {
                        Ok(c) => (c.r.to_string(), c.coverage),
                        Err(_) => (String::new(), 0.0),
                    };
                    corr.push_str(&format!("{name}_r{},{name},{},{r_val},{cov}\n", m.rep, m.rep));
                }
            }
            let r = m.rep;
            let mut arrays: Vec<(String, Vec<f64>)> = Vec::new();
            for (dir, map) in &m.activation {
                let v = io::activation_values(map);
                io::write_scalar_csv(&out.join(format!("activation_{}_r{r}.csv", short(*dir))), &v, &self.stamp)?;
                arrays.push((format!("activation_{}_ms", short(*dir)), v));
            }
            let combined = io::activation_values(&m.combined_activation);
            io::write_scalar_csv(&out.join(format!("activation_combined_r{r}.csv")), &combined, &self.stamp)?;
            arrays.push(("activation_combined_ms".into(), combined));
            for (dir, map) in &m.eas {
                io::write_scalar_csv(&out.join(format!("eas_{}_r{r}.csv", short(*dir))), &map.values, &self.stamp)?;
                arrays.push((format!("eas_{}", short(*dir)), map.values.clone()));
            }
            io::write_scalar_csv(&out.join(format!("eas_combined_r{r}.csv")), &m.combined_eas.values, &self.stamp)?;
            arrays.push(("eas_combined".into(), m.combined_eas.values.clone()));
            for (dir, timeline) in &m.timelines {
                let path = out.join(format!("modes_{}_r{r}.csv", short(*dir)));
                io::write_mode_timeline(&path, &scene.labels, timeline, dt, &self.stamp)?;
            }
            for run in &group {
                let records = run.trace.in_time_order();
                let every = ((self.common.snapshot_ms / dt).round() as usize).max(1);
                for (k, rec) in records.iter().enumerate().step_by(every) {
                    let p = activation_probability(&rec.ensemble, &model, ACTIVATION_THRESHOLD)?;
                    let name = format!("p_{}_t{:04}", short(run.trace.direction), (k as f64 * dt).round() as i64);
                    arrays.push((name, p.values));
                }
            }
            if let Some(t) = &truth {
                arrays.push(("truth_activation_ms".into(), t.clone()));
            }
            let refs: Vec<(&str, &[f64])> = arrays.iter().map(|(n, v)| (n.as_str(), v.as_slice())).collect();
            io::write_vtk(&out.join(format!("maps_r{r}.vtk")), &scene.mesh, &refs, &self.stamp)?;
            all.push(m);
        }
        let avg = experiment::averaged_maps(&scene, &runs, &all, dt)?;
        let act = io::activation_values(&avg.activation);
        io::write_scalar_csv(&out.join("activation_mean.csv"), &act, &self.stamp)?;
        io::write_scalar_csv(&out.join("eas_mean.csv"), &avg.eas.values, &self.stamp)?;
        io::write_mode_timeline(&out.join("modes_mean.csv"), &scene.labels, &avg.timeline, dt, &self.stamp)?;
        let mut arrays: Vec<(&str, &[f64])> = vec![("activation_mean_ms", &act), ("eas_mean", &avg.eas.values)];
        if let Some(t) = &truth {
            arrays.push(("truth_activation_ms", t));
            if let Ok(c) = compare_maps(&avg.activation, truth_map.as_ref().expect("truth map")) {
                corr.push_str(&format!("mean,all,,{},{}\n", c.r, c.coverage));
            }
            io::write_text(&out.join("correlation.csv"), &format!("# {}\n{corr}", self.stamp.line()))?;
        }
        io::write_vtk(&out.join("maps_mean.vtk"), &scene.mesh, &arrays, &self.stamp)?;
        Ok(())
    }

    fn report(&self) -> Result<experiment::Report> {
        let scene = Scene::build(&self.cfg, &self.base)?;
        let out = self.out();
        let read = |name: String| -> Result<Vec<f64>> {
            let path = out.join(name);
            self.check_stamp(read_stamp(&path)?, &path)?;
            io::read_scalar_csv(&path)
        };
        let truth = io::activation_from_values(&read("truth_activation.csv".into())?);
        let dirs = self.common.direction.directions();
        let mut parts = ReportInputs {
            directions: dirs.clone(),
            combined_activation: Vec::new(),
            combined_eas: Vec::new(),
            timelines: Vec::new(),
        };
        for r in 0..self.cfg.reps {
            parts.combined_activation.push(io::activation_from_values(&read(format!("activation_combined_r{r}.csv"))?));
            parts.combined_eas.push(ScalarMap {
                values: read(format!("eas_combined_r{r}.csv"))?,
                kind: ScalarKind::EasPseudoProbability,
            });
            for &d in &dirs {
                let path = out.join(format!("modes_{}_r{r}.csv", short(d)));
                self.check_stamp(read_stamp(&path)?, &path)?;
                let (labels, rows) = io::read_mode_timeline(&path)?;
                if labels != scene.labels {
                    return Err(AppError::parse(&path, 2, "mode labels differ from the config"));
                }
                parts.timelines.push(rows);
            }
        }
        let report = experiment::report_from_parts(&scene, &self.cfg, &parts, &truth, &self.stamp)?;
        io::write_text(
            &out.join("report.json"),
            &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
        )?;
        Ok(report)
    }
}
