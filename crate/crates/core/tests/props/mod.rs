//! Property checks shared by the invariant suite and the acceptance target.
//! Each check runs `cases` random cases and reports the first failure.

use ecgi_sir_core::filter::{
    correct, effective_sample_size, init_ensemble, maybe_resample, mode_probability, predict, resample_indices, reweight, run_filter, stream_rng, Direction,
    FilterConfig, FilterTrace, Mode, Model, Particle, ResamplingScheme,
};
use ecgi_sir_core::geodesic::ball_vertices;
use ecgi_sir_core::maps::{activation_map_from_series, eas_pseudo_probability};
use ecgi_sir_core::mesh::{set_conductivity, ConductivitySpec, ElectrodeSet, Region, Tensor, TriMesh};
use ecgi_sir_core::synth::combined_block_metric;
use ecgi_sir_core::{
    build_dipole_layer, build_table, make_test_mesh, zero_mean, Backend, FrontTemplate, GeodesicTable, MeshKind,
    TransferOperator,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub type Check = fn(u32) -> Result<(), String>;

/// Every property, by name.
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("weight simplex", weight_simplex as Check),
        ("filter step invariants", filter_step_invariants),
        ("predict and correct separation", predict_correct_separation),
        ("gauge invariance", gauge_invariance),
        ("reversal consistency", reversal_consistency),
        ("metric axioms", metric_axioms),
        ("conductivity scaling", conductivity_scaling),
        ("ball monotonicity", ball_monotonicity),
        ("template shape", template_shape),
        ("reconstruction monotone and idempotent", reconstruction),
        ("zero-mean projection", zero_mean_projection),
        ("operator linearity", operator_linearity),
        ("effective sample size bounds", n_eff_bounds),
        ("resampling preserves means", resampling_unbiased),
        ("activation map time shift", activation_shift),
    ]
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn report<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

struct Fixture {
    table: GeodesicTable,
    blocked: GeodesicTable,
    op: TransferOperator,
}

fn fixture() -> &'static Fixture {
    static F: std::sync::OnceLock<Fixture> = std::sync::OnceLock::new();
    F.get_or_init(|| {
        let mesh = make_test_mesh(MeshKind::Sphere, 30.0, 1).unwrap();
        let table = build_table(&mesh, Backend::Dijkstra).unwrap();
        let block = ecgi_sir_core::synth::BlockSpec {
            region: Region::EuclideanBall { center: mesh.vertex(0), radius: 12.0 },
            factor: 0.1,
        };
        let blocked = combined_block_metric(&mesh, &Tensor::identity(), &[block], Backend::Dijkstra).unwrap();
        let el = ElectrodeSet::shell(&mesh, 12, 60.0).unwrap();
        let op = build_dipole_layer(&mesh, &el).unwrap();
        Fixture { table, blocked, op }
    })
}

fn two_mode_model(f: &Fixture) -> Model<'_> {
    Model::new(
        vec![Mode { table: &f.table, operator: &f.op }, Mode { table: &f.blocked, operator: &f.op }],
        FrontTemplate::new(5.0).unwrap(),
    )
    .unwrap()
}

fn observations(steps: usize, q: usize, scale: f64) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-scale..scale, q), steps)
}

fn small_config(seed: u64, direction: Direction) -> FilterConfig {
    FilterConfig { n_particles: 40, seed, direction, mode_keep_prob: 0.8, ..FilterConfig::default() }
}

fn simplex(w: &[f64]) -> Result<(), TestCaseError> {
    prop_assert!(w.iter().all(|&x| x >= 0.0 && x.is_finite()), "negative or non-finite weight");
    let s: f64 = w.iter().sum();
    prop_assert!((s - 1.0).abs() <= 1e-9, "weights sum to {}", s);
    Ok(())
}

pub fn weight_simplex(cases: u32) -> Result<(), String> {
    let strat = (1usize..60).prop_flat_map(|n| {
        (prop::collection::vec(0.0f64..1.0, n), prop::collection::vec(prop_oneof![9 => -800.0f64..0.0, 1 => Just(f64::NEG_INFINITY)], n))
    });
    report(runner(cases).run(&strat, |(raw, ll)| {
        let total: f64 = raw.iter().sum();
        let n = raw.len();
        let mut w: Vec<f64> = if total > 0.0 { raw.iter().map(|x| x / total).collect() } else { vec![1.0 / n as f64; n] };
        reweight(&mut w, &ll);
        simplex(&w)?;
        let mut rng = stream_rng(1, 0, 9, 0);
        let idx = resample_indices(&w, ResamplingScheme::Systematic, &mut rng);
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.iter().all(|&i| w[i] > 0.0));
        Ok(())
    }))
}

fn check_trace(trace: &FilterTrace, cfg: &FilterConfig, n_modes: usize) -> Result<(), TestCaseError> {
    let n = cfg.n_particles as f64;
    for rec in &trace.steps {
        simplex(&rec.ensemble.weights)?;
        prop_assert!(rec.ensemble.particles.iter().flat_map(|p| &p.radii).all(|&r| r >= 0.0));
        prop_assert!(rec.n_eff >= 1.0 - 1e-9 && rec.n_eff <= n * (1.0 + 1e-9), "N_eff {}", rec.n_eff);
        simplex(&rec.mode_probabilities)?;
        prop_assert_eq!(rec.mode_probabilities.len(), n_modes);
    }
    let eas = eas_pseudo_probability(trace, fixture().table.vertex_count()).unwrap();
    let mass: f64 = eas.values.iter().sum();
    let expect = (trace.len() * cfg.centers_per_particle) as f64;
    prop_assert!((mass - expect).abs() <= 1e-9 * expect, "EAS mass {} vs {}", mass, expect);
    Ok(())
}

pub fn filter_step_invariants(cases: u32) -> Result<(), String> {
    let f = fixture();
    let strat = (any::<u64>(), observations(6, 12, 0.05), 1usize..4, any::<bool>());
    report(runner(cases).run(&strat, |(seed, obs, l, backward)| {
        let dir = if backward { Direction::Backward } else { Direction::Forward };
        let cfg = FilterConfig { centers_per_particle: l, ..small_config(seed, dir) };
        let two = two_mode_model(f);
        let trace = run_filter(&obs, &two, &cfg).unwrap();
        check_trace(&trace, &cfg, 2)?;
        let one = Model::single(&f.table, &f.op, FrontTemplate::new(5.0).unwrap()).unwrap();
        let trace = run_filter(&obs, &one, &cfg).unwrap();
        check_trace(&trace, &cfg, 1)?;
        prop_assert!(trace.steps.iter().all(|r| (r.mode_probabilities[0] - 1.0).abs() <= 1e-12));
        Ok(())
    }))
}

pub fn predict_correct_separation(cases: u32) -> Result<(), String> {
    let f = fixture();
    let strat = (any::<u64>(), observations(3, 12, 0.05));
    report(runner(cases).run(&strat, |(seed, obs)| {
        let model = two_mode_model(f);
        let cfg = small_config(seed, Direction::Forward);
        let mut e = init_ensemble(&cfg, &model).unwrap();
        for y in &obs {
            let w = e.weights.clone();
            predict(&mut e, &model, &cfg);
            prop_assert_eq!(&e.weights, &w);
            let p = e.particles.clone();
            correct(&mut e, y, &model, &cfg).unwrap();
            prop_assert_eq!(&e.particles, &p);
            simplex(&e.weights)?;
            maybe_resample(&mut e, &cfg);
            simplex(&e.weights)?;
        }
        Ok(())
    }))
}

pub fn gauge_invariance(cases: u32) -> Result<(), String> {
    let f = fixture();
    let strat = (any::<u64>(), observations(5, 12, 0.05), -10.0f64..10.0);
    report(runner(cases).run(&strat, |(seed, obs, shift)| {
        let model = two_mode_model(f);
        let cfg = small_config(seed, Direction::Forward);
        let a = run_filter(&obs, &model, &cfg).unwrap();
        let shifted: Vec<Vec<f64>> = obs.iter().map(|y| y.iter().map(|v| v + shift).collect()).collect();
        let b = run_filter(&shifted, &model, &cfg).unwrap();
        for (x, y) in a.steps.iter().zip(&b.steps) {
            prop_assert_eq!(&x.ensemble.particles, &y.ensemble.particles);
            prop_assert_eq!(x.resampled, y.resampled);
            for (wa, wb) in x.ensemble.weights.iter().zip(&y.ensemble.weights) {
                prop_assert!((wa - wb).abs() <= 1e-9);
            }
        }
        Ok(())
    }))
}

pub fn reversal_consistency(cases: u32) -> Result<(), String> {
    let f = fixture();
    let strat = (any::<u64>(), observations(6, 12, 0.05), 0.0f64..60.0);
    report(runner(cases).run(&strat, |(seed, obs, r0)| {
        let model = two_mode_model(f);
        let bwd = FilterConfig { r_init_bwd: r0, r_init_fwd: r0, ..small_config(seed, Direction::Backward) };
        let fwd = FilterConfig { direction: Direction::Forward, ..bwd.clone() };
        let a = run_filter(&obs, &model, &bwd).unwrap();
        let rev: Vec<Vec<f64>> = obs.iter().rev().cloned().collect();
        let b = run_filter(&rev, &model, &fwd).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.steps.iter().zip(&b.steps) {
            prop_assert_eq!(x.step, y.step);
            prop_assert_eq!(x.obs_index, obs.len() - 1 - y.obs_index);
            prop_assert_eq!(&x.ensemble, &y.ensemble);
            prop_assert_eq!(x.resampled, y.resampled);
        }
        Ok(())
    }))
}

fn random_mesh() -> impl Strategy<Value = TriMesh> {
    (0.6f64..1.6, 0.6f64..1.6, 0.6f64..1.6, 15.0f64..40.0)
        .prop_map(|(a, b, c, r)| make_test_mesh(MeshKind::Ellipsoid { scales: [a, b, c] }, r, 2).unwrap())
}

pub fn metric_axioms(cases: u32) -> Result<(), String> {
    let strat = (random_mesh(), any::<u64>());
    report(runner(cases).run(&strat, |(mesh, seed)| {
        let t = build_table(&mesh, Backend::Dijkstra).unwrap();
        let m = t.vertex_count();
        for i in 0..m {
            prop_assert_eq!(t.distance(i, i), 0.0);
        }
        let mut state = seed;
        let mut next = || {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            ((z ^ (z >> 31)) % m as u64) as usize
        };
        for _ in 0..10_000 {
            let (i, j, k) = (next(), next(), next());
            let dij = t.distance(i, j);
            prop_assert!(dij.is_finite() && dij >= 0.0);
            prop_assert!((dij - t.distance(j, i)).abs() <= 1e-6 * (1.0 + dij));
            prop_assert!(t.distance(i, k) <= dij + t.distance(j, k) + 1e-6);
        }
        Ok(())
    }))
}

pub fn conductivity_scaling(cases: u32) -> Result<(), String> {
    let strat = (random_mesh(), 1.0f64..100.0);
    report(runner(cases).run(&strat, |(mesh, c)| {
        let base = build_table(&mesh, Backend::Dijkstra).unwrap();
        let scaled = set_conductivity(&mesh, &ConductivitySpec::Uniform(c)).unwrap();
        let t = build_table(&scaled, Backend::Dijkstra).unwrap();
        for (a, b) in base.distances().iter().zip(t.distances()) {
            prop_assert!((b * c.sqrt() - a).abs() <= 1e-9 * (1.0 + a), "{} vs {}", b * c.sqrt(), a);
        }
        Ok(())
    }))
}

pub fn ball_monotonicity(cases: u32) -> Result<(), String> {
    let f = fixture();
    let m = f.table.vertex_count();
    let strat = (0..m, 0.0f64..80.0, 0.0f64..80.0);
    report(runner(cases).run(&strat, |(c, a, b)| {
        let (r1, r2) = if a <= b { (a, b) } else { (b, a) };
        let small = ball_vertices(&f.table, c, r1);
        let big = ball_vertices(&f.table, c, r2);
        prop_assert!(small.iter().all(|v| big.contains(v)));
        prop_assert!(small.contains(&c));
        Ok(())
    }))
}

pub fn template_shape(cases: u32) -> Result<(), String> {
    let strat = (0.5f64..20.0, -50.0f64..50.0, -10.0f64..10.0);
    report(runner(cases).run(&strat, |(w, xi, h)| {
        let t = FrontTemplate::new(w).unwrap();
        let (a, b) = (t.eval(xi), t.eval(xi + h));
        prop_assert!((0.0..=1.0).contains(&a));
        if h >= 0.0 {
            prop_assert!(b >= a - 1e-15);
        }
        prop_assert!((b - a).abs() <= 3.0 / (4.0 * w) * h.abs() + 1e-12);
        Ok(())
    }))
}

pub fn reconstruction(cases: u32) -> Result<(), String> {
    let f = fixture();
    let m = f.table.vertex_count();
    let strat = (prop::collection::vec((0..m, 0.0f64..60.0), 1..4), 0.0f64..20.0, 0usize..3);
    report(runner(cases).run(&strat, |(cr, grow, which)| {
        let t = FrontTemplate::new(5.0).unwrap();
        let p = Particle { centers: cr.iter().map(|x| x.0).collect(), radii: cr.iter().map(|x| x.1).collect(), mode: 0 };
        let v = t.reconstruct(&p, &f.table).unwrap().values;
        prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        let mut bigger = p.clone();
        let k = which % p.radii.len();
        bigger.radii[k] += grow;
        let vb = t.reconstruct(&bigger, &f.table).unwrap().values;
        prop_assert!(v.iter().zip(&vb).all(|(a, b)| b >= a));
        let mut dup = p.clone();
        dup.centers.push(p.centers[k]);
        dup.radii.push(p.radii[k]);
        prop_assert_eq!(t.reconstruct(&dup, &f.table).unwrap().values, v);
        Ok(())
    }))
}

pub fn zero_mean_projection(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&prop::collection::vec(-1e3f64..1e3, 1..50), |x| {
        let z = zero_mean(&x);
        let zz = zero_mean(&z);
        let scale = 1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(z.iter().zip(&zz).all(|(a, b)| (a - b).abs() <= 1e-12 * scale));
        prop_assert!(z.iter().sum::<f64>().abs() <= 1e-9 * scale * x.len() as f64);
        Ok(())
    }))
}

pub fn operator_linearity(cases: u32) -> Result<(), String> {
    let f = fixture();
    let m = f.op.vertex_count();
    let strat = (prop::collection::vec(0.0f64..1.0, m), prop::collection::vec(0.0f64..1.0, m), -3.0f64..3.0);
    report(runner(cases).run(&strat, |(a, b, s)| {
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let (oa, ob, os) = (f.op.apply_slice(&a).unwrap(), f.op.apply_slice(&b).unwrap(), f.op.apply_slice(&sum).unwrap());
        for i in 0..oa.len() {
            let expect = oa[i] + s * ob[i];
            prop_assert!((os[i] - expect).abs() <= 1e-12 * (1.0 + oa[i].abs() + (s * ob[i]).abs()) * 10.0);
        }
        Ok(())
    }))
}

pub fn n_eff_bounds(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&prop::collection::vec(0.0f64..1.0, 1..200), |raw| {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 0.0);
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let n_eff = effective_sample_size(&w);
        prop_assert!(n_eff >= 1.0 - 1e-9 && n_eff <= w.len() as f64 * (1.0 + 1e-9));
        Ok(())
    }))
}

/// Mean of a bounded functional after resampling, averaged over many draws,
/// stays within 3σ of the weighted mean.
pub fn resampling_unbiased(cases: u32) -> Result<(), String> {
    let strat = (prop::collection::vec((0.01f64..1.0, 0.0f64..1.0), 2..30), any::<u64>(), any::<bool>());
    report(runner(cases).run(&strat, |(wf, seed, systematic)| {
        let total: f64 = wf.iter().map(|x| x.0).sum();
        let w: Vec<f64> = wf.iter().map(|x| x.0 / total).collect();
        let f: Vec<f64> = wf.iter().map(|x| x.1).collect();
        let n = w.len();
        let target: f64 = w.iter().zip(&f).map(|(a, b)| a * b).sum();
        let var: f64 = w.iter().zip(&f).map(|(a, b)| a * (b - target).powi(2)).sum();
        let draws = 400;
        let scheme = if systematic { ResamplingScheme::Systematic } else { ResamplingScheme::Multinomial };
        let mut acc = 0.0;
        for d in 0..draws {
            let mut rng = stream_rng(seed, d, 3, 0);
            let idx = resample_indices(&w, scheme, &mut rng);
            acc += idx.iter().map(|&i| f[i]).sum::<f64>() / n as f64;
        }
        let mean = acc / draws as f64;
        // Multinomial variance bounds the systematic one.
        let sigma = (var / (n as f64 * draws as f64)).sqrt();
        prop_assert!((mean - target).abs() <= 3.0 * sigma + 1e-12, "{} vs {} (σ {})", mean, target, sigma);
        Ok(())
    }))
}

pub fn activation_shift(cases: u32) -> Result<(), String> {
    let strat = (prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 2..20), -50.0f64..50.0, 0.1f64..3.0);
    report(runner(cases).run(&strat, |(mut series, shift, dt)| {
        for k in 1..series.len() {
            for x in 0..4 {
                series[k][x] = series[k][x].max(series[k - 1][x]);
            }
        }
        let a = activation_map_from_series(&series, dt, 0.0).unwrap();
        let b = activation_map_from_series(&series, dt, shift).unwrap();
        for (x, y) in a.times.iter().zip(&b.times) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x + shift - y).abs() <= 1e-9),
                (None, None) => {}
                _ => prop_assert!(false, "activation differs"),
            }
        }
        Ok(())
    }))
}

/// Mode probability of an ensemble, exposed for the worker-count check.
pub fn modes_of(trace: &FilterTrace) -> Vec<Vec<f64>> {
    trace.steps.iter().map(|r| mode_probability(&r.ensemble, trace.n_modes)).collect()
}
