//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 4, 5 and 8 run desk-scale sweeps for all three families; set
//! `HAMNET_ACCEPT_OUT` to keep their output (and to resume an interrupted
//! run). The process exits nonzero on any failure only when
//! `HAMNET_ACCEPT_STRICT=1`; otherwise failures are reported and recorded
//! but do not fail `cargo test`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use hamnet::autodiff::Graph;
use hamnet::dataset::{build_training_set, Flavor, TrainingPair};
use hamnet::forecast::{integrate, LearnedField, Method};
use hamnet::harness::{self, Cell, DriftConfig, ExperimentConfig, SurfaceGrid, SweepOutcome};
use hamnet::metrics::{aggregate, fit_power_law};
use hamnet::training::{graph_loss_gradient, hnn_loss, loss_gradient, net_spec_for};
use hamnet::{Execution, Family, MlpParams, PhaseState, SystemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn random_state(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> PhaseState {
    PhaseState::new(
        (0..d).map(|_| rng.random_range(-scale..scale)).collect(),
        (0..d).map(|_| rng.random_range(-scale..scale)).collect(),
    )
}

/// 1. Weight gradient of the HNN loss (both the graph route and the
/// hand-written pass) against central differences, h = 1e-5.
fn nested_gradient() -> Outcome {
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0001);
    let mut worst: f64 = 0.0;
    for k in 0..100u64 {
        let d = 1 + (k % 2) as usize;
        let spec = net_spec_for(Flavor::Hnn, 2 * d, 1, 4, k);
        let mut params = MlpParams::init(&spec).unwrap();
        for c in params.coeffs_mut() {
            *c += rng.random_range(-0.5..0.5);
        }
        let pair = TrainingPair {
            flavor: Flavor::Hnn,
            input: (0..2 * d).map(|_| rng.random_range(-1.5..1.5)).collect(),
            target: (0..2 * d).map(|_| rng.random_range(-1.5..1.5)).collect(),
        };
        let (_, graph) = graph_loss_gradient(&params, &pair).unwrap();
        let (_, fast) = loss_gradient(&params, &pair).unwrap();
        let fd: Vec<f64> = (0..params.coeffs().len())
            .map(|i| {
                let mut plus = params.clone();
                plus.coeffs_mut()[i] += h;
                let mut minus = params.clone();
                minus.coeffs_mut()[i] -= h;
                (hnn_loss(&plus, &pair).unwrap() - hnn_loss(&minus, &pair).unwrap()) / (2.0 * h)
            })
            .collect();
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for g in [&graph, &fast] {
            let err = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
            worst = worst.max(err);
        }
    }
    outcome(worst < 1e-5, format!("100 nets, max relative error {worst:.2e} (< 1e-5)"))
}

/// 2. Autodiff of the exact Hamiltonian expressions against the closed-form
/// vector fields.
fn exact_hamiltonian() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0002);
    let mut worst: f64 = 0.0;
    for family in [Family::Linear, Family::Quartic, Family::BistableChain] {
        for k in 0..100 {
            let d = 1 + k % 6;
            let sys = SystemSpec::new(family, d, Default::default()).unwrap();
            let s = random_state(&mut rng, d, 2.0);
            let mut g = Graph::new();
            let qv: Vec<_> = (0..d).map(|n| g.var(format!("q{n}"))).collect();
            let pv: Vec<_> = (0..d).map(|n| g.var(format!("p{n}"))).collect();
            let q: Vec<_> = qv.iter().map(|v| v.expr()).collect();
            let p: Vec<_> = pv.iter().map(|v| v.expr()).collect();
            let hexpr = sys.hamiltonian_expr(&mut g, &q, &p);
            let vars: Vec<_> = qv.iter().chain(&pv).copied().collect();
            let res = g.grad(hexpr, &vars, &s.to_flat()).unwrap();
            let grad = res.partial_values();
            let (qdot, pdot) = sys.exact_vector_field(&s).unwrap();
            for n in 0..d {
                let e1 = (grad[d + n] - qdot[n]).abs() / qdot[n].abs().max(1.0);
                let e2 = (-grad[n] - pdot[n]).abs() / pdot[n].abs().max(1.0);
                worst = worst.max(e1).max(e2);
            }
        }
    }
    outcome(worst <= 1e-12, format!("300 states, max error {worst:.2e} (<= 1e-12)"))
}

/// 3. Single-orbit energy drift, Table-matched training.
fn drift() -> Outcome {
    let cfg = DriftConfig::default();
    let out = harness::drift_experiment(&cfg, Execution::Parallel).unwrap();
    let gap = out.nn_error / out.hnn_error;
    let spans = (out.exact.times.last().unwrap() - 16.0 * std::f64::consts::PI).abs() < 1e-9;
    outcome(
        out.hnn_error * 10.0 <= out.nn_error && out.hnn_error < 0.01 && spans,
        format!(
            "NN dE/E {:.3e}, HNN dE/E {:.3e} (< 1e-2), gap {gap:.1}x (>= 10x), exact {:.1e}",
            out.nn_error, out.hnn_error, out.exact_error
        ),
    )
}

fn sweep_dir(family: Family) -> PathBuf {
    match std::env::var_os("HAMNET_ACCEPT_OUT") {
        Some(root) => PathBuf::from(root).join(family.tag()),
        None => std::env::temp_dir().join(format!("hamnet-accept-{}-{}", std::process::id(), family.tag())),
    }
}

fn desk(family: Family) -> ExperimentConfig {
    ExperimentConfig { output_dir: sweep_dir(family).to_string_lossy().into_owned(), ..ExperimentConfig::desk(family) }
}

fn mean_by_n(records: &[hamnet::metrics::ErrorRecord], flavor: Flavor, d: usize) -> Vec<(f64, f64)> {
    let mut by_n: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.flavor == flavor && r.d == d) {
        by_n.entry(r.n_train).or_default().push(r.energy_error);
    }
    by_n.into_iter().map(|(n, v)| (n as f64, aggregate(&v).unwrap().mean)).collect()
}

/// 4. Power-law scaling of the d = 6 linear HNN error.
fn power_law(linear: &SweepOutcome, cfg: &ExperimentConfig) -> Outcome {
    let points = mean_by_n(&linear.records, Flavor::Hnn, 6);
    let (c, alpha) = fit_power_law(&points).unwrap();
    let smooth = linear.surfaces.iter().find(|s| s.label == "HNN").unwrap().smoothed(cfg.smoothing);
    let row: Vec<f64> = cfg.n_train.iter().map(|&n| smooth.get(6, n).unwrap()).collect();
    let monotone = row.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        (-0.45..=-0.05).contains(&alpha) && monotone,
        format!(
            "HNN d=6: dE/E ~ {c:.3} N^{alpha:.3} (alpha in [-0.45, -0.05]); smoothed means {} ({})",
            row.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(" "),
            if monotone { "non-increasing" } else { "not monotone" }
        ),
    )
}

/// 5. NN/HNN ratio at the largest N, and its growth with d.
fn advantage(sweeps: &[(Family, ExperimentConfig, SweepOutcome)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (family, cfg, out) in sweeps {
        let n = *cfg.n_train.iter().max().unwrap();
        let nn = SurfaceGrid::from_records(&out.records, Flavor::Nn, &cfg.dims, &cfg.n_train);
        let hnn = SurfaceGrid::from_records(&out.records, Flavor::Hnn, &cfg.dims, &cfg.n_train);
        let raw = harness::ratio_surface(&nn, &hnn, 0.0).unwrap();
        let smooth = harness::ratio_surface(&nn, &hnn, cfg.smoothing).unwrap();
        let min_d = if *family == Family::Linear { 1 } else { 2 };
        let mut above = true;
        for &d in cfg.dims.iter().filter(|&&d| d >= min_d) {
            above &= raw.get(d, n).unwrap() > 1.0;
        }
        let first = smooth.get(cfg.dims[0], n).unwrap();
        let last = smooth.get(*cfg.dims.last().unwrap(), n).unwrap();
        let grows = last > first;
        pass &= above && grows;
        let cells: Vec<String> = cfg.dims.iter().map(|&d| format!("d{d}:{:.2}", raw.get(d, n).unwrap())).collect();
        parts.push(format!(
            "{} N={n} [{}] {}, smoothed d{}->d{} {first:.2}->{last:.2} {}",
            family.tag(),
            cells.join(" "),
            if above { ">1" } else { "NOT >1" },
            cfg.dims[0],
            cfg.dims.last().unwrap(),
            if grows { "grows" } else { "does not grow" }
        ));
    }
    outcome(pass, parts.join("; "))
}

/// 6. Power-law fit on exact synthetic data.
fn fit_recovery() -> Outcome {
    let points: Vec<(f64, f64)> = (5..=15).map(|k| {
        let n = (1u64 << k) as f64;
        (n, 0.12 * n.powf(-0.22))
    }).collect();
    let (c, alpha) = fit_power_law(&points).unwrap();
    let (ec, ea) = ((c - 0.12).abs(), (alpha + 0.22).abs());
    outcome(ec < 1e-10 && ea < 1e-10, format!("c error {ec:.1e}, alpha error {ea:.1e} (< 1e-10)"))
}

/// 7. Orbit energy drift for every desk training orbit, and RK4 closure.
fn data_fidelity() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for family in [Family::Linear, Family::Quartic, Family::BistableChain] {
        let cfg = ExperimentConfig::desk(family);
        let n = *cfg.n_train.iter().max().unwrap();
        let cells: Vec<(usize, u64)> =
            cfg.dims.iter().flat_map(|&d| (0..cfg.seeds as u64).map(move |s| (d, s))).collect();
        let drifts = Execution::Parallel.map(&cells, |&(d, seed)| {
            let cell = Cell { family, d, n_train: n, seed, flavor: Flavor::Hnn };
            let sys = cfg.system(d).unwrap();
            let (orbits, _) =
                build_training_set(&sys, &cfg.data(), n, Flavor::Hnn, cell.data_seed(), Execution::Sequential).unwrap();
            orbits.iter().map(|o| o.max_energy_drift).collect::<Vec<_>>()
        });
        for v in drifts.into_iter().flatten() {
            worst = worst.max(v);
            count += 1;
        }
    }
    let s0 = PhaseState::new(vec![1.0], vec![0.0]);
    let traj = integrate(&SystemSpec::linear(1), &s0, 2.0 * std::f64::consts::PI, 0.01, Method::Rk4).unwrap();
    let end = traj.states.last().unwrap();
    let closure = ((end.q[0] - 1.0).powi(2) + end.p[0].powi(2)).sqrt();
    outcome(
        worst < 1e-8 && closure < 1e-7,
        format!("{count} orbits, max drift {worst:.2e} (< 1e-8); RK4 2pi closure {closure:.2e} (< 1e-7)"),
    )
}

/// 8. Cell reproducibility and byte-identical sweep output.
fn determinism(linear: &SweepOutcome, cfg: &ExperimentConfig) -> Outcome {
    let family = Family::Linear;
    let picks = [(1, 128, 0, Flavor::Nn), (6, 8192, 7, Flavor::Hnn), (4, 512, 3, Flavor::Nn), (2, 2048, 5, Flavor::Hnn)];
    let mut cells_ok = true;
    for (d, n_train, seed, flavor) in picks {
        let cell = Cell { family, d, n_train, seed, flavor };
        let fresh = harness::run_cell(cfg, &cell).unwrap();
        let stored: Vec<_> = linear
            .records
            .iter()
            .filter(|r| r.d == d && r.n_train == n_train && r.seed == seed && r.flavor == flavor)
            .cloned()
            .collect();
        cells_ok &= fresh == stored;
    }
    let small = |dir: &str| ExperimentConfig {
        dims: vec![1, 3],
        n_train: vec![64, 256],
        seeds: 2,
        forecasts: 3,
        output_dir: std::env::temp_dir().join(format!("hamnet-accept-{}-{dir}", std::process::id())).to_string_lossy().into_owned(),
        ..ExperimentConfig::desk(Family::BistableChain)
    };
    let (a, b) = (small("det-a"), small("det-b"));
    assert_eq!(a.content_hash(), b.content_hash());
    let ra = harness::sweep(&a, Execution::Parallel).unwrap();
    let rb = harness::sweep(&b, Execution::Sequential).unwrap();
    let bytes_ok = std::fs::read(&ra.records_path).unwrap() == std::fs::read(&rb.records_path).unwrap();
    let _ = std::fs::remove_dir_all(&a.output_dir);
    let _ = std::fs::remove_dir_all(&b.output_dir);
    outcome(
        cells_ok && bytes_ok,
        format!(
            "4 desk cells rerun {}; parallel vs sequential records.csv {}",
            if cells_ok { "bit-exact" } else { "DIFFER" },
            if bytes_ok { "byte-identical" } else { "DIFFER" }
        ),
    )
}

/// 9. Shifting the trained HNN's final bias leaves forecasts unchanged.
fn gauge() -> Outcome {
    let cfg = DriftConfig { n_train: 1 << 10, epochs: 2, ..DriftConfig::default() };
    let out = harness::drift_experiment(&cfg, Execution::Sequential).unwrap();
    let base = LearnedField::new(Flavor::Hnn, out.hnn_report.params.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0009);
    let mut worst: f64 = 0.0;
    for shift in [1.0, -37.5, 1e6] {
        let mut p = out.hnn_report.params.clone();
        p.final_bias_mut()[0] += shift;
        let shifted = LearnedField::new(Flavor::Hnn, p).unwrap();
        for _ in 0..4 {
            let s0 = random_state(&mut rng, 1, 1.0);
            let a = integrate(&base, &s0, 20.0, 0.1, Method::Rk4).unwrap();
            let b = integrate(&shifted, &s0, 20.0, 0.1, Method::Rk4).unwrap();
            for (x, y) in a.states.iter().zip(&b.states) {
                for (u, v) in x.to_flat().iter().zip(y.to_flat()) {
                    worst = worst.max((u - v).abs());
                }
            }
        }
    }
    outcome(worst == 0.0, format!("bias shifts 1, -37.5, 1e6: max state difference {worst:e} (exactly 0)"))
}

fn report(n: usize, name: &str, started: Instant, o: Outcome) -> bool {
    println!(
        "criterion {n} {}: {name}: {} [{:.1}s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        started.elapsed().as_secs_f64()
    );
    o.pass
}

fn main() {
    let mut results = Vec::new();
    let t = Instant::now();
    results.push(report(1, "nested gradient vs finite differences", t, nested_gradient()));
    let t = Instant::now();
    results.push(report(2, "autodiff of exact Hamiltonians", t, exact_hamiltonian()));
    let t = Instant::now();
    results.push(report(3, "linear drift, HNN vs NN", t, drift()));

    let t = Instant::now();
    let sweeps: Vec<(Family, ExperimentConfig, SweepOutcome)> = [Family::Linear, Family::Quartic, Family::BistableChain]
        .into_iter()
        .map(|f| {
            let cfg = desk(f);
            let out = harness::sweep(&cfg, Execution::Parallel).unwrap();
            (f, cfg, out)
        })
        .collect();
    println!("desk sweeps finished [{:.1}s]", t.elapsed().as_secs_f64());
    let (_, lin_cfg, lin) = &sweeps[0];

    let t = Instant::now();
    results.push(report(4, "d=6 linear HNN power law", t, power_law(lin, lin_cfg)));
    results.push(report(5, "NN/HNN advantage at largest N", t, advantage(&sweeps)));
    let t = Instant::now();
    results.push(report(6, "power-law fit recovery", t, fit_recovery()));
    let t = Instant::now();
    results.push(report(7, "data-generation fidelity", t, data_fidelity()));
    let t = Instant::now();
    results.push(report(8, "determinism", t, determinism(lin, lin_cfg)));
    let t = Instant::now();
    results.push(report(9, "HNN final-bias gauge invariance", t, gauge()));

    if std::env::var_os("HAMNET_ACCEPT_OUT").is_none() {
        for (_, cfg, _) in &sweeps {
            let _ = std::fs::remove_dir_all(&cfg.output_dir);
        }
    }
    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed < results.len() && std::env::var("HAMNET_ACCEPT_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
