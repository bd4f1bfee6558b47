//! End-to-end acceptance checks at full simulation scale.
//!
//! Runs as a plain binary: one `[PASS]`/`[FAIL]` line per criterion, nonzero
//! exit when any fails. `RCQL_ACCEPTANCE=AC2,AC7` restricts the run.

use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rcql::config::default_parallelism;
use rcql::parallel::Workers;
use rcql::records_csv::{read_records, write_records, ReadMode};
use rcql::stard_csv::{read_stard, write_stard};
use rcql_core::calibration::{calibrate, estimate_moments};
use rcql_core::data::{PatientRecord, SourceKind, StageObservation};
use rcql_core::inference::{bootstrap, BootstrapOptions};
use rcql_core::linmodel::fit_ols;
use rcql_core::qlearning::{fit_qlearning, Policy, QSpecs};
use rcql_core::rng::stream_rng;
use rcql_core::simlab::{optimal_value_linear, simulate, DgpConfig, ExperimentReport, Scenario, TreatmentFree};
use rcql_core::stard::{
    analyze_stard_with, bootstrap_seed, composite_outcome, default_specs, synthetic_fixture, FixtureConfig, StardRow,
    StardStage,
};
use rcql_core::Error;

const SINGLE: SourceKind = SourceKind::SingleSurrogate;
const AVERAGED: SourceKind = SourceKind::AveragedSurrogate;
const CALIBRATED: SourceKind = SourceKind::Calibrated;

/// Collects the individual checks of one criterion.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: String) {
        if !ok {
            self.failed.push(what.clone());
        }
        self.notes.push(what);
    }

    fn note(&mut self, what: String) {
        self.notes.push(what);
    }
}

type Criterion = fn(&Workers) -> Result<Checks, String>;

fn row<'a>(report: &'a ExperimentReport, est: SourceKind, param: &str) -> &'a rcql_core::simlab::EstimationRow {
    report
        .estimation
        .iter()
        .find(|r| r.estimator == est && r.parameter == param)
        .unwrap_or_else(|| panic!("no {est} row for {param}"))
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn ac1(workers: &Workers) -> Result<Checks, String> {
    let mut c = Checks::default();
    for (sigma, single_target) in [(0.5, -0.195), (0.9, -0.446)] {
        let cfg = DgpConfig::one_stage(2000, sigma, 101);
        let report = workers.estimation(&cfg, &[SINGLE, CALIBRATED], 500, 200).map_err(|e| e.to_string())?;
        let n = row(&report, SINGLE, "psi11");
        let rc = row(&report, CALIBRATED, "psi11");
        let (n_cr, rc_cr) = (100.0 * n.cr.unwrap_or(f64::NAN), 100.0 * rc.cr.unwrap_or(f64::NAN));
        c.check(within(n.bias, single_target, 0.02), format!("σ={sigma}: single bias {:.4} (target {single_target} ± 0.02)", n.bias));
        c.check(within(rc.bias, 0.0, 0.02), format!("σ={sigma}: calibrated bias {:.4} (target 0 ± 0.02)", rc.bias));
        c.check((90.0..=97.0).contains(&rc_cr), format!("σ={sigma}: calibrated CR {rc_cr:.1}% (target [90, 97])"));
        if sigma == 0.9 {
            c.check(n_cr <= 10.0, format!("σ={sigma}: single CR {n_cr:.1}% (target ≤ 10)"));
        } else {
            c.note(format!("σ={sigma}: single CR {n_cr:.1}%"));
        }
        if report.metadata.failures > 0 {
            c.note(format!("σ={sigma}: {} failed replications", report.metadata.failures));
        }
    }
    Ok(c)
}

fn ac2(workers: &Workers) -> Result<Checks, String> {
    let mut c = Checks::default();
    let reps = 500;
    for sigma in [0.5, 0.7, 0.9] {
        let cfg = DgpConfig::one_stage(2000, sigma, 202);
        let slope = cfg.true_psi[1];
        let report = workers.estimation(&cfg, &[SINGLE, AVERAGED], reps, 0).map_err(|e| e.to_string())?;
        let s2 = sigma * sigma;
        for (est, factor, label) in [(SINGLE, 1.0 / (1.0 + s2), "single"), (AVERAGED, 1.0 / (1.0 + s2 / 2.0), "averaged")] {
            let r = row(&report, est, "psi11");
            let predicted = (factor - 1.0) * slope;
            let tol = 3.0 * r.se / (report.metadata.used as f64).sqrt();
            c.check(
                within(r.bias, predicted, tol),
                format!("σ={sigma}: {label} bias {:.4} vs predicted {predicted:.4} (± {tol:.4})", r.bias),
            );
        }
    }
    Ok(c)
}

fn ac3(workers: &Workers) -> Result<Checks, String> {
    let mut c = Checks::default();
    let cfg = DgpConfig::two_stage(2000, 0.9, 0.9, TreatmentFree::Linear, 303);
    let report = workers.estimation(&cfg, &[SINGLE, CALIBRATED], 200, 0).map_err(|e| e.to_string())?;
    for p in cfg.psi_labels() {
        let b = row(&report, CALIBRATED, p).bias;
        c.check(b.abs() <= 0.02, format!("calibrated {p} bias {b:.4} (|·| ≤ 0.02)"));
    }
    for (p, target) in [("psi21", 0.448), ("psi11", 0.445)] {
        let b = row(&report, SINGLE, p).bias;
        c.check(within(b, target, 0.03), format!("single {p} bias {b:.4} (target {target} ± 0.03)"));
    }
    Ok(c)
}

/// Shared by the accuracy and value criteria, computed once.
fn prediction_report(workers: &Workers) -> Result<&'static ExperimentReport, String> {
    static REPORT: OnceLock<Result<ExperimentReport, String>> = OnceLock::new();
    REPORT
        .get_or_init(|| {
            let cfg = DgpConfig::two_stage(2000, 0.9, 0.9, TreatmentFree::Linear, 404);
            workers.prediction(&cfg, 5000, 200).map_err(|e| e.to_string())
        })
        .as_ref()
        .map_err(Clone::clone)
}

fn ac4(workers: &Workers) -> Result<Checks, String> {
    let report = prediction_report(workers)?;
    let joint = |s: Scenario| 100.0 * report.accuracy.iter().find(|a| a.scenario == s).map_or(f64::NAN, |a| a.joint);
    let (nn, nbnb, cc, nbt, ct) =
        (joint(Scenario::Nn), joint(Scenario::Nbnb), joint(Scenario::Cc), joint(Scenario::Nbt), joint(Scenario::Ct));
    let mut c = Checks::default();
    c.note(format!("joint %: nn {nn:.2}, nbnb {nbnb:.2}, cc {cc:.2}, nbt {nbt:.2}, ct {ct:.2}"));
    c.check(nn < nbnb && nn < cc, "nn below nbnb and cc".into());
    c.check((nbnb - cc).abs() <= 1.0, format!("nbnb ≈ cc (|Δ| = {:.2} ≤ 1 pp)", (nbnb - cc).abs()));
    c.check(nbnb.max(cc) < nbt, "nbnb and cc below nbt".into());
    c.check(nbt < ct, "nbt below ct".into());
    c.check(cc - nn >= 5.0, format!("cc − nn = {:.2} pp (≥ 5)", cc - nn));
    c.check(ct >= 94.0, format!("ct = {ct:.2}% (≥ 94)"));
    Ok(c)
}

fn ac5(workers: &Workers) -> Result<Checks, String> {
    let report = prediction_report(workers)?;
    let value = |s: Scenario| report.value.iter().find(|v| v.scenario == s).map_or(f64::NAN, |v| v.mean);
    let mut c = Checks::default();
    let closed_form = optimal_value_linear(&report.config);
    c.check(within(closed_form, 3.396, 0.0005), format!("closed-form optimal value {closed_form:.4}"));
    let opt = value(Scenario::Opt);
    c.check(within(opt, 3.396, 0.01), format!("opt value {opt:.4} (3.396 ± 0.01)"));
    let (cc, nn, ct) = (value(Scenario::Cc), value(Scenario::Nn), value(Scenario::Ct));
    c.check(cc - nn >= 0.05, format!("cc − nn = {:.4} (≥ 0.05)", cc - nn));
    c.check((ct - opt).abs() <= 0.01, format!("|ct − opt| = {:.4} (≤ 0.01)", (ct - opt).abs()));
    Ok(c)
}

fn ac6(workers: &Workers) -> Result<Checks, String> {
    let mut c = Checks::default();
    let cfg = DgpConfig::two_stage(2000, 0.9, 0.9, TreatmentFree::Complex, 606);
    let report = workers.estimation(&cfg, &[SINGLE, CALIBRATED], 200, 0).map_err(|e| e.to_string())?;
    for p in cfg.psi_labels() {
        let b = row(&report, CALIBRATED, p).bias;
        c.check(b.abs() <= 0.03, format!("calibrated {p} bias {b:.4} (|·| ≤ 0.03)"));
    }
    let b = row(&report, SINGLE, "psi21").bias;
    c.check(b.abs() >= 0.40, format!("single psi21 bias {b:.4} (|·| ≥ 0.40)"));
    Ok(c)
}

/// Gauss-Jordan on the normal equations.
fn normal_equations(x: &[f64], n: usize, p: usize, y: &[f64]) -> Vec<f64> {
    let w = p + 1;
    let mut g = vec![0.0; p * w];
    for i in 0..n {
        for r in 0..p {
            for col in 0..p {
                g[r * w + col] += x[i * p + r] * x[i * p + col];
            }
            g[r * w + p] += x[i * p + r] * y[i];
        }
    }
    for k in 0..p {
        let piv = (k..p).max_by(|&a, &b| g[a * w + k].abs().total_cmp(&g[b * w + k].abs())).unwrap();
        for col in 0..w {
            g.swap(k * w + col, piv * w + col);
        }
        let d = g[k * w + k];
        g[k * w..(k + 1) * w].iter_mut().for_each(|v| *v /= d);
        for r in (0..p).filter(|&r| r != k) {
            let f = g[r * w + k];
            for col in 0..w {
                g[r * w + col] -= f * g[k * w + col];
            }
        }
    }
    (0..p).map(|r| g[r * w + p]).collect()
}

/// Replicates per patient as `[replicate][coordinate]`, plus error-free rows.
fn random_stage_data(rng: &mut impl Rng, identical: bool) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let (n, dx, dz) = (rng.random_range(8..40), rng.random_range(1..4), rng.random_range(0..3));
    let w = (0..n)
        .map(|_| {
            let k = rng.random_range(1..5);
            let first: Vec<f64> = (0..dx).map(|_| rng.random_range(-5.0..5.0)).collect();
            (0..k)
                .map(|_| if identical { first.clone() } else { (0..dx).map(|_| rng.random_range(-5.0..5.0)).collect() })
                .collect()
        })
        .collect();
    let z = (0..n).map(|_| (0..dz).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    (w, z)
}

/// Observations whose replicates are scattered over four columns.
fn observations(w: &[Vec<Vec<f64>>], z: &[Vec<f64>], rng: &mut impl Rng) -> Vec<StageObservation> {
    w.iter()
        .zip(z)
        .map(|(wi, zi)| {
            let dx = wi[0].len();
            let mut cols: Vec<Option<usize>> = (0..wi.len()).map(Some).chain([None; 4]).take(4).collect();
            for i in (1..cols.len()).rev() {
                cols.swap(i, rng.random_range(0..=i));
            }
            let rows = (0..dx).map(|c| cols.iter().map(|slot| slot.map(|l| wi[l][c])).collect()).collect();
            StageObservation::new(zi.clone(), rows, None, false).unwrap()
        })
        .collect()
}

type Moments = (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>, f64);

/// Every moment by direct summation.
fn brute_force_moments(w: &[Vec<Vec<f64>>], z: &[Vec<f64>]) -> Moments {
    let n = w.len();
    let (dx, dz) = (w[0][0].len(), z[0].len());
    let k: Vec<f64> = w.iter().map(|wi| wi.len() as f64).collect();
    let wbar: Vec<Vec<f64>> =
        (0..n).map(|i| (0..dx).map(|c| w[i].iter().map(|r| r[c]).sum::<f64>() / k[i]).collect()).collect();
    let sk: f64 = k.iter().sum();
    let sk2: f64 = k.iter().map(|v| v * v).sum();
    let nu = sk - sk2 / sk;
    let mu: Vec<f64> = (0..dx).map(|c| (0..n).map(|i| k[i] * wbar[i][c]).sum::<f64>() / sk).collect();
    let muz: Vec<f64> = (0..dz).map(|c| (0..n).map(|i| z[i][c]).sum::<f64>() / n as f64).collect();
    let df: f64 = k.iter().map(|v| v - 1.0).sum();
    let grid = |r: usize, cc: usize, f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
        (0..r).map(|a| (0..cc).map(|b| f(a, b)).collect()).collect()
    };
    let see = grid(dx, dx, &|a, b| {
        (0..n).map(|i| w[i].iter().map(|r| (r[a] - wbar[i][a]) * (r[b] - wbar[i][b])).sum::<f64>()).sum::<f64>() / df
    });
    let sxx = grid(dx, dx, &|a, b| {
        let s: f64 = (0..n).map(|i| k[i] * (wbar[i][a] - mu[a]) * (wbar[i][b] - mu[b])).sum();
        (s - (n as f64 - 1.0) * see[a][b]) / nu
    });
    let sxz = grid(dx, dz, &|a, b| (0..n).map(|i| k[i] * (wbar[i][a] - mu[a]) * (z[i][b] - muz[b])).sum::<f64>() / nu);
    let szz = grid(dz, dz, &|a, b| (0..n).map(|i| (z[i][a] - muz[a]) * (z[i][b] - muz[b])).sum::<f64>() / (n as f64 - 1.0));
    (mu, sxx, sxz, szz, see, nu)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

fn matrix_close(m: &rcql_core::linalg::Matrix, b: &[Vec<f64>], tol: f64) -> bool {
    b.iter().enumerate().all(|(i, r)| r.iter().enumerate().all(|(j, &v)| close(m[(i, j)], v, tol)))
}

fn ac7(workers: &Workers) -> Result<Checks, String> {
    let mut c = Checks::default();
    let instances = 200u64;

    // least squares against the normal equations
    let mut worst = 0.0f64;
    let mut ok = true;
    for seed in 0..instances {
        let mut rng = stream_rng(seed, 70);
        let p = rng.random_range(1..7);
        let n = p + rng.random_range(1..60);
        let x: Vec<f64> = (0..n * p).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let qr = fit_ols(&x, n, p, &y).map_err(|e| e.to_string())?;
        for (a, b) in qr.coefficients.iter().zip(normal_equations(&x, n, p, &y)) {
            worst = worst.max((a - b).abs() / (1.0 + b.abs()));
            ok &= close(*a, b, 1e-8);
        }
    }
    c.check(ok, format!("OLS vs normal equations: {instances} designs, worst relative gap {worst:.1e} (≤ 1e-8)"));

    // identical replicates
    let mut ok = true;
    let mut tested = 0;
    for seed in 0..instances {
        let mut rng = stream_rng(seed, 71);
        let (w, z) = random_stage_data(&mut rng, true);
        let obs = observations(&w, &z, &mut rng);
        let refs: Vec<&StageObservation> = obs.iter().collect();
        let Ok(m) = estimate_moments(&refs) else { continue };
        ok &= m.sigma_ee.max_abs() <= 1e-12;
        for o in &obs {
            if let Ok(xhat) = calibrate(&m, o) {
                tested += 1;
                ok &= xhat.iter().zip(o.replicate_mean()).all(|(a, b)| close(*a, b, 1e-12));
            }
        }
    }
    c.check(ok && tested > 0, format!("zero error variance gives the identity map ({tested} patients, 1e-12)"));

    // moment estimates against direct summation
    let mut ok = true;
    let mut fitted = 0;
    for seed in 0..instances {
        let mut rng = stream_rng(seed, 72);
        let (w, z) = random_stage_data(&mut rng, false);
        let obs = observations(&w, &z, &mut rng);
        let refs: Vec<&StageObservation> = obs.iter().collect();
        let Ok(m) = estimate_moments(&refs) else { continue };
        fitted += 1;
        let (mu, sxx, sxz, szz, see, nu) = brute_force_moments(&w, &z);
        ok &= close(m.nu, nu, 1e-10)
            && m.mu_w.iter().zip(&mu).all(|(a, b)| close(*a, *b, 1e-10))
            && matrix_close(&m.sigma_xx, &sxx, 1e-10)
            && matrix_close(&m.sigma_xz, &sxz, 1e-10)
            && matrix_close(&m.sigma_zz, &szz, 1e-10)
            && matrix_close(&m.sigma_ee, &see, 1e-10);
    }
    c.check(ok && fitted > 0, format!("moments vs direct summation ({fitted} samples, 1e-10)"));

    // pseudo-outcomes never fall below the stage-2 treatment-free fit
    let mut ok = true;
    for seed in 0..instances / 4 {
        let cfg = DgpConfig::two_stage(120, 0.5, 0.5, TreatmentFree::Cubic, seed);
        let data = simulate(&cfg, seed).map_err(|e| e.to_string())?;
        for source in [SourceKind::True, SINGLE, CALIBRATED] {
            let Ok(fit) = fit_qlearning(&data, &cfg.working_specs(), source) else { continue };
            let s2 = fit.stage2.as_ref().unwrap();
            let cov = fit.source().map_err(|e| e.to_string())?;
            for (r, &yt) in data.iter().zip(&fit.pseudo_outcomes) {
                let h = r.history(2, cov).map_err(|e| e.to_string())?;
                let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                let base = dot(&s2.beta, &s2.spec.treatment_free_row(&h).map_err(|e| e.to_string())?);
                let blip = dot(&s2.psi, &s2.spec.blip_row(&h).map_err(|e| e.to_string())?);
                ok &= close(yt, base + blip.max(0.0), 1e-12) && yt >= base - 1e-12 * (1.0 + base.abs());
            }
        }
    }
    c.check(ok, "pseudo-outcome dominance".into());

    // recommendations are unchanged by positive rescaling of the blips
    let mut ok = true;
    let specs = QSpecs::main_effects(2, 1, 1);
    let blip_specs = vec![specs.stage1.clone(), specs.stage2.clone().unwrap()];
    for seed in 0..instances {
        let mut rng = stream_rng(seed, 73);
        let psis: Vec<Vec<f64>> = (0..2).map(|_| (0..2).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let scale = 10f64.powf(rng.random_range(-6.0..3.0));
        let policy = Policy::new(psis.clone(), blip_specs.clone()).map_err(|e| e.to_string())?;
        let scaled = Policy::new(psis.iter().map(|p| p.iter().map(|v| v * scale).collect()).collect(), blip_specs.clone())
            .map_err(|e| e.to_string())?;
        for _ in 0..20 {
            let h = [1.0, rng.random_range(-5.0..5.0)];
            for stage in 1..=2 {
                ok &= policy.recommend(stage, &h).ok() == scaled.recommend(stage, &h).ok();
            }
        }
    }
    c.check(ok, "positive-scale invariance of the policy".into());

    // bootstrap determinism, sequential and pooled
    let mut ok = true;
    for seed in 0..5 {
        let cfg = DgpConfig::two_stage(150, 0.7, 0.7, TreatmentFree::Linear, seed);
        let data = simulate(&cfg, seed).map_err(|e| e.to_string())?;
        let specs = cfg.working_specs();
        let first = bootstrap(&data, &specs, CALIBRATED, 30, seed + 1).map_err(|e| e.to_string())?;
        let again = bootstrap(&data, &specs, CALIBRATED, 30, seed + 1).map_err(|e| e.to_string())?;
        let pooled = workers
            .bootstrap(&data, &specs, CALIBRATED, BootstrapOptions::new(30, seed + 1))
            .map_err(|e| e.to_string())?;
        ok &= first == again && first == pooled;
    }
    c.check(ok, "bootstrap determinism".into());

    // CSV round trips
    let mut ok = true;
    for seed in 0..instances / 4 {
        let cfg = if seed % 2 == 0 {
            DgpConfig::one_stage(50, 0.6, seed)
        } else {
            DgpConfig::two_stage(50, 0.6, 0.8, TreatmentFree::Exponential, seed)
        };
        let data = simulate(&cfg, seed).map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_records(&mut buf, &data).map_err(|e| e.to_string())?;
        ok &= read_records(buf.as_slice(), "memory", ReadMode::Training).map_err(|e| e.to_string())? == data;

        let rows = synthetic_fixture(&FixtureConfig { n: 60, stage2_n: 25, ..Default::default() }, seed)
            .map_err(|e| e.to_string())?;
        let mut buf = Vec::new();
        write_stard(&mut buf, &rows).map_err(|e| e.to_string())?;
        ok &= read_stard(buf.as_slice(), "memory").map_err(|e| e.to_string())? == rows;
    }
    c.check(ok, "patient and trial CSV round trips".into());
    Ok(c)
}

fn ac8(workers: &Workers) -> Result<Checks, String> {
    let mut c = Checks::default();
    let cfg = FixtureConfig::default();
    let rows = synthetic_fixture(&cfg, 7).map_err(|e| e.to_string())?;
    let runner = |r: &[PatientRecord], s: &QSpecs, k: SourceKind, o: BootstrapOptions| {
        workers.bootstrap(r, s, k, o)
    };
    let analysis = analyze_stard_with(&rows, &default_specs(), BootstrapOptions::new(200, bootstrap_seed(7)), &runner)
        .map_err(|e| e.to_string())?;
    let truth = cfg.truth();
    let z = |s: &rcql_core::inference::BootstrapSummary, i: usize| (s.point[i] - truth[i]).abs() / s.se[i];
    let corrected_worst = (0..truth.len()).map(|i| z(&analysis.corrected, i)).fold(0.0, f64::max);
    c.check(corrected_worst <= 2.0, format!("corrected: worst |estimate − truth| = {corrected_worst:.2} SE (≤ 2)"));
    let naive_worst = (0..truth.len())
        .flat_map(|i| [z(&analysis.clinician, i), z(&analysis.patient, i)])
        .fold(0.0, f64::max);
    c.check(naive_worst > 2.0, format!("naive: worst |estimate − truth| = {naive_worst:.2} SE (> 2)"));

    let stage = StardStage { qids_c: 1.0, qids_s: 1.5, slope: 0.2, preference: true, treatment: false };
    let remitter = StardRow { id: 1, stage1: stage, stage2: None, y1: -3.25, y2: None, r1: true };
    let entrant = StardRow { id: 2, stage1: stage, stage2: Some(stage), y1: -3.0, y2: Some(-6.5), r1: false };
    let missing = StardRow { y2: None, id: 3, ..entrant.clone() };
    c.check(composite_outcome(&remitter) == Ok(-3.25), "composite outcome of a remitter is Y₁".into());
    c.check(composite_outcome(&entrant) == Ok(-4.75), "composite outcome of an entrant is (Y₁ + Y₂)/2".into());
    c.check(
        matches!(composite_outcome(&missing), Err(Error::MissingY2 { id: 3 })),
        "missing Y₂ is reported with the patient".into(),
    );
    Ok(c)
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 8] =
        [("AC1", ac1), ("AC2", ac2), ("AC3", ac3), ("AC4", ac4), ("AC5", ac5), ("AC6", ac6), ("AC7", ac7), ("AC8", ac8)];
    let only: Option<Vec<String>> =
        std::env::var("RCQL_ACCEPTANCE").ok().map(|v| v.split(',').map(|s| s.trim().to_uppercase()).collect());
    let workers = match Workers::new(default_parallelism()) {
        Ok(w) => w,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::FAILURE;
        }
    };
    let mut all_passed = true;
    for (id, criterion) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|s| s == id)) {
            continue;
        }
        let started = Instant::now();
        let (passed, detail) = match criterion(&workers) {
            Ok(checks) => (checks.failed.is_empty(), checks.notes.join("; ")),
            Err(e) => (false, format!("error: {e}")),
        };
        all_passed &= passed;
        let tag = if passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {id} ({:.1}s): {detail}", started.elapsed().as_secs_f64());
    }
    if all_passed { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
