//! Acceptance checks, one line per criterion.
//!
//! `cargo test -p enet-cli --test acceptance [-- NAME...]` runs the criteria
//! whose names contain any NAME. The process exits nonzero when a check
//! errors; failed checks only turn the exit code nonzero when
//! `ENET_ACCEPTANCE_STRICT` is set.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use enet::channel::{generate_channel, MultipathScenario, PhaseModel};
use enet::codec::{count_params, EnetConfig, EnetParams};
use enet::correlation::{
    correlation, phase_identity_montecarlo, theorem1_check, CorrelationOptions, Domain, Part, ShiftedPairs, UniformPairs,
};
use enet::train::{evaluate, prepare_planes, split_dataset, train_with, EvalReport, TrainConfig};
use enet::transform::{
    angular_delay_truncated, reconstruct_spatial, split_normalize, to_angular_delay, AngularDelayPlanes, NormPolicy,
};
use enet::ComplexMatrix;
use rayon::prelude::*;

const N_CC: usize = 32;
const ANALYSIS_SAMPLES: usize = 10_000;
const DESK_SAMPLES: usize = 5_000;

type Check = Result<(bool, String), String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn fmt_duration(d: Duration) -> String {
    let s = d.as_secs_f64();
    if s < 60.0 {
        format!("{s:.1}s")
    } else {
        format!("{}m{:02}s", s as u64 / 60, s as u64 % 60)
    }
}

fn truncated(sc: &MultipathScenario, count: usize) -> Vec<ComplexMatrix> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| angular_delay_truncated(&generate_channel(sc, i), N_CC).unwrap().h_s)
        .collect()
}

fn normalized(h_s: &[ComplexMatrix]) -> Vec<AngularDelayPlanes> {
    let policy = NormPolicy::fit(h_s).unwrap();
    h_s.par_iter().map(|h| split_normalize(h, &policy).unwrap()).collect()
}

/// The default scenario's first 10^4 samples; the desk runs use a prefix.
fn default_h_s() -> &'static [ComplexMatrix] {
    static DATA: OnceLock<Vec<ComplexMatrix>> = OnceLock::new();
    DATA.get_or_init(|| truncated(&MultipathScenario::default(), ANALYSIS_SAMPLES))
}

fn default_planes() -> &'static [AngularDelayPlanes] {
    static DATA: OnceLock<Vec<AngularDelayPlanes>> = OnceLock::new();
    DATA.get_or_init(|| normalized(default_h_s()))
}

fn param_counts() -> Check {
    let expect = [(16, [0.27, 0.08, 0.04, 0.03]), (32, [0.30, 0.11, 0.07, 0.06])];
    let mut ok = true;
    let mut cells = Vec::new();
    for (f, row) in expect {
        for (g, want) in [4.0, 16.0, 32.0, 64.0].iter().zip(row) {
            let c = count_params(&EnetConfig { f, gamma: 1.0 / g, ..Default::default() }).map_err(|e| e.to_string())?;
            let got = (c.millions() * 100.0).round() / 100.0;
            ok &= got == want;
            cells.push(format!("f={f} 1/{g}: {got:.2}M"));
        }
    }
    Ok((ok, cells.join(", ")))
}

fn gradient_suite() -> Check {
    let reports = enet::gradcheck::suite(20, 0);
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed).map(|r| format!("{} ({:.2e})", r.name, r.max_rel_err)).collect();
    let worst = reports.iter().map(|r| r.max_rel_err / r.tolerance).fold(0.0, f64::max);
    let ok = failed.is_empty() && reports.iter().all(|r| r.trials >= 20);
    Ok((ok, format!("{} cases, worst error/tolerance {worst:.2e}; failed: {failed:?}", reports.len())))
}

fn theorem1_on(planes: &[AngularDelayPlanes]) -> Result<[(bool, f64); 2], String> {
    let mut out = [(false, 0.0); 2];
    for (slot, domain) in out.iter_mut().zip([Domain::Angular, Domain::Delay]) {
        let r = theorem1_check(planes, domain, N_CC - 1, 3.0, CorrelationOptions::default()).map_err(|e| e.to_string())?;
        *slot = (r.passed, r.lags.iter().map(|l| l.z).fold(0.0, f64::max));
    }
    Ok(out)
}

fn theorem1() -> Check {
    let iid = MultipathScenario { phases: PhaseModel::Iid, ..Default::default() };
    let fixed = MultipathScenario { phases: PhaseModel::Fixed { phase: 0.0 }, ..Default::default() };
    let [da, dd] = theorem1_on(default_planes())?;
    let [ia, id] = theorem1_on(&normalized(&truncated(&iid, ANALYSIS_SAMPLES)))?;
    let [fa, fd] = theorem1_on(&normalized(&truncated(&fixed, ANALYSIS_SAMPLES)))?;
    let ok = da.0 && dd.0 && ia.0 && id.0 && !(fa.0 && fd.0);
    Ok((
        ok,
        format!(
            "max z over lags 1..31 (k = 3): cluster phases {:.2}/{:.2}, iid rays {:.2}/{:.2}, fixed phases {:.1}/{:.1} (angular/delay)",
            da.1, dd.1, ia.1, id.1, fa.1, fd.1
        ),
    ))
}

fn phase_identity() -> Check {
    let u = phase_identity_montecarlo(&UniformPairs, 1_000_000, 3.0, 1).map_err(|e| e.to_string())?;
    let s = phase_identity_montecarlo(&ShiftedPairs { shift: 0.7 }, 1_000_000, 3.0, 2).map_err(|e| e.to_string())?;
    Ok((
        u.passed && s.passed,
        format!(
            "uniform: cos {:+.5} sin {:+.5}; shifted 0.7: cos {:.5} sin {:.5} vs {:.5}",
            u.mean_cos,
            u.mean_sin,
            s.mean_cos,
            s.mean_sin,
            0.7f64.cos() / 2.0
        ),
    ))
}

fn correlation_contrast() -> Check {
    let p = default_planes();
    let r1 = |domain, part| -> Result<f64, String> {
        Ok(correlation(p, domain, part, 1, CorrelationOptions::default()).map_err(|e| e.to_string())?.values[0])
    };
    let (ar, dr) = (r1(Domain::Angular, Part::Real)?, r1(Domain::Delay, Part::Real)?);
    let (ai, di) = (r1(Domain::Angular, Part::Imag)?, r1(Domain::Delay, Part::Imag)?);
    Ok((
        ar.abs() >= 2.0 * dr.abs(),
        format!(
            "real R_a(1) {ar:.4e} R_d(1) {dr:.4e} ratio {:.1}; imag ratio {:.1}",
            ar.abs() / dr.abs(),
            ai.abs() / di.abs()
        ),
    ))
}

fn round_trip() -> Check {
    let sc = MultipathScenario::default();
    let h: Vec<_> = (0..1000u64).into_par_iter().map(|i| generate_channel(&sc, i)).collect();
    let t: Vec<_> = h.par_iter().map(|h| angular_delay_truncated(h, N_CC).unwrap()).collect();
    let policy = NormPolicy::fit(t.iter().map(|t| &t.h_s)).map_err(|e| e.to_string())?;
    let rows: Vec<(f64, f64, f64)> = h
        .par_iter()
        .zip(&t)
        .map(|(h, t)| {
            let e = h.matrix().frobenius();
            let unitary = (to_angular_delay(h).frobenius() - e).abs() / e;
            let planes = split_normalize(&t.h_s, &policy).unwrap();
            let back = reconstruct_spatial(&planes, h.n_c()).unwrap();
            let err = back.matrix().distance(h.matrix()).powi(2) / h.matrix().energy();
            (unitary, err - t.discarded_fraction, t.discarded_fraction)
        })
        .collect();
    let worst_unitary = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_excess = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let mean_discarded = rows.iter().map(|r| r.2).sum::<f64>() / rows.len() as f64;
    Ok((
        worst_unitary <= 1e-10 && worst_excess <= 1e-6,
        format!(
            "max norm change {worst_unitary:.1e}, max error minus discarded energy {worst_excess:.1e}, mean discarded {mean_discarded:.2e}"
        ),
    ))
}

struct DeskRun {
    report: EvalReport,
    best_epoch: usize,
    epochs_run: usize,
    elapsed: Duration,
}

/// Desk-scale training at the defaults, memoized by compression ratio.
fn desk_run(inv_gamma: u32) -> &'static DeskRun {
    static RUNS: OnceLock<std::sync::Mutex<BTreeMap<u32, &'static DeskRun>>> = OnceLock::new();
    let runs = RUNS.get_or_init(Default::default);
    if let Some(r) = runs.lock().unwrap().get(&inv_gamma) {
        return r;
    }
    let start = Instant::now();
    let h_s = &default_h_s()[..DESK_SAMPLES];
    let split = split_dataset(h_s.len(), Default::default(), 0).unwrap();
    let data = prepare_planes(h_s, &split).unwrap();
    let model = EnetParams::build(EnetConfig { gamma: 1.0 / inv_gamma as f64, ..Default::default() }, 0).unwrap();
    let out = train_with(model, &data.train, &data.val, &TrainConfig::default(), &mut |l| {
        if l.epoch % 100 == 0 {
            eprintln!("  desk 1/{inv_gamma}: epoch {} val {:.6}", l.epoch, l.val_loss);
        }
    })
    .unwrap();
    let run = Box::leak(Box::new(DeskRun {
        report: evaluate(&out.best, &data.test).unwrap(),
        best_epoch: out.best_epoch,
        epochs_run: out.history.len(),
        elapsed: start.elapsed(),
    }));
    runs.lock().unwrap().insert(inv_gamma, run);
    run
}

fn one_part_training() -> Check {
    let r = desk_run(4);
    let c = &r.report.centered;
    let gap = (c.real.db.0 - c.imag.db.0).abs();
    Ok((
        gap <= 1.0,
        format!(
            "test NMSE real {:.2} dB imag {:.2} dB gap {gap:.2} dB (best epoch {} of {}, train {})",
            c.real.db.0,
            c.imag.db.0,
            r.best_epoch,
            r.epochs_run,
            fmt_duration(r.elapsed)
        ),
    ))
}

fn gamma_monotonicity() -> Check {
    let runs = [4, 16, 64].map(desk_run);
    let db: Vec<f64> = runs.iter().map(|r| r.report.complex.db.0).collect();
    let total: Duration = runs.iter().map(|r| r.elapsed).sum();
    Ok((
        db[0] < db[1] && db[1] < db[2],
        format!(
            "test NMSE 1/4 {:.3} dB, 1/16 {:.3} dB, 1/64 {:.3} dB (three runs {})",
            db[0],
            db[1],
            db[2],
            fmt_duration(total)
        ),
    ))
}

fn overfit_probe() -> Check {
    let p = normalized(&default_h_s()[..32]);
    let model = EnetParams::build(EnetConfig::default(), 0).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { epochs: 2000, batch_size: 4, patience: None, ..Default::default() };
    let out = train_with(model, &p, &p, &cfg, &mut |_| {}).map_err(|e| e.to_string())?;
    let r = evaluate(&out.best, &p).map_err(|e| e.to_string())?;
    let db = r.centered.real.db.0;
    Ok((db <= -20.0, format!("training NMSE {db:.2} dB after 2000 epochs (best epoch {})", out.best_epoch)))
}

fn enet(out: &Path, threads: &str, args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_enet"))
        .arg("--out")
        .arg(out)
        .args(["-s", "n_c=128", "-s", "n_t=16", "-s", "n_cc=16", "-s", "f=4", "-s", "batch_size=20"])
        .args(args)
        .env("ENET_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    match o.status.code() {
        Some(0 | 1) => Ok(()),
        _ => Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr))),
    }
}

fn session(dir: &Path, threads: &str) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let ds = dir.join("dataset.json");
    let ds = ds.to_str().unwrap();
    let ck = dir.join("model.ckpt");
    let ck = ck.to_str().unwrap();
    enet(dir, threads, &["generate", "--count", "300"])?;
    enet(dir, threads, &["analyze", "--dataset", ds])?;
    enet(dir, threads, &["train", "--dataset", ds, "--epochs", "3"])?;
    enet(dir, threads, &["evaluate", "--checkpoint", ck, "--dataset", ds])?;
    enet(dir, threads, &["visualize", "--checkpoint", ck, "--dataset", ds, "--index", "7"])?;
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = e.map_err(|e| e.to_string())?.path();
        let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name == "manifest.json" {
            // wall time is the one field that may differ
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
            v.as_object_mut().unwrap().remove("elapsed_secs");
            bytes = serde_json::to_vec(&v).unwrap();
        }
        files.insert(name, bytes);
    }
    Ok(files)
}

fn reproducibility() -> Check {
    let mut notes = Vec::new();
    let mut ok = true;
    for threads in ["1", "2"] {
        // the same directory both times, since paths are recorded
        let dir = tempfile::tempdir().unwrap();
        let fa = session(dir.path(), threads)?;
        for e in std::fs::read_dir(dir.path()).unwrap() {
            std::fs::remove_file(e.unwrap().path()).unwrap();
        }
        let fb = session(dir.path(), threads)?;
        let differing: Vec<_> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).cloned().collect();
        ok &= differing.is_empty() && fa.len() == fb.len();
        notes.push(format!("{threads} thread(s): {} files, differing {differing:?}", fa.len()));
    }
    Ok((ok, notes.join("; ")))
}

fn main() {
    let criteria = [
        Criterion { name: "param-counts", budget: secs(1), run: param_counts },
        Criterion { name: "gradient-suite", budget: secs(120), run: gradient_suite },
        Criterion { name: "theorem1", budget: secs(300), run: theorem1 },
        Criterion { name: "phase-identity", budget: secs(60), run: phase_identity },
        Criterion { name: "correlation-contrast", budget: secs(300), run: correlation_contrast },
        Criterion { name: "round-trip", budget: secs(60), run: round_trip },
        Criterion { name: "one-part-training", budget: secs(30 * 60), run: one_part_training },
        Criterion { name: "gamma-monotonicity", budget: secs(90 * 60), run: gamma_monotonicity },
        Criterion { name: "overfit-probe", budget: secs(10 * 60), run: overfit_probe },
        Criterion { name: "reproducibility", budget: secs(10 * 60), run: reproducibility },
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let (mut passed, mut failed, mut errors) = (0, 0, 0);
    for c in criteria.iter().filter(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str()))) {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = start.elapsed();
        let time = format!(
            "{} of {}{}",
            fmt_duration(took),
            fmt_duration(c.budget),
            if took > c.budget { ", over budget" } else { "" }
        );
        match result {
            Ok((true, detail)) => {
                passed += 1;
                println!("PASS  {:<22} {detail} [{time}]", c.name);
            }
            Ok((false, detail)) => {
                failed += 1;
                println!("FAIL  {:<22} {detail} [{time}]", c.name);
            }
            Err(e) => {
                errors += 1;
                println!("ERROR {:<22} {e} [{time}]", c.name);
            }
        }
    }
    println!("acceptance: {passed} passed, {failed} failed, {errors} errors");
    if errors > 0 || (failed > 0 && std::env::var_os("ENET_ACCEPTANCE_STRICT").is_some()) {
        std::process::exit(1);
    }
}
