use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use enet::channel::dataset::{load_dataset, save_spatial, Dataset, DatasetManifest};
use enet::channel::generate_channel;
use enet::codec::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use enet::codec::{count_params, EnetConfig, EnetParams, REFERENCE_MILLIONS};
use enet::correlation::{correlation, theorem1_check, write_profiles_csv, CorrelationOptions, Domain, Part};
use enet::train::{evaluate, planes_fingerprint, prepare_planes, split_dataset, train_with, EvalReport, NmseStats, RunManifest};
use enet::transform::{angular_delay_truncated, split_normalize, AngularDelayPlanes, NormMeta, NormPolicy};
use enet::{ComplexMatrix, Tensor4};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, KEYS};
use crate::{pgm, Command, Global};

pub fn run(g: &Global, cmd: Command) -> Result<bool> {
    let mut cfg = ExperimentConfig::load(g.config.as_deref(), &g.set)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.sync();
    match cmd {
        Command::Generate { count, name } => generate(&cfg, &g.out, count as usize, &name),
        Command::Analyze { dataset } => analyze(&cfg, &g.out, &dataset),
        Command::Train { dataset, gamma, f, epochs } => {
            if let Some(v) = gamma {
                cfg.model.gamma = v;
            }
            if let Some(v) = f {
                cfg.model.f = v;
            }
            if let Some(v) = epochs {
                cfg.train.epochs = v;
            }
            train(&cfg, &g.out, dataset.as_deref())
        }
        Command::Evaluate { checkpoint, dataset } => evaluate_cmd(&g.out, &checkpoint, &dataset),
        Command::CountParams { f, gamma, n_cc, n_t, table } => {
            let m = &mut cfg.model;
            m.f = f.unwrap_or(m.f);
            m.gamma = gamma.unwrap_or(m.gamma);
            m.n_cc = n_cc.unwrap_or(m.n_cc);
            m.n_t = n_t.unwrap_or(m.n_t);
            count_params_cmd(&cfg.model, table)
        }
        Command::Visualize { checkpoint, dataset, index } => visualize(&cfg, &g.out, checkpoint.as_deref(), &dataset, index),
        Command::GradCheck { trials } => {
            let reports = enet::gradcheck::suite(trials, cfg.seed);
            for r in &reports {
                let verdict = if r.passed { "ok" } else { "FAIL" };
                println!("{:<40} trials {:>3}  max rel err {:.3e}  tol {:.0e}  {verdict}", r.name, r.trials, r.max_rel_err, r.tolerance);
            }
            Ok(reports.iter().all(|r| r.passed))
        }
        Command::Keys => {
            for (k, doc) in KEYS {
                println!("{k:<22} {doc}");
            }
            Ok(true)
        }
    }
}

fn out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn generate(cfg: &ExperimentConfig, out: &Path, count: usize, name: &str) -> Result<bool> {
    cfg.scenario.validate()?;
    out_dir(out)?;
    let path = out.join(format!("{name}.json"));
    let samples = enet::channel::generate_channels(&cfg.scenario, count)?;
    save_spatial(&path, &samples, cfg.seed, Some(&cfg.scenario))?;
    println!("wrote {count} samples to {}", path.display());
    Ok(true)
}

/// Truncated angular-delay matrices of every sample, plus the normalization
/// stored with a plane dataset.
fn load_truncated(path: &Path, n_cc: usize) -> Result<(DatasetManifest, Vec<ComplexMatrix>, Option<NormMeta>)> {
    let (manifest, data) = load_dataset(path)?;
    match data {
        Dataset::Spatial(v) => {
            let h = v.par_iter().map(|c| angular_delay_truncated(c, n_cc).map(|t| t.h_s)).collect::<enet::Result<_>>()?;
            Ok((manifest, h, None))
        }
        Dataset::Planes(v) => {
            if manifest.rows() != n_cc {
                bail!("{}: planes have {} delay rows, config expects n_cc = {n_cc}", path.display(), manifest.rows());
            }
            Ok((manifest, v.iter().map(AngularDelayPlanes::to_complex).collect(), v.first().map(|p| p.norm())))
        }
    }
}

fn policy_from(meta: NormMeta) -> Result<NormPolicy> {
    Ok(NormPolicy::symmetric(1.0 / (2.0 * meta.scale))?)
}

fn normalize_all(h_s: &[ComplexMatrix], policy: &NormPolicy) -> Result<Vec<AngularDelayPlanes>> {
    Ok(h_s.par_iter().map(|h| split_normalize(h, policy)).collect::<enet::Result<_>>()?)
}

fn analyze(cfg: &ExperimentConfig, out: &Path, dataset: &Path) -> Result<bool> {
    let (_, h_s, stored) = load_truncated(dataset, cfg.model.n_cc)?;
    let policy = match stored {
        Some(m) => policy_from(m)?,
        None => NormPolicy::fit(&h_s)?,
    };
    let planes = normalize_all(&h_s, &policy)?;
    let t_max = cfg.t_max();
    let opts = CorrelationOptions { center: cfg.center, ..Default::default() };
    let mut profiles = vec![];
    for domain in [Domain::Angular, Domain::Delay] {
        for part in [Part::Real, Part::Imag] {
            profiles.push(correlation(&planes, domain, part, t_max, opts)?);
        }
    }
    out_dir(out)?;
    let csv = out.join("correlation.csv");
    let mut file = fs::File::create(&csv).with_context(|| format!("creating {}", csv.display()))?;
    write_profiles_csv(&mut file, &profiles)?;
    file.flush()?;

    let reports = [Domain::Angular, Domain::Delay].map(|d| theorem1_check(&planes, d, t_max, cfg.k, opts));
    let reports = reports.into_iter().collect::<enet::Result<Vec<_>>>()?;
    for r in &reports {
        let worst = r.lags.iter().map(|l| l.z).fold(0.0, f64::max);
        let verdict = if r.passed { "pass" } else { "FAIL" };
        println!("{:<8} R^R(1) {:+.4e}  R^I(1) {:+.4e}  max z {worst:.2} (k = {})  {verdict}", r.domain.name(), r.lags[0].r_real, r.lags[0].r_imag, r.k);
    }
    let ratio = profiles[0].values[0].abs() / profiles[2].values[0].abs();
    println!("|R_angular(1)| / |R_delay(1)| (real) = {ratio:.3}");
    write_json(&out.join("theorem1.json"), &reports)?;
    Ok(reports.iter().all(|r| r.passed))
}

fn print_eval(r: &EvalReport) {
    let line = |label: &str, s: &NmseStats| {
        let db = if s.db.is_neg_infinite() { "-inf".to_string() } else { format!("{:.2}", s.db.0) };
        println!("{label:<24} NMSE {db:>8} dB  (median {:.2}, {} samples, {} excluded)", s.median_db.0, s.count, s.excluded);
    };
    line("real, centered", &r.centered.real);
    line("imag, centered", &r.centered.imag);
    line("complex", &r.complex);
    line("real, [0,1] planes", &r.normalized.real);
    line("imag, [0,1] planes", &r.normalized.imag);
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    config: &'a ExperimentConfig,
    dataset: Option<PathBuf>,
    dataset_seed: Option<u64>,
    run: RunManifest,
    elapsed_secs: f64,
}

fn train(cfg: &ExperimentConfig, out: &Path, dataset: Option<&Path>) -> Result<bool> {
    let start = Instant::now();
    cfg.model.validate()?;
    let (h_s, dataset_seed) = match dataset {
        Some(p) => {
            let (m, h, _) = load_truncated(p, cfg.model.n_cc)?;
            (h, Some(m.seed))
        }
        None => {
            cfg.scenario.validate()?;
            let n_cc = cfg.model.n_cc;
            let h = (0..cfg.samples as u64)
                .into_par_iter()
                .map(|i| angular_delay_truncated(&generate_channel(&cfg.scenario, i), n_cc).map(|t| t.h_s))
                .collect::<enet::Result<_>>()?;
            (h, None)
        }
    };
    if let Some(h) = h_s.first() {
        if h.cols() != cfg.model.n_t {
            bail!("dataset has {} antennas, config expects n_t = {}", h.cols(), cfg.model.n_t);
        }
    }
    let split = split_dataset(h_s.len(), cfg.train.split, cfg.seed)?;
    let data = prepare_planes(&h_s, &split)?;
    drop(h_s);
    out_dir(out)?;
    let model = EnetParams::build(cfg.model, cfg.seed)?;
    eprintln!(
        "training f={} gamma={} on {}/{}/{} samples for up to {} epochs",
        cfg.model.f,
        cfg.model.gamma,
        data.train.len(),
        data.val.len(),
        data.test.len(),
        cfg.train.epochs
    );
    let outcome = train_with(model, &data.train, &data.val, &cfg.train, &mut |l| {
        if l.epoch % 10 == 0 || l.epoch == 1 {
            eprintln!("epoch {:>4}  train {:.6}  val {:.6}", l.epoch, l.train_loss, l.val_loss);
        }
    })?;
    let eval = evaluate(&outcome.best, &data.test)?;
    print_eval(&eval);
    let ckpt = Checkpoint { params: outcome.best.clone(), norm: Some(data.policy.meta()) };
    save_checkpoint(&out.join("model.ckpt"), &ckpt)?;

    let mut loss = String::from("epoch,train_loss,val_loss\n");
    for l in &outcome.history {
        loss.push_str(&format!("{},{:e},{:e}\n", l.epoch, l.train_loss, l.val_loss));
    }
    fs::write(out.join("loss.csv"), loss)?;
    let run = RunManifest {
        model: cfg.model,
        train: cfg.train.clone(),
        model_seed: cfg.seed,
        policy: data.policy,
        split_sizes: [data.train.len(), data.val.len(), data.test.len()],
        train_fingerprint: planes_fingerprint(&data.train),
        initial_loss: outcome.initial_loss,
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        history: outcome.history,
        eval,
    };
    let record = TrainRecord { config: cfg, dataset: dataset.map(Path::to_path_buf), dataset_seed, run, elapsed_secs: start.elapsed().as_secs_f64() };
    write_json(&out.join("manifest.json"), &record)?;
    println!("wrote {}", out.join("model.ckpt").display());
    Ok(true)
}

fn evaluate_cmd(out: &Path, checkpoint: &Path, dataset: &Path) -> Result<bool> {
    let ckpt = load_checkpoint(checkpoint)?;
    let (_, h_s, _) = load_truncated(dataset, ckpt.params.config().n_cc)?;
    let policy = match ckpt.norm {
        Some(m) => policy_from(m)?,
        None => NormPolicy::fit(&h_s)?,
    };
    let planes = normalize_all(&h_s, &policy)?;
    let report = evaluate(&ckpt.params, &planes)?;
    print_eval(&report);
    out_dir(out)?;
    write_json(&out.join("eval.json"), &report)?;
    Ok(true)
}

fn count_params_cmd(config: &EnetConfig, table: bool) -> Result<bool> {
    if table {
        let gammas = [("1/4", 0.25), ("1/16", 1.0 / 16.0), ("1/32", 1.0 / 32.0), ("1/64", 1.0 / 64.0)];
        print!("{:<14}", "network");
        for (g, _) in gammas {
            print!("{g:>8}");
        }
        println!();
        for (name, cells) in REFERENCE_MILLIONS {
            print!("{name:<14}");
            for c in cells {
                print!("{:>8}", format!("{c:.2}M"));
            }
            println!();
        }
        for f in [16, 32] {
            print!("{:<14}", format!("ENet f={f}"));
            for (_, gamma) in gammas {
                let c = count_params(&EnetConfig { f, gamma, ..*config })?;
                print!("{:>8}", format!("{:.2}M", c.millions()));
            }
            println!();
        }
        return Ok(true);
    }
    let c = count_params(config)?;
    for l in &c.layers {
        println!("{:<12} {:>9} {:>6} {:>9}", l.name, l.weights, l.biases, l.total());
    }
    println!("encoder {}  (dense {})  decoder {}", c.encoder, c.encoder_dense, c.decoder);
    println!("total {} = {:.2}M", c.total, c.millions());
    Ok(true)
}

fn visualize(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>, dataset: &Path, index: usize) -> Result<bool> {
    let ckpt = checkpoint.map(load_checkpoint).transpose()?;
    let (_, data) = load_dataset(dataset)?;
    if index >= data.len() {
        bail!("sample index {index} out of range, dataset has {} samples", data.len());
    }
    let n_cc = ckpt.as_ref().map_or(cfg.model.n_cc, |c| c.params.config().n_cc);
    let planes = match data {
        Dataset::Planes(v) => v[index].clone(),
        Dataset::Spatial(v) => {
            let h = angular_delay_truncated(&v[index], n_cc)?.h_s;
            let policy = match ckpt.as_ref().and_then(|c| c.norm) {
                Some(m) => policy_from(m)?,
                None => NormPolicy::fit([&h])?,
            };
            split_normalize(&h, &policy)?
        }
    };
    let (rows, cols, norm) = (planes.n_cc(), planes.n_t(), planes.norm());
    let original = [planes.real_plane().to_vec(), planes.imag_plane().to_vec()];
    let recon = match &ckpt {
        None => original.clone(),
        Some(c) => {
            let x: Vec<f32> = original.iter().flatten().map(|&v| v as f32).collect();
            let y = c.params.reconstruct_batch(&Tensor4::from_vec([2, 1, rows, cols], x)?)?;
            y.data().chunks(rows * cols).map(|s| s.iter().map(|&v| v as f64).collect()).collect::<Vec<_>>().try_into().unwrap()
        }
    };
    let value = |v: f64| norm.invert(v);
    let images = [("original_real", &original[0]), ("original_imag", &original[1]), ("recon_real", &recon[0]), ("recon_imag", &recon[1])];
    let peak = images.iter().flat_map(|(_, p)| p.iter()).map(|&v| value(v).abs()).fold(0.0, f64::max);
    out_dir(out)?;
    for (name, plane) in images {
        let mags: Vec<f64> = plane.iter().map(|&v| value(v).abs()).collect();
        pgm::write(&out.join(format!("sample{index}_{name}.pgm")), cols, rows, &pgm::gray(&mags, peak))?;
    }
    let mut csv = String::from("row,col,original_real,original_imag,recon_real,recon_imag\n");
    for i in 0..rows * cols {
        let v = [original[0][i], original[1][i], recon[0][i], recon[1][i]].map(value);
        csv.push_str(&format!("{},{},{:e},{:e},{:e},{:e}\n", i / cols, i % cols, v[0], v[1], v[2], v[3]));
    }
    fs::write(out.join(format!("sample{index}.csv")), csv)?;
    println!("wrote {rows}x{cols} heatmaps of sample {index} to {}", out.display());
    Ok(true)
}
