//! Experiment settings from `key = value` files and `--set` overrides.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use enet::channel::{MultipathScenario, PhaseModel};
use enet::codec::EnetConfig;
use enet::train::{SplitRatio, TrainConfig};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub samples: usize,
    pub scenario: MultipathScenario,
    pub model: EnetConfig,
    pub train: TrainConfig,
    /// Largest lag analyzed; defaults to `min(n_t, n_cc) - 1`.
    pub t_max: Option<usize>,
    pub k: f64,
    pub center: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 5000,
            scenario: MultipathScenario::default(),
            model: EnetConfig::default(),
            train: TrainConfig::default(),
            t_max: None,
            k: 3.0,
            center: true,
        }
    }
}

pub const KEYS: &[(&str, &str)] = &[
    ("seed", "seed for generation, initialization, splitting and shuffling"),
    ("samples", "number of samples generated for `train` without --dataset"),
    ("n_c", "subcarriers"),
    ("n_t", "transmit antennas"),
    ("clusters", "multipath clusters per sample"),
    ("rays_per_cluster", "rays per cluster"),
    ("angular_spread_deg", "ray angle standard deviation around the cluster angle"),
    ("angle_range_deg", "cluster angles are uniform on [-range, range]"),
    ("delay_window", "fraction of the symbol window holding cluster delays"),
    ("intra_cluster_delay", "ray delay spread within a cluster, samples"),
    ("power_decay", "cluster power e-folding over delay, samples"),
    ("phase_model", "iid, cluster_uniform or fixed"),
    ("phase_jitter_deg", "per-ray phase offset half-width for cluster_uniform"),
    ("fixed_phase", "ray phase in radians for the fixed model"),
    ("n_cc", "delay rows kept after truncation"),
    ("f", "feature maps"),
    ("gamma", "compression ratio M/N, as a fraction like 1/4 or a decimal"),
    ("epochs", "training epochs"),
    ("batch_size", "training batch size"),
    ("lr", "Adam learning rate"),
    ("patience", "stop after this many epochs without improvement, 0 disables"),
    ("split", "train:val:test ratio"),
    ("t_max", "largest correlation lag"),
    ("k", "standard errors allowed by the equality check"),
    ("center", "subtract the per-entry mean before correlating"),
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow!("{key}: cannot parse {v:?}: {e}"))
}

pub fn parse_fraction(v: &str) -> Result<f64> {
    match v.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (num("gamma", a.trim())?, num("gamma", b.trim())?);
            Ok(a / b)
        }
        None => num("gamma", v),
    }
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.scenario;
        match key {
            "seed" => self.seed = num(key, v)?,
            "samples" => self.samples = num(key, v)?,
            "n_c" => s.n_c = num(key, v)?,
            "n_t" => {
                s.n_t = num(key, v)?;
                self.model.n_t = s.n_t;
            }
            "clusters" => s.cluster_count = num(key, v)?,
            "rays_per_cluster" => s.rays_per_cluster = num(key, v)?,
            "angular_spread_deg" => s.angular_spread = num::<f64>(key, v)?.to_radians(),
            "angle_range_deg" => s.angle_range = num::<f64>(key, v)?.to_radians(),
            "delay_window" => s.delay_window = parse_fraction(v)?,
            "intra_cluster_delay" => s.intra_cluster_delay = num(key, v)?,
            "power_decay" => s.power_decay = num(key, v)?,
            "phase_model" => {
                s.phases = match v {
                    "iid" => PhaseModel::Iid,
                    "cluster_uniform" => PhaseModel::ClusterUniform { jitter: std::f64::consts::FRAC_PI_4 },
                    "fixed" => PhaseModel::Fixed { phase: 0.0 },
                    _ => bail!("phase_model: expected iid, cluster_uniform or fixed, got {v:?}"),
                }
            }
            "phase_jitter_deg" => match &mut s.phases {
                PhaseModel::ClusterUniform { jitter } => *jitter = num::<f64>(key, v)?.to_radians(),
                _ => bail!("phase_jitter_deg needs phase_model = cluster_uniform"),
            },
            "fixed_phase" => match &mut s.phases {
                PhaseModel::Fixed { phase } => *phase = num(key, v)?,
                _ => bail!("fixed_phase needs phase_model = fixed"),
            },
            "n_cc" => self.model.n_cc = num(key, v)?,
            "f" => self.model.f = num(key, v)?,
            "gamma" => self.model.gamma = parse_fraction(v)?,
            "epochs" => self.train.epochs = num(key, v)?,
            "batch_size" => self.train.batch_size = num(key, v)?,
            "lr" => self.train.adam.lr = num(key, v)?,
            "patience" => {
                let p: usize = num(key, v)?;
                self.train.patience = (p > 0).then_some(p);
            }
            "split" => {
                let parts: Vec<usize> = v.split(':').map(|p| num(key, p.trim())).collect::<Result<_>>()?;
                let [train, val, test] = parts[..] else { bail!("split: expected a:b:c, got {v:?}") };
                self.train.split = SplitRatio { train, val, test };
            }
            "t_max" => self.t_max = Some(num(key, v)?),
            "k" => self.k = num(key, v)?,
            "center" => self.center = num(key, v)?,
            _ => bail!("unknown config key {key:?} (see `enet keys`)"),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("{origin}:{}: expected key = value", n + 1))?;
            self.set(k.trim(), v.trim()).with_context(|| format!("{origin}:{}", n + 1))?;
        }
        Ok(())
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut c = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            c.apply_text(&text, &p.display().to_string())?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("--set expects key=value, got {o:?}"))?;
            c.set(k.trim(), v.trim())?;
        }
        c.sync();
        Ok(c)
    }

    /// Propagate the seed and shared dimensions into the sub-configs.
    pub fn sync(&mut self) {
        self.scenario.rng_seed = self.seed;
        self.train.seed = self.seed;
        self.model.n_t = self.scenario.n_t;
    }

    pub fn t_max(&self) -> usize {
        self.t_max.unwrap_or(self.model.n_t.min(self.model.n_cc).saturating_sub(1))
    }
}
