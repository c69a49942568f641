//! Synthetic spatial-frequency channels.
//!
//! Each sample is a sum of rays grouped into clusters. A cluster is one
//! resolvable delay tap; its rays share that tap up to a sub-sample spread
//! and fan out in angle around the cluster direction. Every ray's phase is
//! uniform on `[0, 2π)` and independent of all magnitudes: the cluster draws
//! one uniform phase and each ray adds a bounded jitter to it, so the
//! marginal of any ray phase is uniform and the conditional law of one ray
//! phase given another is shift invariant.

pub mod dataset;

pub use dataset::{load_dataset, save_planes, save_spatial, Dataset, DatasetKind, DatasetManifest, DATASET_MAGIC};

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::scalar::{gemm, MatRef};

/// Downlink channel `H` (`N_c` subcarriers by `N_t` antennas).
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialFrequencyChannel {
    matrix: ComplexMatrix,
}

impl SpatialFrequencyChannel {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        if matrix.rows() == 0 || matrix.cols() == 0 {
            return Err(Error::config("channel dims must be positive"));
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite("channel entry".into()));
        }
        Ok(Self { matrix })
    }

    pub fn n_c(&self) -> usize {
        self.matrix.rows()
    }

    pub fn n_t(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.matrix
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayLayout {
    /// Uniform linear array at half-wavelength spacing: antenna `m` sees
    /// phase `π m sin θ`.
    UlaHalfWavelength,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PhaseModel {
    /// Every ray phase independent and uniform on `[0, 2π)`.
    Iid,
    /// One uniform phase per cluster plus a per-ray offset uniform on
    /// `[-jitter, jitter]`, reduced modulo `2π`.
    ClusterUniform { jitter: f64 },
    /// Every ray gets the same deterministic phase. Violates the uniform
    /// phase hypothesis; used as a counterexample.
    Fixed { phase: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultipathScenario {
    pub n_c: usize,
    pub n_t: usize,
    pub cluster_count: usize,
    pub rays_per_cluster: usize,
    /// Standard deviation of ray angles around the cluster angle, radians.
    pub angular_spread: f64,
    /// Cluster angles are uniform on `[-angle_range, angle_range]`, radians.
    pub angle_range: f64,
    /// Fraction of the OFDM symbol window that holds cluster delays.
    pub delay_window: f64,
    /// Ray delays within a cluster spread uniformly over this many samples
    /// after the cluster tap.
    pub intra_cluster_delay: f64,
    /// E-folding of cluster power over delay, in samples.
    pub power_decay: f64,
    pub phases: PhaseModel,
    pub layout: ArrayLayout,
    pub rng_seed: u64,
}

impl Default for MultipathScenario {
    fn default() -> Self {
        Self {
            n_c: 1024,
            n_t: 32,
            cluster_count: 3,
            rays_per_cluster: 20,
            angular_spread: 5f64.to_radians(),
            angle_range: 60f64.to_radians(),
            delay_window: 1.0 / 32.0,
            intra_cluster_delay: 0.1,
            power_decay: 8.0,
            phases: PhaseModel::ClusterUniform { jitter: PI / 4.0 },
            layout: ArrayLayout::UlaHalfWavelength,
            rng_seed: 0,
        }
    }
}

impl MultipathScenario {
    /// Cluster taps are drawn from `0..tap_count()`.
    pub fn tap_count(&self) -> usize {
        ((self.delay_window * self.n_c as f64).floor() as usize).saturating_sub(1).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("scenario: {m}")));
        if self.n_c == 0 || self.n_t == 0 {
            return bad("dims must be positive");
        }
        if self.cluster_count == 0 || self.rays_per_cluster == 0 {
            return bad("need at least one cluster and one ray per cluster");
        }
        if !(self.angular_spread >= 0.0 && self.angular_spread.is_finite()) {
            return bad("angular spread must be finite and non-negative");
        }
        if !(self.angle_range >= 0.0 && self.angle_range <= PI / 2.0) {
            return bad("angle range must lie in [0, π/2]");
        }
        if !(self.delay_window > 0.0 && self.delay_window <= 1.0) {
            return bad("delay window must lie in (0, 1]");
        }
        if !(self.intra_cluster_delay >= 0.0 && self.intra_cluster_delay < 1.0) {
            return bad("intra-cluster delay spread must lie in [0, 1) samples");
        }
        if !(self.power_decay > 0.0) {
            return bad("power decay must be positive");
        }
        match self.phases {
            PhaseModel::ClusterUniform { jitter } if !(0.0..=PI).contains(&jitter) => bad("phase jitter must lie in [0, π]"),
            PhaseModel::Fixed { phase } if !phase.is_finite() => bad("fixed phase must be finite"),
            _ => Ok(()),
        }
    }
}

/// One propagation path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub cluster: usize,
    pub amplitude: f64,
    pub phase: f64,
    /// Angle of departure, radians from broadside.
    pub angle: f64,
    /// Delay in samples of the `N_c`-point symbol.
    pub delay: f64,
}

/// RNG stream of sample `index`: independent of how samples are scheduled.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// The rays of sample `index`.
pub fn draw_rays(scenario: &MultipathScenario, index: u64) -> Vec<Ray> {
    let mut rng = sample_rng(scenario.rng_seed, index);
    let spread = Normal::new(0.0, scenario.angular_spread).expect("validated spread");
    let taps = scenario.tap_count();
    let mut rays = Vec::with_capacity(scenario.cluster_count * scenario.rays_per_cluster);
    for cluster in 0..scenario.cluster_count {
        let tap = rng.random_range(0..taps) as f64;
        let mean_angle = rng.random_range(-scenario.angle_range..=scenario.angle_range);
        let power = (-tap / scenario.power_decay).exp() * rng.random_range(0.5..1.5);
        let amplitude = (power / scenario.rays_per_cluster as f64).sqrt();
        let cluster_phase: f64 = rng.random_range(0.0..2.0 * PI);
        for _ in 0..scenario.rays_per_cluster {
            let angle = (mean_angle + spread.sample(&mut rng)).clamp(-PI / 2.0, PI / 2.0);
            let delay = tap + rng.random_range(0.0..=1.0) * scenario.intra_cluster_delay;
            let phase = match scenario.phases {
                PhaseModel::Iid => rng.random_range(0.0..2.0 * PI),
                PhaseModel::ClusterUniform { jitter } => {
                    (cluster_phase + rng.random_range(-jitter..=jitter)).rem_euclid(2.0 * PI)
                }
                PhaseModel::Fixed { phase } => phase,
            };
            rays.push(Ray { cluster, amplitude, phase, angle, delay });
        }
    }
    rays
}

/// `H(n, m) = Σ_r a_r e^{jφ_r} e^{jπ m sin θ_r} e^{j2π n τ_r / N_c}`.
///
/// The subcarrier phase carries a positive sign so that a ray at delay
/// `τ` lands in delay row `τ` after the forward DFT over subcarriers.
pub fn channel_from_rays(n_c: usize, n_t: usize, rays: &[Ray]) -> ComplexMatrix {
    let r = rays.len();
    // A: N_c x R (subcarrier response with gain), B: R x N_t (steering)
    let mut a_re = vec![0.0; n_c * r];
    let mut a_im = vec![0.0; n_c * r];
    let mut b_re = vec![0.0; r * n_t];
    let mut b_im = vec![0.0; r * n_t];
    for (k, ray) in rays.iter().enumerate() {
        let u = PI * ray.angle.sin();
        for m in 0..n_t {
            let (s, c) = (u * m as f64).sin_cos();
            b_re[k * n_t + m] = c;
            b_im[k * n_t + m] = s;
        }
        for n in 0..n_c {
            // reduce the turn count before scaling to keep the argument small
            let turns = (n as f64 * ray.delay / n_c as f64).fract();
            let (s, c) = (2.0 * PI * turns + ray.phase).sin_cos();
            a_re[n * r + k] = ray.amplitude * c;
            a_im[n * r + k] = ray.amplitude * s;
        }
    }
    let mut re = vec![0.0; n_c * n_t];
    let mut im = vec![0.0; n_c * n_t];
    let (ar, ai) = (MatRef::new(&a_re[..], n_c, r), MatRef::new(&a_im[..], n_c, r));
    let (br, bi) = (MatRef::new(&b_re[..], r, n_t), MatRef::new(&b_im[..], r, n_t));
    gemm(ar, br, 0.0, &mut re);
    let mut tmp = vec![0.0; n_c * n_t];
    gemm(ai, bi, 0.0, &mut tmp);
    re.iter_mut().zip(&tmp).for_each(|(a, b)| *a -= b);
    gemm(ar, bi, 0.0, &mut im);
    gemm(ai, br, 1.0, &mut im);
    let data = re.into_iter().zip(im).map(|(re, im)| Complex64::new(re, im)).collect();
    ComplexMatrix::from_vec(n_c, n_t, data).expect("dims")
}

/// Sample `index` of the scenario: rays summed, scaled to unit mean entry
/// power and rounded to single precision so it survives the `f32` dataset
/// payload unchanged.
pub fn generate_channel(scenario: &MultipathScenario, index: u64) -> SpatialFrequencyChannel {
    let rays = draw_rays(scenario, index);
    let mut h = channel_from_rays(scenario.n_c, scenario.n_t, &rays);
    let mean_power = h.energy() / (scenario.n_c * scenario.n_t) as f64;
    if mean_power > 0.0 {
        h.scale(1.0 / mean_power.sqrt());
    }
    for z in h.data_mut() {
        *z = Complex64::new(z.re as f32 as f64, z.im as f32 as f64);
    }
    SpatialFrequencyChannel { matrix: h }
}

/// Samples `0..count`, generated in parallel; identical to serial
/// generation because each sample owns its RNG stream.
pub fn generate_channels(scenario: &MultipathScenario, count: usize) -> Result<Vec<SpatialFrequencyChannel>> {
    scenario.validate()?;
    if count == 0 {
        return Err(Error::config("sample count must be at least 1"));
    }
    Ok((0..count as u64).into_par_iter().map(|i| generate_channel(scenario, i)).collect())
}
