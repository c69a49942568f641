//! Angular and delay correlation profiles of angular-delay planes, the
//! real/imaginary equality check, and a Monte Carlo check of the phase
//! identity `E[cos θ₁ cos θ₂] = E[sin θ₁ sin θ₂]`.
//!
//! For a plane `X` (`N_cc x N_t`, zero-based indices here):
//!
//! * angular: `R_a(t) = E[(1/N_cc) Σ_i X(i, 0) X(i, t)]`
//! * delay: `R_d(t) = E[(1/N_t) Σ_i X(0, i) X(t, i)]`
//!
//! where `E` is the mean over samples. The reference column (row) is fixed
//! at index 0 unless [`Reference::Averaged`] is selected.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::AngularDelayPlanes;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Angular,
    Delay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Real,
    Imag,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Angular => "angular",
            Domain::Delay => "delay",
        }
    }
}

impl Part {
    pub fn name(self) -> &'static str {
        match self {
            Part::Real => "real",
            Part::Imag => "imag",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Reference column (row) 0 only.
    Literal,
    /// Average over every reference index `r` with `r + t` in range.
    Averaged,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOptions {
    /// Subtract the per-entry mean over the sample set before correlating.
    pub center: bool,
    pub reference: Reference,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        Self { center: true, reference: Reference::Literal }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub domain: Domain,
    pub part: Part,
    pub reference: Reference,
    /// `values[t - 1]` is `R(t)`.
    pub values: Vec<f64>,
    pub std_err: Vec<f64>,
    pub sample_count: usize,
}

/// Deterministic pairwise summation with a fixed split shape.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Mean and standard error of the mean; the error is zero for a single
/// value.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Denormalized, optionally centered copies of one part of every sample.
struct PlaneSet {
    rows: usize,
    cols: usize,
    planes: Vec<Vec<f64>>,
}

impl PlaneSet {
    fn extract(samples: &[AngularDelayPlanes], part: Part, center: bool) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::config("correlation needs at least one sample"))?;
        let (rows, cols) = (first.n_cc(), first.n_t());
        if samples.iter().any(|s| (s.n_cc(), s.n_t()) != (rows, cols)) {
            return Err(Error::shape("samples differ in shape"));
        }
        let mut planes: Vec<Vec<f64>> = samples
            .par_iter()
            .map(|s| {
                let norm = s.norm();
                let raw = match part {
                    Part::Real => s.real_plane(),
                    Part::Imag => s.imag_plane(),
                };
                raw.iter().map(|&y| norm.invert(y)).collect()
            })
            .collect();
        if center {
            let n = planes.len() as f64;
            let mean: Vec<f64> = (0..rows * cols)
                .into_par_iter()
                .map(|e| pairwise_sum(&planes.iter().map(|p| p[e]).collect::<Vec<_>>()) / n)
                .collect();
            planes.par_iter_mut().for_each(|p| p.iter_mut().zip(&mean).for_each(|(x, m)| *x -= m));
        }
        Ok(Self { rows, cols, planes })
    }

    /// Per-sample statistic at lag `t` along `domain`.
    fn statistic(&self, p: &[f64], domain: Domain, t: usize, reference: Reference) -> f64 {
        let at = |r: usize, c: usize| p[r * self.cols + c];
        // (lines along which lags are taken, length of each line)
        let (lines, len) = match domain {
            Domain::Angular => (self.rows, self.cols),
            Domain::Delay => (self.cols, self.rows),
        };
        let get = |line: usize, pos: usize| match domain {
            Domain::Angular => at(line, pos),
            Domain::Delay => at(pos, line),
        };
        let refs = match reference {
            Reference::Literal => 1,
            Reference::Averaged => len - t,
        };
        let mut acc = 0.0;
        for r in 0..refs {
            for line in 0..lines {
                acc += get(line, r) * get(line, r + t);
            }
        }
        acc / (lines * refs) as f64
    }

    fn profile(&self, domain: Domain, part: Part, t_max: usize, reference: Reference) -> Result<CorrelationProfile> {
        let len = match domain {
            Domain::Angular => self.cols,
            Domain::Delay => self.rows,
        };
        if t_max == 0 || t_max >= len {
            return Err(Error::config(format!("t_max = {t_max} must lie in 1..{len} for the {} domain", domain.name())));
        }
        let (mut values, mut std_err) = (Vec::with_capacity(t_max), Vec::with_capacity(t_max));
        for t in 1..=t_max {
            let stats: Vec<f64> = self.planes.par_iter().map(|p| self.statistic(p, domain, t, reference)).collect();
            let (m, se) = mean_se(&stats);
            values.push(m);
            std_err.push(se);
        }
        Ok(CorrelationProfile { domain, part, reference, values, std_err, sample_count: self.planes.len() })
    }
}

pub fn correlation(
    samples: &[AngularDelayPlanes],
    domain: Domain,
    part: Part,
    t_max: usize,
    opts: CorrelationOptions,
) -> Result<CorrelationProfile> {
    PlaneSet::extract(samples, part, opts.center)?.profile(domain, part, t_max, opts.reference)
}

pub fn angular_correlation(
    samples: &[AngularDelayPlanes],
    part: Part,
    t_max: usize,
    opts: CorrelationOptions,
) -> Result<CorrelationProfile> {
    correlation(samples, Domain::Angular, part, t_max, opts)
}

pub fn delay_correlation(
    samples: &[AngularDelayPlanes],
    part: Part,
    t_max: usize,
    opts: CorrelationOptions,
) -> Result<CorrelationProfile> {
    correlation(samples, Domain::Delay, part, t_max, opts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LagCheck {
    pub t: usize,
    pub r_real: f64,
    pub r_imag: f64,
    /// Standard error of the mean paired difference.
    pub std_err: f64,
    pub z: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Theorem1Report {
    pub domain: Domain,
    pub k: f64,
    pub lags: Vec<LagCheck>,
    pub real: CorrelationProfile,
    pub imag: CorrelationProfile,
    pub passed: bool,
}

/// Check `|R^R(t) - R^I(t)| <= k * se(t)` at every lag. The error is that of
/// the per-sample paired differences, which accounts for the correlation
/// between the two parts of one sample. A zero difference always passes.
pub fn theorem1_check(
    samples: &[AngularDelayPlanes],
    domain: Domain,
    t_max: usize,
    k: f64,
    opts: CorrelationOptions,
) -> Result<Theorem1Report> {
    let re = PlaneSet::extract(samples, Part::Real, opts.center)?;
    let im = PlaneSet::extract(samples, Part::Imag, opts.center)?;
    let real = re.profile(domain, Part::Real, t_max, opts.reference)?;
    let imag = im.profile(domain, Part::Imag, t_max, opts.reference)?;
    let lags: Vec<LagCheck> = (1..=t_max)
        .map(|t| {
            let diffs: Vec<f64> = re
                .planes
                .par_iter()
                .zip(&im.planes)
                .map(|(a, b)| re.statistic(a, domain, t, opts.reference) - im.statistic(b, domain, t, opts.reference))
                .collect();
            let (d, se) = mean_se(&diffs);
            let z = if d == 0.0 { 0.0 } else { d.abs() / se };
            LagCheck { t, r_real: real.values[t - 1], r_imag: imag.values[t - 1], std_err: se, z, passed: z <= k }
        })
        .collect();
    let passed = lags.iter().all(|l| l.passed);
    Ok(Theorem1Report { domain, k, lags, real, imag, passed })
}

/// Write profiles as CSV rows `domain,part,t,R,std_err`.
pub fn write_profiles_csv(out: &mut impl Write, profiles: &[CorrelationProfile]) -> std::io::Result<()> {
    writeln!(out, "domain,part,t,R,std_err")?;
    for p in profiles {
        for (i, (r, se)) in p.values.iter().zip(&p.std_err).enumerate() {
            writeln!(out, "{},{},{},{:e},{:e}", p.domain.name(), p.part.name(), i + 1, r, se)?;
        }
    }
    Ok(())
}

/// Source of phase pairs `(θ₁, θ₂)`.
pub trait PhasePairSampler: Sync {
    fn name(&self) -> String;
    fn sample(&self, rng: &mut dyn RngCore) -> (f64, f64);
    /// Exact common value of both expectations, when known.
    fn closed_form(&self) -> Option<f64> {
        None
    }
}

/// Independent uniform phases.
pub struct UniformPairs;

impl PhasePairSampler for UniformPairs {
    fn name(&self) -> String {
        "uniform_iid".into()
    }
    fn sample(&self, rng: &mut dyn RngCore) -> (f64, f64) {
        (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI))
    }
    fn closed_form(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// `θ₂ = θ₁ + shift` with `θ₁` uniform; both expectations are `cos(shift)/2`.
pub struct ShiftedPairs {
    pub shift: f64,
}

impl PhasePairSampler for ShiftedPairs {
    fn name(&self) -> String {
        format!("shifted_pair({})", self.shift)
    }
    fn sample(&self, rng: &mut dyn RngCore) -> (f64, f64) {
        let a = rng.random_range(0.0..2.0 * PI);
        (a, a + self.shift)
    }
    fn closed_form(&self) -> Option<f64> {
        Some(self.shift.cos() / 2.0)
    }
}

/// Both phases zero: `E[cos cos] = 1`, `E[sin sin] = 0`.
pub struct DegeneratePairs;

impl PhasePairSampler for DegeneratePairs {
    fn name(&self) -> String {
        "degenerate_zero".into()
    }
    fn sample(&self, _rng: &mut dyn RngCore) -> (f64, f64) {
        (0.0, 0.0)
    }
}

/// A non-uniform marginal with period `π/2`: `θ₁ = φ + kπ/2` with
/// `φ = (π/2) u²`, `u` uniform and `k` uniform on `0..4`, and
/// `θ₂ = θ₁ + shift`.
pub struct QuarterPeriodicPairs {
    pub shift: f64,
}

impl PhasePairSampler for QuarterPeriodicPairs {
    fn name(&self) -> String {
        format!("quarter_periodic({})", self.shift)
    }
    fn sample(&self, rng: &mut dyn RngCore) -> (f64, f64) {
        let u: f64 = rng.random();
        let k = rng.random_range(0..4) as f64;
        let a = PI / 2.0 * (u * u + k);
        (a, a + self.shift)
    }
    fn closed_form(&self) -> Option<f64> {
        Some(self.shift.cos() / 2.0)
    }
}

/// Two rays of one generator cluster: a shared uniform phase plus two
/// independent offsets uniform on `[-jitter, jitter]`.
pub struct ClusterRayPairs {
    pub jitter: f64,
}

impl PhasePairSampler for ClusterRayPairs {
    fn name(&self) -> String {
        format!("cluster_rays({})", self.jitter)
    }
    fn sample(&self, rng: &mut dyn RngCore) -> (f64, f64) {
        let c = rng.random_range(0.0..2.0 * PI);
        let j = self.jitter;
        ((c + rng.random_range(-j..=j)).rem_euclid(2.0 * PI), (c + rng.random_range(-j..=j)).rem_euclid(2.0 * PI))
    }
    fn closed_form(&self) -> Option<f64> {
        // E[cos(θ₁ - θ₂)] / 2 with the difference of two U[-j, j] offsets
        let j = self.jitter;
        Some(if j == 0.0 { 0.5 } else { 0.5 * ((j.sin() / j).powi(2)) })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseIdentityReport {
    pub sampler: String,
    pub n: usize,
    pub mean_cos: f64,
    pub mean_sin: f64,
    pub se_cos: f64,
    pub se_sin: f64,
    /// Standard error of the paired difference `cos θ₁ cos θ₂ - sin θ₁ sin θ₂`.
    pub se_diff: f64,
    pub closed_form: Option<f64>,
    pub k: f64,
    pub passed: bool,
}

/// Estimate both expectations from `n` pairs and require agreement within
/// `k` standard errors; where the sampler knows the exact value, each
/// estimate must also lie within `k` of its own standard errors of it.
pub fn phase_identity_montecarlo(sampler: &dyn PhasePairSampler, n: usize, k: f64, seed: u64) -> Result<PhaseIdentityReport> {
    if n < 2 {
        return Err(Error::config("phase identity check needs at least two pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut cc, mut ss, mut dd) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let (a, b) = sampler.sample(&mut rng);
        let (c, s) = (a.cos() * b.cos(), a.sin() * b.sin());
        cc.push(c);
        ss.push(s);
        dd.push(c - s);
    }
    let (mean_cos, se_cos) = mean_se(&cc);
    let (mean_sin, se_sin) = mean_se(&ss);
    let (diff, se_diff) = mean_se(&dd);
    let within = |x: f64, target: f64, se: f64| (x - target).abs() <= k * se;
    let mut passed = within(diff, 0.0, se_diff);
    if let Some(v) = sampler.closed_form() {
        passed &= within(mean_cos, v, se_cos) && within(mean_sin, v, se_sin);
    }
    Ok(PhaseIdentityReport {
        sampler: sampler.name(),
        n,
        mean_cos,
        mean_sin,
        se_cos,
        se_sin,
        se_diff,
        closed_form: sampler.closed_form(),
        k,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::NormMeta;
    use rand_distr::{Distribution, StandardNormal};

    const RAW: CorrelationOptions = CorrelationOptions { center: false, reference: Reference::Literal };
    const ID: NormMeta = NormMeta { offset: 0.5, scale: 0.25 };

    /// Planes whose denormalized real part is `real` (imag mirrors it).
    fn planes(n_cc: usize, n_t: usize, real: &[f64]) -> AngularDelayPlanes {
        let p: Vec<f64> = real.iter().map(|&x| ID.apply(x)).collect();
        AngularDelayPlanes::new(n_cc, n_t, p.clone(), p, ID).unwrap()
    }

    #[test]
    fn constant_planes_give_square() {
        let s = vec![planes(3, 4, &[0.8; 12]); 5];
        for d in [Domain::Angular, Domain::Delay] {
            let p = correlation(&s, d, Part::Real, 2, RAW).unwrap();
            assert!(p.values.iter().all(|v| (v - 0.64).abs() < 1e-12));
            assert!(p.std_err.iter().all(|e| e.abs() < 1e-12));
        }
    }

    #[test]
    fn hand_computed_angular() {
        // X = [[1, 2, -1], [0.5, -1, 1.5]]
        let s = [planes(2, 3, &[1.0, 2.0, -1.0, 0.5, -1.0, 1.5])];
        let p = angular_correlation(&s, Part::Real, 2, RAW).unwrap();
        // t=1: (1*2 + 0.5*-1)/2, t=2: (1*-1 + 0.5*1.5)/2
        assert!((p.values[0] - 0.75).abs() < 1e-12);
        assert!((p.values[1] + 0.125).abs() < 1e-12);
        assert_eq!(p.std_err, vec![0.0, 0.0]);
        assert!(angular_correlation(&s, Part::Real, 3, RAW).is_err());
    }

    #[test]
    fn hand_computed_delay() {
        // 3x2: X = [[1, -1], [2, 0.5], [-1, 1]]
        let s = [planes(3, 2, &[1.0, -1.0, 2.0, 0.5, -1.0, 1.0])];
        let p = delay_correlation(&s, Part::Real, 2, RAW).unwrap();
        assert!((p.values[0] - (2.0 - 0.5) / 2.0).abs() < 1e-12);
        assert!((p.values[1] - (-1.0 - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn averaged_reference_uses_every_pair() {
        let s = [planes(1, 3, &[1.0, 2.0, -1.0])];
        let opts = CorrelationOptions { center: false, reference: Reference::Averaged };
        let p = angular_correlation(&s, Part::Real, 1, opts).unwrap();
        assert!((p.values[0] - (2.0 - 2.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(angular_correlation(&[], Part::Real, 1, RAW).is_err());
    }

    #[test]
    fn duplicating_samples_leaves_profile_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<_> = (0..7)
            .map(|_| planes(4, 4, &(0..16).map(|_| rng.random_range(-1.9..1.9)).collect::<Vec<_>>()))
            .collect();
        let twice: Vec<_> = s.iter().chain(&s).cloned().collect();
        for opts in [RAW, CorrelationOptions::default()] {
            let a = angular_correlation(&s, Part::Real, 3, opts).unwrap();
            let b = angular_correlation(&twice, Part::Real, 3, opts).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn iid_zero_mean_entries_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s: Vec<_> = (0..10_000)
            .map(|_| {
                let v: Vec<f64> = (0..32).map(|_| (0.5 * rng.sample::<f64, _>(StandardNormal)).clamp(-1.9, 1.9)).collect();
                planes(4, 8, &v)
            })
            .collect();
        for d in [Domain::Angular, Domain::Delay] {
            let p = correlation(&s, d, Part::Real, 3, RAW).unwrap();
            for (v, se) in p.values.iter().zip(&p.std_err) {
                assert!(v.abs() <= 3.0 * se, "{d:?}: {v} vs {se}");
            }
        }
    }

    #[test]
    fn duplicated_real_as_imag_passes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s: Vec<_> = (0..20)
            .map(|_| planes(4, 4, &(0..16).map(|_| StandardNormal.sample(&mut rng)).map(|x: f64| x.clamp(-1.9, 1.9)).collect::<Vec<_>>()))
            .collect();
        for d in [Domain::Angular, Domain::Delay] {
            let r = theorem1_check(&s, d, 3, 3.0, CorrelationOptions::default()).unwrap();
            assert!(r.passed);
            assert!(r.lags.iter().all(|l| l.r_real == l.r_imag && l.z == 0.0));
        }
    }

    #[test]
    fn profile_csv() {
        let s = [planes(2, 3, &[1.0, 2.0, -1.0, 0.5, -1.0, 1.5])];
        let p = angular_correlation(&s, Part::Real, 1, RAW).unwrap();
        let mut buf = vec![];
        write_profiles_csv(&mut buf, &[p]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "domain,part,t,R,std_err\nangular,real,1,7.5e-1,0e0\n");
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&xs), 249_750.0);
    }

    #[test]
    fn phase_identity_uniform_and_shifted() {
        let n = 200_000;
        assert!(phase_identity_montecarlo(&UniformPairs, n, 3.0, 1).unwrap().passed);
        let r = phase_identity_montecarlo(&ShiftedPairs { shift: 0.7 }, n, 3.0, 2).unwrap();
        assert!(r.passed, "{r:?}");
        assert!((r.mean_cos - 0.7f64.cos() / 2.0).abs() < 0.01);
        assert!(phase_identity_montecarlo(&QuarterPeriodicPairs { shift: 1.1 }, n, 3.0, 3).unwrap().passed);
        assert!(phase_identity_montecarlo(&ClusterRayPairs { jitter: PI / 4.0 }, n, 3.0, 4).unwrap().passed);
    }

    #[test]
    fn phase_identity_degenerate_fails() {
        let r = phase_identity_montecarlo(&DegeneratePairs, 1000, 3.0, 0).unwrap();
        assert_eq!((r.mean_cos, r.mean_sin), (1.0, 0.0));
        assert!(!r.passed);
    }
}
