//! Angular-delay transform `H_a = F_c H F_tᴴ`, truncation to the first
//! `N_cc` delay rows, and the split into two normalized real planes.
//!
//! Both DFTs are unitary. `F_c` is the forward transform over subcarriers
//! and `F_tᴴ` the inverse transform over antennas, so a single ray at
//! delay `τ` and spatial frequency `u` concentrates at row `τ` and the
//! column nearest `-u N_t / 2π` modulo `N_t`.

use std::sync::atomic::{AtomicUsize, Ordering};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::SpatialFrequencyChannel;
use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;

fn transform_columns(m: &mut ComplexMatrix, fft: &dyn Fft<f64>) {
    let (rows, cols) = (m.rows(), m.cols());
    let mut buf = vec![Complex64::new(0.0, 0.0); rows];
    let scale = 1.0 / (rows as f64).sqrt();
    for c in 0..cols {
        for (r, b) in buf.iter_mut().enumerate() {
            *b = m.get(r, c);
        }
        fft.process(&mut buf);
        for (r, b) in buf.iter().enumerate() {
            m.set(r, c, b * scale);
        }
    }
}

fn transform_rows(m: &mut ComplexMatrix, fft: &dyn Fft<f64>) {
    let cols = m.cols();
    let scale = 1.0 / (cols as f64).sqrt();
    for row in m.data_mut().chunks_mut(cols) {
        fft.process(row);
        row.iter_mut().for_each(|z| *z *= scale);
    }
}

/// Full `N_c x N_t` angular-delay matrix of `h`.
pub fn to_angular_delay(h: &SpatialFrequencyChannel) -> ComplexMatrix {
    let mut planner = FftPlanner::new();
    let mut m = h.matrix().clone();
    let (col_fft, row_fft) = (planner.plan_fft_forward(m.rows()), planner.plan_fft_inverse(m.cols()));
    transform_columns(&mut m, col_fft.as_ref());
    transform_rows(&mut m, row_fft.as_ref());
    m
}

/// `H = F_cᴴ H_a F_t`, the exact inverse of [`to_angular_delay`].
pub fn from_angular_delay(h_a: &ComplexMatrix) -> ComplexMatrix {
    let mut planner = FftPlanner::new();
    let mut m = h_a.clone();
    let (row_fft, col_fft) = (planner.plan_fft_forward(m.cols()), planner.plan_fft_inverse(m.rows()));
    transform_rows(&mut m, row_fft.as_ref());
    transform_columns(&mut m, col_fft.as_ref());
    m
}

#[derive(Clone, Debug, PartialEq)]
pub struct Truncated {
    pub h_s: ComplexMatrix,
    /// Energy in the discarded rows over the total energy; zero for an
    /// all-zero input.
    pub discarded_fraction: f64,
}

/// Keep the first `n_cc` delay rows of `h_a`.
pub fn truncate_delay(h_a: &ComplexMatrix, n_cc: usize) -> Result<Truncated> {
    if n_cc == 0 || n_cc > h_a.rows() {
        return Err(Error::config(format!("n_cc = {n_cc} must lie in 1..={}", h_a.rows())));
    }
    let kept = h_a.data()[..n_cc * h_a.cols()].to_vec();
    let h_s = ComplexMatrix::from_vec(n_cc, h_a.cols(), kept).expect("dims");
    let total = h_a.energy();
    let discarded_fraction = if total > 0.0 { ((total - h_s.energy()) / total).max(0.0) } else { 0.0 };
    Ok(Truncated { h_s, discarded_fraction })
}

/// `H_s` of a spatial-frequency channel in one call.
pub fn angular_delay_truncated(h: &SpatialFrequencyChannel, n_cc: usize) -> Result<Truncated> {
    truncate_delay(&to_angular_delay(h), n_cc)
}

/// Zero-pad `h_s` back to `n_c` delay rows and invert the transform.
pub fn reconstruct_from_truncated(h_s: &ComplexMatrix, n_c: usize) -> Result<SpatialFrequencyChannel> {
    if n_c < h_s.rows() {
        return Err(Error::config(format!("n_c = {n_c} is below the {} kept rows", h_s.rows())));
    }
    let mut data = h_s.data().to_vec();
    data.resize(n_c * h_s.cols(), Complex64::new(0.0, 0.0));
    let padded = ComplexMatrix::from_vec(n_c, h_s.cols(), data).expect("dims");
    SpatialFrequencyChannel::new(from_angular_delay(&padded))
}

/// Affine map `x ↦ x * scale + offset` applied to both parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormMeta {
    pub offset: f64,
    pub scale: f64,
}

impl NormMeta {
    pub fn apply(&self, x: f64) -> f64 {
        x * self.scale + self.offset
    }

    pub fn invert(&self, y: f64) -> f64 {
        (y - self.offset) / self.scale
    }
}

/// How raw angular-delay values are mapped into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum NormPolicy {
    /// `x / (2 max_abs) + 1/2`, where `max_abs` is the largest absolute
    /// real or imaginary entry of the fitting set.
    SymmetricMaxAbs { max_abs: f64 },
}

impl NormPolicy {
    /// Fit on `samples` (the training split). Fails on an all-zero set.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a ComplexMatrix>) -> Result<Self> {
        let mut max_abs = 0.0f64;
        for m in samples {
            for z in m.data() {
                if !(z.re.is_finite() && z.im.is_finite()) {
                    return Err(Error::NonFinite("angular-delay entry while fitting normalization".into()));
                }
                max_abs = max_abs.max(z.re.abs()).max(z.im.abs());
            }
        }
        Self::symmetric(max_abs)
    }

    pub fn symmetric(max_abs: f64) -> Result<Self> {
        if !(max_abs > 0.0 && max_abs.is_finite()) {
            return Err(Error::Degenerate(format!("zero dynamic range (max |x| = {max_abs})")));
        }
        Ok(NormPolicy::SymmetricMaxAbs { max_abs })
    }

    pub fn meta(&self) -> NormMeta {
        match *self {
            NormPolicy::SymmetricMaxAbs { max_abs } => NormMeta { offset: 0.5, scale: 1.0 / (2.0 * max_abs) },
        }
    }
}

/// Normalized real and imaginary planes of one `H_s`, row-major
/// `N_cc x N_t`, every entry in `[0, 1]`.
///
/// Reads of the imaginary plane are counted so callers can prove a code
/// path never touched it.
#[derive(Debug)]
pub struct AngularDelayPlanes {
    n_cc: usize,
    n_t: usize,
    real: Vec<f64>,
    imag: Vec<f64>,
    norm: NormMeta,
    clipped: usize,
    imag_reads: AtomicUsize,
}

impl Clone for AngularDelayPlanes {
    fn clone(&self) -> Self {
        Self {
            n_cc: self.n_cc,
            n_t: self.n_t,
            real: self.real.clone(),
            imag: self.imag.clone(),
            norm: self.norm,
            clipped: self.clipped,
            imag_reads: AtomicUsize::new(self.imag_reads.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for AngularDelayPlanes {
    fn eq(&self, o: &Self) -> bool {
        (self.n_cc, self.n_t, &self.real, &self.imag, self.norm) == (o.n_cc, o.n_t, &o.real, &o.imag, o.norm)
    }
}

impl AngularDelayPlanes {
    /// Wrap already-normalized planes, e.g. decoder output or a dataset
    /// payload.
    pub fn new(n_cc: usize, n_t: usize, real: Vec<f64>, imag: Vec<f64>, norm: NormMeta) -> Result<Self> {
        if real.len() != n_cc * n_t || imag.len() != n_cc * n_t {
            return Err(Error::shape(format!(
                "planes of {n_cc}x{n_t} need {} entries, got {} and {}",
                n_cc * n_t,
                real.len(),
                imag.len()
            )));
        }
        if !(norm.scale > 0.0 && norm.scale.is_finite() && norm.offset.is_finite()) {
            return Err(Error::config(format!("invalid normalization {norm:?}")));
        }
        if let Some(i) = real.iter().chain(&imag).position(|x| !(0.0..=1.0).contains(x)) {
            let v = if i < real.len() { real[i] } else { imag[i - real.len()] };
            return Err(if v.is_finite() {
                Error::Config(format!("plane entry {v} outside [0, 1]"))
            } else {
                Error::NonFinite(format!("plane entry {i}"))
            });
        }
        Ok(Self { n_cc, n_t, real, imag, norm, clipped: 0, imag_reads: AtomicUsize::new(0) })
    }

    pub fn n_cc(&self) -> usize {
        self.n_cc
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn norm(&self) -> NormMeta {
        self.norm
    }

    /// Entries that fell outside `[0, 1]` under the frozen normalization and
    /// were clamped.
    pub fn clipped(&self) -> usize {
        self.clipped
    }

    pub fn real_plane(&self) -> &[f64] {
        &self.real
    }

    pub fn imag_plane(&self) -> &[f64] {
        self.imag_reads.fetch_add(1, Ordering::Relaxed);
        &self.imag
    }

    pub fn imag_reads(&self) -> usize {
        self.imag_reads.load(Ordering::Relaxed)
    }

    /// Undo the normalization: the centered `H_s` again.
    pub fn to_complex(&self) -> ComplexMatrix {
        let n = self.norm;
        let data = self.real.iter().zip(&self.imag).map(|(&r, &i)| Complex64::new(n.invert(r), n.invert(i))).collect();
        ComplexMatrix::from_vec(self.n_cc, self.n_t, data).expect("dims")
    }
}

/// Split `h_s` into normalized real and imaginary planes. Values the frozen
/// policy maps outside `[0, 1]` are clamped and counted.
pub fn split_normalize(h_s: &ComplexMatrix, policy: &NormPolicy) -> Result<AngularDelayPlanes> {
    if !h_s.is_finite() {
        return Err(Error::NonFinite("angular-delay entry".into()));
    }
    let norm = policy.meta();
    let mut clipped = 0;
    let mut map = |x: f64| {
        let y = norm.apply(x);
        if (0.0..=1.0).contains(&y) {
            y
        } else {
            clipped += 1;
            y.clamp(0.0, 1.0)
        }
    };
    let real: Vec<f64> = h_s.data().iter().map(|z| map(z.re)).collect();
    let imag: Vec<f64> = h_s.data().iter().map(|z| map(z.im)).collect();
    let mut planes = AngularDelayPlanes::new(h_s.rows(), h_s.cols(), real, imag, norm)?;
    planes.clipped = clipped;
    Ok(planes)
}

/// Denormalize, zero-pad and invert back to the spatial-frequency domain.
pub fn reconstruct_spatial(planes: &AngularDelayPlanes, n_c: usize) -> Result<SpatialFrequencyChannel> {
    reconstruct_from_truncated(&planes.to_complex(), n_c)
}
