//! On-disk datasets: a JSON manifest `name.json` next to a raw payload
//! `name.bin` of little-endian `f32`.
//!
//! Spatial-frequency samples store each `N_c x N_t` matrix row-major with
//! real and imaginary parts interleaved. Plane samples store the `N_cc x N_t`
//! real plane followed by the imaginary plane.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{MultipathScenario, SpatialFrequencyChannel};
use crate::error::{Error, Result};
use crate::matrix::ComplexMatrix;
use crate::transform::{AngularDelayPlanes, NormMeta};

pub const DATASET_MAGIC: &str = "ENETDS";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    #[serde(rename = "spatial_freq")]
    SpatialFrequency,
    AngularDelayPlanes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub magic: String,
    pub version: u32,
    pub kind: DatasetKind,
    pub count: usize,
    /// Subcarriers, for spatial-frequency data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_c: Option<usize>,
    /// Kept delay rows, for planes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cc: Option<usize>,
    pub n_t: usize,
    pub dtype: String,
    pub layout: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<MultipathScenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<NormMeta>,
}

impl DatasetManifest {
    /// Rows of one sample: `n_c` or `n_cc` by kind, zero if missing.
    pub fn rows(&self) -> usize {
        match self.kind {
            DatasetKind::SpatialFrequency => self.n_c,
            DatasetKind::AngularDelayPlanes => self.n_cc,
        }
        .unwrap_or(0)
    }

    fn floats_per_sample(&self) -> usize {
        2 * self.rows() * self.n_t
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Spatial(Vec<SpatialFrequencyChannel>),
    Planes(Vec<AngularDelayPlanes>),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Spatial(v) => v.len(),
            Dataset::Planes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn ds_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Dataset { path: path.to_path_buf(), reason: reason.into() }
}

fn write(path: &Path, manifest: &DatasetManifest, floats: &[f32]) -> Result<()> {
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| ds_err(path, e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))?;
    let bytes: Vec<u8> = floats.iter().flat_map(|x| x.to_le_bytes()).collect();
    let bin = payload_path(path);
    fs::write(&bin, bytes).map_err(|e| Error::io(bin, e))
}

fn header(kind: DatasetKind, count: usize, rows: usize, n_t: usize, seed: u64) -> DatasetManifest {
    DatasetManifest {
        magic: DATASET_MAGIC.into(),
        version: VERSION,
        kind,
        count,
        n_c: (kind == DatasetKind::SpatialFrequency).then_some(rows),
        n_cc: (kind == DatasetKind::AngularDelayPlanes).then_some(rows),
        n_t,
        dtype: "f32le".into(),
        layout: "row_major".into(),
        seed,
        scenario: None,
        norm: None,
    }
}

/// Write spatial-frequency samples. All samples must share one shape.
pub fn save_spatial(
    path: &Path,
    samples: &[SpatialFrequencyChannel],
    seed: u64,
    scenario: Option<&MultipathScenario>,
) -> Result<()> {
    let first = samples.first().ok_or_else(|| ds_err(path, "refusing to write an empty dataset"))?;
    let (n_c, n_t) = (first.n_c(), first.n_t());
    let mut floats = Vec::with_capacity(samples.len() * 2 * n_c * n_t);
    for (i, s) in samples.iter().enumerate() {
        if (s.n_c(), s.n_t()) != (n_c, n_t) {
            return Err(ds_err(path, format!("sample {i} is {}x{}, expected {n_c}x{n_t}", s.n_c(), s.n_t())));
        }
        floats.extend(s.matrix().data().iter().flat_map(|z| [z.re as f32, z.im as f32]));
    }
    let mut m = header(DatasetKind::SpatialFrequency, samples.len(), n_c, n_t, seed);
    m.scenario = scenario.cloned();
    write(path, &m, &floats)
}

/// Write normalized planes. All samples must share one shape and one
/// normalization.
pub fn save_planes(path: &Path, samples: &[AngularDelayPlanes], seed: u64) -> Result<()> {
    let first = samples.first().ok_or_else(|| ds_err(path, "refusing to write an empty dataset"))?;
    let (n_cc, n_t, norm) = (first.n_cc(), first.n_t(), first.norm());
    let mut floats = Vec::with_capacity(samples.len() * 2 * n_cc * n_t);
    for (i, s) in samples.iter().enumerate() {
        if (s.n_cc(), s.n_t()) != (n_cc, n_t) || s.norm() != norm {
            return Err(ds_err(path, format!("sample {i} differs in shape or normalization")));
        }
        floats.extend(s.real_plane().iter().chain(s.imag_plane()).map(|&x| x as f32));
    }
    let mut m = header(DatasetKind::AngularDelayPlanes, samples.len(), n_cc, n_t, seed);
    m.norm = Some(norm);
    write(path, &m, &floats)
}

/// Load a dataset written by [`save_spatial`] or [`save_planes`], checking
/// the manifest against the payload and rejecting non-finite entries.
pub fn load_dataset(path: &Path) -> Result<(DatasetManifest, Dataset)> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let m: DatasetManifest = serde_json::from_slice(&text).map_err(|e| ds_err(path, format!("manifest: {e}")))?;
    if m.magic != DATASET_MAGIC || m.version != VERSION {
        return Err(ds_err(path, format!("unsupported format {} v{}", m.magic, m.version)));
    }
    if m.dtype != "f32le" || m.layout != "row_major" {
        return Err(ds_err(path, format!("unsupported dtype/layout {}/{}", m.dtype, m.layout)));
    }
    if m.count == 0 || m.rows() == 0 || m.n_t == 0 {
        return Err(ds_err(path, "count and dimensions must be positive"));
    }
    let bin = payload_path(path);
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let per = m.floats_per_sample();
    if bytes.len() != m.count * per * 4 {
        return Err(ds_err(
            path,
            format!("payload holds {} bytes, manifest implies {} samples of {} bytes", bytes.len(), m.count, per * 4),
        ));
    }
    let floats: Vec<f64> = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
    if let Some(i) = floats.iter().position(|x| !x.is_finite()) {
        return Err(ds_err(path, format!("non-finite value in sample {}", i / per)));
    }
    let samples = floats.chunks_exact(per);
    let data = match m.kind {
        DatasetKind::SpatialFrequency => Dataset::Spatial(
            samples
                .map(|s| {
                    let entries = s.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
                    SpatialFrequencyChannel::new(ComplexMatrix::from_vec(m.rows(), m.n_t, entries).expect("dims"))
                })
                .collect::<Result<_>>()?,
        ),
        DatasetKind::AngularDelayPlanes => {
            let norm = m.norm.ok_or_else(|| ds_err(path, "plane dataset without normalization"))?;
            let half = per / 2;
            Dataset::Planes(
                samples
                    .enumerate()
                    .map(|(i, s)| {
                        AngularDelayPlanes::new(m.rows(), m.n_t, s[..half].to_vec(), s[half..].to_vec(), norm)
                            .map_err(|e| ds_err(path, format!("sample {i}: {e}")))
                    })
                    .collect::<Result<_>>()?,
            )
        }
    };
    Ok((m, data))
}
