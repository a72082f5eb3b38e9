//! Gaussian summaries of embedding samples and their on-disk container.
//!
//! A stats container is a directory with three files:
//!
//! * `meta.json` with `dim`, `count`, `probe_id`, `dtype` (always `"f32le"`)
//!   and `format_version` (always `1`),
//! * `mean.f32`, `dim` little-endian `f32` values,
//! * `cov.f32`, `dim * dim` little-endian `f32` values in row-major order.
//!
//! Values are computed in `f64` and narrowed to `f32` on save.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

pub const STATS_FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32LE: &str = "f32le";

const META_FILE: &str = "meta.json";
const MEAN_FILE: &str = "mean.f32";
const COV_FILE: &str = "cov.f32";
const ROWS_FILE: &str = "rows.f32";
const ROWS_META_FILE: &str = "rows_meta.json";

/// Absolute per-entry tolerance for covariance symmetry.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Relative ridge added to the covariance diagonal when shrinkage is on.
pub const SHRINKAGE_SCALE: f64 = 1e-6;

/// Mean and covariance of an embedding sample, tagged with the probe that
/// produced the embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStats {
    pub count: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub probe_id: String,
}

impl EmbeddingStats {
    /// Build from parts, checking shapes, finiteness and symmetry.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, count: usize, probe_id: impl Into<String>) -> Result<Self> {
        let stats = Self {
            count,
            mean,
            cov,
            probe_id: probe_id.into(),
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::Input("stats must have dim >= 1".into()));
        }
        if self.count == 0 {
            return Err(Error::Input("stats must have count >= 1".into()));
        }
        if self.cov.nrows() != d || self.cov.ncols() != d {
            return Err(Error::DimMismatch {
                expected: d,
                got: self.cov.nrows(),
            });
        }
        if self.mean.iter().chain(self.cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("stats contain non-finite entries".into()));
        }
        for i in 0..d {
            for j in (i + 1)..d {
                if (self.cov[(i, j)] - self.cov[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::Input(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    /// Copy with every value narrowed to `f32` precision, i.e. what a
    /// save/load cycle yields.
    pub fn to_f32_precision(&self) -> Self {
        Self {
            count: self.count,
            mean: self.mean.map(|v| f64::from(v as f32)),
            cov: self.cov.map(|v| f64::from(v as f32)),
            probe_id: self.probe_id.clone(),
        }
    }
}

/// Unbiased mean/covariance of `rows` (one embedding per row).
///
/// With `shrinkage_on`, `delta * I` is added to the covariance where
/// `delta = 1e-6 * trace(cov) / d`.
pub fn accumulate_stats(rows: &DMatrix<f64>, shrinkage_on: bool, probe_id: &str) -> Result<EmbeddingStats> {
    let (n, d) = rows.shape();
    if n < 2 {
        return Err(Error::Estimation(format!(
            "need at least 2 rows to estimate a covariance, got {n}"
        )));
    }
    if d == 0 {
        return Err(Error::Input("rows have zero columns".into()));
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("rows contain non-finite entries".into()));
    }

    let mut mean = DVector::zeros(d);
    for row in rows.row_iter() {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v;
        }
    }
    mean /= n as f64;

    let mut cov = DMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in rows.row_iter() {
        for (c, (v, m)) in centered.iter_mut().zip(row.iter().zip(mean.iter())) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centered[i];
            for j in i..d {
                cov[(i, j)] += ci * centered[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    if shrinkage_on {
        let delta = shrinkage_delta(&cov);
        for i in 0..d {
            cov[(i, i)] += delta;
        }
    }

    EmbeddingStats::new(mean, cov, n, probe_id)
}

/// Ridge used by [`accumulate_stats`] for a given covariance.
pub fn shrinkage_delta(cov: &DMatrix<f64>) -> f64 {
    SHRINKAGE_SCALE * cov.trace() / cov.nrows() as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct StatsMeta {
    dim: usize,
    count: usize,
    probe_id: String,
    dtype: String,
    format_version: u32,
}

fn encode_f32le<'a>(values: impl Iterator<Item = &'a f64>) -> Vec<u8> {
    values.flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

fn decode_f32le(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if bytes.len() != expected * 4 {
        return Err(Error::format(
            path,
            format!(
                "expected {expected} f32 values ({} bytes), found {} bytes",
                expected * 4,
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect())
}

/// Write `stats` as a container directory at `dir`.
pub fn save_stats(stats: &EmbeddingStats, dir: &Path) -> Result<()> {
    stats.validate()?;
    let meta = StatsMeta {
        dim: stats.dim(),
        count: stats.count,
        probe_id: stats.probe_id.clone(),
        dtype: DTYPE_F32LE.to_string(),
        format_version: STATS_FORMAT_VERSION,
    };
    fsutil::write_json(&dir.join(META_FILE), &meta)?;
    fsutil::write_atomic(&dir.join(MEAN_FILE), &encode_f32le(stats.mean.iter()))?;
    // nalgebra is column-major; the file is row-major.
    let row_major: Vec<f64> = stats.cov.transpose().iter().copied().collect();
    fsutil::write_atomic(&dir.join(COV_FILE), &encode_f32le(row_major.iter()))
}

/// Read a container directory written by [`save_stats`].
pub fn load_stats(dir: &Path) -> Result<EmbeddingStats> {
    let meta_path = dir.join(META_FILE);
    let meta: StatsMeta = fsutil::read_json(&meta_path)?;
    if meta.format_version != STATS_FORMAT_VERSION {
        return Err(Error::format(
            &meta_path,
            format!("unsupported format_version {}", meta.format_version),
        ));
    }
    if meta.dtype != DTYPE_F32LE {
        return Err(Error::format(&meta_path, format!("unsupported dtype {:?}", meta.dtype)));
    }
    if meta.dim == 0 || meta.count == 0 {
        return Err(Error::format(&meta_path, "dim and count must be positive"));
    }
    let d = meta.dim;
    let mean_path = dir.join(MEAN_FILE);
    let mean = decode_f32le(&mean_path, &fsutil::read(&mean_path)?, d)?;
    let cov_path = dir.join(COV_FILE);
    let cov = decode_f32le(&cov_path, &fsutil::read(&cov_path)?, d * d)?;

    EmbeddingStats::new(
        DVector::from_vec(mean),
        DMatrix::from_row_slice(d, d, &cov),
        meta.count,
        meta.probe_id,
    )
    .map_err(|e| Error::format(dir, e.to_string()))
}

/// Metadata accompanying a raw per-sample embedding matrix (`rows.f32`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowsMeta {
    pub n: usize,
    pub dim: usize,
    pub probe_id: String,
    #[serde(default)]
    pub source_hash: String,
}

/// Load a raw embedding matrix directory (`rows.f32` + `rows_meta.json`),
/// as produced by the image extraction tool.
pub fn load_rows(dir: &Path) -> Result<(DMatrix<f64>, RowsMeta)> {
    let meta: RowsMeta = fsutil::read_json(&dir.join(ROWS_META_FILE))?;
    let path = dir.join(ROWS_FILE);
    let values = decode_f32le(&path, &fsutil::read(&path)?, meta.n * meta.dim)?;
    Ok((DMatrix::from_row_slice(meta.n, meta.dim, &values), meta))
}

/// Write a raw embedding matrix directory.
pub fn save_rows(rows: &DMatrix<f64>, meta: &RowsMeta, dir: &Path) -> Result<()> {
    if rows.shape() != (meta.n, meta.dim) {
        return Err(Error::DimMismatch {
            expected: meta.n * meta.dim,
            got: rows.len(),
        });
    }
    fsutil::write_json(&dir.join(ROWS_META_FILE), meta)?;
    let row_major: Vec<f64> = rows.transpose().iter().copied().collect();
    fsutil::write_atomic(&dir.join(ROWS_FILE), &encode_f32le(row_major.iter()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rows(seed: u64, n: usize, d: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, j| rng.gen_range(-3.0..3.0) + j as f64)
    }

    // E[xy] - E[x]E[y], scaled to the unbiased denominator.
    fn moment_cov(rows: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, d) = rows.shape();
        let nf = n as f64;
        DMatrix::from_fn(d, d, |i, j| {
            let sx: f64 = rows.column(i).sum();
            let sy: f64 = rows.column(j).sum();
            let sxy: f64 = rows.column(i).dot(&rows.column(j));
            (sxy - sx * sy / nf) / (nf - 1.0)
        })
    }

    #[test]
    fn two_point_covariance() {
        let rows = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 2.0]);
        let s = accumulate_stats(&rows, false, "p").unwrap();
        assert_eq!(s.mean.as_slice(), &[1.0, 1.0]);
        assert_eq!(s.cov, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]));
        assert_eq!(s.count, 2);
        assert_eq!(s.probe_id, "p");
    }

    #[test]
    fn identical_rows_have_zero_covariance() {
        let v = [0.5, -1.5, 3.0];
        let rows = DMatrix::from_fn(5, 3, |_, j| v[j]);
        let s = accumulate_stats(&rows, false, "p").unwrap();
        assert_eq!(s.mean.as_slice(), &v);
        assert!(s.cov.iter().all(|&c| c == 0.0));
        // Shrinkage of a zero matrix is zero.
        let s = accumulate_stats(&rows, true, "p").unwrap();
        assert!(s.cov.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn one_dimensional_variance() {
        let rows = DMatrix::from_column_slice(3, 1, &[0.0, 2.0, 4.0]);
        let s = accumulate_stats(&rows, false, "p").unwrap();
        assert_eq!(s.mean[0], 2.0);
        assert_eq!(s.cov[(0, 0)], 4.0);
    }

    #[test]
    fn rejects_bad_input() {
        let one = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert!(matches!(accumulate_stats(&one, false, "p"), Err(Error::Estimation(_))));
        let nan = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        assert!(matches!(accumulate_stats(&nan, false, "p"), Err(Error::Input(_))));
    }

    #[test]
    fn matches_moment_route() {
        for seed in 0..5 {
            let rows = random_rows(seed, 50, 6);
            let s = accumulate_stats(&rows, false, "p").unwrap();
            let oracle = moment_cov(&rows);
            for (a, b) in s.cov.iter().zip(oracle.iter()) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn shrinkage_shifts_every_eigenvalue() {
        for d in [2usize, 5, 16] {
            let rows = random_rows(d as u64, 4 * d, d);
            let raw = accumulate_stats(&rows, false, "p").unwrap();
            let shrunk = accumulate_stats(&rows, true, "p").unwrap();
            let delta = shrinkage_delta(&raw.cov);
            let mut e0: Vec<f64> = SymmetricEigen::new(raw.cov.clone())
                .eigenvalues
                .iter()
                .copied()
                .collect();
            let mut e1: Vec<f64> = SymmetricEigen::new(shrunk.cov.clone())
                .eigenvalues
                .iter()
                .copied()
                .collect();
            e0.sort_by(f64::total_cmp);
            e1.sort_by(f64::total_cmp);
            for (a, b) in e0.iter().zip(&e1) {
                assert!((b - a - delta).abs() <= 1e-9 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = accumulate_stats(&random_rows(3, 20, 4), true, "clip-vit-b32").unwrap();
        save_stats(&s, dir.path()).unwrap();
        let loaded = load_stats(dir.path()).unwrap();
        assert_eq!(loaded, s.to_f32_precision());
        // A second cycle is the identity.
        save_stats(&loaded, dir.path()).unwrap();
        assert_eq!(load_stats(dir.path()).unwrap(), loaded);
    }

    #[test]
    fn loads_hand_written_fixture() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("meta.json"),
            r#"{"dim":2,"count":10,"probe_id":"fixture","dtype":"f32le","format_version":1}"#,
        )
        .unwrap();
        // 1.0f32 = 0x3f800000, 2.0f32 = 0x40000000, 0.5f32 = 0x3f000000
        std::fs::write(
            dir.path().join("mean.f32"),
            [0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40],
        )
        .unwrap();
        let cov: Vec<u8> = [
            [0x00, 0x00, 0x80, 0x3f],
            [0x00, 0x00, 0x00, 0x3f],
            [0x00, 0x00, 0x00, 0x3f],
            [0x00, 0x00, 0x00, 0x40],
        ]
        .concat();
        std::fs::write(dir.path().join("cov.f32"), cov).unwrap();
        let s = load_stats(dir.path()).unwrap();
        assert_eq!(s.mean.as_slice(), &[1.0, 2.0]);
        assert_eq!(s.cov, DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]));
        assert_eq!(s.count, 10);
        assert_eq!(s.probe_id, "fixture");
    }

    #[test]
    fn load_rejects_malformed_containers() {
        let dir = tempfile::tempdir().unwrap();
        let s = accumulate_stats(&random_rows(1, 10, 3), false, "p").unwrap();
        save_stats(&s, dir.path()).unwrap();

        // Four floats where the manifest promises three.
        std::fs::write(dir.path().join("mean.f32"), [0u8; 16]).unwrap();
        assert!(matches!(load_stats(dir.path()), Err(Error::Format { .. })));

        save_stats(&s, dir.path()).unwrap();
        let meta = std::fs::read_to_string(dir.path().join("meta.json")).unwrap();
        std::fs::write(
            dir.path().join("meta.json"),
            meta.replace("\"format_version\": 1", "\"format_version\": 2"),
        )
        .unwrap();
        assert!(matches!(load_stats(dir.path()), Err(Error::Format { .. })));

        let missing = dir.path().join("nope");
        assert!(matches!(load_stats(&missing), Err(Error::Io { .. })));
    }

    #[test]
    fn rows_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = random_rows(9, 7, 3).map(|v| f64::from(v as f32));
        let meta = RowsMeta {
            n: 7,
            dim: 3,
            probe_id: "p".into(),
            source_hash: "abc".into(),
        };
        save_rows(&rows, &meta, dir.path()).unwrap();
        let (back, back_meta) = load_rows(dir.path()).unwrap();
        assert_eq!(back, rows);
        assert_eq!(back_meta, meta);
    }

    proptest! {
        #[test]
        fn permutation_invariant(seed in 0u64..1000, n in 2usize..30, d in 1usize..6) {
            let rows = random_rows(seed, n, d);
            let mut order: Vec<usize> = (0..n).collect();
            order.reverse();
            order.rotate_left((seed as usize) % n);
            let permuted = DMatrix::from_fn(n, d, |i, j| rows[(order[i], j)]);
            let a = accumulate_stats(&rows, false, "p").unwrap();
            let b = accumulate_stats(&permuted, false, "p").unwrap();
            for (x, y) in a.mean.iter().chain(a.cov.iter()).zip(b.mean.iter().chain(b.cov.iter())) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }

        #[test]
        fn f32_stats_round_trip_exactly(seed in 0u64..1000, d in 1usize..6) {
            let dir = tempfile::tempdir().unwrap();
            let s = accumulate_stats(&random_rows(seed, d + 3, d), true, "p").unwrap().to_f32_precision();
            save_stats(&s, dir.path()).unwrap();
            prop_assert_eq!(load_stats(dir.path()).unwrap(), s);
        }
    }
}
