use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

use super::{FeatureError, Spectrogram};

pub const PATCH: usize = 16;
pub const STRIDE: usize = 10;

/// Overlapping square patch layout over a spectrogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch: usize,
    pub stride: usize,
    pub n_freq: usize,
    pub n_time: usize,
}

impl PatchGrid {
    pub fn count(&self) -> usize {
        self.n_freq * self.n_time
    }

    pub fn patch_dim(&self) -> usize {
        self.patch * self.patch
    }
}

/// Patches along one axis of length `len`: `⌊(len − patch)/stride⌋ + 1`.
pub fn patches_along(len: usize, patch: usize, stride: usize) -> Option<usize> {
    (len >= patch && stride > 0).then(|| (len - patch) / stride + 1)
}

/// 16×16 patches at stride 10 in both directions.
pub fn patch_grid(mel_bins: usize, frames: usize) -> Result<PatchGrid, FeatureError> {
    let axis = |len: usize, name: &str| {
        patches_along(len, PATCH, STRIDE).ok_or_else(|| {
            FeatureError::Contract(format!("{name} axis has {len} cells, fewer than the {PATCH}-cell patch"))
        })
    };
    Ok(PatchGrid {
        patch: PATCH,
        stride: STRIDE,
        n_freq: axis(mel_bins, "mel")?,
        n_time: axis(frames, "time")?,
    })
}

/// Flattens every patch into a row of an `[N × patch²]` tensor.
///
/// Rows are ordered frequency-patch major, then time; inside a patch the
/// values are read mel row by mel row.
pub fn extract_patches(spec: &Spectrogram, grid: &PatchGrid) -> Result<Tensor, FeatureError> {
    let expected = patch_grid(spec.mel_bins, spec.frames)?;
    if expected.n_freq < grid.n_freq || expected.n_time < grid.n_time || grid.patch != PATCH || grid.stride != STRIDE {
        return Err(FeatureError::Contract(format!(
            "{}×{} spectrogram cannot supply a {}×{} patch grid",
            spec.mel_bins, spec.frames, grid.n_freq, grid.n_time
        )));
    }
    let dim = grid.patch_dim();
    let mut out = Vec::with_capacity(grid.count() * dim);
    for pf in 0..grid.n_freq {
        for pt in 0..grid.n_time {
            for r in 0..grid.patch {
                let row = pf * grid.stride + r;
                let start = row * spec.frames + pt * grid.stride;
                out.extend_from_slice(&spec.values[start..start + grid.patch]);
            }
        }
    }
    Tensor::new(vec![grid.count(), dim], out).map_err(|e| FeatureError::Contract(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_windows(len: usize) -> usize {
        (0..len).filter(|s| s % STRIDE == 0 && s + PATCH <= len).count()
    }

    #[test]
    fn ten_second_geometry() {
        let g = patch_grid(128, 1000).unwrap();
        assert_eq!((g.n_freq, g.n_time, g.count()), (12, 99, 1188));
        let one = patch_grid(16, 16).unwrap();
        assert_eq!(one.count(), 1);
        assert!(patch_grid(15, 100).is_err());
        assert!(patch_grid(128, 15).is_err());
    }

    #[test]
    fn axis_formula_matches_enumeration() {
        for len in 16..600 {
            assert_eq!(patches_along(len, PATCH, STRIDE), Some(brute_force_windows(len)), "len {len}");
        }
        assert_eq!(
            patch_grid(128, 1000).unwrap().count(),
            brute_force_windows(128) * brute_force_windows(1000)
        );
    }

    #[test]
    fn patches_read_the_right_cells() {
        let (m, f) = (36, 46);
        let spec = Spectrogram::new(m, f, (0..m * f).map(|i| i as f64).collect()).unwrap();
        let grid = patch_grid(m, f).unwrap();
        let p = extract_patches(&spec, &grid).unwrap();
        assert_eq!(p.shape(), &[grid.count(), 256]);
        let data = p.data();
        for pf in 0..grid.n_freq {
            for pt in 0..grid.n_time {
                let row = pf * grid.n_time + pt;
                for r in 0..16 {
                    for c in 0..16 {
                        assert_eq!(data[row * 256 + r * 16 + c], spec.get(pf * 10 + r, pt * 10 + c));
                    }
                }
            }
        }
    }
}
