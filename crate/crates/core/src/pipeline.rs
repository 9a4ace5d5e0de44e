//! Patch extraction, scoring, and mask assembly.

use crate::image::{save_mask, BinaryMask, SatImage};
use crate::models::{FeatureVector, ModelWeights, INFER_CHUNK};
use crate::numerics::{Dims4, Tensor4};
use crate::ocsvm::SvmModel;
use crate::{Error, Result};
use ::image::{ImageBuffer, Luma};
use rayon::prelude::*;
use std::fs;
use std::path::Path;

pub const PATCH_SIZE: usize = 64;
pub const DEFAULT_STRIDE: usize = 32;
pub const SOFT_RAW_MAGIC: &[u8; 8] = b"SFSOFT01";

/// Patches per dimension: `floor((dim - size) / stride) + 1`.
pub fn patches_per_dim(dim: usize, size: usize, stride: usize) -> usize {
    (dim - size) / stride + 1
}

/// Map an 8-bit value to [-1, 1].
pub fn normalize_pixel(v: u8) -> f32 {
    f32::from(v) / 127.5 - 1.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub size: usize,
    pub stride: usize,
    pub rows: usize,
    pub cols: usize,
    /// Top-left `(y, x)` of each patch, row-major.
    pub positions: Vec<(usize, usize)>,
    pub image_height: usize,
    pub image_width: usize,
    /// Normalized pixels, one sample per patch.
    pub patches: Tensor4<f32>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Row-major grid geometry without pixel data.
pub fn grid_positions(
    height: usize,
    width: usize,
    size: usize,
    stride: usize,
) -> Result<(usize, usize, Vec<(usize, usize)>)> {
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "patch size and stride must be positive".into(),
        ));
    }
    if size > height || size > width {
        return Err(Error::InvalidArgument(format!(
            "patch size {size} exceeds image {height}x{width}"
        )));
    }
    let rows = patches_per_dim(height, size, stride);
    let cols = patches_per_dim(width, size, stride);
    let positions = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r * stride, c * stride)))
        .collect();
    Ok((rows, cols, positions))
}

pub fn extract_patches(image: &SatImage, size: usize, stride: usize) -> Result<PatchGrid> {
    let (rows, cols, positions) = grid_positions(image.height, image.width, size, stride)?;
    let per = size * size * 3;
    let mut data = vec![0f32; positions.len() * per];
    for (k, &(y0, x0)) in positions.iter().enumerate() {
        let out = &mut data[k * per..(k + 1) * per];
        for dy in 0..size {
            let src = ((y0 + dy) * image.width + x0) * 3;
            let row = &image.pixels[src..src + size * 3];
            for (o, &v) in out[dy * size * 3..(dy + 1) * size * 3].iter_mut().zip(row) {
                *o = normalize_pixel(v);
            }
        }
    }
    let patches = Tensor4::from_vec(Dims4::new(positions.len(), size, size, 3), data)?;
    Ok(PatchGrid {
        size,
        stride,
        rows,
        cols,
        positions,
        image_height: image.height,
        image_width: image.width,
        patches,
    })
}

/// How scores of overlapping patches combine at a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Mean,
    Min,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "min" => Ok(Aggregation::Min),
            other => Err(Error::InvalidArgument(format!(
                "unknown aggregation {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub height: usize,
    pub width: usize,
    /// Per-pixel score, row-major.
    pub scores: Vec<f64>,
    /// Number of patches covering each pixel; 0 marks filled border pixels.
    pub coverage: Vec<u32>,
    /// Score of every patch, in grid order.
    pub patch_scores: Vec<f64>,
}

impl SoftMask {
    pub fn covered(&self, i: usize) -> bool {
        self.coverage[i] > 0
    }
}

/// Spread patch scores over pixels. Pixels outside every patch take the
/// value of the nearest covered pixel and keep coverage 0.
pub fn assemble_soft_mask(
    grid: &PatchGrid,
    patch_scores: &[f64],
    agg: Aggregation,
) -> Result<SoftMask> {
    assemble(
        grid.image_height,
        grid.image_width,
        grid.size,
        &grid.positions,
        patch_scores,
        agg,
    )
}

fn assemble(
    height: usize,
    width: usize,
    size: usize,
    positions: &[(usize, usize)],
    patch_scores: &[f64],
    agg: Aggregation,
) -> Result<SoftMask> {
    if patch_scores.len() != positions.len() {
        return Err(Error::shape(
            "assemble_soft_mask scores",
            positions.len(),
            patch_scores.len(),
        ));
    }
    if positions.is_empty() {
        return Err(Error::Empty("patch scores"));
    }
    if let Some(i) = patch_scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("patch score {i}")));
    }
    let n = height * width;
    let mut acc = vec![
        match agg {
            Aggregation::Mean => 0.0,
            Aggregation::Min => f64::INFINITY,
        };
        n
    ];
    let mut coverage = vec![0u32; n];
    for (&(y0, x0), &s) in positions.iter().zip(patch_scores) {
        for y in y0..y0 + size {
            for x in x0..x0 + size {
                let i = y * width + x;
                coverage[i] += 1;
                match agg {
                    Aggregation::Mean => acc[i] += s,
                    Aggregation::Min => acc[i] = acc[i].min(s),
                }
            }
        }
    }
    if agg == Aggregation::Mean {
        for (a, &c) in acc.iter_mut().zip(&coverage) {
            if c > 0 {
                *a /= f64::from(c);
            }
        }
    }
    let max_y = positions.iter().map(|p| p.0).max().unwrap_or(0) + size;
    let max_x = positions.iter().map(|p| p.1).max().unwrap_or(0) + size;
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if coverage[i] == 0 {
                acc[i] = acc[y.min(max_y - 1) * width + x.min(max_x - 1)];
            }
        }
    }
    Ok(SoftMask {
        height,
        width,
        scores: acc,
        coverage,
        patch_scores: patch_scores.to_vec(),
    })
}

/// Features of every patch, computed in parallel chunks.
pub fn encode_patches(
    encoder: &ModelWeights<f32>,
    patches: &Tensor4<f32>,
) -> Result<Vec<FeatureVector>> {
    let n = patches.dims().n;
    let idx: Vec<usize> = (0..n).collect();
    let parts: Vec<Vec<FeatureVector>> = idx
        .par_chunks(INFER_CHUNK)
        .map(|chunk| encoder.encode(&patches.gather(chunk)))
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// SVM decision value of every patch.
pub fn score_patches(
    encoder: &ModelWeights<f32>,
    svm: &SvmModel,
    patches: &Tensor4<f32>,
) -> Result<Vec<f64>> {
    let dim = encoder.spec.feature_dim();
    if dim != svm.dim {
        return Err(Error::shape("encoder/svm feature dim", svm.dim, dim));
    }
    svm.decision_batch(&encode_patches(encoder, patches)?)
}

pub fn compute_soft_mask(
    image: &SatImage,
    encoder: &ModelWeights<f32>,
    svm: &SvmModel,
    size: usize,
    stride: usize,
    agg: Aggregation,
) -> Result<SoftMask> {
    let grid = extract_patches(image, size, stride)?;
    let scores = score_patches(encoder, svm, &grid.patches)?;
    assemble_soft_mask(&grid, &scores, agg)
}

/// 1 (pristine) where the score is at least `t`, else 0.
pub fn threshold_mask(soft: &SoftMask, t: f64) -> BinaryMask {
    BinaryMask {
        height: soft.height,
        width: soft.width,
        labels: soft.scores.iter().map(|&s| u8::from(s >= t)).collect(),
    }
}

/// Lowest patch score: the least pristine-looking patch.
pub fn detection_score(soft: &SoftMask) -> Result<f64> {
    soft.patch_scores
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or(Error::Empty("patch scores"))
}

/// 16-bit grayscale PNG scaled so the mask minimum maps to 0 and the
/// maximum to 65535, plus a `<path>.range` text record with both values.
pub fn save_soft_mask_png(soft: &SoftMask, path: &Path) -> Result<()> {
    let lo = soft.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = soft
        .scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let raw: Vec<u16> = soft
        .scores
        .iter()
        .map(|&s| {
            if span > 0.0 {
                ((s - lo) / span * 65535.0).round() as u16
            } else {
                0
            }
        })
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(soft.width as u32, soft.height as u32, raw).expect("length checked");
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })?;
    let side = range_path(path);
    fs::write(&side, format!("min={lo:e}\nmax={hi:e}\n")).map_err(|e| Error::io(&side, e))
}

pub fn range_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".range");
    s.into()
}

/// Exact dump: magic, u32 height, u32 width, u32 patch count, then f64
/// pixel scores, u32 coverage counts, f64 patch scores; little-endian.
pub fn soft_mask_to_bytes(soft: &SoftMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + soft.scores.len() * 12 + soft.patch_scores.len() * 8);
    out.extend_from_slice(SOFT_RAW_MAGIC);
    for v in [soft.height, soft.width, soft.patch_scores.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    soft.scores
        .iter()
        .for_each(|s| out.extend_from_slice(&s.to_le_bytes()));
    soft.coverage
        .iter()
        .for_each(|c| out.extend_from_slice(&c.to_le_bytes()));
    soft.patch_scores
        .iter()
        .for_each(|s| out.extend_from_slice(&s.to_le_bytes()));
    out
}

pub fn soft_mask_from_bytes(bytes: &[u8], origin: &Path) -> Result<SoftMask> {
    let bad = |r: &str| Error::format(origin, r);
    if bytes.len() < 20 || &bytes[..8] != SOFT_RAW_MAGIC {
        return Err(bad("bad soft mask header"));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (h, w, k) = (u(8), u(12), u(16));
    let n = h * w;
    if bytes.len() != 20 + n * 12 + k * 8 {
        return Err(bad("soft mask length mismatch"));
    }
    let f = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let scores = (0..n).map(|i| f(20 + 8 * i)).collect();
    let coverage = (0..n).map(|i| u(20 + 8 * n + 4 * i) as u32).collect();
    let patch_scores = (0..k).map(|i| f(20 + 12 * n + 8 * i)).collect();
    Ok(SoftMask {
        height: h,
        width: w,
        scores,
        coverage,
        patch_scores,
    })
}

pub fn save_soft_mask_raw(soft: &SoftMask, path: &Path) -> Result<()> {
    fs::write(path, soft_mask_to_bytes(soft)).map_err(|e| Error::io(path, e))
}

pub fn load_soft_mask_raw(path: &Path) -> Result<SoftMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    soft_mask_from_bytes(&bytes, path)
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct InferenceOutputs {
    pub soft_png: std::path::PathBuf,
    pub soft_raw: std::path::PathBuf,
    pub binary_png: std::path::PathBuf,
}

/// Write `<stem>_soft.png` (+ `.range`), `<stem>_soft.f64`, `<stem>_mask.png`.
pub fn write_outputs(
    soft: &SoftMask,
    threshold: f64,
    dir: &Path,
    stem: &str,
) -> Result<InferenceOutputs> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let out = InferenceOutputs {
        soft_png: dir.join(format!("{stem}_soft.png")),
        soft_raw: dir.join(format!("{stem}_soft.f64")),
        binary_png: dir.join(format!("{stem}_mask.png")),
    };
    save_soft_mask_png(soft, &out.soft_png)?;
    save_soft_mask_raw(soft, &out.soft_raw)?;
    save_mask(&threshold_mask(soft, threshold), &out.binary_png)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_spec, init_weights, ArchId};
    use crate::ocsvm::{fit, SvmConfig};

    fn gradient_image(h: usize, w: usize) -> SatImage {
        let pixels = (0..h * w * 3).map(|i| (i % 251) as u8).collect();
        SatImage::new(h, w, pixels).unwrap()
    }

    #[test]
    fn patch_counts() {
        assert_eq!(patches_per_dim(650, 64, 32), 19);
        let (r, c, p) = grid_positions(650, 650, 64, 32).unwrap();
        assert_eq!((r, c, p.len()), (19, 19, 361));
        assert_eq!(grid_positions(650, 650, 64, 64).unwrap().2.len(), 100);
        for stride in [1, 7, 64, 100] {
            assert_eq!(grid_positions(64, 64, 64, stride).unwrap().2.len(), 1);
        }
        assert!(grid_positions(63, 100, 64, 32).is_err());
        assert!(grid_positions(100, 100, 64, 0).is_err());
        assert_eq!(*p.last().unwrap(), (576, 576));
    }

    #[test]
    fn patch_pixels_are_normalized_copies() {
        let img = gradient_image(100, 90);
        let g = extract_patches(&img, 64, 32).unwrap();
        assert_eq!(g.len(), 2 * 1);
        let (y0, x0) = g.positions[1];
        let px = img.get(y0 + 5, x0 + 7);
        for c in 0..3 {
            assert_eq!(g.patches.at(1, 5, 7, c), normalize_pixel(px[c]));
        }
        assert_eq!(normalize_pixel(0), -1.0);
        assert_eq!(normalize_pixel(255), 1.0);
    }

    #[test]
    fn non_overlapping_cover_is_exact() {
        let (_, _, pos) = grid_positions(130, 130, 64, 64).unwrap();
        let scores = [0.5, -0.2, 0.1, 0.3];
        let m = assemble(130, 130, 64, &pos, &scores, Aggregation::Mean).unwrap();
        assert_eq!(m.scores[0], 0.5);
        assert_eq!(m.scores[64], -0.2);
        assert_eq!(m.scores[64 * 130 + 3], 0.1);
        // Remainder border takes the nearest covered value, flagged uncovered.
        assert_eq!(m.scores[129], -0.2);
        assert_eq!(m.coverage[129], 0);
        assert_eq!(m.scores[129 * 130 + 129], 0.3);
        assert_eq!(detection_score(&m).unwrap(), -0.2);
    }

    #[test]
    fn constant_scores_give_constant_mask() {
        let (_, _, pos) = grid_positions(200, 170, 64, 32).unwrap();
        for agg in [Aggregation::Mean, Aggregation::Min] {
            let m = assemble(200, 170, 64, &pos, &vec![0.3; pos.len()], agg).unwrap();
            assert!(m.scores.iter().all(|&s| (s - 0.3).abs() < 1e-15));
            assert_eq!(detection_score(&m).unwrap(), 0.3);
        }
    }

    #[test]
    fn mean_is_permutation_invariant_and_min_bounds_mean() {
        let (_, _, pos) = grid_positions(160, 160, 64, 32).unwrap();
        let scores: Vec<f64> = (0..pos.len())
            .map(|i| ((i * 7919) % 13) as f64 * 0.1 - 0.4)
            .collect();
        let a = assemble(160, 160, 64, &pos, &scores, Aggregation::Mean).unwrap();
        let mut order: Vec<usize> = (0..pos.len()).collect();
        order.reverse();
        let pos_r: Vec<_> = order.iter().map(|&i| pos[i]).collect();
        let sc_r: Vec<_> = order.iter().map(|&i| scores[i]).collect();
        let b = assemble(160, 160, 64, &pos_r, &sc_r, Aggregation::Mean).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((x - y).abs() < 1e-12);
        }
        let m = assemble(160, 160, 64, &pos, &scores, Aggregation::Min).unwrap();
        assert!(m.scores.iter().zip(&a.scores).all(|(lo, mean)| lo <= mean));
        let pixel_min = m.scores.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(pixel_min, detection_score(&m).unwrap());
    }

    #[test]
    fn thresholds() {
        let (_, _, pos) = grid_positions(128, 128, 64, 64).unwrap();
        let m = assemble(
            128,
            128,
            64,
            &pos,
            &[0.5, -0.2, 0.1, 0.3],
            Aggregation::Mean,
        )
        .unwrap();
        assert!(threshold_mask(&m, f64::NEG_INFINITY)
            .labels
            .iter()
            .all(|&l| l == 1));
        assert!(threshold_mask(&m, f64::INFINITY)
            .labels
            .iter()
            .all(|&l| l == 0));
        let (lo, hi) = (threshold_mask(&m, 0.0), threshold_mask(&m, 0.2));
        assert!(lo
            .labels
            .iter()
            .zip(&hi.labels)
            .all(|(a, b)| *a == 1 || *b == 0));
        assert_eq!(lo.forged_count(), 64 * 64);
    }

    #[test]
    fn assembly_errors() {
        let (_, _, pos) = grid_positions(64, 64, 64, 32).unwrap();
        assert!(assemble(64, 64, 64, &pos, &[], Aggregation::Mean).is_err());
        assert!(assemble(64, 64, 64, &pos, &[f64::NAN], Aggregation::Mean).is_err());
    }

    #[test]
    fn raw_and_png_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let (_, _, pos) = grid_positions(100, 80, 64, 16).unwrap();
        let scores: Vec<f64> = (0..pos.len()).map(|i| i as f64 * 0.01 - 0.02).collect();
        let m = assemble(100, 80, 64, &pos, &scores, Aggregation::Mean).unwrap();
        let out = write_outputs(&m, 0.0, dir.path(), "x").unwrap();
        assert_eq!(load_soft_mask_raw(&out.soft_raw).unwrap(), m);
        let png = image::open(&out.soft_png).unwrap().into_luma16();
        assert_eq!(png.dimensions(), (80, 100));
        assert!(fs::read_to_string(range_path(&out.soft_png))
            .unwrap()
            .contains("min=-2e-2"));
        let bin = crate::image::load_mask(&out.binary_png).unwrap();
        assert_eq!(bin, threshold_mask(&m, 0.0));
    }

    #[test]
    fn end_to_end_with_untrained_models_is_deterministic() {
        let enc = init_weights::<f32>(&build_spec(ArchId::A4), 0);
        let img = gradient_image(96, 96);
        let g = extract_patches(&img, 64, 32).unwrap();
        let feats = encode_patches(&enc, &g.patches).unwrap();
        let svm = fit(
            &feats,
            &SvmConfig {
                nu: 0.5,
                ..Default::default()
            },
        )
        .unwrap();
        let a = compute_soft_mask(&img, &enc, &svm, 64, 32, Aggregation::Mean).unwrap();
        let b = compute_soft_mask(&img, &enc, &svm, 64, 32, Aggregation::Mean).unwrap();
        assert_eq!(soft_mask_to_bytes(&a), soft_mask_to_bytes(&b));
        assert_eq!((a.height, a.width, a.patch_scores.len()), (96, 96, 4));
        let d2 = init_weights::<f32>(&build_spec(ArchId::A2), 0);
        let wrong = fit(&[FeatureVector(vec![0.0; 3])], &SvmConfig::default()).unwrap();
        assert!(compute_soft_mask(&img, &d2, &wrong, 64, 32, Aggregation::Mean).is_err());
    }
}
