//! Synthetic overhead imagery, splice forgeries with ground truth, and the
//! pool/test split.

use crate::image::{load_image, load_mask, save_image, save_mask, BinaryMask, SatImage};
use crate::numerics::{Dims4, Tensor4};
use crate::pipeline::{extract_patches, grid_positions};
use crate::seed::derive_seed;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.tsv";
/// Images per full-size dataset, and how many of those feed the patch pool.
pub const PAPER_IMAGES: usize = 130;
pub const PAPER_POOL: usize = 30;
pub const VAL_FRACTION: f64 = 0.2;
/// Relative size spread around each class's nominal side length.
pub const SIZE_TOLERANCE: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::Small, SizeClass::Medium, SizeClass::Large];

    pub fn nominal(self) -> usize {
        match self {
            SizeClass::Small => 32,
            SizeClass::Medium => 64,
            SizeClass::Large => 128,
        }
    }

    /// Inclusive side-length range.
    pub fn side_range(self) -> (usize, usize) {
        let n = self.nominal() as f64;
        (
            ((1.0 - SIZE_TOLERANCE) * n).ceil() as usize,
            ((1.0 + SIZE_TOLERANCE) * n).floor() as usize,
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::Small => "small",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SizeClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SizeClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown size class {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    Ellipse,
    Airplane,
    Cloud,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 3] = [ObjectKind::Ellipse, ObjectKind::Airplane, ObjectKind::Cloud];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Ellipse => "ellipse",
            ObjectKind::Airplane => "airplane",
            ObjectKind::Cloud => "cloud",
        }
    }
}

impl FromStr for ObjectKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ObjectKind::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown object kind {s:?}")))
    }
}

// ---------------------------------------------------------------------------
// Base terrain

/// Smoothly interpolated lattice noise with `octaves` halvings of `cell`.
struct ValueNoise {
    layers: Vec<(usize, usize, Vec<f32>)>,
}

impl ValueNoise {
    fn new(height: usize, width: usize, cell: usize, octaves: usize, rng: &mut ChaCha8Rng) -> Self {
        let layers = (0..octaves)
            .map(|o| {
                let c = (cell >> o).max(1);
                let cols = width / c + 2;
                let rows = height / c + 2;
                (
                    c,
                    cols,
                    (0..rows * cols).map(|_| rng.gen::<f32>()).collect(),
                )
            })
            .collect();
        ValueNoise { layers }
    }

    /// Value in [0, 1].
    fn at(&self, y: usize, x: usize) -> f32 {
        let (mut sum, mut amp, mut norm) = (0.0, 1.0, 0.0);
        for (c, cols, lattice) in &self.layers {
            let fy = y as f32 / *c as f32;
            let fx = x as f32 / *c as f32;
            let (iy, ix) = (fy as usize, fx as usize);
            let s = |t: f32| t * t * (3.0 - 2.0 * t);
            let (ty, tx) = (s(fy - iy as f32), s(fx - ix as f32));
            let v = |r: usize, q: usize| lattice[r * cols + q];
            let top = v(iy, ix) * (1.0 - tx) + v(iy, ix + 1) * tx;
            let bot = v(iy + 1, ix) * (1.0 - tx) + v(iy + 1, ix + 1) * tx;
            sum += amp * (top * (1.0 - ty) + bot * ty);
            norm += amp;
            amp *= 0.5;
        }
        sum / norm
    }
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Overhead-looking terrain: vegetation, soil and water regions from
/// layered value noise, crossed by a few straight roads.
pub fn generate_base_image(height: usize, width: usize, seed: u64) -> SatImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let elevation = ValueNoise::new(height, width, 128, 5, &mut rng);
    let moisture = ValueNoise::new(height, width, 64, 4, &mut rng);
    let detail = ValueNoise::new(height, width, 8, 2, &mut rng);
    let water = [38.0, 58.0, 78.0];
    let dark_veg = [46.0, 72.0, 40.0];
    let light_veg = [104.0, 122.0, 66.0];
    let soil = [128.0, 108.0, 78.0];
    let road = [150.0, 144.0, 132.0];
    let roads: Vec<(f32, f32, f32, f32)> = (0..rng.gen_range(1..=4))
        .map(|_| {
            let angle: f32 = rng.gen_range(0.0..std::f32::consts::PI);
            let cy = rng.gen_range(0.0..height as f32);
            let cx = rng.gen_range(0.0..width as f32);
            (
                angle.sin(),
                -angle.cos(),
                cy * angle.cos() - cx * angle.sin(),
                rng.gen_range(0.8..2.0),
            )
        })
        .collect();
    let mut pixels = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        for x in 0..width {
            let e = elevation.at(y, x);
            let m = moisture.at(y, x);
            let d = detail.at(y, x) - 0.5;
            let land = lerp3(
                lerp3(soil, dark_veg, (m * 1.6 - 0.3).clamp(0.0, 1.0)),
                light_veg,
                (e - 0.5).clamp(0.0, 0.5),
            );
            let mut c = if e < 0.36 {
                lerp3(water, land, ((e - 0.33) / 0.03).clamp(0.0, 1.0))
            } else {
                land
            };
            for &(a, b, k, half) in &roads {
                let dist = (a * x as f32 + b * y as f32 + k).abs();
                if dist < half {
                    c = lerp3(c, road, 0.85);
                }
            }
            for ch in c {
                pixels.push(to_u8(ch + 30.0 * d + rng.gen_range(-4.0..4.0)));
            }
        }
    }
    SatImage {
        height,
        width,
        pixels,
    }
}

/// Base images `base_000 ..`, each from its own derived seed.
pub fn generate_base_images(count: usize, height: usize, width: usize, seed: u64) -> Vec<SatImage> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            generate_base_image(
                height,
                width,
                derive_seed(seed, "dataset", &format!("base/{}", base_id(i))),
            )
        })
        .collect()
}

pub fn base_id(i: usize) -> String {
    format!("base_{i:03}")
}

// ---------------------------------------------------------------------------
// Splice objects

/// An object cutout: RGB pixels plus coverage alpha in [0, 1]; pixels with
/// alpha 0 are not part of the object.
#[derive(Debug, Clone, PartialEq)]
pub struct SpliceObject {
    pub kind: ObjectKind,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<[u8; 3]>,
    pub alpha: Vec<f32>,
}

impl SpliceObject {
    pub fn pixel_count(&self) -> usize {
        self.alpha.iter().filter(|&&a| a > 0.0).count()
    }
}

/// Inside-test for each kind in canvas coordinates `u, v` in [-1, 1].
fn object_shape(kind: ObjectKind, u: f32, v: f32, params: &[f32; 4]) -> bool {
    match kind {
        ObjectKind::Ellipse => (u / params[0]).powi(2) + (v / params[1]).powi(2) <= 1.0,
        ObjectKind::Airplane => {
            // Fuselage along v, swept wings and a tailplane.
            let fuselage = u.abs() <= 0.13 && v.abs() <= 0.95;
            let wy = v + 0.05 - 0.45 * u.abs();
            let wings = u.abs() <= 0.95 && wy.abs() <= 0.12;
            let ty = v - 0.72 - 0.3 * u.abs();
            let tail = u.abs() <= 0.38 && ty.abs() <= 0.08;
            fuselage || wings || tail
        }
        ObjectKind::Cloud => {
            let mut inside = false;
            for k in 0..4 {
                let a = k as f32 * 1.7 + params[2] * 6.0;
                let (cx, cy) = (0.45 * a.cos() * params[3], 0.45 * a.sin() * params[3]);
                let r = 0.5 + 0.12 * (k as f32 * 2.3 + params[0]).sin();
                inside |= (u - cx).powi(2) + (v - cy).powi(2) <= r * r;
            }
            inside
        }
    }
}

fn object_colour(kind: ObjectKind, rng: &mut ChaCha8Rng) -> [f32; 3] {
    match kind {
        ObjectKind::Ellipse => {
            const SATURATED: [[f32; 3]; 4] = [
                [210.0, 40.0, 40.0],
                [230.0, 200.0, 30.0],
                [40.0, 90.0, 220.0],
                [200.0, 50.0, 190.0],
            ];
            SATURATED[rng.gen_range(0..SATURATED.len())]
        }
        ObjectKind::Airplane => {
            let g = rng.gen_range(205.0..240.0);
            [g, g, g + 5.0]
        }
        ObjectKind::Cloud => {
            let g = rng.gen_range(232.0..252.0);
            [g, g, g]
        }
    }
}

/// Build an object of `side` x `side` pixels, optionally rotated by
/// `rotation` radians about its centre, with `feather` pixels of alpha ramp.
pub fn make_object(
    kind: ObjectKind,
    side: usize,
    rotation: f32,
    feather: usize,
    seed: u64,
) -> Result<SpliceObject> {
    if side < 4 {
        return Err(Error::InvalidArgument(format!(
            "object side {side} too small"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = [
        rng.gen_range(0.7..1.0),
        rng.gen_range(0.55..1.0),
        rng.gen::<f32>(),
        rng.gen_range(0.8..1.0),
    ];
    let base = object_colour(kind, &mut rng);
    let (sin, cos) = rotation.sin_cos();
    let half = side as f32 / 2.0;
    let mut inside = vec![false; side * side];
    for y in 0..side {
        for x in 0..side {
            let (px, py) = (
                (x as f32 + 0.5 - half) / half,
                (y as f32 + 0.5 - half) / half,
            );
            let (u, v) = (cos * px + sin * py, -sin * px + cos * py);
            inside[y * side + x] = object_shape(kind, u, v, &params);
        }
    }
    let alpha = feathered_alpha(&inside, side, feather);
    let mut pixels = Vec::with_capacity(side * side);
    for (i, &inn) in inside.iter().enumerate() {
        if !inn {
            pixels.push([0, 0, 0]);
            continue;
        }
        let (y, x) = (i / side, i % side);
        // Sharp internal structure: stripes on ellipses, a dark spine on
        // aircraft, soft brightness variation on clouds.
        let shade = match kind {
            ObjectKind::Ellipse => {
                if (x + y) / 3 % 2 == 0 {
                    1.0
                } else {
                    0.8
                }
            }
            ObjectKind::Airplane => {
                if (x as f32 + 0.5 - half).abs() < 1.0 {
                    0.6
                } else {
                    1.0
                }
            }
            ObjectKind::Cloud => 0.96 + 0.04 * ((x as f32 * 0.3).sin() * (y as f32 * 0.27).cos()),
        };
        let jitter = rng.gen_range(-3.0..3.0);
        pixels.push([
            to_u8(base[0] * shade + jitter),
            to_u8(base[1] * shade + jitter),
            to_u8(base[2] * shade + jitter),
        ]);
    }
    if alpha.iter().all(|&a| a == 0.0) {
        return Err(Error::InvalidArgument(
            "object rasterized to zero area".into(),
        ));
    }
    Ok(SpliceObject {
        kind,
        height: side,
        width: side,
        pixels,
        alpha,
    })
}

/// 1 inside the shape, ramping down over `feather` pixels towards its edge;
/// 0 outside.
fn feathered_alpha(inside: &[bool], side: usize, feather: usize) -> Vec<f32> {
    if feather == 0 {
        return inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    }
    let r = feather as isize;
    (0..side * side)
        .map(|i| {
            if !inside[i] {
                return 0.0;
            }
            let (y, x) = ((i / side) as isize, (i % side) as isize);
            let mut nearest = r + 1;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    let out = yy < 0
                        || xx < 0
                        || yy >= side as isize
                        || xx >= side as isize
                        || !inside[yy as usize * side + xx as usize];
                    if out {
                        nearest = nearest.min(dy.abs().max(dx.abs()));
                    }
                }
            }
            (nearest as f32 / (r + 1) as f32).min(1.0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForgerySpec {
    pub size_class: SizeClass,
    pub object: ObjectKind,
    /// Explicit side length; drawn from the class range when `None`.
    pub side: Option<usize>,
    /// Explicit top-left `(y, x)`; uniform inside the image when `None`.
    pub position: Option<(usize, usize)>,
    pub rotation: f32,
    pub feather: usize,
    pub seed: u64,
}

impl ForgerySpec {
    pub fn new(size_class: SizeClass, object: ObjectKind, seed: u64) -> Self {
        ForgerySpec {
            size_class,
            object,
            side: None,
            position: None,
            rotation: 0.0,
            feather: 0,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpliceRecord {
    pub base_id: String,
    pub object_id: String,
    pub position: (usize, usize),
    pub side: usize,
    pub size_class: SizeClass,
    pub forged_pixels: usize,
}

/// Paste an object into `base`. With no feathering the composite replaces
/// pixels outright and the mask is 0 exactly where pixels were replaced.
pub fn splice(
    base: &SatImage,
    base_id: &str,
    spec: &ForgerySpec,
) -> Result<(SatImage, BinaryMask, SpliceRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = match spec.side {
        Some(s) => s,
        None => {
            let (lo, hi) = spec.size_class.side_range();
            rng.gen_range(lo..=hi)
        }
    };
    if side == 0 {
        return Err(Error::InvalidArgument("zero-area object".into()));
    }
    if side > base.height || side > base.width {
        return Err(Error::InvalidArgument(format!(
            "object side {side} exceeds image {}x{}",
            base.height, base.width
        )));
    }
    let object = make_object(spec.object, side, spec.rotation, spec.feather, rng.gen())?;
    let (y0, x0) = match spec.position {
        Some(p) => p,
        None => (
            rng.gen_range(0..=base.height - side),
            rng.gen_range(0..=base.width - side),
        ),
    };
    if y0 + side > base.height || x0 + side > base.width {
        return Err(Error::InvalidArgument(
            "object placed outside the image".into(),
        ));
    }
    let mut forged = base.clone();
    let mut mask = BinaryMask::pristine(base.height, base.width);
    for oy in 0..side {
        for ox in 0..side {
            let a = object.alpha[oy * side + ox];
            if a == 0.0 {
                continue;
            }
            let (y, x) = (y0 + oy, x0 + ox);
            let src = object.pixels[oy * side + ox];
            let dst = base.get(y, x);
            let mix = |s: u8, d: u8| to_u8(a * f32::from(s) + (1.0 - a) * f32::from(d));
            forged.set(
                y,
                x,
                [
                    mix(src[0], dst[0]),
                    mix(src[1], dst[1]),
                    mix(src[2], dst[2]),
                ],
            );
            mask.labels[y * base.width + x] = 0;
        }
    }
    let record = SpliceRecord {
        base_id: base_id.to_string(),
        object_id: format!("{}_{:016x}", spec.object.as_str(), spec.seed),
        position: (y0, x0),
        side,
        size_class: spec.size_class,
        forged_pixels: mask.forged_count(),
    };
    Ok((forged, mask, record))
}

// ---------------------------------------------------------------------------
// Splits and manifest

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Source of training and validation patches.
    Pool,
    /// Pristine test image.
    TestPristine,
    /// Test image used as a splice base; not itself evaluated.
    TestBase,
    /// Spliced test image.
    TestForged,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Pool => "pool",
            Role::TestPristine => "test_pristine",
            Role::TestBase => "test_base",
            Role::TestForged => "test_forged",
        }
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Role::Pool,
            Role::TestPristine,
            Role::TestBase,
            Role::TestForged,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown role {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub role: Role,
    /// For forged entries: the base image spliced into.
    pub base: Option<String>,
    pub size_class: Option<SizeClass>,
    pub object: Option<ObjectKind>,
    /// Top-left of the object and its side, once spliced.
    pub position: Option<(usize, usize)>,
    pub side: Option<usize>,
    /// Seed of the splice.
    pub seed: Option<u64>,
}

impl ManifestEntry {
    fn base_image(id: String, role: Role) -> Self {
        ManifestEntry {
            id,
            role,
            base: None,
            size_class: None,
            object: None,
            position: None,
            side: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub train_patches: usize,
    pub val_patches: usize,
    pub entries: Vec<ManifestEntry>,
}

/// One patch of a pool image: image id and grid index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchRef {
    pub image: String,
    pub index: usize,
}

/// `(pool, test)` image counts in the full-size proportions.
pub fn split_counts(n: usize) -> Result<(usize, usize)> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 images, got {n}"
        )));
    }
    let pool = ((n * PAPER_POOL) as f64 / PAPER_IMAGES as f64)
        .round()
        .max(1.0) as usize;
    Ok((pool, n - pool))
}

/// Assign `ids` to the patch pool and the test set, pick splice bases and
/// objects, and fix the train/val patch counts. Forged entries carry their
/// splice seed; position and side are filled once the splice is made.
pub fn build_splits(
    ids: &[String],
    height: usize,
    width: usize,
    patch_size: usize,
    stride: usize,
    seed: u64,
) -> Result<SplitManifest> {
    let (pool_n, test_n) = split_counts(ids.len())?;
    let per_image = grid_positions(height, width, patch_size, stride)?.2.len();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
        seed, "dataset", "split",
    )));
    let forged_bases = test_n / 2;
    let mut entries = Vec::new();
    let mut sorted_roles: Vec<(usize, Role)> = order
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let role = if rank < pool_n {
                Role::Pool
            } else if rank < pool_n + forged_bases {
                Role::TestBase
            } else {
                Role::TestPristine
            };
            (i, role)
        })
        .collect();
    sorted_roles.sort_by_key(|(i, _)| *i);
    for &(i, role) in &sorted_roles {
        entries.push(ManifestEntry::base_image(ids[i].clone(), role));
    }
    let mut kind_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "dataset", "objects"));
    for &(i, role) in &sorted_roles {
        if role != Role::TestBase {
            continue;
        }
        for class in SizeClass::ALL {
            let id = format!("{}_{}", ids[i], class);
            entries.push(ManifestEntry {
                id: id.clone(),
                role: Role::TestForged,
                base: Some(ids[i].clone()),
                size_class: Some(class),
                object: Some(ObjectKind::ALL[kind_rng.gen_range(0..ObjectKind::ALL.len())]),
                position: None,
                side: None,
                seed: Some(derive_seed(seed, "dataset", &format!("splice/{id}"))),
            });
        }
    }
    let pool_patches = pool_n * per_image;
    let val_patches = (VAL_FRACTION * pool_patches as f64).round() as usize;
    Ok(SplitManifest {
        seed,
        height,
        width,
        patch_size,
        stride,
        train_patches: pool_patches - val_patches,
        val_patches,
        entries,
    })
}

impl SplitManifest {
    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }

    pub fn forged(&self, class: SizeClass) -> impl Iterator<Item = &ManifestEntry> {
        self.with_role(Role::TestForged)
            .filter(move |e| e.size_class == Some(class))
    }

    /// Pool patches shuffled with the manifest seed; the first `val_patches`
    /// form the validation set. Each list is returned in pool order.
    pub fn patch_split(&self) -> Result<(Vec<PatchRef>, Vec<PatchRef>)> {
        let per_image = grid_positions(self.height, self.width, self.patch_size, self.stride)?
            .2
            .len();
        let mut all: Vec<PatchRef> = self
            .with_role(Role::Pool)
            .flat_map(|e| {
                (0..per_image).map(move |index| PatchRef {
                    image: e.id.clone(),
                    index,
                })
            })
            .collect();
        if all.len() != self.train_patches + self.val_patches {
            return Err(Error::InvalidArgument(
                "manifest patch counts do not match the pool".into(),
            ));
        }
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            self.seed,
            "dataset",
            "patch_split",
        )));
        let mut is_val = vec![false; all.len()];
        for &i in &order[..self.val_patches] {
            is_val[i] = true;
        }
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for (p, v) in all.drain(..).zip(is_val) {
            if v {
                val.push(p);
            } else {
                train.push(p);
            }
        }
        Ok((train, val))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# satforge-manifest version={MANIFEST_VERSION} seed={} height={} width={} patch_size={} stride={} train_patches={} val_patches={}\n",
            self.seed, self.height, self.width, self.patch_size, self.stride, self.train_patches, self.val_patches
        );
        s.push_str("id\trole\tbase\tsize_class\tobject\ty\tx\tside\tseed\n");
        let opt = |o: Option<String>| o.unwrap_or_else(|| "-".into());
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.id,
                e.role.as_str(),
                opt(e.base.clone()),
                opt(e.size_class.map(|c| c.to_string())),
                opt(e.object.map(|o| o.as_str().to_string())),
                opt(e.position.map(|p| p.0.to_string())),
                opt(e.position.map(|p| p.1.to_string())),
                opt(e.side.map(|v| v.to_string())),
                opt(e.seed.map(|v| v.to_string())),
            ));
        }
        s
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let bad = |r: String| Error::format(origin, r);
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty manifest".into()))?;
        let fields: std::collections::HashMap<&str, &str> = header
            .strip_prefix("# satforge-manifest ")
            .ok_or_else(|| bad("missing manifest header".into()))?
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let num = |k: &str| -> Result<u64> {
            fields
                .get(k)
                .ok_or_else(|| bad(format!("header lacks {k}")))?
                .parse()
                .map_err(|_| bad(format!("bad {k}")))
        };
        if num("version")? != u64::from(MANIFEST_VERSION) {
            return Err(bad("unsupported manifest version".into()));
        }
        lines.next();
        let mut entries = Vec::new();
        for (ln, line) in lines.enumerate() {
            let c: Vec<&str> = line.split('\t').collect();
            if c.len() != 9 {
                return Err(bad(format!("record {} has {} fields", ln + 1, c.len())));
            }
            let opt = |s: &str| (s != "-").then(|| s.to_string());
            let num_opt = |s: &str| -> Result<Option<u64>> {
                opt(s)
                    .map(|v| v.parse().map_err(|_| bad(format!("bad number {v:?}"))))
                    .transpose()
            };
            let y = num_opt(c[5])?;
            let x = num_opt(c[6])?;
            entries.push(ManifestEntry {
                id: c[0].to_string(),
                role: c[1].parse().map_err(|e: Error| bad(e.to_string()))?,
                base: opt(c[2]),
                size_class: opt(c[3])
                    .map(|s| s.parse())
                    .transpose()
                    .map_err(|e: Error| bad(e.to_string()))?,
                object: opt(c[4])
                    .map(|s| s.parse())
                    .transpose()
                    .map_err(|e: Error| bad(e.to_string()))?,
                position: y.zip(x).map(|(y, x)| (y as usize, x as usize)),
                side: num_opt(c[7])?.map(|v| v as usize),
                seed: num_opt(c[8])?,
            });
        }
        Ok(SplitManifest {
            seed: num("seed")?,
            height: num("height")? as usize,
            width: num("width")? as usize,
            patch_size: num("patch_size")? as usize,
            stride: num("stride")? as usize,
            train_patches: num("train_patches")? as usize,
            val_patches: num("val_patches")? as usize,
            entries,
        })
    }
}

// ---------------------------------------------------------------------------
// On-disk dataset

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub images: usize,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub stride: usize,
    pub seed: u64,
    pub rotate: bool,
    pub feather: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            images: PAPER_IMAGES,
            height: 650,
            width: 650,
            patch_size: 64,
            stride: 32,
            seed: 0,
            rotate: false,
            feather: 0,
        }
    }
}

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("images").join(format!("{id}.png"))
}

pub fn mask_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("masks").join(format!("{id}.png"))
}

/// Generate base images, splits and forgeries under `dir`:
/// `images/<id>.png`, `masks/<id>.png` for forged images, `manifest.tsv`.
pub fn generate_dataset(dir: &Path, cfg: &DatasetConfig) -> Result<SplitManifest> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let ids: Vec<String> = (0..cfg.images).map(base_id).collect();
    let mut manifest = build_splits(
        &ids,
        cfg.height,
        cfg.width,
        cfg.patch_size,
        cfg.stride,
        cfg.seed,
    )?;
    let bases = generate_base_images(cfg.images, cfg.height, cfg.width, cfg.seed);
    bases
        .par_iter()
        .zip(&ids)
        .try_for_each(|(img, id)| save_image(img, &image_path(dir, id)))?;
    let forged: Vec<(usize, SpliceRecord)> = manifest
        .entries
        .par_iter()
        .enumerate()
        .filter(|(_, e)| e.role == Role::TestForged)
        .map(|(k, e)| {
            let base_id = e.base.as_deref().expect("forged entries name a base");
            let bi = ids
                .iter()
                .position(|i| i == base_id)
                .expect("base in id list");
            let seed = e.seed.expect("forged entries carry a seed");
            let mut spec = ForgerySpec::new(
                e.size_class.expect("class"),
                e.object.expect("object"),
                seed,
            );
            spec.feather = cfg.feather;
            if cfg.rotate {
                spec.rotation =
                    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed).gen_range(0.0..std::f32::consts::TAU);
            }
            let (img, mask, rec) = splice(&bases[bi], base_id, &spec)?;
            save_image(&img, &image_path(dir, &e.id))?;
            save_mask(&mask, &mask_path(dir, &e.id))?;
            Ok((k, rec))
        })
        .collect::<Result<_>>()?;
    for (k, rec) in forged {
        manifest.entries[k].position = Some(rec.position);
        manifest.entries[k].side = Some(rec.side);
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    log::info!(
        "dataset dir={} images={} forged={} train_patches={} val_patches={}",
        dir.display(),
        cfg.images,
        manifest.with_role(Role::TestForged).count(),
        manifest.train_patches,
        manifest.val_patches
    );
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<SplitManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    SplitManifest::parse(&text, &path)
}

/// Train and validation patch tensors, normalized to [-1, 1].
pub fn load_patch_sets(
    dir: &Path,
    manifest: &SplitManifest,
) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
    let (train, val) = manifest.patch_split()?;
    let pool: Vec<&ManifestEntry> = manifest.with_role(Role::Pool).collect();
    let grids = pool
        .par_iter()
        .map(|e| {
            extract_patches(
                &load_image(&image_path(dir, &e.id))?,
                manifest.patch_size,
                manifest.stride,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let gather = |refs: &[PatchRef]| -> Result<Tensor4<f32>> {
        let s = manifest.patch_size;
        let per = s * s * 3;
        let mut data = Vec::with_capacity(refs.len() * per);
        for r in refs {
            let g = pool
                .iter()
                .position(|e| e.id == r.image)
                .expect("pool image");
            data.extend_from_slice(grids[g].patches.sample(r.index));
        }
        Tensor4::from_vec(Dims4::new(refs.len(), s, s, 3), data)
    };
    Ok((gather(&train)?, gather(&val)?))
}

/// An evaluation image and its ground truth.
#[derive(Debug, Clone)]
pub struct TestItem {
    pub id: String,
    pub size_class: Option<SizeClass>,
    pub image: SatImage,
    pub mask: BinaryMask,
}

/// Pristine test images (all-pristine masks) followed by forged ones.
pub fn load_test_items(dir: &Path, manifest: &SplitManifest) -> Result<Vec<TestItem>> {
    manifest
        .entries
        .par_iter()
        .filter(|e| matches!(e.role, Role::TestPristine | Role::TestForged))
        .map(|e| {
            let image = load_image(&image_path(dir, &e.id))?;
            let mask = match e.role {
                Role::TestForged => load_mask(&mask_path(dir, &e.id))?,
                _ => BinaryMask::pristine(image.height, image.width),
            };
            if (mask.height, mask.width) != (image.height, image.width) {
                return Err(Error::shape(
                    "mask dims",
                    format!("{}x{}", image.height, image.width),
                    format!("{}x{}", mask.height, mask.width),
                ));
            }
            Ok(TestItem {
                id: e.id.clone(),
                size_class: e.size_class,
                image,
                mask,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(base_id).collect()
    }

    #[test]
    fn paper_scale_split_arithmetic() {
        let m = build_splits(&ids(130), 650, 650, 64, 32, 7).unwrap();
        assert_eq!(m.with_role(Role::Pool).count(), 30);
        assert_eq!((m.train_patches, m.val_patches), (8664, 2166));
        assert_eq!(m.with_role(Role::TestBase).count(), 50);
        assert_eq!(m.with_role(Role::TestPristine).count(), 50);
        assert_eq!(m.with_role(Role::TestForged).count(), 150);
        for c in SizeClass::ALL {
            assert_eq!(m.forged(c).count(), 50);
        }
    }

    #[test]
    fn desk_scale_split_arithmetic() {
        let m = build_splits(&ids(13), 650, 650, 64, 32, 7).unwrap();
        assert_eq!(m.with_role(Role::Pool).count(), 3);
        assert_eq!((m.train_patches, m.val_patches), (866, 217));
        assert_eq!(m.with_role(Role::TestForged).count(), 15);
        assert_eq!(m.with_role(Role::TestPristine).count(), 5);
        assert!(build_splits(&ids(2), 650, 650, 64, 32, 7).is_err());
    }

    #[test]
    fn roles_are_disjoint_and_patch_split_covers_pool() {
        let m = build_splits(&ids(20), 160, 160, 64, 32, 3).unwrap();
        let mut seen = std::collections::HashSet::new();
        for e in m.entries.iter().filter(|e| e.role != Role::TestForged) {
            assert!(seen.insert(e.id.clone()));
        }
        for e in m.with_role(Role::TestForged) {
            let base = e.base.as_ref().unwrap();
            let role = m.entries.iter().find(|b| &b.id == base).unwrap().role;
            assert_eq!(role, Role::TestBase);
        }
        let (train, val) = m.patch_split().unwrap();
        assert_eq!(val.len(), m.val_patches);
        let mut all: Vec<(String, usize)> = train
            .iter()
            .chain(&val)
            .map(|p| (p.image.clone(), p.index))
            .collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
        assert_eq!(n, m.with_role(Role::Pool).count() * 16);
    }

    #[test]
    fn manifest_text_round_trip() {
        let mut m = build_splits(&ids(13), 650, 650, 64, 32, 11).unwrap();
        m.entries.last_mut().unwrap().position = Some((5, 9));
        m.entries.last_mut().unwrap().side = Some(120);
        let text = m.to_text();
        assert_eq!(SplitManifest::parse(&text, Path::new("m")).unwrap(), m);
        assert_eq!(
            build_splits(&ids(13), 650, 650, 64, 32, 11)
                .unwrap()
                .to_text(),
            build_splits(&ids(13), 650, 650, 64, 32, 11)
                .unwrap()
                .to_text()
        );
        assert!(SplitManifest::parse("garbage", Path::new("m")).is_err());
    }

    #[test]
    fn base_images_deterministic_and_textured() {
        let a = generate_base_image(96, 80, 5);
        assert_eq!(a, generate_base_image(96, 80, 5));
        assert_ne!(a, generate_base_image(96, 80, 6));
        for c in 0..3 {
            let v: Vec<f64> = a
                .pixels
                .iter()
                .skip(c)
                .step_by(3)
                .map(|&p| f64::from(p))
                .collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
            assert!(var > 1.0, "channel {c} variance {var}");
        }
    }

    #[test]
    fn size_classes_respect_patch_size() {
        assert!(SizeClass::Small.side_range().1 < 64);
        assert!(SizeClass::Large.side_range().0 > 64);
        let (lo, hi) = SizeClass::Medium.side_range();
        assert!(lo <= 64 && 64 <= hi);
    }

    #[test]
    fn splice_mask_matches_composite() {
        let base = generate_base_image(200, 200, 1);
        for (i, class) in SizeClass::ALL.into_iter().enumerate() {
            for kind in ObjectKind::ALL {
                let spec = ForgerySpec::new(class, kind, 100 + i as u64);
                let (forged, mask, rec) = splice(&base, "b", &spec).unwrap();
                let (lo, hi) = class.side_range();
                assert!((lo..=hi).contains(&rec.side));
                assert_eq!(rec.forged_pixels, mask.forged_count());
                let obj = make_object(kind, rec.side, 0.0, 0, 0).unwrap();
                assert!(obj.pixel_count() > 0);
                for y in 0..200 {
                    for x in 0..200 {
                        if mask.get(y, x) == 1 {
                            assert_eq!(forged.get(y, x), base.get(y, x));
                        }
                    }
                }
                // Forged pixels sit inside the bounding box.
                for (k, &l) in mask.labels.iter().enumerate() {
                    if l == 0 {
                        let (y, x) = (k / 200, k % 200);
                        assert!(y >= rec.position.0 && y < rec.position.0 + rec.side);
                        assert!(x >= rec.position.1 && x < rec.position.1 + rec.side);
                    }
                }
            }
        }
    }

    #[test]
    fn splice_pixel_count_equals_object_area() {
        let base = generate_base_image(100, 100, 2);
        let mut spec = ForgerySpec::new(SizeClass::Small, ObjectKind::Ellipse, 3);
        spec.side = Some(30);
        spec.position = Some((10, 20));
        let (_, mask, _) = splice(&base, "b", &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obj = make_object(ObjectKind::Ellipse, 30, 0.0, 0, rng.gen()).unwrap();
        assert_eq!(mask.forged_count(), obj.pixel_count());
    }

    #[test]
    fn splice_errors() {
        let base = generate_base_image(64, 64, 2);
        let mut spec = ForgerySpec::new(SizeClass::Small, ObjectKind::Cloud, 1);
        spec.side = Some(0);
        assert!(splice(&base, "b", &spec).is_err());
        spec.side = Some(100);
        assert!(splice(&base, "b", &spec).is_err());
        spec.side = Some(32);
        spec.position = Some((40, 0));
        assert!(splice(&base, "b", &spec).is_err());
    }

    #[test]
    fn rotation_and_feather_options() {
        let a = make_object(ObjectKind::Airplane, 48, 0.0, 0, 9).unwrap();
        let b = make_object(ObjectKind::Airplane, 48, 0.7, 0, 9).unwrap();
        assert_ne!(a.alpha, b.alpha);
        let f = make_object(ObjectKind::Ellipse, 48, 0.0, 3, 9).unwrap();
        assert!(f.alpha.iter().any(|&v| v > 0.0 && v < 1.0));
        assert_eq!(
            f.pixel_count(),
            make_object(ObjectKind::Ellipse, 48, 0.0, 0, 9)
                .unwrap()
                .pixel_count()
        );
    }

    #[test]
    fn dataset_on_disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            images: 6,
            height: 160,
            width: 160,
            seed: 4,
            ..Default::default()
        };
        let m = generate_dataset(dir.path(), &cfg).unwrap();
        assert_eq!(load_manifest(dir.path()).unwrap(), m);
        assert!(m.with_role(Role::TestForged).all(|e| e.position.is_some()));
        let (train, val) = load_patch_sets(dir.path(), &m).unwrap();
        assert_eq!(
            (train.dims().n, val.dims().n),
            (m.train_patches, m.val_patches)
        );
        let items = load_test_items(dir.path(), &m).unwrap();
        assert_eq!(
            items.len(),
            m.with_role(Role::TestPristine).count() + m.with_role(Role::TestForged).count()
        );
        assert!(items
            .iter()
            .filter(|i| i.size_class.is_some())
            .all(|i| i.mask.forged_count() > 0));
        let again = tempfile::tempdir().unwrap();
        generate_dataset(again.path(), &cfg).unwrap();
        assert_eq!(
            fs::read(dir.path().join(MANIFEST_FILE)).unwrap(),
            fs::read(again.path().join(MANIFEST_FILE)).unwrap()
        );
        let id = &m.with_role(Role::TestForged).next().unwrap().id;
        assert_eq!(
            fs::read(image_path(dir.path(), id)).unwrap(),
            fs::read(image_path(again.path(), id)).unwrap()
        );
    }
}
