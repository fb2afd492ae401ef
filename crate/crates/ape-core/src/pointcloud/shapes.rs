//! Synthetic surface-sampled shapes for training and evaluation.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

/// Flange geometry: a flat annulus with circular hole regions excluded.
const FLANGE_INNER_R: f64 = 0.3;
const FLANGE_OUTER_R: f64 = 1.0;
const FLANGE_HOLE_R: f64 = 0.12;
const FLANGE_HOLE_RING_R: f64 = 0.65;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Sphere,
    Box,
    Cylinder,
    Flange4,
    Flange8,
}

impl ShapeClass {
    pub fn all() -> [ShapeClass; 5] {
        [
            ShapeClass::Sphere,
            ShapeClass::Box,
            ShapeClass::Cylinder,
            ShapeClass::Flange4,
            ShapeClass::Flange8,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Box => "box",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Flange4 => "flange4",
            ShapeClass::Flange8 => "flange8",
        }
    }

    fn hole_count(self) -> Option<usize> {
        match self {
            ShapeClass::Flange4 => Some(4),
            ShapeClass::Flange8 => Some(8),
            _ => None,
        }
    }

    /// Nominal hole centers in generation coordinates, before the final
    /// unit-sphere normalization. Empty for non-flange classes.
    pub fn hole_centers(self) -> Vec<[f64; 3]> {
        let Some(k) = self.hole_count() else {
            return Vec::new();
        };
        (0..k)
            .map(|i| {
                let angle = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
                [
                    FLANGE_HOLE_RING_R * angle.cos(),
                    FLANGE_HOLE_RING_R * angle.sin(),
                    0.0,
                ]
            })
            .collect()
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeClass::all()
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = ShapeClass::all().iter().map(|c| c.name()).collect();
                Error::Config(format!(
                    "unknown shape class {s:?}, expected one of {}",
                    known.join(", ")
                ))
            })
    }
}

/// Samples `n` points uniformly on the class surface and normalizes the
/// result to the unit sphere. Deterministic for a given `(class, n, seed)`.
///
/// Points are drawn in antithetic pairs (`p`, `-p`); every class surface is
/// symmetric under point reflection, so marginal uniformity is preserved
/// while the sample centroid cancels exactly for even `n`. That keeps the
/// unit-sphere normalization from disturbing exact surface properties such
/// as the shared sphere radius.
pub fn make_shape(class: ShapeClass, n: usize, seed: u64) -> Result<PointCloud> {
    if n < 32 {
        return Err(Error::Precondition(format!(
            "shape sampling needs n >= 32, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    while points.len() + 1 < n {
        let p = sample_surface(class, &mut rng);
        points.push(p);
        points.push([-p[0], -p[1], -p[2]]);
    }
    if points.len() < n {
        points.push(sample_surface(class, &mut rng));
    }
    PointCloud::new(points, None)?.normalize_unit_sphere()
}

fn sample_surface(class: ShapeClass, rng: &mut ChaCha8Rng) -> [f64; 3] {
    match class {
        ShapeClass::Sphere => sample_sphere(rng),
        ShapeClass::Box => sample_box(rng),
        ShapeClass::Cylinder => sample_cylinder(rng),
        ShapeClass::Flange4 => sample_flange(rng, 4),
        ShapeClass::Flange8 => sample_flange(rng, 8),
    }
}

/// Uniform direction via normalized Gaussian triple.
fn sample_sphere(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [gaussian(rng), gaussian(rng), gaussian(rng)];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-6 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

/// Box-Muller without the cached second variate, so draws stay sequential.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Uniform over the surface of the cube [-1,1]^3: all six faces share the
/// same area, so pick a face uniformly, then a point in it.
fn sample_box(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let face = rng.gen_range(0..6u8);
    let a: f64 = rng.gen_range(-1.0..1.0);
    let b: f64 = rng.gen_range(-1.0..1.0);
    let s = if face % 2 == 0 { 1.0 } else { -1.0 };
    match face / 2 {
        0 => [s, a, b],
        1 => [a, s, b],
        _ => [a, b, s],
    }
}

/// Radius-1 cylinder with z in [-1,1]: lateral area 4*pi, each cap pi.
fn sample_cylinder(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let theta: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    let pick: f64 = rng.gen_range(0.0..6.0);
    if pick < 4.0 {
        [theta.cos(), theta.sin(), rng.gen_range(-1.0..1.0)]
    } else {
        // Uniform over a disc: radius is sqrt-distributed.
        let r = rng.gen_range(0.0f64..1.0).sqrt();
        let z = if pick < 5.0 { 1.0 } else { -1.0 };
        [r * theta.cos(), r * theta.sin(), z]
    }
}

/// Flat annulus in the z=0 plane with `k` holes, sampled by rejection.
/// Hole centers sit at equal angular spacing; with even `k` the hole
/// pattern is symmetric under point reflection, which the antithetic
/// pairing in [`make_shape`] relies on.
fn sample_flange(rng: &mut ChaCha8Rng, k: usize) -> [f64; 3] {
    debug_assert!(k % 2 == 0);
    let hole_r2 = FLANGE_HOLE_R * FLANGE_HOLE_R;
    let (lo2, hi2) = (FLANGE_INNER_R * FLANGE_INNER_R, FLANGE_OUTER_R * FLANGE_OUTER_R);
    loop {
        // Uniform over the annulus: r^2 uniform in [inner^2, outer^2].
        let r = rng.gen_range(lo2..hi2).sqrt();
        let theta: f64 = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let (x, y) = (r * theta.cos(), r * theta.sin());
        let in_hole = (0..k).any(|i| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
            let (cx, cy) = (
                FLANGE_HOLE_RING_R * angle.cos(),
                FLANGE_HOLE_RING_R * angle.sin(),
            );
            (x - cx) * (x - cx) + (y - cy) * (y - cy) < hole_r2
        });
        if !in_hole {
            return [x, y, 0.0];
        }
    }
}
