//! Ellipse phantoms: the Shepp-Logan head, randomized head-like phantoms
//! and small high-contrast anomalies that can be moved cyclically along
//! the phase-encoding axis.
//!
//! Coordinates are normalized to `[-1, 1)` on both axes. Pixel `i` of an
//! `n`-pixel axis sits at `2 i / n - 1`, so the pixel `(n/2, n/2)` is the
//! exact origin and a shift of `2 j / n` moves content by `j` whole rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{check_size, Image};

/// Largest allowed anomaly semi-axis, in normalized units.
pub const MAX_ANOMALY_SEMI_AXIS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    /// (row, col), normalized.
    pub center: (f64, f64),
    /// (vertical, horizontal) semi-axes before rotation, normalized.
    pub semi_axes: (f64, f64),
    /// Rotation in radians, positive from the column axis towards the row axis.
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    pub fn new(center: (f64, f64), semi_axes: (f64, f64), angle: f64, intensity: f64) -> Self {
        Ellipse {
            center,
            semi_axes,
            angle,
            intensity,
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.semi_axes;
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Parameter(format!(
                "ellipse semi-axes must be positive, got ({a}, {b})"
            )));
        }
        Ok(())
    }

    fn contains_offset(&self, d_row: f64, d_col: f64) -> bool {
        let (sin, cos) = self.angle.sin_cos();
        let along = d_col * cos + d_row * sin;
        let across = -d_col * sin + d_row * cos;
        let (vert, horiz) = self.semi_axes;
        (along / horiz).powi(2) + (across / vert).powi(2) <= 1.0
    }

    /// Point membership without wrap.
    pub fn contains(&self, row: f64, col: f64) -> bool {
        self.contains_offset(row - self.center.0, col - self.center.1)
    }

    /// Point membership with the row offset wrapped onto `[-1, 1)`.
    pub fn contains_cyclic(&self, row: f64, col: f64) -> bool {
        self.contains_offset(wrap_unit(row - self.center.0), col - self.center.1)
    }

    fn boundary_point(&self, t: f64) -> (f64, f64) {
        let (sin, cos) = self.angle.sin_cos();
        let (vert, horiz) = self.semi_axes;
        let along = horiz * t.cos();
        let across = vert * t.sin();
        let d_col = along * cos - across * sin;
        let d_row = along * sin + across * cos;
        (self.center.0 + d_row, self.center.1 + d_col)
    }
}

/// Wraps a normalized coordinate onto `[-1, 1)`.
fn wrap_unit(v: f64) -> f64 {
    (v + 1.0).rem_euclid(2.0) - 1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub base: Vec<Ellipse>,
    pub anomalies: Vec<Ellipse>,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(base: Vec<Ellipse>, anomalies: Vec<Ellipse>, seed: u64) -> Result<Self> {
        let spec = PhantomSpec {
            base,
            anomalies,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for e in self.base.iter().chain(&self.anomalies) {
            e.validate()?;
        }
        for a in &self.anomalies {
            let (v, h) = a.semi_axes;
            if v > MAX_ANOMALY_SEMI_AXIS || h > MAX_ANOMALY_SEMI_AXIS {
                return Err(Error::Parameter(format!(
                    "anomaly semi-axes ({v}, {h}) exceed {MAX_ANOMALY_SEMI_AXIS}"
                )));
            }
        }
        Ok(())
    }
}

/// Standard 10-ellipse Shepp-Logan parameters with the higher-contrast
/// intensities, as `(intensity, x semi-axis, y semi-axis, x0, y0, phi°)`
/// in the usual y-up frame.
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// The Shepp-Logan ellipses in image coordinates (row axis pointing down).
pub fn shepp_logan_ellipses() -> Vec<Ellipse> {
    SHEPP_LOGAN
        .iter()
        .map(|&(intensity, a, b, x0, y0, phi)| {
            Ellipse::new((-y0, x0), (b, a), -phi.to_radians(), intensity)
        })
        .collect()
}

/// Shepp-Logan head with no anomalies.
pub fn shepp_logan_spec() -> PhantomSpec {
    PhantomSpec {
        base: shepp_logan_ellipses(),
        anomalies: Vec::new(),
        seed: 0,
    }
}

/// Three small bright anomalies in the lower half of the Shepp-Logan head.
/// Their images under half- and quarter-height cyclic shifts land either in
/// uniform tissue or in the background, never on the skull.
pub fn shepp_logan_anomalies() -> Vec<Ellipse> {
    vec![
        Ellipse::new((0.446, -0.384), (0.04, 0.04), 0.0, 0.45),
        Ellipse::new((0.493, 0.253), (0.035, 0.04), 0.0, 0.4),
        Ellipse::new((0.539, -0.079), (0.03, 0.03), 0.0, 0.5),
    ]
}

/// Shepp-Logan head carrying [`shepp_logan_anomalies`].
pub fn shepp_logan_with_anomalies() -> PhantomSpec {
    PhantomSpec {
        anomalies: shepp_logan_anomalies(),
        ..shepp_logan_spec()
    }
}

/// Rasterized standard Shepp-Logan phantom.
pub fn generate_shepp_logan(n: usize) -> Result<Image> {
    render_phantom(&shepp_logan_spec(), n)
}

/// Normalized coordinate of pixel `i` along an `n`-pixel axis.
pub fn pixel_coordinate(i: usize, n: usize) -> f64 {
    2.0 * i as f64 / n as f64 - 1.0
}

/// Rasterizes a phantom: a pixel takes an ellipse's intensity when its
/// center lies inside it. Base ellipses do not wrap; anomalies wrap
/// cyclically along rows. The sum is clamped to `[0, 1]`.
pub fn render_phantom(spec: &PhantomSpec, n: usize) -> Result<Image> {
    check_size(n)?;
    spec.validate()?;
    Ok(Image::from_fn(n, |r, c| {
        let row = pixel_coordinate(r, n);
        let col = pixel_coordinate(c, n);
        let mut value = 0.0;
        for e in &spec.base {
            if e.contains(row, col) {
                value += e.intensity;
            }
        }
        for a in &spec.anomalies {
            if a.contains_cyclic(row, col) {
                value += a.intensity;
            }
        }
        value.clamp(0.0, 1.0)
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedPhantom {
    pub spec: PhantomSpec,
    /// Set when a moved anomaly straddles the edge of a base ellipse.
    pub boundary_overlap: bool,
}

/// Moves every anomaly down by `fraction` of the image height, wrapping
/// cyclically. Base ellipses are untouched.
pub fn shift_anomalies(spec: &PhantomSpec, fraction: f64) -> ShiftedPhantom {
    let mut shifted = spec.clone();
    for a in &mut shifted.anomalies {
        a.center.0 = wrap_unit(a.center.0 + 2.0 * fraction);
    }
    let boundary_overlap = shifted
        .anomalies
        .iter()
        .any(|a| straddles_base(a, &shifted.base));
    ShiftedPhantom {
        spec: shifted,
        boundary_overlap,
    }
}

fn straddles_base(anomaly: &Ellipse, base: &[Ellipse]) -> bool {
    const SAMPLES: usize = 48;
    let points: Vec<(f64, f64)> = std::iter::once(anomaly.center)
        .chain((0..SAMPLES).map(|k| {
            let (r, c) = anomaly
                .boundary_point(2.0 * std::f64::consts::PI * k as f64 / SAMPLES as f64);
            (wrap_unit(r), c)
        }))
        .collect();
    base.iter().any(|e| {
        let first = e.contains(points[0].0, points[0].1);
        points[1..].iter().any(|&(r, c)| e.contains(r, c) != first)
    })
}

/// Random head-like phantom: an outer bright rim, a darker tissue interior,
/// a handful of internal structures and up to three small anomalies.
pub fn random_phantom_spec(seed: u64) -> PhantomSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let v_outer = rng.gen_range(0.72..0.92);
    let h_outer = rng.gen_range(0.58..0.80);
    let center = (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
    let angle = rng.gen_range(-0.2..0.2);
    let rim = rng.gen_range(0.75..1.0);
    let tissue = rng.gen_range(0.15..0.40);
    let thickness = rng.gen_range(0.04..0.08);

    let mut base = vec![
        Ellipse::new(center, (v_outer, h_outer), angle, rim),
        Ellipse::new(
            center,
            (v_outer - thickness, h_outer - thickness),
            angle,
            tissue - rim,
        ),
    ];

    let inner_v = v_outer - thickness;
    let inner_h = h_outer - thickness;
    let structures = rng.gen_range(2..=6);
    for _ in 0..structures {
        let t = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = rng.gen_range(0.0..0.6);
        let pos = (
            center.0 + r * inner_v * t.sin(),
            center.1 + r * inner_h * t.cos(),
        );
        let axes = (rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.25));
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        base.push(Ellipse::new(
            pos,
            axes,
            rng.gen_range(-1.5..1.5),
            sign * rng.gen_range(0.05..0.25),
        ));
    }

    let count = rng.gen_range(0..=3);
    let mut anomalies = Vec::with_capacity(count);
    for _ in 0..count {
        let t = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = rng.gen_range(0.0..0.75);
        anomalies.push(Ellipse::new(
            (
                center.0 + r * inner_v * t.sin(),
                center.1 + r * inner_h * t.cos(),
            ),
            (rng.gen_range(0.025..0.07), rng.gen_range(0.025..0.07)),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(0.3..0.5),
        ));
    }

    PhantomSpec {
        base,
        anomalies,
        seed,
    }
}

/// Specs for a reproducible corpus; the `i`-th spec seed is drawn from a
/// stream seeded by `seed`.
pub fn generate_dataset_specs(count: usize, seed: u64) -> Vec<PhantomSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| random_phantom_spec(rng.gen()))
        .collect()
}

pub fn generate_dataset(count: usize, n: usize, seed: u64) -> Result<Vec<Image>> {
    check_size(n)?;
    generate_dataset_specs(count, seed)
        .iter()
        .map(|s| render_phantom(s, n))
        .collect()
}
