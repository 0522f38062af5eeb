//! Seeded synthetic instances with ground truth: curve samples, edge images,
//! tube volumes and the gap instance.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::energy::{Problem, ProblemSpec, SiteSet};
use crate::error::{Error, Result};
use crate::geometry::TangentLine;
use crate::graph::build_grid_2d;
use crate::pipelines::VesselField;
use crate::raster::Image;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::Config(format!("noise level {sigma}: {e}")))
}

/// Noisy samples of a curve with the unit tangent of the underlying curve at
/// each noiseless sample.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveSamples<const D: usize> {
    pub points: Vec<[f64; D]>,
    pub clean: Vec<[f64; D]>,
    pub tangents: Vec<[f64; D]>,
}

fn perturb<const D: usize>(clean: &[[f64; D]], noise: f64, seed: u64) -> Result<Vec<[f64; D]>> {
    let mut r = rng(seed);
    let n = gaussian(noise)?;
    Ok(clean.iter().map(|p| p.map(|c| c + n.sample(&mut r))).collect())
}

/// `samples` points evenly spaced on a circle of `radius` about the origin.
pub fn circle(radius: f64, samples: usize, noise: f64, seed: u64) -> Result<CurveSamples<2>> {
    let ang = |k: usize| TAU * k as f64 / samples as f64;
    let clean: Vec<[f64; 2]> = (0..samples).map(|k| [radius * ang(k).cos(), radius * ang(k).sin()]).collect();
    let tangents = (0..samples).map(|k| [-ang(k).sin(), ang(k).cos()]).collect();
    Ok(CurveSamples { points: perturb(&clean, noise, seed)?, clean, tangents })
}

/// `samples` points on a segment of `length` through the origin along `direction`.
pub fn line(length: f64, samples: usize, direction: [f64; 2], noise: f64, seed: u64) -> Result<CurveSamples<2>> {
    let norm = direction[0].hypot(direction[1]);
    let d = [direction[0] / norm, direction[1] / norm];
    let step = if samples > 1 { length / (samples - 1) as f64 } else { 0.0 };
    let clean: Vec<[f64; 2]> =
        (0..samples).map(|k| k as f64 * step - length / 2.0).map(|t| [t * d[0], t * d[1]]).collect();
    Ok(CurveSamples { points: perturb(&clean, noise, seed)?, clean, tangents: vec![d; samples] })
}

/// Boundary of an axis-aligned square with rounded corners, sampled at equal
/// arc length, counter-clockwise.
pub fn rounded_square(side: f64, corner_radius: f64, samples: usize, noise: f64, seed: u64) -> Result<CurveSamples<2>> {
    if !(corner_radius >= 0.0 && 2.0 * corner_radius <= side) {
        return Err(Error::Config(format!("corner radius {corner_radius} does not fit a square of side {side}")));
    }
    let straight = side - 2.0 * corner_radius;
    let arc = FRAC_PI_2 * corner_radius;
    let perimeter = 4.0 * (straight + arc);
    let h = side / 2.0;
    let mut clean = Vec::with_capacity(samples);
    let mut tangents = Vec::with_capacity(samples);
    for k in 0..samples {
        let s = perimeter * k as f64 / samples as f64;
        let side_idx = (s / (straight + arc)).floor().min(3.0) as usize;
        let t = s - side_idx as f64 * (straight + arc);
        // Side 0 runs up the right edge, then a corner turning left.
        let (p, d) = if t < straight {
            ([h, -h + corner_radius + t], [0.0, 1.0])
        } else {
            let a = (t - straight) / corner_radius.max(f64::MIN_POSITIVE);
            let c = [h - corner_radius, h - corner_radius];
            ([c[0] + corner_radius * a.cos(), c[1] + corner_radius * a.sin()], [-a.sin(), a.cos()])
        };
        let rot = side_idx as f64 * FRAC_PI_2;
        let (cs, sn) = (rot.cos(), rot.sin());
        clean.push([cs * p[0] - sn * p[1], sn * p[0] + cs * p[1]]);
        tangents.push([cs * d[0] - sn * d[1], sn * d[0] + cs * d[1]]);
    }
    Ok(CurveSamples { points: perturb(&clean, noise, seed)?, clean, tangents })
}

/// A filled planar region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Region {
    Disk { center: [f64; 2], radius: f64 },
    /// Simple polygon; vertices in either orientation.
    Polygon { vertices: Vec<[f64; 2]> },
    /// Points with `x >= edge` (a vertical step edge).
    HalfPlane { edge: f64 },
}

impl Region {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            Region::Disk { center, radius } => (p[0] - center[0]).hypot(p[1] - center[1]) <= *radius,
            Region::HalfPlane { edge } => p[0] >= *edge,
            Region::Polygon { vertices } => {
                let mut inside = false;
                let n = vertices.len();
                for k in 0..n {
                    let (a, b) = (vertices[k], vertices[(k + 1) % n]);
                    if (a[1] > p[1]) != (b[1] > p[1]) {
                        let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                        if p[0] < x {
                            inside = !inside;
                        }
                    }
                }
                inside
            }
        }
    }

    /// Exact covered fraction of a pixel in column `x`, where available.
    fn exact_coverage(&self, x: usize) -> Option<f64> {
        match self {
            Region::HalfPlane { edge } => Some((x as f64 + 0.5 - edge).clamp(0.0, 1.0)),
            _ => None,
        }
    }
}

/// Image with its ground-truth boundary pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthImage {
    pub image: Image<f64>,
    /// Pixels whose square `[x - 1/2, x + 1/2] x [y - 1/2, y + 1/2]` the boundary crosses.
    pub truth: Image<bool>,
    pub regions: Vec<Region>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderParams {
    pub background: f64,
    pub foreground: f64,
    /// Standard deviation of additive Gaussian noise, in intensity units.
    pub noise: f64,
    /// Subsamples per pixel side for area coverage.
    pub supersample: usize,
    pub seed: u64,
}

impl Default for RenderParams {
    fn default() -> Self {
        RenderParams { background: 60.0, foreground: 190.0, noise: 0.0, supersample: 16, seed: 0 }
    }
}

/// Renders the union of `regions` by area coverage; pixel centers sit at
/// integer coordinates.
pub fn render(width: usize, height: usize, regions: Vec<Region>, params: &RenderParams) -> Result<SynthImage> {
    let s = params.supersample.max(1);
    let coverage = |x: usize, y: usize| -> f64 {
        if let [r] = regions.as_slice() {
            if let Some(c) = r.exact_coverage(x) {
                return c;
            }
        }
        let mut hits = 0usize;
        for sy in 0..s {
            for sx in 0..s {
                let p = [x as f64 - 0.5 + (sx as f64 + 0.5) / s as f64, y as f64 - 0.5 + (sy as f64 + 0.5) / s as f64];
                if regions.iter().any(|r| r.contains(p)) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (s * s) as f64
    };
    let cov = Image::from_fn(width, height, coverage);
    let truth = cov.map(|&c| c > 0.0 && c < 1.0);
    let mut r = rng(params.seed);
    let noise = gaussian(params.noise.max(0.0))?;
    let image =
        cov.map(|&c| params.background + c * (params.foreground - params.background) + if params.noise > 0.0 { noise.sample(&mut r) } else { 0.0 });
    Ok(SynthImage { image, truth, regions })
}

/// Bright disk centered in a square image.
pub fn disk_image(size: usize, radius: f64, params: &RenderParams) -> Result<SynthImage> {
    let c = (size as f64 - 1.0) / 2.0 + 0.17;
    render(size, size, vec![Region::Disk { center: [c, c + 0.11], radius }], params)
}

/// Vertical step edge at `x = edge` (pixel coordinates).
pub fn step_edge_image(width: usize, height: usize, edge: f64, params: &RenderParams) -> Result<SynthImage> {
    render(width, height, vec![Region::HalfPlane { edge }], params)
}

/// Two collinear bars of `length` px separated by `gap` px.
pub fn gap_image(length: usize, gap: usize, thickness: f64, params: &RenderParams) -> Result<SynthImage> {
    let margin = 8.0;
    let w = (2 * length + gap) as f64 + 2.0 * margin;
    let h = thickness + 2.0 * margin;
    let y0 = margin - 0.3;
    let bar = |x0: f64| Region::Polygon {
        vertices: vec![[x0, y0], [x0 + length as f64, y0], [x0 + length as f64, y0 + thickness], [x0, y0 + thickness]],
    };
    let x0 = margin - 0.3;
    render(
        w.ceil() as usize,
        h.ceil() as usize,
        vec![bar(x0), bar(x0 + (length + gap) as f64)],
        params,
    )
}

/// Regular polygon with `sides` vertices.
pub fn polygon_image(size: usize, sides: usize, radius: f64, rotation: f64, params: &RenderParams) -> Result<SynthImage> {
    let c = (size as f64 - 1.0) / 2.0 + 0.23;
    let vertices = (0..sides)
        .map(|k| {
            let a = rotation + TAU * k as f64 / sides as f64;
            [c + radius * a.cos(), c + radius * a.sin()]
        })
        .collect();
    render(size, size, vec![Region::Polygon { vertices }], params)
}

/// The fixed five-image edge benchmark: disks, polygons and a gap, with
/// noise `noise` and per-image seeds derived from `seed`.
pub fn edge_benchmark(noise: f64, seed: u64) -> Result<Vec<(String, SynthImage)>> {
    let p = |k: u64| RenderParams { noise, seed: seed.wrapping_mul(31).wrapping_add(k), ..Default::default() };
    Ok(vec![
        ("disk".into(), disk_image(64, 20.0, &p(0))?),
        ("two-disks".into(), render(72, 56, vec![
            Region::Disk { center: [20.3, 27.6], radius: 12.5 },
            Region::Disk { center: [50.1, 28.2], radius: 14.0 },
        ], &p(1))?),
        ("triangle".into(), polygon_image(64, 3, 24.0, 0.3, &p(2))?),
        ("pentagon".into(), polygon_image(64, 5, 22.0, 0.1, &p(3))?),
        ("gap".into(), gap_image(24, 6, 10.0, &p(4))?),
    ])
}

/// Shape of a synthetic tube.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TubeShape {
    Straight,
    Helix,
    YJunction,
}

impl std::str::FromStr for TubeShape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(TubeShape::Straight),
            "helix" => Ok(TubeShape::Helix),
            "y-junction" | "y" => Ok(TubeShape::YJunction),
            _ => Err(Error::Config(format!("unknown tube shape '{s}'"))),
        }
    }
}

/// Analytic vesselness volume with the true direction at every voxel.
#[derive(Clone, Debug)]
pub struct SynthVolume {
    pub field: VesselField<f64>,
    /// Unit tangent of the nearest center-line point.
    pub truth: Vec<[f64; 3]>,
    /// Distance to the nearest center-line point.
    pub distance: Vec<f64>,
    /// Dense center-line samples.
    pub centerline: Vec<[f64; 3]>,
}

/// Dense samples and unit tangents of the tube center-line(s) in a cube of
/// side `size`.
fn centerline(shape: TubeShape, size: usize) -> Vec<([f64; 3], [f64; 3])> {
    let n = size as f64;
    let c = (n - 1.0) / 2.0;
    let step = 0.1;
    let mut out = Vec::new();
    let mut segment = |a: [f64; 3], b: [f64; 3]| {
        let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let u = d.map(|v| v / len);
        let m = (len / step).ceil() as usize;
        for k in 0..=m {
            let t = len * k as f64 / m as f64;
            out.push(([a[0] + t * u[0], a[1] + t * u[1], a[2] + t * u[2]], u));
        }
    };
    match shape {
        TubeShape::Straight => segment([2.0, c + 0.2, c - 0.1], [n - 3.0, c + 0.2, c - 0.1]),
        TubeShape::YJunction => {
            let j = [c, c, c];
            segment([2.0, c, c], j);
            segment(j, [n - 3.0, c + 0.35 * n, c + 0.1 * n]);
            segment(j, [n - 3.0, c - 0.35 * n, c - 0.1 * n]);
        }
        TubeShape::Helix => {
            let r = 0.25 * n;
            let (z0, z1) = (0.1 * n, 0.9 * n);
            let turns = 2.5;
            let pitch = (z1 - z0) / turns;
            let speed = (TAU * r).hypot(pitch);
            let m = ((z1 - z0) / pitch * speed / step).ceil() as usize;
            for k in 0..=m {
                let t = turns * k as f64 / m as f64;
                let a = TAU * t;
                let p = [c + r * a.cos(), c + r * a.sin(), z0 + pitch * t];
                let d = [-TAU * r * a.sin() / speed, TAU * r * a.cos() / speed, pitch / speed];
                out.push((p, d));
            }
        }
    }
    out
}

/// Tube volume of side `size` with vesselness `exp(-d^2 / 2)` at distance
/// `d` from the center-line (zero beyond `cutoff`), the center-line tangent as
/// direction and `radius` as scale.
pub fn tube3d(shape: TubeShape, size: usize, radius: f64, cutoff: f64) -> Result<SynthVolume> {
    if size < 4 {
        return Err(Error::Config(format!("volume side must be at least 4, got {size}")));
    }
    let curve = centerline(shape, size);
    let dims = [size; 3];
    let len = size * size * size;
    let mut distance = vec![f64::INFINITY; len];
    let mut truth = vec![[0.0; 3]; len];
    let reach = cutoff.ceil() as i64;
    for (p, d) in &curve {
        let base = p.map(|v| v.round() as i64);
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let v = [base[0] + dx, base[1] + dy, base[2] + dz];
                    if v.iter().any(|&c| c < 0 || c >= size as i64) {
                        continue;
                    }
                    let dist = ((v[0] as f64 - p[0]).powi(2) + (v[1] as f64 - p[1]).powi(2) + (v[2] as f64 - p[2]).powi(2)).sqrt();
                    let i = ((v[2] as usize) * size + v[1] as usize) * size + v[0] as usize;
                    if dist < distance[i] {
                        distance[i] = dist;
                        truth[i] = *d;
                    }
                }
            }
        }
    }
    let v = distance.iter().map(|&d| if d <= cutoff { (-d * d / 2.0).exp() } else { 0.0 }).collect();
    let g = truth.clone();
    let field = VesselField { dims, v, g, sigma: vec![radius; len] };
    Ok(SynthVolume { field, truth, distance, centerline: curve.into_iter().map(|(p, _)| p).collect() })
}

/// Two collinear segments of strong evidence on row `height / 2`, separated
/// by a gap of weak evidence, in a grid of otherwise costly sites. Segment
/// tangents lie along the row; every other tangent starts 60 to 120 degrees
/// away from it.
#[derive(Clone, Debug)]
pub struct GapInstance {
    pub problem: Problem<f64, 2>,
    pub lines: Vec<TangentLine<f64, 2>>,
    pub width: usize,
    pub row: usize,
    pub segment: Vec<bool>,
    pub gap: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapParams {
    pub segment: usize,
    pub gap: usize,
    pub height: usize,
    pub margin: usize,
    pub segment_lambda: f64,
    pub gap_lambda: f64,
    pub background_lambda: f64,
    pub seed: u64,
}

impl Default for GapParams {
    fn default() -> Self {
        GapParams {
            segment: 10,
            gap: 4,
            height: 5,
            margin: 2,
            segment_lambda: -1.0,
            gap_lambda: 0.1,
            background_lambda: 3.0,
            seed: 6,
        }
    }
}

pub fn gap_instance(params: &GapParams) -> Result<GapInstance> {
    let w = 2 * params.margin + 2 * params.segment + params.gap;
    let h = params.height;
    let row = h / 2;
    let mut r = rng(params.seed);
    let mut segment = vec![false; w * h];
    let mut gap = vec![false; w * h];
    let mut lambdas = vec![params.background_lambda; w * h];
    let mut lines = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let (x, y) = (i % w, i / w);
        let pos = [x as f64, y as f64];
        let along = x >= params.margin && x < w - params.margin;
        let in_gap = x >= params.margin + params.segment && x < params.margin + params.segment + params.gap;
        if y == row && along && !in_gap {
            segment[i] = true;
            lambdas[i] = params.segment_lambda;
            lines.push(TangentLine::new(pos, [1.0, 0.0]));
        } else {
            if y == row && in_gap {
                gap[i] = true;
                lambdas[i] = params.gap_lambda;
            }
            let a = r.random_range(PI / 3.0..2.0 * PI / 3.0);
            lines.push(TangentLine::from_angle(pos, a));
        }
    }
    let positions = (0..w * h).map(|i| [(i % w) as f64, (i / w) as f64]).collect();
    let problem = Problem::new(ProblemSpec::edges(), SiteSet::new(positions, lambdas), build_grid_2d(w, h)?)?;
    Ok(GapInstance { problem, lines, width: w, row, segment, gap })
}
