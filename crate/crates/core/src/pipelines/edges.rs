//! Edge detection in grayscale images with sub-pixel output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{Problem, ProblemSpec, SiteSet};
use crate::error::{Error, Result};
use crate::geometry::{project_onto_line, TangentLine};
use crate::graph::build_grid_2d;
use crate::inference::{run_inference, InferenceConfig, InferenceState};
use crate::raster::Image;
use crate::scalar::Real;

use super::{normalize_by_spread, Likelihood, Normalization};

/// Per-pixel Sobel gradients after normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField<T> {
    pub width: usize,
    pub height: usize,
    pub g: Vec<[T; 2]>,
}

impl<T: Real> GradientField<T> {
    pub fn magnitude(&self, i: usize) -> T {
        self.g[i][0].hypot(self.g[i][1])
    }

    pub fn magnitudes(&self) -> Vec<T> {
        (0..self.g.len()).map(|i| self.magnitude(i)).collect()
    }
}

/// 3x3 Sobel gradients with replicated borders, divided by the spread of
/// their magnitudes over the image. A constant image gives all-zero gradients.
pub fn sobel_gradients<T: Real>(image: &Image<T>, normalization: Normalization) -> Result<GradientField<T>> {
    let (w, h) = (image.width, image.height);
    if w < 3 || h < 3 {
        return Err(Error::Input(format!("image must be at least 3x3, got {w}x{h}")));
    }
    let raw: Vec<[T; 2]> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            let v = |dx: i64, dy: i64| image.get_clamped(x + dx, y + dy);
            let two = T::lit(2.0);
            let gx = (v(1, -1) + two * v(1, 0) + v(1, 1)) - (v(-1, -1) + two * v(-1, 0) + v(-1, 1));
            let gy = (v(-1, 1) + two * v(0, 1) + v(1, 1)) - (v(-1, -1) + two * v(0, -1) + v(1, -1));
            [gx, gy]
        })
        .collect();
    let mags: Vec<T> = raw.iter().map(|g| g[0].hypot(g[1])).collect();
    let g = match normalize_by_spread(&mags, normalization) {
        Some(div) => raw.iter().map(|g| [g[0] / div, g[1] / div]).collect(),
        None => vec![[T::zero(); 2]; w * h],
    };
    Ok(GradientField { width: w, height: h, g })
}

pub fn edge_likelihoods<T: Real>(field: &GradientField<T>, likelihood: &Likelihood<T>) -> Vec<T> {
    (0..field.g.len()).map(|i| likelihood.lambda(field.magnitude(i))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeInit {
    /// Along the edge: the gradient rotated by 90 degrees.
    Perpendicular,
    /// Along the gradient itself.
    PaperLiteral,
}

/// Initial tangents through every pixel. Pixels without gradient point along x.
pub fn init_edge_tangents<T: Real>(field: &GradientField<T>, mode: EdgeInit) -> Vec<TangentLine<T, 2>> {
    field
        .g
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let anchor = pixel_position(i, field.width);
            let dir = match mode {
                EdgeInit::Perpendicular => [-g[1], g[0]],
                EdgeInit::PaperLiteral => *g,
            };
            if dir[0] == T::zero() && dir[1] == T::zero() {
                TangentLine::new(anchor, [T::one(), T::zero()])
            } else {
                TangentLine::new(anchor, dir)
            }
        })
        .collect()
}

#[inline]
pub fn pixel_position<T: Real>(i: usize, width: usize) -> [T; 2] {
    [T::lit((i % width) as f64), T::lit((i / width) as f64)]
}

/// Confidence tiers of detected tangents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    None,
    /// `q >= 1/4`
    Weak,
    /// `q >= 1/2`
    Strong,
}

impl Tier {
    pub fn of<T: Real>(q: T) -> Tier {
        if q >= T::lit(0.5) {
            Tier::Strong
        } else if q >= T::lit(0.25) {
            Tier::Weak
        } else {
            Tier::None
        }
    }
}

/// Upsampled raster of marginals at projected points.
#[derive(Clone, Debug, PartialEq)]
pub struct SubpixelMask<T> {
    pub scale: usize,
    pub image: Image<T>,
    /// Sites whose projection fell outside the canvas.
    pub dropped: usize,
}

/// Projects each site with `q_i >= q_min` onto its tangent and writes `q_i`
/// into cell `floor(scale * p)` of a `scale * width` by `scale * height`
/// canvas, keeping the maximum per cell.
pub fn subpixel_mask<T: Real>(
    lines: &[TangentLine<T, 2>],
    positions: &[[T; 2]],
    q: &[T],
    width: usize,
    height: usize,
    scale: usize,
    q_min: T,
) -> Result<SubpixelMask<T>> {
    if scale < 1 {
        return Err(Error::Config("mask scale must be at least 1".into()));
    }
    if lines.len() != positions.len() || q.len() != positions.len() {
        return Err(Error::Input("lines, positions and marginals differ in length".into()));
    }
    let (sw, sh) = (width * scale, height * scale);
    let mut image = Image::filled(sw, sh, T::zero());
    let mut dropped = 0;
    let s = T::lit(scale as f64);
    for i in 0..positions.len() {
        if q[i] < q_min {
            continue;
        }
        let p = project_onto_line(&lines[i], &positions[i]);
        let (cx, cy) = ((s * p[0]).floor(), (s * p[1]).floor());
        if !(cx >= T::zero() && cy >= T::zero() && cx < T::lit(sw as f64) && cy < T::lit(sh as f64)) {
            dropped += 1;
            continue;
        }
        let (cx, cy) = (cx.as_f64() as usize, cy.as_f64() as usize);
        if q[i] > image.get(cx, cy) {
            image.set(cx, cy, q[i]);
        }
    }
    Ok(SubpixelMask { scale, image, dropped })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(serialize = "T: Serialize", deserialize = "T: Real + Deserialize<'de>"))]
pub struct EdgeParams<T> {
    pub spec: ProblemSpec<T>,
    pub likelihood: Likelihood<T>,
    pub normalization: Normalization,
    pub init: EdgeInit,
    pub inference: InferenceConfig<T>,
    pub scale: usize,
    pub q_min: T,
}

impl<T: Real> Default for EdgeParams<T> {
    fn default() -> Self {
        EdgeParams {
            spec: ProblemSpec::edges(),
            likelihood: Likelihood::default(),
            normalization: Normalization::Std,
            init: EdgeInit::Perpendicular,
            inference: InferenceConfig::default(),
            scale: 1,
            q_min: T::zero(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EdgeDetection<T> {
    pub field: GradientField<T>,
    pub lambdas: Vec<T>,
    pub initial: Vec<TangentLine<T, 2>>,
    pub state: InferenceState<T, 2>,
    pub mask: SubpixelMask<T>,
}

impl<T: Real> EdgeDetection<T> {
    pub fn positions(&self) -> Vec<[T; 2]> {
        (0..self.lambdas.len()).map(|i| pixel_position(i, self.field.width)).collect()
    }

    /// Observed pixels projected onto their tangents.
    pub fn projected(&self) -> Vec<[T; 2]> {
        self.state.lines.iter().enumerate().map(|(i, l)| project_onto_line(l, &pixel_position(i, self.field.width))).collect()
    }
}

/// Gradients, likelihoods, initial tangents, joint inference on the
/// 8-connected pixel grid, then the sub-pixel mask.
pub fn detect_edges_2d<T: Real>(image: &Image<T>, params: &EdgeParams<T>) -> Result<EdgeDetection<T>> {
    let field = sobel_gradients(image, params.normalization)?;
    let lambdas = edge_likelihoods(&field, &params.likelihood);
    let initial = init_edge_tangents(&field, params.init);
    let (w, h) = (image.width, image.height);
    let positions: Vec<[T; 2]> = (0..w * h).map(|i| pixel_position(i, w)).collect();
    let mut sites = SiteSet::new(positions.clone(), lambdas.clone());
    if params.spec.beta > T::zero() {
        sites = sites.with_priors(initial.iter().map(|l| l.direction).collect());
    }
    let problem = Problem::new(params.spec, sites, build_grid_2d(w, h)?)?;
    let state = run_inference(&problem, &initial, &params.inference)?;
    let mask = subpixel_mask(&state.lines, &positions, &state.q, w, h, params.scale, params.q_min)?;
    if mask.dropped > 0 {
        log::info!("{} projected points fell outside the mask canvas", mask.dropped);
    }
    Ok(EdgeDetection { field, lambdas, initial, state, mask })
}
