//! Heatmap and landmark primitives shared by every other module.
//!
//! Coordinates are 0-based everywhere: `x` is the column, `y` is the row, and
//! the value of pixel `(row, col)` is sampled at the pixel center `(col, row)`.

mod degrade;
pub mod io;
mod synth;

pub use degrade::{add_gaussian_noise, gaussian_blur, gaussian_kernel, DegradationConfig};
pub use synth::{make_gaussian_heatmap, DEFAULT_HEATMAP_SIGMA};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest supported grid side.
pub const MIN_SIDE: usize = 3;

/// A dense row-major grid of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Heatmap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(height, width)?;
        if values.len() != height * width {
            return Err(Error::shape(
                format!("{} values for {height}x{width}", height * width),
                values.len(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "heatmap values".into(),
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    /// Builds a map by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                values.push(f(row, col));
            }
        }
        Self::new(height, width, values)
    }

    /// Wraps values produced by an internal routine that already guarantees the invariants.
    pub(crate) fn from_raw(height: usize, width: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.width..(row + 1) * self.width]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn map_values(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self::from_raw(self.height, self.width, self.values.iter().map(|&v| f(v)).collect())
    }
}

/// `K` heatmaps of identical size, one per landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    height: usize,
    width: usize,
    maps: Vec<Heatmap>,
}

impl HeatmapStack {
    pub fn new(maps: Vec<Heatmap>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Empty("heatmap stack needs at least one channel".into()))?;
        let (height, width) = (first.height, first.width);
        for (k, map) in maps.iter().enumerate() {
            if map.height != height || map.width != width {
                return Err(Error::shape(
                    format!("{height}x{width} for every channel"),
                    format!("{}x{} in channel {k}", map.height, map.width),
                ));
            }
        }
        Ok(Self { height, width, maps })
    }

    /// Builds a stack from channel-major, row-major values.
    pub fn from_flat(landmarks: usize, height: usize, width: usize, values: &[f64]) -> Result<Self> {
        if values.len() != landmarks * height * width {
            return Err(Error::shape(
                format!("{landmarks}x{height}x{width} values"),
                values.len(),
            ));
        }
        let plane = height * width;
        let maps = (0..landmarks)
            .map(|k| Heatmap::new(height, width, values[k * plane..(k + 1) * plane].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(maps)
    }

    pub(crate) fn from_flat_raw(landmarks: usize, height: usize, width: usize, values: &[f64]) -> Self {
        let plane = height * width;
        let maps = (0..landmarks)
            .map(|k| Heatmap::from_raw(height, width, values[k * plane..(k + 1) * plane].to_vec()))
            .collect();
        Self { height, width, maps }
    }

    /// Channel-major, row-major copy of all values.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.maps.len() * self.height * self.width);
        for map in &self.maps {
            out.extend_from_slice(&map.values);
        }
        out
    }

    pub fn landmarks(&self) -> usize {
        self.maps.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn maps(&self) -> &[Heatmap] {
        &self.maps
    }

    pub fn map(&self, k: usize) -> &Heatmap {
        &self.maps[k]
    }

    pub fn into_maps(self) -> Vec<Heatmap> {
        self.maps
    }

    pub fn same_shape(&self, other: &HeatmapStack) -> bool {
        self.landmarks() == other.landmarks() && self.height == other.height && self.width == other.width
    }

    pub(crate) fn map_channels(&self, f: impl FnMut(&Heatmap) -> Heatmap) -> Self {
        Self {
            height: self.height,
            width: self.width,
            maps: self.maps.iter().map(f).collect(),
        }
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.landmarks(), self.height, self.width)
    }
}

/// A sub-pixel 2-D point; `x` is the column and `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;

    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;

    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

/// The `K` landmark positions of one frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkSet {
    pub points: Vec<Point2>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("landmark {i}"),
            });
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| Point2::new(p.x + dx, p.y + dy)).collect(),
        }
    }
}

impl From<Vec<Point2>> for LandmarkSet {
    fn from(points: Vec<Point2>) -> Self {
        Self { points }
    }
}

pub(crate) fn check_dims(height: usize, width: usize) -> Result<()> {
    if height < MIN_SIDE || width < MIN_SIDE {
        return Err(Error::shape(
            format!("grid of at least {MIN_SIDE}x{MIN_SIDE}"),
            format!("{height}x{width}"),
        ));
    }
    Ok(())
}

pub(crate) fn check_same_len(a: &LandmarkSet, b: &LandmarkSet) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("{} landmarks", a.len()), format!("{} landmarks", b.len())));
    }
    Ok(())
}
