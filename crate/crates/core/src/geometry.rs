//! Axis-aligned boxes and the two pairwise metrics used for relation
//! assignment: centroid distance and volumetric IoU.
//!
//! Axes follow the simulator convention: `x` and `z` span the floor plane,
//! `y` points up. All lengths are meters.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Sub};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k, self.z * k)
    }

    fn zip(self, other: Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::new(f(self.x, other.x), f(self.y, other.y), f(self.z, other.z))
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        self.zip(rhs, |a, b| a + b)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        self.zip(rhs, |a, b| a - b)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate box: min {min:?} is not strictly below max {max:?}")]
    Degenerate { min: [f64; 3], max: [f64; 3] },
    #[error("non-finite box coordinate")]
    NonFinite,
}

/// Axis-aligned box with `min < max` on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct Box3 {
    min: Vec3,
    max: Vec3,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    min: Vec3,
    max: Vec3,
}

impl TryFrom<RawBox> for Box3 {
    type Error = GeometryError;
    fn try_from(raw: RawBox) -> Result<Self, Self::Error> {
        Box3::new(raw.min, raw.max)
    }
}

impl From<Box3> for RawBox {
    fn from(b: Box3) -> Self {
        RawBox { min: b.min, max: b.max }
    }
}

impl Box3 {
    pub fn new(min: impl Into<Vec3>, max: impl Into<Vec3>) -> Result<Self, GeometryError> {
        let (min, max) = (min.into(), max.into());
        let coords = [min.x, min.y, min.z, max.x, max.y, max.z];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(GeometryError::Degenerate { min: min.into(), max: max.into() });
        }
        Ok(Self { min, max })
    }

    /// Box of the given extents whose center is `center`.
    pub fn from_center(center: impl Into<Vec3>, extents: impl Into<Vec3>) -> Result<Self, GeometryError> {
        let (c, e) = (center.into(), extents.into().scale(0.5));
        Self::new(c - e, c + e)
    }

    pub fn min(&self) -> Vec3 {
        self.min
    }

    pub fn max(&self) -> Vec3 {
        self.max
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max).scale(0.5)
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn volume(&self) -> f64 {
        let e = self.extents();
        e.x * e.y * e.z
    }

    pub fn footprint_area(&self) -> f64 {
        let e = self.extents();
        e.x * e.z
    }

    pub fn translated(&self, offset: Vec3) -> Self {
        Self { min: self.min + offset, max: self.max + offset }
    }

    pub fn intersection_volume(&self, other: &Box3) -> f64 {
        overlap(self.min.x, self.max.x, other.min.x, other.max.x)
            * overlap(self.min.y, self.max.y, other.min.y, other.max.y)
            * overlap(self.min.z, self.max.z, other.min.z, other.max.z)
    }

    /// Overlap area of the two boxes projected onto the floor plane.
    pub fn footprint_overlap(&self, other: &Box3) -> f64 {
        overlap(self.min.x, self.max.x, other.min.x, other.max.x) * overlap(self.min.z, self.max.z, other.min.z, other.max.z)
    }

    /// Fraction of `self`'s volume that lies inside `container`.
    pub fn containment_in(&self, container: &Box3) -> f64 {
        self.intersection_volume(container) / self.volume()
    }

    pub fn contains_box(&self, other: &Box3) -> bool {
        self.min.x <= other.min.x
            && self.min.y <= other.min.y
            && self.min.z <= other.min.z
            && other.max.x <= self.max.x
            && other.max.y <= self.max.y
            && other.max.z <= self.max.z
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Volumetric intersection over union; 0 for disjoint boxes.
pub fn iou3d(a: &Box3, b: &Box3) -> f64 {
    let inter = a.intersection_volume(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Euclidean distance between box centers.
pub fn centroid_distance(a: &Box3, b: &Box3) -> f64 {
    (a.center() - b.center()).norm()
}
