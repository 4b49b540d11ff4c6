//! Depth and label rasters, foreground segmentation and the pinhole
//! transform between image and camera-centered world coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest depth a valid pixel may carry, in meters.
pub const MAX_DEPTH: f32 = 10.0;

/// Body parts known to the classifier. The discriminant is the value stored
/// in label rasters; `Background` never appears in a class PDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Part {
    Background = 0,
    LeftHand = 1,
    RightHand = 2,
    Head = 3,
    Body = 4,
}

/// Number of classes in a part PDF.
pub const NUM_CLASSES: usize = 4;

/// Class PDF over `[left_hand, right_hand, head, body]`.
pub type Pdf = [f64; NUM_CLASSES];

impl Part {
    pub const CLASSES: [Part; NUM_CLASSES] = [Part::LeftHand, Part::RightHand, Part::Head, Part::Body];

    /// Parts that receive world-space proposals.
    pub const TRACKED: [Part; 3] = [Part::LeftHand, Part::RightHand, Part::Head];

    pub fn from_label(value: u8) -> Option<Part> {
        match value {
            0 => Some(Part::Background),
            1 => Some(Part::LeftHand),
            2 => Some(Part::RightHand),
            3 => Some(Part::Head),
            4 => Some(Part::Body),
            _ => None,
        }
    }

    pub fn label(self) -> u8 {
        self as u8
    }

    /// Position in a [`Pdf`]. Panics for `Background`.
    pub fn class_index(self) -> usize {
        match self {
            Part::Background => panic!("background has no class index"),
            p => p as usize - 1,
        }
    }

    pub fn from_class_index(index: usize) -> Part {
        Part::CLASSES[index]
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Background => "background",
            Part::LeftHand => "left_hand",
            Part::RightHand => "right_hand",
            Part::Head => "head",
            Part::Body => "body",
        }
    }

    pub fn from_name(name: &str) -> Option<Part> {
        [Part::Background, Part::LeftHand, Part::RightHand, Part::Head, Part::Body]
            .into_iter()
            .find(|p| p.name() == name)
    }
}

impl std::fmt::Display for Part {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Row-major range image in meters. Zero marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    depths: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, depths: Vec<f32>) -> Result<Self> {
        if depths.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{} depth values for a {width}x{height} image",
                depths.len()
            )));
        }
        if let Some(bad) = depths
            .iter()
            .find(|&&d| !(d == 0.0 || (d > 0.0 && d <= MAX_DEPTH)))
        {
            return Err(Error::InvalidInput(format!(
                "depth {bad} is neither invalid (0) nor in (0, {MAX_DEPTH}]"
            )));
        }
        Ok(DepthImage {
            width,
            height,
            depths,
        })
    }

    /// An all-invalid image.
    pub fn empty(width: usize, height: usize) -> Self {
        DepthImage {
            width,
            height,
            depths: vec![0.0; width * height],
        }
    }

    pub fn from_millimeters(width: usize, height: usize, mm: &[u16]) -> Result<Self> {
        Self::new(width, height, mm.iter().map(|&v| v as f32 / 1000.0).collect())
    }

    /// Depths rounded to whole millimeters; invalid pixels stay 0.
    pub fn to_millimeters(&self) -> Vec<u16> {
        self.depths
            .iter()
            .map(|&d| (d as f64 * 1000.0).round() as u16)
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depths(&self) -> &[f32] {
        &self.depths
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.depths[y * self.width + x]
    }

    /// Depth at signed coordinates; `None` off the image.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> Option<f32> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(self.depths[y as usize * self.width + x as usize])
        }
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.get(x, y) > 0.0
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height
    }

    /// Coordinates of every valid pixel in row-major order.
    pub fn valid_pixels(&self) -> Vec<(u16, u16)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_valid(x, y) {
                    out.push((x as u16, y as u16));
                }
            }
        }
        out
    }

    pub fn valid_count(&self) -> usize {
        self.depths.iter().filter(|&&d| d > 0.0).count()
    }
}

/// Per-pixel part labels, same dimensions as the paired depth image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelImage {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "{} labels for a {width}x{height} image",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| Part::from_label(l).is_none()) {
            return Err(Error::InvalidInput(format!("unknown label value {bad}")));
        }
        Ok(LabelImage {
            width,
            height,
            labels,
        })
    }

    pub fn background(width: usize, height: usize) -> Self {
        LabelImage {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Part {
        Part::from_label(self.labels[y * self.width + x]).expect("validated label")
    }

    pub fn set(&mut self, x: usize, y: usize, part: Part) {
        self.labels[y * self.width + x] = part.label();
    }

    /// Completes a partial labeling: foreground pixels without an explicit
    /// hand or head label become body, and labels on invalid pixels are
    /// cleared.
    pub fn complete_partial(&self, depth: &DepthImage) -> Result<LabelImage> {
        check_same_size(depth, self)?;
        let labels = self
            .labels
            .iter()
            .zip(depth.depths())
            .map(|(&l, &d)| {
                if d <= 0.0 {
                    Part::Background.label()
                } else if l == Part::Background.label() {
                    Part::Body.label()
                } else {
                    l
                }
            })
            .collect();
        Ok(LabelImage {
            width: self.width,
            height: self.height,
            labels,
        })
    }

    /// Checks that every non-background label sits on a valid depth pixel.
    pub fn check_consistent(&self, depth: &DepthImage) -> Result<()> {
        check_same_size(depth, self)?;
        for (i, (&l, &d)) in self.labels.iter().zip(depth.depths()).enumerate() {
            if l != 0 && d <= 0.0 {
                return Err(Error::InvalidInput(format!(
                    "label {l} at ({}, {}) has no valid depth",
                    i % self.width,
                    i / self.width
                )));
            }
        }
        Ok(())
    }

    pub fn count(&self, part: Part) -> usize {
        self.labels.iter().filter(|&&l| l == part.label()).count()
    }
}

pub(crate) fn check_same_size(depth: &DepthImage, labels: &LabelImage) -> Result<()> {
    if depth.width() != labels.width() || depth.height() != labels.height() {
        return Err(Error::InvalidInput(format!(
            "depth image is {}x{} but label image is {}x{}",
            depth.width(),
            depth.height(),
            labels.width(),
            labels.height()
        )));
    }
    Ok(())
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            fx: 571.4,
            fy: 571.4,
            cx: 319.5,
            cy: 239.5,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::InvalidInput(format!(
                "intrinsics need positive focal lengths, got fx={fx} fy={fy}"
            )));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// Intrinsics for an image resampled by `factor` (0.5 halves resolution).
    pub fn scaled(&self, factor: f64) -> Self {
        CameraIntrinsics {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: (self.cx + 0.5) * factor - 0.5,
            cy: (self.cy + 0.5) * factor - 0.5,
        }
    }

    /// Checks the principal point lies inside a `width`x`height` image.
    pub fn validate_for(&self, width: usize, height: usize) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < width as f64 && self.cy >= 0.0 && self.cy < height as f64) {
            return Err(Error::InvalidInput(format!(
                "principal point ({}, {}) outside {width}x{height} image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn unproject(&self, u: f64, v: f64, z: f64) -> WorldPoint {
        WorldPoint {
            x: (u - self.cx) * z / self.fx,
            y: (v - self.cy) * z / self.fy,
            z,
        }
    }

    /// Continuous pixel coordinates of a world point (z must be positive).
    #[inline]
    pub fn project(&self, p: &WorldPoint) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }
}

/// Point in the camera-centered world frame, meters. `z` runs along the
/// optical axis; `x` and `y` follow the image axes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        WorldPoint { x, y, z }
    }

    #[inline]
    pub fn distance_squared(&self, other: &WorldPoint) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }

    #[inline]
    pub fn distance(&self, other: &WorldPoint) -> f64 {
        self.distance_squared(other).sqrt()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        WorldPoint::new(a[0], a[1], a[2])
    }
}

/// Removes everything at or beyond `background_threshold` meters. Pixels
/// the sensor already marked invalid stay invalid.
pub fn segment_foreground(raw: &DepthImage, background_threshold: f32) -> Result<DepthImage> {
    if raw.width() == 0 || raw.height() == 0 {
        return Err(Error::InvalidInput("image has a zero dimension".into()));
    }
    if !(background_threshold > 0.0 && background_threshold <= MAX_DEPTH) {
        return Err(Error::InvalidInput(format!(
            "background threshold {background_threshold} outside (0, {MAX_DEPTH}]"
        )));
    }
    let depths = raw
        .depths()
        .iter()
        .map(|&d| if d >= background_threshold { 0.0 } else { d })
        .collect();
    Ok(DepthImage {
        width: raw.width(),
        height: raw.height(),
        depths,
    })
}

/// World position of pixel `(x, y)` using its measured depth.
pub fn project_to_world(img: &DepthImage, x: usize, y: usize, k: &CameraIntrinsics) -> Result<WorldPoint> {
    if !img.contains(x, y) {
        return Err(Error::OutOfBounds {
            x,
            y,
            width: img.width(),
            height: img.height(),
        });
    }
    let z = img.get(x, y);
    if z <= 0.0 {
        return Err(Error::NoDepth { x, y });
    }
    Ok(k.unproject(x as f64, y as f64, z as f64))
}

/// Mean world position of all pixels labeled `part`, or `None` when the
/// part is not visible.
pub fn part_center_of_mass(
    labels: &LabelImage,
    img: &DepthImage,
    part: Part,
    k: &CameraIntrinsics,
) -> Result<Option<WorldPoint>> {
    check_same_size(img, labels)?;
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    let target = part.label();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if labels.labels[y * labels.width + x] != target {
                continue;
            }
            let p = project_to_world(img, x, y, k)?;
            sum[0] += p.x;
            sum[1] += p.y;
            sum[2] += p.z;
            n += 1;
        }
    }
    if n == 0 {
        return Ok(None);
    }
    let n = n as f64;
    Ok(Some(WorldPoint::new(sum[0] / n, sum[1] / n, sum[2] / n)))
}
