//! Calibration consumption: vanishing-point algebra, the rectifying
//! homography and the metric road-plane mapping.
//!
//! Camera model: zero skew, square pixels, focal length recovered from the
//! two orthogonal vanishing points. Back-projected directions are
//! `normalize([vp - pp; f])`, so every direction points into the scene.

use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum |w| for a transformed point to count as finite.
pub const INFINITY_EPS: f64 = 1e-12;
/// Minimum |det| of a normalized homography.
pub const SINGULAR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, 1.0)
    }

    pub fn dot(&self, other: &ImagePoint) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn sub(&self, other: &ImagePoint) -> ImagePoint {
        ImagePoint::new(self.x - other.x, self.y - other.y)
    }

    pub fn distance(&self, other: &ImagePoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn midpoint(&self, other: &ImagePoint) -> ImagePoint {
        ImagePoint::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

impl From<[f64; 2]> for ImagePoint {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<ImagePoint> for [f64; 2] {
    fn from(p: ImagePoint) -> Self {
        [p.x, p.y]
    }
}

/// Metric point on the road plane. `x` runs along the travel direction
/// (towards vp1), `y` along the cross-road direction (towards vp2).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct RoadPoint {
    pub x: f64,
    pub y: f64,
}

impl RoadPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &RoadPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn midpoint(&self, other: &RoadPoint) -> RoadPoint {
        RoadPoint::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

impl From<[f64; 2]> for RoadPoint {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<RoadPoint> for [f64; 2] {
    fn from(p: RoadPoint) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0 && self.height > 0
    }

    pub fn corners(&self) -> [ImagePoint; 4] {
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        [
            ImagePoint::new(0.0, 0.0),
            ImagePoint::new(w, 0.0),
            ImagePoint::new(w, h),
            ImagePoint::new(0.0, h),
        ]
    }

    pub fn contains(&self, p: &ImagePoint) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= f64::from(self.width) && p.y <= f64::from(self.height)
    }
}

impl From<[u32; 2]> for ImageSize {
    fn from(v: [u32; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<ImageSize> for [u32; 2] {
    fn from(s: ImageSize) -> Self {
        [s.width, s.height]
    }
}

/// Projective 2D transform, stored with its largest-magnitude entry equal to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: Matrix3<f64>,
}

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateConfiguration(
                "homography has non-finite entries".into(),
            ));
        }
        let pivot = m
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot == 0.0 {
            return Err(Error::DegenerateConfiguration("zero homography".into()));
        }
        let m = m / pivot;
        if m.determinant().abs() <= SINGULAR_EPS {
            return Err(Error::DegenerateConfiguration("singular homography".into()));
        }
        Ok(Self { m })
    }

    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    /// Homogeneous image of `v`, without de-homogenizing.
    pub fn transform(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.m * v
    }

    pub fn apply(&self, p: &ImagePoint) -> Result<ImagePoint> {
        dehomogenize(&(self.m * p.homogeneous()))
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .m
            .try_inverse()
            .ok_or_else(|| Error::DegenerateConfiguration("singular homography".into()))?;
        Self::new(inv)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::new(self.m * other.m)
    }
}

pub fn apply_homography(h: &Homography, p: &ImagePoint) -> Result<ImagePoint> {
    h.apply(p)
}

fn dehomogenize(v: &Vector3<f64>) -> Result<ImagePoint> {
    if v.z.abs() <= INFINITY_EPS {
        return Err(Error::MapsToInfinity);
    }
    Ok(ImagePoint::new(v.x / v.z, v.y / v.z))
}

/// Focal length implied by two orthogonal vanishing points.
pub fn focal_from_vps(vp1: &ImagePoint, vp2: &ImagePoint, pp: &ImagePoint) -> Result<f64> {
    let dot = vp1.sub(pp).dot(&vp2.sub(pp));
    if !(dot < 0.0) {
        return Err(Error::NonOrthogonalVanishingPoints { dot });
    }
    Ok((-dot).sqrt())
}

fn back_project(vp: &ImagePoint, pp: &ImagePoint, focal: f64) -> Vector3<f64> {
    Vector3::new(vp.x - pp.x, vp.y - pp.y, focal).normalize()
}

pub fn third_vanishing_point(
    vp1: &ImagePoint,
    vp2: &ImagePoint,
    pp: &ImagePoint,
    focal: f64,
) -> Result<ImagePoint> {
    if !(focal > 0.0) {
        return Err(Error::InvalidCalibration(format!(
            "focal must be positive, got {focal}"
        )));
    }
    let d3 = back_project(vp1, pp, focal).cross(&back_project(vp2, pp, focal));
    if d3.z.abs() < 1e-9 {
        return Err(Error::DegenerateConfiguration(
            "third vanishing point at infinity".into(),
        ));
    }
    Ok(ImagePoint::new(
        pp.x + focal * d3.x / d3.z,
        pp.y + focal * d3.y / d3.z,
    ))
}

#[derive(Deserialize)]
struct CalibrationFile {
    vp1: ImagePoint,
    vp2: ImagePoint,
    pp: ImagePoint,
    scale: f64,
    image_size: ImageSize,
}

impl TryFrom<CalibrationFile> for CameraCalibration {
    type Error = Error;

    fn try_from(f: CalibrationFile) -> Result<Self> {
        CameraCalibration::new(f.vp1, f.vp2, f.pp, f.scale, f.image_size)
    }
}

/// Two orthogonal vanishing points, principal point and road-plane scale.
///
/// `scale` is the number of meters per unit of camera-to-road distance, i.e.
/// the camera height above the road in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CalibrationFile")]
pub struct CameraCalibration {
    pub vp1: ImagePoint,
    pub vp2: ImagePoint,
    pub pp: ImagePoint,
    pub scale: f64,
    pub image_size: ImageSize,
}

impl CameraCalibration {
    pub fn new(
        vp1: ImagePoint,
        vp2: ImagePoint,
        pp: ImagePoint,
        scale: f64,
        image_size: ImageSize,
    ) -> Result<Self> {
        if !(vp1.is_finite() && vp2.is_finite() && pp.is_finite()) {
            return Err(Error::InvalidCalibration(
                "non-finite image coordinates".into(),
            ));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidCalibration(format!(
                "scale must be positive, got {scale}"
            )));
        }
        if !image_size.is_valid() {
            return Err(Error::InvalidCalibration("empty image size".into()));
        }
        focal_from_vps(&vp1, &vp2, &pp)?;
        Ok(Self {
            vp1,
            vp2,
            pp,
            scale,
            image_size,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::json_file::read(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::json_file::write(path, self)
    }

    pub fn focal(&self) -> f64 {
        // validated at construction
        focal_from_vps(&self.vp1, &self.vp2, &self.pp).unwrap_or(f64::NAN)
    }

    pub fn vp3(&self) -> Result<ImagePoint> {
        third_vanishing_point(&self.vp1, &self.vp2, &self.pp, self.focal())
    }

    /// Unit directions of travel, cross-road and road normal in camera
    /// coordinates. The normal is oriented towards the road (positive z).
    pub fn axes(&self) -> Result<[Vector3<f64>; 3]> {
        let f = self.focal();
        let d1 = back_project(&self.vp1, &self.pp, f);
        let d2 = back_project(&self.vp2, &self.pp, f);
        let n = d1.cross(&d2);
        if n.z.abs() < 1e-9 {
            return Err(Error::DegenerateConfiguration(
                "camera optical axis parallel to the road".into(),
            ));
        }
        let n = if n.z > 0.0 { n } else { -n };
        Ok([d1, d2, n.normalize()])
    }

    /// Horizon line `vp1 × vp2` in homogeneous pixel coordinates.
    pub fn horizon(&self) -> Vector3<f64> {
        self.vp1.homogeneous().cross(&self.vp2.homogeneous())
    }
}

/// Rectified image space: vp1 sent to the -y direction at infinity, vp2 to
/// the +x direction, the original frame fitted into `target_size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectifiedSpace {
    pub h_fwd: Homography,
    pub h_inv: Homography,
    pub target_size: ImageSize,
    pub vp3_rect: ImagePoint,
}

impl RectifiedSpace {
    pub fn to_rect(&self, p: &ImagePoint) -> Result<ImagePoint> {
        self.h_fwd.apply(p)
    }

    pub fn to_image(&self, p: &ImagePoint) -> Result<ImagePoint> {
        self.h_inv.apply(p)
    }
}

pub fn rectification_homography(
    calib: &CameraCalibration,
    target_size: ImageSize,
) -> Result<RectifiedSpace> {
    if !target_size.is_valid() {
        return Err(Error::InvalidCalibration("empty target size".into()));
    }
    if calib.vp1.distance(&calib.vp2) <= 1e-9 * (1.0 + calib.vp1.x.abs() + calib.vp1.y.abs()) {
        return Err(Error::DegenerateConfiguration(
            "vanishing points coincide".into(),
        ));
    }
    let size = calib.image_size;
    let (cx, cy) = (0.5 * f64::from(size.width), 0.5 * f64::from(size.height));
    let s = cx.hypot(cy);
    // pixel -> centred coordinates in units of the half diagonal
    let normalize = Matrix3::new(1.0 / s, 0.0, -cx / s, 0.0, 1.0 / s, -cy / s, 0.0, 0.0, 1.0);

    let v1 = normalize * calib.vp1.homogeneous();
    let v2 = normalize * calib.vp2.homogeneous();
    let horizon = v1.cross(&v2);
    let norm = horizon.norm();
    if norm <= 1e-15 {
        return Err(Error::DegenerateConfiguration(
            "vanishing points coincide".into(),
        ));
    }
    let horizon = horizon / norm;
    let to_infinity = Matrix3::new(
        1.0, 0.0, 0.0, 0.0, 1.0, 0.0, horizon.x, horizon.y, horizon.z,
    );

    let corner_w: Vec<f64> = size
        .corners()
        .iter()
        .map(|c| horizon.dot(&(normalize * c.homogeneous())))
        .collect();
    let side = corner_w[0].signum();
    if corner_w
        .iter()
        .any(|w| w.abs() < 1e-9 || w.signum() != side)
    {
        return Err(Error::DegenerateConfiguration(
            "horizon passes through the image".into(),
        ));
    }

    // Directions (in the horizon-to-infinity image) in which image points
    // move when heading towards vp1 and vp2.
    let towards_vp1 = Vector2::new(v1.x, v1.y).normalize() * side;
    let towards_vp2 = Vector2::new(v2.x, v2.y).normalize() * side;
    let basis = Matrix2::from_columns(&[towards_vp2, -towards_vp1]);
    let align = basis
        .try_inverse()
        .filter(|_| basis.determinant().abs() > 1e-12);
    let Some(align) = align else {
        return Err(Error::DegenerateConfiguration(
            "vanishing point directions are parallel".into(),
        ));
    };
    let align = Matrix3::new(
        align[(0, 0)],
        align[(0, 1)],
        0.0,
        align[(1, 0)],
        align[(1, 1)],
        0.0,
        0.0,
        0.0,
        1.0,
    );
    let aligned = align * to_infinity * normalize;

    let mapped = size
        .corners()
        .iter()
        .map(|c| dehomogenize(&(aligned * c.homogeneous())))
        .collect::<Result<Vec<_>>>()?;
    let (mut x_min, mut y_min) = (f64::INFINITY, f64::INFINITY);
    let (mut x_max, mut y_max) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &mapped {
        x_min = x_min.min(p.x);
        x_max = x_max.max(p.x);
        y_min = y_min.min(p.y);
        y_max = y_max.max(p.y);
    }
    let (tw, th) = (f64::from(target_size.width), f64::from(target_size.height));
    let scale = (tw / (x_max - x_min)).min(th / (y_max - y_min));
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::DegenerateConfiguration(
            "rectified image has unbounded extent".into(),
        ));
    }
    let tx = 0.5 * (tw - scale * (x_max - x_min)) - scale * x_min;
    let ty = 0.5 * (th - scale * (y_max - y_min)) - scale * y_min;
    let fit = Matrix3::new(scale, 0.0, tx, 0.0, scale, ty, 0.0, 0.0, 1.0);

    let h_fwd = Homography::new(fit * aligned)?;
    let h_inv = h_fwd.inverse()?;
    let vp3_rect = h_fwd.apply(&calib.vp3()?)?;
    if !vp3_rect.is_finite() {
        return Err(Error::DegenerateConfiguration(
            "third vanishing point maps to infinity".into(),
        ));
    }
    Ok(RectifiedSpace {
        h_fwd,
        h_inv,
        target_size,
        vp3_rect,
    })
}

/// Image → metric road-plane coordinates.
///
/// Each pixel's viewing ray is intersected with the plane `n·X = 1` (camera
/// height as the unit), expressed in the (travel, cross) basis and scaled
/// by the calibration scale. The origin is the foot of the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadPlane {
    h: Homography,
    /// Sign of the homogeneous coordinate for rays that hit the road.
    facing: f64,
}

impl RoadPlane {
    pub fn homography(&self) -> &Homography {
        &self.h
    }

    pub fn to_road(&self, p: &ImagePoint) -> Result<RoadPoint> {
        let v = self.h.transform(&p.homogeneous());
        let reach = v.x.abs().max(v.y.abs());
        if v.z * self.facing <= INFINITY_EPS * reach.max(1.0) {
            return Err(Error::PointAboveHorizon { x: p.x, y: p.y });
        }
        Ok(RoadPoint::new(v.x / v.z, v.y / v.z))
    }

    pub fn to_image(&self, p: &RoadPoint) -> Result<ImagePoint> {
        let inv = self.h.inverse()?;
        inv.apply(&ImagePoint::new(p.x, p.y))
    }
}

pub fn road_plane_mapping(calib: &CameraCalibration) -> Result<RoadPlane> {
    let [d1, d2, n] = calib.axes()?;
    let f = calib.focal();
    let pp = calib.pp;
    let to_ray = Matrix3::new(1.0, 0.0, -pp.x, 0.0, 1.0, -pp.y, 0.0, 0.0, f);
    let s = calib.scale;
    let basis = Matrix3::from_rows(&[(d1 * s).transpose(), (d2 * s).transpose(), n.transpose()]);
    let h = Homography::new(basis * to_ray)?;
    // the road normal's own vanishing point is a ray that hits the plane
    let probe = Vector3::new(pp.x + f * n.x / n.z, pp.y + f * n.y / n.z, 1.0);
    let facing = h.transform(&probe).z.signum();
    Ok(RoadPlane { h, facing })
}
