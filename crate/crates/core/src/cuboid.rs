//! 3D bounding boxes from rectified 2D boxes plus `c_c`.
//!
//! In the rectified image travel-direction edges are vertical and
//! cross-road edges horizontal, so both the roof and the base of a vehicle
//! box are axis-aligned rectangles. The two are related by a homothety
//! centred at the rectified third vanishing point, with ratio
//! `k = (vp3.y - y_top_front) / (vp3.y - y_max)`. `c_c` fixes `y_top_front`;
//! the 2D box then pins down every other vertex.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    rectification_homography, road_plane_mapping, CameraCalibration, ImagePoint, ImageSize,
    RectifiedSpace, RoadPlane, RoadPoint,
};

/// Axis-aligned box in rectified pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct RectBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl RectBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if !(x_min < x_max && y_min < y_max) || !b.as_array().iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidDetection(format!(
                "box [{x_min}, {y_min}, {x_max}, {y_max}] is empty or non-finite"
            )));
        }
        Ok(b)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: &ImagePoint) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    /// Smallest box containing all `points`.
    pub fn bounding(points: &[ImagePoint]) -> Result<Self> {
        let mut b = [
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        ];
        for p in points {
            b[0] = b[0].min(p.x);
            b[1] = b[1].min(p.y);
            b[2] = b[2].max(p.x);
            b[3] = b[3].max(p.y);
        }
        Self::new(b[0], b[1], b[2], b[3])
    }
}

impl TryFrom<[f64; 4]> for RectBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        RectBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<RectBox> for [f64; 4] {
    fn from(b: RectBox) -> Self {
        b.as_array()
    }
}

/// One detection: rectified box, class, confidence and `c_c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionCc {
    pub frame_index: u64,
    pub class_id: u32,
    pub confidence: f64,
    pub bbox: RectBox,
    pub cc: f64,
}

impl DetectionCc {
    pub fn new(
        frame_index: u64,
        class_id: u32,
        confidence: f64,
        bbox: RectBox,
        cc: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidDetection(format!(
                "confidence {confidence} outside [0, 1]"
            )));
        }
        if !(0.0..=1.0).contains(&cc) {
            return Err(Error::InvalidDetection(format!("c_c {cc} outside [0, 1]")));
        }
        Ok(Self {
            frame_index,
            class_id,
            confidence,
            bbox,
            cc,
        })
    }
}

/// Whether vehicles approach the camera (front face nearer the bottom of
/// the rectified image) or drive away from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TravelDirection {
    #[default]
    Approaching,
    Receding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    Front = 0,
    Rear = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Top = 0,
    Bottom = 1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left = 0,
    Right = 1,
}

pub const fn vertex_index(face: Face, level: Level, side: Side) -> usize {
    (face as usize) * 4 + (level as usize) * 2 + side as usize
}

/// Reconstructed vehicle box. Vertex arrays are indexed by [`vertex_index`];
/// "front" is the vehicle's physical front, "left" the smaller rectified x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cuboid3D {
    pub vertices: [ImagePoint; 8],
    pub rectified: [ImagePoint; 8],
    /// Road-plane positions of front-bottom-left and front-bottom-right.
    pub front_bottom_world: [RoadPoint; 2],
    pub tracking_point_image: ImagePoint,
    pub tracking_point_world: RoadPoint,
}

impl Cuboid3D {
    pub fn vertex(&self, face: Face, level: Level, side: Side) -> ImagePoint {
        self.vertices[vertex_index(face, level, side)]
    }

    pub fn rect_vertex(&self, face: Face, level: Level, side: Side) -> ImagePoint {
        self.rectified[vertex_index(face, level, side)]
    }
}

pub fn cc_from_projection(bbox: &RectBox, y_top_front: f64) -> Result<f64> {
    if !(y_top_front >= bbox.y_min && y_top_front <= bbox.y_max) {
        return Err(Error::OutOfBox {
            y: y_top_front,
            y_min: bbox.y_min,
            y_max: bbox.y_max,
        });
    }
    Ok(((y_top_front - bbox.y_min) / bbox.height()).clamp(0.0, 1.0))
}

/// Rectified-space vertices for a box and `c_c`, given the rectified third
/// vanishing point. Near/far refer to distance from the camera.
fn rectified_vertices(bbox: &RectBox, cc: f64, vp3: &ImagePoint) -> Result<RectVertices> {
    if bbox.contains(vp3) {
        return Err(Error::DegenerateBox(
            "third vanishing point lies inside the box".into(),
        ));
    }
    if vp3.y <= bbox.y_max {
        return Err(Error::DegenerateBox(
            "third vanishing point is not below the box".into(),
        ));
    }
    let y_top_near = bbox.y_min + cc * bbox.height();
    let y_bottom_near = bbox.y_max;
    // roof = vp3 + k * (base - vp3)
    let k = (vp3.y - y_top_near) / (vp3.y - y_bottom_near);
    let to_base = |roof: f64, v: f64| v + (roof - v) / k;
    let to_roof = |base: f64, v: f64| v + k * (base - v);

    let y_bottom_far = to_base(bbox.y_min, vp3.y);
    // the extremal x of the box is a roof vertex when it lies on the far
    // side of vp3, otherwise a base vertex
    let (roof_left, base_left) = if bbox.x_min < vp3.x {
        (bbox.x_min, to_base(bbox.x_min, vp3.x))
    } else {
        (to_roof(bbox.x_min, vp3.x), bbox.x_min)
    };
    let (roof_right, base_right) = if bbox.x_max > vp3.x {
        (bbox.x_max, to_base(bbox.x_max, vp3.x))
    } else {
        (to_roof(bbox.x_max, vp3.x), bbox.x_max)
    };
    Ok(RectVertices {
        near: [
            ImagePoint::new(roof_left, y_top_near),
            ImagePoint::new(roof_right, y_top_near),
            ImagePoint::new(base_left, y_bottom_near),
            ImagePoint::new(base_right, y_bottom_near),
        ],
        far: [
            ImagePoint::new(roof_left, bbox.y_min),
            ImagePoint::new(roof_right, bbox.y_min),
            ImagePoint::new(base_left, y_bottom_far),
            ImagePoint::new(base_right, y_bottom_far),
        ],
    })
}

/// Top-left, top-right, bottom-left, bottom-right of each face.
struct RectVertices {
    near: [ImagePoint; 4],
    far: [ImagePoint; 4],
}

pub fn reconstruct_cuboid(
    det: &DetectionCc,
    rect: &RectifiedSpace,
    road: &RoadPlane,
    direction: TravelDirection,
) -> Result<Cuboid3D> {
    let rv = rectified_vertices(&det.bbox, det.cc, &rect.vp3_rect)?;
    let (front, rear) = match direction {
        TravelDirection::Approaching => (rv.near, rv.far),
        TravelDirection::Receding => (rv.far, rv.near),
    };
    let mut rectified = [ImagePoint::default(); 8];
    rectified[..4].copy_from_slice(&front);
    rectified[4..].copy_from_slice(&rear);

    let mut vertices = [ImagePoint::default(); 8];
    for (dst, src) in vertices.iter_mut().zip(&rectified) {
        *dst = rect.to_image(src)?;
    }
    let fbl = vertex_index(Face::Front, Level::Bottom, Side::Left);
    let fbr = vertex_index(Face::Front, Level::Bottom, Side::Right);
    let front_bottom_world = [road.to_road(&vertices[fbl])?, road.to_road(&vertices[fbr])?];
    let tracking_point_image = rect.to_image(&rectified[fbl].midpoint(&rectified[fbr]))?;
    Ok(Cuboid3D {
        vertices,
        rectified,
        front_bottom_world,
        tracking_point_image,
        tracking_point_world: front_bottom_world[0].midpoint(&front_bottom_world[1]),
    })
}

/// Center of the front-bottom edge on the road plane.
pub fn tracking_point(cuboid: &Cuboid3D) -> RoadPoint {
    let [l, r] = cuboid.front_bottom_world;
    l.midpoint(&r)
}

/// Rectification and road mapping derived once from a calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reconstructor {
    pub calibration: CameraCalibration,
    pub rect: RectifiedSpace,
    pub road: RoadPlane,
    pub direction: TravelDirection,
}

impl Reconstructor {
    pub fn new(
        calibration: CameraCalibration,
        target_size: ImageSize,
        direction: TravelDirection,
    ) -> Result<Self> {
        Ok(Self {
            calibration,
            rect: rectification_homography(&calibration, target_size)?,
            road: road_plane_mapping(&calibration)?,
            direction,
        })
    }

    pub fn reconstruct(&self, det: &DetectionCc) -> Result<Cuboid3D> {
        reconstruct_cuboid(det, &self.rect, &self.road, self.direction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(a: f64, b: f64, c: f64, d: f64) -> RectBox {
        RectBox::new(a, b, c, d).unwrap()
    }

    #[test]
    fn cc_examples() {
        assert_eq!(
            cc_from_projection(&bx(0.0, 0.0, 100.0, 100.0), 0.0).unwrap(),
            0.0
        );
        assert_eq!(
            cc_from_projection(&bx(0.0, 0.0, 100.0, 100.0), 100.0).unwrap(),
            1.0
        );
        assert_eq!(
            cc_from_projection(&bx(10.0, 20.0, 110.0, 120.0), 45.0).unwrap(),
            0.25
        );
        assert!(matches!(
            cc_from_projection(&bx(0.0, 0.0, 100.0, 100.0), 100.5),
            Err(Error::OutOfBox { .. })
        ));
        assert!(cc_from_projection(&bx(0.0, 0.0, 100.0, 100.0), -1.0).is_err());
    }

    #[test]
    fn box_validation() {
        assert!(RectBox::new(1.0, 0.0, 1.0, 5.0).is_err());
        assert!(RectBox::new(0.0, 0.0, 1.0, f64::NAN).is_err());
        assert!(serde_json::from_str::<RectBox>("[0, 0, 2, 1]").is_ok());
        assert!(serde_json::from_str::<RectBox>("[3, 0, 2, 1]").is_err());
        let b = bx(1.0, 2.0, 3.0, 4.0);
        assert_eq!(
            RectBox::bounding(&[ImagePoint::new(1.0, 4.0), ImagePoint::new(3.0, 2.0)]).unwrap(),
            b
        );
    }

    #[test]
    fn cc_zero_collapses_top_face() {
        let b = bx(100.0, 50.0, 200.0, 150.0);
        let rv = rectified_vertices(&b, 0.0, &ImagePoint::new(150.0, 1e7)).unwrap();
        // roof front and rear edges coincide at the box top
        assert_eq!(rv.near[0].y, 50.0);
        assert_eq!(rv.far[0].y, 50.0);
        // front face spans the whole box height
        assert_eq!(rv.near[2].y, 150.0);
        assert!((rv.near[0].x - 100.0).abs() < 1e-12 && (rv.near[1].x - 200.0).abs() < 1e-12);
    }

    #[test]
    fn vp3_inside_box_is_degenerate() {
        let b = bx(0.0, 0.0, 100.0, 100.0);
        assert!(matches!(
            rectified_vertices(&b, 0.5, &ImagePoint::new(50.0, 50.0)),
            Err(Error::DegenerateBox(_))
        ));
        assert!(matches!(
            rectified_vertices(&b, 0.5, &ImagePoint::new(50.0, -500.0)),
            Err(Error::DegenerateBox(_))
        ));
    }

    #[test]
    fn height_edges_pass_through_vp3() {
        let vp3 = ImagePoint::new(40.0, 900.0);
        for (b, cc) in [
            (bx(0.0, 0.0, 100.0, 120.0), 0.3),
            (bx(60.0, 10.0, 160.0, 90.0), 0.7),
        ] {
            let rv = rectified_vertices(&b, cc, &vp3).unwrap();
            for face in [&rv.near, &rv.far] {
                for (top, bottom) in [(face[0], face[2]), (face[1], face[3])] {
                    let cross =
                        (top.x - vp3.x) * (bottom.y - vp3.y) - (top.y - vp3.y) * (bottom.x - vp3.x);
                    let scale = top.distance(&vp3) * bottom.distance(&vp3);
                    assert!(cross.abs() <= 1e-12 * scale);
                }
            }
            // the box is exactly the bounds of the eight vertices
            let all: Vec<_> = rv.near.iter().chain(&rv.far).copied().collect();
            let bounds = RectBox::bounding(&all).unwrap();
            for (u, v) in bounds.as_array().iter().zip(b.as_array()) {
                assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn monotone_in_cc() {
        let b = bx(0.0, 0.0, 100.0, 100.0);
        let vp3 = ImagePoint::new(30.0, 2000.0);
        let mut last = f64::NEG_INFINITY;
        for i in 0..=20 {
            let rv = rectified_vertices(&b, f64::from(i) / 20.0, &vp3).unwrap();
            assert!(rv.near[0].y > last);
            last = rv.near[0].y;
        }
    }

    #[test]
    fn detection_ranges() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        assert!(DetectionCc::new(0, 0, 1.2, b, 0.5).is_err());
        assert!(DetectionCc::new(0, 0, 0.5, b, -0.1).is_err());
        assert!(DetectionCc::new(0, 0, 0.5, b, 1.0).is_ok());
    }
}
