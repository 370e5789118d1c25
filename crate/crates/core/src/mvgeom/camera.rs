use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center, vertical field of view in degrees.
    pub fn from_fov(width: usize, height: usize, fov_y_deg: f64) -> Self {
        let f = 0.5 * height as f64 / (0.5 * fov_y_deg.to_radians()).tan();
        Self {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
        }
    }
}

/// Azimuth/elevation/radius around a look-at target. Angles in radians.
///
/// Azimuth 0 places the camera on the +Z side of the target; positive
/// elevation raises it along +Y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitParams {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
    pub target: [f64; 3],
}

impl OrbitParams {
    pub fn eye(&self) -> Vector3<f64> {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        Vector3::from(self.target) + self.radius * Vector3::new(ce * sa, se, ce * ca)
    }
}

/// Intrinsics plus a rigid world-from-camera transform.
///
/// The camera looks down its local −Z axis with +Y up; image rows grow
/// downward. Pixel `(u, v)` has its center at `(u + 0.5, v + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
}

impl CameraPose {
    pub fn new(
        intr: Intrinsics,
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let pose = Self {
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            width: intr.width,
            height: intr.height,
            rotation,
            center,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::InvalidPose(m));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be at least 1x1".into());
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            ));
        }
        if !self.center.iter().all(|v| v.is_finite()) {
            return bad("camera center is not finite".into());
        }
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax();
        if !(err < 1e-9) {
            return bad(format!("rotation is not orthonormal (max |RᵀR − I| = {err:e})"));
        }
        let det = self.rotation.determinant();
        if !((det - 1.0).abs() < 1e-9) {
            return bad(format!("rotation determinant {det} != 1"));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, world +Y as up.
    pub fn look_at(
        intr: Intrinsics,
        eye: Vector3<f64>,
        target: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let fwd = (target - eye).normalize();
        let mut right = fwd.cross(&Vector3::y());
        if right.norm() < 1e-12 {
            right = fwd.cross(&Vector3::z());
        }
        let right = right.normalize();
        let up = right.cross(&fwd);
        let rotation = Matrix3::from_columns(&[right, up, -fwd]);
        Self::new(intr, rotation, eye)
    }

    pub fn orbit(intr: Intrinsics, params: &OrbitParams) -> Result<Self, GeometryError> {
        Self::look_at(intr, params.eye(), Vector3::from(params.target))
    }

    /// Viewing direction (unit, world frame).
    pub fn forward(&self) -> Vector3<f64> {
        -self.rotation.column(2).into_owned()
    }

    /// Recovers orbit parameters, taking the look-at target as the point on
    /// the optical axis closest to the world origin.
    pub fn orbit_params(&self) -> OrbitParams {
        let f = self.forward();
        let mut s = (-self.center).dot(&f);
        if s <= 1e-9 {
            s = self.center.norm().max(1e-9);
        }
        let target = self.center + f * s;
        let d = self.center - target;
        let radius = d.norm();
        OrbitParams {
            azimuth: d.x.atan2(d.z),
            elevation: (d.y / radius).clamp(-1.0, 1.0).asin(),
            radius,
            target: [target.x, target.y, target.z],
        }
    }

    /// Azimuth of the camera center around the world Y axis, in `[0, 2π)`.
    pub fn azimuth(&self) -> f64 {
        let a = self.center.x.atan2(self.center.z);
        if a < 0.0 {
            a + std::f64::consts::TAU
        } else {
            a
        }
    }

    /// World→OpenCV-style camera frame (x right, y down, z forward).
    pub fn cv_rotation(&self) -> Matrix3<f64> {
        self.rotation * Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a world point to continuous pixel coordinates, `None` if
    /// behind the camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<(f64, f64)> {
        let p = self.cv_rotation().transpose() * (x - self.center);
        if p.z <= 1e-12 {
            return None;
        }
        Some((self.cx + self.fx * p.x / p.z, self.cy + self.fy * p.y / p.z))
    }

    /// Unit world-space direction of the ray through continuous pixel coordinates.
    pub fn ray_direction(&self, px: f64, py: f64) -> Vector3<f64> {
        let d_cam = Vector3::new((px - self.cx) / self.fx, -(py - self.cy) / self.fy, -1.0);
        (self.rotation * d_cam).normalize()
    }

    /// Ray through the center of pixel `(u, v)` on a `w × h` grid spanning the
    /// full image.
    pub fn pixel_ray(&self, u: usize, v: usize, w: usize, h: usize) -> Vector3<f64> {
        let px = (u as f64 + 0.5) * self.width as f64 / w as f64;
        let py = (v as f64 + 0.5) * self.height as f64 / h as f64;
        self.ray_direction(px, py)
    }

    /// Row-major 4×4 world-from-camera matrix.
    pub fn c2w(&self) -> [f64; 16] {
        let r = &self.rotation;
        let c = &self.center;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], c.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], c.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], c.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }
}

/// One entry of `cameras.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Row-major world-from-camera transform.
    pub c2w: Vec<f64>,
}

impl CameraRecord {
    pub fn from_pose(p: &CameraPose) -> Self {
        Self {
            fx: p.fx,
            fy: p.fy,
            cx: p.cx,
            cy: p.cy,
            width: p.width,
            height: p.height,
            c2w: p.c2w().to_vec(),
        }
    }

    pub fn to_pose(&self) -> Result<CameraPose, GeometryError> {
        if self.c2w.len() != 16 {
            return Err(GeometryError::InvalidPose(format!(
                "c2w must have 16 entries, got {}",
                self.c2w.len()
            )));
        }
        let m = &self.c2w;
        let last = [m[12], m[13], m[14], m[15]];
        if (last[0].abs() + last[1].abs() + last[2].abs() + (last[3] - 1.0).abs()) > 1e-9 {
            return Err(GeometryError::InvalidPose(format!(
                "c2w last row must be [0, 0, 0, 1], got {last:?}"
            )));
        }
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let center = Vector3::new(m[3], m[7], m[11]);
        CameraPose::new(
            Intrinsics {
                fx: self.fx,
                fy: self.fy,
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            },
            rotation,
            center,
        )
    }
}

/// Parses and validates a `cameras.json` document.
pub fn parse_cameras_json(text: &str) -> Result<Vec<CameraPose>, GeometryError> {
    let recs: Vec<CameraRecord> =
        serde_json::from_str(text).map_err(|e| GeometryError::MalformedCameras(e.to_string()))?;
    recs.iter()
        .enumerate()
        .map(|(i, r)| {
            r.to_pose().map_err(|e| match e {
                GeometryError::InvalidPose(m) => GeometryError::InvalidPose(format!("camera {i}: {m}")),
                other => other,
            })
        })
        .collect()
}

fn fmt17(v: f64) -> String {
    if v == 0.0 {
        "0.0".to_string()
    } else {
        format!("{v:.16e}")
    }
}

/// Serializes poses to the `cameras.json` schema, floats with 17 significant digits.
pub fn cameras_to_json(poses: &[CameraPose]) -> String {
    let mut out = String::from("[\n");
    for (i, p) in poses.iter().enumerate() {
        let c2w: Vec<String> = p.c2w().iter().map(|&v| fmt17(v)).collect();
        out.push_str(&format!(
            "  {{\"fx\": {}, \"fy\": {}, \"cx\": {}, \"cy\": {}, \"width\": {}, \"height\": {}, \"c2w\": [{}]}}",
            fmt17(p.fx),
            fmt17(p.fy),
            fmt17(p.cx),
            fmt17(p.cy),
            p.width,
            p.height,
            c2w.join(", ")
        ));
        out.push_str(if i + 1 < poses.len() { ",\n" } else { "\n" });
    }
    out.push(']');
    out.push('\n');
    out
}
