//! Camera models, Plücker ray maps, fundamental matrices, epipolar lines and
//! bands, and the row-approximation diagnostic.

mod camera;
mod epipolar;

pub use camera::{
    cameras_to_json, parse_cameras_json, CameraPose, CameraRecord, Intrinsics, OrbitParams,
};
pub use epipolar::{
    epipolar_band, epipolar_line, fundamental_matrix, fundamental_matrix_between,
    line_to_token_space, row_approximation_error, token_center_pixel, token_stride,
    FundamentalMatrix, DEGENERATE_BASELINE,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid camera pose: {0}")]
    InvalidPose(String),
    #[error("degenerate camera pair: centers {baseline:e} apart")]
    DegenerateCameraPair { baseline: f64 },
    #[error("epipolar line is undefined (pixel coincides with the epipole)")]
    EpipoleAtInfinityDegenerate,
    #[error("malformed cameras document: {0}")]
    MalformedCameras(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Per-pixel Plücker coordinates `(d, o × d)`, `height × width × 6`.
#[derive(Clone, Debug, PartialEq)]
pub struct PluckerRayMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl PluckerRayMap {
    pub fn get(&self, row: usize, col: usize) -> [f64; 6] {
        let i = (row * self.width + col) * 6;
        let mut out = [0.0; 6];
        out.copy_from_slice(&self.data[i..i + 6]);
        out
    }
}

/// Plücker ray map on an `h × w` grid of pixel centers covering the image.
pub fn compute_plucker(pose: &CameraPose, h: usize, w: usize) -> Result<PluckerRayMap, GeometryError> {
    pose.validate()?;
    if h == 0 || w == 0 {
        return Err(GeometryError::InvalidArgument(format!(
            "ray map size must be at least 1x1, got {h}x{w}"
        )));
    }
    let mut data = Vec::with_capacity(h * w * 6);
    for v in 0..h {
        for u in 0..w {
            let d = pose.pixel_ray(u, v, w, h);
            let m = pose.center.cross(&d);
            data.extend_from_slice(&[d.x, d.y, d.z, m.x, m.y, m.z]);
        }
    }
    Ok(PluckerRayMap {
        height: h,
        width: w,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn unit_intr(w: usize, h: usize) -> Intrinsics {
        Intrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: w,
            height: h,
        }
    }

    fn centered_3x3() -> Intrinsics {
        Intrinsics {
            fx: 2.0,
            fy: 2.0,
            cx: 1.5,
            cy: 1.5,
            width: 3,
            height: 3,
        }
    }

    #[test]
    fn plucker_ray_through_origin_has_zero_moment() {
        let pose = CameraPose::new(centered_3x3(), Matrix3::identity(), Vector3::zeros()).unwrap();
        let map = compute_plucker(&pose, 3, 3).unwrap();
        let r = map.get(1, 1);
        assert_eq!(r, [0.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn plucker_moment_from_offset_center() {
        let pose =
            CameraPose::new(centered_3x3(), Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let r = compute_plucker(&pose, 3, 3).unwrap().get(1, 1);
        // (1,0,0) × (0,0,-1) = (0,1,0)
        let expect = [0.0, 0.0, -1.0, 0.0, 1.0, 0.0];
        for (a, b) in r.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn plucker_rejects_bad_rotation() {
        let mut pose = CameraPose::new(centered_3x3(), Matrix3::identity(), Vector3::zeros()).unwrap();
        pose.rotation[(0, 0)] = 1.1;
        assert!(matches!(
            compute_plucker(&pose, 2, 2),
            Err(GeometryError::InvalidPose(_))
        ));
    }

    #[test]
    fn pure_x_translation_gives_skew_fundamental() {
        let a = CameraPose::new(unit_intr(4, 4), Matrix3::identity(), Vector3::zeros()).unwrap();
        let b = CameraPose::new(unit_intr(4, 4), Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0))
            .unwrap();
        let f = fundamental_matrix(&a, &b).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let expect = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -s, 0.0, s, 0.0);
        let close = |m: &Matrix3<f64>| (m - expect).amax() < 1e-12;
        assert!(close(&f.m) || close(&-f.m), "got {}", f.m);
        let line = epipolar_line(&f, [0.3, 2.5]).unwrap();
        // y = v, i.e. (0, ±1, ∓v)
        assert!(line[0].abs() < 1e-12);
        assert!((line[1].abs() - 1.0).abs() < 1e-12);
        assert!((line[2] + line[1] * 2.5).abs() < 1e-12);
    }

    #[test]
    fn coincident_centers_are_degenerate() {
        let a = CameraPose::new(unit_intr(4, 4), Matrix3::identity(), Vector3::zeros()).unwrap();
        assert!(matches!(
            fundamental_matrix(&a, &a),
            Err(GeometryError::DegenerateCameraPair { .. })
        ));
    }

    #[test]
    fn band_on_horizontal_line() {
        let band = epipolar_band([0.0, 1.0, -2.0], 8, 8, 0.75);
        assert_eq!(band, (0..8).map(|c| (2, c)).collect::<Vec<_>>());
        assert!(epipolar_band([0.0, 1.0, -40.0], 8, 8, 0.75).is_empty());
    }

    #[test]
    fn token_space_conversion_matches_pixel_distance() {
        // pixel line y = 24 on a 64px image with 16px tokens: token-space row 1.0
        let l = line_to_token_space([0.0, 1.0, -24.0], (16.0, 16.0));
        assert!((l[2] + 1.0).abs() < 1e-12 && (l[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orbit_round_trip() {
        let intr = Intrinsics::from_fov(64, 64, 40.0);
        let p = OrbitParams {
            azimuth: 0.7,
            elevation: 0.3,
            radius: 3.0,
            target: [0.0, 0.0, 0.0],
        };
        let pose = CameraPose::orbit(intr, &p).unwrap();
        let q = pose.orbit_params();
        assert!((q.azimuth - 0.7).abs() < 1e-12);
        assert!((q.elevation - 0.3).abs() < 1e-12);
        assert!((q.radius - 3.0).abs() < 1e-12);
        // target projects to the principal point
        let (u, v) = pose.project(&Vector3::zeros()).unwrap();
        assert!((u - 32.0).abs() < 1e-9 && (v - 32.0).abs() < 1e-9);
    }

    #[test]
    fn cameras_json_round_trip_is_exact() {
        let intr = Intrinsics::from_fov(64, 48, 37.0);
        let poses: Vec<CameraPose> = (0..3)
            .map(|i| {
                CameraPose::orbit(
                    intr,
                    &OrbitParams {
                        azimuth: 0.4 + i as f64,
                        elevation: 0.1 * i as f64,
                        radius: 2.7,
                        target: [0.1, -0.2, 0.05],
                    },
                )
                .unwrap()
            })
            .collect();
        let text = cameras_to_json(&poses);
        let back = parse_cameras_json(&text).unwrap();
        for (a, b) in poses.iter().zip(&back) {
            assert!((a.rotation - b.rotation).amax() <= 1e-12);
            assert!((a.center - b.center).amax() <= 1e-12);
            assert_eq!(a.fx, b.fx);
        }
    }

    #[test]
    fn cameras_json_rejects_bad_last_row() {
        let text = r#"[{"fx":1,"fy":1,"cx":0,"cy":0,"width":2,"height":2,
            "c2w":[1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,1,1]}]"#;
        assert!(matches!(parse_cameras_json(text), Err(GeometryError::InvalidPose(_))));
    }
}
