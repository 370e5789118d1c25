use nalgebra::{Matrix3, Vector3};

use super::{CameraPose, GeometryError};

/// Camera centers closer than this have no epipolar geometry.
pub const DEGENERATE_BASELINE: f64 = 1e-9;

/// Rank-2, Frobenius-normalized fundamental matrix mapping pixels of
/// `view_a` to epipolar lines in `view_b`: `x_bᵀ · m · x_a = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct FundamentalMatrix {
    pub m: Matrix3<f64>,
    pub view_a: usize,
    pub view_b: usize,
    /// `(width, height)` of view a and view b in pixels.
    pub size_a: (usize, usize),
    pub size_b: (usize, usize),
}

impl FundamentalMatrix {
    pub fn smallest_singular_value(&self) -> f64 {
        let sv = self.m.singular_values();
        sv.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Homogeneous left null vector (epipole in view b), unit norm.
    pub fn epipole_b(&self) -> Vector3<f64> {
        let svd = self.m.transpose().svd(false, true);
        let v_t = svd.v_t.expect("svd v_t");
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        v_t.row(imin).transpose().normalize()
    }
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Fundamental matrix between two posed views, indices 0 → 1.
pub fn fundamental_matrix(
    pose_a: &CameraPose,
    pose_b: &CameraPose,
) -> Result<FundamentalMatrix, GeometryError> {
    fundamental_matrix_between(0, pose_a, 1, pose_b)
}

pub fn fundamental_matrix_between(
    view_a: usize,
    pose_a: &CameraPose,
    view_b: usize,
    pose_b: &CameraPose,
) -> Result<FundamentalMatrix, GeometryError> {
    pose_a.validate()?;
    pose_b.validate()?;
    let baseline = (pose_a.center - pose_b.center).norm();
    if !(baseline > DEGENERATE_BASELINE) {
        return Err(GeometryError::DegenerateCameraPair { baseline });
    }
    let ra = pose_a.cv_rotation();
    let rb = pose_b.cv_rotation();
    let r_rel = rb.transpose() * ra;
    let t = rb.transpose() * (pose_a.center - pose_b.center);
    let e = skew(&t) * r_rel;
    let ka_inv = pose_a.k_matrix().try_inverse().ok_or_else(|| {
        GeometryError::InvalidPose("intrinsics of view a are singular".into())
    })?;
    let kb_inv = pose_b.k_matrix().try_inverse().ok_or_else(|| {
        GeometryError::InvalidPose("intrinsics of view b are singular".into())
    })?;
    let f = kb_inv.transpose() * e * ka_inv;

    // project onto rank 2, then normalize
    let svd = f.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let mut s = svd.singular_values;
    let imin = (0..3).fold(0, |m, i| if s[i] < s[m] { i } else { m });
    s[imin] = 0.0;
    let mut m = u * Matrix3::from_diagonal(&s) * v_t;
    let norm = m.norm();
    m /= norm;
    // deterministic sign: largest-magnitude entry positive
    let big = m.iter().cloned().fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
    if big < 0.0 {
        m = -m;
    }
    Ok(FundamentalMatrix {
        m,
        view_a,
        view_b,
        size_a: (pose_a.width, pose_a.height),
        size_b: (pose_b.width, pose_b.height),
    })
}

/// Epipolar line `(a, b, c)` in view-b pixel coordinates for a view-a pixel,
/// scaled so that `a² + b² = 1`.
pub fn epipolar_line(f: &FundamentalMatrix, pixel: [f64; 2]) -> Result<[f64; 3], GeometryError> {
    let l = f.m * Vector3::new(pixel[0], pixel[1], 1.0);
    let n = (l.x * l.x + l.y * l.y).sqrt();
    if n < 1e-12 {
        return Err(GeometryError::EpipoleAtInfinityDegenerate);
    }
    Ok([l.x / n, l.y / n, l.z / n])
}

/// Pixel size of one token along x and y when a `width × height` image is
/// covered by an `h_f × w_f` token grid.
pub fn token_stride(size: (usize, usize), h_f: usize, w_f: usize) -> (f64, f64) {
    (size.0 as f64 / w_f as f64, size.1 as f64 / h_f as f64)
}

/// Pixel-space center of token `(row, col)`.
pub fn token_center_pixel(row: usize, col: usize, stride: (f64, f64)) -> [f64; 2] {
    [stride.0 * (col as f64 + 0.5), stride.1 * (row as f64 + 0.5)]
}

/// Rewrites a pixel-space line in token-index space, where token `(r, c)`
/// sits at `(c, r)`. The result is normalized so distances are in token units.
pub fn line_to_token_space(line: [f64; 3], stride: (f64, f64)) -> [f64; 3] {
    let (sx, sy) = stride;
    let a = line[0] * sx;
    let b = line[1] * sy;
    let c = line[2] + 0.5 * (line[0] * sx + line[1] * sy);
    let n = (a * a + b * b).sqrt();
    if n < 1e-300 {
        return [0.0, 0.0, c];
    }
    [a / n, b / n, c / n]
}

/// Tokens whose centers lie within `eps` of a token-space line, row-major.
pub fn epipolar_band(line: [f64; 3], h_f: usize, w_f: usize, eps: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let [a, b, c] = line;
    let n = (a * a + b * b).sqrt();
    if !(n > 0.0) {
        return out;
    }
    for r in 0..h_f {
        for col in 0..w_f {
            let d = (a * col as f64 + b * r as f64 + c).abs() / n;
            if d <= eps {
                out.push((r, col));
            }
        }
    }
    out
}

/// Largest vertical gap, in token rows, between a token and the epipolar
/// line it induces in an adjacent view, measured at the token's column.
/// Adjacent pairs follow the given order (a ring when there are three or
/// more views), in both directions.
pub fn row_approximation_error(
    poses: &[CameraPose],
    h_f: usize,
    w_f: usize,
) -> Result<f64, GeometryError> {
    if poses.len() < 2 {
        return Err(GeometryError::InvalidArgument(
            "row approximation needs at least two poses".into(),
        ));
    }
    let n = poses.len();
    let mut pairs: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    if n >= 3 {
        pairs.push((n - 1, 0));
    }
    let mut worst: f64 = 0.0;
    for (i, j) in pairs {
        for (a, b) in [(i, j), (j, i)] {
            let f = fundamental_matrix_between(a, &poses[a], b, &poses[b])?;
            let sa = token_stride(f.size_a, h_f, w_f);
            let sb = token_stride(f.size_b, h_f, w_f);
            for r in 0..h_f {
                for c in 0..w_f {
                    let dev = match epipolar_line(&f, token_center_pixel(r, c, sa)) {
                        Ok(line) => {
                            let [la, lb, lc] = line_to_token_space(line, sb);
                            if lb.abs() < 1e-12 {
                                h_f as f64
                            } else {
                                let v = -(la * c as f64 + lc) / lb;
                                (v - r as f64).abs()
                            }
                        }
                        Err(_) => h_f as f64,
                    };
                    worst = worst.max(dev);
                }
            }
        }
    }
    Ok(worst)
}
