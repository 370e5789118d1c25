use super::Optim3dError;
use crate::mvgeom::{CameraPose, Intrinsics, OrbitParams};

/// Cameras on a circle around a shared look-at point.
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitTrajectory {
    pub poses: Vec<CameraPose>,
    /// Radians, strictly increasing.
    pub azimuths: Vec<f64>,
    pub elevation: f64,
    pub radius: f64,
    pub target: [f64; 3],
}

impl OrbitTrajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// `n` poses with azimuths `2πk/n`, looking at the origin.
pub fn orbit_sampler(n: usize, elevation: f64, radius: f64, intr: Intrinsics) -> Result<OrbitTrajectory, Optim3dError> {
    orbit_sampler_with(n, elevation, radius, 0.0, [0.0; 3], intr)
}

/// Azimuths `phase + 2πk/n` with `phase ∈ [0, 2π/n)`.
pub fn orbit_sampler_with(
    n: usize,
    elevation: f64,
    radius: f64,
    phase: f64,
    target: [f64; 3],
    intr: Intrinsics,
) -> Result<OrbitTrajectory, Optim3dError> {
    if n < 2 {
        return Err(Optim3dError::InvalidArgument(format!("orbit needs at least 2 views, got {n}")));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Optim3dError::InvalidArgument(format!("orbit radius must be positive, got {radius}")));
    }
    let step = std::f64::consts::TAU / n as f64;
    if !(0.0..step).contains(&phase) {
        return Err(Optim3dError::InvalidArgument(format!("phase {phase} outside [0, {step})")));
    }
    let azimuths: Vec<f64> = (0..n).map(|k| phase + k as f64 * step).collect();
    let poses = azimuths
        .iter()
        .map(|&azimuth| {
            CameraPose::orbit(
                intr,
                &OrbitParams {
                    azimuth,
                    elevation,
                    radius,
                    target,
                },
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OrbitTrajectory {
        poses,
        azimuths,
        elevation,
        radius,
        target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvgeom::fundamental_matrix;

    #[test]
    fn four_views_on_the_equator() {
        let t = orbit_sampler(4, 0.0, 2.5, Intrinsics::from_fov(32, 32, 40.0)).unwrap();
        let deg: Vec<f64> = t.azimuths.iter().map(|a| a.to_degrees()).collect();
        for (d, e) in deg.iter().zip([0.0, 90.0, 180.0, 270.0]) {
            assert!((d - e).abs() < 1e-9);
        }
        for p in &t.poses {
            assert!((p.center.norm() - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn consecutive_pairs_are_non_degenerate() {
        let t = orbit_sampler(100, 0.3, 3.0, Intrinsics::from_fov(32, 32, 40.0)).unwrap();
        for k in 0..t.len() {
            let f = fundamental_matrix(&t.poses[k], &t.poses[(k + 1) % t.len()]).unwrap();
            let sv = f.m.svd(false, false).singular_values;
            let mut s: Vec<f64> = sv.iter().cloned().collect();
            s.sort_by(|a, b| b.total_cmp(a));
            assert!(s[1] > 1e-6 && s[2] < 1e-9);
        }
        assert!(orbit_sampler(1, 0.0, 1.0, Intrinsics::from_fov(8, 8, 40.0)).is_err());
    }
}
