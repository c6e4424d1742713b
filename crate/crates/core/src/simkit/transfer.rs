//! Rescaling odometry velocities into a reconstruction's coordinate frame.

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Root of the summed squared distances of `points` from their centroid.
pub fn spread(points: &[Vec3]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let c = points.iter().sum::<Vec3>() / points.len() as f64;
    points.iter().map(|p| (p - c).norm_squared()).sum::<f64>().sqrt()
}

/// Scale camera-frame velocities from a source trajectory to a destination trajectory of the
/// same frames. Linear velocities are multiplied by `spread(dst) / spread(src)`; angular
/// velocities do not depend on scale and are returned unchanged.
pub fn transfer_velocities(
    linear: &[Vec3],
    angular: &[Vec3],
    positions_src: &[Vec3],
    positions_dst: &[Vec3],
) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    if positions_src.len() != positions_dst.len() || positions_src.len() < 2 {
        return Err(Error::invalid(format!(
            "velocity transfer needs equal position counts of at least 2 (got {} and {})",
            positions_src.len(),
            positions_dst.len()
        )));
    }
    if linear.len() != angular.len() {
        return Err(Error::invalid("velocity transfer: linear and angular velocity counts differ"));
    }
    let s_src = spread(positions_src);
    if !(s_src > 0.0) {
        return Err(Error::ScaleUndefined);
    }
    let ratio = spread(positions_dst) / s_src;
    Ok((linear.iter().map(|v| v * ratio).collect(), angular.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3_exp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))).collect()
    }

    #[test]
    fn identity_double_and_rigid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = random_points(&mut rng, 10);
        let lin = random_points(&mut rng, 10);
        let ang = random_points(&mut rng, 10);

        let (l, a) = transfer_velocities(&lin, &ang, &src, &src).unwrap();
        assert_eq!(l, lin);
        assert_eq!(a, ang);

        let center = Vec3::new(4.0, -1.0, 2.0);
        let dilated: Vec<Vec3> = src.iter().map(|p| center + 2.0 * (p - center)).collect();
        let (l, _) = transfer_velocities(&lin, &ang, &src, &dilated).unwrap();
        for (x, y) in l.iter().zip(&lin) {
            assert!((x - 2.0 * y).norm() <= 1e-12 * y.norm().max(1.0));
        }

        let r = so3_exp(&Vec3::new(0.7, -1.1, 0.4));
        let t = Vec3::new(10.0, -3.0, 5.0);
        let moved: Vec<Vec3> = src.iter().map(|p| r * p + t).collect();
        let (l, a) = transfer_velocities(&lin, &ang, &src, &moved).unwrap();
        for (x, y) in l.iter().zip(&lin) {
            assert!((x - y).norm() < 1e-12 * y.norm().max(1.0));
        }
        assert_eq!(a, ang);
    }

    #[test]
    fn degenerate_inputs() {
        let same = vec![Vec3::new(1.0, 2.0, 3.0); 4];
        let dst = vec![Vec3::zeros(); 4];
        let v = vec![Vec3::x(); 4];
        assert!(transfer_velocities(&v, &v, &same, &dst).is_err());
        assert!(transfer_velocities(&v, &v, &same[..1], &dst[..1]).is_err());
        assert!(transfer_velocities(&v, &v, &same, &dst[..3]).is_err());
    }

    #[test]
    fn spread_is_root_sum_of_squares() {
        let p = [Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)];
        assert!((spread(&p) - 2f64.sqrt()).abs() < 1e-15);
    }
}
