//! Unit-sphere helpers shared by the analytic and learning layers.

use crate::agent::dot;
use crate::error::{Error, Result};

const MIN_NORM: f64 = 1e-12;

/// Normalises `v` onto the unit sphere.
pub fn project_sphere(v: &[f64]) -> Result<Vec<f64>> {
    let norm = dot(v, v).sqrt();
    if !(norm >= MIN_NORM) {
        return Err(Error::DegenerateStep(norm));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// `(I - beta beta') v` for unit `beta`.
pub fn tangent_project(beta: &[f64], v: &[f64]) -> Vec<f64> {
    let c = dot(beta, v);
    v.iter().zip(beta).map(|(x, b)| x - c * b).collect()
}

/// `[cos theta, sin theta]`.
pub fn from_angle(theta: f64) -> Vec<f64> {
    vec![theta.cos(), theta.sin()]
}

/// Polar angle of a two-dimensional criterion.
pub fn angle_of(beta: &[f64]) -> f64 {
    beta[1].atan2(beta[0])
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `||a - b|| / ||b||`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    diff.sqrt() / norm(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projects_three_four() {
        let p = project_sphere(&[3.0, 4.0]).unwrap();
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn projection_is_idempotent() {
        let u = project_sphere(&[0.3, -1.2, 2.0]).unwrap();
        let again = project_sphere(&u).unwrap();
        for (a, b) in u.iter().zip(&again) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_vector_is_degenerate() {
        assert!(matches!(project_sphere(&[0.0, 0.0]), Err(Error::DegenerateStep(_))));
    }

    #[test]
    fn tangent_is_orthogonal() {
        let beta = project_sphere(&[1.0, 2.0, -0.5]).unwrap();
        let t = tangent_project(&beta, &[0.4, -3.0, 1.0]);
        assert!(dot(&beta, &t).abs() < 1e-15);
    }
}
