use nalgebra::{Matrix2, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AnchorConstellation, LocError};

/// A range difference `‖tag − a‖ − ‖tag − b‖` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdoaMeasurement {
    pub anchor_a: u16,
    pub anchor_b: u16,
    pub dd: f64,
    pub sigma: f64,
}

pub const GATE_SIGMAS: f64 = 5.0;

pub fn simulate_tdoa<R: Rng + ?Sized>(
    constellation: &AnchorConstellation,
    pair: (u16, u16),
    tag: Vector3<f64>,
    sigma: f64,
    rng: &mut R,
) -> Result<TdoaMeasurement, LocError> {
    if pair.0 == pair.1 {
        return Err(LocError::InvalidInput("anchor pair must be distinct"));
    }
    if !(tag.iter().all(|v| v.is_finite())) {
        return Err(LocError::InvalidInput("tag position must be finite"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(LocError::InvalidInput("sigma must be finite and >= 0"));
    }
    let pa = constellation.position(pair.0)?;
    let pb = constellation.position(pair.1)?;
    let mut dd = (tag - pa).norm() - (tag - pb).norm();
    if sigma > 0.0 {
        dd += Normal::new(0.0, sigma)
            .expect("sigma checked above")
            .sample(rng);
    }
    Ok(TdoaMeasurement {
        anchor_a: pair.0,
        anchor_b: pair.1,
        dd,
        sigma,
    })
}

/// True when `|dd|` is physically plausible for the pair's separation.
pub fn passes_gate(constellation: &AnchorConstellation, m: &TdoaMeasurement) -> bool {
    match (
        constellation.position(m.anchor_a),
        constellation.position(m.anchor_b),
    ) {
        (Ok(a), Ok(b)) => m.dd.abs() <= (a - b).norm() + GATE_SIGMAS * m.sigma,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdoaSolverConfig {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub max_condition: f64,
}

impl Default for TdoaSolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 25,
            step_tolerance: 1e-6,
            max_condition: 1e8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdoaFix {
    pub position: Vector2<f64>,
    pub covariance: Matrix2<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub residual_rms: f64,
    pub used: usize,
    pub rejected: usize,
}

struct Row {
    a: Vector3<f64>,
    b: Vector3<f64>,
    dd: f64,
    w: f64,
}

impl Row {
    fn predict(&self, q: Vector3<f64>) -> (f64, Vector2<f64>) {
        let ua = q - self.a;
        let ub = q - self.b;
        let na = ua.norm().max(1e-12);
        let nb = ub.norm().max(1e-12);
        let grad = Vector2::new(ua.x / na - ub.x / nb, ua.y / na - ub.y / nb);
        (na - nb, grad)
    }
}

fn cost(rows: &[Row], p: Vector2<f64>, z: f64) -> f64 {
    let q = Vector3::new(p.x, p.y, z);
    rows.iter()
        .map(|r| {
            let e = r.dd - r.predict(q).0;
            r.w * e * e
        })
        .sum()
}

fn normal_equations(rows: &[Row], p: Vector2<f64>, z: f64) -> (Matrix2<f64>, Vector2<f64>) {
    let q = Vector3::new(p.x, p.y, z);
    let mut a = Matrix2::zeros();
    let mut g = Vector2::zeros();
    for r in rows {
        let (h, j) = r.predict(q);
        a += r.w * j * j.transpose();
        g += r.w * (r.dd - h) * j;
    }
    (a, g)
}

fn condition(a: &Matrix2<f64>) -> f64 {
    let tr = a.trace();
    let det = a.determinant();
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let hi = 0.5 * tr + disc;
    let lo = 0.5 * tr - disc;
    if !(lo > 0.0) || !hi.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn solve_position_tdoa(
    constellation: &AnchorConstellation,
    measurements: &[TdoaMeasurement],
    initial_guess: Vector2<f64>,
    tag_z: f64,
) -> Result<TdoaFix, LocError> {
    solve_position_tdoa_with(
        constellation,
        measurements,
        initial_guess,
        tag_z,
        &TdoaSolverConfig::default(),
    )
}

/// Weighted Gauss-Newton on the range-difference residuals with the tag
/// height held fixed. Steps are halved while they fail to reduce the cost.
pub fn solve_position_tdoa_with(
    constellation: &AnchorConstellation,
    measurements: &[TdoaMeasurement],
    initial_guess: Vector2<f64>,
    tag_z: f64,
    cfg: &TdoaSolverConfig,
) -> Result<TdoaFix, LocError> {
    if !(initial_guess.x.is_finite() && initial_guess.y.is_finite() && tag_z.is_finite()) {
        return Err(LocError::InvalidInput("initial guess must be finite"));
    }
    let mut rows = Vec::with_capacity(measurements.len());
    let mut rejected = 0;
    for m in measurements {
        let a = constellation.position(m.anchor_a)?;
        let b = constellation.position(m.anchor_b)?;
        if m.anchor_a == m.anchor_b || !m.dd.is_finite() || !passes_gate(constellation, m) {
            rejected += 1;
            continue;
        }
        let s = m.sigma.max(1e-6);
        rows.push(Row {
            a,
            b,
            dd: m.dd,
            w: 1.0 / (s * s),
        });
    }
    let no_fix = |reason: &str, iterations: usize, condition: f64| LocError::NoFix {
        reason: reason.to_string(),
        iterations,
        condition,
    };
    if rows.len() < 3 {
        return Err(no_fix("fewer than 3 usable measurements", 0, f64::NAN));
    }

    let mut p = initial_guess;
    let mut iterations = 0;
    let mut converged = false;
    for k in 1..=cfg.max_iterations {
        iterations = k;
        let (a, g) = normal_equations(&rows, p, tag_z);
        let c = condition(&a);
        if c > cfg.max_condition {
            return Err(no_fix("ill-conditioned geometry", k, c));
        }
        let Some(inv) = a.try_inverse() else {
            return Err(no_fix("singular normal equations", k, c));
        };
        let mut step = inv * g;
        let current = cost(&rows, p, tag_z);
        let mut accepted = false;
        for _ in 0..30 {
            if cost(&rows, p + step, tag_z) <= current {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = true;
            break;
        }
        p += step;
        if step.norm() < cfg.step_tolerance {
            converged = true;
            break;
        }
    }

    let venue = &constellation.venue;
    let reach = venue.width.max(venue.depth);
    let outside = (p - venue.clamp(p)).norm();
    if !(p.x.is_finite() && p.y.is_finite()) || outside > reach {
        return Err(no_fix("diverged", iterations, f64::NAN));
    }
    let (a, _) = normal_equations(&rows, p, tag_z);
    let c = condition(&a);
    if c > cfg.max_condition {
        return Err(no_fix("ill-conditioned geometry", iterations, c));
    }
    let covariance = a
        .try_inverse()
        .ok_or_else(|| no_fix("singular normal equations", iterations, c))?;
    let q = Vector3::new(p.x, p.y, tag_z);
    let ss: f64 = rows
        .iter()
        .map(|r| (r.dd - r.predict(q).0).powi(2))
        .sum();
    Ok(TdoaFix {
        position: p,
        covariance: 0.5 * (covariance + covariance.transpose()),
        iterations,
        converged,
        residual_rms: (ss / rows.len() as f64).sqrt(),
        used: rows.len(),
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::localization::{Anchor, Venue};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn simulate_ring(
        c: &AnchorConstellation,
        tag: Vector3<f64>,
        sigma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<TdoaMeasurement> {
        c.ring_pairs()
            .into_iter()
            .map(|p| simulate_tdoa(c, p, tag, sigma, rng).unwrap())
            .collect()
    }

    #[test]
    fn equidistant_tag_has_zero_difference() {
        let c = AnchorConstellation::default_venue();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // anchors 0 and 4 sit at the same height on the short edges x = 0
        let m = simulate_tdoa(&c, (0, 4), Vector3::new(2.0, 6.0, 0.3), 0.0, &mut rng).unwrap();
        assert_eq!(m.dd, 0.0);
    }

    #[test]
    fn collinear_tag_beyond_a() {
        let c = AnchorConstellation::default_venue();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = c.position(0).unwrap();
        let b = c.position(6).unwrap();
        let tag = a + (a - b) * 0.5;
        let m = simulate_tdoa(&c, (0, 6), tag, 0.0, &mut rng).unwrap();
        assert!((m.dd + (a - b).norm()).abs() < 1e-12);
    }

    #[test]
    fn noiseless_difference_bounded_by_separation() {
        let c = AnchorConstellation::default_venue();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let tag = Vector3::new(
                rng.random_range(-3.0..9.0),
                rng.random_range(-3.0..15.0),
                rng.random_range(0.0..3.0),
            );
            let i = rng.random_range(0..8u16);
            let j = (i + rng.random_range(1..8u16)) % 8;
            let m = simulate_tdoa(&c, (i, j), tag, 0.0, &mut rng).unwrap();
            let sep = (c.position(i).unwrap() - c.position(j).unwrap()).norm();
            assert!(m.dd.abs() <= sep + 1e-12);
        }
    }

    #[test]
    fn errors() {
        let c = AnchorConstellation::default_venue();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Vector3::new(1.0, 1.0, 0.0);
        assert!(matches!(
            simulate_tdoa(&c, (0, 99), t, 0.1, &mut rng),
            Err(LocError::UnknownAnchor(99))
        ));
        assert!(simulate_tdoa(&c, (1, 1), t, 0.1, &mut rng).is_err());
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let c = AnchorConstellation::default_venue();
        let t = Vector3::new(2.0, 3.0, 0.0);
        let a = simulate_ring(&c, t, 0.15, &mut ChaCha8Rng::seed_from_u64(5));
        let b = simulate_ring(&c, t, 0.15, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn inverse_crime() {
        let c = AnchorConstellation::default_venue();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let tag = Vector3::new(
                rng.random_range(0.2..5.8),
                rng.random_range(0.2..11.8),
                rng.random_range(0.0..2.0),
            );
            let ms = simulate_ring(&c, tag, 0.0, &mut rng);
            let fix = solve_position_tdoa(&c, &ms, c.venue.center(), tag.z).unwrap();
            assert!((fix.position - tag.xy()).norm() < 1e-6, "{fix:?} vs {tag}");
            assert!(fix.converged);
        }
    }

    #[test]
    fn covariance_scales_with_sigma() {
        let c = AnchorConstellation::default_venue();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tag = Vector3::new(3.0, 6.0, 0.0);
        let mut ms = simulate_ring(&c, tag, 0.0, &mut rng);
        for m in &mut ms {
            m.sigma = 0.1;
        }
        let f1 = solve_position_tdoa(&c, &ms, c.venue.center(), 0.0).unwrap();
        for m in &mut ms {
            m.sigma = 0.2;
        }
        let f2 = solve_position_tdoa(&c, &ms, c.venue.center(), 0.0).unwrap();
        assert!((f2.covariance - 4.0 * f1.covariance).norm() < 1e-12);
        assert!(f1.covariance[(0, 0)] > 0.0 && f1.covariance.determinant() > 0.0);
    }

    #[test]
    fn two_pairs_of_collinear_anchors_is_no_fix() {
        let c = AnchorConstellation {
            venue: Venue::default(),
            anchors: (0..4)
                .map(|i| Anchor {
                    id: i,
                    x: 0.0,
                    y: 3.0 * i as f64,
                    z: 0.0,
                })
                .collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tag = Vector3::new(2.0, 2.0, 0.0);
        let ms: Vec<_> = [(0, 1), (1, 2)]
            .into_iter()
            .map(|p| simulate_tdoa(&c, p, tag, 0.0, &mut rng).unwrap())
            .collect();
        assert!(matches!(
            solve_position_tdoa(&c, &ms, Vector2::new(1.0, 1.0), 0.0),
            Err(LocError::NoFix { .. })
        ));
        // three pairs on a line still leave the side of the line ambiguous
        let ms: Vec<_> = [(0, 1), (1, 2), (2, 3)]
            .into_iter()
            .map(|p| simulate_tdoa(&c, p, tag, 0.0, &mut rng).unwrap())
            .collect();
        assert!(matches!(
            solve_position_tdoa(&c, &ms, Vector2::new(0.0, 4.0), 0.0),
            Err(LocError::NoFix { .. })
        ));
    }

    #[test]
    fn implausible_measurements_are_gated() {
        let c = AnchorConstellation::default_venue();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tag = Vector3::new(2.5, 7.0, 0.0);
        let mut ms = simulate_ring(&c, tag, 0.0, &mut rng);
        ms[0].sigma = 0.01;
        ms[0].dd = 40.0;
        let fix = solve_position_tdoa(&c, &ms, c.venue.center(), 0.0).unwrap();
        assert_eq!(fix.rejected, 1);
        assert_eq!(fix.used, 7);
        assert!((fix.position - tag.xy()).norm() < 1e-6);
    }
}
