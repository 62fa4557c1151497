//! Anchor self-calibration from inter-anchor ranges: classical MDS for a
//! starting layout, then Levenberg-Marquardt on the pairwise distances in a
//! fixed gauge (anchor 0 at the origin, anchor 1 on +x, anchor 2 at y > 0).

use std::io::Read;

use nalgebra::{DMatrix, DVector, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use super::{Anchor, AnchorConstellation, LocError, Venue};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Expected range noise; residual RMS above 5× this fails the calibration.
    pub range_sigma: f64,
    /// Surveyed mount heights. When given, ranges are reduced to the
    /// horizontal plane before solving.
    pub heights: Option<Vec<f64>>,
    pub venue: Venue,
    pub max_iterations: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            range_sigma: 0.02,
            heights: None,
            venue: Venue::default(),
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub constellation: AnchorConstellation,
    pub residual_rms: f64,
    pub iterations: usize,
}

fn failed(msg: impl Into<String>) -> LocError {
    LocError::CalibrationFailed(msg.into())
}

/// Pairs `(i, j, horizontal distance)` with `i < j`; NaN entries are missing.
fn edges(ranges: &DMatrix<f64>, n: usize, heights: Option<&[f64]>) -> Result<Vec<(usize, usize, f64)>, LocError> {
    if ranges.nrows() != n || ranges.ncols() != n {
        return Err(LocError::InvalidInput("range matrix must be n × n"));
    }
    if let Some(h) = heights {
        if h.len() != n {
            return Err(LocError::InvalidInput("one height per anchor is required"));
        }
    }
    let mut out = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (ranges[(i, j)], ranges[(j, i)]);
            let r = match (a.is_nan(), b.is_nan()) {
                (true, true) => continue,
                (false, true) => a,
                (true, false) => b,
                (false, false) => 0.5 * (a + b),
            };
            if !(r.is_finite() && r >= 0.0) {
                return Err(LocError::InvalidInput("ranges must be finite and >= 0"));
            }
            let d = match heights {
                Some(h) => (r * r - (h[i] - h[j]).powi(2)).max(0.0).sqrt(),
                None => r,
            };
            out.push((i, j, d));
        }
    }
    Ok(out)
}

/// Classical multidimensional scaling into the plane. Missing distances are
/// filled with the mean of the known squared distances.
pub fn classical_mds(n: usize, edges: &[(usize, usize, f64)]) -> Result<Vec<Vector2<f64>>, LocError> {
    let mean_sq = edges.iter().map(|e| e.2 * e.2).sum::<f64>() / edges.len().max(1) as f64;
    let mut d2 = DMatrix::from_element(n, n, mean_sq);
    for i in 0..n {
        d2[(i, i)] = 0.0;
    }
    for &(i, j, d) in edges {
        d2[(i, j)] = d * d;
        d2[(j, i)] = d * d;
    }
    let c = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let b = -0.5 * &c * d2 * &c;
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l2 > 1e-9 * l1.abs().max(1e-12)) {
        return Err(failed("rank-deficient geometry: anchors are collinear"));
    }
    let (s1, s2) = (l1.sqrt(), l2.sqrt());
    Ok((0..n)
        .map(|i| {
            Vector2::new(
                eig.eigenvectors[(i, order[0])] * s1,
                eig.eigenvectors[(i, order[1])] * s2,
            )
        })
        .collect())
}

/// Moves a planar layout into the calibration gauge.
pub fn gauge_frame(points: &[Vector2<f64>]) -> Result<Vec<Vector2<f64>>, LocError> {
    if points.len() < 3 {
        return Err(LocError::InvalidInput("gauge needs at least 3 points"));
    }
    let o = points[0];
    let u = points[1] - o;
    let len = u.norm();
    if len < 1e-9 {
        return Err(failed("anchors 0 and 1 coincide"));
    }
    let (c, s) = (u.x / len, u.y / len);
    let mut out: Vec<Vector2<f64>> = points
        .iter()
        .map(|p| {
            let v = p - o;
            Vector2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
        })
        .collect();
    if out[2].y.abs() < 1e-9 * len {
        return Err(failed("anchor 2 is collinear with anchors 0 and 1"));
    }
    if out[2].y < 0.0 {
        for p in &mut out {
            p.y = -p.y;
        }
    }
    out[0] = Vector2::zeros();
    out[1].y = 0.0;
    Ok(out)
}

fn unpack(theta: &DVector<f64>, n: usize) -> Vec<Vector2<f64>> {
    let mut pts = vec![Vector2::zeros(); n];
    pts[1].x = theta[0];
    for k in 2..n {
        pts[k] = Vector2::new(theta[2 * k - 3], theta[2 * k - 2]);
    }
    pts
}

/// Column of `pts[k].x` in the parameter vector; `.y` follows it for k ≥ 2.
fn column(k: usize) -> Option<usize> {
    match k {
        0 => None,
        1 => Some(0),
        _ => Some(2 * k - 3),
    }
}

fn residuals(edges: &[(usize, usize, f64)], pts: &[Vector2<f64>]) -> DVector<f64> {
    DVector::from_iterator(
        edges.len(),
        edges.iter().map(|&(i, j, d)| d - (pts[i] - pts[j]).norm()),
    )
}

fn jacobian(edges: &[(usize, usize, f64)], pts: &[Vector2<f64>], params: usize) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(edges.len(), params);
    for (row, &(i, j, _)) in edges.iter().enumerate() {
        let diff = pts[i] - pts[j];
        let u = diff / diff.norm().max(1e-12);
        for (k, sign) in [(i, 1.0), (j, -1.0)] {
            if let Some(c) = column(k) {
                jac[(row, c)] = sign * u.x;
                if k >= 2 {
                    jac[(row, c + 1)] = sign * u.y;
                }
            }
        }
    }
    jac
}

pub fn calibrate_anchors(
    ranges: &DMatrix<f64>,
    n_anchors: usize,
    cfg: &CalibrationConfig,
) -> Result<Calibration, LocError> {
    if n_anchors < 4 {
        return Err(failed(format!("{n_anchors} anchors; at least 4 are required")));
    }
    let e = edges(ranges, n_anchors, cfg.heights.as_deref())?;
    let init = classical_mds(n_anchors, &e)?;
    refine(n_anchors, &e, &init, cfg)
}

/// Same as [`calibrate_anchors`] but starting from a caller-supplied layout.
pub fn calibrate_anchors_from(
    ranges: &DMatrix<f64>,
    n_anchors: usize,
    cfg: &CalibrationConfig,
    initial: &[Vector2<f64>],
) -> Result<Calibration, LocError> {
    if n_anchors < 4 {
        return Err(failed(format!("{n_anchors} anchors; at least 4 are required")));
    }
    if initial.len() != n_anchors {
        return Err(LocError::InvalidInput("one initial position per anchor is required"));
    }
    let e = edges(ranges, n_anchors, cfg.heights.as_deref())?;
    refine(n_anchors, &e, initial, cfg)
}

fn refine(
    n: usize,
    edges: &[(usize, usize, f64)],
    initial: &[Vector2<f64>],
    cfg: &CalibrationConfig,
) -> Result<Calibration, LocError> {
    let params = 2 * n - 3;
    if edges.len() < params {
        return Err(failed(format!(
            "{} ranges cannot fix {params} coordinates",
            edges.len()
        )));
    }
    let mut degree = vec![0usize; n];
    for &(i, j, _) in edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    if degree.iter().any(|&d| d < 2) {
        return Err(failed("an anchor has fewer than 2 measured ranges"));
    }

    let start = gauge_frame(initial)?;
    let mut theta = DVector::zeros(params);
    theta[0] = start[1].x;
    for k in 2..n {
        theta[2 * k - 3] = start[k].x;
        theta[2 * k - 2] = start[k].y;
    }

    let mut pts = unpack(&theta, n);
    let mut r = residuals(edges, &pts);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    for it in 1..=cfg.max_iterations {
        iterations = it;
        let jac = jacobian(edges, &pts, params);
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        let mut step_norm = 0.0;
        while lambda < 1e12 {
            let mut a = jtj.clone();
            for d in 0..params {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let cand = &theta + &step;
            let cand_pts = unpack(&cand, n);
            let cand_r = residuals(edges, &cand_pts);
            let cand_cost = cand_r.norm_squared();
            if cand_cost <= cost {
                step_norm = step.norm();
                theta = cand;
                pts = cand_pts;
                r = cand_r;
                cost = cand_cost;
                lambda = (lambda * 0.1).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || step_norm < 1e-12 * (1.0 + theta.norm()) {
            break;
        }
    }

    let jac = jacobian(edges, &pts, params);
    let eig = SymmetricEigen::new(jac.transpose() * &jac);
    let hi = eig.eigenvalues.max();
    let lo = eig.eigenvalues.min();
    if !(lo > 1e-12 * hi) {
        return Err(failed("rank-deficient geometry"));
    }

    if pts[1].x < 0.0 {
        pts.iter_mut().for_each(|p| p.x = -p.x);
    }
    if pts[2].y < 0.0 {
        pts.iter_mut().for_each(|p| p.y = -p.y);
    }
    let residual_rms = (cost / edges.len() as f64).sqrt();
    let limit = 5.0 * cfg.range_sigma.max(1e-6);
    if residual_rms > limit {
        return Err(failed(format!(
            "residual RMS {residual_rms:.4} m exceeds {limit:.4} m"
        )));
    }
    let anchors = pts
        .iter()
        .enumerate()
        .map(|(i, p)| Anchor {
            id: i as u16,
            x: p.x,
            y: p.y,
            z: cfg.heights.as_ref().map_or(0.0, |h| h[i]),
        })
        .collect();
    Ok(Calibration {
        constellation: AnchorConstellation {
            venue: cfg.venue,
            anchors,
        },
        residual_rms,
        iterations,
    })
}

/// Reads an edge list with header `a,b,range_m` into an n × n matrix, NaN
/// where no range was measured.
pub fn read_ranges_csv<R: Read>(input: R) -> Result<(DMatrix<f64>, usize), LocError> {
    #[derive(Deserialize)]
    struct Row {
        a: usize,
        b: usize,
        range_m: f64,
    }
    let mut rows = Vec::new();
    for rec in csv::Reader::from_reader(input).deserialize::<Row>() {
        rows.push(rec.map_err(|e| LocError::Format(e.to_string()))?);
    }
    let n = rows.iter().map(|r| r.a.max(r.b) + 1).max().unwrap_or(0);
    let mut m = DMatrix::from_element(n, n, f64::NAN);
    for r in rows {
        if r.a == r.b {
            return Err(LocError::Format(format!("self range for anchor {}", r.a)));
        }
        m[(r.a, r.b)] = r.range_m;
        m[(r.b, r.a)] = r.range_m;
    }
    Ok((m, n))
}

/// Exact 3D inter-anchor ranges of a constellation.
pub fn range_matrix(c: &AnchorConstellation) -> DMatrix<f64> {
    let n = c.anchors.len();
    DMatrix::from_fn(n, n, |i, j| {
        (c.anchors[i].position() - c.anchors[j].position()).norm()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> Vec<Vector2<f64>> {
        vec![
            Vector2::new(0.0, 0.0),
            Vector2::new(6.0, 0.0),
            Vector2::new(6.0, 6.0),
            Vector2::new(0.0, 6.0),
        ]
    }

    fn planar_ranges(pts: &[Vector2<f64>]) -> DMatrix<f64> {
        let n = pts.len();
        DMatrix::from_fn(n, n, |i, j| (pts[i] - pts[j]).norm())
    }

    #[test]
    fn square_is_recovered_exactly() {
        let truth = square();
        let cal = calibrate_anchors(&planar_ranges(&truth), 4, &CalibrationConfig::default()).unwrap();
        for (a, t) in cal.constellation.anchors.iter().zip(&truth) {
            assert!((a.x - t.x).abs() < 1e-6 && (a.y - t.y).abs() < 1e-6, "{a:?}");
        }
        assert!(cal.residual_rms < 1e-9);
    }

    #[test]
    fn default_layout_with_heights() {
        let c = AnchorConstellation::default_venue();
        let heights: Vec<f64> = c.anchors.iter().map(|a| a.z).collect();
        let cfg = CalibrationConfig {
            heights: Some(heights),
            ..Default::default()
        };
        let cal = calibrate_anchors(&range_matrix(&c), 8, &cfg).unwrap();
        let truth: Vec<_> = c.anchors.iter().map(|a| Vector2::new(a.x, a.y)).collect();
        let want = gauge_frame(&truth).unwrap();
        for (a, w) in cal.constellation.anchors.iter().zip(&want) {
            assert!((Vector2::new(a.x, a.y) - w).norm() < 1e-6);
        }
    }

    #[test]
    fn three_anchors_fail() {
        let m = planar_ranges(&square()[..3]);
        assert!(matches!(
            calibrate_anchors(&m, 3, &CalibrationConfig::default()),
            Err(LocError::CalibrationFailed(_))
        ));
    }

    #[test]
    fn collinear_anchors_fail() {
        let pts: Vec<_> = (0..5).map(|i| Vector2::new(i as f64, 0.0)).collect();
        assert!(matches!(
            calibrate_anchors(&planar_ranges(&pts), 5, &CalibrationConfig::default()),
            Err(LocError::CalibrationFailed(_))
        ));
    }

    #[test]
    fn inconsistent_ranges_fail_residual_check() {
        let mut m = planar_ranges(&square());
        m[(0, 2)] += 1.0;
        m[(2, 0)] += 1.0;
        let cfg = CalibrationConfig {
            range_sigma: 0.01,
            ..Default::default()
        };
        assert!(matches!(
            calibrate_anchors(&m, 4, &cfg),
            Err(LocError::CalibrationFailed(_))
        ));
    }

    #[test]
    fn missing_range_tolerated() {
        let c = AnchorConstellation::default_venue();
        let pts: Vec<_> = c.anchors.iter().map(|a| Vector2::new(a.x, a.y)).collect();
        let mut m = planar_ranges(&pts);
        m[(0, 3)] = f64::NAN;
        m[(3, 0)] = f64::NAN;
        let cal = calibrate_anchors(&m, 8, &CalibrationConfig::default()).unwrap();
        let want = gauge_frame(&pts).unwrap();
        for (a, w) in cal.constellation.anchors.iter().zip(&want) {
            assert!((Vector2::new(a.x, a.y) - w).norm() < 1e-6);
        }
    }

    #[test]
    fn different_starts_agree_in_gauge() {
        let c = AnchorConstellation::default_venue();
        let pts: Vec<_> = c.anchors.iter().map(|a| Vector2::new(a.x, a.y)).collect();
        let m = planar_ranges(&pts);
        let cfg = CalibrationConfig::default();
        let want = gauge_frame(&pts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let start: Vec<_> = pts
                .iter()
                .map(|p| p + Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
                .collect();
            let cal = calibrate_anchors_from(&m, 8, &cfg, &start).unwrap();
            for (a, w) in cal.constellation.anchors.iter().zip(&want) {
                assert!((Vector2::new(a.x, a.y) - w).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn ranges_csv() {
        let text = "a,b,range_m\n0,1,6\n0,2,8.485281374238571\n1,2,6\n";
        let (m, n) = read_ranges_csv(text.as_bytes()).unwrap();
        assert_eq!(n, 3);
        assert_eq!(m[(1, 0)], 6.0);
        assert!(m[(0, 0)].is_nan());
    }
}
