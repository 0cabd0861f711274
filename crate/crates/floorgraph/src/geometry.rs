//! Refinement mathematics for the localization pipeline: descriptor
//! correspondence matching, normalized-DLT homography estimation, rotation
//! extraction, circular median, and DBSCAN clustering.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::graph::FloorGraph;

/// Wraps an angle in degrees into `[-180, 180)`.
pub fn wrap_degrees(angle: f64) -> f64 {
    angle - 360.0 * ((angle + 180.0) / 360.0).floor()
}

/// A pixel position, `(m, n)` = (row, column).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelPoint {
    pub m: f64,
    pub n: f64,
}

impl PixelPoint {
    pub fn new(m: f64, n: f64) -> Self {
        Self { m, n }
    }
}

/// A matched pair of pixel positions: a node of the query graph and the
/// corresponding node of a retrieved (base) graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub local: PixelPoint,
    pub base: PixelPoint,
}

/// 3x3 projective transform mapping base-image pixels to query-image pixels,
/// normalized so the bottom-right entry is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    matrix: Matrix3<f64>,
}

impl Homography {
    pub fn from_matrix(matrix: Matrix3<f64>) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    /// Applies the transform to a point; returns `None` when the point maps
    /// to infinity.
    pub fn apply(&self, p: PixelPoint) -> Option<PixelPoint> {
        let h = &self.matrix;
        let w = h[(2, 0)] * p.m + h[(2, 1)] * p.n + h[(2, 2)];
        if w.abs() < 1e-15 {
            return None;
        }
        Some(PixelPoint::new(
            (h[(0, 0)] * p.m + h[(0, 1)] * p.n + h[(0, 2)]) / w,
            (h[(1, 0)] * p.m + h[(1, 1)] * p.n + h[(1, 2)]) / w,
        ))
    }
}

/// Homography plus the RMS reprojection error of the correspondences it was
/// estimated from.
#[derive(Debug, Clone)]
pub struct HomographyEstimate {
    pub homography: Homography,
    pub rms_error: f64,
}

/// Matches query-graph nodes to base-graph nodes by descriptor distance with
/// a nearest/second-nearest ratio test. One-to-one: when two query nodes
/// claim the same base node, the lower-distance match wins. Deterministic.
pub fn match_descriptors(query: &FloorGraph, base: &FloorGraph, ratio: f64) -> Vec<Correspondence> {
    // best candidate per base node: (query index, distance)
    let mut claimed: HashMap<usize, (usize, f64)> = HashMap::new();
    for (qi, qnode) in query.nodes().iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut best_j = usize::MAX;
        let mut second = f64::INFINITY;
        for (bj, bnode) in base.nodes().iter().enumerate() {
            let d = qnode.descriptor_distance_sq(bnode).sqrt();
            if d < best {
                second = best;
                best = d;
                best_j = bj;
            } else if d < second {
                second = d;
            }
        }
        if best_j == usize::MAX || !(best < ratio * second) {
            continue;
        }
        match claimed.get(&best_j) {
            Some(&(_, held)) if held <= best => {}
            _ => {
                claimed.insert(best_j, (qi, best));
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = claimed.iter().map(|(&bj, &(qi, _))| (qi, bj)).collect();
    pairs.sort_unstable();
    pairs
        .into_iter()
        .map(|(qi, bj)| {
            let q = &query.nodes()[qi];
            let b = &base.nodes()[bj];
            Correspondence {
                local: PixelPoint::new(q.m as f64, q.n as f64),
                base: PixelPoint::new(b.m as f64, b.n as f64),
            }
        })
        .collect()
}

/// Hartley normalization: translate the centroid to the origin and scale so
/// the mean distance from it is sqrt(2).
fn normalizing_transform(points: &[PixelPoint]) -> Result<Matrix3<f64>> {
    let k = points.len() as f64;
    let cm = points.iter().map(|p| p.m).sum::<f64>() / k;
    let cn = points.iter().map(|p| p.n).sum::<f64>() / k;
    let mean_dist = points
        .iter()
        .map(|p| ((p.m - cm).powi(2) + (p.n - cn).powi(2)).sqrt())
        .sum::<f64>()
        / k;
    if mean_dist < 1e-12 {
        return Err(Error::DegenerateConfiguration(
            "correspondence points coincide".into(),
        ));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cm, 0.0, s, -s * cn, 0.0, 0.0, 1.0))
}

fn transform_point(t: &Matrix3<f64>, p: PixelPoint) -> PixelPoint {
    PixelPoint::new(
        t[(0, 0)] * p.m + t[(0, 1)] * p.n + t[(0, 2)],
        t[(1, 0)] * p.m + t[(1, 1)] * p.n + t[(1, 2)],
    )
}

/// Estimates the homography mapping base points to local points with the
/// normalized direct linear transform: Hartley normalization of both sets,
/// homogeneous least squares via the smallest singular direction of the
/// 2k x 9 design matrix, denormalization, and scaling so `H[2,2] = 1`.
pub fn estimate_homography(correspondences: &[Correspondence]) -> Result<HomographyEstimate> {
    let k = correspondences.len();
    if k < 4 {
        return Err(Error::TooFewMatches(k));
    }
    let base_points: Vec<PixelPoint> = correspondences.iter().map(|c| c.base).collect();
    let local_points: Vec<PixelPoint> = correspondences.iter().map(|c| c.local).collect();
    let t_base = normalizing_transform(&base_points)?;
    let t_local = normalizing_transform(&local_points)?;

    // Rows ordered h11..h33; source = normalized base, destination = local.
    let rows = (2 * k).max(9);
    let mut design = DMatrix::zeros(rows, 9);
    for (i, c) in correspondences.iter().enumerate() {
        let s = transform_point(&t_base, c.base);
        let d = transform_point(&t_local, c.local);
        let (x, y) = (s.m, s.n);
        let (u, v) = (d.m, d.n);
        let r0 = 2 * i;
        design[(r0, 0)] = -x;
        design[(r0, 1)] = -y;
        design[(r0, 2)] = -1.0;
        design[(r0, 6)] = u * x;
        design[(r0, 7)] = u * y;
        design[(r0, 8)] = u;
        let r1 = r0 + 1;
        design[(r1, 3)] = -x;
        design[(r1, 4)] = -y;
        design[(r1, 5)] = -1.0;
        design[(r1, 6)] = v * x;
        design[(r1, 7)] = v * y;
        design[(r1, 8)] = v;
    }

    let svd = design.svd(true, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::DegenerateConfiguration("svd failed".into()))?;
    let singular = &svd.singular_values;
    let largest = singular[0];
    // The solution is unique only if the nullspace is one-dimensional.
    let second_smallest = singular[singular.len() - 2];
    if largest <= 0.0 || second_smallest < 1e-10 * largest {
        return Err(Error::DegenerateConfiguration(
            "design matrix is rank deficient".into(),
        ));
    }
    let h_vec = v_t.row(v_t.nrows() - 1);
    let h_norm = Matrix3::new(
        h_vec[0], h_vec[1], h_vec[2], h_vec[3], h_vec[4], h_vec[5], h_vec[6], h_vec[7], h_vec[8],
    );

    let t_local_inv = t_local
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("normalization not invertible".into()))?;
    let mut h = t_local_inv * h_norm * t_base;

    let scale = h[(2, 2)];
    if scale.abs() < 1e-12 {
        return Err(Error::DegenerateConfiguration(
            "homography has zero projective scale".into(),
        ));
    }
    h /= scale;
    let det2 = h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)];
    if det2.abs() < 1e-12 {
        return Err(Error::DegenerateConfiguration(
            "upper-left 2x2 block is singular".into(),
        ));
    }

    let homography = Homography::from_matrix(h);
    let mut sq_sum = 0.0;
    for c in correspondences {
        match homography.apply(c.base) {
            Some(p) => {
                sq_sum += (p.m - c.local.m).powi(2) + (p.n - c.local.n).powi(2);
            }
            None => {
                return Err(Error::DegenerateConfiguration(
                    "correspondence maps to infinity".into(),
                ))
            }
        }
    }
    Ok(HomographyEstimate {
        homography,
        rms_error: (sq_sum / k as f64).sqrt(),
    })
}

/// Rotation angle of the upper-left 2x2 block via its polar decomposition
/// (the nearest rotation matrix in the Frobenius norm), in `[-180, 180)`.
pub fn rotation_from_homography(h: &Homography) -> Result<f64> {
    let m = h.matrix();
    let (a, b, c, d) = (m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]);
    if (a * d - b * c).abs() < 1e-12 {
        return Err(Error::DegenerateConfiguration(
            "upper-left 2x2 block is singular".into(),
        ));
    }
    let trace = a + d;
    let skew = c - b;
    if trace.abs() < 1e-15 && skew.abs() < 1e-15 {
        return Err(Error::DegenerateConfiguration(
            "nearest rotation is undefined".into(),
        ));
    }
    Ok(wrap_degrees(skew.atan2(trace).to_degrees()))
}

/// Circular median of angles in degrees: offsets are taken relative to the
/// circular mean direction, the ordinary median of the wrapped offsets is
/// mapped back to `[-180, 180)`. Even counts average the two middle offsets.
pub fn circular_median(angles: &[f64]) -> f64 {
    assert!(!angles.is_empty(), "circular_median of an empty list");
    let (sin_sum, cos_sum) = angles.iter().fold((0.0, 0.0), |(s, c), &a| {
        let r = a.to_radians();
        (s + r.sin(), c + r.cos())
    });
    let mean = sin_sum.atan2(cos_sum).to_degrees();
    let mut offsets: Vec<f64> = angles.iter().map(|&a| wrap_degrees(a - mean)).collect();
    offsets.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mid = offsets.len() / 2;
    let median_offset = if offsets.len() % 2 == 1 {
        offsets[mid]
    } else {
        0.5 * (offsets[mid - 1] + offsets[mid])
    };
    wrap_degrees(mean + median_offset)
}

/// Density-based clustering. Returns one label per point: `-1` for noise,
/// otherwise a cluster index in order of discovery. A core point has at
/// least `min_pts` neighbors within `eps` (inclusive, counting itself);
/// border points join the first discovered core's cluster.
pub fn dbscan(points: &[(f64, f64)], eps: f64, min_pts: usize) -> Vec<i64> {
    assert!(eps > 0.0, "eps must be positive");
    assert!(min_pts >= 1, "min_pts must be at least 1");
    let n = points.len();
    let eps_sq = eps * eps;
    let neighbors_of = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| {
                let dx = points[i].0 - points[j].0;
                let dy = points[i].1 - points[j].1;
                dx * dx + dy * dy <= eps_sq
            })
            .collect()
    };

    const UNVISITED: i64 = -2;
    const NOISE: i64 = -1;
    let mut labels = vec![UNVISITED; n];
    let mut cluster = 0i64;
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        let seed_neighbors = neighbors_of(i);
        if seed_neighbors.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        labels[i] = cluster;
        let mut queue: VecDeque<usize> = seed_neighbors.into();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = cluster; // border point
                continue;
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            let nj = neighbors_of(j);
            if nj.len() >= min_pts {
                queue.extend(nj);
            }
        }
        cluster += 1;
    }
    labels
}

/// Arithmetic mean of the largest cluster's points; ties broken by the
/// lowest cluster label. Errors when every point is noise.
pub fn largest_cluster_mean(points: &[(f64, f64)], labels: &[i64]) -> Result<(f64, f64)> {
    let mut sizes: HashMap<i64, usize> = HashMap::new();
    for &l in labels {
        if l >= 0 {
            *sizes.entry(l).or_insert(0) += 1;
        }
    }
    let best = sizes
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(&l, _)| l)
        .ok_or(Error::NoCluster)?;
    let members: Vec<&(f64, f64)> = points
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == best)
        .map(|(p, _)| p)
        .collect();
    let k = members.len() as f64;
    Ok((
        members.iter().map(|p| p.0).sum::<f64>() / k,
        members.iter().map(|p| p.1).sum::<f64>() / k,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{FloorGraph, Keypoint, ViewId, DESCRIPTOR_LEN};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_descriptor(rng: &mut ChaCha8Rng) -> Vec<f32> {
        let v: Vec<f64> = (0..DESCRIPTOR_LEN).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| (x / norm) as f32).collect()
    }

    fn graph_with_descriptors(coords: &[(f32, f32)], descriptors: Vec<Vec<f32>>, id: u64) -> FloorGraph {
        let nodes: Vec<Keypoint> = coords
            .iter()
            .zip(descriptors)
            .map(|(&(m, n), d)| Keypoint::new(m, n, 1.0, d))
            .collect();
        FloorGraph::from_nodes(nodes, ViewId(id)).unwrap()
    }

    #[test]
    fn identical_graphs_match_node_for_node() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let coords: Vec<(f32, f32)> = (0..12).map(|i| (i as f32 * 10.0, i as f32 * 5.0)).collect();
        let descs: Vec<Vec<f32>> = (0..12).map(|_| unit_descriptor(&mut rng)).collect();
        let g = graph_with_descriptors(&coords, descs, 0);
        let matches = match_descriptors(&g, &g, 0.75);
        assert_eq!(matches.len(), g.node_count());
        for c in &matches {
            assert_eq!(c.local, c.base);
        }
    }

    #[test]
    fn disjoint_descriptors_barely_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let coords: Vec<(f32, f32)> = (0..30).map(|i| (i as f32, i as f32)).collect();
        let d1: Vec<Vec<f32>> = (0..30).map(|_| unit_descriptor(&mut rng)).collect();
        let d2: Vec<Vec<f32>> = (0..30).map(|_| unit_descriptor(&mut rng)).collect();
        let a = graph_with_descriptors(&coords, d1, 0);
        let b = graph_with_descriptors(&coords, d2, 1);
        let matches = match_descriptors(&a, &b, 0.75);
        // Random unit vectors in 128 dimensions are nearly equidistant, so
        // the ratio test rejects almost everything.
        assert!(matches.len() <= 3, "got {} spurious matches", matches.len());
    }

    #[test]
    fn shared_features_match_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shared: Vec<Vec<f32>> = (0..2).map(|_| unit_descriptor(&mut rng)).collect();
        let mut d1: Vec<Vec<f32>> = (0..4).map(|_| unit_descriptor(&mut rng)).collect();
        let mut d2: Vec<Vec<f32>> = (0..4).map(|_| unit_descriptor(&mut rng)).collect();
        d1.extend(shared.clone());
        d2.extend(shared);
        let coords1: Vec<(f32, f32)> = (0..6).map(|i| (i as f32 * 3.0, 0.0)).collect();
        let coords2: Vec<(f32, f32)> = (0..6).map(|i| (0.0, i as f32 * 3.0)).collect();
        let a = graph_with_descriptors(&coords1, d1, 0);
        let b = graph_with_descriptors(&coords2, d2, 1);
        let matches = match_descriptors(&a, &b, 0.75);
        assert_eq!(matches.len(), 2);
        for c in &matches {
            assert!(c.local.n == 0.0 && c.base.m == 0.0);
            assert_eq!(c.local.m / 3.0, c.base.n / 3.0);
        }
    }

    #[test]
    fn identity_points_give_identity_homography() {
        let pts = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0), (3.0, 7.0)];
        let corr: Vec<Correspondence> = pts
            .iter()
            .map(|&(m, n)| Correspondence {
                local: PixelPoint::new(m, n),
                base: PixelPoint::new(m, n),
            })
            .collect();
        let est = estimate_homography(&corr).unwrap();
        let h = est.homography.matrix();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(h[(i, j)], expected, epsilon = 1e-9);
            }
        }
        assert!(est.rms_error < 1e-9);
    }

    fn rotated_correspondences(theta_deg: f64, points: &[(f64, f64)], center: (f64, f64)) -> Vec<Correspondence> {
        let t = theta_deg.to_radians();
        points
            .iter()
            .map(|&(m, n)| {
                let dm = m - center.0;
                let dn = n - center.1;
                let rm = center.0 + t.cos() * dm - t.sin() * dn;
                let rn = center.1 + t.sin() * dm + t.cos() * dn;
                Correspondence {
                    local: PixelPoint::new(rm, rn),
                    base: PixelPoint::new(m, n),
                }
            })
            .collect()
    }

    #[test]
    fn rotation_about_center_is_recovered() {
        let points = [(100.0, 50.0), (700.0, 80.0), (300.0, 500.0), (650.0, 420.0), (50.0, 300.0)];
        let corr = rotated_correspondences(30.0, &points, (304.0, 404.0));
        let est = estimate_homography(&corr).unwrap();
        let angle = rotation_from_homography(&est.homography).unwrap();
        assert_relative_eq!(angle, 30.0, epsilon = 1e-9);
    }

    #[test]
    fn too_few_matches_is_an_error() {
        let corr = rotated_correspondences(10.0, &[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], (0.0, 0.0));
        assert!(matches!(estimate_homography(&corr), Err(Error::TooFewMatches(3))));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let corr: Vec<Correspondence> = pts
            .iter()
            .map(|&(m, n)| Correspondence {
                local: PixelPoint::new(m + 1.0, n),
                base: PixelPoint::new(m, n),
            })
            .collect();
        assert!(matches!(
            estimate_homography(&corr),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn rotation_of_identity_is_zero() {
        let h = Homography::from_matrix(Matrix3::identity());
        assert_eq!(rotation_from_homography(&h).unwrap(), 0.0);
    }

    #[test]
    fn rotation_extraction_handles_pure_rotation() {
        let t = 30.0_f64.to_radians();
        let h = Homography::from_matrix(Matrix3::new(
            t.cos(), -t.sin(), 0.0,
            t.sin(), t.cos(), 0.0,
            0.0, 0.0, 1.0,
        ));
        assert_relative_eq!(rotation_from_homography(&h).unwrap(), 30.0, epsilon = 1e-9);
    }

    #[test]
    fn anisotropic_scale_has_zero_rotation() {
        let h = Homography::from_matrix(Matrix3::new(
            2.0, 0.0, 0.0,
            0.0, 1.0, 0.0,
            0.0, 0.0, 1.0,
        ));
        assert_eq!(rotation_from_homography(&h).unwrap(), 0.0);
    }

    #[test]
    fn singular_block_is_degenerate() {
        let h = Homography::from_matrix(Matrix3::new(
            1.0, 2.0, 0.0,
            2.0, 4.0, 0.0,
            0.0, 0.0, 1.0,
        ));
        assert!(matches!(
            rotation_from_homography(&h),
            Err(Error::DegenerateConfiguration(_))
        ));
    }

    #[test]
    fn rotation_is_scale_invariant() {
        let t = 73.0_f64.to_radians();
        for s in [0.1, 2.5, 40.0] {
            let h = Homography::from_matrix(Matrix3::new(
                s * t.cos(), -s * t.sin(), 3.0,
                s * t.sin(), s * t.cos(), -8.0,
                0.0, 0.0, 1.0,
            ));
            assert_relative_eq!(rotation_from_homography(&h).unwrap(), 73.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn circular_median_filters_outlier() {
        assert_relative_eq!(circular_median(&[10.0, 11.0, 11.5, 12.0, 180.0]), 11.5, epsilon = 1e-9);
    }

    #[test]
    fn circular_median_of_single_angle() {
        assert_eq!(circular_median(&[42.5]), 42.5);
    }

    #[test]
    fn circular_median_handles_wraparound() {
        // 179, -179 and 180 all point essentially the same way; the median
        // must stay there (the wrapped representative of 180 is -180).
        let med = circular_median(&[179.0, -179.0, 180.0]);
        assert!(wrap_degrees(med - 180.0).abs() < 1e-9, "got {med}");
    }

    #[test]
    fn circular_median_even_count_averages() {
        assert_relative_eq!(circular_median(&[10.0, 20.0]), 15.0, epsilon = 1e-9);
    }

    #[test]
    fn wrap_degrees_range() {
        assert_eq!(wrap_degrees(180.0), -180.0);
        assert_eq!(wrap_degrees(-180.0), -180.0);
        assert_eq!(wrap_degrees(540.0), -180.0);
        assert_relative_eq!(wrap_degrees(190.0), -170.0, epsilon = 1e-12);
        assert_eq!(wrap_degrees(0.0), 0.0);
    }

    #[test]
    fn identical_points_form_one_cluster() {
        let pts = vec![(1.0, 1.0); 5];
        let labels = dbscan(&pts, 0.5, 2);
        assert_eq!(labels, vec![0, 0, 0, 0, 0]);
    }

    #[test]
    fn single_point_is_noise() {
        assert_eq!(dbscan(&[(0.0, 0.0)], 0.5, 2), vec![-1]);
    }

    #[test]
    fn separated_blobs_form_two_clusters() {
        let mut pts = vec![(0.0, 0.0), (0.1, 0.0), (0.0, 0.1)];
        pts.extend([(10.0, 10.0), (10.1, 10.0), (10.0, 10.1)]);
        let labels = dbscan(&pts, 1.0, 2);
        assert_eq!(labels, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn largest_cluster_mean_basics() {
        let pts = [(0.0, 0.0), (0.0, 2.0)];
        let labels = [0, 0];
        assert_eq!(largest_cluster_mean(&pts, &labels).unwrap(), (0.0, 1.0));

        let pts2 = [(0.0, 0.0), (0.0, 1.0), (0.0, 2.0), (10.0, 0.0), (10.0, 1.0)];
        let labels2 = [0, 0, 0, 1, 1];
        assert_eq!(largest_cluster_mean(&pts2, &labels2).unwrap(), (0.0, 1.0));

        let labels3 = [-1, -1];
        assert!(matches!(largest_cluster_mean(&pts, &labels3), Err(Error::NoCluster)));
    }

    #[test]
    fn largest_cluster_tie_prefers_lowest_label() {
        let pts = [(0.0, 0.0), (0.0, 1.0), (10.0, 0.0), (10.0, 1.0)];
        let labels = [0, 0, 1, 1];
        assert_eq!(largest_cluster_mean(&pts, &labels).unwrap(), (0.0, 0.5));
    }

    /// Order-independent DBSCAN oracle: core flags from neighbor counts,
    /// clusters as connected components of the core-core eps graph numbered
    /// by their smallest core index, border points joining the lowest
    /// eligible cluster.
    fn dbscan_oracle(points: &[(f64, f64)], eps: f64, min_pts: usize) -> Vec<i64> {
        let n = points.len();
        let eps_sq = eps * eps;
        let near = |i: usize, j: usize| {
            let dx = points[i].0 - points[j].0;
            let dy = points[i].1 - points[j].1;
            dx * dx + dy * dy <= eps_sq
        };
        let core: Vec<bool> = (0..n)
            .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
            .collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let root = find(parent, parent[i]);
                parent[i] = root;
            }
            parent[i]
        }
        let mut parent: Vec<usize> = (0..n).collect();
        for i in 0..n {
            for j in 0..n {
                if core[i] && core[j] && near(i, j) {
                    let ri = find(&mut parent, i);
                    let rj = find(&mut parent, j);
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
        let mut cluster_of_root: HashMap<usize, i64> = HashMap::new();
        let mut next = 0i64;
        let mut labels = vec![-1i64; n];
        for i in 0..n {
            if core[i] {
                let root = find(&mut parent, i);
                let id = *cluster_of_root.entry(root).or_insert_with(|| {
                    let id = next;
                    next += 1;
                    id
                });
                labels[i] = id;
            }
        }
        for i in 0..n {
            if !core[i] {
                labels[i] = (0..n)
                    .filter(|&j| core[j] && near(i, j))
                    .map(|j| labels[j])
                    .min()
                    .unwrap_or(-1);
            }
        }
        labels
    }

    proptest! {
        #[test]
        fn dbscan_matches_bruteforce_oracle(
            pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 0..50),
            eps in 0.2f64..2.0,
            min_pts in 1usize..5,
        ) {
            let got = dbscan(&pts, eps, min_pts);
            let expected = dbscan_oracle(&pts, eps, min_pts);
            prop_assert_eq!(got, expected);
        }

        #[test]
        fn circular_median_is_rotation_equivariant(
            angles in proptest::collection::vec(-90.0f64..90.0, 1..9),
            shift in -360.0f64..360.0,
        ) {
            // Angles from a half-circle keep the circular mean well defined
            // under any shift; near-uniform spreads make it ambiguous.
            let base = circular_median(&angles);
            let shifted: Vec<f64> = angles.iter().map(|a| wrap_degrees(a + shift)).collect();
            let got = circular_median(&shifted);
            let diff = wrap_degrees(got - base - shift);
            prop_assert!(
                diff.abs() < 1e-6 || (diff.abs() - 360.0).abs() < 1e-6,
                "diff {}", diff
            );
        }

        #[test]
        fn random_homographies_are_recovered(
            seed in 0u64..5000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Affine-dominant random homography with a gentle projective row.
            let h_true = Matrix3::<f64>::new(
                rng.gen_range(0.5..1.5), rng.gen_range(-0.4..0.4), rng.gen_range(-40.0..40.0),
                rng.gen_range(-0.4..0.4), rng.gen_range(0.5..1.5), rng.gen_range(-40.0..40.0),
                rng.gen_range(-1e-4..1e-4), rng.gen_range(-1e-4..1e-4), 1.0,
            );
            let det = h_true.determinant();
            prop_assume!(det.abs() > 1e-6);
            let det2 = h_true[(0, 0)] * h_true[(1, 1)] - h_true[(0, 1)] * h_true[(1, 0)];
            prop_assume!(det2.abs() > 1e-3);
            let h = Homography::from_matrix(h_true);
            let pts: Vec<(f64, f64)> = (0..8)
                .map(|_| (rng.gen_range(0.0..600.0), rng.gen_range(0.0..800.0)))
                .collect();
            let corr: Vec<Correspondence> = pts
                .iter()
                .filter_map(|&(m, n)| {
                    let base = PixelPoint::new(m, n);
                    h.apply(base).map(|local| Correspondence { local, base })
                })
                .collect();
            prop_assume!(corr.len() >= 6);
            let est = match estimate_homography(&corr) {
                Ok(est) => est,
                // Nearly collinear random samples are legitimately rejected.
                Err(Error::DegenerateConfiguration(_)) => return Ok(()),
                Err(e) => panic!("unexpected error: {e}"),
            };
            let got = est.homography.matrix();
            for i in 0..3 {
                for j in 0..3 {
                    let scale = h_true[(i, j)].abs().max(1.0);
                    prop_assert!(
                        (got[(i, j)] - h_true[(i, j)]).abs() <= 1e-6 * scale,
                        "H[{},{}] {} vs {}", i, j, got[(i, j)], h_true[(i, j)]
                    );
                }
            }
        }
    }
}
