//! Autonomous-driving slice construction.
//!
//! The RSU builds a Gaussian similarity graph over vehicle positions, takes
//! the spectrum of its unnormalized Laplacian `D - C`, picks the cluster
//! count at the largest eigengap, clusters the spectral embedding with
//! k-means and snaps every cluster to the nearest eligible video vehicle.
//! Those vehicles become slice access points (APs); every other vehicle is
//! attached to its nearest AP. Plans are rebuilt every re-slice period.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scenario::{wrapped_distance, Position, Scenario, VehicleId};

/// Gaussian similarity matrix `c[k][q] = exp(-d(k, q)^2 / (2 sigma^2))`.
///
/// Entries lie in `[0, 1]`; pairs farther apart than about `38 sigma`
/// underflow to exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub entries: DMatrix<f64>,
    pub sigma: f64,
}

impl SimilarityMatrix {
    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }
}

pub fn gaussian_similarity(distance: f64, sigma: f64) -> f64 {
    (-(distance * distance) / (2.0 * sigma * sigma)).exp()
}

/// Build the similarity matrix of `positions` on a ring of `highway_length`.
pub fn similarity(positions: &[Position], sigma: f64, highway_length: f64) -> Result<SimilarityMatrix> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if positions.len() < 2 {
        return Err(Error::InvalidArgument("similarity needs at least two positions".into()));
    }
    let n = positions.len();
    let mut entries = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let c = gaussian_similarity(wrapped_distance(positions[i], positions[j], highway_length), sigma);
            entries[(i, j)] = c;
            entries[(j, i)] = c;
        }
    }
    Ok(SimilarityMatrix { entries, sigma })
}

/// Spectrum of the unnormalized Laplacian, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Column `e` is the eigenvector of `eigenvalues[e]`.
    pub eigenvectors: DMatrix<f64>,
    /// Diagonal of the degree matrix, `D[k][k] = sum_q c[k][q]`.
    pub degrees: Vec<f64>,
}

pub fn laplacian_matrix(c: &SimilarityMatrix) -> DMatrix<f64> {
    let n = c.len();
    let degrees: Vec<f64> = (0..n).map(|k| c.entries.row(k).sum()).collect();
    let mut l = -c.entries.clone();
    for k in 0..n {
        l[(k, k)] += degrees[k];
    }
    l
}

/// Eigen-decompose `L = D - C`.
pub fn laplacian(c: &SimilarityMatrix) -> SpectralDecomposition {
    let n = c.len();
    let degrees: Vec<f64> = (0..n).map(|k| c.entries.row(k).sum()).collect();
    let eigen = SymmetricEigen::new(laplacian_matrix(c));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[a].total_cmp(&eigen.eigenvalues[b]));
    let eigenvalues = order.iter().map(|&i| eigen.eigenvalues[i]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |r, col| eigen.eigenvectors[(r, order[col])]);
    SpectralDecomposition {
        eigenvalues,
        eigenvectors,
        degrees,
    }
}

/// Cluster count at the largest gap between consecutive ascending
/// eigenvalues: `argmax_e (z[e+1] - z[e])` over `e = 1..=e_max` (1-based),
/// ties going to the smaller `e`.
pub fn eigengap_count(eigenvalues: &[f64], e_max: usize) -> usize {
    assert!(eigenvalues.len() >= 2, "eigengap needs at least two eigenvalues");
    let e_max = e_max.clamp(1, eigenvalues.len() - 1);
    let mut best = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for e in 1..=e_max {
        let gap = eigenvalues[e] - eigenvalues[e - 1];
        if gap > best_gap {
            best_gap = gap;
            best = e;
        }
    }
    best
}

/// Video vehicles whose wideband V2I SINR clears `threshold_db`, by id.
pub fn eligible_aps(video_sinr_db: &[(VehicleId, f64)], threshold_db: f64) -> Vec<VehicleId> {
    let mut out: Vec<VehicleId> = video_sinr_db
        .iter()
        .filter(|(_, s)| *s >= threshold_db)
        .map(|(id, _)| *id)
        .collect();
    out.sort_unstable();
    out
}

/// Output of one re-slice.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessPointPlan {
    /// Selected APs, ascending id.
    pub access_points: Vec<VehicleId>,
    /// Every non-AP vehicle mapped to its AP.
    pub assignment: BTreeMap<VehicleId, VehicleId>,
    /// Eigengap cluster count.
    pub f: usize,
    pub valid_until_ms: u64,
    /// The smallest eigenvalues (up to `e_max + 1`), kept for diagnostics.
    pub eigenvalues: Vec<f64>,
}

impl AccessPointPlan {
    pub fn is_access_point(&self, id: VehicleId) -> bool {
        self.access_points.binary_search(&id).is_ok()
    }

    /// Vehicles served by `ap`, ascending id.
    pub fn members(&self, ap: VehicleId) -> Vec<VehicleId> {
        self.assignment.iter().filter(|(_, a)| **a == ap).map(|(v, _)| *v).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanParams {
    pub sigma: f64,
    /// Cap on the eigengap search range.
    pub e_max_cap: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iterations: usize,
    pub reslice_period_ms: u64,
}

impl Default for PlanParams {
    fn default() -> Self {
        PlanParams {
            sigma: 5.0,
            e_max_cap: 256,
            kmeans_restarts: 10,
            kmeans_max_iterations: 100,
            reslice_period_ms: 100,
        }
    }
}

/// Build the access-point plan for the current snapshot.
pub fn build_plan(
    scenario: &Scenario,
    eligible: &[VehicleId],
    params: &PlanParams,
    now_ms: u64,
    rng: &mut RngStream,
) -> Result<AccessPointPlan> {
    if eligible.is_empty() {
        return Err(Error::InvalidArgument("no eligible access-point candidates".into()));
    }
    let length = scenario.highway_length;
    let positions: Vec<Position> = scenario.vehicles.iter().map(|v| v.position).collect();
    let n = positions.len();
    let mut eligible: Vec<VehicleId> = eligible.to_vec();
    eligible.sort_unstable();
    eligible.dedup();

    let (f, eigenvalues, access_points) = if n < 2 {
        (1, Vec::new(), vec![eligible[0]])
    } else {
        let c = similarity(&positions, params.sigma, length)?;
        let spectrum = laplacian(&c);
        let e_max = params.e_max_cap.min(n - 1).max(1);
        let f = eigengap_count(&spectrum.eigenvalues, e_max);
        let kept = spectrum.eigenvalues[..=e_max].to_vec();
        let aps = if f >= eligible.len() {
            eligible.clone()
        } else {
            let embedding = spectrum.eigenvectors.columns(0, f).into_owned();
            let labels = kmeans(&embedding, f, params.kmeans_restarts, params.kmeans_max_iterations, rng);
            snap_clusters(&positions, &labels, f, &eligible, length)
        };
        (f, kept, aps)
    };

    let assignment = assign_to_nearest(scenario, &access_points);
    Ok(AccessPointPlan {
        access_points,
        assignment,
        f,
        valid_until_ms: now_ms + params.reslice_period_ms,
        eigenvalues,
    })
}

/// Attach each non-AP vehicle to the AP at minimum distance (maximum
/// similarity), ties to the lowest AP id.
pub fn assign_to_nearest(scenario: &Scenario, access_points: &[VehicleId]) -> BTreeMap<VehicleId, VehicleId> {
    let mut aps = access_points.to_vec();
    aps.sort_unstable();
    let mut assignment = BTreeMap::new();
    if aps.is_empty() {
        return assignment;
    }
    for v in &scenario.vehicles {
        if aps.binary_search(&v.id).is_ok() {
            continue;
        }
        let mut best = aps[0];
        let mut best_d = f64::INFINITY;
        for &ap in &aps {
            let d = scenario.distance(v.position, scenario.vehicles[ap as usize].position);
            if d < best_d {
                best_d = d;
                best = ap;
            }
        }
        assignment.insert(v.id, best);
    }
    assignment
}

/// Circular mean of ring coordinates plus the plain mean of `y`.
fn ring_centroid(points: &[Position], length: f64) -> Position {
    let tau = std::f64::consts::TAU;
    let (mut s, mut c, mut y) = (0.0, 0.0, 0.0);
    for p in points {
        let angle = tau * p.x / length;
        s += angle.sin();
        c += angle.cos();
        y += p.y;
    }
    let x = (s.atan2(c) / tau * length).rem_euclid(length);
    Position::new(x, y / points.len() as f64)
}

/// One AP per cluster: the not-yet-chosen eligible vehicle nearest the
/// cluster's geographic centroid. Clusters are visited in order of their
/// smallest member index so the result does not depend on label numbering.
fn snap_clusters(
    positions: &[Position],
    labels: &[usize],
    k: usize,
    eligible: &[VehicleId],
    length: f64,
) -> Vec<VehicleId> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    members.retain(|m| !m.is_empty());
    members.sort_by_key(|m| m[0]);

    let mut taken = vec![false; eligible.len()];
    let mut aps = Vec::with_capacity(members.len());
    for cluster in &members {
        let pts: Vec<Position> = cluster.iter().map(|&i| positions[i]).collect();
        let centre = ring_centroid(&pts, length);
        let mut best: Option<(f64, usize)> = None;
        for (slot, &id) in eligible.iter().enumerate() {
            if taken[slot] {
                continue;
            }
            let d = wrapped_distance(centre, positions[id as usize], length);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, slot));
            }
        }
        if let Some((_, slot)) = best {
            taken[slot] = true;
            aps.push(eligible[slot]);
        }
    }
    aps.sort_unstable();
    aps
}

/// Lloyd's k-means with k-means++ seeding; rows of `data` are points.
/// Returns the labels of the restart with the lowest inertia.
pub fn kmeans(data: &DMatrix<f64>, k: usize, restarts: usize, max_iterations: usize, rng: &mut RngStream) -> Vec<usize> {
    let n = data.nrows();
    let dim = data.ncols();
    assert!(k >= 1 && k <= n, "k-means needs 1 <= k <= n");
    // Row-major copy; nalgebra storage is column-major.
    let points: Vec<f64> = (0..n).flat_map(|i| (0..dim).map(move |d| (i, d))).map(|(i, d)| data[(i, d)]).collect();
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();

    let mut best_labels = vec![0; n];
    let mut best_inertia = f64::INFINITY;
    for _ in 0..restarts.max(1) {
        // k-means++ seeding.
        let mut centres: Vec<f64> = Vec::with_capacity(k * dim);
        let first = rng.random_range(0..n);
        centres.extend_from_slice(point(first));
        let mut nearest: Vec<f64> = (0..n).map(|i| dist2(point(i), point(first))).collect();
        for _ in 1..k {
            let total: f64 = nearest.iter().sum();
            let pick = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut chosen = n - 1;
                for (i, &w) in nearest.iter().enumerate() {
                    if target < w {
                        chosen = i;
                        break;
                    }
                    target -= w;
                }
                chosen
            } else {
                rng.random_range(0..n)
            };
            centres.extend_from_slice(point(pick));
            for (i, d) in nearest.iter_mut().enumerate() {
                *d = d.min(dist2(point(i), point(pick)));
            }
        }

        let mut labels = vec![usize::MAX; n];
        let mut inertia = 0.0;
        for _ in 0..max_iterations.max(1) {
            let mut changed = false;
            inertia = 0.0;
            for i in 0..n {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for c in 0..k {
                    let d = dist2(point(i), &centres[c * dim..(c + 1) * dim]);
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                inertia += best_d;
                if labels[i] != best {
                    labels[i] = best;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for i in 0..n {
                counts[labels[i]] += 1;
                for (s, x) in sums[labels[i] * dim..(labels[i] + 1) * dim].iter_mut().zip(point(i)) {
                    *s += x;
                }
            }
            for c in 0..k {
                if counts[c] == 0 {
                    // Re-seed an empty cluster at the point farthest from its centre.
                    let far = (0..n)
                        .max_by(|&a, &b| {
                            let da = dist2(point(a), &centres[labels[a] * dim..(labels[a] + 1) * dim]);
                            let db = dist2(point(b), &centres[labels[b] * dim..(labels[b] + 1) * dim]);
                            da.total_cmp(&db)
                        })
                        .unwrap_or(0);
                    centres[c * dim..(c + 1) * dim].copy_from_slice(point(far));
                } else {
                    for d in 0..dim {
                        centres[c * dim + d] = sums[c * dim + d] / counts[c] as f64;
                    }
                }
            }
        }
        if inertia < best_inertia {
            best_inertia = inertia;
            best_labels = labels;
        }
    }
    best_labels
}
