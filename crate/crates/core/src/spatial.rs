//! Great-circle geometry, k-nearest-neighbour graphs and spatial statistics.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Mean Earth radius for the spherical model.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = Self { lat, lon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Validation(format!(
                "coordinate ({}, {}) outside [-90, 90] x [-180, 180]",
                self.lat, self.lon
            )));
        }
        Ok(())
    }
}

/// Validated latitude/longitude rows, in degrees.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoordinateSet {
    points: Vec<LatLon>,
}

impl CoordinateSet {
    pub fn new(points: Vec<LatLon>) -> Result<Self> {
        for p in &points {
            p.validate()?;
        }
        Ok(Self { points })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(lat, lon)| LatLon { lat, lon }).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[LatLon] {
        &self.points
    }

    pub fn get(&self, i: usize) -> LatLon {
        self.points[i]
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            points: idx.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

/// Haversine distance in kilometres.
pub fn great_circle_distance(a: LatLon, b: LatLon) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(haversine_km(a, b))
}

#[inline]
fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// `1 / (1 + d_km)`.
#[inline]
pub fn edge_weight(distance_km: f64) -> f64 {
    1.0 / (1.0 + distance_km)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance_km: f64,
}

/// Symmetrized k-NN graph over a set of points with its GCN propagation matrix.
#[derive(Clone, Debug)]
pub struct SpatialGraph {
    n: usize,
    k: usize,
    neighbors: Vec<Vec<Neighbor>>,
    adjacency: Tensor,
    propagation: Tensor,
}

impl SpatialGraph {
    /// Builds a graph from explicit directed neighbour lists and adjacency.
    /// `adjacency` must be square, nonnegative, with a zero diagonal.
    pub fn from_parts(neighbors: Vec<Vec<Neighbor>>, adjacency: Tensor) -> Result<Self> {
        let n = adjacency.rows();
        if adjacency.cols() != n || neighbors.len() != n {
            return Err(Error::Shape {
                op: "spatial_graph",
                left: adjacency.shape(),
                right: (neighbors.len(), neighbors.len()),
            });
        }
        for i in 0..n {
            if adjacency.get(i, i) != 0.0 {
                return Err(Error::Validation(format!("self loop on node {i}")));
            }
        }
        if adjacency.data().iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::Validation("adjacency weights must be finite and >= 0".into()));
        }
        let k = neighbors.first().map_or(0, Vec::len);
        let propagation = normalized_propagation(&adjacency);
        Ok(Self {
            n,
            k,
            neighbors,
            adjacency,
            propagation,
        })
    }

    /// A graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Self::from_parts(vec![Vec::new(); n], Tensor::zeros(n, n)).expect("empty graph")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.neighbors[i]
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with `D` the row sums of `A + I`.
    pub fn propagation(&self) -> &Tensor {
        &self.propagation
    }

    /// Adjacency scaled so every nonzero row sums to one; empty rows stay zero.
    pub fn row_standardized(&self) -> Tensor {
        let mut out = self.adjacency.clone();
        for i in 0..self.n {
            let s: f64 = self.adjacency.row_slice(i).iter().sum();
            if s > 0.0 {
                for j in 0..self.n {
                    out.set(i, j, self.adjacency.get(i, j) / s);
                }
            }
        }
        out
    }
}

fn normalized_propagation(adjacency: &Tensor) -> Tensor {
    let n = adjacency.rows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let deg = 1.0 + adjacency.row_slice(i).iter().sum::<f64>();
            1.0 / deg.sqrt()
        })
        .collect();
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let a = adjacency.get(i, j) + if i == j { 1.0 } else { 0.0 };
            if a != 0.0 {
                out.set(i, j, inv_sqrt[i] * a * inv_sqrt[j]);
            }
        }
    }
    out
}

/// The `k` nearest points to `coords[i]` among `candidates`, excluding `i`
/// itself. Ties are broken by the lower candidate index.
fn nearest(coords: &CoordinateSet, i: usize, candidates: &[usize], k: usize) -> Vec<Neighbor> {
    let origin = coords.get(i);
    let mut all: Vec<Neighbor> = candidates
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| Neighbor {
            index: j,
            distance_km: haversine_km(origin, coords.get(j)),
        })
        .collect();
    let by = |a: &Neighbor, b: &Neighbor| {
        a.distance_km
            .total_cmp(&b.distance_km)
            .then(a.index.cmp(&b.index))
    };
    if all.len() > k {
        all.select_nth_unstable_by(k, by);
        all.truncate(k);
    }
    all.sort_by(by);
    all
}

/// Exact k-NN graph under great-circle distance, weights `1 / (1 + d_km)`,
/// symmetrized by elementwise max.
pub fn build_knn_graph(coords: &CoordinateSet, k: usize) -> Result<SpatialGraph> {
    let n = coords.len();
    if k == 0 || n <= k {
        return Err(Error::Config(format!(
            "k-NN graph needs n > k >= 1 (n = {n}, k = {k})"
        )));
    }
    let all: Vec<usize> = (0..n).collect();
    let neighbors: Vec<Vec<Neighbor>> = (0..n).map(|i| nearest(coords, i, &all, k)).collect();
    let mut adjacency = Tensor::zeros(n, n);
    for (i, list) in neighbors.iter().enumerate() {
        for nb in list {
            let w = edge_weight(nb.distance_km);
            let j = nb.index;
            if w > adjacency.get(i, j) {
                adjacency.set(i, j, w);
                adjacency.set(j, i, w);
            }
        }
    }
    SpatialGraph::from_parts(neighbors, adjacency)
}

/// Mean target of each node's observable neighbours in `graph`.
///
/// `observable[j]` says whether `targets[j]` may be read. A node's own
/// target is never used. Nodes with no observable neighbour fall back to
/// `fallback`.
pub fn neighbor_target_mean(
    graph: &SpatialGraph,
    targets: &[f64],
    observable: &[bool],
    fallback: f64,
) -> Result<Vec<f64>> {
    if targets.len() != graph.n() || observable.len() != graph.n() {
        return Err(Error::Shape {
            op: "neighbor_target_mean",
            left: (graph.n(), 1),
            right: (targets.len(), observable.len()),
        });
    }
    let mut isolated = 0usize;
    let out = (0..graph.n())
        .map(|i| {
            let (sum, count) = graph
                .neighbors(i)
                .iter()
                .filter(|nb| nb.index != i && observable[nb.index])
                .fold((0.0, 0usize), |(s, c), nb| (s + targets[nb.index], c + 1));
            if count == 0 {
                isolated += 1;
                fallback
            } else {
                sum / count as f64
            }
        })
        .collect();
    if isolated > 0 {
        log::warn!("{isolated} node(s) had no observable neighbour; used the training mean");
    }
    Ok(out)
}

/// For every point, the mean target of its `k` nearest training points
/// (never itself). This is the k-NN regression prediction from the training set.
pub fn training_neighbor_mean(
    coords: &CoordinateSet,
    targets: &[f64],
    is_train: &[bool],
    k: usize,
) -> Result<Vec<f64>> {
    let n = coords.len();
    if targets.len() != n || is_train.len() != n {
        return Err(Error::Shape {
            op: "training_neighbor_mean",
            left: (n, 1),
            right: (targets.len(), is_train.len()),
        });
    }
    let train: Vec<usize> = (0..n).filter(|&i| is_train[i]).collect();
    if train.len() < 2 || k == 0 {
        return Err(Error::Config(format!(
            "need k >= 1 and at least two training points (k = {k}, train = {})",
            train.len()
        )));
    }
    let k = k.min(train.len() - 1);
    Ok((0..n)
        .map(|i| {
            let nb = nearest(coords, i, &train, k);
            nb.iter().map(|x| targets[x.index]).sum::<f64>() / nb.len() as f64
        })
        .collect())
}

/// Local Moran's I with row-standardized weights:
/// `I_i = z_i · Σ_j w̃_ij z_j / m₂`, `z = v − mean(v)`, `m₂ = Σ z² / n`.
/// A constant input yields all zeros.
pub fn local_morans_i(values: &[f64], graph: &SpatialGraph) -> Result<Vec<f64>> {
    let n = graph.n();
    if values.len() != n {
        return Err(Error::Shape {
            op: "local_morans_i",
            left: (n, 1),
            right: (values.len(), 1),
        });
    }
    if n < 2 {
        return Err(Error::Validation("local Moran's I needs at least two nodes".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let m2 = z.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if m2 <= f64::MIN_POSITIVE {
        log::debug!("local Moran's I on a constant field; returning zeros");
        return Ok(vec![0.0; n]);
    }
    let w = graph.row_standardized();
    Ok((0..n)
        .map(|i| {
            let lag: f64 = w.row_slice(i).iter().zip(&z).map(|(a, b)| a * b).sum();
            z[i] * lag / m2
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ll(lat: f64, lon: f64) -> LatLon {
        LatLon { lat, lon }
    }

    #[test]
    fn haversine_reference_values() {
        assert_eq!(great_circle_distance(ll(10.0, 20.0), ll(10.0, 20.0)).unwrap(), 0.0);
        let q = great_circle_distance(ll(0.0, 0.0), ll(0.0, 90.0)).unwrap();
        assert!((q - PI / 2.0 * EARTH_RADIUS_KM).abs() < 1e-9);
        assert!((q - 10007.54).abs() < 0.01);
        let h = great_circle_distance(ll(0.0, 0.0), ll(0.0, 180.0)).unwrap();
        assert!((h - PI * EARTH_RADIUS_KM).abs() < 1e-9);
    }

    #[test]
    fn out_of_bounds_coordinate() {
        assert!(great_circle_distance(ll(91.0, 0.0), ll(0.0, 0.0)).is_err());
        assert!(CoordinateSet::from_pairs(&[(0.0, 181.0)]).is_err());
    }

    #[test]
    fn equator_ties_break_to_lower_index() {
        let c = CoordinateSet::from_pairs(&[(0.0, 0.0), (0.0, 1.0), (0.0, 2.0)]).unwrap();
        let g = build_knn_graph(&c, 1).unwrap();
        assert_eq!(g.neighbors(0)[0].index, 1);
        assert_eq!(g.neighbors(1)[0].index, 0);
        assert_eq!(g.neighbors(2)[0].index, 1);
        for i in 0..3 {
            assert_eq!(g.adjacency().get(i, i), 0.0);
        }
    }

    #[test]
    fn knn_needs_more_points_than_k() {
        let c = CoordinateSet::from_pairs(&[(0.0, 0.0), (0.0, 1.0)]).unwrap();
        assert!(matches!(build_knn_graph(&c, 2), Err(Error::Config(_))));
        assert!(matches!(build_knn_graph(&c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn two_node_propagation() {
        let adj = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let nb = vec![
            vec![Neighbor { index: 1, distance_km: 0.0 }],
            vec![Neighbor { index: 0, distance_km: 0.0 }],
        ];
        let g = SpatialGraph::from_parts(nb, adj).unwrap();
        for v in g.propagation().data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn neighbor_mean_basic_and_constant() {
        let adj = Tensor::zeros(3, 3);
        let nb = vec![
            vec![Neighbor { index: 1, distance_km: 1.0 }, Neighbor { index: 2, distance_km: 2.0 }],
            vec![Neighbor { index: 0, distance_km: 1.0 }, Neighbor { index: 2, distance_km: 1.0 }],
            vec![Neighbor { index: 1, distance_km: 1.0 }, Neighbor { index: 0, distance_km: 2.0 }],
        ];
        let g = SpatialGraph::from_parts(nb, adj).unwrap();
        let ybar = neighbor_target_mean(&g, &[10.0, 2.0, 4.0], &[true; 3], 0.0).unwrap();
        assert_eq!(ybar[0], 3.0);
        let ybar = neighbor_target_mean(&g, &[7.0; 3], &[true; 3], 0.0).unwrap();
        assert_eq!(ybar, vec![7.0; 3]);
        // node 0 sees only node 2; node 1 sees nothing observable except 2
        let ybar = neighbor_target_mean(&g, &[10.0, 2.0, 4.0], &[false, false, true], -1.0).unwrap();
        assert_eq!(ybar, vec![4.0, 4.0, -1.0]);
    }

    #[test]
    fn morans_i_reference() {
        let c = CoordinateSet::from_pairs(&[(0.0, 0.0), (0.0, 1.0)]).unwrap();
        let g = build_knn_graph(&c, 1).unwrap();
        let i = local_morans_i(&[-1.0, 1.0], &g).unwrap();
        assert!((i[0] + 1.0).abs() < 1e-12 && (i[1] + 1.0).abs() < 1e-12);
        assert_eq!(local_morans_i(&[3.0, 3.0], &g).unwrap(), vec![0.0, 0.0]);
    }
}
