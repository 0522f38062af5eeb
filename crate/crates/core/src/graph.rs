//! Neighborhood systems over sites: 8-connected pixel grids, 26-connected
//! voxel grids (optionally masked) and symmetrized k-nearest-neighbor graphs.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::vector::{norm_sq, sub};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub site: usize,
    pub pair: usize,
}

/// Undirected pair set with one weight per pair and per-site adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborGraph<T> {
    n_sites: usize,
    pairs: Vec<(usize, usize)>,
    weights: Vec<T>,
    adjacency: Vec<Vec<Neighbor>>,
}

impl<T: Real> NeighborGraph<T> {
    /// Builds a graph from pairs with unit weights.
    pub fn from_pairs(n_sites: usize, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let weights = vec![T::one(); pairs.len()];
        Self::with_weights(n_sites, pairs, weights)
    }

    /// Builds a graph from pairs and per-pair weights. Pairs are stored with
    /// `i < j`; self-loops, duplicates and out-of-range ids are rejected.
    pub fn with_weights(n_sites: usize, pairs: Vec<(usize, usize)>, weights: Vec<T>) -> Result<Self> {
        if pairs.len() != weights.len() {
            return Err(Error::Config(format!("{} pairs but {} weights", pairs.len(), weights.len())));
        }
        let mut adjacency = vec![Vec::new(); n_sites];
        let mut normalized = Vec::with_capacity(pairs.len());
        for (pid, &(a, b)) in pairs.iter().enumerate() {
            if a == b {
                return Err(Error::Config(format!("self-loop at site {a}")));
            }
            if a >= n_sites || b >= n_sites {
                return Err(Error::Config(format!("pair ({a}, {b}) out of range for {n_sites} sites")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            adjacency[i].push(Neighbor { site: j, pair: pid });
            adjacency[j].push(Neighbor { site: i, pair: pid });
            normalized.push((i, j));
        }
        for (i, adj) in adjacency.iter().enumerate() {
            let mut ids: Vec<usize> = adj.iter().map(|n| n.site).collect();
            ids.sort_unstable();
            if ids.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config(format!("duplicate pair at site {i}")));
            }
        }
        Ok(NeighborGraph { n_sites, pairs: normalized, weights, adjacency })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weight(&self, pair: usize) -> T {
        self.weights[pair]
    }

    pub fn neighbors(&self, site: usize) -> &[Neighbor] {
        &self.adjacency[site]
    }

    pub fn degree(&self, site: usize) -> usize {
        self.adjacency[site].len()
    }

    /// `sum_j w_ij` over the neighbors of `site`.
    pub fn row_sum(&self, site: usize) -> T {
        self.adjacency[site].iter().map(|n| self.weights[n.pair]).sum()
    }

    /// Largest deviation of a row sum from one over sites with neighbors.
    pub fn max_row_sum_deviation(&self) -> T {
        (0..self.n_sites)
            .filter(|&i| self.degree(i) > 0)
            .map(|i| (self.row_sum(i) - T::one()).abs())
            .fold(T::zero(), T::max)
    }
}

/// 8-connected pixel lattice. Site id is `y * width + x`.
pub fn build_grid_2d<T: Real>(width: usize, height: usize) -> Result<NeighborGraph<T>> {
    if width == 0 || height == 0 {
        return Err(Error::Config(format!("grid dimensions must be positive, got {width}x{height}")));
    }
    let id = |x: usize, y: usize| y * width + x;
    let mut pairs = Vec::with_capacity(4 * width * height);
    for y in 0..height {
        for x in 0..width {
            let i = id(x, y);
            if x + 1 < width {
                pairs.push((i, id(x + 1, y)));
            }
            if y + 1 < height {
                if x > 0 {
                    pairs.push((i, id(x - 1, y + 1)));
                }
                pairs.push((i, id(x, y + 1)));
                if x + 1 < width {
                    pairs.push((i, id(x + 1, y + 1)));
                }
            }
        }
    }
    NeighborGraph::from_pairs(width * height, pairs)
}

/// A 26-connected voxel graph restricted to retained voxels.
#[derive(Clone, Debug)]
pub struct MaskedGrid<T> {
    pub graph: NeighborGraph<T>,
    /// Voxel coordinates `[x, y, z]` of each (densely re-indexed) site.
    pub voxels: Vec<[usize; 3]>,
    /// Site id of each voxel in raster order, `None` where masked out.
    pub site_of_voxel: Vec<Option<usize>>,
}

/// 26-connected voxel lattice of `nx * ny * nz` voxels in raster order (x
/// fastest). With a mask, only voxels marked `true` become sites.
pub fn build_grid_3d<T: Real>(nx: usize, ny: usize, nz: usize, mask: Option<&[bool]>) -> Result<MaskedGrid<T>> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::Config(format!("grid dimensions must be positive, got {nx}x{ny}x{nz}")));
    }
    let total = nx * ny * nz;
    if let Some(m) = mask {
        if m.len() != total {
            return Err(Error::Config(format!("mask has {} entries, volume has {total}", m.len())));
        }
    }
    let keep = |v: usize| mask.is_none_or(|m| m[v]);
    let mut site_of_voxel = vec![None; total];
    let mut voxels = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let v = (z * ny + y) * nx + x;
                if keep(v) {
                    site_of_voxel[v] = Some(voxels.len());
                    voxels.push([x, y, z]);
                }
            }
        }
    }
    if voxels.is_empty() {
        return Err(Error::Input("mask retains no voxels".into()));
    }
    let mut pairs = Vec::new();
    for (i, &[x, y, z]) in voxels.iter().enumerate() {
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    // Forward half of the 26-neighborhood so each pair appears once.
                    if (dz, dy, dx) <= (0, 0, 0) {
                        continue;
                    }
                    let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if xx < 0 || yy < 0 || zz < 0 || xx >= nx as i64 || yy >= ny as i64 || zz >= nz as i64 {
                        continue;
                    }
                    let v = (zz as usize * ny + yy as usize) * nx + xx as usize;
                    if let Some(j) = site_of_voxel[v] {
                        pairs.push((i, j));
                    }
                }
            }
        }
    }
    let graph = NeighborGraph::from_pairs(voxels.len(), pairs)?;
    Ok(MaskedGrid { graph, voxels, site_of_voxel })
}

/// Symmetrized k-nearest-neighbor graph with row-normalized weights.
///
/// A pair is kept when either endpoint selects the other. Weights start at
/// `1/|N_i|`, are averaged over both directions, and then rescaled once by
/// `1/sqrt(s_i s_j)` (row sums `s`), which keeps them symmetric; the row sums
/// are then only approximately one (see [`NeighborGraph::max_row_sum_deviation`]).
pub fn build_knn<T: Real, const D: usize>(points: &[[T; D]], k: usize) -> Result<NeighborGraph<T>> {
    let n = points.len();
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if k >= n {
        return Err(Error::Config(format!("k = {k} requires more than {n} points")));
    }
    let mut selected = vec![Vec::with_capacity(k); n];
    let mut order: Vec<(T, usize)> = Vec::with_capacity(n);
    for (i, p) in points.iter().enumerate() {
        order.clear();
        order.extend(points.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, q)| (norm_sq(&sub(p, q)), j)));
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
        selected[i].extend(order.iter().take(k).map(|&(_, j)| j));
    }
    let mut pairs: Vec<(usize, usize)> = selected
        .iter()
        .enumerate()
        .flat_map(|(i, js)| js.iter().map(move |&j| if i < j { (i, j) } else { (j, i) }))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();

    let mut degree = vec![0usize; n];
    for &(i, j) in &pairs {
        degree[i] += 1;
        degree[j] += 1;
    }
    let mut weights: Vec<T> = pairs
        .iter()
        .map(|&(i, j)| {
            let wi = T::one() / T::from_usize(degree[i]).unwrap();
            let wj = T::one() / T::from_usize(degree[j]).unwrap();
            (wi + wj) / T::lit(2.0)
        })
        .collect();
    let mut row = vec![T::zero(); n];
    for (&(i, j), &w) in pairs.iter().zip(&weights) {
        row[i] = row[i] + w;
        row[j] = row[j] + w;
    }
    for (&(i, j), w) in pairs.iter().zip(weights.iter_mut()) {
        *w = *w / (row[i] * row[j]).sqrt();
    }
    let graph = NeighborGraph::with_weights(n, pairs, weights)?;
    log::debug!("kNN graph: max row-sum deviation {}", graph.max_row_sum_deviation());
    Ok(graph)
}
