//! Approximate K-nearest-neighbour search with a Hierarchical Navigable Small
//! World graph, plus the exhaustive scan it is checked against.
//!
//! Distances are Euclidean. Internally everything compares squared distances;
//! the square root is taken only when a [`NeighborSet`] is produced.
//! Equal distances order by the smaller id.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{all_finite, squared_distance};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Max connections per node on upper layers; layer 0 allows `2 * m`.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self { m: 16, ef_construction: 200, ef_search: 64, seed: 0 }
    }
}

impl HnswParams {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::invalid("hnsw m must be at least 2"));
        }
        if self.ef_construction == 0 || self.ef_search == 0 {
            return Err(Error::invalid("hnsw beam widths must be positive"));
        }
        Ok(())
    }

    fn level_multiplier(&self) -> f64 {
        1.0 / libm::log(self.m as f64)
    }
}

/// Neighbours of a query in ascending distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub neighbors: Vec<Neighbor>,
    /// K that was asked for; more than `neighbors.len()` when the index ran out.
    pub requested: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn is_short(&self) -> bool {
        self.neighbors.len() < self.requested
    }

    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.neighbors.iter().map(|n| n.id)
    }

    fn from_sorted(candidates: impl IntoIterator<Item = Candidate>, k: usize, exclude: Option<usize>) -> Self {
        let neighbors = candidates
            .into_iter()
            .filter(|c| Some(c.id as usize) != exclude)
            .take(k)
            .map(|c| Neighbor { id: c.id as usize, distance: libm::sqrt(c.dist) })
            .collect();
        Self { neighbors, requested: k }
    }
}

/// Squared distance with an id tie-break, totally ordered.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exhaustive O(N d) scan. `embeddings` is row-major with rows of length `dim`.
pub fn exact_knn(embeddings: &[f64], dim: usize, query: &[f64], k: usize, exclude: Option<usize>) -> Result<NeighborSet> {
    Error::check_dim(dim, query.len())?;
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if dim == 0 || !embeddings.len().is_multiple_of(dim) {
        return Err(Error::invalid("embedding matrix is not a whole number of rows"));
    }
    let mut all: Vec<Candidate> = embeddings
        .chunks_exact(dim)
        .enumerate()
        .map(|(id, row)| Candidate { dist: squared_distance(row, query), id: id as u32 })
        .collect();
    all.sort_unstable();
    Ok(NeighborSet::from_sorted(all, k, exclude))
}

/// Reusable visited-marks for graph searches.
#[derive(Debug, Default)]
pub struct SearchScratch {
    marks: Vec<u32>,
    generation: u32,
}

impl SearchScratch {
    fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.generation = 1;
        }
    }

    /// Marks `id`, returning whether it was unvisited.
    fn visit(&mut self, id: u32) -> bool {
        let slot = &mut self.marks[id as usize];
        if *slot == self.generation {
            false
        } else {
            *slot = self.generation;
            true
        }
    }
}

/// Search statistics, for complexity checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    pub distance_evals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HnswIndex {
    params: HnswParams,
    dim: usize,
    vectors: Vec<f64>,
    /// `links[node][layer]`, present for layers `0..=level(node)`.
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
}

/// Graph structure for diagnostics dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexDump {
    pub entry_point: usize,
    pub max_level: usize,
    pub nodes: Vec<NodeDump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDump {
    pub id: usize,
    pub level: usize,
    pub links: Vec<Vec<usize>>,
}

impl HnswIndex {
    /// Inserts every row of `embeddings` in id order.
    pub fn build(embeddings: &[f64], dim: usize, params: HnswParams) -> Result<Self> {
        params.validate()?;
        if dim == 0 || embeddings.is_empty() || !embeddings.len().is_multiple_of(dim) {
            return Err(Error::invalid("embedding matrix must hold at least one whole row"));
        }
        if !all_finite(embeddings) {
            return Err(Error::NonFinite("embeddings"));
        }
        let n = embeddings.len() / dim;
        if n > u32::MAX as usize {
            return Err(Error::invalid("too many vectors for a u32 id"));
        }
        let mut rng = rng_from_seed(params.seed);
        let ml = params.level_multiplier();
        let mut index = Self {
            params,
            dim,
            vectors: embeddings.to_vec(),
            links: Vec::with_capacity(n),
            entry: 0,
            max_level: 0,
        };
        let mut scratch = SearchScratch::default();
        for id in 0..n {
            // 1 - U lies in (0, 1], keeping the logarithm finite.
            let u: f64 = 1.0 - rng.random::<f64>();
            let level = libm::floor(-libm::log(u) * ml) as usize;
            index.insert(id as u32, level, &mut scratch);
        }
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &HnswParams {
        &self.params
    }

    pub fn entry_point(&self) -> usize {
        self.entry as usize
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn level(&self, id: usize) -> usize {
        self.links[id].len() - 1
    }

    pub fn neighbors_at(&self, id: usize, layer: usize) -> &[u32] {
        self.links[id].get(layer).map_or(&[], Vec::as_slice)
    }

    fn vector(&self, id: u32) -> &[f64] {
        let i = id as usize * self.dim;
        &self.vectors[i..i + self.dim]
    }

    fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn insert(&mut self, id: u32, level: usize, scratch: &mut SearchScratch) {
        self.links.push(vec![Vec::new(); level + 1]);
        if id == 0 {
            self.entry = 0;
            self.max_level = level;
            return;
        }
        let query = self.vector(id).to_vec();
        let mut stats = SearchStats::default();
        let mut ep = self.entry;
        let mut ep_dist = squared_distance(&query, self.vector(ep));
        for layer in (level + 1..=self.max_level).rev() {
            (ep, ep_dist) = self.greedy_closest(&query, ep, ep_dist, layer, &mut stats);
        }
        let mut entries = vec![Candidate { dist: ep_dist, id: ep }];
        for layer in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&query, &entries, self.params.ef_construction, layer, scratch, &mut stats);
            // Simple heuristic: connect to the closest M.
            for c in found.iter().take(self.params.m) {
                self.connect(id, c.id, c.dist, layer);
            }
            entries = found;
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = id;
        }
    }

    /// Adds the undirected edge `a - b` on `layer`. When `b` is already at its
    /// degree bound, its farthest edge is evicted (from both ends) only if `a`
    /// is closer, or if `a` would otherwise stay unconnected.
    fn connect(&mut self, a: u32, b: u32, dist: f64, layer: usize) {
        let cap = self.max_degree(layer);
        if self.links[a as usize][layer].len() >= cap {
            return;
        }
        if self.links[b as usize][layer].len() >= cap {
            let bv = self.vector(b);
            let (worst_pos, worst) = self.links[b as usize][layer]
                .iter()
                .enumerate()
                .map(|(pos, &n)| (pos, Candidate { dist: squared_distance(bv, self.vector(n)), id: n }))
                .max_by(|x, y| x.1.cmp(&y.1))
                .expect("full neighbour list is non-empty");
            let closer = Candidate { dist, id: a } < worst;
            let a_isolated = self.links[a as usize][layer].is_empty();
            // Never strand the evicted node.
            if !(closer || a_isolated) || self.links[worst.id as usize][layer].len() <= 1 {
                return;
            }
            self.links[b as usize][layer].swap_remove(worst_pos);
            let back = &mut self.links[worst.id as usize][layer];
            if let Some(pos) = back.iter().position(|&n| n == b) {
                back.swap_remove(pos);
            }
        }
        self.links[a as usize][layer].push(b);
        self.links[b as usize][layer].push(a);
    }

    fn greedy_closest(&self, query: &[f64], mut best: u32, mut best_dist: f64, layer: usize, stats: &mut SearchStats) -> (u32, f64) {
        loop {
            let mut improved = false;
            for &n in self.neighbors_at(best as usize, layer) {
                let d = squared_distance(query, self.vector(n));
                stats.distance_evals += 1;
                if (Candidate { dist: d, id: n }) < (Candidate { dist: best_dist, id: best }) {
                    best = n;
                    best_dist = d;
                    improved = true;
                }
            }
            if !improved {
                return (best, best_dist);
            }
        }
    }

    /// Best-first beam search on one layer; result sorted ascending.
    fn search_layer(
        &self,
        query: &[f64],
        entries: &[Candidate],
        ef: usize,
        layer: usize,
        scratch: &mut SearchScratch,
        stats: &mut SearchStats,
    ) -> Vec<Candidate> {
        scratch.reset(self.len());
        let mut frontier: BinaryHeap<core::cmp::Reverse<Candidate>> = BinaryHeap::new();
        let mut best: BinaryHeap<Candidate> = BinaryHeap::new();
        for &e in entries {
            if scratch.visit(e.id) {
                frontier.push(core::cmp::Reverse(e));
                best.push(e);
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(core::cmp::Reverse(current)) = frontier.pop() {
            if let Some(worst) = best.peek() {
                if best.len() >= ef && current > *worst {
                    break;
                }
            }
            for &n in self.neighbors_at(current.id as usize, layer) {
                if !scratch.visit(n) {
                    continue;
                }
                let cand = Candidate { dist: squared_distance(query, self.vector(n)), id: n };
                stats.distance_evals += 1;
                if best.len() < ef || cand < *best.peek().expect("non-empty") {
                    frontier.push(core::cmp::Reverse(cand));
                    best.push(cand);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Approximate K nearest neighbours of `query`. With `exclude`, one extra
    /// candidate is fetched so that filtering the excluded id still leaves K.
    pub fn search(&self, query: &[f64], k: usize, ef_search: usize, exclude: Option<usize>) -> Result<NeighborSet> {
        let mut scratch = SearchScratch::default();
        self.search_with(query, k, ef_search, exclude, &mut scratch).map(|(set, _)| set)
    }

    pub fn search_with(
        &self,
        query: &[f64],
        k: usize,
        ef_search: usize,
        exclude: Option<usize>,
        scratch: &mut SearchScratch,
    ) -> Result<(NeighborSet, SearchStats)> {
        Error::check_dim(self.dim, query.len())?;
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if ef_search < k {
            return Err(Error::invalid("ef_search must be at least k"));
        }
        let fetch = k + usize::from(exclude.is_some());
        let mut stats = SearchStats::default();
        let mut ep = self.entry;
        let mut ep_dist = squared_distance(query, self.vector(ep));
        stats.distance_evals += 1;
        for layer in (1..=self.max_level).rev() {
            (ep, ep_dist) = self.greedy_closest(query, ep, ep_dist, layer, &mut stats);
        }
        let found = self.search_layer(
            query,
            &[Candidate { dist: ep_dist, id: ep }],
            ef_search.max(fetch),
            0,
            scratch,
            &mut stats,
        );
        Ok((NeighborSet::from_sorted(found, k, exclude), stats))
    }

    pub fn dump(&self) -> IndexDump {
        IndexDump {
            entry_point: self.entry as usize,
            max_level: self.max_level,
            nodes: self
                .links
                .iter()
                .enumerate()
                .map(|(id, layers)| NodeDump {
                    id,
                    level: layers.len() - 1,
                    links: layers.iter().map(|l| l.iter().map(|&n| n as usize).collect()).collect(),
                })
                .collect(),
        }
    }
}

/// Fraction of the exact neighbour ids recovered by `approx`.
pub fn recall(approx: &NeighborSet, exact: &NeighborSet) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let hits = approx.ids().filter(|id| exact.ids().any(|e| e == *id)).count();
    hits as f64 / exact.len() as f64
}
