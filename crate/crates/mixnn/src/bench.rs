//! The `knn-bench` command: recall and query latency of the graph index
//! against the exhaustive scan.

use std::time::Instant;

use mixnn_core::knn::{exact_knn, recall, HnswIndex, HnswParams, SearchScratch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct BenchRequest {
    pub n: usize,
    pub dim: usize,
    pub k: usize,
    pub queries: usize,
    pub params: HnswParams,
    /// One HNSW row per value.
    pub ef_search: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub n: usize,
    pub dim: usize,
    pub k: usize,
    pub ef_search: Option<usize>,
    pub recall: f64,
    pub mean_latency_ms: f64,
    pub mean_distance_evals: f64,
    pub build_secs: f64,
}

pub const CSV_HEADER: &str = "method,n,dim,k,ef_search,recall,mean_latency_ms,mean_distance_evals,build_secs";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.method,
            self.n,
            self.dim,
            self.k,
            self.ef_search.map_or_else(String::new, |e| e.to_string()),
            self.recall,
            self.mean_latency_ms,
            self.mean_distance_evals,
            self.build_secs
        )
    }
}

/// Standard-normal points and queries; the first row is the exhaustive scan.
pub fn knn_bench(req: &BenchRequest) -> Result<Vec<BenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let mut gaussian = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let points = gaussian(req.n * req.dim);
    let queries = gaussian(req.queries * req.dim);
    let qs: Vec<&[f64]> = queries.chunks_exact(req.dim).collect();

    let start = Instant::now();
    let exact: Vec<_> = qs.iter().map(|q| exact_knn(&points, req.dim, q, req.k, None)).collect::<Result<_, _>>()?;
    let exact_ms = start.elapsed().as_secs_f64() * 1e3 / qs.len().max(1) as f64;
    let mut rows = vec![BenchRow {
        method: "exact".into(),
        n: req.n,
        dim: req.dim,
        k: req.k,
        ef_search: None,
        recall: 1.0,
        mean_latency_ms: exact_ms,
        mean_distance_evals: req.n as f64,
        build_secs: 0.0,
    }];

    let start = Instant::now();
    let index = HnswIndex::build(&points, req.dim, req.params)?;
    let build_secs = start.elapsed().as_secs_f64();
    log::info!("built index over {} points in {build_secs:.2} s", req.n);
    let mut scratch = SearchScratch::default();
    for &ef in &req.ef_search {
        let mut total_recall = 0.0;
        let mut evals = 0usize;
        let start = Instant::now();
        let mut found = Vec::with_capacity(qs.len());
        for q in &qs {
            let (set, stats) = index.search_with(q, req.k, ef, None, &mut scratch)?;
            evals += stats.distance_evals;
            found.push(set);
        }
        let ms = start.elapsed().as_secs_f64() * 1e3 / qs.len().max(1) as f64;
        for (a, e) in found.iter().zip(&exact) {
            total_recall += recall(a, e);
        }
        let nq = qs.len().max(1) as f64;
        rows.push(BenchRow {
            method: "hnsw".into(),
            n: req.n,
            dim: req.dim,
            k: req.k,
            ef_search: Some(ef),
            recall: total_recall / nq,
            mean_latency_ms: ms,
            mean_distance_evals: evals as f64 / nq,
            build_secs,
        });
    }
    Ok(rows)
}
