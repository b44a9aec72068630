//! Synthetic graphs, forward-pass timing, and eigenvalue spectra.

use std::collections::BTreeSet;
use std::rc::Rc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Segments, Tape};
use crate::data::{GraphRecord, TuDataset};
use crate::dense::DenseMat;
use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};
use crate::layers::{ConvLayer, FusionMethod, LapRef};
use crate::sparse::SparseSym;

/// A connected-ish random graph with `min(2n, n(n−1)/2)` distinct edges
/// (uniform rejection sampling, unit weights, no self-loops) and uniformly
/// random one-hot node labels. Deterministic in the seed.
pub fn random_graph(n: usize, x_in: usize, seed: u64) -> GraphRecord {
    assert!(n >= 1, "graph needs at least one node");
    assert!(x_in >= 1, "need at least one node label");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_edges = n * (n - 1) / 2;
    let target = (2 * n).min(max_edges);
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    while edges.len() < target {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    let edges: Vec<(usize, usize)> = edges.into_iter().collect();
    let adjacency = SparseSym::from_undirected_edges(n, &edges).expect("no self-loops by construction");
    let node_labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..x_in)).collect();
    let mut node_features = DenseMat::zeros(n, x_in);
    for (i, &l) in node_labels.iter().enumerate() {
        node_features[(i, l)] = 1.0;
    }
    GraphRecord {
        n,
        adjacency,
        node_labels,
        graph_label: 0,
        node_features,
    }
}

/// Timing of one convolution forward pass configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub fusion: FusionMethod,
    pub k_order: usize,
    pub n: usize,
    /// Undirected edge count of each relation's graph.
    pub edges: usize,
    pub median_secs: f64,
    pub min_secs: f64,
    pub max_secs: f64,
    pub iters: usize,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Time one convolution-layer forward pass per `(fusion, k)` case over a
/// grid of node counts. Single-relation fusion filters one random graph;
/// everything else filters two independent random graphs as fixed
/// relations, so timings isolate the fusion arithmetic from edge learning.
#[allow(clippy::too_many_arguments)]
pub fn bench_forward(
    cases: &[(FusionMethod, usize)],
    n_grid: &[usize],
    x_in: usize,
    out_features: usize,
    proj_width: usize,
    seed: u64,
    warmup: usize,
    iters: usize,
) -> Result<Vec<BenchRow>> {
    if iters == 0 {
        return Err(Error::Config {
            key: "iters".into(),
            reason: "need at least one timed iteration".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut rows = Vec::new();
    for &n in n_grid {
        let rec_a = random_graph(n, x_in, seed);
        let rec_b = random_graph(n, x_in, seed + 1);
        let lap_a = Rc::new(rec_a.adjacency.rescaled_laplacian()?);
        let lap_b = Rc::new(rec_b.adjacency.rescaled_laplacian()?);
        let edges = rec_a.adjacency.nnz() / 2;
        let segments = Rc::new(Segments::from_sizes(&[n])?);
        for &(fusion, k) in cases {
            let n_relations = if fusion == FusionMethod::Single { 1 } else { 2 };
            let layer = ConvLayer::new(
                "bench",
                fusion,
                k,
                x_in,
                out_features,
                n_relations,
                proj_width,
                &mut rng,
            )?;
            let mut times = Vec::with_capacity(iters);
            for i in 0..warmup + iters {
                let tape = Tape::new();
                let x = tape.constant(rec_a.node_features.clone());
                let laps: Vec<LapRef<'_>> = if n_relations == 1 {
                    vec![LapRef::Fixed(&lap_a)]
                } else {
                    vec![LapRef::Fixed(&lap_a), LapRef::Fixed(&lap_b)]
                };
                let started = Instant::now();
                let y = layer.forward(&tape, &laps, &x, &segments)?;
                let elapsed = started.elapsed().as_secs_f64();
                std::hint::black_box(y.with_value(|m| m.data[0]));
                if i >= warmup {
                    times.push(elapsed);
                }
            }
            times.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
            rows.push(BenchRow {
                fusion,
                k_order: k,
                n,
                edges,
                median_secs: median(&times),
                min_secs: times[0],
                max_secs: *times.last().expect("non-empty"),
                iters,
            });
        }
    }
    Ok(rows)
}

/// CSV rendering of timing rows.
pub fn bench_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("fusion,k_order,n,edges,median_secs,min_secs,max_secs,iters\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.fusion, r.k_order, r.n, r.edges, r.median_secs, r.min_secs, r.max_secs, r.iters
        ));
    }
    out
}

/// Histogram of `λᵖ` over all eigenvalues `λ` of every graph's rescaled
/// Laplacian, for each requested power. All `λ` lie in `[−1, 1]`, so the
/// same bins (half-open, last closed) cover every power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenHistogram {
    pub powers: Vec<u32>,
    /// `bins + 1` edges spanning `[−1, 1]`.
    pub bin_edges: Vec<f64>,
    /// `counts[power_index][bin]`.
    pub counts: Vec<Vec<u64>>,
    /// Extreme raw (power-1) eigenvalues actually observed.
    pub min_eig: f64,
    pub max_eig: f64,
}

impl EigenHistogram {
    /// Index of the bin containing a value (values outside `[−1, 1]` clamp
    /// to the boundary bins).
    fn bin_of(&self, v: f64) -> usize {
        let bins = self.counts[0].len();
        let width = 2.0 / bins as f64;
        (((v + 1.0) / width).floor() as isize).clamp(0, bins as isize - 1) as usize
    }

    /// Fraction of eigenvalues whose `p`-th power lands in the bin
    /// containing zero.
    pub fn central_bin_mass(&self, power_index: usize) -> f64 {
        let central = self.bin_of(0.0);
        let total: u64 = self.counts[power_index].iter().sum();
        self.counts[power_index][central] as f64 / total.max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("power,bin,left_edge,right_edge,count\n");
        for (pi, &p) in self.powers.iter().enumerate() {
            for (b, &c) in self.counts[pi].iter().enumerate() {
                out.push_str(&format!(
                    "{p},{b},{},{},{c}\n",
                    self.bin_edges[b],
                    self.bin_edges[b + 1]
                ));
            }
        }
        out
    }
}

/// Compute the eigenvalue histogram of a dataset with `bins` equal-width
/// bins over `[−1, 1]`. Use an odd `bins` so one bin is centered on zero.
pub fn eigen_histogram(ds: &TuDataset, powers: &[u32], bins: usize) -> Result<EigenHistogram> {
    if bins == 0 {
        return Err(Error::Config {
            key: "bins".into(),
            reason: "need at least one bin".into(),
        });
    }
    if powers.is_empty() {
        return Err(Error::Config {
            key: "powers".into(),
            reason: "need at least one power".into(),
        });
    }
    let width = 2.0 / bins as f64;
    let bin_edges: Vec<f64> = (0..=bins).map(|b| -1.0 + b as f64 * width).collect();
    let mut hist = EigenHistogram {
        powers: powers.to_vec(),
        bin_edges,
        counts: vec![vec![0; bins]; powers.len()],
        min_eig: f64::INFINITY,
        max_eig: f64::NEG_INFINITY,
    };
    for rec in &ds.records {
        let lap = rec.adjacency.rescaled_laplacian()?.to_dense();
        let (eigs, _) = symmetric_eigen(&lap)?;
        for lambda in eigs {
            hist.min_eig = hist.min_eig.min(lambda);
            hist.max_eig = hist.max_eig.max(lambda);
            for (pi, &p) in powers.iter().enumerate() {
                let v = lambda.powi(p as i32);
                let b = hist.bin_of(v);
                hist.counts[pi][b] += 1;
            }
        }
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_graphs_have_the_advertised_edge_count() {
        let g = random_graph(100, 7, 5);
        assert_eq!(g.n, 100);
        assert_eq!(g.adjacency.nnz(), 400); // 200 undirected edges
        g.adjacency.validate_adjacency().unwrap();
        // One-hot features.
        for i in 0..g.n {
            let row_sum: f64 = g.node_features.row(i).iter().sum();
            assert_eq!(row_sum, 1.0);
        }
    }

    #[test]
    fn small_graphs_cap_at_the_complete_graph() {
        let g = random_graph(4, 3, 1);
        assert_eq!(g.adjacency.nnz(), 12); // C(4,2) = 6 undirected edges
    }

    #[test]
    fn random_graphs_are_deterministic_in_the_seed() {
        assert_eq!(random_graph(30, 5, 9), random_graph(30, 5, 9));
        assert_ne!(random_graph(30, 5, 9), random_graph(30, 5, 10));
    }

    #[test]
    fn bench_rows_are_well_formed() {
        let rows = bench_forward(
            &[(FusionMethod::Single, 3), (FusionMethod::TwoDCheb, 3)],
            &[40, 80],
            4,
            8,
            16,
            7,
            1,
            5,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert!(r.min_secs <= r.median_secs && r.median_secs <= r.max_secs);
            assert!(r.min_secs > 0.0);
            assert_eq!(r.iters, 5);
        }
        let csv = bench_to_csv(&rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("fusion,k_order,n,edges,median_secs"));
    }

    #[test]
    fn path_graph_spectrum_lands_in_the_expected_bins() {
        // A 3-node path has eigenvalues {−1, 0, 1}; squaring moves −1 to 1.
        let rec = GraphRecord {
            n: 3,
            adjacency: SparseSym::from_undirected_edges(3, &[(0, 1), (1, 2)]).unwrap(),
            node_labels: vec![0, 0, 0],
            graph_label: 0,
            node_features: DenseMat::filled(3, 1, 1.0),
        };
        let ds = TuDataset {
            name: "PATH".into(),
            records: vec![rec],
            x_in: 1,
            n_classes: 2,
            node_label_values: vec![0],
            graph_label_values: vec![0, 1],
        };
        let hist = eigen_histogram(&ds, &[1, 2], 21).unwrap();
        assert!((hist.min_eig + 1.0).abs() < 1e-9);
        assert!((hist.max_eig - 1.0).abs() < 1e-9);

        let central = hist.bin_of(0.0);
        assert_eq!(central, 10);
        // Power 1: one eigenvalue in each of the first, central, last bins.
        assert_eq!(hist.counts[0][0], 1);
        assert_eq!(hist.counts[0][central], 1);
        assert_eq!(hist.counts[0][20], 1);
        // Power 2: −1 squares onto +1.
        assert_eq!(hist.counts[1][20], 2);
        assert_eq!(hist.counts[1][central], 1);
        // Totals are preserved.
        assert_eq!(hist.counts[0].iter().sum::<u64>(), 3);
        assert_eq!(hist.counts[1].iter().sum::<u64>(), 3);
        assert!((hist.central_bin_mass(0) - 1.0 / 3.0).abs() < 1e-12);

        let csv = hist.to_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 21);
    }
}
