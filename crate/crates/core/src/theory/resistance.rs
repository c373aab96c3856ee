use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::TheoryError;
use crate::rng::CounterRng;

/// Eigenvalues at or below this are treated as zero by the pseudoinverse.
pub const EIGEN_CUTOFF: f64 = 1e-10;

/// Undirected graph with a symmetric nonnegative weight matrix and zero
/// diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    w: DMatrix<f64>,
}

impl WeightedGraph {
    pub fn new(weights: DMatrix<f64>) -> Result<Self, TheoryError> {
        let n = weights.nrows();
        if weights.ncols() != n || n == 0 {
            return Err(TheoryError::InvalidGraph(format!(
                "weight matrix is {}x{}",
                n,
                weights.ncols()
            )));
        }
        for i in 0..n {
            if weights[(i, i)] != 0.0 {
                return Err(TheoryError::InvalidGraph(format!("self-loop on node {i}")));
            }
            for j in 0..n {
                let v = weights[(i, j)];
                if !(v >= 0.0 && v.is_finite()) || v != weights[(j, i)] {
                    return Err(TheoryError::InvalidGraph(format!(
                        "weight ({i}, {j}) = {v} is negative or asymmetric"
                    )));
                }
            }
        }
        Ok(WeightedGraph { w: weights })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, TheoryError> {
        let mut w = DMatrix::zeros(n, n);
        for &(u, v, x) in edges {
            if u >= n || v >= n || u == v {
                return Err(TheoryError::InvalidGraph(format!(
                    "edge ({u}, {v}) in a {n}-node graph"
                )));
            }
            w[(u, v)] += x;
            w[(v, u)] += x;
        }
        Self::new(w)
    }

    pub fn path(n: usize) -> Self {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i, 1.0)).collect();
        Self::from_edges(n, &edges).expect("valid path")
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `L = D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut l = -self.w.clone();
        for i in 0..n {
            l[(i, i)] = self.w.row(i).sum();
        }
        l
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if self.w[(u, v)] > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Moore-Penrose pseudoinverse of a symmetric matrix by eigendecomposition.
pub fn pseudoinverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = jacobi_eigen(m);
    let inv = values.map(|l| if l.abs() > EIGEN_CUTOFF { 1.0 / l } else { 0.0 });
    &vectors * DMatrix::from_diagonal(&inv) * vectors.transpose()
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix: `(values,
/// vectors)` with `m = V diag(values) V^T`.
///
/// nalgebra's QR-based solver returned a pseudoinverse off by 0.13 on a
/// 7-node Laplacian update; Jacobi is slower but always converges, and the
/// matrices here are small.
pub fn jacobi_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = DMatrix::identity(n, n);
    let target = (f64::EPSILON * m.norm()).powi(2);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)].powi(2))
            .sum();
        if off <= target {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (kp, kq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * kp - s * kq;
                    a[(k, q)] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * pk - s * qk;
                    a[(q, k)] = s * pk + c * qk;
                }
                for k in 0..n {
                    let (kp, kq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * kp - s * kq;
                    v[(k, q)] = s * kp + c * kq;
                }
            }
        }
    }
    (a.diagonal(), v)
}

/// `(e_u - e_v)^T M (e_u - e_v)`.
pub fn quadratic_form(m: &DMatrix<f64>, u: usize, v: usize) -> f64 {
    m[(u, u)] + m[(v, v)] - m[(u, v)] - m[(v, u)]
}

fn check_pair(n: usize, u: usize, v: usize) -> Result<(), TheoryError> {
    if u >= n || v >= n || u == v {
        return Err(TheoryError::InvalidGraph(format!(
            "node pair ({u}, {v}) in a {n}-node graph"
        )));
    }
    Ok(())
}

pub fn effective_resistance(g: &WeightedGraph, u: usize, v: usize) -> Result<f64, TheoryError> {
    check_pair(g.n(), u, v)?;
    if !g.is_connected() {
        return Err(TheoryError::InfiniteResistance(u, v));
    }
    Ok(quadratic_form(&pseudoinverse(&g.laplacian()), u, v))
}

#[derive(Debug, Clone, Serialize)]
pub struct RankOneReport {
    pub pairs: usize,
    /// Largest `R' - R` over the pairs; positive means the update raised a
    /// resistance.
    pub max_increase: f64,
    /// Pairs with `R' > R + tol`.
    pub violations: usize,
    /// Max entry of `|SM(L+) - pinv(L + a a^T)|`.
    pub sherman_morrison_residual: f64,
    pub resistances: Vec<(usize, usize, f64, f64)>,
}

/// Compares resistances before and after `L -> L + a a^T`, with `a`
/// first projected off the all-ones vector, and checks the
/// Sherman-Morrison form of the updated pseudoinverse.
pub fn rank_one_resistance_check(
    g: &WeightedGraph,
    alpha: &[f64],
    pairs: &[(usize, usize)],
    tol: f64,
) -> Result<RankOneReport, TheoryError> {
    let n = g.n();
    if alpha.len() != n {
        return Err(TheoryError::InvalidGraph(format!(
            "update vector has {} entries for {n} nodes",
            alpha.len()
        )));
    }
    if !g.is_connected() {
        return Err(TheoryError::InfiniteResistance(0, 0));
    }
    for &(u, v) in pairs {
        check_pair(n, u, v)?;
    }
    let mean = alpha.iter().sum::<f64>() / n as f64;
    let a = DVector::from_iterator(n, alpha.iter().map(|x| x - mean));
    let l = g.laplacian();
    let lp = pseudoinverse(&l);
    let updated = pseudoinverse(&(&l + &a * a.transpose()));
    let la = &lp * &a;
    let sm = &lp - (&la * la.transpose()) / (1.0 + a.dot(&la));
    let residual = (&sm - &updated).amax();

    let mut report = RankOneReport {
        pairs: pairs.len(),
        max_increase: f64::NEG_INFINITY,
        violations: 0,
        sherman_morrison_residual: residual,
        resistances: Vec::with_capacity(pairs.len()),
    };
    for &(u, v) in pairs {
        let (before, after) = (quadratic_form(&lp, u, v), quadratic_form(&updated, u, v));
        report.max_increase = report.max_increase.max(after - before);
        report.violations += usize::from(after > before + tol);
        report.resistances.push((u, v, before, after));
    }
    Ok(report)
}

/// Geometric k-NN graph on random points in the unit square, patched
/// with a spanning tree over components so it is always connected.
/// Weights are uniform on `[0.5, 2]`.
pub fn random_connected_graph(n: usize, k: usize, rng: &mut CounterRng) -> WeightedGraph {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.uniform(), rng.uniform())).collect();
    let dist =
        |a: usize, b: usize| ((pts[a].0 - pts[b].0).powi(2) + (pts[a].1 - pts[b].1).powi(2)).sqrt();
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)).then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            if w[(i, j)] == 0.0 {
                let x = rng.uniform_range(0.5, 2.0);
                w[(i, j)] = x;
                w[(j, i)] = x;
            }
        }
    }
    // Join components by their closest cross pair until one remains.
    loop {
        let comp = components(&w);
        if comp.iter().all(|&c| c == comp[0]) {
            break;
        }
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..n {
            for b in 0..n {
                if comp[a] == comp[0] && comp[b] != comp[0] && dist(a, b) < best.0 {
                    best = (dist(a, b), a, b);
                }
            }
        }
        let x = rng.uniform_range(0.5, 2.0);
        w[(best.1, best.2)] = x;
        w[(best.2, best.1)] = x;
    }
    WeightedGraph::new(w).expect("symmetric nonnegative by construction")
}

fn components(w: &DMatrix<f64>) -> Vec<usize> {
    let n = w.nrows();
    let mut comp = vec![usize::MAX; n];
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = s;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if w[(u, v)] > 0.0 && comp[v] == usize::MAX {
                    comp[v] = s;
                    stack.push(v);
                }
            }
        }
    }
    comp
}

#[derive(Debug, Clone, Serialize)]
pub struct ResistanceSweep {
    pub graphs: usize,
    pub pairs_checked: usize,
    pub violations: usize,
    pub max_increase: f64,
    pub max_sherman_morrison_residual: f64,
    /// Largest `|L L+ L - L|` entry seen.
    pub max_pinv_residual: f64,
    /// Largest `R(u,w) - R(u,v) - R(v,w)` over node triples.
    pub max_triangle_excess: f64,
    /// Every checked pair, for plotting.
    #[serde(skip)]
    pub rows: Vec<ResistanceRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResistanceRow {
    pub graph: usize,
    pub n: usize,
    pub u: usize,
    pub v: usize,
    pub before: f64,
    pub after: f64,
}

/// Random connected graphs with `2 <= n <= max_n` and one random rank-one
/// update each; every pair is checked.
pub fn resistance_sweep(
    graphs: usize,
    max_n: usize,
    tol: f64,
    seed: u64,
) -> Result<ResistanceSweep, TheoryError> {
    let mut rng = CounterRng::new(seed);
    let mut out = ResistanceSweep {
        graphs,
        pairs_checked: 0,
        violations: 0,
        max_increase: f64::NEG_INFINITY,
        max_sherman_morrison_residual: 0.0,
        max_pinv_residual: 0.0,
        max_triangle_excess: f64::NEG_INFINITY,
        rows: Vec::new(),
    };
    for graph in 0..graphs {
        let n = 2 + rng.below(max_n.max(2) - 1);
        let k = 1 + rng.below(3.min(n - 1));
        let g = random_connected_graph(n, k, &mut rng);
        let scale = rng.uniform_range(0.1, 3.0);
        let alpha: Vec<f64> = (0..n).map(|_| scale * rng.normal()).collect();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .collect();
        let r = rank_one_resistance_check(&g, &alpha, &pairs, tol)?;
        out.pairs_checked += r.pairs;
        out.violations += r.violations;
        out.max_increase = out.max_increase.max(r.max_increase);
        out.max_sherman_morrison_residual = out
            .max_sherman_morrison_residual
            .max(r.sherman_morrison_residual);
        out.rows.extend(
            r.resistances
                .iter()
                .map(|&(u, v, before, after)| ResistanceRow {
                    graph,
                    n,
                    u,
                    v,
                    before,
                    after,
                }),
        );

        let l = g.laplacian();
        let lp = pseudoinverse(&l);
        out.max_pinv_residual = out.max_pinv_residual.max((&l * &lp * &l - &l).amax());
        for u in 0..n {
            for v in 0..n {
                for x in 0..n {
                    if u != v && v != x && u != x {
                        let excess = quadratic_form(&lp, u, x)
                            - quadratic_form(&lp, u, v)
                            - quadratic_form(&lp, v, x);
                        out.max_triangle_excess = out.max_triangle_excess.max(excess);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn series_and_parallel_laws() {
        let single = WeightedGraph::path(2);
        assert!((effective_resistance(&single, 0, 1).unwrap() - 1.0).abs() < 1e-12);
        let path = WeightedGraph::path(3);
        assert!((effective_resistance(&path, 0, 2).unwrap() - 2.0).abs() < 1e-12);
        let tri = WeightedGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
        for (u, v) in [(0, 1), (1, 2), (0, 2)] {
            assert!((effective_resistance(&tri, u, v).unwrap() - 2.0 / 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn closing_a_path_into_a_triangle() {
        let path = WeightedGraph::path(3);
        let r = rank_one_resistance_check(&path, &[1.0, 0.0, -1.0], &[(0, 2)], 1e-9).unwrap();
        let (_, _, before, after) = r.resistances[0];
        assert!((before - 2.0).abs() < 1e-12);
        assert!((after - 2.0 / 3.0).abs() < 1e-10);
        assert!(r.sherman_morrison_residual < 1e-8);
    }

    #[test]
    fn zero_update_changes_nothing() {
        let g = random_connected_graph(7, 2, &mut CounterRng::new(1));
        let pairs: Vec<_> = (1..7).map(|v| (0, v)).collect();
        let r = rank_one_resistance_check(&g, &[0.0; 7], &pairs, 1e-9).unwrap();
        for (_, _, a, b) in r.resistances {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn constant_update_is_projected_away() {
        let g = WeightedGraph::path(4);
        let r = rank_one_resistance_check(&g, &[2.5; 4], &[(0, 3)], 1e-9).unwrap();
        let (_, _, a, b) = r.resistances[0];
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn disconnected_graph_has_infinite_resistance() {
        let g = WeightedGraph::from_edges(4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert!(matches!(
            effective_resistance(&g, 0, 3),
            Err(TheoryError::InfiniteResistance(0, 3))
        ));
        assert!(effective_resistance(&g, 1, 1).is_err());
    }

    #[test]
    fn sweep_seed_that_broke_the_qr_solver() {
        let s = resistance_sweep(3, 12, 1e-9, 5255385359364058785).unwrap();
        assert!(
            s.max_sherman_morrison_residual < 1e-12,
            "{}",
            s.max_sherman_morrison_residual
        );
        assert_eq!(s.violations, 0);
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let mut w = DMatrix::zeros(2, 2);
        w[(0, 1)] = 1.0;
        assert!(WeightedGraph::new(w.clone()).is_err());
        w[(1, 0)] = 1.0;
        assert!(WeightedGraph::new(w).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn laplacian_is_a_psd_zero_row_sum_matrix(seed in any::<u64>(), n in 2usize..12) {
            let g = random_connected_graph(n, 2, &mut CounterRng::new(seed));
            prop_assert!(g.is_connected());
            let l = g.laplacian();
            prop_assert!((&l - l.transpose()).amax() == 0.0);
            for i in 0..n {
                prop_assert!(l.row(i).sum().abs() < 1e-10);
            }
            prop_assert!(jacobi_eigen(&l).0.min() >= -1e-9);
            let lp = pseudoinverse(&l);
            prop_assert!((&l * &lp * &l - &l).amax() < 1e-9);
        }

        #[test]
        fn pseudoinverse_matches_the_grounded_inverse(seed in any::<u64>(), n in 2usize..14) {
            // On a connected Laplacian, L+ = (L + J/n)^-1 - J/n.
            let mut rng = CounterRng::new(seed);
            let g = random_connected_graph(n, 1 + rng.below(3.min(n - 1)), &mut rng);
            let j = DMatrix::from_element(n, n, 1.0 / n as f64);
            let oracle = (g.laplacian() + &j).lu().try_inverse().unwrap() - &j;
            prop_assert!((pseudoinverse(&g.laplacian()) - oracle).amax() < 1e-9);
        }

        #[test]
        fn jacobi_reconstructs_symmetric_matrices(seed in any::<u64>(), n in 1usize..15) {
            let mut rng = CounterRng::new(seed);
            let b = DMatrix::from_fn(n, n, |_, _| rng.normal());
            let m = &b + b.transpose();
            let (values, vectors) = jacobi_eigen(&m);
            prop_assert!((vectors.transpose() * &vectors - DMatrix::identity(n, n)).amax() < 1e-12);
            prop_assert!((&vectors * DMatrix::from_diagonal(&values) * vectors.transpose() - &m).amax() < 1e-11);
        }

        #[test]
        fn rank_one_updates_never_raise_resistance(seed in any::<u64>()) {
            let s = resistance_sweep(3, 12, 1e-9, seed).unwrap();
            prop_assert_eq!(s.violations, 0);
            prop_assert!(s.max_sherman_morrison_residual < 1e-8);
            prop_assert!(s.max_triangle_excess <= 1e-9);
        }
    }
}
