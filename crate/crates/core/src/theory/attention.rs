use serde::Serialize;

use super::TheoryError;
use crate::model::AttentionDump;
use crate::rng::CounterRng;

/// Directed attention weights: `rows[i]` lists `(j, a_ij)` over the
/// neighbors `j` of receiver `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedAttention {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl DirectedAttention {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Uniform attention over each node's neighbor list.
    pub fn uniform(neighbors: &[Vec<usize>]) -> Self {
        let rows = neighbors
            .iter()
            .map(|nb| nb.iter().map(|&j| (j, 1.0 / nb.len() as f64)).collect())
            .collect();
        DirectedAttention { rows }
    }

    /// Star with `leaves` leaves around node 0, uniform attention.
    pub fn star(leaves: usize) -> Self {
        let mut nb = vec![(1..=leaves).collect::<Vec<_>>()];
        nb.extend((0..leaves).map(|_| vec![0]));
        Self::uniform(&nb)
    }

    /// Two nodes attending only to each other.
    pub fn two_cycle() -> Self {
        Self::uniform(&[vec![1], vec![0]])
    }

    /// Head-averaged attention of one layer of a model dump.
    pub fn from_dump(dump: &AttentionDump, layer: usize) -> Self {
        let a = dump.head_mean_layer(layer);
        let rows = (0..dump.n)
            .map(|i| {
                (0..dump.k)
                    .map(|m| (dump.neighbors[i * dump.k + m], a[i * dump.k + m]))
                    .collect()
            })
            .collect();
        DirectedAttention { rows }
    }

    fn weight(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .iter()
            .filter(|&&(t, _)| t == j)
            .map(|&(_, a)| a)
            .sum()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReturnMassReport {
    pub per_node: Vec<f64>,
    pub mean: f64,
}

/// Neumaier summation. Plain summation of a star's `1/m` weights misses
/// the exact closed-form means by one ulp.
fn compensated_sum(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        carry += if sum.abs() >= x.abs() {
            (sum - t) + x
        } else {
            (x - t) + sum
        };
        sum = t;
    }
    sum + carry
}

/// `r_i = sum_j a_ij a_ji`; a neighbor that does not attend back adds 0.
pub fn return_mass(att: &DirectedAttention) -> Result<ReturnMassReport, TheoryError> {
    let n = att.n();
    if n == 0 {
        return Err(TheoryError::InvalidAttention("no receivers".into()));
    }
    for (i, row) in att.rows.iter().enumerate() {
        let s: f64 = row.iter().map(|&(_, a)| a).sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&(j, a)| !(a >= 0.0) || j >= n) {
            return Err(TheoryError::InvalidAttention(format!(
                "row {i} sums to {s} or has an invalid entry"
            )));
        }
    }
    let per_node: Vec<f64> = att
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| compensated_sum(row.iter().map(|&(j, a)| a * att.weight(j, i))))
        .collect();
    let mean = compensated_sum(per_node.iter().copied()) / n as f64;
    Ok(ReturnMassReport { per_node, mean })
}

/// Graph-average return mass of every layer of a dump.
pub fn return_mass_series(dump: &AttentionDump) -> Result<Vec<f64>, TheoryError> {
    (0..dump.layers.len())
        .map(|l| Ok(return_mass(&DirectedAttention::from_dump(dump, l))?.mean))
        .collect()
}

fn softmax(s: &[f64]) -> Vec<f64> {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Logits of a mutually adjacent pair `i`, `j`. `s_i[0]` is `s_ij` and the
/// rest are `i`'s other neighbors; likewise `s_j[0]` is `s_ji`.
#[derive(Debug, Clone)]
pub struct PairFixture {
    pub s_i: Vec<f64>,
    pub s_j: Vec<f64>,
    pub ds_ij: f64,
    pub ds_ji: f64,
}

/// Largest `|a''(s)| / 2` of a softmax coordinate in its own logit:
/// `max |a(1-a)(1-2a)| / 2 = 1 / (12 sqrt 3)`.
const HALF_MAX_CURVATURE: f64 = 0.048_112_522_432_468_82;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SensitivityOutcome {
    pub measured: f64,
    pub first_order_bound: f64,
    /// Remainder allowance for steps of size `eps`.
    pub second_order_slack: f64,
}

/// Perturbs `s_ij` by `eps * ds_ij` and `s_ji` by `eps * ds_ji` and compares
/// the change in `a_ij a_ji` with `a_ij phi_i |ds_ji| + a_ji phi_j |ds_ij|`.
///
/// The slack bounds the Taylor remainder: each weight deviates from its
/// linearization by at most `HALF_MAX_CURVATURE * step^2`, and the cross
/// term `da_ij * da_ji` is at most `step_ij * step_ji / 16` because the
/// slope never exceeds 1/4.
pub fn sensitivity_case(f: &PairFixture, eps: f64) -> SensitivityOutcome {
    let (a_i, a_j) = (softmax(&f.s_i), softmax(&f.s_j));
    let (a_ij, a_ji) = (a_i[0], a_j[0]);
    let mut s_i = f.s_i.clone();
    let mut s_j = f.s_j.clone();
    s_i[0] += eps * f.ds_ij;
    s_j[0] += eps * f.ds_ji;
    let (b_ij, b_ji) = (softmax(&s_i)[0], softmax(&s_j)[0]);
    let (phi_i, phi_j) = (a_ji * (1.0 - a_ji), a_ij * (1.0 - a_ij));
    let (step_ij, step_ji) = ((eps * f.ds_ij).abs(), (eps * f.ds_ji).abs());
    SensitivityOutcome {
        measured: (b_ij * b_ji - a_ij * a_ji).abs(),
        first_order_bound: a_ij * phi_i * step_ji + a_ji * phi_j * step_ij,
        second_order_slack: HALF_MAX_CURVATURE
            * (a_ij * step_ji * step_ji + a_ji * step_ij * step_ij)
            + step_ij * step_ji / 16.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub fixtures: usize,
    pub eps: f64,
    /// Cases with measured change above the first-order bound plus slack.
    pub hard_violations: usize,
    /// Smallest `bound + slack - measured`.
    pub worst_margin: f64,
    /// Largest `(measured - bound) / eps^2`: the second-order constant the
    /// data actually needs.
    pub fitted_second_order: f64,
    #[serde(skip)]
    pub cases: Vec<SensitivityOutcome>,
}

pub fn random_pair_fixture(rng: &mut CounterRng) -> PairFixture {
    let logits = |rng: &mut CounterRng| {
        let deg = 1 + rng.below(6);
        (0..deg).map(|_| 2.0 * rng.normal()).collect::<Vec<_>>()
    };
    PairFixture {
        s_i: logits(rng),
        s_j: logits(rng),
        ds_ij: rng.normal(),
        ds_ji: rng.normal(),
    }
}

pub fn softmax_sensitivity_check(fixtures: &[PairFixture], eps: f64) -> SensitivityReport {
    let mut r = SensitivityReport {
        fixtures: fixtures.len(),
        eps,
        hard_violations: 0,
        worst_margin: f64::INFINITY,
        fitted_second_order: 0.0,
        cases: Vec::with_capacity(fixtures.len()),
    };
    for f in fixtures {
        let o = sensitivity_case(f, eps);
        let margin = o.first_order_bound + o.second_order_slack - o.measured;
        r.worst_margin = r.worst_margin.min(margin);
        r.hard_violations += usize::from(margin < 0.0);
        r.fitted_second_order = r
            .fitted_second_order
            .max((o.measured - o.first_order_bound) / (eps * eps));
        r.cases.push(o);
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn star_and_two_cycle() {
        let r = return_mass(&DirectedAttention::star(3)).unwrap();
        assert_eq!(r.per_node[0], 1.0);
        assert!((r.per_node[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.mean, 0.5);
        let c = return_mass(&DirectedAttention::two_cycle()).unwrap();
        assert_eq!((c.per_node[0], c.per_node[1], c.mean), (1.0, 1.0, 1.0));
    }

    #[test]
    fn star_means_are_exact() {
        // Centre 1, each leaf 1/m: mean 2 / (m + 1).
        for m in 1..=40 {
            assert_eq!(
                return_mass(&DirectedAttention::star(m)).unwrap().mean,
                2.0 / (m + 1) as f64,
                "star({m})"
            );
        }
    }

    #[test]
    fn one_way_edges_contribute_nothing() {
        // 0 -> 1 -> 2 -> 0 cycle: nobody attends back.
        let r = return_mass(&DirectedAttention::uniform(&[vec![1], vec![2], vec![0]])).unwrap();
        assert_eq!(r.mean, 0.0);
    }

    #[test]
    fn non_stochastic_rows_are_rejected() {
        let att = DirectedAttention {
            rows: vec![vec![(1, 0.7)], vec![(0, 1.0)]],
        };
        assert!(matches!(
            return_mass(&att),
            Err(TheoryError::InvalidAttention(_))
        ));
    }

    #[test]
    fn zero_perturbation_and_pinned_weight() {
        let f = PairFixture {
            s_i: vec![0.3, -1.0],
            s_j: vec![1.2, 0.0, 0.5],
            ds_ij: 0.0,
            ds_ji: 0.0,
        };
        let o = sensitivity_case(&f, 1e-4);
        assert_eq!((o.measured, o.first_order_bound), (0.0, 0.0));
        // A lone neighbor has a_ij = 1 whatever its logit.
        let lone = PairFixture {
            s_i: vec![0.7],
            s_j: vec![0.7],
            ds_ij: 1.0,
            ds_ji: 1.0,
        };
        let o = sensitivity_case(&lone, 1e-4);
        assert_eq!(o.measured, 0.0);
        assert_eq!(o.first_order_bound, 0.0);
    }

    #[test]
    fn curvature_constant() {
        let best = (0..=100_000)
            .map(|k| {
                let a = k as f64 / 100_000.0;
                (a * (1.0 - a) * (1.0 - 2.0 * a)).abs() / 2.0
            })
            .fold(0.0, f64::max);
        assert!(best <= HALF_MAX_CURVATURE && HALF_MAX_CURVATURE - best < 1e-9);
    }

    proptest! {
        #[test]
        fn return_mass_lies_in_unit_interval(seed in any::<u64>(), n in 2usize..10) {
            let mut rng = CounterRng::new(seed);
            let rows = (0..n)
                .map(|i| {
                    let nb: Vec<usize> = (0..n).filter(|&j| j != i && rng.uniform() < 0.6).collect();
                    let nb = if nb.is_empty() { vec![(i + 1) % n] } else { nb };
                    let w: Vec<f64> = nb.iter().map(|_| rng.uniform() + 1e-3).collect();
                    let z: f64 = w.iter().sum();
                    nb.into_iter().zip(w).map(|(j, x)| (j, x / z)).collect()
                })
                .collect();
            let r = return_mass(&DirectedAttention { rows }).unwrap();
            for v in r.per_node {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }

        #[test]
        fn sensitivity_bound_holds(seed in any::<u64>()) {
            let mut rng = CounterRng::new(seed);
            let fx: Vec<_> = (0..20).map(|_| random_pair_fixture(&mut rng)).collect();
            for eps in [1e-4, 1e-2, 0.3] {
                prop_assert_eq!(softmax_sensitivity_check(&fx, eps).hard_violations, 0);
            }
        }
    }
}
