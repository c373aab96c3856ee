use super::{BoundParams, Graph, ParamId, ParamStore, Var};
use crate::rng::CounterRng;

fn eval<F>(f: &F, store: &ParamStore<f64>) -> f64
where
    F: for<'g> Fn(&'g Graph<f64>, &BoundParams<'g, f64>) -> Var<'g, f64>,
{
    let g = Graph::new();
    let p = store.bind_frozen(&g);
    f(&g, &p).item()
}

/// One probed parameter scalar: backprop against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientProbe {
    pub param: ParamId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientProbe {
    /// `|a - n| / max(floor, |a| + |n|)`.
    pub fn error(&self, floor: f64) -> f64 {
        (self.analytic - self.numeric).abs() / (self.analytic.abs() + self.numeric.abs()).max(floor)
    }
}

/// Floor of the relative error reported by [`check_gradient`].
pub const RELATIVE_FLOOR: f64 = 1e-12;

fn probe_coords<F>(
    f: &F,
    store: &ParamStore<f64>,
    eps: f64,
    coords: &[(ParamId, usize)],
) -> Vec<GradientProbe>
where
    F: for<'g> Fn(&'g Graph<f64>, &BoundParams<'g, f64>) -> Var<'g, f64>,
{
    let g = Graph::new();
    let p = store.bind(&g);
    let out = f(&g, &p);
    let grads = g
        .backward(out)
        .expect("gradient check root must be a finite scalar");
    let mut work = store.clone();
    coords
        .iter()
        .map(|&(id, k)| {
            let analytic = grads.get(p[id]).map_or(0.0, |t| t.data[k]);
            let orig = work.get(id).data[k];
            work.get_mut(id).data[k] = orig + eps;
            let up = eval(f, &work);
            work.get_mut(id).data[k] = orig - eps;
            let down = eval(f, &work);
            work.get_mut(id).data[k] = orig;
            GradientProbe {
                param: id,
                index: k,
                analytic,
                numeric: (up - down) / (2.0 * eps),
            }
        })
        .collect()
}

fn worst(probes: &[GradientProbe]) -> f64 {
    probes
        .iter()
        .map(|p| p.error(RELATIVE_FLOOR))
        .fold(0.0, f64::max)
}

/// Max relative error between backprop and central differences over every
/// scalar of every parameter. `f` must be deterministic.
pub fn check_gradient<F>(f: F, store: &ParamStore<f64>, eps: f64) -> f64
where
    F: for<'g> Fn(&'g Graph<f64>, &BoundParams<'g, f64>) -> Var<'g, f64>,
{
    let coords: Vec<_> = store
        .ids()
        .flat_map(|id| (0..store.get(id).len()).map(move |k| (id, k)))
        .collect();
    worst(&probe_coords(&f, store, eps, &coords))
}

/// As [`check_gradient`], but probes at most `per_tensor` random scalars of
/// each parameter tensor.
pub fn check_gradient_sampled<F>(
    f: F,
    store: &ParamStore<f64>,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> f64
where
    F: for<'g> Fn(&'g Graph<f64>, &BoundParams<'g, f64>) -> Var<'g, f64>,
{
    worst(&gradient_probes(f, store, eps, per_tensor, seed))
}

/// The individual probes behind [`check_gradient_sampled`].
pub fn gradient_probes<F>(
    f: F,
    store: &ParamStore<f64>,
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Vec<GradientProbe>
where
    F: for<'g> Fn(&'g Graph<f64>, &BoundParams<'g, f64>) -> Var<'g, f64>,
{
    let mut rng = CounterRng::new(seed);
    let mut coords = Vec::new();
    for id in store.ids() {
        let len = store.get(id).len();
        if len <= per_tensor {
            coords.extend((0..len).map(|k| (id, k)));
        } else {
            coords.extend((0..per_tensor).map(|_| (id, rng.below(len))));
        }
    }
    probe_coords(&f, store, eps, &coords)
}
