use std::cell::{Cell, RefCell};
use std::rc::Rc;

use super::{NumericError, Real, Tensor};
use crate::rng::CounterRng;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, T),
    Sigmoid(usize),
    Tanh(usize),
    /// Input and the tanh term of every element.
    Gelu(usize, Vec<T>),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Concat(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Gather(usize, Rc<[usize]>),
    SegmentSum(usize, usize),
    SegmentSoftmax(usize, usize),
    LogSoftmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout(usize, Vec<T>),
    Sum(usize),
    SelectPerRow(usize, Rc<[usize]>),
    SumColBlocks(usize, usize),
    RepeatCols(usize, usize),
    GatherSum(Vec<(usize, Option<Rc<[usize]>>)>),
    GatheredBlockDot {
        a: usize,
        idx: Rc<[usize]>,
        b: usize,
        blocks: usize,
    },
    SegmentAttend {
        w: usize,
        v: usize,
        group: usize,
    },
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records operations for one forward pass; `backward` replays them in
/// reverse. A graph is single-threaded and single-use.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    training: bool,
    rng: RefCell<CounterRng>,
    check_finite: bool,
    non_finite: RefCell<Option<String>>,
    backward_done: Cell<bool>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T> {
    g: &'g Graph<T>,
    id: usize,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

/// Gradients produced by [`Graph::backward`], indexed by variable.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of `v`'s shape if nothing reached it.
    pub fn get_or_zero(&self, v: Var<'_, T>) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| {
            let val = v.value();
            Tensor::zeros(val.rows, val.cols)
        })
    }
}

impl<T: Real> Graph<T> {
    /// Evaluation-mode graph: dropout is the identity.
    pub fn new() -> Self {
        Self::build(false, 0)
    }

    /// Training-mode graph; dropout masks are drawn from `seed`.
    pub fn training(seed: u64) -> Self {
        Self::build(true, seed)
    }

    fn build(training: bool, seed: u64) -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            training,
            rng: RefCell::new(CounterRng::new(seed)),
            check_finite: cfg!(debug_assertions),
            non_finite: RefCell::new(None),
            backward_done: Cell::new(false),
        }
    }

    /// Turns the per-op finiteness scan on or off (on by default in debug
    /// builds).
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, t: Tensor<T>) -> Var<'_, T> {
        self.push(t, Op::Leaf, true, "param")
    }

    /// Leaf that receives no gradient.
    pub fn constant(&self, t: Tensor<T>) -> Var<'_, T> {
        self.push(t, Op::Leaf, false, "constant")
    }

    /// First non-finite value seen, if finiteness checks are on.
    pub fn status(&self) -> Result<(), NumericError> {
        match &*self.non_finite.borrow() {
            Some(op) => Err(NumericError::NonFinite(op.clone())),
            None => Ok(()),
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool, name: &str) -> Var<'_, T> {
        if self.check_finite && !value.all_finite() {
            let mut nf = self.non_finite.borrow_mut();
            if nf.is_none() {
                *nf = Some(name.to_string());
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            g: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    fn unary(&self, a: usize, name: &str, f: impl Fn(T) -> T, op: Op<T>) -> Var<'_, T> {
        let x = self.value(a);
        let out = Tensor::new(x.rows, x.cols, x.data.iter().map(|&v| f(v)).collect());
        self.push(out, op, self.needs(&[a]), name)
    }

    /// Reverse pass from a 1x1 root. Leaves keep their gradients.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>, NumericError> {
        let nodes = self.nodes.borrow();
        let rv = &nodes[root.id].value;
        if rv.shape() != [1, 1] {
            return Err(NumericError::InvalidBackward(rv.rows, rv.cols));
        }
        if self.backward_done.replace(true) {
            return Err(NumericError::BackwardTwice);
        }
        self.status()?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::scalar(T::one()));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        if self.check_finite && grads.iter().flatten().any(|t| !t.all_finite()) {
            return Err(NumericError::NonFinite("backward".into()));
        }
        Ok(Gradients { grads })
    }

    /// Allows `backward` to run again on this graph.
    pub fn reset_backward(&self) {
        self.backward_done.set(false);
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    id: usize,
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[id].needs_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| {
        let v = &nodes[id].value;
        Tensor::zeros(v.rows, v.cols)
    });
    f(&mut slot.data);
}

/// Adds `src` to the gradient of `id`, copying instead of adding into
/// zeros when it is the first contribution.
fn accumulate_copy<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    id: usize,
    src: &Tensor<T>,
) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(slot) => add_into(&mut slot.data, &src.data),
        slot @ None => *slot = Some(src.clone()),
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

fn backprop<T: Real>(nodes: &[Node<T>], id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let out = &nodes[id].value;
    let gd = &g.data;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let (m, k, n) = (av.rows, av.cols, bv.cols);
            accumulate(nodes, grads, *a, |ga| {
                // ga += g * b^T
                T::gemm(
                    m,
                    n,
                    k,
                    gd,
                    (n as isize, 1),
                    &bv.data,
                    (1, n as isize),
                    T::one(),
                    ga,
                );
            });
            accumulate(nodes, grads, *b, |gb| {
                // gb += a^T * g
                T::gemm(
                    k,
                    m,
                    n,
                    &av.data,
                    (1, k as isize),
                    gd,
                    (n as isize, 1),
                    T::one(),
                    gb,
                );
            });
        }
        Op::Add(a, b) => {
            accumulate_copy(nodes, grads, *a, g);
            accumulate_copy(nodes, grads, *b, g);
        }
        Op::Sub(a, b) => {
            accumulate_copy(nodes, grads, *a, g);
            accumulate(nodes, grads, *b, |gb| {
                for (d, s) in gb.iter_mut().zip(gd) {
                    *d -= *s;
                }
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            accumulate(nodes, grads, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += gd[i] * bv.data[i];
                }
            });
            accumulate(nodes, grads, *b, |gb| {
                for i in 0..gb.len() {
                    gb[i] += gd[i] * av.data[i];
                }
            });
        }
        Op::AddRow(a, b) => {
            let cols = out.cols;
            accumulate_copy(nodes, grads, *a, g);
            accumulate(nodes, grads, *b, |gb| {
                for row in gd.chunks(cols) {
                    add_into(gb, row);
                }
            });
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, |ga| {
            for (d, s) in ga.iter_mut().zip(gd) {
                *d += *s * *c;
            }
        }),
        Op::Sigmoid(a) => accumulate(nodes, grads, *a, |ga| {
            for i in 0..ga.len() {
                let y = out.data[i];
                ga[i] += gd[i] * y * (T::one() - y);
            }
        }),
        Op::Tanh(a) => accumulate(nodes, grads, *a, |ga| {
            for i in 0..ga.len() {
                let y = out.data[i];
                ga[i] += gd[i] * (T::one() - y * y);
            }
        }),
        Op::Gelu(a, tanh) => {
            let x = &nodes[*a].value;
            accumulate(nodes, grads, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += gd[i] * gelu_grad(x.data[i], tanh[i]);
                }
            });
        }
        Op::Relu(a) => {
            let x = &nodes[*a].value;
            accumulate(nodes, grads, *a, |ga| {
                for i in 0..ga.len() {
                    if x.data[i] > T::zero() {
                        ga[i] += gd[i];
                    }
                }
            });
        }
        Op::Exp(a) => accumulate(nodes, grads, *a, |ga| {
            for i in 0..ga.len() {
                ga[i] += gd[i] * out.data[i];
            }
        }),
        Op::Log(a) => {
            let x = &nodes[*a].value;
            accumulate(nodes, grads, *a, |ga| {
                for i in 0..ga.len() {
                    ga[i] += gd[i] / x.data[i];
                }
            });
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p].value.cols;
                accumulate(nodes, grads, p, |gp| {
                    for (r, row) in gp.chunks_mut(w).enumerate() {
                        add_into(row, &gd[r * out.cols + offset..r * out.cols + offset + w]);
                    }
                });
                offset += w;
            }
        }
        Op::SliceCols(a, start) => {
            let src_cols = nodes[*a].value.cols;
            let w = out.cols;
            accumulate(nodes, grads, *a, |ga| {
                for (r, row) in gd.chunks(w).enumerate() {
                    add_into(&mut ga[r * src_cols + start..r * src_cols + start + w], row);
                }
            });
        }
        Op::SliceRows(a, start) => {
            let c = out.cols;
            accumulate(nodes, grads, *a, |ga| {
                add_into(&mut ga[start * c..start * c + gd.len()], gd)
            });
        }
        Op::Gather(a, idx) => {
            let c = out.cols;
            accumulate(nodes, grads, *a, |ga| {
                for (r, &src) in idx.iter().enumerate() {
                    add_into(&mut ga[src * c..(src + 1) * c], &gd[r * c..(r + 1) * c]);
                }
            });
        }
        Op::SegmentSum(a, group) => {
            let c = out.cols;
            accumulate(nodes, grads, *a, |ga| {
                for (r, row) in ga.chunks_mut(c).enumerate() {
                    let s = r / group;
                    add_into(row, &gd[s * c..(s + 1) * c]);
                }
            });
        }
        Op::SegmentSoftmax(a, group) => {
            let c = out.cols;
            let y = &out.data;
            accumulate(nodes, grads, *a, |ga| {
                for seg in 0..out.rows / group {
                    for col in 0..c {
                        let idx = |r: usize| (seg * group + r) * c + col;
                        let dot: T = (0..*group).map(|r| y[idx(r)] * gd[idx(r)]).sum();
                        for r in 0..*group {
                            ga[idx(r)] += y[idx(r)] * (gd[idx(r)] - dot);
                        }
                    }
                }
            });
        }
        Op::LogSoftmax(a) => {
            let c = out.cols;
            accumulate(nodes, grads, *a, |ga| {
                for r in 0..out.rows {
                    let grow = &gd[r * c..(r + 1) * c];
                    let s: T = grow.iter().copied().sum();
                    for j in 0..c {
                        ga[r * c + j] += grow[j] - out.data[r * c + j].exp() * s;
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        } => {
            let c = out.cols;
            let gam = &nodes[*gamma].value.data;
            accumulate(nodes, grads, *x, |gx| {
                let nc = T::of(c as f64);
                for r in 0..out.rows {
                    let span = r * c..(r + 1) * c;
                    let (grow, xh) = (&gd[span.clone()], &xhat[span.clone()]);
                    let mut s1 = T::zero();
                    let mut s2 = T::zero();
                    for j in 0..c {
                        let d = grow[j] * gam[j];
                        s1 += d;
                        s2 += d * xh[j];
                    }
                    for j in 0..c {
                        let d = grow[j] * gam[j];
                        gx[r * c + j] += inv_std[r] / nc * (nc * d - s1 - xh[j] * s2);
                    }
                }
            });
            accumulate(nodes, grads, *gamma, |gg| {
                for (r, grow) in gd.chunks(c).enumerate() {
                    for j in 0..c {
                        gg[j] += grow[j] * xhat[r * c + j];
                    }
                }
            });
            accumulate(nodes, grads, *beta, |gb| {
                for grow in gd.chunks(c) {
                    add_into(gb, grow);
                }
            });
        }
        Op::Dropout(a, mask) => accumulate(nodes, grads, *a, |ga| {
            for i in 0..ga.len() {
                ga[i] += gd[i] * mask[i];
            }
        }),
        Op::Sum(a) => {
            let s = gd[0];
            accumulate(nodes, grads, *a, |ga| {
                for v in ga.iter_mut() {
                    *v += s;
                }
            });
        }
        Op::SelectPerRow(a, idx) => {
            let c = nodes[*a].value.cols;
            accumulate(nodes, grads, *a, |ga| {
                for (r, &j) in idx.iter().enumerate() {
                    ga[r * c + j] += gd[r];
                }
            });
        }
        Op::SumColBlocks(a, blocks) => {
            let c = nodes[*a].value.cols;
            let w = c / blocks;
            accumulate(nodes, grads, *a, |ga| {
                for (r, row) in ga.chunks_mut(c).enumerate() {
                    for (k, span) in row.chunks_mut(w).enumerate() {
                        let d = gd[r * blocks + k];
                        span.iter_mut().for_each(|v| *v += d);
                    }
                }
            });
        }
        Op::RepeatCols(a, width) => {
            let h = nodes[*a].value.cols;
            accumulate(nodes, grads, *a, |ga| {
                for (r, row) in gd.chunks(h * width).enumerate() {
                    for (k, span) in row.chunks(*width).enumerate() {
                        ga[r * h + k] += span.iter().copied().sum::<T>();
                    }
                }
            });
        }
        Op::GatherSum(terms) => {
            for (t, idx) in terms {
                match idx {
                    None => accumulate_copy(nodes, grads, *t, g),
                    Some(idx) => {
                        let c = out.cols;
                        accumulate(nodes, grads, *t, |gt| {
                            for (r, &src) in idx.iter().enumerate() {
                                add_into(&mut gt[src * c..(src + 1) * c], &gd[r * c..(r + 1) * c]);
                            }
                        });
                    }
                }
            }
        }
        Op::GatheredBlockDot { a, idx, b, blocks } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let c = bv.cols;
            let w = c / blocks;
            accumulate(nodes, grads, *a, |ga| {
                for (r, &src) in idx.iter().enumerate() {
                    let dst = &mut ga[src * c..(src + 1) * c];
                    for (k, (d, b)) in dst
                        .chunks_mut(w)
                        .zip(bv.data[r * c..(r + 1) * c].chunks(w))
                        .enumerate()
                    {
                        axpy(d, gd[r * blocks + k], b);
                    }
                }
            });
            accumulate(nodes, grads, *b, |gb| {
                for (r, &src) in idx.iter().enumerate() {
                    let dst = &mut gb[r * c..(r + 1) * c];
                    for (k, (d, a)) in dst.chunks_mut(w).zip(av.row(src).chunks(w)).enumerate() {
                        axpy(d, gd[r * blocks + k], a);
                    }
                }
            });
        }
        Op::SegmentAttend { w, v, group } => {
            let (wv, vv) = (&nodes[*w].value, &nodes[*v].value);
            let (h, c) = (wv.cols, vv.cols);
            let width = c / h;
            accumulate(nodes, grads, *w, |gw| {
                for r in 0..wv.rows {
                    let go = &gd[(r / group) * c..(r / group + 1) * c];
                    let vr = &vv.data[r * c..(r + 1) * c];
                    for k in 0..h {
                        let span = k * width..(k + 1) * width;
                        gw[r * h + k] += go[span.clone()]
                            .iter()
                            .zip(&vr[span])
                            .map(|(&x, &y)| x * y)
                            .sum::<T>();
                    }
                }
            });
            accumulate(nodes, grads, *v, |gv| {
                for r in 0..wv.rows {
                    let go = &gd[(r / group) * c..(r / group + 1) * c];
                    for (k, (d, g)) in gv[r * c..(r + 1) * c]
                        .chunks_mut(width)
                        .zip(go.chunks(width))
                        .enumerate()
                    {
                        axpy(d, wv.data[r * h + k], g);
                    }
                }
            });
        }
    }
}

/// `dst += alpha * src`.
fn axpy<T: Real>(dst: &mut [T], alpha: T, src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += alpha * s);
}

/// Tanh-approximated GELU and its tanh term.
fn gelu<T: Real>(x: T) -> (T, T) {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    // tanh(u) = 1 - 2 / (e^{2u} + 1): one exp instead of libm's tanh, and
    // the absolute error stays at rounding level. Saturates correctly when
    // the exp overflows or underflows.
    let two = T::of(2.0);
    let t = T::one() - two / ((two * c * (x + a * x * x * x)).exp() + T::one());
    (half * x * (T::one() + t), t)
}

fn gelu_grad<T: Real>(x: T, t: T) -> T {
    let (c, a, half) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5));
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

impl<'g, T: Real> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.g
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.g.value(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.value().shape()
    }

    pub fn rows(&self) -> usize {
        self.value().rows
    }

    pub fn cols(&self) -> usize {
        self.value().cols
    }

    /// Value of a 1x1 variable.
    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.shape(), [1, 1], "item on non-scalar");
        v.data[0]
    }

    fn same_graph(&self, o: &Var<'g, T>) {
        assert!(std::ptr::eq(self.g, o.g), "variables from different graphs");
    }

    fn binary(self, o: Var<'g, T>, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Var<'g, T> {
        self.same_graph(&o);
        let (a, b) = (self.value(), o.value());
        assert_eq!(a.shape(), b.shape(), "{name} shape mismatch");
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        self.g.push(
            Tensor::new(a.rows, a.cols, data),
            op,
            self.g.needs(&[self.id, o.id]),
            name,
        )
    }

    pub fn matmul(self, o: Var<'g, T>) -> Var<'g, T> {
        self.same_graph(&o);
        let out = self.value().matmul(&o.value());
        self.g.push(
            out,
            Op::MatMul(self.id, o.id),
            self.g.needs(&[self.id, o.id]),
            "matmul",
        )
    }

    pub fn add(self, o: Var<'g, T>) -> Var<'g, T> {
        self.binary(o, "add", |a, b| a + b, Op::Add(self.id, o.id))
    }

    pub fn sub(self, o: Var<'g, T>) -> Var<'g, T> {
        self.binary(o, "sub", |a, b| a - b, Op::Sub(self.id, o.id))
    }

    pub fn mul(self, o: Var<'g, T>) -> Var<'g, T> {
        self.binary(o, "mul", |a, b| a * b, Op::Mul(self.id, o.id))
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row(self, bias: Var<'g, T>) -> Var<'g, T> {
        self.same_graph(&bias);
        let (a, b) = (self.value(), bias.value());
        assert_eq!(b.shape(), [1, a.cols], "add_row bias shape");
        let mut out = (*a).clone();
        for row in out.data.chunks_mut(a.cols) {
            add_into(row, &b.data);
        }
        self.g.push(
            out,
            Op::AddRow(self.id, bias.id),
            self.g.needs(&[self.id, bias.id]),
            "add_row",
        )
    }

    pub fn scale(self, c: f64) -> Var<'g, T> {
        let c = T::of(c);
        self.g
            .unary(self.id, "scale", |v| v * c, Op::Scale(self.id, c))
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        self.g.unary(
            self.id,
            "sigmoid",
            |v| T::one() / (T::one() + (-v).exp()),
            Op::Sigmoid(self.id),
        )
    }

    pub fn tanh(self) -> Var<'g, T> {
        self.g
            .unary(self.id, "tanh", |v| v.tanh(), Op::Tanh(self.id))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(self) -> Var<'g, T> {
        let a = self.value();
        let (out, tanh): (Vec<T>, Vec<T>) = a.data.iter().map(|&v| gelu(v)).unzip();
        self.g.push(
            Tensor::new(a.rows, a.cols, out),
            Op::Gelu(self.id, tanh),
            self.g.needs(&[self.id]),
            "gelu",
        )
    }

    pub fn relu(self) -> Var<'g, T> {
        self.g
            .unary(self.id, "relu", |v| v.max(T::zero()), Op::Relu(self.id))
    }

    pub fn exp(self) -> Var<'g, T> {
        self.g.unary(self.id, "exp", |v| v.exp(), Op::Exp(self.id))
    }

    pub fn ln(self) -> Var<'g, T> {
        self.g.unary(self.id, "log", |v| v.ln(), Op::Log(self.id))
    }

    /// Horizontal concatenation of equal-height blocks.
    pub fn concat_cols(parts: &[Var<'g, T>]) -> Var<'g, T> {
        let g = parts[0].g;
        let vals: Vec<_> = parts
            .iter()
            .map(|p| {
                parts[0].same_graph(p);
                p.value()
            })
            .collect();
        let rows = vals[0].rows;
        assert!(
            vals.iter().all(|v| v.rows == rows),
            "concat_cols row mismatch"
        );
        let cols: usize = vals.iter().map(|v| v.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for v in &vals {
                data.extend_from_slice(v.row(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        g.push(
            Tensor::new(rows, cols, data),
            Op::Concat(ids.clone()),
            g.needs(&ids),
            "concat",
        )
    }

    pub fn slice_cols(self, start: usize, width: usize) -> Var<'g, T> {
        let a = self.value();
        assert!(start + width <= a.cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(a.rows * width);
        for r in 0..a.rows {
            data.extend_from_slice(&a.row(r)[start..start + width]);
        }
        self.g.push(
            Tensor::new(a.rows, width, data),
            Op::SliceCols(self.id, start),
            self.g.needs(&[self.id]),
            "slice_cols",
        )
    }

    pub fn slice_rows(self, start: usize, count: usize) -> Var<'g, T> {
        let a = self.value();
        assert!(start + count <= a.rows, "slice_rows out of range");
        let data = a.data[start * a.cols..(start + count) * a.cols].to_vec();
        self.g.push(
            Tensor::new(count, a.cols, data),
            Op::SliceRows(self.id, start),
            self.g.needs(&[self.id]),
            "slice_rows",
        )
    }

    /// Row `r` of the output is row `idx[r]` of the input.
    pub fn gather_rows(self, idx: Rc<[usize]>) -> Var<'g, T> {
        let a = self.value();
        let mut data = Vec::with_capacity(idx.len() * a.cols);
        for &i in idx.iter() {
            data.extend_from_slice(a.row(i));
        }
        let out = Tensor::new(idx.len(), a.cols, data);
        self.g.push(
            out,
            Op::Gather(self.id, idx),
            self.g.needs(&[self.id]),
            "gather_rows",
        )
    }

    /// Sums consecutive groups of `group` rows.
    pub fn segment_sum(self, group: usize) -> Var<'g, T> {
        let a = self.value();
        assert!(
            group > 0 && a.rows.is_multiple_of(group),
            "segment_sum group"
        );
        let mut out = Tensor::zeros(a.rows / group, a.cols);
        for (r, row) in a.data.chunks(a.cols).enumerate() {
            let s = r / group;
            add_into(&mut out.data[s * a.cols..(s + 1) * a.cols], row);
        }
        self.g.push(
            out,
            Op::SegmentSum(self.id, group),
            self.g.needs(&[self.id]),
            "segment_sum",
        )
    }

    /// Softmax down each column within consecutive groups of `group` rows.
    pub fn segment_softmax(self, group: usize) -> Var<'g, T> {
        let a = self.value();
        assert!(
            group > 0 && a.rows.is_multiple_of(group),
            "segment_softmax group"
        );
        let c = a.cols;
        let mut out = (*a).clone();
        for seg in 0..a.rows / group {
            for col in 0..c {
                let idx = |r: usize| (seg * group + r) * c + col;
                let m = (0..group)
                    .map(|r| a.data[idx(r)])
                    .fold(T::neg_infinity(), T::max);
                let mut s = T::zero();
                for r in 0..group {
                    let e = (a.data[idx(r)] - m).exp();
                    out.data[idx(r)] = e;
                    s += e;
                }
                for r in 0..group {
                    out.data[idx(r)] = out.data[idx(r)] / s;
                }
            }
        }
        self.g.push(
            out,
            Op::SegmentSoftmax(self.id, group),
            self.g.needs(&[self.id]),
            "segment_softmax",
        )
    }

    pub fn log_softmax_rows(self) -> Var<'g, T> {
        let a = self.value();
        let mut out = (*a).clone();
        for row in out.data.chunks_mut(a.cols) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.g.push(
            out,
            Op::LogSoftmax(self.id),
            self.g.needs(&[self.id]),
            "log_softmax",
        )
    }

    /// Row-wise normalization with learned scale and shift (`1 x cols` each).
    pub fn layer_norm(self, gamma: Var<'g, T>, beta: Var<'g, T>) -> Var<'g, T> {
        let a = self.value();
        let c = a.cols;
        let (gm, bt) = (gamma.value(), beta.value());
        assert!(
            gm.shape() == [1, c] && bt.shape() == [1, c],
            "layer_norm params"
        );
        let nc = T::of(c as f64);
        let mut xhat = Vec::with_capacity(a.len());
        let mut inv_std = Vec::with_capacity(a.rows);
        let mut out = Vec::with_capacity(a.len());
        for row in a.data.chunks(c) {
            let mean = row.iter().copied().sum::<T>() / nc;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nc;
            let is = T::one() / (var + T::of(LN_EPS)).sqrt();
            inv_std.push(is);
            for j in 0..c {
                let xh = (row[j] - mean) * is;
                xhat.push(xh);
                out.push(xh * gm.data[j] + bt.data[j]);
            }
        }
        let ids = [self.id, gamma.id, beta.id];
        let op = Op::LayerNorm {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            xhat,
            inv_std,
        };
        self.g.push(
            Tensor::new(a.rows, c, out),
            op,
            self.g.needs(&ids),
            "layer_norm",
        )
    }

    /// Inverted dropout; the identity on evaluation graphs or when `p == 0`.
    pub fn dropout(self, p: f64) -> Var<'g, T> {
        assert!((0.0..1.0).contains(&p), "dropout rate must lie in [0, 1)");
        if !self.g.training || p == 0.0 {
            return self;
        }
        let a = self.value();
        let keep = T::of(1.0 / (1.0 - p));
        let mut rng = self.g.rng.borrow_mut();
        let mask: Vec<T> = (0..a.len())
            .map(|_| if rng.uniform() < p { T::zero() } else { keep })
            .collect();
        drop(rng);
        let data = a.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.g.push(
            Tensor::new(a.rows, a.cols, data),
            Op::Dropout(self.id, mask),
            self.g.needs(&[self.id]),
            "dropout",
        )
    }

    pub fn sum(self) -> Var<'g, T> {
        let s = self.value().data.iter().copied().sum();
        self.g.push(
            Tensor::scalar(s),
            Op::Sum(self.id),
            self.g.needs(&[self.id]),
            "sum",
        )
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// `m x 1` column holding `a[r, idx[r]]`.
    pub fn select_per_row(self, idx: Rc<[usize]>) -> Var<'g, T> {
        let a = self.value();
        assert_eq!(idx.len(), a.rows, "select_per_row index count");
        let data = idx.iter().enumerate().map(|(r, &j)| a.at(r, j)).collect();
        self.g.push(
            Tensor::new(a.rows, 1, data),
            Op::SelectPerRow(self.id, idx),
            self.g.needs(&[self.id]),
            "select_per_row",
        )
    }

    /// Splits columns into `blocks` equal contiguous blocks and sums each,
    /// giving `rows x blocks`.
    pub fn sum_col_blocks(self, blocks: usize) -> Var<'g, T> {
        let a = self.value();
        assert!(
            blocks > 0 && a.cols.is_multiple_of(blocks),
            "sum_col_blocks width"
        );
        let w = a.cols / blocks;
        let data = a.data.chunks(w).map(|c| c.iter().copied().sum()).collect();
        self.g.push(
            Tensor::new(a.rows, blocks, data),
            Op::SumColBlocks(self.id, blocks),
            self.g.needs(&[self.id]),
            "sum_col_blocks",
        )
    }

    /// Repeats every column `width` times in place, giving `rows x cols*width`.
    pub fn repeat_cols(self, width: usize) -> Var<'g, T> {
        let a = self.value();
        let data = a
            .data
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, width))
            .collect();
        self.g.push(
            Tensor::new(a.rows, a.cols * width, data),
            Op::RepeatCols(self.id, width),
            self.g.needs(&[self.id]),
            "repeat_cols",
        )
    }

    /// Sum of equal-shape terms, each optionally row-gathered first:
    /// `sum_t term_t[idx_t[r]]`. Saves materializing every gather.
    pub fn gather_sum(terms: &[(Var<'g, T>, Option<Rc<[usize]>>)]) -> Var<'g, T> {
        let g = terms[0].0.g;
        let rows_of = |(v, idx): &(Var<'g, T>, Option<Rc<[usize]>>)| {
            idx.as_ref().map_or_else(|| v.rows(), |i| i.len())
        };
        let (rows, cols) = (rows_of(&terms[0]), terms[0].0.cols());
        let mut out = Tensor::zeros(rows, cols);
        for term in terms {
            terms[0].0.same_graph(&term.0);
            let a = term.0.value();
            assert!(
                rows_of(term) == rows && a.cols == cols,
                "gather_sum shape mismatch"
            );
            match &term.1 {
                None => add_into(&mut out.data, &a.data),
                Some(idx) => {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut out.data[r * cols..(r + 1) * cols], a.row(src));
                    }
                }
            }
        }
        let ids: Vec<usize> = terms.iter().map(|t| t.0.id).collect();
        let op = Op::GatherSum(terms.iter().map(|(v, i)| (v.id, i.clone())).collect());
        g.push(out, op, g.needs(&ids), "gather_sum")
    }

    /// `out[r, b] = sum over block b of self[idx[r], c] * other[r, c]`, giving
    /// `idx.len() x blocks`.
    pub fn gathered_block_dot(
        self,
        idx: Rc<[usize]>,
        other: Var<'g, T>,
        blocks: usize,
    ) -> Var<'g, T> {
        self.same_graph(&other);
        let (a, b) = (self.value(), other.value());
        assert!(
            a.cols == b.cols && b.rows == idx.len(),
            "gathered_block_dot shapes"
        );
        assert!(
            blocks > 0 && b.cols % blocks == 0,
            "gathered_block_dot width"
        );
        let (c, w) = (b.cols, b.cols / blocks);
        let mut data = Vec::with_capacity(b.rows * blocks);
        for (r, &src) in idx.iter().enumerate() {
            let (ar, br) = (a.row(src), &b.data[r * c..(r + 1) * c]);
            for k in 0..blocks {
                data.push(
                    ar[k * w..(k + 1) * w]
                        .iter()
                        .zip(&br[k * w..(k + 1) * w])
                        .map(|(&x, &y)| x * y)
                        .sum(),
                );
            }
        }
        let op = Op::GatheredBlockDot {
            a: self.id,
            idx,
            b: other.id,
            blocks,
        };
        self.g.push(
            Tensor::new(b.rows, blocks, data),
            op,
            self.g.needs(&[self.id, other.id]),
            "gathered_block_dot",
        )
    }

    /// Weighted sum of value rows within consecutive groups of `group`
    /// rows. `self` holds one weight per head (`rows x heads`) and head `h`
    /// scales columns `h*w..(h+1)*w` of `values`.
    pub fn segment_attend(self, values: Var<'g, T>, group: usize) -> Var<'g, T> {
        self.same_graph(&values);
        let (wv, vv) = (self.value(), values.value());
        let (h, c) = (wv.cols, vv.cols);
        assert!(
            wv.rows == vv.rows && h > 0 && c % h == 0,
            "segment_attend shapes"
        );
        assert!(group > 0 && wv.rows % group == 0, "segment_attend group");
        let width = c / h;
        let mut out = Tensor::zeros(wv.rows / group, c);
        for r in 0..wv.rows {
            let o = &mut out.data[(r / group) * c..(r / group + 1) * c];
            let vr = &vv.data[r * c..(r + 1) * c];
            for (k, (d, v)) in o.chunks_mut(width).zip(vr.chunks(width)).enumerate() {
                axpy(d, wv.data[r * h + k], v);
            }
        }
        let op = Op::SegmentAttend {
            w: self.id,
            v: values.id,
            group,
        };
        self.g.push(
            out,
            op,
            self.g.needs(&[self.id, values.id]),
            "segment_attend",
        )
    }
}
