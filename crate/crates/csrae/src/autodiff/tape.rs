use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use ndarray::{concatenate, Array2, Axis};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.8378770664093453;

type BackwardFn = Box<dyn Fn(&Array2<f64>) -> Vec<Array2<f64>>>;

struct Node {
    data: Array2<f64>,
    grad: Array2<f64>,
    grad_set: bool,
    backward_done: bool,
    parents: Vec<Value>,
    backward: Option<BackwardFn>,
}

/// A node in the computation graph: forward data plus a same-shape gradient
/// accumulator. Cloning a `Value` clones the handle, not the data.
#[derive(Clone)]
pub struct Value(Rc<RefCell<Node>>);

impl Value {
    pub fn new(data: Array2<f64>) -> Self {
        let grad = Array2::zeros(data.raw_dim());
        Value(Rc::new(RefCell::new(Node {
            data,
            grad,
            grad_set: false,
            backward_done: false,
            parents: Vec::new(),
            backward: None,
        })))
    }

    pub fn scalar(v: f64) -> Self {
        Value::new(Array2::from_elem((1, 1), v))
    }

    pub fn row(v: &[f64]) -> Self {
        Value::new(Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap())
    }

    fn from_op(data: Array2<f64>, parents: Vec<Value>, backward: BackwardFn) -> Self {
        let grad = Array2::zeros(data.raw_dim());
        Value(Rc::new(RefCell::new(Node {
            data,
            grad,
            grad_set: false,
            backward_done: false,
            parents,
            backward: Some(backward),
        })))
    }

    pub fn data(&self) -> Ref<'_, Array2<f64>> {
        Ref::map(self.0.borrow(), |n| &n.data)
    }

    pub fn grad(&self) -> Ref<'_, Array2<f64>> {
        Ref::map(self.0.borrow(), |n| &n.grad)
    }

    pub fn shape(&self) -> (usize, usize) {
        let d = self.0.borrow();
        (d.data.nrows(), d.data.ncols())
    }

    pub fn item(&self) -> f64 {
        let d = self.0.borrow();
        assert_eq!(d.data.len(), 1, "item() on non-scalar value");
        d.data[[0, 0]]
    }

    pub fn grad_is_set(&self) -> bool {
        self.0.borrow().grad_set
    }

    pub fn zero_grad(&self) {
        let mut n = self.0.borrow_mut();
        n.grad.fill(0.0);
        n.grad_set = false;
        n.backward_done = false;
    }

    /// Overwrites the forward data in place; shape must not change.
    pub fn set_data(&self, data: Array2<f64>) {
        let mut n = self.0.borrow_mut();
        assert_eq!(n.data.raw_dim(), data.raw_dim());
        n.data = data;
    }

    pub fn update_data(&self, f: impl FnOnce(&mut Array2<f64>)) {
        f(&mut self.0.borrow_mut().data)
    }

    fn ptr(&self) -> *const RefCell<Node> {
        Rc::as_ptr(&self.0)
    }

    /// Reverse topological sweep from a scalar root. Gradients accumulate
    /// additively into every node reachable from the root.
    pub fn backward(&self) -> Result<()> {
        {
            let mut root = self.0.borrow_mut();
            if root.data.len() != 1 {
                return Err(Error::ShapeMismatch(format!(
                    "backward root must be scalar, got {:?}",
                    root.data.shape()
                )));
            }
            if root.backward_done {
                return Err(Error::arg(
                    "backward called twice on the same root without zero_grad",
                ));
            }
            root.backward_done = true;
        }

        let mut order: Vec<Value> = Vec::new();
        let mut seen: HashSet<*const RefCell<Node>> = HashSet::new();
        // iterative DFS post-order
        let mut stack: Vec<(Value, usize)> = vec![(self.clone(), 0)];
        while let Some((v, child)) = stack.pop() {
            if child == 0 && !seen.insert(v.ptr()) {
                continue;
            }
            let parent_count = v.0.borrow().parents.len();
            if child < parent_count {
                let next = v.0.borrow().parents[child].clone();
                stack.push((v, child + 1));
                if !seen.contains(&next.ptr()) {
                    stack.push((next, 0));
                }
            } else {
                order.push(v);
            }
        }

        {
            let mut root = self.0.borrow_mut();
            root.grad.fill(1.0);
            root.grad_set = true;
        }

        for v in order.iter().rev() {
            let (grad_out, parents, contribs) = {
                let n = v.0.borrow();
                let Some(backward) = &n.backward else { continue };
                let contribs = backward(&n.grad);
                (n.grad.clone(), n.parents.clone(), contribs)
            };
            let _ = grad_out;
            debug_assert_eq!(parents.len(), contribs.len());
            for (p, c) in parents.iter().zip(contribs) {
                let mut pn = p.0.borrow_mut();
                debug_assert_eq!(pn.grad.raw_dim(), c.raw_dim());
                pn.grad += &c;
                pn.grad_set = true;
            }
        }
        Ok(())
    }
}

// Reduces a full-shape gradient back to a possibly-broadcast operand shape.
fn reduce_to(grad: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = grad.clone();
    if shape.0 == 1 && g.nrows() > 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() > 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn broadcast_shapes(a: (usize, usize), b: (usize, usize), op: &str) -> Result<(usize, usize)> {
    let rows = if a.0 == b.0 {
        a.0
    } else if a.0 == 1 {
        b.0
    } else if b.0 == 1 {
        a.0
    } else {
        return Err(Error::ShapeMismatch(format!("{op}: {a:?} vs {b:?}")));
    };
    let cols = if a.1 == b.1 {
        a.1
    } else if a.1 == 1 {
        b.1
    } else if b.1 == 1 {
        a.1
    } else {
        return Err(Error::ShapeMismatch(format!("{op}: {a:?} vs {b:?}")));
    };
    Ok((rows, cols))
}

fn broadcast_to(a: &Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    a.broadcast((shape.0, shape.1)).unwrap().to_owned()
}

impl Value {
    fn binary(
        &self,
        rhs: &Value,
        op: &str,
        forward: impl Fn(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
        backward: impl Fn(&Array2<f64>, &Array2<f64>, &Array2<f64>) -> (Array2<f64>, Array2<f64>)
            + 'static,
    ) -> Result<Value> {
        let (sa, sb) = (self.shape(), rhs.shape());
        let out_shape = broadcast_shapes(sa, sb, op)?;
        let a = broadcast_to(&self.data(), out_shape);
        let b = broadcast_to(&rhs.data(), out_shape);
        let data = forward(&a, &b);
        Ok(Value::from_op(
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let (ga, gb) = backward(g, &a, &b);
                vec![reduce_to(&ga, sa), reduce_to(&gb, sb)]
            }),
        ))
    }

    fn unary(
        &self,
        forward: impl Fn(&Array2<f64>) -> Array2<f64>,
        backward: impl Fn(&Array2<f64>, &Array2<f64>, &Array2<f64>) -> Array2<f64> + 'static,
    ) -> Value {
        let x = self.data().clone();
        let data = forward(&x);
        let y = data.clone();
        Value::from_op(
            data,
            vec![self.clone()],
            Box::new(move |g| vec![backward(g, &x, &y)]),
        )
    }

    pub fn add(&self, rhs: &Value) -> Result<Value> {
        self.binary(rhs, "add", |a, b| a + b, |g, _, _| (g.clone(), g.clone()))
    }

    pub fn sub(&self, rhs: &Value) -> Result<Value> {
        self.binary(rhs, "sub", |a, b| a - b, |g, _, _| (g.clone(), -g))
    }

    pub fn mul(&self, rhs: &Value) -> Result<Value> {
        self.binary(rhs, "mul", |a, b| a * b, |g, a, b| (g * b, g * a))
    }

    pub fn div(&self, rhs: &Value) -> Result<Value> {
        self.binary(
            rhs,
            "div",
            |a, b| a / b,
            |g, a, b| (g / b, -(g * a) / (b * b)),
        )
    }

    pub fn neg(&self) -> Value {
        self.unary(|x| -x, |g, _, _| -g)
    }

    pub fn scale(&self, c: f64) -> Value {
        self.unary(move |x| x * c, move |g, _, _| g * c)
    }

    pub fn add_scalar(&self, c: f64) -> Value {
        self.unary(move |x| x + c, |g, _, _| g.clone())
    }

    pub fn exp(&self) -> Value {
        self.unary(|x| x.mapv(f64::exp), |g, _, y| g * y)
    }

    pub fn log(&self) -> Value {
        self.unary(|x| x.mapv(f64::ln), |g, x, _| g / x)
    }

    pub fn square(&self) -> Value {
        self.unary(|x| x * x, |g, x, _| 2.0 * (g * x))
    }

    pub fn sqrt(&self) -> Value {
        self.unary(|x| x.mapv(f64::sqrt), |g, _, y| 0.5 * (g / y))
    }

    /// Clamps to `[lo, hi]`; gradient is passed through strictly inside the
    /// interval and zero outside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Value {
        self.unary(
            move |x| x.mapv(|v| v.clamp(lo, hi)),
            move |g, x, _| g * &x.mapv(|v| if v > lo && v < hi { 1.0 } else { 0.0 }),
        )
    }

    pub fn transpose(&self) -> Value {
        self.unary(|x| x.t().to_owned(), |g, _, _| g.t().to_owned())
    }

    pub fn relu(&self) -> Value {
        self.unary(
            |x| x.mapv(|v| v.max(0.0)),
            |g, x, _| g * &x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        )
    }

    /// Softplus with linear/zero asymptotes beyond |x| = 30; backward uses
    /// the sigmoid of the pre-activation.
    pub fn softplus(&self) -> Value {
        self.unary(
            |x| x.mapv(softplus_stable),
            |g, x, _| g * &x.mapv(sigmoid_stable),
        )
    }

    pub fn sigmoid(&self) -> Value {
        self.unary(
            |x| x.mapv(sigmoid_stable),
            |g, _, y| g * &y.mapv(|s| s * (1.0 - s)),
        )
    }

    pub fn tanh(&self) -> Value {
        self.unary(|x| x.mapv(f64::tanh), |g, _, y| g * &y.mapv(|t| 1.0 - t * t))
    }

    pub fn sum(&self) -> Value {
        let shape = self.shape();
        self.unary(
            |x| Array2::from_elem((1, 1), x.sum()),
            move |g, _, _| Array2::from_elem(shape, g[[0, 0]]),
        )
    }

    pub fn mean(&self) -> Value {
        let shape = self.shape();
        let n = (shape.0 * shape.1) as f64;
        self.unary(
            move |x| Array2::from_elem((1, 1), x.sum() / n),
            move |g, _, _| Array2::from_elem(shape, g[[0, 0]] / n),
        )
    }

    /// Row-wise sum: (B, K) -> (B, 1).
    pub fn sum_rows(&self) -> Value {
        let shape = self.shape();
        self.unary(
            |x| x.sum_axis(Axis(1)).insert_axis(Axis(1)),
            move |g, _, _| broadcast_to(g, shape),
        )
    }

    /// Row-wise mean: (B, K) -> (B, 1).
    pub fn mean_rows(&self) -> Value {
        self.sum_rows().scale(1.0 / self.shape().1 as f64)
    }

    /// Overflow-safe row-wise log-sum-exp: (B, K) -> (B, 1).
    pub fn logsumexp_rows(&self) -> Value {
        self.unary(
            |x| {
                let mut out = Array2::zeros((x.nrows(), 1));
                for (i, row) in x.rows().into_iter().enumerate() {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    out[[i, 0]] = m + row.mapv(|v| (v - m).exp()).sum().ln();
                }
                out
            },
            |g, x, y| {
                let mut out = Array2::zeros(x.raw_dim());
                for i in 0..x.nrows() {
                    for j in 0..x.ncols() {
                        out[[i, j]] = g[[i, 0]] * (x[[i, j]] - y[[i, 0]]).exp();
                    }
                }
                out
            },
        )
    }

    /// Overflow-safe row-wise softmax.
    pub fn softmax_rows(&self) -> Value {
        self.unary(
            |x| {
                let mut out = x.clone();
                for mut row in out.rows_mut() {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - m).exp());
                    let s = row.sum();
                    row.mapv_inplace(|v| v / s);
                }
                out
            },
            |g, _, y| {
                let mut out = Array2::zeros(y.raw_dim());
                for i in 0..y.nrows() {
                    let dot: f64 = (0..y.ncols()).map(|j| g[[i, j]] * y[[i, j]]).sum();
                    for j in 0..y.ncols() {
                        out[[i, j]] = y[[i, j]] * (g[[i, j]] - dot);
                    }
                }
                out
            },
        )
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(&self) -> Result<Value> {
        self.sub(&self.logsumexp_rows())
    }

    pub fn matmul(&self, rhs: &Value) -> Result<Value> {
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa.1 != sb.0 {
            return Err(Error::ShapeMismatch(format!("matmul: {sa:?} x {sb:?}")));
        }
        let a = self.data().clone();
        let b = rhs.data().clone();
        let data = a.dot(&b);
        Ok(Value::from_op(
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| vec![g.dot(&b.t()), a.t().dot(g)]),
        ))
    }

    /// Column-wise concatenation: (B, C1) ++ (B, C2) -> (B, C1+C2).
    pub fn concat(&self, rhs: &Value) -> Result<Value> {
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa.0 != sb.0 {
            return Err(Error::ShapeMismatch(format!("concat: {sa:?} vs {sb:?}")));
        }
        let data = concatenate![Axis(1), self.data().view(), rhs.data().view()];
        Ok(Value::from_op(
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let ga = g.slice(ndarray::s![.., ..sa.1]).to_owned();
                let gb = g.slice(ndarray::s![.., sa.1..]).to_owned();
                vec![ga, gb]
            }),
        ))
    }

    /// Pairwise log Gaussian overlap between per-row diagonal Gaussians:
    /// rows of (`mu_a`, `var_a`) are B Gaussians, rows of (`mu_b`, `var_b`)
    /// are K Gaussians; output (B, K) holds
    /// `log N(mu_a[b] | mu_b[k], diag(var_a[b] + var_b[k]))`.
    pub fn pairwise_log_overlap(
        mu_a: &Value,
        var_a: &Value,
        mu_b: &Value,
        var_b: &Value,
    ) -> Result<Value> {
        let (sma, sva, smb, svb) = (mu_a.shape(), var_a.shape(), mu_b.shape(), var_b.shape());
        if sma != sva || smb != svb || sma.1 != smb.1 {
            return Err(Error::ShapeMismatch(format!(
                "pairwise_log_overlap: mu_a {sma:?} var_a {sva:?} mu_b {smb:?} var_b {svb:?}"
            )));
        }
        let (bn, d) = sma;
        let kn = smb.0;
        let ma = mu_a.data().clone();
        let va = var_a.data().clone();
        let mb = mu_b.data().clone();
        let vb = var_b.data().clone();
        let mut out = Array2::zeros((bn, kn));
        for b in 0..bn {
            for k in 0..kn {
                let mut acc = 0.0;
                for j in 0..d {
                    let s = va[[b, j]] + vb[[k, j]];
                    let delta = ma[[b, j]] - mb[[k, j]];
                    acc += -0.5 * (LN_2PI + s.ln()) - delta * delta / (2.0 * s);
                }
                out[[b, k]] = acc;
            }
        }
        Ok(Value::from_op(
            out,
            vec![mu_a.clone(), var_a.clone(), mu_b.clone(), var_b.clone()],
            Box::new(move |g| {
                let mut gma = Array2::zeros((bn, d));
                let mut gva = Array2::zeros((bn, d));
                let mut gmb = Array2::zeros((kn, d));
                let mut gvb = Array2::zeros((kn, d));
                for b in 0..bn {
                    for k in 0..kn {
                        let go = g[[b, k]];
                        if go == 0.0 {
                            continue;
                        }
                        for j in 0..d {
                            let s = va[[b, j]] + vb[[k, j]];
                            let delta = ma[[b, j]] - mb[[k, j]];
                            let dmu = -delta / s;
                            let dvar = -0.5 / s + delta * delta / (2.0 * s * s);
                            gma[[b, j]] += go * dmu;
                            gmb[[k, j]] -= go * dmu;
                            gva[[b, j]] += go * dvar;
                            gvb[[k, j]] += go * dvar;
                        }
                    }
                }
                vec![gma, gva, gmb, gvb]
            }),
        ))
    }
}

fn softplus_stable(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        0.0
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid_stable(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
