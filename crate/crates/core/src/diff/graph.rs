//! Reverse-mode automatic differentiation on a per-evaluation tape.
//!
//! A `Graph` owns an append-only arena of nodes; `Var` is a copyable handle
//! into it. Node ids are topologically ordered by construction, so the
//! backward pass is a single reverse sweep. Graphs are cheap and short-lived:
//! optimizers build one per loss evaluation (one per frame when frames are
//! evaluated in parallel) and read gradients off the leaves.

use std::cell::RefCell;

use super::tensor::Tensor;

type BackFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackFn>,
    requires_grad: bool,
}

#[derive(Clone, Copy)]
pub struct Var<'g> {
    pub(crate) id: usize,
    pub(crate) graph: &'g Graph,
}

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&self, value: Tensor, parents: Vec<usize>, backward: Option<BackFn>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = if backward.is_some() {
            parents.iter().any(|&p| nodes[p].requires_grad)
        } else {
            false
        };
        let backward = if requires_grad { backward } else { None };
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        nodes.len() - 1
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { id, graph: self }
    }

    /// Leaf that participates in gradient computation.
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        let id = self.push(t, vec![], None);
        self.nodes.borrow_mut()[id].requires_grad = true;
        self.var(id)
    }

    /// Leaf excluded from gradient computation; subgraphs that depend only on
    /// constants carry no backward closures.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        let id = self.push(t, vec![], None);
        self.var(id)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape.clone()
    }

    /// Register an operation with a custom backward closure. The closure
    /// receives the output cotangent and must return one cotangent per
    /// parent, in order and with matching shapes.
    pub fn custom(&self, parents: &[Var], value: Tensor, backward: BackFn) -> Var<'_> {
        let ids = parents.iter().map(|p| p.id).collect();
        let id = self.push(value, ids, Some(backward));
        self.var(id)
    }

    /// Reverse sweep from a scalar root. Returns the cotangent for every node
    /// id; callers read off the leaves they care about.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.id].value.len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(Tensor::scalar(1.0));
        for id in (0..=root.id).rev() {
            let Some(back) = nodes[id].backward.as_ref() else {
                continue;
            };
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let pgrads = back(&gout);
            assert_eq!(pgrads.len(), nodes[id].parents.len());
            for (pid, pg) in nodes[id].parents.iter().zip(pgrads) {
                if !nodes[*pid].requires_grad {
                    continue;
                }
                match &mut grads[*pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
            grads[id] = Some(gout);
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zeros when the leaf never received a cotangent.
    pub fn of(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(t) => t.clone(),
            None => Tensor::zeros(v.graph.shape(v)),
        }
    }
}

// ---------------------------------------------------------------------------
// elementwise and scalar ops
// ---------------------------------------------------------------------------

fn same_shape(a: &Tensor, b: &Tensor) {
    assert_eq!(a.shape, b.shape, "elementwise op on mismatched shapes");
}

impl<'g> Var<'g> {
    pub fn value(&self) -> Tensor {
        self.graph.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.shape(*self)
    }

    fn unary(
        &self,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'g> {
        let x = self.value();
        let y = Tensor::new(x.shape.clone(), x.data.iter().map(|&v| f(v)).collect());
        let yv = y.clone();
        self.graph.custom(
            &[*self],
            y,
            Box::new(move |g| {
                vec![Tensor::new(
                    x.shape.clone(),
                    x.data
                        .iter()
                        .zip(&yv.data)
                        .zip(&g.data)
                        .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                        .collect(),
                )]
            }),
        )
    }

    pub fn add(&self, o: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), o.value());
        same_shape(&a, &b);
        let y = Tensor::new(a.shape.clone(), a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect());
        self.graph
            .custom(&[*self, o], y, Box::new(move |g| vec![g.clone(), g.clone()]))
    }

    pub fn sub(&self, o: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), o.value());
        same_shape(&a, &b);
        let y = Tensor::new(a.shape.clone(), a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect());
        self.graph.custom(
            &[*self, o],
            y,
            Box::new(move |g| {
                let neg = Tensor::new(g.shape.clone(), g.data.iter().map(|v| -v).collect());
                vec![g.clone(), neg]
            }),
        )
    }

    pub fn mul(&self, o: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), o.value());
        same_shape(&a, &b);
        let y = Tensor::new(a.shape.clone(), a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect());
        self.graph.custom(
            &[*self, o],
            y,
            Box::new(move |g| {
                let ga = Tensor::new(g.shape.clone(), g.data.iter().zip(&b.data).map(|(g, b)| g * b).collect());
                let gb = Tensor::new(g.shape.clone(), g.data.iter().zip(&a.data).map(|(g, a)| g * a).collect());
                vec![ga, gb]
            }),
        )
    }

    pub fn div(&self, o: Var<'g>) -> Var<'g> {
        let (a, b) = (self.value(), o.value());
        same_shape(&a, &b);
        let y = Tensor::new(a.shape.clone(), a.data.iter().zip(&b.data).map(|(x, y)| x / y).collect());
        self.graph.custom(
            &[*self, o],
            y,
            Box::new(move |g| {
                let ga = Tensor::new(g.shape.clone(), g.data.iter().zip(&b.data).map(|(g, b)| g / b).collect());
                let gb = Tensor::new(
                    g.shape.clone(),
                    g.data
                        .iter()
                        .zip(&a.data)
                        .zip(&b.data)
                        .map(|((g, a), b)| -g * a / (b * b))
                        .collect(),
                );
                vec![ga, gb]
            }),
        )
    }

    pub fn neg(&self) -> Var<'g> {
        self.mul_scalar(-1.0)
    }

    pub fn add_scalar(&self, s: f64) -> Var<'g> {
        self.unary(move |x| x + s, |_, _| 1.0)
    }

    pub fn mul_scalar(&self, s: f64) -> Var<'g> {
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn square(&self) -> Var<'g> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn exp(&self) -> Var<'g> {
        self.unary(f64::exp, |_, y| y)
    }

    pub fn ln(&self) -> Var<'g> {
        self.unary(f64::ln, |x, _| 1.0 / x)
    }

    /// Square root with a zero subgradient at zero, so exact-zero norms do
    /// not poison the backward pass.
    pub fn sqrt(&self) -> Var<'g> {
        self.unary(f64::sqrt, |_, y| if y == 0.0 { 0.0 } else { 0.5 / y })
    }

    pub fn sin(&self) -> Var<'g> {
        self.unary(f64::sin, |x, _| x.cos())
    }

    pub fn cos(&self) -> Var<'g> {
        self.unary(f64::cos, |x, _| -x.sin())
    }

    pub fn tanh(&self) -> Var<'g> {
        self.unary(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(&self) -> Var<'g> {
        self.unary(
            |x| 1.0 / (1.0 + (-x).exp()),
            |_, y| y * (1.0 - y),
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'g> {
        self.unary(
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, _| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    pub fn recip(&self) -> Var<'g> {
        self.unary(|x| 1.0 / x, |x, _| -1.0 / (x * x))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Var<'g> {
        self.unary(
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    pub fn acos(&self) -> Var<'g> {
        self.unary(
            |x| x.clamp(-1.0, 1.0).acos(),
            |x, _| {
                let c = x.clamp(-1.0 + 1e-12, 1.0 - 1e-12);
                -1.0 / (1.0 - c * c).sqrt()
            },
        )
    }

    // -----------------------------------------------------------------------
    // reductions
    // -----------------------------------------------------------------------

    pub fn sum(&self) -> Var<'g> {
        let x = self.value();
        let shape = x.shape.clone();
        let y = Tensor::scalar(x.data.iter().sum());
        self.graph.custom(
            &[*self],
            y,
            Box::new(move |g| {
                let gi = g.item();
                vec![Tensor::new(shape.clone(), vec![gi; shape.iter().product()])]
            }),
        )
    }

    pub fn mean(&self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Row sums of a 2-d tensor: `[m, n] -> [m]`.
    pub fn sum_cols(&self) -> Var<'g> {
        let x = self.value();
        let (m, n) = (x.rows(), x.cols());
        let mut out = vec![0.0; m];
        for r in 0..m {
            out[r] = x.row(r).iter().sum();
        }
        self.graph.custom(
            &[*self],
            Tensor::vector(out),
            Box::new(move |g| {
                let mut gi = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        gi[r * n + c] = g.data[r];
                    }
                }
                vec![Tensor::new(vec![m, n], gi)]
            }),
        )
    }

    pub fn dot(&self, o: Var<'g>) -> Var<'g> {
        self.mul(o).sum()
    }

    // -----------------------------------------------------------------------
    // shape ops
    // -----------------------------------------------------------------------

    pub fn reshape(&self, shape: Vec<usize>) -> Var<'g> {
        let x = self.value();
        let old = x.shape.clone();
        let y = x.reshaped(shape);
        self.graph.custom(
            &[*self],
            y,
            Box::new(move |g| vec![g.clone().reshaped(old.clone())]),
        )
    }

    pub fn transpose(&self) -> Var<'g> {
        let x = self.value();
        let (m, n) = (x.rows(), x.cols());
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                out[c * m + r] = x.data[r * n + c];
            }
        }
        self.graph.custom(
            &[*self],
            Tensor::new(vec![n, m], out),
            Box::new(move |g| {
                let mut gi = vec![0.0; m * n];
                for r in 0..n {
                    for c in 0..m {
                        gi[c * n + r] = g.data[r * m + c];
                    }
                }
                vec![Tensor::new(vec![m, n], gi)]
            }),
        )
    }

    pub fn slice_rows(&self, r0: usize, r1: usize) -> Var<'g> {
        let x = self.value();
        let n = x.cols();
        let (m, nn) = (x.rows(), n);
        let y = Tensor::new(vec![r1 - r0, n], x.data[r0 * n..r1 * n].to_vec());
        self.graph.custom(
            &[*self],
            y,
            Box::new(move |g| {
                let mut gi = vec![0.0; m * nn];
                gi[r0 * nn..r1 * nn].copy_from_slice(&g.data);
                vec![Tensor::new(vec![m, nn], gi)]
            }),
        )
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Var<'g> {
        let x = self.value();
        let n = x.cols();
        let m = x.rows();
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            out.extend_from_slice(x.row(i));
        }
        let idx = idx.to_vec();
        self.graph.custom(
            &[*self],
            Tensor::new(vec![idx.len(), n], out),
            Box::new(move |g| {
                let mut gi = vec![0.0; m * n];
                for (k, &i) in idx.iter().enumerate() {
                    for c in 0..n {
                        gi[i * n + c] += g.data[k * n + c];
                    }
                }
                vec![Tensor::new(vec![m, n], gi)]
            }),
        )
    }

    /// Extract one column of a 2-d tensor as a vector: `[m, n] -> [m]`.
    pub fn col(&self, j: usize) -> Var<'g> {
        let x = self.value();
        let (m, n) = (x.rows(), x.cols());
        let out: Vec<f64> = (0..m).map(|r| x.data[r * n + j]).collect();
        self.graph.custom(
            &[*self],
            Tensor::vector(out),
            Box::new(move |g| {
                let mut gi = vec![0.0; m * n];
                for r in 0..m {
                    gi[r * n + j] = g.data[r];
                }
                vec![Tensor::new(vec![m, n], gi)]
            }),
        )
    }

    // -----------------------------------------------------------------------
    // broadcasting ops
    // -----------------------------------------------------------------------

    /// `[m, n] + [n]`, row-wise broadcast.
    pub fn add_row(&self, row: Var<'g>) -> Var<'g> {
        let x = self.value();
        let r = row.value();
        let (m, n) = (x.rows(), x.cols());
        assert_eq!(r.len(), n);
        let mut out = x.data.clone();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += r.data[j];
            }
        }
        self.graph.custom(
            &[*self, row],
            Tensor::new(vec![m, n], out),
            Box::new(move |g| {
                let mut gr = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        gr[j] += g.data[i * n + j];
                    }
                }
                vec![g.clone(), Tensor::vector(gr)]
            }),
        )
    }

    /// `[m, n] * [m]`, column-wise broadcast.
    pub fn mul_col(&self, colv: Var<'g>) -> Var<'g> {
        let x = self.value();
        let c = colv.value();
        let (m, n) = (x.rows(), x.cols());
        assert_eq!(c.len(), m);
        let mut out = x.data.clone();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] *= c.data[i];
            }
        }
        let xv = x.clone();
        let cv = c.clone();
        self.graph.custom(
            &[*self, colv],
            Tensor::new(vec![m, n], out),
            Box::new(move |g| {
                let mut gx = vec![0.0; m * n];
                let mut gc = vec![0.0; m];
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] = g.data[i * n + j] * cv.data[i];
                        gc[i] += g.data[i * n + j] * xv.data[i * n + j];
                    }
                }
                vec![Tensor::new(vec![m, n], gx), Tensor::vector(gc)]
            }),
        )
    }

    /// `[m, n] * [n]`, row-wise broadcast.
    pub fn mul_row(&self, rowv: Var<'g>) -> Var<'g> {
        let x = self.value();
        let r = rowv.value();
        let (m, n) = (x.rows(), x.cols());
        assert_eq!(r.len(), n);
        let mut out = x.data.clone();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] *= r.data[j];
            }
        }
        let xv = x.clone();
        let rv = r.clone();
        self.graph.custom(
            &[*self, rowv],
            Tensor::new(vec![m, n], out),
            Box::new(move |g| {
                let mut gx = vec![0.0; m * n];
                let mut gr = vec![0.0; n];
                for i in 0..m {
                    for j in 0..n {
                        gx[i * n + j] = g.data[i * n + j] * rv.data[j];
                        gr[j] += g.data[i * n + j] * xv.data[i * n + j];
                    }
                }
                vec![Tensor::new(vec![m, n], gx), Tensor::vector(gr)]
            }),
        )
    }

    // -----------------------------------------------------------------------
    // linear algebra
    // -----------------------------------------------------------------------

    pub fn matmul(&self, o: Var<'g>) -> Var<'g> {
        let a = self.value();
        let b = o.value();
        let (m, k) = (a.rows(), a.cols());
        let (k2, n) = (b.rows(), b.cols());
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a.data[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += av * brow[j];
                }
            }
        }
        let av = a.clone();
        let bv = b.clone();
        self.graph.custom(
            &[*self, o],
            Tensor::new(vec![m, n], out),
            Box::new(move |g| {
                // dA = g @ B^T, dB = A^T @ g
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g.data[i * n + j] * bv.data[p * n + j];
                        }
                        ga[i * k + p] = acc;
                    }
                }
                let mut gb = vec![0.0; k * n];
                for p in 0..k {
                    for i in 0..m {
                        let avv = av.data[i * k + p];
                        if avv == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[p * n + j] += avv * g.data[i * n + j];
                        }
                    }
                }
                vec![Tensor::new(vec![m, k], ga), Tensor::new(vec![k, n], gb)]
            }),
        )
    }
}

/// Concatenate 2-d tensors along rows.
pub fn concat_rows<'g>(g: &'g Graph, parts: &[Var<'g>]) -> Var<'g> {
    assert!(!parts.is_empty());
    let vals: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
    let n = vals[0].cols();
    let mut data = Vec::new();
    let mut row_counts = Vec::new();
    for v in &vals {
        assert_eq!(v.cols(), n);
        row_counts.push(v.rows());
        data.extend_from_slice(&v.data);
    }
    let m: usize = row_counts.iter().sum();
    g.custom(
        parts,
        Tensor::new(vec![m, n], data),
        Box::new(move |gout| {
            let mut grads = Vec::new();
            let mut off = 0;
            for &rc in &row_counts {
                grads.push(Tensor::new(
                    vec![rc, n],
                    gout.data[off * n..(off + rc) * n].to_vec(),
                ));
                off += rc;
            }
            grads
        }),
    )
}

/// Stack vectors `[m]` as columns of an `[m, k]` tensor.
pub fn stack_cols<'g>(g: &'g Graph, parts: &[Var<'g>]) -> Var<'g> {
    assert!(!parts.is_empty());
    let vals: Vec<Tensor> = parts.iter().map(|p| p.value()).collect();
    let m = vals[0].len();
    let k = vals.len();
    let mut data = vec![0.0; m * k];
    for (j, v) in vals.iter().enumerate() {
        assert_eq!(v.len(), m);
        for i in 0..m {
            data[i * k + j] = v.data[i];
        }
    }
    g.custom(
        parts,
        Tensor::new(vec![m, k], data),
        Box::new(move |gout| {
            (0..k)
                .map(|j| Tensor::vector((0..m).map(|i| gout.data[i * k + j]).collect()))
                .collect()
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::fd::check_gradient;

    #[test]
    fn add_mul_backward() {
        let g = Graph::new();
        let a = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let b = g.leaf(Tensor::vector(vec![3.0, -1.0]));
        let y = a.mul(b).add(a).sum(); // sum(a*b + a)
        assert_eq!(y.value().item(), (3.0 - 2.0) + 3.0);
        let grads = g.backward(y);
        assert_eq!(grads.of(a).data, vec![4.0, 0.0]); // b + 1
        assert_eq!(grads.of(b).data, vec![1.0, 2.0]); // a
    }

    #[test]
    fn matmul_matches_fd() {
        let a0 = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.3, 0.7, -0.2]);
        let b0 = Tensor::new(vec![3, 2], vec![1.0, 0.5, -0.3, 0.2, 0.9, -1.1]);
        check_gradient(
            &a0,
            |g, a| {
                let b = g.constant(b0.clone());
                a.matmul(b).square().sum()
            },
            1e-5,
            1e-6,
        );
        check_gradient(
            &b0,
            |g, b| {
                let a = g.constant(a0.clone());
                a.matmul(b).square().sum()
            },
            1e-5,
            1e-6,
        );
    }

    #[test]
    fn unary_chain_matches_fd() {
        let x = Tensor::vector(vec![0.3, -0.8, 1.7, 0.01]);
        check_gradient(
            &x,
            |_, v| v.exp().sin().mul_scalar(0.5).add_scalar(1.0).ln().sum(),
            1e-6,
            1e-7,
        );
        check_gradient(&x, |_, v| v.tanh().square().mean(), 1e-6, 1e-8);
        check_gradient(&x, |_, v| v.sigmoid().sum(), 1e-6, 1e-8);
    }

    #[test]
    fn broadcast_ops_match_fd() {
        let x = Tensor::new(vec![3, 2], vec![0.1, 0.2, -0.4, 1.0, 2.0, -0.7]);
        let r = Tensor::vector(vec![0.5, -1.5]);
        let c = Tensor::vector(vec![1.0, 2.0, 0.5]);
        check_gradient(
            &x,
            |g, v| {
                v.add_row(g.constant(r.clone()))
                    .mul_col(g.constant(c.clone()))
                    .square()
                    .sum()
            },
            1e-6,
            1e-7,
        );
        check_gradient(
            &r,
            |g, v| g.constant(x.clone()).add_row(v).square().sum(),
            1e-6,
            1e-7,
        );
        check_gradient(
            &c,
            |g, v| g.constant(x.clone()).mul_col(v).square().sum(),
            1e-6,
            1e-7,
        );
    }

    #[test]
    fn gather_concat_stack_match_fd() {
        let x = Tensor::new(vec![4, 3], (0..12).map(|i| i as f64 * 0.1).collect());
        check_gradient(
            &x,
            |g, v| {
                let picked = v.gather_rows(&[2, 0, 2]);
                let joined = concat_rows(g, &[picked, v.slice_rows(1, 3)]);
                let c0 = joined.col(0);
                let c2 = joined.col(2);
                stack_cols(g, &[c0, c2]).square().sum()
            },
            1e-6,
            1e-7,
        );
    }

    #[test]
    fn sqrt_zero_subgradient_is_zero() {
        let g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![0.0, 4.0]));
        let y = x.sqrt().sum();
        let grads = g.backward(y);
        assert_eq!(grads.of(x).data, vec![0.0, 0.25]);
    }

    #[test]
    fn constant_subgraph_skips_backward() {
        let g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.leaf(Tensor::vector(vec![3.0, 4.0]));
        let y = a.square().sum().add(b.sum());
        let grads = g.backward(y);
        assert!(grads.get(a).is_none());
        assert_eq!(grads.of(b).data, vec![1.0, 1.0]);
    }
}
