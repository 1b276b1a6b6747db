//! Minimal reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Tape`] records a forward computation as a topologically ordered list
//! of nodes; each non-leaf node carries pullback closures that map an
//! upstream gradient to gradient contributions for its parents. Calling
//! [`Tape::backward`] replays the list in reverse and returns a gradient
//! per node.
//!
//! The op set is exactly what the score network needs: 2-D matmul,
//! elementwise arithmetic, tanh/ELU, channel-axis concat/slice, axis sums,
//! reshape, and constant-tensor products (used for adjacency gating, which
//! carries no gradient). Tapes built with [`Tape::inference`] skip pullback
//! construction entirely.

use ndarray::{ArrayD, Axis, Ix1, Ix2, IxDyn};

type Pullback = Box<dyn Fn(&ArrayD<f64>) -> ArrayD<f64>>;

struct Node {
    value: ArrayD<f64>,
    parents: Vec<(usize, Pullback)>,
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

fn as2(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("2-d tensor")
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Tape that records values only; `backward` on it returns nothing useful.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<f64>, parents: Vec<(usize, Pullback)>) -> Var {
        let parents = if self.grad_enabled { parents } else { Vec::new() };
        self.nodes.push(Node { value, parents });
        Var(self.nodes.len() - 1)
    }

    /// Introduce an input or parameter tensor.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, Vec::new())
    }

    // -- elementwise ------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(
            value,
            vec![
                (a.0, Box::new(|up: &ArrayD<f64>| up.clone()) as Pullback),
                (b.0, Box::new(|up: &ArrayD<f64>| up.clone())),
            ],
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(
            value,
            vec![
                (a.0, Box::new(|up: &ArrayD<f64>| up.clone()) as Pullback),
                (b.0, Box::new(|up| up.mapv(|v| -v))),
            ],
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        if !self.grad_enabled {
            return self.push(value, Vec::new());
        }
        let av = self.nodes[a.0].value.clone();
        let bv = self.nodes[b.0].value.clone();
        self.push(
            value,
            vec![
                (a.0, Box::new(move |up: &ArrayD<f64>| up * &bv) as Pullback),
                (b.0, Box::new(move |up: &ArrayD<f64>| up * &av)),
            ],
        )
    }

    /// Elementwise product with a constant tensor (no gradient into `c`).
    pub fn mul_const(&mut self, a: Var, c: &ArrayD<f64>) -> Var {
        let value = &self.nodes[a.0].value * c;
        if !self.grad_enabled {
            return self.push(value, Vec::new());
        }
        let cc = c.clone();
        self.push(
            value,
            vec![(a.0, Box::new(move |up: &ArrayD<f64>| up * &cc) as Pullback)],
        )
    }

    /// Subtract a constant tensor.
    pub fn sub_const(&mut self, a: Var, c: &ArrayD<f64>) -> Var {
        let value = &self.nodes[a.0].value - c;
        self.push(value, vec![(a.0, Box::new(|up: &ArrayD<f64>| up.clone()) as Pullback)])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| v * s);
        self.push(value, vec![(a.0, Box::new(move |up| up.mapv(|v| v * s)))])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(f64::tanh);
        if !self.grad_enabled {
            return self.push(value, Vec::new());
        }
        let y = value.clone();
        self.push(
            value,
            vec![(
                a.0,
                Box::new(move |up: &ArrayD<f64>| up * &y.mapv(|t| 1.0 - t * t)) as Pullback,
            )],
        )
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|v| if v > 0.0 { v } else { v.exp() - 1.0 });
        if !self.grad_enabled {
            return self.push(value, Vec::new());
        }
        let y = value.clone();
        self.push(
            value,
            // d/dx elu = 1 for x > 0, exp(x) = elu(x) + 1 otherwise
            vec![(
                a.0,
                Box::new(move |up: &ArrayD<f64>| {
                    up * &y.mapv(|t| if t > 0.0 { 1.0 } else { t + 1.0 })
                }) as Pullback,
            )],
        )
    }

    // -- linear algebra ---------------------------------------------------

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = as2(&self.nodes[a.0].value)
            .dot(&as2(&self.nodes[b.0].value))
            .into_dyn();
        if !self.grad_enabled {
            return self.push(value, Vec::new());
        }
        let av = self.nodes[a.0].value.clone();
        let bv = self.nodes[b.0].value.clone();
        self.push(
            value,
            vec![
                (
                    a.0,
                    Box::new(move |up: &ArrayD<f64>| as2(up).dot(&as2(&bv).t()).into_dyn())
                        as Pullback,
                ),
                (
                    b.0,
                    Box::new(move |up: &ArrayD<f64>| as2(&av).t().dot(&as2(up)).into_dyn()),
                ),
            ],
        )
    }

    /// `c · b` where `c` is a constant 2-D matrix (no gradient into `c`).
    pub fn matmul_const_left(&mut self, c: &ndarray::Array2<f64>, b: Var) -> Var {
        let value = c.dot(&as2(&self.nodes[b.0].value)).into_dyn();
        if !self.grad_enabled {
            return self.push(value, Vec::new());
        }
        let ct = c.t().to_owned();
        self.push(
            value,
            vec![(
                b.0,
                Box::new(move |up: &ArrayD<f64>| ct.dot(&as2(up)).into_dyn()) as Pullback,
            )],
        )
    }

    pub fn transpose2(&mut self, a: Var) -> Var {
        let value = as2(&self.nodes[a.0].value).t().to_owned().into_dyn();
        self.push(
            value,
            vec![(
                a.0,
                Box::new(|up: &ArrayD<f64>| as2(up).t().to_owned().into_dyn()) as Pullback,
            )],
        )
    }

    /// Add a rank-1 bias to the last axis.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let b1 = self.nodes[bias.0]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("bias is rank 1");
        let value = &self.nodes[a.0].value + &b1;
        self.push(
            value,
            vec![
                (a.0, Box::new(|up: &ArrayD<f64>| up.clone()) as Pullback),
                (
                    bias.0,
                    Box::new(|up| {
                        let mut g = up.clone();
                        while g.ndim() > 1 {
                            g = g.sum_axis(Axis(0));
                        }
                        g
                    }),
                ),
            ],
        )
    }

    // -- shape ------------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let orig: Vec<usize> = self.nodes[a.0].value.shape().to_vec();
        let value = self.nodes[a.0]
            .value
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape preserves element count");
        self.push(
            value,
            vec![(
                a.0,
                Box::new(move |up| {
                    up.clone()
                        .into_shape_with_order(IxDyn(&orig))
                        .expect("reshape back")
                }),
            )],
        )
    }

    /// Sum over one axis (the axis is removed).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let shape: Vec<usize> = self.nodes[a.0].value.shape().to_vec();
        let value = self.nodes[a.0].value.sum_axis(Axis(axis));
        self.push(
            value,
            vec![(
                a.0,
                Box::new(move |up| {
                    up.clone()
                        .insert_axis(Axis(axis))
                        .broadcast(IxDyn(&shape))
                        .expect("broadcast to original shape")
                        .to_owned()
                }),
            )],
        )
    }

    /// Sum of all entries, producing a 0-dim tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let shape: Vec<usize> = self.nodes[a.0].value.shape().to_vec();
        let total = self.nodes[a.0].value.sum();
        let value = ArrayD::from_elem(IxDyn(&[]), total);
        self.push(
            value,
            vec![(
                a.0,
                Box::new(move |up| {
                    let s = *up.first().expect("0-dim upstream");
                    ArrayD::from_elem(IxDyn(&shape), s)
                }),
            )],
        )
    }

    /// Concatenate along the last axis.
    pub fn concat_last(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| self.nodes[p.0].value.view()).collect();
        let ndim = views[0].ndim();
        let value = ndarray::concatenate(Axis(ndim - 1), &views).expect("concat shapes agree");
        let mut parents: Vec<(usize, Pullback)> = Vec::with_capacity(parts.len());
        let mut offset = 0usize;
        for p in parts {
            let w = self.nodes[p.0].value.shape()[ndim - 1];
            let start = offset;
            parents.push((
                p.0,
                Box::new(move |up: &ArrayD<f64>| {
                    let nd = up.ndim();
                    up.slice_axis(
                        Axis(nd - 1),
                        ndarray::Slice::from(start as isize..(start + w) as isize),
                    )
                    .to_owned()
                }),
            ));
            offset += w;
        }
        self.push(value, parents)
    }

    /// Slice `len` channels of the last axis starting at `start`.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Var {
        let full: Vec<usize> = self.nodes[a.0].value.shape().to_vec();
        let ndim = full.len();
        let value = self.nodes[a.0]
            .value
            .slice_axis(
                Axis(ndim - 1),
                ndarray::Slice::from(start as isize..(start + len) as isize),
            )
            .to_owned();
        self.push(
            value,
            vec![(
                a.0,
                Box::new(move |up| {
                    let mut g = ArrayD::zeros(IxDyn(&full));
                    g.slice_axis_mut(
                        Axis(ndim - 1),
                        ndarray::Slice::from(start as isize..(start + len) as isize),
                    )
                    .assign(up);
                    g
                }),
            )],
        )
    }

    // -- backward ---------------------------------------------------------

    /// Reverse sweep from `root`; returns one gradient slot per node
    /// (`None` for nodes the root does not depend on).
    pub fn backward(&self, root: Var) -> Vec<Option<ArrayD<f64>>> {
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(ArrayD::from_elem(
            self.nodes[root.0].value.raw_dim(),
            1.0,
        ));
        for idx in (0..=root.0).rev() {
            let Some(up) = grads[idx].take() else { continue };
            for (parent, pull) in &self.nodes[idx].parents {
                let contrib = pull(&up);
                match &mut grads[*parent] {
                    Some(g) => *g += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(up);
        }
        grads
    }

    /// Gradient of `root` with respect to `leaf`, zero-filled if unreachable.
    pub fn grad_of(&self, grads: &[Option<ArrayD<f64>>], leaf: Var) -> ArrayD<f64> {
        grads[leaf.0]
            .clone()
            .unwrap_or_else(|| ArrayD::zeros(self.nodes[leaf.0].value.raw_dim()))
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
