//! Batched reverse-mode tape over matrix-valued nodes.
//!
//! Node values are `[batch x width]` matrices carrying up to four channels:
//! the value `v`, first/second derivatives `dx1`/`dx2` with respect to a
//! designated input column, and a first derivative `dt1` with respect to a
//! second designated column. Propagating jets forward while recording the
//! tape, then running the reverse sweep on the expanded per-channel graph,
//! yields exact parameter gradients of any scalar assembled from values and
//! extracted derivative channels (e.g. PDE residuals built from `u`, `u_x`,
//! `u_xx`, `u_t`).
//!
//! The op set is closed: every registered primitive below carries hand-derived
//! forward and backward channel rules, each validated against finite
//! differences in the test suite.

use ndarray::{Array2, Axis};

use super::{DiffError, ParamVector};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Derivative channel selector for [`Graph::chan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chan {
    /// The plain value.
    V,
    /// d/dx (first designated input column).
    Dx1,
    /// d²/dx².
    Dx2,
    /// d/dt (second designated input column).
    Dt1,
}

/// Multi-channel matrix value.
#[derive(Debug, Clone)]
pub struct Val {
    pub v: Array2<f64>,
    pub dx1: Option<Array2<f64>>,
    pub dx2: Option<Array2<f64>>,
    pub dt1: Option<Array2<f64>>,
}

impl Val {
    fn plain(v: Array2<f64>) -> Self {
        Val { v, dx1: None, dx2: None, dt1: None }
    }

    fn shape(&self) -> (usize, usize) {
        (self.v.nrows(), self.v.ncols())
    }

    fn zeros_like(&self) -> Val {
        let sh = self.v.raw_dim();
        Val {
            v: Array2::zeros(sh),
            dx1: self.dx1.as_ref().map(|_| Array2::zeros(sh)),
            dx2: self.dx2.as_ref().map(|_| Array2::zeros(sh)),
            dt1: self.dt1.as_ref().map(|_| Array2::zeros(sh)),
        }
    }

    fn is_finite(&self) -> bool {
        let ok = |m: &Array2<f64>| m.iter().all(|x| x.is_finite());
        ok(&self.v)
            && self.dx1.as_ref().is_none_or(ok)
            && self.dx2.as_ref().is_none_or(ok)
            && self.dt1.as_ref().is_none_or(ok)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param { offset: usize },
    Input,
    MatMulT { x: NodeId, w: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Unary { a: NodeId, f: UnaryFn },
    BcastRows { a: NodeId, rows: usize },
    SumCols { a: NodeId },
    MeanAll { a: NodeId },
    SumAll { a: NodeId },
    ChanExtract { a: NodeId, which: Chan },
    SegSum { a: NodeId, segs: Vec<(usize, usize)>, w: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnaryFn {
    Tanh,
    Sin,
    Cos,
    Exp,
}

impl UnaryFn {
    fn name(self) -> &'static str {
        match self {
            UnaryFn::Tanh => "tanh",
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Exp => "exp",
        }
    }

    /// `(f, f', f'', f''')` at `x`, with `y = f(x)` precomputed where useful.
    fn derivs(self, x: f64) -> (f64, f64, f64, f64) {
        match self {
            UnaryFn::Tanh => {
                let y = x.tanh();
                let s1 = 1.0 - y * y;
                let s2 = -2.0 * y * s1;
                let s3 = -2.0 * (s1 * s1 + y * s2);
                (y, s1, s2, s3)
            }
            UnaryFn::Sin => {
                let (s, c) = x.sin_cos();
                (s, c, -s, -c)
            }
            UnaryFn::Cos => {
                let (s, c) = x.sin_cos();
                (c, -s, -c, s)
            }
            UnaryFn::Exp => {
                let e = x.exp();
                (e, e, e, e)
            }
        }
    }
}

struct Node {
    op: Op,
    val: Val,
}

/// Eager tape: building an op evaluates it immediately against the bound
/// parameter vector; `backward` replays the records in reverse.
pub struct Graph<'p> {
    params: &'p ParamVector,
    nodes: Vec<Node>,
}

fn add_opt(acc: &mut Option<Array2<f64>>, x: Array2<f64>) {
    match acc {
        Some(m) => *m += &x,
        None => *acc = Some(x),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamVector) -> Self {
        Graph { params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &ParamVector {
        self.params
    }

    fn push(&mut self, op: Op, val: Val, name: &'static str) -> Result<NodeId, DiffError> {
        if !val.is_finite() {
            return Err(DiffError::NonFinite { op: name });
        }
        self.nodes.push(Node { op, val });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn val(&self, id: NodeId) -> &Val {
        &self.nodes[id.0].val
    }

    /// Value channel of a node.
    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id.0].val.v
    }

    /// Derivative channel of a node, if present.
    pub fn channel(&self, id: NodeId, which: Chan) -> Option<&Array2<f64>> {
        let v = self.val(id);
        match which {
            Chan::V => Some(&v.v),
            Chan::Dx1 => v.dx1.as_ref(),
            Chan::Dx2 => v.dx2.as_ref(),
            Chan::Dt1 => v.dt1.as_ref(),
        }
    }

    pub fn constant(&mut self, m: Array2<f64>) -> Result<NodeId, DiffError> {
        self.push(Op::Const, Val::plain(m), "const")
    }

    pub fn scalar(&mut self, c: f64) -> Result<NodeId, DiffError> {
        self.constant(Array2::from_elem((1, 1), c))
    }

    /// Parameter segment viewed as a `[rows x cols]` row-major matrix.
    pub fn param_matrix(
        &mut self,
        offset: usize,
        rows: usize,
        cols: usize,
    ) -> Result<NodeId, DiffError> {
        let len = rows * cols;
        let values = self.params.values();
        if offset + len > values.len() {
            return Err(DiffError::ParamOutOfRange {
                offset,
                len,
                total: values.len(),
            });
        }
        let m = Array2::from_shape_vec((rows, cols), values[offset..offset + len].to_vec())
            .expect("shape consistent by construction");
        self.push(Op::Param { offset }, Val::plain(m), "param")
    }

    /// Batched input block, optionally seeding jet channels on one x column
    /// and/or one t column.
    pub fn input(
        &mut self,
        data: Array2<f64>,
        seed_x: Option<usize>,
        seed_t: Option<usize>,
    ) -> Result<NodeId, DiffError> {
        let sh = data.raw_dim();
        let one_hot = |col: usize| {
            let mut m = Array2::zeros(sh);
            m.column_mut(col).fill(1.0);
            m
        };
        for c in [seed_x, seed_t].into_iter().flatten() {
            if c >= data.ncols() {
                return Err(DiffError::Shape {
                    op: "input",
                    detail: format!("seed column {c} out of range"),
                });
            }
        }
        let val = Val {
            dx1: seed_x.map(one_hot),
            dx2: seed_x.map(|_| Array2::zeros(sh)),
            dt1: seed_t.map(one_hot),
            v: data,
        };
        self.push(Op::Input, val, "input")
    }

    /// `y = x · wᵀ` with a plain (parameter or constant) weight matrix.
    pub fn matmul_t(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, DiffError> {
        let wv = self.val(w);
        if wv.dx1.is_some() || wv.dt1.is_some() {
            return Err(DiffError::Shape {
                op: "matmul_t",
                detail: "weight operand must be plain".into(),
            });
        }
        let xv = self.val(x);
        if xv.v.ncols() != wv.v.ncols() {
            return Err(DiffError::Shape {
                op: "matmul_t",
                detail: format!("{:?} x {:?}", xv.shape(), wv.shape()),
            });
        }
        let wt = wv.v.t();
        let val = Val {
            v: xv.v.dot(&wt),
            dx1: xv.dx1.as_ref().map(|m| m.dot(&wt)),
            dx2: xv.dx2.as_ref().map(|m| m.dot(&wt)),
            dt1: xv.dt1.as_ref().map(|m| m.dot(&wt)),
        };
        self.push(Op::MatMulT { x, w }, val, "matmul_t")
    }

    fn check_same_shape(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<(), DiffError> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(DiffError::Shape {
                op,
                detail: format!("{:?} vs {:?}", self.val(a).shape(), self.val(b).shape()),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.check_same_shape(a, b, "add")?;
        let (av, bv) = (self.val(a), self.val(b));
        let join = |x: &Option<Array2<f64>>, y: &Option<Array2<f64>>| match (x, y) {
            (Some(x), Some(y)) => Some(x + y),
            (Some(x), None) => Some(x.clone()),
            (None, Some(y)) => Some(y.clone()),
            (None, None) => None,
        };
        let val = Val {
            v: &av.v + &bv.v,
            dx1: join(&av.dx1, &bv.dx1),
            dx2: join(&av.dx2, &bv.dx2),
            dt1: join(&av.dt1, &bv.dt1),
        };
        self.push(Op::Add { a, b }, val, "add")
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.check_same_shape(a, b, "sub")?;
        let (av, bv) = (self.val(a), self.val(b));
        let join = |x: &Option<Array2<f64>>, y: &Option<Array2<f64>>| match (x, y) {
            (Some(x), Some(y)) => Some(x - y),
            (Some(x), None) => Some(x.clone()),
            (None, Some(y)) => Some(-y),
            (None, None) => None,
        };
        let val = Val {
            v: &av.v - &bv.v,
            dx1: join(&av.dx1, &bv.dx1),
            dx2: join(&av.dx2, &bv.dx2),
            dt1: join(&av.dt1, &bv.dt1),
        };
        self.push(Op::Sub { a, b }, val, "sub")
    }

    /// Elementwise product with full second-order jet algebra.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.check_same_shape(a, b, "mul")?;
        let (av, bv) = (self.val(a), self.val(b));
        let v = &av.v * &bv.v;
        let cross = |x: &Option<Array2<f64>>, y: &Option<Array2<f64>>| {
            let mut out = None;
            if let Some(x1) = x {
                add_opt(&mut out, x1 * &bv.v);
            }
            if let Some(y1) = y {
                add_opt(&mut out, &av.v * y1);
            }
            out
        };
        let dx1 = cross(&av.dx1, &bv.dx1);
        let dt1 = cross(&av.dt1, &bv.dt1);
        let mut dx2 = None;
        if let Some(a2) = &av.dx2 {
            add_opt(&mut dx2, a2 * &bv.v);
        }
        if let (Some(a1), Some(b1)) = (&av.dx1, &bv.dx1) {
            add_opt(&mut dx2, 2.0 * &(a1 * b1));
        }
        if let Some(b2) = &bv.dx2 {
            add_opt(&mut dx2, &av.v * b2);
        }
        let val = Val { v, dx1, dx2, dt1 };
        self.push(Op::Mul { a, b }, val, "mul")
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId, DiffError> {
        let av = self.val(a);
        let val = Val {
            v: c * &av.v,
            dx1: av.dx1.as_ref().map(|m| c * m),
            dx2: av.dx2.as_ref().map(|m| c * m),
            dt1: av.dt1.as_ref().map(|m| c * m),
        };
        self.push(Op::Scale { a, c }, val, "scale")
    }

    fn unary(&mut self, a: NodeId, f: UnaryFn) -> Result<NodeId, DiffError> {
        let av = self.val(a);
        let sh = av.v.raw_dim();
        let mut y = Array2::zeros(sh);
        let mut s1m = Array2::zeros(sh);
        let mut s2m = Array2::zeros(sh);
        for ((yy, ss1), (ss2, &x)) in y
            .iter_mut()
            .zip(s1m.iter_mut())
            .zip(s2m.iter_mut().zip(av.v.iter()))
        {
            let (fv, f1, f2, _) = f.derivs(x);
            *yy = fv;
            *ss1 = f1;
            *ss2 = f2;
        }
        let dx1 = av.dx1.as_ref().map(|a1| &s1m * a1);
        let dt1 = av.dt1.as_ref().map(|a3| &s1m * a3);
        let dx2 = match (&av.dx1, &av.dx2) {
            (Some(a1), Some(a2)) => Some(&s2m * &(a1 * a1) + &s1m * a2),
            _ => None,
        };
        let val = Val { v: y, dx1, dx2, dt1 };
        self.push(Op::Unary { a, f }, val, f.name())
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.unary(a, UnaryFn::Tanh)
    }

    pub fn sin(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.unary(a, UnaryFn::Sin)
    }

    pub fn cos(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.unary(a, UnaryFn::Cos)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.unary(a, UnaryFn::Exp)
    }

    /// Replicates a `[1 x k]` row across `rows` rows.
    pub fn bcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId, DiffError> {
        let av = self.val(a);
        if av.v.nrows() != 1 {
            return Err(DiffError::Shape {
                op: "bcast_rows",
                detail: format!("expected single row, got {:?}", av.shape()),
            });
        }
        let rep = |m: &Array2<f64>| {
            let mut out = Array2::zeros((rows, m.ncols()));
            for mut r in out.rows_mut() {
                r.assign(&m.row(0));
            }
            out
        };
        let val = Val {
            v: rep(&av.v),
            dx1: av.dx1.as_ref().map(rep),
            dx2: av.dx2.as_ref().map(rep),
            dt1: av.dt1.as_ref().map(rep),
        };
        self.push(Op::BcastRows { a, rows }, val, "bcast_rows")
    }

    /// Row sums: `[B x k] -> [B x 1]`.
    pub fn sum_cols(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let av = self.val(a);
        let f = |m: &Array2<f64>| m.sum_axis(Axis(1)).insert_axis(Axis(1));
        let val = Val {
            v: f(&av.v),
            dx1: av.dx1.as_ref().map(f),
            dx2: av.dx2.as_ref().map(f),
            dt1: av.dt1.as_ref().map(f),
        };
        self.push(Op::SumCols { a }, val, "sum_cols")
    }

    /// Mean over all entries: `[B x k] -> [1 x 1]`.
    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let av = self.val(a);
        let n = (av.v.nrows() * av.v.ncols()) as f64;
        let f = |m: &Array2<f64>| Array2::from_elem((1, 1), m.sum() / n);
        let val = Val {
            v: f(&av.v),
            dx1: av.dx1.as_ref().map(f),
            dx2: av.dx2.as_ref().map(f),
            dt1: av.dt1.as_ref().map(f),
        };
        self.push(Op::MeanAll { a }, val, "mean_all")
    }

    /// Sum over all entries: `[B x k] -> [1 x 1]`.
    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let av = self.val(a);
        let f = |m: &Array2<f64>| Array2::from_elem((1, 1), m.sum());
        let val = Val {
            v: f(&av.v),
            dx1: av.dx1.as_ref().map(f),
            dx2: av.dx2.as_ref().map(f),
            dt1: av.dt1.as_ref().map(f),
        };
        self.push(Op::SumAll { a }, val, "sum_all")
    }

    /// Extracts one derivative channel as a new plain node.
    pub fn chan(&mut self, a: NodeId, which: Chan) -> Result<NodeId, DiffError> {
        let av = self.val(a);
        let m = match which {
            Chan::V => av.v.clone(),
            Chan::Dx1 => av.dx1.clone().ok_or(DiffError::MissingChannel { op: "chan" })?,
            Chan::Dx2 => av.dx2.clone().ok_or(DiffError::MissingChannel { op: "chan" })?,
            Chan::Dt1 => av.dt1.clone().ok_or(DiffError::MissingChannel { op: "chan" })?,
        };
        self.push(Op::ChanExtract { a, which }, Val::plain(m), "chan")
    }

    /// Segmented weighted sums over the rows of a `[N x 1]` column:
    /// `y_s = sum_j w[o_s + j] * a[o_s + j]` for each segment `(o_s, len_s)`.
    pub fn seg_sum(
        &mut self,
        a: NodeId,
        segs: Vec<(usize, usize)>,
        w: Vec<f64>,
    ) -> Result<NodeId, DiffError> {
        let av = self.val(a);
        if av.v.ncols() != 1 || w.len() != av.v.nrows() {
            return Err(DiffError::Shape {
                op: "seg_sum",
                detail: format!("column {:?} with {} weights", av.shape(), w.len()),
            });
        }
        for &(o, l) in &segs {
            if o + l > av.v.nrows() {
                return Err(DiffError::Shape {
                    op: "seg_sum",
                    detail: format!("segment ({o},{l}) out of range"),
                });
            }
        }
        let f = |m: &Array2<f64>| {
            let col: Vec<f64> = segs
                .iter()
                .map(|&(o, l)| (o..o + l).map(|i| w[i] * m[(i, 0)]).sum())
                .collect();
            Array2::from_shape_vec((segs.len(), 1), col).expect("segment count shape")
        };
        let val = Val {
            v: f(&av.v),
            dx1: av.dx1.as_ref().map(f),
            dx2: av.dx2.as_ref().map(f),
            dt1: av.dt1.as_ref().map(f),
        };
        self.push(Op::SegSum { a, segs, w }, val, "seg_sum")
    }

    /// Reverse sweep from a `[1 x 1]` output node; returns d(output)/d(params)
    /// over the full parameter vector.
    pub fn backward(&self, output: NodeId) -> Result<Vec<f64>, DiffError> {
        if self.val(output).shape() != (1, 1) {
            return Err(DiffError::NotScalar);
        }
        let mut adj: Vec<Val> = self.nodes.iter().map(|n| n.val.zeros_like()).collect();
        adj[output.0].v[(0, 0)] = 1.0;

        // Channel indices: 0 = v, 1 = dx1, 2 = dx2, 3 = dt1.
        fn get(val: &Val, k: usize) -> Option<&Array2<f64>> {
            match k {
                0 => Some(&val.v),
                1 => val.dx1.as_ref(),
                2 => val.dx2.as_ref(),
                3 => val.dt1.as_ref(),
                _ => unreachable!(),
            }
        }
        fn get_mut(val: &mut Val, k: usize) -> Option<&mut Array2<f64>> {
            match k {
                0 => Some(&mut val.v),
                1 => val.dx1.as_mut(),
                2 => val.dx2.as_mut(),
                3 => val.dt1.as_mut(),
                _ => unreachable!(),
            }
        }

        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            let ybar = std::mem::replace(&mut adj[i], node.val.zeros_like());
            match &node.op {
                Op::Const | Op::Param { .. } | Op::Input => {
                    // Leaves: parameter adjoints are harvested after the sweep.
                    adj[i] = ybar;
                }
                Op::MatMulT { x, w } => {
                    let wv = &self.nodes[w.0].val.v;
                    let xv = &self.nodes[x.0].val;
                    let mut wbar = Array2::zeros(wv.raw_dim());
                    for k in 0..4 {
                        let (Some(yb), Some(xc)) = (get(&ybar, k), get(xv, k)) else {
                            continue;
                        };
                        wbar += &yb.t().dot(xc);
                        if let Some(xb) = get_mut(&mut adj[x.0], k) {
                            *xb += &yb.dot(wv);
                        }
                    }
                    adj[w.0].v += &wbar;
                    adj[i] = ybar;
                }
                Op::Add { a, b } => {
                    for k in 0..4 {
                        let Some(yb) = get(&ybar, k) else { continue };
                        if let Some(ab) = get_mut(&mut adj[a.0], k) {
                            *ab += yb;
                        }
                        if let Some(bb) = get_mut(&mut adj[b.0], k) {
                            *bb += yb;
                        }
                    }
                    adj[i] = ybar;
                }
                Op::Sub { a, b } => {
                    for k in 0..4 {
                        let Some(yb) = get(&ybar, k) else { continue };
                        if let Some(ab) = get_mut(&mut adj[a.0], k) {
                            *ab += yb;
                        }
                        if let Some(bb) = get_mut(&mut adj[b.0], k) {
                            *bb -= yb;
                        }
                    }
                    adj[i] = ybar;
                }
                Op::Mul { a, b } => {
                    // Expanded-graph partials of
                    //   y0 = a0 b0
                    //   y1 = a1 b0 + a0 b1
                    //   y2 = a2 b0 + 2 a1 b1 + a0 b2
                    //   y3 = a3 b0 + a0 b3
                    let flow = |av: &Val, bv: &Val, abar: &mut Val, ybar: &Val| {
                        // into a0: sum_k ybar_k * b_k
                        {
                            let a0 = get_mut(abar, 0).expect("v channel always present");
                            for k in 0..4 {
                                if let (Some(yb), Some(bk)) = (get(ybar, k), get(bv, k)) {
                                    *a0 += &(yb * bk);
                                }
                            }
                        }
                        if let Some(a1) = get_mut(abar, 1) {
                            if let Some(yb1) = get(ybar, 1) {
                                *a1 += &(yb1 * &bv.v);
                            }
                            if let (Some(yb2), Some(b1)) = (get(ybar, 2), get(bv, 1)) {
                                *a1 += &(2.0 * &(yb2 * b1));
                            }
                        }
                        if let Some(a2) = get_mut(abar, 2) {
                            if let Some(yb2) = get(ybar, 2) {
                                *a2 += &(yb2 * &bv.v);
                            }
                        }
                        if let Some(a3) = get_mut(abar, 3) {
                            if let Some(yb3) = get(ybar, 3) {
                                *a3 += &(yb3 * &bv.v);
                            }
                        }
                        let _ = av;
                    };
                    if a == b {
                        // Both operands are the same node (squares): apply the
                        // symmetric flow twice into the single adjoint.
                        let av = self.nodes[a.0].val.clone();
                        flow(&av, &av, &mut adj[a.0], &ybar);
                        flow(&av, &av, &mut adj[a.0], &ybar);
                    } else {
                        let (av, bv) = (&self.nodes[a.0].val, &self.nodes[b.0].val);
                        let mut abar = std::mem::replace(&mut adj[a.0], av.zeros_like());
                        flow(av, bv, &mut abar, &ybar);
                        adj[a.0] = abar;
                        let mut bbar = std::mem::replace(&mut adj[b.0], bv.zeros_like());
                        flow(bv, av, &mut bbar, &ybar);
                        adj[b.0] = bbar;
                    }
                    adj[i] = ybar;
                }
                Op::Scale { a, c } => {
                    for k in 0..4 {
                        let Some(yb) = get(&ybar, k) else { continue };
                        if let Some(ab) = get_mut(&mut adj[a.0], k) {
                            *ab += &(*c * yb);
                        }
                    }
                    adj[i] = ybar;
                }
                Op::Unary { a, f } => {
                    let av = &self.nodes[a.0].val;
                    let sh = av.v.raw_dim();
                    let mut s1 = Array2::zeros(sh);
                    let mut s2 = Array2::zeros(sh);
                    let mut s3 = Array2::zeros(sh);
                    for (((o1, o2), o3), &x) in s1
                        .iter_mut()
                        .zip(s2.iter_mut())
                        .zip(s3.iter_mut())
                        .zip(av.v.iter())
                    {
                        let (_, f1, f2, f3) = f.derivs(x);
                        *o1 = f1;
                        *o2 = f2;
                        *o3 = f3;
                    }
                    let mut abar = std::mem::replace(&mut adj[a.0], av.zeros_like());
                    // y0 = f(a0), y1 = s1 a1, y2 = s2 a1^2 + s1 a2, y3 = s1 a3
                    {
                        let a0 = get_mut(&mut abar, 0).expect("v channel");
                        if let Some(yb0) = get(&ybar, 0) {
                            *a0 += &(&s1 * yb0);
                        }
                        if let (Some(yb1), Some(a1)) = (get(&ybar, 1), get(av, 1)) {
                            *a0 += &(&(&s2 * a1) * yb1);
                        }
                        if let Some(yb2) = get(&ybar, 2) {
                            if let Some(a1) = get(av, 1) {
                                *a0 += &(&(&s3 * &(a1 * a1)) * yb2);
                            }
                            if let Some(a2) = get(av, 2) {
                                *a0 += &(&(&s2 * a2) * yb2);
                            }
                        }
                        if let (Some(yb3), Some(a3)) = (get(&ybar, 3), get(av, 3)) {
                            *a0 += &(&(&s2 * a3) * yb3);
                        }
                    }
                    if let Some(a1bar) = get_mut(&mut abar, 1) {
                        if let Some(yb1) = get(&ybar, 1) {
                            *a1bar += &(&s1 * yb1);
                        }
                        if let (Some(yb2), Some(a1)) = (get(&ybar, 2), get(av, 1)) {
                            *a1bar += &(2.0 * &(&(&s2 * a1) * yb2));
                        }
                    }
                    if let Some(a2bar) = get_mut(&mut abar, 2) {
                        if let Some(yb2) = get(&ybar, 2) {
                            *a2bar += &(&s1 * yb2);
                        }
                    }
                    if let Some(a3bar) = get_mut(&mut abar, 3) {
                        if let Some(yb3) = get(&ybar, 3) {
                            *a3bar += &(&s1 * yb3);
                        }
                    }
                    adj[a.0] = abar;
                    adj[i] = ybar;
                }
                Op::BcastRows { a, rows: _ } => {
                    for k in 0..4 {
                        let Some(yb) = get(&ybar, k) else { continue };
                        if let Some(ab) = get_mut(&mut adj[a.0], k) {
                            *ab += &yb.sum_axis(Axis(0)).insert_axis(Axis(0));
                        }
                    }
                    adj[i] = ybar;
                }
                Op::SumCols { a } => {
                    for k in 0..4 {
                        let Some(yb) = get(&ybar, k) else { continue };
                        if let Some(ab) = get_mut(&mut adj[a.0], k) {
                            let col = yb.column(0);
                            for (mut row, &y) in ab.rows_mut().into_iter().zip(col.iter()) {
                                row += y;
                            }
                        }
                    }
                    adj[i] = ybar;
                }
                Op::MeanAll { a } => {
                    let n = {
                        let sh = self.nodes[a.0].val.shape();
                        (sh.0 * sh.1) as f64
                    };
                    for k in 0..4 {
                        let Some(yb) = get(&ybar, k) else { continue };
                        if let Some(ab) = get_mut(&mut adj[a.0], k) {
                            *ab += yb[(0, 0)] / n;
                        }
                    }
                    adj[i] = ybar;
                }
                Op::SumAll { a } => {
                    for k in 0..4 {
                        let Some(yb) = get(&ybar, k) else { continue };
                        if let Some(ab) = get_mut(&mut adj[a.0], k) {
                            *ab += yb[(0, 0)];
                        }
                    }
                    adj[i] = ybar;
                }
                Op::ChanExtract { a, which } => {
                    let k = match which {
                        Chan::V => 0,
                        Chan::Dx1 => 1,
                        Chan::Dx2 => 2,
                        Chan::Dt1 => 3,
                    };
                    if let Some(ab) = get_mut(&mut adj[a.0], k) {
                        *ab += &ybar.v;
                    }
                    adj[i] = ybar;
                }
                Op::SegSum { a, segs, w } => {
                    for k in 0..4 {
                        let Some(yb) = get(&ybar, k) else { continue };
                        if let Some(ab) = get_mut(&mut adj[a.0], k) {
                            for (s, &(o, l)) in segs.iter().enumerate() {
                                let y = yb[(s, 0)];
                                for j in o..o + l {
                                    ab[(j, 0)] += w[j] * y;
                                }
                            }
                        }
                    }
                    adj[i] = ybar;
                }
            }
        }

        let mut grad = vec![0.0; self.params.len()];
        for (node, a) in self.nodes.iter().zip(adj.iter()) {
            if let Op::Param { offset } = node.op {
                for (g, &x) in grad[offset..offset + a.v.len()].iter_mut().zip(a.v.iter()) {
                    *g += x;
                }
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(DiffError::NonFinite { op: "backward" });
        }
        Ok(grad)
    }
}
