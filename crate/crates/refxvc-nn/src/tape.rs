use ndarray::{concatenate, s, Array2, Axis};

/// Index of a node on a [`Tape`].
pub type NodeId = usize;

/// One recorded operation. Inputs are node ids; immediate values (constants,
/// masks, gather indices) live inside the variant so the node list alone
/// fully describes the computation.
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// `a · bᵀ` without materializing the transpose.
    MatMulABt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    /// `[T, C] + [1, C]`, broadcast over rows.
    AddRow(NodeId, NodeId),
    /// `[T, C] ∘ [1, C]`, broadcast over rows.
    MulRow(NodeId, NodeId),
    AddConst(NodeId),
    Scale(NodeId, f64),
    /// Elementwise product with a fixed (non-differentiable) mask in `aux`.
    MulMask(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Sqrt(NodeId),
    Abs(NodeId),
    /// Elementwise `max(x, c)`; gradient passes where `x > c`.
    MaxConst(NodeId, f64),
    SoftmaxRows(NodeId),
    /// Per-row standardization `(x - μ) / √(σ² + eps)`; `aux` holds `1/√(σ²+eps)`.
    RowNorm(NodeId),
    /// Per-column standardization; `aux` holds the per-column inverse stddev.
    ColNorm(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    /// Mean over rows, `[T, C] -> [1, C]`.
    MeanRows(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize),
    SliceCols(NodeId, usize),
    /// Row-major reinterpretation to a new shape.
    Reshape(NodeId),
    /// Zero rows inserted before/after.
    PadRows(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    /// Centered 1-d patch extraction: output row `t` is the concatenation of
    /// `kernel` input rows at offsets `(j - (kernel-1)/2) * dilation`,
    /// zero-padded at the edges. `[T, C] -> [T, kernel*C]`.
    Im2Col1d {
        x: NodeId,
        kernel: usize,
        dilation: usize,
    },
    /// 2-d patch extraction over a `[H*W, C]` feature map (row = y*W + x).
    /// `-> [H_out*W_out, kernel²*C]`.
    Im2Col2d {
        x: NodeId,
        h: usize,
        w: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    /// Expands a `[1, 2m+1]` per-offset bias table into a `[t, t]` matrix
    /// `B[i][j] = table[clip(j - i, -m, m) + m]`.
    RelPosBias {
        table: NodeId,
        t: usize,
    },
    /// Fused LSTM cell. `xg = x·W_ih` is `[1, 4H]` (gate order i, f, g, o),
    /// `prev` is the previous cell's `[1, 2H]` output `h ‖ c` (or the initial
    /// state), `w_hh` is `[H, 4H]`, `b` is `[1, 4H]`. Output is `h ‖ c`;
    /// `aux` stashes `i ‖ f ‖ g ‖ o ‖ tanh(c)` for the backward pass.
    LstmCell {
        xg: NodeId,
        prev: NodeId,
        w_hh: NodeId,
        b: NodeId,
    },
}

struct Node {
    op: Op,
    value: Array2<f64>,
    /// Extra forward-pass state some backward passes need.
    aux: Option<Array2<f64>>,
    /// True when a differentiable leaf is reachable from this node.
    needs_grad: bool,
}

/// A growing recording of the forward computation. Each builder method runs
/// the op eagerly and appends a node; `backward` replays the list in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let s = self.nodes[id].value.shape();
        (s[0], s[1])
    }

    /// Scalar value of a `[1, 1]` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[[0, 0]]
    }

    /// Gradient accumulated by the last `backward` call, if any reached
    /// this node.
    pub fn grad(&self, id: NodeId) -> Option<&Array2<f64>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    fn push(&mut self, op: Op, value: Array2<f64>, aux: Option<Array2<f64>>) -> NodeId {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::MatMulABt(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b) => self.nodes[*a].needs_grad || self.nodes[*b].needs_grad,
            Op::AddConst(a)
            | Op::Scale(a, _)
            | Op::MulMask(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Sqrt(a)
            | Op::Abs(a)
            | Op::MaxConst(a, _)
            | Op::SoftmaxRows(a)
            | Op::RowNorm(a)
            | Op::ColNorm(a)
            | Op::SumAll(a)
            | Op::MeanAll(a)
            | Op::MeanRows(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::Reshape(a)
            | Op::PadRows(a, _)
            | Op::GatherRows(a, _)
            | Op::Im2Col1d { x: a, .. }
            | Op::Im2Col2d { x: a, .. }
            | Op::RelPosBias { table: a, .. } => self.nodes[*a].needs_grad,
            Op::ConcatRows(xs) | Op::ConcatCols(xs) => {
                xs.iter().any(|&x| self.nodes[x].needs_grad)
            }
            Op::LstmCell { xg, prev, w_hh, b } => {
                self.nodes[*xg].needs_grad
                    || self.nodes[*prev].needs_grad
                    || self.nodes[*w_hh].needs_grad
                    || self.nodes[*b].needs_grad
            }
        };
        self.nodes.push(Node {
            op,
            value,
            aux,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn push_leaf(&mut self, value: Array2<f64>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            aux: None,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    /// Non-differentiable input (features, targets, fixed tables).
    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push_leaf(value, false)
    }

    /// Differentiable leaf (a parameter).
    pub fn var(&mut self, value: Array2<f64>) -> NodeId {
        self.push_leaf(value, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(Op::MatMul(a, b), v, None)
    }

    /// `a · bᵀ`.
    pub fn matmul_abt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.dot(&self.nodes[b].value.t());
        self.push(Op::MatMulABt(a, b), v, None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(Op::Add(a, b), v, None)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = &self.nodes[a].value - &self.nodes[b].value;
        self.push(Op::Sub(a, b), v, None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(Op::Mul(a, b), v, None)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(a), self.shape(b));
        let v = &self.nodes[a].value / &self.nodes[b].value;
        self.push(Op::Div(a, b), v, None)
    }

    /// `[T, C] + [1, C]` broadcast.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(row).0, 1);
        debug_assert_eq!(self.shape(a).1, self.shape(row).1);
        let v = &self.nodes[a].value + &self.nodes[row].value;
        self.push(Op::AddRow(a, row), v, None)
    }

    /// `[T, C] ∘ [1, C]` broadcast.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.shape(row).0, 1);
        debug_assert_eq!(self.shape(a).1, self.shape(row).1);
        let v = &self.nodes[a].value * &self.nodes[row].value;
        self.push(Op::MulRow(a, row), v, None)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = &self.nodes[a].value + c;
        self.push(Op::AddConst(a), v, None)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = &self.nodes[a].value * c;
        self.push(Op::Scale(a, c), v, None)
    }

    /// Elementwise product with a fixed mask (dropout, padding masks). The
    /// mask is data, not a differentiable input.
    pub fn mul_mask(&mut self, a: NodeId, mask: Array2<f64>) -> NodeId {
        debug_assert_eq!(self.nodes[a].value.shape(), mask.shape());
        let v = &self.nodes[a].value * &mask;
        self.push(Op::MulMask(a), v, Some(mask))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v, None)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v, None)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::tanh);
        self.push(Op::Tanh(a), v, None)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(sigmoid);
        self.push(Op::Sigmoid(a), v, None)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::exp);
        self.push(Op::Exp(a), v, None)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::sqrt);
        self.push(Op::Sqrt(a), v, None)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(f64::abs);
        self.push(Op::Abs(a), v, None)
    }

    /// Elementwise `max(x, c)` — a lower clamp.
    pub fn max_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x.max(c));
        self.push(Op::MaxConst(a, c), v, None)
    }

    /// Row-wise softmax with the usual max-subtraction for stability.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = &self.nodes[a].value;
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|e| (e - m).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|e| e / sum);
        }
        self.push(Op::SoftmaxRows(a), v, None)
    }

    /// Per-row standardization to zero mean / unit variance (population
    /// variance, `eps` inside the square root). No affine part — scale and
    /// shift are separate `mul_row`/`add_row` ops when a layer wants them.
    pub fn row_norm(&mut self, a: NodeId, eps: f64) -> NodeId {
        let x = &self.nodes[a].value;
        let n = x.ncols() as f64;
        let mut v = x.clone();
        let mut inv = Array2::zeros((x.nrows(), 1));
        for (i, mut row) in v.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            inv[[i, 0]] = is;
            row.mapv_inplace(|e| (e - mean) * is);
        }
        self.push(Op::RowNorm(a), v, Some(inv))
    }

    /// Per-column standardization (instance norm over the spatial rows of a
    /// `[H*W, C]` feature map).
    pub fn col_norm(&mut self, a: NodeId, eps: f64) -> NodeId {
        let x = &self.nodes[a].value;
        let n = x.nrows() as f64;
        let mut v = x.clone();
        let mut inv = Array2::zeros((1, x.ncols()));
        for (j, mut col) in v.columns_mut().into_iter().enumerate() {
            let mean = col.sum() / n;
            let var = col.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            inv[[0, j]] = is;
            col.mapv_inplace(|e| (e - mean) * is);
        }
        self.push(Op::ColNorm(a), v, Some(inv))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        self.push(Op::SumAll(a), v, None)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let x = &self.nodes[a].value;
        let v = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        self.push(Op::MeanAll(a), v, None)
    }

    /// Column means: `[T, C] -> [1, C]`.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let x = &self.nodes[a].value;
        let v = (x.sum_axis(Axis(0)) / x.nrows() as f64).insert_axis(Axis(0));
        self.push(Op::MeanRows(a), v, None)
    }

    pub fn concat_rows(&mut self, xs: &[NodeId]) -> NodeId {
        let views: Vec<_> = xs.iter().map(|&x| self.nodes[x].value.view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(Op::ConcatRows(xs.to_vec()), v, None)
    }

    pub fn concat_cols(&mut self, xs: &[NodeId]) -> NodeId {
        let views: Vec<_> = xs.iter().map(|&x| self.nodes[x].value.view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(Op::ConcatCols(xs.to_vec()), v, None)
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.nodes[a].value.slice(s![start..end, ..]).to_owned();
        self.push(Op::SliceRows(a, start), v, None)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.nodes[a].value.slice(s![.., start..end]).to_owned();
        self.push(Op::SliceCols(a, start), v, None)
    }

    /// Row-major reinterpretation to `[rows, cols]`.
    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let v = reshape_rm(self.nodes[a].value.clone(), rows, cols);
        self.push(Op::Reshape(a), v, None)
    }

    /// Zero rows inserted before and after.
    pub fn pad_rows(&mut self, a: NodeId, before: usize, after: usize) -> NodeId {
        let x = &self.nodes[a].value;
        let (t, c) = (x.nrows(), x.ncols());
        let mut v = Array2::zeros((before + t + after, c));
        v.slice_mut(s![before..before + t, ..]).assign(x);
        self.push(Op::PadRows(a, before), v, None)
    }

    /// Output row `i` is input row `idx[i]` (rows may repeat — embedding
    /// lookups are exactly this).
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let x = &self.nodes[a].value;
        let mut v = Array2::zeros((idx.len(), x.ncols()));
        for (i, &r) in idx.iter().enumerate() {
            v.row_mut(i).assign(&x.row(r));
        }
        self.push(Op::GatherRows(a, idx.to_vec()), v, None)
    }

    /// Centered 1-d im2col, `[T, C] -> [T, kernel*C]` with zero padding.
    pub fn im2col_1d(&mut self, x: NodeId, kernel: usize, dilation: usize) -> NodeId {
        let a = &self.nodes[x].value;
        let (t, c) = (a.nrows(), a.ncols());
        let half = (kernel - 1) / 2;
        let mut v = Array2::zeros((t, kernel * c));
        for i in 0..t {
            for j in 0..kernel {
                let src = i as isize + (j as isize - half as isize) * dilation as isize;
                if src >= 0 && (src as usize) < t {
                    v.slice_mut(s![i, j * c..(j + 1) * c])
                        .assign(&a.row(src as usize));
                }
            }
        }
        self.push(Op::Im2Col1d { x, kernel, dilation }, v, None)
    }

    /// 2-d im2col over a `[H*W, C]` map: `-> [H_out*W_out, kernel²*C]`.
    pub fn im2col_2d(
        &mut self,
        x: NodeId,
        h: usize,
        w: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> NodeId {
        let a = &self.nodes[x].value;
        let c = a.ncols();
        debug_assert_eq!(a.nrows(), h * w);
        let (ho, wo) = conv2d_out_dims(h, w, kernel, stride, pad);
        let mut v = Array2::zeros((ho * wo, kernel * kernel * c));
        for oy in 0..ho {
            for ox in 0..wo {
                let orow = oy * wo + ox;
                for jy in 0..kernel {
                    for jx in 0..kernel {
                        let iy = (oy * stride + jy) as isize - pad as isize;
                        let ix = (ox * stride + jx) as isize - pad as isize;
                        if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                            let irow = iy as usize * w + ix as usize;
                            let patch = (jy * kernel + jx) * c;
                            v.slice_mut(s![orow, patch..patch + c]).assign(&a.row(irow));
                        }
                    }
                }
            }
        }
        self.push(
            Op::Im2Col2d {
                x,
                h,
                w,
                kernel,
                stride,
                pad,
            },
            v,
            None,
        )
    }

    /// Relative-position bias matrix from a `[1, 2m+1]` table:
    /// `B[i][j] = table[clip(j - i, -m, m) + m]`.
    pub fn rel_pos_bias(&mut self, table: NodeId, t: usize) -> NodeId {
        let tab = &self.nodes[table].value;
        debug_assert_eq!(tab.nrows(), 1);
        debug_assert_eq!(tab.ncols() % 2, 1, "bias table length must be odd");
        let m = (tab.ncols() - 1) / 2;
        let mut v = Array2::zeros((t, t));
        for i in 0..t {
            for j in 0..t {
                v[[i, j]] = tab[[0, rel_offset_index(i, j, m)]];
            }
        }
        self.push(Op::RelPosBias { table, t }, v, None)
    }

    /// Fused LSTM cell; see [`Op::LstmCell`] for the layout.
    pub fn lstm_cell(&mut self, xg: NodeId, prev: NodeId, w_hh: NodeId, b: NodeId) -> NodeId {
        let hsize = self.shape(w_hh).0;
        debug_assert_eq!(self.shape(xg), (1, 4 * hsize));
        debug_assert_eq!(self.shape(prev), (1, 2 * hsize));
        debug_assert_eq!(self.shape(w_hh), (hsize, 4 * hsize));
        debug_assert_eq!(self.shape(b), (1, 4 * hsize));
        let h_prev = self.nodes[prev].value.slice(s![.., 0..hsize]).to_owned();
        let c_prev = self.nodes[prev].value.slice(s![.., hsize..2 * hsize]);
        let pre = &self.nodes[xg].value + &h_prev.dot(&self.nodes[w_hh].value) + &self.nodes[b].value;
        let mut value = Array2::zeros((1, 2 * hsize));
        let mut aux = Array2::zeros((1, 5 * hsize));
        for k in 0..hsize {
            let i = sigmoid(pre[[0, k]]);
            let f = sigmoid(pre[[0, hsize + k]]);
            let g = pre[[0, 2 * hsize + k]].tanh();
            let o = sigmoid(pre[[0, 3 * hsize + k]]);
            let c = f * c_prev[[0, k]] + i * g;
            let tc = c.tanh();
            value[[0, k]] = o * tc;
            value[[0, hsize + k]] = c;
            aux[[0, k]] = i;
            aux[[0, hsize + k]] = f;
            aux[[0, 2 * hsize + k]] = g;
            aux[[0, 3 * hsize + k]] = o;
            aux[[0, 4 * hsize + k]] = tc;
        }
        self.push(Op::LstmCell { xg, prev, w_hh, b }, value, Some(aux))
    }

    /// Reverse-mode sweep from a scalar `[1, 1]` root. Gradients from any
    /// previous sweep are cleared first.
    pub fn backward(&mut self, root: NodeId) {
        assert_eq!(
            self.nodes[root].value.len(),
            1,
            "backward root must be a scalar node"
        );
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        self.grads[root] = Some(Array2::ones((1, 1)));

        for id in (0..=root).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
    }

    fn accumulate(&mut self, id: NodeId, delta: Array2<f64>) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut self.grads[id] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, id: NodeId, g: &Array2<f64>) {
        // `Op` variants hold only ids/immediates, so cloning the op out keeps
        // the borrow checker happy without copying any tensor data.
        match &self.nodes[id].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let da = g.dot(&self.nodes[b].value.t());
                let db = self.nodes[a].value.t().dot(g);
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            &Op::MatMulABt(a, b) => {
                // y = a·bᵀ  ⇒  da = g·b, db = gᵀ·a
                let da = g.dot(&self.nodes[b].value);
                let db = g.t().dot(&self.nodes[a].value);
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            &Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, -g);
            }
            &Op::Mul(a, b) => {
                let da = g * &self.nodes[b].value;
                let db = g * &self.nodes[a].value;
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            &Op::Div(a, b) => {
                let bv = &self.nodes[b].value;
                let da = g / bv;
                let db = -(g * &self.nodes[id].value) / bv;
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            &Op::AddRow(a, row) => {
                self.accumulate(a, g.clone());
                let dr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.accumulate(row, dr);
            }
            &Op::MulRow(a, row) => {
                let da = g * &self.nodes[row].value;
                let dr = (g * &self.nodes[a].value)
                    .sum_axis(Axis(0))
                    .insert_axis(Axis(0));
                self.accumulate(a, da);
                self.accumulate(row, dr);
            }
            &Op::AddConst(a) => self.accumulate(a, g.clone()),
            &Op::Scale(a, c) => self.accumulate(a, g * c),
            &Op::MulMask(a) => {
                let mask = self.nodes[id].aux.as_ref().expect("mask stashed at forward");
                self.accumulate(a, g * mask);
            }
            &Op::Relu(a) => {
                let da = g * &self.nodes[a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                self.accumulate(a, da);
            }
            &Op::LeakyRelu(a, slope) => {
                let da = g * &self.nodes[a].value.mapv(|x| if x > 0.0 { 1.0 } else { slope });
                self.accumulate(a, da);
            }
            &Op::Tanh(a) => {
                let da = g * &self.nodes[id].value.mapv(|y| 1.0 - y * y);
                self.accumulate(a, da);
            }
            &Op::Sigmoid(a) => {
                let da = g * &self.nodes[id].value.mapv(|y| y * (1.0 - y));
                self.accumulate(a, da);
            }
            &Op::Exp(a) => {
                let da = g * &self.nodes[id].value;
                self.accumulate(a, da);
            }
            &Op::Sqrt(a) => {
                let da = g * &self.nodes[id].value.mapv(|y| 0.5 / y);
                self.accumulate(a, da);
            }
            &Op::Abs(a) => {
                let da = g * &self.nodes[a].value.mapv(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                self.accumulate(a, da);
            }
            &Op::MaxConst(a, c) => {
                let da = g * &self.nodes[a].value.mapv(|x| if x > c { 1.0 } else { 0.0 });
                self.accumulate(a, da);
            }
            &Op::SoftmaxRows(a) => {
                let y = &self.nodes[id].value;
                let gy = g * y;
                let dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                let da = &gy - &(y * &dot);
                self.accumulate(a, da);
            }
            &Op::RowNorm(a) => {
                let y = &self.nodes[id].value;
                let inv = self.nodes[id].aux.as_ref().expect("inv-std stashed");
                let n = y.ncols() as f64;
                let mean_g = g.sum_axis(Axis(1)).insert_axis(Axis(1)) / n;
                let mean_gy = (g * y).sum_axis(Axis(1)).insert_axis(Axis(1)) / n;
                let da = (g - &mean_g - &(y * &mean_gy)) * inv;
                self.accumulate(a, da);
            }
            &Op::ColNorm(a) => {
                let y = &self.nodes[id].value;
                let inv = self.nodes[id].aux.as_ref().expect("inv-std stashed");
                let n = y.nrows() as f64;
                let mean_g = g.sum_axis(Axis(0)).insert_axis(Axis(0)) / n;
                let mean_gy = (g * y).sum_axis(Axis(0)).insert_axis(Axis(0)) / n;
                let da = (g - &mean_g - &(y * &mean_gy)) * inv;
                self.accumulate(a, da);
            }
            &Op::SumAll(a) => {
                let da = Array2::from_elem(self.nodes[a].value.raw_dim(), g[[0, 0]]);
                self.accumulate(a, da);
            }
            &Op::MeanAll(a) => {
                let x = &self.nodes[a].value;
                let da = Array2::from_elem(x.raw_dim(), g[[0, 0]] / x.len() as f64);
                self.accumulate(a, da);
            }
            &Op::MeanRows(a) => {
                let t = self.nodes[a].value.nrows();
                let da = g
                    .broadcast(self.nodes[a].value.raw_dim())
                    .expect("[1,C] broadcasts to [T,C]")
                    .to_owned()
                    / t as f64;
                self.accumulate(a, da);
            }
            Op::ConcatRows(xs) => {
                let xs = xs.clone();
                let mut start = 0;
                for x in xs {
                    let rows = self.nodes[x].value.nrows();
                    let dx = g.slice(s![start..start + rows, ..]).to_owned();
                    start += rows;
                    self.accumulate(x, dx);
                }
            }
            Op::ConcatCols(xs) => {
                let xs = xs.clone();
                let mut start = 0;
                for x in xs {
                    let cols = self.nodes[x].value.ncols();
                    let dx = g.slice(s![.., start..start + cols]).to_owned();
                    start += cols;
                    self.accumulate(x, dx);
                }
            }
            &Op::SliceRows(a, start) => {
                let mut da = Array2::zeros(self.nodes[a].value.raw_dim());
                da.slice_mut(s![start..start + g.nrows(), ..]).assign(g);
                self.accumulate(a, da);
            }
            &Op::SliceCols(a, start) => {
                let mut da = Array2::zeros(self.nodes[a].value.raw_dim());
                da.slice_mut(s![.., start..start + g.ncols()]).assign(g);
                self.accumulate(a, da);
            }
            &Op::Reshape(a) => {
                let (r, c) = self.shape(a);
                self.accumulate(a, reshape_rm(g.clone(), r, c));
            }
            &Op::PadRows(a, before) => {
                let rows = self.nodes[a].value.nrows();
                let da = g.slice(s![before..before + rows, ..]).to_owned();
                self.accumulate(a, da);
            }
            Op::GatherRows(a, idx) => {
                let (a, idx) = (*a, idx.clone());
                let mut da = Array2::zeros(self.nodes[a].value.raw_dim());
                for (i, &r) in idx.iter().enumerate() {
                    let mut dst = da.row_mut(r);
                    dst += &g.row(i);
                }
                self.accumulate(a, da);
            }
            &Op::Im2Col1d { x, kernel, dilation } => {
                let (t, c) = self.shape(x);
                let half = (kernel - 1) / 2;
                let mut dx = Array2::zeros((t, c));
                for i in 0..t {
                    for j in 0..kernel {
                        let src = i as isize + (j as isize - half as isize) * dilation as isize;
                        if src >= 0 && (src as usize) < t {
                            let mut dst = dx.row_mut(src as usize);
                            dst += &g.slice(s![i, j * c..(j + 1) * c]);
                        }
                    }
                }
                self.accumulate(x, dx);
            }
            &Op::Im2Col2d {
                x,
                h,
                w,
                kernel,
                stride,
                pad,
            } => {
                let c = self.nodes[x].value.ncols();
                let (ho, wo) = conv2d_out_dims(h, w, kernel, stride, pad);
                let mut dx = Array2::zeros((h * w, c));
                for oy in 0..ho {
                    for ox in 0..wo {
                        let orow = oy * wo + ox;
                        for jy in 0..kernel {
                            for jx in 0..kernel {
                                let iy = (oy * stride + jy) as isize - pad as isize;
                                let ix = (ox * stride + jx) as isize - pad as isize;
                                if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                    let irow = iy as usize * w + ix as usize;
                                    let patch = (jy * kernel + jx) * c;
                                    let mut dst = dx.row_mut(irow);
                                    dst += &g.slice(s![orow, patch..patch + c]);
                                }
                            }
                        }
                    }
                }
                self.accumulate(x, dx);
            }
            &Op::RelPosBias { table, t } => {
                let m = (self.nodes[table].value.ncols() - 1) / 2;
                let mut dt = Array2::zeros((1, 2 * m + 1));
                for i in 0..t {
                    for j in 0..t {
                        dt[[0, rel_offset_index(i, j, m)]] += g[[i, j]];
                    }
                }
                self.accumulate(table, dt);
            }
            &Op::LstmCell { xg, prev, w_hh, b } => {
                let hsize = self.shape(w_hh).0;
                let aux = self.nodes[id].aux.as_ref().expect("gates stashed").clone();
                let prev_v = self.nodes[prev].value.clone();
                let mut dpre = Array2::zeros((1, 4 * hsize));
                let mut dprev = Array2::zeros((1, 2 * hsize));
                for k in 0..hsize {
                    let (i, f, gc, o, tc) = (
                        aux[[0, k]],
                        aux[[0, hsize + k]],
                        aux[[0, 2 * hsize + k]],
                        aux[[0, 3 * hsize + k]],
                        aux[[0, 4 * hsize + k]],
                    );
                    let c_prev = prev_v[[0, hsize + k]];
                    let dh = g[[0, k]];
                    let dc = g[[0, hsize + k]] + dh * o * (1.0 - tc * tc);
                    dpre[[0, k]] = dc * gc * i * (1.0 - i);
                    dpre[[0, hsize + k]] = dc * c_prev * f * (1.0 - f);
                    dpre[[0, 2 * hsize + k]] = dc * i * (1.0 - gc * gc);
                    dpre[[0, 3 * hsize + k]] = dh * tc * o * (1.0 - o);
                    dprev[[0, hsize + k]] = dc * f;
                }
                let h_prev = prev_v.slice(s![.., 0..hsize]);
                let dw = h_prev.t().dot(&dpre);
                let dh_prev = dpre.dot(&self.nodes[w_hh].value.t());
                dprev.slice_mut(s![.., 0..hsize]).assign(&dh_prev);
                self.accumulate(xg, dpre.clone());
                self.accumulate(b, dpre);
                self.accumulate(w_hh, dw);
                self.accumulate(prev, dprev);
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn reshape_rm(a: Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    debug_assert_eq!(a.len(), rows * cols);
    // Stored values are always owned standard-layout arrays, so a row-major
    // reinterpretation never copies.
    a.into_shape_with_order((rows, cols))
        .expect("reshape: element count mismatch or non-contiguous input")
}

/// Output spatial dims of a 2-d convolution; matches [`Tape::im2col_2d`].
pub fn conv2d_out_dims(h: usize, w: usize, kernel: usize, stride: usize, pad: usize) -> (usize, usize) {
    (
        (h + 2 * pad - kernel) / stride + 1,
        (w + 2 * pad - kernel) / stride + 1,
    )
}

fn rel_offset_index(i: usize, j: usize, m: usize) -> usize {
    let off = (j as isize - i as isize).clamp(-(m as isize), m as isize);
    (off + m as isize) as usize
}
