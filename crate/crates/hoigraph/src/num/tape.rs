//! Reverse-mode gradient tape over dense vectors and matrices.
//!
//! Values are recorded into one flat buffer as operations execute; a single
//! backward sweep accumulates adjoints in reverse order. The tape covers only
//! the shapes this crate needs (matrix-vector products, elementwise ops,
//! concatenation, gathering embedding rows, and a handful of scalar ops) and
//! is rebuilt per batch, reusing its buffers.

use crate::error::{Error, Result};
use crate::num::focal::{focal_loss, FOCAL_CLAMP_EPS};
use crate::num::matrix::Param;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Constant or parameter input; nothing to propagate further.
    Leaf,
    /// Row `r` of matrix `m`.
    Row { m: VarId, r: usize },
    /// Matrix-vector product `W x`.
    MatVec { w: VarId, x: VarId },
    AddV { a: VarId, b: VarId },
    SubV { a: VarId, b: VarId },
    /// Elementwise `x + c`; the constant itself does not enter backward.
    AddConst { x: VarId },
    /// Elementwise `k * x`.
    ScaleConst { x: VarId, k: f64 },
    /// Scalar variable times vector: `s * v`.
    ScaleVar { s: VarId, v: VarId },
    Relu { x: VarId },
    Logistic { x: VarId },
    Concat { parts: Vec<VarId> },
    /// Elementwise mean of same-length vectors.
    MeanV { parts: Vec<VarId> },
    Dot { a: VarId, b: VarId },
    /// Product of two scalars.
    MulS { a: VarId, b: VarId },
    /// Sum of scalars.
    SumS { parts: Vec<VarId> },
    /// Single element of a vector.
    Index { v: VarId, i: usize },
    /// Binary focal loss of a predicted probability against a fixed label.
    Focal {
        yhat: VarId,
        y: bool,
        beta: f64,
        gamma: f64,
    },
}

pub struct Tape {
    ops: Vec<Op>,
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    data: Vec<f64>,
    adjoints: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            shapes: Vec::new(),
            offsets: Vec::new(),
            data: Vec::new(),
            adjoints: Vec::new(),
        }
    }

    /// Drop all recorded nodes but keep allocated capacity.
    pub fn clear(&mut self) {
        self.ops.clear();
        self.shapes.clear();
        self.offsets.clear();
        self.data.clear();
        self.adjoints.clear();
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: VarId) -> &[f64] {
        let (start, len) = self.span(v.0);
        &self.data[start..start + len]
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: VarId) -> f64 {
        debug_assert_eq!(self.span(v.0).1, 1);
        self.data[self.offsets[v.0]]
    }

    pub fn shape(&self, v: VarId) -> (usize, usize) {
        self.shapes[v.0]
    }

    /// Adjoint of `v` after [`Tape::backward`].
    pub fn adjoint(&self, v: VarId) -> &[f64] {
        let (start, len) = self.span(v.0);
        &self.adjoints[start..start + len]
    }

    fn span(&self, idx: usize) -> (usize, usize) {
        let (r, c) = self.shapes[idx];
        (self.offsets[idx], r * c)
    }

    fn vec_len(&self, v: VarId) -> Result<usize> {
        let (r, c) = self.shapes[v.0];
        if c != 1 {
            return Err(Error::Shape(format!(
                "expected a column vector, got {r}x{c}"
            )));
        }
        Ok(r)
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize) -> VarId {
        let id = self.ops.len();
        self.ops.push(op);
        self.shapes.push((rows, cols));
        self.offsets.push(self.data.len());
        self.data.resize(self.data.len() + rows * cols, 0.0);
        VarId(id)
    }

    fn out(&mut self, id: VarId) -> &mut [f64] {
        let (start, len) = self.span(id.0);
        &mut self.data[start..start + len]
    }

    /// Record a constant vector.
    pub fn constant(&mut self, values: &[f64]) -> VarId {
        let id = self.push(Op::Leaf, values.len(), 1);
        self.out(id).copy_from_slice(values);
        id
    }

    /// Record a constant scalar.
    pub fn constant_scalar(&mut self, value: f64) -> VarId {
        self.constant(&[value])
    }

    /// Record a parameter's current value. The caller keeps the returned id
    /// and pulls the adjoint back into the parameter after `backward`.
    pub fn param(&mut self, p: &Param) -> VarId {
        let id = self.push(Op::Leaf, p.value.rows(), p.value.cols());
        self.out(id).copy_from_slice(p.value.data());
        id
    }

    /// Add the adjoint of `var` into `param.grad`.
    pub fn accumulate_grad(&self, var: VarId, param: &mut Param) {
        let adj = self.adjoint(var);
        for (g, a) in param.grad.data_mut().iter_mut().zip(adj) {
            *g += a;
        }
    }

    pub fn row(&mut self, m: VarId, r: usize) -> Result<VarId> {
        let (rows, cols) = self.shapes[m.0];
        if r >= rows {
            return Err(Error::Shape(format!("row {r} out of {rows}")));
        }
        let id = self.push(Op::Row { m, r }, cols, 1);
        let src = self.offsets[m.0] + r * cols;
        let (dst, len) = self.span(id.0);
        self.data.copy_within(src..src + cols, dst);
        debug_assert_eq!(len, cols);
        Ok(id)
    }

    pub fn matvec(&mut self, w: VarId, x: VarId) -> Result<VarId> {
        let (rows, cols) = self.shapes[w.0];
        let n = self.vec_len(x)?;
        if cols != n {
            return Err(Error::Shape(format!(
                "matvec: matrix is {rows}x{cols}, vector has length {n}"
            )));
        }
        let id = self.push(Op::MatVec { w, x }, rows, 1);
        let w_off = self.offsets[w.0];
        let x_off = self.offsets[x.0];
        let y_off = self.offsets[id.0];
        for r in 0..rows {
            let row = &self.data[w_off + r * cols..w_off + (r + 1) * cols];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(&self.data[x_off..x_off + cols]) {
                acc += wv * xv;
            }
            self.data[y_off + r] = acc;
        }
        Ok(VarId(id.0))
    }

    fn binary_elementwise(&mut self, a: VarId, b: VarId, sub: bool) -> Result<VarId> {
        let n = self.vec_len(a)?;
        let m = self.vec_len(b)?;
        if n != m {
            return Err(Error::Shape(format!("elementwise op on lengths {n} and {m}")));
        }
        let op = if sub { Op::SubV { a, b } } else { Op::AddV { a, b } };
        let id = self.push(op, n, 1);
        let (a_off, b_off, y_off) = (self.offsets[a.0], self.offsets[b.0], self.offsets[id.0]);
        for i in 0..n {
            let av = self.data[a_off + i];
            let bv = self.data[b_off + i];
            self.data[y_off + i] = if sub { av - bv } else { av + bv };
        }
        Ok(id)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_elementwise(a, b, false)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_elementwise(a, b, true)
    }

    pub fn add_const(&mut self, x: VarId, c: f64) -> VarId {
        let (n, _) = self.shapes[x.0];
        let id = self.push(Op::AddConst { x }, n, 1);
        let (x_off, y_off) = (self.offsets[x.0], self.offsets[id.0]);
        for i in 0..n {
            self.data[y_off + i] = self.data[x_off + i] + c;
        }
        id
    }

    pub fn scale_const(&mut self, x: VarId, k: f64) -> VarId {
        let (n, _) = self.shapes[x.0];
        let id = self.push(Op::ScaleConst { x, k }, n, 1);
        let (x_off, y_off) = (self.offsets[x.0], self.offsets[id.0]);
        for i in 0..n {
            self.data[y_off + i] = self.data[x_off + i] * k;
        }
        id
    }

    pub fn scale_var(&mut self, s: VarId, v: VarId) -> Result<VarId> {
        if self.vec_len(s)? != 1 {
            return Err(Error::Shape("scale_var: scale must be a scalar".into()));
        }
        let n = self.vec_len(v)?;
        let id = self.push(Op::ScaleVar { s, v }, n, 1);
        let sv = self.data[self.offsets[s.0]];
        let (v_off, y_off) = (self.offsets[v.0], self.offsets[id.0]);
        for i in 0..n {
            self.data[y_off + i] = sv * self.data[v_off + i];
        }
        Ok(id)
    }

    pub fn relu(&mut self, x: VarId) -> VarId {
        let (n, _) = self.shapes[x.0];
        let id = self.push(Op::Relu { x }, n, 1);
        let (x_off, y_off) = (self.offsets[x.0], self.offsets[id.0]);
        for i in 0..n {
            self.data[y_off + i] = self.data[x_off + i].max(0.0);
        }
        id
    }

    pub fn logistic(&mut self, x: VarId) -> VarId {
        let (n, _) = self.shapes[x.0];
        let id = self.push(Op::Logistic { x }, n, 1);
        let (x_off, y_off) = (self.offsets[x.0], self.offsets[id.0]);
        for i in 0..n {
            self.data[y_off + i] = 1.0 / (1.0 + (-self.data[x_off + i]).exp());
        }
        id
    }

    pub fn concat(&mut self, parts: &[VarId]) -> Result<VarId> {
        let mut total = 0;
        for &p in parts {
            total += self.vec_len(p)?;
        }
        let id = self.push(Op::Concat { parts: parts.to_vec() }, total, 1);
        let mut cursor = self.offsets[id.0];
        for &p in parts {
            let (src, len) = self.span(p.0);
            self.data.copy_within(src..src + len, cursor);
            cursor += len;
        }
        Ok(id)
    }

    pub fn mean(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(Error::Shape("mean over zero vectors".into()));
        }
        let n = self.vec_len(parts[0])?;
        for &p in &parts[1..] {
            if self.vec_len(p)? != n {
                return Err(Error::Shape("mean over mixed-length vectors".into()));
            }
        }
        let inv = 1.0 / parts.len() as f64;
        let mut out = vec![0.0; n];
        for &p in parts {
            let off = self.offsets[p.0];
            for (o, v) in out.iter_mut().zip(&self.data[off..off + n]) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o *= inv;
        }
        let id = self.push(Op::MeanV { parts: parts.to_vec() }, n, 1);
        self.out(id).copy_from_slice(&out);
        Ok(id)
    }

    pub fn dot(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let n = self.vec_len(a)?;
        if self.vec_len(b)? != n {
            return Err(Error::Shape("dot over mixed-length vectors".into()));
        }
        let id = self.push(Op::Dot { a, b }, 1, 1);
        let (a_off, b_off) = (self.offsets[a.0], self.offsets[b.0]);
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.data[a_off + i] * self.data[b_off + i];
        }
        let y_off = self.offsets[id.0];
        self.data[y_off] = acc;
        Ok(id)
    }

    pub fn mul_scalar(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        if self.vec_len(a)? != 1 || self.vec_len(b)? != 1 {
            return Err(Error::Shape("mul_scalar expects two scalars".into()));
        }
        let id = self.push(Op::MulS { a, b }, 1, 1);
        let v = self.data[self.offsets[a.0]] * self.data[self.offsets[b.0]];
        let y_off = self.offsets[id.0];
        self.data[y_off] = v;
        Ok(id)
    }

    pub fn sum_scalars(&mut self, parts: &[VarId]) -> Result<VarId> {
        let mut acc = 0.0;
        for &p in parts {
            if self.vec_len(p)? != 1 {
                return Err(Error::Shape("sum_scalars over non-scalar".into()));
            }
            acc += self.data[self.offsets[p.0]];
        }
        let id = self.push(Op::SumS { parts: parts.to_vec() }, 1, 1);
        let y_off = self.offsets[id.0];
        self.data[y_off] = acc;
        Ok(id)
    }

    pub fn index(&mut self, v: VarId, i: usize) -> Result<VarId> {
        let n = self.vec_len(v)?;
        if i >= n {
            return Err(Error::Shape(format!("index {i} out of {n}")));
        }
        let id = self.push(Op::Index { v, i }, 1, 1);
        let val = self.data[self.offsets[v.0] + i];
        let y_off = self.offsets[id.0];
        self.data[y_off] = val;
        Ok(id)
    }

    /// Binary focal loss node; `yhat` is a scalar probability.
    pub fn focal(&mut self, yhat: VarId, y: bool, beta: f64, gamma: f64) -> Result<VarId> {
        if self.vec_len(yhat)? != 1 {
            return Err(Error::Shape("focal expects a scalar prediction".into()));
        }
        let id = self.push(Op::Focal { yhat, y, beta, gamma }, 1, 1);
        let p = self.data[self.offsets[yhat.0]];
        let (loss, _) = focal_loss(p, y, beta, gamma);
        let y_off = self.offsets[id.0];
        self.data[y_off] = loss;
        Ok(id)
    }

    /// Reverse sweep from `root` (a scalar). Adjoints of every node become
    /// available through [`Tape::adjoint`].
    pub fn backward(&mut self, root: VarId) -> Result<()> {
        if self.vec_len(root)? != 1 {
            return Err(Error::Shape("backward root must be a scalar".into()));
        }
        self.adjoints.clear();
        self.adjoints.resize(self.data.len(), 0.0);
        self.adjoints[self.offsets[root.0]] = 1.0;

        for idx in (0..=root.0).rev() {
            let (out_off, out_len) = self.span(idx);
            // Skip nodes with an all-zero adjoint cheaply.
            match &self.ops[idx] {
                Op::Leaf => {}
                Op::Row { m, r } => {
                    let cols = self.shapes[idx].0;
                    let dst = self.offsets[m.0] + r * cols;
                    for i in 0..cols {
                        self.adjoints[dst + i] += self.adjoints[out_off + i];
                    }
                }
                Op::MatVec { w, x } => {
                    let (rows, cols) = self.shapes[w.0];
                    let w_off = self.offsets[w.0];
                    let x_off = self.offsets[x.0];
                    for r in 0..rows {
                        let g = self.adjoints[out_off + r];
                        if g == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            self.adjoints[w_off + r * cols + c] += g * self.data[x_off + c];
                            self.adjoints[x_off + c] += g * self.data[w_off + r * cols + c];
                        }
                    }
                }
                Op::AddV { a, b } => {
                    let (a_off, b_off) = (self.offsets[a.0], self.offsets[b.0]);
                    for i in 0..out_len {
                        let g = self.adjoints[out_off + i];
                        self.adjoints[a_off + i] += g;
                        self.adjoints[b_off + i] += g;
                    }
                }
                Op::SubV { a, b } => {
                    let (a_off, b_off) = (self.offsets[a.0], self.offsets[b.0]);
                    for i in 0..out_len {
                        let g = self.adjoints[out_off + i];
                        self.adjoints[a_off + i] += g;
                        self.adjoints[b_off + i] -= g;
                    }
                }
                Op::AddConst { x } => {
                    let x_off = self.offsets[x.0];
                    for i in 0..out_len {
                        self.adjoints[x_off + i] += self.adjoints[out_off + i];
                    }
                }
                Op::ScaleConst { x, k } => {
                    let x_off = self.offsets[x.0];
                    for i in 0..out_len {
                        self.adjoints[x_off + i] += k * self.adjoints[out_off + i];
                    }
                }
                Op::ScaleVar { s, v } => {
                    let s_off = self.offsets[s.0];
                    let v_off = self.offsets[v.0];
                    let sv = self.data[s_off];
                    for i in 0..out_len {
                        let g = self.adjoints[out_off + i];
                        self.adjoints[s_off] += g * self.data[v_off + i];
                        self.adjoints[v_off + i] += g * sv;
                    }
                }
                Op::Relu { x } => {
                    let x_off = self.offsets[x.0];
                    for i in 0..out_len {
                        if self.data[x_off + i] > 0.0 {
                            self.adjoints[x_off + i] += self.adjoints[out_off + i];
                        }
                    }
                }
                Op::Logistic { x } => {
                    let x_off = self.offsets[x.0];
                    for i in 0..out_len {
                        let y = self.data[out_off + i];
                        self.adjoints[x_off + i] += self.adjoints[out_off + i] * y * (1.0 - y);
                    }
                }
                Op::Concat { parts } => {
                    let mut cursor = out_off;
                    for p in parts {
                        let (p_off, p_len) = {
                            let (r, c) = self.shapes[p.0];
                            (self.offsets[p.0], r * c)
                        };
                        for i in 0..p_len {
                            self.adjoints[p_off + i] += self.adjoints[cursor + i];
                        }
                        cursor += p_len;
                    }
                }
                Op::MeanV { parts } => {
                    let inv = 1.0 / parts.len() as f64;
                    for p in parts {
                        let p_off = self.offsets[p.0];
                        for i in 0..out_len {
                            self.adjoints[p_off + i] += inv * self.adjoints[out_off + i];
                        }
                    }
                }
                Op::Dot { a, b } => {
                    let g = self.adjoints[out_off];
                    if g != 0.0 {
                        let (a_off, b_off) = (self.offsets[a.0], self.offsets[b.0]);
                        let n = self.shapes[a.0].0;
                        for i in 0..n {
                            self.adjoints[a_off + i] += g * self.data[b_off + i];
                            self.adjoints[b_off + i] += g * self.data[a_off + i];
                        }
                    }
                }
                Op::MulS { a, b } => {
                    let g = self.adjoints[out_off];
                    let (a_off, b_off) = (self.offsets[a.0], self.offsets[b.0]);
                    self.adjoints[a_off] += g * self.data[b_off];
                    self.adjoints[b_off] += g * self.data[a_off];
                }
                Op::SumS { parts } => {
                    let g = self.adjoints[out_off];
                    for p in parts {
                        let p_off = self.offsets[p.0];
                        self.adjoints[p_off] += g;
                    }
                }
                Op::Index { v, i } => {
                    let v_off = self.offsets[v.0];
                    self.adjoints[v_off + i] += self.adjoints[out_off];
                }
                Op::Focal { yhat, y, beta, gamma } => {
                    let p = self.data[self.offsets[yhat.0]];
                    let (_, dp) = focal_loss(p, *y, *beta, *gamma);
                    // The clamp saturates: no gradient outside its range.
                    let inside = p > FOCAL_CLAMP_EPS && p < 1.0 - FOCAL_CLAMP_EPS;
                    if inside {
                        let y_off = self.offsets[yhat.0];
                        self.adjoints[y_off] += self.adjoints[out_off] * dp;
                    }
                }
            }
        }
        Ok(())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
