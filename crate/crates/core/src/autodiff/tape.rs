use std::collections::HashMap;

use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op<F> {
    Const,
    Param(ParamId),
    ParamRow { param: ParamId, row: usize },
    Row { table: Var, row: usize },
    Affine { w: Var, b: Option<Var>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice { src: Var, start: usize },
    Stack(Vec<Var>),
    Sum(Var),
    Mean(Vec<Var>),
    SoftmaxMasked { logits: Var, mask: Vec<bool> },
    LogSoftmaxMasked { logits: Var, mask: Vec<bool> },
    Pick { src: Var, index: usize },
}

/// Shape of a tape value (rank at most 3, stored inline).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Shape {
    dims: [usize; 3],
    rank: usize,
}

impl Shape {
    fn of(dims: &[usize]) -> Self {
        let mut out = [0; 3];
        out[..dims.len()].copy_from_slice(dims);
        Self {
            dims: out,
            rank: dims.len(),
        }
    }

    fn try_of(dims: &[usize]) -> Result<Self> {
        if dims.len() > 3 {
            return Err(Error::shape("tape", format!("rank {} values are not supported", dims.len())));
        }
        Ok(Self::of(dims))
    }

    fn as_slice(&self) -> &[usize] {
        &self.dims[..self.rank]
    }
}

#[derive(Clone, Debug)]
struct Node<F> {
    shape: Shape,
    value: Vec<F>,
    op: Op<F>,
}

/// Records a forward computation for one reverse pass.
///
/// Parameter values are copied onto the tape on first use; gradients flow
/// back into the [`ParamStore`] passed to [`Tape::backward`].
#[derive(Debug)]
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    params: HashMap<ParamId, Var>,
    rows: HashMap<(ParamId, usize), Var>,
    consumed: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            rows: HashMap::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Shape, value: Vec<F>, op: Op<F>, name: &'static str) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(name.into()));
        }
        debug_assert_eq!(shape.as_slice().iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].shape.as_slice()
    }

    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<F> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.as_slice().to_vec(), n.value.clone()).expect("tape values are finite")
    }

    fn len_of(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    /// Records a constant (no gradient flows out of it).
    pub fn constant(&mut self, t: &Tensor<F>) -> Result<Var> {
        self.push(Shape::try_of(t.shape())?, t.data().to_vec(), Op::Const, "constant")
    }

    pub fn constant_vec(&mut self, data: Vec<F>) -> Result<Var> {
        self.push(Shape::of(&[data.len()]), data, Op::Const, "constant")
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.push(Shape::of(&[n]), vec![F::zero(); n], Op::Const, "zeros")
            .expect("zeros are finite")
    }

    /// The whole parameter tensor as a tape leaf.
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let t = store.value(id);
        let v = self
            .push(Shape::of(t.shape()), t.data().to_vec(), Op::Param(id), "param")
            .expect("stored parameters are finite");
        self.params.insert(id, v);
        v
    }

    /// Row `row` of a parameter table; backward touches only that row.
    pub fn lookup(&mut self, store: &ParamStore<F>, table: ParamId, row: usize) -> Result<Var> {
        if let Some(&v) = self.rows.get(&(table, row)) {
            return Ok(v);
        }
        let t = store.value(table);
        let data = t.row(row)?.to_vec();
        let v = self.push(Shape::of(&[data.len()]), data, Op::ParamRow { param: table, row }, "lookup")?;
        self.rows.insert((table, row), v);
        Ok(v)
    }

    /// Row `row` of a matrix already on the tape.
    pub fn embedding_lookup(&mut self, table: Var, row: usize) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(Error::shape("embedding_lookup", shape_str(&shape)));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if row >= rows {
            return Err(Error::Index { index: row, len: rows });
        }
        let data = self.value(table)[row * cols..(row + 1) * cols].to_vec();
        self.push(Shape::of(&[cols]), data, Op::Row { table, row }, "embedding_lookup")
    }

    /// `w x + b` for `w: [m, n]`, `x: [n]`, `b: [m]`.
    pub fn affine(&mut self, w: Var, b: Option<Var>, x: Var) -> Result<Var> {
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || self.len_of(x) != ws[1] {
            return Err(Error::shape(
                "affine",
                format!("W {} with x {}", shape_str(&ws), shape_str(self.shape(x))),
            ));
        }
        let (m, n) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.len_of(b) != m {
                return Err(Error::shape(
                    "affine",
                    format!("W {} with b {}", shape_str(&ws), shape_str(self.shape(b))),
                ));
            }
        }
        let wv = self.value(w);
        let xv = self.value(x);
        let mut out: Vec<F> = match b {
            Some(b) => self.value(b).to_vec(),
            None => vec![F::zero(); m],
        };
        for (i, o) in out.iter_mut().enumerate() {
            let row = &wv[i * n..(i + 1) * n];
            let mut acc = F::zero();
            for (a, c) in row.iter().zip(xv) {
                acc = acc + *a * *c;
            }
            *o = *o + acc;
        }
        self.push(Shape::of(&[m]), out, Op::Affine { w, b, x }, "affine")
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.affine(w, None, x)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                name,
                format!("{} vs {}", shape_str(self.shape(a)), shape_str(self.shape(b))),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        self.push(self.nodes[a.0].shape, v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x - *y).collect();
        self.push(self.nodes[a.0].shape, v, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        self.push(self.nodes[a.0].shape, v, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, k: F) -> Result<Var> {
        let v = self.value(a).iter().map(|x| *x * k).collect();
        self.push(self.nodes[a.0].shape, v, Op::Scale(a, k), "scale")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).iter().map(|x| x.max(F::zero())).collect();
        self.push(self.nodes[a.0].shape, v, Op::Relu(a), "relu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(self.nodes[a.0].shape, v, Op::Tanh(a), "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self
            .value(a)
            .iter()
            .map(|x| F::one() / (F::one() + (-*x).exp()))
            .collect();
        self.push(self.nodes[a.0].shape, v, Op::Sigmoid(a), "sigmoid")
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let mut v = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::shape("concat", shape_str(self.shape(p))));
            }
            v.extend_from_slice(self.value(p));
        }
        self.push(Shape::of(&[v.len()]), v, Op::Concat(parts.to_vec()), "concat")
    }

    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.len_of(src) || self.shape(src).len() != 1 {
            return Err(Error::shape(
                "slice",
                format!("[{start}..{}] of {}", start + len, shape_str(self.shape(src))),
            ));
        }
        let v = self.value(src)[start..start + len].to_vec();
        self.push(Shape::of(&[len]), v, Op::Slice { src, start }, "slice")
    }

    /// Stacks equal-length vectors into a `[k, n]` matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::shape("stack", "no rows"));
        };
        let n = self.len_of(first);
        let mut v = Vec::with_capacity(n * rows.len());
        for &r in rows {
            if self.shape(r) != [n] {
                return Err(Error::shape("stack", shape_str(self.shape(r))));
            }
            v.extend_from_slice(self.value(r));
        }
        self.push(Shape::of(&[rows.len(), n]), v, Op::Stack(rows.to_vec()), "stack")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().copied().sum();
        self.push(Shape::of(&[1]), vec![s], Op::Sum(a), "sum")
    }

    /// Elementwise mean of equal-shaped inputs, summed in the given order.
    pub fn mean(&mut self, items: &[Var]) -> Result<Var> {
        let Some(&first) = items.first() else {
            return Err(Error::shape("mean", "no inputs"));
        };
        let shape = self.shape(first).to_vec();
        let mut acc = vec![F::zero(); self.len_of(first)];
        for &it in items {
            if self.shape(it) != shape.as_slice() {
                return Err(Error::shape("mean", shape_str(self.shape(it))));
            }
            for (a, x) in acc.iter_mut().zip(self.value(it)) {
                *a = *a + *x;
            }
        }
        let k = F::lit(items.len() as f64);
        acc.iter_mut().for_each(|a| *a = *a / k);
        self.push(Shape::of(&shape), acc, Op::Mean(items.to_vec()), "mean")
    }

    fn masked_parts(&self, logits: Var, mask: &[bool]) -> Result<(F, F)> {
        let x = self.value(logits);
        if self.shape(logits).len() != 1 || mask.len() != x.len() {
            return Err(Error::shape(
                "softmax_masked",
                format!("logits {} with mask of {}", shape_str(self.shape(logits)), mask.len()),
            ));
        }
        let max = x
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| *v)
            .fold(None, |acc: Option<F>, v| Some(acc.map_or(v, |a| a.max(v))))
            .ok_or(Error::InvalidActionSet)?;
        let z: F = x
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| (*v - max).exp())
            .sum();
        Ok((max, z))
    }

    /// Softmax over the entries where `mask` is true; masked entries are 0.
    pub fn softmax_masked(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let (max, z) = self.masked_parts(logits, mask)?;
        let v = self
            .value(logits)
            .iter()
            .zip(mask)
            .map(|(x, &m)| if m { (*x - max).exp() / z } else { F::zero() })
            .collect();
        let op = Op::SoftmaxMasked {
            logits,
            mask: mask.to_vec(),
        };
        self.push(self.nodes[logits.0].shape, v, op, "softmax_masked")
    }

    /// Log-softmax over unmasked entries. Masked entries hold 0 and carry no gradient.
    pub fn log_softmax_masked(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let (max, z) = self.masked_parts(logits, mask)?;
        let lz = max + z.ln();
        let v = self
            .value(logits)
            .iter()
            .zip(mask)
            .map(|(x, &m)| if m { *x - lz } else { F::zero() })
            .collect();
        let op = Op::LogSoftmaxMasked {
            logits,
            mask: mask.to_vec(),
        };
        self.push(self.nodes[logits.0].shape, v, op, "log_softmax_masked")
    }

    /// Element `index` of a vector, as a scalar.
    pub fn pick(&mut self, src: Var, index: usize) -> Result<Var> {
        let n = self.len_of(src);
        if index >= n {
            return Err(Error::Index { index, len: n });
        }
        let v = vec![self.value(src)[index]];
        self.push(Shape::of(&[1]), v, Op::Pick { src, index }, "pick")
    }

    /// Propagates d`loss`/d(node) back to every parameter reached, adding
    /// into `store`'s gradient slots. A tape supports a single backward pass.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<F>) -> Result<()> {
        if self.consumed {
            return Err(Error::contract("backward already ran on this tape"));
        }
        if self.len_of(loss) != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {}",
                shape_str(self.shape(loss))
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<F>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![F::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Const => {}
                Op::Param(p) => {
                    let slot = store.grad_mut(*p);
                    if slot.len() != g.len() {
                        return Err(Error::shape("backward", store.name(*p).to_owned()));
                    }
                    for (s, x) in slot.iter_mut().zip(&g) {
                        *s = *s + *x;
                    }
                }
                Op::ParamRow { param, row } => {
                    let w = g.len();
                    let slot = store.grad_mut(*param);
                    for (s, x) in slot[row * w..(row + 1) * w].iter_mut().zip(&g) {
                        *s = *s + *x;
                    }
                }
                Op::Row { table, row } => {
                    let tl = self.len_of(*table);
                    let w = g.len();
                    let dst = acc_slot(&mut grads, *table, tl);
                    for (s, x) in dst[row * w..(row + 1) * w].iter_mut().zip(&g) {
                        *s = *s + *x;
                    }
                }
                Op::Affine { w, b, x } => {
                    let (w, b, x) = (*w, *b, *x);
                    let n = self.len_of(x);
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    let dx = acc_slot(&mut grads, x, n);
                    for (i, gi) in g.iter().enumerate() {
                        let row = &wv[i * n..(i + 1) * n];
                        for (d, wij) in dx.iter_mut().zip(row) {
                            *d = *d + *gi * *wij;
                        }
                    }
                    let dw = acc_slot(&mut grads, w, wv.len());
                    for (i, gi) in g.iter().enumerate() {
                        for (d, xj) in dw[i * n..(i + 1) * n].iter_mut().zip(xv) {
                            *d = *d + *gi * *xj;
                        }
                    }
                    if let Some(b) = b {
                        add_into(&mut grads, b, &g);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    add_into(&mut grads, a, &g);
                    add_into(&mut grads, b, &g);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    add_into(&mut grads, a, &g);
                    let neg: Vec<F> = g.iter().map(|x| -*x).collect();
                    add_into(&mut grads, b, &neg);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let da: Vec<F> = g.iter().zip(bv).map(|(x, y)| *x * *y).collect();
                    let db: Vec<F> = g.iter().zip(av).map(|(x, y)| *x * *y).collect();
                    add_into(&mut grads, a, &da);
                    add_into(&mut grads, b, &db);
                }
                Op::Scale(a, k) => {
                    let (a, k) = (*a, *k);
                    let da: Vec<F> = g.iter().map(|x| *x * k).collect();
                    add_into(&mut grads, a, &da);
                }
                Op::Relu(a) => {
                    let a = *a;
                    let av = &self.nodes[a.0].value;
                    let da: Vec<F> = g
                        .iter()
                        .zip(av)
                        .map(|(x, v)| if *v > F::zero() { *x } else { F::zero() })
                        .collect();
                    add_into(&mut grads, a, &da);
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let da: Vec<F> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(x, y)| *x * (F::one() - *y * *y))
                        .collect();
                    add_into(&mut grads, a, &da);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let da: Vec<F> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(x, y)| *x * *y * (F::one() - *y))
                        .collect();
                    add_into(&mut grads, a, &da);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.len_of(p);
                        add_into(&mut grads, p, &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice { src, start } => {
                    let (src, start) = (*src, *start);
                    let n = self.len_of(src);
                    let dst = acc_slot(&mut grads, src, n);
                    for (s, x) in dst[start..start + g.len()].iter_mut().zip(&g) {
                        *s = *s + *x;
                    }
                }
                Op::Stack(rows) => {
                    let mut off = 0;
                    for &r in rows {
                        let n = self.len_of(r);
                        add_into(&mut grads, r, &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Sum(a) => {
                    let a = *a;
                    let da = vec![g[0]; self.len_of(a)];
                    add_into(&mut grads, a, &da);
                }
                Op::Mean(items) => {
                    let k = F::lit(items.len() as f64);
                    let da: Vec<F> = g.iter().map(|x| *x / k).collect();
                    for &it in items {
                        add_into(&mut grads, it, &da);
                    }
                }
                Op::SoftmaxMasked { logits, mask } => {
                    let p = &node.value;
                    let dot: F = g.iter().zip(p).map(|(x, y)| *x * *y).sum();
                    let da: Vec<F> = g
                        .iter()
                        .zip(p)
                        .zip(mask)
                        .map(|((x, y), &m)| if m { *y * (*x - dot) } else { F::zero() })
                        .collect();
                    add_into(&mut grads, *logits, &da);
                }
                Op::LogSoftmaxMasked { logits, mask } => {
                    // p_i = exp(logp_i) on unmasked entries
                    let lp = &node.value;
                    let gsum: F = g
                        .iter()
                        .zip(mask)
                        .filter(|(_, &m)| m)
                        .map(|(x, _)| *x)
                        .sum();
                    let da: Vec<F> = g
                        .iter()
                        .zip(lp)
                        .zip(mask)
                        .map(|((x, l), &m)| if m { *x - l.exp() * gsum } else { F::zero() })
                        .collect();
                    add_into(&mut grads, *logits, &da);
                }
                Op::Pick { src, index } => {
                    let (src, index) = (*src, *index);
                    let n = self.len_of(src);
                    let dst = acc_slot(&mut grads, src, n);
                    dst[index] = dst[index] + g[0];
                }
            }
        }
        Ok(())
    }
}

fn acc_slot<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, n: usize) -> &mut Vec<F> {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); n])
}

fn add_into<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, g: &[F]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a = *a + *x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}
