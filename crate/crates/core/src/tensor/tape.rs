use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Seed for one dropout call site.
///
/// Derive per-site seeds with [`DropoutSeed::derive`] so that a forward pass
/// is exactly replayable from a single root seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DropoutSeed(pub u64);

impl DropoutSeed {
    pub fn derive(self, salt: u64) -> Self {
        DropoutSeed(mix64(self.0 ^ mix64(salt.wrapping_add(0x9e37_79b9_7f4a_7c15))))
    }
}

/// splitmix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug)]
enum Op<T> {
    /// Constant, or a value computed without any grad-requiring input.
    Leaf,
    Param {
        store: u64,
        id: ParamId,
    },
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_b: bool,
    },
    Add {
        a: Var,
        b: Var,
        bcast: Bcast,
    },
    Sub {
        a: Var,
        b: Var,
        bcast: Bcast,
    },
    Mul {
        a: Var,
        b: Var,
        bcast: Bcast,
    },
    Scale {
        x: Var,
        c: T,
    },
    AddScalar {
        x: Var,
    },
    Tanh {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Exp {
        x: Var,
    },
    Log {
        x: Var,
    },
    Pow {
        x: Var,
        p: T,
    },
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    Softmax {
        x: Var,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    SumLast {
        x: Var,
        width: usize,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
        width: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    Concat {
        parts: Vec<(Var, usize)>,
    },
    Slice {
        x: Var,
        outer: usize,
        dim: usize,
        inner: usize,
        start: usize,
        end: usize,
    },
    Select {
        x: Var,
        outer: usize,
        dim: usize,
        inner: usize,
        index: usize,
    },
    Permute {
        x: Var,
        /// Source offset for every output element.
        src: Vec<usize>,
    },
    Reshape {
        x: Var,
    },
    Normalize {
        x: Var,
        width: usize,
        norms: Vec<T>,
    },
    Cosine {
        a: Var,
        b: Var,
        width: usize,
    },
    Pick {
        x: Var,
        idx: Vec<usize>,
        width: usize,
    },
    WhereRows {
        mask: Vec<bool>,
        a: Var,
        b: Var,
        width: usize,
    },
    MeanPool {
        x: Var,
        weights: Vec<T>,
        len: usize,
        width: usize,
    },
}

#[derive(Clone, Copy, Debug)]
enum Bcast {
    Same,
    /// b broadcasts over leading dims of a; value is b's length.
    RightInner(usize),
    /// a broadcasts over leading dims of b.
    LeftInner(usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of executed operations.
///
/// Nodes are appended as kernels run, so every node follows the nodes that
/// produced its inputs. [`Tape::backward`] walks the record once in reverse.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
    cleared: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<T: Scalar>(op: &'static str, data: &[T]) -> Result<()> {
    if cfg!(debug_assertions) && !data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op });
    }
    Ok(())
}

fn split_last(shape: &[usize]) -> (usize, usize) {
    let w = *shape.last().unwrap_or(&1);
    let rows = if w == 0 { 0 } else { shape.iter().product::<usize>() / w };
    (rows, w)
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_rule(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Bcast, Vec<usize>)> {
    if a == b {
        return Ok((Bcast::Same, a.to_vec()));
    }
    if b.len() < a.len() && a.ends_with(b) {
        return Ok((Bcast::RightInner(b.iter().product()), a.to_vec()));
    }
    if a.len() < b.len() && b.ends_with(a) {
        return Ok((Bcast::LeftInner(a.iter().product()), b.to_vec()));
    }
    Err(Error::shape(op, a, b))
}

/// `out[i*n + j] = sum_p a[i*k + p] * b[p*n + j]`, accumulated in f64.
fn matmul_into<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    let mut acc = vec![0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let aip = aip.widen();
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s += aip * bv.widen();
            }
        }
        for (o, &s) in out[i * n..(i + 1) * n].iter_mut().zip(&acc) {
            *o = T::narrow(s);
        }
    }
}

/// `da[i*k + p] += sum_j g[i*n + j] * b[p*n + j]`
fn matmul_grad_a<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize, da: &mut [T]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let s: f64 = grow.iter().zip(brow).map(|(x, y)| x.widen() * y.widen()).sum();
            da[i * k + p] += T::narrow(s);
        }
    }
}

/// `db[p*n + j] += sum_i a[i*k + p] * g[i*n + j]`, accumulated in f64 into `acc`.
fn matmul_grad_b_acc<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize, acc: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p].widen();
            if aip == 0.0 {
                continue;
            }
            let dst = &mut acc[p * n..(p + 1) * n];
            for (d, &gv) in dst.iter_mut().zip(grow) {
                *d += aip * gv.widen();
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
            cleared: false,
        }
    }

    /// A tape that never records operations; values only.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded differentiable operations.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf | Op::Param { .. }))
            .count()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        check_finite(op_name, value.data())?;
        let needs_grad = self.grad_enabled && inputs.iter().any(|&v| self.needs(v));
        let op = if needs_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: value.with_requires_grad(false),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a stored parameter as a leaf. Its gradient is reported by
    /// [`Tape::backward`] when the parameter requires grad.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        let needs_grad = self.grad_enabled && t.requires_grad();
        self.nodes.push(Node {
            value: Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("param shape"),
            op: Op::Param {
                store: store.uid(),
                id,
            },
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    // ---- kernels -------------------------------------------------------

    /// `[..., m, k] x [k, n]` or `[..., m, k] x [..., k, n]` with equal leading dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let shared_b = lead_b.is_empty();
        if !shared_b && lead_a != lead_b {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let batch: usize = lead_a.iter().product();
        let mut out_shape = lead_a.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (ad, bd) = (self.data(a), self.data(b));
            if shared_b {
                matmul_into(ad, bd, batch * m, k, n, &mut out);
            } else {
                for t in 0..batch {
                    matmul_into(
                        &ad[t * m * k..(t + 1) * m * k],
                        &bd[t * k * n..(t + 1) * k * n],
                        m,
                        k,
                        n,
                        &mut out[t * m * n..(t + 1) * m * n],
                    );
                }
            }
        }
        let value = Tensor::new(out_shape, out)?;
        self.push(
            "matmul",
            value,
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
            },
            &[a, b],
        )
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Tensor<T>, Bcast)> {
        let (bc, shape) = broadcast_rule(name, self.shape(a), self.shape(b))?;
        let (ad, bd) = (self.data(a), self.data(b));
        let data: Vec<T> = match bc {
            Bcast::Same => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::RightInner(inner) => ad
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, bd[i % inner]))
                .collect(),
            Bcast::LeftInner(inner) => bd
                .iter()
                .enumerate()
                .map(|(i, &y)| f(ad[i % inner], y))
                .collect(),
        };
        Ok((Tensor::new(shape, data)?, bc))
    }

    /// Elementwise sum; the lower-rank operand broadcasts over leading dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bcast) = self.binary("add", a, b, |x, y| x + y)?;
        self.push("add", value, Op::Add { a, b, bcast }, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bcast) = self.binary("sub", a, b, |x, y| x - y)?;
        self.push("sub", value, Op::Sub { a, b, bcast }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, bcast) = self.binary("mul", a, b, |x, y| x * y)?;
        self.push("mul", value, Op::Mul { a, b, bcast }, &[a, b])
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let v = self.value(x);
        Tensor::new(v.shape().to_vec(), v.data().iter().map(|&e| f(e)).collect()).expect("same shape")
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let value = self.unary(x, |e| e * c);
        self.push("scale", value, Op::Scale { x, c }, &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let value = self.unary(x, |e| e + c);
        self.push("add_scalar", value, Op::AddScalar { x }, &[x])
    }

    /// `c - x`
    pub fn rsub_scalar(&mut self, c: T, x: Var) -> Result<Var> {
        let neg = self.scale(x, -T::one())?;
        self.add_scalar(neg, c)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.unary(x, T::tanh);
        self.push("tanh", value, Op::Tanh { x }, &[x])
    }

    /// Subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.unary(x, |e| if e > T::zero() { e } else { T::zero() });
        self.push("relu", value, Op::Relu { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.unary(x, |e| {
            if e >= T::zero() {
                T::one() / (T::one() + (-e).exp())
            } else {
                let z = e.exp();
                z / (T::one() + z)
            }
        });
        self.push("sigmoid", value, Op::Sigmoid { x }, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let value = self.unary(x, T::exp);
        self.push("exp", value, Op::Exp { x }, &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let value = self.unary(x, T::ln);
        self.push("log", value, Op::Log { x }, &[x])
    }

    /// `x^p` for a constant exponent.
    pub fn pow(&mut self, x: Var, p: T) -> Result<Var> {
        let value = self.unary(x, |e| e.powf(p));
        self.push("pow", value, Op::Pow { x, p }, &[x])
    }

    /// Gradient passes only where `lo < x < hi`.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        let value = self.unary(x, |e| e.max(lo).min(hi));
        self.push("clamp", value, Op::Clamp { x, lo, hi }, &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, None)
    }

    /// Softmax over the last axis with excluded keys.
    ///
    /// `key_mask` has shape `[B, K]` where `x` is `[B, ..., K]`; a `false`
    /// entry gets probability exactly 0, as if its score were -inf. Every
    /// row needs at least one kept key.
    pub fn masked_softmax(&mut self, x: Var, key_mask: &[bool]) -> Result<Var> {
        self.softmax_impl(x, Some(key_mask))
    }

    fn softmax_impl(&mut self, x: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, w) = split_last(&shape);
        let rows_per_group = match key_mask {
            Some(mask) => {
                let groups = shape.first().copied().unwrap_or(1);
                if shape.len() < 2 || mask.len() != groups * w {
                    return Err(Error::invalid(
                        "masked_softmax",
                        format!("mask of length {} does not fit scores {shape:?}", mask.len()),
                    ));
                }
                rows / groups
            }
            None => rows.max(1),
        };
        let xd = self.data(x);
        let mut out = vec![T::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * w..(r + 1) * w];
            let keep = |j: usize| match key_mask {
                Some(m) => m[(r / rows_per_group) * w + j],
                None => true,
            };
            let mut mx = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    mx = mx.max(v.widen());
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(Error::invalid("masked_softmax", format!("row {r} has no kept keys")));
            }
            let mut total = 0f64;
            let mut e = vec![0f64; w];
            for (j, &v) in row.iter().enumerate() {
                if keep(j) {
                    e[j] = (v.widen() - mx).exp();
                    total += e[j];
                }
            }
            for j in 0..w {
                out[r * w + j] = T::narrow(e[j] / total);
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push("softmax", value, Op::Softmax { x }, &[x])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.data(x).iter().map(|v| v.widen()).sum();
        self.push("sum", Tensor::scalar(T::narrow(s)), Op::Sum { x }, &[x])
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        if d.is_empty() {
            return Err(Error::invalid("mean", "empty tensor"));
        }
        let s: f64 = d.iter().map(|v| v.widen()).sum::<f64>() / d.len() as f64;
        self.push("mean", Tensor::scalar(T::narrow(s)), Op::Mean { x }, &[x])
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return Err(Error::invalid("sum_last", "scalar input"));
        }
        let (rows, w) = split_last(&shape);
        let xd = self.data(x);
        let out = (0..rows)
            .map(|r| T::narrow(xd[r * w..(r + 1) * w].iter().map(|v| v.widen()).sum()))
            .collect();
        let value = Tensor::new(shape[..shape.len() - 1].to_vec(), out)?;
        self.push("sum_last", value, Op::SumLast { x, width: w }, &[x])
    }

    /// Rows of a `[V, d]` table; output shape is `ids_shape + [d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize], ids_shape: &[usize]) -> Result<Var> {
        let ts = self.shape(table).to_vec();
        if ts.len() != 2 || ids_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::invalid(
                "gather",
                format!("table {ts:?} with {} ids of shape {ids_shape:?}", ids.len()),
            ));
        }
        let (v, d) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::invalid("gather", format!("row {bad} outside table of {v} rows")));
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&td[i * d..(i + 1) * d]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(d);
        let value = Tensor::new(shape, out)?;
        self.push(
            "gather",
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                width: d,
            },
            &[table],
        )
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias` (both of the last axis' length).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, w) = split_last(&shape);
        if self.shape(gain) != [w] || self.shape(bias) != [w] {
            return Err(Error::shape("layer_norm", &shape, self.shape(gain)));
        }
        let (xd, gd, bd) = (self.data(x), self.data(gain), self.data(bias));
        let mut out = vec![T::zero(); xd.len()];
        let mut xhat = vec![T::zero(); xd.len()];
        let mut rstd = vec![T::zero(); rows];
        for r in 0..rows {
            let row = &xd[r * w..(r + 1) * w];
            let mu = row.iter().map(|v| v.widen()).sum::<f64>() / w as f64;
            let var = row.iter().map(|v| (v.widen() - mu).powi(2)).sum::<f64>() / w as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = T::narrow(rs);
            for j in 0..w {
                let h = (row[j].widen() - mu) * rs;
                xhat[r * w + j] = T::narrow(h);
                out[r * w + j] = T::narrow(h * gd[j].widen() + bd[j].widen());
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            &[x, gain, bias],
        )
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1/(1-p)`. `seed == None` is the identity (eval mode).
    pub fn dropout(&mut self, x: Var, p: f64, seed: Option<DropoutSeed>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("probability {p} outside [0, 1)")));
        }
        let Some(seed) = seed else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let n = self.value(x).len();
        let mask = dropout_mask::<T>(n, p, seed);
        let xd = self.data(x);
        let out = xd.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push("dropout", value, Op::Dropout { x, mask }, &[x])
    }

    /// Concatenation along the last axis; leading dims must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("concat", "no inputs"));
        };
        let lead = self.shape(first)[..self.shape(first).len().saturating_sub(1)].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(Error::shape("concat", self.shape(first), s));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        let recorded = parts.iter().copied().zip(widths).collect();
        self.push("concat", value, Op::Concat { parts: recorded }, parts)
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{end} on axis {axis} of {shape:?}"),
            ));
        }
        let (outer, dim, inner) = axis_split(&shape, axis);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * dim + start) * inner..(o * dim + end) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = end - start;
        let value = Tensor::new(oshape, out)?;
        self.push(
            "slice",
            value,
            Op::Slice {
                x,
                outer,
                dim,
                inner,
                start,
                end,
            },
            &[x],
        )
    }

    /// `x[.., index, ..]` along `axis`, removing that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || index >= shape[axis] {
            return Err(Error::invalid(
                "select",
                format!("index {index} on axis {axis} of {shape:?}"),
            ));
        }
        let (outer, dim, inner) = axis_split(&shape, axis);
        let xd = self.data(x);
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            out.extend_from_slice(&xd[(o * dim + index) * inner..(o * dim + index + 1) * inner]);
        }
        let mut oshape = shape;
        oshape.remove(axis);
        let value = Tensor::new(oshape, out)?;
        self.push(
            "select",
            value,
            Op::Select {
                x,
                outer,
                dim,
                inner,
                index,
            },
            &[x],
        )
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::invalid("permute", format!("axes {axes:?} for shape {shape:?}")));
        }
        let mut strides = vec![1usize; shape.len()];
        for i in (0..shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let oshape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let n: usize = shape.iter().product();
        let mut src = Vec::with_capacity(n);
        let mut idx = vec![0usize; oshape.len()];
        for _ in 0..n {
            src.push(idx.iter().zip(axes).map(|(&i, &a)| i * strides[a]).sum());
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < oshape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let xd = self.data(x);
        let out = src.iter().map(|&s| xd[s]).collect();
        let value = Tensor::new(oshape, out)?;
        self.push("permute", value, Op::Permute { x, src }, &[x])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::invalid("transpose", format!("rank {r} < 2")));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push("reshape", v, Op::Reshape { x }, &[x])
    }

    /// Scales each last-axis vector to unit Euclidean norm.
    pub fn normalize(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, w) = split_last(&shape);
        let xd = self.data(x);
        let mut norms = Vec::with_capacity(rows);
        let mut out = vec![T::zero(); xd.len()];
        for r in 0..rows {
            let row = &xd[r * w..(r + 1) * w];
            let nrm = row.iter().map(|v| v.widen().powi(2)).sum::<f64>().sqrt();
            if nrm == 0.0 {
                return Err(Error::ZeroNorm { op: "normalize" });
            }
            norms.push(T::narrow(nrm));
            for j in 0..w {
                out[r * w + j] = T::narrow(row[j].widen() / nrm);
            }
        }
        let value = Tensor::new(shape, out)?;
        self.push(
            "normalize",
            value,
            Op::Normalize { x, width: w, norms },
            &[x],
        )
    }

    /// Cosine similarity of paired last-axis vectors.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape != self.shape(b) || shape.is_empty() {
            return Err(Error::shape("cosine", &shape, self.shape(b)));
        }
        let (rows, w) = split_last(&shape);
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let (x, y) = (&ad[r * w..(r + 1) * w], &bd[r * w..(r + 1) * w]);
            let (dot, nx, ny) = cos_parts(x, y);
            if nx == 0.0 || ny == 0.0 {
                return Err(Error::ZeroNorm { op: "cosine" });
            }
            out.push(T::narrow(dot / (nx * ny)));
        }
        let value = Tensor::new(shape[..shape.len() - 1].to_vec(), out)?;
        self.push("cosine", value, Op::Cosine { a, b, width: w }, &[a, b])
    }

    /// `out[i] = x[i, idx[i]]` for a `[B, C]` input.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || shape[0] != idx.len() || idx.iter().any(|&i| i >= shape[1]) {
            return Err(Error::invalid(
                "pick",
                format!("{} indices into {shape:?}", idx.len()),
            ));
        }
        let w = shape[1];
        let xd = self.data(x);
        let out = idx.iter().enumerate().map(|(r, &c)| xd[r * w + c]).collect();
        let value = Tensor::new(vec![idx.len()], out)?;
        self.push(
            "pick",
            value,
            Op::Pick {
                x,
                idx: idx.to_vec(),
                width: w,
            },
            &[x],
        )
    }

    /// Row `i` comes from `a` where `mask[i]`, else from `b`.
    pub fn where_rows(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape != self.shape(b) || shape.first() != Some(&mask.len()) {
            return Err(Error::shape("where_rows", &shape, self.shape(b)));
        }
        let width = shape[1..].iter().product::<usize>();
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = Vec::with_capacity(ad.len());
        for (r, &m) in mask.iter().enumerate() {
            let src = if m { ad } else { bd };
            out.extend_from_slice(&src[r * width..(r + 1) * width]);
        }
        let value = Tensor::new(shape, out)?;
        self.push(
            "where_rows",
            value,
            Op::WhereRows {
                mask: mask.to_vec(),
                a,
                b,
                width,
            },
            &[a, b],
        )
    }

    /// Mean over axis 1 of `[B, L, d]`, counting only positions where
    /// `mask` (`[B, L]`) is set.
    pub fn mean_pool(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 3 || mask.len() != shape[0] * shape[1] {
            return Err(Error::invalid(
                "mean_pool",
                format!("mask of length {} for {shape:?}", mask.len()),
            ));
        }
        let (b, l, d) = (shape[0], shape[1], shape[2]);
        let mut weights = vec![T::zero(); b * l];
        for i in 0..b {
            let count = mask[i * l..(i + 1) * l].iter().filter(|&&m| m).count();
            if count == 0 {
                return Err(Error::invalid("mean_pool", format!("row {i} has no real tokens")));
            }
            for t in 0..l {
                if mask[i * l + t] {
                    weights[i * l + t] = lit(1.0 / count as f64);
                }
            }
        }
        let xd = self.data(x);
        let mut out = vec![T::zero(); b * d];
        for i in 0..b {
            let mut acc = vec![0f64; d];
            for t in 0..l {
                let wgt = weights[i * l + t].widen();
                if wgt == 0.0 {
                    continue;
                }
                let row = &xd[(i * l + t) * d..(i * l + t + 1) * d];
                acc.iter_mut().zip(row).for_each(|(a, v)| *a += wgt * v.widen());
            }
            for j in 0..d {
                out[i * d + j] = T::narrow(acc[j]);
            }
        }
        let value = Tensor::new(vec![b, d], out)?;
        self.push(
            "mean_pool",
            value,
            Op::MeanPool {
                x,
                weights,
                len: l,
                width: d,
            },
            &[x],
        )
    }

    // ---- backward ------------------------------------------------------

    /// Propagates from a scalar `loss` and returns gradients of every bound
    /// parameter that requires grad. The tape is cleared afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.cleared {
            return Err(Error::TapeCleared);
        }
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, g, &mut grads, &mut out)?;
        }
        self.nodes.clear();
        self.cleared = true;
        Ok(out)
    }

    fn backward_node(
        &self,
        node: &Node<T>,
        g: Vec<T>,
        grads: &mut [Option<Vec<T>>],
        out: &mut Gradients<T>,
    ) -> Result<()> {
        let nodes = &self.nodes;
        let len_of = |v: Var| nodes[v.0].value.len();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len_of(v)]);
            f(slot);
        };
        let val = |v: Var| nodes[v.0].value.data();
        let y = node.value.data();

        match &node.op {
            Op::Leaf => {}
            Op::Param { store, id } => out.entries.push((*store, *id, g)),
            &Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_b,
            } => {
                let (ad, bd) = (val(a), val(b));
                if shared_b {
                    acc(a, &mut |da| matmul_grad_a(&g, bd, batch * m, k, n, da));
                    acc(b, &mut |db| {
                        let mut s = vec![0f64; k * n];
                        matmul_grad_b_acc(ad, &g, batch * m, k, n, &mut s);
                        db.iter_mut().zip(&s).for_each(|(d, &v)| *d += T::narrow(v));
                    });
                } else {
                    acc(a, &mut |da| {
                        for t in 0..batch {
                            matmul_grad_a(
                                &g[t * m * n..(t + 1) * m * n],
                                &bd[t * k * n..(t + 1) * k * n],
                                m,
                                k,
                                n,
                                &mut da[t * m * k..(t + 1) * m * k],
                            );
                        }
                    });
                    acc(b, &mut |db| {
                        for t in 0..batch {
                            let mut s = vec![0f64; k * n];
                            matmul_grad_b_acc(
                                &ad[t * m * k..(t + 1) * m * k],
                                &g[t * m * n..(t + 1) * m * n],
                                m,
                                k,
                                n,
                                &mut s,
                            );
                            db[t * k * n..(t + 1) * k * n]
                                .iter_mut()
                                .zip(&s)
                                .for_each(|(d, &v)| *d += T::narrow(v));
                        }
                    });
                }
            }
            &Op::Add { a, b, bcast } => {
                bcast_grad(bcast, a, b, &g, &mut acc, |gi, _| gi, |gi, _| gi, val);
            }
            &Op::Sub { a, b, bcast } => {
                bcast_grad(bcast, a, b, &g, &mut acc, |gi, _| gi, |gi, _| -gi, val);
            }
            &Op::Mul { a, b, bcast } => {
                // d(a*b)/da = b at the matching (broadcast) position.
                let (ad, bd) = (val(a), val(b));
                match bcast {
                    Bcast::Same => {
                        acc(a, &mut |da| add_each(da, g.iter().zip(bd).map(|(&x, &y)| x * y)));
                        acc(b, &mut |db| add_each(db, g.iter().zip(ad).map(|(&x, &y)| x * y)));
                    }
                    Bcast::RightInner(inner) => {
                        acc(a, &mut |da| {
                            add_each(da, g.iter().enumerate().map(|(i, &x)| x * bd[i % inner]))
                        });
                        acc(b, &mut |db| reduce_into(db, inner, g.iter().zip(ad).map(|(&x, &y)| x * y)));
                    }
                    Bcast::LeftInner(inner) => {
                        acc(b, &mut |db| {
                            add_each(db, g.iter().enumerate().map(|(i, &x)| x * ad[i % inner]))
                        });
                        acc(a, &mut |da| reduce_into(da, inner, g.iter().zip(bd).map(|(&x, &y)| x * y)));
                    }
                }
            }
            &Op::Scale { x, c } => acc(x, &mut |dx| add_each(dx, g.iter().map(|&v| v * c))),
            &Op::AddScalar { x } | &Op::Reshape { x } => acc(x, &mut |dx| add_each(dx, g.iter().copied())),
            &Op::Tanh { x } => acc(x, &mut |dx| {
                add_each(dx, g.iter().zip(y).map(|(&gi, &yi)| gi * (T::one() - yi * yi)))
            }),
            &Op::Relu { x } => {
                let xd = val(x);
                acc(x, &mut |dx| {
                    add_each(
                        dx,
                        g.iter()
                            .zip(xd)
                            .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() }),
                    )
                })
            }
            &Op::Sigmoid { x } => acc(x, &mut |dx| {
                add_each(dx, g.iter().zip(y).map(|(&gi, &yi)| gi * yi * (T::one() - yi)))
            }),
            &Op::Exp { x } => acc(x, &mut |dx| add_each(dx, g.iter().zip(y).map(|(&gi, &yi)| gi * yi))),
            &Op::Log { x } => {
                let xd = val(x);
                acc(x, &mut |dx| add_each(dx, g.iter().zip(xd).map(|(&gi, &xi)| gi / xi)))
            }
            &Op::Pow { x, p } => {
                let xd = val(x);
                acc(x, &mut |dx| {
                    add_each(
                        dx,
                        g.iter().zip(xd).map(|(&gi, &xi)| {
                            // x^p with p < 1 has no finite slope at 0; use 0 there.
                            if p == T::zero() || (xi == T::zero() && p < T::one()) {
                                T::zero()
                            } else {
                                gi * p * xi.powf(p - T::one())
                            }
                        }),
                    )
                })
            }
            &Op::Clamp { x, lo, hi } => {
                let xd = val(x);
                acc(x, &mut |dx| {
                    add_each(
                        dx,
                        g.iter()
                            .zip(xd)
                            .map(|(&gi, &xi)| if xi > lo && xi < hi { gi } else { T::zero() }),
                    )
                })
            }
            &Op::Softmax { x } => {
                let w = *node.value.shape().last().unwrap_or(&1);
                acc(x, &mut |dx| {
                    for r in 0..y.len() / w.max(1) {
                        let (yr, gr) = (&y[r * w..(r + 1) * w], &g[r * w..(r + 1) * w]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.widen() * b.widen()).sum();
                        for j in 0..w {
                            dx[r * w + j] += T::narrow(yr[j].widen() * (gr[j].widen() - dot));
                        }
                    }
                })
            }
            &Op::Sum { x } => acc(x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0])),
            &Op::Mean { x } => {
                let n = len_of(x);
                let gi = T::narrow(g[0].widen() / n as f64);
                acc(x, &mut |dx| dx.iter_mut().for_each(|d| *d += gi))
            }
            &Op::SumLast { x, width } => acc(x, &mut |dx| {
                for (i, d) in dx.iter_mut().enumerate() {
                    *d += g[i / width];
                }
            }),
            Op::Gather { table, ids, width } => {
                let w = *width;
                acc(*table, &mut |dt| {
                    for (r, &i) in ids.iter().enumerate() {
                        let src = &g[r * w..(r + 1) * w];
                        dt[i * w..(i + 1) * w].iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                    }
                })
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let gd = val(*gain);
                let w = gd.len();
                let rows = xhat.len() / w;
                acc(*gain, &mut |dg| {
                    let mut s = vec![0f64; w];
                    for r in 0..rows {
                        for j in 0..w {
                            s[j] += g[r * w + j].widen() * xhat[r * w + j].widen();
                        }
                    }
                    dg.iter_mut().zip(&s).for_each(|(d, &v)| *d += T::narrow(v));
                });
                acc(*bias, &mut |db| {
                    let mut s = vec![0f64; w];
                    for r in 0..rows {
                        for j in 0..w {
                            s[j] += g[r * w + j].widen();
                        }
                    }
                    db.iter_mut().zip(&s).for_each(|(d, &v)| *d += T::narrow(v));
                });
                acc(*x, &mut |dx| {
                    for r in 0..rows {
                        let mut sum_dh = 0f64;
                        let mut sum_dh_h = 0f64;
                        for j in 0..w {
                            let dh = g[r * w + j].widen() * gd[j].widen();
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[r * w + j].widen();
                        }
                        let rs = rstd[r].widen();
                        for j in 0..w {
                            let dh = g[r * w + j].widen() * gd[j].widen();
                            let h = xhat[r * w + j].widen();
                            dx[r * w + j] +=
                                T::narrow(rs * (dh - sum_dh / w as f64 - h * sum_dh_h / w as f64));
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |dx| add_each(dx, g.iter().zip(mask).map(|(&a, &b)| a * b))),
            Op::Concat { parts } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let rows = g.len() / total.max(1);
                let mut off = 0;
                for &(p, w) in parts {
                    acc(p, &mut |dp| {
                        for r in 0..rows {
                            let src = &g[r * total + off..r * total + off + w];
                            dp[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                        }
                    });
                    off += w;
                }
            }
            &Op::Slice {
                x,
                outer,
                dim,
                inner,
                start,
                end,
            } => acc(x, &mut |dx| {
                let span = (end - start) * inner;
                for o in 0..outer {
                    let dst = &mut dx[(o * dim + start) * inner..(o * dim + end) * inner];
                    dst.iter_mut().zip(&g[o * span..(o + 1) * span]).for_each(|(d, &s)| *d += s);
                }
            }),
            &Op::Select {
                x,
                outer,
                dim,
                inner,
                index,
            } => acc(x, &mut |dx| {
                for o in 0..outer {
                    let dst = &mut dx[(o * dim + index) * inner..(o * dim + index + 1) * inner];
                    dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]).for_each(|(d, &s)| *d += s);
                }
            }),
            Op::Permute { x, src } => acc(*x, &mut |dx| {
                for (o, &s) in src.iter().enumerate() {
                    dx[s] += g[o];
                }
            }),
            Op::Normalize { x, width, norms } => {
                let w = *width;
                acc(*x, &mut |dx| {
                    for (r, nrm) in norms.iter().enumerate() {
                        let (yr, gr) = (&y[r * w..(r + 1) * w], &g[r * w..(r + 1) * w]);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a.widen() * b.widen()).sum();
                        let n = nrm.widen();
                        for j in 0..w {
                            dx[r * w + j] += T::narrow((gr[j].widen() - yr[j].widen() * dot) / n);
                        }
                    }
                })
            }
            &Op::Cosine { a, b, width } => {
                let (ad, bd) = (val(a), val(b));
                let w = width;
                let rows = g.len();
                // d cos / dx = y/(|x||y|) - cos * x/|x|^2
                let partial = |first: &[T], second: &[T], dst: &mut [T]| {
                    for r in 0..rows {
                        let (x, yv) = (&first[r * w..(r + 1) * w], &second[r * w..(r + 1) * w]);
                        let (dot, nx, ny) = cos_parts(x, yv);
                        let c = dot / (nx * ny);
                        let gr = g[r].widen();
                        for j in 0..w {
                            let d = yv[j].widen() / (nx * ny) - c * x[j].widen() / (nx * nx);
                            dst[r * w + j] += T::narrow(gr * d);
                        }
                    }
                };
                acc(a, &mut |da| partial(ad, bd, da));
                acc(b, &mut |db| partial(bd, ad, db));
            }
            Op::Pick { x, idx, width } => acc(*x, &mut |dx| {
                for (r, &c) in idx.iter().enumerate() {
                    dx[r * width + c] += g[r];
                }
            }),
            Op::WhereRows { mask, a, b, width } => {
                let w = *width;
                for (target, want) in [(*a, true), (*b, false)] {
                    acc(target, &mut |dt| {
                        for (r, &m) in mask.iter().enumerate() {
                            if m == want {
                                dt[r * w..(r + 1) * w]
                                    .iter_mut()
                                    .zip(&g[r * w..(r + 1) * w])
                                    .for_each(|(d, &s)| *d += s);
                            }
                        }
                    });
                }
            }
            Op::MeanPool {
                x,
                weights,
                len,
                width,
            } => {
                let (l, d) = (*len, *width);
                acc(*x, &mut |dx| {
                    for (p, &wgt) in weights.iter().enumerate() {
                        if wgt == T::zero() {
                            continue;
                        }
                        let b = p / l;
                        for j in 0..d {
                            dx[p * d + j] += wgt * g[b * d + j];
                        }
                    }
                })
            }
        }
        Ok(())
    }
}

fn cos_parts<T: Scalar>(x: &[T], y: &[T]) -> (f64, f64, f64) {
    let mut dot = 0f64;
    let mut nx = 0f64;
    let mut ny = 0f64;
    for (a, b) in x.iter().zip(y) {
        let (a, b) = (a.widen(), b.widen());
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    (dot, nx.sqrt(), ny.sqrt())
}

fn add_each<T: Scalar>(dst: &mut [T], src: impl Iterator<Item = T>) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

/// Sums a full-size stream into a buffer of length `inner` (cyclically).
fn reduce_into<T: Scalar>(dst: &mut [T], inner: usize, src: impl Iterator<Item = T>) {
    let mut s = vec![0f64; inner];
    for (i, v) in src.enumerate() {
        s[i % inner] += v.widen();
    }
    dst.iter_mut().zip(&s).for_each(|(d, &v)| *d += T::narrow(v));
}

#[allow(clippy::too_many_arguments)]
fn bcast_grad<'a, T: Scalar>(
    bcast: Bcast,
    a: Var,
    b: Var,
    g: &[T],
    acc: &mut impl FnMut(Var, &mut dyn FnMut(&mut [T])),
    fa: impl Fn(T, usize) -> T,
    fb: impl Fn(T, usize) -> T,
    _val: impl Fn(Var) -> &'a [T],
) {
    let full = |f: &dyn Fn(T, usize) -> T, dst: &mut [T]| add_each(dst, g.iter().enumerate().map(|(i, &x)| f(x, i)));
    let reduced = |f: &dyn Fn(T, usize) -> T, inner: usize, dst: &mut [T]| {
        reduce_into(dst, inner, g.iter().enumerate().map(|(i, &x)| f(x, i)))
    };
    match bcast {
        Bcast::Same => {
            acc(a, &mut |d| full(&fa, d));
            acc(b, &mut |d| full(&fb, d));
        }
        Bcast::RightInner(inner) => {
            acc(a, &mut |d| full(&fa, d));
            acc(b, &mut |d| reduced(&fb, inner, d));
        }
        Bcast::LeftInner(inner) => {
            acc(a, &mut |d| reduced(&fa, inner, d));
            acc(b, &mut |d| full(&fb, d));
        }
    }
}

/// Inverted-dropout multipliers: 0 with probability `p`, else `1/(1-p)`.
pub(crate) fn dropout_mask<T: Scalar>(n: usize, p: f64, seed: DropoutSeed) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
    let keep = T::narrow(1.0 / (1.0 - p));
    (0..n)
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect()
}
