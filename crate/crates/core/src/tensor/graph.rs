use super::kernels::{self, ConvGeometry};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::loss;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeometry },
    Upsample { input: Var },
    Concat { a: Var, b: Var },
    Sigmoid(Var),
    Relu(Var),
    Add(Var, Var),
    Hadamard(Var, Var),
    ScalarMul(Var, T),
    AddScalar(Var),
    GlobalAvgPool(Var),
    FullyConnected { input: Var, weight: Var, bias: Var },
    Reshape(Var),
    Sum(Var),
    KlLoss { pred: Var, target: Tensor<T>, eps: T },
    NssLoss { pred: Var, fixation: Tensor<T>, eps: T },
}

#[derive(Debug)]
struct Node<T: Scalar> {
    value: Tensor<T>,
    /// Present exactly for nodes that depend on a trainable leaf.
    grad: Option<Tensor<T>>,
    op: Op<T>,
}

/// Append-only tape. Nodes are created in topological order, so the backward
/// pass is a single reverse sweep over the node list.
#[derive(Debug)]
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`; `None` for
    /// nodes that do not depend on any parameter.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].grad.is_some()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            if let Some(g) = n.grad.as_mut() {
                g.data_mut().fill(T::zero());
            }
        }
        self.backward_done = false;
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        let grad = tracked.then(|| Tensor::zeros(value.shape()));
        self.nodes.push(Node { value, grad, op });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].grad.is_some())
    }

    fn shape_of(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    // ---- forward ops -------------------------------------------------------

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "conv2d";
        let [b, cin, h, w] = self.value(input).dims4(OP)?;
        let [cout, wcin, kh, kw] = self.value(weight).dims4(OP)?;
        if wcin != cin {
            return Err(Error::shape(
                OP,
                format!(
                    "input {:?} has {cin} channels but weights {:?} expect {wcin}",
                    self.shape_of(input),
                    self.shape_of(weight)
                ),
            ));
        }
        if kh != kw {
            return Err(Error::shape(OP, format!("non-square kernel {:?}", self.shape_of(weight))));
        }
        if self.shape_of(bias) != [cout] {
            return Err(Error::shape(
                OP,
                format!("bias {:?} does not match {cout} output channels", self.shape_of(bias)),
            ));
        }
        if stride == 0 {
            return Err(Error::shape(OP, "stride must be positive"));
        }
        let oh = ConvGeometry::out_extent(h, kh, stride, padding);
        let ow = ConvGeometry::out_extent(w, kw, stride, padding);
        let (Some(out_h), Some(out_w)) = (oh, ow) else {
            return Err(Error::shape(
                OP,
                format!("kernel {kh} with padding {padding} does not fit input {:?}", self.shape_of(input)),
            ));
        };
        let geom = ConvGeometry {
            batch: b,
            in_channels: cin,
            in_h: h,
            in_w: w,
            out_channels: cout,
            kernel: kh,
            stride,
            padding,
            out_h,
            out_w,
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(vec![b, cout, out_h, out_w], out)?;
        let tracked = self.tracked(&[input, weight, bias]);
        Ok(self.push(value, Op::Conv2d { input, weight, bias, geom }, tracked))
    }

    /// Half-pixel bilinear upsampling; downsampling is rejected.
    pub fn bilinear_upsample(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        const OP: &str = "bilinear_upsample";
        let [b, c, h, w] = self.value(input).dims4(OP)?;
        if out_h < h || out_w < w {
            return Err(Error::shape(
                OP,
                format!("cannot resize {h}x{w} down to {out_h}x{out_w}"),
            ));
        }
        let out = kernels::bilinear_forward(self.value(input).data(), b * c, h, w, out_h, out_w);
        let value = Tensor::new(vec![b, c, out_h, out_w], out)?;
        let tracked = self.tracked(&[input]);
        Ok(self.push(value, Op::Upsample { input }, tracked))
    }

    /// Concatenates along the channel axis, `a` first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "concat_channels";
        let [ba, ca, ha, wa] = self.value(a).dims4(OP)?;
        let [bb, cb, hb, wb] = self.value(b).dims4(OP)?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::shape(
                OP,
                format!("non-channel extents differ: {:?} vs {:?}", self.shape_of(a), self.shape_of(b)),
            ));
        }
        let plane = ha * wa;
        let mut out = Vec::with_capacity(ba * (ca + cb) * plane);
        for n in 0..ba {
            out.extend_from_slice(&self.value(a).data()[n * ca * plane..][..ca * plane]);
            out.extend_from_slice(&self.value(b).data()[n * cb * plane..][..cb * plane]);
        }
        let value = Tensor::new(vec![ba, ca + cb, ha, wa], out)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, tracked))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::sigmoid);
        let tracked = self.tracked(&[x]);
        self.push(value, Op::Sigmoid(x), tracked)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        let tracked = self.tracked(&[x]);
        self.push(value, Op::Relu(x), tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape_of(a) != self.shape_of(b) {
            return Err(Error::shape(
                "add",
                format!("shapes differ: {:?} vs {:?}", self.shape_of(a), self.shape_of(b)),
            ));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.shape_of(a).to_vec(), data)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), tracked))
    }

    /// Elementwise product. Besides identical shapes, one operand may be a
    /// `[B,1,H,W]` map or a `[B,C,1,1]` vector broadcast against `[B,C,H,W]`.
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = BroadcastPlan::new(self.shape_of(a), self.shape_of(b))?;
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let mut out = Vec::with_capacity(plan.numel());
        plan.for_each(|_, ia, ib| out.push(va[ia] * vb[ib]));
        let value = Tensor::new(plan.shape.clone(), out)?;
        let tracked = self.tracked(&[a, b]);
        Ok(self.push(value, Op::Hadamard(a, b), tracked))
    }

    pub fn scalar_mul(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let tracked = self.tracked(&[x]);
        self.push(value, Op::ScalarMul(x, c), tracked)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v + c);
        let tracked = self.tracked(&[x]);
        self.push(value, Op::AddScalar(x), tracked)
    }

    /// `1 - x`, evaluated as a single rounding so that `x + (1 - x) == 1`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let neg = self.scalar_mul(x, -T::one());
        self.add_scalar(neg, T::one())
    }

    /// Spatial mean per (batch, channel): `[B,C,H,W] -> [B,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = self.value(x).dims4("global_avg_pool")?;
        let plane = h * w;
        let inv = T::one() / T::of(plane as f64);
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| p.iter().fold(T::zero(), |acc, &v| acc + v) * inv)
            .collect();
        let value = Tensor::new(vec![b, c], data)?;
        let tracked = self.tracked(&[x]);
        Ok(self.push(value, Op::GlobalAvgPool(x), tracked))
    }

    /// Affine map `[B,Cin] -> [B,Cout]` with weights stored `[Cout,Cin]`.
    pub fn fully_connected(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "fully_connected";
        let (&[b, cin], &[cout, wcin]) = (self.shape_of(input), self.shape_of(weight)) else {
            return Err(Error::shape(
                OP,
                format!(
                    "expected [B,Cin] input and [Cout,Cin] weights, got {:?} and {:?}",
                    self.shape_of(input),
                    self.shape_of(weight)
                ),
            ));
        };
        if cin != wcin || self.shape_of(bias) != [cout] {
            return Err(Error::shape(
                OP,
                format!(
                    "input {:?}, weights {:?}, bias {:?} are inconsistent",
                    self.shape_of(input),
                    self.shape_of(weight),
                    self.shape_of(bias)
                ),
            ));
        }
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let bs = self.value(bias).data();
        let mut out = Vec::with_capacity(b * cout);
        for row in x.chunks(cin) {
            for (o, wrow) in wt.chunks(cin).enumerate() {
                let dot = row.iter().zip(wrow).fold(bs[o], |acc, (&xv, &wv)| acc + xv * wv);
                out.push(dot);
            }
        }
        let value = Tensor::new(vec![b, cout], out)?;
        let tracked = self.tracked(&[input, weight, bias]);
        Ok(self.push(value, Op::FullyConnected { input, weight, bias }, tracked))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let tracked = self.tracked(&[x]);
        Ok(self.push(value, Op::Reshape(x), tracked))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let tracked = self.tracked(&[x]);
        self.push(value, Op::Sum(x), tracked)
    }

    /// Batch mean of the per-sample KL divergence between `target` and the
    /// sum-normalized prediction.
    pub fn kl_loss(&mut self, pred: Var, target: Tensor<T>, eps: T) -> Result<Var> {
        let (batch, n) = self.per_sample("kl_loss", pred, target.shape())?;
        let p = self.value(pred).data();
        let mut total = T::zero();
        for s in 0..batch {
            total = total + loss::kl_divergence(&p[s * n..][..n], &target.data()[s * n..][..n], eps)?;
        }
        let value = Tensor::scalar(total / T::of(batch as f64));
        let tracked = self.tracked(&[pred]);
        Ok(self.push(value, Op::KlLoss { pred, target, eps }, tracked))
    }

    /// Batch mean of the per-sample NSS loss (negated NSS).
    pub fn nss_loss(&mut self, pred: Var, fixation: Tensor<T>, eps: T) -> Result<Var> {
        let (batch, n) = self.per_sample("nss_loss", pred, fixation.shape())?;
        let p = self.value(pred).data();
        let mut total = T::zero();
        for s in 0..batch {
            total = total + loss::nss_loss(&p[s * n..][..n], &fixation.data()[s * n..][..n], eps)?;
        }
        let value = Tensor::scalar(total / T::of(batch as f64));
        let tracked = self.tracked(&[pred]);
        Ok(self.push(value, Op::NssLoss { pred, fixation, eps }, tracked))
    }

    fn per_sample(&self, op: &'static str, pred: Var, other: &[usize]) -> Result<(usize, usize)> {
        let shape = self.shape_of(pred);
        if shape != other {
            return Err(Error::shape(op, format!("prediction {shape:?} vs ground truth {other:?}")));
        }
        let batch = shape[0];
        Ok((batch, self.value(pred).numel() / batch))
    }

    // ---- backward ----------------------------------------------------------

    /// Fills gradients of every node that `loss` depends on. A second call
    /// without [`Graph::zero_grad`] is rejected.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Graph(
                "backward called twice without zero_grad; gradients would accumulate".into(),
            ));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.shape_of(loss)),
            ));
        }
        let Some(seed) = self.nodes[loss.0].grad.as_mut() else {
            return Err(Error::Graph("loss does not depend on any parameter".into()));
        };
        seed.data_mut()[0] = T::one();
        self.backward_done = true;

        for i in (0..=loss.0).rev() {
            let Some(gout) = self.nodes[i].grad.take() else {
                continue;
            };
            let contribs = self.local_backward(i, &gout);
            self.nodes[i].grad = Some(gout);
            for (parent, delta) in contribs {
                if let Some(g) = self.nodes[parent.0].grad.as_mut() {
                    for (gv, dv) in g.data_mut().iter_mut().zip(delta) {
                        *gv = *gv + dv;
                    }
                }
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].grad.is_some()
    }

    /// Gradient contributions of node `i` to each tracked parent.
    fn local_backward(&self, i: usize, gout: &Tensor<T>) -> Vec<(Var, Vec<T>)> {
        let g = gout.data();
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let mut gx = self.needs(*input).then(|| vec![T::zero(); self.value(*input).numel()]);
                let mut gw = self.needs(*weight).then(|| vec![T::zero(); self.value(*weight).numel()]);
                let mut gb = self.needs(*bias).then(|| vec![T::zero(); self.value(*bias).numel()]);
                kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                out.extend(gx.map(|d| (*input, d)));
                out.extend(gw.map(|d| (*weight, d)));
                out.extend(gb.map(|d| (*bias, d)));
            }
            Op::Upsample { input } => {
                let [b, c, h, w] = self.value(*input).dims4("").expect("rank 4");
                let [_, _, oh, ow] = gout.dims4("").expect("rank 4");
                let mut gx = vec![T::zero(); b * c * h * w];
                kernels::bilinear_backward(g, &mut gx, b * c, h, w, oh, ow);
                out.push((*input, gx));
            }
            Op::Concat { a, b } => {
                let [bn, ca, h, w] = self.value(*a).dims4("").expect("rank 4");
                let cb = self.value(*b).shape()[1];
                let plane = h * w;
                let mut ga = Vec::with_capacity(bn * ca * plane);
                let mut gb = Vec::with_capacity(bn * cb * plane);
                for n in 0..bn {
                    let base = n * (ca + cb) * plane;
                    ga.extend_from_slice(&g[base..base + ca * plane]);
                    gb.extend_from_slice(&g[base + ca * plane..base + (ca + cb) * plane]);
                }
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::Sigmoid(x) => {
                // From the input rather than s * (1 - s), which loses all
                // relative precision once the output saturates.
                let xv = self.value(*x).data();
                out.push((*x, g.iter().zip(xv).map(|(&gv, &v)| gv * kernels::sigmoid_grad(v)).collect()));
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                out.push((
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(&gv, &v)| if v > T::zero() { gv } else { T::zero() })
                        .collect(),
                ));
            }
            Op::Add(a, b) => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Hadamard(a, b) => {
                let plan = BroadcastPlan::new(self.shape_of(*a), self.shape_of(*b)).expect("checked in forward");
                let va = self.value(*a).data();
                let vb = self.value(*b).data();
                let mut ga = vec![T::zero(); va.len()];
                let mut gb = vec![T::zero(); vb.len()];
                plan.for_each(|o, ia, ib| {
                    ga[ia] = ga[ia] + g[o] * vb[ib];
                    gb[ib] = gb[ib] + g[o] * va[ia];
                });
                out.push((*a, ga));
                out.push((*b, gb));
            }
            Op::ScalarMul(x, c) => out.push((*x, g.iter().map(|&gv| gv * *c).collect())),
            Op::AddScalar(x) => out.push((*x, g.to_vec())),
            Op::GlobalAvgPool(x) => {
                let [_, _, h, w] = self.value(*x).dims4("").expect("rank 4");
                let plane = h * w;
                let inv = T::one() / T::of(plane as f64);
                let gx = g.iter().flat_map(|&gv| std::iter::repeat_n(gv * inv, plane)).collect();
                out.push((*x, gx));
            }
            Op::FullyConnected { input, weight, bias } => {
                let x = self.value(*input).data();
                let wt = self.value(*weight).data();
                let &[b, cin] = self.shape_of(*input) else { unreachable!() };
                let cout = self.shape_of(*weight)[0];
                let mut gx = vec![T::zero(); b * cin];
                let mut gw = vec![T::zero(); cout * cin];
                let mut gb = vec![T::zero(); cout];
                for r in 0..b {
                    for o in 0..cout {
                        let gv = g[r * cout + o];
                        gb[o] = gb[o] + gv;
                        for k in 0..cin {
                            gx[r * cin + k] = gx[r * cin + k] + gv * wt[o * cin + k];
                            gw[o * cin + k] = gw[o * cin + k] + gv * x[r * cin + k];
                        }
                    }
                }
                out.push((*input, gx));
                out.push((*weight, gw));
                out.push((*bias, gb));
            }
            Op::Reshape(x) => out.push((*x, g.to_vec())),
            Op::Sum(x) => out.push((*x, vec![g[0]; self.value(*x).numel()])),
            Op::KlLoss { pred, target, eps } => {
                let p = self.value(*pred).data();
                let batch = self.shape_of(*pred)[0];
                let n = p.len() / batch;
                let scale = g[0] / T::of(batch as f64);
                let mut gp = Vec::with_capacity(p.len());
                for s in 0..batch {
                    let d = loss::kl_divergence_grad(&p[s * n..][..n], &target.data()[s * n..][..n], *eps);
                    gp.extend(d.into_iter().map(|v| v * scale));
                }
                out.push((*pred, gp));
            }
            Op::NssLoss { pred, fixation, eps } => {
                let p = self.value(*pred).data();
                let batch = self.shape_of(*pred)[0];
                let n = p.len() / batch;
                let scale = g[0] / T::of(batch as f64);
                let mut gp = Vec::with_capacity(p.len());
                for s in 0..batch {
                    let d = loss::nss_loss_grad(&p[s * n..][..n], &fixation.data()[s * n..][..n], *eps);
                    gp.extend(d.into_iter().map(|v| v * scale));
                }
                out.push((*pred, gp));
            }
        }
        out.retain(|(v, _)| self.needs(*v));
        out
    }
}

/// Index mapping for the two broadcast patterns the architecture needs.
struct BroadcastPlan {
    shape: Vec<usize>,
    out: [usize; 4],
    a: [usize; 4],
    b: [usize; 4],
}

impl BroadcastPlan {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        const OP: &str = "hadamard";
        if a == b {
            let mut s = [1usize; 4];
            // Same-shape operands of any rank up to 4 map onto the trailing axes.
            if a.len() > 4 {
                return Err(Error::shape(OP, format!("rank {} unsupported", a.len())));
            }
            s[4 - a.len()..].copy_from_slice(a);
            return Ok(Self { shape: a.to_vec(), out: s, a: s, b: s });
        }
        let (Ok(sa), Ok(sb)) = (<[usize; 4]>::try_from(a), <[usize; 4]>::try_from(b)) else {
            return Err(Error::shape(OP, format!("cannot broadcast {a:?} with {b:?}")));
        };
        let out = [0, 1, 2, 3].map(|d| sa[d].max(sb[d]));
        let allowed = |s: [usize; 4]| {
            s == out
                || s == [out[0], 1, out[2], out[3]]
                || s == [out[0], out[1], 1, 1]
        };
        if sa[0] != sb[0] || !allowed(sa) || !allowed(sb) || (sa != out && sb != out) {
            return Err(Error::shape(
                OP,
                format!("cannot broadcast {a:?} with {b:?}; only [B,1,H,W] and [B,C,1,1] factors are supported"),
            ));
        }
        Ok(Self { shape: out.to_vec(), out, a: sa, b: sb })
    }

    fn numel(&self) -> usize {
        self.out.iter().product()
    }

    /// Calls `f(out_index, a_index, b_index)` in row-major output order.
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [n0, n1, n2, n3] = self.out;
        let idx = |s: &[usize; 4], i0: usize, i1: usize, i2: usize, i3: usize| {
            let pick = |i: usize, d: usize| if d == 1 { 0 } else { i };
            ((pick(i0, s[0]) * s[1] + pick(i1, s[1])) * s[2] + pick(i2, s[2])) * s[3] + pick(i3, s[3])
        };
        let mut o = 0;
        for i0 in 0..n0 {
            for i1 in 0..n1 {
                for i2 in 0..n2 {
                    for i3 in 0..n3 {
                        f(o, idx(&self.a, i0, i1, i2, i3), idx(&self.b, i0, i1, i2, i3));
                        o += 1;
                    }
                }
            }
        }
    }
}
