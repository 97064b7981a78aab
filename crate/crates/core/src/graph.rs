//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape of executed operations. Every op appends a node
//! holding the forward value and, when recording, a closure that maps the
//! node's output gradient to contributions for its parents. [`Graph::backward`]
//! walks the tape in reverse; tape order is topological by construction.

use crate::error::{Error, Result};
use crate::fft;
use crate::tensor::Tensor;
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

type BackFn = Box<dyn Fn(&[f64]) -> Vec<(NodeId, Vec<f64>)>>;

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    back: Option<BackFn>,
    needs_grad: bool,
}

/// Tape of differentiable operations. Confined to one thread; independent
/// graphs for different samples may run concurrently.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            recording: true,
        }
    }

    /// A graph that skips gradient bookkeeping entirely (inference only).
    pub fn new_inference() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            recording: false,
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, needs: bool, back: Option<BackFn>) -> NodeId {
        let keep = self.recording && needs;
        self.nodes.push(Node {
            shape,
            data,
            back: if keep { back } else { None },
            needs_grad: keep,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        let needs = t.requires_grad;
        self.push(t.shape().to_vec(), t.data().to_vec(), needs, None)
    }

    pub fn constant(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), false, None)
    }

    pub fn constant_data(&mut self, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        self.push(shape, data, false, None)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn value(&self, id: NodeId) -> Tensor {
        Tensor::new(self.nodes[id.0].shape.clone(), self.nodes[id.0].data.clone())
            .expect("node shape is consistent")
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }

    /// Gradient of the most recent `backward` call, if this node received one.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Reverse pass from a scalar loss. Gradients accumulate additively
    /// across fan-out.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::invalid("backward requires a scalar loss"));
        }
        if !self.recording {
            return Err(Error::InvalidState("graph built in inference mode".into()));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = self.grads[i].take() else { continue };
            if let Some(back) = &self.nodes[i].back {
                for (pid, contrib) in back(&gout) {
                    if !self.nodes[pid.0].needs_grad && self.nodes[pid.0].back.is_none() {
                        // constants and non-grad leaves don't accumulate
                        if !self.node_is_grad_leaf(pid) {
                            continue;
                        }
                    }
                    let slot = &mut self.grads[pid.0];
                    match slot {
                        Some(acc) => {
                            for (a, c) in acc.iter_mut().zip(&contrib) {
                                *a += c;
                            }
                        }
                        None => *slot = Some(contrib),
                    }
                }
            }
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn node_is_grad_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ---------------------------------------------------------------
    // elementwise and broadcast ops
    // ---------------------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let data: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a, b]);
        Ok(self.push(
            shape,
            data,
            needs,
            Some(Box::new(move |g| vec![(a, g.to_vec()), (b, g.to_vec())])),
        ))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let data: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a, b]);
        Ok(self.push(
            shape,
            data,
            needs,
            Some(Box::new(move |g| {
                vec![(a, g.to_vec()), (b, g.iter().map(|v| -v).collect())]
            })),
        ))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let av = self.data(a).to_vec();
        let bv = self.data(b).to_vec();
        let data: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a, b]);
        Ok(self.push(
            shape,
            data,
            needs,
            Some(Box::new(move |g| {
                vec![
                    (a, g.iter().zip(&bv).map(|(gv, y)| gv * y).collect()),
                    (b, g.iter().zip(&av).map(|(gv, x)| gv * x).collect()),
                ]
            })),
        ))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.data(a).iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(&[a]);
        self.push(
            shape,
            data,
            needs,
            Some(Box::new(move |g| vec![(a, g.iter().map(|v| v * c).collect())])),
        )
    }

    /// Broadcast add of a `[C]` bias along the trailing axis.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let c = *self.shape(x).last().ok_or_else(|| Error::invalid("add_bias on 0-d"))?;
        if self.shape(b) != [c] {
            return Err(Error::invalid("bias shape does not match trailing axis"));
        }
        let bv = self.data(b).to_vec();
        let data: Vec<f64> = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bv[i % c])
            .collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(&[x, b]);
        Ok(self.push(
            shape,
            data,
            needs,
            Some(Box::new(move |g| {
                let mut gb = vec![0.0; c];
                for (i, v) in g.iter().enumerate() {
                    gb[i % c] += v;
                }
                vec![(x, g.to_vec()), (b, gb)]
            })),
        ))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let y: Vec<f64> = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        let yc = y.clone();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(&[x]);
        self.push(
            shape,
            y,
            needs,
            Some(Box::new(move |g| {
                vec![(x, g.iter().zip(&yc).map(|(gv, s)| gv * s * (1.0 - s)).collect())]
            })),
        )
    }

    /// Swish activation: x * sigmoid(x).
    pub fn swish(&mut self, x: NodeId) -> NodeId {
        let xv = self.data(x).to_vec();
        let y: Vec<f64> = xv.iter().map(|&v| v * sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(&[x]);
        self.push(
            shape,
            y,
            needs,
            Some(Box::new(move |g| {
                let gx = g
                    .iter()
                    .zip(&xv)
                    .map(|(gv, &v)| {
                        let s = sigmoid(v);
                        gv * (s + v * s * (1.0 - s))
                    })
                    .collect();
                vec![(x, gx)]
            })),
        )
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.data(x).iter().sum();
        let n = self.data(x).len();
        let needs = self.needs(&[x]);
        self.push(
            vec![1],
            vec![s],
            needs,
            Some(Box::new(move |g| vec![(x, vec![g[0]; n])])),
        )
    }

    /// Euclidean norm of all elements; subgradient 0 at the origin.
    pub fn l2_norm(&mut self, x: NodeId) -> NodeId {
        let xv = self.data(x).to_vec();
        let r = xv.iter().map(|v| v * v).sum::<f64>().sqrt();
        let needs = self.needs(&[x]);
        self.push(
            vec![1],
            vec![r],
            needs,
            Some(Box::new(move |g| {
                let gx = if r > 0.0 {
                    xv.iter().map(|v| g[0] * v / r).collect()
                } else {
                    vec![0.0; xv.len()]
                };
                vec![(x, gx)]
            })),
        )
    }

    // ---------------------------------------------------------------
    // linear algebra
    // ---------------------------------------------------------------

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, k) = self.dims2(a, "matmul lhs")?;
        let (k2, m) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::invalid(format!(
                "matmul inner dims mismatch: {k} vs {k2}"
            )));
        }
        let av = self.data(a).to_vec();
        let bv = self.data(b).to_vec();
        let mut out = vec![0.0; n * m];
        matmul_into(&av, &bv, &mut out, n, k, m);
        let needs = self.needs(&[a, b]);
        Ok(self.push(
            vec![n, m],
            out,
            needs,
            Some(Box::new(move |g| {
                // dA = G B^T, dB = A^T G
                let mut ga = vec![0.0; n * k];
                for i in 0..n {
                    for j in 0..m {
                        let gij = g[i * m + j];
                        if gij != 0.0 {
                            for l in 0..k {
                                ga[i * k + l] += gij * bv[l * m + j];
                            }
                        }
                    }
                }
                let mut gb = vec![0.0; k * m];
                for i in 0..n {
                    for l in 0..k {
                        let ail = av[i * k + l];
                        if ail != 0.0 {
                            for j in 0..m {
                                gb[l * m + j] += ail * g[i * m + j];
                            }
                        }
                    }
                }
                vec![(a, ga), (b, gb)]
            })),
        ))
    }

    pub fn transpose2(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims2(a, "transpose")?;
        let av = self.data(a);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = av[i * m + j];
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(
            vec![m, n],
            out,
            needs,
            Some(Box::new(move |g| {
                let mut ga = vec![0.0; n * m];
                for j in 0..m {
                    for i in 0..n {
                        ga[i * m + j] = g[j * n + i];
                    }
                }
                vec![(a, ga)]
            })),
        ))
    }

    // ---------------------------------------------------------------
    // shape plumbing
    // ---------------------------------------------------------------

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.data(x).len() {
            return Err(Error::invalid("reshape changes element count"));
        }
        let data = self.data(x).to_vec();
        let needs = self.needs(&[x]);
        Ok(self.push(
            shape,
            data,
            needs,
            Some(Box::new(move |g| vec![(x, g.to_vec())])),
        ))
    }

    /// Extract plane `f` of a `[F, S, D]` tensor as `[S, D]`.
    pub fn frame(&mut self, x: NodeId, f: usize) -> Result<NodeId> {
        let sh = self.shape(x);
        if sh.len() != 3 || f >= sh[0] {
            return Err(Error::invalid("frame: need 3-d input and valid index"));
        }
        let (nf, s, d) = (sh[0], sh[1], sh[2]);
        let plane = s * d;
        let data = self.data(x)[f * plane..(f + 1) * plane].to_vec();
        let needs = self.needs(&[x]);
        Ok(self.push(
            vec![s, d],
            data,
            needs,
            Some(Box::new(move |g| {
                let mut gx = vec![0.0; nf * plane];
                gx[f * plane..(f + 1) * plane].copy_from_slice(g);
                vec![(x, gx)]
            })),
        ))
    }

    /// Stack equal-shape `[S, D]` nodes into `[F, S, D]`.
    pub fn stack0(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("stack0 of empty list"));
        }
        let sh = self.shape(parts[0]).to_vec();
        if sh.len() != 2 {
            return Err(Error::invalid("stack0 expects 2-d parts"));
        }
        let plane: usize = sh.iter().product();
        let mut data = Vec::with_capacity(parts.len() * plane);
        for &p in parts {
            if self.shape(p) != sh {
                return Err(Error::invalid("stack0 parts differ in shape"));
            }
            data.extend_from_slice(self.data(p));
        }
        let ids = parts.to_vec();
        let needs = self.needs(parts);
        Ok(self.push(
            vec![parts.len(), sh[0], sh[1]],
            data,
            needs,
            Some(Box::new(move |g| {
                ids.iter()
                    .enumerate()
                    .map(|(i, &p)| (p, g[i * plane..(i + 1) * plane].to_vec()))
                    .collect()
            })),
        ))
    }

    /// Swap the first two axes of a `[F, S, D]` tensor.
    pub fn transpose01(&mut self, x: NodeId) -> Result<NodeId> {
        let sh = self.shape(x);
        if sh.len() != 3 {
            return Err(Error::invalid("transpose01 expects 3-d input"));
        }
        let (a, b, d) = (sh[0], sh[1], sh[2]);
        let xv = self.data(x);
        let mut out = vec![0.0; a * b * d];
        for i in 0..a {
            for j in 0..b {
                let src = (i * b + j) * d;
                let dst = (j * a + i) * d;
                out[dst..dst + d].copy_from_slice(&xv[src..src + d]);
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(
            vec![b, a, d],
            out,
            needs,
            Some(Box::new(move |g| {
                let mut gx = vec![0.0; a * b * d];
                for j in 0..b {
                    for i in 0..a {
                        let src = (j * a + i) * d;
                        let dst = (i * b + j) * d;
                        gx[dst..dst + d].copy_from_slice(&g[src..src + d]);
                    }
                }
                vec![(x, gx)]
            })),
        ))
    }

    /// Column slice `[.., c0..c1)` of a 2-d node.
    pub fn slice_cols(&mut self, x: NodeId, c0: usize, c1: usize) -> Result<NodeId> {
        let (rows, cols) = self.dims2(x, "slice_cols")?;
        if c0 >= c1 || c1 > cols {
            return Err(Error::invalid("slice_cols: bad column range"));
        }
        let w = c1 - c0;
        let xv = self.data(x);
        let mut data = vec![0.0; rows * w];
        for r in 0..rows {
            data[r * w..(r + 1) * w].copy_from_slice(&xv[r * cols + c0..r * cols + c1]);
        }
        let needs = self.needs(&[x]);
        Ok(self.push(
            vec![rows, w],
            data,
            needs,
            Some(Box::new(move |g| {
                let mut gx = vec![0.0; rows * cols];
                for r in 0..rows {
                    gx[r * cols + c0..r * cols + c1].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                vec![(x, gx)]
            })),
        ))
    }

    /// Concatenate 2-d nodes with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols of empty list"));
        }
        let rows = self.shape(parts[0])[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != rows {
                return Err(Error::invalid("concat_cols row mismatch"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = self.data(p);
            for r in 0..rows {
                data[r * total + off..r * total + off + w].copy_from_slice(&pv[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let ids = parts.to_vec();
        let ws = widths.clone();
        let needs = self.needs(parts);
        Ok(self.push(
            vec![rows, total],
            data,
            needs,
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(ids.len());
                let mut off = 0;
                for (&p, &w) in ids.iter().zip(&ws) {
                    let mut gp = vec![0.0; rows * w];
                    for r in 0..rows {
                        gp[r * w..(r + 1) * w]
                            .copy_from_slice(&g[r * total + off..r * total + off + w]);
                    }
                    out.push((p, gp));
                    off += w;
                }
                out
            })),
        ))
    }

    /// Materialize a Toeplitz matrix `S[i][j] = table[j - i + n - 1]` from a
    /// `[2n-1]` table of per-offset scores.
    pub fn toeplitz(&mut self, table: NodeId, n: usize) -> Result<NodeId> {
        if self.shape(table) != [2 * n - 1] {
            return Err(Error::invalid(format!(
                "toeplitz table must have length {}",
                2 * n - 1
            )));
        }
        let tv = self.data(table);
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = tv[j + n - 1 - i];
            }
        }
        let needs = self.needs(&[table]);
        Ok(self.push(
            vec![n, n],
            out,
            needs,
            Some(Box::new(move |g| {
                let mut gt = vec![0.0; 2 * n - 1];
                for i in 0..n {
                    for j in 0..n {
                        gt[j + n - 1 - i] += g[i * n + j];
                    }
                }
                vec![(table, gt)]
            })),
        ))
    }

    // ---------------------------------------------------------------
    // neural-net ops
    // ---------------------------------------------------------------

    /// Numerically stabilized softmax over the trailing axis.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        if self.data(x).iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("softmax_rows on NaN input"));
        }
        let c = *self
            .shape(x)
            .last()
            .ok_or_else(|| Error::invalid("softmax_rows on 0-d"))?;
        let xv = self.data(x);
        let mut y = vec![0.0; xv.len()];
        for (row_in, row_out) in xv.chunks(c).zip(y.chunks_mut(c)) {
            let m = row_in.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                *o = (v - m).exp();
                z += *o;
            }
            for o in row_out.iter_mut() {
                *o /= z;
            }
        }
        let yc = y.clone();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(&[x]);
        Ok(self.push(
            shape,
            y,
            needs,
            Some(Box::new(move |g| {
                let mut gx = vec![0.0; g.len()];
                for ((grow, srow), orow) in g.chunks(c).zip(yc.chunks(c)).zip(gx.chunks_mut(c)) {
                    let dot: f64 = grow.iter().zip(srow).map(|(a, b)| a * b).sum();
                    for ((o, &gv), &sv) in orow.iter_mut().zip(grow).zip(srow) {
                        *o = sv * (gv - dot);
                    }
                }
                vec![(x, gx)]
            })),
        ))
    }

    /// Grouped 1-D cross-correlation. `x` is `[len, c_in]`, `kernel` is
    /// `[k, c_in/groups, c_out]`, `bias` is `[c_out]`. Same padding requires
    /// an odd kernel.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        kernel: NodeId,
        bias: NodeId,
        groups: usize,
        padding: Padding,
    ) -> Result<NodeId> {
        let (len, c_in) = self.dims2(x, "conv1d input")?;
        let ksh = self.shape(kernel);
        if ksh.len() != 3 {
            return Err(Error::invalid("conv1d kernel must be 3-d [k, c_in/groups, c_out]"));
        }
        let (k, cig, c_out) = (ksh[0], ksh[1], ksh[2]);
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::invalid("conv1d: channels must divide groups"));
        }
        if cig != c_in / groups {
            return Err(Error::invalid(format!(
                "conv1d kernel in-channels {} != c_in/groups {}",
                cig,
                c_in / groups
            )));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::invalid("conv1d bias shape mismatch"));
        }
        if padding == Padding::Same && k % 2 == 0 {
            return Err(Error::invalid("same padding requires an odd kernel"));
        }
        if padding == Padding::Valid && len < k {
            return Err(Error::invalid("valid conv: input shorter than kernel"));
        }
        let (pad, out_len) = match padding {
            Padding::Same => ((k - 1) / 2, len),
            Padding::Valid => (0, len - k + 1),
        };
        let cog = c_out / groups;
        let xv = self.data(x).to_vec();
        let kv = self.data(kernel).to_vec();
        let bv = self.data(bias).to_vec();
        let mut out = vec![0.0; out_len * c_out];
        for t in 0..out_len {
            for g in 0..groups {
                for col in 0..cog {
                    let co = g * cog + col;
                    let mut acc = bv[co];
                    for dt in 0..k {
                        let src = t + dt;
                        if src < pad || src - pad >= len {
                            continue;
                        }
                        let ti = src - pad;
                        for cl in 0..cig {
                            let ci = g * cig + cl;
                            acc += xv[ti * c_in + ci] * kv[(dt * cig + cl) * c_out + co];
                        }
                    }
                    out[t * c_out + co] = acc;
                }
            }
        }
        let needs = self.needs(&[x, kernel, bias]);
        Ok(self.push(
            vec![out_len, c_out],
            out,
            needs,
            Some(Box::new(move |gy| {
                let mut gx = vec![0.0; len * c_in];
                let mut gk = vec![0.0; k * cig * c_out];
                let mut gb = vec![0.0; c_out];
                for t in 0..out_len {
                    for g in 0..groups {
                        for col in 0..cog {
                            let co = g * cog + col;
                            let gv = gy[t * c_out + co];
                            if gv == 0.0 {
                                continue;
                            }
                            gb[co] += gv;
                            for dt in 0..k {
                                let src = t + dt;
                                if src < pad || src - pad >= len {
                                    continue;
                                }
                                let ti = src - pad;
                                for cl in 0..cig {
                                    let ci = g * cig + cl;
                                    gx[ti * c_in + ci] += gv * kv[(dt * cig + cl) * c_out + co];
                                    gk[(dt * cig + cl) * c_out + co] += gv * xv[ti * c_in + ci];
                                }
                            }
                        }
                    }
                }
                vec![(x, gx), (kernel, gk), (bias, gb)]
            })),
        ))
    }

    /// Layer normalization over the trailing channel axis with affine
    /// gain/shift.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        shift: NodeId,
        eps: f64,
    ) -> Result<NodeId> {
        let c = *self
            .shape(x)
            .last()
            .ok_or_else(|| Error::invalid("layer_norm on 0-d"))?;
        if self.shape(gain) != [c] || self.shape(shift) != [c] {
            return Err(Error::invalid("layer_norm gain/shift shape mismatch"));
        }
        if eps <= 0.0 {
            return Err(Error::invalid("layer_norm eps must be positive"));
        }
        let xv = self.data(x).to_vec();
        let gv = self.data(gain).to_vec();
        let sv = self.data(shift).to_vec();
        let rows = xv.len() / c;
        let mut y = vec![0.0; xv.len()];
        let mut mus = vec![0.0; rows];
        let mut istds = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv[r * c..(r + 1) * c];
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let istd = 1.0 / (var + eps).sqrt();
            mus[r] = mu;
            istds[r] = istd;
            for j in 0..c {
                y[r * c + j] = gv[j] * (row[j] - mu) * istd + sv[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let needs = self.needs(&[x, gain, shift]);
        Ok(self.push(
            shape,
            y,
            needs,
            Some(Box::new(move |gy| {
                let mut gx = vec![0.0; xv.len()];
                let mut gg = vec![0.0; c];
                let mut gs = vec![0.0; c];
                for r in 0..rows {
                    let row = &xv[r * c..(r + 1) * c];
                    let grow = &gy[r * c..(r + 1) * c];
                    let (mu, istd) = (mus[r], istds[r]);
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..c {
                        let xhat = (row[j] - mu) * istd;
                        let dxhat = grow[j] * gv[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        gg[j] += grow[j] * xhat;
                        gs[j] += grow[j];
                    }
                    let cn = c as f64;
                    for j in 0..c {
                        let xhat = (row[j] - mu) * istd;
                        let dxhat = grow[j] * gv[j];
                        gx[r * c + j] =
                            istd * (dxhat - sum_dxhat / cn - xhat * sum_dxhat_xhat / cn);
                    }
                }
                vec![(x, gx), (gain, gg), (shift, gs)]
            })),
        ))
    }

    /// Overlap-averaged merge of `[F, S, C]` segments (S = slide + overlap)
    /// back into a `[F*slide + overlap, C]` signal; the differentiable twin
    /// of [`crate::windowing::merge_windows`].
    pub fn overlap_merge(&mut self, x: NodeId, slide: usize, overlap: usize) -> Result<NodeId> {
        let sh = self.shape(x);
        if sh.len() != 3 || sh[1] != slide + overlap {
            return Err(Error::invalid("overlap_merge: expected [F, slide+overlap, C]"));
        }
        let (nf, seg, ch) = (sh[0], sh[1], sh[2]);
        let out_len = nf * slide + overlap;
        let xv = self.data(x);
        let at = |k: usize, j: usize, c: usize| xv[(k * seg + j) * ch + c];
        let mut out = vec![0.0; out_len * ch];
        for j in 0..slide {
            for c in 0..ch {
                out[j * ch + c] = at(0, j, c);
            }
        }
        for k in 1..nf {
            let base = k * slide;
            for j in 0..overlap {
                for c in 0..ch {
                    out[(base + j) * ch + c] = 0.5 * (at(k - 1, slide + j, c) + at(k, j, c));
                }
            }
            for j in overlap..slide {
                for c in 0..ch {
                    out[(base + j) * ch + c] = at(k, j, c);
                }
            }
        }
        let base = nf * slide;
        for j in 0..overlap {
            for c in 0..ch {
                out[(base + j) * ch + c] = at(nf - 1, slide + j, c);
            }
        }
        let needs = self.needs(&[x]);
        Ok(self.push(
            vec![out_len, ch],
            out,
            needs,
            Some(Box::new(move |g| {
                let mut gx = vec![0.0; nf * seg * ch];
                let mut add = |k: usize, j: usize, c: usize, v: f64| {
                    gx[(k * seg + j) * ch + c] += v;
                };
                for j in 0..slide {
                    for c in 0..ch {
                        add(0, j, c, g[j * ch + c]);
                    }
                }
                for k in 1..nf {
                    let base = k * slide;
                    for j in 0..overlap {
                        for c in 0..ch {
                            let gv = 0.5 * g[(base + j) * ch + c];
                            add(k - 1, slide + j, c, gv);
                            add(k, j, c, gv);
                        }
                    }
                    for j in overlap..slide {
                        for c in 0..ch {
                            add(k, j, c, g[(base + j) * ch + c]);
                        }
                    }
                }
                let base = nf * slide;
                for j in 0..overlap {
                    for c in 0..ch {
                        add(nf - 1, slide + j, c, g[(base + j) * ch + c]);
                    }
                }
                vec![(x, gx)]
            })),
        ))
    }

    // ---------------------------------------------------------------
    // spectral ops
    // ---------------------------------------------------------------

    /// DFT of an I/Q signal carried as `[N, 2]` real channels. Output is the
    /// complex spectrum in the same layout. Linear, so the backward pass is
    /// the conjugate transform of the output gradient.
    pub fn dft_iq(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c) = self.dims2(x, "dft_iq")?;
        if c != 2 {
            return Err(Error::invalid("dft_iq expects [N, 2] I/Q input"));
        }
        if n == 0 {
            return Err(Error::invalid("dft_iq of empty input"));
        }
        let xv = self.data(x);
        let z: Vec<Complex64> = (0..n)
            .map(|i| Complex64::new(xv[2 * i], xv[2 * i + 1]))
            .collect();
        let spec = fft::dft(&z)?;
        let mut out = vec![0.0; 2 * n];
        for (i, v) in spec.iter().enumerate() {
            out[2 * i] = v.re;
            out[2 * i + 1] = v.im;
        }
        let needs = self.needs(&[x]);
        Ok(self.push(
            vec![n, 2],
            out,
            needs,
            Some(Box::new(move |g| {
                // grad_z = conj(DFT(conj(g)))
                let gz: Vec<Complex64> = (0..n)
                    .map(|i| Complex64::new(g[2 * i], -g[2 * i + 1]))
                    .collect();
                let t = fft::dft(&gz).expect("nonempty");
                let mut gx = vec![0.0; 2 * n];
                for (i, v) in t.iter().enumerate() {
                    gx[2 * i] = v.re;
                    gx[2 * i + 1] = -v.im;
                }
                vec![(x, gx)]
            })),
        ))
    }

    /// Magnitude of an `[N, 2]` I/Q tensor, output `[N]`. Subgradient 0 at
    /// zero magnitude.
    pub fn complex_mag(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, c) = self.dims2(x, "complex_mag")?;
        if c != 2 {
            return Err(Error::invalid("complex_mag expects [N, 2] input"));
        }
        let xv = self.data(x).to_vec();
        let y: Vec<f64> = (0..n).map(|i| xv[2 * i].hypot(xv[2 * i + 1])).collect();
        let yc = y.clone();
        let needs = self.needs(&[x]);
        Ok(self.push(
            vec![n],
            y,
            needs,
            Some(Box::new(move |g| {
                let mut gx = vec![0.0; 2 * n];
                for i in 0..n {
                    if yc[i] > 0.0 {
                        gx[2 * i] = g[i] * xv[2 * i] / yc[i];
                        gx[2 * i + 1] = g[i] * xv[2 * i + 1] / yc[i];
                    }
                }
                vec![(x, gx)]
            })),
        ))
    }

    // ---------------------------------------------------------------
    // helpers
    // ---------------------------------------------------------------

    fn same_shape(&self, a: NodeId, b: NodeId, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::invalid(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn dims2(&self, id: NodeId, what: &str) -> Result<(usize, usize)> {
        let sh = self.shape(id);
        if sh.len() != 2 {
            return Err(Error::invalid(format!("{what} must be 2-d, got {sh:?}")));
        }
        Ok((sh[0], sh[1]))
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * m..(l + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += ail * bv;
            }
        }
    }
}

/// Central-difference gradient of a scalar-valued function, the verification
/// oracle for [`Graph::backward`].
pub fn finite_diff_gradient<F>(f: F, x: &Tensor, h: f64) -> Tensor
where
    F: Fn(&Tensor) -> f64,
{
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let dn = f(&probe);
        probe.data_mut()[i] = orig;
        grad[i] = (up - dn) / (2.0 * h);
    }
    Tensor::new(x.shape().to_vec(), grad).expect("same shape as input")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap().with_grad()
    }

    /// Checks autodiff gradients of `build` against central differences for
    /// every input tensor.
    fn grad_check<F>(inputs: &[Tensor], build: F, tol: f64)
    where
        F: Fn(&mut Graph, &[NodeId]) -> NodeId,
    {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t)).collect();
        let loss = build(&mut g, &ids);
        g.backward(loss).unwrap();
        for (which, t) in inputs.iter().enumerate() {
            let auto = g.grad(ids[which]).expect("grad populated").to_vec();
            let fd = finite_diff_gradient(
                |probe| {
                    let mut g2 = Graph::new();
                    let ids2: Vec<NodeId> = inputs
                        .iter()
                        .enumerate()
                        .map(|(i, u)| if i == which { g2.leaf(probe) } else { g2.leaf(u) })
                        .collect();
                    let l = build(&mut g2, &ids2);
                    g2.data(l)[0]
                },
                t,
                1e-5,
            );
            for (a, b) in auto.iter().zip(fd.data()) {
                let denom = a.abs().max(b.abs()).max(1.0);
                assert!(
                    (a - b).abs() / denom < tol,
                    "input {which}: autodiff {a} vs fd {b}"
                );
            }
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]).with_grad();
        let mut g = Graph::new();
        let xi = g.leaf(&x);
        let l = g.sum(xi);
        g.backward(l).unwrap();
        assert_eq!(g.grad(xi).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_loss_leaves_no_gradient() {
        let x = Tensor::from_vec(vec![1.0, 2.0]).with_grad();
        let c = Tensor::scalar(5.0);
        let mut g = Graph::new();
        let xi = g.leaf(&x);
        let ci = g.constant(&c);
        let l = g.scale(ci, 1.0);
        g.backward(l).unwrap();
        assert!(g.grad(xi).is_none());
    }

    #[test]
    fn backward_on_non_scalar_errors() {
        let x = Tensor::from_vec(vec![1.0, 2.0]).with_grad();
        let mut g = Graph::new();
        let xi = g.leaf(&x);
        assert!(g.backward(xi).is_err());
    }

    #[test]
    fn fan_out_accumulates_additively() {
        // loss = sum(x*x) + sum(x) visits x twice
        let x = Tensor::from_vec(vec![0.5, -1.5, 2.0]).with_grad();
        let mut g = Graph::new();
        let xi = g.leaf(&x);
        let sq = g.mul(xi, xi).unwrap();
        let a = g.sum(sq);
        let b = g.sum(xi);
        let l = g.add(a, b).unwrap();
        g.backward(l).unwrap();
        let got = g.grad(xi).unwrap();
        for (gv, xv) in got.iter().zip(x.data()) {
            assert!((gv - (2.0 * xv + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn fan_out_matches_isolated_graphs() {
        // grad of branch-sum equals sum of branch-wise grads
        let x = Tensor::from_vec(vec![0.3, 0.7, -0.2, 1.1]).with_grad();
        let mut g = Graph::new();
        let xi = g.leaf(&x);
        let b1 = g.mul(xi, xi).unwrap();
        let s1 = g.sum(b1);
        let sw = g.swish(xi);
        let s2 = g.sum(sw);
        let l = g.add(s1, s2).unwrap();
        g.backward(l).unwrap();
        let joint = g.grad(xi).unwrap().to_vec();

        let mut ga = Graph::new();
        let xa = ga.leaf(&x);
        let m = ga.mul(xa, xa).unwrap();
        let la = ga.sum(m);
        ga.backward(la).unwrap();
        let g1 = ga.grad(xa).unwrap().to_vec();

        let mut gb = Graph::new();
        let xb = gb.leaf(&x);
        let sw = gb.swish(xb);
        let lb = gb.sum(sw);
        gb.backward(lb).unwrap();
        let g2 = gb.grad(xb).unwrap().to_vec();

        for i in 0..joint.len() {
            assert!((joint[i] - (g1[i] + g2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_uniform_and_saturation() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::from_vec(vec![0.0, 0.0, 0.0]));
        let s = g.softmax_rows(x).unwrap();
        for v in g.data(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = g.constant(&Tensor::from_vec(vec![1000.0, 0.0]));
        let s2 = g.softmax_rows(y).unwrap();
        assert!((g.data(s2)[0] - 1.0).abs() < 1e-12);
        assert!(g.data(s2)[1].abs() < 1e-12);
    }

    #[test]
    fn softmax_matches_direct_exp_sum() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let s = g.softmax_rows(x).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (i, v) in g.data(s).iter().enumerate() {
            let expect = ((i + 1) as f64).exp() / z;
            assert!((v - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::from_vec(vec![f64::NAN, 1.0]));
        assert!(g.softmax_rows(x).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one_and_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = rand_tensor(&mut rng, vec![5, 9]);
        let mut g = Graph::new();
        let x = g.constant(&t);
        let s = g.softmax_rows(x).unwrap();
        for row in g.data(s).chunks(9) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn conv1d_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, vec![6, 3]);
        let mut g = Graph::new();
        let xi = g.leaf(&x);
        // k=1 kernel that is the identity over channels
        let mut kdata = vec![0.0; 3 * 3];
        for c in 0..3 {
            kdata[c * 3 + c] = 1.0;
        }
        let k = g.constant(&Tensor::new(vec![1, 3, 3], kdata).unwrap());
        let b = g.constant(&Tensor::zeros(vec![3]));
        let y = g.conv1d(xi, k, b, 1, Padding::Same).unwrap();
        assert_eq!(g.data(y), x.data());
    }

    #[test]
    fn conv1d_valid_averaging() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let k = g.constant(&Tensor::new(vec![3, 1, 1], vec![1.0 / 3.0; 3]).unwrap());
        let b = g.constant(&Tensor::zeros(vec![1]));
        let y = g.conv1d(x, k, b, 1, Padding::Valid).unwrap();
        let got = g.data(y);
        assert!((got[0] - 2.0).abs() < 1e-12);
        assert!((got[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn conv1d_grouped_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, vec![8, 2]);
        let k = rand_tensor(&mut rng, vec![3, 1, 2]);
        let b = rand_tensor(&mut rng, vec![2]);
        let mut g = Graph::new();
        let (xi, ki, bi) = (g.leaf(&x), g.leaf(&k), g.leaf(&b));
        let y = g.conv1d(xi, ki, bi, 2, Padding::Same).unwrap();
        // direct nested-loop oracle: groups=2 so channel c uses only channel c
        let mut expect = vec![0.0; 8 * 2];
        for t in 0..8i64 {
            for c in 0..2 {
                let mut acc = b.data()[c];
                for dt in 0..3i64 {
                    let ti = t + dt - 1;
                    if ti < 0 || ti >= 8 {
                        continue;
                    }
                    acc += x.data()[ti as usize * 2 + c] * k.data()[dt as usize * 2 + c];
                }
                expect[t as usize * 2 + c] = acc;
            }
        }
        for (a, e) in g.data(y).iter().zip(&expect) {
            assert!((a - e).abs() < 1e-14);
        }
    }

    #[test]
    fn conv1d_shape_mismatch_errors() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::zeros(vec![8, 3]));
        let k = g.constant(&Tensor::zeros(vec![3, 2, 4]));
        let b = g.constant(&Tensor::zeros(vec![4]));
        assert!(g.conv1d(x, k, b, 1, Padding::Same).is_err());
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(&Tensor::new(vec![1, 4], vec![3.3; 4]).unwrap());
        let gain = g.constant(&Tensor::filled(vec![4], 1.0));
        let shift = g.constant(&Tensor::zeros(vec![4]));
        let y = g.layer_norm(x, gain, shift, 1e-5).unwrap();
        for v in g.data(y) {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_zero_gain_gives_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, vec![2, 4]);
        let mut g = Graph::new();
        let xi = g.constant(&x);
        let gain = g.constant(&Tensor::zeros(vec![4]));
        let shift = g.constant(&Tensor::from_vec(vec![1.0, -2.0, 0.5, 9.0]));
        let y = g.layer_norm(xi, gain, shift, 1e-5).unwrap();
        let got = g.data(y);
        for r in 0..2 {
            for j in 0..4 {
                assert_eq!(got[r * 4 + j], g.data(shift)[j]);
            }
        }
    }

    #[test]
    fn layer_norm_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, vec![1, 4]);
        let mut g = Graph::new();
        let xi = g.constant(&x);
        let gain = g.constant(&Tensor::filled(vec![4], 1.0));
        let shift = g.constant(&Tensor::zeros(vec![4]));
        let y = g.layer_norm(xi, gain, shift, 1e-5).unwrap();
        let got = g.data(y);
        let mean: f64 = got.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        let var: f64 = got.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        // eps shrinks the variance slightly below 1
        let raw_var = {
            let m: f64 = x.data().iter().sum::<f64>() / 4.0;
            x.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / 4.0
        };
        let expect = raw_var / (raw_var + 1e-5);
        assert!((var - expect).abs() < 1e-9);
    }

    #[test]
    fn finite_diff_on_sum_of_squares() {
        let x = Tensor::from_vec(vec![1.0, 2.0]);
        let g = finite_diff_gradient(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5);
        assert!((g.data()[0] - 2.0).abs() < 1e-6);
        assert!((g.data()[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_on_constant_is_zero() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let g = finite_diff_gradient(|_| 42.0, &x, 1e-5);
        assert!(g.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // softmax-then-dot on length-4 input
        let x = rand_tensor(&mut rng, vec![1, 4]);
        let w = rand_tensor(&mut rng, vec![1, 4]);
        grad_check(
            &[x, w],
            |g, ids| {
                let s = g.softmax_rows(ids[0]).unwrap();
                let p = g.mul(s, ids[1]).unwrap();
                g.sum(p)
            },
            1e-4,
        );

        // matmul + bias + swish + l2
        let a = rand_tensor(&mut rng, vec![3, 4]);
        let b = rand_tensor(&mut rng, vec![4, 2]);
        let bias = rand_tensor(&mut rng, vec![2]);
        grad_check(
            &[a, b, bias],
            |g, ids| {
                let m = g.matmul(ids[0], ids[1]).unwrap();
                let mb = g.add_bias(m, ids[2]).unwrap();
                let s = g.swish(mb);
                g.l2_norm(s)
            },
            1e-4,
        );

        // conv1d same padding, grouped
        let x = rand_tensor(&mut rng, vec![8, 4]);
        let k = rand_tensor(&mut rng, vec![3, 2, 4]);
        let kb = rand_tensor(&mut rng, vec![4]);
        grad_check(
            &[x, k, kb],
            |g, ids| {
                let y = g.conv1d(ids[0], ids[1], ids[2], 2, Padding::Same).unwrap();
                let s = g.sigmoid(y);
                g.sum(s)
            },
            1e-4,
        );

        // layer_norm
        let x = rand_tensor(&mut rng, vec![3, 5]);
        let gain = rand_tensor(&mut rng, vec![5]);
        let shift = rand_tensor(&mut rng, vec![5]);
        grad_check(
            &[x, gain, shift],
            |g, ids| {
                let y = g.layer_norm(ids[0], ids[1], ids[2], 1e-5).unwrap();
                let w = g.swish(y);
                g.l2_norm(w)
            },
            1e-4,
        );

        // dft + magnitude
        let x = rand_tensor(&mut rng, vec![8, 2]);
        grad_check(
            &[x],
            |g, ids| {
                let f = g.dft_iq(ids[0]).unwrap();
                let m = g.complex_mag(f).unwrap();
                g.l2_norm(m)
            },
            1e-4,
        );

        // toeplitz + softmax path
        let t = rand_tensor(&mut rng, vec![7]);
        grad_check(
            &[t],
            |g, ids| {
                let s = g.toeplitz(ids[0], 4).unwrap();
                let sm = g.softmax_rows(s).unwrap();
                let sq = g.mul(sm, sm).unwrap();
                g.sum(sq)
            },
            1e-4,
        );

        // overlap merge
        let x = rand_tensor(&mut rng, vec![3, 8, 2]);
        grad_check(
            &[x],
            |g, ids| {
                let m = g.overlap_merge(ids[0], 4, 4).unwrap();
                g.l2_norm(m)
            },
            1e-4,
        );

        // shape plumbing: stack/frame/transpose/concat
        let a = rand_tensor(&mut rng, vec![2, 3]);
        let b = rand_tensor(&mut rng, vec![2, 3]);
        grad_check(
            &[a, b],
            |g, ids| {
                let st = g.stack0(&[ids[0], ids[1]]).unwrap();
                let tr = g.transpose01(st).unwrap();
                let f0 = g.frame(tr, 0).unwrap();
                let f1 = g.frame(tr, 1).unwrap();
                let cc = g.concat_cols(&[f0, f1]).unwrap();
                let t2 = g.transpose2(cc).unwrap();
                g.l2_norm(t2)
            },
            1e-4,
        );
    }

    #[test]
    fn dft_iq_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, vec![16, 2]);
        let mut g = Graph::new();
        let xi = g.constant(&x);
        let f = g.dft_iq(xi).unwrap();
        let z: Vec<Complex64> = (0..16)
            .map(|i| Complex64::new(x.data()[2 * i], x.data()[2 * i + 1]))
            .collect();
        let expect = fft::dft_direct(&z);
        let got = g.data(f);
        for (i, e) in expect.iter().enumerate() {
            assert!((got[2 * i] - e.re).abs() < 1e-9);
            assert!((got[2 * i + 1] - e.im).abs() < 1e-9);
        }
    }

    #[test]
    fn toeplitz_structure() {
        let mut g = Graph::new();
        let t = g.constant(&Tensor::from_vec((0..7).map(|i| i as f64).collect()));
        let s = g.toeplitz(t, 4).unwrap();
        let sv = g.data(s);
        for i in 0..4 {
            for j in 0..4 {
                // depends only on j - i
                assert_eq!(sv[i * 4 + j], (j as i64 - i as i64 + 3) as f64);
            }
        }
    }

    #[test]
    fn inference_graph_refuses_backward() {
        let x = Tensor::from_vec(vec![1.0]).with_grad();
        let mut g = Graph::new_inference();
        let xi = g.leaf(&x);
        let l = g.sum(xi);
        assert!(g.backward(l).is_err());
    }
}
