//! Data-movement ops: permutes, reshapes, slicing, and the chunking pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{Graph, NodeId, Op};
use crate::tensor::Tensor;

/// Padding and hop metadata that makes segmentation exactly invertible.
///
/// Chunk `s` covers padded frames `[s·hop, s·hop + chunk)`, `hop = chunk / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkGeometry {
    pub chunk: usize,
    pub hop: usize,
    pub pad_left: usize,
    pub pad_right: usize,
    pub original_frames: usize,
    pub num_chunks: usize,
}

impl ChunkGeometry {
    pub fn new(frames: usize, chunk: usize) -> Result<Self> {
        if chunk < 2 || chunk % 2 != 0 {
            return Err(Error::Config(format!("chunk size must be even and >= 2, got {chunk}")));
        }
        if frames == 0 {
            return Err(Error::shape("segment", "no frames to segment"));
        }
        let hop = chunk / 2;
        let pad_left = hop;
        let pad_right = hop + (hop - frames % hop) % hop;
        let padded = frames + pad_left + pad_right;
        let num_chunks = (padded - chunk) / hop + 1;
        Ok(Self { chunk, hop, pad_left, pad_right, original_frames: frames, num_chunks })
    }

    pub fn padded_frames(&self) -> usize {
        self.original_frames + self.pad_left + self.pad_right
    }

    fn validate(&self) -> Result<()> {
        let consistent = self.hop * 2 == self.chunk
            && self.padded_frames() >= self.chunk
            && (self.padded_frames() - self.chunk) % self.hop == 0
            && (self.padded_frames() - self.chunk) / self.hop + 1 == self.num_chunks;
        if consistent {
            Ok(())
        } else {
            Err(Error::shape("overlap_add", format!("inconsistent chunk metadata {self:?}")))
        }
    }

    /// Number of chunks covering each padded frame.
    pub fn coverage(&self) -> Vec<usize> {
        let mut cover = vec![0usize; self.padded_frames()];
        for s in 0..self.num_chunks {
            cover[s * self.hop..s * self.hop + self.chunk].iter_mut().for_each(|c| *c += 1);
        }
        cover
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// `out[i_0..] = x[..]` with `out.shape[a] = x.shape[perm[a]]`.
fn permute_data(x: &Tensor, perm: &[usize]) -> Tensor {
    let in_strides = strides(x.shape());
    let out_shape: Vec<usize> = perm.iter().map(|&p| x.shape()[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.numel();
    let rank = out_shape.len();
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let xd = x.data();
    while out.len() < n {
        let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.extend((0..inner).map(|j| xd[base + j * inner_stride]));
        // increment all but the last axis
        let mut a = rank - 1;
        while a > 0 {
            a -= 1;
            idx[a] += 1;
            if idx[a] < out_shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

impl Graph {
    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        let xv = self.value(x);
        let mut seen = vec![false; xv.rank()];
        if perm.len() != xv.rank() || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape("permute", format!("{perm:?} is not a permutation of rank {}", xv.rank())));
        }
        let value = permute_data(xv, perm);
        self.push("permute", value, Op::Permute { x, perm: perm.to_vec() }, &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).clone().reshaped(shape)?;
        self.push("reshape", value, Op::Reshape { x }, &[x])
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} incompatible with {base:?} along axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = Tensor::axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let block = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push("concat", Tensor::from_parts(shape, out), Op::Concat { xs: xs.to_vec(), axis }, xs)
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if axis >= xv.rank() || len == 0 || start + len > xv.shape()[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) along axis {axis} of {:?}", start + len, xv.shape()),
            ));
        }
        let (outer, extent, inner) = Tensor::axis_split(xv.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            out.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let mut shape = xv.shape().to_vec();
        shape[axis] = len;
        self.push("slice", Tensor::from_parts(shape, out), Op::Slice { x, axis, start }, &[x])
    }

    /// Crops or zero-pads the trailing axis to `len`.
    pub fn fit_length(&mut self, x: NodeId, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let t = xv.last_dim();
        let rows = xv.numel() / t;
        let keep = t.min(len);
        let mut out = vec![0.0; rows * len];
        for (dst, src) in out.chunks_mut(len).zip(xv.data().chunks(t)) {
            dst[..keep].copy_from_slice(&src[..keep]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.push("fit_length", Tensor::from_parts(shape, out), Op::FitLength { x }, &[x])
    }

    /// `[N, T]` feature map to `[N, K, S]` half-overlapping chunks.
    pub fn segment(&mut self, x: NodeId, chunk: usize) -> Result<(NodeId, ChunkGeometry)> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::shape("segment", format!("expected [N, T], got {:?}", xv.shape())));
        }
        let (n, t) = (xv.shape()[0], xv.shape()[1]);
        let geom = ChunkGeometry::new(t, chunk)?;
        let (k, s_count) = (geom.chunk, geom.num_chunks);
        let mut out = vec![0.0; n * k * s_count];
        for c in 0..n {
            let row = &xv.data()[c * t..(c + 1) * t];
            for ki in 0..k {
                let dst = &mut out[(c * k + ki) * s_count..(c * k + ki + 1) * s_count];
                for (s, d) in dst.iter_mut().enumerate() {
                    let p = s * geom.hop + ki;
                    if p >= geom.pad_left && p - geom.pad_left < t {
                        *d = row[p - geom.pad_left];
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![n, k, s_count], out);
        let id = self.push("segment", value, Op::Segment { x, geom }, &[x])?;
        Ok((id, geom))
    }

    /// Inverse of [`Graph::segment`]: sums overlapping chunks, divides by the
    /// per-frame coverage count and strips the padding.
    pub fn overlap_add(&mut self, x: NodeId, geom: &ChunkGeometry) -> Result<NodeId> {
        geom.validate()?;
        let xv = self.value(x);
        if xv.rank() != 3 || xv.shape()[1] != geom.chunk || xv.shape()[2] != geom.num_chunks {
            return Err(Error::shape(
                "overlap_add",
                format!("chunks {:?} do not match geometry K={} S={}", xv.shape(), geom.chunk, geom.num_chunks),
            ));
        }
        let n = xv.shape()[0];
        let t = geom.original_frames;
        let cover = geom.coverage();
        let mut out = vec![0.0; n * t];
        for c in 0..n {
            let row = &mut out[c * t..(c + 1) * t];
            for ki in 0..geom.chunk {
                let src = &xv.data()[(c * geom.chunk + ki) * geom.num_chunks..(c * geom.chunk + ki + 1) * geom.num_chunks];
                for (s, v) in src.iter().enumerate() {
                    let p = s * geom.hop + ki;
                    if p >= geom.pad_left && p - geom.pad_left < t {
                        row[p - geom.pad_left] += v;
                    }
                }
            }
            for (ti, r) in row.iter_mut().enumerate() {
                *r /= cover[ti + geom.pad_left] as f64;
            }
        }
        let value = Tensor::from_parts(vec![n, t], out);
        self.push("overlap_add", value, Op::OverlapAdd { x, geom: *geom }, &[x])
    }
}

pub(crate) fn permute_backward(g: &Graph, x: NodeId, perm: &[usize], dy: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    g.accumulate(grads, x, permute_data(dy, &inverse));
    Ok(())
}

pub(crate) fn concat_backward(g: &Graph, xs: &[NodeId], axis: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
    let (outer, total, inner) = Tensor::axis_split(dy.shape(), axis);
    let mut offset = 0;
    for &x in xs {
        let shape = g.shape(x).to_vec();
        let len = shape[axis];
        let mut dx = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + offset) * inner;
            dx.extend_from_slice(&dy.data()[base..base + len * inner]);
        }
        offset += len;
        g.accumulate(grads, x, Tensor::from_parts(shape, dx));
    }
}

pub(crate) fn slice_backward(g: &Graph, x: NodeId, axis: usize, start: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
    let shape = g.shape(x).to_vec();
    let (outer, extent, inner) = Tensor::axis_split(&shape, axis);
    let len = dy.shape()[axis];
    let mut dx = vec![0.0; outer * extent * inner];
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        dx[base..base + len * inner].copy_from_slice(&dy.data()[o * len * inner..(o + 1) * len * inner]);
    }
    g.accumulate(grads, x, Tensor::from_parts(shape, dx));
}

pub(crate) fn fit_length_backward(g: &Graph, x: NodeId, dy: &Tensor, grads: &mut [Option<Tensor>]) {
    let shape = g.shape(x).to_vec();
    let t = *shape.last().unwrap();
    let len = dy.last_dim();
    let keep = t.min(len);
    let rows = dy.numel() / len;
    let mut dx = vec![0.0; rows * t];
    for (dst, src) in dx.chunks_mut(t).zip(dy.data().chunks(len)) {
        dst[..keep].copy_from_slice(&src[..keep]);
    }
    g.accumulate(grads, x, Tensor::from_parts(shape, dx));
}

pub(crate) fn segment_backward(g: &Graph, x: NodeId, geom: &ChunkGeometry, dy: &Tensor, grads: &mut [Option<Tensor>]) {
    let (n, t) = (g.shape(x)[0], g.shape(x)[1]);
    let mut dx = vec![0.0; n * t];
    for c in 0..n {
        for ki in 0..geom.chunk {
            let src = &dy.data()[(c * geom.chunk + ki) * geom.num_chunks..(c * geom.chunk + ki + 1) * geom.num_chunks];
            for (s, v) in src.iter().enumerate() {
                let p = s * geom.hop + ki;
                if p >= geom.pad_left && p - geom.pad_left < t {
                    dx[c * t + p - geom.pad_left] += v;
                }
            }
        }
    }
    g.accumulate(grads, x, Tensor::from_parts(vec![n, t], dx));
}

pub(crate) fn overlap_add_backward(g: &Graph, x: NodeId, geom: &ChunkGeometry, dy: &Tensor, grads: &mut [Option<Tensor>]) {
    let n = g.shape(x)[0];
    let t = geom.original_frames;
    let cover = geom.coverage();
    let mut dx = vec![0.0; n * geom.chunk * geom.num_chunks];
    for c in 0..n {
        let row = &dy.data()[c * t..(c + 1) * t];
        for ki in 0..geom.chunk {
            let dst = &mut dx[(c * geom.chunk + ki) * geom.num_chunks..(c * geom.chunk + ki + 1) * geom.num_chunks];
            for (s, d) in dst.iter_mut().enumerate() {
                let p = s * geom.hop + ki;
                if p >= geom.pad_left && p - geom.pad_left < t {
                    *d = row[p - geom.pad_left] / cover[p] as f64;
                }
            }
        }
    }
    g.accumulate(grads, x, Tensor::from_parts(g.shape(x).to_vec(), dx));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_arithmetic() {
        let g = ChunkGeometry::new(8, 4).unwrap();
        assert_eq!((g.hop, g.pad_left, g.padded_frames(), g.num_chunks), (2, 2, 12, 5));
        assert_eq!(ChunkGeometry::new(1000, 250).unwrap().hop, 125);
        assert!(matches!(ChunkGeometry::new(8, 5), Err(Error::Config(_))));
    }

    #[test]
    fn interior_frames_covered_twice() {
        for t in 1..40 {
            for k in [2, 4, 6, 10] {
                let g = ChunkGeometry::new(t, k).unwrap();
                let cover = g.coverage();
                assert!(cover[g.pad_left..g.pad_left + t].iter().all(|&c| c == 2), "t={t} k={k}");
            }
        }
    }

    #[test]
    fn permute_round_trip() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 3, 4], (0..24).map(f64::from).collect()).unwrap());
        let y = g.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.shape(y), &[4, 2, 3]);
        assert_eq!(g.value(y).at(&[3, 1, 2]), g.value(x).at(&[1, 2, 3]));
        let z = g.permute(y, &[1, 2, 0]).unwrap();
        assert_eq!(g.value(z), g.value(x));
        assert!(g.permute(x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn ones_survive_overlap_add() {
        let geom = ChunkGeometry::new(7, 4).unwrap();
        let mut g = Graph::new();
        let c = g.constant(Tensor::full(&[3, 4, geom.num_chunks], 1.0));
        let f = g.overlap_add(c, &geom).unwrap();
        assert!(g.value(f).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn overlap_add_rejects_bad_metadata() {
        let mut geom = ChunkGeometry::new(7, 4).unwrap();
        geom.num_chunks += 1;
        let mut g = Graph::new();
        let c = g.constant(Tensor::full(&[1, 4, geom.num_chunks], 1.0));
        assert!(g.overlap_add(c, &geom).is_err());
    }

    #[test]
    fn fit_length_crops_and_pads() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let a = g.fit_length(x, 2).unwrap();
        let b = g.fit_length(x, 5).unwrap();
        assert_eq!(g.value(a).data(), &[1.0, 2.0]);
        assert_eq!(g.value(b).data(), &[1.0, 2.0, 3.0, 0.0, 0.0]);
    }
}
