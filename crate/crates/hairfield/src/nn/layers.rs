//! Structural building blocks on top of the tape: convolutions expressed as
//! im2col gathers + matmul, k2/s2 transposed convolutions as matmul + row
//! permutation, multi-layer perceptrons, and interpolation tap builders.
//!
//! Feature maps are `[h*w, c]` matrices, volumes `[d*h*w, c]`, both row-major
//! with x fastest, then y, then z.

use crate::nn::kernels::InterpTaps;
use crate::nn::params::{he_uniform, ParamStore};
use crate::nn::scalar::Scalar;
use crate::nn::tape::{NodeId, Tape};
use crate::nn::tensor::Tensor;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Plane {
    pub h: usize,
    pub w: usize,
}

impl Plane {
    pub fn new(h: usize, w: usize) -> Self {
        Plane { h, w }
    }
    pub fn pixels(&self) -> usize {
        self.h * self.w
    }
    pub fn conv_out(&self, k: usize, stride: usize, pad: usize) -> Plane {
        Plane {
            h: (self.h + 2 * pad - k) / stride + 1,
            w: (self.w + 2 * pad - k) / stride + 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vol {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Vol {
    pub fn new(d: usize, h: usize, w: usize) -> Self {
        Vol { d, h, w }
    }
    pub fn voxels(&self) -> usize {
        self.d * self.h * self.w
    }
    pub fn conv_out(&self, k: usize, stride: usize, pad: usize) -> Vol {
        Vol {
            d: (self.d + 2 * pad - k) / stride + 1,
            h: (self.h + 2 * pad - k) / stride + 1,
            w: (self.w + 2 * pad - k) / stride + 1,
        }
    }
}

/// im2col row indices for a 2D convolution; -1 marks a padded (zero) tap.
/// Output layout: `[out_pixels * k*k]`, taps ordered (ky, kx).
pub fn im2col_idx_2d(p: Plane, k: usize, stride: usize, pad: usize) -> Arc<Vec<i64>> {
    let o = p.conv_out(k, stride, pad);
    let mut idx = Vec::with_capacity(o.pixels() * k * k);
    for oy in 0..o.h {
        for ox in 0..o.w {
            let y0 = (oy * stride) as i64 - pad as i64;
            let x0 = (ox * stride) as i64 - pad as i64;
            for ky in 0..k as i64 {
                for kx in 0..k as i64 {
                    let y = y0 + ky;
                    let x = x0 + kx;
                    if y >= 0 && y < p.h as i64 && x >= 0 && x < p.w as i64 {
                        idx.push(y * p.w as i64 + x);
                    } else {
                        idx.push(-1);
                    }
                }
            }
        }
    }
    Arc::new(idx)
}

/// im2col row indices for a 3D convolution, taps ordered (kz, ky, kx).
pub fn im2col_idx_3d(v: Vol, k: usize, stride: usize, pad: usize) -> Arc<Vec<i64>> {
    let o = v.conv_out(k, stride, pad);
    let mut idx = Vec::with_capacity(o.voxels() * k * k * k);
    for oz in 0..o.d {
        for oy in 0..o.h {
            for ox in 0..o.w {
                let z0 = (oz * stride) as i64 - pad as i64;
                let y0 = (oy * stride) as i64 - pad as i64;
                let x0 = (ox * stride) as i64 - pad as i64;
                for kz in 0..k as i64 {
                    for ky in 0..k as i64 {
                        for kx in 0..k as i64 {
                            let z = z0 + kz;
                            let y = y0 + ky;
                            let x = x0 + kx;
                            if z >= 0
                                && z < v.d as i64
                                && y >= 0
                                && y < v.h as i64
                                && x >= 0
                                && x < v.w as i64
                            {
                                idx.push((z * v.h as i64 + y) * v.w as i64 + x);
                            } else {
                                idx.push(-1);
                            }
                        }
                    }
                }
            }
        }
    }
    Arc::new(idx)
}

/// Batched variant: the same patch-local im2col replicated for `n` stacked
/// volumes of shape `v` (patch crops are stacked along rows).
pub fn im2col_idx_3d_batched(v: Vol, n: usize, k: usize, stride: usize, pad: usize) -> Arc<Vec<i64>> {
    let single = im2col_idx_3d(v, k, stride, pad);
    let vox = v.voxels() as i64;
    let mut idx = Vec::with_capacity(single.len() * n);
    for b in 0..n as i64 {
        for &i in single.iter() {
            idx.push(if i < 0 { -1 } else { i + b * vox });
        }
    }
    Arc::new(idx)
}

/// Row permutation realizing a kernel-2 stride-2 transposed convolution:
/// output pixel (2y+dy, 2x+dx) reads row `in_pix*4 + (dy*2+dx)` of the
/// matmul result reshaped to `[in_pixels*4, c_out]`.
pub fn convt2x_perm_2d(p_in: Plane) -> Arc<Vec<i64>> {
    let (oh, ow) = (p_in.h * 2, p_in.w * 2);
    let mut idx = Vec::with_capacity(oh * ow);
    for oy in 0..oh {
        for ox in 0..ow {
            let iy = oy / 2;
            let ix = ox / 2;
            let off = (oy % 2) * 2 + ox % 2;
            idx.push(((iy * p_in.w + ix) * 4 + off) as i64);
        }
    }
    Arc::new(idx)
}

pub fn convt2x_perm_3d(v_in: Vol) -> Arc<Vec<i64>> {
    let (od, oh, ow) = (v_in.d * 2, v_in.h * 2, v_in.w * 2);
    let mut idx = Vec::with_capacity(od * oh * ow);
    for oz in 0..od {
        for oy in 0..oh {
            for ox in 0..ow {
                let iz = oz / 2;
                let iy = oy / 2;
                let ix = ox / 2;
                let off = ((oz % 2) * 2 + oy % 2) * 2 + ox % 2;
                let in_vox = (iz * v_in.h + iy) * v_in.w + ix;
                idx.push((in_vox * 8 + off) as i64);
            }
        }
    }
    Arc::new(idx)
}

/// Convolution layer (2D or 3D share the same parameter layout:
/// weight `[taps*c_in, c_out]`, bias `[c_out]`).
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub w: usize,
    pub b: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub taps: usize,
}

impl ConvLayer {
    pub fn init_2d<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let taps = k * k;
        let w = store.add(
            format!("{name}.w"),
            he_uniform(rng, vec![taps * c_in, c_out], taps * c_in),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![c_out]));
        ConvLayer {
            w,
            b,
            c_in,
            c_out,
            k,
            stride,
            pad,
            taps,
        }
    }

    pub fn init_3d<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let taps = k * k * k;
        let w = store.add(
            format!("{name}.w"),
            he_uniform(rng, vec![taps * c_in, c_out], taps * c_in),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![c_out]));
        ConvLayer {
            w,
            b,
            c_in,
            c_out,
            k,
            stride,
            pad,
            taps,
        }
    }

    /// Forward with a precomputed im2col index (covers both 2D and 3D).
    pub fn forward_idx<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: NodeId,
        idx: &Arc<Vec<i64>>,
    ) -> NodeId {
        let rows_out = idx.len() / self.taps;
        let g = tape.gather_rows(x, idx.clone());
        let g = tape.reshape(g, vec![rows_out, self.taps * self.c_in]);
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(g, w);
        tape.add_bias(y, b)
    }

    pub fn forward_2d<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: NodeId,
        p: Plane,
    ) -> (NodeId, Plane) {
        let idx = im2col_idx_2d(p, self.k, self.stride, self.pad);
        (
            self.forward_idx(tape, store, x, &idx),
            p.conv_out(self.k, self.stride, self.pad),
        )
    }

    pub fn forward_3d<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: NodeId,
        v: Vol,
    ) -> (NodeId, Vol) {
        let idx = im2col_idx_3d(v, self.k, self.stride, self.pad);
        (
            self.forward_idx(tape, store, x, &idx),
            v.conv_out(self.k, self.stride, self.pad),
        )
    }
}

/// Kernel-2 stride-2 transposed convolution (exact 2x upsampling).
/// Weight `[c_in, offsets*c_out]` with offsets = 4 (2D) or 8 (3D).
#[derive(Clone, Debug)]
pub struct ConvT2x {
    pub w: usize,
    pub b: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub offsets: usize,
}

impl ConvT2x {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        three_d: bool,
    ) -> Self {
        let offsets = if three_d { 8 } else { 4 };
        let w = store.add(
            format!("{name}.w"),
            he_uniform(rng, vec![c_in, offsets * c_out], c_in),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![c_out]));
        ConvT2x {
            w,
            b,
            c_in,
            c_out,
            offsets,
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: NodeId,
        perm: &Arc<Vec<i64>>,
    ) -> NodeId {
        let rows_in = tape.value(x).rows();
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul(x, w);
        let y = tape.reshape(y, vec![rows_in * self.offsets, self.c_out]);
        let y = tape.gather_rows(y, perm.clone());
        tape.add_bias(y, b)
    }
}

/// Plain MLP: ReLU between layers, linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub ws: Vec<usize>,
    pub bs: Vec<usize>,
    pub widths: Vec<usize>,
}

impl Mlp {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        widths: &[usize],
        zero_last: bool,
    ) -> Self {
        assert!(widths.len() >= 2, "mlp needs at least in/out widths");
        let mut ws = Vec::new();
        let mut bs = Vec::new();
        for i in 0..widths.len() - 1 {
            let last = i == widths.len() - 2;
            let w = if last && zero_last {
                Tensor::zeros(vec![widths[i], widths[i + 1]])
            } else {
                he_uniform(rng, vec![widths[i], widths[i + 1]], widths[i])
            };
            ws.push(store.add(format!("{name}.w{i}"), w));
            bs.push(store.add(format!("{name}.b{i}"), Tensor::zeros(vec![widths[i + 1]])));
        }
        Mlp {
            ws,
            bs,
            widths: widths.to_vec(),
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: NodeId) -> NodeId {
        self.forward_with_hidden(tape, store, x).0
    }

    /// Returns the output node plus each post-activation hidden node.
    pub fn forward_with_hidden<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        mut x: NodeId,
    ) -> (NodeId, Vec<NodeId>) {
        let mut hidden = Vec::new();
        let n = self.ws.len();
        for i in 0..n {
            let w = tape.param(store, self.ws[i]);
            let b = tape.param(store, self.bs[i]);
            x = tape.matmul(x, w);
            x = tape.add_bias(x, b);
            if i + 1 < n {
                x = tape.relu(x);
                hidden.push(x);
            }
        }
        (x, hidden)
    }
}

fn taps_1d(u: f64, n: usize) -> (usize, usize, f64, bool) {
    // Sample positions are cell centers: value i lives at coordinate i + 0.5.
    let mut clamped = false;
    if n == 1 {
        return (0, 0, 0.0, u < 0.0 || u > 1.0);
    }
    let g = u - 0.5;
    let mut i0 = g.floor();
    if i0 < 0.0 {
        i0 = 0.0;
        clamped = clamped || g < 0.0;
    }
    if i0 > (n - 2) as f64 {
        i0 = (n - 2) as f64;
        clamped = clamped || g > (n - 1) as f64;
    }
    let f = (g - i0).clamp(0.0, 1.0);
    (i0 as usize, i0 as usize + 1, f, clamped)
}

/// Bilinear taps into a `[h*w, c]` feature map at continuous pixel coords
/// (u right, v down, in pixel units). Returns taps plus a per-point clamp flag.
pub fn bilinear_taps(p: Plane, points_uv: &[[f64; 2]]) -> (InterpTaps, Vec<bool>) {
    let mut idx = Vec::with_capacity(points_uv.len() * 4);
    let mut w = Vec::with_capacity(points_uv.len() * 4);
    let mut flags = Vec::with_capacity(points_uv.len());
    for pt in points_uv {
        let (x0, x1, fx, cx) = taps_1d(pt[0], p.w);
        let (y0, y1, fy, cy) = taps_1d(pt[1], p.h);
        flags.push(cx || cy);
        for (yy, wy) in [(y0, 1.0 - fy), (y1, fy)] {
            for (xx, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                idx.push((yy * p.w + xx) as u32);
                w.push(wy * wx);
            }
        }
    }
    (InterpTaps { taps: 4, idx, w }, flags)
}

/// Trilinear taps into a `[d*h*w, c]` volume at continuous voxel coords
/// (x, y, z in voxel units of that volume). Returns taps plus clamp flags.
pub fn trilinear_taps(v: Vol, points_xyz: &[[f64; 3]]) -> (InterpTaps, Vec<bool>) {
    let mut idx = Vec::with_capacity(points_xyz.len() * 8);
    let mut w = Vec::with_capacity(points_xyz.len() * 8);
    let mut flags = Vec::with_capacity(points_xyz.len());
    for pt in points_xyz {
        let (x0, x1, fx, cx) = taps_1d(pt[0], v.w);
        let (y0, y1, fy, cy) = taps_1d(pt[1], v.h);
        let (z0, z1, fz, cz) = taps_1d(pt[2], v.d);
        flags.push(cx || cy || cz);
        for (zz, wz) in [(z0, 1.0 - fz), (z1, fz)] {
            for (yy, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                for (xx, wx) in [(x0, 1.0 - fx), (x1, fx)] {
                    idx.push(((zz * v.h + yy) * v.w + xx) as u32);
                    w.push(wz * wy * wx);
                }
            }
        }
    }
    (InterpTaps { taps: 8, idx, w }, flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn conv_out_shape_ceil_rule() {
        // stride-2, k3, pad1: odd sizes map to ceil(n/2)
        for n in [5usize, 7, 9, 64, 63] {
            let p = Plane::new(n, n).conv_out(3, 2, 1);
            assert_eq!(p.h, n.div_ceil(2));
        }
    }

    #[test]
    fn convt_doubles_and_permutes() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = rng_for(1, "t");
        let up = ConvT2x::init(&mut store, &mut rng, "up", 2, 3, false);
        let p_in = Plane::new(2, 2);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![4, 2], (0..8).map(|i| i as f64).collect()));
        let perm = convt2x_perm_2d(p_in);
        let y = up.forward(&mut tape, &store, x, &perm);
        assert_eq!(tape.value(y).shape(), &[16, 3]);
    }

    #[test]
    fn identity_mlp_passes_input() {
        // one dense layer with identity weights and zero bias
        let mut store = ParamStore::<f64>::new();
        let mut eye = Tensor::zeros(vec![3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let w = store.add("m.w0", eye);
        let b = store.add("m.b0", Tensor::zeros(vec![3]));
        let mlp = Mlp {
            ws: vec![w],
            bs: vec![b],
            widths: vec![3, 3],
        };
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 3], vec![1., -2., 3., 0.5, 0., -1.]));
        let y = mlp.forward(&mut tape, &store, x);
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn trilinear_taps_center_onehot() {
        let v = Vol::new(3, 3, 3);
        let (taps, flags) = trilinear_taps(v, &[[1.5, 1.5, 1.5]]);
        assert!(!flags[0]);
        let total: f64 = taps.w.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // all weight on the center voxel
        let center = (1 * 3 + 1) * 3 + 1;
        for (i, &w) in taps.w.iter().enumerate() {
            if taps.idx[i] as usize == center {
                continue;
            }
            assert!(w.abs() < 1e-12);
        }
    }
}
