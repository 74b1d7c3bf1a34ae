//! Voxel grids for 3D orientation/occupancy: voxelization of hair models,
//! trilinear sampling, hole filling and training-point sampling.
//!
//! Grid layout is z-major: `index = (iz * h + iy) * w + ix`, with dims stored
//! as `(d_z, h_y, w_x)`. World axes: x right, y up, z depth.

use crate::err::{Error, Result};
use crate::fmt_io::*;
use crate::rng::{normal, rng_for};
use crate::strand::{add3, dist3, normalize3, scale3, sub3, Aabb, HairModel, Vec3};
use rand::Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

pub const HFLD_MAGIC: &[u8; 4] = b"HFLD";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    /// Voxel counts (d_z, h_y, w_x).
    pub dims: [usize; 3],
    /// World position of the box minimum corner.
    pub origin: [f64; 3],
    /// World units per voxel (cubic voxels).
    pub voxel_size: f64,
}

impl GridSpec {
    pub fn new(dims: [usize; 3], origin: [f64; 3], voxel_size: f64) -> Result<GridSpec> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Invalid("grid dims must be >= 1".into()));
        }
        if voxel_size <= 0.0 {
            return Err(Error::Invalid("voxel size must be > 0".into()));
        }
        Ok(GridSpec {
            dims,
            origin,
            voxel_size,
        })
    }

    /// Canonical grid: origin zero, unit voxels, box `[0,w]x[0,h]x[0,d]`.
    pub fn canonical(dims: [usize; 3]) -> GridSpec {
        GridSpec {
            dims,
            origin: [0.0; 3],
            voxel_size: 1.0,
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn bbox(&self) -> Aabb {
        let e = self.extent();
        Aabb::new(self.origin, add3(self.origin, e))
    }

    /// World extent (x, y, z).
    pub fn extent(&self) -> Vec3 {
        [
            self.dims[2] as f64 * self.voxel_size,
            self.dims[1] as f64 * self.voxel_size,
            self.dims[0] as f64 * self.voxel_size,
        ]
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.dims[1] + iy) * self.dims[2] + ix
    }

    /// Voxel containing a world point, clamped into the grid. The flag is
    /// true when the point was outside.
    pub fn voxel_of(&self, p: Vec3) -> ([usize; 3], bool) {
        let mut clamped = false;
        let mut out = [0usize; 3];
        for (axis, (dim_i, coord)) in [(2usize, p[0]), (1, p[1]), (0, p[2])].iter().enumerate() {
            let rel = (coord - self.origin[axis]) / self.voxel_size;
            let max = self.dims[*dim_i] as f64;
            let mut v = rel.floor();
            if rel < 0.0 {
                v = 0.0;
                clamped = true;
            } else if rel >= max {
                v = max - 1.0;
                clamped = true;
            }
            out[axis] = v as usize;
        }
        (out, clamped) // out = [ix? no: see below]
    }

    /// Voxel center in world coordinates.
    pub fn center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.voxel_size,
            self.origin[1] + (iy as f64 + 0.5) * self.voxel_size,
            self.origin[2] + (iz as f64 + 0.5) * self.voxel_size,
        ]
    }

    /// Continuous grid coordinates of a world point, in voxel units per axis
    /// (x, y, z); voxel centers sit at half-integers.
    pub fn grid_coords(&self, p: Vec3) -> Vec3 {
        [
            (p[0] - self.origin[0]) / self.voxel_size,
            (p[1] - self.origin[1]) / self.voxel_size,
            (p[2] - self.origin[2]) / self.voxel_size,
        ]
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let g = self.grid_coords(p);
        g[0] >= 0.0
            && g[1] >= 0.0
            && g[2] >= 0.0
            && g[0] <= self.dims[2] as f64
            && g[1] <= self.dims[1] as f64
            && g[2] <= self.dims[0] as f64
    }
}

// voxel_of above returns indices in (x, y, z) order despite iterating axes in
// a packed order; keep a dedicated accessor to avoid confusion at call sites.
impl GridSpec {
    #[inline]
    pub fn flat_of(&self, p: Vec3) -> (usize, bool) {
        let (v, clamped) = self.voxel_of(p);
        (self.index(v[0], v[1], v[2]), clamped)
    }
}

/// Shared trilinear setup: 8 flat indices + weights for a world point sampled
/// at voxel centers, clamped at the border.
fn trilinear_setup(spec: &GridSpec, p: Vec3) -> ([usize; 8], [f64; 8], bool) {
    let g = spec.grid_coords(p);
    let mut clamped = !spec.contains(p);
    let (dz, hy, wx) = (spec.dims[0], spec.dims[1], spec.dims[2]);

    let mut axis = |coord: f64, n: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let gpos = coord - 0.5;
        let mut i0 = gpos.floor();
        if i0 < 0.0 {
            i0 = 0.0;
            if gpos < -0.5 {
                clamped = true;
            }
        }
        if i0 > (n - 2) as f64 {
            i0 = (n - 2) as f64;
        }
        let f = (gpos - i0).clamp(0.0, 1.0);
        (i0 as usize, i0 as usize + 1, f)
    };

    let (x0, x1, fx) = axis(g[0], wx);
    let (y0, y1, fy) = axis(g[1], hy);
    let (z0, z1, fz) = axis(g[2], dz);
    let mut idx = [0usize; 8];
    let mut w = [0.0f64; 8];
    let mut k = 0;
    for (zz, wz) in [(z0, 1.0 - fz), (z1, fz)] {
        for (yy, wy) in [(y0, 1.0 - fy), (y1, fy)] {
            for (xx, wxw) in [(x0, 1.0 - fx), (x1, fx)] {
                idx[k] = (zz * hy + yy) * wx + xx;
                w[k] = wz * wy * wxw;
                k += 1;
            }
        }
    }
    (idx, w, clamped)
}

/// Dense per-voxel signed growth directions. Occupied voxels hold unit
/// vectors; unoccupied voxels hold the zero vector.
#[derive(Clone, Debug)]
pub struct OrientationField {
    pub spec: GridSpec,
    pub data: Vec<[f32; 3]>,
}

impl OrientationField {
    pub fn zeros(spec: GridSpec) -> Self {
        OrientationField {
            data: vec![[0.0; 3]; spec.voxel_count()],
            spec,
        }
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> [f32; 3] {
        self.data[self.spec.index(ix, iy, iz)]
    }

    /// Trilinear sample; returns the blended (not renormalized) vector and a
    /// clamp flag for points outside the box.
    pub fn sample_trilinear(&self, p: Vec3) -> (Vec3, bool) {
        let (idx, w, clamped) = trilinear_setup(&self.spec, p);
        let mut out = [0.0f64; 3];
        for k in 0..8 {
            let v = self.data[idx[k]];
            for c in 0..3 {
                out[c] += w[k] * v[c] as f64;
            }
        }
        (out, clamped)
    }

    pub fn occupied_count(&self) -> usize {
        self.data.iter().filter(|v| v.iter().any(|&c| c != 0.0)).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let flat: Vec<f32> = self.data.iter().flat_map(|v| v.iter().copied()).collect();
        save_field(path, FieldKind::Orientation, &self.spec, &flat)
    }

    pub fn load(path: &Path) -> Result<OrientationField> {
        let (kind, spec, flat) = load_field(path)?;
        if kind != FieldKind::Orientation {
            return Err(Error::Format("expected an orientation field".into()));
        }
        let data = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Ok(OrientationField { spec, data })
    }
}

/// Dense hair-presence field; ground truth is binary, predictions in [0,1].
#[derive(Clone, Debug)]
pub struct OccupancyField {
    pub spec: GridSpec,
    pub data: Vec<f32>,
}

impl OccupancyField {
    pub fn zeros(spec: GridSpec) -> Self {
        OccupancyField {
            data: vec![0.0; spec.voxel_count()],
            spec,
        }
    }

    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f32 {
        self.data[self.spec.index(ix, iy, iz)]
    }

    pub fn sample_trilinear(&self, p: Vec3) -> (f64, bool) {
        let (idx, w, clamped) = trilinear_setup(&self.spec, p);
        let mut out = 0.0;
        for k in 0..8 {
            out += w[k] * self.data[idx[k]] as f64;
        }
        (out, clamped)
    }

    pub fn occupied_count(&self, threshold: f32) -> usize {
        self.data.iter().filter(|&&v| v >= threshold).count()
    }

    pub fn occupied_fraction(&self, threshold: f32) -> f64 {
        self.occupied_count(threshold) as f64 / self.data.len() as f64
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_field(path, FieldKind::Occupancy, &self.spec, &self.data)
    }

    pub fn load(path: &Path) -> Result<OccupancyField> {
        let (kind, spec, data) = load_field(path)?;
        if kind != FieldKind::Occupancy {
            return Err(Error::Format("expected an occupancy field".into()));
        }
        Ok(OccupancyField { spec, data })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Orientation,
    Occupancy,
}

fn save_field(path: &Path, kind: FieldKind, spec: &GridSpec, data: &[f32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_magic(&mut w, HFLD_MAGIC)?;
    write_u32(&mut w, if kind == FieldKind::Orientation { 0 } else { 1 })?;
    for d in spec.dims {
        write_u32(&mut w, d as u32)?;
    }
    for o in spec.origin {
        write_f32(&mut w, o as f32)?;
    }
    write_f32(&mut w, spec.voxel_size as f32)?;
    write_f32_slice(&mut w, data)?;
    w.flush()?;
    Ok(())
}

fn load_field(path: &Path) -> Result<(FieldKind, GridSpec, Vec<f32>)> {
    let mut r = BufReader::new(File::open(path)?);
    read_magic(&mut r, HFLD_MAGIC)?;
    let kind = match read_u32(&mut r)? {
        0 => FieldKind::Orientation,
        1 => FieldKind::Occupancy,
        k => return Err(Error::Format(format!("unknown field kind {k}"))),
    };
    let dims = [
        read_u32(&mut r)? as usize,
        read_u32(&mut r)? as usize,
        read_u32(&mut r)? as usize,
    ];
    let origin = [
        read_f32(&mut r)? as f64,
        read_f32(&mut r)? as f64,
        read_f32(&mut r)? as f64,
    ];
    let voxel_size = read_f32(&mut r)? as f64;
    let spec = GridSpec::new(dims, origin, voxel_size)?;
    let n = spec.voxel_count() * if kind == FieldKind::Orientation { 3 } else { 1 };
    let data = read_f32_vec(&mut r, n)?;
    Ok((kind, spec, data))
}

/// Mean-direction norm below which a voxel's accumulated directions are
/// considered cancelling and the first segment's direction wins.
const TIE_NORM: f64 = 1e-3;

/// Voxelize a hair model: every voxel traversed by a segment becomes occupied
/// and receives the normalized mean of traversing unit segment directions.
/// Traversal marks sub-steps of a quarter voxel along each segment.
pub fn voxelize(model: &HairModel, spec: &GridSpec) -> (OrientationField, OccupancyField) {
    let n = spec.voxel_count();
    let mut sum = vec![[0.0f64; 3]; n];
    let mut first: Vec<[f32; 3]> = vec![[0.0; 3]; n];
    let mut count = vec![0u32; n];

    let sub = spec.voxel_size * 0.25;
    for strand in &model.strands {
        for w in strand.points.windows(2) {
            let (a, b) = (w[0], w[1]);
            let seg = sub3(b, a);
            let len = dist3(a, b);
            if len == 0.0 {
                continue;
            }
            let dir = scale3(seg, 1.0 / len);
            let steps = (len / sub).ceil() as usize;
            let mut last_vox = usize::MAX;
            for k in 0..=steps {
                let t = (k as f64 * sub).min(len);
                let p = add3(a, scale3(dir, t));
                let (flat, clamped) = spec.flat_of(p);
                if clamped || flat == last_vox {
                    continue;
                }
                last_vox = flat;
                for c in 0..3 {
                    sum[flat][c] += dir[c];
                }
                if count[flat] == 0 {
                    first[flat] = [dir[0] as f32, dir[1] as f32, dir[2] as f32];
                }
                count[flat] += 1;
            }
        }
    }

    let mut ori = OrientationField::zeros(*spec);
    let mut occ = OccupancyField::zeros(*spec);
    for i in 0..n {
        if count[i] == 0 {
            continue;
        }
        occ.data[i] = 1.0;
        let mean_norm = (sum[i][0] * sum[i][0] + sum[i][1] * sum[i][1] + sum[i][2] * sum[i][2])
            .sqrt()
            / count[i] as f64;
        if mean_norm < TIE_NORM {
            ori.data[i] = first[i];
        } else {
            let u = normalize3(sum[i]);
            ori.data[i] = [u[0] as f32, u[1] as f32, u[2] as f32];
        }
    }
    (ori, occ)
}

/// Fill zero-orientation voxels that have at least two oriented 6-neighbours
/// with the renormalized neighbour mean. Synchronous passes, fixed point or
/// at most `max_passes`. Oriented voxels are never modified.
pub fn fill_holes(f: &OrientationField, max_passes: usize) -> OrientationField {
    let spec = f.spec;
    let (dz, hy, wx) = (spec.dims[0], spec.dims[1], spec.dims[2]);
    let mut cur = f.data.clone();
    for _ in 0..max_passes {
        let mut additions: Vec<(usize, [f32; 3])> = Vec::new();
        for iz in 0..dz {
            for iy in 0..hy {
                for ix in 0..wx {
                    let i = spec.index(ix, iy, iz);
                    if cur[i] != [0.0; 3] {
                        continue;
                    }
                    let mut acc = [0.0f64; 3];
                    let mut n_occ = 0;
                    let mut visit = |j: usize| {
                        let v = cur[j];
                        if v != [0.0; 3] {
                            n_occ += 1;
                            for c in 0..3 {
                                acc[c] += v[c] as f64;
                            }
                        }
                    };
                    if ix > 0 {
                        visit(spec.index(ix - 1, iy, iz));
                    }
                    if ix + 1 < wx {
                        visit(spec.index(ix + 1, iy, iz));
                    }
                    if iy > 0 {
                        visit(spec.index(ix, iy - 1, iz));
                    }
                    if iy + 1 < hy {
                        visit(spec.index(ix, iy + 1, iz));
                    }
                    if iz > 0 {
                        visit(spec.index(ix, iy, iz - 1));
                    }
                    if iz + 1 < dz {
                        visit(spec.index(ix, iy, iz + 1));
                    }
                    if n_occ >= 2 {
                        let u = normalize3(acc);
                        if u != [0.0; 3] {
                            additions.push((i, [u[0] as f32, u[1] as f32, u[2] as f32]));
                        }
                    }
                }
            }
        }
        if additions.is_empty() {
            break;
        }
        for (i, v) in additions {
            cur[i] = v;
        }
    }
    OrientationField { spec, data: cur }
}

/// Exact squared Euclidean distance transform (per-axis lower envelope),
/// distances in voxel units. `occupied` marks sources.
pub fn distance_transform(spec: &GridSpec, occupied: &[bool]) -> Vec<f32> {
    const INF: f64 = 1e18;
    let (dz, hy, wx) = (spec.dims[0], spec.dims[1], spec.dims[2]);
    let mut d: Vec<f64> = occupied.iter().map(|&o| if o { 0.0 } else { INF }).collect();

    fn dt_1d(f: &[f64], out: &mut [f64]) {
        let n = f.len();
        let mut v = vec![0usize; n];
        let mut z = vec![0.0f64; n + 1];
        let mut k = 0usize;
        v[0] = 0;
        z[0] = -INF;
        z[1] = INF;
        for q in 1..n {
            loop {
                let p = v[k];
                let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64))
                    / (2.0 * q as f64 - 2.0 * p as f64);
                if s <= z[k] {
                    if k == 0 {
                        break;
                    }
                    k -= 1;
                } else {
                    k += 1;
                    v[k] = q;
                    z[k] = s;
                    z[k + 1] = INF;
                    break;
                }
            }
        }
        let mut k = 0usize;
        for q in 0..n {
            while z[k + 1] < q as f64 {
                k += 1;
            }
            let p = v[k];
            out[q] = (q as f64 - p as f64) * (q as f64 - p as f64) + f[p];
        }
    }

    // x pass
    let mut buf_in = vec![0.0f64; wx.max(hy).max(dz)];
    let mut buf_out = vec![0.0f64; wx.max(hy).max(dz)];
    for iz in 0..dz {
        for iy in 0..hy {
            for ix in 0..wx {
                buf_in[ix] = d[spec.index(ix, iy, iz)];
            }
            dt_1d(&buf_in[..wx], &mut buf_out[..wx]);
            for ix in 0..wx {
                d[spec.index(ix, iy, iz)] = buf_out[ix];
            }
        }
    }
    // y pass
    for iz in 0..dz {
        for ix in 0..wx {
            for iy in 0..hy {
                buf_in[iy] = d[spec.index(ix, iy, iz)];
            }
            dt_1d(&buf_in[..hy], &mut buf_out[..hy]);
            for iy in 0..hy {
                d[spec.index(ix, iy, iz)] = buf_out[iy];
            }
        }
    }
    // z pass
    for iy in 0..hy {
        for ix in 0..wx {
            for iz in 0..dz {
                buf_in[iz] = d[spec.index(ix, iy, iz)];
            }
            dt_1d(&buf_in[..dz], &mut buf_out[..dz]);
            for iz in 0..dz {
                d[spec.index(ix, iy, iz)] = buf_out[iz];
            }
        }
    }
    d.into_iter().map(|v| (v.max(0.0)).sqrt() as f32).collect()
}

/// One supervised sample for field training.
#[derive(Clone, Copy, Debug)]
pub struct TrainingSample {
    pub p: Vec3,
    pub target_ori: [f32; 3],
    pub target_occ: f32,
    pub weight: f32,
}

/// Mixture sampler: half the points jitter around random strand points with an
/// isotropic Gaussian (std `sigma`, voxel units); half are uniform in the box,
/// accepted with probability exp(-dist^2 / (2 sigma^2)) where dist is the
/// distance to the nearest occupied voxel. Targets are read from the fields;
/// weights come from `weight_fn`.
pub fn sample_training_points(
    model: &HairModel,
    ori: &OrientationField,
    occ: &OccupancyField,
    n: usize,
    sigma: f64,
    seed: u64,
    weight_fn: &dyn Fn(Vec3) -> f32,
) -> Result<Vec<TrainingSample>> {
    if model.strands.is_empty() {
        return Err(Error::EmptyModel);
    }
    if n == 0 || sigma <= 0.0 {
        return Err(Error::Invalid("need n >= 1 and sigma > 0".into()));
    }
    let spec = ori.spec;
    let occupied: Vec<bool> = occ.data.iter().map(|&v| v >= 0.5).collect();
    let dist = distance_transform(&spec, &occupied);
    let bbox = spec.bbox();
    let ext = spec.extent();
    let mut rng = rng_for(seed, "training-points");

    // flattened strand point list for the jitter arm
    let points: Vec<Vec3> = model
        .strands
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .collect();

    let mut out = Vec::with_capacity(n);
    let n_jitter = n / 2;
    let sigma_world = sigma * spec.voxel_size;
    while out.len() < n_jitter {
        let base = points[rng.gen_range(0..points.len())];
        let p = [
            base[0] + normal(&mut rng) * sigma_world,
            base[1] + normal(&mut rng) * sigma_world,
            base[2] + normal(&mut rng) * sigma_world,
        ];
        if !bbox.contains(p, 0.0) {
            continue;
        }
        out.push(make_sample(p, ori, occ, weight_fn));
    }

    let mut attempts = 0usize;
    let max_attempts = 1000 * n.max(16);
    while out.len() < n {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::Invalid(
                "uniform-arm acceptance too low; increase sigma".into(),
            ));
        }
        let p = [
            spec.origin[0] + rng.gen::<f64>() * ext[0],
            spec.origin[1] + rng.gen::<f64>() * ext[1],
            spec.origin[2] + rng.gen::<f64>() * ext[2],
        ];
        let (flat, _) = spec.flat_of(p);
        let dv = dist[flat] as f64;
        let accept = (-dv * dv / (2.0 * sigma * sigma)).exp();
        if rng.gen::<f64>() < accept {
            out.push(make_sample(p, ori, occ, weight_fn));
        }
    }
    Ok(out)
}

fn make_sample(
    p: Vec3,
    ori: &OrientationField,
    occ: &OccupancyField,
    weight_fn: &dyn Fn(Vec3) -> f32,
) -> TrainingSample {
    let (flat, _) = ori.spec.flat_of(p);
    TrainingSample {
        p,
        target_ori: ori.data[flat],
        target_occ: if occ.data[flat] >= 0.5 { 1.0 } else { 0.0 },
        weight: weight_fn(p),
    }
}
