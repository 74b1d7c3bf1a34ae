//! Network inputs from a rendered (or provided) image: 2D orientation map via
//! an even Gabor bank, luminance map (CIE L*), bust depth map, plus the strand
//! rasterizer used to build synthetic training data.
//!
//! Image coordinates: u right, v down, pixel centers at half-integers. The
//! orthographic projection maps world x to u and world y (up) to v (down);
//! depth is the world z coordinate in voxel units.

use crate::bust::Bust;
use crate::err::{Error, Result};
use crate::field::GridSpec;
use crate::strand::{dot3, normalize3, sub3, HairModel, Vec3};
use rayon::prelude::*;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const ORI2D_SENTINEL: f32 = -1.0;
pub const DEPTH_SENTINEL: f32 = f32::INFINITY;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapKind {
    Rgb,
    Ori2d,
    Luma,
    Depth,
    Mask,
}

/// Row-major f32 image with interleaved channels.
#[derive(Clone, Debug)]
pub struct ImageMap {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub kind: MapKind,
    pub data: Vec<f32>,
}

impl ImageMap {
    pub fn new(width: usize, height: usize, channels: usize, kind: MapKind, fill: f32) -> Self {
        ImageMap {
            width,
            height,
            channels,
            kind,
            data: vec![fill; width * height * channels],
        }
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize, c: usize) -> f32 {
        self.data[(v * self.width + u) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, u: usize, v: usize, c: usize) -> &mut f32 {
        &mut self.data[(v * self.width + u) * self.channels + c]
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Orthographic camera looking along +z; the world box maps onto the full
/// image extent.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub img_w: usize,
    pub img_h: usize,
    pub origin: Vec3,
    pub world_w: f64,
    pub world_h: f64,
    pub voxel_size: f64,
}

impl Projection {
    pub fn from_grid(spec: &GridSpec, img_w: usize, img_h: usize) -> Projection {
        let e = spec.extent();
        Projection {
            img_w,
            img_h,
            origin: spec.origin,
            world_w: e[0],
            world_h: e[1],
            voxel_size: spec.voxel_size,
        }
    }

    /// World point to continuous pixel coordinates (u, v).
    #[inline]
    pub fn to_pixel(&self, p: Vec3) -> [f64; 2] {
        [
            (p[0] - self.origin[0]) / self.world_w * self.img_w as f64,
            (1.0 - (p[1] - self.origin[1]) / self.world_h) * self.img_h as f64,
        ]
    }

    /// Depth of a world point in voxel units along the camera axis.
    #[inline]
    pub fn depth_voxels(&self, p: Vec3) -> f64 {
        (p[2] - self.origin[2]) / self.voxel_size
    }

    /// Inverse of [`Self::to_pixel`] at a given depth (voxel units).
    #[inline]
    pub fn pixel_to_world(&self, u: f64, v: f64, depth_voxels: f64) -> Vec3 {
        [
            self.origin[0] + u / self.img_w as f64 * self.world_w,
            self.origin[1] + (1.0 - v / self.img_h as f64) * self.world_h,
            self.origin[2] + depth_voxels * self.voxel_size,
        ]
    }
}

/// Fixed directional light for the tangent shading term.
const LIGHT: Vec3 = [0.2, 0.9, -0.37];

/// Z-buffered anti-aliased polyline rasterization with tangent-based shading,
/// so rendered luminance correlates with local strand direction. Returns the
/// gray RGB render, the coverage mask and the hair front-depth buffer
/// (voxel units, +inf where no hair covers the pixel).
pub fn rasterize_strands(
    model: &HairModel,
    proj: &Projection,
) -> (ImageMap, ImageMap, ImageMap) {
    let (w, h) = (proj.img_w, proj.img_h);
    let mut rgb = ImageMap::new(w, h, 3, MapKind::Rgb, 0.0);
    let mut mask = ImageMap::new(w, h, 1, MapKind::Mask, 0.0);
    let mut depth = ImageMap::new(w, h, 1, MapKind::Depth, DEPTH_SENTINEL);
    let light = normalize3(LIGHT);

    for strand in &model.strands {
        for seg in strand.points.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let pa = proj.to_pixel(a);
            let pb = proj.to_pixel(b);
            let tangent = normalize3(sub3(b, a));
            let shade = (0.3 + 0.7 * dot3(tangent, light).abs()) as f32;
            let dz = (proj.depth_voxels(b) - proj.depth_voxels(a), proj.depth_voxels(a));
            let span = ((pb[0] - pa[0]).abs()).max((pb[1] - pa[1]).abs());
            let steps = (span / 0.4).ceil().max(1.0) as usize;
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                let u = pa[0] + t * (pb[0] - pa[0]);
                let v = pa[1] + t * (pb[1] - pa[1]);
                let z = (dz.1 + t * dz.0) as f32;
                splat(&mut rgb, &mut mask, &mut depth, u, v, z, shade);
            }
        }
    }
    (rgb, mask, depth)
}

/// Bilinear splat of one sample into the four neighbouring pixels with a
/// strict-nearer z test per pixel.
fn splat(rgb: &mut ImageMap, mask: &mut ImageMap, depth: &mut ImageMap, u: f64, v: f64, z: f32, shade: f32) {
    let (w, h) = (rgb.width as i64, rgb.height as i64);
    let gu = u - 0.5;
    let gv = v - 0.5;
    let u0 = gu.floor() as i64;
    let v0 = gv.floor() as i64;
    let fu = gu - u0 as f64;
    let fv = gv - v0 as f64;
    for (dv, wv) in [(0i64, 1.0 - fv), (1, fv)] {
        for (du, wu) in [(0i64, 1.0 - fu), (1, fu)] {
            let (px, py) = (u0 + du, v0 + dv);
            if px < 0 || py < 0 || px >= w || py >= h {
                continue;
            }
            let weight = (wu * wv) as f32;
            if weight <= 1e-4 {
                continue;
            }
            let (ux, vy) = (px as usize, py as usize);
            let m = mask.at_mut(ux, vy, 0);
            *m = m.max(weight);
            let dcur = depth.at_mut(ux, vy, 0);
            if z < *dcur {
                *dcur = z;
                let val = shade * weight.max(0.6); // soften AA darkening inside the core
                for c in 0..3 {
                    *rgb.at_mut(ux, vy, c) = val;
                }
            }
        }
    }
}

/// CIE L* of a single sRGB value triplet (components in [0,1]).
pub fn srgb_to_lab_l(r: f64, g: f64, b: f64) -> f64 {
    fn lin(c: f64) -> f64 {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    let y = 0.2126 * lin(r) + 0.7152 * lin(g) + 0.0722 * lin(b);
    let d = 6.0 / 29.0;
    let f = if y > d * d * d {
        y.cbrt()
    } else {
        y / (3.0 * d * d) + 4.0 / 29.0
    };
    116.0 * f - 16.0
}

/// Luminance map: the L* channel of sRGB -> XYZ(D65) -> L*a*b*, range [0,100].
pub fn luminance_map(img: &ImageMap) -> Result<ImageMap> {
    if img.kind != MapKind::Rgb || img.channels != 3 {
        return Err(Error::Invalid("luminance_map expects an RGB image".into()));
    }
    let mut out = ImageMap::new(img.width, img.height, 1, MapKind::Luma, 0.0);
    out.data
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, o)| {
            let r = img.data[i * 3] as f64;
            let g = img.data[i * 3 + 1] as f64;
            let b = img.data[i * 3 + 2] as f64;
            *o = srgb_to_lab_l(r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0)) as f32;
        });
    Ok(out)
}

/// Even (cosine) Gabor bank over K orientations uniform in [0, pi).
#[derive(Clone, Debug)]
pub struct GaborBank {
    pub orientations: usize,
    pub wavelength: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub radius: usize,
    kernels: Vec<Vec<f32>>,
}

impl GaborBank {
    pub fn new(orientations: usize, wavelength: f64, sigma: f64) -> Result<GaborBank> {
        if orientations < 4 {
            return Err(Error::Config("gabor bank needs at least 4 orientations".into()));
        }
        let gamma = 0.5;
        let radius = (2.5 * sigma).ceil() as usize;
        let size = 2 * radius + 1;
        let mut kernels = Vec::with_capacity(orientations);
        for k in 0..orientations {
            let theta = std::f64::consts::PI * k as f64 / orientations as f64;
            let (s, c) = theta.sin_cos();
            let mut ker = vec![0.0f32; size * size];
            let mut mean = 0.0f64;
            for (i, kv) in ker.iter_mut().enumerate() {
                let y = (i / size) as f64 - radius as f64;
                let x = (i % size) as f64 - radius as f64;
                // a runs along the detected structure, b across it
                let a = x * c + y * s;
                let b = -x * s + y * c;
                let env = (-(gamma * gamma * a * a + b * b) / (2.0 * sigma * sigma)).exp();
                let val = env * (std::f64::consts::TAU * b / wavelength).cos();
                *kv = val as f32;
                mean += val;
            }
            // zero-mean so flat regions give no response
            let mean = (mean / (size * size) as f64) as f32;
            for kv in ker.iter_mut() {
                *kv -= mean;
            }
            kernels.push(ker);
        }
        Ok(GaborBank {
            orientations,
            wavelength,
            sigma,
            gamma,
            radius,
            kernels,
        })
    }

    pub fn default_bank() -> GaborBank {
        GaborBank::new(32, 4.0, 2.0).expect("default bank is valid")
    }

    /// |response| of kernel k at pixel (u, v) with clamped borders.
    fn response(&self, img: &ImageMap, u: usize, v: usize, k: usize) -> f64 {
        let size = 2 * self.radius + 1;
        let ker = &self.kernels[k];
        let mut acc = 0.0f64;
        for ky in 0..size {
            let y = (v as i64 + ky as i64 - self.radius as i64).clamp(0, img.height as i64 - 1) as usize;
            for kx in 0..size {
                let x = (u as i64 + kx as i64 - self.radius as i64).clamp(0, img.width as i64 - 1) as usize;
                acc += ker[ky * size + kx] as f64 * img.at(x, y, 0) as f64;
            }
        }
        acc.abs()
    }
}

/// Per-pixel dominant orientation of masked pixels: argmax over the bank,
/// refined by parabolic interpolation across neighbouring orientations.
/// Unmasked pixels carry the sentinel. Angles are in [0, pi), measured from
/// the image u axis towards the v axis.
pub fn orientation_map(img: &ImageMap, bank: &GaborBank, mask: &ImageMap) -> Result<ImageMap> {
    if img.channels != 1 {
        return Err(Error::Invalid("orientation_map expects a single-channel image".into()));
    }
    if img.width != mask.width || img.height != mask.height {
        return Err(Error::shape(
            "orientation_map mask",
            format!("{}x{}", img.width, img.height),
            format!("{}x{}", mask.width, mask.height),
        ));
    }
    let k_n = bank.orientations;
    let mut out = ImageMap::new(img.width, img.height, 1, MapKind::Ori2d, ORI2D_SENTINEL);
    let width = img.width;
    out.data
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(v, row)| {
            for (u, o) in row.iter_mut().enumerate() {
                if mask.at(u, v, 0) < 0.5 {
                    continue;
                }
                let responses: Vec<f64> = (0..k_n).map(|k| bank.response(img, u, v, k)).collect();
                let (mut best_k, mut best) = (0usize, f64::MIN);
                for (k, &r) in responses.iter().enumerate() {
                    if r > best {
                        best = r;
                        best_k = k;
                    }
                }
                let rm = responses[(best_k + k_n - 1) % k_n];
                let rp = responses[(best_k + 1) % k_n];
                let denom = rm - 2.0 * best + rp;
                let delta = if denom.abs() > 1e-12 {
                    (0.5 * (rm - rp) / denom).clamp(-0.5, 0.5)
                } else {
                    0.0
                };
                let mut theta = (best_k as f64 + delta) * std::f64::consts::PI / k_n as f64;
                theta = theta.rem_euclid(std::f64::consts::PI);
                *o = theta as f32;
            }
        });
    Ok(out)
}

/// Nearest-surface depth of the union of the analytic bust and (optionally)
/// the hair front surface, in voxel units; +inf where neither covers.
pub fn bust_depth_map(
    proj: &Projection,
    bust: &Bust,
    hair_depth: Option<&ImageMap>,
) -> ImageMap {
    let mut out = ImageMap::new(proj.img_w, proj.img_h, 1, MapKind::Depth, DEPTH_SENTINEL);
    for v in 0..proj.img_h {
        for u in 0..proj.img_w {
            let wpt = proj.pixel_to_world(u as f64 + 0.5, v as f64 + 0.5, 0.0);
            let mut d = bust
                .front_depth(wpt[0], wpt[1])
                .map(|z| ((z - proj.origin[2]) / proj.voxel_size) as f32)
                .unwrap_or(DEPTH_SENTINEL);
            if let Some(hd) = hair_depth {
                d = d.min(hd.at(u, v, 0));
            }
            *out.at_mut(u, v, 0) = d;
        }
    }
    out
}

/// Depth map used by the visibility weighting: the hair front depth where hair
/// covers the pixel, sentinel elsewhere (so off-hair points weigh 1).
pub fn visibility_depth_map(hair_depth: &ImageMap, mask: &ImageMap) -> ImageMap {
    let mut out = ImageMap::new(hair_depth.width, hair_depth.height, 1, MapKind::Depth, DEPTH_SENTINEL);
    for i in 0..out.data.len() {
        if mask.data[i] >= 0.5 {
            out.data[i] = hair_depth.data[i];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// PGM / PFM import & export
// ---------------------------------------------------------------------------

/// PFM (portable float map), little-endian, rows bottom-to-top. Grayscale
/// ("Pf") for 1-channel maps, color ("PF") for 3-channel.
pub fn write_pfm(img: &ImageMap, path: &Path) -> Result<()> {
    if img.channels != 1 && img.channels != 3 {
        return Err(Error::Invalid("pfm supports 1 or 3 channels".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    let tag = if img.channels == 1 { "Pf" } else { "PF" };
    write!(w, "{tag}\n{} {}\n-1.0\n", img.width, img.height)?;
    for v in (0..img.height).rev() {
        let row = &img.data[v * img.width * img.channels..(v + 1) * img.width * img.channels];
        let mut buf = Vec::with_capacity(row.len() * 4);
        for x in row {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pfm(path: &Path, kind: MapKind) -> Result<ImageMap> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    let mut fields = 0;
    // header: tag, "w h", scale, each newline-terminated
    while fields < 3 {
        let mut b = [0u8; 1];
        r.read_exact(&mut b)?;
        if b[0] == b'\n' {
            fields += 1;
        }
        header.push(b[0]);
    }
    let text = String::from_utf8(header).map_err(|_| Error::Format("bad pfm header".into()))?;
    let mut it = text.split_whitespace();
    let tag = it.next().ok_or_else(|| Error::Format("empty pfm".into()))?;
    let channels = match tag {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(Error::Format(format!("bad pfm tag {tag}"))),
    };
    let width: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad pfm width".into()))?;
    let height: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad pfm height".into()))?;
    let scale: f64 = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format("bad pfm scale".into()))?;
    if scale >= 0.0 {
        return Err(Error::Format("big-endian pfm not supported".into()));
    }
    let mut data = vec![0f32; width * height * channels];
    let mut buf = vec![0u8; width * channels * 4];
    for v in (0..height).rev() {
        r.read_exact(&mut buf)?;
        let row = &mut data[v * width * channels..(v + 1) * width * channels];
        for (i, c) in buf.chunks_exact(4).enumerate() {
            row[i] = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
    }
    Ok(ImageMap {
        width,
        height,
        channels,
        kind,
        data,
    })
}

/// 8-bit PGM (P5, single channel) / PPM (P6, RGB). Values are clamped to
/// [0,1] and quantized; used for previews and masks.
pub fn write_pgm(img: &ImageMap, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let (tag, ch) = match img.channels {
        1 => ("P5", 1),
        3 => ("P6", 3),
        _ => return Err(Error::Invalid("pgm supports 1 or 3 channels".into())),
    };
    write!(w, "{tag}\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    assert_eq!(bytes.len(), img.width * img.height * ch);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn read_pgm(path: &Path, kind: MapKind) -> Result<ImageMap> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = Vec::new();
    let mut fields = 0;
    while fields < 4 {
        let mut b = [0u8; 1];
        r.read_exact(&mut b)?;
        if b[0].is_ascii_whitespace() {
            // collapse consecutive whitespace
            if head.last().map(|&l: &u8| l != b' ').unwrap_or(false) {
                fields += 1;
            }
            if fields < 4 {
                head.push(b' ');
            }
        } else {
            head.push(b[0]);
        }
    }
    let text = String::from_utf8(head).map_err(|_| Error::Format("bad pgm header".into()))?;
    let mut it = text.split_whitespace();
    let tag = it.next().ok_or_else(|| Error::Format("empty pgm".into()))?;
    let channels = match tag {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(Error::Format(format!("bad pgm tag {tag}"))),
    };
    let width: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| Error::Format("bad width".into()))?;
    let height: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| Error::Format("bad height".into()))?;
    let maxval: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| Error::Format("bad maxval".into()))?;
    if maxval != 255 {
        return Err(Error::Format("only 8-bit pgm supported".into()));
    }
    let mut buf = vec![0u8; width * height * channels];
    r.read_exact(&mut buf)?;
    Ok(ImageMap {
        width,
        height,
        channels,
        kind,
        data: buf.iter().map(|&b| b as f32 / 255.0).collect(),
    })
}
