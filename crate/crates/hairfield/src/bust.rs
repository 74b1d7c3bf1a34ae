//! Analytic bust: a head sphere plus a shoulder slab, sized proportionally to
//! the canonical bounding box. Replaces a mesh asset for depth rendering and
//! scalp root placement.

use crate::strand::{Aabb, Vec3};

#[derive(Clone, Copy, Debug)]
pub struct Bust {
    pub head_center: Vec3,
    pub head_radius: f64,
    pub shoulder: Aabb,
}

impl Bust {
    /// Proportional fit inside a canonical box (y up, z depth).
    pub fn fitted(bbox: Aabb) -> Bust {
        let w = bbox.max[0] - bbox.min[0];
        let h = bbox.max[1] - bbox.min[1];
        let d = bbox.max[2] - bbox.min[2];
        let cx = bbox.min[0] + 0.5 * w;
        let cz = bbox.min[2] + 0.5 * d;
        let head_radius = 0.1875 * h;
        let head_center = [cx, bbox.min[1] + 0.60 * h, cz];
        let shoulder = Aabb::new(
            [cx - 0.38 * w, bbox.min[1], cz - 0.20 * d],
            [cx + 0.38 * w, bbox.min[1] + 0.22 * h, cz + 0.20 * d],
        );
        Bust {
            head_center,
            head_radius,
            shoulder,
        }
    }

    /// Nearest surface depth (world z) along the +z ray through (x, y),
    /// or None when the ray misses the bust.
    pub fn front_depth(&self, x: f64, y: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        let dx = x - self.head_center[0];
        let dy = y - self.head_center[1];
        let rr = self.head_radius * self.head_radius - dx * dx - dy * dy;
        if rr >= 0.0 {
            best = Some(self.head_center[2] - rr.sqrt());
        }
        let s = &self.shoulder;
        if x >= s.min[0] && x <= s.max[0] && y >= s.min[1] && y <= s.max[1] {
            let z = s.min[2];
            best = Some(best.map_or(z, |b| b.min(z)));
        }
        best
    }

    /// Point and outward normal on the scalp cap. `polar` is the angle from
    /// +y (0 = crown), `azimuth` rotates about the vertical axis.
    pub fn scalp_point(&self, polar: f64, azimuth: f64, lift: f64) -> (Vec3, Vec3) {
        let dir = [
            polar.sin() * azimuth.cos(),
            polar.cos(),
            polar.sin() * azimuth.sin(),
        ];
        let p = [
            self.head_center[0] + (self.head_radius + lift) * dir[0],
            self.head_center[1] + (self.head_radius + lift) * dir[1],
            self.head_center[2] + (self.head_radius + lift) * dir[2],
        ];
        (p, dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_silhouette_center_depth() {
        let bbox = Aabb::new([0.0; 3], [32.0, 32.0, 24.0]);
        let b = Bust::fitted(bbox);
        let d = b
            .front_depth(b.head_center[0], b.head_center[1])
            .expect("center must hit");
        assert!((d - (b.head_center[2] - b.head_radius)).abs() < 1e-12);
    }

    #[test]
    fn miss_is_none() {
        let bbox = Aabb::new([0.0; 3], [32.0, 32.0, 24.0]);
        let b = Bust::fitted(bbox);
        assert!(b.front_depth(0.1, 31.9).is_none());
    }
}
