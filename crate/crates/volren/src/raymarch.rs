//! Differentiable front-to-back raymarching with saturating transmittance.
//!
//! Discretization per step of length `delta` at sample point x:
//!   alpha_s = sum_k a_k(x), e_s = sum_k rgb_k(x) * a_k(x), h_s = sum_hair a_k(x)
//!   w = min(alpha_s * delta, 1 - acc)
//!   rgb  += e_s * w / alpha_s   (== e_s * delta when unsaturated)
//!   mask += h_s * w / alpha_s
//!   acc  += w, stopping once acc reaches 1 exactly
//! and finally rgb += (1 - acc) * bg. Overlapping primitives are summed per
//! step before clamping. mask <= alpha holds exactly because h_s <= alpha_s.
//!
//! The backward pass re-marches each ray, then runs a reverse sweep over the
//! recorded steps carrying the sensitivity of the loss to the accumulated
//! opacity; it yields gradients w.r.t. voxel payloads, translations and
//! scales (pose rotations are treated as constants).

use crate::bvh::{Aabb, Bvh};
use crate::camera::{Camera, Ray};
use crate::primitive::PrimitiveSet;
use rayon::prelude::*;
use wigkit_geom::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelSample {
    pub rgb: [f64; 3],
    pub alpha: f64,
    pub mask: f64,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Channel-major [3*H*W].
    pub rgb: Vec<f64>,
    pub alpha: Vec<f64>,
    pub mask: Vec<f64>,
}

pub struct RenderGrads {
    /// Per primitive, voxel-interleaved RGBA like the payload.
    pub d_payload: Vec<Vec<f64>>,
    pub d_translation: Vec<Vec3>,
    pub d_scale: Vec<f64>,
}

impl RenderGrads {
    fn zeros(set: &PrimitiveSet) -> Self {
        Self {
            d_payload: set.prims.iter().map(|p| vec![0.0; p.payload.len()]).collect(),
            d_translation: vec![Vec3::zeros(); set.len()],
            d_scale: vec![0.0; set.len()],
        }
    }

    fn add_assign(&mut self, other: &RenderGrads) {
        for (a, b) in self.d_payload.iter_mut().zip(&other.d_payload) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.d_translation.iter_mut().zip(&other.d_translation) {
            *a += b;
        }
        for (a, b) in self.d_scale.iter_mut().zip(&other.d_scale) {
            *a += b;
        }
    }
}

pub fn world_aabbs(set: &PrimitiveSet) -> Vec<Aabb> {
    set.prims
        .iter()
        .map(|p| {
            let e = p.support_half_extent(set.resolution);
            // world half-extent along axis k: e * sum_j |R[j][k]|
            let r = &p.rotation;
            let half = Vec3::new(
                e * (r[(0, 0)].abs() + r[(1, 0)].abs() + r[(2, 0)].abs()),
                e * (r[(0, 1)].abs() + r[(1, 1)].abs() + r[(2, 1)].abs()),
                e * (r[(0, 2)].abs() + r[(1, 2)].abs() + r[(2, 2)].abs()),
            );
            Aabb { min: p.translation - half, max: p.translation + half }
        })
        .collect()
}

/// Trilinear payload sample at local coordinate u, including the 8 corner
/// voxels with weights and the spatial gradient (for the backward pass).
struct TriSample {
    rgba: [f64; 4],
    corners: [(u32, f64); 8],
    n_corners: u8,
    /// d rgba[c] / d u[axis]
    grad_u: [[f64; 3]; 4],
}

fn sample_payload(payload: &[f64], m: usize, u: &Vec3, with_grad: bool) -> TriSample {
    let mut out = TriSample {
        rgba: [0.0; 4],
        corners: [(0, 0.0); 8],
        n_corners: 0,
        grad_u: [[0.0; 3]; 4],
    };
    let mf = m as f64;
    // grid coordinate: voxel centers at (i + 0.5) * 2/m - 1
    let gx = (u.x + 1.0) * mf * 0.5 - 0.5;
    let gy = (u.y + 1.0) * mf * 0.5 - 0.5;
    let gz = (u.z + 1.0) * mf * 0.5 - 0.5;
    if gx <= -1.0 || gx >= mf || gy <= -1.0 || gy >= mf || gz <= -1.0 || gz >= mf {
        return out;
    }
    let fx = gx.floor();
    let fy = gy.floor();
    let fz = gz.floor();
    let (ix, iy, iz) = (fx as isize, fy as isize, fz as isize);
    let (tx, ty, tz) = (gx - fx, gy - fy, gz - fz);
    let wx = [1.0 - tx, tx];
    let wy = [1.0 - ty, ty];
    let wz = [1.0 - tz, tz];
    let dscale = mf * 0.5; // d grid / d u
    for dz in 0..2isize {
        let z = iz + dz;
        if z < 0 || z >= m as isize {
            continue;
        }
        for dy in 0..2isize {
            let y = iy + dy;
            if y < 0 || y >= m as isize {
                continue;
            }
            for dx in 0..2isize {
                let x = ix + dx;
                if x < 0 || x >= m as isize {
                    continue;
                }
                let vox = (x + m as isize * (y + m as isize * z)) as usize;
                let w = wx[dx as usize] * wy[dy as usize] * wz[dz as usize];
                let base = 4 * vox;
                for c in 0..4 {
                    out.rgba[c] += w * payload[base + c];
                }
                out.corners[out.n_corners as usize] = (vox as u32, w);
                out.n_corners += 1;
                if with_grad {
                    let sx = if dx == 0 { -1.0 } else { 1.0 };
                    let sy = if dy == 0 { -1.0 } else { 1.0 };
                    let sz = if dz == 0 { -1.0 } else { 1.0 };
                    let gwx = sx * wy[dy as usize] * wz[dz as usize] * dscale;
                    let gwy = sy * wx[dx as usize] * wz[dz as usize] * dscale;
                    let gwz = sz * wx[dx as usize] * wy[dy as usize] * dscale;
                    for c in 0..4 {
                        let v = payload[base + c];
                        out.grad_u[c][0] += gwx * v;
                        out.grad_u[c][1] += gwy * v;
                        out.grad_u[c][2] += gwz * v;
                    }
                }
            }
        }
    }
    out
}

struct StepSample {
    prim: u32,
    rgba: [f64; 4],
    local: Vec3,
}

/// Shared marching loop. `visit` sees each sample step with the per-primitive
/// samples, the aggregate sums and the step weight; it returns the updated
/// accumulated opacity state internally.
fn march_core<F>(set: &PrimitiveSet, bvh: &Bvh, ray: &Ray, delta: f64, mut visit: F) -> f64
where
    F: FnMut(&[StepSample], f64, [f64; 3], f64, f64, bool, f64),
{
    let hits = bvh.ray_intervals(&ray.origin, &ray.dir, 1e-9, f64::INFINITY);
    if hits.is_empty() {
        return 0.0;
    }
    // enter/exit events sorted by depth
    let mut events: Vec<(f64, bool, u32)> = Vec::with_capacity(hits.len() * 2);
    for h in &hits {
        events.push((h.t_enter, true, h.prim as u32));
        events.push((h.t_exit, false, h.prim as u32));
    }
    events.sort_by(|a, b| (a.0, !a.1, a.2).partial_cmp(&(b.0, !b.1, b.2)).unwrap());
    let t_start = events[0].0;
    let t_end = events.last().unwrap().0;
    // absolute sample grid (multiples of delta): sample positions do not move
    // with primitive poses, so samples enter and leave the marched range only
    // where the interpolated field is exactly zero (the AABB boundary lies
    // outside the rotated support). This keeps the pose gradients exact.
    let n0 = (t_start / delta).floor().max(0.0) as u64;
    let n1 = (t_end / delta).ceil() as u64;

    let m = set.resolution;
    let mut active: Vec<u32> = Vec::with_capacity(8);
    let mut ev = 0usize;
    let mut acc = 0.0f64;
    let mut samples: Vec<StepSample> = Vec::with_capacity(8);
    for s in n0..n1 {
        let l = (s as f64 + 0.5) * delta;
        while ev < events.len() && events[ev].0 <= l {
            let (_, enter, prim) = events[ev];
            if enter {
                let pos = active.partition_point(|&p| p < prim);
                active.insert(pos, prim);
            } else if let Ok(pos) = active.binary_search(&prim) {
                active.remove(pos);
            }
            ev += 1;
        }
        if active.is_empty() {
            continue;
        }
        let x = ray.origin + ray.dir * l;
        samples.clear();
        let mut alpha_s = 0.0;
        let mut e = [0.0f64; 3];
        let mut h = 0.0;
        for &pi in &active {
            let prim = &set.prims[pi as usize];
            let u = prim.rotation * (x - prim.translation) / prim.scale;
            let tri = sample_payload(&prim.payload, m, &u, false);
            let a = tri.rgba[3];
            if a != 0.0 {
                alpha_s += a;
                for c in 0..3 {
                    e[c] += tri.rgba[c] * a;
                }
                if prim.is_hair {
                    h += a;
                }
            }
            samples.push(StepSample { prim: pi, rgba: tri.rgba, local: u });
        }
        let remaining = 1.0 - acc;
        let saturated = alpha_s * delta >= remaining;
        let w = if saturated { remaining } else { alpha_s * delta };
        visit(&samples, alpha_s, e, h, w, saturated, acc);
        if saturated {
            acc = 1.0;
            break;
        }
        acc += w;
    }
    acc
}

/// Forward march of one pixel ray.
pub fn march_pixel(set: &PrimitiveSet, bvh: &Bvh, ray: &Ray, bg: [f64; 3], delta: f64) -> PixelSample {
    let mut rgb = [0.0f64; 3];
    let mut mask = 0.0f64;
    let acc = march_core(set, bvh, ray, delta, |_, alpha_s, e, h, w, saturated, _| {
        if alpha_s == 0.0 {
            return;
        }
        let p = if saturated { w / alpha_s } else { delta };
        for c in 0..3 {
            rgb[c] += e[c] * p;
        }
        mask += h * p;
    });
    for c in 0..3 {
        rgb[c] += (1.0 - acc) * bg[c];
    }
    PixelSample { rgb, alpha: acc, mask }
}

/// Renders all pixels, parallel over rows.
pub fn render(set: &PrimitiveSet, cam: &Camera, bg: [f64; 3], delta: f64) -> RenderOutput {
    let (w, h) = (cam.width, cam.height);
    let bvh = Bvh::build(&world_aabbs(set));
    let mut rgb = vec![0.0f64; 3 * w * h];
    let mut alpha = vec![0.0f64; w * h];
    let mut mask = vec![0.0f64; w * h];
    let rows: Vec<Vec<PixelSample>> = (0..h)
        .into_par_iter()
        .map(|py| (0..w).map(|px| march_pixel(set, &bvh, &cam.pixel_ray(px, py), bg, delta)).collect())
        .collect();
    for (py, row) in rows.iter().enumerate() {
        for (px, s) in row.iter().enumerate() {
            let i = py * w + px;
            for c in 0..3 {
                rgb[c * w * h + i] = s.rgb[c];
            }
            alpha[i] = s.alpha;
            mask[i] = s.mask;
        }
    }
    RenderOutput { width: w, height: h, rgb, alpha, mask }
}

struct StepRecord {
    start: u32,
    len: u32,
    alpha_s: f64,
    e: [f64; 3],
    h: f64,
    w: f64,
    saturated: bool,
}

#[allow(clippy::too_many_arguments)]
fn march_pixel_backward(
    set: &PrimitiveSet,
    bvh: &Bvh,
    ray: &Ray,
    delta: f64,
    bg: [f64; 3],
    gr: [f64; 3],
    ga: f64,
    gm: f64,
    grads: &mut RenderGrads,
) {
    // re-march, recording every step's per-primitive samples
    let mut flat: Vec<StepSample> = Vec::new();
    let mut steps: Vec<StepRecord> = Vec::new();
    let acc = march_core(set, bvh, ray, delta, |samples, alpha_s, e, h, w, saturated, _| {
        let start = flat.len() as u32;
        flat.extend(samples.iter().map(|s| StepSample { prim: s.prim, rgba: s.rgba, local: s.local }));
        steps.push(StepRecord { start, len: samples.len() as u32, alpha_s, e, h, w, saturated });
    });

    let _ = acc;
    // lambda = d loss / d (acc after the step being processed); seeded from
    // the final composite rgb += (1 - acc_N) * bg and the alpha output.
    let mut lambda = ga - (gr[0] * bg[0] + gr[1] * bg[1] + gr[2] * bg[2]);

    let m = set.resolution;
    for step in steps.iter().rev() {
        let samples = &flat[step.start as usize..(step.start + step.len) as usize];
        if step.alpha_s == 0.0 {
            // nothing contributed; opacity locally flat in everything except
            // adding density: unsaturated with alpha==0
            if !step.saturated {
                for s in samples {
                    let d_alpha_k = lambda * delta
                        + (gr[0] * s.rgba[0] + gr[1] * s.rgba[1] + gr[2] * s.rgba[2]) * delta
                        + gm * delta * set.prims[s.prim as usize].is_hair as u8 as f64;
                    // rgb gradient is zero (alpha_k == 0)
                    scatter_sample_grads(set, m, s, [0.0; 3], d_alpha_k, grads);
                }
            }
            continue;
        }
        let p = step.w / step.alpha_s;
        let f_term = gr[0] * step.e[0] + gr[1] * step.e[1] + gr[2] * step.e[2] + gm * step.h;
        if step.saturated {
            // w = 1 - acc_before; P = w/alpha
            let d_p = f_term; // d loss / d P
            let inv_a = 1.0 / step.alpha_s;
            for s in samples {
                let a_k = s.rgba[3];
                let mut d_rgb_k = [0.0f64; 3];
                for c in 0..3 {
                    d_rgb_k[c] = gr[c] * a_k * p;
                }
                let is_hair = set.prims[s.prim as usize].is_hair as u8 as f64;
                let d_alpha_k = -d_p * step.w * inv_a * inv_a
                    + (gr[0] * s.rgba[0] + gr[1] * s.rgba[1] + gr[2] * s.rgba[2]) * p
                    + gm * is_hair * p;
                scatter_sample_grads(set, m, s, d_rgb_k, d_alpha_k, grads);
            }
            lambda = -f_term * inv_a;
        } else {
            // w = alpha * delta; P = delta exactly
            for s in samples {
                let a_k = s.rgba[3];
                let mut d_rgb_k = [0.0f64; 3];
                for c in 0..3 {
                    d_rgb_k[c] = gr[c] * a_k * delta;
                }
                let is_hair = set.prims[s.prim as usize].is_hair as u8 as f64;
                let d_alpha_k = lambda * delta
                    + (gr[0] * s.rgba[0] + gr[1] * s.rgba[1] + gr[2] * s.rgba[2]) * delta
                    + gm * is_hair * delta;
                scatter_sample_grads(set, m, s, d_rgb_k, d_alpha_k, grads);
            }
            // lambda unchanged: acc passes through additively
        }
    }
}

/// Distributes a sample's (d rgb, d alpha) into voxel payload gradients and,
/// through the trilinear position gradient, into translation/scale gradients.
fn scatter_sample_grads(
    set: &PrimitiveSet,
    m: usize,
    s: &StepSample,
    d_rgb_k: [f64; 3],
    d_alpha_k: f64,
    grads: &mut RenderGrads,
) {
    if d_rgb_k == [0.0; 3] && d_alpha_k == 0.0 {
        return;
    }
    let prim = &set.prims[s.prim as usize];
    let tri = sample_payload(&prim.payload, m, &s.local, true);
    let dp = &mut grads.d_payload[s.prim as usize];
    for i in 0..tri.n_corners as usize {
        let (vox, w) = tri.corners[i];
        let base = 4 * vox as usize;
        for c in 0..3 {
            dp[base + c] += d_rgb_k[c] * w;
        }
        dp[base + 3] += d_alpha_k * w;
    }
    // chain through u = R (x - t) / s
    let mut du = Vec3::zeros();
    for axis in 0..3 {
        let mut acc = d_alpha_k * tri.grad_u[3][axis];
        for c in 0..3 {
            acc += d_rgb_k[c] * tri.grad_u[c][axis];
        }
        du[axis] = acc;
    }
    let dt = -(prim.rotation.transpose() * du) / prim.scale;
    grads.d_translation[s.prim as usize] += dt;
    grads.d_scale[s.prim as usize] += -du.dot(&s.local) / prim.scale;
}

/// Gradients of a scalar image loss w.r.t. payloads, translations and scales.
/// `d_rgb` is channel-major [3*H*W]; `d_alpha`/`d_mask` are [H*W].
pub fn render_backward(
    set: &PrimitiveSet,
    cam: &Camera,
    bg: [f64; 3],
    delta: f64,
    d_rgb: &[f64],
    d_alpha: &[f64],
    d_mask: &[f64],
) -> RenderGrads {
    let (w, h) = (cam.width, cam.height);
    assert_eq!(d_rgb.len(), 3 * w * h);
    assert_eq!(d_alpha.len(), w * h);
    assert_eq!(d_mask.len(), w * h);
    let bvh = Bvh::build(&world_aabbs(set));
    // fixed row chunking keeps the reduction order independent of threads
    const CHUNK: usize = 8;
    let row_chunks: Vec<usize> = (0..h).step_by(CHUNK).collect();
    let partials: Vec<RenderGrads> = row_chunks
        .par_iter()
        .map(|&y0| {
            let mut local = RenderGrads::zeros(set);
            for py in y0..(y0 + CHUNK).min(h) {
                for px in 0..w {
                    let i = py * w + px;
                    let gr = [d_rgb[i], d_rgb[w * h + i], d_rgb[2 * w * h + i]];
                    let ga = d_alpha[i];
                    let gm = d_mask[i];
                    if gr == [0.0; 3] && ga == 0.0 && gm == 0.0 {
                        continue;
                    }
                    march_pixel_backward(
                        set,
                        &bvh,
                        &cam.pixel_ray(px, py),
                        delta,
                        bg,
                        gr,
                        ga,
                        gm,
                        &mut local,
                    );
                }
            }
            local
        })
        .collect();
    let mut total = RenderGrads::zeros(set);
    for p in &partials {
        total.add_assign(p);
    }
    total
}
