//! Rendering correctness: analytic homogeneous-medium oracle, occlusion,
//! output invariants and finite-difference checks of the backward pass.

use nalgebra::{Matrix3, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wigkit_geom::Vec3;
use wigkit_volren::{
    march_pixel, render, render_backward, Bvh, Camera, Primitive, PrimitiveSet, Ray,
};

fn constant_payload(m: usize, rgb: [f64; 3], alpha: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(4 * m * m * m);
    for _ in 0..m * m * m {
        p.extend_from_slice(&[rgb[0], rgb[1], rgb[2], alpha]);
    }
    p
}

fn axis_camera_sized(n: usize) -> Camera {
    // looks down +x from x = -3 (right-handed: x_cam cross y_cam = z_cam)
    let rot = Matrix3::from_rows(&[
        Vec3::new(0.0, -1.0, 0.0).transpose(),
        Vec3::new(0.0, 0.0, -1.0).transpose(),
        Vec3::new(1.0, 0.0, 0.0).transpose(),
    ]);
    let eye = Vec3::new(-3.0, 0.0, 0.0);
    let f = 5.0 * n as f64;
    Camera::new(f, f, n as f64 / 2.0, n as f64 / 2.0, rot, -(rot * eye), n, n).unwrap()
}

fn axis_camera() -> Camera {
    axis_camera_sized(8)
}

fn central_ray() -> Ray {
    Ray { origin: Vec3::new(-3.0, 0.0, 0.0), dir: Vec3::new(1.0, 0.0, 0.0) }
}

#[test]
fn miss_gives_background() {
    let m = 4;
    let prim = Primitive::new(
        Matrix3::identity(),
        Vec3::new(0.0, 10.0, 0.0),
        0.5,
        m,
        constant_payload(m, [1.0, 0.0, 0.0], 1.0),
        true,
    )
    .unwrap();
    let set = PrimitiveSet::new(m, vec![prim]);
    let bvh = Bvh::build(&wigkit_volren::raymarch::world_aabbs(&set));
    let s = march_pixel(&set, &bvh, &central_ray(), [0.1, 0.2, 0.3], 1e-3);
    assert_eq!(s.rgb, [0.1, 0.2, 0.3]);
    assert_eq!(s.alpha, 0.0);
    assert_eq!(s.mask, 0.0);
}

// One homogeneous primitive on an axis-aligned central ray. The trilinear
// alpha field is alpha on the voxel-center hull (length 2(1-1/m) in local
// units) and ramps linearly to zero over the ghost band (1/m each side), so
// the opacity line integral is alpha * 2 * scale exactly: alpha_out =
// min(alpha * L, 1) with L the full box chord. The emission integrand is the
// product of the two ramped fields, integrating to c*alpha*(2 - 2/(3m))*scale.
#[test]
fn homogeneous_matches_analytic_and_converges() {
    let m = 4;
    let scale = 0.5;
    let alpha = 0.7;
    let color = [0.8, 0.4, 0.2];
    let bg = [0.05, 0.1, 0.15];
    let prim = Primitive::new(
        Matrix3::identity(),
        Vec3::zeros(),
        scale,
        m,
        constant_payload(m, color, alpha),
        true,
    )
    .unwrap();
    let set = PrimitiveSet::new(m, vec![prim]);
    let bvh = Bvh::build(&wigkit_volren::raymarch::world_aabbs(&set));
    let path_len = 2.0 * scale;
    let want_alpha = (alpha * path_len).min(1.0);
    let emission = alpha * scale * (2.0 - 2.0 / (3.0 * m as f64));
    let want_rgb: Vec<f64> =
        (0..3).map(|c| color[c] * emission + (1.0 - want_alpha) * bg[c]).collect();

    let delta = 1e-3 * path_len;
    let s = march_pixel(&set, &bvh, &central_ray(), bg, delta);
    let err = (s.alpha - want_alpha)
        .abs()
        .max((0..3).map(|c| (s.rgb[c] - want_rgb[c]).abs()).fold(0.0, f64::max));
    assert!(err < 1e-3, "error {err} at delta {delta}");

    // halving the step size at least halves the error
    let s2 = march_pixel(&set, &bvh, &central_ray(), bg, delta / 2.0);
    let err2 = (s2.alpha - want_alpha)
        .abs()
        .max((0..3).map(|c| (s2.rgb[c] - want_rgb[c]).abs()).fold(0.0, f64::max));
    assert!(err2 <= err / 2.0 + 1e-12, "err {err} -> {err2}");
}

#[test]
fn saturation_clamps_alpha_to_one() {
    let m = 4;
    let prim = Primitive::new(
        Matrix3::identity(),
        Vec3::zeros(),
        0.5,
        m,
        constant_payload(m, [1.0, 1.0, 1.0], 5.0),
        true,
    )
    .unwrap();
    let set = PrimitiveSet::new(m, vec![prim]);
    let bvh = Bvh::build(&wigkit_volren::raymarch::world_aabbs(&set));
    let s = march_pixel(&set, &bvh, &central_ray(), [0.0; 3], 1e-3);
    assert_eq!(s.alpha, 1.0);
}

#[test]
fn front_primitive_occludes_back() {
    let m = 4;
    let front = Primitive::new(
        Matrix3::identity(),
        Vec3::new(-1.0, 0.0, 0.0),
        0.3,
        m,
        constant_payload(m, [1.0, 0.0, 0.0], 50.0),
        true,
    )
    .unwrap();
    let back = Primitive::new(
        Matrix3::identity(),
        Vec3::new(1.0, 0.0, 0.0),
        0.3,
        m,
        constant_payload(m, [0.0, 0.0, 1.0], 50.0),
        false,
    )
    .unwrap();
    let set = PrimitiveSet::new(m, vec![back, front.clone()]);
    let bvh = Bvh::build(&wigkit_volren::raymarch::world_aabbs(&set));
    let s = march_pixel(&set, &bvh, &central_ray(), [0.0; 3], 1e-3);
    assert_eq!(s.alpha, 1.0);
    // the saturated front primitive fully determines the pixel: rendering it
    // alone gives the identical result, and no blue leaks through
    let front_only = PrimitiveSet::new(m, vec![front]);
    let bvh_f = Bvh::build(&wigkit_volren::raymarch::world_aabbs(&front_only));
    let alone = march_pixel(&front_only, &bvh_f, &central_ray(), [0.0; 3], 1e-3);
    assert_eq!(s.rgb, alone.rgb);
    assert_eq!(s.mask, alone.mask);
    assert_eq!(s.rgb[2], 0.0, "back blue occluded: {:?}", s.rgb);
    assert!(s.rgb[0] > 0.1, "front red present: {:?}", s.rgb);
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize, m: usize) -> PrimitiveSet {
    let prims = (0..n)
        .map(|i| {
            let rot = Rotation3::from_euler_angles(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let payload: Vec<f64> = (0..4 * m * m * m)
                .map(|k| if k % 4 == 3 { rng.gen_range(0.1..1.2) } else { rng.gen_range(0.0..1.0) })
                .collect();
            Primitive::new(
                *rot.matrix(),
                Vec3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                ),
                rng.gen_range(0.2..0.45),
                m,
                payload,
                i % 2 == 0,
            )
            .unwrap()
        })
        .collect();
    PrimitiveSet::new(m, prims)
}

#[test]
fn mask_never_exceeds_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let set = random_scene(&mut rng, 6, 4);
    let cam = axis_camera();
    let out = render(&set, &cam, [0.2, 0.2, 0.2], 0.004);
    for i in 0..out.alpha.len() {
        assert!(out.mask[i] <= out.alpha[i], "pixel {i}: {} > {}", out.mask[i], out.alpha[i]);
        assert!((0.0..=1.0).contains(&out.alpha[i]));
        assert!((0.0..=1.0).contains(&out.mask[i]));
    }
}

#[test]
fn alpha_monotone_in_voxel_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let set = random_scene(&mut rng, 3, 4);
    let cam = axis_camera();
    let base = render(&set, &cam, [0.0; 3], 0.004);
    let mut bumped = set.clone();
    // raise a single voxel's alpha
    bumped.prims[1].payload[4 * 7 + 3] += 0.5;
    let out = render(&bumped, &cam, [0.0; 3], 0.004);
    for i in 0..base.alpha.len() {
        assert!(out.alpha[i] >= base.alpha[i] - 1e-12);
        assert!(out.mask[i] >= base.mask[i] - 1e-12);
    }
}

#[test]
fn primitive_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let set = random_scene(&mut rng, 7, 4);
    let cam = axis_camera();
    let a = render(&set, &cam, [0.3, 0.1, 0.6], 0.004);
    let mut permuted = set.clone();
    permuted.prims.reverse();
    let b = render(&permuted, &cam, [0.3, 0.1, 0.6], 0.004);
    for i in 0..a.rgb.len() {
        assert!((a.rgb[i] - b.rgb[i]).abs() < 1e-6);
    }
    for i in 0..a.alpha.len() {
        assert!((a.alpha[i] - b.alpha[i]).abs() < 1e-6);
        assert!((a.mask[i] - b.mask[i]).abs() < 1e-6);
    }
}

#[test]
fn zero_upstream_gives_zero_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let set = random_scene(&mut rng, 3, 3);
    let cam = axis_camera();
    let n = cam.width * cam.height;
    let g = render_backward(&set, &cam, [0.0; 3], 0.01, &vec![0.0; 3 * n], &vec![0.0; n], &vec![0.0; n]);
    for dp in &g.d_payload {
        assert!(dp.iter().all(|&v| v == 0.0));
    }
    assert!(g.d_translation.iter().all(|v| v.norm() == 0.0));
    assert!(g.d_scale.iter().all(|&v| v == 0.0));
}

#[test]
fn occluded_voxels_have_zero_payload_gradient() {
    let m = 3;
    let front = Primitive::new(
        Matrix3::identity(),
        Vec3::new(-1.0, 0.0, 0.0),
        0.4,
        m,
        constant_payload(m, [1.0, 0.0, 0.0], 100.0),
        true,
    )
    .unwrap();
    let back = Primitive::new(
        Matrix3::identity(),
        Vec3::new(1.0, 0.0, 0.0),
        0.4,
        m,
        constant_payload(m, [0.0, 0.0, 1.0], 1.0),
        false,
    )
    .unwrap();
    let set = PrimitiveSet::new(m, vec![front, back]);
    let cam = axis_camera();
    let n = cam.width * cam.height;
    let g = render_backward(&set, &cam, [0.0; 3], 0.002, &vec![1.0; 3 * n], &vec![1.0; n], &vec![1.0; n]);
    // the back primitive sits fully behind a saturating front one
    assert!(g.d_payload[1].iter().all(|&v| v == 0.0), "occluded payload got gradient");
    assert!(g.d_payload[0].iter().any(|&v| v != 0.0), "front payload must get gradient");
}

// Central finite differences against the analytic backward pass, f64.
#[test]
fn backward_matches_finite_differences() {
    let bg = [0.15, 0.25, 0.1];
    let delta = 0.01;
    for seed in [11u64, 12, 13, 14, 15, 16, 17, 18, 19, 20] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_scene(&mut rng, 2, 3);
        // few rays keep the density of trilinear cell kinks along the pose
        // coordinates low; the kink filter below handles the rest
        let cam = axis_camera_sized(4);
        let n = cam.width * cam.height;
        // random upstream weights define the scalar loss L = <w, outputs>
        let w_rgb: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w_a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w_m: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |s: &PrimitiveSet| -> f64 {
            let out = render(s, &cam, bg, delta);
            let mut l = 0.0;
            for i in 0..3 * n {
                l += w_rgb[i] * out.rgb[i];
            }
            for i in 0..n {
                l += w_a[i] * out.alpha[i] + w_m[i] * out.mask[i];
            }
            l
        };
        let g = render_backward(&set, &cam, bg, delta, &w_rgb, &w_a, &w_m);
        let base = loss(&set);

        let eps = 1e-6;
        let mut checked = 0;
        let mut skipped = 0;
        let mut max_rel: f64 = 0.0;
        // The marched loss is only piecewise smooth: the trilinear field has
        // C0 kinks at voxel-cell boundaries and the saturation step index
        // flips under pose perturbations. A probe straddling such a kink has
        // no valid central difference (the analytic gradient equals a
        // one-sided slope there). Kinks announce themselves through the
        // one-sided slopes disagreeing far beyond the smooth curvature
        // baseline (~eps * f''), so filter on that and require the skips to
        // stay rare.
        let mut check_coord = |fp: f64, fm: f64, an: f64| {
            let s_plus = (fp - base) / eps;
            let s_minus = (base - fm) / eps;
            if (s_plus - s_minus).abs() > 2e-5 * s_plus.abs().max(s_minus.abs()).max(1.0) {
                skipped += 1;
                return;
            }
            let fd = (fp - fm) / (2.0 * eps);
            let scale = 1.0f64.max(an.abs()).max(fd.abs());
            max_rel = max_rel.max((fd - an).abs() / scale);
            checked += 1;
        };
        // payload entries (subsampled), all translations and scales
        for pi in 0..set.len() {
            for k in (0..set.prims[pi].payload.len()).step_by(7) {
                let mut plus = set.clone();
                plus.prims[pi].payload[k] += eps;
                let mut minus = set.clone();
                minus.prims[pi].payload[k] -= eps;
                check_coord(loss(&plus), loss(&minus), g.d_payload[pi][k]);
            }
            for axis in 0..3 {
                let mut plus = set.clone();
                plus.prims[pi].translation[axis] += eps;
                let mut minus = set.clone();
                minus.prims[pi].translation[axis] -= eps;
                check_coord(loss(&plus), loss(&minus), g.d_translation[pi][axis]);
            }
            let mut plus = set.clone();
            plus.prims[pi].scale += eps;
            let mut minus = set.clone();
            minus.prims[pi].scale -= eps;
            check_coord(loss(&plus), loss(&minus), g.d_scale[pi]);
        }
        assert!(max_rel < 1e-6, "seed {seed}: max rel err {max_rel} over {checked} coords");
        assert!(checked >= 30, "seed {seed}: only {checked} smooth coords");
        // one tie pixel can contaminate every pose coordinate of a primitive
        assert!(
            skipped * 4 <= checked,
            "seed {seed}: too many kink skips ({skipped} of {})",
            checked + skipped
        );
    }
}
