//! Property tests for the geometric losses.

use proptest::prelude::*;
use wigkit_geom::{chamfer_loss, temporal_loss, FlowField, PointCloud, TrackedPointCloud, Vec3};

fn cloud_strategy(n: std::ops::Range<usize>) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(
        (
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
            -1.0f64..1.0,
            0.05f64..1.0,
        ),
        n,
    )
    .prop_map(|rows| {
        let positions: Vec<Vec3> = rows.iter().map(|r| Vec3::new(r.0, r.1, r.2)).collect();
        let directions = rows
            .iter()
            .map(|r| {
                let d = Vec3::new(r.3, r.4, r.5);
                d / d.norm()
            })
            .collect();
        PointCloud::new(positions, directions).unwrap()
    })
    // coincident points make NN assignment order-dependent; require general position
    .prop_filter("positions must be pairwise distinct", |c| {
        let p = c.positions();
        p.iter()
            .enumerate()
            .all(|(i, a)| p[..i].iter().all(|b| (a - b).norm() > 1e-6))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // chamfer_loss(q, p) is exactly invariant under permutations of p
    #[test]
    fn chamfer_permutation_invariant(p in cloud_strategy(2..30), seed in any::<u64>()) {
        let q = TrackedPointCloud::new(
            p.positions().iter().map(|v| v + Vec3::new(0.01, -0.02, 0.03)).collect(),
            p.directions().to_vec(),
            vec![1.0; p.count()],
        ).unwrap();
        let base = chamfer_loss(&q, &p).unwrap();

        // deterministic permutation derived from the seed
        let n = p.count();
        let mut idx: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (s >> 33) as usize % (i + 1);
            idx.swap(i, j);
        }
        let perm = PointCloud::new(
            idx.iter().map(|&i| p.positions()[i]).collect(),
            idx.iter().map(|&i| p.directions()[i]).collect(),
        ).unwrap();
        let v = chamfer_loss(&q, &perm).unwrap();
        prop_assert_eq!(base, v);
    }

    // temporal loss is non-negative, zero iff present residuals vanish
    #[test]
    fn temporal_nonnegative(p in cloud_strategy(3..20), dx in -0.05f64..0.05) {
        let q = TrackedPointCloud::new(
            p.positions().to_vec(),
            p.directions().to_vec(),
            vec![1.0; p.count()],
        ).unwrap();
        let shift = Vec3::new(dx, 0.0, 0.0);
        let q_next = TrackedPointCloud::new(
            p.positions().iter().map(|v| v + shift).collect(),
            p.directions().to_vec(),
            vec![1.0; p.count()],
        ).unwrap();
        let flow = FlowField {
            forward: vec![Some(Vec3::zeros()); p.count()],
            backward: vec![Some(Vec3::zeros()); p.count()],
        };
        let l = temporal_loss(&q, &q, &q_next, &p, &flow).unwrap();
        prop_assert!(l.value >= 0.0);
        if dx == 0.0 {
            prop_assert_eq!(l.value, 0.0);
        } else {
            prop_assert!(l.value > 0.0);
        }
    }
}
