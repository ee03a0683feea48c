//! Nearest-neighbor queries and the geometric losses used to fit tracked
//! clouds to per-frame reconstructions.

use crate::kdtree::KdTree;
use crate::types::{FlowField, GeomError, HeadState, PointCloud, TrackedPointCloud, Vec3};

/// For each point of `src`, the index of its Euclidean-nearest point in `dst`.
/// Ties are broken by the lowest index.
pub fn nearest_neighbors(src: &PointCloud, dst: &PointCloud) -> Result<Vec<usize>, GeomError> {
    if src.count() == 0 || dst.count() == 0 {
        return Err(GeomError::EmptyCloud);
    }
    let tree = KdTree::build(dst.positions());
    Ok(src.positions().iter().map(|p| tree.nearest(p)).collect())
}

fn cosine(a: &Vec3, b: &Vec3) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

/// Bidirectional Chamfer loss with the direction-cosine term, averaged over
/// points on each side:
///
///   mean_i (||q_i - nn_p(q_i)|| - cos(dir q_i, dir nn_p(q_i)))
/// + mean_j (||p_j - nn_q(p_j)|| - cos(dir p_j, dir nn_q(p_j)))
///
/// Identical clouds with aligned directions give -2.
pub fn chamfer_loss(q: &TrackedPointCloud, p: &PointCloud) -> Result<f64, GeomError> {
    if q.count() == 0 || p.count() == 0 {
        return Err(GeomError::EmptyCloud);
    }
    let p_tree = KdTree::build(p.positions());
    let q_tree = KdTree::build(q.positions());
    let mut side_q = 0.0;
    for (qi, qd) in q.positions().iter().zip(q.directions()) {
        let j = p_tree.nearest(qi);
        side_q += (qi - p.positions()[j]).norm() - cosine(qd, &p.directions()[j]);
    }
    // The p side is summed in value order so the result is exactly invariant
    // under permutations of p (f64 addition is order-sensitive).
    let mut terms: Vec<f64> = p
        .positions()
        .iter()
        .zip(p.directions())
        .map(|(pj, pd)| {
            let i = q_tree.nearest(pj);
            (pj - q.positions()[i]).norm() - cosine(pd, &q.directions()[i])
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    let side_p: f64 = terms.iter().sum();
    Ok(side_q / q.count() as f64 + side_p / p.count() as f64)
}

/// Position-only symmetric Chamfer distance (mean nearest-neighbor distance in
/// both directions). This is the drift/accuracy metric, not the training loss.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64, GeomError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeomError::EmptyCloud);
    }
    let tb = KdTree::build(b);
    let ta = KdTree::build(a);
    let da: f64 = a.iter().map(|p| (p - b[tb.nearest(p)]).norm()).sum::<f64>() / a.len() as f64;
    let db: f64 = b.iter().map(|p| (p - a[ta.nearest(p)]).norm()).sum::<f64>() / b.len() as f64;
    Ok(da + db)
}

/// Chamfer loss value plus gradients w.r.t. the tracked cloud's positions and
/// directions (nearest-neighbor assignments held fixed).
pub struct ChamferGrad {
    pub value: f64,
    pub d_positions: Vec<Vec3>,
    pub d_directions: Vec<Vec3>,
}

fn d_cosine_da(a: &Vec3, b: &Vec3) -> Vec3 {
    // d/da [ a.b / (|a||b|) ]
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Vec3::zeros();
    }
    b / (na * nb) - a * (a.dot(b) / (na * na * na * nb))
}

pub fn chamfer_loss_grad(q: &TrackedPointCloud, p: &PointCloud) -> Result<ChamferGrad, GeomError> {
    if q.count() == 0 || p.count() == 0 {
        return Err(GeomError::EmptyCloud);
    }
    let nq = q.count() as f64;
    let np = p.count() as f64;
    let p_tree = KdTree::build(p.positions());
    let q_tree = KdTree::build(q.positions());
    let mut value = 0.0;
    let mut d_pos = vec![Vec3::zeros(); q.count()];
    let mut d_dir = vec![Vec3::zeros(); q.count()];
    for (i, (qi, qd)) in q.positions().iter().zip(q.directions()).enumerate() {
        let j = p_tree.nearest(qi);
        let diff = qi - p.positions()[j];
        let dist = diff.norm();
        value += (dist - cosine(qd, &p.directions()[j])) / nq;
        if dist > 0.0 {
            d_pos[i] += diff / (dist * nq);
        }
        d_dir[i] -= d_cosine_da(qd, &p.directions()[j]) / nq;
    }
    for (pj, pd) in p.positions().iter().zip(p.directions()) {
        let i = q_tree.nearest(pj);
        let diff = pj - q.positions()[i];
        let dist = diff.norm();
        value += (dist - cosine(pd, &q.directions()[i])) / np;
        if dist > 0.0 {
            d_pos[i] -= diff / (dist * np);
        }
        d_dir[i] -= d_cosine_da(&q.directions()[i], pd) / np;
    }
    Ok(ChamferGrad { value, d_positions: d_pos, d_directions: d_dir })
}

/// Temporal loss output; `all_absent` flags the degenerate all-filtered case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalLoss {
    pub value: f64,
    pub all_absent: bool,
}

/// Temporal smoothness loss: four mean-squared terms comparing tracked-point
/// flows against observed flows at nearest neighbors, in both matching
/// directions. Tracked flows use the displacement-toward convention
/// (backward: q_prev - q, forward: q_next - q), the same convention the flow
/// estimator emits, so matching arrows are always compared. Absent flow
/// entries are skipped and each term renormalizes by its present count.
pub fn temporal_loss(
    q_prev: &TrackedPointCloud,
    q: &TrackedPointCloud,
    q_next: &TrackedPointCloud,
    p: &PointCloud,
    flow: &FlowField,
) -> Result<TemporalLoss, GeomError> {
    let g = temporal_loss_grad(q_prev, q, q_next, p, flow)?;
    Ok(TemporalLoss { value: g.value, all_absent: g.all_absent })
}

pub struct TemporalGrad {
    pub value: f64,
    pub all_absent: bool,
    pub d_q_prev: Vec<Vec3>,
    pub d_q: Vec<Vec3>,
    pub d_q_next: Vec<Vec3>,
}

pub fn temporal_loss_grad(
    q_prev: &TrackedPointCloud,
    q: &TrackedPointCloud,
    q_next: &TrackedPointCloud,
    p: &PointCloud,
    flow: &FlowField,
) -> Result<TemporalGrad, GeomError> {
    let n = q.count();
    if n == 0 || p.count() == 0 {
        return Err(GeomError::EmptyCloud);
    }
    if q_prev.count() != n || q_next.count() != n {
        return Err(GeomError::LengthMismatch(q_prev.count(), n));
    }
    if !flow.matches_cloud(p) {
        return Err(GeomError::LengthMismatch(flow.len(), p.count()));
    }

    let p_tree = KdTree::build(p.positions());
    let q_tree = KdTree::build(q.positions());
    let nn_q_in_p: Vec<usize> = q.positions().iter().map(|x| p_tree.nearest(x)).collect();
    let nn_p_in_q: Vec<usize> = p.positions().iter().map(|x| q_tree.nearest(x)).collect();

    let mut d_q_prev = vec![Vec3::zeros(); n];
    let mut d_q = vec![Vec3::zeros(); n];
    let mut d_q_next = vec![Vec3::zeros(); n];
    let mut value = 0.0;
    let mut any_present = false;

    // Each closure returns (sum of squared residuals, residual list) for one
    // term; gradients are applied after the mean normalization is known.

    // term 1: tracked backward flow vs observed backward flow at NN of q in p
    {
        let mut resids: Vec<(usize, Vec3)> = Vec::new();
        for i in 0..n {
            if let Some(obs) = flow.backward[nn_q_in_p[i]] {
                let tracked = q_prev.positions()[i] - q.positions()[i];
                resids.push((i, tracked - obs));
            }
        }
        if !resids.is_empty() {
            any_present = true;
            let m = resids.len() as f64;
            for (i, r) in &resids {
                value += r.norm_squared() / m;
                d_q_prev[*i] += 2.0 * r / m;
                d_q[*i] -= 2.0 * r / m;
            }
        }
    }
    // term 2: observed backward flow vs tracked backward flow at NN of p in q
    {
        let mut resids: Vec<(usize, Vec3)> = Vec::new();
        for j in 0..p.count() {
            if let Some(obs) = flow.backward[j] {
                let i = nn_p_in_q[j];
                let tracked = q_prev.positions()[i] - q.positions()[i];
                resids.push((i, obs - tracked));
            }
        }
        if !resids.is_empty() {
            any_present = true;
            let m = resids.len() as f64;
            for (i, r) in &resids {
                value += r.norm_squared() / m;
                d_q_prev[*i] -= 2.0 * r / m;
                d_q[*i] += 2.0 * r / m;
            }
        }
    }
    // term 3: tracked forward flow vs observed forward flow at NN of q in p
    {
        let mut resids: Vec<(usize, Vec3)> = Vec::new();
        for i in 0..n {
            if let Some(obs) = flow.forward[nn_q_in_p[i]] {
                let tracked = q_next.positions()[i] - q.positions()[i];
                resids.push((i, tracked - obs));
            }
        }
        if !resids.is_empty() {
            any_present = true;
            let m = resids.len() as f64;
            for (i, r) in &resids {
                value += r.norm_squared() / m;
                d_q_next[*i] += 2.0 * r / m;
                d_q[*i] -= 2.0 * r / m;
            }
        }
    }
    // term 4: observed forward flow vs tracked forward flow at NN of p in q
    {
        let mut resids: Vec<(usize, Vec3)> = Vec::new();
        for j in 0..p.count() {
            if let Some(obs) = flow.forward[j] {
                let i = nn_p_in_q[j];
                let tracked = q_next.positions()[i] - q.positions()[i];
                resids.push((i, obs - tracked));
            }
        }
        if !resids.is_empty() {
            any_present = true;
            let m = resids.len() as f64;
            for (i, r) in &resids {
                value += r.norm_squared() / m;
                d_q_next[*i] -= 2.0 * r / m;
                d_q[*i] += 2.0 * r / m;
            }
        }
    }

    Ok(TemporalGrad { value, all_absent: !any_present, d_q_prev, d_q, d_q_next })
}

/// Per-vertex displacement between two head states of the same topology.
pub fn head_displacement(x_t: &HeadState, x_prev: &HeadState) -> Result<Vec<Vec3>, GeomError> {
    if x_t.vertex_count() != x_prev.vertex_count() {
        return Err(GeomError::VertexCountMismatch(x_t.vertex_count(), x_prev.vertex_count()));
    }
    Ok(x_t.vertices.iter().zip(&x_prev.vertices).map(|(a, b)| a - b).collect())
}
