//! Central finite-difference gradient checking, run in f64 shadow mode.

use crate::scalar::Scalar;
use crate::tape::{Tape, TensorId};
use crate::tensor::TensorData;

/// Outcome of one gradient check: worst relative error over all checked
/// coordinates.
#[derive(Debug, Clone, Copy)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Checks d loss / d inputs[i] for every input coordinate by central
/// differences. `build` must construct the full graph from leaf values and
/// return the scalar loss id; it is re-invoked for each probe.
pub fn check_gradients<S, F>(inputs: &[TensorData<S>], eps: f64, build: F) -> CheckReport
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[TensorId]) -> TensorId,
{
    let run = |vals: &[TensorData<S>]| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = vals.iter().map(|v| tape.leaf(v.clone(), true)).collect();
        let loss = build(&mut tape, &ids);
        let grads = tape.backward(loss).expect("backward failed");
        let g = ids
            .iter()
            .map(|&id| {
                grads
                    .get(id)
                    .map(|s| s.iter().map(|v| v.as_f64()).collect())
                    .unwrap_or_else(|| vec![0.0; tape.value(id).len()])
            })
            .collect();
        (tape.value(loss).scalar_value().as_f64(), g)
    };

    let (_, analytic) = run(inputs);
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].values[j] = plus[i].values[j] + S::from_f64(eps);
            let mut minus = inputs.to_vec();
            minus[i].values[j] = minus[i].values[j] - S::from_f64(eps);
            let fd = (run(&plus).0 - run(&minus).0) / (2.0 * eps);
            let an = analytic[i][j];
            let scale = 1.0f64.max(an.abs()).max(fd.abs());
            max_rel_err = max_rel_err.max((fd - an).abs() / scale);
            checked += 1;
        }
    }
    CheckReport { max_rel_err, checked }
}
