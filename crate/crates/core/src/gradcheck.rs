//! Finite-difference gradient verification.
//!
//! The quality gate for every learned module: analytic gradients from the
//! hand-written backward passes are compared against central differences of
//! the scalar loss, parameter by parameter.

use crate::tensor::ParamStore;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name of the parameter with the worst entry.
    pub worst_param: String,
    pub checked: usize,
    /// The loss came back NaN/Inf somewhere; reported rather than thrown.
    pub non_finite: bool,
}

fn relative_error(numerical: f64, analytical: f64) -> f64 {
    (numerical - analytical).abs() / (numerical.abs() + analytical.abs()).max(1e-8)
}

/// Compare analytic gradients against central finite differences.
///
/// `loss_fn` must run a full forward AND backward pass (accumulating into the
/// store's gradient slots) and return the scalar loss. Gradients are zeroed
/// before the analytic pass. When a parameter tensor holds more than
/// `max_per_tensor` scalars, entries are probed at an even stride.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut loss_fn: F,
    eps: f64,
    max_per_tensor: usize,
) -> GradCheckReport
where
    F: FnMut(&mut ParamStore) -> f64,
{
    store.zero_grads();
    let base_loss = loss_fn(store);
    let mut non_finite = !base_loss.is_finite();

    // Snapshot analytic gradients by name.
    let analytic: Vec<(String, Vec<f64>)> = store
        .iter_named()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    let names: Vec<String> = analytic.iter().map(|(n, _)| n.clone()).collect();
    let mut worst = 0.0_f64;
    let mut worst_param = String::new();
    let mut checked = 0;

    for (name, grads) in &analytic {
        let count = grads.len();
        if count == 0 {
            continue;
        }
        let stride = (count / max_per_tensor.max(1)).max(1);
        let id = store.id_of(name).expect("parameter exists");
        for i in (0..count).step_by(stride) {
            let original = store.value(id).data()[i];

            store.value_mut(id).data_mut()[i] = original + eps;
            store.zero_grads();
            let loss_plus = loss_fn(store);

            store.value_mut(id).data_mut()[i] = original - eps;
            store.zero_grads();
            let loss_minus = loss_fn(store);

            store.value_mut(id).data_mut()[i] = original;

            if !loss_plus.is_finite() || !loss_minus.is_finite() {
                non_finite = true;
                continue;
            }
            let numerical = (loss_plus - loss_minus) / (2.0 * eps);
            let rel = relative_error(numerical, grads[i]);
            checked += 1;
            if rel > worst {
                worst = rel;
                worst_param = name.clone();
            }
        }
    }
    let _ = names;
    GradCheckReport {
        max_rel_error: worst,
        worst_param,
        checked,
        non_finite,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{mse, tanh_backward, tanh_forward, Conv1d, Dense, GruCell, Padding};
    use crate::rng::Rng;
    use crate::tensor::Tensor;

    #[test]
    fn linear_layer_with_mse_is_exact() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from(21);
        let dense = Dense::new(&mut store, "lin", 4, 3, &mut rng);
        let x = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let target = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let report = grad_check(
            &mut store,
            |store| {
                let y = dense.forward(store, &x);
                let (loss, dy) = mse(y.data(), target.data());
                let dy = Tensor::from_vec(y.shape(), dy).unwrap();
                dense.backward(store, &x, &dy);
                loss
            },
            1e-3,
            usize::MAX,
        );
        assert!(!report.non_finite);
        // The loss is quadratic in the parameters: central differences are
        // exact up to f64 rounding.
        assert!(
            report.max_rel_error < 1e-6,
            "linear layer grad error {:.3e} ({})",
            report.max_rel_error,
            report.worst_param
        );
    }

    #[test]
    fn conv_tanh_stack_within_tolerance() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from(22);
        let c1 = Conv1d::new(&mut store, "c1", 2, 4, 3, 3, Padding::Same, &mut rng);
        let c2 = Conv1d::new(&mut store, "c2", 4, 2, 3, 1, Padding::Same, &mut rng);
        let x = Tensor::randn(&[2, 16], 1.0, &mut rng);
        let target = Tensor::randn(&[2, 16], 1.0, &mut rng);
        let report = grad_check(
            &mut store,
            |store| {
                let h = c1.forward(store, &x).unwrap();
                let a = tanh_forward(&h);
                let y = c2.forward(store, &a).unwrap();
                let (loss, dy) = mse(y.data(), target.data());
                let dy = Tensor::from_vec(y.shape(), dy).unwrap();
                let da = c2.backward(store, &a, &dy);
                let dh = tanh_backward(&a, &da);
                c1.backward(store, &x, &dh);
                loss
            },
            1e-3,
            usize::MAX,
        );
        assert!(!report.non_finite);
        assert!(
            report.max_rel_error < 1e-4,
            "conv stack grad error {:.3e} ({})",
            report.max_rel_error,
            report.worst_param
        );
    }

    #[test]
    fn two_step_gru_within_tolerance() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from(23);
        let cell = GruCell::new(&mut store, "g", 3, 4, &mut rng);
        let x0: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let x1: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let target: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let report = grad_check(
            &mut store,
            |store| {
                let (h1, c0) = cell.step(store, &x0, &[0.0; 4]).unwrap();
                let (h2, c1) = cell.step(store, &x1, &h1).unwrap();
                let (loss, dh2) = mse(&h2, &target);
                let (_, dh1) = cell.step_backward(store, &c1, &dh2);
                cell.step_backward(store, &c0, &dh1);
                loss
            },
            1e-3,
            usize::MAX,
        );
        assert!(!report.non_finite);
        assert!(
            report.max_rel_error < 1e-4,
            "2-step GRU grad error {:.3e} ({})",
            report.max_rel_error,
            report.worst_param
        );
    }

    #[test]
    fn frozen_model_loss_is_reproducible() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed_from(24);
        let dense = Dense::new(&mut store, "lin", 3, 2, &mut rng);
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let target = Tensor::randn(&[2, 4], 1.0, &mut rng);
        let eval = |store: &ParamStore| {
            let y = dense.forward(store, &x);
            mse(y.data(), target.data()).0
        };
        assert_eq!(eval(&store), eval(&store));
    }

    #[test]
    fn non_finite_loss_is_reported_not_thrown() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::from_vec(&[1], vec![1.0]).unwrap());
        let report = grad_check(&mut store, |_| f64::NAN, 1e-3, usize::MAX);
        assert!(report.non_finite);
    }
}
