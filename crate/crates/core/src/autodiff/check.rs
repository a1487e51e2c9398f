//! Central finite-difference gradient checking.
//!
//! The oracle re-evaluates the forward pass at perturbed parameter values
//! and never touches the backward rules it validates.

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Outcome of one gradient check over a list of parameters.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over elements of |analytic - fd| / (atol + rtol * max(|analytic|, |fd|))
    pub worst_ratio: f64,
    pub worst_param: usize,
    pub worst_element: usize,
    pub elements_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self) -> bool {
        self.worst_ratio <= 1.0
    }
}

/// Default tolerances: 1e-4 relative with a 1e-6 absolute floor.
pub const DEFAULT_RTOL: f64 = 1e-4;
pub const DEFAULT_ATOL: f64 = 1e-6;
/// Central-difference step.
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Compare analytic gradients of `f` against central finite differences.
///
/// `f` must build a scalar loss from the given parameter vars; it is called
/// once with gradients enabled and then `2 * total_elements` times at
/// perturbed values.
pub fn check_gradients(
    params: &[Tensor],
    f: impl Fn(&Tape, &[Var]) -> Var,
) -> GradCheckReport {
    check_gradients_with(params, f, DEFAULT_EPSILON, DEFAULT_ATOL, DEFAULT_RTOL)
}

pub fn check_gradients_with(
    params: &[Tensor],
    f: impl Fn(&Tape, &[Var]) -> Var,
    epsilon: f64,
    atol: f64,
    rtol: f64,
) -> GradCheckReport {
    // analytic pass
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone(), true)).collect();
    let loss = f(&tape, &vars);
    loss.backward().expect("gradient check loss must be scalar");
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(v, p)| v.grad().unwrap_or_else(|| Tensor::zeros(&p.shape)))
        .collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = perturbed
            .iter()
            .map(|p| tape.leaf(p.clone(), false))
            .collect();
        f(&tape, &vars).item()
    };

    let mut report = GradCheckReport {
        worst_ratio: 0.0,
        worst_param: 0,
        worst_element: 0,
        elements_checked: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, param) in params.iter().enumerate() {
        for ei in 0..param.len() {
            work[pi].data[ei] = param.data[ei] + epsilon;
            let up = eval(&work);
            work[pi].data[ei] = param.data[ei] - epsilon;
            let down = eval(&work);
            work[pi].data[ei] = param.data[ei];

            let fd = (up - down) / (2.0 * epsilon);
            let a = analytic[pi].data[ei];
            let ratio = (a - fd).abs() / (atol + rtol * a.abs().max(fd.abs()));
            if ratio > report.worst_ratio {
                report.worst_ratio = ratio;
                report.worst_param = pi;
                report.worst_element = ei;
            }
            report.elements_checked += 1;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Var;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences_on_composites() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..100 {
            let m = 1 + case % 3;
            let k = 1 + (case / 3) % 3;
            let n = 1 + (case / 9) % 3;
            let a = Tensor::randn(&[m, k], &mut rng);
            let b = Tensor::randn(&[k, n], &mut rng);
            let bias = Tensor::randn(&[n], &mut rng);
            let report = check_gradients(&[a, b, bias], |_, vars| {
                let h = vars[0].matmul(&vars[1]).add_bias(&vars[2]).tanh();
                let s = h.softmax(1);
                // keep the log argument positive
                s.add_scalar(1.5).ln().square().sum().add(&h.sigmoid().mean())
            });
            assert!(
                report.passes(),
                "case {case}: worst ratio {}",
                report.worst_ratio
            );
        }
    }

    #[test]
    fn each_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        type OpCase = (&'static str, fn(&Tape, &[Var]) -> Var);
        let cases: Vec<OpCase> = vec![
            ("add", |_, v| v[0].add(&v[1]).sum()),
            ("sub", |_, v| v[0].sub(&v[1]).sum()),
            ("mul", |_, v| v[0].mul(&v[1]).sum()),
            ("tanh", |_, v| v[0].tanh().sum()),
            ("sigmoid", |_, v| v[0].sigmoid().sum()),
            ("exp", |_, v| v[0].exp().sum()),
            ("square", |_, v| v[0].square().sum()),
            ("softplus", |_, v| v[0].softplus().sum()),
            ("scale", |_, v| v[0].scale(-2.5).sum()),
            ("mean", |_, v| v[0].mul(&v[1]).mean()),
            ("softmax0", |_, v| v[0].softmax(0).square().sum()),
            ("softmax1", |_, v| v[0].softmax(1).square().sum()),
            ("ln", |_, v| v[0].square().add_scalar(0.5).ln().sum()),
            ("transpose", |_, v| {
                v[0].transpose_last().matmul(&v[0]).sum()
            }),
            ("slice", |_, v| v[0].slice(1, 1, 2).square().sum()),
            ("concat", |_, v| {
                Var::concat(&[&v[0], &v[1]], 0).square().sum()
            }),
            ("reshape", |_, v| v[0].reshape(&[12]).square().sum()),
        ];
        for (name, f) in cases {
            for trial in 0..6 {
                let a = Tensor::randn(&[3, 4], &mut rng);
                let b = Tensor::randn(&[3, 4], &mut rng);
                let report = check_gradients(&[a, b], f);
                assert!(
                    report.passes(),
                    "{name} trial {trial}: worst ratio {}",
                    report.worst_ratio
                );
            }
        }
    }

    #[test]
    fn bmm_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let a = Tensor::randn(&[2, 3, 2], &mut rng);
            let b = Tensor::randn(&[2, 2, 4], &mut rng);
            let report = check_gradients(&[a, b], |_, v| v[0].bmm(&v[1]).square().sum());
            assert!(report.passes(), "worst ratio {}", report.worst_ratio);
        }
    }
}
