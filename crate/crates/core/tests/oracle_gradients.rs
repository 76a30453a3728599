//! Finite-difference verification of individual backward passes beyond the
//! in-module checks: softmax rows and the feed-forward block.

use saban_core::mat::{grad_check, Differentiable, Dropout, Ffn, Mat, ParamTensor};
use saban_core::rng::SplitMix64;

#[derive(Clone)]
struct SoftmaxProblem {
    x: ParamTensor,
    scale: f64,
    weights: Mat,
}

impl SoftmaxProblem {
    fn objective(&self, x: &Mat) -> f64 {
        // Weighted sum of softmax outputs keeps the full Jacobian in play.
        x.softmax_rows(self.scale)
            .data()
            .iter()
            .zip(self.weights.data())
            .map(|(&y, &w)| y * w)
            .sum()
    }
}

impl Differentiable for SoftmaxProblem {
    fn loss(&self) -> f64 {
        self.objective(&self.x.value)
    }
    fn loss_and_grad(&mut self) -> f64 {
        let y = self.x.value.softmax_rows(self.scale);
        self.x.grad = Mat::softmax_rows_backward(&y, &self.weights, self.scale);
        self.objective(&self.x.value)
    }
    fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.x]
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.x]
    }
}

#[test]
fn softmax_rows_backward_matches_finite_differences() {
    let mut rng = SplitMix64::new(31);
    for scale in [1.0, 0.25, 3.0] {
        let problem = SoftmaxProblem {
            x: ParamTensor::new("x", Mat::from_fn(4, 6, |_, _| rng.next_range(-2.0, 2.0))),
            scale,
            weights: Mat::from_fn(4, 6, |_, _| rng.next_range(-1.0, 1.0)),
        };
        let report = grad_check(&problem, 24, 1e-4, 5).unwrap();
        assert!(
            report.max_rel_err < 1e-5,
            "scale {scale}: max rel err {}",
            report.max_rel_err
        );
    }
}

#[derive(Clone)]
struct FfnProblem {
    ffn: Ffn,
    x: Mat,
}

impl Differentiable for FfnProblem {
    fn loss(&self) -> f64 {
        let (y, _) = self.ffn.forward(&self.x, &Dropout::Off, 0);
        y.data().iter().map(|&v| v * v).sum()
    }
    fn loss_and_grad(&mut self) -> f64 {
        let (y, cache) = self.ffn.forward(&self.x, &Dropout::Off, 0);
        let loss = y.data().iter().map(|&v| v * v).sum();
        let d = y.scale(2.0);
        let _ = self.ffn.backward(&cache, &d, &Dropout::Off, 0);
        loss
    }
    fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.ffn.lin1.weight, &self.ffn.lin1.bias, &self.ffn.lin2.weight, &self.ffn.lin2.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![
            &mut self.ffn.lin1.weight,
            &mut self.ffn.lin1.bias,
            &mut self.ffn.lin2.weight,
            &mut self.ffn.lin2.bias,
        ]
    }
}

#[test]
fn ffn_backward_matches_finite_differences_on_2x8_input() {
    let mut rng = SplitMix64::new(37);
    let problem = FfnProblem {
        ffn: Ffn::init("f", 8, 16, 8, &mut rng),
        x: Mat::from_fn(2, 8, |_, _| rng.next_range(-1.0, 1.0)),
    };
    let report = grad_check(&problem, 24, 1e-4, 11).unwrap();
    assert!(report.max_rel_err < 1e-4, "max rel err {}", report.max_rel_err);
}
