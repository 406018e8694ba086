//! AdamW with a step-decay learning-rate schedule.

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(num_params: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of `params` against `grad` at learning rate `lr`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let b1t = 1.0 - self.beta1.powi(self.step as i32);
        let b2t = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= lr * self.weight_decay * params[i];
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// `lr = base * gamma^(floor(iteration / step))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLr {
    pub base: f64,
    pub step: usize,
    pub gamma: f64,
}

impl StepLr {
    pub fn rate(&self, iteration: usize) -> f64 {
        self.base * self.gamma.powi((iteration / self.step) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn first_step_moves_by_lr() {
        let mut opt = AdamW::new(2, 0.0);
        let mut p = [1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5], 0.1);
        assert_abs_diff_eq!(p[0], 0.9, epsilon = 1e-7);
        assert_abs_diff_eq!(p[1], -0.9, epsilon = 1e-7);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut opt = AdamW::new(1, 0.5);
        let mut p = [2.0];
        opt.step(&mut p, &[0.0], 0.1);
        assert_abs_diff_eq!(p[0], 2.0 * (1.0 - 0.05), epsilon = 1e-12);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut opt = AdamW::new(3, 0.0);
        let mut p = [4.0, -2.0, 1.0];
        for _ in 0..3000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * (x - 0.5)).collect();
            opt.step(&mut p, &g, 0.01);
        }
        for x in p {
            assert_abs_diff_eq!(x, 0.5, epsilon = 1e-3);
        }
    }

    #[test]
    fn step_schedule() {
        let s = StepLr {
            base: 1e-3,
            step: 100,
            gamma: 0.5,
        };
        assert_eq!(s.rate(0), 1e-3);
        assert_eq!(s.rate(99), 1e-3);
        assert_eq!(s.rate(100), 5e-4);
        assert_eq!(s.rate(250), 2.5e-4);
    }
}
