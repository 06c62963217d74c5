use crate::network::{NetworkParams, ParamGroup};

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay
/// folded into the gradient: `v = mu*v + (g + wd*p)`, `p -= lr*v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// One update; `lr` gives the step size of each parameter group.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &NetworkParams, lr: impl Fn(ParamGroup) -> f64) {
        let mut flat: Vec<Vec<f64>> = Vec::new();
        grads.visit(&mut |_, _, g| flat.push(g.to_vec()));
        if self.velocity.is_empty() {
            self.velocity = flat.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        let (mu, wd) = (self.momentum, self.weight_decay);
        let mut i = 0;
        let velocity = &mut self.velocity;
        params.visit_mut(&mut |_, group, p| {
            let rate = lr(group);
            let (g, v) = (&flat[i], &mut velocity[i]);
            debug_assert_eq!(p.len(), g.len());
            for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = mu * *v + g + wd * *p;
                *p -= rate * *v;
            }
            i += 1;
        });
    }
}
