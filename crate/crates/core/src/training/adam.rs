use crate::snn::Layer;

/// Adam with bias correction. Moments are kept in f64; weights stay f32.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(layers: &[Layer], learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
        Adam {
            learning_rate,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies one update using `scale * grads`.
    pub fn step(&mut self, layers: &mut [Layer], grads: &[Vec<f64>], scale: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (l, layer) in layers.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[l], &mut self.v[l]);
            for (k, w) in layer.weights.iter_mut().enumerate() {
                let g = grads[l][k] * scale;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let update = self.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
                *w = (f64::from(*w) - update) as f32;
            }
        }
    }
}
