use ndarray::Array2;

use crate::params::ParamStore;

/// Adam with bias correction. Moment buffers follow the parameter store's
/// registration order; the learning rate is supplied per step so an external
/// schedule can drive it.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let m = store.iter().map(|(_, w)| Array2::zeros(w.raw_dim())).collect();
        let v = store.iter().map(|(_, w)| Array2::zeros(w.raw_dim())).collect();
        Self {
            beta1,
            beta2,
            eps,
            m,
            v,
            t: 0,
        }
    }

    /// Applies one update. `grads` must be dense and in parameter order
    /// (zeros for parameters that received no gradient).
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Array2<f64>], lr: f64) {
        assert_eq!(grads.len(), store.len(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..grads.len() {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let w = store.value_mut(crate::ParamId(i));
            ndarray::Zip::from(w)
                .and(&*m)
                .and(&*v)
                .for_each(|w, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Array2<f64>], &[Array2<f64>]) {
        (&self.m, &self.v)
    }

    /// Restores optimizer state (checkpoint load). Shapes must match the
    /// store this optimizer was built for.
    pub fn restore(&mut self, m: Vec<Array2<f64>>, v: Vec<Array2<f64>>, t: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        for i in 0..m.len() {
            assert_eq!(m[i].raw_dim(), self.m[i].raw_dim());
            assert_eq!(v[i].raw_dim(), self.v[i].raw_dim());
        }
        self.m = m;
        self.v = v;
        self.t = t;
    }
}
