use super::tensor::{ParamStore, Real};
use crate::error::NnError;

/// Adam with bias correction. Moments are kept in the parameter precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(params: &ParamStore<T>, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    /// Applies one update in place.
    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>) -> Result<(), NnError> {
        if !params.congruent(grads) || !params.congruent(&self.m) || !params.congruent(&self.v) {
            return Err(NnError::Shape("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powf(self.step as f64);
        let c2 = 1.0 - b2.powf(self.step as f64);
        let step_size = T::of(self.lr / c1);
        let c2_sqrt = T::of(c2.sqrt());
        let eps = T::of(self.eps);
        let (b1t, b2t) = (T::of(b1), T::of(b2));
        let (ob1, ob2) = (T::of(1.0 - b1), T::of(1.0 - b2));
        let iter = params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()));
        for (((_, p), (_, g)), ((_, m), (_, v))) in iter {
            for (((p, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *m = b1t * *m + ob1 * *g;
                *v = b2t * *v + ob2 * *g * *g;
                *p -= step_size * *m / ((*v).sqrt() / c2_sqrt + eps);
            }
        }
        Ok(())
    }
}

/// `ema ← decay·ema + (1 − decay)·live`.
pub fn ema_update<T: Real>(ema: &mut ParamStore<T>, live: &ParamStore<T>, decay: f64) -> Result<(), NnError> {
    if !ema.congruent(live) {
        return Err(NnError::Shape("EMA does not match parameters".into()));
    }
    let d = T::of(decay);
    let od = T::of(1.0 - decay);
    for ((_, e), (_, l)) in ema.iter_mut().zip(live.iter()) {
        for (e, l) in e.data_mut().iter_mut().zip(l.data()) {
            *e = d * *e + od * *l;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    fn store(v: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(vec![v.len()], v.to_vec()).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = store(&[1.0, -2.0, 0.5]);
        let g = store(&[0.3, -7.0, 1e-3]);
        let mut adam = Adam::new(&p, 0.01);
        adam.update(&mut p, &g).unwrap();
        let d = p.get("w").unwrap().data();
        // with bias correction the first step is lr·sign(g) up to eps
        assert!((d[0] - 0.99).abs() < 1e-6);
        assert!((d[1] + 1.99).abs() < 1e-6);
        assert!((d[2] - 0.49).abs() < 1e-4);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = store(&[3.0, -4.0]);
        let mut adam = Adam::new(&p, 0.05);
        for _ in 0..2000 {
            let g = store(&p.get("w").unwrap().data().iter().map(|x| 2.0 * x).collect::<Vec<_>>());
            adam.update(&mut p, &g).unwrap();
        }
        assert!(p.get("w").unwrap().data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        let mut p = store(&[1.0, -2.0]);
        let mut adam = Adam::new(&p, 0.1);
        adam.update(&mut p, &store(&[0.0, 0.0])).unwrap();
        assert_eq!(p, store(&[1.0, -2.0]));
    }

    #[test]
    fn scalar_quadratic_decreases_monotonically() {
        let run = || {
            let mut p = store(&[20.0]);
            let mut adam = Adam::new(&p, 0.1);
            let mut trace = vec![];
            for _ in 0..100 {
                let w = p.get("w").unwrap().data()[0];
                adam.update(&mut p, &store(&[2.0 * w])).unwrap();
                trace.push(p.get("w").unwrap().data()[0]);
            }
            trace
        };
        let trace = run();
        let mut prev = 20.0f64;
        for w in &trace {
            assert!(w.abs() < prev.abs());
            prev = *w;
        }
        assert_eq!(trace, run());
    }

    #[test]
    fn ema_arithmetic() {
        let mut e = store(&[0.0]);
        ema_update(&mut e, &store(&[1.0]), 0.995).unwrap();
        assert!((e.get("w").unwrap().data()[0] - 0.005).abs() < 1e-15);
        ema_update(&mut e, &store(&[3.0]), 0.0).unwrap();
        assert_eq!(e.get("w").unwrap().data()[0], 3.0);
    }

    #[test]
    fn ema_converges_and_checks_shape() {
        let mut e = store(&[0.0]);
        let l = store(&[1.0]);
        for _ in 0..1000 {
            ema_update(&mut e, &l, 0.99).unwrap();
        }
        assert!((e.get("w").unwrap().data()[0] - 1.0).abs() < 1e-4);
        assert!(ema_update(&mut e, &store(&[1.0, 2.0]), 0.9).is_err());
    }
}
