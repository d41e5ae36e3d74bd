use std::collections::HashMap;

use crate::autodiff::{ParamId, ParamStore, Scalar};
use crate::error::{Error, Result};

pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam with bias correction. One pair of moment buffers per stored
/// parameter, so a weight shared across stages is updated once from its
/// summed gradient.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, beta1: f64, beta2: f64) -> Self {
        let zeros = || -> Vec<Vec<T>> {
            store
                .params()
                .iter()
                .map(|p| vec![T::zero(); p.tensor.numel()])
                .collect()
        };
        Adam {
            beta1,
            beta2,
            epsilon: ADAM_EPSILON,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: ParamId) -> &[T] {
        &self.first[id.index()]
    }

    pub fn second_moment(&self, id: ParamId) -> &[T] {
        &self.second[id.index()]
    }

    /// Apply one update. Parameters absent from `grads` are left alone.
    /// Every gradient is checked before anything is modified.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &HashMap<ParamId, Vec<T>>, lr: f64) -> Result<()> {
        for id in store.ids() {
            if let Some(g) = grads.get(&id) {
                let p = store.get(id);
                if g.len() != p.tensor.numel() {
                    return Err(Error::InvalidArgument(format!(
                        "gradient for `{}` has {} entries, parameter has {}",
                        p.name,
                        g.len(),
                        p.tensor.numel()
                    )));
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let step_size = T::of(lr / c1);
        let inv_c2 = T::of(1.0 / c2);
        let eps = T::of(self.epsilon);
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(&id) else { continue };
            let m = &mut self.first[id.index()];
            let v = &mut self.second[id.index()];
            let w = store.get_mut(id).tensor.data_mut();
            for i in 0..w.len() {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                w[i] -= step_size * m[i] / ((v[i] * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Graph, Tensor};

    fn scalar_store(w: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::scalar(w)).unwrap();
        (s, id)
    }

    #[test]
    fn descends_a_quadratic() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = Adam::new(&store, 0.9, 0.999);
        let mut reached = None;
        for step in 1..=2000 {
            let w = store.get(id).tensor.item();
            let grads = HashMap::from([(id, vec![2.0 * (w - 3.0)])]);
            adam.step(&mut store, &grads, 0.05).unwrap();
            if (store.get(id).tensor.item() - 3.0).abs() < 1e-2 && reached.is_none() {
                reached = Some(step);
            }
        }
        assert!(reached.is_some());
        assert!((store.get(id).tensor.item() - 3.0).abs() < 1e-2);
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_and_decays_moments() {
        let (mut store, id) = scalar_store(1.5);
        let mut adam = Adam::new(&store, 0.9, 0.999);
        adam.step(&mut store, &HashMap::from([(id, vec![0.0])]), 0.1).unwrap();
        assert_eq!(store.get(id).tensor.item(), 1.5);
        assert_eq!(adam.first_moment(id), &[0.0]);

        adam.step(&mut store, &HashMap::from([(id, vec![2.0])]), 0.1).unwrap();
        let (m, v) = (adam.first_moment(id)[0], adam.second_moment(id)[0]);
        adam.step(&mut store, &HashMap::from([(id, vec![0.0])]), 0.1).unwrap();
        assert_eq!(adam.first_moment(id)[0], 0.9 * m);
        assert_eq!(adam.second_moment(id)[0], 0.999 * v);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = Adam::new(&store, 0.9, 0.999);
        adam.step(&mut store, &HashMap::from([(id, vec![-4.0])]), 0.01).unwrap();
        assert!((store.get(id).tensor.item() - 0.01).abs() < 1e-9);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut store = ParamStore::new();
        let a = store.insert("a", Tensor::scalar(1.0)).unwrap();
        let b = store.insert("stage2.bad", Tensor::scalar(1.0)).unwrap();
        let mut adam = Adam::new(&store, 0.9, 0.999);
        let grads = HashMap::from([(a, vec![1.0]), (b, vec![f64::NAN])]);
        match adam.step(&mut store, &grads, 0.1) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "stage2.bad"),
            other => panic!("{other:?}"),
        }
        assert_eq!(store.get(a).tensor.item(), 1.0, "nothing is applied");
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn shared_weight_gets_one_update_from_summed_gradient() {
        // y = w*a + w*b with w bound once, against two unshared aliases.
        let build = |g: &mut Graph<f64>, store: &ParamStore<f64>, id| {
            let x1 = g.constant(Tensor::new(&[2], vec![1.0, -2.0]).unwrap());
            let x2 = g.constant(Tensor::new(&[2], vec![0.5, 3.0]).unwrap());
            let w1 = g.param(store, id);
            let w2 = g.param(store, id);
            let p1 = g.hadamard(w1, x1).unwrap();
            let p2 = g.hadamard(w2, x2).unwrap();
            let s = g.add(p1, p2).unwrap();
            g.sum(s)
        };
        let mut shared = ParamStore::new();
        let id = shared.insert("gtn.w", Tensor::new(&[2], vec![0.3, -0.7]).unwrap()).unwrap();
        let mut unshared = shared.clone();

        let mut g = Graph::new();
        let y = build(&mut g, &shared, id);
        let grads = g.backward(y).unwrap();
        let mut adam = Adam::new(&shared, 0.9, 0.999);
        adam.step(&mut shared, grads.params(), 0.01).unwrap();

        let mut gu = Graph::unshared();
        let yu = build(&mut gu, &unshared, id);
        let gr = gu.backward(yu).unwrap();
        let aliases = gu.aliases(id);
        assert_eq!(aliases.len(), 2);
        let summed: Vec<f64> = (0..2)
            .map(|i| aliases.iter().map(|v| gr.get(*v).unwrap()[i]).sum())
            .collect();
        let mut adam_u = Adam::new(&unshared, 0.9, 0.999);
        adam_u.step(&mut unshared, &HashMap::from([(id, summed)]), 0.01).unwrap();
        assert_eq!(shared.get(id).tensor.data(), unshared.get(id).tensor.data());
    }
}
