use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayD, Axis, Ix1, Ix2};
use rand::Rng;

use super::{Grads, ParamId, ParamStore, Real};

/// Affine map `y = x Wᵀ + b` with `W` of shape (out, in).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    /// Registers `<prefix>.weight` and `<prefix>.bias`, uniform in ±1/√fan_in.
    pub fn register<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let w = Array2::from_shape_fn((out_features, in_features), |_| F::c(rng.random_range(-bound..bound)));
        let b = Array1::from_shape_fn(out_features, |_| F::c(rng.random_range(-bound..bound)));
        Linear {
            weight: store.add(format!("{prefix}.weight"), w.into_dyn()),
            bias: store.add(format!("{prefix}.bias"), b.into_dyn()),
            in_features,
            out_features,
        }
    }

    fn weight<'a, F: Real>(&self, store: &'a ParamStore<F>) -> ndarray::ArrayView2<'a, F> {
        store.get(self.weight).view().into_dimensionality::<Ix2>().expect("linear weight is 2-D")
    }

    pub fn forward<F: Real>(&self, store: &ParamStore<F>, x: &Array2<F>) -> Array2<F> {
        let w = self.weight(store);
        let b = store.get(self.bias).view().into_dimensionality::<Ix1>().expect("bias is 1-D");
        let mut y = Array2::zeros((x.nrows(), self.out_features));
        general_mat_mul(F::one(), x, &w.t(), F::zero(), &mut y);
        y += &b;
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<F: Real>(&self, store: &ParamStore<F>, x: &Array2<F>, dy: &Array2<F>, grads: &mut Grads<F>) -> Array2<F> {
        if let Some(gw) = grads.slot(self.weight) {
            let mut gw2 = view2_mut(gw);
            general_mat_mul(F::one(), &dy.t(), x, F::one(), &mut gw2);
        }
        if let Some(gb) = grads.slot(self.bias) {
            let sum = dy.sum_axis(Axis(0));
            gb.zip_mut_with(&sum.into_dyn(), |g, &v| *g += v);
        }
        let w = self.weight(store);
        let mut dx = Array2::zeros((dy.nrows(), self.in_features));
        general_mat_mul(F::one(), dy, &w, F::zero(), &mut dx);
        dx
    }
}

pub(super) fn view2_mut<F: Real>(a: &mut ArrayD<F>) -> ndarray::ArrayViewMut2<'_, F> {
    a.view_mut().into_dimensionality::<Ix2>().expect("2-D gradient")
}
