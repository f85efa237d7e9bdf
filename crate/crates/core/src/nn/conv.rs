use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, ArrayView2, Axis, Ix1};
use rand::Rng;

use super::{Grads, ParamId, ParamStore, Real};

/// Square kernel, stride and zero padding shared by both spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn transposed_out_size(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel - 2 * self.padding
    }
}

/// Unfolds an N×C×H×W tensor (row-major slice) into a (C·k·k) × (N·Ho·Wo)
/// patch matrix. Out-of-bounds taps read as zero.
pub fn im2col<F: Real>(x: &[F], dims: (usize, usize, usize, usize), g: ConvGeometry) -> Array2<F> {
    let (n, c, h, w) = dims;
    let (ho, wo) = (g.out_size(h), g.out_size(w));
    let k = g.kernel;
    let ncols = n * ho * wo;
    let mut cols = vec![F::zero(); c * k * k * ncols];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for ni in 0..n {
                    let plane = &x[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for oh in 0..ho {
                        let ih = (oh * g.stride + ki) as isize - g.padding as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                        let base = (ni * ho + oh) * wo;
                        for ow in 0..wo {
                            let iw = (ow * g.stride + kj) as isize - g.padding as isize;
                            if iw >= 0 && iw < w as isize {
                                dst[base + ow] = src[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c * k * k, ncols), cols).expect("im2col shape")
}

/// Adjoint of [`im2col`]: scatters and sums patch columns back into an
/// N×C×H×W tensor.
pub fn col2im<F: Real>(cols: ArrayView2<F>, dims: (usize, usize, usize, usize), g: ConvGeometry) -> Array4<F> {
    let (n, c, h, w) = dims;
    let (ho, wo) = (g.out_size(h), g.out_size(w));
    let k = g.kernel;
    let ncols = n * ho * wo;
    assert_eq!(cols.dim(), (c * k * k, ncols), "col2im shape");
    let cols = cols.as_standard_layout();
    let cols = cols.as_slice().expect("standard layout");
    let mut out = vec![F::zero(); n * c * h * w];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for ni in 0..n {
                    let plane = &mut out[(ni * c + ci) * h * w..(ni * c + ci + 1) * h * w];
                    for oh in 0..ho {
                        let ih = (oh * g.stride + ki) as isize - g.padding as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                        let base = (ni * ho + oh) * wo;
                        for ow in 0..wo {
                            let iw = (ow * g.stride + kj) as isize - g.padding as isize;
                            if iw >= 0 && iw < w as isize {
                                dst[iw as usize] += src[base + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((n, c, h, w), out).expect("col2im shape")
}

/// (N, C, L) channel-major matrix (C, N·L) from an N×C×H×W tensor.
fn to_channel_major<F: Real>(x: &Array4<F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let v = x.view().into_shape_with_order((n, c, h * w)).expect("contiguous");
    let v = v.permuted_axes([1, 0, 2]);
    v.as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, n * h * w))
        .expect("contiguous")
}

fn from_channel_major<F: Real>(m: Array2<F>, dims: (usize, usize, usize, usize)) -> Array4<F> {
    let (n, c, h, w) = dims;
    let v = m.into_shape_with_order((c, n, h * w)).expect("channel-major shape");
    let v = v.permuted_axes([1, 0, 2]);
    v.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, c, h, w))
        .expect("contiguous")
}

fn add_channel_bias<F: Real>(out: &mut Array4<F>, bias: &Array1<F>) {
    for (c, mut plane) in out.axis_iter_mut(Axis(1)).enumerate() {
        let b = bias[c];
        plane.mapv_inplace(|v| v + b);
    }
}

fn channel_sums<F: Real>(dy: &Array4<F>) -> Array1<F> {
    dy.axis_iter(Axis(1)).map(|p| p.sum()).collect()
}

fn uniform_init<F: Real, R: Rng>(shape: (usize, usize, usize, usize), fan_in: usize, rng: &mut R) -> (Array4<F>, Array1<F>) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = Array4::from_shape_fn(shape, |_| F::c(rng.random_range(-bound..bound)));
    let b = Array1::from_shape_fn(shape.0, |_| F::c(rng.random_range(-bound..bound)));
    (w, b)
}

/// Strided 2-D convolution, weight shape (out, in, k, k).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
}

#[derive(Clone, Debug)]
pub struct Conv2dTape<F> {
    cols: Array2<F>,
    in_dims: (usize, usize, usize, usize),
}

impl Conv2d {
    pub fn register<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        rng: &mut R,
    ) -> Self {
        let k = geometry.kernel;
        let (w, b) = uniform_init::<F, R>((out_channels, in_channels, k, k), in_channels * k * k, rng);
        Conv2d {
            weight: store.add(format!("{prefix}.weight"), w.into_dyn()),
            bias: store.add(format!("{prefix}.bias"), b.into_dyn()),
            in_channels,
            out_channels,
            geometry,
        }
    }

    fn weight_matrix<'a, F: Real>(&self, store: &'a ParamStore<F>) -> ArrayView2<'a, F> {
        let k = self.geometry.kernel;
        store
            .get(self.weight)
            .view()
            .into_shape_with_order((self.out_channels, self.in_channels * k * k))
            .expect("conv weight layout")
    }

    pub fn forward<F: Real>(&self, store: &ParamStore<F>, x: &Array4<F>) -> (Array4<F>, Conv2dTape<F>) {
        let dims = x.dim();
        assert_eq!(dims.1, self.in_channels, "conv input channels");
        let x = x.as_standard_layout();
        let cols = im2col(x.as_slice().expect("standard layout"), dims, self.geometry);
        let (ho, wo) = (self.geometry.out_size(dims.2), self.geometry.out_size(dims.3));
        let mut out2 = Array2::zeros((self.out_channels, cols.ncols()));
        general_mat_mul(F::one(), &self.weight_matrix(store), &cols, F::zero(), &mut out2);
        let mut out = from_channel_major(out2, (dims.0, self.out_channels, ho, wo));
        let bias = store.get(self.bias).view().into_dimensionality::<Ix1>().expect("bias").to_owned();
        add_channel_bias(&mut out, &bias);
        (out, Conv2dTape { cols, in_dims: dims })
    }

    pub fn backward<F: Real>(&self, store: &ParamStore<F>, tape: &Conv2dTape<F>, dy: &Array4<F>, grads: &mut Grads<F>) -> Array4<F> {
        let dy2 = to_channel_major(dy);
        if let Some(gw) = grads.slot(self.weight) {
            let k = self.geometry.kernel;
            let mut gw2 = gw
                .view_mut()
                .into_shape_with_order((self.out_channels, self.in_channels * k * k))
                .expect("conv grad layout");
            general_mat_mul(F::one(), &dy2, &tape.cols.t(), F::one(), &mut gw2);
        }
        if let Some(gb) = grads.slot(self.bias) {
            gb.zip_mut_with(&channel_sums(dy).into_dyn(), |g, &v| *g += v);
        }
        let mut dcols = Array2::zeros(tape.cols.raw_dim());
        general_mat_mul(F::one(), &self.weight_matrix(store).t(), &dy2, F::zero(), &mut dcols);
        col2im(dcols.view(), tape.in_dims, self.geometry)
    }
}

/// Strided transposed convolution, weight shape (in, out, k, k).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub geometry: ConvGeometry,
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2dTape<F> {
    x2: Array2<F>,
    in_dims: (usize, usize, usize, usize),
}

impl ConvTranspose2d {
    pub fn register<F: Real, R: Rng>(
        store: &mut ParamStore<F>,
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        rng: &mut R,
    ) -> Self {
        let k = geometry.kernel;
        let (w, _) = uniform_init::<F, R>((in_channels, out_channels, k, k), out_channels * k * k, rng);
        let bound = 1.0 / ((out_channels * k * k) as f64).sqrt();
        let b = Array1::from_shape_fn(out_channels, |_| F::c(rng.random_range(-bound..bound)));
        ConvTranspose2d {
            weight: store.add(format!("{prefix}.weight"), w.into_dyn()),
            bias: store.add(format!("{prefix}.bias"), b.into_dyn()),
            in_channels,
            out_channels,
            geometry,
        }
    }

    fn weight_matrix<'a, F: Real>(&self, store: &'a ParamStore<F>) -> ArrayView2<'a, F> {
        let k = self.geometry.kernel;
        store
            .get(self.weight)
            .view()
            .into_shape_with_order((self.in_channels, self.out_channels * k * k))
            .expect("conv-transpose weight layout")
    }

    pub fn forward<F: Real>(&self, store: &ParamStore<F>, x: &Array4<F>) -> (Array4<F>, ConvTranspose2dTape<F>) {
        let dims = x.dim();
        assert_eq!(dims.1, self.in_channels, "conv-transpose input channels");
        let x2 = to_channel_major(x);
        let k = self.geometry.kernel;
        let mut cols = Array2::zeros((self.out_channels * k * k, x2.ncols()));
        general_mat_mul(F::one(), &self.weight_matrix(store).t(), &x2, F::zero(), &mut cols);
        let (ho, wo) = (
            self.geometry.transposed_out_size(dims.2),
            self.geometry.transposed_out_size(dims.3),
        );
        let mut out = col2im(cols.view(), (dims.0, self.out_channels, ho, wo), self.geometry);
        let bias = store.get(self.bias).view().into_dimensionality::<Ix1>().expect("bias").to_owned();
        add_channel_bias(&mut out, &bias);
        (out, ConvTranspose2dTape { x2, in_dims: dims })
    }

    pub fn backward<F: Real>(
        &self,
        store: &ParamStore<F>,
        tape: &ConvTranspose2dTape<F>,
        dy: &Array4<F>,
        grads: &mut Grads<F>,
    ) -> Array4<F> {
        let dy_std = dy.as_standard_layout();
        let dcols = im2col(dy_std.as_slice().expect("standard layout"), dy.dim(), self.geometry);
        if let Some(gw) = grads.slot(self.weight) {
            let k = self.geometry.kernel;
            let mut gw2 = gw
                .view_mut()
                .into_shape_with_order((self.in_channels, self.out_channels * k * k))
                .expect("conv-transpose grad layout");
            general_mat_mul(F::one(), &tape.x2, &dcols.t(), F::one(), &mut gw2);
        }
        if let Some(gb) = grads.slot(self.bias) {
            gb.zip_mut_with(&channel_sums(dy).into_dyn(), |g, &v| *g += v);
        }
        let mut dx2 = Array2::zeros(tape.x2.raw_dim());
        general_mat_mul(F::one(), &self.weight_matrix(store), &dcols, F::zero(), &mut dx2);
        from_channel_major(dx2, tape.in_dims)
    }
}
