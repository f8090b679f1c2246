//! Stride-2 convolutions (im2col) and the view encoder built from them.
//!
//! Images are channels-last `(H*W) x C` blocks.

use facrig_core::Real;
use ndarray::{s, Array2, ArrayView2};
use rand::Rng;

use crate::nn::{init_matrix, relu, relu_backward, Init, Linear, ParamSet};

/// 3x3 convolution, stride 2, padding 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub w: usize,
    pub b: usize,
    pub cin: usize,
    pub cout: usize,
}

pub const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

pub fn conv_output_size(size: usize) -> usize {
    (size + 2 * PAD - KERNEL) / STRIDE + 1
}

impl Conv2d {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Self {
        let fan_in = cin * KERNEL * KERNEL;
        let w = ps.add(format!("{name}.w"), init_matrix(fan_in, cout, fan_in, Init::He, rng));
        let b = ps.add(format!("{name}.b"), Array2::zeros((1, cout)));
        Self { w, b, cin, cout }
    }

    fn im2col<T: Real>(&self, x: ArrayView2<T>, size: usize) -> Array2<T> {
        let out = conv_output_size(size);
        let mut cols = Array2::zeros((out * out, KERNEL * KERNEL * self.cin));
        for oy in 0..out {
            for ox in 0..out {
                let mut row = cols.row_mut(oy * out + ox);
                for ky in 0..KERNEL {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= size as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        if ix < 0 || ix >= size as isize {
                            continue;
                        }
                        let src = x.row(iy as usize * size + ix as usize);
                        let at = (ky * KERNEL + kx) * self.cin;
                        row.slice_mut(s![at..at + self.cin]).assign(&src);
                    }
                }
            }
        }
        cols
    }

    fn col2im<T: Real>(&self, dcols: ArrayView2<T>, size: usize) -> Array2<T> {
        let out = conv_output_size(size);
        let mut dx = Array2::zeros((size * size, self.cin));
        for oy in 0..out {
            for ox in 0..out {
                let row = dcols.row(oy * out + ox);
                for ky in 0..KERNEL {
                    let iy = (oy * STRIDE + ky) as isize - PAD as isize;
                    if iy < 0 || iy >= size as isize {
                        continue;
                    }
                    for kx in 0..KERNEL {
                        let ix = (ox * STRIDE + kx) as isize - PAD as isize;
                        if ix < 0 || ix >= size as isize {
                            continue;
                        }
                        let at = (ky * KERNEL + kx) * self.cin;
                        let mut dst = dx.row_mut(iy as usize * size + ix as usize);
                        dst += &row.slice(s![at..at + self.cin]);
                    }
                }
            }
        }
        dx
    }

    /// Returns the output and the im2col matrix needed for the backward pass.
    pub fn forward<T: Real>(&self, ps: &ParamSet<T>, x: ArrayView2<T>, size: usize) -> (Array2<T>, Array2<T>) {
        assert_eq!(x.dim(), (size * size, self.cin));
        let cols = self.im2col(x, size);
        let mut y = cols.dot(ps.value(self.w));
        y += &ps.value(self.b).row(0);
        (y, cols)
    }

    pub fn backward<T: Real>(&self, ps: &mut ParamSet<T>, cols: &Array2<T>, dy: ArrayView2<T>, size: usize) -> Array2<T> {
        let lin = Linear {
            w: self.w,
            b: self.b,
            inputs: cols.ncols(),
            outputs: self.cout,
        };
        let dcols = lin.backward(ps, cols.view(), dy);
        self.col2im(dcols.view(), size)
    }
}

/// Convolutional view encoder: stride-2 conv layers with ReLU, flattened into
/// one fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewCnn {
    pub convs: Vec<Conv2d>,
    pub fc: Linear,
    pub resolution: usize,
}

#[derive(Clone, Debug)]
pub struct CnnCache<T> {
    cols: Vec<Array2<T>>,
    acts: Vec<Array2<T>>,
    flat: Array2<T>,
}

impl ViewCnn {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        resolution: usize,
        channels: &[usize],
        code: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let mut cin = 4;
        let mut size = resolution;
        let mut convs = Vec::new();
        for (i, &c) in channels.iter().enumerate() {
            convs.push(Conv2d::new(ps, &format!("{name}.conv{i}"), cin, c, rng));
            cin = c;
            size = conv_output_size(size);
        }
        let fc = Linear::new(ps, &format!("{name}.fc"), size * size * cin, code, Init::Lecun, rng);
        Self { convs, fc, resolution }
    }

    pub fn code_dim(&self) -> usize {
        self.fc.outputs
    }

    pub fn forward<T: Real>(&self, ps: &ParamSet<T>, image: ArrayView2<T>) -> (Vec<T>, CnnCache<T>) {
        let mut size = self.resolution;
        let mut x = image.to_owned();
        let mut cols = Vec::new();
        let mut acts = Vec::new();
        for conv in &self.convs {
            let (mut y, c) = conv.forward(ps, x.view(), size);
            relu(&mut y);
            cols.push(c);
            acts.push(y.clone());
            size = conv_output_size(size);
            x = y;
        }
        let flat = x.into_shape_with_order((1, size * size * self.convs.last().map_or(4, |c| c.cout))).unwrap();
        let out = self.fc.forward(ps, flat.view());
        (out.row(0).to_vec(), CnnCache { cols, acts, flat })
    }

    /// Returns nothing: the image is an input, not a learned quantity.
    pub fn backward<T: Real>(&self, ps: &mut ParamSet<T>, cache: &CnnCache<T>, dcode: &[T]) {
        let dy = Array2::from_shape_vec((1, dcode.len()), dcode.to_vec()).unwrap();
        let dflat = self.fc.backward(ps, cache.flat.view(), dy.view());
        let mut sizes = vec![self.resolution];
        for _ in &self.convs {
            sizes.push(conv_output_size(*sizes.last().unwrap()));
        }
        let last = self.convs.len() - 1;
        let mut d = dflat
            .into_shape_with_order((sizes[last + 1] * sizes[last + 1], self.convs[last].cout))
            .unwrap();
        for (i, conv) in self.convs.iter().enumerate().rev() {
            relu_backward(cache.acts[i].view(), &mut d);
            if i == 0 {
                conv.backward_params_only(ps, &cache.cols[i], d.view());
                break;
            }
            d = conv.backward(ps, &cache.cols[i], d.view(), sizes[i]);
        }
    }
}

impl Conv2d {
    fn backward_params_only<T: Real>(&self, ps: &mut ParamSet<T>, cols: &Array2<T>, dy: ArrayView2<T>) {
        let lin = Linear {
            w: self.w,
            b: self.b,
            inputs: cols.ncols(),
            outputs: self.cout,
        };
        lin.backward_params(ps, cols.view(), dy);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct sliding-window convolution.
    fn naive_conv(x: &Array2<f64>, size: usize, w: &Array2<f64>, b: &Array2<f64>, cin: usize) -> Array2<f64> {
        let out = conv_output_size(size);
        let cout = w.ncols();
        let mut y = Array2::zeros((out * out, cout));
        for oy in 0..out {
            for ox in 0..out {
                for co in 0..cout {
                    let mut acc = b[[0, co]];
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy < 0 || ix < 0 || iy >= size as isize || ix >= size as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                acc += x[[iy as usize * size + ix as usize, ci]] * w[[(ky * 3 + kx) * cin + ci, co]];
                            }
                        }
                    }
                    y[[oy * out + ox, co]] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn im2col_matches_sliding_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::<f64>::new();
        let conv = Conv2d::new(&mut ps, "c", 3, 5, &mut rng);
        for size in [7, 8] {
            let x = init_matrix::<f64>(size * size, 3, 1, Init::Lecun, &mut rng);
            let (y, _) = conv.forward(&ps, x.view(), size);
            let want = naive_conv(&x, size, ps.value(conv.w), ps.value(conv.b), 3);
            assert!((&y - &want).iter().all(|d| d.abs() < 1e-12));
        }
    }

    #[test]
    fn conv_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::<f64>::new();
        let conv = Conv2d::new(&mut ps, "c", 2, 3, &mut rng);
        let size = 6;
        let x = init_matrix::<f64>(size * size, 2, 1, Init::Lecun, &mut rng);
        let loss = |x: &Array2<f64>, ps: &ParamSet<f64>| conv.forward(ps, x.view(), size).0.mapv(|v| v * v).sum() / 2.0;
        let (y, cols) = conv.forward(&ps, x.view(), size);
        let dx = conv.backward(&mut ps, &cols, y.view(), size);
        for idx in [(0, 0), (7, 1), (20, 0), (35, 1)] {
            let mut xp = x.clone();
            xp[idx] += 1e-6;
            let up = loss(&xp, &ps);
            xp[idx] -= 2e-6;
            let down = loss(&xp, &ps);
            assert!(((up - down) / 2e-6 - dx[idx]).abs() < 1e-6);
        }
    }

    #[test]
    fn cnn_parameter_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::<f64>::new();
        let cnn = ViewCnn::new(&mut ps, "cnn", 16, &[3, 4], 5, &mut rng);
        let img = init_matrix::<f64>(256, 4, 1, Init::Lecun, &mut rng).mapv(f64::abs);
        let loss = |ps: &ParamSet<f64>| cnn.forward(ps, img.view()).0.iter().map(|v| v * v).sum::<f64>() / 2.0;
        let (code, cache) = cnn.forward(&ps, img.view());
        ps.zero_grad();
        cnn.backward(&mut ps, &cache, &code);
        let base = ps.flat_values();
        let grads = ps.flat_grads();
        for i in (0..base.len()).step_by(7) {
            let mut p = base.clone();
            p[i] += 1e-6;
            ps.set_flat_values(&p);
            let up = loss(&ps);
            p[i] -= 2e-6;
            ps.set_flat_values(&p);
            let down = loss(&ps);
            let fd = (up - down) / 2e-6;
            assert!((fd - grads[i]).abs() < 1e-5 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", grads[i]);
        }
    }
}
