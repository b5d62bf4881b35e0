use rand_chacha::ChaCha8Rng;

use crate::numkit::{Dense2D, Parameter, Real};

use super::NetError;

/// Recurrent state of one layer for a batch: `h` and `c` are `batch x hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T: Real = f32> {
    pub h: Dense2D<T>,
    pub c: Dense2D<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self { h: Dense2D::zeros(batch, hidden), c: Dense2D::zeros(batch, hidden) }
    }

    pub fn batch(&self) -> usize {
        self.h.rows()
    }

    /// The first `rows` rows, for windows where trailing lanes have ended.
    pub fn truncated(&self, rows: usize) -> Self {
        let hd = self.h.cols();
        let take = |m: &Dense2D<T>| Dense2D::from_vec(rows, hd, m.data()[..rows * hd].to_vec()).expect("row prefix");
        Self { h: take(&self.h), c: take(&self.c) }
    }
}

/// One LSTM layer. Gate blocks are packed as `[input, forget, candidate, output]`
/// along the columns of the weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer<T: Real = f32> {
    pub w_ih: Parameter<T>,
    pub w_hh: Parameter<T>,
    pub bias: Parameter<T>,
    hidden: usize,
}

/// Activations kept for the backward pass. All sequence matrices are
/// time-major: row `t * batch + b`.
#[derive(Debug, Clone)]
pub(crate) struct LstmCache<T: Real> {
    pub batch: usize,
    pub steps: usize,
    pub x: Dense2D<T>,
    pub gates: Dense2D<T>,
    pub c: Dense2D<T>,
    pub tanh_c: Dense2D<T>,
    pub h: Dense2D<T>,
    pub h0: Dense2D<T>,
    pub c0: Dense2D<T>,
}

#[inline]
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Real> LstmLayer<T> {
    pub fn new(prefix: &str, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_ih = Parameter::glorot(format!("{prefix}.w_ih"), input, 4 * hidden, rng);
        let w_hh = Parameter::glorot(format!("{prefix}.w_hh"), hidden, 4 * hidden, rng);
        let mut bias = Parameter::zeros(format!("{prefix}.bias"), 1, 4 * hidden);
        for v in &mut bias.value.data_mut()[hidden..2 * hidden] {
            *v = T::one();
        }
        Self { w_ih, w_hh, bias, hidden }
    }

    pub fn from_parts(w_ih: Parameter<T>, w_hh: Parameter<T>, bias: Parameter<T>) -> Result<Self, NetError> {
        let hidden = w_hh.shape().0;
        if w_hh.shape() != (hidden, 4 * hidden)
            || w_ih.shape().1 != 4 * hidden
            || bias.shape() != (1, 4 * hidden)
        {
            return Err(NetError::Dimension(format!(
                "inconsistent LSTM parameter shapes {:?} {:?} {:?}",
                w_ih.shape(),
                w_hh.shape(),
                bias.shape()
            )));
        }
        Ok(Self { w_ih, w_hh, bias, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape().0
    }

    pub fn params(&self) -> [&Parameter<T>; 3] {
        [&self.w_ih, &self.w_hh, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 3] {
        [&mut self.w_ih, &mut self.w_hh, &mut self.bias]
    }

    pub fn cast<U: Real>(&self) -> LstmLayer<U> {
        LstmLayer { w_ih: self.w_ih.cast(), w_hh: self.w_hh.cast(), bias: self.bias.cast(), hidden: self.hidden }
    }

    /// Single time step for a single example.
    pub fn cell_forward(&self, x: &[T], h_prev: &[T], c_prev: &[T]) -> Result<(Vec<T>, Vec<T>), NetError> {
        let hd = self.hidden;
        if x.len() != self.input_dim() || h_prev.len() != hd || c_prev.len() != hd {
            return Err(NetError::Dimension(format!(
                "cell expects input {} / hidden {}, got {} / {} / {}",
                self.input_dim(),
                hd,
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let x = Dense2D::from_vec(1, x.len(), x.to_vec())?;
        let state = LstmState {
            h: Dense2D::from_vec(1, hd, h_prev.to_vec())?,
            c: Dense2D::from_vec(1, hd, c_prev.to_vec())?,
        };
        let cache = self.forward_seq(&x, 1, 1, &state);
        Ok((cache.h.into_vec(), cache.c.into_vec()))
    }

    /// Runs the layer over a time-major input of `steps * batch` rows.
    pub(crate) fn forward_seq(&self, x: &Dense2D<T>, batch: usize, steps: usize, init: &LstmState<T>) -> LstmCache<T> {
        let hd = self.hidden;
        let g4 = 4 * hd;
        let n = steps * batch;
        debug_assert_eq!(x.rows(), n);

        let mut gates = Dense2D::zeros(n, g4);
        T::gemm(
            n,
            x.cols(),
            g4,
            T::one(),
            x.data(),
            x.cols() as isize,
            1,
            self.w_ih.value.data(),
            g4 as isize,
            1,
            T::zero(),
            gates.data_mut(),
            g4 as isize,
            1,
        );
        gates.add_row(self.bias.value.data());

        let mut c_all = Dense2D::zeros(n, hd);
        let mut tanh_all = Dense2D::zeros(n, hd);
        let mut h_all = Dense2D::zeros(n, hd);

        for t in 0..steps {
            let lo = t * batch;
            let (h_prev, c_prev): (&[T], &[T]) = if t == 0 {
                (init.h.data(), init.c.data())
            } else {
                (&h_all.data()[(lo - batch) * hd..lo * hd], &c_all.data()[(lo - batch) * hd..lo * hd])
            };
            let h_prev = h_prev.to_vec();
            let c_prev = c_prev.to_vec();
            let zblock = &mut gates.data_mut()[lo * g4..(lo + batch) * g4];
            T::gemm(
                batch,
                hd,
                g4,
                T::one(),
                &h_prev,
                hd as isize,
                1,
                self.w_hh.value.data(),
                g4 as isize,
                1,
                T::one(),
                zblock,
                g4 as isize,
                1,
            );
            for b in 0..batch {
                let z = &mut zblock[b * g4..(b + 1) * g4];
                for j in 0..hd {
                    z[j] = sigmoid(z[j]);
                    z[hd + j] = sigmoid(z[hd + j]);
                    z[2 * hd + j] = z[2 * hd + j].tanh();
                    z[3 * hd + j] = sigmoid(z[3 * hd + j]);
                }
                let row = lo + b;
                for j in 0..hd {
                    let c = z[hd + j] * c_prev[b * hd + j] + z[j] * z[2 * hd + j];
                    let tc = c.tanh();
                    c_all.data_mut()[row * hd + j] = c;
                    tanh_all.data_mut()[row * hd + j] = tc;
                    h_all.data_mut()[row * hd + j] = z[3 * hd + j] * tc;
                }
            }
        }

        LstmCache {
            batch,
            steps,
            x: x.clone(),
            gates,
            c: c_all,
            tanh_c: tanh_all,
            h: h_all,
            h0: init.h.clone(),
            c0: init.c.clone(),
        }
    }

    /// Accumulates parameter gradients given `dh_out` (gradient of the loss
    /// with respect to every output `h_t`) and returns the input gradient.
    /// The initial state is treated as a constant (truncation point).
    pub(crate) fn backward_seq(&mut self, cache: &LstmCache<T>, dh_out: &Dense2D<T>) -> Dense2D<T> {
        let hd = self.hidden;
        let g4 = 4 * hd;
        let (batch, steps) = (cache.batch, cache.steps);
        let n = batch * steps;
        let one = T::one();

        let mut dz = Dense2D::zeros(n, g4);
        let mut dh_next = vec![T::zero(); batch * hd];
        let mut dc_next = vec![T::zero(); batch * hd];

        for t in (0..steps).rev() {
            let lo = t * batch;
            for b in 0..batch {
                let row = lo + b;
                let z = cache.gates.row(row);
                let tc = cache.tanh_c.row(row);
                let dho = dh_out.row(row);
                let c_prev = if t == 0 { cache.c0.row(b) } else { cache.c.row(row - batch) };
                let dzr = &mut dz.data_mut()[row * g4..(row + 1) * g4];
                for j in 0..hd {
                    let (i, f, g, o) = (z[j], z[hd + j], z[2 * hd + j], z[3 * hd + j]);
                    let dh = dho[j] + dh_next[b * hd + j];
                    let dc = dh * o * (one - tc[j] * tc[j]) + dc_next[b * hd + j];
                    dzr[j] = dc * g * i * (one - i);
                    dzr[hd + j] = dc * c_prev[j] * f * (one - f);
                    dzr[2 * hd + j] = dc * i * (one - g * g);
                    dzr[3 * hd + j] = dh * tc[j] * o * (one - o);
                    dc_next[b * hd + j] = dc * f;
                }
            }
            // dh_next = dz_t * W_hh^T
            T::gemm(
                batch,
                g4,
                hd,
                one,
                &dz.data()[lo * g4..(lo + batch) * g4],
                g4 as isize,
                1,
                self.w_hh.value.data(),
                1,
                g4 as isize,
                T::zero(),
                &mut dh_next,
                hd as isize,
                1,
            );
        }

        // h_prev stacked in time-major order: [h0; h_0 .. h_{T-2}]
        let mut h_prev = Dense2D::zeros(n, hd);
        h_prev.data_mut()[..batch * hd].copy_from_slice(cache.h0.data());
        if steps > 1 {
            h_prev.data_mut()[batch * hd..].copy_from_slice(&cache.h.data()[..(n - batch) * hd]);
        }

        let in_dim = cache.x.cols();
        T::gemm(
            in_dim,
            n,
            g4,
            one,
            cache.x.data(),
            1,
            in_dim as isize,
            dz.data(),
            g4 as isize,
            1,
            one,
            self.w_ih.grad.data_mut(),
            g4 as isize,
            1,
        );
        T::gemm(
            hd,
            n,
            g4,
            one,
            h_prev.data(),
            1,
            hd as isize,
            dz.data(),
            g4 as isize,
            1,
            one,
            self.w_hh.grad.data_mut(),
            g4 as isize,
            1,
        );
        dz.sum_rows_into(self.bias.grad.data_mut());

        let mut dx = Dense2D::zeros(n, in_dim);
        T::gemm(
            n,
            g4,
            in_dim,
            one,
            dz.data(),
            g4 as isize,
            1,
            self.w_ih.value.data(),
            1,
            g4 as isize,
            T::zero(),
            dx.data_mut(),
            in_dim as isize,
            1,
        );
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cell(w: f64, b: f64) -> LstmLayer<f64> {
        let w_ih = Parameter::new("w_ih", Dense2D::from_vec(1, 4, vec![w; 4]).unwrap());
        let w_hh = Parameter::new("w_hh", Dense2D::from_vec(1, 4, vec![w; 4]).unwrap());
        let bias = Parameter::new("bias", Dense2D::from_vec(1, 4, vec![b; 4]).unwrap());
        LstmLayer::from_parts(w_ih, w_hh, bias).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let cell = unit_cell(0.0, 0.0);
        let (h, c) = cell.cell_forward(&[0.8], &[0.0], &[0.0]).unwrap();
        assert_eq!((h[0], c[0]), (0.0, 0.0));
    }

    #[test]
    fn scalar_gate_evaluation() {
        // i = f = o = sigma(1), g = tanh(1), c = i*g, h = o*tanh(c)
        let s = 1.0 / (1.0 + (-1.0f64).exp());
        let g = 1.0f64.tanh();
        let c_want = s * g;
        let h_want = s * c_want.tanh();
        assert!((s - 0.7311).abs() < 1e-4 && (g - 0.7616).abs() < 1e-4);
        assert!((c_want - 0.5568).abs() < 1e-4 && (h_want - 0.3696).abs() < 1e-4);

        let cell = unit_cell(1.0, 0.0);
        let (h, c) = cell.cell_forward(&[1.0], &[0.0], &[0.0]).unwrap();
        assert!((c[0] - c_want).abs() < 1e-12);
        assert!((h[0] - h_want).abs() < 1e-12);
    }

    #[test]
    fn saturated_gates_preserve_cell() {
        let w_ih = Parameter::new("w_ih", Dense2D::zeros(2, 12));
        let w_hh = Parameter::new("w_hh", Dense2D::zeros(3, 12));
        let mut bias = Parameter::new("bias", Dense2D::zeros(1, 12));
        for j in 0..3 {
            bias.value.set(0, j, -1e3);
            bias.value.set(0, 3 + j, 1e3);
        }
        let cell = LstmLayer::from_parts(w_ih, w_hh, bias).unwrap();
        let c_prev = [0.4f64, -1.3, 2.0];
        let (_, c) = cell.cell_forward(&[1.0, -2.0], &[0.1, 0.2, 0.3], &c_prev).unwrap();
        for (a, b) in c.iter().zip(c_prev) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let cell = unit_cell(1.0, 0.0);
        assert!(matches!(cell.cell_forward(&[1.0, 2.0], &[0.0], &[0.0]), Err(NetError::Dimension(_))));
    }
}
