use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{sigmoid, Parameters};

/// One gated recurrent layer.
///
/// ```text
/// z = sigmoid(x Wz + h Uz + bz)
/// r = sigmoid(x Wr + h Ur + br)
/// n = tanh(x Wn + (r * h) Un + bn)
/// h' = (1 - z) * n + z * h
/// ```
///
/// The input weights of the three gates are packed column-wise as
/// `[z | r | n]`, the recurrent weights of the two sigmoid gates as `[z | r]`.
#[derive(Debug, Clone)]
pub struct GruLayer {
    pub input_weight: Array2<f64>,
    pub gate_weight: Array2<f64>,
    pub candidate_weight: Array2<f64>,
    pub bias: Array2<f64>,
}

#[derive(Debug, Clone)]
struct StepCache {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct GruCache {
    steps: Vec<StepCache>,
}

impl GruLayer {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let dist = Uniform::new_inclusive(-k, k).expect("finite bounds");
        let mut init = |shape: (usize, usize)| Array2::from_shape_simple_fn(shape, || dist.sample(rng));
        Self {
            input_weight: init((input, 3 * hidden)),
            gate_weight: init((hidden, 2 * hidden)),
            candidate_weight: init((hidden, hidden)),
            bias: init((1, 3 * hidden)),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input_weight: Array2::zeros((input, 3 * hidden)),
            gate_weight: Array2::zeros((hidden, 2 * hidden)),
            candidate_weight: Array2::zeros((hidden, hidden)),
            bias: Array2::zeros((1, 3 * hidden)),
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_weight.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.candidate_weight.nrows()
    }

    fn step(&self, x: &Array2<f64>, h_prev: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
        let hs = self.hidden_size();
        let a = x.dot(&self.input_weight) + &self.bias;
        let g = h_prev.dot(&self.gate_weight);
        let mut z = &a.slice(s![.., ..hs]) + &g.slice(s![.., ..hs]);
        z.mapv_inplace(sigmoid);
        let mut r = &a.slice(s![.., hs..2 * hs]) + &g.slice(s![.., hs..]);
        r.mapv_inplace(sigmoid);
        let rh = &r * h_prev;
        let mut n = rh.dot(&self.candidate_weight);
        n += &a.slice(s![.., 2 * hs..]);
        n.mapv_inplace(f64::tanh);
        let mut h = n.clone();
        Zip::from(&mut h)
            .and(&z)
            .and(h_prev)
            .for_each(|h, &z, &hp| *h += z * (hp - *h));
        (h, z, r, n)
    }

    /// Runs the layer over a time-major sequence from a zero state and
    /// returns every hidden state.
    pub fn forward(&self, xs: &[Array2<f64>]) -> (Vec<Array2<f64>>, GruCache) {
        let batch = xs.first().map_or(0, |x| x.nrows());
        let mut h = Array2::zeros((batch, self.hidden_size()));
        let mut outs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let (h_next, z, r, n) = self.step(x, &h);
            steps.push(StepCache {
                x: x.clone(),
                h_prev: h,
                z,
                r,
                n,
            });
            outs.push(h_next.clone());
            h = h_next;
        }
        (outs, GruCache { steps })
    }

    /// Forward pass without caching; returns the final hidden state only
    /// when `keep_all` is false.
    pub fn infer(&self, xs: &[Array2<f64>], keep_all: bool) -> Vec<Array2<f64>> {
        let batch = xs.first().map_or(0, |x| x.nrows());
        let mut h = Array2::zeros((batch, self.hidden_size()));
        let mut outs = Vec::new();
        for x in xs {
            h = self.step(x, &h).0;
            if keep_all {
                outs.push(h.clone());
            }
        }
        if !keep_all {
            outs.push(h);
        }
        outs
    }

    /// Backpropagation through time. `d_outs[t]` is the upstream gradient on
    /// hidden state `t` (`None` for zero). Returns the gradient on each input.
    pub fn backward(
        &self,
        cache: &GruCache,
        d_outs: &[Option<Array2<f64>>],
        grad: &mut GruLayer,
    ) -> Vec<Array2<f64>> {
        let hs = self.hidden_size();
        let steps = &cache.steps;
        let batch = steps.first().map_or(0, |s| s.x.nrows());
        let mut carry: Array2<f64> = Array2::zeros((batch, hs));
        let mut dxs = vec![Array2::zeros((0, 0)); steps.len()];
        for t in (0..steps.len()).rev() {
            let c = &steps[t];
            let mut dh = carry;
            if let Some(d) = &d_outs[t] {
                dh += d;
            }

            let mut da = Array2::zeros((batch, 3 * hs));
            let mut dh_prev = &dh * &c.z;
            {
                let (mut daz, rest) = da.view_mut().split_at(Axis(1), hs);
                let (mut dar, mut dan) = rest.split_at(Axis(1), hs);

                Zip::from(&mut dan)
                    .and(&dh)
                    .and(&c.z)
                    .and(&c.n)
                    .for_each(|dan, &dh, &z, &n| *dan = dh * (1.0 - z) * (1.0 - n * n));
                Zip::from(&mut daz)
                    .and(&dh)
                    .and(&c.z)
                    .and(&c.n)
                    .and(&c.h_prev)
                    .for_each(|daz, &dh, &z, &n, &hp| *daz = dh * (hp - n) * z * (1.0 - z));

                let rh = &c.r * &c.h_prev;
                general_mat_mul(1.0, &rh.t(), &dan, 1.0, &mut grad.candidate_weight);
                let drh = dan.dot(&self.candidate_weight.t());
                Zip::from(&mut dar)
                    .and(&drh)
                    .and(&c.r)
                    .and(&c.h_prev)
                    .for_each(|dar, &drh, &r, &hp| *dar = drh * hp * r * (1.0 - r));
                Zip::from(&mut dh_prev)
                    .and(&drh)
                    .and(&c.r)
                    .for_each(|dhp, &drh, &r| *dhp += drh * r);
            }

            let dg = da.slice(s![.., ..2 * hs]);
            general_mat_mul(1.0, &c.h_prev.t(), &dg, 1.0, &mut grad.gate_weight);
            general_mat_mul(1.0, &dg, &self.gate_weight.t(), 1.0, &mut dh_prev);

            general_mat_mul(1.0, &c.x.t(), &da, 1.0, &mut grad.input_weight);
            grad.bias += &da.sum_axis(Axis(0)).insert_axis(Axis(0));
            dxs[t] = da.dot(&self.input_weight.t());
            carry = dh_prev;
        }
        dxs
    }
}

impl Parameters for GruLayer {
    fn params(&self) -> Vec<&Array2<f64>> {
        vec![
            &self.input_weight,
            &self.gate_weight,
            &self.candidate_weight,
            &self.bias,
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![
            &mut self.input_weight,
            &mut self.gate_weight,
            &mut self.candidate_weight,
            &mut self.bias,
        ]
    }
}

/// Stacked GRU layers used as a sequence-to-one encoder: the representation
/// is the top layer's final hidden state.
#[derive(Debug, Clone)]
pub struct GruStack {
    pub layers: Vec<GruLayer>,
}

#[derive(Debug, Clone)]
pub struct GruStackCache {
    layers: Vec<GruCache>,
}

impl GruStack {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, n_layers: usize, rng: &mut R) -> Self {
        let layers = (0..n_layers)
            .map(|i| GruLayer::new(if i == 0 { input } else { hidden }, hidden, rng))
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| GruLayer::zeros(l.input_size(), l.hidden_size()))
                .collect(),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].input_size()
    }

    pub fn infer(&self, xs: &[Array2<f64>]) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut seq: Vec<Array2<f64>> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { xs } else { &seq[..] };
            seq = layer.infer(input, i < last);
        }
        seq.pop().expect("non-empty sequence")
    }

    pub fn forward(&self, xs: &[Array2<f64>]) -> (Array2<f64>, GruStackCache) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut seq: Vec<Array2<f64>> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { xs } else { &seq[..] };
            let (out, cache) = layer.forward(input);
            caches.push(cache);
            seq = out;
        }
        (
            seq.pop().expect("non-empty sequence"),
            GruStackCache { layers: caches },
        )
    }

    /// Gradient on each input step given the gradient on the final top-layer
    /// hidden state.
    pub fn backward(
        &self,
        cache: &GruStackCache,
        d_last: &Array2<f64>,
        grad: &mut GruStack,
    ) -> Vec<Array2<f64>> {
        let len = cache.layers[0].steps.len();
        let mut d_outs: Vec<Option<Array2<f64>>> = vec![None; len];
        d_outs[len - 1] = Some(d_last.clone());
        let mut dxs = Vec::new();
        for i in (0..self.layers.len()).rev() {
            dxs = self.layers[i].backward(&cache.layers[i], &d_outs, &mut grad.layers[i]);
            d_outs = dxs.iter().cloned().map(Some).collect();
        }
        dxs
    }
}

impl Parameters for GruStack {
    fn params(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
