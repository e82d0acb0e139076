//! The occupancy head: an MLP over `[p, features, a]` rows.

use rand::Rng;

use super::decoder::FeaturePyramid;
use super::dense::Dense;
use crate::linalg::{gemm, Scalar, View};
use crate::volume::{NormalizedPoint, Stencil};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T> {
    pub layers: Vec<Dense<T>>,
}

/// Intermediates of one head pass over `n` rows.
#[derive(Debug, Clone)]
pub struct HeadTrace<T> {
    pub n: usize,
    /// Input rows, `[n][input width]`.
    pub inputs: Vec<T>,
    /// Post-ReLU activations of every hidden layer, `[n][width]`.
    pub hidden: Vec<Vec<T>>,
    pub logits: Vec<T>,
}

impl<T: Scalar> HeadParams<T> {
    /// Layers `input → hidden[0] → … → 1`.
    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut layers = Vec::new();
        let mut inp = input;
        for &h in hidden.iter().chain(std::iter::once(&1)) {
            layers.push(Dense::zeros(h, inp));
            inp = h;
        }
        Self { layers }
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        for l in &mut p.layers {
            l.init_uniform(rng);
        }
        p
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inp
    }

    pub fn dense_layers(&self) -> Vec<(String, &Dense<T>)> {
        self.layers.iter().enumerate().map(|(j, l)| (format!("head.layer{j}"), l)).collect()
    }

    pub fn forward(&self, inputs: Vec<T>, n: usize) -> HeadTrace<T> {
        let mut hidden: Vec<Vec<T>> = Vec::with_capacity(self.layers.len() - 1);
        let mut logits = Vec::new();
        for (j, layer) in self.layers.iter().enumerate() {
            let x: &[T] = if j == 0 { &inputs } else { &hidden[j - 1] };
            let mut z = vec![T::zero(); n * layer.out];
            gemm(T::one(), View::rm(x, n, layer.inp, layer.inp), layer.weight().t(), T::zero(), &mut z, layer.out);
            let last = j + 1 == self.layers.len();
            for row in z.chunks_exact_mut(layer.out) {
                for (o, v) in row.iter_mut().enumerate() {
                    *v += layer.bias(o);
                    if !last && *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            if last {
                logits = z;
            } else {
                hidden.push(z);
            }
        }
        HeadTrace { n, inputs, hidden, logits }
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/d(inputs)`.
    pub fn backward(&self, trace: &HeadTrace<T>, dlogits: &[T], grads: &mut HeadParams<T>) -> Vec<T> {
        let n = trace.n;
        let mut dz = dlogits.to_vec();
        for j in (0..self.layers.len()).rev() {
            let layer = &self.layers[j];
            let x: &[T] = if j == 0 { &trace.inputs } else { &trace.hidden[j - 1] };
            let g = &mut grads.layers[j];
            let ld = g.inp + 1;
            gemm(T::one(), View::rm(&dz, n, layer.out, layer.out).t(), View::rm(x, n, layer.inp, layer.inp), T::one(), &mut g.w, ld);
            for row in dz.chunks_exact(layer.out) {
                for (o, v) in row.iter().enumerate() {
                    g.w[o * ld + g.inp] += *v;
                }
            }
            let mut dx = vec![T::zero(); n * layer.inp];
            gemm(T::one(), View::rm(&dz, n, layer.out, layer.out), layer.weight(), T::zero(), &mut dx, layer.inp);
            if j > 0 {
                for (d, a) in dx.iter_mut().zip(x) {
                    if *a <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            dz = dx;
        }
        dz
    }
}

/// Trilinear stencils of every point on every pyramid level, `[level][point]`.
pub fn level_stencils<T: Scalar>(pyramid: &FeaturePyramid<T>, points: &[NormalizedPoint]) -> Vec<Vec<Stencil>> {
    pyramid
        .levels
        .iter()
        .map(|grid| points.iter().map(|&p| Stencil::new(grid.shape(), p)).collect())
        .collect()
}

/// Builds head input rows `[p, F¹(p), …, Fᵐ(p), a?]`.
pub fn assemble_inputs<T: Scalar>(
    pyramid: &FeaturePyramid<T>,
    stencils: &[Vec<Stencil>],
    points: &[NormalizedPoint],
    appearance: Option<&[f64]>,
) -> Vec<T> {
    let width = 3 + pyramid.width() + usize::from(appearance.is_some());
    let mut rows = vec![T::zero(); points.len() * width];
    for (i, (p, row)) in points.iter().zip(rows.chunks_exact_mut(width)).enumerate() {
        for a in 0..3 {
            row[a] = T::of(p.0[a]);
        }
        let mut col = 3;
        for (grid, st) in pyramid.levels.iter().zip(stencils) {
            let k = grid.channels;
            let out = &mut row[col..col + k];
            let s = &st[i];
            for c in 0..8 {
                let w = T::of(s.weight[c]);
                for (o, f) in out.iter_mut().zip(grid.node(s.index[c])) {
                    *o += w * *f;
                }
            }
            col += k;
        }
        if let Some(a) = appearance {
            row[col] = T::of(a[i]);
        }
    }
    rows
}

/// Routes feature-column gradients back to the grid nodes, `[level][node * k + c]`.
pub fn scatter_features<T: Scalar>(
    pyramid: &FeaturePyramid<T>,
    stencils: &[Vec<Stencil>],
    dinputs: &[T],
    width: usize,
) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = pyramid.levels.iter().map(|g| vec![T::zero(); g.data.len()]).collect();
    let mut col = 3;
    for ((grid, st), dl) in pyramid.levels.iter().zip(stencils).zip(&mut out) {
        let k = grid.channels;
        for (s, row) in st.iter().zip(dinputs.chunks_exact(width)) {
            let g = &row[col..col + k];
            for c in 0..8 {
                let w = T::of(s.weight[c]);
                let base = s.index[c] * k;
                for (dst, gi) in dl[base..base + k].iter_mut().zip(g) {
                    *dst += w * *gi;
                }
            }
        }
        col += k;
    }
    out
}
