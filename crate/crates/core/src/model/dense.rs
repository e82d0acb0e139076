use rand::Rng;

use crate::linalg::{Scalar, View};

/// Affine map stored as one `[out, inp + 1]` row-major tensor whose last
/// column holds the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub out: usize,
    pub inp: usize,
    pub w: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            out,
            inp,
            w: vec![T::zero(); out * (inp + 1)],
        }
    }

    /// Uniform in `±1/sqrt(fan_in)` for weights and bias alike.
    pub fn init_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let bound = 1.0 / (self.inp.max(1) as f64).sqrt();
        for v in &mut self.w {
            *v = T::of(rng.random_range(-bound..bound));
        }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.out, self.inp + 1]
    }

    pub(crate) fn weight(&self) -> View<'_, T> {
        View::rm(&self.w, self.out, self.inp, self.inp + 1)
    }

    #[inline]
    pub fn bias(&self, o: usize) -> T {
        self.w[o * (self.inp + 1) + self.inp]
    }

    /// `y = W x + b` for a single input vector.
    pub fn apply_vec(&self, x: &[T], y: &mut [T]) {
        let ld = self.inp + 1;
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.w[o * ld..(o + 1) * ld];
            let mut acc = row[self.inp];
            for (w, xi) in row.iter().zip(x) {
                acc += *w * *xi;
            }
            *yo = acc;
        }
    }

    pub fn fill_zero(&mut self) {
        self.w.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn all_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite())
    }
}
