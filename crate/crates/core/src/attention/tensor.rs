use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the model runs in (`f32` or `f64`).
pub trait Real: Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static {
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite value")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Per-token, per-head vectors laid out `[token][head][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensor<T> {
    tokens: usize,
    heads: usize,
    head_dim: usize,
    data: Vec<T>,
}

impl<T: Real> HeadTensor<T> {
    pub fn zeros(tokens: usize, heads: usize, head_dim: usize) -> Self {
        Self { tokens, heads, head_dim, data: vec![T::zero(); tokens * heads * head_dim] }
    }

    pub fn from_vec(tokens: usize, heads: usize, head_dim: usize, data: Vec<T>) -> Option<Self> {
        (data.len() == tokens * heads * head_dim).then_some(Self { tokens, heads, head_dim, data })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn vector(&self, token: usize, head: usize) -> &[T] {
        let start = (token * self.heads + head) * self.head_dim;
        &self.data[start..start + self.head_dim]
    }

    pub fn vector_mut(&mut self, token: usize, head: usize) -> &mut [T] {
        let start = (token * self.heads + head) * self.head_dim;
        &mut self.data[start..start + self.head_dim]
    }

    /// Row of all heads for one token, `heads * head_dim` long.
    pub fn token_row(&self, token: usize) -> &[T] {
        let w = self.heads * self.head_dim;
        &self.data[token * w..(token + 1) * w]
    }

    pub fn token_row_mut(&mut self, token: usize) -> &mut [T] {
        let w = self.heads * self.head_dim;
        &mut self.data[token * w..(token + 1) * w]
    }

    pub fn slice_tokens(&self, start: usize, end: usize) -> Self {
        let w = self.heads * self.head_dim;
        Self {
            tokens: end - start,
            heads: self.heads,
            head_dim: self.head_dim,
            data: self.data[start * w..end * w].to_vec(),
        }
    }

    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a Self>, heads: usize, head_dim: usize) -> Self {
        let mut out = Self::zeros(0, heads, head_dim);
        for p in parts {
            assert_eq!((p.heads, p.head_dim), (heads, head_dim), "shape mismatch in concat");
            out.data.extend_from_slice(&p.data);
            out.tokens += p.tokens;
        }
        out
    }

    pub fn cast<U: Real>(&self) -> HeadTensor<U> {
        HeadTensor {
            tokens: self.tokens,
            heads: self.heads,
            head_dim: self.head_dim,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64().expect("finite"))).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "shape mismatch in diff");
        max_abs_diff(&self.data, &other.data)
    }

    pub fn l2_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len(), "shape mismatch in diff");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).to_f64().unwrap_or(f64::INFINITY).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y).abs().to_f64().unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max)
}
