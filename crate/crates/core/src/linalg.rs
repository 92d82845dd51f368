//! Minimal dense matrix and MLP machinery for the attention and mask heads.
//!
//! Weights are created through the seeded initializers so that every
//! parameter is exactly representable as an f32; the tensor container
//! round-trips them bit-exactly.

use crate::error::{Error, Result};
use rand::Rng;

/// Dense row-major matrix mapping `R^cols -> R^rows`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeError {
                context: "matrix construction",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Seeded uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, quantized
    /// to f32 so serialized weight bundles reload bit-exactly.
    pub fn seeded_uniform<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (cols.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound) as f32 as f64)
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::ShapeError {
                context: "matrix-vector product",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows)
            .map(|i| {
                self.data[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(w, v)| w * v)
                    .sum()
            })
            .collect())
    }
}

/// One affine layer of an MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Multi-layer perceptron: affine layers with ReLU between them and no
/// activation after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<MlpLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<MlpLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::ShapeError { context: "mlp layers", expected: 1, got: 0 });
        }
        for pair in layers.windows(2) {
            if pair[1].weight.cols() != pair[0].weight.rows() {
                return Err(Error::ShapeError {
                    context: "mlp layer chaining",
                    expected: pair[0].weight.rows(),
                    got: pair[1].weight.cols(),
                });
            }
        }
        for layer in &layers {
            if layer.bias.len() != layer.weight.rows() {
                return Err(Error::ShapeError {
                    context: "mlp bias length",
                    expected: layer.weight.rows(),
                    got: layer.bias.len(),
                });
            }
        }
        Ok(Mlp { layers })
    }

    /// Seeded MLP with the given dimension chain, e.g. `[12, 8, 8]`.
    pub fn seeded<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let layers = dims
            .windows(2)
            .map(|w| MlpLayer {
                weight: Matrix::seeded_uniform(w[1], w[0], rng),
                bias: {
                    let bound = 1.0 / (w[0] as f64).sqrt();
                    (0..w[1]).map(|_| rng.gen_range(-bound..bound) as f32 as f64).collect()
                },
            })
            .collect();
        Mlp { layers }
    }

    /// All-zero MLP with the given dimension chain.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least one layer");
        let layers = dims
            .windows(2)
            .map(|w| MlpLayer { weight: Matrix::zeros(w[1], w[0]), bias: vec![0.0; w[1]] })
            .collect();
        Mlp { layers }
    }

    pub fn layers(&self) -> &[MlpLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut v = x.to_vec();
        let last = self.layers.len() - 1;
        for (idx, layer) in self.layers.iter().enumerate() {
            let mut out = layer.weight.matvec(&v)?;
            for (o, b) in out.iter_mut().zip(&layer.bias) {
                *o += b;
            }
            if idx < last {
                for o in out.iter_mut() {
                    *o = o.max(0.0);
                }
            }
            v = out;
        }
        Ok(v)
    }
}
