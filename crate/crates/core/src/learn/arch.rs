use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::LearnError;

/// Per-sample tensor shape, stored channels-last (`h, w, c`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn flat(n: usize) -> Shape {
        Shape { c: n, h: 1, w: 1 }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_flat(&self) -> bool {
        self.h == 1 && self.w == 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear { n_in: usize, n_out: usize },
    /// Stride-1 convolution with zero padding `pad` on every side.
    Conv { in_ch: usize, out_ch: usize, k: usize, pad: usize },
    Relu,
    /// Non-overlapping `size x size` max pooling; trailing rows and columns
    /// that do not fill a window are dropped.
    MaxPool { size: usize },
    Flatten,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

/// Matmul lowering of one linear or convolution layer: `positions` rows of
/// `n_red`-long activation vectors against an `n_red x n_out` weight matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatmulDims {
    pub layer: usize,
    pub n_red: usize,
    pub n_out: usize,
    pub positions: usize,
}

impl ArchSpec {
    /// Fully connected net with ReLU after every hidden layer.
    pub fn mlp(n_in: usize, hidden: &[usize], n_out: usize) -> ArchSpec {
        let mut layers = Vec::new();
        let mut prev = n_in;
        for &h in hidden {
            layers.push(LayerSpec::Linear { n_in: prev, n_out: h });
            layers.push(LayerSpec::Relu);
            prev = h;
        }
        layers.push(LayerSpec::Linear { n_in: prev, n_out });
        ArchSpec {
            input: Shape::flat(n_in),
            layers,
        }
    }

    /// Three convolutions and two linear layers on 28x28 inputs.
    pub fn lenet5() -> ArchSpec {
        use LayerSpec::*;
        ArchSpec {
            input: Shape { c: 1, h: 28, w: 28 },
            layers: vec![
                Conv { in_ch: 1, out_ch: 6, k: 5, pad: 2 },
                Relu,
                MaxPool { size: 2 },
                Conv { in_ch: 6, out_ch: 16, k: 5, pad: 0 },
                Relu,
                MaxPool { size: 2 },
                Conv { in_ch: 16, out_ch: 120, k: 5, pad: 0 },
                Relu,
                Flatten,
                Linear { n_in: 120, n_out: 84 },
                Relu,
                Linear { n_in: 84, n_out: 10 },
            ],
        }
    }

    /// Input shape of every layer followed by the output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>, LearnError> {
        let mut s = self.input;
        if s.is_empty() {
            return Err(LearnError::Shape("empty input".into()));
        }
        let mut out = vec![s];
        for (i, l) in self.layers.iter().enumerate() {
            s = match *l {
                LayerSpec::Linear { n_in, n_out } => {
                    if !s.is_flat() || s.c != n_in || n_out == 0 {
                        return Err(LearnError::Shape(format!("layer {i}: linear {n_in}->{n_out} on {s:?}")));
                    }
                    Shape::flat(n_out)
                }
                LayerSpec::Conv { in_ch, out_ch, k, pad } => {
                    if s.c != in_ch || k == 0 || out_ch == 0 || s.h + 2 * pad < k || s.w + 2 * pad < k {
                        return Err(LearnError::Shape(format!("layer {i}: conv {in_ch}->{out_ch} k{k} on {s:?}")));
                    }
                    Shape {
                        c: out_ch,
                        h: s.h + 2 * pad - k + 1,
                        w: s.w + 2 * pad - k + 1,
                    }
                }
                LayerSpec::Relu => s,
                LayerSpec::MaxPool { size } => {
                    if size == 0 || s.h < size || s.w < size {
                        return Err(LearnError::Shape(format!("layer {i}: pool {size} on {s:?}")));
                    }
                    Shape {
                        c: s.c,
                        h: s.h / size,
                        w: s.w / size,
                    }
                }
                LayerSpec::Flatten => Shape::flat(s.len()),
            };
            out.push(s);
        }
        Ok(out)
    }

    pub fn matmuls(&self) -> Result<Vec<MatmulDims>, LearnError> {
        let shapes = self.shapes()?;
        let mut v = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let o = shapes[i + 1];
            match *l {
                LayerSpec::Linear { n_in, n_out } => v.push(MatmulDims {
                    layer: i,
                    n_red: n_in,
                    n_out,
                    positions: 1,
                }),
                LayerSpec::Conv { in_ch, out_ch, k, .. } => v.push(MatmulDims {
                    layer: i,
                    n_red: in_ch * k * k,
                    n_out: out_ch,
                    positions: o.h * o.w,
                }),
                _ => {}
            }
        }
        Ok(v)
    }

    pub fn output_len(&self) -> Result<usize, LearnError> {
        Ok(self.shapes()?.last().map_or(0, Shape::len))
    }
}

/// Multiplications and additions to classify one sample: `n_in * n_out`
/// per linear layer and `in_ch * k^2 * d_f^2 * out_ch` per convolution.
/// Every multiplication is paired with one accumulation.
pub fn count_macs(spec: &ArchSpec) -> Result<(u64, u64), LearnError> {
    let m: u64 = spec
        .matmuls()?
        .iter()
        .map(|d| (d.n_red * d.n_out * d.positions) as u64)
        .sum();
    Ok((m, m))
}
