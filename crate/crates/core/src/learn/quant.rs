use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::float::{accuracy_of, argmax, im2col, max_pool, FloatModel};
use super::gemm::mm;
use super::{ArchSpec, Dataset, LayerSpec, LearnError, Shape};
use crate::array::{
    output_offsets, plan_bypass, simd_exec, systolic_exec, workload_steps, BypassPlan, Dataflow, FaultMap, Injector,
    Mat,
};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QKind {
    Dense,
    Conv { k: usize, pad: usize, input: Shape, out_h: usize, out_w: usize },
}

/// One lowered layer: `acc = x_q * w_q + bias`, then optional ReLU and
/// requantization by `s_in * s_w / s_out`. The last layer keeps `acc`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QMatmul {
    pub kind: QKind,
    pub n_red: usize,
    pub n_out: usize,
    pub w: Vec<i8>,
    pub bias: Vec<i64>,
    pub s_in: f64,
    pub s_w: f64,
    pub relu: bool,
    pub s_out: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QOp {
    Matmul(QMatmul),
    Relu,
    MaxPool { size: usize, input: Shape },
    Flatten,
}

/// Symmetric per-tensor int8 model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedModel {
    pub arch: ArchSpec,
    pub input_scale: f64,
    pub ops: Vec<QOp>,
}

/// Array a forward pass runs on.
#[derive(Clone, Copy, Debug)]
pub struct FaultContext<'a> {
    pub map: &'a FaultMap,
    pub inj: Injector<'a>,
    pub flow: Dataflow,
}

fn q8(v: f64) -> i8 {
    libm::round(v).clamp(-127.0, 127.0) as i8
}

fn scale_of(max_abs: f64) -> f64 {
    if max_abs > 0.0 {
        max_abs / 127.0
    } else {
        1.0
    }
}

/// Post-training quantization. Activation scales come from the largest
/// magnitude each matmul output reaches on `calib`; inputs use `1/127`.
pub fn quantize(model: &FloatModel, calib: &Dataset) -> Result<QuantizedModel, LearnError> {
    let arch = &model.arch;
    let shapes = arch.shapes()?;
    if !matches!(arch.layers.last(), Some(LayerSpec::Linear { .. } | LayerSpec::Conv { .. })) {
        return Err(LearnError::Unsupported("the last layer must be linear or convolution".into()));
    }
    if calib.is_empty() || calib.shape != arch.input {
        return Err(LearnError::Dataset("calibration set is empty or mis-shaped".into()));
    }
    let idx: Vec<usize> = (0..calib.len()).collect();
    let mut peaks = vec![0.0f64; arch.layers.len()];
    for chunk in idx.chunks(256) {
        let outs = model.layer_outputs(&calib.batch(chunk), chunk.len())?;
        for (p, o) in peaks.iter_mut().zip(&outs) {
            *p = o.iter().fold(*p, |m, v| m.max(v.abs()));
        }
    }
    let input_scale = 1.0 / 127.0;
    let mut s_cur = input_scale;
    let mut ops = Vec::new();
    let mut pi = 0;
    let mut li = 0;
    while li < arch.layers.len() {
        let layer = arch.layers[li];
        match layer {
            LayerSpec::Linear { .. } | LayerSpec::Conv { .. } => {
                let p = &model.params[pi];
                pi += 1;
                let relu = matches!(arch.layers.get(li + 1), Some(LayerSpec::Relu));
                let last = li + 1 == arch.layers.len();
                let out_layer = if relu { li + 1 } else { li };
                let s_w = scale_of(p.w.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                let s_out = if last { None } else { Some(scale_of(peaks[out_layer])) };
                let kind = match layer {
                    LayerSpec::Conv { k, pad, .. } => QKind::Conv {
                        k,
                        pad,
                        input: shapes[li],
                        out_h: shapes[li + 1].h,
                        out_w: shapes[li + 1].w,
                    },
                    _ => QKind::Dense,
                };
                ops.push(QOp::Matmul(QMatmul {
                    kind,
                    n_red: p.n_red,
                    n_out: p.n_out,
                    w: p.w.iter().map(|&v| q8(v / s_w)).collect(),
                    bias: p.b.iter().map(|&v| libm::round(v / (s_cur * s_w)) as i64).collect(),
                    s_in: s_cur,
                    s_w,
                    relu,
                    s_out,
                }));
                if let Some(s) = s_out {
                    s_cur = s;
                }
                li = out_layer + 1;
            }
            LayerSpec::Relu => {
                ops.push(QOp::Relu);
                li += 1;
            }
            LayerSpec::MaxPool { size } => {
                ops.push(QOp::MaxPool { size, input: shapes[li] });
                li += 1;
            }
            LayerSpec::Flatten => {
                ops.push(QOp::Flatten);
                li += 1;
            }
        }
    }
    Ok(QuantizedModel {
        arch: arch.clone(),
        input_scale,
        ops,
    })
}

impl QMatmul {
    fn lower(&self, x: &[i8], batch: usize) -> (Vec<i8>, usize) {
        match self.kind {
            QKind::Dense => (x.to_vec(), batch),
            QKind::Conv {
                k,
                pad,
                input,
                out_h,
                out_w,
            } => (im2col(x, batch, input, k, pad), batch * out_h * out_w),
        }
    }

    fn requantize(&self, acc: i64) -> i8 {
        let a = if self.relu { acc.max(0) } else { acc };
        match self.s_out {
            Some(s) => q8(a as f64 * (self.s_in * self.s_w / s)),
            None => 0,
        }
    }
}

/// Per-call state for one fault context: bypass plans and, when the error
/// is operand-independent, the constant per-output offsets.
struct Prepared<'a> {
    ctx: Option<&'a FaultContext<'a>>,
    weights: Vec<Vec<f64>>,
    plans: Vec<Option<BypassPlan>>,
    offsets: Vec<Option<Vec<i64>>>,
}

impl QuantizedModel {
    pub fn matmuls(&self) -> impl Iterator<Item = &QMatmul> {
        self.ops.iter().filter_map(|o| match o {
            QOp::Matmul(m) => Some(m),
            _ => None,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.matmuls().last().map_or(0, |m| m.n_out)
    }

    /// Array iterations to run one sample's worth of weight tiles.
    pub fn workload_steps(&self, rows: usize, cols: usize) -> usize {
        self.matmuls().map(|m| workload_steps(m.n_red, m.n_out, rows, cols)).sum()
    }

    pub fn quantize_inputs(&self, data: &Dataset, idx: &[usize]) -> Vec<i8> {
        let s = 1.0 / (255.0 * self.input_scale);
        let mut v = Vec::with_capacity(idx.len() * data.shape.len());
        for &i in idx {
            v.extend(data.image(i).iter().map(|&p| q8(p as f64 * s)));
        }
        v
    }

    /// Dense integer forward with explicit loops. Returns the logits and the
    /// number of multiplications performed.
    pub fn forward_reference(&self, x: &[i8], batch: usize) -> (Vec<i64>, u64) {
        let mut cur = x.to_vec();
        let mut macs = 0u64;
        let mut logits = Vec::new();
        for op in &self.ops {
            match op {
                QOp::Matmul(m) => {
                    let (a, rows) = m.lower(&cur, batch);
                    let mut acc = vec![0i64; rows * m.n_out];
                    for r in 0..rows {
                        for j in 0..m.n_out {
                            let mut s = m.bias[j];
                            for i in 0..m.n_red {
                                s += a[r * m.n_red + i] as i64 * m.w[i * m.n_out + j] as i64;
                                macs += 1;
                            }
                            acc[r * m.n_out + j] = s;
                        }
                    }
                    if m.s_out.is_none() {
                        logits = acc;
                        break;
                    }
                    cur = acc.iter().map(|&v| m.requantize(v)).collect();
                }
                QOp::Relu => cur.iter_mut().for_each(|v| *v = (*v).max(0)),
                QOp::MaxPool { size, input } => cur = max_pool(&cur, batch, *input, *size).0,
                QOp::Flatten => {}
            }
        }
        (logits, macs)
    }

    fn prepare<'a>(&self, ctx: Option<&'a FaultContext<'a>>) -> Result<Prepared<'a>, LearnError> {
        let mut p = Prepared {
            ctx,
            weights: Vec::new(),
            plans: Vec::new(),
            offsets: Vec::new(),
        };
        for m in self.matmuls() {
            p.weights.push(m.w.iter().map(|&v| v as f64).collect());
            match ctx {
                Some(c) => {
                    let plan = plan_bypass(c.map, m.n_red, m.n_out)?;
                    p.offsets.push(if c.inj.operand_independent() {
                        Some(output_offsets(c.map, &plan, &c.inj, c.flow)?)
                    } else {
                        None
                    });
                    p.plans.push(Some(plan));
                }
                None => {
                    p.plans.push(None);
                    p.offsets.push(Some(vec![0; m.n_out]));
                }
            }
        }
        Ok(p)
    }

    fn forward_prepared(&self, p: &Prepared, x: &[i8], batch: usize) -> Result<Vec<i64>, LearnError> {
        let mut cur = x.to_vec();
        let mut mi = 0;
        for op in &self.ops {
            match op {
                QOp::Matmul(m) => {
                    let (a, rows) = m.lower(&cur, batch);
                    let acc: Vec<i64> = match (&p.offsets[mi], p.ctx) {
                        (Some(off), _) => {
                            let af: Vec<f64> = a.iter().map(|&v| v as f64).collect();
                            let mut y = vec![0.0; rows * m.n_out];
                            // Exact: every partial sum is an integer far below 2^53.
                            mm(rows, m.n_red, m.n_out, &af, false, &p.weights[mi], false, &mut y, 0.0);
                            y.iter()
                                .enumerate()
                                .map(|(i, &v)| v as i64 + m.bias[i % m.n_out] + off[i % m.n_out])
                                .collect()
                        }
                        (None, Some(c)) => {
                            let w = Mat::from_vec(m.n_red, m.n_out, m.w.clone())?;
                            let xs = Mat::from_vec(rows, m.n_red, a)?;
                            let plan = p.plans[mi].as_ref().expect("plans exist with a context");
                            let y = match c.flow {
                                Dataflow::Systolic => systolic_exec(&w, &xs, c.map, plan, &c.inj)?,
                                Dataflow::Simd => simd_exec(&w, &xs, c.map, plan, &c.inj)?,
                            };
                            y.data
                                .iter()
                                .enumerate()
                                .map(|(i, &v)| v + m.bias[i % m.n_out])
                                .collect()
                        }
                        (None, None) => unreachable!("offsets are set without a context"),
                    };
                    mi += 1;
                    if m.s_out.is_none() {
                        return Ok(acc);
                    }
                    cur = acc.iter().map(|&v| m.requantize(v)).collect();
                }
                QOp::Relu => cur.iter_mut().for_each(|v| *v = (*v).max(0)),
                QOp::MaxPool { size, input } => cur = max_pool(&cur, batch, *input, *size).0,
                QOp::Flatten => {}
            }
        }
        Err(LearnError::Unsupported("model has no output layer".into()))
    }

    /// Logits of a quantized batch on the array described by `ctx`, or on a
    /// fault-free array when `ctx` is `None`.
    pub fn forward(&self, x: &[i8], batch: usize, ctx: Option<&FaultContext>) -> Result<Vec<i64>, LearnError> {
        let n = self.arch.input.len();
        if x.len() != batch * n {
            return Err(LearnError::Shape(format!("{} inputs for a batch of {batch} x {n}", x.len())));
        }
        let p = self.prepare(ctx)?;
        self.forward_prepared(&p, x, batch)
    }

    pub fn predict(&self, data: &Dataset, ctx: Option<&FaultContext>) -> Result<Vec<usize>, LearnError> {
        if data.shape != self.arch.input {
            return Err(LearnError::Shape(format!(
                "dataset shape {:?}, model input {:?}",
                data.shape, self.arch.input
            )));
        }
        let p = self.prepare(ctx)?;
        let c = self.n_classes();
        let chunks: Vec<Vec<usize>> = (0..data.len())
            .collect::<Vec<_>>()
            .chunks(500)
            .map(<[usize]>::to_vec)
            .collect();
        let parts = par::map(&chunks, |idx| {
            let x = self.quantize_inputs(data, idx);
            self.forward_prepared(&p, &x, idx.len())
                .map(|z| z.chunks(c).map(argmax).collect::<Vec<_>>())
        });
        let mut out = Vec::with_capacity(data.len());
        for part in parts {
            out.extend(part?);
        }
        Ok(out)
    }

    pub fn accuracy(&self, data: &Dataset, ctx: Option<&FaultContext>) -> Result<f64, LearnError> {
        Ok(accuracy_of(&self.predict(data, ctx)?, &data.labels))
    }
}
