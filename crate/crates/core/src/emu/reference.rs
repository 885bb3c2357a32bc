//! Naive loop-nest references.

use half::f16;

use crate::workload::{DataType, MatMulLayout, OpKind, OperatorNode};
use crate::{Error, Result};

const MAX_ELEMENTS: u64 = 1 << 20;

/// Rounding arithmetic right shift saturated to Int8.
pub fn requantize(acc: i32, shift: u8) -> i8 {
    let v = if shift == 0 {
        i64::from(acc)
    } else {
        (i64::from(acc) + (1i64 << (shift - 1))) >> shift
    };
    v.clamp(-128, 127) as i8
}

fn quantize(x: f64, dtype: DataType) -> f64 {
    match dtype {
        DataType::Int8 => x,
        DataType::Fp16 => f64::from(f16::from_f64(x)),
        DataType::Fp32 => f64::from(x as f32),
    }
}

/// `C = A·B` with `A[m][k]`, `B[k][n]`, both row-major. Inputs are rounded
/// to the datatype first; Int8 sums are exact.
pub fn reference_matmul(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], dtype: DataType) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            c[i * n + j] = (0..k)
                .map(|t| quantize(a[i * k + t], dtype) * quantize(b[t * n + j], dtype))
                .sum();
        }
    }
    c
}

fn check_len(what: &str, got: usize, want: u64) -> Result<()> {
    if want > MAX_ELEMENTS {
        return Err(Error::Unsupported(format!("{what} of {want} elements is too large for the reference")));
    }
    if got as u64 != want {
        return Err(Error::InvalidTrace(format!("{what} has {got} elements, expected {want}")));
    }
    Ok(())
}

/// Evaluates one node on dense row-major inputs ordered like `node.inputs`.
/// Convolutions use NHWC activations and `[R][S][C/g][K]` filters.
pub fn reference_compute(node: &OperatorNode, inputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let dtype = node.dtype;
    let arg = |i: usize| {
        inputs
            .get(i)
            .ok_or_else(|| Error::InvalidTrace(format!("{} expects input {i}", node.id)))
    };
    match &node.op {
        OpKind::MatMul(p) => {
            let (m, n, k, bt) = (p.m as usize, p.n as usize, p.k as usize, p.batch as usize);
            let (a, b) = (arg(0)?, arg(1)?);
            check_len("A", a.len(), p.batch * p.m * p.k)?;
            check_len("B", b.len(), p.batch * p.k * p.n)?;
            let mut out = Vec::with_capacity(bt * m * n);
            for z in 0..bt {
                let a = &a[z * m * k..(z + 1) * m * k];
                let b = &b[z * k * n..(z + 1) * k * n];
                let a_row: Vec<f64> = match p.layout {
                    MatMulLayout::MkKn | MatMulLayout::MkNk => a.to_vec(),
                    _ => transpose(a, k, m),
                };
                let b_row: Vec<f64> = match p.layout {
                    MatMulLayout::MkKn | MatMulLayout::KmKn => b.to_vec(),
                    _ => transpose(b, n, k),
                };
                out.extend(reference_matmul(m, n, k, &a_row, &b_row, dtype));
            }
            Ok(out)
        }
        OpKind::Conv2d(p) => {
            let (x, w) = (arg(0)?, arg(1)?);
            check_len("input", x.len(), p.n * p.h * p.w * p.c)?;
            let cg = p.c_per_group() as usize;
            check_len("filter", w.len(), p.r * p.s * p.c_per_group() * p.k)?;
            let (n, h, wd, c, k) = (p.n as usize, p.h as usize, p.w as usize, p.c as usize, p.k as usize);
            let (pp, q) = (p.p() as usize, p.q() as usize);
            let kg = k / p.groups as usize;
            let mut out = vec![0.0; n * pp * q * k];
            for b in 0..n {
                for y in 0..pp {
                    for xo in 0..q {
                        for ko in 0..k {
                            let g = ko / kg;
                            let mut s = 0.0;
                            for r in 0..p.r as usize {
                                for t in 0..p.s as usize {
                                    let iy = (y * p.stride as usize + r) as i64 - p.pad as i64;
                                    let ix = (xo * p.stride as usize + t) as i64 - p.pad as i64;
                                    if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                        continue;
                                    }
                                    for ci in 0..cg {
                                        let xi = ((b * h + iy as usize) * wd + ix as usize) * c + g * cg + ci;
                                        let wi = ((r * p.s as usize + t) * cg + ci) * k + ko;
                                        s += quantize(x[xi], dtype) * quantize(w[wi], dtype);
                                    }
                                }
                            }
                            out[((b * pp + y) * q + xo) * k + ko] = s;
                        }
                    }
                }
            }
            Ok(out)
        }
        OpKind::Elementwise(p) => {
            for i in 0..p.arity as usize {
                check_len("operand", arg(i)?.len(), p.count)?;
            }
            let at = |i: usize, j: usize| quantize(inputs[i][j], dtype);
            let sum = |j: usize| (0..p.arity as usize).map(|i| at(i, j)).sum::<f64>();
            let f: Box<dyn Fn(usize) -> f64> = match p.op.as_str() {
                "Relu" => Box::new(|j| at(0, j).max(0.0)),
                "Add" | "AddN" => Box::new(sum),
                "AddRelu" => Box::new(|j| sum(j).max(0.0)),
                "Tanh" => Box::new(|j| at(0, j).tanh()),
                "Sigmoid" => Box::new(|j| 1.0 / (1.0 + (-at(0, j)).exp())),
                other => return Err(Error::Unsupported(format!("reference for {other}"))),
            };
            Ok((0..p.count as usize).map(f).collect())
        }
        other => Err(Error::Unsupported(format!("reference for {}", other.name()))),
    }
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = x[i * cols + j];
        }
    }
    t
}
