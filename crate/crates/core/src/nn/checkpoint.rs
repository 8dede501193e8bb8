//! Binary model checkpoints.
//!
//! ```text
//! magic        "NXCKPT"                           6 bytes
//! version      u32 LE (= 1)
//! variant      u8  (1 = ModelI, 2 = ModelII)
//! flags        u8 with_cosines, u8 has_attention, u8 has_batchnorm
//! k            u32 LE
//! widths       u32 LE × 4: input, hidden1, hidden2, attention dim (0 = none)
//! dropout_p    f64 LE
//! bn momentum  f64 LE, bn eps f64 LE            (only with batch norm)
//! tensors      u32 LE count, then per tensor:
//!              u32 LE name length, UTF-8 name, u64 LE length, length × f32 LE
//! ```
//!
//! Tensor order: `attention.weight`, then per layer `denseN.weight`,
//! `denseN.bias` and, for hidden layers with batch norm, `bnN.gamma`,
//! `bnN.beta`, `bnN.running_mean`, `bnN.running_var`. Weights are row-major
//! `out × in`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::attention::AttentionParams;
use super::layers::{BatchNormParams, DenseParams};
use super::model::{ClassifierModel, Variant};
use super::{NnError, Result};
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 6] = b"NXCKPT";
pub const VERSION: u32 = 1;

fn tensors(model: &ClassifierModel) -> Vec<(String, &[f64])> {
    let mut out: Vec<(String, &[f64])> = Vec::new();
    if let Some(a) = &model.attention {
        out.push(("attention.weight".into(), a.weights.as_slice()));
    }
    for (i, d) in model.layers.iter().enumerate() {
        let n = i + 1;
        out.push((format!("dense{n}.weight"), d.weight.as_slice()));
        out.push((format!("dense{n}.bias"), &d.bias));
        if let Some(bn) = model.batchnorm.as_ref().and_then(|b| b.get(i)) {
            out.push((format!("bn{n}.gamma"), &bn.gamma));
            out.push((format!("bn{n}.beta"), &bn.beta));
            out.push((format!("bn{n}.running_mean"), &bn.running_mean));
            out.push((format!("bn{n}.running_var"), &bn.running_var));
        }
    }
    out
}

pub fn write_checkpoint<W: Write>(model: &ClassifierModel, mut out: W) -> Result<()> {
    let bn = model.batchnorm.as_ref().and_then(|b| b.first());
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let variant: u8 = match model.variant {
        Variant::ModelI => 1,
        Variant::ModelII => 2,
    };
    out.write_all(&[
        variant,
        u8::from(model.with_cosines),
        u8::from(model.attention.is_some()),
        u8::from(model.batchnorm.is_some()),
    ])?;
    let widths = [
        model.k,
        model.input_width(),
        model.layers[0].fan_out(),
        model.layers[1].fan_out(),
        model.attention.as_ref().map_or(0, AttentionParams::dim),
    ];
    for w in widths {
        out.write_all(&(w as u32).to_le_bytes())?;
    }
    out.write_all(&model.dropout_p.to_le_bytes())?;
    if let Some(bn) = bn {
        out.write_all(&bn.momentum.to_le_bytes())?;
        out.write_all(&bn.eps.to_le_bytes())?;
    }
    let ts = tensors(model);
    out.write_all(&(ts.len() as u32).to_le_bytes())?;
    for (name, values) in ts {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(values.len() as u64).to_le_bytes())?;
        for &v in values {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_checkpoint(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, BufWriter::new(File::create(path)?))
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => NnError::Checkpoint("file is truncated".into()),
            _ => NnError::Io(e),
        })?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn tensor(&mut self, expected_name: &str, expected_len: usize) -> Result<Vec<f64>> {
        let name_len = self.u32()? as usize;
        let mut name = vec![0u8; name_len.min(256)];
        if name_len > 256 {
            return Err(NnError::Checkpoint("tensor name too long".into()));
        }
        self.inner
            .read_exact(&mut name)
            .map_err(|_| NnError::Checkpoint("file is truncated".into()))?;
        if name != expected_name.as_bytes() {
            return Err(NnError::Checkpoint(format!(
                "expected tensor {expected_name}, found {}",
                String::from_utf8_lossy(&name)
            )));
        }
        let len = self.u64()? as usize;
        if len != expected_len {
            return Err(NnError::Checkpoint(format!(
                "tensor {expected_name} has {len} values, expected {expected_len}"
            )));
        }
        (0..len)
            .map(|_| Ok(f64::from(f32::from_le_bytes(self.bytes()?))))
            .collect()
    }
}

fn flag(v: u8) -> Result<bool> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        _ => Err(NnError::Checkpoint(format!("bad flag byte {v}"))),
    }
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<ClassifierModel> {
    let mut r = Reader { inner: input };
    if &r.bytes::<6>()? != MAGIC {
        return Err(NnError::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let variant = match r.u8()? {
        1 => Variant::ModelI,
        2 => Variant::ModelII,
        v => return Err(NnError::Checkpoint(format!("unknown variant {v}"))),
    };
    let with_cosines = flag(r.u8()?)?;
    let has_attention = flag(r.u8()?)?;
    let has_bn = flag(r.u8()?)?;
    let k = r.u32()? as usize;
    let input = r.u32()? as usize;
    let h1 = r.u32()? as usize;
    let h2 = r.u32()? as usize;
    let att_dim = r.u32()? as usize;
    let dropout_p = r.f64()?;
    let (momentum, eps) = if has_bn { (r.f64()?, r.f64()?) } else { (0.0, 0.0) };
    if has_attention != (att_dim > 0) {
        return Err(NnError::Checkpoint("attention flag and dimension disagree".into()));
    }
    let count = r.u32()? as usize;
    let expected = usize::from(has_attention) + 3 * 2 + if has_bn { 2 * 4 } else { 0 };
    if count != expected {
        return Err(NnError::Checkpoint(format!("expected {expected} tensors, found {count}")));
    }

    let attention = if has_attention {
        Some(AttentionParams {
            weights: Matrix::from_vec(att_dim, att_dim, r.tensor("attention.weight", att_dim * att_dim)?),
        })
    } else {
        None
    };
    let widths = [input, h1, h2, 1];
    let mut layers = Vec::with_capacity(3);
    let mut bns = Vec::new();
    for i in 0..3 {
        let n = i + 1;
        let (fan_in, fan_out) = (widths[i], widths[i + 1]);
        let weight = Matrix::from_vec(fan_out, fan_in, r.tensor(&format!("dense{n}.weight"), fan_in * fan_out)?);
        let bias = r.tensor(&format!("dense{n}.bias"), fan_out)?;
        layers.push(DenseParams { weight, bias });
        if has_bn && i < 2 {
            bns.push(BatchNormParams {
                gamma: r.tensor(&format!("bn{n}.gamma"), fan_out)?,
                beta: r.tensor(&format!("bn{n}.beta"), fan_out)?,
                running_mean: r.tensor(&format!("bn{n}.running_mean"), fan_out)?,
                running_var: r.tensor(&format!("bn{n}.running_var"), fan_out)?,
                momentum,
                eps,
            });
        }
    }
    let model = ClassifierModel {
        variant,
        k,
        with_cosines,
        attention,
        layers,
        batchnorm: has_bn.then_some(bns),
        dropout_p,
    };
    model.spec().validate()?;
    if model.input_width() != model.spec().input_width() {
        return Err(NnError::Checkpoint("input width does not match k".into()));
    }
    Ok(model)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ClassifierModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
