use std::path::Path;

use crate::error::{FormatError, Result};
use crate::nn::{AdamW, AdamWConfig, Fingerprint, ParamSet, Tensor};

use super::codec::{decode, write_atomic, Reader, Writer};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

const HYPER: &str = "hyper";

/// Parameters, optional optimizer state and the round they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub round: u32,
    pub params: ParamSet<f32>,
    pub optimizer: Option<AdamW<f32>>,
}

fn put_tensor(w: &mut Writer, name: &str, t: &Tensor<f32>) {
    w.u16(name.len() as u16);
    w.bytes(name.as_bytes());
    w.u8(t.shape().len() as u8);
    for &d in t.shape() {
        w.u32(d as u32);
    }
    w.f32s(t.data());
}

fn get_tensor(r: &mut Reader<'_>) -> Result<(String, Tensor<f32>), FormatError> {
    let len = r.u16()? as usize;
    let name = std::str::from_utf8(r.take(len)?)
        .map_err(|_| FormatError::Malformed("tensor name is not UTF-8".into()))?
        .to_string();
    let rank = r.u8()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| FormatError::Malformed(format!("extent overflow in {name}")))?;
    if n.saturating_mul(4) > r.remaining() {
        return Err(FormatError::Truncated {
            offset: r.position(),
            needed: n * 4 - r.remaining(),
        });
    }
    let data = r.f32s(n)?;
    Ok((name, Tensor::new(shape, data).expect("sized above")))
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    w.bytes(&ck.params.fingerprint());
    w.u32(ck.round);
    w.u32(ck.params.len() as u32);
    for (name, t) in ck.params.iter() {
        put_tensor(&mut w, name, t);
    }
    let Some(opt) = &ck.optimizer else {
        // an empty block: no optimizer state recorded
        w.u64(0);
        w.u32(0);
        return w.finish();
    };
    w.u64(opt.step);
    w.u32((1 + opt.m.len() + opt.v.len()) as u32);
    let c = opt.config;
    let hyper = Tensor::new(vec![5], vec![c.lr, c.beta1, c.beta2, c.eps, c.weight_decay])
        .expect("five values");
    put_tensor(&mut w, HYPER, &hyper);
    let names: Vec<&str> = ck.params.iter().map(|(n, _)| n).collect();
    for (prefix, moments) in [("m", &opt.m), ("v", &opt.v)] {
        for (name, t) in names.iter().zip(moments) {
            put_tensor(&mut w, &format!("{prefix}/{name}"), t);
        }
    }
    w.finish()
}

fn parse(r: &mut Reader<'_>) -> Result<Checkpoint, FormatError> {
    let stored: Fingerprint = r.fixed()?;
    let round = r.u32()?;
    let count = r.u32()? as usize;
    let mut entries = Vec::new();
    for _ in 0..count {
        entries.push(get_tensor(r)?);
    }
    let params = ParamSet::new(entries).map_err(|e| FormatError::Malformed(e.to_string()))?;
    if params.fingerprint() != stored {
        return Err(FormatError::Malformed(
            "stored fingerprint does not describe the stored tensors".into(),
        ));
    }
    let step = r.u64()?;
    let opt_count = r.u32()? as usize;
    if opt_count == 0 {
        if step != 0 {
            return Err(FormatError::Malformed(
                "optimizer steps without state".into(),
            ));
        }
        return Ok(Checkpoint {
            round,
            params,
            optimizer: None,
        });
    }
    let (hname, hyper) = get_tensor(r)?;
    if hname != HYPER || hyper.len() != 5 {
        return Err(FormatError::Malformed("optimizer hyperparameters".into()));
    }
    let h = hyper.data();
    let config = AdamWConfig {
        lr: h[0],
        beta1: h[1],
        beta2: h[2],
        eps: h[3],
        weight_decay: h[4],
    };
    let moments = opt_count - 1;
    if moments != 0 && moments != 2 * params.len() {
        return Err(FormatError::Malformed(format!("{moments} moment tensors")));
    }
    let mut opt = AdamW::new(config);
    opt.step = step;
    for i in 0..moments {
        let (name, t) = get_tensor(r)?;
        let (prefix, list) = if i < params.len() {
            ("m", &mut opt.m)
        } else {
            ("v", &mut opt.v)
        };
        let (pname, p) = params.iter().nth(i % params.len()).expect("index in range");
        if name != format!("{prefix}/{pname}") || t.shape() != p.shape() {
            return Err(FormatError::Malformed(format!("moment tensor {name}")));
        }
        list.push(t);
    }
    Ok(Checkpoint {
        round,
        params,
        optimizer: Some(opt),
    })
}

/// Decode, and when `expected` is given insist that the stored architecture
/// fingerprint equals it.
pub fn decode_checkpoint(
    bytes: &[u8],
    expected: Option<&Fingerprint>,
) -> Result<Checkpoint, FormatError> {
    let ck = decode(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, parse)?;
    if let Some(fp) = expected {
        if &ck.params.fingerprint() != fp {
            return Err(FormatError::Fingerprint);
        }
    }
    Ok(ck)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck))
}

pub fn load_checkpoint(path: &Path, expected: Option<&Fingerprint>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    Ok(decode_checkpoint(&bytes, expected)?)
}
