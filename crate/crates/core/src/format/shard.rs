use std::path::Path;

use crate::busgen::{ClientShard, SplitTag};
use crate::error::{FormatError, Result};
use crate::nn::Tensor;

use super::codec::{decode, write_atomic, Reader, Writer};

pub const SHARD_MAGIC: [u8; 4] = *b"FSBU";
pub const SHARD_VERSION: u16 = 1;

pub fn encode_shard(shard: &ClientShard) -> Vec<u8> {
    let mut w = Writer::new(SHARD_MAGIC, SHARD_VERSION);
    w.u16(shard.client_id);
    w.u32(shard.len() as u32);
    w.u16(shard.side as u16);
    for i in 0..shard.len() {
        w.u8(shard.tags[i] as u8);
        w.u8(shard.labels[i]);
        w.f32s(shard.images[i].data());
    }
    w.finish()
}

fn parse(r: &mut Reader<'_>) -> Result<ClientShard, FormatError> {
    let client_id = r.u16()?;
    let count = r.u32()? as usize;
    let side = r.u16()? as usize;
    let per_image = 2 + side * side * 4;
    // refuse to allocate for counts the remaining bytes cannot hold
    if count.saturating_mul(per_image) > r.remaining() {
        return Err(FormatError::Truncated {
            offset: r.position(),
            needed: count * per_image - r.remaining(),
        });
    }
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let mut tags = Vec::with_capacity(count);
    for _ in 0..count {
        let tag = r.u8()?;
        tags.push(
            SplitTag::from_byte(tag)
                .ok_or_else(|| FormatError::Malformed(format!("split tag {tag}")))?,
        );
        labels.push(r.u8()?);
        let px = r.f32s(side * side)?;
        images.push(Tensor::new(vec![1, side, side], px).expect("sized above"));
    }
    ClientShard::new(client_id, side, images, labels, tags)
        .map_err(|e| FormatError::Malformed(e.to_string()))
}

pub fn decode_shard(bytes: &[u8]) -> Result<ClientShard, FormatError> {
    decode(bytes, SHARD_MAGIC, SHARD_VERSION, parse)
}

/// Write the shard and return the CRC32 stored in its trailer.
pub fn save_shard(path: &Path, shard: &ClientShard) -> Result<u32> {
    let bytes = encode_shard(shard);
    write_atomic(path, &bytes)?;
    let t = &bytes[bytes.len() - 4..];
    Ok(u32::from_le_bytes([t[0], t[1], t[2], t[3]]))
}

pub fn load_shard(path: &Path) -> Result<ClientShard> {
    let bytes = std::fs::read(path)?;
    Ok(decode_shard(&bytes)?)
}
