//! Little-endian binary containers: client shards (`FSBU`) and parameter
//! checkpoints (`FSCK`). Both end in a CRC32 of every preceding byte.

pub mod checkpoint;
pub mod codec;
pub mod shard;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use codec::{write_atomic, Reader, Writer};
pub use shard::{decode_shard, encode_shard, load_shard, save_shard, SHARD_MAGIC, SHARD_VERSION};
