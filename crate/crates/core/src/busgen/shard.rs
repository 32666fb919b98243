use crate::error::{Error, Result};
use crate::nn::Tensor;

use super::lesion::Class;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train = 0,
    Val = 1,
    Test = 2,
    /// Synthetic pool images carry no split.
    Unsplit = 3,
}

impl SplitTag {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(SplitTag::Train),
            1 => Some(SplitTag::Val),
            2 => Some(SplitTag::Test),
            3 => Some(SplitTag::Unsplit),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
            SplitTag::Unsplit => "unsplit",
        }
    }
}

/// Smallest per-class count that still leaves train and test non-empty under
/// the floor/floor/remainder split.
pub const MIN_CLASS_COUNT: usize = 5;

/// One client's labelled images. Images are `[1, side, side]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientShard {
    pub client_id: u16,
    pub side: usize,
    pub images: Vec<Tensor<f32>>,
    pub labels: Vec<u8>,
    pub tags: Vec<SplitTag>,
}

impl ClientShard {
    pub fn new(
        client_id: u16,
        side: usize,
        images: Vec<Tensor<f32>>,
        labels: Vec<u8>,
        tags: Vec<SplitTag>,
    ) -> Result<Self> {
        if images.len() != labels.len() || images.len() != tags.len() {
            return Err(Error::InvalidArgument(format!(
                "shard has {} images, {} labels, {} tags",
                images.len(),
                labels.len(),
                tags.len()
            )));
        }
        for img in &images {
            if img.shape() != [1, side, side] {
                return Err(Error::Shape {
                    layer: "shard image",
                    expected: format!("[1, {side}, {side}]"),
                    got: img.shape().to_vec(),
                });
            }
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::InvalidLabel(l as f64));
        }
        Ok(Self {
            client_id,
            side,
            images,
            labels,
            tags,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// n_k: the number of train-tagged images.
    pub fn n_train(&self) -> usize {
        self.count(SplitTag::Train)
    }

    pub fn count(&self, tag: SplitTag) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }

    pub fn class_count(&self, class: Class) -> usize {
        self.labels.iter().filter(|&&l| l == class.label()).count()
    }

    /// Indices carrying `tag`, in shard order.
    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tags[i] == tag).collect()
    }

    pub fn count_of(&self, tag: SplitTag, class: Class) -> usize {
        (0..self.len())
            .filter(|&i| self.tags[i] == tag && self.labels[i] == class.label())
            .count()
    }
}

/// Per-class counts `(train, val, test)` for `n` images split 3:1:2.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let train = n * 3 / 6;
    let val = n / 6;
    (train, val, n - train - val)
}

/// Stratified 3:1:2 split. Within each class the first `⌊3n/6⌋` images (in
/// shard order) become train, the next `⌊n/6⌋` val, the rest test.
pub fn split_shard(mut shard: ClientShard) -> Result<ClientShard> {
    for class in Class::BOTH {
        let n = shard.class_count(class);
        if n < MIN_CLASS_COUNT {
            return Err(Error::DegenerateClass {
                client: shard.client_id as usize,
                class: class.name(),
                count: n,
                min: MIN_CLASS_COUNT,
            });
        }
    }
    for class in Class::BOTH {
        let idx: Vec<usize> = (0..shard.len())
            .filter(|&i| shard.labels[i] == class.label())
            .collect();
        let (train, val, _) = split_counts(idx.len());
        for (rank, &i) in idx.iter().enumerate() {
            shard.tags[i] = if rank < train {
                SplitTag::Train
            } else if rank < train + val {
                SplitTag::Val
            } else {
                SplitTag::Test
            };
        }
    }
    Ok(shard)
}
