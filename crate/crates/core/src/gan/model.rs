use rand::Rng;

use crate::busgen::Class;
use crate::nn::sequential::prefixed;
use crate::nn::{Layer, Module, Scalar, Sequential, Tensor};

pub const LATENT_DIM: usize = 64;
const INIT_STD: f64 = 0.02;

/// `[N, 64, 1, 1]` noise to `[N, 1, 32, 32]` in `[-1, 1]` through four
/// transposed-convolution stages (1 → 4 → 8 → 16 → 32).
pub fn generator<T: Scalar>(rng: &mut impl Rng) -> Sequential<T> {
    Sequential::new(vec![
        Layer::conv_transpose2d(LATENT_DIM, 32, 4, 1, 0, INIT_STD, rng),
        Layer::norm(32),
        Layer::Relu,
        Layer::conv_transpose2d(32, 16, 4, 2, 1, INIT_STD, rng),
        Layer::norm(16),
        Layer::Relu,
        Layer::conv_transpose2d(16, 8, 4, 2, 1, INIT_STD, rng),
        Layer::norm(8),
        Layer::Relu,
        Layer::conv_transpose2d(8, 1, 4, 2, 1, INIT_STD, rng),
        Layer::Tanh,
    ])
}

/// `[N, 1, 32, 32]` in `[-1, 1]` to `[N, 1]` probabilities: four conv
/// stages (32 → 16 → 8 → 4 → 4), dense, sigmoid.
pub fn discriminator<T: Scalar>(rng: &mut impl Rng) -> Sequential<T> {
    Sequential::new(vec![
        Layer::conv2d_with_std(1, 8, 4, 2, 1, INIT_STD, rng),
        Layer::LeakyRelu(0.2),
        Layer::conv2d_with_std(8, 16, 4, 2, 1, INIT_STD, rng),
        Layer::norm(16),
        Layer::LeakyRelu(0.2),
        Layer::conv2d_with_std(16, 32, 4, 2, 1, INIT_STD, rng),
        Layer::norm(32),
        Layer::LeakyRelu(0.2),
        Layer::conv2d_with_std(32, 32, 3, 1, 1, INIT_STD, rng),
        Layer::norm(32),
        Layer::LeakyRelu(0.2),
        Layer::Flatten,
        Layer::dense_with_std(32 * 4 * 4, 1, INIT_STD, rng),
        Layer::Sigmoid,
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanPair<T = f32> {
    pub generator: Sequential<T>,
    pub discriminator: Sequential<T>,
    pub class: Class,
}

impl<T: Scalar> GanPair<T> {
    pub fn new(class: Class, rng: &mut impl Rng) -> Self {
        let generator = generator(rng);
        let discriminator = discriminator(rng);
        Self {
            generator,
            discriminator,
            class,
        }
    }

    /// Images in `[0, 1]` to the discriminator's `[-1, 1]` input range.
    pub fn to_signed(images: &Tensor<T>) -> Tensor<T> {
        let two = T::from_f64(2.0);
        images.map(|v| v * two - T::one())
    }

    /// Generator output in `[-1, 1]` back to `[0, 1]`.
    pub fn to_unit(images: &Tensor<T>) -> Tensor<T> {
        let half = T::from_f64(0.5);
        images.map(|v| ((v + T::one()) * half).max(T::zero()).min(T::one()))
    }
}

impl<T: Scalar> Module<T> for GanPair<T> {
    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = prefixed("g", self.generator.named_params());
        out.extend(prefixed("d", self.discriminator.named_params()));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = self.generator.params_mut();
        out.extend(self.discriminator.params_mut());
        out
    }
}
