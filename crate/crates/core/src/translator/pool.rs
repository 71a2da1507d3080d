use rand::Rng;

use crate::nn::Tensor;

/// History of generated images shown to a discriminator. Until full, every
/// fake is stored and returned; afterwards, half the time a stored fake is
/// returned and swapped for the new one.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePool {
    capacity: usize,
    images: Vec<Tensor>,
}

impl ImagePool {
    pub fn new(capacity: usize) -> Self {
        ImagePool {
            capacity,
            images: Vec::new(),
        }
    }

    pub fn from_images(capacity: usize, mut images: Vec<Tensor>) -> Self {
        images.truncate(capacity);
        ImagePool { capacity, images }
    }

    pub fn images(&self) -> &[Tensor] {
        &self.images
    }

    pub fn query(&mut self, fake: Tensor, rng: &mut impl Rng) -> Tensor {
        if self.capacity == 0 {
            return fake;
        }
        if self.images.len() < self.capacity {
            self.images.push(fake.clone());
            return fake;
        }
        if rng.random_bool(0.5) {
            let i = rng.random_range(0..self.capacity);
            std::mem::replace(&mut self.images[i], fake)
        } else {
            fake
        }
    }
}
