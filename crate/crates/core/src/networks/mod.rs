//! The five networks of the model: encoder, decoder, code generator, image
//! discriminator (with an optional auxiliary classification head) and code
//! discriminator.

mod code_generator;
mod discriminator;
mod encoder;
mod decoder;
pub mod layers;
pub mod residual;

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use rand::Rng;
use tch::{nn, Device, Kind, Tensor};

pub use code_generator::CodeGenerator;
pub use decoder::Decoder;
pub use discriminator::{CodeDiscriminator, DiscriminatorOutput, ImageDiscriminator, D_HEAD, Q_HEAD};
pub use encoder::Encoder;

use crate::error::{Error, Result};

/// Spatial size of every image the networks accept or produce.
pub const IMAGE_SIZE: i64 = 32;

/// Base channel count of the reference architecture (first encoder conv).
pub const REFERENCE_WIDTH: i64 = 64;

/// How batch-normalization layers behave during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, folded into the running averages.
    Train,
    /// Batch statistics, running averages left untouched. Used for networks that
    /// take part in a phase without being updated by it.
    Fixed,
    /// Running averages; deterministic per sample.
    Eval,
}

/// A network together with the variable store that owns its parameters.
pub struct NetworkHandle<N> {
    name: String,
    vs: nn::VarStore,
    net: N,
    mode: Mode,
}

impl<N> NetworkHandle<N> {
    fn build(name: &str, build: impl FnOnce(&nn::Path) -> N) -> Self {
        let vs = nn::VarStore::new(Device::Cpu);
        let net = build(&vs.root());
        Self {
            name: name.to_string(),
            vs,
            net,
            mode: Mode::Train,
        }
    }

    /// Rescale conv and linear weights so a network narrower than the reference keeps
    /// the reference's per-layer activation variance (the std stays 0.02 at full width).
    fn scale_to_width(self, width: i64) -> Self {
        let factor = (REFERENCE_WIDTH as f64 / width as f64).sqrt();
        if factor != 1.0 {
            tch::no_grad(|| {
                for (_, mut t) in self.vs.variables() {
                    if t.dim() > 1 {
                        let _ = t.g_mul_scalar_(factor);
                    }
                }
            });
        }
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn net(&self) -> &N {
        &self.net
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Trainable tensors keyed by their stable names.
    pub fn parameters(&self) -> BTreeMap<String, Tensor> {
        self.variables()
            .into_iter()
            .filter(|(_, t)| t.requires_grad())
            .collect()
    }

    /// Trainable tensors whose names satisfy `keep`.
    pub fn parameters_where(&self, keep: impl Fn(&str) -> bool) -> Vec<(String, Tensor)> {
        self.parameters()
            .into_iter()
            .filter(|(name, _)| keep(name))
            .collect()
    }

    /// Every tensor including batch-norm running statistics.
    pub fn variables(&self) -> BTreeMap<String, Tensor> {
        self.vs.variables().into_iter().collect()
    }

    pub fn parameter_count(&self) -> i64 {
        self.parameters().values().map(|t| t.numel() as i64).sum()
    }

    /// Hash of the exact bit patterns of every variable.
    pub fn fingerprint(&self) -> u64 {
        fingerprint(self.variables().iter())
    }

    /// Overwrite every variable from `values`; names and shapes must match exactly.
    pub fn load_variables(&mut self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        let own = self.variables();
        if own.len() != values.len() || own.keys().any(|k| !values.contains_key(k)) {
            return Err(Error::Shape(format!(
                "network {} expects variables {:?}",
                self.name,
                own.keys().collect::<Vec<_>>()
            )));
        }
        tch::no_grad(|| {
            for (name, mut dst) in own {
                let src = &values[&name];
                if src.size() != dst.size() {
                    return Err(Error::Shape(format!(
                        "{}.{name}: expected {:?}, found {:?}",
                        self.name,
                        dst.size(),
                        src.size()
                    )));
                }
                dst.copy_(src);
            }
            Ok(())
        })
    }
}

pub(crate) fn fingerprint<'a>(tensors: impl Iterator<Item = (&'a String, &'a Tensor)>) -> u64 {
    let mut hasher = DefaultHasher::new();
    for (name, t) in tensors {
        name.hash(&mut hasher);
        t.size().hash(&mut hasher);
        let flat = t.detach().to_kind(Kind::Float).flatten(0, -1);
        let values = Vec::<f32>::try_from(&flat).expect("float tensor");
        for v in values {
            v.to_bits().hash(&mut hasher);
        }
    }
    hasher.finish()
}

fn check_shape(what: &str, t: &Tensor, expected: &[Option<i64>]) -> Result<()> {
    let size = t.size();
    let ok = size.len() == expected.len()
        && size
            .iter()
            .zip(expected)
            .all(|(s, e)| e.is_none_or(|e| e == *s));
    if ok {
        Ok(())
    } else {
        let want: Vec<String> = expected
            .iter()
            .map(|e| e.map_or("N".to_string(), |v| v.to_string()))
            .collect();
        Err(Error::Shape(format!(
            "{what}: expected [{}], found {size:?}",
            want.join(", ")
        )))
    }
}

fn check_channels(channels: i64) -> Result<()> {
    if channels == 1 || channels == 3 {
        Ok(())
    } else {
        Err(Error::Config(format!("image channels must be 1 or 3, got {channels}")))
    }
}

fn check_positive(what: &str, value: i64) -> Result<()> {
    if value >= 1 {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be at least 1, got {value}")))
    }
}

impl NetworkHandle<Encoder> {
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        self.net.forward(images, self.mode)
    }
}

impl NetworkHandle<Decoder> {
    pub fn forward(&self, codes: &Tensor) -> Result<Tensor> {
        self.net.forward(codes, self.mode)
    }
}

impl NetworkHandle<CodeGenerator> {
    pub fn forward(&self, noise: &Tensor, condition: Option<&Tensor>) -> Result<Tensor> {
        self.net.forward(noise, condition, self.mode)
    }
}

impl NetworkHandle<ImageDiscriminator> {
    pub fn forward(&self, images: &Tensor) -> Result<DiscriminatorOutput> {
        self.net.forward(images, self.mode)
    }
}

impl NetworkHandle<CodeDiscriminator> {
    pub fn forward(&self, codes: &Tensor, condition: Option<&Tensor>) -> Result<Tensor> {
        self.net.forward(codes, condition, self.mode)
    }
}

/// `channels x 32 x 32` images to `code_dim` codes.
pub fn build_encoder<R: Rng>(
    channels: i64,
    code_dim: i64,
    width: i64,
    rng: &mut R,
) -> Result<NetworkHandle<Encoder>> {
    check_channels(channels)?;
    check_positive("code_dim", code_dim)?;
    check_positive("width", width)?;
    Ok(NetworkHandle::build("enc", |p| {
        Encoder::new(p, rng, channels, code_dim, width)
    })
    .scale_to_width(width))
}

/// `code_dim` codes to `channels x 32 x 32` images in (-1, 1).
pub fn build_decoder<R: Rng>(
    channels: i64,
    code_dim: i64,
    width: i64,
    rng: &mut R,
) -> Result<NetworkHandle<Decoder>> {
    check_channels(channels)?;
    check_positive("code_dim", code_dim)?;
    check_positive("width", width)?;
    Ok(NetworkHandle::build("dec", |p| {
        Decoder::new(p, rng, channels, code_dim, width)
    })
    .scale_to_width(width))
}

/// Noise (plus an optional one-hot condition of size `cond_dim`) to `code_dim` codes.
pub fn build_code_generator<R: Rng>(
    noise_dim: i64,
    cond_dim: i64,
    code_dim: i64,
    rng: &mut R,
) -> Result<NetworkHandle<CodeGenerator>> {
    check_positive("noise_dim", noise_dim)?;
    check_positive("code_dim", code_dim)?;
    if cond_dim < 0 {
        return Err(Error::Config(format!("cond_dim must be non-negative, got {cond_dim}")));
    }
    Ok(NetworkHandle::build("cg", |p| {
        CodeGenerator::new(p, rng, noise_dim, cond_dim, code_dim)
    }))
}

pub fn build_image_discriminator<R: Rng>(
    channels: i64,
    num_classes: i64,
    q_enabled: bool,
    width: i64,
    rng: &mut R,
) -> Result<NetworkHandle<ImageDiscriminator>> {
    check_channels(channels)?;
    check_positive("width", width)?;
    if q_enabled && num_classes < 2 {
        return Err(Error::Config(format!(
            "the classification head needs at least 2 classes, got {num_classes}"
        )));
    }
    let classes = q_enabled.then_some(num_classes);
    Ok(NetworkHandle::build("d_img", |p| {
        ImageDiscriminator::new(p, rng, channels, classes, width)
    })
    .scale_to_width(width))
}

pub fn build_code_discriminator<R: Rng>(
    code_dim: i64,
    cond_dim: i64,
    rng: &mut R,
) -> Result<NetworkHandle<CodeDiscriminator>> {
    check_positive("code_dim", code_dim)?;
    if cond_dim < 0 {
        return Err(Error::Config(format!("cond_dim must be non-negative, got {cond_dim}")));
    }
    Ok(NetworkHandle::build("d_code", |p| {
        CodeDiscriminator::new(p, rng, code_dim, cond_dim)
    }))
}
