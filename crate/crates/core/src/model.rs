//! The full set of networks for one configuration, and its checkpoint mapping.

use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::networks::{
    build_code_discriminator, build_code_generator, build_decoder, build_encoder,
    build_image_discriminator, CodeDiscriminator, CodeGenerator, Decoder, Encoder,
    ImageDiscriminator, Mode, NetworkHandle,
};
use crate::rng;

pub const MODEL_KIND: &str = "model";

pub struct Model {
    pub config: TrainingConfig,
    pub encoder: NetworkHandle<Encoder>,
    pub decoder: NetworkHandle<Decoder>,
    /// Absent when the prior is a fixed Gaussian.
    pub code_generator: Option<NetworkHandle<CodeGenerator>>,
    /// Carries the auxiliary classification head in conditional modes.
    pub image_discriminator: NetworkHandle<ImageDiscriminator>,
    pub code_discriminator: NetworkHandle<CodeDiscriminator>,
}

impl Model {
    /// Freshly initialized networks; initialization depends only on `config.seed`.
    pub fn new(config: &TrainingConfig) -> Result<Self> {
        config.validate()?;
        let mut g = rng::stream(config.seed, rng::Stream::Init);
        let c = config;
        let encoder = build_encoder(c.channels, c.code_dim, c.width, &mut g)?;
        let decoder = build_decoder(c.channels, c.code_dim, c.width, &mut g)?;
        let code_generator = if c.ablation.learned_prior {
            Some(build_code_generator(c.noise_dim, c.cond_dim(), c.code_dim, &mut g)?)
        } else {
            None
        };
        let image_discriminator = build_image_discriminator(
            c.channels,
            c.num_classes,
            c.mode.is_conditional(),
            c.width,
            &mut g,
        )?;
        let code_discriminator = build_code_discriminator(c.code_dim, c.code_cond_dim(), &mut g)?;
        Ok(Self {
            config: config.clone(),
            encoder,
            decoder,
            code_generator,
            image_discriminator,
            code_discriminator,
        })
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.encoder.set_mode(mode);
        self.decoder.set_mode(mode);
        if let Some(cg) = &mut self.code_generator {
            cg.set_mode(mode);
        }
        self.image_discriminator.set_mode(mode);
        self.code_discriminator.set_mode(mode);
    }

    /// `(name, fingerprint)` for every network, in a fixed order.
    pub fn fingerprints(&self) -> Vec<(&str, u64)> {
        let mut out = vec![
            (self.encoder.name(), self.encoder.fingerprint()),
            (self.decoder.name(), self.decoder.fingerprint()),
        ];
        if let Some(cg) = &self.code_generator {
            out.push((cg.name(), cg.fingerprint()));
        }
        out.push((self.image_discriminator.name(), self.image_discriminator.fingerprint()));
        out.push((self.code_discriminator.name(), self.code_discriminator.fingerprint()));
        out
    }

    /// Checkpoint holding every network variable under `<network>.<name>`.
    pub fn to_checkpoint(&self, step: u64) -> Checkpoint {
        let mut ckpt = Checkpoint::new(MODEL_KIND, self.config.to_text(), step, self.config.seed);
        let mut add = |prefix: &str, vars: std::collections::BTreeMap<String, tch::Tensor>| {
            for (name, t) in vars {
                ckpt.insert(format!("{prefix}.{name}"), &t);
            }
        };
        add(self.encoder.name(), self.encoder.variables());
        add(self.decoder.name(), self.decoder.variables());
        if let Some(cg) = &self.code_generator {
            add(cg.name(), cg.variables());
        }
        add(self.image_discriminator.name(), self.image_discriminator.variables());
        add(self.code_discriminator.name(), self.code_discriminator.variables());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.kind != MODEL_KIND {
            return Err(Error::Config(format!(
                "expected a {MODEL_KIND} checkpoint, found {:?}",
                ckpt.kind
            )));
        }
        let config = TrainingConfig::from_text(&ckpt.metadata)?;
        let mut model = Self::new(&config)?;
        model.encoder.load_variables(&ckpt.group("enc"))?;
        model.decoder.load_variables(&ckpt.group("dec"))?;
        if let Some(cg) = &mut model.code_generator {
            cg.load_variables(&ckpt.group("cg"))?;
        }
        model.image_discriminator.load_variables(&ckpt.group("d_img"))?;
        model.code_discriminator.load_variables(&ckpt.group("d_code"))?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
