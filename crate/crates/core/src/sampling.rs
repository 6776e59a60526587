//! Drawing codes from the prior, decoding them, label-by-noise grids and latent dumps.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use tch::{Kind, Tensor};

use crate::data::DatasetHandle;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::networks::{Mode, IMAGE_SIZE};
use crate::rng;

/// Which categories to attach to prior draws in conditional modes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelChoice {
    /// Uniform categorical draw per sample.
    Random,
    /// Every sample uses this class.
    Fixed(usize),
    /// Sample `i` uses class `i % K`.
    Sweep,
    /// Explicit per-sample classes.
    Given(Vec<usize>),
}

#[derive(Debug)]
pub struct PriorDraw {
    /// `N x code_dim`.
    pub codes: Tensor,
    /// Categories fed to the code generator; `None` in unconditional mode.
    pub labels: Option<Vec<usize>>,
}

/// Draw `n` codes `CG(z[, s])`, or `z` itself when the prior is a fixed Gaussian.
/// Labels are drawn before the noise.
pub fn draw_prior<R: Rng>(
    model: &Model,
    n: usize,
    labels: &LabelChoice,
    mode: Mode,
    g: &mut R,
) -> Result<PriorDraw> {
    let config = &model.config;
    let k = config.num_classes as usize;
    let labels = if config.mode.is_conditional() {
        let l = match labels {
            LabelChoice::Random => rng::categories(g, n, k),
            LabelChoice::Fixed(c) => vec![*c; n],
            LabelChoice::Sweep => (0..n).map(|i| i % k).collect(),
            LabelChoice::Given(l) => l.clone(),
        };
        if l.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} draws", l.len())));
        }
        if let Some(bad) = l.iter().find(|&&c| c >= k) {
            return Err(Error::Config(format!("label {bad} outside [0, {k})")));
        }
        Some(l)
    } else {
        if *labels != LabelChoice::Random {
            return Err(Error::Config("labels given for an unconditional model".into()));
        }
        None
    };
    let codes = match &model.code_generator {
        Some(cg) => {
            let noise = rng::normal(g, &[n as i64, config.noise_dim], 0.0, 1.0);
            let condition = labels.as_ref().map(|l| rng::one_hot(l, k));
            cg.net().forward(&noise, condition.as_ref(), mode)?
        }
        None => rng::normal(g, &[n as i64, config.code_dim], 0.0, 1.0),
    };
    Ok(PriorDraw { codes, labels })
}

/// Seeded prior draw in evaluation mode.
pub fn sample_prior(model: &Model, n: usize, labels: LabelChoice, seed: u64) -> Result<PriorDraw> {
    let mut g = rng::stream(seed, rng::Stream::Sample);
    tch::no_grad(|| draw_prior(model, n, &labels, Mode::Eval, &mut g))
}

/// Decode codes in evaluation mode; values lie in (-1, 1).
pub fn generate_images(model: &Model, codes: &Tensor) -> Result<Tensor> {
    tch::no_grad(|| model.decoder.net().forward(codes, Mode::Eval))
}

/// `rows x K` images: row `r` shares one noise vector, column `c` uses class `c`.
/// Returned in row-major order.
pub fn label_noise_grid(model: &Model, rows: usize, seed: u64) -> Result<Tensor> {
    let config = &model.config;
    if !config.mode.is_conditional() {
        return Err(Error::Config("label grids need a conditional model".into()));
    }
    let cg = model
        .code_generator
        .as_ref()
        .ok_or_else(|| Error::Config("label grids need a code generator".into()))?;
    let k = config.num_classes as usize;
    let mut g = rng::stream(seed, rng::Stream::Sample);
    let noise = rng::normal(&mut g, &[rows as i64, config.noise_dim], 0.0, 1.0);
    let noise = noise.repeat_interleave_self_int(k as i64, 0, None);
    let labels: Vec<usize> = (0..rows * k).map(|i| i % k).collect();
    let codes = tch::no_grad(|| cg.net().forward(&noise, Some(&rng::one_hot(&labels, k)), Mode::Eval))?;
    generate_images(model, &codes)
}

/// Map [-1, 1] to bytes with round-half-away-from-zero.
pub fn to_byte(v: f32) -> u8 {
    ((f64::from(v).clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Tile `N x C x 32 x 32` images into a `rows x cols` grid image (no spacing).
/// Cells past N stay black.
pub fn tile(images: &Tensor, rows: usize, cols: usize) -> Result<image::DynamicImage> {
    let size = images.size();
    if size.len() != 4 || size[2] != IMAGE_SIZE || size[3] != IMAGE_SIZE {
        return Err(Error::Shape(format!("cannot tile {size:?}")));
    }
    let (n, c) = (size[0] as usize, size[1] as usize);
    if n > rows * cols {
        return Err(Error::Shape(format!("{n} images do not fit {rows}x{cols}")));
    }
    let side = IMAGE_SIZE as usize;
    let flat = Vec::<f32>::try_from(&images.to_kind(Kind::Float).contiguous().flatten(0, -1))
        .expect("float tensor");
    let (w, h) = ((cols * side) as u32, (rows * side) as u32);
    let px = |i: usize, ch: usize, y: usize, x: usize| to_byte(flat[((i * c + ch) * side + y) * side + x]);
    let img = if c == 1 {
        let mut buf = image::GrayImage::new(w, h);
        for i in 0..n {
            let (r0, c0) = ((i / cols) * side, (i % cols) * side);
            for y in 0..side {
                for x in 0..side {
                    buf.put_pixel((c0 + x) as u32, (r0 + y) as u32, image::Luma([px(i, 0, y, x)]));
                }
            }
        }
        image::DynamicImage::ImageLuma8(buf)
    } else if c == 3 {
        let mut buf = image::RgbImage::new(w, h);
        for i in 0..n {
            let (r0, c0) = ((i / cols) * side, (i % cols) * side);
            for y in 0..side {
                for x in 0..side {
                    let rgb = [px(i, 0, y, x), px(i, 1, y, x), px(i, 2, y, x)];
                    buf.put_pixel((c0 + x) as u32, (r0 + y) as u32, image::Rgb(rgb));
                }
            }
        }
        image::DynamicImage::ImageRgb8(buf)
    } else {
        return Err(Error::Shape(format!("cannot tile {c}-channel images")));
    };
    Ok(img)
}

/// Encode as PNG and write atomically.
pub fn save_png(img: &image::DynamicImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    crate::checkpoint::write_atomic(path, &bytes)
}

/// Where exported codes come from.
pub enum LatentSource<'a> {
    /// Encoder outputs for every image, labelled with the dataset labels if any.
    Encoder(&'a DatasetHandle),
    /// `n` prior draws, labelled with the sampled category if any.
    CodeGenerator { n: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentDump {
    pub codes: Vec<Vec<f32>>,
    pub labels: Vec<Option<usize>>,
}

const EXPORT_BATCH: usize = 256;

pub fn export_latents(model: &Model, source: LatentSource<'_>) -> Result<LatentDump> {
    let (codes, labels) = match source {
        LatentSource::Encoder(data) => {
            let mut rows = Vec::with_capacity(data.len());
            for start in (0..data.len()).step_by(EXPORT_BATCH) {
                let idx: Vec<usize> = (start..(start + EXPORT_BATCH).min(data.len())).collect();
                let batch = data.select(&idx);
                let codes = tch::no_grad(|| model.encoder.net().forward(&batch.images, Mode::Eval))?;
                rows.extend(tensor_rows(&codes));
            }
            let labels = match &data.labels {
                Some(l) => l.iter().map(|&x| Some(x)).collect(),
                None => vec![None; data.len()],
            };
            (rows, labels)
        }
        LatentSource::CodeGenerator { n, seed } => {
            let draw = sample_prior(model, n, LabelChoice::Random, seed)?;
            let labels = match draw.labels {
                Some(l) => l.into_iter().map(Some).collect(),
                None => vec![None; n],
            };
            (tensor_rows(&draw.codes), labels)
        }
    };
    Ok(LatentDump { codes, labels })
}

fn tensor_rows(t: &Tensor) -> Vec<Vec<f32>> {
    let (n, d) = (t.size()[0] as usize, t.size()[1] as usize);
    let flat = Vec::<f32>::try_from(&t.to_kind(Kind::Float).contiguous().flatten(0, -1))
        .expect("float tensor");
    (0..n).map(|i| flat[i * d..(i + 1) * d].to_vec()).collect()
}

impl LatentDump {
    /// Delimited text with header `dim_0,...,dim_{d-1},label`; unknown labels are empty.
    /// Values use the shortest representation that parses back to the same `f32`.
    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.codes.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..dim).map(|i| format!("dim_{i}")).collect();
        header.push("label".into());
        w.write_record(&header)?;
        for (code, label) in self.codes.iter().zip(&self.labels) {
            let mut record: Vec<String> = code.iter().map(|v| v.to_string()).collect();
            record.push(label.map_or_else(String::new, |l| l.to_string()));
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("latent dump", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        self.write(&mut bytes)?;
        crate::checkpoint::write_atomic(path, &bytes)
    }

    pub fn read<R: std::io::Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.iter().last() != Some("label") {
            return Err(Error::Data("latent dump lacks a trailing label column".into()));
        }
        let dim = header.len() - 1;
        let mut codes = Vec::new();
        let mut labels = Vec::new();
        for record in r.records() {
            let record = record?;
            let parse = |s: &str| s.parse::<f32>().map_err(|_| Error::Data(format!("bad value {s:?}")));
            let code = (0..dim).map(|i| parse(&record[i])).collect::<Result<Vec<_>>>()?;
            let label = match &record[dim] {
                "" => None,
                s => Some(s.parse().map_err(|_| Error::Data(format!("bad label {s:?}")))?),
            };
            codes.push(code);
            labels.push(label);
        }
        Ok(Self { codes, labels })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_mapping_rounds_half_away() {
        assert_eq!(to_byte(-1.0), 0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(0.0), 128); // 127.5 rounds up
        assert_eq!(to_byte(-2.0), 0);
    }

    #[test]
    fn tiling_places_cells_row_major() {
        let a = Tensor::full([1, 1, 32, 32], -1.0, (Kind::Float, tch::Device::Cpu));
        let b = Tensor::full([1, 1, 32, 32], 1.0, (Kind::Float, tch::Device::Cpu));
        let img = tile(&Tensor::cat(&[a, b], 0), 1, 2).unwrap().to_luma8();
        assert_eq!((img.width(), img.height()), (64, 32));
        assert_eq!(img.get_pixel(0, 0)[0], 0);
        assert_eq!(img.get_pixel(40, 10)[0], 255);
    }

    #[test]
    fn dump_round_trip_is_bitwise() {
        let dump = LatentDump {
            codes: vec![vec![0.1, -3.4028235e38, 1e-45], vec![f32::MIN_POSITIVE, 0.3333333, -0.0]],
            labels: vec![Some(3), None],
        };
        let mut bytes = Vec::new();
        dump.write(&mut bytes).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("dim_0,dim_1,dim_2,label\n"));
        let back = LatentDump::read(bytes.as_slice()).unwrap();
        let bits = |d: &LatentDump| d.codes.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&dump));
        assert_eq!(back.labels, dump.labels);
    }
}
