mod common;

use common::{synthetic, tiny_config};
use priorforge::config::Conditioning;
use priorforge::model::Model;
use priorforge::networks::Mode;
use priorforge::objectives::scalar;
use priorforge::rng::{self, Stream};
use priorforge::sampling::*;
use priorforge::Error;
use tch::Tensor;

fn model(mode: Conditioning) -> Model {
    Model::new(&tiny_config(mode)).unwrap()
}

#[test]
fn supervised_codes_have_the_configured_size() {
    let mut c = tiny_config(Conditioning::Supervised);
    c.code_dim = 64;
    c.noise_dim = 54;
    c.num_classes = 10;
    let m = Model::new(&c).unwrap();
    let a = sample_prior(&m, 8, LabelChoice::Fixed(3), 11).unwrap();
    assert_eq!(a.codes.size(), [8, 64]);
    assert_eq!(a.labels.as_deref(), Some(&[3usize; 8][..]));
    let b = sample_prior(&m, 8, LabelChoice::Fixed(3), 11).unwrap();
    assert!(a.codes.equal(&b.codes));
    let other = sample_prior(&m, 8, LabelChoice::Fixed(3), 12).unwrap();
    assert!(!a.codes.equal(&other.codes));
}

#[test]
fn label_choices() {
    let m = model(Conditioning::Unsupervised);
    let sweep = sample_prior(&m, 10, LabelChoice::Sweep, 0).unwrap();
    assert_eq!(sweep.labels.unwrap(), [0, 1, 2, 3, 0, 1, 2, 3, 0, 1]);
    let random = sample_prior(&m, 200, LabelChoice::Random, 0).unwrap().labels.unwrap();
    assert!((0..4).all(|c| random.contains(&c)));
    assert!(matches!(sample_prior(&m, 4, LabelChoice::Fixed(4), 0), Err(Error::Config(_))));
    assert!(sample_prior(&m, 4, LabelChoice::Given(vec![0, 1]), 0).is_err());
}

#[test]
fn labels_are_rejected_for_unconditional_models() {
    let m = model(Conditioning::Unconditional);
    assert!(sample_prior(&m, 4, LabelChoice::Random, 0).unwrap().labels.is_none());
    for choice in [LabelChoice::Fixed(0), LabelChoice::Sweep] {
        assert!(matches!(sample_prior(&m, 4, choice, 0), Err(Error::Config(_))));
    }
}

#[test]
fn gaussian_prior_returns_the_noise_itself() {
    let mut c = tiny_config(Conditioning::Unconditional);
    c.ablation.learned_prior = false;
    c.code_dim = 8;
    let m = Model::new(&c).unwrap();
    let draw = sample_prior(&m, 5, LabelChoice::Random, 4).unwrap();
    let expected = rng::normal(&mut rng::stream(4, Stream::Sample), &[5, 8], 0.0, 1.0);
    assert!(draw.codes.equal(&expected));
}

#[test]
fn generated_images_are_in_range_for_many_code_sizes() {
    for d in [8, 64, 100, 2000] {
        let mut c = tiny_config(Conditioning::Unconditional);
        c.code_dim = d;
        let m = Model::new(&c).unwrap();
        let draw = sample_prior(&m, 16, LabelChoice::Random, 0).unwrap();
        assert_eq!(draw.codes.size(), [16, d]);
        let images = generate_images(&m, &draw.codes).unwrap();
        assert_eq!(images.size(), [16, 1, 32, 32]);
        assert!(scalar(&images.abs().max()) < 1.0);
    }
    let m = model(Conditioning::Unconditional);
    assert!(generate_images(&m, &Tensor::zeros([2, 9], (tch::Kind::Float, tch::Device::Cpu))).is_err());
}

#[test]
fn grid_cells_match_standalone_generation() {
    let m = model(Conditioning::Supervised);
    let rows = 3;
    let grid = label_noise_grid(&m, rows, 9).unwrap();
    assert_eq!(grid.size(), [12, 1, 32, 32]);
    assert!(grid.equal(&label_noise_grid(&m, rows, 9).unwrap()));
    let noise = rng::normal(&mut rng::stream(9, Stream::Sample), &[rows as i64, 8], 0.0, 1.0);
    let cg = m.code_generator.as_ref().unwrap();
    for r in 0..rows {
        for c in 0..4 {
            let z = noise.narrow(0, r as i64, 1);
            let code = tch::no_grad(|| cg.net().forward(&z, Some(&rng::one_hot(&[c], 4)), Mode::Eval)).unwrap();
            let alone = generate_images(&m, &code).unwrap();
            let cell = grid.narrow(0, (r * 4 + c) as i64, 1);
            assert!((&alone - &cell).abs().max().double_value(&[]) < 1e-6, "cell ({r}, {c})");
        }
    }
    assert!(label_noise_grid(&model(Conditioning::Unconditional), 2, 0).is_err());
}

#[test]
fn tiles_preserve_pixel_bytes() {
    let m = model(Conditioning::Supervised);
    let grid = label_noise_grid(&m, 2, 1).unwrap();
    let img = tile(&grid, 2, 4).unwrap().to_luma8();
    assert_eq!((img.width(), img.height()), (128, 64));
    let values = Vec::<f32>::try_from(&grid.flatten(0, -1)).unwrap();
    for (i, (y, x)) in [(0usize, (5u32, 7u32)), (5, (31, 0)), (7, (12, 30))] {
        let (r, c) = (i / 4, i % 4);
        let v = values[i * 1024 + y as usize * 32 + x as usize];
        let px = img.get_pixel(c as u32 * 32 + x, r as u32 * 32 + y)[0];
        let oracle = ((v as f64 + 1.0) * 127.5).round() as u8;
        assert_eq!(px, oracle);
    }
    assert!(tile(&grid, 1, 4).is_err());
}

#[test]
fn png_output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(Conditioning::Unconditional);
    let write = |name: &str| {
        let codes = sample_prior(&m, 4, LabelChoice::Random, 2).unwrap().codes;
        let img = tile(&generate_images(&m, &codes).unwrap(), 2, 2).unwrap();
        let path = dir.path().join(name);
        save_png(&img, &path).unwrap();
        std::fs::read(path).unwrap()
    };
    assert_eq!(write("a.png"), write("b.png"));
}

#[test]
fn latent_export_rows_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(Conditioning::Supervised);
    let data = synthetic(300, 4);
    let dump = export_latents(&m, LatentSource::Encoder(&data)).unwrap();
    assert_eq!(dump.codes.len(), 300);
    assert!(dump.codes.iter().all(|c| c.len() == 8));
    assert_eq!(dump.labels, data.labels.as_ref().unwrap().iter().map(|&l| Some(l)).collect::<Vec<_>>());
    let path = dir.path().join("codes.csv");
    dump.save(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "dim_0,dim_1,dim_2,dim_3,dim_4,dim_5,dim_6,dim_7,label");
    assert_eq!(text.lines().count(), 301);
    let back = LatentDump::load(&path).unwrap();
    let bits = |d: &LatentDump| d.codes.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&dump));
    assert_eq!(back.labels, dump.labels);

    let drawn = export_latents(&m, LatentSource::CodeGenerator { n: 50, seed: 3 }).unwrap();
    assert_eq!(drawn.codes.len(), 50);
    assert!(drawn.labels.iter().all(|l| l.is_some_and(|c| c < 4)));
    assert_eq!(drawn, export_latents(&m, LatentSource::CodeGenerator { n: 50, seed: 3 }).unwrap());
}
