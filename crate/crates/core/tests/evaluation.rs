mod common;

use common::{synthetic, tiny_config};
use priorforge::config::Conditioning;
use priorforge::data::DatasetHandle;
use priorforge::evaluation::*;
use priorforge::model::Model;
use priorforge::Error;
use proptest::prelude::*;
use tch::Tensor;

fn rows(n: usize, k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.001f64..1.0, k), n).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn score_is_bounded_by_class_count(p in (2usize..8, 1usize..40).prop_flat_map(|(k, n)| rows(n, k))) {
        let k = p[0].len() as f64;
        let s = inception_score(&p, 1).unwrap();
        prop_assert!(s.mean >= 1.0 - 1e-12 && s.mean <= k + 1e-9);
        prop_assert_eq!(s.std, 0.0);
    }

    #[test]
    fn permuting_rows_within_a_split(p in rows(24, 5), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shuffled = p.clone();
        shuffled.shuffle(&mut priorforge::rng::stream(seed, priorforge::rng::Stream::Sample));
        let a = inception_score(&p, 1).unwrap().mean;
        let b = inception_score(&shuffled, 1).unwrap().mean;
        prop_assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn duplicating_rows(p in rows(15, 3)) {
        let doubled: Vec<Vec<f64>> = p.iter().chain(p.iter()).cloned().collect();
        let a = inception_score(&p, 1).unwrap().mean;
        let b = inception_score(&doubled, 1).unwrap().mean;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn split_scores_are_each_bounded(p in rows(50, 4), splits in 1usize..10) {
        let s = inception_score(&p, splits).unwrap();
        prop_assert!(s.mean >= 1.0 - 1e-12 && s.mean <= 4.0 + 1e-9);
        prop_assert!(s.std >= 0.0);
        prop_assert_eq!(s.splits, splits);
    }
}

#[test]
fn pinned_score_examples() {
    let uniform = vec![vec![0.1; 10]; 50];
    let s = inception_score(&uniform, 10).unwrap();
    assert_eq!((s.mean, s.std), (1.0, 0.0));
    let confident: Vec<Vec<f64>> = (0..1000).map(|i| (0..10).map(|c| f64::from(u8::from(c == i % 10))).collect()).collect();
    assert!((inception_score(&confident, 1).unwrap().mean - 10.0).abs() < 1e-6);
    let two = inception_score(&[vec![0.9, 0.1], vec![0.1, 0.9]], 1).unwrap();
    assert!((two.mean - 1.444940).abs() < 1e-5);
    assert!(inception_score(&uniform, 0).is_err());
    assert!(inception_score(&uniform, 51).is_err());
}

fn quick_classifier(data: &DatasetHandle, seed: u64) -> TrainedClassifier {
    let config = ClassifierConfig { epochs: 4, width: 4, seed, ..ClassifierConfig::default() };
    train_eval_classifier(data, &config).unwrap()
}

/// Emits training images of the requested class.
struct Exemplars<'a>(&'a DatasetHandle);

impl ConditionalGenerator for Exemplars<'_> {
    fn num_classes(&self) -> usize {
        self.0.num_classes.unwrap()
    }

    fn generate(&self, label: usize, n: usize, _seed: u64) -> priorforge::Result<Tensor> {
        let idx: Vec<usize> = (0..self.0.len()).filter(|&i| self.0.labels.as_ref().unwrap()[i] == label).cycle().take(n).collect();
        Ok(self.0.select(&idx).images)
    }
}

#[test]
fn classifier_contract() {
    let data = synthetic(800, 4);
    let clf = quick_classifier(&data, 0);
    assert!(clf.accuracy >= 0.95);
    assert_eq!(clf.num_classes(), 4);

    // deterministic per seed
    let again = quick_classifier(&data, 0);
    assert_eq!(clf.to_checkpoint().to_bytes(), again.to_checkpoint().to_bytes());

    // wrong channel count
    let color = Tensor::zeros([2, 3, 32, 32], (tch::Kind::Float, tch::Device::Cpu));
    assert!(matches!(clf.probabilities(&color), Err(Error::Shape(_))));

    // save and reload
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clf");
    clf.save(&path).unwrap();
    let back = TrainedClassifier::load(&path).unwrap();
    let x = data.select(&[0, 1, 2]).images;
    assert!(clf.probabilities(&x).unwrap().equal(&back.probabilities(&x).unwrap()));
    assert_eq!(back.accuracy, clf.accuracy);

    // exemplars score the classifier's own hit rate on them
    let labels = data.labels.as_ref().unwrap();
    let mut hits = 0;
    for class in 0..4 {
        let idx: Vec<usize> = (0..data.len()).filter(|&i| labels[i] == class).take(25).collect();
        let probs = Vec::<f32>::try_from(clf.probabilities(&data.select(&idx).images).unwrap().flatten(0, -1)).unwrap();
        for row in probs.chunks(4) {
            let best = (0..4).fold(0, |b, c| if row[c] > row[b] { c } else { b });
            hits += usize::from(best == class);
        }
    }
    let acc = conditional_accuracy(&Exemplars(&data), &clf, 25, 0).unwrap();
    assert_eq!(acc, hits as f64 / 100.0);
    assert!(acc >= 0.9);

    // an untrained model is at chance level
    let m = Model::new(&tiny_config(Conditioning::Supervised)).unwrap();
    let acc = conditional_accuracy(&m, &clf, 100, 0).unwrap();
    let sigma = (0.25f64 * 0.75 / 400.0).sqrt();
    assert!((acc - 0.25).abs() <= 4.0 * sigma, "untrained accuracy {acc}");

    // class count mismatch
    let mut c = tiny_config(Conditioning::Supervised);
    c.num_classes = 3;
    let three = Model::new(&c).unwrap();
    assert!(matches!(conditional_accuracy(&three, &clf, 10, 0), Err(Error::Config(_))));
    assert!(evaluate(&three, &clf, 20, 2, 0).is_err());
    assert!(conditional_accuracy(&Model::new(&tiny_config(Conditioning::Unconditional)).unwrap(), &clf, 10, 0).is_err());

    // the report
    let r = evaluate(&m, &clf, 40, 1, 0).unwrap();
    assert!(r.score.mean >= 1.0 && r.score.mean <= 4.0);
    assert_eq!(r.score.std, 0.0);
    assert!(r.cond_accuracy.is_some());
    let keys: Vec<String> = r.to_text().lines().map(|l| l.split(" = ").next().unwrap().to_string()).collect();
    assert_eq!(keys, ["is_mean", "is_std", "splits", "n", "cond_accuracy"]);
    let u = evaluate(&Model::new(&tiny_config(Conditioning::Unconditional)).unwrap(), &clf, 40, 4, 0).unwrap();
    assert!(u.cond_accuracy.is_none());
    assert_eq!(u.n, 40);
}

#[test]
fn accuracy_floor_is_enforced() {
    let data = synthetic(128, 4);
    let config = ClassifierConfig { epochs: 1, width: 4, accuracy_floor: 1.01, ..ClassifierConfig::default() };
    let err = train_eval_classifier(&data, &config).err().unwrap();
    let Error::AccuracyFloor { achieved, required } = err else { panic!("{err}") };
    assert!(achieved <= 1.0);
    assert_eq!(required, 1.01);
    let unlabeled = DatasetHandle::new("bare", data.images.copy(), None, None).unwrap();
    assert!(matches!(train_eval_classifier(&unlabeled, &config), Err(Error::Data(_))));
}
