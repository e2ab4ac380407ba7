use std::fs;
use std::path::Path;

use tmascore::synthgen::{generate, generate_corpus, PerClass, SourceSpec, SynthSpec};
use tmascore::transfer::{split, tma_transfer, SplitOptions};
use tmascore::forest::train_forest;
use tmascore::{accuracy, FeatureOptions, ForestParams, Score};

fn small(seed: u64, shift: f64) -> SynthSpec {
    SynthSpec {
        image_size: 64,
        images_per_class: PerClass::Uniform(20),
        sources: vec![SourceSpec {
            name: "aux".into(),
            images_per_class: PerClass::Uniform(20),
            shift,
            conforming_fraction: 0.5,
        }],
        seed,
        ..SynthSpec::benchmark()
    }
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().display().to_string();
        out.push((rel, fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn benchmark_spec_is_bundled_and_valid() {
    let spec = SynthSpec::benchmark();
    assert_eq!(spec.sources.len(), 3);
    assert_eq!(spec.images_per_class.total(), 160);
    assert!(spec.sources.iter().all(|s| s.images_per_class.total() == 120 && s.conforming_fraction == 0.5));
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = small(0, 1.0);
    spec.sources[0].conforming_fraction = 1.5;
    assert!(spec.validate().is_err());
    let mut spec = small(0, 1.0);
    spec.sources[0].shift = f64::INFINITY;
    assert!(spec.validate().is_err());
    assert!(SynthSpec::from_json("{\"classes\": []}").is_err());
}

#[test]
fn zero_shift_keeps_primary_parameters() {
    for c in 0..4 {
        assert_eq!(SynthSpec::latent_centre(c, 0.0, true), SynthSpec::latent_centre(c, 0.0, false));
    }
    let spec = SynthSpec::benchmark();
    assert_eq!(spec.params_at(2.0), spec.classes[2]);
}

#[test]
fn same_seed_writes_identical_files() {
    let mut spec = small(3, 1.0);
    spec.image_size = 24;
    spec.images_per_class = PerClass::Uniform(3);
    spec.sources[0].images_per_class = PerClass::Uniform(1);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(&spec, a.path()).unwrap();
    generate(&spec, b.path()).unwrap();
    let files = read_tree(a.path());
    assert_eq!(files.len(), 12 + 4 + 2);
    assert_eq!(files, read_tree(b.path()));
    spec.seed = 4;
    let c = tempfile::tempdir().unwrap();
    generate(&spec, c.path()).unwrap();
    assert_ne!(files, read_tree(c.path()));
}

#[test]
fn empty_source_writes_header_only() {
    let mut spec = small(0, 1.0);
    spec.image_size = 16;
    spec.images_per_class = PerClass::Uniform(1);
    spec.sources[0].images_per_class = PerClass::Uniform(0);
    let dir = tempfile::tempdir().unwrap();
    let written = generate(&spec, dir.path()).unwrap();
    assert_eq!(fs::read_to_string(&written[1].1).unwrap(), "path,label,source\n");
    assert!(!dir.path().join("aux").exists());
}

#[test]
fn benchmark_classes_darken_with_score() {
    let corpus = generate_corpus(&SynthSpec::benchmark()).unwrap();
    let primary = &corpus.sources[0];
    let mut sums = [0.0f64; 4];
    let mut counts = [0usize; 4];
    for img in &primary.images {
        let px = img.image.pixels();
        let c = u8::from(img.label) as usize;
        sums[c] += px.iter().map(|&v| f64::from(v)).sum::<f64>() / px.len() as f64;
        counts[c] += 1;
    }
    let means: Vec<f64> = sums.iter().zip(counts).map(|(s, n)| s / n as f64).collect();
    assert!(means.windows(2).all(|w| w[0] > w[1] + 1.0), "{means:?}");
}

#[test]
fn benchmark_accuracy_lies_in_target_band() {
    let mut total = 0.0;
    for s in 0..10 {
        let spec = SynthSpec {
            seed: s,
            sources: vec![],
            ..SynthSpec::benchmark()
        };
        let (primary, _) = generate_corpus(&spec).unwrap().features(&FeatureOptions::default()).unwrap();
        let (train, test) = split(&primary, &SplitOptions::default(), s).unwrap();
        let forest = train_forest(&train, &ForestParams::default().with_seed(s)).unwrap();
        let truth: Vec<Score> = test.iter().map(|x| x.label).collect();
        total += accuracy(&forest.predict_labels(&test).unwrap(), &truth).unwrap() / 10.0;
    }
    assert!((0.55..=0.90).contains(&total), "mean accuracy {total}");
}

#[test]
fn larger_shift_passes_the_gate_less_often() {
    let shifts = [0.0, 0.75, 1.5];
    let mut fractions = [0.0; 3];
    for s in 0..10 {
        for (k, &shift) in shifts.iter().enumerate() {
            let (primary, aux) = generate_corpus(&small(s, shift)).unwrap().features(&FeatureOptions::default()).unwrap();
            let params = ForestParams { trees: 50, seed: s, ..ForestParams::default() };
            let model = train_forest(&primary, &params).unwrap();
            let f = tma_transfer(&model, &aux[0].instances, 50, 0.1).unwrap();
            fractions[k] += f.len() as f64 / aux[0].instances.len() as f64 / 10.0;
        }
    }
    assert!(fractions[0] > fractions[1] && fractions[1] > fractions[2], "{fractions:?}");
}
