use pec_core::model::{EncoderConfig, EncoderKind, LocationPredictorModel, ModelConfig, PatternSet};
use pec_core::Tensor;
use social_pec::checkpoint::{check_architecture, Checkpoint, TrainingMeta};
use social_pec::export::{patterns_csv, patterns_svg};
use social_pec::CliError;

fn default_checkpoint(seed: u64) -> Checkpoint {
    Checkpoint {
        model: LocationPredictorModel::new(ModelConfig::default(), seed).unwrap(),
        training: TrainingMeta {
            seed,
            epochs: 3,
            best_val_nll: Some(-0.731_204_518_339_102_7),
        },
    }
}

#[test]
fn checkpoint_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let ck = default_checkpoint(17);
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let mut worst = 0.0f64;
    for (a, b) in ck.model.params().iter().zip(back.model.params().iter()) {
        assert_eq!(a.name, b.name);
        worst = worst.max(a.value.max_abs_diff(&b.value).unwrap());
    }
    assert_eq!(worst, 0.0);
    assert_eq!(back, ck);
}

#[test]
fn truncated_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let text = default_checkpoint(1).to_json_string();
    std::fs::write(&path, &text[..text.len() / 2]).unwrap();
    assert!(Checkpoint::load(&path).is_err());
}

#[test]
fn pattern_count_mismatch_names_the_field() {
    let ck = default_checkpoint(2);
    let mut run = ModelConfig::default();
    run.context = EncoderConfig { num_patterns: 50, ..run.context };
    let err = check_architecture(ck.model.config(), &run).unwrap_err();
    assert!(matches!(err, CliError::Architecture { .. }));
    assert!(err.to_string().contains("context.num_patterns"), "{err}");
}

#[test]
fn csv_lists_every_context_pattern() {
    let model = LocationPredictorModel::new(ModelConfig::default(), 5).unwrap();
    let csv = patterns_csv(&model.patterns(EncoderKind::Context));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "j,lambda,b,x1,y1,x2,y2");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|f| f.parse::<f64>().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 100);
    for (j, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 7);
        assert_eq!(row[0], j as f64);
        assert!(row[1..].iter().all(|v| v.is_finite()));
        // a fresh model starts with lambda = -1, b = 0 and anchors in [-4, 4]^2
        assert_eq!((row[1], row[2]), (-1.0, 0.0));
        assert!(row[3].abs() <= 4.0 && row[4].abs() <= 4.0);
    }
}

fn attr(tag: &str, name: &str) -> f64 {
    let key = format!(" {name}=\"");
    let start = tag.find(&key).unwrap() + key.len();
    let end = start + tag[start..].find('"').unwrap();
    tag[start..end].parse().unwrap()
}

#[test]
fn svg_arrow_spans_the_pattern() {
    let set = PatternSet::new(
        Tensor::new(&[1, 2, 2], vec![1.0, 0.0, 2.0, 0.0]).unwrap(),
        Tensor::vector(vec![-1.0]),
        Tensor::vector(vec![0.0]),
    )
    .unwrap();
    let svg = patterns_svg(&set, 6.0).unwrap();
    let arrows: Vec<&str> = svg.lines().filter(|l| l.contains("class=\"pattern\"")).collect();
    assert_eq!(arrows.len(), 1);
    let scale = 600.0 / 12.0;
    let a = arrows[0];
    assert!((attr(a, "x2") - attr(a, "x1") - scale).abs() < 1e-9);
    assert_eq!(attr(a, "y1"), attr(a, "y2"));
    // starts one meter right of the target
    let target = svg.lines().find(|l| l.contains("class=\"target\"")).unwrap();
    assert!((attr(a, "x1") - attr(target, "cx") - scale).abs() < 1e-9);
    assert_eq!(attr(a, "y1"), attr(target, "cy"));
}

#[test]
fn svg_rejects_empty_extent() {
    let model = LocationPredictorModel::new(ModelConfig::default(), 5).unwrap();
    assert!(patterns_svg(&model.patterns(EncoderKind::Target), 0.0).is_err());
}
