use pcada::data::{generate, load_external, write_dataset, GeneratorConfig, GeneratorKind};
use pcada::linalg::squared_distance;
use pcada::Error;

fn small() -> GeneratorConfig {
    GeneratorConfig {
        source_samples: 50,
        samples_per_split: 10,
        eval_samples: 25,
        domains: 4,
        test_domains: 3,
        seed: 9,
        ..GeneratorConfig::default()
    }
}

#[test]
fn round_trip_is_bitwise() {
    let ds = generate(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds, false).unwrap();
    let back = load_external(dir.path()).unwrap();
    assert_eq!(back.classes, ds.classes);
    assert_eq!(back.source, ds.source);
    assert_eq!(back.domains.len(), ds.domains.len());
    for (a, b) in ds.domains.iter().zip(&back.domains) {
        assert_eq!(a.timestamp, b.timestamp);
        for (x, y) in [(&a.support, &b.support), (&a.query, &b.query), (&a.eval.features, &b.eval.features)] {
            let xb: Vec<u64> = x.as_slice().iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
        assert_eq!(a.eval.labels, b.eval.labels);
    }
}

#[test]
fn existing_dataset_needs_overwrite() {
    let ds = generate(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds, false).unwrap();
    assert!(matches!(write_dataset(dir.path(), &ds, false), Err(Error::Input(_))));
    write_dataset(dir.path(), &ds, true).unwrap();
}

#[test]
fn missing_eval_file_names_domain() {
    let ds = generate(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds, false).unwrap();
    std::fs::remove_file(dir.path().join("domain_2_eval.csv")).unwrap();
    let msg = load_external(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("domain 2"), "{msg}");
}

#[test]
fn header_mismatch_rejected() {
    let ds = generate(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds, false).unwrap();
    std::fs::write(dir.path().join("domain_1_query.csv"), "x0,x1,x2\n1,2,3\n").unwrap();
    assert!(matches!(load_external(dir.path()), Err(Error::Parse { .. })));
    std::fs::write(dir.path().join("domain_1_query.csv"), "x0,y1\n1,2\n").unwrap();
    assert!(matches!(load_external(dir.path()), Err(Error::Parse { .. })));
}

#[test]
fn same_seed_same_data_other_seed_differs() {
    let a = generate(&small()).unwrap();
    let b = generate(&small()).unwrap();
    assert_eq!(a, b);
    let c = generate(&GeneratorConfig { seed: 10, ..small() }).unwrap();
    assert_ne!(a.source, c.source);
}

#[test]
fn classes_are_balanced() {
    for kind in [GeneratorKind::Gaussians, GeneratorKind::Glyphs] {
        let cfg = GeneratorConfig {
            kind,
            input_dim: if kind == GeneratorKind::Glyphs { 64 } else { 2 },
            source_samples: 53,
            eval_samples: 27,
            ..small()
        };
        let ds = generate(&cfg).unwrap();
        let mut batches = vec![&ds.source.labels];
        batches.extend(ds.domains.iter().map(|d| &d.eval.labels));
        for labels in batches {
            let mut counts = vec![0usize; cfg.classes];
            for &l in labels {
                counts[l] += 1;
            }
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{counts:?}");
        }
    }
}

#[test]
fn splits_are_disjoint_draws() {
    let ds = generate(&small()).unwrap();
    for d in &ds.domains {
        for r in d.support.iter_rows() {
            assert!(d.query.iter_rows().all(|q| q != r));
            assert!(d.eval.features.iter_rows().all(|q| q != r));
        }
    }
}

#[test]
fn timestamps_follow_angles() {
    let cfg = small();
    let ds = generate(&cfg).unwrap();
    let angles = cfg.domain_angles();
    assert_eq!(angles.first(), Some(&3.0));
    assert_eq!(angles.last(), Some(&174.0));
    for (i, d) in ds.domains.iter().enumerate() {
        assert_eq!(d.timestamp, i as u64);
        assert_eq!(d.angle, Some(angles[i]));
    }
    let (train, test) = ds.split(cfg.test_domains).unwrap();
    assert_eq!((train.len(), test.len()), (4, 3));
}

/// Classifying by the true rotated means gives the same difficulty at every
/// angle: rotation moves the task without making it easier or harder.
#[test]
fn difficulty_is_rotation_invariant() {
    let cfg = GeneratorConfig {
        eval_samples: 2000,
        ..GeneratorConfig::default()
    };
    let ds = generate(&cfg).unwrap();
    let angles = cfg.domain_angles();
    let accs: Vec<f64> = ds
        .domains
        .iter()
        .zip(&angles)
        .map(|(d, &a)| {
            let means = pcada::data::gaussian_means(&cfg, a);
            let hits = d
                .eval
                .features
                .iter_rows()
                .zip(&d.eval.labels)
                .filter(|(x, &y)| {
                    let best = (0..means.len())
                        .min_by(|&i, &j| squared_distance(x, &means[i]).total_cmp(&squared_distance(x, &means[j])))
                        .unwrap();
                    best == y
                })
                .count();
            hits as f64 / d.eval.len() as f64
        })
        .collect();
    let lo = accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = accs.iter().cloned().fold(0.0, f64::max);
    assert!(lo > 0.8, "{accs:?}");
    assert!(hi - lo < 0.05, "{accs:?}");
}
