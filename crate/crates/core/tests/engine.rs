use pcada::config::{Method, RunConfig};
use pcada::data::{generate, DomainSnapshot, EvolvingDataset, LabeledBatch};
use pcada::engine::{meta_test, meta_train, run_method, PCAdaModel, TrainPlan};
use pcada::nn::checksum;
use pcada::Error;

fn cfg(method: Method) -> RunConfig {
    let mut c = RunConfig::default().with_seed(4).apply_overrides(&[
        "data.source_samples=60",
        "data.samples_per_split=8",
        "data.eval_samples=20",
        "data.domains=4",
        "data.test_domains=2",
        "meta.max_outer=2",
        "meta.max_inner=1",
        "meta.pretrain_epochs=3",
        "meta.batch_size=8",
        "meta.trajectory_len=2",
        "meta.test_passes=2",
        "apm.t1=0",
        "apm.t2=1",
    ])
    .unwrap();
    c.method = method;
    c
}

fn pretrained(c: &RunConfig) -> (PCAdaModel, EvolvingDataset) {
    let data = generate(&c.data).unwrap();
    let mut m = PCAdaModel::new(c, c.method, data.input_dim(), data.classes).unwrap();
    let opt = m.pretrain_opt;
    m.pretrain_source(&data.source, 2, &opt, c.seed).unwrap();
    (m, data)
}

fn source_batch(data: &EvolvingDataset) -> LabeledBatch {
    data.source.select(&(0..8).collect::<Vec<_>>())
}

fn changed(before: &PCAdaModel, after: &PCAdaModel) -> Vec<&'static str> {
    let a = before.checksums("x");
    let b = after.checksums("x");
    let mut out = vec![];
    for (name, key) in [
        ("phi", "x.phi"),
        ("classifier", "x.classifier"),
        ("encoder", "x.encoder"),
        ("decoder", "x.decoder"),
        ("prototypes", "x.prototypes"),
    ] {
        if a.get(key) != b.get(key) {
            out.push(name);
        }
    }
    out
}

#[test]
fn inner_step_moves_classifier_and_prototypes_only() {
    let c = cfg(Method::PcadaFull);
    let (mut m, data) = pretrained(&c);
    let before = m.clone();
    m.inner_step(Some(&source_batch(&data)), &data.domains[0].support, 5.0).unwrap();
    assert_eq!(changed(&before, &m), vec!["classifier", "prototypes"]);
}

#[test]
fn outer_step_moves_extractor_only() {
    let c = cfg(Method::PcadaFull);
    let (mut m, data) = pretrained(&c);
    let before = m.clone();
    let traj = vec![data.domains[0].query.clone(), data.domains[1].query.clone()];
    m.outer_step(Some(&source_batch(&data)), None, &traj).unwrap();
    assert_eq!(changed(&before, &m), vec!["phi", "encoder", "decoder"]);

    m.sam.set_encoder_frozen(true);
    let before = m.clone();
    m.outer_step(None, None, &traj).unwrap();
    assert_eq!(changed(&before, &m), vec!["phi", "decoder"]);
}

#[test]
fn no_sam_outer_step_leaves_autoencoder() {
    let c = cfg(Method::PcadaNoSam);
    let (mut m, data) = pretrained(&c);
    let before = m.clone();
    let traj = vec![data.domains[0].query.clone(), data.domains[1].query.clone()];
    m.outer_step(Some(&source_batch(&data)), None, &traj).unwrap();
    assert_eq!(changed(&before, &m), vec!["phi"]);
}

#[test]
fn prototypes_frozen_before_annealing_starts() {
    let mut c = cfg(Method::PcadaFull);
    c.apm.t1 = 10.0;
    c.apm.t2 = 20.0;
    let (mut m, data) = pretrained(&c);
    let before = m.bank.clone();
    m.inner_step(Some(&source_batch(&data)), &data.domains[0].support, 3.0).unwrap();
    assert_eq!(m.bank, before);
}

#[test]
fn steps_need_pretraining() {
    let c = cfg(Method::PcadaFull);
    let data = generate(&c.data).unwrap();
    let mut m = PCAdaModel::new(&c, c.method, data.input_dim(), data.classes).unwrap();
    let err = m.inner_step(None, &data.domains[0].support, 0.0).unwrap_err();
    assert!(matches!(err, Error::State(_)));
    let traj = vec![data.domains[0].query.clone(), data.domains[1].query.clone()];
    assert!(matches!(m.outer_step(None, None, &traj), Err(Error::State(_))));
}

#[test]
fn outer_step_needs_two_domains() {
    let c = cfg(Method::PcadaFull);
    let (mut m, data) = pretrained(&c);
    let err = m.outer_step(None, None, &[data.domains[0].query.clone()]).unwrap_err();
    assert!(matches!(err, Error::Input(_)));
}

#[test]
fn loop_counters() {
    let mut c = cfg(Method::PcadaFull);
    c.meta.max_outer = 1;
    c.meta.max_inner = 1;
    let (mut m, data) = pretrained(&c);
    let m0 = m.counters.clone();
    let (train, _) = data.split(c.data.test_domains).unwrap();
    meta_train(&mut m, c.method, &data.source, train, &TrainPlan::from_config(&c)).unwrap();
    assert_eq!(m.counters.inner_steps - m0.inner_steps, 2);
    assert_eq!(m.counters.prototype_sweeps - m0.prototype_sweeps, 1);
    assert_eq!(m.counters.outer_steps - m0.outer_steps, 1);

    c.meta.max_outer = 3;
    c.meta.max_inner = 2;
    let out = run_method(&c, &data).unwrap();
    let k = &out.report.counters;
    assert_eq!(k["inner_steps"], 3 * 2 * 2);
    assert_eq!(k["prototype_sweeps"], 3 * 2);
    assert_eq!(k["outer_steps"], 3);
    assert_eq!(k["test_inner_steps"], 2 * 2);
    assert_eq!(k["test_outer_steps"], 1);
}

#[test]
fn same_seed_same_report() {
    let c = cfg(Method::PcadaFull);
    let data = generate(&c.data).unwrap();
    let a = run_method(&c, &data).unwrap().report.to_json().unwrap();
    let b = run_method(&c, &data).unwrap().report.to_json().unwrap();
    assert_eq!(a, b);
    let c2 = c.clone().with_seed(5);
    let d = run_method(&c2, &generate(&c2.data).unwrap()).unwrap().report.to_json().unwrap();
    assert_ne!(a, d);
}

#[test]
fn encoder_fixed_during_online_phase() {
    for method in [Method::PcadaFull, Method::PcadaNoApm] {
        let c = cfg(method);
        let data = generate(&c.data).unwrap();
        let out = run_method(&c, &data).unwrap();
        assert_eq!(
            checksum(out.trained.sam.encoder()),
            checksum(out.tested.sam.encoder()),
            "{method}"
        );
        let k = &out.report.checksums;
        assert_eq!(k["trained.encoder"], k["tested.encoder"]);
        assert_ne!(k["trained.decoder"], k["tested.decoder"]);
    }
}

#[test]
fn source_only_never_adapts() {
    let c = cfg(Method::SourceOnly);
    let data = generate(&c.data).unwrap();
    let out = run_method(&c, &data).unwrap();
    let (a, b) = (out.trained.checksums("x"), out.tested.checksums("x"));
    assert_eq!(a, b);
    assert!(out.masks.is_empty());
    let k = &out.report.counters;
    assert_eq!(k["inner_steps"] + k["test_inner_steps"] + k["outer_steps"], 0);
}

#[test]
fn no_apm_matches_full_with_zero_rates() {
    let mut no_apm = cfg(Method::PcadaNoApm);
    no_apm.apm.eta_replay_f = 0.0;
    let mut full = cfg(Method::PcadaFull);
    full.apm.eta_f = 0.0;
    full.apm.eta_replay_f = 0.0;
    let data = generate(&full.data).unwrap();
    let a = run_method(&no_apm, &data).unwrap();
    let b = run_method(&full, &data).unwrap();
    assert_eq!(a.report.r_matrix, b.report.r_matrix);
    assert_eq!(checksum(&a.tested.classifier), checksum(&b.tested.classifier));
    assert_eq!(checksum(&a.tested.phi), checksum(&b.tested.phi));
}

#[test]
fn static_stream_does_not_forget() {
    let c = cfg(Method::PcadaFull);
    let data = generate(&c.data).unwrap();
    let mut m = PCAdaModel::new(&c, c.method, data.input_dim(), data.classes).unwrap();
    let (train, test) = data.split(c.data.test_domains).unwrap();
    let plan = TrainPlan::from_config(&c);
    meta_train(&mut m, c.method, &data.source, train, &plan).unwrap();
    // the same domain arriving four times, with no unlabelled data to adapt on
    let mut plan = plan;
    plan.test_passes = 1;
    let stream: Vec<DomainSnapshot> = (0..4)
        .map(|t| DomainSnapshot {
            timestamp: t,
            ..test[0].clone()
        })
        .collect();
    let mut frozen = m.clone();
    let out = meta_test(&mut frozen, Method::SourceOnly, &stream, &plan).unwrap();
    assert_eq!(out.r.bwt().unwrap(), 0.0);
    let out = meta_test(&mut m, c.method, &stream, &plan).unwrap();
    assert!(out.r.bwt().unwrap().abs() < 0.1, "{:?}", out.r);
}

#[test]
fn online_timestamps_must_increase() {
    let c = cfg(Method::PcadaFull);
    let (mut m, data) = pretrained(&c);
    let mut stream = data.domains[..2].to_vec();
    stream.swap(0, 1);
    let err = meta_test(&mut m, c.method, &stream, &TrainPlan::from_config(&c)).unwrap_err();
    assert!(matches!(err, Error::Input(_)));
}

#[test]
fn pretraining_fits_separable_source() {
    let mut c = cfg(Method::SourceOnly);
    c.data.noise = 0.2;
    c.data.source_samples = 200;
    let data = generate(&c.data).unwrap();
    let mut m = PCAdaModel::new(&c, c.method, data.input_dim(), data.classes).unwrap();
    let opt = m.pretrain_opt;
    m.pretrain_source(&data.source, 50, &opt, 0).unwrap();
    assert!(m.is_pretrained());
    assert!(m.accuracy(&data.source).unwrap() >= 0.95);
}

#[test]
fn mask_dump_rows_per_pass_and_query() {
    let c = cfg(Method::PcadaFull);
    let data = generate(&c.data).unwrap();
    let out = run_method(&c, &data).unwrap();
    // two online domains × (two support passes + one query)
    assert_eq!(out.masks.len(), 6);
    assert_eq!(out.masks[2].batch, "query");
    assert!(out.masks.iter().all(|r| r.values.len() == c.model.feature_dim));
    let out = run_method(&cfg(Method::PcadaNoSam), &data).unwrap();
    assert!(out.masks.is_empty());
}

#[test]
fn snapshot_round_trip_reproduces_online_phase() {
    let c = cfg(Method::PcadaFull);
    let data = generate(&c.data).unwrap();
    let trained = pcada::engine::train_model(&c, &data).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    trained.snapshot().save(&path).unwrap();

    let mut loaded = PCAdaModel::new(&c, c.method, data.input_dim(), data.classes).unwrap();
    loaded.load_snapshot(&pcada::nn::ParamSnapshot::load(&path).unwrap()).unwrap();
    assert_eq!(loaded.checksums("x"), trained.checksums("x"));

    let direct = run_method(&c, &data).unwrap();
    let resumed = pcada::engine::evaluate(&c, &data, loaded).unwrap();
    assert_eq!(direct.report.r_matrix, resumed.report.r_matrix);
    assert_eq!(direct.report.checksums["tested.phi"], resumed.report.checksums["tested.phi"]);
}

#[test]
fn snapshot_from_other_architecture_rejected() {
    let c = cfg(Method::PcadaFull);
    let (m, data) = pretrained(&c);
    let mut other = c.clone();
    other.model.feature_dim = 8;
    let mut m2 = PCAdaModel::new(&other, other.method, data.input_dim(), data.classes).unwrap();
    assert!(m2.load_snapshot(&m.snapshot()).is_err());
}
