mod common;

use common::*;
use lqgame::config::{content_hash, GameConfig, SystemConfig};
use lqgame::io::*;
use lqgame::study::StudyRow;
use lqgame::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn sym(entries: &[f64], n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_column_slice(n, n, &entries[..n * n]);
    (&m + m.transpose()) * 0.5
}

proptest! {
    #[test]
    fn vectorize_devectorize_is_a_bijection_on_symmetric_blocks(
        n in 1usize..4,
        dims in prop::collection::vec(1usize..4, 1..4),
        raw in prop::collection::vec(-5.0..5.0f64, 64),
    ) {
        let mut cursor = 0;
        let mut take = |k: usize| { let out = sym(&raw[cursor..], k); cursor += k * k; out };
        let q = take(n);
        let r: Vec<DMatrix<f64>> = dims.iter().map(|&m| take(m)).collect();
        let costs = CostParameters::new(vec![PlayerCost { q: q.clone(), r: r.clone() }]);
        let theta = vectorize_costs(&costs, 0).unwrap();
        prop_assert_eq!(theta.len(), n * n + dims.iter().map(|m| m * m).sum::<usize>());
        let back = devectorize_costs(&theta, n, &dims).unwrap();
        prop_assert_eq!(&back.q, &q);
        prop_assert_eq!(&back.r, &r);
        prop_assert_eq!(back.to_theta(), theta);
    }

    #[test]
    fn validate_accepts_random_definite_constructions(
        qe in prop::collection::vec(-1.0..1.0f64, 4),
        re in prop::collection::vec(-1.0..1.0f64, 4),
        ce in prop::collection::vec(-1.0..1.0f64, 4),
        l in prop::collection::vec(0.01..1.0f64, 2),
    ) {
        let r = reference();
        let psd = {
            let m = DMatrix::from_column_slice(2, 1, &ce[..2]);
            &m * m.transpose()
        };
        let costs = CostParameters::new(vec![
            PlayerCost { q: spd_from(&qe, 2, 0.05), r: vec![spd_from(&re, 2, 0.05), psd.clone()] },
            PlayerCost { q: spd_from(&re, 2, 0.05), r: vec![psd, spd_from(&qe, 2, 0.05)] },
        ]);
        let noise = NoiseModel::diagonal(&l, 0.01);
        let report = validate(&r.game, &costs, &noise);
        prop_assert!(report.is_valid(), "{:?}", report.violations);
    }
}

#[test]
fn validate_names_each_violation() {
    let r = reference();
    assert!(validate(&r.game, &r.costs, &r.noise).is_valid());

    let mut costs = r.costs.clone();
    costs.players[0].q = diag(&[1.0, -1.0]);
    costs.players[1].r[1] = diag(&[1.0, 0.0]);
    costs.players[0].r[1] = diag(&[-0.5, 0.0]);
    let noise = NoiseModel::diagonal(&[0.1, 0.0], 0.01);
    let v = validate(&r.game, &costs, &noise).violations;
    for expected in ["Q1 not positive definite", "R22 not positive definite", "R12 not positive semidefinite", "l2 not strictly positive"] {
        assert!(v.iter().any(|m| m == expected), "missing {expected:?} in {v:?}");
    }
    assert_eq!(v.len(), 4);

    let full = NoiseModel::from_matrix(DMatrix::from_row_slice(2, 2, &[0.1, 0.01, 0.0, 0.2]), 0.01).unwrap();
    assert_eq!(validate(&r.game, &r.costs, &full).violations, vec!["L not diagonal (entry 1,2)".to_string()]);

    let mut wrong = r.costs.clone();
    wrong.players.pop();
    assert!(matches!(validate(&r.game, &wrong, &r.noise).into_result(), Err(Error::Validation(_))));
}

#[test]
fn reference_config_round_trips() {
    let cfg = GameConfig::reference_example();
    let back = GameConfig::from_json(&cfg.to_json().unwrap()).unwrap();
    assert_eq!(back, cfg);
    let game: GameDefinition64 = back.game().unwrap();
    assert_eq!(game.players(), 2);
    assert_eq!(game.grid().steps(), 500);
    assert!((game.grid().dt() - 0.01).abs() < 1e-15);
    assert_eq!(back.noise::<f64>().unwrap().diag().as_slice(), &[0.1, 0.2]);
}

#[test]
fn system_view_never_reads_cost_or_noise_fields() {
    let text = r#"{
        "system": { "A": [[1,-1],[1,0]], "B": [[[1,0],[0,1]], [[1,0],[0,1]]], "L": "not a matrix" },
        "x0": [2, -2],
        "players": { "decoy": true },
        "simulation": 17
    }"#;
    assert!(GameConfig::from_json(text).is_err());
    let sys = SystemConfig::from_json(text).unwrap();
    let game: GameDefinition64 = sys.game().unwrap();
    assert_eq!(game.control_dims(), vec![2, 2]);
    assert_eq!(game.grid().steps(), 500);
}

#[test]
fn malformed_matrices_are_config_errors() {
    let mut cfg = GameConfig::reference_example();
    cfg.system.a = vec![vec![1.0, 2.0], vec![3.0]];
    assert!(matches!(cfg.game::<f64>(), Err(Error::Config(_))));
}

#[test]
fn content_hash_is_stable_hex_sha256() {
    assert_eq!(content_hash(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

#[test]
fn bundle_round_trips_through_csv() {
    let r = reference();
    let game = r.game.with_grid(TimeGrid::new(0.0, 0.5, 50).unwrap());
    let noise = NoiseModel::diagonal(&[0.1, 0.2], 0.01);
    let prof = solve(&game, &r.costs);
    let bundle = simulate_bundle(&game, &prof, &noise, &SimulationConfig::new(3, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_bundle(dir.path(), &bundle, "h").unwrap();
    assert_eq!(manifest.files, vec!["demo_0000.csv", "demo_0001.csv", "demo_0002.csv"]);
    assert_eq!(manifest.seed, Some(9));
    let back = read_bundle(dir.path(), &game).unwrap();
    assert_eq!(back, bundle);

    std::fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
    let globbed = read_bundle(dir.path(), &game).unwrap();
    assert_eq!(globbed.demos(), bundle.demos());
    assert_eq!(globbed.seed(), None);
}

#[test]
fn demo_header_layout() {
    assert_eq!(demo_header(2, &[1, 2]), vec!["t", "x_1", "x_2", "u_1_1", "u_2_1", "u_2_2"]);
}

#[test]
fn short_demo_file_is_rejected() {
    let r = reference();
    let game = r.game.with_grid(TimeGrid::new(0.0, 0.05, 5).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("demo_0000.csv");
    std::fs::write(&path, "t,x_1,x_2,u_1_1,u_1_2,u_2_1,u_2_2\n0,1,2,3,4,5,6\n").unwrap();
    assert!(read_demo_csv::<f64>(&path, game.grid(), 2, &[2, 2]).is_err());
}

#[test]
fn study_rows_round_trip_including_failures() {
    let rows = vec![
        StudyRow { nodes: 20, rep: 0, e_mu_x: Some(1e-3), e_mu_u: Some(2e-3), e_var_x: Some(0.1), e_var_u: Some(0.2), t_c: Some(0.004), seed: 1, failure: None },
        StudyRow { nodes: 20, rep: 1, e_mu_x: None, e_mu_u: None, e_var_x: None, e_var_u: None, t_c: None, seed: 2, failure: Some("rank 10, expected 11".into()) },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("runs.csv");
    write_study_rows(&path, &rows).unwrap();
    assert_eq!(read_study_rows(&path).unwrap(), rows);
}

#[test]
fn bundle_requires_a_demonstration() {
    let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
    assert!(TrajectoryBundle::<f64>::new(grid, vec![], None).is_err());
}
