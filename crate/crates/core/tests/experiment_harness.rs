use std::path::Path;

use sharp::experiment::{
    read_image, run_experiment, simulate_measurement, ExperimentConfig, Prepared, PriorSpec, OperatorSpec,
    EnsembleSpec, RestorerSpec,
};
use sharp::metrics::{magnitude, psnr, Psnr};

fn quickstart() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quickstart.json");
    ExperimentConfig::load(&path).unwrap().0
}

#[test]
fn quickstart_config_round_trips() {
    let cfg = quickstart();
    let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
    assert_eq!(back, cfg);
}

fn small(cfg: &mut ExperimentConfig, dir: &Path) {
    cfg.output_dir = dir.to_path_buf();
    cfg.solver.iterations = 40;
}

#[test]
fn summary_psnr_matches_stored_final_iterates() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quickstart();
    small(&mut cfg, dir.path());
    let out = run_experiment(&cfg, dir.path(), None).unwrap();
    assert_eq!(out.rows.len(), 3);
    assert_eq!(out.trace_paths.len(), 3);
    let prepared = Prepared::new(&cfg, dir.path()).unwrap();
    let summary = std::fs::read_to_string(&out.summary_path).unwrap();
    for (line, (seed, path)) in summary.lines().skip(1).zip(cfg.seeds.iter().zip(&out.final_paths)) {
        let stored: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        let (header, x_final) = read_image(path).unwrap();
        assert_eq!((header.height, header.width), (16, 16));
        let (x_true, _) = simulate_measurement(&cfg, &prepared, *seed).unwrap();
        assert!(cfg.metrics.magnitude);
        let Psnr { db, .. } = psnr(&magnitude(&x_final), &magnitude(&x_true), x_true.amax()).unwrap();
        assert!((db - stored).abs() <= 1e-9, "{db} vs {stored}");
    }
    for p in out.trace_paths.iter().chain(&out.final_paths) {
        assert!(p.starts_with(dir.path()));
    }
    assert!(dir.path().join("curves.csv").exists());
}

#[test]
fn rerun_overwrites_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quickstart();
    small(&mut cfg, dir.path());
    let first = run_experiment(&cfg, dir.path(), None).unwrap();
    let before: Vec<Vec<u8>> = first.trace_paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let summary = std::fs::read(&first.summary_path).unwrap();
    let second = run_experiment(&cfg, dir.path(), Some(2)).unwrap();
    let after: Vec<Vec<u8>> = second.trace_paths.iter().map(|p| std::fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
    assert_eq!(summary, std::fs::read(&second.summary_path).unwrap());
}

fn identity_config(dim: usize, noise_sigma: f64) -> ExperimentConfig {
    let mut cfg = quickstart();
    cfg.problem.operator = OperatorSpec::Identity { dim };
    cfg.problem.noise_sigma = noise_sigma;
    cfg.prior = PriorSpec::Isotropic {
        mean: vec![0.0; dim],
        variance: 1.0,
    };
    cfg.ensemble = EnsembleSpec {
        members: vec![OperatorSpec::Identity { dim }],
        kspace_family: None,
        weights: None,
        sigma: 0.5,
    };
    cfg.metrics.image_shape = None;
    cfg.metrics.ssim = false;
    cfg
}

#[test]
fn noiseless_identity_measurement_is_ground_truth() {
    let cfg = identity_config(5, 0.0);
    let prepared = Prepared::new(&cfg, Path::new(".")).unwrap();
    let (x, y) = simulate_measurement(&cfg, &prepared, 4).unwrap();
    assert_eq!(x, y);
}

#[test]
fn measurement_noise_has_configured_variance() {
    let m = 20_000;
    let cfg = identity_config(m, 0.3);
    let prepared = Prepared::new(&cfg, Path::new(".")).unwrap();
    let (x, y) = simulate_measurement(&cfg, &prepared, 11).unwrap();
    let var = (y - x).norm_squared() / m as f64;
    assert!((var / 0.09 - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn denoiser_and_ensemble_modes_give_comparable_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut ensemble = quickstart();
    small(&mut ensemble, dir.path());
    ensemble.metrics.curves = false;
    let mut denoiser = ensemble.clone();
    denoiser.run_id = "denoiser".into();
    denoiser.ensemble.kspace_family = None;
    denoiser.ensemble.members = vec![OperatorSpec::Identity { dim: 256 }];
    denoiser.output_dir = dir.path().join("denoiser");
    let a = run_experiment(&ensemble, dir.path(), None).unwrap();
    let b = run_experiment(&denoiser, dir.path(), None).unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(ra.seed, rb.seed);
        assert_eq!(ra.iters, rb.iters);
        assert!(ra.psnr_db.unwrap().is_finite() && rb.psnr_db.unwrap().is_finite());
    }
}

#[test]
fn biased_restorer_configs_run() {
    let dir = tempfile::tempdir().unwrap();
    for (i, r) in [
        RestorerSpec::UniformOffset { value: 0.01 },
        RestorerSpec::Gain { lambda: 0.9 },
        RestorerSpec::Smoothing { strength: 0.5 },
    ]
    .into_iter()
    .enumerate()
    {
        let mut cfg = quickstart();
        small(&mut cfg, &dir.path().join(i.to_string()));
        cfg.seeds = vec![1];
        cfg.restorer = r;
        let out = run_experiment(&cfg, dir.path(), None).unwrap();
        assert!(out.rows[0].psnr_db.unwrap().is_finite());
    }
}
