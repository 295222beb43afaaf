use std::fs;
use std::path::Path;
use std::time::Instant;

use urbanheight::geo_grid::read_ascii_grid;
use urbanheight::pipeline::{
    generate_synthetic_scene, run_pipeline, run_stage, write_synthetic, OutLayout, PipelineConfig, PipelineError, Stage,
    SynthParams, PARTIAL_MARKER,
};

fn small() -> SynthParams {
    SynthParams {
        n_rows: 32,
        n_cols: 32,
        n_buildings: 16,
        n_scenes: 3,
        n_trees: 20,
        ..SynthParams::default()
    }
}

fn setup(dir: &Path, seed: u64, params: &SynthParams) -> PipelineConfig {
    let scene = generate_synthetic_scene(seed, params).unwrap();
    let cfg = write_synthetic(dir, &scene).unwrap();
    PipelineConfig::load(cfg).unwrap()
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = walkdir::WalkDir::new(root)
        .into_iter()
        .map(Result::unwrap)
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(root).unwrap().to_string_lossy().into_owned();
            (rel, fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn full_run_writes_every_product() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 3, &small());
    let t = Instant::now();
    let logs = run_pipeline(&cfg).unwrap();
    eprintln!("run took {:?}", t.elapsed());
    let out = OutLayout::new(&cfg.paths.out);
    assert!(!out.marker().exists());
    for p in [out.samples(), out.samples_train(), out.samples_holdout(), out.height_map(), out.run_log()] {
        assert!(p.exists(), "{}", p.display());
    }
    for stage in Stage::RUN {
        assert!(out.stage_log(stage).exists());
    }
    for name in ["holdout_samples.csv", "holdout_reference.csv", "reference.csv", "polygons.csv"] {
        let text = fs::read_to_string(out.reports().join(name)).unwrap();
        assert!(text.starts_with("stratum,n,r,rmse\n"), "{name}");
    }
    assert!(fs::read_dir(out.models()).unwrap().count() >= 1);
    let map = read_ascii_grid(out.height_map()).unwrap();
    let mask = read_ascii_grid(&cfg.paths.urban_mask).unwrap();
    for i in 0..map.spec().len() {
        if map.valid_at(i).is_some() {
            assert!(mask.valid_at(i).is_some(), "mapped cell {i} outside the urban mask");
        }
    }
    let sample = &logs[0].1;
    assert!(sample.get("samples").unwrap().parse::<usize>().unwrap() > 0);
}

#[test]
fn stages_one_by_one_match_full_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = setup(a.path(), 8, &small());
    let cb = setup(b.path(), 8, &small());
    run_pipeline(&ca).unwrap();
    for stage in Stage::RUN {
        run_stage(&cb, stage).unwrap();
    }
    let mut ta = tree(&ca.paths.out);
    ta.retain(|(n, _)| n != "run_log.txt");
    assert_eq!(ta, tree(&cb.paths.out));
}

#[test]
fn run_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = setup(a.path(), 11, &small());
    let cb = setup(b.path(), 11, &small());
    run_pipeline(&ca).unwrap();
    run_pipeline(&cb).unwrap();
    assert_eq!(tree(&ca.paths.out), tree(&cb.paths.out));
}

#[test]
fn missing_zone_model_fails_map_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 4, &small());
    for stage in [Stage::Sample, Stage::Features, Stage::Train] {
        run_stage(&cfg, stage).unwrap();
    }
    let out = OutLayout::new(&cfg.paths.out);
    let victim = fs::read_dir(out.models()).unwrap().next().unwrap().unwrap().path();
    fs::remove_file(&victim).unwrap();
    let err = run_stage(&cfg, Stage::Map).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(matches!(&err, PipelineError::Stage { stage: Stage::Map, message } if message.contains("no model for zone")));
    assert!(out.root.join(PARTIAL_MARKER).exists());
    assert!(!out.height_map().exists());
}

#[test]
fn later_stage_without_inputs_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 4, &small());
    let err = run_stage(&cfg, Stage::Train).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn no_samples_is_a_stage_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = setup(dir.path(), 4, &small());
    cfg.sampling.min_height = 1000.0;
    let err = run_stage(&cfg, Stage::Sample).unwrap_err();
    assert!(matches!(&err, PipelineError::Stage { stage: Stage::Sample, message } if message.contains("no samples")));
}
