use std::path::Path;

use csd_core::harness::{parse_plot_data, run_component_ablation, run_experiment, run_lambda_grid, ExperimentConfig};
use csd_core::ComponentMask;

fn benchmark(seeds: usize, epochs: usize) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic-forgetting.toml");
    let mut config = ExperimentConfig::load(&path).unwrap();
    config.output.dir = None;
    config.deterministic = true;
    config.seeds.truncate(seeds);
    config.train.epochs_per_task = epochs;
    config
}

#[test]
fn zero_lambda_cell_equals_fine_tuning() {
    let config = benchmark(2, 30);
    let grid = run_lambda_grid(&config, &[0.0, 1.0], false).unwrap();
    assert_eq!(grid.cells.len(), 4);
    let ablation = run_component_ablation(&config, &[ComponentMask::FINE_TUNING], false).unwrap();
    let zero = &grid.cell(0.0, 0.0).unwrap().record;
    for (a, b) in zero.seeds.iter().zip(&ablation[0].seeds) {
        assert_eq!(a.report, b.report);
    }
}

#[test]
fn unit_grid_equals_plain_run() {
    let config = benchmark(1, 20);
    let grid = run_lambda_grid(&config, &[1.0], false).unwrap();
    assert_eq!(grid.cells.len(), 1);
    let plain = run_experiment(&config, false).unwrap();
    assert_eq!(grid.cells[0].record.seeds[0].report, plain.seeds[0].report);
    assert_eq!(grid.cells[0].record.seeds[0].trace, plain.seeds[0].trace);
}

#[test]
fn single_mask_ablation_equals_plain_run() {
    let config = benchmark(1, 20);
    let records = run_component_ablation(&config, &[config.components], false).unwrap();
    let plain = run_experiment(&config, false).unwrap();
    for (a, b) in records[0].seeds.iter().zip(&plain.seeds) {
        assert_eq!(a.report, b.report);
        assert_eq!(a.trace, b.trace);
    }
}

#[test]
fn ce_and_csd_masks_give_two_curves() {
    let config = benchmark(1, 5);
    let masks: Vec<ComponentMask> = ["ce", "ce+csd"].iter().map(|m| m.parse().unwrap()).collect();
    let records = run_component_ablation(&config, &masks, false).unwrap();
    let labels: Vec<&str> = records.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["ce", "ce+csd"]);
    assert!(records.iter().all(|r| r.mean_curve(0, 1).len() == 2));
}

/// On this benchmark, adding CSD without KD or triplet ends below CE alone
/// (about 72 vs 88 task-1 Recall@1). Once CE has converged on the second
/// task, Adam rescales even a small CSD gradient to full step size and the
/// unbounded contrastive objective drags the shared representation. The
/// ordering does hold at `lr_later = 1e-4`, where fine-tuning no longer
/// forgets enough for the benchmark's purpose.
#[test]
#[ignore = "does not hold on the synthetic benchmark; see doc comment"]
fn csd_curve_ends_above_ce_curve() {
    let config = benchmark(5, 200);
    let masks: Vec<ComponentMask> = ["ce", "ce+csd"].iter().map(|m| m.parse().unwrap()).collect();
    let records = run_component_ablation(&config, &masks, false).unwrap();
    let ce = records[0].mean_curve(0, 1);
    let csd = records[1].mean_curve(0, 1);
    assert!(csd.last() >= ce.last(), "ce {ce:?} vs ce+csd {csd:?}");
}

#[test]
fn eight_masks_write_eight_named_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = benchmark(1, 2);
    config.output.dir = Some(tmp.path().to_path_buf());
    let masks = ComponentMask::all_with_ce();
    let records = run_component_ablation(&config, &masks, false).unwrap();
    assert_eq!(records.len(), 8);
    let mut curves = 0;
    for mask in &masks {
        let path = tmp.path().join(format!("ablation/curve-{mask}.csv"));
        let rows = parse_plot_data(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.method == mask.to_string()));
        curves += 1;
    }
    assert_eq!(curves, 8);
    let overlay = parse_plot_data(&std::fs::read_to_string(tmp.path().join("ablation/curves.csv")).unwrap()).unwrap();
    assert_eq!(overlay.len(), 16);
}

#[test]
fn half_pretrain_sequence_evaluates_pretrain_group() {
    let mut config = benchmark(1, 3);
    config.protocol.split = csd_core::harness::SplitKind::HalfPretrain;
    config.protocol.tasks = 2;
    config.train.classes_per_batch = 2;
    let record = run_experiment(&config, false).unwrap();
    assert_eq!(record.checkpoints(), ["after pretrain", "after task1", "after task2"]);
    let report = &record.seeds[0].report;
    assert_eq!(report.groups.iter().map(|g| g.classes).collect::<Vec<_>>(), [4, 2, 2]);
}
