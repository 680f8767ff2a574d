use feddpgan::data::{
    partition, synth_dataset, LabeledDataset, PartitionMode, PartitionPlan, MINORITY_CLASS,
    NUM_CLASSES,
};
use feddpgan::harness::{run_experiment, ExperimentConfig, Mode};
use proptest::prelude::*;

fn row_keys(ds: &LabeledDataset) -> Vec<(Vec<u64>, usize)> {
    let mut rows: Vec<_> = (0..ds.len())
        .map(|i| {
            (
                ds.samples().row(i).iter().map(|v| v.to_bits()).collect(),
                ds.labels()[i],
            )
        })
        .collect();
    rows.sort();
    rows
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn partitions_conserve_every_sample(
        n0 in 20usize..80,
        n1 in 20usize..80,
        n2 in 5usize..30,
        clients in 1usize..20,
        noniid in any::<bool>(),
        frac in 0.05f64..1.0,
        seed in any::<u64>(),
    ) {
        let ds = synth_dataset([n0, n1, n2], 6, seed).unwrap();
        let mode = if noniid { PartitionMode::Noniid } else { PartitionMode::Iid };
        let plan = PartitionPlan { mode, covid_holder_fraction: frac };
        prop_assume!(!noniid || plan.holders(clients) <= n2);
        let shards = partition(&ds, &plan, clients, seed).unwrap();
        prop_assert_eq!(shards.len(), clients);
        let union = shards.iter().fold(LabeledDataset::empty(6), |acc, s| acc.concat(&s.dataset).unwrap());
        prop_assert_eq!(row_keys(&union), row_keys(&ds));
        if noniid {
            let holders = shards.iter().filter(|s| s.dataset.class_counts()[MINORITY_CLASS] > 0).count();
            prop_assert!(holders <= plan.holders(clients));
        }
    }
}

#[test]
fn iid_shards_track_global_proportions() {
    let ds = synth_dataset([400, 250, 70], 8, 3).unwrap();
    let plan = PartitionPlan {
        mode: PartitionMode::Iid,
        covid_holder_fraction: 0.1,
    };
    let shards = partition(&ds, &plan, 10, 3).unwrap();
    let holders = shards
        .iter()
        .filter(|s| s.dataset.class_counts()[MINORITY_CLASS] > 0)
        .count();
    assert!(
        holders >= 9,
        "minority class reached only {holders} of 10 shards"
    );
}

#[test]
fn synthetic_classes_are_centrally_separable() {
    let cfg = ExperimentConfig {
        mode: Mode::Centralized,
        rounds: 20,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(
        report.train_counts.iter().sum::<usize>() + report.test_counts.iter().sum::<usize>(),
        3600
    );
    assert!(
        report.final_accuracy >= 0.90,
        "central accuracy {}",
        report.final_accuracy
    );
}

#[test]
fn dataset_csv_round_trips() {
    let ds = synth_dataset([3, 2, 1], 5, 11).unwrap();
    let back = LabeledDataset::from_csv(&ds.to_csv()).unwrap();
    assert_eq!(back.labels(), ds.labels());
    assert_eq!(back.class_counts().len(), NUM_CLASSES);
    for (a, b) in back
        .samples()
        .as_slice()
        .iter()
        .zip(ds.samples().as_slice())
    {
        assert!((a - b).abs() < 1e-12);
    }
}
