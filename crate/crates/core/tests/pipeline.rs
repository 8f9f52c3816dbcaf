use flowplan_core::geodata::{build_graph, split_flows, AdjacencyPolicy, DistanceSource, RawFlow, Split, SplitRatios};
use flowplan_core::model::fit_schema;
use flowplan_core::synth::{benchmark_model_config, gravity_world, GravityConfig};
use flowplan_core::trainer::train;

#[test]
fn split_counts_for_reference_size() {
    let records: Vec<RawFlow> = (0..15945)
        .map(|k| RawFlow {
            origin: format!("o{:04}", k / 200),
            destination: format!("d{:04}", k % 200),
            commuters: 1 + (k % 7) as u64,
        })
        .collect();
    assert_eq!(SplitRatios::default().counts(15945), (9567, 3189, 3189));
    let table = split_flows(records.clone(), SplitRatios::default(), 11).unwrap();
    assert_eq!(table.count(Split::Train), 9567);
    assert_eq!(table.count(Split::Val), 3189);
    assert_eq!(table.count(Split::Test), 3189);
    let mut reversed = records;
    reversed.reverse();
    assert_eq!(split_flows(reversed, SplitRatios::default(), 11).unwrap(), table);
    assert_ne!(split_flows(table_records(&table), SplitRatios::default(), 12).unwrap(), table);
}

fn table_records(t: &flowplan_core::geodata::FlowTable) -> Vec<RawFlow> {
    t.records
        .iter()
        .map(|r| RawFlow {
            origin: r.origin.clone(),
            destination: r.destination.clone(),
            commuters: r.commuters,
        })
        .collect()
}

/// Validation loss of the multitask trainer drops at least tenfold from the
/// untrained epoch on the gravity world.
#[test]
fn trainer_reduces_validation_loss_tenfold() {
    let world = gravity_world(&GravityConfig::default());
    let graph = build_graph(world.tracts, AdjacencyPolicy::default(), DistanceSource::GreatCircle).unwrap();
    let schema = fit_schema(&graph, &world.schema);
    let table = split_flows(world.flows, SplitRatios::default(), 7).unwrap();
    let flows = table.resolve(&graph).unwrap();
    let config = benchmark_model_config(1);
    let a = train(&graph, &schema, &flows, config.gat, &config.train).unwrap();
    let initial = a.log.epochs[0].val_loss;
    let best = a.log.best_val_loss();
    assert!(initial / best >= 10.0, "{initial} / {best}");

    let b = train(&graph, &schema, &flows, config.gat, &config.train).unwrap();
    assert_eq!(a.log.to_csv(), b.log.to_csv());
    assert_eq!(a.store.to_segment(), b.store.to_segment());
}
