use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use flowplan_core::geodata::{
    build_graph, load_flows, load_tracts, split_flows, DistanceSource, DistanceTable, FeatureSchema, FlowTable,
    LoadedFlows, Split, TractGraph,
};
use flowplan_core::gbrt::FitLog;
use flowplan_core::metrics::EvalReport;
use flowplan_core::model::{fit_model, TrainedModel};
use flowplan_core::scenario::{
    diff_csv, histogram_csv, outcome, predict_scenario, Edit, EditOp, Scenario, ScenarioOptions, ScenarioOutcome,
};
use flowplan_core::synth::{benchmark_model_config, gravity_world, GravityConfig, BIKE_LANE};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::manifest::{ManifestBuilder, RunManifest};
use crate::{EvalArgs, IngestArgs, InputArgs, ScenarioArgs, ServeArgs, SynthArgs, TrainArgs, UsageError};

pub const CHECKPOINT_FILE: &str = "model.json";
pub const SPLIT_FLOWS_FILE: &str = "flows_split.csv";

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

struct Inputs {
    schema: FeatureSchema,
    graph: TractGraph,
    flows: FlowTable,
    dropped_self_pairs: usize,
}

fn load_inputs(args: &InputArgs, config: &RunConfig, split_seed: u64, manifest: &mut ManifestBuilder) -> anyhow::Result<Inputs> {
    let schema = FeatureSchema::load(&args.schema).with_context(|| format!("schema {}", args.schema.display()))?;
    let tracts = load_tracts(&args.tracts, &schema).with_context(|| format!("tracts {}", args.tracts.display()))?;
    let distance = match &args.distances {
        Some(p) => DistanceSource::Table {
            table: DistanceTable::load(p).with_context(|| format!("distances {}", p.display()))?,
        },
        None => DistanceSource::GreatCircle,
    };
    let graph = build_graph(tracts, config.adjacency, distance).context("building the adjacency network")?;
    let (loaded, dropped_self_pairs) =
        load_flows(&args.flows).with_context(|| format!("flows {}", args.flows.display()))?;
    let flows = match loaded {
        LoadedFlows::Split(table) => table,
        LoadedFlows::Raw(raw) => split_flows(raw, config.ratios, split_seed).context("splitting flows")?,
    };
    flows.resolve(&graph).with_context(|| format!("flows {}", args.flows.display()))?;

    manifest.input(&args.schema)?;
    manifest.input(&args.tracts)?;
    manifest.input(&args.flows)?;
    if let Some(p) = &args.distances {
        manifest.input(p)?;
    }
    if let Some(p) = &args.config {
        manifest.input(p)?;
    }
    Ok(Inputs {
        schema,
        graph,
        flows,
        dropped_self_pairs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub n_tracts: usize,
    pub n_edges: usize,
    pub connected: bool,
    pub n_flows: usize,
    pub total_commuters: u64,
    pub dropped_self_pairs: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Indicators with zero spread; they carry no signal.
    pub constant_indicators: Vec<String>,
}

pub fn ingest(args: &IngestArgs) -> anyhow::Result<(IngestSummary, RunManifest)> {
    let config = RunConfig::load(args.input.config.as_deref())?;
    let split_seed = args.input.split_seed.or(config.split_seed).unwrap_or(0);
    create_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("ingest", &args.out, config.hash(), Some(split_seed));
    let inputs = load_inputs(&args.input, &config, split_seed, &mut manifest)?;

    let fitted = flowplan_core::model::fit_schema(&inputs.graph, &inputs.schema);
    let summary = IngestSummary {
        n_tracts: inputs.graph.len(),
        n_edges: inputs.graph.edges.len(),
        connected: inputs.graph.is_connected(),
        n_flows: inputs.flows.len(),
        total_commuters: inputs.flows.records.iter().map(|r| r.commuters).sum(),
        dropped_self_pairs: inputs.dropped_self_pairs,
        n_train: inputs.flows.count(Split::Train),
        n_val: inputs.flows.count(Split::Val),
        n_test: inputs.flows.count(Split::Test),
        constant_indicators: fitted.constant_columns().into_iter().map(String::from).collect(),
    };
    inputs.flows.write_csv(&args.out.join(SPLIT_FLOWS_FILE))?;
    manifest.record(SPLIT_FLOWS_FILE)?;
    manifest.write("graph.json", pretty(&inputs.graph))?;
    manifest.write("ingest_summary.json", pretty(&summary))?;
    println!(
        "{} tracts, {} edges, {} flows ({} train / {} val / {} test), {} self pairs dropped",
        summary.n_tracts, summary.n_edges, summary.n_flows, summary.n_train, summary.n_val, summary.n_test,
        summary.dropped_self_pairs
    );
    Ok((summary, manifest.finish()?))
}

pub fn boost_log_csv(log: &FitLog) -> String {
    let mut out = String::from("round,train_mse,val_mse\n");
    for (k, t) in log.train_mse.iter().enumerate() {
        let v = log.val_mse.get(k).map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{k},{t},{v}");
    }
    out
}

pub fn train(args: &TrainArgs) -> anyhow::Result<(EvalReport, RunManifest)> {
    let mut config = RunConfig::load(args.input.config.as_deref())?;
    let t = &mut config.model.train;
    t.seed = args.seed;
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.lr {
        t.lr = v;
    }
    if let Some(v) = args.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = args.clip_grad_norm {
        t.clip_grad_norm = (v != 0.0).then_some(v);
    }
    if let Some(v) = args.rounds {
        config.model.boost.rounds = v;
    }
    if let Some(l) = &args.label {
        config.label = l.clone();
    }
    let split_seed = args.input.split_seed.or(config.split_seed).unwrap_or(args.seed);
    config.split_seed = Some(split_seed);
    config.model.train.validate().map_err(|e| UsageError(e.to_string()))?;
    config.model.gat.validate().map_err(|e| UsageError(e.to_string()))?;

    create_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("train", &args.out, config.hash(), Some(args.seed));
    let inputs = load_inputs(&args.input, &config, split_seed, &mut manifest)?;

    let model = fit_model(&inputs.graph, &inputs.schema, &inputs.flows, &config.model).context("training")?;
    let report = model
        .predictor()?
        .evaluate(&config.label, &inputs.flows, Split::Test, false)
        .context("evaluating the test split")?;

    manifest.write(CHECKPOINT_FILE, model.to_json())?;
    manifest.checkpoint(CHECKPOINT_FILE);
    inputs.flows.write_csv(&args.out.join(SPLIT_FLOWS_FILE))?;
    manifest.record(SPLIT_FLOWS_FILE)?;
    manifest.write("train_log.csv", model.train_log.to_csv())?;
    manifest.write("boost_log.csv", boost_log_csv(&model.boost_log))?;
    manifest.write("config.toml", config.to_toml())?;
    let table = EvalReport::to_table(std::slice::from_ref(&report));
    manifest.write("report.txt", &table)?;
    manifest.write("report.json", format!("{}\n", report.to_record()))?;
    print!("{table}");
    Ok((report, manifest.finish()?))
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<EvalReport> {
    let model = TrainedModel::load(&args.checkpoint)?;
    let (loaded, _) = load_flows(&args.flows).with_context(|| format!("flows {}", args.flows.display()))?;
    let LoadedFlows::Split(flows) = loaded else {
        bail!("{} has no split column; use the table written by ingest or train", args.flows.display());
    };
    let report = model
        .predictor()?
        .evaluate(&args.label, &flows, args.split, args.assume_zero)
        .with_context(|| format!("evaluating split {}", args.split.as_str()))?;
    print!("{}", EvalReport::to_table(std::slice::from_ref(&report)));
    if let Some(out) = &args.out {
        std::fs::write(out, format!("{}\n", report.to_record())).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(report)
}

/// Evaluates a scenario exactly as the service does.
pub fn evaluate_scenario(
    model: &TrainedModel,
    scenario: &Scenario,
    options: &ScenarioOptions,
    radius_km: Option<f64>,
) -> anyhow::Result<ScenarioOutcome> {
    let predictor = model.predictor()?;
    let diff = predict_scenario(&predictor, scenario, options)?;
    Ok(outcome(&model.graph, scenario, &diff, radius_km, options.bins)?)
}

pub fn scenario(args: &ScenarioArgs) -> anyhow::Result<(ScenarioOutcome, RunManifest)> {
    if let Some(r) = args.radius_km {
        if !(r.is_finite() && r > 0.0) {
            return Err(UsageError(format!("--radius-km must be positive, got {r}")).into());
        }
    }
    if args.bins == 0 {
        return Err(UsageError("--bins must be positive".into()).into());
    }
    let model = TrainedModel::load(&args.checkpoint)?;
    let scenario = Scenario::load(&args.scenario)?;
    let options = ScenarioOptions {
        distance_cutoff_km: args.cutoff_km,
        bins: args.bins,
    };
    let result = evaluate_scenario(&model, &scenario, &options, args.radius_km)
        .with_context(|| format!("scenario {}", args.scenario.display()))?;

    create_dir(&args.out)?;
    let hash = crate::config::RunConfig {
        scenario: options,
        ..RunConfig::default()
    }
    .hash();
    let mut manifest = ManifestBuilder::new("scenario", &args.out, hash, None);
    manifest.input(&args.checkpoint)?;
    manifest.input(&args.scenario)?;
    manifest.write("diff.csv", diff_csv(&result.diff))?;
    manifest.write("histogram.csv", histogram_csv(&result.summary.histogram))?;
    manifest.write("summary.json", pretty(&result.summary))?;
    manifest.write("outcome.json", pretty(&result))?;
    let s = &result.summary;
    println!(
        "{} [{}] {}: {} pairs, mean relative change {:.4}, std {:.4}, {} zero-baseline pairs",
        result.name, result.id, s.filter.label, s.n_pairs, s.mean, s.std, s.n_zero_baseline
    );
    Ok((result, manifest.finish()?))
}

pub fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let model = TrainedModel::load(&args.checkpoint)?;
    let options = ScenarioOptions {
        distance_cutoff_km: args.cutoff_km,
        bins: args.bins,
    };
    let state = Arc::new(flowplan_service::AppState::new(model, options)?);
    let runtime = tokio::runtime::Runtime::new().context("starting the runtime")?;
    eprintln!("serving {} on http://{}", args.checkpoint.display(), args.addr);
    runtime
        .block_on(flowplan_service::serve(state, args.addr))
        .with_context(|| format!("serving on {}", args.addr))
}

/// The four tracts closest to the world's center, each given six extra km of bike lanes.
pub fn bike_lane_scenario(world: &flowplan_core::synth::GravityWorld) -> Scenario {
    let center = world.config.center;
    let mut by_distance: Vec<(f64, &str)> = world
        .tracts
        .iter()
        .map(|t| (flowplan_core::geodata::great_circle_km(center, t.centroid), t.id.as_str()))
        .collect();
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(b.1)));
    Scenario {
        name: "central bike lanes".into(),
        note: Some("6 km of new bike lanes in each of four central tracts".into()),
        edits: by_distance[..4]
            .iter()
            .map(|(_, id)| Edit {
                tract_id: id.to_string(),
                indicator: BIKE_LANE.into(),
                op: EditOp::Add,
                value: 6.0,
            })
            .collect(),
    }
}

pub fn synth(args: &SynthArgs) -> anyhow::Result<RunManifest> {
    if args.tracts < 2 {
        return Err(UsageError("--tracts must be at least 2".into()).into());
    }
    let world = gravity_world(&GravityConfig {
        n_tracts: args.tracts,
        seed: args.world_seed,
        ..GravityConfig::default()
    });
    let config = RunConfig {
        label: "synthetic".into(),
        split_seed: Some(7),
        model: benchmark_model_config(0),
        ..RunConfig::default()
    };
    create_dir(&args.out)?;
    let mut manifest = ManifestBuilder::new("synth", &args.out, config.hash(), Some(args.world_seed));

    let names: Vec<&str> = world.schema.names().collect();
    let mut tracts = format!("id,lat,lon,{}\n", names.join(","));
    for t in &world.tracts {
        let values: Vec<String> = t.features.iter().map(f64::to_string).collect();
        let _ = writeln!(tracts, "{},{},{},{}", t.id, t.centroid.lat, t.centroid.lon, values.join(","));
    }
    let mut flows = String::from("origin_id,dest_id,commuters\n");
    for f in &world.flows {
        let _ = writeln!(flows, "{},{},{}", f.origin, f.destination, f.commuters);
    }
    #[derive(Serialize)]
    struct SchemaFile<'a> {
        indicators: &'a [flowplan_core::geodata::Indicator],
    }
    let schema = toml::to_string(&SchemaFile {
        indicators: &world.schema.indicators,
    })?;

    manifest.write("tracts.csv", tracts)?;
    manifest.write("schema.toml", schema)?;
    manifest.write("flows.csv", flows)?;
    manifest.write("config.toml", config.to_toml())?;
    manifest.write("scenario_bike_lanes.json", pretty(&bike_lane_scenario(&world)))?;
    manifest.write("scenario_empty.json", pretty(&Scenario::empty("no change")))?;
    println!("{} tracts, {} flows written to {}", world.tracts.len(), world.flows.len(), args.out.display());
    manifest.finish()
}
