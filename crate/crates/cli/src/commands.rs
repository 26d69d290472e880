use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use emlabel_core::datastore::{
    dedup_catalog, export_rows, write_export, Catalog, EmbeddingSlices, IngestOptions, Materials, Project,
};
use emlabel_core::embedder::{train_on_catalog, Activation, AutoencoderConfig, AutoencoderModel, FeatureLayout};
use emlabel_core::imputer::{run_em, ImputeConfig, ImputeContext};
use emlabel_core::sim::{
    generate_catalog, run_protocol, sample_category_taxonomy, sample_material_taxonomy, summary_table, LearningCurve,
    ProtocolConfig, Strategy, SyntheticSpec,
};
use emlabel_core::taxonomy::{match_material_string, Taxonomy};
use emlabel_core::Error;
use emlabel_server::{AppState, ServerConfig};

use crate::{
    evaluate, ActivationArg, CatalogArgs, Cli, Command, DedupArgs, EmbedApplyArgs, EmbedCommand, EmbedTrainArgs,
    EvaluateArgs, ExportArgs, Failure, ImputeArgs, IngestArgs, ServeArgs, SimulateArgs, StrategyArg, TaxonomyCheckArgs,
    TaxonomyField,
};

type Outcome = Result<(), Failure>;

pub fn run(cli: Cli) -> Outcome {
    let seed = cli.seed;
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Dedup(a) => dedup(a),
        Command::Embed(EmbedCommand::Train(a)) => embed_train(a, seed),
        Command::Embed(EmbedCommand::Apply(a)) => embed_apply(a),
        Command::Impute(a) => impute(a, seed),
        Command::Serve(a) => serve(a, &cli.state_dir, seed),
        Command::Simulate(a) => simulate(a, seed),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Export(a) => export(a, &cli.state_dir),
        Command::TaxonomyCheck(a) => taxonomy_check(a),
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn load_taxonomy(path: &Path) -> Result<Taxonomy, Failure> {
    Taxonomy::load(path).map_err(|e| io_failure(path, e))
}

fn optional_taxonomy(path: Option<&Path>) -> Result<Option<Taxonomy>, Failure> {
    path.map(load_taxonomy).transpose()
}

fn slices(args: &CatalogArgs) -> Option<EmbeddingSlices> {
    let whole = 0..args.dim as usize;
    match (&args.text_slice, &args.image_slice) {
        (None, None) => None,
        (t, i) => Some(EmbeddingSlices {
            text: t.clone().unwrap_or(whole.clone()),
            image: i.clone().unwrap_or(whole),
        }),
    }
}

/// Ingests the catalog, reporting rejected lines on stderr.
fn load_catalog(args: &CatalogArgs, categories: Option<&Taxonomy>) -> Result<Catalog, Failure> {
    let opts = IngestOptions {
        expected_dim: args.dim as usize,
        slices: slices(args),
        category_taxonomy: categories,
    };
    let report = Catalog::ingest(&args.catalog, &opts).map_err(|e| io_failure(&args.catalog, e))?;
    for r in &report.rejected {
        eprintln!("{} line {}: rejected: {}", args.catalog.display(), r.line, r.reason);
    }
    if report.catalog.is_empty() {
        return Err(Failure::Data(format!("{}: no valid objects", args.catalog.display())));
    }
    Ok(report.catalog)
}

fn write_catalog(catalog: &Catalog, path: &Path) -> Outcome {
    catalog.write_jsonl(path).map_err(|e| io_failure(path, e))
}

/// Pretty JSON with a trailing newline; byte-stable for equal values.
fn write_json<T: Serialize>(value: &T, path: &Path) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn ingest(a: IngestArgs) -> Outcome {
    let categories = optional_taxonomy(a.categories.as_deref())?;
    let opts = IngestOptions {
        expected_dim: a.catalog.dim as usize,
        slices: slices(&a.catalog),
        category_taxonomy: categories.as_ref(),
    };
    let path = &a.catalog.catalog;
    let report = Catalog::ingest(path, &opts).map_err(|e| io_failure(path, e))?;
    for r in &report.rejected {
        eprintln!("{} line {}: rejected: {}", path.display(), r.line, r.reason);
    }
    println!(
        "ingested {} objects ({} lines rejected)",
        report.catalog.len(),
        report.rejected.len()
    );
    if let Some(out) = &a.out {
        write_catalog(&report.catalog, out)?;
    }
    Ok(())
}

fn dedup(a: DedupArgs) -> Outcome {
    if !(a.image_eps > 0.0) || !(a.text_eps > 0.0) {
        return Err(Failure::Usage("--image-eps and --text-eps must be positive".into()));
    }
    let catalog = load_catalog(&a.catalog, None)?;
    let kept = dedup_catalog(&catalog, a.image_eps, a.text_eps)?;
    println!("kept {} of {} objects", kept.len(), catalog.len());
    write_catalog(&kept, &a.out)
}

fn embed_train(a: EmbedTrainArgs, seed: u64) -> Outcome {
    if a.bottleneck == 0 || a.batch_size == 0 || a.epochs == 0 {
        return Err(Failure::Usage("--bottleneck, --batch-size and --epochs must be positive".into()));
    }
    if !(a.lr_start > 0.0) || !(a.lr_end > 0.0) {
        return Err(Failure::Usage("learning rates must be positive".into()));
    }
    let materials = optional_taxonomy(a.materials.as_deref())?;
    let categories = optional_taxonomy(a.categories.as_deref())?;
    let catalog = load_catalog(&a.catalog, categories.as_ref())?;
    let layout = FeatureLayout::for_catalog(&catalog, materials.as_ref(), categories.as_ref())?;
    let config = AutoencoderConfig {
        batch_size: a.batch_size,
        epochs: a.epochs,
        lr_start: a.lr_start,
        lr_end: a.lr_end,
        activation: match a.activation {
            ActivationArg::Linear => Activation::Linear,
            ActivationArg::Tanh => Activation::SmoothSaturating,
        },
        seed,
    };
    let model = train_on_catalog(&catalog, layout, a.bottleneck, &config).map_err(|e| match e {
        Error::FailedPrecondition(block) => Failure::Data(format!(
            "some objects have no {block} value; run impute first to fill missing attributes"
        )),
        other => other.into(),
    })?;
    model.save(&a.model).map_err(|e| io_failure(&a.model, e))?;
    println!(
        "trained {}-dimensional embedding on {} objects: final loss {:.6}, rms {:.6}",
        model.bottleneck_dim(),
        catalog.len(),
        model.final_loss,
        model.rms()
    );
    Ok(())
}

fn embed_apply(a: EmbedApplyArgs) -> Outcome {
    let model = AutoencoderModel::load(&a.model).map_err(|e| io_failure(&a.model, e))?;
    let catalog = load_catalog(&a.catalog, None)?;
    let k = model.bottleneck_dim();
    let mut records = catalog.into_records();
    for r in &mut records {
        r.embedding = model.encode(r)?;
    }
    let out = Catalog::from_records(records, k)?;
    println!("encoded {} objects to {k} dimensions", out.len());
    write_catalog(&out, &a.out)
}

fn impute(a: ImputeArgs, seed: u64) -> Outcome {
    if !(0.0..1.0).contains(&a.validation_fraction) {
        return Err(Failure::Usage("--validation-fraction must be in [0, 1)".into()));
    }
    let materials = match optional_taxonomy(a.materials.as_deref())? {
        None if a.sample_taxonomies => Some(sample_material_taxonomy()),
        t => t,
    };
    let categories = match optional_taxonomy(a.categories.as_deref())? {
        None if a.sample_taxonomies => Some(sample_category_taxonomy()),
        t => t,
    };
    let catalog = load_catalog(&a.catalog, categories.as_ref())?;
    let ctx = ImputeContext {
        materials: materials.as_ref(),
        categories: categories.as_ref(),
    };
    let config = ImputeConfig {
        validation_fraction: a.validation_fraction,
        seed,
        ..ImputeConfig::default()
    };
    let em = run_em(&catalog, &ctx, a.generations, &config)?;
    let report = &em.report;
    println!("validation rows: {}", report.validation_rows);
    let gens: Vec<String> = (1..=report.generations).map(|g| format!("{:>10}", format!("gen {g}"))).collect();
    println!("{:<10}  {:>6}  {}", "head", "weight", gens.join("  "));
    for h in &report.heads {
        let cells: Vec<String> = h
            .validation_loss
            .iter()
            .map(|l| l.map_or_else(|| format!("{:>10}", "skipped"), |v| format!("{v:>10.5}")))
            .collect();
        println!("{:<10}  {:>6.2}  {}", h.target.name(), h.loss_weight, cells.join("  "));
    }
    let totals: Vec<String> = report.weighted_total.iter().map(|v| format!("{v:>10.5}")).collect();
    println!("{:<10}  {:>6}  {}", "weighted", "", totals.join("  "));
    write_catalog(&em.catalog, &a.out)?;
    if let Some(path) = &a.metrics {
        write_json(report, path)?;
    }
    Ok(())
}

fn serve(a: ServeArgs, state_dir: &Path, seed: u64) -> Outcome {
    let catalog = load_catalog(&a.catalog, None)?;
    let config = ServerConfig {
        state_dir: state_dir.to_path_buf(),
        lease_ttl: Duration::from_secs(a.lease_ttl_secs),
        pool_size: a.pool_size,
        default_seed: seed,
        ..ServerConfig::default()
    };
    let state = AppState::new(Arc::new(catalog), config).map_err(|e| io_failure(state_dir, e))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::Data(e.to_string()))?;
    runtime.block_on(async {
        let listener = emlabel_server::bind(&a.bind).await.map_err(Failure::Data)?;
        let addr = listener.local_addr().map_err(|e| Failure::Data(e.to_string()))?;
        println!("serving {} objects on http://{addr}", state.catalog().len());
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        emlabel_server::serve(listener, state, shutdown)
            .await
            .map_err(|e| Failure::Data(format!("server failed: {e}")))
    })
}

#[derive(Serialize)]
struct SimulationReport<'a> {
    spec: &'a SyntheticSpec,
    protocol: &'a ProtocolConfig,
    realized_prevalence: f64,
    curves: &'a [LearningCurve],
}

fn simulate(a: SimulateArgs, seed: u64) -> Outcome {
    let spec = SyntheticSpec {
        n_objects: a.n_objects,
        embedding_dim: a.dim,
        prevalence: a.prevalence,
        label_noise: a.label_noise,
        test_size: a.test_size,
        seed,
        ..SyntheticSpec::default()
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let world = generate_catalog(&spec)?;
    let protocol = ProtocolConfig::default();
    let strategies: &[Strategy] = match a.strategy {
        StrategyArg::Smart => &[Strategy::Smart],
        StrategyArg::Random => &[Strategy::Random],
        StrategyArg::Both => &[Strategy::Smart, Strategy::Random],
    };
    let curves = strategies
        .iter()
        .map(|&s| run_protocol(&world, a.budget, s, &protocol))
        .collect::<emlabel_core::Result<Vec<_>>>()?;
    print!("{}", summary_table(&curves));
    if let Some(path) = &a.metrics {
        write_json(
            &SimulationReport {
                spec: &spec,
                protocol: &protocol,
                realized_prevalence: world.realized_prevalence(),
                curves: &curves,
            },
            path,
        )?;
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Outcome {
    let report = evaluate::run(&a.pred, &a.truth, a.metric, a.threshold)?;
    print!("{}", report.to_text());
    if let Some(path) = &a.report {
        write_json(&report, path)?;
    }
    Ok(())
}

fn export(a: ExportArgs, state_dir: &Path) -> Outcome {
    let project = Project::open(state_dir, &a.project)?;
    let catalog = load_catalog(&a.catalog, None)?;
    let rows = export_rows(&project, &catalog)?;
    match &a.out {
        Some(path) => {
            let file = File::create(path).map_err(|e| io_failure(path, e))?;
            write_export(&rows, BufWriter::new(file)).map_err(|e| io_failure(path, e))?;
            println!("exported {} rows", rows.len());
        }
        None => write_export(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn taxonomy_check(a: TaxonomyCheckArgs) -> Outcome {
    let tax = load_taxonomy(&a.taxonomy)?;
    let leaves = (0..tax.len()).filter(|&i| tax.is_leaf(i)).count();
    println!(
        "taxonomy ok: {} nodes, {} leaves, depth {}, root {:?}",
        tax.len(),
        leaves,
        tax.depth(),
        tax.id(tax.root())
    );
    let (Some(path), Some(dim)) = (&a.catalog, a.dim) else {
        return Ok(());
    };
    let args = CatalogArgs {
        catalog: path.clone(),
        dim,
        text_slice: None,
        image_slice: None,
    };
    let catalog = load_catalog(&args, None)?;
    let mut checked = 0usize;
    let mut problems = 0usize;
    let mut out = io::stdout().lock();
    for r in catalog.records() {
        let issue = match a.field {
            TaxonomyField::Categories => r.category_path.as_ref().and_then(|p| {
                checked += 1;
                tax.validate_path(p).err().map(|e| e.to_string())
            }),
            TaxonomyField::Materials => r.materials.as_ref().and_then(|m| {
                checked += 1;
                match m {
                    Materials::Names(names) => {
                        let unmatched: Vec<String> = names
                            .iter()
                            .flat_map(|n| match_material_string(n, &tax).unmatched)
                            .collect();
                        (!unmatched.is_empty()).then(|| format!("unmatched material tokens {unmatched:?}"))
                    }
                    Materials::Probabilities(map) => {
                        let unknown: Vec<&String> = map.keys().filter(|k| tax.index_of(k).is_none()).collect();
                        (!unknown.is_empty()).then(|| format!("unknown material nodes {unknown:?}"))
                    }
                }
            }),
        };
        if let Some(msg) = issue {
            problems += 1;
            let _ = writeln!(out, "{}: {msg}", r.id);
        }
    }
    let _ = writeln!(out, "checked {checked} objects, {problems} with problems");
    if a.strict && problems > 0 {
        return Err(Failure::Data(format!("{problems} objects do not fit the taxonomy")));
    }
    Ok(())
}
