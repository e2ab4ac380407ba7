mod args;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use args::{Cli, Command, EvaluateArgs, ExtractArgs, ForestArgs, PcaArgs, SynthArgs, TrainArgs, TransferArgs};
use tmascore::dataset::{extract_manifest, FeatureTable};
use tmascore::evaluation::{accuracy, pca_project, separation_ratio};
use tmascore::forest::{train_forest, ForestParams};
use tmascore::synthgen::{self, SynthSpec};
use tmascore::texture::FeatureOptions;
use tmascore::transfer::{run_experiment, run_fixed_split, AuxSet, ScoreReport, SplitOptions, TransferConfig};
use tmascore::{load_manifest, Error, LabeledInstance, Result};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train(a),
        Command::TransferScore(a) => transfer_score(a),
        Command::Evaluate(a) => evaluate(a),
        Command::PcaExport(a) => pca_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::benchmark(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let manifests = synthgen::generate(&spec, &a.out)?;
    for (name, path) in manifests {
        log::info!("{name}: {}", path.display());
    }
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let opts = a.features.options();
    let manifest = load_manifest(&a.manifest)?;
    let table = extract_manifest(&manifest, &opts)?;
    log::info!("{} images, {} features each", table.instances.len(), table.dimension());
    table.save(&a.out)
}

fn forest_params(f: &ForestArgs) -> ForestParams {
    ForestParams {
        trees: f.trees,
        mtry: f.mtry,
        seed: f.seed,
        min_node_size: f.min_node_size,
        bootstrap: true,
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let table = FeatureTable::load(&a.features)?;
    let forest = train_forest(&table.instances, &forest_params(&a.forest))?;
    if forest.is_degenerate() {
        log::warn!("training data holds a single label; every tree is one leaf");
    }
    write(&a.out, forest.save_model()?)?;
    if let Some(test) = &a.test_features {
        let test = FeatureTable::load(test)?;
        let predicted = forest.predict_labels(&test.instances)?;
        let given: Vec<_> = test.instances.iter().map(|x| x.label).collect();
        println!("accuracy {:.4}", accuracy(&predicted, &given)?);
    }
    Ok(())
}

/// Reads a feature table, or extracts features when given an image manifest.
fn load_instances(path: &Path, opts: &FeatureOptions) -> Result<Vec<LabeledInstance>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let header = text.lines().find(|l| !l.trim_start().starts_with('#')).unwrap_or("");
    if header.trim_end().starts_with("path,label,source,f0") {
        let table = FeatureTable::load(path)?;
        if table.dimension() != opts.dimension() {
            log::warn!(
                "{}: {} features per row; feature flags are ignored for feature tables",
                path.display(),
                table.dimension()
            );
        }
        Ok(table.instances)
    } else {
        Ok(extract_manifest(&load_manifest(path)?, opts)?.instances)
    }
}

#[derive(Serialize)]
struct TransferEcho<'a> {
    train: &'a Path,
    test: Option<&'a Path>,
    aux: Vec<(&'a str, &'a Path)>,
    split: Option<SplitOptions>,
    runs: usize,
    features: FeatureOptions,
    transfer: &'a TransferConfig,
}

#[derive(Serialize)]
struct TransferOutput<'a> {
    config: TransferEcho<'a>,
    report: &'a ScoreReport,
}

fn transfer_score(a: TransferArgs) -> Result<()> {
    let opts = a.features.options();
    let primary = load_instances(&a.train_manifest, &opts)?;
    let aux = a
        .aux
        .iter()
        .map(|(name, path)| Ok(AuxSet::new(name, load_instances(path, &opts)?)))
        .collect::<Result<Vec<_>>>()?;
    let config = TransferConfig {
        beta: a.beta,
        forest: forest_params(&a.forest),
        per_source: !a.no_per_source,
        pooled_baseline: a.pooled_baseline,
    };
    let split = SplitOptions {
        train_fraction: a.split,
        stratified: a.stratified,
    };
    let report = match &a.test_manifest {
        Some(test) => {
            let test = load_instances(test, &opts)?;
            run_fixed_split(&primary, &aux, &test, &config, a.runs)?
        }
        None => run_experiment(&primary, &aux, &config, &split, a.runs)?,
    };
    log::info!(
        "accuracy without transfer {:.4}, with transfer {:.4}, {:.1} transferred on average",
        report.accuracy_without_transfer.mean,
        report.accuracy_with_transfer.mean,
        report.mean_transferred
    );
    let output = TransferOutput {
        config: TransferEcho {
            train: &a.train_manifest,
            test: a.test_manifest.as_deref(),
            aux: a.aux.iter().map(|(n, p)| (n.as_str(), p.as_path())).collect(),
            split: a.test_manifest.is_none().then_some(split),
            runs: a.runs,
            features: opts,
            transfer: &config,
        },
        report: &report,
    };
    write_json(&a.out, &output)
}

fn load_tables(paths: &[PathBuf]) -> Result<Vec<LabeledInstance>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(FeatureTable::load(p)?.instances);
    }
    Ok(all)
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let data = load_tables(&a.features)?;
    let breakdown = separation_ratio(&data)?;
    if !breakdown.is_finite() {
        log::warn!("coincident classes: {:?}", breakdown.infinite_pairs);
    }
    write_json(&a.out, &breakdown)
}

#[derive(Serialize)]
struct PcaSidecar {
    explained_variance: [f64; 2],
    rank_deficient: bool,
    instances: usize,
}

fn pca_export(a: PcaArgs) -> Result<()> {
    let data = load_tables(&a.features)?;
    let proj = pca_project(&data)?;
    let mut csv = String::from("path,label,source,pc1,pc2\n");
    for p in &proj.points {
        csv.push_str(&format!("{},{},{},{},{}\n", quote(&p.id), p.label, quote(&p.source), p.pc1, p.pc2));
    }
    write(&a.out, csv)?;
    write_json(
        &a.out.with_extension("json"),
        &PcaSidecar {
            explained_variance: proj.explained_variance,
            rank_deficient: proj.rank_deficient,
            instances: proj.points.len(),
        },
    )
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
