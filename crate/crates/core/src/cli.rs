//! The `hgie` command-line tool.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::checks::run_loss_checks;
use crate::corpus::{corpus_kappa, label_statistics, tokenize, Dataset};
use crate::evaluator::{evaluate_intersection, EvalMode, Granularity};
use crate::schema::{
    parse_annotations, prune_to_radgraph1, to_dot, validate_graph, write_annotations, Severity,
    Split,
};
use crate::synthetic::{generate, SyntheticConfig};
use crate::taxonomy::{shipped, TaxonomyTree};
use crate::trainer::model::{predict_dataset, train_model, Model};
use crate::trainer::TrainConfig;

pub const TOOL: &str = "hgie";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Directory searched for taxonomy configs given by bare name.
pub const TAXONOMY_DIR_ENV: &str = "HGIE_TAXONOMY_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CHECK: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "hgie",
    version,
    about = "Hierarchical entity tagging and strict evaluation for radiology report graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check an annotation file against the schema.
    Validate {
        data: PathBuf,
        /// Treat warnings as failures.
        #[arg(long)]
        strict: bool,
    },
    /// Label statistics per split and source.
    Stats {
        data: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print the tokens of a text file, one per line.
    Tokenize { textfile: PathBuf },
    /// Train a tagger and relation scorer.
    Train(TrainArgs),
    /// Annotate a dataset with a trained model.
    Predict {
        model: PathBuf,
        data: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Only predict reports of this split.
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
        /// Refuse the model unless it was trained on this taxonomy.
        #[arg(long)]
        taxonomy: Option<String>,
    },
    /// Strict entity and relation scores of predictions against gold.
    Eval {
        gold: PathBuf,
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "radgraph2")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "leaf")]
        granularity: GranularityArg,
        /// Only score gold reports of this split.
        #[arg(long, value_parser = parse_split)]
        split: Option<Split>,
        #[arg(long)]
        json: bool,
    },
    /// Token-level Cohen's kappa between two annotations of the same reports.
    Kappa { a: PathBuf, b: PathBuf },
    /// Drop labels and relations absent from RadGraph-1.
    Prune {
        data: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write one report as a Graphviz digraph.
    ExportDot {
        data: PathBuf,
        #[arg(long)]
        doc: String,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Randomized loss invariants and gradient checks on a taxonomy.
    LossCheck {
        #[arg(long)]
        taxonomy: String,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Generate the template-based synthetic corpus.
    Synth {
        #[arg(short, long)]
        output: PathBuf,
        /// Six-report fixture instead of the full corpus.
        #[arg(long)]
        small: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        train_reports: Option<usize>,
        #[arg(long)]
        test_reports: Option<usize>,
        #[arg(long)]
        rare_rate: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub data: PathBuf,
    /// Path to a taxonomy config, or the name of a shipped one.
    #[arg(long)]
    pub taxonomy: String,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Skip the conditional phase.
    #[arg(long, conflicts_with = "phase1_epochs")]
    pub flat: bool,
    #[arg(long)]
    pub phase1_epochs: Option<usize>,
    #[arg(long)]
    pub phase2_epochs: Option<usize>,
    #[arg(long)]
    pub phase1_lr: Option<f64>,
    #[arg(long)]
    pub phase2_lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub relation_epochs: Option<usize>,
    #[arg(long)]
    pub max_pair_distance: Option<usize>,
    /// Per-epoch metrics as line-delimited JSON.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Radgraph2,
    #[value(name = "radgraph1-common")]
    Radgraph1Common,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GranularityArg {
    Leaf,
    Group,
}

fn parse_split(s: &str) -> Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("unknown split {s}"))
}

/// Failure carrying its exit code and message prefix.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(msg: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: format!("usage: {msg}"),
        }
    }

    fn io(msg: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_USAGE,
            message: format!("io: {msg}"),
        }
    }

    fn validation(msg: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: format!("validation: {msg}"),
        }
    }

    fn check(msg: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CHECK,
            message: format!("check: {msg}"),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `argv` (including the program name), runs the command, and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{TOOL}: {e}");
                    EXIT_USAGE
                }
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{TOOL}: error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cmd: Command) -> CmdResult {
    match cmd {
        Command::Validate { data, strict } => cmd_validate(&data, strict),
        Command::Stats { data, json } => cmd_stats(&data, json),
        Command::Tokenize { textfile } => cmd_tokenize(&textfile),
        Command::Train(args) => cmd_train(args),
        Command::Predict {
            model,
            data,
            output,
            split,
            taxonomy,
        } => cmd_predict(&model, &data, &output, split, taxonomy.as_deref()),
        Command::Eval {
            gold,
            pred,
            mode,
            granularity,
            split,
            json,
        } => cmd_eval(&gold, &pred, mode, granularity, split, json),
        Command::Kappa { a, b } => cmd_kappa(&a, &b),
        Command::Prune { data, output } => cmd_prune(&data, &output),
        Command::ExportDot { data, doc, output } => cmd_export_dot(&data, &doc, &output),
        Command::LossCheck {
            taxonomy,
            trials,
            seed,
            json,
        } => cmd_loss_check(&taxonomy, trials, seed, json),
        Command::Synth {
            output,
            small,
            seed,
            train_reports,
            test_reports,
            rare_rate,
        } => {
            let mut cfg = if small {
                SyntheticConfig::small()
            } else {
                SyntheticConfig::default()
            };
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.train_reports = train_reports.unwrap_or(cfg.train_reports);
            cfg.test_reports = test_reports.unwrap_or(cfg.test_reports);
            cfg.rare_rate = rare_rate.unwrap_or(cfg.rare_rate);
            if !(0.0..=1.0).contains(&cfg.rare_rate) {
                return Err(Failure::usage("--rare-rate must lie in [0, 1]"));
            }
            check_output(&output)?;
            write_file(&output, &generate(&cfg).to_json())
        }
    }
}

fn header(taxonomy_hash: Option<&str>) -> Value {
    json!({ "tool": TOOL, "version": VERSION, "taxonomy_hash": taxonomy_hash })
}

fn check_input(path: &Path) -> CmdResult {
    if !path.is_file() {
        return Err(Failure::io(format!("{}: no such file", path.display())));
    }
    Ok(())
}

fn check_output(path: &Path) -> CmdResult {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Failure::io(format!(
            "{}: output directory does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Dataset, Failure> {
    check_input(path)?;
    let text = read_file(path)?;
    Dataset::from_json(&text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

/// A taxonomy given as a file path, a name under the taxonomy directory, or
/// the name of a shipped config.
pub fn resolve_taxonomy(spec: &str) -> Result<TaxonomyTree, Failure> {
    let mut candidates = vec![PathBuf::from(spec)];
    if let Some(dir) = std::env::var_os(TAXONOMY_DIR_ENV) {
        let dir = PathBuf::from(dir);
        candidates.push(dir.join(spec));
        candidates.push(dir.join(format!("{spec}.txt")));
    }
    for path in candidates {
        if path.is_file() {
            let text = read_file(&path)?;
            return TaxonomyTree::parse(&text)
                .map_err(|e| Failure::validation(format!("{}: {e}", path.display())));
        }
    }
    match shipped::load(spec) {
        Some(tree) => tree.map_err(|e| Failure::validation(format!("{spec}: {e}"))),
        None => Err(Failure::usage(format!(
            "taxonomy {spec} is neither a file nor one of {}",
            shipped::NAMES.join(", ")
        ))),
    }
}

fn cmd_validate(path: &Path, strict: bool) -> CmdResult {
    check_input(path)?;
    let text = read_file(path)?;
    let graphs = parse_annotations(&text)
        .map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    let mut errors = 0usize;
    let mut warnings = 0usize;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for g in &graphs {
        for v in validate_graph(g) {
            match v.severity() {
                Severity::Error => errors += 1,
                Severity::Warning => warnings += 1,
            }
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                g.doc_id,
                v.severity().as_str(),
                v.rule.id(),
                v.subject,
                v.message
            );
        }
    }
    let _ = writeln!(
        out,
        "{} reports, {errors} errors, {warnings} warnings",
        graphs.len()
    );
    if errors > 0 || (strict && warnings > 0) {
        return Err(Failure::validation(format!(
            "{}: {errors} errors, {warnings} warnings",
            path.display()
        )));
    }
    Ok(())
}

fn cmd_stats(path: &Path, as_json: bool) -> CmdResult {
    let ds = load(path)?;
    let stats = label_statistics(&ds);
    if as_json {
        let v = json!({ "header": header(None), "statistics": stats.to_json() });
        println!("{}", serde_json::to_string_pretty(&v).unwrap());
    } else {
        print!("{}", stats.to_table());
    }
    Ok(())
}

fn cmd_tokenize(path: &Path) -> CmdResult {
    check_input(path)?;
    let text = read_file(path)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for t in tokenize(&text) {
        let _ = writeln!(out, "{t}");
    }
    Ok(())
}

fn train_config(args: &TrainArgs) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = args.$field { cfg.$field = v; } )* };
    }
    set!(
        phase1_epochs,
        phase2_epochs,
        phase1_lr,
        phase2_lr,
        seed,
        batch_size,
        l2,
        embedding_dim,
        window,
        relation_epochs,
        max_pair_distance
    );
    if args.flat {
        cfg = cfg.flat();
    }
    cfg
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    check_input(&args.data)?;
    check_output(&args.output)?;
    if let Some(m) = &args.metrics {
        check_output(m)?;
    }
    let tree = resolve_taxonomy(&args.taxonomy)?;
    let cfg = train_config(&args);
    cfg.validate().map_err(Failure::usage)?;
    let ds = load(&args.data)?;
    let train = if ds.partitions().contains_key(&Split::Train) {
        ds.subset(&[Split::Train])
    } else {
        ds
    };
    let outcome = train_model(&train, &tree, &cfg).map_err(Failure::validation)?;
    write_file(&args.output, &outcome.model.to_json())?;
    if let Some(path) = &args.metrics {
        let mut lines = vec![json!({ "header": header(Some(tree.config_hash())) }).to_string()];
        for m in &outcome.log {
            lines.push(serde_json::to_string(m).unwrap());
        }
        write_file(path, &(lines.join("\n") + "\n"))?;
    }
    if let Some(last) = outcome.log.last() {
        eprintln!(
            "{TOOL}: trained {} epochs, final mean loss {:.4}, token accuracy {:.4}",
            outcome.log.len(),
            last.mean_loss,
            last.token_accuracy
        );
    }
    Ok(())
}

fn cmd_predict(
    model_path: &Path,
    data: &Path,
    output: &Path,
    split: Option<Split>,
    taxonomy: Option<&str>,
) -> CmdResult {
    check_input(model_path)?;
    check_input(data)?;
    check_output(output)?;
    let expected = taxonomy.map(resolve_taxonomy).transpose()?;
    let model = Model::from_json(&read_file(model_path)?, expected.as_ref())
        .map_err(|e| Failure::validation(format!("{}: {e}", model_path.display())))?;
    let mut ds = load(data)?;
    if let Some(s) = split {
        ds = ds.subset(&[s]);
    }
    let pred = predict_dataset(&model, &ds);
    write_file(output, &pred.to_json())
}

fn cmd_eval(
    gold: &Path,
    pred: &Path,
    mode: ModeArg,
    granularity: GranularityArg,
    split: Option<Split>,
    as_json: bool,
) -> CmdResult {
    check_input(gold)?;
    check_input(pred)?;
    let mut g = load(gold)?;
    let p = load(pred)?;
    if let Some(s) = split {
        g = g.subset(&[s]);
    }
    let mode = match mode {
        ModeArg::Radgraph2 => EvalMode::Radgraph2,
        ModeArg::Radgraph1Common => EvalMode::Radgraph1Common,
    };
    let granularity = match granularity {
        GranularityArg::Leaf => Granularity::Leaf,
        GranularityArg::Group => Granularity::Group,
    };
    let scores = evaluate_intersection(&g, &p, mode, granularity).map_err(Failure::validation)?;
    if as_json {
        let mut v = serde_json::to_value(&scores).unwrap();
        let obj = v.as_object_mut().unwrap();
        obj.insert("header".into(), header(None));
        obj.insert("mode".into(), json!(mode.as_str()));
        obj.insert(
            "granularity".into(),
            serde_json::to_value(granularity).unwrap(),
        );
        obj.insert(
            "macro_convention".into(),
            json!("unweighted mean over types with gold or predicted count > 0"),
        );
        println!("{}", serde_json::to_string_pretty(&v).unwrap());
    } else {
        println!("mode: {}", mode.as_str());
        print!("{}", scores.to_table());
    }
    Ok(())
}

fn cmd_kappa(a: &Path, b: &Path) -> CmdResult {
    let da = load(a)?;
    let db = load(b)?;
    let k = corpus_kappa(&da, &db).map_err(Failure::validation)?;
    println!("{k:.4}");
    Ok(())
}

fn cmd_prune(data: &Path, output: &Path) -> CmdResult {
    check_output(output)?;
    let ds = load(data)?;
    let pruned: Vec<_> = ds.reports().iter().map(prune_to_radgraph1).collect();
    write_file(output, &write_annotations(&pruned))
}

fn cmd_export_dot(data: &Path, doc: &str, output: &Path) -> CmdResult {
    check_output(output)?;
    let ds = load(data)?;
    let g = ds
        .get(doc)
        .ok_or_else(|| Failure::usage(format!("no report with id {doc} in {}", data.display())))?;
    write_file(output, &to_dot(g))
}

fn cmd_loss_check(taxonomy: &str, trials: usize, seed: u64, as_json: bool) -> CmdResult {
    if trials == 0 {
        return Err(Failure::usage("--trials must be at least 1"));
    }
    let tree = resolve_taxonomy(taxonomy)?;
    let report = run_loss_checks(&tree, trials, seed).map_err(Failure::check)?;
    if as_json {
        let v = json!({
            "header": header(Some(tree.config_hash())),
            "report": report,
            "passed": report.passed(),
        });
        println!("{}", serde_json::to_string_pretty(&v).unwrap());
    } else {
        print!("{}", report.to_text());
    }
    let failures = report.failures();
    if !failures.is_empty() {
        return Err(Failure::check(failures.join("; ")));
    }
    Ok(())
}
