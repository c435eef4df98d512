use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use good_core::annotator::{AnnotationCache, AnnotationSet};
use good_core::bundle::{read_splits, write_bundle, write_splits};
use good_core::gcn::{forward, read_checkpoint, write_checkpoint, GcnActivations, GcnModel, TrainConfig};
use good_core::graph::{make_splits_with, ClassSpace, SplitAssignment};
use good_core::metrics::{aggregate, evaluate, EvalReport};
use good_core::ood::{argmax, score};
use good_core::pipeline::*;
use good_core::select::{merge_labels, BudgetLedger, CandidateIdSet, OracleLabels, SelectionRecord, SelectionResult};
use good_core::synth::{sbm_graph, SbmSpec};

#[derive(Parser)]
#[command(name = "llm-good", version, about = "Few-shot OOD detection on text-attributed graphs")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run only this seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the six-block SBM fixture as a dataset bundle.
    MakeSynthetic {
        #[arg(long, default_value_t = 0)]
        graph_seed: u64,
    },
    /// Draw validation/test/candidate splits and open a budget ledger.
    PrepareSplits,
    /// Annotate candidates with the configured annotator.
    Annotate,
    /// Train the K+1 filter and keep the candidates it calls ID.
    TrainFilter,
    /// Pick the human-labeling batch from the kept candidates.
    Select,
    /// Reveal ground truth for the selected batch.
    OracleLabel,
    /// Train the K-way classifier on the revealed (and merged) labels.
    TrainClassifier,
    /// Score every node with the configured detector.
    Score,
    /// Compute test metrics from the scores.
    Evaluate,
    /// Run every stage for every seed and write the reports.
    Run,
    /// Train on growing numbers of noisy and clean ID labels.
    StudyUpperBound(StudyArgs),
    /// Print a comparison table over several `report.json` files.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct StudyArgs {
    /// Label counts, as integers or multiples of K such as `20K`.
    #[arg(long, value_delimiter = ',', default_value = "0,2K,5K,10K,20K")]
    counts: Vec<Budget>,
}

struct Ctx {
    cfg: ExperimentConfig,
    data: Dataset,
    out_dir: PathBuf,
    seeds: Vec<u64>,
}

impl Ctx {
    fn load(cli: &Cli) -> Result<Self> {
        let path = cli.config.as_ref().context("--config is required for this command")?;
        let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
        if let Some(seed) = cli.seed {
            cfg.seeds = vec![seed];
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let data = Dataset::load(&cfg, base)?;
        info!(
            "dataset {}: {} nodes, K = {}",
            data.name,
            data.graph.num_nodes(),
            data.classes.k()
        );
        Ok(Self {
            seeds: cfg.seeds.clone(),
            cfg,
            data,
            out_dir: cli.out_dir.clone(),
        })
    }

    fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join(format!("seed_{seed}"))
    }

    fn cache(&self) -> Result<AnnotationCache> {
        if self.cfg.annotator.kind != AnnotatorKind::Remote {
            return Ok(AnnotationCache::in_memory());
        }
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(&self.cfg.annotator.cache);
        Ok(AnnotationCache::open(&path)?)
    }

    fn splits(&self, seed: u64) -> Result<SplitAssignment> {
        let p = self.seed_dir(seed).join("splits.json");
        read_splits(&p, self.data.graph.num_nodes())
            .with_context(|| format!("{} (run prepare-splits first)", p.display()))
    }

    fn ledger(&self, seed: u64) -> Result<BudgetLedger> {
        read_json(&self.seed_dir(seed).join("ledger.json"))
    }

    fn save_ledger(&self, seed: u64, ledger: &BudgetLedger) -> Result<()> {
        if !ledger.is_consistent() {
            bail!("budget ledger inconsistent: {ledger:?}");
        }
        write_json(&self.seed_dir(seed).join("ledger.json"), ledger)
    }

    fn forward_checkpoint(&self, path: &Path) -> Result<(GcnModel, GcnActivations)> {
        let (_, model) = read_checkpoint(BufReader::new(
            File::open(path).with_context(|| path.display().to_string())?,
        ))?;
        let acts = forward(&model, &self.data.adj, self.data.graph.features(), None)?;
        Ok((model, acts))
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
    serde_json::from_str(&text).with_context(|| path.display().to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| path.display().to_string())
}

fn save_checkpoint(path: &Path, model: &GcnModel, config: &TrainConfig) -> Result<()> {
    let f = File::create(path).with_context(|| path.display().to_string())?;
    write_checkpoint(BufWriter::new(f), model, config)?;
    Ok(())
}

fn make_synthetic(out_dir: &Path, graph_seed: u64) -> Result<()> {
    let spec = SbmSpec::six_blocks(graph_seed);
    let graph = sbm_graph(&spec);
    let names = (0..spec.block_sizes.len()).map(|c| format!("class_{c}")).collect();
    let classes = ClassSpace::new(names, vec![0, 1, 2, 3])?;
    let meta = write_bundle(out_dir, "synthetic", &graph, &classes)?;
    println!("wrote {} ({} nodes) to {}", meta.dataset, meta.num_nodes, out_dir.display());
    Ok(())
}

fn prepare_splits(ctx: &Ctx) -> Result<()> {
    for &seed in &ctx.seeds {
        let splits = make_splits_with(&ctx.data.graph, &ctx.data.classes, seed, ctx.cfg.splits)?;
        let dir = ctx.seed_dir(seed);
        fs::create_dir_all(&dir)?;
        write_splits(dir.join("splits.json"), &splits)?;
        ctx.save_ledger(seed, &initial_ledger(&ctx.cfg, &ctx.data, &splits))?;
        println!(
            "seed {seed}: {} val, {} test, {} candidates",
            splits.val.len(),
            splits.test.len(),
            splits.candidate.len()
        );
    }
    Ok(())
}

fn annotate_cmd(ctx: &Ctx) -> Result<()> {
    if !uses_llm(ctx.cfg.mode) {
        bail!("mode {} does not annotate", ctx.cfg.mode);
    }
    let cache = ctx.cache()?;
    for &seed in &ctx.seeds {
        let splits = ctx.splits(seed)?;
        let mut ledger = ctx.ledger(seed)?;
        let nodes = annotation_nodes(&ctx.cfg, &splits, seed);
        let ann = annotate_nodes(&ctx.cfg, &ctx.data, &splits, &nodes, &mut ledger, &cache, seed)?;
        ann.save(ctx.seed_dir(seed).join("llm_labels.json"))?;
        ctx.save_ledger(seed, &ledger)?;
        let unknown = ann.labels().filter(|&(_, c)| c == ctx.data.classes.k()).count();
        println!("seed {seed}: annotated {} nodes, {unknown} called unknown", ann.len());
    }
    Ok(())
}

fn train_filter_cmd(ctx: &Ctx) -> Result<()> {
    for &seed in &ctx.seeds {
        let dir = ctx.seed_dir(seed);
        let splits = ctx.splits(seed)?;
        let ann = AnnotationSet::load(dir.join("llm_labels.json"))?;
        let f = filter_stage(&ctx.cfg, &ctx.data, &splits, &ann, seed)?;
        if let Some(m) = &f.model {
            let cfg = TrainConfig {
                class_weights: {
                    let mut w = vec![1.0; ctx.data.classes.k()];
                    w.push(m.unknown_weight);
                    w
                },
                ..ctx.cfg.filter.train.clone()
            };
            save_checkpoint(&dir.join("filter.ckpt"), &m.model, &cfg)?;
        }
        write_json(&dir.join("filter.json"), &f.summary)?;
        write_json(&dir.join("candidates.json"), &f.kept)?;
        println!("seed {seed}: kept {} of {} candidates", f.summary.kept, f.summary.kept + f.summary.excluded);
    }
    Ok(())
}

fn select_cmd(ctx: &Ctx) -> Result<()> {
    for &seed in &ctx.seeds {
        let dir = ctx.seed_dir(seed);
        let kept: CandidateIdSet = read_json(&dir.join("candidates.json"))?;
        let ckpt = dir.join("filter.ckpt");
        let acts = if ckpt.exists() {
            Some(ctx.forward_checkpoint(&ckpt)?.1)
        } else {
            None
        };
        let sel = select_stage(&ctx.cfg, &ctx.data, &kept, acts.as_ref(), seed)?;
        write_json(&dir.join("selection_result.json"), &sel)?;
        println!("seed {seed}: selected {} nodes ({})", sel.selected.len(), sel.strategy);
    }
    Ok(())
}

fn oracle_label_cmd(ctx: &Ctx) -> Result<()> {
    for &seed in &ctx.seeds {
        let dir = ctx.seed_dir(seed);
        let splits = ctx.splits(seed)?;
        let mut ledger = ctx.ledger(seed)?;
        let sel: SelectionResult = read_json(&dir.join("selection_result.json"))?;
        let labels = human_label(&ctx.data, &splits, &sel.selected, &mut ledger, "select")?;
        write_json(&dir.join("oracle_labels.json"), &labels)?;
        write_json(&dir.join("selection.json"), &SelectionRecord::new(&sel, &labels))?;
        ctx.save_ledger(seed, &ledger)?;
        println!(
            "seed {seed}: {} ID, {} OOD revealed",
            labels.labeled.len(),
            labels.revealed_ood.len()
        );
    }
    Ok(())
}

fn train_classifier_cmd(ctx: &Ctx) -> Result<()> {
    for &seed in &ctx.seeds {
        let dir = ctx.seed_dir(seed);
        let splits = ctx.splits(seed)?;
        let labels: OracleLabels = read_json(&dir.join("oracle_labels.json"))?;
        let llm_path = dir.join("llm_labels.json");
        let llm = if llm_path.exists() {
            Some(AnnotationSet::load(&llm_path)?)
        } else {
            None
        };
        let merged = merge_labels(&labels, llm.as_ref(), merge_mode(ctx.cfg.mode));
        let ccfg = classifier_config(&ctx.cfg, seed);
        let trained = train_classifier(&ctx.data, &splits, &merged.set, &ccfg)?;
        save_checkpoint(&dir.join("classifier.ckpt"), &trained.model, &ccfg)?;
        write_json(&dir.join("training.json"), &training_summary(&merged, &trained))?;
        println!(
            "seed {seed}: trained on {} labels, kept epoch {:?}",
            merged.set.len(),
            trained.log.selected_epoch
        );
    }
    Ok(())
}

fn score_cmd(ctx: &Ctx) -> Result<()> {
    let detector = effective_detector(&ctx.cfg);
    for &seed in &ctx.seeds {
        let dir = ctx.seed_dir(seed);
        let (_, acts) = ctx.forward_checkpoint(&dir.join("classifier.ckpt"))?;
        let scores = score(detector, &acts.logits, &ctx.data.adj, ctx.cfg.propagation);
        let preds: Vec<usize> = acts.logits.rows().into_iter().map(argmax).collect();
        write_scores(&dir.join("scores.tsv"), &scores, &preds)?;
        println!("seed {seed}: scored {} nodes with {}", preds.len(), detector.as_str());
    }
    Ok(())
}

fn evaluate_cmd(ctx: &Ctx) -> Result<()> {
    let truth = ctx.data.open_labels();
    let k = ctx.data.classes.k();
    let mut reports: Vec<EvalReport> = Vec::new();
    for &seed in &ctx.seeds {
        let dir = ctx.seed_dir(seed);
        let splits = ctx.splits(seed)?;
        let (scores, preds) = read_scores(&dir.join("scores.tsv"))?;
        if preds.len() != truth.len() {
            bail!("{}: {} rows for {} nodes", dir.display(), preds.len(), truth.len());
        }
        let labels: Option<OracleLabels> = read_json(&dir.join("oracle_labels.json")).ok();
        let id_test: Vec<usize> = splits.test.iter().copied().filter(|&v| truth[v] < k).collect();
        let test_scores: Vec<f64> = splits.test.iter().map(|&v| scores.scores[v]).collect();
        let is_ood: Vec<bool> = splits.test.iter().map(|&v| truth[v] == k).collect();
        let echo = json!({ "mode": ctx.cfg.mode.as_str(), "detector": scores.detector.as_str() });
        let report = evaluate(
            seed,
            &preds,
            &truth,
            &id_test,
            &test_scores,
            &is_ood,
            labels.and_then(|l| l.id_proportion),
            echo,
        )?;
        write_json(&dir.join("eval.json"), &report)?;
        println!(
            "seed {seed}: ID ACC {:.4}  AUROC {:.4}  AUPR {:.4}  FPR@95 {:.4}",
            report.id_acc, report.auroc, report.aupr, report.fpr_at_95
        );
        reports.push(report);
    }
    if reports.len() > 1 {
        let a = aggregate(&reports)?;
        println!(
            "mean: ID ACC {}  AUROC {}  AUPR {}  FPR@95 {}",
            a.id_acc.percent(),
            a.auroc.percent(),
            a.aupr.percent(),
            a.fpr_at_95.percent()
        );
    }
    Ok(())
}

fn run_cmd(ctx: &Ctx) -> Result<bool> {
    let cache = ctx.cache()?;
    let result = run_pipeline(&ctx.cfg, &ctx.data, &cache);
    let report = write_outputs(&result, &ctx.data, &ctx.out_dir)?;
    print!("{}", render_markdown(&report));
    println!("wrote {}", ctx.out_dir.join("report.json").display());
    Ok(result.failures.is_empty())
}

fn study_cmd(ctx: &Ctx, args: &StudyArgs) -> Result<()> {
    let k = ctx.data.classes.k();
    let counts: Vec<usize> = args.counts.iter().map(|b| b.resolve(k)).collect();
    let cache = ctx.cache()?;
    let study = run_upper_bound_study(&ctx.cfg, &ctx.data, &counts, &cache)?;
    write_study(&study, &ctx.out_dir)?;
    print!("{}", study.to_tsv());
    Ok(())
}

fn report_cmd(out_dir: &Path, paths: &[PathBuf]) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| ReportFile::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let table = comparison_table(&reports);
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("comparison.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::MakeSynthetic { graph_seed } => make_synthetic(&cli.out_dir, *graph_seed)?,
        Command::Report { reports } => report_cmd(&cli.out_dir, reports)?,
        cmd => {
            let ctx = Ctx::load(cli)?;
            match cmd {
                Command::PrepareSplits => prepare_splits(&ctx)?,
                Command::Annotate => annotate_cmd(&ctx)?,
                Command::TrainFilter => train_filter_cmd(&ctx)?,
                Command::Select => select_cmd(&ctx)?,
                Command::OracleLabel => oracle_label_cmd(&ctx)?,
                Command::TrainClassifier => train_classifier_cmd(&ctx)?,
                Command::Score => score_cmd(&ctx)?,
                Command::Evaluate => evaluate_cmd(&ctx)?,
                Command::Run => return run_cmd(&ctx),
                Command::StudyUpperBound(args) => study_cmd(&ctx, args)?,
                Command::MakeSynthetic { .. } | Command::Report { .. } => unreachable!(),
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
