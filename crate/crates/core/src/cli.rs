//! Subcommand interface. Each stage reads and writes files under one output
//! directory:
//!
//! ```text
//! data/corpus.recs      rubric records, one JSON object per line
//! data/programs.tok     lexed programs with their compile outcome
//! tasks/*.task          task pools, one JSON task per line
//! ckpt/model.{json,bin} checkpoint manifest and tensor blob
//! reports/*             logs, evaluation tables and embeddings
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};
use crate::evalkit::{
    degrade_study, eval_meta_test, export_embeddings, supervised_baseline, EvalReport,
};
use crate::lexnorm::lex_normalize;
use crate::pipeline::{self, Error};
use crate::protolearn::{load_checkpoint, save_checkpoint, Featurizer, ProtoModel};
use crate::taskforge::{check_syntax, RubricDataset, Task};

/// Environment variable that overrides the default output directory.
pub const OUT_ENV: &str = "PROTOFEED_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "protofeed",
    version,
    about = "Few-shot rubric feedback on student programs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the run seed (the data seed for `synth-data`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; defaults to $PROTOFEED_OUT or `run`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic rubric records.
    SynthData(Common),
    /// Lex every distinct program and record its compile outcome.
    Tokenize(Common),
    /// Build rubric tasks and split them into meta-train and meta-test.
    MakeTasks(Common),
    /// Add masked-token and compile-outcome tasks to the meta-train pool.
    Augment(Common),
    /// Meta-train and write a checkpoint.
    Train(Common),
    /// Evaluate a checkpoint on the meta-test tasks.
    Eval(Common),
    /// Per-task supervised baseline on the meta-test tasks.
    Baseline(Common),
    /// Meta-test performance as the number of support shots shrinks.
    DegradeStudy(Common),
    /// Write 2-D projections of program embeddings.
    EmbedExport(Common),
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    stage: &'static str,
    written: Vec<String>,
}

#[derive(Serialize)]
struct Stamp<'a> {
    stage: &'a str,
    config_hash: String,
    seed: u64,
    data_seed: u64,
    version: &'static str,
    outputs: &'a [String],
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

impl Ctx {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn read(&self, rel: &str) -> Result<String, Error> {
        let p = self.path(rel);
        std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))
    }

    fn write(&mut self, rel: &str, text: &str) -> Result<(), Error> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        std::fs::write(&p, text).map_err(|e| io_err(&p, e))?;
        self.written.push(rel.to_string());
        Ok(())
    }

    fn stamp(&self) -> Result<(), Error> {
        let s = Stamp {
            stage: self.stage,
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
            data_seed: self.cfg.data.seed,
            version: env!("CARGO_PKG_VERSION"),
            outputs: &self.written,
        };
        let p = self.path(&format!("stamps/{}.json", self.stage));
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
        std::fs::write(
            &p,
            serde_json::to_string_pretty(&s).expect("stamp serializes"),
        )
        .map_err(|e| io_err(&p, e))
    }

    fn records(&self) -> Result<RubricDataset, Error> {
        Ok(RubricDataset::from_jsonl(&self.read("data/corpus.recs")?)?)
    }

    fn tasks(&self, rel: &str) -> Result<Vec<Task>, Error> {
        self.read(rel)?
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::Data(format!("{rel} line {}: {e}", i + 1)))
            })
            .collect()
    }

    fn write_tasks(&mut self, rel: &str, tasks: &[Task]) -> Result<(), Error> {
        let mut s = String::new();
        for t in tasks {
            s.push_str(&serde_json::to_string(t).expect("task serializes"));
            s.push('\n');
        }
        self.write(rel, &s)
    }

    /// Meta-train tasks, preferring the augmented pool when augmentation is on.
    fn train_tasks(&self) -> Result<Vec<Task>, Error> {
        if self.cfg.tasks.aug_ratio > 0.0 {
            self.tasks("tasks/train_aug.task")
        } else {
            self.tasks("tasks/train.task")
        }
    }

    /// Loads the checkpoint and refuses it when it came from another config.
    fn checkpoint(
        &self,
    ) -> Result<(ProtoModel, crate::tensor::ParamStore<f32>, Featurizer), Error> {
        let (params, manifest) = load_checkpoint(&self.path("ckpt/model"))?;
        let hash = self.cfg.hash();
        if manifest.config_hash != hash {
            return Err(Error::Config(ConfigError {
                key: "config_hash".into(),
                message: format!(
                    "checkpoint was trained with config {}, current config is {hash}",
                    manifest.config_hash
                ),
            }));
        }
        let model = ProtoModel::new(manifest.encoder.clone(), manifest.loss.clone())?;
        let featurizer = Featurizer::from_state(&manifest.featurizer)?;
        Ok((model, params, featurizer))
    }

    fn report(&mut self, name: &str, r: &EvalReport) -> Result<(), Error> {
        self.write(&format!("reports/{name}.json"), &r.to_json())?;
        self.write(&format!("reports/{name}.tsv"), &r.to_tsv())
    }
}

fn load_config(common: &Common, data_seed_override: bool) -> Result<(RunConfig, PathBuf), Error> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| {
        Error::Config(ConfigError {
            key: "--config".into(),
            message: format!("{}: {e}", common.config.display()),
        })
    })?;
    let mut cfg = RunConfig::from_toml(&text)?;
    if let Some(s) = common.seed {
        if data_seed_override {
            cfg.data.seed = s;
        } else {
            cfg.seed = s;
        }
    }
    let out = common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("run"));
    Ok((cfg, out))
}

pub fn run(cli: Cli) -> Result<(), Error> {
    let (stage, common) = match &cli.command {
        Command::SynthData(c) => ("synth-data", c),
        Command::Tokenize(c) => ("tokenize", c),
        Command::MakeTasks(c) => ("make-tasks", c),
        Command::Augment(c) => ("augment", c),
        Command::Train(c) => ("train", c),
        Command::Eval(c) => ("eval", c),
        Command::Baseline(c) => ("baseline", c),
        Command::DegradeStudy(c) => ("degrade-study", c),
        Command::EmbedExport(c) => ("embed-export", c),
    };
    let (cfg, out) = load_config(common, matches!(cli.command, Command::SynthData(_)))?;
    let mut ctx = Ctx {
        cfg,
        out,
        stage,
        written: Vec::new(),
    };
    match cli.command {
        Command::SynthData(_) => synth_data(&mut ctx)?,
        Command::Tokenize(_) => tokenize(&mut ctx)?,
        Command::MakeTasks(_) => make_tasks(&mut ctx)?,
        Command::Augment(_) => augment(&mut ctx)?,
        Command::Train(_) => train(&mut ctx)?,
        Command::Eval(_) => eval(&mut ctx)?,
        Command::Baseline(_) => baseline(&mut ctx)?,
        Command::DegradeStudy(_) => degrade(&mut ctx)?,
        Command::EmbedExport(_) => embed(&mut ctx)?,
    }
    ctx.stamp()
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn synth_data(ctx: &mut Ctx) -> Result<(), Error> {
    let data = pipeline::corpus(&ctx.cfg);
    ctx.write("data/corpus.recs", &data.to_jsonl())
}

fn tokenize(ctx: &mut Ctx) -> Result<(), Error> {
    let data = ctx.records()?;
    let mut s = String::from("id\toutcome\ttokens\n");
    for (qid, programs) in data.programs_by_question() {
        for (i, src) in programs.iter().enumerate() {
            let toks = lex_normalize(src, &ctx.cfg.lex)
                .map_err(|e| Error::Data(format!("program {qid}#{i}: {e}")))?;
            writeln!(
                s,
                "{qid}#{i}\t{}\t{}",
                check_syntax(&toks).label(),
                toks.to_marked_string()
            )
            .unwrap();
        }
    }
    ctx.write("data/programs.tok", &s)
}

fn make_tasks(ctx: &mut Ctx) -> Result<(), Error> {
    let data = ctx.records()?;
    let (tasks, report) = pipeline::rubric_tasks(&ctx.cfg, &data)?;
    let (plan, train, test) = pipeline::split(&ctx.cfg, &data, &tasks)?;
    ctx.write_tasks("tasks/train.task", &train)?;
    ctx.write_tasks("tasks/test.task", &test)?;
    ctx.write(
        "tasks/split.json",
        &serde_json::to_string_pretty(&plan).expect("plan serializes"),
    )?;
    ctx.write(
        "reports/build.json",
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )
}

fn augment(ctx: &mut Ctx) -> Result<(), Error> {
    let train = ctx.tasks("tasks/train.task")?;
    let mixed = pipeline::augment(&ctx.cfg, train)?;
    ctx.write_tasks("tasks/train_aug.task", &mixed)
}

fn train(ctx: &mut Ctx) -> Result<(), Error> {
    let tasks = ctx.train_tasks()?;
    let (featurizer, model) = pipeline::featurize(&ctx.cfg, &tasks)?;
    let init = model.init_params(ctx.cfg.seed);
    let outcome =
        crate::protolearn::train_meta(&model, &featurizer, &tasks, init, &ctx.cfg.train_config())?;
    ctx.write("reports/train_log.tsv", &outcome.log.to_tsv())?;
    let manifest = pipeline::manifest(&ctx.cfg, &model, &featurizer, outcome.steps);
    save_checkpoint(&ctx.path("ckpt/model"), &outcome.params, manifest)?;
    ctx.written.push("ckpt/model.json".into());
    ctx.written.push("ckpt/model.bin".into());
    Ok(())
}

fn eval(ctx: &mut Ctx) -> Result<(), Error> {
    let (model, params, featurizer) = ctx.checkpoint()?;
    let test = ctx.tasks("tasks/test.task")?;
    let c = &ctx.cfg;
    let r = eval_meta_test(
        &model,
        &params,
        &featurizer,
        &test,
        c.tasks.k,
        c.tasks.q,
        &c.eval.seeds,
    )?;
    ctx.report("eval", &r)
}

fn baseline(ctx: &mut Ctx) -> Result<(), Error> {
    let train = ctx.train_tasks()?;
    let test = ctx.tasks("tasks/test.task")?;
    let (featurizer, model) = pipeline::featurize(&ctx.cfg, &train)?;
    let c = &ctx.cfg;
    let r = supervised_baseline(
        model.config(),
        &featurizer,
        &test,
        c.tasks.k,
        c.tasks.q,
        &c.eval.seeds,
        &c.eval.baseline,
    )?;
    ctx.report("baseline", &r)
}

fn degrade(ctx: &mut Ctx) -> Result<(), Error> {
    let (model, params, featurizer) = ctx.checkpoint()?;
    let test = ctx.tasks("tasks/test.task")?;
    let c = &ctx.cfg;
    let reports = degrade_study(
        &model,
        &params,
        &featurizer,
        &test,
        &c.eval.degrade_shots,
        c.tasks.q,
        &c.eval.seeds,
    )?;
    let mut s = String::from("shots\tap\tap_std\tp50\tp75\tauc\n");
    for r in &reports {
        writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            r.shots, r.mean.ap, r.std.ap, r.mean.p50, r.mean.p75, r.mean.auc
        )
        .unwrap();
    }
    ctx.write("reports/degrade.tsv", &s)?;
    ctx.write(
        "reports/degrade.json",
        &serde_json::to_string_pretty(&reports).expect("reports serialize"),
    )
}

fn embed(ctx: &mut Ctx) -> Result<(), Error> {
    let (model, params, featurizer) = ctx.checkpoint()?;
    let data = ctx.records()?;
    let rel = "reports/embeddings.tsv";
    export_embeddings(&model, &params, &featurizer, &data, &ctx.path(rel))?;
    ctx.written.push(rel.into());
    Ok(())
}
