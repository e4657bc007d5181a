//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 2 3`.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use protofeed::config::RunConfig;
use protofeed::encoder::{FusionMode, Pass};
use protofeed::evalkit::{
    average_precision, degrade_study, precision_at_recall, roc_auc, score_episode,
    supervised_baseline,
};
use protofeed::pipeline;
use protofeed::protolearn::{
    compute_prototypes, load_checkpoint, proto_loss, save_checkpoint, Distance, ProtoModel,
};
use protofeed::taskforge::{check_syntax, sample_episode, OutcomeClass};
use protofeed::tensor::{gradient_check, GradCheckOptions, Graph, TensorError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const SHOTS: [usize; 4] = [10, 5, 2, 1];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn fail(e: impl std::fmt::Display) -> Verdict {
    verdict(false, format!("error: {e}"))
}

/// The synthetic setting shared by criteria 4 to 7.
fn run_config(seed: u64, fusion: FusionMode, aug_ratio: f64) -> RunConfig {
    let fusion = match fusion {
        FusionMode::None => "none",
        FusionMode::TaskToken => "task-token",
        other => panic!("unused fusion {other:?}"),
    };
    RunConfig::from_toml(&format!(
        r#"
seed = {seed}
[data]
num_questions = 16
[tasks]
k = 10
q = 10
split = "held-out-question"
aug_ratio = {aug_ratio:?}
[model]
d_model = 64
layers = 2
heads = 4
d_ff = 128
max_len = 128
side_dim = 32
dropout = 0.1
fusion = "{fusion}"
[train]
epochs = 40
[train.adam]
peak_lr = 2e-3
clip_norm = 1.0
[eval]
seeds = [0, 1, 2]
"#
    ))
    .unwrap()
}

/// One trained model and its held-out evaluation.
struct Run {
    n_tasks: usize,
    /// AP per shot count in [`SHOTS`] order.
    ap: Vec<f64>,
    baseline_ap: Option<f64>,
    elapsed: Duration,
}

fn run_once(
    seed: u64,
    fusion: FusionMode,
    aug_ratio: f64,
    with_baseline: bool,
) -> Result<Run, pipeline::Error> {
    let start = Instant::now();
    let cfg = run_config(seed, fusion, aug_ratio);
    let p = pipeline::prepare(&cfg, pipeline::corpus(&cfg))?;
    let out = pipeline::train(&cfg, &p)?;
    let reports = degrade_study(
        &p.model,
        &out.params,
        &p.featurizer,
        &p.test,
        &SHOTS,
        cfg.tasks.q,
        &cfg.eval.seeds,
    )?;
    let baseline_ap = if with_baseline {
        let b = supervised_baseline(
            p.model.config(),
            &p.featurizer,
            &p.test,
            cfg.tasks.k,
            cfg.tasks.q,
            &cfg.eval.seeds,
            &cfg.eval.baseline,
        )?;
        Some(b.mean.ap)
    } else {
        None
    };
    let run = Run {
        n_tasks: p.report.tasks_built,
        ap: reports.iter().map(|r| r.mean.ap).collect(),
        baseline_ap,
        elapsed: start.elapsed(),
    };
    eprintln!(
        "  seed {seed} fusion {fusion:?} aug {aug_ratio}: AP {:.4?} baseline {:?} in {:.0?}",
        run.ap, run.baseline_ap, run.elapsed
    );
    Ok(run)
}

/// Trained runs, computed on first use and shared between criteria.
#[derive(Default)]
struct Runs {
    cache: BTreeMap<(u8, u64), Run>,
}

impl Runs {
    fn get(&mut self, arm: u8, seed: u64) -> Result<&Run, pipeline::Error> {
        if let std::collections::btree_map::Entry::Vacant(e) = self.cache.entry((arm, seed)) {
            let run = match arm {
                0 => run_once(seed, FusionMode::None, 0.0, seed < 3)?,
                1 => run_once(seed, FusionMode::None, 0.2, false)?,
                _ => run_once(seed, FusionMode::TaskToken, 0.0, false)?,
            };
            e.insert(run);
        }
        Ok(&self.cache[&(arm, seed)])
    }

    fn ap10(&mut self, arm: u8) -> Result<Vec<f64>, pipeline::Error> {
        SEEDS.iter().map(|&s| Ok(self.get(arm, s)?.ap[0])).collect()
    }
}

const PLAIN: u8 = 0;
const AUGMENTED: u8 = 1;
const TASK_TOKEN: u8 = 2;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn gradient_fidelity() -> Verdict {
    let start = Instant::now();
    let mut cfg = RunConfig::from_toml(
        "[data]\nnum_questions = 6\nstudents_per_question = 60\n[tasks]\nk = 3\nq = 2\n\
         [model]\nd_model = 16\nlayers = 1\nheads = 2\nd_ff = 32\nmax_len = 32\nside_dim = 8\nfusion = \"task-token\"\n\
         [loss]\nlearn_tau = true\n[eval]\ndegrade_shots = [3, 1]\n",
    )
    .unwrap();
    cfg.model.dropout = 0.0;
    let p = match pipeline::prepare(&cfg, pipeline::corpus(&cfg)) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let tasks: Vec<_> = p.train.iter().chain(&p.test).collect();
    let mut worst = 0.0f64;
    for i in 0..20u64 {
        let task = tasks[i as usize % tasks.len()];
        let ep = match sample_episode(task, 3, 2, i) {
            Ok(ep) => ep,
            Err(e) => return fail(e),
        };
        let batch = match p.featurizer.episode_batch(&ep, Some(i)) {
            Ok(b) => b,
            Err(e) => return fail(e),
        };
        let params = p.model.init_params(100 + i);
        let report = gradient_check(
            &params,
            |g: &mut Graph<f64>, bp| {
                p.model
                    .episode_loss(g, bp, &batch, &mut Pass::Eval)
                    .map_err(|e| TensorError::InvalidArgument(e.to_string()))
            },
            &GradCheckOptions {
                seed: i,
                ..GradCheckOptions::default()
            },
        );
        match report {
            Ok(r) => worst = worst.max(r.max_rel_error),
            Err(e) => return fail(e),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-3 && secs < 60.0,
        format!("worst relative error {worst:.2e} over 20 episodes in {secs:.1}s"),
    )
}

fn closed_form_losses() -> Verdict {
    let kind = Distance::SquaredEuclidean;
    let equi = compute_prototypes(&[vec![-1.0, 0.5], vec![1.0, 0.5]], &[0, 1], 2).unwrap();
    let a = proto_loss(&equi, &[0.0, 3.0], 0, 1.0, kind).unwrap();
    let near = compute_prototypes(&[vec![1.0, 0.0], vec![0.0, 2f64.sqrt()]], &[0, 1], 2).unwrap();
    let b = proto_loss(&near, &[0.0, 0.0], 0, 1.0, kind).unwrap();
    let want_b = (1.0 + (-1.0f64).exp()).ln();
    let ea = (a - 2f64.ln()).abs();
    let eb = (b - want_b).abs();
    verdict(
        ea <= 1e-6 && eb <= 1e-6,
        format!("equidistant {a:.9} (err {ea:.1e}), distances 1 and 2 {b:.9} (err {eb:.1e})"),
    )
}

fn metric_oracles() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (s, l) = common::random_instance(&mut rng);
        let mut check = |got: f64, want: f64| worst = worst.max((got - want).abs());
        check(
            average_precision(&s, &l).unwrap(),
            common::ap_oracle(&s, &l),
        );
        check(roc_auc(&s, &l).unwrap(), common::auc_oracle(&s, &l));
        for r in [0.5, 0.75] {
            check(
                precision_at_recall(&s, &l, r).unwrap(),
                common::precision_at_recall_oracle(&s, &l, r),
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-9 && secs < 30.0,
        format!("max deviation {worst:.1e} on 1000 instances in {secs:.2}s"),
    )
}

fn end_to_end(runs: &mut Runs) -> Verdict {
    let mut ap = Vec::new();
    let mut base = Vec::new();
    let mut tasks = usize::MAX;
    let mut elapsed = Duration::ZERO;
    for seed in 0..3 {
        match runs.get(PLAIN, seed) {
            Ok(r) => {
                ap.push(r.ap[0]);
                base.push(r.baseline_ap.unwrap());
                tasks = tasks.min(r.n_tasks);
                elapsed += r.elapsed;
            }
            Err(e) => return fail(e),
        }
    }
    let (ap, base) = (mean(&ap), mean(&base));
    verdict(
        tasks >= 40 && ap >= 0.90 && ap > base && elapsed < Duration::from_secs(30 * 60),
        format!(
            "{tasks} tasks, meta-trained AP {ap:.4} vs supervised {base:.4}, {:.1} min",
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

fn shot_degradation(runs: &mut Runs) -> Verdict {
    let mut per_shot = vec![Vec::new(); SHOTS.len()];
    for &seed in &SEEDS {
        match runs.get(PLAIN, seed) {
            Ok(r) => {
                r.ap.iter()
                    .zip(per_shot.iter_mut())
                    .for_each(|(a, v)| v.push(*a))
            }
            Err(e) => return fail(e),
        }
    }
    let means: Vec<f64> = per_shot.iter().map(|v| mean(v)).collect();
    let monotone = means.windows(2).all(|w| w[1] <= w[0]);
    let drop = means[0] - means[SHOTS.len() - 1];
    let shown: Vec<String> = SHOTS
        .iter()
        .zip(&means)
        .map(|(k, a)| format!("{k}:{a:.4}"))
        .collect();
    verdict(
        monotone && drop >= 0.05,
        format!("AP by shots {}, drop {drop:.4}", shown.join(" ")),
    )
}

fn augmentation(runs: &mut Runs) -> Verdict {
    let (plain, aug) = match (runs.ap10(PLAIN), runs.ap10(AUGMENTED)) {
        (Ok(p), Ok(a)) => (p, a),
        (Err(e), _) | (_, Err(e)) => return fail(e),
    };
    let wins = plain.iter().zip(&aug).filter(|(p, a)| a > p).count();
    let delta = mean(&aug) - mean(&plain);
    verdict(
        delta >= -0.01 && wins >= 3,
        format!(
            "AP {:.4} -> {:.4} (delta {delta:+.4}), better on {wins}/5 seeds",
            mean(&plain),
            mean(&aug)
        ),
    )
}

fn fusion(runs: &mut Runs) -> Verdict {
    let (plain, token) = match (runs.ap10(PLAIN), runs.ap10(TASK_TOKEN)) {
        (Ok(p), Ok(t)) => (p, t),
        (Err(e), _) | (_, Err(e)) => return fail(e),
    };
    let (p, t) = (mean(&plain), mean(&token));
    verdict(
        t > p,
        format!("task token AP {t:.4} vs no side information {p:.4}"),
    )
}

fn determinism() -> Verdict {
    let cfg = RunConfig::from_toml(
        "[data]\nnum_questions = 8\nstudents_per_question = 60\n[tasks]\nk = 3\nq = 3\n\
         [model]\nd_model = 16\nlayers = 1\nheads = 2\nd_ff = 32\nmax_len = 64\nside_dim = 8\n\
         [train]\nepochs = 1\n[eval]\ndegrade_shots = [3, 1]\n",
    )
    .unwrap();
    let go = || -> Result<Verdict, Box<dyn std::error::Error>> {
        let p = pipeline::prepare(&cfg, pipeline::corpus(&cfg))?;
        let a = pipeline::train(&cfg, &p)?;
        let p2 = pipeline::prepare(&cfg, pipeline::corpus(&cfg))?;
        let b = pipeline::train(&cfg, &p2)?;
        let first = |rows: &[protofeed::protolearn::LogRow]| -> Vec<(String, u32, u64)> {
            rows.iter()
                .take(10)
                .map(|r| (r.task_id.clone(), r.loss.to_bits(), r.lr.to_bits()))
                .collect()
        };
        let logs_equal = a.log.rows.len() >= 10 && first(&a.log.rows) == first(&b.log.rows);

        let dir = tempfile::tempdir()?;
        let stem = dir.path().join("model");
        save_checkpoint(
            &stem,
            &a.params,
            pipeline::manifest(&cfg, &p.model, &p.featurizer, a.steps),
        )?;
        let (loaded, manifest) = load_checkpoint(&stem)?;
        let model = ProtoModel::new(manifest.encoder.clone(), manifest.loss.clone())?;
        let featurizer = protofeed::protolearn::Featurizer::from_state(&manifest.featurizer)?;
        let mut episodes = 0;
        let mut same = true;
        'outer: for seed in 0u64.. {
            for task in &p.test {
                if episodes == 100 {
                    break 'outer;
                }
                let ep = sample_episode(task, 3, 3, seed * 1000 + episodes)?;
                let x =
                    score_episode(&p.model, &a.params, &p.featurizer.episode_batch(&ep, None)?)?;
                let y = score_episode(&model, &loaded, &featurizer.episode_batch(&ep, None)?)?;
                let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
                same &= bits(&x) == bits(&y);
                episodes += 1;
            }
        }
        Ok(verdict(
            logs_equal && same,
            format!("first 10 log rows identical: {logs_equal}; predictions identical on {episodes} episodes: {same}"),
        ))
    };
    go().unwrap_or_else(fail)
}

fn lexer_properties() -> Verdict {
    let programs = common::property_programs();
    let checks = [
        ("re-lex", common::check_relex(&programs)),
        ("obfuscation", common::check_obfuscation(&programs)),
        ("bpe", common::check_bpe(&programs)),
    ];
    let suite = common::syntax_suite();
    let agree = suite
        .iter()
        .filter(|s| check_syntax(s) == common::oracle_class(&s.to_marked_string()))
        .count();
    let classes = OutcomeClass::ALL
        .iter()
        .filter(|c| suite.iter().any(|s| check_syntax(s) == **c))
        .count();
    let failures: Vec<String> = checks
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    verdict(
        failures.is_empty() && agree == suite.len(),
        format!(
            "{} programs, {} property failures; grammar agreement {agree}/{} across {classes} classes{}",
            programs.len(),
            failures.len(),
            suite.len(),
            if failures.is_empty() { String::new() } else { format!(" [{}]", failures.join("; ")) }
        ),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut runs = Runs::default();
    let mut failed = 0;
    for n in 1..=9 {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let (name, v) = match n {
            1 => ("gradient fidelity", gradient_fidelity()),
            2 => ("closed-form loss", closed_form_losses()),
            3 => ("metric oracles", metric_oracles()),
            4 => ("end-to-end ordering", end_to_end(&mut runs)),
            5 => ("shot degradation", shot_degradation(&mut runs)),
            6 => ("augmentation", augmentation(&mut runs)),
            7 => ("fusion", fusion(&mut runs)),
            8 => ("determinism and persistence", determinism()),
            _ => ("lexer, obfuscation, bpe, syntax", lexer_properties()),
        };
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {n} {}: {name}: {} ({:.1}s)",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
