//! Command-line surface: data generation, training, evaluation grids and
//! transfer tasks.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint::{load_train_state, save_train_state, LoadedCheckpoint};
use crate::config::{Config, DataSource};
use crate::dataset::{gen_synthetic, load_features, save_features, split, Dataset};
use crate::etl::{self, EtlConfig, FrozenSpeaker, ETL_CSV_HEADER};
use crate::eval::{
    eval_accuracy, first_token_analysis, masking_curve, mean_sd, render_line_plot_svg,
    render_masking_csv, EvalConfig, EvalReport, MaskSpec, ReportFormat, ReportRow,
};
use crate::training::{run_training, GameVariant, RunHooks, TrainState};
use crate::{fnv1a64, Error, Result};

const USAGE: &str = "\
emcom - emergent communication over noisy discrete channels

USAGE:
    emcom <command> [flags]

COMMANDS:
    gen-data    generate a synthetic feature file (EMCF)
    train       train a Speaker/Listener pair (LG_S, LG_RL or NLG)
    eval        accuracy grid / masking analysis over a checkpoint
    etl         train a transfer head on a frozen Speaker

Run `emcom <command> --help` for per-command flags, or
`emcom --help-config` for every config key and its default.
";

/// Entry point; returns the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    match dispatch(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(args: &[String]) -> Result<()> {
    let Some(cmd) = args.first() else {
        print!("{USAGE}");
        return Ok(());
    };
    let rest = &args[1..];
    match cmd.as_str() {
        "gen-data" => cmd_gen_data(rest),
        "train" => cmd_train(rest),
        "eval" => cmd_eval(rest),
        "etl" => cmd_etl(rest),
        "--help" | "-h" | "help" => {
            print!("{USAGE}");
            Ok(())
        }
        "--help-config" => {
            print_config_help();
            Ok(())
        }
        other => Err(Error::Config(format!(
            "unknown command {other:?}; see --help"
        ))),
    }
}

fn print_config_help() {
    let cfg = Config::desk();
    println!(
        "config keys (desk-profile defaults shown; `paper` swaps in the full-size table values):\n"
    );
    let mut section = "";
    for (s, key, value, help) in cfg.entries() {
        if s != section {
            println!("[{s}]");
            section = s;
        }
        println!("  {key:<22} = {value:<18} {help}");
    }
}

// ---- flag parsing -------------------------------------------------------------------

struct Flags {
    entries: Vec<(String, Option<String>)>,
}

impl Flags {
    fn parse(args: &[String], boolean: &[&str]) -> Result<Flags> {
        let mut entries = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let Some(name) = arg.strip_prefix("--") else {
                return Err(Error::Config(format!("unexpected argument {arg:?}")));
            };
            if boolean.contains(&name) {
                entries.push((name.to_string(), None));
                i += 1;
            } else {
                let value = args
                    .get(i + 1)
                    .ok_or_else(|| Error::Config(format!("flag --{name} expects a value")))?;
                entries.push((name.to_string(), Some(value.clone())));
                i += 2;
            }
        }
        Ok(Flags { entries })
    }

    fn has(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    fn value(&self, name: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| v.as_deref())
    }

    fn values(&self, name: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(n, _)| n == name)
            .filter_map(|(_, v)| v.as_deref())
            .collect()
    }

    fn expect(&self, name: &str) -> Result<&str> {
        self.value(name)
            .ok_or_else(|| Error::Config(format!("missing required flag --{name}")))
    }

    fn reject_unknown(&self, allowed: &[&str]) -> Result<()> {
        for (name, _) in &self.entries {
            if !allowed.contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown flag --{name}")));
            }
        }
        Ok(())
    }
}

fn parse_flag<T: std::str::FromStr>(flags: &Flags, name: &str) -> Result<Option<T>> {
    match flags.value(name) {
        None => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("--{name}: cannot parse {v:?}"))),
    }
}

/// Shared config resolution: profile base, optional config file, --set
/// overrides.
fn resolve_config(flags: &Flags) -> Result<Config> {
    let mut cfg = match flags.value("profile") {
        Some(p) => Config::profile(p)?,
        None => Config::desk(),
    };
    if let Some(path) = flags.value("config") {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        apply_config_text(&mut cfg, &text)?;
    }
    for setting in flags.values("set") {
        let (key_path, value) = setting.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects section.key=value, got {setting:?}"))
        })?;
        let (section, key) = key_path.split_once('.').ok_or_else(|| {
            Error::Config(format!("--set expects section.key=value, got {setting:?}"))
        })?;
        cfg.set(section.trim(), key.trim(), value.trim())?;
    }
    Ok(cfg)
}

fn apply_config_text(cfg: &mut Config, text: &str) -> Result<()> {
    let parsed = Config::parse(text)?;
    *cfg = parsed;
    Ok(())
}

fn load_dataset(cfg: &Config) -> Result<Dataset> {
    match cfg.dataset.source {
        DataSource::Synthetic => gen_synthetic(
            cfg.attribute_spec(),
            cfg.dataset.dim,
            cfg.dataset.objects,
            cfg.dataset.seed,
        ),
        DataSource::File => {
            if cfg.dataset.path.is_empty() {
                return Err(Error::Config(
                    "dataset source is file but no path is set".into(),
                ));
            }
            let ds = load_features(Path::new(&cfg.dataset.path))?;
            if ds.dim() != cfg.dataset.dim {
                return Err(Error::Config(format!(
                    "feature file dim {} does not match configured dim {}",
                    ds.dim(),
                    cfg.dataset.dim
                )));
            }
            Ok(ds)
        }
    }
}

// ---- gen-data -------------------------------------------------------------------------

const GEN_DATA_HELP: &str = "\
emcom gen-data: write a synthetic attribute dataset as an EMCF feature file.

FLAGS:
    --attrs N      attributes per object (default 4)
    --values N     values per attribute (default 8)
    --objects N    object count (default 4096; must not exceed values^attrs)
    --dim N        feature dimension (default 64)
    --jitter X     gaussian jitter sigma (default 0.05)
    --seed N       generator seed (default 1)
    --out PATH     output file (required)
";

fn cmd_gen_data(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["help"])?;
    if flags.has("help") {
        print!("{GEN_DATA_HELP}");
        return Ok(());
    }
    flags.reject_unknown(&[
        "attrs", "values", "objects", "dim", "jitter", "seed", "out", "help",
    ])?;
    let mut cfg = Config::desk();
    if let Some(v) = parse_flag::<usize>(&flags, "attrs")? {
        cfg.dataset.attrs = v;
    }
    if let Some(v) = parse_flag::<usize>(&flags, "values")? {
        cfg.dataset.values = v;
    }
    if let Some(v) = parse_flag::<usize>(&flags, "objects")? {
        cfg.dataset.objects = v;
    }
    if let Some(v) = parse_flag::<usize>(&flags, "dim")? {
        cfg.dataset.dim = v;
    }
    if let Some(v) = parse_flag::<f64>(&flags, "jitter")? {
        cfg.dataset.jitter = v;
    }
    if let Some(v) = parse_flag::<u64>(&flags, "seed")? {
        cfg.dataset.seed = v;
    }
    let out = PathBuf::from(flags.expect("out")?);
    let ds = gen_synthetic(
        cfg.attribute_spec(),
        cfg.dataset.dim,
        cfg.dataset.objects,
        cfg.dataset.seed,
    )?;
    save_features(&ds, &out)?;
    let bytes = fs::read(&out).map_err(|e| Error::io(&out, e))?;
    println!(
        "wrote {} ({} objects, dim {}, digest {:016x})",
        out.display(),
        ds.len(),
        ds.dim(),
        fnv1a64(&bytes)
    );
    Ok(())
}

// ---- train ---------------------------------------------------------------------------

const TRAIN_HELP: &str = "\
emcom train: train a Speaker/Listener pair.

FLAGS:
    --profile NAME     desk (default) or paper
    --config PATH      config file (replaces the profile's values)
    --set S.K=V        override one config key (repeatable)
    --variant NAME     LG_S, LG_RL or NLG
    --lambda X         channel noise level (NLG)
    --c-size N         training candidate count
    --steps N          total training steps
    --batch N          batch size
    --seed N           master seed
    --out DIR          run directory (default runs/<variant>)
    --resume PATH      continue from a checkpoint (other config flags rejected)

Outputs: <out>/config.txt, <out>/metrics.jsonl (JSON lines),
periodic <out>/step_********.emck and <out>/final.emck checkpoints.
";

fn cmd_train(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["help"])?;
    if flags.has("help") {
        print!("{TRAIN_HELP}");
        return Ok(());
    }
    flags.reject_unknown(&[
        "profile", "config", "set", "variant", "lambda", "c-size", "steps", "batch", "seed", "out",
        "resume", "help",
    ])?;

    let resume = flags.value("resume").map(PathBuf::from);
    let config_flags = [
        "profile", "config", "set", "variant", "lambda", "c-size", "steps", "batch", "seed",
    ];
    if resume.is_some() && config_flags.iter().any(|f| flags.has(f)) {
        return Err(Error::Config(
            "--resume uses the checkpoint's embedded config; drop the other config flags".into(),
        ));
    }

    let (mut state, cfg, config_text) = match &resume {
        Some(path) => {
            let LoadedCheckpoint {
                state, config_text, ..
            } = load_train_state(path)?;
            let cfg = Config::parse(&config_text)?;
            (state, cfg, config_text)
        }
        None => {
            let mut cfg = resolve_config(&flags)?;
            if let Some(v) = flags.value("variant") {
                cfg.training.variant = GameVariant::parse(v)?;
            }
            if let Some(v) = parse_flag::<f64>(&flags, "lambda")? {
                cfg.game.lambda = v;
            }
            if let Some(v) = parse_flag::<usize>(&flags, "c-size")? {
                cfg.training.c_size = v;
            }
            if let Some(v) = parse_flag::<u64>(&flags, "steps")? {
                cfg.training.total_steps = v;
            }
            if let Some(v) = parse_flag::<usize>(&flags, "batch")? {
                cfg.training.batch_size = v;
            }
            if let Some(v) = parse_flag::<u64>(&flags, "seed")? {
                cfg.training.seed = v;
                cfg.dataset.seed = v;
            }
            let text = cfg.serialize();
            let state = TrainState::<f32>::init(&cfg.train_config()?);
            (state, cfg, text)
        }
    };

    let train_cfg = cfg.train_config()?;
    let ds = load_dataset(&cfg)?;
    let (train_ds, _test_ds) = split(&ds, cfg.dataset.train_fraction, cfg.dataset.seed)?;

    let out_dir = match flags.value("out") {
        Some(p) => PathBuf::from(p),
        None => PathBuf::from("runs").join(train_cfg.variant.as_str()),
    };
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    fs::write(out_dir.join("config.txt"), &config_text)
        .map_err(|e| Error::io(out_dir.join("config.txt"), e))?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let mut metrics_file = fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .write(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(&metrics_path, e))?;

    let ckpt_dir = out_dir.clone();
    let cfg_text_for_ckpt = config_text.clone();
    let mut save_ckpt = move |state: &TrainState<f32>| -> Result<()> {
        let path = ckpt_dir.join(format!("step_{:08}.emck", state.step));
        save_train_state(&path, state, &cfg_text_for_ckpt)
    };
    let mut hooks = RunHooks {
        log_interval: cfg.training.log_interval,
        metrics_out: Some(&mut metrics_file),
        checkpoint_interval: cfg.training.checkpoint_interval,
        on_checkpoint: Some(&mut save_ckpt),
        stop_early: None,
    };
    let records = run_training(&mut state, &train_ds, &train_cfg, &mut hooks)?;
    let final_path = out_dir.join("final.emck");
    save_train_state(&final_path, &state, &config_text)?;
    if let Some(last) = records.last() {
        println!(
            "{}",
            serde_json::to_string(last).map_err(|e| Error::Numeric(e.to_string()))?
        );
    }
    println!(
        "trained {} to step {} -> {}",
        train_cfg.variant.as_str(),
        state.step,
        final_path.display()
    );
    Ok(())
}

// ---- eval ----------------------------------------------------------------------------

const EVAL_HELP: &str = "\
emcom eval: evaluate checkpoints over a (lambda_test, c_test) grid.

FLAGS:
    --checkpoint PATH   checkpoint to evaluate (repeat for across-seed stats)
    --lambda-test LIST  comma-separated test noise levels (default from config)
    --c-test LIST       comma-separated test candidate counts
    --n-games N         episodes per cell
    --input-sigma X     gaussian input noise at test time
    --decode MODE       greedy (default) or sample
    --seed N            evaluation seed
    --masking           also run the token-masking analysis
    --first-token       also report first-vs-other single-token masking
    --out PATH          report file; .json or .csv by extension
    --svg PATH          line plot of accuracy vs lambda_test
";

fn cmd_eval(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["masking", "first-token", "help"])?;
    if flags.has("help") {
        print!("{EVAL_HELP}");
        return Ok(());
    }
    flags.reject_unknown(&[
        "checkpoint",
        "lambda-test",
        "c-test",
        "n-games",
        "input-sigma",
        "decode",
        "seed",
        "masking",
        "first-token",
        "out",
        "svg",
        "help",
    ])?;
    let ckpt_paths = flags.values("checkpoint");
    if ckpt_paths.is_empty() {
        return Err(Error::Config("missing required flag --checkpoint".into()));
    }
    let mut loaded = Vec::new();
    for p in &ckpt_paths {
        loaded.push((PathBuf::from(p), load_train_state(Path::new(p))?));
    }
    let cfg = Config::parse(&loaded[0].1.config_text)?;
    let acfg = cfg.agent_config();
    for (p, l) in &loaded[1..] {
        if l.config_digest != loaded[0].1.config_digest {
            eprintln!(
                "note: {} was trained under a different config; aggregating anyway",
                p.display()
            );
        }
    }

    let mut eval = cfg.eval.clone();
    if let Some(v) = flags.value("lambda-test") {
        eval.lambda_test = parse_list_flag(v, "lambda-test")?;
    }
    if let Some(v) = flags.value("c-test") {
        eval.c_test = parse_list_flag(v, "c-test")?;
    }
    if let Some(v) = parse_flag::<usize>(&flags, "n-games")? {
        eval.n_games = v;
    }
    if let Some(v) = parse_flag::<f64>(&flags, "input-sigma")? {
        eval.input_sigma = v;
    }
    if let Some(v) = flags.value("decode") {
        eval.greedy = match v {
            "greedy" => true,
            "sample" => false,
            _ => {
                return Err(Error::Config(format!(
                    "--decode must be greedy or sample, got {v:?}"
                )))
            }
        };
    }
    if let Some(v) = parse_flag::<u64>(&flags, "seed")? {
        eval.seed = v;
    }

    let ds = load_dataset(&cfg)?;
    let (_train_ds, test_ds) = split(&ds, cfg.dataset.train_fraction, cfg.dataset.seed)?;

    let ckpt_digests: Vec<String> = loaded
        .iter()
        .map(|(_, l)| format!("{:016x}", l.file_digest))
        .collect();
    let mut report = EvalReport {
        checkpoint_digest: ckpt_digests.join("+"),
        config_digest: format!("{:016x}", loaded[0].1.config_digest),
        n_games: eval.n_games,
        seed: eval.seed,
        rows: Vec::new(),
    };
    let mut curves: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for &c_test in &eval.c_test {
        let mut curve = Vec::new();
        for &lambda_test in &eval.lambda_test {
            let mut accs = Vec::new();
            for (_, l) in &loaded {
                let cell = EvalConfig {
                    lambda_test,
                    c_size_test: c_test,
                    n_games: eval.n_games,
                    input_sigma: eval.input_sigma,
                    greedy: eval.greedy,
                    seed: eval.seed,
                };
                accs.push(eval_accuracy(
                    &l.state.speaker,
                    &l.state.listener,
                    &acfg,
                    &test_ds,
                    &cell,
                )?);
            }
            let (mean, sd) = mean_sd(&accs);
            report.rows.push(ReportRow {
                variant: cfg.training.variant.as_str().to_string(),
                lambda_train: cfg.game.lambda,
                c_train: cfg.training.c_size,
                lambda_test,
                c_test,
                acc_mean: mean,
                acc_sd: sd,
                n_seeds: accs.len(),
            });
            curve.push((lambda_test, mean));
            println!(
                "lambda_test={lambda_test} c_test={c_test} acc={mean:.4} sd={sd:.4} (n={})",
                accs.len()
            );
        }
        curves.push((format!("|C|_test={c_test}"), curve));
    }

    if let Some(out) = flags.value("out") {
        let path = PathBuf::from(out);
        let format = ReportFormat::from_path(&path);
        crate::eval::export_report(&report, &path, format)?;
        println!("report -> {}", path.display());
    }
    if let Some(svg) = flags.value("svg") {
        let path = PathBuf::from(svg);
        let plot = render_line_plot_svg(
            &format!("{} accuracy", cfg.training.variant.as_str()),
            "lambda_test",
            &curves,
        );
        fs::write(&path, plot).map_err(|e| Error::io(&path, e))?;
        println!("plot -> {}", path.display());
    }

    if flags.has("masking") {
        let spec = MaskSpec {
            k_max: cfg.eval.mask_k_max,
            combos: cfg.eval.mask_combos,
            combo_seed: eval.seed,
        };
        let c_test = *eval.c_test.first().unwrap_or(&cfg.training.c_size);
        let cell = EvalConfig {
            lambda_test: 0.0,
            c_size_test: c_test,
            n_games: eval.n_games,
            input_sigma: eval.input_sigma,
            greedy: eval.greedy,
            seed: eval.seed,
        };
        // Masking curves per checkpoint, combo-averaged, then seed-averaged.
        let mut per_k: Vec<Vec<f64>> = vec![Vec::new(); spec.k_max + 1];
        let mut last_points = Vec::new();
        for (_, l) in &loaded {
            let points = masking_curve(
                &l.state.speaker,
                &l.state.listener,
                &acfg,
                &test_ds,
                &spec,
                &cell,
            )?;
            for p in &points {
                per_k[p.k].push(p.mean);
            }
            last_points = points;
        }
        for (k, accs) in per_k.iter().enumerate() {
            let (mean, sd) = mean_sd(accs);
            println!("masked_k={k} acc={mean:.4} sd={sd:.4}");
        }
        if let Some(out) = flags.value("out") {
            let path = PathBuf::from(format!("{out}.masking.csv"));
            fs::write(&path, render_masking_csv(&last_points)).map_err(|e| Error::io(&path, e))?;
            println!("masking rows -> {}", path.display());
        }
        if let Some(svg) = flags.value("svg") {
            let path = PathBuf::from(format!("{svg}.masking.svg"));
            let series: Vec<(String, Vec<(f64, f64)>)> = vec![(
                cfg.training.variant.as_str().to_string(),
                per_k
                    .iter()
                    .enumerate()
                    .map(|(k, accs)| (k as f64, mean_sd(accs).0))
                    .collect(),
            )];
            let plot = render_line_plot_svg("masked-token accuracy", "masked tokens k", &series);
            fs::write(&path, plot).map_err(|e| Error::io(&path, e))?;
            println!("masking plot -> {}", path.display());
        }
    }

    if flags.has("first-token") {
        let c_test = *eval.c_test.first().unwrap_or(&cfg.training.c_size);
        let cell = EvalConfig {
            lambda_test: 0.0,
            c_size_test: c_test,
            n_games: eval.n_games,
            input_sigma: eval.input_sigma,
            greedy: eval.greedy,
            seed: eval.seed,
        };
        for (p, l) in &loaded {
            let (first, others) =
                first_token_analysis(&l.state.speaker, &l.state.listener, &acfg, &test_ds, &cell)?;
            println!(
                "{}: mask_first={first:.4} mask_other_mean={others:.4}",
                p.display()
            );
        }
    }
    Ok(())
}

fn parse_list_flag<T: std::str::FromStr>(value: &str, name: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("--{name}: cannot parse {s:?}")))
        })
        .collect()
}

// ---- etl -----------------------------------------------------------------------------

const ETL_HELP: &str = "\
emcom etl: train a fresh head on a frozen Speaker.

FLAGS:
    --checkpoint PATH    trained checkpoint providing the frozen Speaker
    --task NAME          discrimination | classification | attribute | reconstruction
    --regime-lambda X    channel noise during head train/test (default 0)
    --steps N            head training steps
    --seed N             head seed
    --set S.K=V          override any [etl] config key (repeatable)
    --out PATH           append a CSV row (.csv) or write JSON (.json)
";

fn cmd_etl(args: &[String]) -> Result<()> {
    let flags = Flags::parse(args, &["help"])?;
    if flags.has("help") {
        print!("{ETL_HELP}");
        return Ok(());
    }
    flags.reject_unknown(&[
        "checkpoint",
        "task",
        "regime-lambda",
        "steps",
        "seed",
        "set",
        "out",
        "help",
    ])?;
    let ckpt_path = PathBuf::from(flags.expect("checkpoint")?);
    let loaded = load_train_state(&ckpt_path)?;
    let mut cfg = Config::parse(&loaded.config_text)?;
    for setting in flags.values("set") {
        let (key_path, value) = setting.split_once('=').ok_or_else(|| {
            Error::Config(format!("--set expects section.key=value, got {setting:?}"))
        })?;
        let (section, key) = key_path.split_once('.').ok_or_else(|| {
            Error::Config(format!("--set expects section.key=value, got {setting:?}"))
        })?;
        cfg.set(section.trim(), key.trim(), value.trim())?;
    }
    if let Some(v) = flags.value("task") {
        cfg.etl.task = v.to_string();
    }
    if let Some(v) = parse_flag::<f64>(&flags, "regime-lambda")? {
        cfg.etl.regime_lambda = v;
    }
    if let Some(v) = parse_flag::<u64>(&flags, "steps")? {
        cfg.etl.steps = v;
    }
    if let Some(v) = parse_flag::<u64>(&flags, "seed")? {
        cfg.etl.seed = v;
    }

    let etl_cfg = EtlConfig {
        steps: cfg.etl.steps,
        batch: cfg.etl.batch,
        lr: cfg.etl.lr,
        regime_lambda: cfg.etl.regime_lambda,
        seed: cfg.etl.seed,
        disc_sigma: cfg.etl.disc_sigma,
        disc_mu: cfg.etl.disc_mu,
        disc_c_size: cfg.etl.disc_c_size,
        classification_steps: cfg.etl.classification_steps,
        attribute_steps: cfg.etl.attribute_steps,
        recon_lr: cfg.etl.recon_lr,
        recon_b1: cfg.etl.recon_b1,
        recon_b2: cfg.etl.recon_b2,
        recon_wd: cfg.etl.recon_wd,
        recon_gmax: cfg.etl.recon_gmax,
    };
    println!(
        "task={} regime_lambda={} sigma={} mu={} c_size={} steps={} checkpoint={:016x}",
        cfg.etl.task,
        etl_cfg.regime_lambda,
        etl_cfg.disc_sigma,
        etl_cfg.disc_mu,
        etl_cfg.disc_c_size,
        etl_cfg.steps,
        loaded.file_digest
    );

    let ds = load_dataset(&cfg)?;
    let (train_ds, test_ds) = split(&ds, cfg.dataset.train_fraction, cfg.dataset.seed)?;
    let acfg = cfg.agent_config();
    let frozen = FrozenSpeaker::new(&loaded.state.speaker, acfg);

    let outcome = match cfg.etl.task.as_str() {
        "discrimination" => etl::etl_discrimination(&frozen, &train_ds, &test_ds, &etl_cfg)?,
        "classification" => etl::etl_classification(&frozen, &train_ds, &test_ds, &etl_cfg)?,
        "attribute" => etl::etl_attribute(&frozen, &train_ds, &test_ds, &etl_cfg)?,
        "reconstruction" => etl::etl_reconstruction(&frozen, &train_ds, &test_ds, &etl_cfg)?,
        other => {
            return Err(Error::Config(format!(
                "unknown etl task {other:?} (expected discrimination, classification, attribute or reconstruction)"
            )))
        }
    };
    println!(
        "{}",
        serde_json::to_string(&outcome).map_err(|e| Error::Numeric(e.to_string()))?
    );

    if let Some(out) = flags.value("out") {
        let path = PathBuf::from(out);
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let mut s = serde_json::to_string_pretty(&outcome)
                .map_err(|e| Error::Numeric(e.to_string()))?;
            s.push('\n');
            fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        } else {
            let fresh = !path.exists();
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            if fresh {
                writeln!(f, "{ETL_CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
            }
            writeln!(f, "{}", outcome.csv_row()).map_err(|e| Error::io(&path, e))?;
        }
        println!("report -> {}", path.display());
    }
    Ok(())
}
