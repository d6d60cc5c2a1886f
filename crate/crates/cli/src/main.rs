//! Experiment harness CLI.
//!
//! Subcommands: gen-data, train, evaluate-3d, evaluate-2d, export, selftest.
//! Options come from `--flag value` pairs, optionally seeded from a plain
//! `key = value` config file (`--config`); explicit flags win. Every command
//! is seed-deterministic: identical invocations produce byte-identical
//! artifacts (reports carry a timestamp line unless --no-timestamp).
//!
//! Exit codes: 0 success, 1 internal failure, 2 usage or input error.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use gesturelab::bundle::ModelBundle;
use gesturelab::dataset::{read_dataset, SynthConfig};
use gesturelab::error::Error as CoreError;
use gesturelab::harness::{
    evaluate_2d, evaluate_3d, export_window, generate_dataset, selftest, train_model, EvalParams,
    TrainOverrides,
};
use gesturelab::skeleton::SkeletonSpec;

const USAGE: &str = "\
usage: gesturelab <command> [options]

commands:
  gen-data      generate a synthetic paired audio-gesture dataset
                  --out FILE [--clips N] [--seconds S] [--tempo-lo HZ] [--tempo-hi HZ]
                  [--jitter S] [--noise X] [--style X] [--seed N] [--split-seed N]
  train         train a model on a dataset
                  --dataset FILE --model {diffusion|recurrent|lifter|encoder} --out FILE
                  [--dim {2|3}] [--seed N] [--split-seed N]
                  [--epochs N] [--steps N] [--batch N] [--lr X]
  evaluate-3d   compare direct-3D generation against 2D generation lifted to 3D
                  --dataset FILE --gen3d FILE --gen2d FILE --lifter FILE --encoder FILE
                  --out DIR [--eval-n N] [--guidance-w X] [--sigma X] [--div-n N]
                  [--div-reps N] [--seed N] [--split-seed N] [--no-timestamp]
  evaluate-2d   compare direct-2D generation against 3D generation narrowed to 2D
                  --dataset FILE --gen2d FILE --gen3d FILE --encoder FILE --out DIR
                  [same options as evaluate-3d]
  export        convert a stored gesture window to joint positions
                  --dataset FILE [--clip N] [--start N] [--frames N]
                  [--format {csv|json}] [--out FILE]
  selftest      run the closed-form metric oracles and gradient checks

common options:
  --config FILE   read `key = value` defaults (flags override)
";

enum CliError {
    Usage(String),
    Internal(String),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(io) => CliError::Internal(io.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(run(&args));
}

fn run(args: &[String]) -> i32 {
    let Some(command) = args.first() else {
        eprint!("{USAGE}");
        return 2;
    };
    let opts = match Options::parse(&args[1..]) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            eprint!("{USAGE}");
            return 2;
        }
    };
    let result = match command.as_str() {
        "gen-data" => cmd_gen_data(&opts),
        "train" => cmd_train(&opts),
        "evaluate-3d" => cmd_evaluate(&opts, true),
        "evaluate-2d" => cmd_evaluate(&opts, false),
        "export" => cmd_export(&opts),
        "selftest" => cmd_selftest(),
        "--help" | "-h" | "help" => {
            print!("{USAGE}");
            return 0;
        }
        other => {
            eprintln!("error: unknown command '{other}'");
            eprint!("{USAGE}");
            return 2;
        }
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprint!("{USAGE}");
            2
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

// ---------------------------------------------------------------------------
// Options
// ---------------------------------------------------------------------------

struct Options {
    values: HashMap<String, String>,
}

impl Options {
    fn parse(args: &[String]) -> Result<Options, String> {
        let mut values = HashMap::new();
        let mut flags: Vec<(String, String)> = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let arg = &args[i];
            let Some(name) = arg.strip_prefix("--") else {
                return Err(format!("unexpected argument '{arg}'"));
            };
            if let Some((k, v)) = name.split_once('=') {
                flags.push((k.to_string(), v.to_string()));
            } else if name == "no-timestamp" {
                flags.push((name.to_string(), "true".to_string()));
            } else {
                let Some(value) = args.get(i + 1) else {
                    return Err(format!("flag --{name} needs a value"));
                };
                flags.push((name.to_string(), value.clone()));
                i += 1;
            }
            i += 1;
        }
        // Config file first, then flags on top.
        if let Some((_, path)) = flags.iter().find(|(k, _)| k == "config") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {path}: {e}"))?;
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(format!("{path}:{}: expected `key = value`", n + 1));
                };
                values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        for (k, v) in flags {
            values.insert(k, v);
        }
        Ok(Options { values })
    }

    fn str_opt(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn required(&self, key: &str) -> CliResult<&str> {
        self.str_opt(key)
            .ok_or_else(|| CliError::Usage(format!("missing required --{key}")))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        match self.str_opt(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| CliError::Usage(format!("--{key} got unparseable value '{raw}'"))),
        }
    }

    fn parsed_opt<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        match self.str_opt(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("--{key} got unparseable value '{raw}'"))),
        }
    }

    fn flag(&self, key: &str) -> bool {
        matches!(self.str_opt(key), Some("true") | Some("1") | Some("yes"))
    }
}

fn checked_path(opts: &Options, key: &str) -> CliResult<PathBuf> {
    let raw = opts.required(key)?;
    let path = PathBuf::from(raw);
    if !path.exists() {
        return Err(CliError::Usage(format!("--{key} path '{raw}' does not exist")));
    }
    Ok(path)
}

fn write_output(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}

fn load_bundle(opts: &Options, key: &str) -> CliResult<ModelBundle> {
    let path = checked_path(opts, key)?;
    Ok(ModelBundle::read(&path)?)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_gen_data(opts: &Options) -> CliResult<()> {
    let out = PathBuf::from(opts.required("out")?);
    let defaults = SynthConfig::default();
    let config = SynthConfig {
        clip_count: opts.parsed("clips", defaults.clip_count)?,
        clip_seconds: opts.parsed("seconds", defaults.clip_seconds)?,
        fps: opts.parsed("fps", defaults.fps)?,
        tempo_range: (
            opts.parsed("tempo-lo", defaults.tempo_range.0)?,
            opts.parsed("tempo-hi", defaults.tempo_range.1)?,
        ),
        beat_jitter: opts.parsed("jitter", defaults.beat_jitter)?,
        motion_noise: opts.parsed("noise", defaults.motion_noise)?,
        style_variation: opts.parsed("style", defaults.style_variation)?,
        sway: opts.parsed("sway", defaults.sway)?,
    };
    let seed = opts.parsed("seed", 7u64)?;
    let split_seed = opts.parsed("split-seed", 42u64)?;
    let summary = generate_dataset(&config, seed, split_seed, &out)?;
    println!(
        "wrote {}: {} clips, {} windows (train {}, val {}, test {})",
        out.display(),
        summary.clips,
        summary.windows,
        summary.train_windows,
        summary.val_windows,
        summary.test_windows
    );
    Ok(())
}

fn cmd_train(opts: &Options) -> CliResult<()> {
    let dataset_path = checked_path(opts, "dataset")?;
    let kind = opts.required("model")?.to_string();
    let out = PathBuf::from(opts.required("out")?);
    let dim: usize = opts.parsed("dim", 3usize)?;
    let seed = opts.parsed("seed", 7u64)?;
    let split_seed = opts.parsed("split-seed", 42u64)?;
    let overrides = TrainOverrides {
        epochs: opts.parsed_opt("epochs")?,
        steps_per_epoch: opts.parsed_opt("steps")?,
        batch: opts.parsed_opt("batch")?,
        lr: opts.parsed_opt("lr")?,
    };
    let dataset = read_dataset(&dataset_path)?;
    let trained = train_model(&dataset, &kind, dim, seed, split_seed, &overrides)?;
    write_output(&out, &trained.bundle.to_bytes())?;
    let curve_path = out.with_extension("curve.csv");
    write_output(&curve_path, trained.curve_csv.as_bytes())?;
    println!("{}", trained.summary);
    println!("wrote {} and {}", out.display(), curve_path.display());
    Ok(())
}

fn eval_params(opts: &Options) -> CliResult<EvalParams> {
    let d = EvalParams::default();
    Ok(EvalParams {
        seed: opts.parsed("seed", d.seed)?,
        split_seed: opts.parsed("split-seed", d.split_seed)?,
        eval_n: opts.parsed("eval-n", d.eval_n)?,
        guidance_w: opts.parsed("guidance-w", d.guidance_w)?,
        sigma: opts.parsed("sigma", d.sigma)?,
        div_n: opts.parsed("div-n", d.div_n)?,
        div_reps: opts.parsed("div-reps", d.div_reps)?,
        timestamp: !opts.flag("no-timestamp"),
    })
}

fn cmd_evaluate(opts: &Options, in_3d: bool) -> CliResult<()> {
    let dataset = read_dataset(&checked_path(opts, "dataset")?)?;
    let params = eval_params(opts)?;
    let out_dir = PathBuf::from(opts.required("out")?);
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", out_dir.display())))?;

    let (name, report) = if in_3d {
        let gen3d = load_bundle(opts, "gen3d")?;
        let gen2d = load_bundle(opts, "gen2d")?;
        let lifter = load_bundle(opts, "lifter")?;
        let encoder = load_bundle(opts, "encoder")?;
        (
            "evaluate-3d",
            evaluate_3d(&dataset, &gen3d, &gen2d, &lifter, &encoder, &params)?,
        )
    } else {
        let gen2d = load_bundle(opts, "gen2d")?;
        let gen3d = load_bundle(opts, "gen3d")?;
        let encoder = load_bundle(opts, "encoder")?;
        (
            "evaluate-2d",
            evaluate_2d(&dataset, &gen2d, &gen3d, &encoder, &params)?,
        )
    };
    write_output(&out_dir.join(format!("{name}.csv")), report.csv.as_bytes())?;
    write_output(&out_dir.join(format!("{name}.txt")), report.table.as_bytes())?;
    print!("{}", report.table);
    println!("wrote {}/{name}.csv", out_dir.display());
    Ok(())
}

fn cmd_export(opts: &Options) -> CliResult<()> {
    let dataset = read_dataset(&checked_path(opts, "dataset")?)?;
    let clip: usize = opts.parsed("clip", 0usize)?;
    let start: usize = opts.parsed("start", 0usize)?;
    let frames: usize = opts.parsed("frames", gesturelab::dataset::WINDOW_LEN)?;
    let format = opts.str_opt("format").unwrap_or("csv").to_string();
    let skeleton = SkeletonSpec::default_upper_body();
    let text = export_window(&dataset, clip, start, frames, &format, &skeleton)?;
    match opts.str_opt("out") {
        Some(path) => {
            let path = PathBuf::from(path);
            write_output(&path, text.as_bytes())?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_selftest() -> CliResult<()> {
    let results = selftest();
    let mut failed = 0;
    for r in &results {
        println!(
            "{} {:<32} {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        if !r.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::Internal(format!("{failed} self-test(s) failed")));
    }
    println!("all {} self-tests passed", results.len());
    Ok(())
}
