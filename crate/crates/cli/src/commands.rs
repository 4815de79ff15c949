use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use serde::Serialize;
use ssm_influence::experiments::{analyze as analyze_ids, run_experiment, ExperimentConfig, ExperimentKind};
use ssm_influence::influence::InfluenceProfile;
use ssm_influence::io::{
    builtin_prompt_suite, format_sig9, load_checkpoint, save_checkpoint, summary_path, synth_model, write_report,
    ModelBundle, PromptManifest, ReportFormat,
};
use ssm_influence::model::{ForwardOptions, ModelConfig};
use ssm_influence::sampling::{generate as sample, SamplerConfig};
use ssm_influence::verify::{VerifyOptions, SUITES};
use ssm_influence::{Error, Result};

use crate::{AnalyzeArgs, ExperimentArgs, Format, GenerateArgs, PromptArgs, SamplingArgs, SynthArgs, VerifyArgs};

pub const THREADS_ENV: &str = "SSM_INFLUENCE_THREADS";

fn input_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Input(format!("{}: {e}", path.display()))
}

fn parse_ids(s: &str) -> Result<Vec<u32>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u32>().map_err(|_| Error::Input(format!("invalid token id {t:?}"))))
        .collect()
}

/// `0..3` (half-open), `2` or `0,2,5`.
fn parse_layers(s: &str, n_layers: usize) -> Result<Vec<usize>> {
    let bad = || Error::Input(format!("invalid layer selection {s:?}"));
    let layers: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        (a..b.min(n_layers)).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?
    };
    if layers.is_empty() {
        return Err(bad());
    }
    Ok(layers)
}

fn byte_ids(bundle: &ModelBundle, text: &str) -> Result<Vec<u32>> {
    let ids: Vec<u32> = text.bytes().map(u32::from).collect();
    let byte_level = ids
        .iter()
        .all(|&i| bundle.vocab.tokens.get(i as usize).is_some_and(|t| t.as_slice() == [i as u8]));
    if !byte_level {
        return Err(Error::Input("vocabulary is not byte-level; pass pre-tokenized --ids".into()));
    }
    Ok(ids)
}

struct Prompt {
    category: String,
    text: String,
    ids: Vec<u32>,
}

fn prompts(args: &PromptArgs, bundle: &ModelBundle) -> Result<Vec<Prompt>> {
    if let Some(ids) = &args.ids {
        let ids = parse_ids(ids)?;
        let text = bundle.vocab.decode(&ids)?;
        return Ok(vec![Prompt {
            category: String::new(),
            text,
            ids,
        }]);
    }
    if let Some(text) = &args.text {
        return Ok(vec![Prompt {
            category: String::new(),
            text: text.clone(),
            ids: byte_ids(bundle, text)?,
        }]);
    }
    if let Some(path) = &args.manifest {
        let m = PromptManifest::load(path)?;
        m.validate(bundle.config.vocab_size)?;
        return Ok(m
            .entries
            .into_iter()
            .map(|e| Prompt {
                category: e.category,
                text: e.text,
                ids: e.token_ids,
            })
            .collect());
    }
    Err(Error::Input("one of --ids, --text or --manifest is required".into()))
}

fn sampler(s: &SamplingArgs, seed: u64, mut base: SamplerConfig) -> SamplerConfig {
    if let Some(t) = s.temperature {
        base.temperature = t;
    }
    if let Some(p) = s.top_p {
        base.top_p = p;
    }
    if let Some(r) = s.rep_penalty {
        base.repetition_penalty = r;
    }
    if let Some(n) = s.max_new_tokens {
        base.max_new_tokens = n;
    }
    base.greedy |= s.greedy;
    base.seed = seed;
    base
}

fn load_model(path: &Path) -> Result<ModelBundle> {
    let b = load_checkpoint(path)?;
    b.validate()?;
    Ok(b)
}

#[derive(Serialize)]
struct AnalyzedPrompt<'a> {
    entry: usize,
    category: &'a str,
    text: &'a str,
    profile: &'a InfluenceProfile,
    /// Indices of the layers in `profile.per_layer`.
    layers: &'a [usize],
}

pub fn analyze(args: AnalyzeArgs) -> Result<ExitCode> {
    let bundle = load_model(&args.model)?;
    let prompts = prompts(&args.prompt, &bundle)?;
    let layers = match &args.layers {
        Some(s) => parse_layers(s, bundle.config.n_layers)?,
        None => (0..bundle.config.n_layers).collect(),
    };
    let opts = ForwardOptions {
        accumulate_f64: args.scoring.f64,
    };
    let sc = sampler(
        &args.sampling,
        args.seed,
        SamplerConfig {
            max_new_tokens: 0,
            ..SamplerConfig::default()
        },
    );
    let mut profiles = Vec::with_capacity(prompts.len());
    for p in &prompts {
        let g = sample(&bundle, &p.ids, &sc, opts)?;
        let full = analyze_ids(&bundle, &g.tokens, g.prompt_len, args.scoring.scaling(), args.scoring.convention(), opts)?;
        profiles.push(full.select_layers(&layers)?);
    }

    match &args.out {
        None => {
            let mut s = String::new();
            for (i, (p, prof)) in prompts.iter().zip(&profiles).enumerate() {
                render_table(&mut s, i, p, prof, &layers, &bundle);
            }
            print!("{s}");
        }
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| input_err(dir, e))?;
            let path = match args.format {
                Format::Csv => dir.join("analysis.csv"),
                Format::Json => dir.join("analysis.json"),
            };
            let body = match args.format {
                Format::Csv => analysis_csv(&prompts, &profiles, &layers),
                Format::Json => {
                    let docs: Vec<AnalyzedPrompt> = prompts
                        .iter()
                        .zip(&profiles)
                        .enumerate()
                        .map(|(entry, (p, profile))| AnalyzedPrompt {
                            entry,
                            category: &p.category,
                            text: &p.text,
                            profile,
                            layers: &layers,
                        })
                        .collect();
                    let mut v = serde_json::to_string_pretty(&docs)?;
                    v.push('\n');
                    v
                }
            };
            fs::write(&path, body).map_err(|e| input_err(&path, e))?;
            println!("wrote {}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn render_table(s: &mut String, i: usize, p: &Prompt, prof: &InfluenceProfile, layers: &[usize], bundle: &ModelBundle) {
    let _ = writeln!(s, "# entry {i} {:?} {:?}", p.category, p.text);
    let _ = writeln!(s, "token\tid\tpiece\tgenerated\tholistic");
    for (t, (&id, score)) in prof.token_ids.iter().zip(&prof.holistic).enumerate() {
        let piece = bundle.vocab.decode(&[id]).unwrap_or_default();
        let _ = writeln!(
            s,
            "{t}\t{id}\t{piece:?}\t{}\t{}",
            u8::from(t >= prof.generated_from),
            format_sig9(*score)
        );
    }
    for (row, l) in prof.per_layer.iter().zip(layers) {
        let cells: Vec<String> = row.iter().map(|v| format_sig9(*v)).collect();
        let _ = writeln!(s, "layer {l}\t{}", cells.join("\t"));
    }
    s.push('\n');
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Long form: one line per (entry, token, layer) plus `holistic` lines.
fn analysis_csv(prompts: &[Prompt], profiles: &[InfluenceProfile], layers: &[usize]) -> String {
    let mut s = String::from("entry,category,token_index,token_id,generated,layer,score\n");
    for (e, (p, prof)) in prompts.iter().zip(profiles).enumerate() {
        let cat = csv_field(&p.category);
        for (t, &id) in prof.token_ids.iter().enumerate() {
            let generated = u8::from(t >= prof.generated_from);
            for (row, l) in prof.per_layer.iter().zip(layers) {
                let _ = writeln!(s, "{e},{cat},{t},{id},{generated},{l},{}", format_sig9(row[t]));
            }
            let _ = writeln!(s, "{e},{cat},{t},{id},{generated},holistic,{}", format_sig9(prof.holistic[t]));
        }
    }
    s
}

#[derive(Serialize)]
struct GeneratedText<'a> {
    tokens: &'a [u32],
    prompt_len: usize,
    stopped_at_eos: bool,
    text: String,
    continuation: String,
}

pub fn generate(args: GenerateArgs) -> Result<ExitCode> {
    let bundle = load_model(&args.model)?;
    let prompts = prompts(&args.prompt, &bundle)?;
    let cfg = sampler(&args.sampling, args.seed, SamplerConfig::default());
    let opts = ForwardOptions { accumulate_f64: args.f64 };
    for p in prompts {
        let g = sample(&bundle, &p.ids, &cfg, opts)?;
        let out = GeneratedText {
            tokens: &g.tokens,
            prompt_len: g.prompt_len,
            stopped_at_eos: g.stopped_at_eos,
            text: bundle.vocab.decode(&g.tokens)?,
            continuation: bundle.vocab.decode(g.new_tokens())?,
        };
        println!("{}", serde_json::to_string(&out)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn jobs(flag: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Input(format!("{THREADS_ENV}={v:?} is not a positive integer")))?;
            Ok(Some(n))
        }
        Err(_) => Ok(flag),
    }
}

fn manifest_for(kind: ExperimentKind, arg: Option<&PathBuf>, single: bool) -> Result<PromptManifest> {
    match arg {
        Some(p) if p.is_dir() => PromptManifest::load(p.join(format!("{kind}.json"))),
        Some(p) if single => PromptManifest::load(p),
        Some(p) => Err(input_err(p, "`experiment all` needs a directory of <experiment>.json manifests")),
        None => Ok(builtin_prompt_suite()
            .into_iter()
            .find(|m| m.experiment == kind.as_str())
            .expect("built-in suite covers every experiment")),
    }
}

pub fn experiment(args: ExperimentArgs) -> Result<ExitCode> {
    let kinds: Vec<ExperimentKind> = if args.name == "all" {
        ExperimentKind::ALL.to_vec()
    } else {
        vec![args.name.parse()?]
    };
    let bundle = load_model(&args.model)?;
    let jobs = jobs(args.jobs)?;
    fs::create_dir_all(&args.out).map_err(|e| input_err(&args.out, e))?;
    let format = ReportFormat::from(args.format);
    for kind in kinds {
        let manifest = manifest_for(kind, args.manifest.as_ref(), args.name != "all")?;
        let mut cfg = ExperimentConfig::new(kind);
        cfg.sampler = sampler(&args.sampling, 0, cfg.sampler);
        cfg.runs = args.runs;
        cfg.base_seed = args.seed;
        cfg.scaling = args.scoring.scaling();
        cfg.convention = args.scoring.convention();
        cfg.forward = ForwardOptions {
            accumulate_f64: args.scoring.f64,
        };
        cfg.jobs = jobs;
        let started = Instant::now();
        let report = run_experiment(&bundle, &manifest, &cfg)?;
        let path = args.out.join(format!("{kind}.{}", format.extension()));
        write_report(&report, &path, format)?;
        let extra = match format {
            ReportFormat::Csv => format!(" (+ {})", summary_path(&path).display()),
            ReportFormat::Json => String::new(),
        };
        println!(
            "{kind}: {} rows in {:.1}s -> {}{extra}",
            report.rows.len(),
            started.elapsed().as_secs_f64(),
            path.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

pub fn synth(args: SynthArgs) -> Result<ExitCode> {
    let mut cfg = ModelConfig::new(args.d_model, args.n_layers, args.vocab);
    cfg.d_state = args.d_state;
    let bundle = synth_model(&cfg, args.seed)?;
    save_checkpoint(&bundle, &args.out)?;
    let prompts = args.out.join("prompts");
    fs::create_dir_all(&prompts).map_err(|e| input_err(&prompts, e))?;
    let mut written = 0;
    for m in builtin_prompt_suite() {
        // The built-in suite is byte-tokenized and needs every byte id.
        if m.validate(args.vocab).is_ok() {
            m.save(prompts.join(format!("{}.json", m.experiment)))?;
            written += 1;
        }
    }
    println!(
        "wrote {} (d_model={} layers={} N={} vocab={}) and {written} prompt manifests",
        args.out.display(),
        cfg.d_model,
        cfg.n_layers,
        cfg.d_state,
        cfg.vocab_size
    );
    Ok(ExitCode::SUCCESS)
}

pub fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let opts = VerifyOptions {
        cases: args.cases,
        seed: args.seed,
        inject_fault: args.inject_fault,
    };
    for name in &args.suite {
        if !SUITES.iter().any(|(n, _)| n == name) {
            let known: Vec<&str> = SUITES.iter().map(|(n, _)| *n).collect();
            return Err(Error::Input(format!("unknown suite {name:?}; known: {}", known.join(", "))));
        }
    }
    let started = Instant::now();
    let (mut passed, mut total) = (0, 0);
    for (name, suite) in SUITES {
        if !args.suite.is_empty() && !args.suite.iter().any(|s| s == name) {
            continue;
        }
        for outcome in suite(&opts)? {
            println!("{}", outcome.line());
            total += 1;
            passed += usize::from(outcome.passed);
        }
    }
    println!("{passed}/{total} checks passed in {:.1}s", started.elapsed().as_secs_f64());
    Ok(if passed == total { ExitCode::SUCCESS } else { ExitCode::from(2) })
}
