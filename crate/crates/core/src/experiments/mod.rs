//! The six influence experiments and the descriptive statistics behind them.
//!
//! Every experiment expands into independent units (prompt × condition ×
//! run). A unit generates a continuation with seed `base_seed + run`, then
//! re-runs the full sequence once with capture enabled and scores every
//! layer. Units run in parallel; rows are emitted in manifest order.

mod stats;

pub use stats::{average_ranks, basic_stats, pearson, spearman_rho, BasicStats};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::{mean, AdjacencyConvention, InfluenceProfile};
use crate::io::{ExperimentReport, ModelBundle, PromptEntry, PromptManifest, ReportRow, SummaryEntry, TokenTag};
use crate::model::{lm_forward, CapturedLayerParams, ForwardOptions};
use crate::sampling::{generate, SamplerConfig};
use crate::ssm::InputScaling;

/// Influence profile of `token_ids` from a single capturing forward pass.
///
/// Each layer's parameters are scored as soon as they are captured, so only
/// one layer's sequence is alive at a time.
pub fn analyze(
    bundle: &ModelBundle,
    token_ids: &[u32],
    generated_from: usize,
    scaling: InputScaling,
    convention: AdjacencyConvention,
    opts: ForwardOptions,
) -> Result<InfluenceProfile> {
    if token_ids.is_empty() {
        return Err(Error::Input("cannot analyze an empty token sequence".into()));
    }
    let mut per_layer = Vec::with_capacity(bundle.config.n_layers);
    let mut cb = |c: CapturedLayerParams| {
        let scores = crate::influence::influence_fast(&c.seq, scaling, convention).map_err(|e| match e {
            Error::Numeric(what) => Error::NonFiniteLayer { layer: c.layer, what },
            other => other,
        })?;
        per_layer.push(scores);
        Ok(())
    };
    lm_forward(token_ids, bundle, opts, Some(&mut cb))?;
    InfluenceProfile::from_layer_scores(per_layer, token_ids.to_vec(), generated_from, scaling, convention)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Temperature,
    Complexity,
    TokenType,
    Layers,
    Position,
    Perturbation,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Temperature,
        ExperimentKind::Complexity,
        ExperimentKind::TokenType,
        ExperimentKind::Layers,
        ExperimentKind::Position,
        ExperimentKind::Perturbation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Temperature => "temperature",
            ExperimentKind::Complexity => "complexity",
            ExperimentKind::TokenType => "token_type",
            ExperimentKind::Layers => "layers",
            ExperimentKind::Position => "position",
            ExperimentKind::Perturbation => "perturbation",
        }
    }

    /// Default decoding settings for this experiment.
    pub fn default_sampler(self) -> SamplerConfig {
        let (temperature, repetition_penalty, max_new_tokens) = match self {
            ExperimentKind::Temperature => (0.7, 1.1, 30),
            ExperimentKind::Complexity => (0.7, 1.2, 40),
            ExperimentKind::TokenType => (0.7, 1.0, 40),
            ExperimentKind::Layers => (0.7, 1.2, 30),
            ExperimentKind::Position => (0.7, 1.2, 30),
            ExperimentKind::Perturbation => (0.7, 1.2, 20),
        };
        SamplerConfig {
            temperature,
            top_p: 0.9,
            repetition_penalty,
            max_new_tokens,
            seed: 0,
            greedy: false,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown experiment {s:?}")))
    }
}

pub const DEFAULT_TEMPERATURES: [f64; 5] = [0.3, 0.5, 0.7, 1.0, 1.5];
pub const DEFAULT_RUNS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub sampler: SamplerConfig,
    pub runs: usize,
    /// Run `r` samples with seed `base_seed + r`.
    pub base_seed: u64,
    /// Only used by the temperature sweep; replaces `sampler.temperature`.
    pub temperatures: Vec<f64>,
    pub scaling: InputScaling,
    pub convention: AdjacencyConvention,
    pub forward: ForwardOptions,
    /// Worker threads; `None` uses every core, `Some(1)` runs serially.
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        Self {
            kind,
            sampler: kind.default_sampler(),
            runs: DEFAULT_RUNS,
            base_seed: 0,
            temperatures: DEFAULT_TEMPERATURES.to_vec(),
            scaling: InputScaling::Raw,
            convention: AdjacencyConvention::Paper,
            forward: ForwardOptions::default(),
            jobs: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Input("at least one run per condition is required".into()));
        }
        if self.kind == ExperimentKind::Temperature && self.temperatures.is_empty() {
            return Err(Error::Input("temperature sweep needs at least one temperature".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Input("jobs must be at least 1".into()));
        }
        self.sampler.validate()
    }
}

/// One generate-then-analyze job.
#[derive(Debug, Clone)]
struct Unit {
    entry: usize,
    condition: usize,
    run: usize,
    sampler: SamplerConfig,
}

struct UnitResult {
    unit: Unit,
    profile: InfluenceProfile,
}

fn run_units(bundle: &ModelBundle, manifest: &PromptManifest, units: Vec<Unit>, cfg: &ExperimentConfig) -> Result<Vec<UnitResult>> {
    let work = |unit: Unit| -> Result<UnitResult> {
        let prompt = &manifest.entries[unit.entry].token_ids;
        let g = generate(bundle, prompt, &unit.sampler, cfg.forward)?;
        let profile = analyze(bundle, &g.tokens, g.prompt_len, cfg.scaling, cfg.convention, cfg.forward)?;
        Ok(UnitResult { unit, profile })
    };
    match cfg.jobs {
        Some(1) => units.into_iter().map(work).collect(),
        jobs => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.unwrap_or(0))
                .build()
                .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
            pool.install(|| units.into_par_iter().map(work).collect())
        }
    }
}

fn per_run_row(report: &ExperimentReport, category: &str, condition: &str, run: usize, values: &[f64]) -> Result<ReportRow> {
    let s = basic_stats(values)?;
    Ok(ReportRow {
        experiment: report.experiment.clone(),
        model: report.model.clone(),
        category: category.to_string(),
        condition: condition.to_string(),
        run: Some(run),
        mean_influence: s.mean,
        std: Some(s.std),
        cv: s.cv,
        extra_metric: None,
    })
}

/// Row summarizing the per-run means of one condition across runs.
fn aggregate_row(report: &ExperimentReport, category: &str, condition: &str, run_means: &[f64], extra: Option<f64>) -> Result<ReportRow> {
    let s = basic_stats(run_means)?;
    Ok(ReportRow {
        experiment: report.experiment.clone(),
        model: report.model.clone(),
        category: category.to_string(),
        condition: condition.to_string(),
        run: None,
        mean_influence: s.mean,
        std: Some(s.std),
        cv: s.cv,
        extra_metric: extra,
    })
}

fn summary(category: &str, metric: &str, value: Option<f64>) -> SummaryEntry {
    SummaryEntry {
        category: category.to_string(),
        metric: metric.to_string(),
        value,
    }
}

/// Means of the per-run rows of each category, in manifest order.
fn category_means(report: &ExperimentReport, categories: &[String]) -> Vec<SummaryEntry> {
    categories
        .iter()
        .map(|c| {
            let v: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| &r.category == c && r.run.is_some())
                .map(|r| r.mean_influence)
                .collect();
            summary(c, "mean_influence", mean(&v))
        })
        .collect()
}

/// Position of each entry within its category, for `prompt=<i>` labels.
fn prompt_labels(manifest: &PromptManifest) -> Vec<String> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    manifest
        .entries
        .iter()
        .map(|e| {
            let i = seen.entry(e.category.as_str()).or_insert(0);
            let label = format!("prompt={i}");
            *i += 1;
            label
        })
        .collect()
}

fn entries_in_order(manifest: &PromptManifest) -> Vec<usize> {
    let mut order = Vec::with_capacity(manifest.entries.len());
    for c in &manifest.categories {
        order.extend(manifest.entries.iter().enumerate().filter(|(_, e)| &e.category == c).map(|(i, _)| i));
    }
    order
}

fn units_for(manifest: &PromptManifest, conditions: &[SamplerConfig], cfg: &ExperimentConfig) -> Vec<Unit> {
    let mut units = Vec::new();
    for entry in entries_in_order(manifest) {
        for (condition, sampler) in conditions.iter().enumerate() {
            for run in 0..cfg.runs {
                units.push(Unit {
                    entry,
                    condition,
                    run,
                    sampler: SamplerConfig {
                        seed: cfg.base_seed.wrapping_add(run as u64),
                        ..sampler.clone()
                    },
                })
            }
        }
    }
    units
}

/// Mean over the prompt tokens carrying each tag; `None` for absent tags.
pub fn token_type_means(profile: &InfluenceProfile, tags: &[TokenTag]) -> BTreeMap<TokenTag, Option<f64>> {
    TokenTag::ALL
        .into_iter()
        .map(|t| {
            let v: Vec<f64> = tags
                .iter()
                .zip(&profile.holistic)
                .filter(|(tag, _)| **tag == t)
                .map(|(_, s)| *s)
                .collect();
            (t, mean(&v))
        })
        .collect()
}

/// Layer index ranges `[early, mid, late]` in equal thirds, remainder to late.
pub fn layer_regions(n_layers: usize) -> [std::ops::Range<usize>; 3] {
    let third = (n_layers / 3).max(1).min(n_layers);
    let mid_end = (2 * third).min(n_layers);
    [0..third, third..mid_end, mid_end..n_layers]
}

pub const REGION_NAMES: [&str; 3] = ["early", "mid", "late"];

fn ratio(num: Option<f64>, den: Option<f64>) -> Option<f64> {
    match (num, den) {
        (Some(n), Some(d)) if d != 0.0 => Some(n / d),
        _ => None,
    }
}

/// Generated-token mean over prompt-token mean; `None` without generated tokens.
pub fn generated_prompt_ratio(profile: &InfluenceProfile) -> Option<f64> {
    let (prompt, generated) = profile.holistic.split_at(profile.generated_from);
    ratio(mean(generated), mean(prompt))
}

/// Runs one experiment over `manifest` and assembles its report.
pub fn run_experiment(bundle: &ModelBundle, manifest: &PromptManifest, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    bundle.validate()?;
    manifest.validate(bundle.config.vocab_size)?;
    let mut report = ExperimentReport::new(cfg.kind.as_str(), bundle.metadata.source.clone());
    match cfg.kind {
        ExperimentKind::Temperature => temperature_sweep(bundle, manifest, cfg, &mut report)?,
        ExperimentKind::Complexity => prompt_complexity(bundle, manifest, cfg, &mut report)?,
        ExperimentKind::TokenType => token_type(bundle, manifest, cfg, &mut report)?,
        ExperimentKind::Layers => layer_evolution(bundle, manifest, cfg, &mut report)?,
        ExperimentKind::Position => position_sensitivity(bundle, manifest, cfg, &mut report)?,
        ExperimentKind::Perturbation => perturbation(bundle, manifest, cfg, &mut report)?,
    }
    if report.rows.iter().any(|r| !r.mean_influence.is_finite() || r.mean_influence < 0.0) {
        return Err(Error::Numeric("report contains a negative or non-finite mean influence".into()));
    }
    Ok(report)
}

fn profile_mean(p: &InfluenceProfile) -> Result<f64> {
    p.mean_influence()
        .ok_or_else(|| Error::Input("empty influence profile".into()))
}

/// Per-run rows plus one aggregate row for every (entry, condition) block.
fn plain_rows(
    report: &mut ExperimentReport,
    manifest: &PromptManifest,
    results: &[UnitResult],
    condition_label: impl Fn(&UnitResult) -> String,
    extra: impl Fn(&InfluenceProfile) -> Option<f64>,
) -> Result<()> {
    for block in results.chunk_by(|a, b| (a.unit.entry, a.unit.condition) == (b.unit.entry, b.unit.condition)) {
        let category = &manifest.entries[block[0].unit.entry].category;
        let label = condition_label(&block[0]);
        let mut means = Vec::with_capacity(block.len());
        let mut extras = Vec::new();
        for r in block {
            let mut row = per_run_row(report, category, &label, r.unit.run, &r.profile.holistic)?;
            row.extra_metric = extra(&r.profile);
            extras.extend(row.extra_metric);
            means.push(row.mean_influence);
            report.rows.push(row);
        }
        let row = aggregate_row(report, category, &label, &means, mean(&extras))?;
        report.rows.push(row);
    }
    Ok(())
}

fn temperature_sweep(bundle: &ModelBundle, manifest: &PromptManifest, cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let conditions: Vec<SamplerConfig> = cfg
        .temperatures
        .iter()
        .map(|&t| SamplerConfig {
            temperature: t,
            ..cfg.sampler.clone()
        })
        .collect();
    for c in &conditions {
        c.validate()?;
    }
    let results = run_units(bundle, manifest, units_for(manifest, &conditions, cfg), cfg)?;
    plain_rows(report, manifest, &results, |r| format!("temperature={}", cfg.temperatures[r.unit.condition]), |_| None)?;
    report.summary = category_means(report, &manifest.categories);
    // One mean per temperature, pooled over prompts and runs.
    let mut per_temp = vec![Vec::new(); conditions.len()];
    for r in &results {
        per_temp[r.unit.condition].push(profile_mean(&r.profile)?);
    }
    let means: Vec<f64> = per_temp.iter().map(|v| mean(v).unwrap_or(0.0)).collect();
    for (t, m) in cfg.temperatures.iter().zip(&means) {
        report.summary.push(summary("all", &format!("mean_influence@temperature={t}"), Some(*m)));
    }
    let rho = if means.len() >= 2 { Some(spearman_rho(&cfg.temperatures, &means)?) } else { None };
    report.summary.push(summary("all", "spearman_rho", rho));
    Ok(())
}

fn prompt_complexity(bundle: &ModelBundle, manifest: &PromptManifest, cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let results = run_units(bundle, manifest, units_for(manifest, std::slice::from_ref(&cfg.sampler), cfg), cfg)?;
    let labels = prompt_labels(manifest);
    plain_rows(report, manifest, &results, |r| labels[r.unit.entry].clone(), |_| None)?;
    report.summary = category_means(report, &manifest.categories);
    Ok(())
}

fn token_type(bundle: &ModelBundle, manifest: &PromptManifest, cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let results = run_units(bundle, manifest, units_for(manifest, std::slice::from_ref(&cfg.sampler), cfg), cfg)?;
    let labels = prompt_labels(manifest);
    // Per-run tag means for every (category, tag), and pooled over categories.
    let mut by_cat: BTreeMap<(usize, TokenTag), Vec<f64>> = BTreeMap::new();
    for block in results.chunk_by(|a, b| a.unit.entry == b.unit.entry) {
        let entry: &PromptEntry = &manifest.entries[block[0].unit.entry];
        let cat_idx = manifest.categories.iter().position(|c| c == &entry.category).unwrap_or(0);
        for tag in TokenTag::ALL {
            let mut means = Vec::new();
            for r in block {
                let label = format!("{}:{}", labels[r.unit.entry], tag.as_str());
                let values: Vec<f64> = entry
                    .token_tags
                    .iter()
                    .zip(&r.profile.holistic)
                    .filter(|(t, _)| **t == tag)
                    .map(|(_, s)| *s)
                    .collect();
                if values.is_empty() {
                    continue;
                }
                let row = per_run_row(report, &entry.category, &label, r.unit.run, &values)?;
                means.push(row.mean_influence);
                report.rows.push(row);
            }
            if !means.is_empty() {
                let label = format!("{}:{}", labels[block[0].unit.entry], tag.as_str());
                let row = aggregate_row(report, &entry.category, &label, &means, None)?;
                report.rows.push(row);
                by_cat.entry((cat_idx, tag)).or_default().extend(means);
            }
        }
    }
    report.summary = category_means(report, &manifest.categories);
    let mut pooled: BTreeMap<TokenTag, Vec<f64>> = BTreeMap::new();
    for ((cat_idx, tag), v) in &by_cat {
        report.summary.push(summary(&manifest.categories[*cat_idx], &format!("mean_influence:{}", tag.as_str()), mean(v)));
        pooled.entry(*tag).or_default().extend(v);
    }
    for tag in TokenTag::ALL {
        let v = pooled.get(&tag).map(|v| v.as_slice()).unwrap_or(&[]);
        report.summary.push(summary("all", &format!("mean_influence:{}", tag.as_str()), mean(v)));
    }
    let get = |t| pooled.get(&t).and_then(|v| mean(v));
    report.summary.push(summary(
        "all",
        "content_function_ratio",
        ratio(get(TokenTag::Content), get(TokenTag::Function)),
    ));
    Ok(())
}

fn layer_evolution(bundle: &ModelBundle, manifest: &PromptManifest, cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let results = run_units(bundle, manifest, units_for(manifest, std::slice::from_ref(&cfg.sampler), cfg), cfg)?;
    let labels = prompt_labels(manifest);
    let n_layers = bundle.config.n_layers;
    let regions = layer_regions(n_layers);
    let mut region_runs: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for block in results.chunk_by(|a, b| a.unit.entry == b.unit.entry) {
        let entry = &manifest.entries[block[0].unit.entry];
        let cat_idx = manifest.categories.iter().position(|c| c == &entry.category).unwrap_or(0);
        let prompt = &labels[block[0].unit.entry];
        for layer in 0..n_layers {
            let label = format!("{prompt}:layer={layer}");
            let mut means = Vec::new();
            for r in block {
                let row = per_run_row(report, &entry.category, &label, r.unit.run, &r.profile.per_layer[layer])?;
                means.push(row.mean_influence);
                report.rows.push(row);
            }
            let row = aggregate_row(report, &entry.category, &label, &means, None)?;
            report.rows.push(row);
        }
        for (ri, name) in REGION_NAMES.iter().enumerate() {
            if regions[ri].is_empty() {
                continue;
            }
            let label = format!("{prompt}:region={name}");
            let mut means = Vec::new();
            for r in block {
                let values: Vec<f64> = r.profile.per_layer[regions[ri].clone()].iter().flatten().copied().collect();
                let row = per_run_row(report, &entry.category, &label, r.unit.run, &values)?;
                means.push(row.mean_influence);
                report.rows.push(row);
            }
            let row = aggregate_row(report, &entry.category, &label, &means, None)?;
            report.rows.push(row);
            region_runs.entry((cat_idx, ri)).or_default().extend(means);
        }
    }
    report.summary = Vec::new();
    let mut pooled: [Vec<f64>; 3] = Default::default();
    for (ci, c) in manifest.categories.iter().enumerate() {
        let mut m = [None; 3];
        for ri in 0..3 {
            if let Some(v) = region_runs.get(&(ci, ri)) {
                m[ri] = mean(v);
                pooled[ri].extend(v);
            }
            report.summary.push(summary(c, &format!("{}_mean", REGION_NAMES[ri]), m[ri]));
        }
        report.summary.push(summary(c, "late_early_ratio", ratio(m[2], m[0])));
    }
    let m: Vec<Option<f64>> = pooled.iter().map(|v| mean(v)).collect();
    for ri in 0..3 {
        report.summary.push(summary("all", &format!("{}_mean", REGION_NAMES[ri]), m[ri]));
    }
    report.summary.push(summary("all", "late_early_ratio", ratio(m[2], m[0])));
    Ok(())
}

fn position_sensitivity(bundle: &ModelBundle, manifest: &PromptManifest, cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let results = run_units(bundle, manifest, units_for(manifest, std::slice::from_ref(&cfg.sampler), cfg), cfg)?;
    let labels = prompt_labels(manifest);
    plain_rows(report, manifest, &results, |r| labels[r.unit.entry].clone(), generated_prompt_ratio)?;
    report.summary = category_means(report, &manifest.categories);
    let mut all = Vec::new();
    for c in &manifest.categories {
        let v: Vec<f64> = report
            .rows
            .iter()
            .filter(|r| &r.category == c && r.run.is_some())
            .filter_map(|r| r.extra_metric)
            .collect();
        report.summary.push(summary(c, "generated_prompt_ratio", mean(&v)));
        all.extend(v);
    }
    report.summary.push(summary("all", "generated_prompt_ratio", mean(&all)));
    Ok(())
}

const ORIGINAL: &str = "original";

fn perturbation(bundle: &ModelBundle, manifest: &PromptManifest, cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let group_of = |e: &PromptEntry| e.group.clone().unwrap_or_default();
    let originals: BTreeMap<String, usize> = manifest
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.category == ORIGINAL)
        .map(|(i, e)| (group_of(e), i))
        .collect();
    if originals.is_empty() {
        return Err(Error::Input(format!("perturbation manifest needs a {ORIGINAL:?} category")));
    }
    for e in &manifest.entries {
        if !originals.contains_key(&group_of(e)) {
            return Err(Error::Input(format!("group {:?} has no original prompt", group_of(e))));
        }
    }
    let results = run_units(bundle, manifest, units_for(manifest, std::slice::from_ref(&cfg.sampler), cfg), cfg)?;
    // Original means by (group, run), paired with perturbed runs of the same seed.
    let mut base: BTreeMap<(String, usize), f64> = BTreeMap::new();
    for r in &results {
        let e = &manifest.entries[r.unit.entry];
        if e.category == ORIGINAL {
            base.insert((group_of(e), r.unit.run), profile_mean(&r.profile)?);
        }
    }
    let pct = |new: f64, old: f64| (old != 0.0).then(|| 100.0 * (new - old) / old);
    let mut kind_change: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for block in results.chunk_by(|a, b| a.unit.entry == b.unit.entry) {
        let e = &manifest.entries[block[0].unit.entry];
        let group = group_of(e);
        let label = format!("group={group}");
        let mut means = Vec::new();
        let mut olds = Vec::new();
        for r in block {
            let old = base[&(group.clone(), r.unit.run)];
            let mut row = per_run_row(report, &e.category, &label, r.unit.run, &r.profile.holistic)?;
            row.extra_metric = pct(row.mean_influence, old);
            means.push(row.mean_influence);
            olds.push(old);
            report.rows.push(row);
        }
        let (m, o) = (mean(&means).unwrap_or(0.0), mean(&olds).unwrap_or(0.0));
        let row = aggregate_row(report, &e.category, &label, &means, pct(m, o))?;
        report.rows.push(row);
        let ci = manifest.categories.iter().position(|c| c == &e.category).unwrap_or(0);
        let slot = kind_change.entry(ci).or_default();
        slot.0.extend(means);
        slot.1.extend(olds);
    }
    report.summary = category_means(report, &manifest.categories);
    for (ci, (news, olds)) in &kind_change {
        let change = match (mean(news), mean(olds)) {
            (Some(n), Some(o)) => pct(n, o),
            _ => None,
        };
        report.summary.push(summary(&manifest.categories[*ci], "pct_change_vs_original", change));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{builtin_prompt_suite, synth_model};
    use crate::model::ModelConfig;

    fn bundle() -> ModelBundle {
        let mut cfg = ModelConfig::new(16, 3, 256);
        cfg.d_state = 4;
        synth_model(&cfg, 3).unwrap()
    }

    fn quick(kind: ExperimentKind) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(kind);
        c.runs = 2;
        c.sampler.max_new_tokens = 4;
        c.jobs = Some(1);
        c
    }

    fn suite(kind: ExperimentKind) -> PromptManifest {
        builtin_prompt_suite().into_iter().find(|m| m.experiment == kind.as_str()).unwrap()
    }

    #[test]
    fn regions_split_in_thirds() {
        assert_eq!(layer_regions(24), [0..8, 8..16, 16..24]);
        assert_eq!(layer_regions(4), [0..1, 1..2, 2..4]);
        assert_eq!(layer_regions(2), [0..1, 1..2, 2..2]);
        assert_eq!(layer_regions(1), [0..1, 1..1, 1..1]);
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.as_str().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("nope".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn analyze_matches_captured_scores() {
        let b = bundle();
        let ids = [84u32, 104, 101, 32, 99];
        let p = analyze(&b, &ids, 5, InputScaling::Raw, AdjacencyConvention::Paper, ForwardOptions::default()).unwrap();
        assert_eq!((p.n_layers(), p.len()), (3, 5));
        let (_, caps) = crate::model::lm_forward_captured(&ids, &b, ForwardOptions::default()).unwrap();
        let seqs: Vec<_> = caps.iter().map(|c| &c.seq).collect();
        let q = InfluenceProfile::from_sequences(&seqs, ids.to_vec(), 5, InputScaling::Raw, AdjacencyConvention::Paper)
            .unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn every_experiment_produces_rows() {
        let b = bundle();
        for kind in ExperimentKind::ALL {
            let mut cfg = quick(kind);
            cfg.temperatures = vec![0.5, 1.0];
            let r = run_experiment(&b, &suite(kind), &cfg).unwrap();
            assert!(!r.rows.is_empty(), "{kind}");
            assert!(!r.summary.is_empty(), "{kind}");
            assert!(r.rows.iter().all(|row| row.mean_influence >= 0.0));
        }
    }

    #[test]
    fn parallel_matches_serial() {
        let b = bundle();
        let m = suite(ExperimentKind::Complexity);
        let serial = run_experiment(&b, &m, &quick(ExperimentKind::Complexity)).unwrap();
        let mut par = quick(ExperimentKind::Complexity);
        par.jobs = Some(3);
        assert_eq!(run_experiment(&b, &m, &par).unwrap(), serial);
    }

    #[test]
    fn identical_perturbation_is_zero_change() {
        let b = bundle();
        let mut m = suite(ExperimentKind::Perturbation);
        let original = m.entries[0].clone();
        m.entries.truncate(1);
        m.entries.push(PromptEntry {
            category: "copy".into(),
            ..original
        });
        m.categories = vec!["original".into(), "copy".into()];
        let r = run_experiment(&b, &m, &quick(ExperimentKind::Perturbation)).unwrap();
        assert_eq!(r.summary_value("copy", "pct_change_vs_original"), Some(0.0));
    }

    #[test]
    fn zero_generation_leaves_ratio_absent() {
        let b = bundle();
        let mut cfg = quick(ExperimentKind::Position);
        cfg.sampler.max_new_tokens = 0;
        let r = run_experiment(&b, &suite(ExperimentKind::Position), &cfg).unwrap();
        assert!(r.rows.iter().all(|row| row.extra_metric.is_none()));
        assert_eq!(r.summary_value("all", "generated_prompt_ratio"), None);
    }

    #[test]
    fn constant_score_temperature_rho_is_zero() {
        // With max_new_tokens = 0 every temperature scores the same prompt.
        let b = bundle();
        let mut cfg = quick(ExperimentKind::Temperature);
        cfg.sampler.max_new_tokens = 0;
        let r = run_experiment(&b, &suite(ExperimentKind::Temperature), &cfg).unwrap();
        assert_eq!(r.summary_value("all", "spearman_rho"), Some(0.0));
    }
}
