use std::collections::BTreeMap;

use ssm_influence::experiments::{
    run_experiment, token_type_means, ExperimentConfig, ExperimentKind,
};
use ssm_influence::influence::{AdjacencyConvention, InfluenceProfile};
use ssm_influence::io::{builtin_prompt_suite, synth_model, write_report, ModelBundle, PromptManifest, ReportFormat, TokenTag};
use ssm_influence::model::{lm_forward_captured, ForwardOptions, ModelConfig};
use ssm_influence::ssm::InputScaling;

fn bundle() -> ModelBundle {
    let mut cfg = ModelConfig::new(24, 3, 256);
    cfg.d_state = 6;
    synth_model(&cfg, 5).unwrap()
}

fn suite(kind: ExperimentKind) -> PromptManifest {
    builtin_prompt_suite().into_iter().find(|m| m.experiment == kind.as_str()).unwrap()
}

fn cfg(kind: ExperimentKind, jobs: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(kind);
    c.runs = 3;
    c.sampler.max_new_tokens = 6;
    c.temperatures = vec![0.3, 1.0, 1.5];
    c.base_seed = 11;
    c.jobs = Some(jobs);
    c
}

#[test]
fn reports_are_byte_identical_across_runs_and_thread_counts() {
    let b = bundle();
    let dir = tempfile::tempdir().unwrap();
    for kind in ExperimentKind::ALL {
        let m = suite(kind);
        let mut bytes = Vec::new();
        for (i, jobs) in [1, 4, 1].into_iter().enumerate() {
            let r = run_experiment(&b, &m, &cfg(kind, jobs)).unwrap();
            let p = dir.path().join(format!("{kind}-{i}.csv"));
            write_report(&r, &p, ReportFormat::Csv).unwrap();
            bytes.push(std::fs::read(&p).unwrap());
        }
        assert!(bytes.windows(2).all(|w| w[0] == w[1]), "{kind} not deterministic");
    }
}

#[test]
fn different_seeds_change_sampled_runs() {
    let b = bundle();
    let m = suite(ExperimentKind::Complexity);
    let a = run_experiment(&b, &m, &cfg(ExperimentKind::Complexity, 1)).unwrap();
    let mut other = cfg(ExperimentKind::Complexity, 1);
    other.base_seed = 12345;
    let c = run_experiment(&b, &m, &other).unwrap();
    assert_ne!(a.rows, c.rows);
}

#[test]
fn category_summary_matches_per_run_rows() {
    let b = bundle();
    for kind in [ExperimentKind::Complexity, ExperimentKind::Position, ExperimentKind::Perturbation, ExperimentKind::Temperature] {
        let m = suite(kind);
        let r = run_experiment(&b, &m, &cfg(kind, 2)).unwrap();
        let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for row in r.rows.iter().filter(|row| row.run.is_some()) {
            groups.entry(&row.category).or_default().push(row.mean_influence);
        }
        for (cat, v) in groups {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let s = r.summary_value(cat, "mean_influence").unwrap();
            assert!((mean - s).abs() <= 1e-9 * mean.abs().max(1.0), "{kind} {cat}: {mean} vs {s}");
        }
    }
}

#[test]
fn layer_regions_are_summarized() {
    let b = bundle();
    let r = run_experiment(&b, &suite(ExperimentKind::Layers), &cfg(ExperimentKind::Layers, 1)).unwrap();
    let early = r.summary_value("all", "early_mean").unwrap();
    let late = r.summary_value("all", "late_mean").unwrap();
    let ratio = r.summary_value("all", "late_early_ratio").unwrap();
    assert!((ratio - late / early).abs() <= 1e-12 * ratio);
    assert!(r.rows.iter().any(|row| row.condition.ends_with("region=mid")));
    assert!(r.rows.iter().any(|row| row.condition.ends_with("layer=2")));
}

#[test]
fn perturbation_rows_carry_percent_change() {
    let b = bundle();
    let r = run_experiment(&b, &suite(ExperimentKind::Perturbation), &cfg(ExperimentKind::Perturbation, 1)).unwrap();
    for row in &r.rows {
        let pct = row.extra_metric.unwrap();
        if row.category == "original" {
            assert_eq!(pct, 0.0);
        }
    }
    for kind in ["remove_article", "typo", "synonym", "reorder"] {
        assert!(r.summary_value(kind, "pct_change_vs_original").is_some());
    }
}

#[test]
fn uniform_tags_give_equal_groups() {
    let b = bundle();
    let mut m = suite(ExperimentKind::TokenType);
    for e in &mut m.entries {
        e.token_tags = vec![TokenTag::Content; e.token_ids.len()];
    }
    let r = run_experiment(&b, &m, &cfg(ExperimentKind::TokenType, 1)).unwrap();
    assert!(r.summary_value("all", "mean_influence:content").is_some());
    assert_eq!(r.summary_value("all", "mean_influence:function"), None);
    assert_eq!(r.summary_value("all", "mean_influence:punctuation"), None);
}

/// Zeroing the input map on the function-word tokens of every captured layer
/// must zero that group's influence; other groups stay positive.
#[test]
fn zeroed_input_map_silences_tagged_tokens() {
    let b = bundle();
    let entry = &suite(ExperimentKind::TokenType).entries[4];
    let (_, caps) = lm_forward_captured(&entry.token_ids, &b, ForwardOptions::default()).unwrap();
    let per_token = caps[0].seq.channels() * caps[0].seq.state_dim();
    let seqs: Vec<_> = caps
        .iter()
        .map(|c| {
            let mut bvals = c.seq.b_slice().to_vec();
            for (k, tag) in entry.token_tags.iter().enumerate() {
                if *tag == TokenTag::Function {
                    bvals[k * per_token..(k + 1) * per_token].fill(0.0);
                }
            }
            c.seq.with_b(bvals).unwrap()
        })
        .collect();
    let refs: Vec<_> = seqs.iter().collect();
    let p = InfluenceProfile::from_sequences(
        &refs,
        entry.token_ids.clone(),
        entry.token_ids.len(),
        InputScaling::Raw,
        AdjacencyConvention::Paper,
    )
    .unwrap();
    let means = token_type_means(&p, &entry.token_tags);
    assert_eq!(means[&TokenTag::Function], Some(0.0));
    assert!(means[&TokenTag::Content].unwrap() > 0.0);
}
