//! On-disk formats. Everything is UTF-8 text with `\n` line endings; floats
//! are written in Rust's shortest round-trip form so reading and rewriting a
//! file reproduces it byte for byte.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use hdpo_core::evalkit::{mean, median, std_dev, Metric};
use hdpo_core::{
    Backend, DatasetMeta, IfCurve, LinearRewardModel, PolicyModel, PreferenceDataset, PreferencePair, SweepResult,
    TabularPolicy, TrainTrace, ValuationReport,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DATASET_FORMAT: &str = "hdpo-preferences";
pub const MODEL_FORMAT: &str = "hdpo-model";
pub const FORMAT_VERSION: u32 = 1;

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Writes through a temporary file in the destination directory and renames
/// it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    format: String,
    version: u32,
    n_prompts: usize,
    n_responses: usize,
    feature_dim: usize,
    seed: Option<u64>,
    has_ground_truth: bool,
    true_theta: Option<Vec<f64>>,
    /// Row-major `[prompt][response][dim]`, flattened.
    features: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    prompt_id: usize,
    win_id: usize,
    lose_id: usize,
    truth_flipped: bool,
}

/// Header line followed by one JSON record per pair.
pub fn dataset_to_string(data: &PreferenceDataset) -> String {
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        n_prompts: data.n_prompts(),
        n_responses: data.n_responses(),
        feature_dim: data.feature_dim(),
        seed: data.meta.seed,
        has_ground_truth: data.meta.has_ground_truth,
        true_theta: data.meta.true_theta.clone(),
        features: data.features().to_vec(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for p in data.pairs() {
        let record = PairRecord {
            prompt_id: p.prompt_id,
            win_id: p.win_id,
            lose_id: p.lose_id,
            truth_flipped: p.truth_flipped,
        };
        out.push_str(&serde_json::to_string(&record).expect("pair serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str, path: &Path) -> CliResult<PreferenceDataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| CliError::parse(path, 1, "empty dataset file"))?;
    let header: DatasetHeader =
        serde_json::from_str(first).map_err(|e| CliError::parse(path, 1, format!("bad header: {e}")))?;
    if header.format != DATASET_FORMAT || header.version != FORMAT_VERSION {
        return Err(CliError::parse(
            path,
            1,
            format!("expected {DATASET_FORMAT} v{FORMAT_VERSION}, found {} v{}", header.format, header.version),
        ));
    }
    let mut pairs = Vec::new();
    for (i, line) in lines {
        let r: PairRecord = serde_json::from_str(line).map_err(|e| CliError::parse(path, i + 1, e.to_string()))?;
        pairs.push(PreferencePair {
            prompt_id: r.prompt_id,
            win_id: r.win_id,
            lose_id: r.lose_id,
            truth_flipped: r.truth_flipped,
        });
    }
    let meta = DatasetMeta {
        seed: header.seed,
        true_theta: header.true_theta,
        has_ground_truth: header.has_ground_truth,
    };
    Ok(PreferenceDataset::new(
        header.n_prompts,
        header.n_responses,
        header.feature_dim,
        header.features,
        pairs,
        meta,
    )?)
}

pub fn read_dataset(path: &Path) -> CliResult<PreferenceDataset> {
    parse_dataset(&read_text(path)?, path)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    backend: Backend,
    beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_prompts: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_responses: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ref_logits: Option<Vec<f64>>,
    params: Vec<f64>,
}

pub fn model_to_string(model: &PolicyModel) -> String {
    let mut ckpt = Checkpoint {
        format: MODEL_FORMAT.into(),
        version: FORMAT_VERSION,
        backend: model.backend(),
        beta: model.beta(),
        n_prompts: None,
        n_responses: None,
        ref_logits: None,
        params: model.params().to_vec(),
    };
    if let PolicyModel::Tabular(t) = model {
        ckpt.n_prompts = Some(t.n_prompts());
        ckpt.n_responses = Some(t.n_responses());
        ckpt.ref_logits = Some(t.ref_logits().to_vec());
    }
    let mut out = serde_json::to_string_pretty(&ckpt).expect("checkpoint serializes");
    out.push('\n');
    out
}

pub fn parse_model(text: &str, path: &Path) -> CliResult<PolicyModel> {
    let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| CliError::parse(path, e.line(), e.to_string()))?;
    if ckpt.format != MODEL_FORMAT || ckpt.version != FORMAT_VERSION {
        return Err(CliError::parse(path, 1, format!("expected {MODEL_FORMAT} v{FORMAT_VERSION}")));
    }
    Ok(match ckpt.backend {
        Backend::Linear => PolicyModel::Linear(LinearRewardModel::new(ckpt.params, ckpt.beta)?),
        Backend::Tabular => {
            let missing = |what: &str| CliError::parse(path, 1, format!("tabular checkpoint lacks {what}"));
            PolicyModel::Tabular(TabularPolicy::new(
                ckpt.n_prompts.ok_or_else(|| missing("n_prompts"))?,
                ckpt.n_responses.ok_or_else(|| missing("n_responses"))?,
                ckpt.params,
                ckpt.ref_logits.ok_or_else(|| missing("ref_logits"))?,
                ckpt.beta,
            )?)
        }
    })
}

pub fn read_model(path: &Path) -> CliResult<PolicyModel> {
    parse_model(&read_text(path)?, path)
}

/// `# key<TAB>value` lines, then a column header and rows.
pub fn curve_to_string(curve: &IfCurve) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# variant\t{}", curve.variant.name());
    for (key, value) in loss_params(&curve.variant) {
        let _ = writeln!(out, "# {key}\t{value}");
    }
    let _ = writeln!(out, "# beta\t{}", num(curve.beta));
    let _ = writeln!(out, "# divergent\t{}", curve.divergent);
    out.push_str("g\tweight\n");
    for (g, w) in curve.grid.iter().zip(&curve.weights) {
        let _ = writeln!(out, "{}\t{}", num(*g), num(*w));
    }
    out
}

pub fn loss_params(spec: &hdpo_core::LossSpec) -> Vec<(&'static str, String)> {
    use hdpo_core::LossSpec::*;
    match *spec {
        Dpo | Ipo => vec![],
        Cdpo { c } | Rdpo { c } => vec![("c", num(c))],
        Drdpo { beta_prime } => vec![("beta_prime", num(beta_prime))],
        Holder { gamma, phi } => vec![
            ("gamma", num(gamma)),
            ("phi", match phi {
                hdpo_core::HolderPhi::Dp => "dp".into(),
                hdpo_core::HolderPhi::Ps => "ps".into(),
            }),
        ],
    }
}

pub fn report_to_string(report: &ValuationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# xi_hat\t{}", num(report.xi_hat));
    let _ = writeln!(out, "# epsilon_hat\t{}", num(report.epsilon_hat));
    let _ = writeln!(out, "# gamma\t{}", num(report.gamma));
    let _ = writeln!(out, "# n\t{}", report.n());
    let _ = writeln!(out, "# n_flagged\t{}", report.flagged.len());
    out.push_str("index\tlikelihood\trank\tflagged\n");
    let ranks = report.ranks();
    let mask = report.is_flagged_mask();
    for i in 0..report.n() {
        let _ = writeln!(out, "{i}\t{}\t{}\t{}", num(report.likelihoods[i]), ranks[i], u8::from(mask[i]));
    }
    out
}

fn header_value<'a>(headers: &'a [(usize, String, String)], key: &str) -> Option<&'a (usize, String, String)> {
    headers.iter().find(|(_, k, _)| k == key)
}

pub fn parse_report(text: &str, path: &Path) -> CliResult<ValuationReport> {
    let mut headers = Vec::new();
    let mut rows = Vec::new();
    let mut seen_columns = false;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if let Some(rest) = line.strip_prefix("# ") {
            let (k, v) = rest
                .split_once('\t')
                .ok_or_else(|| CliError::parse(path, lineno, "header needs key<TAB>value"))?;
            headers.push((lineno, k.to_string(), v.to_string()));
        } else if !seen_columns {
            if line != "index\tlikelihood\trank\tflagged" {
                return Err(CliError::parse(path, lineno, "expected column header"));
            }
            seen_columns = true;
        } else {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(CliError::parse(path, lineno, "expected 4 columns"));
            }
            let bad = |what: &str| CliError::parse(path, lineno, format!("bad {what}"));
            let index: usize = fields[0].parse().map_err(|_| bad("index"))?;
            let likelihood: f64 = fields[1].parse().map_err(|_| bad("likelihood"))?;
            let rank: usize = fields[2].parse().map_err(|_| bad("rank"))?;
            let flagged = match fields[3] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("flag")),
            };
            if index != rows.len() {
                return Err(CliError::parse(path, lineno, "rows must be in index order"));
            }
            rows.push((likelihood, rank, flagged));
        }
    }
    let number = |key: &str| -> CliResult<f64> {
        let (line, _, v) = header_value(&headers, key).ok_or_else(|| CliError::parse(path, 1, format!("missing header {key}")))?;
        v.parse().map_err(|_| CliError::parse(path, *line, format!("bad {key}")))
    };
    let n = number("n")? as usize;
    if n != rows.len() {
        return Err(CliError::parse(path, 1, format!("header says {n} rows, found {}", rows.len())));
    }
    let mut ranking = vec![usize::MAX; n];
    for (i, (_, rank, _)) in rows.iter().enumerate() {
        if *rank >= n || ranking[*rank] != usize::MAX {
            return Err(CliError::parse(path, 1, "ranks are not a permutation"));
        }
        ranking[*rank] = i;
    }
    let flagged: Vec<usize> = ranking.iter().copied().filter(|&i| rows[i].2).collect();
    Ok(ValuationReport {
        gamma: number("gamma")?,
        xi_hat: number("xi_hat")?,
        epsilon_hat: number("epsilon_hat")?,
        likelihoods: rows.iter().map(|r| r.0).collect(),
        ranking,
        flagged,
    })
}

pub fn read_report(path: &Path) -> CliResult<ValuationReport> {
    parse_report(&read_text(path)?, path)
}

pub fn trace_to_string(trace: &TrainTrace) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# initial_loss\t{}", num(trace.initial_loss));
    let _ = writeln!(out, "# epochs_run\t{}", trace.epochs_run);
    out.push_str("epoch\tloss\tgrad_norm\n");
    for (i, (l, g)) in trace.losses.iter().zip(&trace.grad_norms).enumerate() {
        let _ = writeln!(out, "{}\t{}\t{}", i + 1, num(*l), num(*g));
    }
    out
}

/// One table: rows are ε values, three columns (median, mean, std) per
/// variant.
pub fn sweep_metric_table(sweep: &SweepResult, metric: Metric, labels: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# metric\t{}", metric.name());
    let _ = writeln!(out, "# seeds\t{}", sweep.seeds.len());
    out.push_str("epsilon");
    for label in labels {
        let _ = write!(out, "\t{label}_median\t{label}_mean\t{label}_std");
    }
    out.push('\n');
    for (e, eps) in sweep.eps_grid.iter().enumerate() {
        out.push_str(&num(*eps));
        for v in 0..sweep.variants.len() {
            let values = sweep.values(metric, v, e);
            let _ = write!(out, "\t{}\t{}\t{}", num(median(&values)), num(mean(&values)), num(std_dev(&values)));
        }
        out.push('\n');
    }
    out
}

/// Every cell, one row each.
pub fn sweep_records(sweep: &SweepResult, labels: &[String]) -> String {
    let mut out = String::from("variant\tepsilon\tseed");
    for m in Metric::ALL {
        let _ = write!(out, "\t{}", m.name());
    }
    out.push_str("\tn_flagged\n");
    for cell in &sweep.cells {
        let _ = write!(out, "{}\t{}\t{}", labels[cell.variant], num(sweep.eps_grid[cell.epsilon]), sweep.seeds[cell.seed]);
        for m in Metric::ALL {
            let _ = write!(out, "\t{}", num(m.of(&cell.metrics)));
        }
        let _ = writeln!(out, "\t{}", cell.metrics.n_flagged);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use hdpo_core::{contaminate, generate_clean, ContaminationSpec, GeneratorSpec};

    fn sample() -> PreferenceDataset {
        let clean = generate_clean(&GeneratorSpec {
            n_prompts: 12,
            seed: 4,
            ..GeneratorSpec::default()
        })
        .unwrap();
        contaminate(&clean, &ContaminationSpec::new(0.3, 4).unwrap()).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let data = sample();
        let text = dataset_to_string(&data);
        let back = parse_dataset(&text, Path::new("x")).unwrap();
        assert_eq!(back, data);
        assert_eq!(dataset_to_string(&back), text);
        assert_eq!(text.lines().count(), data.len() + 1);
    }

    #[test]
    fn dataset_rejects_unknown_fields() {
        let text = dataset_to_string(&sample()).replacen("{\"format\"", "{\"extra\":1,\"format\"", 1);
        assert!(matches!(parse_dataset(&text, Path::new("x")), Err(CliError::Parse { line: 1, .. })));
    }

    #[test]
    fn model_round_trip() {
        let data = sample();
        let linear = PolicyModel::Linear(LinearRewardModel::new(vec![0.1, -2.5e-17, 3.0, 1e300, 0.0, -1.0, 7.25, 1.0 / 3.0], 0.1).unwrap());
        let tabular = PolicyModel::initial(Backend::Tabular, &data, 0.25).unwrap();
        for model in [linear, tabular] {
            let text = model_to_string(&model);
            let back = parse_model(&text, Path::new("m")).unwrap();
            assert_eq!(back, model);
            assert_eq!(model_to_string(&back), text);
        }
    }

    #[test]
    fn report_round_trip() {
        let report = ValuationReport::from_likelihoods(vec![0.9, 0.01, 0.8, 0.02, 0.95, 0.99, 0.5], 2.0).unwrap();
        let text = report_to_string(&report);
        let back = parse_report(&text, Path::new("r")).unwrap();
        assert_eq!(back, report);
        assert_eq!(report_to_string(&back), text);
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0, -0.0, 4.248e-18, 1e300, f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0] {
            assert_eq!(num(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
    }
}
