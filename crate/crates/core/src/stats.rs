//! Metrics and tests: UAR, bootstrap intervals, speaker-level UAR, Spearman's
//! rho, Mann-Whitney U and single-feature ranking.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::audio::{Gender, Session};
use crate::functionals::{percentile, FeatureTable};
use crate::pipeline::{self, LosoSettings, PipelineError, SessionPrediction, SystemOutput};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("truths contain only one class")]
    SingleClassTruths,
    #[error("speaker {0}: truths contain only one class")]
    SpeakerSingleClass(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("ranks have zero variance")]
    ZeroVariance,
    #[error("every bootstrap replicate contained a single class")]
    NoValidReplicates,
}

/// Mean of the per-class recalls.
pub fn uar(predicted: &[Session], truth: &[Session]) -> Result<f64, StatsError> {
    if predicted.len() != truth.len() {
        return Err(StatsError::LengthMismatch(predicted.len(), truth.len()));
    }
    let recall = |class: Session| {
        let (hit, total) = predicted
            .iter()
            .zip(truth)
            .filter(|(_, t)| **t == class)
            .fold((0usize, 0usize), |(h, n), (p, _)| (h + usize::from(*p == class), n + 1));
        (total > 0).then(|| hit as f64 / total as f64)
    };
    match (recall(Session::PreTreatment), recall(Session::PostTreatment)) {
        (Some(a), Some(b)) => Ok((a + b) / 2.0),
        _ => Err(StatsError::SingleClassTruths),
    }
}

pub fn session_uar(sessions: &[SessionPrediction]) -> Result<f64, StatsError> {
    let (p, t): (Vec<Session>, Vec<Session>) = sessions.iter().map(|s| (s.predicted, s.session)).unzip();
    uar(&p, &t)
}

/// UAR restricted to one gender; `None` when that stratum lacks a class.
pub fn gender_uar(sessions: &[SessionPrediction], gender: Gender) -> Option<f64> {
    let subset: Vec<SessionPrediction> = sessions.iter().filter(|s| s.gender == gender).cloned().collect();
    session_uar(&subset).ok()
}

/// What a bootstrap replicate draws with replacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapUnit {
    #[default]
    Session,
    /// Whole speakers, each bringing all its sessions.
    Speaker,
}

impl fmt::Display for BootstrapUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BootstrapUnit::Session => "session",
            BootstrapUnit::Speaker => "speaker",
        })
    }
}

impl FromStr for BootstrapUnit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "session" => Ok(BootstrapUnit::Session),
            "speaker" => Ok(BootstrapUnit::Speaker),
            other => Err(format!("unknown bootstrap unit `{other}` (expected session|speaker)")),
        }
    }
}

pub const DEFAULT_BOOTSTRAP: usize = 1000;

/// Percentile (2.5, 97.5) interval of session UAR over resampled records.
/// Replicates with a single class are skipped.
pub fn bootstrap_ci(
    sessions: &[SessionPrediction],
    n_boot: usize,
    seed: u64,
    unit: BootstrapUnit,
) -> Result<(f64, f64), StatsError> {
    if sessions.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: sessions.len() });
    }
    session_uar(sessions)?;
    let groups: Vec<Vec<usize>> = match unit {
        BootstrapUnit::Session => (0..sessions.len()).map(|i| vec![i]).collect(),
        BootstrapUnit::Speaker => {
            let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, s) in sessions.iter().enumerate() {
                by.entry(&s.speaker_id).or_default().push(i);
            }
            by.into_values().collect()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_boot);
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for _ in 0..n_boot {
        pred.clear();
        truth.clear();
        for _ in 0..groups.len() {
            for &i in &groups[rng.random_range(0..groups.len())] {
                pred.push(sessions[i].predicted);
                truth.push(sessions[i].session);
            }
        }
        if let Ok(u) = uar(&pred, &truth) {
            values.push(u);
        }
    }
    if values.is_empty() {
        return Err(StatsError::NoValidReplicates);
    }
    Ok((percentile(&values, 2.5), percentile(&values, 97.5)))
}

/// Per-speaker UAR over that speaker's instance predictions.
pub fn speaker_uar(sessions: &[SessionPrediction]) -> Result<BTreeMap<String, f64>, StatsError> {
    let mut by: BTreeMap<&str, (Vec<Session>, Vec<Session>)> = BTreeMap::new();
    for s in sessions {
        let e = by.entry(&s.speaker_id).or_default();
        for p in &s.instance_predictions {
            e.0.push(p.predicted);
            e.1.push(s.session);
        }
    }
    by.into_iter()
        .map(|(spk, (p, t))| {
            uar(&p, &t)
                .map(|u| (spk.to_string(), u))
                .map_err(|_| StatsError::SpeakerSingleClass(spk.to_string()))
        })
        .collect()
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew { needed: 3, got: x.len() });
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U of the first sample: pairs where it is larger, ties counting ½.
    pub u: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

/// Largest `|a|·|b|` for which the exact null distribution is enumerated.
pub const MW_EXACT_MAX_PRODUCT: usize = 400;

pub fn mann_whitney_two_sided(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    mann_whitney(a, b, MW_EXACT_MAX_PRODUCT)
}

/// Two-sided Mann-Whitney test with `p = min(1, 2·min(P(U ≤ u), P(U ≥ u)))`.
pub fn mann_whitney(a: &[f64], b: &[f64], exact_max_product: usize) -> Result<MannWhitney, StatsError> {
    for s in [a, b] {
        if s.is_empty() {
            return Err(StatsError::TooFew { needed: 1, got: 0 });
        }
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let rank_sum_a: f64 = ranks[..a.len()].iter().sum();
    let u = rank_sum_a - na * (na + 1.0) / 2.0;
    if a.len() * b.len() <= exact_max_product {
        let p = exact_p(&ranks, a.len());
        Ok(MannWhitney { u, p_two_sided: p, exact: true })
    } else {
        Ok(MannWhitney {
            u,
            p_two_sided: normal_p(u, na, nb, &pooled),
            exact: false,
        })
    }
}

/// Exact two-sided p of the rank sum of the first `na` entries of `ranks`,
/// over every way of drawing that many entries from the pooled ranks.
fn exact_p(ranks: &[f64], na: usize) -> f64 {
    let n = ranks.len();
    // doubled midranks are integers; count subsets of the smaller side
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let (m, observed) = if na <= n - na {
        (na, doubled[..na].iter().sum::<usize>())
    } else {
        (n - na, doubled[na..].iter().sum::<usize>())
    };
    let max_sum: usize = doubled.iter().sum();
    let mut ways = vec![vec![0.0f64; max_sum + 1]; m + 1];
    ways[0][0] = 1.0;
    let mut reach = 0;
    for &d in &doubled {
        reach += d;
        for k in (1..=m).rev() {
            let (lo, hi) = ways.split_at_mut(k);
            let (prev, cur) = (&lo[k - 1], &mut hi[0]);
            for s in (d..=reach.min(max_sum)).rev() {
                cur[s] += prev[s - d];
            }
        }
    }
    let dist = &ways[m];
    let total: f64 = dist.iter().sum();
    let below: f64 = dist[..=observed].iter().sum();
    let above: f64 = dist[observed..].iter().sum();
    (2.0 * below.min(above) / total).min(1.0)
}

fn normal_p(u: f64, na: f64, nb: f64, pooled: &[f64]) -> f64 {
    let n = na + nb;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        ties += (j as f64).powi(3) - j as f64;
        i += j;
    }
    let var = na * nb / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let dev = ((u - na * nb / 2.0).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    let std = Normal::standard();
    (2.0 * (1.0 - std.cdf(z))).min(1.0)
}

fn median(v: &[f64]) -> f64 {
    percentile(v, 50.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    HigherPre,
    HigherPost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub single_feature_uar: f64,
    pub mw_u_statistic: f64,
    pub p_value_two_sided: f64,
    pub direction: Direction,
}

/// Runs the full pipeline on each column alone and ranks by session UAR
/// (then by Mann-Whitney p, then column order). `top_k = 0` keeps all.
pub fn rank_features(
    table: &FeatureTable,
    settings: &LosoSettings,
    top_k: usize,
) -> Result<Vec<FeatureImportance>, PipelineError> {
    let mut ranked = (0..table.columns.len())
        .into_par_iter()
        .map(|c| {
            let single = table.select(&[c]);
            let out = pipeline::run_loso(&single, settings, &table.columns[c], None)?;
            let se = session_uar(&out.predictions)?;
            let values = |s: Session| -> Vec<f64> {
                table.rows.iter().filter(|r| r.session == s).map(|r| r.values[c]).collect()
            };
            let (pre, post) = (values(Session::PreTreatment), values(Session::PostTreatment));
            let mw = mann_whitney_two_sided(&pre, &post)?;
            Ok((
                c,
                FeatureImportance {
                    feature: table.columns[c].clone(),
                    single_feature_uar: se,
                    mw_u_statistic: mw.u,
                    p_value_two_sided: mw.p_two_sided,
                    direction: if median(&post) > median(&pre) {
                        Direction::HigherPost
                    } else {
                        Direction::HigherPre
                    },
                },
            ))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    ranked.sort_by(|(ca, a), (cb, b)| {
        b.single_feature_uar
            .total_cmp(&a.single_feature_uar)
            .then(a.p_value_two_sided.total_cmp(&b.p_value_two_sided))
            .then(ca.cmp(cb))
    });
    let mut out: Vec<FeatureImportance> = ranked.into_iter().map(|(_, f)| f).collect();
    if top_k > 0 {
        out.truncate(top_k);
    }
    Ok(out)
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub system: String,
    pub se_uar: f64,
    pub ci95: [f64; 2],
    pub male_uar: Option<f64>,
    pub female_uar: Option<f64>,
    pub sp_uar: BTreeMap<String, f64>,
    pub seed: u64,
    pub n_boot: usize,
    pub bootstrap_unit: BootstrapUnit,
    pub config: serde_json::Value,
    pub sessions: Vec<SessionPrediction>,
    pub folds: Vec<pipeline::FoldSummary>,
    pub feature_ranking: Vec<FeatureImportance>,
}

impl EvaluationReport {
    pub fn new(
        output: &SystemOutput,
        seed: u64,
        n_boot: usize,
        unit: BootstrapUnit,
        config: serde_json::Value,
    ) -> Result<Self, StatsError> {
        let s = &output.predictions;
        let (lo, hi) = bootstrap_ci(s, n_boot, seed, unit)?;
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            system: output.system.clone(),
            se_uar: session_uar(s)?,
            ci95: [lo, hi],
            male_uar: gender_uar(s, Gender::Male),
            female_uar: gender_uar(s, Gender::Female),
            sp_uar: speaker_uar(s).unwrap_or_default(),
            seed,
            n_boot,
            bootstrap_unit: unit,
            config,
            sessions: s.clone(),
            folds: output.folds.clone(),
            feature_ranking: Vec::new(),
        })
    }

    pub fn output(&self) -> SystemOutput {
        SystemOutput {
            system: self.system.clone(),
            predictions: self.sessions.clone(),
            folds: self.folds.clone(),
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v))
}

/// Plain-text table, one row per report.
pub fn render_table(reports: &[EvaluationReport]) -> String {
    let width = reports.iter().map(|r| r.system.len()).max().unwrap_or(6).max(6);
    let mut out = format!(
        "{:<width$}  {:>7}  {:>13}  {:>6}  {:>6}\n",
        "System", "SE_UAR", "95% CI", "male", "female"
    );
    out.push_str(&"-".repeat(width + 42));
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{:<width$}  {:>7}  {:>13}  {:>6}  {:>6}\n",
            r.system,
            pct(Some(r.se_uar)),
            format!("[{}, {}]", pct(Some(r.ci95[0])), pct(Some(r.ci95[1]))),
            pct(r.male_uar),
            pct(r.female_uar),
        ));
    }
    let ranked: Vec<&EvaluationReport> = reports.iter().filter(|r| !r.feature_ranking.is_empty()).collect();
    for r in ranked {
        out.push_str(&format!("\nTop features ({}):\n", r.system));
        for f in &r.feature_ranking {
            out.push_str(&format!(
                "  {:<32} {:>6}  p={:.3}  {:?}\n",
                f.feature,
                pct(Some(f.single_feature_uar)),
                f.p_value_two_sided,
                f.direction
            ));
        }
    }
    out
}

/// SVG scatter of per-speaker UAR, `x` against `y`, for speakers in both.
pub fn sp_uar_scatter_svg(x: &EvaluationReport, y: &EvaluationReport) -> String {
    let pairs: Vec<(&String, f64, f64)> = x
        .sp_uar
        .iter()
        .filter_map(|(s, a)| y.sp_uar.get(s).map(|b| (s, *a, *b)))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.iter().map(|p| (p.1, p.2)).unzip();
    let rho = spearman_rho(&xs, &ys).map_or_else(|_| "n/a".to_string(), |r| format!("{r:.2}"));
    let (size, margin) = (400.0, 50.0);
    let plot = size - 2.0 * margin;
    let px = |v: f64| margin + v * plot;
    let py = |v: f64| size - margin - v * plot;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">SP_UAR (Spearman rho = {rho})</text>\n\
         <rect x=\"{margin}\" y=\"{margin}\" width=\"{plot}\" height=\"{plot}\" fill=\"none\" stroke=\"black\"/>\n",
        size / 2.0
    );
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{v:.2}</text>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{v:.2}</text>\n",
            px(v),
            size - margin + 14.0,
            margin - 6.0,
            py(v) + 3.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n\
         <text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        size / 2.0,
        size - 12.0,
        escape(&x.system),
        size / 2.0,
        size / 2.0,
        escape(&y.system)
    ));
    for (s, a, b) in &pairs {
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"steelblue\" fill-opacity=\"0.6\"><title>{}</title></circle>\n",
            px(*a),
            py(*b),
            escape(s)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::InstancePrediction;
    use proptest::prelude::*;
    use rand::Rng;
    use Session::{PostTreatment as Post, PreTreatment as Pre};

    fn rec(speaker: usize, truth: Session, predicted: Session) -> SessionPrediction {
        SessionPrediction {
            speaker_id: format!("s{speaker:03}"),
            gender: if speaker.is_multiple_of(2) { Gender::Male } else { Gender::Female },
            session: truth,
            predicted,
            vote_margin: 1,
            mean_decision: 0.0,
            instance_predictions: vec![],
        }
    }

    #[test]
    fn uar_cases() {
        let t = [Pre, Pre, Post, Post];
        assert_eq!(uar(&t, &t).unwrap(), 1.0);
        assert_eq!(uar(&[Pre; 4], &t).unwrap(), 0.5);
        let mut truth = vec![Pre; 5];
        truth.extend([Post; 5]);
        let pred = [Pre, Pre, Pre, Pre, Post, Post, Post, Post, Pre, Pre];
        assert!((uar(&pred, &truth).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(uar(&[Pre], &[Pre]), Err(StatsError::SingleClassTruths));
    }

    #[test]
    fn bootstrap_cases() {
        let all: Vec<SessionPrediction> = (0..20).flat_map(|s| [rec(s, Pre, Pre), rec(s, Post, Post)]).collect();
        assert_eq!(bootstrap_ci(&all, 1000, 1, BootstrapUnit::Session).unwrap(), (1.0, 1.0));
        assert_eq!(bootstrap_ci(&all, 200, 1, BootstrapUnit::Speaker).unwrap(), (1.0, 1.0));

        // 70 hits in 100 balanced sessions
        let mixed: Vec<SessionPrediction> = (0..50)
            .flat_map(|s| {
                let flip = |t: Session| if t == Pre { Post } else { Pre };
                let ok = s < 35;
                [rec(s, Pre, if ok { Pre } else { flip(Pre) }), rec(s, Post, if ok { Post } else { flip(Post) })]
            })
            .collect();
        let (lo, hi) = bootstrap_ci(&mixed, 1000, 7, BootstrapUnit::Session).unwrap();
        let oracle = 2.0 * 1.96 * (0.21f64 / 100.0).sqrt();
        assert!(((hi - lo) - oracle).abs() <= 0.05, "{lo} {hi} vs {oracle}");
        assert!(lo <= hi);
        assert_eq!(bootstrap_ci(&mixed, 1000, 7, BootstrapUnit::Session).unwrap(), (lo, hi));
    }

    #[test]
    fn speaker_uar_cases() {
        let inst = |p: Session| InstancePrediction { source: "a".into(), predicted: p, decision: 0.0 };
        let mut pre = rec(1, Pre, Pre);
        pre.instance_predictions = vec![inst(Pre); 5];
        let mut post = rec(1, Post, Post);
        post.instance_predictions = vec![inst(Post); 5];
        let mut bad = post.clone();
        bad.instance_predictions = vec![inst(Pre); 5];
        assert_eq!(speaker_uar(&[pre.clone(), post]).unwrap()["s001"], 1.0);
        assert_eq!(speaker_uar(&[pre.clone(), bad]).unwrap()["s001"], 0.5);
        assert!(matches!(speaker_uar(&[pre]), Err(StatsError::SpeakerSingleClass(_))));
    }

    #[test]
    fn spearman_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman_rho(&x, &[2.0, 5.0, 7.0, 9.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&x, &[9.0, 5.0, 3.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(spearman_rho(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::ZeroVariance));
        // ranks of [1,2,2,3] are [1, 2.5, 2.5, 4]
        let rx = [1.0, 2.5, 2.5, 4.0];
        let ry = [1.0, 2.0, 3.0, 4.0];
        let m = 2.5;
        let num: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - m) * (b - m)).sum();
        let den = (rx.iter().map(|a| (a - m).powi(2)).sum::<f64>() * ry.iter().map(|b| (b - m).powi(2)).sum::<f64>()).sqrt();
        let rho = spearman_rho(&[1.0, 2.0, 2.0, 3.0], &ry).unwrap();
        assert!((rho - num / den).abs() < 1e-12);
    }

    /// Two-sided p by listing every assignment of pooled values to the
    /// first sample.
    fn brute_force_mw(a: &[f64], b: &[f64]) -> (f64, f64) {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        let u_of = |mask: u32| -> f64 {
            let (x, y): (Vec<usize>, Vec<usize>) = (0..n).partition(|i| mask & (1 << i) != 0);
            let (x, y): (Vec<f64>, Vec<f64>) = (x.iter().map(|&i| pooled[i]).collect(), y.iter().map(|&i| pooled[i]).collect());
            let mut u = 0.0;
            for p in &x {
                for q in &y {
                    u += if p > q { 1.0 } else if p == q { 0.5 } else { 0.0 };
                }
            }
            u
        };
        let observed = u_of((1u32 << a.len()) - 1);
        let (mut below, mut above, mut total) = (0.0, 0.0, 0.0);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            let u = u_of(mask);
            total += 1.0;
            if u <= observed + 1e-9 {
                below += 1.0;
            }
            if u >= observed - 1e-9 {
                above += 1.0;
            }
        }
        (observed, (2.0 * f64::min(below, above) / total).min(1.0))
    }

    #[test]
    fn mann_whitney_separated_three() {
        let r = mann_whitney_two_sided(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!(r.exact);
        assert_eq!(r.u, 0.0);
        assert_eq!(r.p_two_sided, 0.1);
        let same = mann_whitney_two_sided(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(same.p_two_sided >= 0.99);
    }

    #[test]
    fn mann_whitney_exact_equals_enumeration() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for na in 1..=6 {
            for nb in 1..=6 {
                for _ in 0..3 {
                    // small integer values force ties
                    let a: Vec<f64> = (0..na).map(|_| rng.random_range(0..5) as f64).collect();
                    let b: Vec<f64> = (0..nb).map(|_| rng.random_range(0..5) as f64).collect();
                    let r = mann_whitney_two_sided(&a, &b).unwrap();
                    let (u, p) = brute_force_mw(&a, &b);
                    assert_eq!(r.u, u);
                    assert!((r.p_two_sided - p).abs() < 1e-12, "{a:?} {b:?}: {} vs {p}", r.p_two_sided);
                }
            }
        }
    }

    #[test]
    fn mann_whitney_paths_agree() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal as Gauss};
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let g = Gauss::new(0.0, 1.0).unwrap();
        for shift in [0.0, 0.3, 0.6, 1.0] {
            let a: Vec<f64> = (0..15).map(|_| g.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..15).map(|_| g.sample(&mut rng) + shift).collect();
            let exact = mann_whitney(&a, &b, usize::MAX).unwrap();
            let approx = mann_whitney(&a, &b, 0).unwrap();
            assert!(exact.exact && !approx.exact);
            assert!((exact.p_two_sided - approx.p_two_sided).abs() <= 0.01, "{exact:?} {approx:?}");
        }
        assert!(!mann_whitney_two_sided(&[0.0; 25], &[1.0; 25]).unwrap().exact);
    }

    #[test]
    fn renders() {
        let all: Vec<SessionPrediction> = (0..6).flat_map(|s| [rec(s, Pre, Pre), rec(s, Post, Pre)]).collect();
        let out = SystemOutput { system: "A".into(), predictions: all, folds: vec![] };
        let r = EvaluationReport::new(&out, 1, 100, BootstrapUnit::Session, serde_json::json!({})).unwrap();
        assert_eq!(r.se_uar, 0.5);
        let table = render_table(std::slice::from_ref(&r));
        assert!(table.contains("50.0"));
        let svg = sp_uar_scatter_svg(&r, &r);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvaluationReport>(&json).unwrap(), r);
    }

    proptest! {
        #[test]
        fn uar_symmetries(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 2..40), rot in 0usize..40) {
            let s = |b: bool| if b { Pre } else { Post };
            let mut pred: Vec<Session> = pairs.iter().map(|p| s(p.0)).collect();
            let mut truth: Vec<Session> = pairs.iter().map(|p| s(p.1)).collect();
            prop_assume!(truth.contains(&Pre) && truth.contains(&Post));
            let base = uar(&pred, &truth).unwrap();
            let k = rot % pred.len();
            pred.rotate_left(k);
            truth.rotate_left(k);
            prop_assert!((uar(&pred, &truth).unwrap() - base).abs() < 1e-12);
            let flip = |v: &Vec<Session>| v.iter().map(|x| if *x == Pre { Post } else { Pre }).collect::<Vec<_>>();
            prop_assert!((uar(&flip(&pred), &flip(&truth)).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn spearman_self(x in prop::collection::vec(-100i32..100, 3..30)) {
            let x: Vec<f64> = x.into_iter().map(f64::from).collect();
            prop_assume!(x.iter().any(|v| *v != x[0]));
            prop_assert!((spearman_rho(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
