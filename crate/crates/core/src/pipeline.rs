//! Nested leave-one-speaker-out evaluation: fold planning, grid search on a
//! speaker-disjoint dev split, session max-vote and late fusion.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{self, AudioError, CohortManifest, Gender, Instance, InstanceKind, Session};
use crate::functionals::{self, FeatureRow, FeatureTable, FunctionalsError};
use crate::lld::{self, LldConfig, LldContours};
use crate::normalize::{self, NormError, NormMode, NormParams};
use crate::segment::{self, SegmentError, SegmentSpec};
use crate::stats::{self, StatsError};
use crate::svm::{self, Gram, Kernel, SvmConfig, SvmError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("need at least 4 speakers, got {0}")]
    TooFewSpeakers(usize),
    #[error("speaker {speaker} has no {what}")]
    MissingInstances { speaker: String, what: String },
    #[error("systems do not cover the same sessions: {0}")]
    CoverageMismatch(String),
    #[error("fusion needs at least 2 systems, got {0}")]
    TooFewSystems(usize),
    #[error("feature table has no columns")]
    NoFeatures,
    #[error("{path}: {source}")]
    Instance {
        path: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Functionals(#[from] FunctionalsError),
}

/// Which instances (and columns) a system is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemKind {
    /// All five vowels, every feature except MPT.
    Vowels,
    /// The read phrases, every feature except MPT.
    Phrases,
    /// The five vowels, MPT as the only feature.
    Mpt,
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SystemKind::Vowels => "vowels",
            SystemKind::Phrases => "phrases",
            SystemKind::Mpt => "mpt",
        })
    }
}

impl FromStr for SystemKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vowels" | "vowel" => Ok(SystemKind::Vowels),
            "phrases" | "phrase" => Ok(SystemKind::Phrases),
            "mpt" => Ok(SystemKind::Mpt),
            other => Err(format!("unknown kind `{other}` (expected vowels|phrases|mpt)")),
        }
    }
}

impl SystemKind {
    fn wants(self, kind: InstanceKind) -> bool {
        match self {
            SystemKind::Vowels | SystemKind::Mpt => kind.is_vowel(),
            SystemKind::Phrases => !kind.is_vowel(),
        }
    }
}

/// What the grid search maximizes on the dev speakers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DevMetric {
    /// UAR of max-voted session predictions.
    #[default]
    Session,
    /// UAR of the individual instance predictions.
    Instance,
}

impl FromStr for DevMetric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "session" => Ok(DevMetric::Session),
            "instance" => Ok(DevMetric::Instance),
            other => Err(format!("unknown dev metric `{other}` (expected session|instance)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LosoSettings {
    pub norm: NormMode,
    pub dev_metric: DevMetric,
}

impl Default for LosoSettings {
    fn default() -> Self {
        Self {
            norm: NormMode::Speaker,
            dev_metric: DevMetric::Session,
        }
    }
}

/// SVM label of a session: +1 for pre-treatment.
pub fn label(session: Session) -> f64 {
    match session {
        Session::PreTreatment => 1.0,
        Session::PostTreatment => -1.0,
    }
}

pub fn session_of(decision: f64) -> Session {
    if svm::sign(decision) > 0.0 {
        Session::PreTreatment
    } else {
        Session::PostTreatment
    }
}

// ---------------------------------------------------------------- features

/// Loads, segments and describes one instance. Phrases are never segmented.
pub fn extract_instance(
    instance: &Instance,
    spec: SegmentSpec,
    config: &LldConfig,
) -> Result<(FeatureRow, LldContours), PipelineError> {
    let signal = audio::load_wav(&instance.path)?;
    let signal = if signal.sample_rate() == audio::CANONICAL_RATE {
        signal
    } else {
        audio::resample(&signal, audio::CANONICAL_RATE)?
    };
    let spec = if instance.kind.is_vowel() { spec } else { SegmentSpec::whole() };
    let seg = segment::segment(instance, &signal, spec)?;
    let contours = lld::extract(&seg.signal, config);
    let vector = functionals::apply_functionals(&contours, &seg);
    Ok((vector.into(), contours))
}

/// Feature table of every instance in the manifest, in manifest order.
pub fn extract_features(
    manifest: &CohortManifest,
    spec: SegmentSpec,
    config: &LldConfig,
) -> Result<FeatureTable, PipelineError> {
    let rows = manifest
        .instances()
        .par_iter()
        .map(|inst| {
            extract_instance(inst, spec, config).map(|(row, _)| row).map_err(|e| PipelineError::Instance {
                path: inst.path.display().to_string(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureTable::new(rows))
}

/// Rows and columns a system is trained on. Every speaker in `table` must
/// have instances of the requested kind in both sessions.
pub fn system_table(table: &FeatureTable, kind: SystemKind) -> Result<FeatureTable, PipelineError> {
    let mpt = table.column_index("mpt_seconds");
    let columned = match kind {
        SystemKind::Mpt => table.select(&[mpt?]),
        _ => table.without(&["mpt_seconds"]),
    };
    let speakers: BTreeSet<&str> = table.rows.iter().map(|r| r.speaker_id.as_str()).collect();
    let rows: Vec<FeatureRow> = columned.rows.into_iter().filter(|r| kind.wants(r.kind)).collect();
    for s in speakers {
        for session in Session::ALL {
            if !rows.iter().any(|r| r.speaker_id == s && r.session == session) {
                return Err(PipelineError::MissingInstances {
                    speaker: s.to_string(),
                    what: format!("{kind} instances in the {session} session"),
                });
            }
        }
    }
    Ok(FeatureTable {
        columns: columned.columns,
        rows,
    })
}

// ---------------------------------------------------------------- folds

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub test_speaker: String,
    pub train_speakers: BTreeSet<String>,
    pub dev_speakers: BTreeSet<String>,
}

/// One fold per speaker. The remaining speakers are walked in id order
/// within each gender and alternately assigned to train and dev, train first.
pub fn plan_folds(speakers: &[(String, Gender)]) -> Result<Vec<FoldPlan>, PipelineError> {
    let mut sorted: Vec<(String, Gender)> = speakers.to_vec();
    sorted.sort();
    sorted.dedup_by(|a, b| a.0 == b.0);
    if sorted.len() < 4 {
        return Err(PipelineError::TooFewSpeakers(sorted.len()));
    }
    Ok(sorted
        .iter()
        .map(|(test, _)| {
            let mut next_is_dev: BTreeMap<Gender, bool> = BTreeMap::new();
            let mut plan = FoldPlan {
                test_speaker: test.clone(),
                train_speakers: BTreeSet::new(),
                dev_speakers: BTreeSet::new(),
            };
            for (s, g) in sorted.iter().filter(|(s, _)| s != test) {
                let dev = next_is_dev.entry(*g).or_insert(false);
                if *dev {
                    plan.dev_speakers.insert(s.clone());
                } else {
                    plan.train_speakers.insert(s.clone());
                }
                *dev = !*dev;
            }
            plan
        })
        .collect())
}

// ---------------------------------------------------------------- predictions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstancePrediction {
    /// Instance kind, or the system name for fused predictions.
    pub source: String,
    pub predicted: Session,
    pub decision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPrediction {
    pub speaker_id: String,
    pub gender: Gender,
    /// The true session.
    pub session: Session,
    pub predicted: Session,
    /// Winning votes minus losing votes.
    pub vote_margin: u32,
    pub mean_decision: f64,
    pub instance_predictions: Vec<InstancePrediction>,
}

impl SessionPrediction {
    pub fn correct(&self) -> bool {
        self.predicted == self.session
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub test_speaker: String,
    pub chosen: SvmConfig,
    pub dev_uar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemOutput {
    pub system: String,
    /// Sorted by (speaker, session).
    pub predictions: Vec<SessionPrediction>,
    pub folds: Vec<FoldSummary>,
}

/// Majority label of weighted votes. An exact tie goes to the side whose
/// votes have the larger mean strength, and then to pre-treatment.
pub fn max_vote(votes: &[(Session, f64)]) -> (Session, u32) {
    let tally = |s: Session| {
        let v: Vec<f64> = votes.iter().filter(|(l, _)| *l == s).map(|(_, w)| *w).collect();
        let mean = if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        (v.len() as u32, mean)
    };
    let (pre, pre_strength) = tally(Session::PreTreatment);
    let (post, post_strength) = tally(Session::PostTreatment);
    let winner = if pre != post {
        if pre > post { Session::PreTreatment } else { Session::PostTreatment }
    } else if post_strength > pre_strength {
        Session::PostTreatment
    } else {
        Session::PreTreatment
    };
    (winner, pre.abs_diff(post))
}

pub fn aggregate_session(
    speaker_id: &str,
    gender: Gender,
    truth: Session,
    instances: Vec<InstancePrediction>,
) -> SessionPrediction {
    let votes: Vec<(Session, f64)> = instances.iter().map(|p| (p.predicted, p.decision.abs())).collect();
    let (predicted, vote_margin) = max_vote(&votes);
    let mean_decision = if instances.is_empty() {
        0.0
    } else {
        instances.iter().map(|p| p.decision).sum::<f64>() / instances.len() as f64
    };
    SessionPrediction {
        speaker_id: speaker_id.to_string(),
        gender,
        session: truth,
        predicted,
        vote_margin,
        mean_decision,
        instance_predictions: instances,
    }
}

/// Session-level max-vote over systems, breaking ties by mean vote margin.
pub fn late_fuse(outputs: &[SystemOutput], name: &str) -> Result<SystemOutput, PipelineError> {
    if outputs.len() < 2 {
        return Err(PipelineError::TooFewSystems(outputs.len()));
    }
    let keys = |o: &SystemOutput| -> Vec<(String, Session)> {
        let mut k: Vec<_> = o.predictions.iter().map(|p| (p.speaker_id.clone(), p.session)).collect();
        k.sort();
        k
    };
    let reference = keys(&outputs[0]);
    if reference.windows(2).any(|w| w[0] == w[1]) {
        return Err(PipelineError::CoverageMismatch(format!("{} repeats a session", outputs[0].system)));
    }
    for o in &outputs[1..] {
        if keys(o) != reference {
            return Err(PipelineError::CoverageMismatch(format!(
                "{} and {} differ",
                outputs[0].system, o.system
            )));
        }
    }
    let lookup: Vec<BTreeMap<(String, Session), &SessionPrediction>> = outputs
        .iter()
        .map(|o| o.predictions.iter().map(|p| ((p.speaker_id.clone(), p.session), p)).collect())
        .collect();
    let predictions = reference
        .iter()
        .map(|key| {
            let per: Vec<&SessionPrediction> = lookup.iter().map(|m| m[key]).collect();
            let votes: Vec<(Session, f64)> = per.iter().map(|p| (p.predicted, p.vote_margin as f64)).collect();
            let (predicted, vote_margin) = max_vote(&votes);
            SessionPrediction {
                speaker_id: key.0.clone(),
                gender: per[0].gender,
                session: key.1,
                predicted,
                vote_margin,
                mean_decision: per.iter().map(|p| p.mean_decision).sum::<f64>() / per.len() as f64,
                instance_predictions: outputs
                    .iter()
                    .zip(&per)
                    .map(|(o, p)| InstancePrediction {
                        source: o.system.clone(),
                        predicted: p.predicted,
                        decision: p.mean_decision,
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(SystemOutput {
        system: name.to_string(),
        predictions,
        folds: Vec::new(),
    })
}

// ---------------------------------------------------------------- audit

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AuditStage {
    /// Rows a set of normalization parameters was fitted on; `speaker` is the
    /// speaker whose parameters they are, for per-speaker normalization.
    NormFit { speaker: Option<String> },
    GridTrain,
    FinalTrain,
}

/// Observes which rows each stage of a fold reads.
pub trait AuditHook: Sync {
    fn record(&self, fold: &FoldPlan, stage: &AuditStage, fingerprints: &[u64]);
}

/// Stable identity of a feature row (its ids and raw values).
pub fn fingerprint(row: &FeatureRow) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    row.speaker_id.hash(&mut h);
    row.session.hash(&mut h);
    row.kind.hash(&mut h);
    for v in &row.values {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

// ---------------------------------------------------------------- LOSO

struct Data<'a> {
    rows: Vec<&'a [f64]>,
    speakers: Vec<&'a str>,
    table: &'a FeatureTable,
    fingerprints: Vec<u64>,
}

impl Data<'_> {
    fn indices(&self, set: &BTreeSet<String>) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| set.contains(self.speakers[i])).collect()
    }
}

fn predict_sessions(
    model: &svm::SvmModel,
    data: &Data,
    normalized: &[Vec<f64>],
    idx: &[usize],
) -> Result<Vec<SessionPrediction>, PipelineError> {
    let mut groups: BTreeMap<(String, Session), (Gender, Vec<InstancePrediction>)> = BTreeMap::new();
    for (k, &i) in idx.iter().enumerate() {
        let r = &data.table.rows[i];
        let d = model.decision(&normalized[k])?;
        groups
            .entry((r.speaker_id.clone(), r.session))
            .or_insert_with(|| (r.gender, Vec::new()))
            .1
            .push(InstancePrediction {
                source: r.kind.to_string(),
                predicted: session_of(d),
                decision: d,
            });
    }
    Ok(groups
        .into_iter()
        .map(|((s, session), (g, inst))| aggregate_session(&s, g, session, inst))
        .collect())
}

fn dev_score(metric: DevMetric, sessions: &[SessionPrediction]) -> Result<f64, StatsError> {
    match metric {
        DevMetric::Session => stats::uar(
            &sessions.iter().map(|p| p.predicted).collect::<Vec<_>>(),
            &sessions.iter().map(|p| p.session).collect::<Vec<_>>(),
        ),
        DevMetric::Instance => {
            let (pred, truth): (Vec<Session>, Vec<Session>) = sessions
                .iter()
                .flat_map(|s| s.instance_predictions.iter().map(move |p| (p.predicted, s.session)))
                .unzip();
            stats::uar(&pred, &truth)
        }
    }
}

/// Result of one grid search: the winner and every cell's dev score.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: SvmConfig,
    pub best_score: f64,
    pub scores: Vec<(SvmConfig, f64)>,
}

/// Trains every cell on `train` and scores it on `dev`. Ties keep the
/// earlier cell in [`SvmConfig::grid`] order (lower cost, then
/// linear < polynomial < RBF).
pub fn grid_search<R: AsRef<[f64]> + Sync>(
    train_x: &[R],
    train_y: &[f64],
    score: impl Fn(&svm::SvmModel) -> Result<f64, PipelineError> + Sync,
    grid: &[SvmConfig],
) -> Result<GridResult, PipelineError> {
    let kernels: BTreeSet<Kernel> = grid.iter().map(|c| c.kernel).collect();
    let grams: BTreeMap<Kernel, Gram> = kernels
        .into_par_iter()
        .map(|k| Gram::new(train_x, k).map(|g| (k, g)))
        .collect::<Result<_, _>>()?;
    let scores: Vec<(SvmConfig, f64)> = grid
        .par_iter()
        .map(|cfg| {
            let m = svm::train_with_gram(train_x, train_y, cfg.cost, &grams[&cfg.kernel])?;
            Ok((*cfg, score(&m)?))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut best = 0;
    for (i, (_, s)) in scores.iter().enumerate() {
        if *s > scores[best].1 {
            best = i;
        }
    }
    Ok(GridResult {
        best: scores[best].0,
        best_score: scores[best].1,
        scores,
    })
}

fn run_fold(
    data: &Data,
    plan: &FoldPlan,
    settings: &LosoSettings,
    speaker_params: Option<&NormParams>,
    audit: Option<&dyn AuditHook>,
) -> Result<(Vec<SessionPrediction>, FoldSummary), PipelineError> {
    let train = data.indices(&plan.train_speakers);
    let dev = data.indices(&plan.dev_speakers);
    let test = data.indices(&BTreeSet::from([plan.test_speaker.clone()]));
    let mut pool: Vec<usize> = train.iter().chain(&dev).copied().collect();
    pool.sort_unstable();

    let report = |stage: AuditStage, idx: &[usize]| {
        if let Some(a) = audit {
            let fp: Vec<u64> = idx.iter().map(|&i| data.fingerprints[i]).collect();
            a.record(plan, &stage, &fp);
        }
    };
    let rows = |idx: &[usize]| -> Vec<&[f64]> { idx.iter().map(|&i| data.rows[i]).collect() };
    let spk = |idx: &[usize]| -> Vec<&str> { idx.iter().map(|&i| data.speakers[i]).collect() };
    let labels = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| label(data.table.rows[i].session)).collect() };
    let fit = |idx: &[usize]| -> Result<NormParams, PipelineError> {
        match speaker_params {
            Some(p) => {
                let mut by_speaker: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                for &i in idx {
                    by_speaker.entry(data.speakers[i]).or_default().push(i);
                }
                for (s, group) in by_speaker {
                    report(AuditStage::NormFit { speaker: Some(s.to_string()) }, &group);
                }
                Ok(p.clone())
            }
            None => {
                report(AuditStage::NormFit { speaker: None }, idx);
                Ok(normalize::fit_standard(&rows(idx))?)
            }
        }
    };

    let grid_params = fit(&train)?;
    let train_x = grid_params.apply(&rows(&train), &spk(&train))?;
    let dev_x = grid_params.apply(&rows(&dev), &spk(&dev))?;
    report(AuditStage::GridTrain, &train);
    let result = grid_search(
        &train_x,
        &labels(&train),
        |m| Ok(dev_score(settings.dev_metric, &predict_sessions(m, data, &dev_x, &dev)?)?),
        &SvmConfig::grid(),
    )?;

    let final_params = fit(&pool)?;
    if speaker_params.is_some() {
        // each speaker's own parameters, the test speaker included
        report(
            AuditStage::NormFit { speaker: Some(plan.test_speaker.clone()) },
            &test,
        );
    }
    let pool_x = final_params.apply(&rows(&pool), &spk(&pool))?;
    let test_x = final_params.apply(&rows(&test), &spk(&test))?;
    report(AuditStage::FinalTrain, &pool);
    let model = svm::train(&pool_x, &labels(&pool), result.best)?;
    let predictions = predict_sessions(&model, data, &test_x, &test)?;
    Ok((
        predictions,
        FoldSummary {
            test_speaker: plan.test_speaker.clone(),
            chosen: result.best,
            dev_uar: result.best_score,
        },
    ))
}

/// Nested LOSO over every speaker in `table` (see [`system_table`]).
pub fn run_loso(
    table: &FeatureTable,
    settings: &LosoSettings,
    name: &str,
    audit: Option<&dyn AuditHook>,
) -> Result<SystemOutput, PipelineError> {
    if table.columns.is_empty() {
        return Err(PipelineError::NoFeatures);
    }
    let mut genders: BTreeMap<&str, Gender> = BTreeMap::new();
    let mut seen: HashSet<(&str, Session)> = HashSet::new();
    for r in &table.rows {
        genders.insert(&r.speaker_id, r.gender);
        seen.insert((&r.speaker_id, r.session));
    }
    for s in genders.keys() {
        for session in Session::ALL {
            if !seen.contains(&(*s, session)) {
                return Err(PipelineError::MissingInstances {
                    speaker: s.to_string(),
                    what: format!("instances in the {session} session"),
                });
            }
        }
    }
    let speakers: Vec<(String, Gender)> = genders.iter().map(|(s, g)| (s.to_string(), *g)).collect();
    let plans = plan_folds(&speakers)?;
    let data = Data {
        rows: table.rows.iter().map(|r| r.values.as_slice()).collect(),
        speakers: table.rows.iter().map(|r| r.speaker_id.as_str()).collect(),
        table,
        fingerprints: table.rows.iter().map(fingerprint).collect(),
    };
    // per-speaker parameters never depend on the fold
    let speaker_params = match settings.norm {
        NormMode::Speaker => Some(normalize::fit_speaker(&data.rows, &data.speakers)?),
        NormMode::Standard => None,
    };
    let folds = plans
        .par_iter()
        .map(|p| run_fold(&data, p, settings, speaker_params.as_ref(), audit))
        .collect::<Result<Vec<_>, _>>()?;
    let mut predictions = Vec::new();
    let mut summaries = Vec::new();
    for (p, s) in folds {
        predictions.extend(p);
        summaries.push(s);
    }
    predictions.sort_by(|a, b| (&a.speaker_id, a.session).cmp(&(&b.speaker_id, b.session)));
    Ok(SystemOutput {
        system: name.to_string(),
        predictions,
        folds: summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::Vowel;
    use crate::segment::SegmentSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::sync::Mutex;

    fn sp(ids: &[&str]) -> Vec<(String, Gender)> {
        ids.iter().map(|s| (s.to_string(), Gender::Unspecified)).collect()
    }

    #[test]
    fn four_speaker_plan() {
        let plans = plan_folds(&sp(&["s3", "s1", "s4", "s2"])).unwrap();
        assert_eq!(plans.len(), 4);
        let p = &plans[0];
        assert_eq!(p.test_speaker, "s1");
        assert_eq!(p.train_speakers, BTreeSet::from(["s2".to_string(), "s4".to_string()]));
        assert_eq!(p.dev_speakers, BTreeSet::from(["s3".to_string()]));
        assert!(matches!(plan_folds(&sp(&["a", "b", "c"])), Err(PipelineError::TooFewSpeakers(3))));
    }

    #[test]
    fn fifty_speaker_plan() {
        let speakers: Vec<(String, Gender)> = (1..=50)
            .map(|i| (format!("spk{i:02}"), if i % 2 == 0 { Gender::Female } else { Gender::Male }))
            .collect();
        let plans = plan_folds(&speakers).unwrap();
        assert_eq!(plans.len(), 50);
        let all: BTreeSet<String> = speakers.iter().map(|s| s.0.clone()).collect();
        let mut tested = BTreeSet::new();
        for p in &plans {
            assert!(tested.insert(p.test_speaker.clone()));
            assert!(p.train_speakers.is_disjoint(&p.dev_speakers));
            assert!(!p.train_speakers.contains(&p.test_speaker));
            assert!(!p.dev_speakers.contains(&p.test_speaker));
            let mut union: BTreeSet<String> = p.train_speakers.union(&p.dev_speakers).cloned().collect();
            union.insert(p.test_speaker.clone());
            assert_eq!(union, all);
            assert_eq!(p.train_speakers.len(), 25);
            assert_eq!(p.dev_speakers.len(), 24);
            // both genders on both sides
            let females = |s: &BTreeSet<String>| s.iter().filter(|id| id[3..].parse::<u32>().unwrap() % 2 == 0).count();
            assert!(females(&p.dev_speakers) >= 12 && females(&p.train_speakers) >= 12);
        }
        assert_eq!(tested, all);
    }

    fn vote(s: Session, d: f64) -> InstancePrediction {
        InstancePrediction {
            source: "x".into(),
            predicted: s,
            decision: d,
        }
    }

    use Session::{PostTreatment as Post, PreTreatment as Pre};

    #[test]
    fn aggregation_rules() {
        let p = aggregate_session(
            "s",
            Gender::Male,
            Pre,
            vec![vote(Pre, 0.5), vote(Pre, 0.2), vote(Post, -2.0), vote(Pre, 0.1), vote(Post, -0.3)],
        );
        assert_eq!((p.predicted, p.vote_margin), (Pre, 1));

        let mut tie = Vec::new();
        for _ in 0..10 {
            tie.push(vote(Pre, 0.3));
            tie.push(vote(Post, -0.2));
        }
        let p = aggregate_session("s", Gender::Male, Post, tie);
        assert_eq!((p.predicted, p.vote_margin), (Pre, 0));

        let p = aggregate_session("s", Gender::Male, Post, vec![vote(Post, -0.4)]);
        assert_eq!(p.predicted, Post);
        // a perfect tie in count and strength goes to pre
        assert_eq!(max_vote(&[(Post, 1.0), (Pre, 1.0)]).0, Pre);
        assert_eq!(max_vote(&[(Post, 1.5), (Pre, 1.0)]).0, Post);
    }

    fn system(name: &str, correct: impl Fn(usize) -> bool) -> SystemOutput {
        let mut predictions = Vec::new();
        for i in 1..=50 {
            for session in Session::ALL {
                let wrong = if session == Pre { Post } else { Pre };
                predictions.push(SessionPrediction {
                    speaker_id: format!("s{i:02}"),
                    gender: Gender::Female,
                    session,
                    predicted: if correct(i) { session } else { wrong },
                    vote_margin: 1,
                    mean_decision: 0.0,
                    instance_predictions: vec![],
                });
            }
        }
        SystemOutput {
            system: name.into(),
            predictions,
            folds: vec![],
        }
    }

    #[test]
    fn fusion_follows_the_majority() {
        let a = system("A", |i| i <= 30);
        let b = system("B", |i| (11..=40).contains(&i));
        let c = system("C", |i| i >= 21);
        let fused = late_fuse(&[a.clone(), b.clone(), c.clone()], "A+B+C").unwrap();
        // oracle: speakers correct in at least two of the sets
        let majority: usize = (1..=50)
            .filter(|i| [*i <= 30, (11..=40).contains(i), *i >= 21].iter().filter(|x| **x).count() >= 2)
            .count();
        assert_eq!(majority, 30);
        let correct = fused.predictions.iter().filter(|p| p.correct()).count();
        assert_eq!(correct, 2 * majority);

        let same = late_fuse(&[a.clone(), a.clone(), a.clone()], "AAA").unwrap();
        for (x, y) in same.predictions.iter().zip(&a.predictions) {
            assert_eq!(x.predicted, y.predicted);
        }

        let mut short = b.clone();
        short.predictions.pop();
        assert!(matches!(late_fuse(&[a.clone(), short], "x"), Err(PipelineError::CoverageMismatch(_))));
        assert!(matches!(late_fuse(&[a], "x"), Err(PipelineError::TooFewSystems(1))));
    }

    /// Table of `n` speakers × 5 vowels per session with features drawn
    /// from N(0,1), plus `shift` added to post-treatment rows and a
    /// per-speaker offset of scale `spread`.
    fn planted_table(n: usize, dim: usize, shift: f64, seed: u64) -> FeatureTable {
        planted_table_with(n, dim, shift, 3.0, seed)
    }

    fn planted_table_with(n: usize, dim: usize, shift: f64, spread: f64, seed: u64) -> FeatureTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        for s in 0..n {
            let offset: Vec<f64> = (0..dim).map(|_| spread * d.sample(&mut rng)).collect();
            for session in Session::ALL {
                for v in Vowel::ALL {
                    let values = (0..dim)
                        .map(|j| {
                            let planted = if session == Post && j == 0 { shift } else { 0.0 };
                            offset[j] + d.sample(&mut rng) + planted
                        })
                        .collect();
                    rows.push(FeatureRow {
                        speaker_id: format!("s{s:03}"),
                        session,
                        gender: if s % 2 == 0 { Gender::Male } else { Gender::Female },
                        kind: InstanceKind::Vowel(v),
                        spec: SegmentSpec::whole(),
                        values,
                    });
                }
            }
        }
        FeatureTable {
            columns: (0..dim).map(|j| format!("x{j}")).collect(),
            rows,
        }
    }

    #[test]
    fn planted_shift_is_found() {
        let t = planted_table(12, 3, 10.0, 1);
        let out = run_loso(&t, &LosoSettings::default(), "planted", None).unwrap();
        assert_eq!(out.predictions.len(), 24);
        for s in 0..12 {
            let id = format!("s{s:03}");
            let sessions: Vec<Session> = out.predictions.iter().filter(|p| p.speaker_id == id).map(|p| p.session).collect();
            assert_eq!(sessions, vec![Pre, Post]);
        }
        assert!(out.predictions.iter().all(SessionPrediction::correct));
        let std = run_loso(&t, &LosoSettings { norm: NormMode::Standard, ..Default::default() }, "planted", None).unwrap();
        assert_eq!(std.folds.len(), 12);
    }

    #[test]
    fn null_cohort_is_at_chance() {
        use statrs::distribution::{Binomial, DiscreteCDF};
        // independent sessions: no speaker offsets, one-pass normalization
        let t = planted_table_with(50, 4, 0.0, 0.0, 2);
        let settings = LosoSettings { norm: NormMode::Standard, ..Default::default() };
        let out = run_loso(&t, &settings, "null", None).unwrap();
        let hits = out.predictions.iter().filter(|p| p.correct()).count() as u64;
        let b = Binomial::new(0.5, 100).unwrap();
        let (lo, hi) = (b.inverse_cdf(0.025), b.inverse_cdf(0.975));
        assert!((lo..=hi).contains(&hits), "{hits} outside [{lo}, {hi}]");
    }

    #[test]
    fn grid_prefers_rbf_on_xor() {
        // instances scattered around the four XOR corners
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = Normal::new(0.0, 0.15).unwrap();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let (a, b) = ([1.0, -1.0][i % 2], [1.0, -1.0][(i / 2) % 2]);
            x.push(vec![a + d.sample(&mut rng), b + d.sample(&mut rng)]);
            y.push(if a * b > 0.0 { 1.0 } else { -1.0 });
        }
        let (dev_x, dev_y) = (x.split_off(24), y.split_off(24));
        let score = |m: &svm::SvmModel| -> Result<f64, PipelineError> {
            let pred: Vec<Session> = dev_x.iter().map(|r| session_of(m.decision(r).unwrap())).collect();
            let truth: Vec<Session> = dev_y.iter().map(|&l| session_of(l)).collect();
            Ok(stats::uar(&pred, &truth)?)
        };
        let grid = SvmConfig::grid();
        let r = grid_search(&x, &y, score, &grid).unwrap();
        assert_eq!(r.scores.len(), 27);
        assert_eq!(r.best.kernel, Kernel::Rbf, "{:?}", r.scores);
        assert_eq!(r.best_score, 1.0);
    }

    #[test]
    fn grid_ties_keep_the_smaller_cost() {
        let x = vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]];
        let y = vec![-1.0, -1.0, 1.0, 1.0];
        let r = grid_search(&x, &y, |_| Ok(1.0), &SvmConfig::grid()).unwrap();
        assert_eq!(r.best, SvmConfig::new(0.0001, Kernel::Linear).unwrap());
    }

    struct Recorder(Mutex<Vec<(String, AuditStage, Vec<u64>)>>);

    impl AuditHook for Recorder {
        fn record(&self, fold: &FoldPlan, stage: &AuditStage, fp: &[u64]) {
            self.0.lock().unwrap().push((fold.test_speaker.clone(), stage.clone(), fp.to_vec()));
        }
    }

    #[test]
    fn test_rows_never_reach_fitting() {
        let t = planted_table(6, 2, 3.0, 5);
        for norm in [NormMode::Standard, NormMode::Speaker] {
            let rec = Recorder(Mutex::new(Vec::new()));
            run_loso(&t, &LosoSettings { norm, ..Default::default() }, "audit", Some(&rec)).unwrap();
            let log = rec.0.into_inner().unwrap();
            let tested: BTreeSet<&str> = log.iter().map(|(s, _, _)| s.as_str()).collect();
            assert_eq!(tested.len(), 6);
            for (test, stage, fps) in &log {
                let own: HashSet<u64> = t.rows.iter().filter(|r| &r.speaker_id == test).map(fingerprint).collect();
                let touches = fps.iter().any(|f| own.contains(f));
                let allowed = matches!(stage, AuditStage::NormFit { speaker: Some(s) } if s == test);
                assert!(!touches || allowed, "{norm}: {stage:?} read rows of {test}");
            }
            assert!(log.iter().any(|(_, s, _)| *s == AuditStage::FinalTrain));
        }
    }

    #[test]
    fn system_tables() {
        let mut rows = Vec::new();
        for s in ["a", "b"] {
            for session in Session::ALL {
                for kind in [InstanceKind::Vowel(Vowel::A), InstanceKind::Phrase(1)] {
                    let mut values = vec![0.0; functionals::FeatureRegistry::global().len()];
                    *values.last_mut().unwrap() = 4.0;
                    rows.push(FeatureRow {
                        speaker_id: s.into(),
                        session,
                        gender: Gender::Male,
                        kind,
                        spec: SegmentSpec::whole(),
                        values,
                    });
                }
            }
        }
        let table = FeatureTable::new(rows);
        let mpt = system_table(&table, SystemKind::Mpt).unwrap();
        assert_eq!(mpt.columns, vec!["mpt_seconds".to_string()]);
        assert_eq!(mpt.rows.len(), 4);
        let v = system_table(&table, SystemKind::Vowels).unwrap();
        assert_eq!(v.columns.len(), table.columns.len() - 1);
        assert!(v.rows.iter().all(|r| r.kind.is_vowel()));
        let mut partial = table.clone();
        partial.rows.retain(|r| !(r.speaker_id == "b" && r.kind.is_vowel() && r.session == Post));
        assert!(matches!(
            system_table(&partial, SystemKind::Vowels),
            Err(PipelineError::MissingInstances { .. })
        ));
    }
}
