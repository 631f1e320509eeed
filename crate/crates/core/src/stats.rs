//! Human-alignment statistics: quadratic-weighted Cohen kappa, Pearson
//! correlation with two-sided p-values, Welch's two-sample t-test, and the
//! report joining human annotations with automatic reasoning scores.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("input length mismatch: {0} vs {1}")]
    InputMismatch(usize, usize),
    #[error("insufficient data: need at least {0} observations")]
    InsufficientData(usize),
    #[error("degenerate input: zero variance")]
    DegenerateInput,
    #[error("value {0} outside 1..={1}")]
    ValueOutOfRange(u32, usize),
    #[error("need at least 2 categories")]
    TooFewCategories,
    #[error("non-finite value in input")]
    NonFinite,
}

// ---------------------------------------------------------------------------
// Special functions: ln-gamma, regularized incomplete beta / gamma
// ---------------------------------------------------------------------------

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-13 for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Regularized lower incomplete gamma P(a, x): series for x < a + 1,
/// continued fraction otherwise.
fn reg_lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (sum.ln() + a * x.ln() - x - ln_gamma(a)).exp()
    } else {
        // Continued fraction for Q(a, x), then P = 1 - Q.
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let q = (a * x.ln() - x - ln_gamma(a)).exp() * h;
        1.0 - q
    }
}

/// CDF of Student's t distribution with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * reg_inc_beta(0.5 * df, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value for a t statistic.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    reg_inc_beta(0.5 * df, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Upper-tail chi-square probability Q(x; df).
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    (1.0 - reg_lower_gamma(0.5 * df, 0.5 * x)).clamp(0.0, 1.0)
}

/// Fisher's method for combining independent p-values.
pub fn fisher_combined_p(ps: &[f64]) -> f64 {
    if ps.is_empty() {
        return 1.0;
    }
    let x: f64 = ps.iter().map(|&p| -2.0 * p.clamp(1e-300, 1.0).ln()).sum();
    chi_square_sf(x, 2.0 * ps.len() as f64)
}

// ---------------------------------------------------------------------------
// Core tests
// ---------------------------------------------------------------------------

/// Quadratic-weighted Cohen kappa over values in 1..=n_categories:
/// kappa = 1 - sum(w * observed) / sum(w * expected) with
/// w_ij = (i - j)^2 / (k - 1)^2. When both raters are constant and identical
/// the expected weighted disagreement is zero and kappa is 1 by convention.
pub fn weighted_cohen_kappa(a: &[u32], b: &[u32], n_categories: usize) -> Result<f64, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::InputMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(StatsError::InsufficientData(2));
    }
    if n_categories < 2 {
        return Err(StatsError::TooFewCategories);
    }
    let k = n_categories;
    for &v in a.iter().chain(b.iter()) {
        if v < 1 || v as usize > k {
            return Err(StatsError::ValueOutOfRange(v, k));
        }
    }
    let n = a.len() as f64;
    let mut observed = vec![vec![0.0f64; k]; k];
    for (&x, &y) in a.iter().zip(b.iter()) {
        observed[(x - 1) as usize][(y - 1) as usize] += 1.0;
    }
    let row: Vec<f64> = observed.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..k).map(|j| observed.iter().map(|r| r[j]).sum()).collect();

    let denom_k = ((k - 1) * (k - 1)) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64 - j as f64) * (i as f64 - j as f64)) / denom_k;
            num += w * observed[i][j];
            den += w * row[i] * col[j] / n;
        }
    }
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PearsonResult {
    pub rho: f64,
    pub p_value: f64,
}

/// Sample Pearson correlation with a two-sided p-value from
/// t = rho * sqrt((n - 2) / (1 - rho^2)) against Student's t with n - 2
/// degrees of freedom.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<PearsonResult, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::InputMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(StatsError::InsufficientData(3));
    }
    if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::DegenerateInput);
    }
    let mut rho = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    // Algebraically exact correlations can land a few ulps inside +-1.
    if 1.0 - rho.abs() < 4.0 * f64::EPSILON {
        rho = rho.signum();
    }
    let df = nf - 2.0;
    let p_value = if 1.0 - rho * rho < 1e-15 {
        0.0
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        student_t_two_sided_p(t, df)
    };
    Ok(PearsonResult { rho, p_value })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

fn mean_and_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's two-sample t-test with Welch-Satterthwaite degrees of freedom and
/// a two-sided p-value.
pub fn welch_t_test(group_a: &[f64], group_b: &[f64]) -> Result<WelchResult, StatsError> {
    if group_a.len() < 2 || group_b.len() < 2 {
        return Err(StatsError::InsufficientData(2));
    }
    if group_a.iter().chain(group_b.iter()).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let na = group_a.len() as f64;
    let nb = group_b.len() as f64;
    let (ma, va) = mean_and_var(group_a);
    let (mb, vb) = mean_and_var(group_b);
    let sa = va / na;
    let sb = vb / nb;
    if sa + sb == 0.0 {
        // Zero variance in both groups.
        return Ok(if ma == mb {
            WelchResult {
                t: 0.0,
                df: na + nb - 2.0,
                p_value: 1.0,
            }
        } else {
            WelchResult {
                t: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
                df: na + nb - 2.0,
                p_value: 0.0,
            }
        });
    }
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let p_value = student_t_two_sided_p(t, df);
    Ok(WelchResult { t, df, p_value })
}

// ---------------------------------------------------------------------------
// Annotation model and alignment report
// ---------------------------------------------------------------------------

/// One annotator's judgment of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub annotator_id: String,
    /// 5-point Likert.
    pub coherence: u8,
    /// Binary: 1 when free of factual or logical errors.
    pub faithfulness: u8,
    /// 5-point Likert.
    pub insightfulness: u8,
}

impl AnnotationRecord {
    pub fn validate(&self) -> Result<(), StatsError> {
        if !(1..=5).contains(&self.coherence) {
            return Err(StatsError::ValueOutOfRange(self.coherence as u32, 5));
        }
        if self.faithfulness > 1 {
            return Err(StatsError::ValueOutOfRange(self.faithfulness as u32, 1));
        }
        if !(1..=5).contains(&self.insightfulness) {
            return Err(StatsError::ValueOutOfRange(self.insightfulness as u32, 5));
        }
        Ok(())
    }
}

/// How the per-dimension p-value for the averaged pairwise correlation is
/// reported: Fisher-combined across pairs, or the most conservative pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PCombination {
    #[default]
    Fisher,
    MaxPairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IaaRow {
    pub dimension: String,
    pub mean: f64,
    /// Quadratic-weighted kappa averaged over annotator pairs.
    pub kappa: f64,
    /// Pearson rho averaged over annotator pairs.
    pub avg_rho: f64,
    /// The reported p-value, per the configured combination rule.
    pub p_value: f64,
    /// Fisher-combined p across pairs.
    pub p_fisher: f64,
    /// Max pairwise p, the conservative alternative.
    pub p_max_pairwise: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCorrelationRow {
    pub metric: String,
    pub coherence_rho: f64,
    pub coherence_p: f64,
    pub insightfulness_rho: f64,
    pub insightfulness_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessSplitRow {
    pub measure: String,
    pub faithful_mean: f64,
    pub unfaithful_mean: f64,
    pub t: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationComparisonRow {
    pub metric: String,
    pub coherence_rho_with_verification: f64,
    pub coherence_rho_without_verification: f64,
}

/// Automatic scores for one sample's reasoning, joined by sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub sample_id: String,
    pub bleu: f64,
    pub rouge1_f1: f64,
    pub meteor: f64,
    pub embed_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub iaa: Vec<IaaRow>,
    pub metric_correlations: Vec<MetricCorrelationRow>,
    pub faithfulness_ttest: Vec<FaithfulnessSplitRow>,
    pub verification_comparison: Option<Vec<VerificationComparisonRow>>,
    pub n_joined: usize,
    pub n_annotated_without_scores: usize,
    pub n_scored_without_annotations: usize,
    pub n_faithful: usize,
    pub n_unfaithful: usize,
    pub n_faithfulness_ties: usize,
}

const METRIC_NAMES: [&str; 4] = ["bleu", "rouge1_f1", "meteor", "embed_score"];

fn metric_value(s: &SampleScores, name: &str) -> f64 {
    match name {
        "bleu" => s.bleu,
        "rouge1_f1" => s.rouge1_f1,
        "meteor" => s.meteor,
        "embed_score" => s.embed_score,
        _ => unreachable!("unknown metric {name}"),
    }
}

/// Inter-annotator agreement over all annotator pairs on shared samples.
pub fn inter_annotator_agreement(
    annotations: &[AnnotationRecord],
    p_combination: PCombination,
) -> Result<Vec<IaaRow>, StatsError> {
    for a in annotations {
        a.validate()?;
    }
    let mut by_annotator: BTreeMap<&str, BTreeMap<&str, &AnnotationRecord>> = BTreeMap::new();
    for a in annotations {
        by_annotator
            .entry(a.annotator_id.as_str())
            .or_default()
            .insert(a.sample_id.as_str(), a);
    }
    let annotators: Vec<&str> = by_annotator.keys().copied().collect();
    if annotators.len() < 2 {
        return Err(StatsError::InsufficientData(2));
    }

    // (name, per-record value, category count for kappa)
    let dims: [(&str, fn(&AnnotationRecord) -> u32, usize); 3] = [
        ("coherence", |a| a.coherence as u32, 5),
        // The binary dimension shifts 0/1 onto 1/2; quadratic weights on two
        // categories reduce to unweighted kappa.
        ("faithfulness", |a| a.faithfulness as u32 + 1, 2),
        ("insightfulness", |a| a.insightfulness as u32, 5),
    ];

    let mut rows = Vec::new();
    for (name, value, k) in dims {
        let all: Vec<f64> = annotations.iter().map(|a| value(a) as f64).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        // Report the mean on the dimension's native scale.
        let mean = if name == "faithfulness" { mean - 1.0 } else { mean };

        let mut kappas = Vec::new();
        let mut rhos = Vec::new();
        let mut ps = Vec::new();
        for i in 0..annotators.len() {
            for j in i + 1..annotators.len() {
                let a_map = &by_annotator[annotators[i]];
                let b_map = &by_annotator[annotators[j]];
                let shared: Vec<&str> = a_map
                    .keys()
                    .filter(|s| b_map.contains_key(*s))
                    .copied()
                    .collect();
                if shared.len() < 3 {
                    continue;
                }
                let va: Vec<u32> = shared.iter().map(|s| value(a_map[s])).collect();
                let vb: Vec<u32> = shared.iter().map(|s| value(b_map[s])).collect();
                kappas.push(weighted_cohen_kappa(&va, &vb, k)?);
                let fa: Vec<f64> = va.iter().map(|&v| v as f64).collect();
                let fb: Vec<f64> = vb.iter().map(|&v| v as f64).collect();
                match pearson(&fa, &fb) {
                    Ok(r) => {
                        rhos.push(r.rho);
                        ps.push(r.p_value);
                    }
                    // A constant annotator has no defined correlation for
                    // this pair; kappa still counts.
                    Err(StatsError::DegenerateInput) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        if kappas.is_empty() {
            return Err(StatsError::InsufficientData(3));
        }
        let p_fisher = fisher_combined_p(&ps);
        let p_max = ps.iter().cloned().fold(0.0f64, f64::max);
        rows.push(IaaRow {
            dimension: name.to_string(),
            mean,
            kappa: kappas.iter().sum::<f64>() / kappas.len() as f64,
            avg_rho: if rhos.is_empty() {
                0.0
            } else {
                rhos.iter().sum::<f64>() / rhos.len() as f64
            },
            p_value: match p_combination {
                PCombination::Fisher => p_fisher,
                PCombination::MaxPairwise => p_max,
            },
            p_fisher,
            p_max_pairwise: p_max,
            n_pairs: kappas.len(),
        });
    }
    Ok(rows)
}

/// Join annotations with automatic scores and produce the full alignment
/// report: inter-annotator agreement, metric-vs-human correlations, the
/// faithful/unfaithful two-sample comparison, and (when unverified-reference
/// scores are supplied) the with/without-verification correlation comparison.
pub fn alignment_report(
    annotations: &[AnnotationRecord],
    scores: &[SampleScores],
    unverified_scores: Option<&[SampleScores]>,
    p_combination: PCombination,
) -> Result<AlignmentReport, StatsError> {
    for a in annotations {
        a.validate()?;
    }
    let iaa = inter_annotator_agreement(annotations, p_combination)?;

    // Per-sample annotator means.
    struct SampleMeans {
        coherence: f64,
        insightfulness: f64,
        faithfulness: f64,
    }
    let mut grouped: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for a in annotations {
        grouped.entry(a.sample_id.as_str()).or_default().push(a);
    }
    let means: BTreeMap<&str, SampleMeans> = grouped
        .iter()
        .map(|(&sid, records)| {
            let n = records.len() as f64;
            (
                sid,
                SampleMeans {
                    coherence: records.iter().map(|r| r.coherence as f64).sum::<f64>() / n,
                    insightfulness: records.iter().map(|r| r.insightfulness as f64).sum::<f64>() / n,
                    faithfulness: records.iter().map(|r| r.faithfulness as f64).sum::<f64>() / n,
                },
            )
        })
        .collect();

    let score_map: BTreeMap<&str, &SampleScores> =
        scores.iter().map(|s| (s.sample_id.as_str(), s)).collect();

    let joined_ids: Vec<&str> = means
        .keys()
        .filter(|sid| score_map.contains_key(*sid))
        .copied()
        .collect();
    let n_joined = joined_ids.len();
    if n_joined < 3 {
        return Err(StatsError::InsufficientData(3));
    }
    let n_annotated_without_scores = means.len() - n_joined;
    let n_scored_without_annotations = score_map.len() - n_joined;

    let mut metric_correlations = Vec::new();
    for metric in METRIC_NAMES {
        let values: Vec<f64> = joined_ids
            .iter()
            .map(|sid| metric_value(score_map[sid], metric))
            .collect();
        let coherence: Vec<f64> = joined_ids.iter().map(|sid| means[sid].coherence).collect();
        let insight: Vec<f64> = joined_ids
            .iter()
            .map(|sid| means[sid].insightfulness)
            .collect();
        let c = pearson(&coherence, &values)?;
        let i = pearson(&insight, &values)?;
        metric_correlations.push(MetricCorrelationRow {
            metric: metric.to_string(),
            coherence_rho: c.rho,
            coherence_p: c.p_value,
            insightfulness_rho: i.rho,
            insightfulness_p: i.p_value,
        });
    }

    // Faithful majority split; exact ties are excluded and counted.
    let faithful_ids: BTreeSet<&str> = joined_ids
        .iter()
        .filter(|sid| means[*sid].faithfulness > 0.5)
        .copied()
        .collect();
    let unfaithful_ids: BTreeSet<&str> = joined_ids
        .iter()
        .filter(|sid| means[*sid].faithfulness < 0.5)
        .copied()
        .collect();
    let n_faithfulness_ties = n_joined - faithful_ids.len() - unfaithful_ids.len();

    let mut faithfulness_ttest = Vec::new();
    if faithful_ids.len() >= 2 && unfaithful_ids.len() >= 2 {
        let measures: Vec<(&str, Box<dyn Fn(&str) -> f64 + '_>)> = vec![
            ("coherence", Box::new(|sid: &str| means[sid].coherence)),
            ("insightfulness", Box::new(|sid: &str| means[sid].insightfulness)),
            ("bleu", Box::new(|sid: &str| score_map[sid].bleu)),
            ("rouge1_f1", Box::new(|sid: &str| score_map[sid].rouge1_f1)),
            ("meteor", Box::new(|sid: &str| score_map[sid].meteor)),
            ("embed_score", Box::new(|sid: &str| score_map[sid].embed_score)),
        ];
        for (name, getter) in measures {
            let fa: Vec<f64> = faithful_ids.iter().map(|sid| getter(sid)).collect();
            let un: Vec<f64> = unfaithful_ids.iter().map(|sid| getter(sid)).collect();
            let w = welch_t_test(&fa, &un)?;
            faithfulness_ttest.push(FaithfulnessSplitRow {
                measure: name.to_string(),
                faithful_mean: fa.iter().sum::<f64>() / fa.len() as f64,
                unfaithful_mean: un.iter().sum::<f64>() / un.len() as f64,
                t: w.t,
                p_value: w.p_value,
            });
        }
    }

    let verification_comparison = match unverified_scores {
        None => None,
        Some(unverified) => {
            let unverified_map: BTreeMap<&str, &SampleScores> =
                unverified.iter().map(|s| (s.sample_id.as_str(), s)).collect();
            let shared: Vec<&str> = joined_ids
                .iter()
                .filter(|sid| unverified_map.contains_key(*sid))
                .copied()
                .collect();
            if shared.len() < 3 {
                None
            } else {
                let coherence: Vec<f64> = shared.iter().map(|sid| means[sid].coherence).collect();
                let mut rows = Vec::new();
                for metric in METRIC_NAMES {
                    let with: Vec<f64> = shared
                        .iter()
                        .map(|sid| metric_value(score_map[sid], metric))
                        .collect();
                    let without: Vec<f64> = shared
                        .iter()
                        .map(|sid| metric_value(unverified_map[sid], metric))
                        .collect();
                    rows.push(VerificationComparisonRow {
                        metric: metric.to_string(),
                        coherence_rho_with_verification: pearson(&coherence, &with)?.rho,
                        coherence_rho_without_verification: pearson(&coherence, &without)?.rho,
                    });
                }
                Some(rows)
            }
        }
    };

    Ok(AlignmentReport {
        iaa,
        metric_correlations,
        faithfulness_ttest,
        verification_comparison,
        n_joined,
        n_annotated_without_scores,
        n_scored_without_annotations,
        n_faithful: faithful_ids.len(),
        n_unfaithful: unfaithful_ids.len(),
        n_faithfulness_ties,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kappa_perfect_agreement() {
        let a = [1, 2, 3, 4, 5];
        assert_eq!(weighted_cohen_kappa(&a, &a, 5).unwrap(), 1.0);
    }

    #[test]
    fn kappa_constant_identical_raters_convention() {
        assert_eq!(weighted_cohen_kappa(&[1, 1, 1], &[1, 1, 1], 5).unwrap(), 1.0);
    }

    #[test]
    fn kappa_constant_but_different_raters() {
        // Denominator is nonzero; computed normally.
        let k = weighted_cohen_kappa(&[1, 1, 1], &[2, 2, 2], 5).unwrap();
        assert!(k.is_finite());
        assert!(k < 1.0);
    }

    #[test]
    fn kappa_matches_direct_formula() {
        let a = [1u32, 3, 5, 2, 4];
        let b = [2u32, 3, 5, 1, 4];
        // Independent evaluation: explicit matrices, no shared code path.
        let k = 5usize;
        let n = a.len() as f64;
        let mut x = [[0.0f64; 5]; 5];
        for (&i, &j) in a.iter().zip(b.iter()) {
            x[(i - 1) as usize][(j - 1) as usize] += 1.0;
        }
        let mut row = [0.0; 5];
        let mut col = [0.0; 5];
        for i in 0..k {
            for j in 0..k {
                row[i] += x[i][j];
                col[j] += x[i][j];
            }
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..k {
            for j in 0..k {
                let w = ((i as f64 - j as f64).powi(2)) / 16.0;
                num += w * x[i][j];
                den += w * row[i] * col[j] / n;
            }
        }
        let expected = 1.0 - num / den;
        let got = weighted_cohen_kappa(&a, &b, 5).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn kappa_input_validation() {
        assert!(matches!(
            weighted_cohen_kappa(&[1, 2], &[1], 5),
            Err(StatsError::InputMismatch(2, 1))
        ));
        assert!(matches!(
            weighted_cohen_kappa(&[1, 6], &[1, 2], 5),
            Err(StatsError::ValueOutOfRange(6, 5))
        ));
    }

    #[test]
    fn kappa_symmetry() {
        let a = [1u32, 3, 2, 5, 4, 1, 2];
        let b = [2u32, 3, 2, 4, 4, 2, 1];
        let ab = weighted_cohen_kappa(&a, &b, 5).unwrap();
        let ba = weighted_cohen_kappa(&b, &a, 5).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn pearson_exact_linearity() {
        let r = pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(r.rho, 1.0);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn pearson_hand_computed() {
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r.rho - 0.6).abs() < 1e-12);
        assert!(r.p_value > 0.0 && r.p_value < 1.0);
    }

    #[test]
    fn pearson_degenerate_and_short() {
        assert_eq!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::DegenerateInput)
        );
        assert_eq!(
            pearson(&[1.0, 2.0], &[1.0, 2.0]),
            Err(StatsError::InsufficientData(3))
        );
    }

    #[test]
    fn pearson_affine_invariance() {
        let x = [0.3, 1.7, 0.9, 2.5, 1.1];
        let y = [4.0, 1.0, 3.0, 0.5, 2.0];
        let base = pearson(&x, &y).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| 3.5 * v + 2.0).collect();
        let same = pearson(&scaled, &y).unwrap();
        assert!((base.rho - same.rho).abs() < 1e-12);
    }

    #[test]
    fn t_cdf_symmetry_and_tails() {
        for df in 1..=50 {
            let c = student_t_cdf(0.0, df as f64);
            assert!((c - 0.5).abs() < 1e-12, "df {df}: {c}");
        }
        assert!(student_t_cdf(10.0, 5.0) > 0.999);
        assert!(student_t_cdf(-10.0, 5.0) < 0.001);
    }

    #[test]
    fn welch_identical_groups() {
        let g = [2.0, 2.0, 2.0];
        let r = welch_t_test(&g, &g).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn welch_hand_example() {
        // [1,2,3] vs [4,5,6]: means 2 and 5, var 1 each, se = sqrt(2/3),
        // t = -3 / sqrt(2/3), df = 4.
        let r = welch_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        let expected_t = -3.0 / (2.0f64 / 3.0).sqrt();
        assert!((r.t - expected_t).abs() < 1e-12);
        assert!((r.df - 4.0).abs() < 1e-12);
    }

    #[test]
    fn welch_rejects_tiny_groups() {
        assert_eq!(
            welch_t_test(&[1.0], &[1.0, 2.0]),
            Err(StatsError::InsufficientData(2))
        );
    }

    #[test]
    fn welch_sign_flip() {
        let a = [1.0, 2.5, 3.0, 4.0];
        let b = [2.0, 2.0, 5.0];
        let ab = welch_t_test(&a, &b).unwrap();
        let ba = welch_t_test(&b, &a).unwrap();
        assert!((ab.t + ba.t).abs() < 1e-12);
        assert!((ab.p_value - ba.p_value).abs() < 1e-12);
    }

    fn annotation(sample: &str, annotator: &str, c: u8, f: u8, i: u8) -> AnnotationRecord {
        AnnotationRecord {
            sample_id: sample.to_string(),
            annotator_id: annotator.to_string(),
            coherence: c,
            faithfulness: f,
            insightfulness: i,
        }
    }

    #[test]
    fn identical_annotators_reach_full_agreement() {
        let mut annotations = Vec::new();
        for s in 0..6 {
            for rater in ["r1", "r2", "r3"] {
                let c = 1 + (s % 5) as u8;
                annotations.push(annotation(&format!("s{s}"), rater, c, (s % 2) as u8, c));
            }
        }
        let iaa = inter_annotator_agreement(&annotations, PCombination::Fisher).unwrap();
        for row in iaa {
            assert!((row.kappa - 1.0).abs() < 1e-12, "{}", row.dimension);
            assert_eq!(row.n_pairs, 3);
        }
    }

    #[test]
    fn alignment_report_on_monotone_data() {
        let mut annotations = Vec::new();
        let mut scores = Vec::new();
        for s in 0..10 {
            let c = 1 + (s % 5) as u8;
            let sid = format!("s{s}");
            for rater in ["r1", "r2", "r3"] {
                annotations.push(annotation(&sid, rater, c, if s < 5 { 1 } else { 0 }, c));
            }
            let v = c as f64 / 10.0;
            scores.push(SampleScores {
                sample_id: sid,
                bleu: v,
                rouge1_f1: v + 0.05,
                meteor: v + 0.1,
                embed_score: v + 0.15,
            });
        }
        let report =
            alignment_report(&annotations, &scores, None, PCombination::Fisher).unwrap();
        assert_eq!(report.n_joined, 10);
        for row in &report.metric_correlations {
            assert!((row.coherence_rho - 1.0).abs() < 1e-9, "{}", row.metric);
        }
        assert_eq!(report.n_faithful, 5);
        assert_eq!(report.n_unfaithful, 5);
        assert_eq!(report.faithfulness_ttest.len(), 6);
    }

    proptest! {
        #[test]
        fn kappa_in_range_and_symmetric(
            pairs in proptest::collection::vec((1u32..=5, 1u32..=5), 2..40)
        ) {
            let a: Vec<u32> = pairs.iter().map(|(x, _)| *x).collect();
            let b: Vec<u32> = pairs.iter().map(|(_, y)| *y).collect();
            let ab = weighted_cohen_kappa(&a, &b, 5).unwrap();
            let ba = weighted_cohen_kappa(&b, &a, 5).unwrap();
            prop_assert!(ab <= 1.0 + 1e-12);
            prop_assert!((ab - ba).abs() < 1e-12);
        }

        #[test]
        fn welch_sign_flip_property(
            a in proptest::collection::vec(-5.0f64..5.0, 2..20),
            b in proptest::collection::vec(-5.0f64..5.0, 2..20)
        ) {
            let ab = welch_t_test(&a, &b).unwrap();
            let ba = welch_t_test(&b, &a).unwrap();
            if ab.t.is_finite() {
                prop_assert!((ab.t + ba.t).abs() < 1e-9);
                prop_assert!((ab.p_value - ba.p_value).abs() < 1e-9);
            }
        }
    }
}
