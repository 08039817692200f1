//! Concordance, Kaplan–Meier, log-rank and median stratification.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hetgraph::SurvivalLabel;

/// Significance level for the log-rank flag.
pub const SIGNIFICANCE: f64 = 0.05;

fn check_len<A, B>(a: &[A], b: &[B]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("{} risks for {} labels", a.len(), b.len())));
    }
    Ok(())
}

/// Binary indexed tree over risk ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's C over pairs with `t_i < t_j` and `δ_i = 1`; tied risks score 1/2.
pub fn concordance_index(risks: &[f64], labels: &[SurvivalLabel<f64>]) -> Result<f64> {
    check_len(risks, labels)?;
    if risks.iter().any(|r| r.is_nan()) {
        return Err(Error::Numeric("NaN risk score".into()));
    }
    let mut sorted: Vec<f64> = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank = |r: f64| sorted.partition_point(|&v| v < r);

    let mut order: Vec<usize> = (0..risks.len()).collect();
    order.sort_by(|&a, &b| labels[b].time.total_cmp(&labels[a].time));
    let mut tree = Fenwick::new(sorted.len());
    let (mut inserted, mut pairs, mut concordant, mut tied) = (0u64, 0u64, 0u64, 0u64);
    let mut k = 0;
    while k < order.len() {
        let t = labels[order[k]].time;
        let end = k + order[k..].iter().take_while(|&&i| labels[i].time == t).count();
        // Everything in the tree has a strictly later time.
        for &i in order[k..end].iter().filter(|&&i| labels[i].event) {
            let r = rank(risks[i]);
            let lower = tree.below(r);
            let equal = tree.below(r + 1) - lower;
            pairs += inserted;
            concordant += lower;
            tied += equal;
        }
        for &i in &order[k..end] {
            tree.add(rank(risks[i]));
            inserted += 1;
        }
        k = end;
    }
    if pairs == 0 {
        return Err(Error::UndefinedStatistic("no comparable pairs for the C-index".into()));
    }
    Ok((2 * concordant + tied) as f64 / (2 * pairs) as f64)
}

/// Step function `S(t)`, constant between the listed event times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// `S` just after each time.
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl SurvivalCurve {
    /// `S(t)`; 1 before the first event.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }
}

/// Product-limit estimate over the distinct event times.
pub fn km_estimator(labels: &[SurvivalLabel<f64>]) -> SurvivalCurve {
    let mut sorted: Vec<&SurvivalLabel<f64>> = labels.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut curve = SurvivalCurve { times: vec![], survival: vec![], at_risk: vec![], events: vec![] };
    let mut s = 1.0;
    let mut n = sorted.len();
    let mut k = 0;
    while k < sorted.len() {
        let t = sorted[k].time;
        let group = sorted[k..].iter().take_while(|l| l.time == t).count();
        let d = sorted[k..k + group].iter().filter(|l| l.event).count();
        if d > 0 {
            s *= 1.0 - d as f64 / n as f64;
            curve.times.push(t);
            curve.survival.push(s);
            curve.at_risk.push(n);
            curve.events.push(d);
        }
        n -= group;
        k += group;
    }
    curve
}

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`: series below `a + 1`,
/// Lentz continued fraction above.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let ln_pre = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..1000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (1.0 - sum * ln_pre.exp()).max(0.0)
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (ln_pre.exp() * h).min(1.0)
    }
}

/// Upper tail of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_sf(x: f64, dof: f64) -> f64 {
    gamma_q(dof / 2.0, x / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRank {
    pub chi2: f64,
    pub p_value: f64,
    /// Observed events in the first group.
    pub observed: f64,
    /// Expected events in the first group under a common hazard.
    pub expected: f64,
    pub variance: f64,
    pub significant: bool,
}

/// Two-group log-rank test with hypergeometric variance.
pub fn logrank_test(a: &[SurvivalLabel<f64>], b: &[SurvivalLabel<f64>]) -> Result<LogRank> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::UndefinedStatistic("log-rank needs two nonempty groups".into()));
    }
    let mut all: Vec<(f64, bool, bool)> = a
        .iter()
        .map(|l| (l.time, l.event, true))
        .chain(b.iter().map(|l| (l.time, l.event, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    if !all.iter().any(|x| x.1) {
        return Err(Error::UndefinedStatistic("log-rank needs at least one event".into()));
    }
    let (mut n, mut na) = (all.len() as f64, a.len() as f64);
    let (mut o, mut e, mut v) = (0.0, 0.0, 0.0);
    let mut k = 0;
    while k < all.len() {
        let t = all[k].0;
        let group = all[k..].iter().take_while(|x| x.0 == t).count();
        let slice = &all[k..k + group];
        let d = slice.iter().filter(|x| x.1).count() as f64;
        let da = slice.iter().filter(|x| x.1 && x.2).count() as f64;
        if d > 0.0 {
            o += da;
            e += d * na / n;
            if n > 1.0 {
                v += d * (na / n) * (1.0 - na / n) * (n - d) / (n - 1.0);
            }
        }
        n -= group as f64;
        na -= slice.iter().filter(|x| x.2).count() as f64;
        k += group;
    }
    if !(v > 0.0) {
        return Err(Error::UndefinedStatistic("log-rank variance is zero".into()));
    }
    let chi2 = (o - e) * (o - e) / v;
    let p_value = chi2_sf(chi2, 1.0);
    Ok(LogRank { chi2, p_value, observed: o, expected: e, variance: v, significant: p_value < SIGNIFICANCE })
}

/// High/low split at the median risk.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratifiedGroups {
    /// Indices with risk above the threshold.
    pub high_risk: Vec<usize>,
    pub low_risk: Vec<usize>,
    /// Lower middle order statistic for even counts.
    pub threshold: f64,
}

impl StratifiedGroups {
    /// True when one group is empty.
    pub fn degenerate(&self) -> bool {
        self.high_risk.is_empty() || self.low_risk.is_empty()
    }
}

pub fn stratify_by_median(risks: &[f64]) -> Result<StratifiedGroups> {
    if risks.len() < 2 {
        return Err(Error::UndefinedStatistic("stratification needs at least 2 patients".into()));
    }
    if risks.iter().any(|r| r.is_nan()) {
        return Err(Error::Numeric("NaN risk score".into()));
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[(sorted.len() - 1) / 2];
    let (high_risk, low_risk): (Vec<usize>, Vec<usize>) = (0..risks.len()).partition(|&i| risks[i] > threshold);
    let g = StratifiedGroups { high_risk, low_risk, threshold };
    if g.degenerate() {
        log::warn!("all {} risks equal the median; stratification is undefined", risks.len());
    }
    Ok(g)
}
