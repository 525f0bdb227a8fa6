//! Fluctuation sweeps, exponent fits, concentration and growth checks.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::constants::ALPHA;
use crate::error::{Error, Result};
use crate::graph::{BallGraph, Gasket};
use crate::idla::{grow, grow_stopped, radii, Cluster, StoppedState};
use crate::lattice::Vertex;
use crate::walk::{derive_seed, Estimate, RngStream, StreamSource};

fn default_radii() -> Vec<u32> {
    vec![16, 32, 64, 128, 256, 512]
}

fn default_trials() -> u32 {
    20
}

fn default_kappa() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_radii")]
    pub radii: Vec<u32>,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub master_seed: u64,
    /// Only shifts the reported target exponents.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Record wall-clock time per row. Off by default so that identical
    /// configurations give byte-identical CSV.
    #[serde(default)]
    pub record_runtime: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            radii: default_radii(),
            trials: default_trials(),
            master_seed: 0,
            kappa: default_kappa(),
            record_runtime: false,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() || self.radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("radii must be nonempty and strictly ascending"));
        }
        if self.trials == 0 {
            return Err(Error::domain("trials must be at least 1"));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::domain("kappa must be positive"));
        }
        Ok(())
    }

    /// Inner target `1/2` plus the polylog exponent `(1+κ)/(2α)` of `ln n`.
    pub fn inner_target(&self) -> (f64, f64) {
        (0.5, (1.0 + self.kappa) / (2.0 * ALPHA))
    }

    /// Outer target `1/2 + 1/(2α)`.
    pub fn outer_target(&self) -> f64 {
        0.5 + 1.0 / (2.0 * ALPHA)
    }

    /// Seed of row `(n, trial)`; independent of the other radii in the config.
    pub fn row_seed(&self, n: u32, trial: u32) -> u64 {
        derive_seed(derive_seed(self.master_seed, n as u64), trial as u64)
    }
}

/// One `(n, trial)` result. Radius fields are empty for failed rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: u32,
    pub trial: u32,
    pub seed: u64,
    pub r_in: Option<i64>,
    pub r_out: Option<i64>,
    pub inner_defect: Option<i64>,
    pub outer_excess: Option<i64>,
    pub runtime_ms: u64,
}

impl SweepRow {
    pub fn failed(&self) -> bool {
        self.r_in.is_none()
    }

    /// Negative defect or excess; impossible for a cluster of exactly `b_n` sites.
    pub fn anomalous(&self) -> bool {
        self.inner_defect.is_some_and(|d| d < 0) || self.outer_excess.is_some_and(|d| d < 0)
    }
}

pub const CSV_HEADER: &str = "n,trial,seed,r_in,r_out,inner_defect,outer_excess,runtime_ms";

/// Runs `grow(b_n)` for every `(n, trial)` in parallel; rows come back in
/// `(n, trial)` order. A failing row is logged and left empty.
pub fn sweep(gasket: &Gasket, config: &SweepConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let jobs: Vec<(u32, u32)> =
        config.radii.iter().flat_map(|&n| (0..config.trials).map(move |t| (n, t))).collect();
    for &n in &config.radii {
        gasket.origin_graph(n + 2);
    }
    let rows = jobs
        .into_par_iter()
        .map(|(n, trial)| {
            let seed = config.row_seed(n, trial);
            let start = Instant::now();
            let result = grow(gasket, gasket.ball_volume(n) as u64, &mut StreamSource::new(seed)).and_then(|c| radii(&c));
            let runtime_ms = if config.record_runtime { start.elapsed().as_millis() as u64 } else { 0 };
            match result {
                Ok(r) => SweepRow {
                    n,
                    trial,
                    seed,
                    r_in: Some(r.r_in),
                    r_out: Some(r.r_out),
                    inner_defect: Some(r.inner_defect),
                    outer_excess: Some(r.outer_excess),
                    runtime_ms,
                },
                Err(e) => {
                    log::error!("sweep row n={n} trial={trial} failed: {e}");
                    SweepRow { n, trial, seed, r_in: None, r_out: None, inner_defect: None, outer_excess: None, runtime_ms }
                }
            }
        })
        .collect();
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER.split(',')).map_err(io_error)?;
    for r in rows {
        w.serialize(r).map_err(io_error)?;
    }
    w.flush().map_err(|e| Error::Resource(e.to_string()))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_reader(input);
    let header: Vec<String> = rd.headers().map_err(io_error)?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::domain(format!("unexpected CSV header {:?}", header.join(","))));
    }
    rd.deserialize().map(|r| r.map_err(io_error)).collect()
}

fn io_error(e: csv::Error) -> Error {
    if e.is_io_error() {
        Error::Resource(e.to_string())
    } else {
        Error::domain(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    InnerDefect,
    OuterExcess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Max,
    Mean,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitPoint {
    pub n: u32,
    pub value: f64,
    /// The statistic was zero and replaced by 0.5.
    pub floored: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PowerFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: Vec<FitPoint>,
}

/// Least squares of `ln y` on `ln x`.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if points.len() < 2 || points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::DegenerateFit("need at least two positive points".into()));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, my - slope * mx, r2))
}

/// Log-log fit of the per-`n` statistic of `field` against `n`. Zero
/// statistics enter as 0.5 and are flagged.
pub fn fit_exponent(rows: &[SweepRow], field: Field, statistic: Statistic) -> Result<PowerFit> {
    let mut by_n: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| !r.failed()) {
        let v = match field {
            Field::InnerDefect => r.inner_defect,
            Field::OuterExcess => r.outer_excess,
        };
        by_n.entry(r.n).or_default().push(v.unwrap() as f64);
    }
    let points: Vec<FitPoint> = by_n
        .into_iter()
        .map(|(n, vals)| {
            let s = match statistic {
                Statistic::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                Statistic::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
            };
            if s > 0.0 {
                FitPoint { n, value: s, floored: false }
            } else {
                FitPoint { n, value: 0.5, floored: true }
            }
        })
        .collect();
    let nonzero = points.iter().filter(|p| !p.floored).count();
    if nonzero < 3 {
        return Err(Error::DegenerateFit(format!("only {nonzero} radii with a nonzero statistic; need 3")));
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.n as f64, p.value)).collect();
    let (slope, intercept, r2) = fit_power_law(&xy)?;
    Ok(PowerFit { slope, intercept, r2, points })
}

/// Wilson score interval for `k` successes in `n` trials at normal quantile `z`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct LbgReport {
    pub big_n: u64,
    pub p: f64,
    pub gamma: f64,
    pub trials: u64,
    pub mu: f64,
    /// Deviation threshold `μ^(1/2+γ)`.
    pub threshold: f64,
    pub exceed: u64,
    pub empirical: f64,
    pub bound: f64,
    pub wilson_lower: f64,
    pub passed: bool,
}

/// Tail frequency of `|S - μ| >= μ^(1/2+γ)` for `S ~ Bin(N, p)` against
/// `2 exp(-μ^(2γ)/4)`. Passes when the 3-sigma Wilson lower bound of the
/// frequency does not exceed the bound.
pub fn lbg_tail_check(big_n: u64, p: f64, gamma: f64, trials: u64, seed: u64) -> Result<LbgReport> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return Err(Error::domain("gamma must lie in (0, 1/2)"));
    }
    lbg_tail_unchecked(big_n, p, gamma, trials, seed)
}

/// Same without the range check on `γ`, for negative controls.
pub fn lbg_tail_unchecked(big_n: u64, p: f64, gamma: f64, trials: u64, seed: u64) -> Result<LbgReport> {
    if !(p > 0.0 && p <= 1.0) || big_n == 0 || trials == 0 {
        return Err(Error::domain("need N >= 1, 0 < p <= 1 and trials >= 1"));
    }
    let bin = Binomial::new(big_n, p).map_err(|e| Error::domain(e.to_string()))?;
    let mu = big_n as f64 * p;
    let threshold = mu.powf(0.5 + gamma);
    let mut rng = RngStream::new(seed, 0);
    let exceed = (0..trials).filter(|_| (bin.sample(&mut rng) as f64 - mu).abs() >= threshold).count() as u64;
    let bound = 2.0 * (-mu.powf(2.0 * gamma) / 4.0).exp();
    let (wilson_lower, _) = wilson_interval(exceed, trials, 3.0);
    Ok(LbgReport {
        big_n,
        p,
        gamma,
        trials,
        mu,
        threshold,
        exceed,
        empirical: exceed as f64 / trials as f64,
        bound,
        wilson_lower,
        passed: wilson_lower <= bound,
    })
}

fn settled_runs(gasket: &Gasket, base: &Cluster, sources: &[Vertex], absorb: u32, trials: u64, seed: u64) -> Result<Estimate> {
    if trials == 0 || sources.is_empty() {
        return Err(Error::domain("need at least one trial and one source"));
    }
    let k = sources.len() as f64;
    let fractions: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let before = base.len();
            let st = grow_stopped(
                gasket,
                StoppedState::new(base.clone()),
                sources,
                Some(absorb),
                &mut StreamSource::new(derive_seed(seed, t)),
            )?;
            Ok((st.cluster.len() - before) as f64 / k)
        })
        .collect::<Result<_>>()?;
    Ok(Estimate::from_samples(&fractions))
}

/// Fraction of `k` particles from the origin that settle on `S = B(n)`
/// before leaving `B(n + ceil(k^(1/α)))`. Requires `n^(1/(α+1)) < k < n^α`.
pub fn settled_fraction(gasket: &Gasket, n: u32, k: u32, trials: u64, seed: u64) -> Result<Estimate> {
    let nf = n as f64;
    let kf = k as f64;
    if !(kf > nf.powf(1.0 / (ALPHA + 1.0)) && kf < nf.powf(ALPHA)) {
        return Err(Error::domain(format!("k = {k} outside the window (n^(1/(α+1)), n^α) for n = {n}")));
    }
    settled_fraction_unchecked(gasket, n, &vec![Vertex::ORIGIN; k as usize], trials, seed)
}

/// Settled fraction for arbitrary sources in `B(n)`, without the window check.
pub fn settled_fraction_unchecked(gasket: &Gasket, n: u32, sources: &[Vertex], trials: u64, seed: u64) -> Result<Estimate> {
    let ball = gasket.ball(Vertex::ORIGIN, n)?;
    if let Some(v) = sources.iter().find(|&&v| !ball.contains(v)) {
        return Err(Error::OutsideBall(*v));
    }
    let base = Cluster::from_vertices(gasket, ball.members())?;
    let absorb = n + (sources.len() as f64).powf(1.0 / ALPHA).ceil() as u32;
    settled_runs(gasket, &base, sources, absorb, trials, seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct AnnulusAudit {
    pub m: u32,
    pub k: u32,
    pub n: u32,
    pub exact: u64,
    pub formula: f64,
    pub ratio: f64,
}

/// `b_n - b_(n - 2^k)` for `n = 2^m` next to `2^(m-k) (3^(k+1)+3)/(3^(k+1)+2) b_n`.
pub fn annulus_audit(gasket: &Gasket, m: u32, k: u32) -> Result<AnnulusAudit> {
    if k >= m {
        return Err(Error::domain("annulus audit requires k < m"));
    }
    let n = 1u32 << m;
    let bn = gasket.ball_volume(n) as u64;
    let exact = bn - gasket.ball_volume(n - (1 << k)) as u64;
    let t = 3f64.powi(k as i32 + 1);
    let formula = 2f64.powi((m - k) as i32) * (t + 3.0) / (t + 2.0) * bn as f64;
    Ok(AnnulusAudit { m, k, n, exact, formula, ratio: formula / exact as f64 })
}

/// `(b_n - b_ceil(n(1-ε)), 4 ε^(α-1) b_n)`.
pub fn annulus_growth(gasket: &Gasket, n: u32, eps: f64) -> Result<(u64, f64)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain("epsilon must lie in (0, 1)"));
    }
    let inner = (n as f64 * (1.0 - eps)).ceil() as u32;
    let bn = gasket.ball_volume(n);
    Ok(((bn - gasket.ball_volume(inner)) as u64, 4.0 * eps.powf(ALPHA - 1.0) * bn as f64))
}

/// `|B_x(n)| / n^α` for every center and radius, row-major by center.
pub fn volume_growth_ratios(gasket: &Gasket, centers: &[Vertex], radii: &[u32]) -> Result<Vec<f64>> {
    let rmax = radii.iter().copied().max().unwrap_or(0);
    centers
        .par_iter()
        .map(|&x| {
            let g = BallGraph::build(gasket.family(), x, rmax)?;
            Ok(radii.iter().map(|&r| g.volume(r) as f64 / (r as f64).powf(ALPHA)).collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.concat())
}

/// Uniformly chosen vertices of `B_origin(r)`.
pub fn random_centers(gasket: &Gasket, r: u32, count: usize, seed: u64) -> Vec<Vertex> {
    let g = gasket.origin_graph(r);
    let len = g.volume(r);
    let mut rng = RngStream::new(seed, 0);
    (0..count).map(|_| g.vertex(rng.random_range(0..len) as u32)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Bins after pooling sparse categories.
    pub bins: usize,
}

/// Two-sample chi-square homogeneity test on categorical counts. Categories
/// with fewer than 10 combined observations are pooled into one bin.
pub fn chi_square_two_sample<K: Ord + Clone>(a: &BTreeMap<K, u64>, b: &BTreeMap<K, u64>) -> Result<ChiSquareTest> {
    let na: u64 = a.values().sum();
    let nb: u64 = b.values().sum();
    if na == 0 || nb == 0 {
        return Err(Error::domain("both samples must be nonempty"));
    }
    let mut keys: Vec<&K> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut bins: Vec<(u64, u64)> = Vec::new();
    let mut pool = (0u64, 0u64);
    for k in keys {
        let pair = (a.get(k).copied().unwrap_or(0), b.get(k).copied().unwrap_or(0));
        if pair.0 + pair.1 < 10 {
            pool.0 += pair.0;
            pool.1 += pair.1;
        } else {
            bins.push(pair);
        }
    }
    if pool.0 + pool.1 > 0 {
        bins.push(pool);
    }
    if bins.len() < 2 {
        return Ok(ChiSquareTest { statistic: 0.0, df: 0, p_value: 1.0, bins: bins.len() });
    }
    let (ka, kb) = (((nb as f64) / (na as f64)).sqrt(), ((na as f64) / (nb as f64)).sqrt());
    let statistic: f64 =
        bins.iter().map(|&(x, y)| (ka * x as f64 - kb * y as f64).powi(2) / (x + y) as f64).sum();
    let df = bins.len() - 1;
    let dist = ChiSquared::new(df as f64).map_err(|e| Error::domain(e.to_string()))?;
    Ok(ChiSquareTest { statistic, df, p_value: 1.0 - dist.cdf(statistic), bins: bins.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SweepConfig {
        SweepConfig { radii: vec![2, 4, 8], trials: 3, master_seed: 11, ..SweepConfig::default() }
    }

    #[test]
    fn config_validation_and_json() {
        assert!(SweepConfig::default().validate().is_ok());
        let bad = SweepConfig { radii: vec![8, 4], ..SweepConfig::default() };
        assert!(bad.validate().is_err());
        let c: SweepConfig = serde_json::from_str(r#"{"radii":[4,8],"trials":2}"#).unwrap();
        assert_eq!((c.radii.clone(), c.trials, c.master_seed, c.record_runtime), (vec![4, 8], 2, 0, false));
        let back: SweepConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn sweep_is_deterministic_and_round_trips() {
        let g = Gasket::doubled();
        let rows = sweep(&g, &small_config()).unwrap();
        assert_eq!(rows.len(), 9);
        let mut a = Vec::new();
        write_csv(&rows, &mut a).unwrap();
        let mut b = Vec::new();
        write_csv(&sweep(&g, &small_config()).unwrap(), &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a.clone()).unwrap();
        assert!(text.starts_with(&format!("{CSV_HEADER}\n")));
        assert_eq!(read_csv(&a[..]).unwrap(), rows);
        assert!(rows.iter().all(|r| !r.failed() && !r.anomalous()));
    }

    #[test]
    fn failed_rows_have_empty_fields() {
        let r = SweepRow { n: 4, trial: 0, seed: 1, r_in: None, r_out: None, inner_defect: None, outer_excess: None, runtime_ms: 0 };
        let mut out = Vec::new();
        write_csv(std::slice::from_ref(&r), &mut out).unwrap();
        assert!(String::from_utf8(out.clone()).unwrap().ends_with("4,0,1,,,,,0\n"));
        assert_eq!(read_csv(&out[..]).unwrap(), vec![r]);
    }

    #[test]
    fn synthetic_power_law_is_recovered() {
        let rows: Vec<SweepRow> = [4u32, 16, 64, 256]
            .iter()
            .map(|&n| {
                let d = (n as f64).sqrt() as i64;
                SweepRow { n, trial: 0, seed: 0, r_in: Some(0), r_out: Some(0), inner_defect: Some(d), outer_excess: Some(0), runtime_ms: 0 }
            })
            .collect();
        let f = fit_exponent(&rows, Field::InnerDefect, Statistic::Max).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-9 && (f.r2 - 1.0).abs() < 1e-12);
        assert!(matches!(fit_exponent(&rows, Field::OuterExcess, Statistic::Mean), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn lbg_checks() {
        let r = lbg_tail_check(10_000, 0.5, 0.25, 100_000, 1).unwrap();
        assert!((r.bound - 4.2e-8).abs() < 0.1e-8);
        assert_eq!(r.exceed, 0);
        assert!(r.passed);
        assert!(lbg_tail_check(100, 0.5, 0.0, 10, 1).is_err());
        // at γ = 0 the threshold is sqrt(Np) = sqrt(2) standard deviations
        let c = lbg_tail_unchecked(10_000, 0.5, 0.0, 100_000, 2).unwrap();
        assert!((c.empirical - 0.157).abs() < 0.01, "{}", c.empirical);
    }

    #[test]
    fn wilson_interval_contains_the_estimate() {
        let (lo, hi) = wilson_interval(30, 100, 1.96);
        assert!(lo < 0.3 && 0.3 < hi);
        assert_eq!(wilson_interval(0, 100, 3.0).0, 0.0);
    }

    #[test]
    fn annulus_audit_small() {
        let g = Gasket::doubled();
        let a = annulus_audit(&g, 1, 0).unwrap();
        assert_eq!(a.exact, 6);
        assert!((a.formula - 26.4).abs() < 1e-9);
        assert!(annulus_audit(&g, 2, 2).is_err());
    }

    #[test]
    fn settled_fraction_single_particle_and_window() {
        let g = Gasket::doubled();
        let e = settled_fraction_unchecked(&g, 8, &[Vertex::ORIGIN], 200, 4).unwrap();
        assert!(e.mean > 0.0 && e.mean <= 1.0);
        assert!(settled_fraction(&g, 32, 1, 10, 0).is_err());
    }

    #[test]
    fn chi_square_identical_samples() {
        let a: BTreeMap<u32, u64> = [(0, 50), (1, 30), (2, 20), (3, 2)].into_iter().collect();
        let t = chi_square_two_sample(&a, &a).unwrap();
        assert_eq!(t.statistic, 0.0);
        assert_eq!(t.df, 3);
        assert!((t.p_value - 1.0).abs() < 1e-12);
        let b: BTreeMap<u32, u64> = [(0, 20), (1, 30), (2, 50)].into_iter().collect();
        assert!(chi_square_two_sample(&a, &b).unwrap().p_value < 1e-3);
    }
}
