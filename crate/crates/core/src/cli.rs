//! Configuration-driven runs: one JSON config, checks executed in
//! dependency order, one CSV per check plus `summary.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::{SampledField, TorusGrid};
use crate::lp::{band_limited_field, calderon_check, lp_pieces, make_pair, make_profile, AnalysisProfile, ProfileSpec};
use crate::multiplier::{boundedness_report, hormander_constants, MultiplierSymbol, SymbolSpec};
use crate::norms::{
    c38_trials, equivalence_report, fs_check, jcf_check, lattice_sum, NormKind, SpaceParams,
};
use crate::reducing::{build_reducing, verify_reducing, ReducingFamily, ReducingMethod};
use crate::weights::{
    ap_characteristic, doubling_exponent, full_levels, generate_weight, MatrixWeightField, WeightPowers,
    WeightSpec,
};

/// Checks in dependency order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Apchar,
    Doubling,
    Reduce,
    Calderon,
    Norms,
    Equiv,
    Jcf,
    Fs,
    C38,
    Hormander,
    Multiplier,
}

impl Check {
    pub const ALL: [Check; 11] = [
        Check::Apchar,
        Check::Doubling,
        Check::Reduce,
        Check::Calderon,
        Check::Norms,
        Check::Equiv,
        Check::Jcf,
        Check::Fs,
        Check::C38,
        Check::Hormander,
        Check::Multiplier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Apchar => "apchar",
            Check::Doubling => "doubling",
            Check::Reduce => "reduce",
            Check::Calderon => "calderon",
            Check::Norms => "norms",
            Check::Equiv => "equiv",
            Check::Jcf => "jcf",
            Check::Fs => "fs",
            Check::C38 => "c38",
            Check::Hormander => "hormander",
            Check::Multiplier => "multiplier",
        }
    }
}

impl std::str::FromStr for Check {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config("checks", format!("unknown check `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    #[serde(rename = "L")]
    pub depth: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(default = "default_corpus_size")]
    pub size: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Integer-frequency band `[lo, hi]`; defaults to the tiling band.
    #[serde(default)]
    pub band: Option<[f64; 2]>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { size: default_corpus_size(), seed: None, band: None }
    }
}

fn default_corpus_size() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub calderon_residual: f64,
    /// Bound on `C2/C1`; defaults to `sqrt(m)(1 + 1e-3)` for john, exactness
    /// for gram2 at `p = 2`, and the equivalence spread otherwise.
    pub reduce_ratio: Option<f64>,
    pub equiv_spread: f64,
    /// Slack on `C2/C1` for the `F_AQ/F` spread.
    pub eq_slack: f64,
    pub jcf_tolerance: f64,
    pub fs_bound: f64,
    pub fs_p: f64,
    pub fs_q: f64,
    pub c38_bound: f64,
    pub c38_trials: usize,
    pub multiplier_bound: f64,
    pub verify_trials: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            calderon_residual: 1e-8,
            reduce_ratio: None,
            equiv_spread: 50.0,
            eq_slack: 1.1,
            jcf_tolerance: 0.05,
            fs_bound: 10.0,
            fs_p: 2.0,
            fs_q: 2.0,
            c38_bound: 20.0,
            c38_trials: 50,
            multiplier_bound: 20.0,
            verify_trials: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_id")]
    pub config_id: String,
    pub grid: GridConfig,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_weight")]
    pub weight: WeightSpec,
    pub p: f64,
    #[serde(default = "default_q", with = "crate::norms::exponent_serde")]
    pub q: f64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub a: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub ell: Option<u32>,
    #[serde(default)]
    pub profile: Option<ProfileSpec>,
    #[serde(default = "default_method")]
    pub reducing: ReducingMethod,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub symbol: Option<SymbolSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default)]
    pub thresholds: Thresholds,
}

fn default_id() -> String {
    "run".into()
}
fn default_m() -> usize {
    1
}
fn default_weight() -> WeightSpec {
    WeightSpec::Identity
}
fn default_q() -> f64 {
    2.0
}
fn default_method() -> ReducingMethod {
    ReducingMethod::Gram2
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Requested checks, deduplicated and in dependency order. An empty
    /// list means every check.
    pub fn check_list(&self) -> Result<Vec<Check>> {
        if self.checks.is_empty() {
            return Ok(Check::ALL.to_vec());
        }
        let mut out: Vec<Check> = self.checks.iter().map(|s| s.parse()).collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

/// Every default made explicit, echoed as `resolved_config.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved {
    pub config: RunConfig,
    pub beta_hat: f64,
    pub params: SpaceParams,
    pub profile: ProfileSpec,
    pub band: [f64; 2],
    pub corpus_seed: u64,
    pub symbol: SymbolSpec,
    pub flags: BTreeMap<String, bool>,
}

/// In-memory state shared by the checks.
pub struct Context {
    pub resolved: Resolved,
    pub grid: TorusGrid,
    pub field: MatrixWeightField,
    pub powers: WeightPowers,
    pub profile: AnalysisProfile,
    pub corpus: Vec<SampledField>,
    family: Option<ReducingFamily>,
}

impl Context {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let grid = TorusGrid::new(config.grid.n, config.grid.depth)
            .map_err(|e| Error::config("grid", e.to_string()))?;
        if config.m == 0 {
            return Err(Error::config("m", "must be positive"));
        }
        if !(config.p > 0.0 && config.p.is_finite()) {
            return Err(Error::config("p", "must lie in (0, inf)"));
        }
        if !(config.q > 0.0) {
            return Err(Error::config("q", "must lie in (0, inf]"));
        }
        if config.corpus.size == 0 {
            return Err(Error::config("corpus.size", "must be positive"));
        }
        config.check_list()?;
        let field = generate_weight(&config.weight, grid, config.m)?;
        let powers = field.powers(config.p)?;
        let beta_hat = doubling_exponent(&powers, config.seed);
        let n = grid.dim();

        let mut params = SpaceParams::with_defaults(n, config.alpha, config.p, config.q, beta_hat)?;
        if let Some(a) = config.a {
            params.a = a;
        }
        if let Some(l) = config.lambda {
            params.lambda = l;
        }
        params.validate()?;

        let profile_spec = config.profile.unwrap_or_else(|| ProfileSpec::default_for(&grid));
        let profile = make_profile(&grid, profile_spec)?;
        let band = config.corpus.band.unwrap_or_else(|| {
            let (lo, hi) = profile.tiling_band();
            [lo, hi]
        });
        let corpus_seed = config.corpus.seed.unwrap_or(config.seed);
        let corpus = (0..config.corpus.size)
            .map(|i| band_limited_field(&grid, config.m, (band[0], band[1]), corpus_seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::config("corpus.band", e.to_string()))?;

        let ell_threshold = params.ell_threshold(n, beta_hat);
        let ell = config.ell.unwrap_or(ell_threshold.floor() as u32 + 1);
        let symbol = match &config.symbol {
            Some(s) => {
                let mut s = s.clone();
                if config.ell.is_some() || s.ell.is_none() {
                    s.ell = Some(ell);
                }
                s
            }
            None => MultiplierSymbol::power(1.0, ell)?.to_spec(),
        };
        MultiplierSymbol::from_spec(&symbol)?;

        let mut flags = BTreeMap::new();
        flags.insert("a_valid".into(), params.a_valid(n, beta_hat));
        flags.insert("lambda_valid".into(), params.lambda_valid(n, beta_hat));
        flags.insert("ell_valid".into(), symbol.ell.unwrap_or(0) as f64 > ell_threshold);
        flags.insert("weight_admissible".into(), config.weight.admissible_for(n, config.p));

        Ok(Self {
            resolved: Resolved {
                config: config.clone(),
                beta_hat,
                params,
                profile: profile_spec,
                band,
                corpus_seed,
                symbol,
                flags,
            },
            grid,
            field,
            powers,
            profile,
            corpus,
            family: None,
        })
    }

    fn config(&self) -> &RunConfig {
        &self.resolved.config
    }

    /// Reducing family over the profile window, built on first use.
    pub fn family(&mut self) -> Result<&ReducingFamily> {
        if self.family.is_none() {
            let levels: Vec<u32> = self.profile.scales().map(|j| j as u32).collect();
            let mut fam = build_reducing(&self.powers, self.config().reducing, &levels, self.config().seed)?;
            verify_reducing(&mut fam, &self.powers, self.config().thresholds.verify_trials, self.config().seed);
            self.family = Some(fam);
        }
        Ok(self.family.as_ref().unwrap())
    }

    fn reduce_bound(&self) -> f64 {
        let cfg = self.config();
        cfg.thresholds.reduce_ratio.unwrap_or(match cfg.reducing {
            ReducingMethod::John => (cfg.m as f64).sqrt() * (1.0 + 1e-3),
            ReducingMethod::Gram2 if cfg.p == 2.0 => 1.0 + 1e-9,
            ReducingMethod::Gram2 => cfg.thresholds.equiv_spread,
        })
    }
}

/// Result of one check: summary entry plus files to write.
pub struct CheckOutput {
    pub summary: Value,
    pub pass: bool,
    pub files: Vec<(String, String)>,
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn run_check(ctx: &mut Context, check: Check) -> Result<CheckOutput> {
    let th = ctx.config().thresholds.clone();
    let n = ctx.grid.dim();
    let params = ctx.resolved.params;
    let beta = ctx.resolved.beta_hat;
    Ok(match check {
        Check::Apchar => {
            let rep = ap_characteristic(&ctx.powers, full_levels(&ctx.grid))?;
            CheckOutput {
                summary: json!({ "value": finite_or_null(rep.value), "argmax": rep.argmax, "pass": rep.value.is_finite() }),
                pass: rep.value.is_finite(),
                files: vec![("apchar.csv".into(), rep.to_csv())],
            }
        }
        Check::Doubling => {
            let pass = beta.is_finite() && beta >= 0.0;
            CheckOutput { summary: json!({ "beta_hat": finite_or_null(beta), "pass": pass }), pass, files: vec![] }
        }
        Check::Reduce => {
            let bound = ctx.reduce_bound();
            let fam = ctx.family()?;
            let (c1, c2) = fam.constants().expect("verified on build");
            let ratio = c2 / c1;
            let pass = ratio <= bound;
            let verification = json!({
                "C1": c1, "C2": c2, "method": fam.method(), "p": fam.p(),
                "trials": th.verify_trials, "seed": fam.seed(),
            });
            CheckOutput {
                summary: json!({ "C1": c1, "C2": c2, "ratio": ratio, "bound": bound, "pass": pass }),
                pass,
                files: vec![
                    ("reduce_family.csv".into(), fam.to_csv()),
                    ("reduce_verification.json".into(), serde_json::to_string_pretty(&verification)?),
                ],
            }
        }
        Check::Calderon => {
            let pair = make_pair(&ctx.profile);
            let mut worst: f64 = 0.0;
            let mut csv = String::from("member_id,residual\n");
            for (i, f) in ctx.corpus.iter().enumerate() {
                let r = calderon_check(&pair, f)?;
                csv.push_str(&format!("{i},{r:e}\n"));
                worst = worst.max(r);
            }
            let pass = worst < th.calderon_residual;
            CheckOutput {
                summary: json!({ "residual": worst, "pass": pass }),
                pass,
                files: vec![("calderon.csv".into(), csv)],
            }
        }
        Check::Norms => {
            let kinds = [NormKind::F, NormKind::Star, NormKind::Square, NormKind::Gstar];
            let rep = equivalence_report(
                &ctx.config().config_id,
                &ctx.corpus,
                &ctx.powers,
                None,
                &params,
                &ctx.profile,
                &kinds,
                beta,
            )?;
            let star_ge_f = rep
                .members
                .iter()
                .all(|m| m.values[&NormKind::Star] >= m.values[&NormKind::F] - 1e-9);
            let finite = rep.members.iter().all(|m| m.values.values().all(|v| v.is_finite()));
            let pass = star_ge_f && finite;
            CheckOutput {
                summary: json!({ "members": rep.members.len(), "star_ge_F": star_ge_f, "finite": finite, "pass": pass }),
                pass,
                files: vec![("norms.csv".into(), rep.to_csv())],
            }
        }
        Check::Equiv => {
            let fam = ctx.family()?.clone();
            let (c1, c2) = fam.constants().expect("verified on build");
            let rep = equivalence_report(
                &ctx.config().config_id,
                &ctx.corpus,
                &ctx.powers,
                Some(&fam),
                &params,
                &ctx.profile,
                &NormKind::ALL,
                beta,
            )?;
            let eq_bound = c2 / c1 * th.eq_slack;
            let mut spreads = serde_json::Map::new();
            let mut pass = true;
            for agg in &rep.aggregates {
                let bound = if agg.pair == "F_AQ/F" { eq_bound } else { th.equiv_spread };
                let ok = agg.spread <= bound;
                pass &= ok;
                spreads.insert(agg.pair.clone(), json!({ "spread": agg.spread, "bound": bound, "pass": ok }));
            }
            CheckOutput {
                summary: json!({ "pairs": spreads, "a_valid": rep.a_valid, "lambda_valid": rep.lambda_valid, "pass": pass }),
                pass,
                files: vec![
                    ("equiv.csv".into(), rep.to_csv()),
                    ("equiv_aggregates.json".into(), rep.aggregates_json()?),
                ],
            }
        }
        Check::Jcf => {
            let eta = n as f64 + 1.0;
            let j = ((ctx.profile.spec().jmin + ctx.profile.spec().jmax) / 2).max(1) as u32;
            let constant = lattice_sum(n, eta)?;
            let flat = jcf_check(&ctx.grid, &vec![1.0; ctx.grid.len()], j, eta)?;
            let mut worst: f64 = 0.0;
            for f in &ctx.corpus {
                let h: Vec<f64> = (0..ctx.grid.len()).map(|i| crate::matrix::vec_norm(f.at(i))).collect();
                worst = worst.max(jcf_check(&ctx.grid, &h, j, eta)?);
            }
            let pass = (flat / constant - 1.0).abs() <= th.jcf_tolerance && worst.is_finite();
            CheckOutput {
                summary: json!({
                    "eta": eta, "level": j, "lattice_sum": constant, "constant_ratio": flat,
                    "corpus_max_ratio": worst, "pass": pass,
                }),
                pass,
                files: vec![],
            }
        }
        Check::Fs => {
            let mut worst: f64 = 0.0;
            let mut csv = String::from("member_id,ratio\n");
            for (i, f) in ctx.corpus.iter().enumerate() {
                let hs: Vec<Vec<f64>> = lp_pieces(f, &ctx.profile)
                    .iter()
                    .map(|piece| (0..ctx.grid.len()).map(|x| crate::matrix::vec_norm(piece.at(x))).collect())
                    .collect();
                let r = fs_check(&ctx.grid, &hs, th.fs_p, th.fs_q)?;
                csv.push_str(&format!("{i},{r:e}\n"));
                worst = worst.max(r);
            }
            let pass = worst <= th.fs_bound;
            CheckOutput {
                summary: json!({ "max_ratio": worst, "bound": th.fs_bound, "pass": pass }),
                pass,
                files: vec![("fs.csv".into(), csv)],
            }
        }
        Check::C38 => {
            let seed = ctx.config().seed;
            let q = params.q;
            let fam = ctx.family()?.clone();
            let r = c38_trials(&ctx.powers, &fam, q, th.c38_trials, seed)?;
            let pass = r <= th.c38_bound;
            CheckOutput {
                summary: json!({ "max_ratio": r, "bound": th.c38_bound, "trials": th.c38_trials, "pass": pass }),
                pass,
                files: vec![],
            }
        }
        Check::Hormander => {
            let sym = MultiplierSymbol::from_spec(&ctx.resolved.symbol)?;
            let rep = hormander_constants(&sym, &ctx.grid)?;
            let pass = rep.a_sigma.iter().all(|(_, a)| a.is_finite());
            let consts: BTreeMap<String, f64> =
                rep.a_sigma.iter().map(|(s, a)| (rep.sigma_label(*s), *a)).collect();
            CheckOutput {
                summary: json!({ "A_sigma": consts, "pass": pass }),
                pass,
                files: vec![("hormander.csv".into(), rep.to_csv())],
            }
        }
        Check::Multiplier => {
            let sym = MultiplierSymbol::from_spec(&ctx.resolved.symbol)?;
            let rep = boundedness_report(&ctx.corpus, &ctx.powers, &params, &sym, &ctx.profile, beta)?;
            let pass = rep.max_ratio <= th.multiplier_bound;
            CheckOutput {
                summary: json!({
                    "max_ratio": rep.max_ratio, "min_ratio": finite_or_null(rep.min_ratio),
                    "ell_valid": rep.ell_valid, "bound": th.multiplier_bound, "pass": pass,
                }),
                pass,
                files: vec![("multiplier.csv".into(), rep.to_csv())],
            }
        }
    })
}

/// Outcome of [`run`]: summary keyed by check name.
#[derive(Debug)]
pub struct RunOutcome {
    pub summary: BTreeMap<String, Value>,
    pub resolved: Resolved,
    pub pass: bool,
    pub failed: Vec<String>,
}

/// Run `checks` (dependency order) and write reports into `out` when given.
pub fn run_checks(config: &RunConfig, checks: &[Check], out: Option<&Path>) -> Result<RunOutcome> {
    let mut ctx = Context::new(config)?;
    let mut order = checks.to_vec();
    order.sort();
    order.dedup();
    let mut summary = BTreeMap::new();
    let mut failed = Vec::new();
    let mut files = Vec::new();
    for check in order {
        let res = run_check(&mut ctx, check)?;
        if !res.pass {
            failed.push(check.name().to_string());
        }
        summary.insert(check.name().to_string(), res.summary);
        files.extend(res.files);
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        for (name, body) in &files {
            fs::write(dir.join(name), body)?;
        }
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        fs::write(
            dir.join("resolved_config.json"),
            serde_json::to_string_pretty(&ctx.resolved)? + "\n",
        )?;
    }
    Ok(RunOutcome { summary, resolved: ctx.resolved, pass: failed.is_empty(), failed })
}

/// Run the config's own check list.
pub fn run(config: &RunConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let checks = config.check_list()?;
    run_checks(config, &checks, out)
}

/// Weight field as CSV `sample,row,col,re,im`.
pub fn weight_csv(field: &MatrixWeightField) -> String {
    let mut out = String::from("sample,row,col,re,im\n");
    for (i, w) in field.values().iter().enumerate() {
        let a = w.as_matrix();
        for r in 0..a.nrows() {
            for c in 0..a.ncols() {
                out.push_str(&format!("{i},{r},{c},{:e},{:e}\n", a[(r, c)].re, a[(r, c)].im));
            }
        }
    }
    out
}

/// Write the weight field and the corpus (CSV) for `config`.
pub fn generate(config: &RunConfig, out: &Path) -> Result<Resolved> {
    let ctx = Context::new(config)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("weight.csv"), weight_csv(&ctx.field))?;
    for (i, f) in ctx.corpus.iter().enumerate() {
        fs::write(out.join(format!("corpus_{i:03}.csv")), f.to_csv())?;
    }
    fs::write(
        out.join("resolved_config.json"),
        serde_json::to_string_pretty(&ctx.resolved)? + "\n",
    )?;
    Ok(ctx.resolved)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(checks: &[&str]) -> RunConfig {
        let text = format!(
            r#"{{"grid": {{"n": 1, "L": 7}}, "p": 2.0, "corpus": {{"size": 3}},
                "checks": {}}}"#,
            serde_json::to_string(checks).unwrap()
        );
        RunConfig::from_json(&text).unwrap()
    }

    #[test]
    fn calderon_only() {
        let out = run(&base(&["calderon"]), None).unwrap();
        assert!(out.pass);
        assert_eq!(out.summary.len(), 1);
        assert!(out.summary["calderon"]["residual"].as_f64().unwrap() < 1e-8);
    }

    #[test]
    fn unknown_fields_and_checks_are_named() {
        let err = RunConfig::from_json(r#"{"grid": {"n": 1, "L": 7}, "p": 2, "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let err = run(&base(&["nope"]), None).unwrap_err();
        assert!(err.to_string().contains("checks"));
        let mut cfg = base(&["calderon"]);
        cfg.p = -1.0;
        assert!(run(&cfg, None).unwrap_err().to_string().contains("`p`"));
    }

    #[test]
    fn defaults_are_echoed() {
        let out = run(&base(&["doubling"]), None).unwrap();
        let r = &out.resolved;
        assert_eq!(r.beta_hat, 1.0);
        assert!((r.params.a - (1.0 + 0.5 + 1.0)).abs() < 1e-12);
        assert!(r.flags["a_valid"] && r.flags["lambda_valid"] && r.flags["ell_valid"]);
    }

    #[test]
    fn order_is_independent_of_listing() {
        let a = run(&base(&["fs", "calderon", "reduce"]), None).unwrap();
        let b = run(&base(&["reduce", "fs", "calderon", "fs"]), None).unwrap();
        assert_eq!(a.summary, b.summary);
        assert!(a.pass);
    }
}
