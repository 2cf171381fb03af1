//! Flat `key = value` run configuration.
//!
//! Every key has a default except `seed`. Resolution fills the defaults in a
//! fixed order, so the resolved text is itself a complete config that
//! reproduces the run when fed back in.

use std::collections::BTreeMap;
use std::path::PathBuf;

use purify_core::equilibrate::{EquilParams, ThresholdDecay};
use purify_core::genmodel::{
    moments, AdversaryStrategy, ESign, GroundTruthKind, InitSpec, Marginal, NoiseModel, UnbiasedDist,
    WeightDist,
};
use purify_core::purify::{default_params, AlgoParams, Pairing, StepSizes};

use crate::CliError;

type Raw = BTreeMap<String, String>;

enum Default {
    Lit(&'static str),
    Derived(fn(&Raw) -> String),
    Required,
}

fn sigma_lo(r: &Raw) -> String {
    let ell: f64 = r["model.init.ell"].parse().unwrap_or(0.0);
    (1.0 - ell).to_string()
}

fn sigma_hi(r: &Raw) -> String {
    let ell: f64 = r["model.init.ell"].parse().unwrap_or(0.0);
    (1.0 + ell).to_string()
}

fn algo_ell(r: &Raw) -> String {
    r["model.init.ell"].clone()
}

const TOP: &[(&str, Default)] = &[
    ("seed", Default::Required),
    ("outputs", Default::Lit("out")),
    ("diagnostics", Default::Lit("true")),
    ("model.m", Default::Lit("60")),
    ("model.n", Default::Lit("30")),
    ("model.ground_truth", Default::Lit("random")),
    ("model.ground_truth.overlap", Default::Lit("0.3")),
    ("model.ground_truth.path", Default::Lit("")),
    ("model.a0.path", Default::Lit("")),
    ("model.weights", Default::Lit("bernoulli_uniform")),
    ("model.weights.s", Default::Lit("3")),
    ("model.weights.marginals", Default::Lit("")),
    ("model.noise", Default::Lit("none")),
    ("model.noise.level", Default::Lit("0")),
    ("model.noise.strategy", Default::Lit("sign_aligned")),
    ("model.noise.dist", Default::Lit("rademacher")),
    ("model.init.ell", Default::Lit("0.1")),
    ("model.init.e_sign", Default::Lit("mixed")),
    ("model.init.n0_level", Default::Lit("0")),
    ("model.init.sigma_lo", Default::Derived(sigma_lo)),
    ("model.init.sigma_hi", Default::Derived(sigma_hi)),
    ("algo.ell", Default::Derived(algo_ell)),
    ("algo.alpha", Default::Lit("default")),
    ("algo.eta", Default::Lit("default")),
    ("algo.r", Default::Lit("default")),
    ("algo.iterations", Default::Lit("50")),
    ("algo.batch_size", Default::Lit("20000")),
    ("algo.pairing", Default::Lit("closed_form")),
    ("algo.pairs", Default::Lit("0")),
];

const EQUIL: &[(&str, Default)] = &[
    ("equil.alpha", Default::Lit("default")),
    ("equil.eta", Default::Lit("0.25")),
    ("equil.inner_iterations", Default::Lit("4")),
    ("equil.epsilon", Default::Lit("0.0005")),
    ("equil.lambda0", Default::Lit("auto")),
    ("equil.batch_size", Default::Lit("5000")),
    ("equil.max_outer", Default::Lit("auto")),
    ("equil.decay", Default::Lit("quadratic")),
];

const SWEEP: &[(&str, Default)] = &[
    ("sweep.axis", Default::Lit("noise_level")),
    ("sweep.values", Default::Lit("")),
    ("sweep.repeats", Default::Lit("1")),
];

fn known(key: &str) -> bool {
    [TOP, EQUIL, SWEEP].iter().any(|t| t.iter().any(|(k, _)| *k == key))
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_text(text: &str) -> Result<Raw, CliError> {
    let mut raw = Raw::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Config(format!("line {}: expected `key = value`", no + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if !known(k) {
            return Err(CliError::Config(format!("unknown key `{k}` on line {}", no + 1)));
        }
        if raw.insert(k.to_string(), v.to_string()).is_some() {
            return Err(CliError::Config(format!("key `{k}` set twice")));
        }
    }
    Ok(raw)
}

/// A config with every default filled in.
#[derive(Clone, Debug)]
pub struct Resolved {
    values: Raw,
    order: Vec<&'static str>,
}

pub fn resolve(mut raw: Raw) -> Result<Resolved, CliError> {
    let mut order = Vec::new();
    let mut tables = vec![TOP];
    if raw.keys().any(|k| k.starts_with("equil.")) {
        tables.push(EQUIL);
    }
    if raw.keys().any(|k| k.starts_with("sweep.")) {
        tables.push(SWEEP);
    }
    for table in tables {
        for (key, default) in table {
            if !raw.contains_key(*key) {
                let v = match default {
                    Default::Lit(s) => s.to_string(),
                    Default::Derived(f) => f(&raw),
                    Default::Required => {
                        return Err(CliError::Config(format!("`{key}` is mandatory")));
                    }
                };
                raw.insert(key.to_string(), v);
            }
            order.push(*key);
        }
    }
    let r = Resolved { values: raw, order };
    r.check()?;
    Ok(r)
}

impl Resolved {
    pub fn text(&self) -> String {
        self.order.iter().map(|k| format!("{k} = {}\n", self.values[*k])).collect()
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key]
    }

    pub fn has_equil(&self) -> bool {
        self.values.contains_key("equil.eta")
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| CliError::Config(format!("`{key}`: cannot parse {v:?}")))
    }

    fn check(&self) -> Result<(), CliError> {
        let (m, n) = (self.m()?, self.n()?);
        if n == 0 || m < n {
            return Err(CliError::Config(format!(
                "model.m = {m} and model.n = {n}: need m >= n >= 1"
            )));
        }
        self.seed()?;
        self.diagnostics()?;
        self.ground_truth()?;
        self.weights()?;
        self.noise()?;
        self.init()?;
        self.iterations()?;
        self.parse::<usize>("algo.batch_size")?;
        self.pairing()?;
        self.parse::<f64>("algo.ell")?;
        for key in ["algo.alpha", "algo.eta", "algo.r"] {
            self.optional_f64(key, "default")?;
        }
        if self.has_equil() {
            for key in ["equil.eta", "equil.epsilon"] {
                self.parse::<f64>(key)?;
            }
            self.optional_f64("equil.alpha", "default")?;
            self.optional_f64("equil.lambda0", "auto")?;
            self.parse::<usize>("equil.inner_iterations")?;
            self.parse::<usize>("equil.batch_size")?;
            self.decay()?;
            if self.get("equil.max_outer") != "auto" {
                self.parse::<usize>("equil.max_outer")?;
            }
        }
        if self.values.contains_key("sweep.axis") {
            self.sweep_axis()?;
            self.sweep_values()?;
            self.parse::<usize>("sweep.repeats")?;
        }
        Ok(())
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.parse("seed")
    }

    pub fn m(&self) -> Result<usize, CliError> {
        self.parse("model.m")
    }

    pub fn n(&self) -> Result<usize, CliError> {
        self.parse("model.n")
    }

    pub fn outputs(&self) -> PathBuf {
        PathBuf::from(self.get("outputs"))
    }

    pub fn diagnostics(&self) -> Result<bool, CliError> {
        self.parse("diagnostics")
    }

    fn optional_f64(&self, key: &str, auto: &str) -> Result<Option<f64>, CliError> {
        if self.get(key) == auto {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.get(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn ground_truth_path(&self) -> Option<PathBuf> {
        self.path("model.ground_truth.path")
    }

    pub fn a0_path(&self) -> Option<PathBuf> {
        self.path("model.a0.path")
    }

    /// `None` when the ground truth is read from a file.
    pub fn ground_truth(&self) -> Result<Option<GroundTruthKind>, CliError> {
        match self.get("model.ground_truth") {
            "random" => Ok(Some(GroundTruthKind::RandomNonnegUnitL1)),
            "identity" => Ok(Some(GroundTruthKind::Identity)),
            "overlapping" => Ok(Some(GroundTruthKind::Overlapping(self.parse("model.ground_truth.overlap")?))),
            "file" if self.ground_truth_path().is_some() => Ok(None),
            "file" => Err(CliError::Config("`model.ground_truth = file` needs model.ground_truth.path".into())),
            other => Err(CliError::Config(format!("`model.ground_truth`: unknown kind {other:?}"))),
        }
    }

    pub fn weights(&self) -> Result<WeightDist, CliError> {
        let n = self.n()?;
        match self.get("model.weights") {
            "bernoulli_uniform" => Ok(WeightDist::BernoulliUniform { s: self.parse("model.weights.s")?, n }),
            "marginals" => {
                let ms = parse_marginals(self.get("model.weights.marginals"))?;
                if ms.len() != n {
                    return Err(CliError::Config(format!(
                        "`model.weights.marginals` lists {} coordinates, model.n = {n}",
                        ms.len()
                    )));
                }
                Ok(WeightDist::IndependentBounded(ms))
            }
            other => Err(CliError::Config(format!("`model.weights`: unknown kind {other:?}"))),
        }
    }

    pub fn noise(&self) -> Result<NoiseModel, CliError> {
        let level: f64 = self.parse("model.noise.level")?;
        match self.get("model.noise") {
            "none" => Ok(NoiseModel::None),
            "adversarial" => {
                let strategy = match self.get("model.noise.strategy") {
                    "constant_bias" => AdversaryStrategy::ConstantBias,
                    "sign_aligned" => AdversaryStrategy::SignAligned,
                    "random_bounded" => AdversaryStrategy::RandomBounded,
                    other => {
                        return Err(CliError::Config(format!("`model.noise.strategy`: unknown {other:?}")))
                    }
                };
                Ok(NoiseModel::Adversarial { level, strategy })
            }
            "unbiased" => {
                let dist = match self.get("model.noise.dist") {
                    "rademacher" => UnbiasedDist::Rademacher,
                    "uniform_sym" => UnbiasedDist::UniformSym,
                    other => return Err(CliError::Config(format!("`model.noise.dist`: unknown {other:?}"))),
                };
                Ok(NoiseModel::Unbiased { level, dist })
            }
            other => Err(CliError::Config(format!("`model.noise`: unknown kind {other:?}"))),
        }
    }

    pub fn init(&self) -> Result<InitSpec, CliError> {
        let e_sign = match self.get("model.init.e_sign") {
            "mixed" => ESign::Mixed,
            "nonnegative" => ESign::NonNegative,
            other => return Err(CliError::Config(format!("`model.init.e_sign`: unknown {other:?}"))),
        };
        Ok(InitSpec {
            ell: self.parse("model.init.ell")?,
            e_sign,
            n0_level: self.parse("model.init.n0_level")?,
            sigma_range: (self.parse("model.init.sigma_lo")?, self.parse("model.init.sigma_hi")?),
        })
    }

    pub fn iterations(&self) -> Result<usize, CliError> {
        self.parse("algo.iterations")
    }

    fn pairing(&self) -> Result<Pairing, CliError> {
        match self.get("algo.pairing") {
            "closed_form" => Ok(Pairing::ClosedFormAllPairs),
            "random_pairs" => Ok(Pairing::RandomPairs(self.parse("algo.pairs")?)),
            other => Err(CliError::Config(format!("`algo.pairing`: unknown {other:?}"))),
        }
    }

    /// Step sizes, filling `default` entries from the moments of `weights`.
    pub fn steps(&self, weights: &WeightDist) -> Result<StepSizes, CliError> {
        let explicit = [
            self.optional_f64("algo.alpha", "default")?,
            self.optional_f64("algo.eta", "default")?,
            self.optional_f64("algo.r", "default")?,
        ];
        let defaults = if explicit.iter().any(Option::is_none) {
            Some(default_params(&moments(weights), self.parse("algo.ell")?, weights.n()).map_err(CliError::config)?)
        } else {
            None
        };
        let pick = |v: Option<f64>, f: fn(&StepSizes) -> f64| v.unwrap_or_else(|| f(defaults.as_ref().unwrap()));
        Ok(StepSizes {
            alpha: pick(explicit[0], |s| s.alpha),
            eta: pick(explicit[1], |s| s.eta),
            r: pick(explicit[2], |s| s.r),
        })
    }

    pub fn algo(&self, weights: &WeightDist) -> Result<AlgoParams, CliError> {
        let st = self.steps(weights)?;
        let p = AlgoParams {
            alpha: st.alpha,
            eta: st.eta,
            r: st.r,
            iterations: self.iterations()?,
            batch_size: self.parse("algo.batch_size")?,
            seed: self.seed()?,
            pairing: self.pairing()?,
        };
        p.validate().map_err(CliError::config)?;
        Ok(p)
    }

    fn decay(&self) -> Result<ThresholdDecay, CliError> {
        match self.get("equil.decay") {
            "quadratic" => Ok(ThresholdDecay::Quadratic),
            "linear" => Ok(ThresholdDecay::Linear),
            other => Err(CliError::Config(format!("`equil.decay`: unknown {other:?}"))),
        }
    }

    pub fn equil(&self, weights: &WeightDist) -> Result<EquilParams, CliError> {
        if !self.has_equil() {
            return Err(CliError::Config("equilibrate needs at least one `equil.*` key".into()));
        }
        let alpha = match self.optional_f64("equil.alpha", "default")? {
            Some(a) => a,
            None => default_params(&moments(weights), self.parse("algo.ell")?, weights.n())
                .map_err(CliError::config)?
                .alpha,
        };
        let max_outer = match self.get("equil.max_outer") {
            "auto" => None,
            _ => Some(self.parse("equil.max_outer")?),
        };
        let p = EquilParams {
            alpha,
            eta: self.parse("equil.eta")?,
            inner_iterations: self.parse("equil.inner_iterations")?,
            epsilon: self.parse("equil.epsilon")?,
            lambda0: self.optional_f64("equil.lambda0", "auto")?,
            batch_size: self.parse("equil.batch_size")?,
            seed: self.seed()?,
            max_outer,
            decay: self.decay()?,
        };
        p.validate().map_err(CliError::config)?;
        Ok(p)
    }

    /// The config key a sweep axis writes to.
    pub fn sweep_axis(&self) -> Result<&'static str, CliError> {
        axis_key(self.get("sweep.axis"))
    }

    pub fn sweep_values(&self) -> Result<Vec<String>, CliError> {
        split_values(self.get("sweep.values"))
    }

    pub fn sweep_repeats(&self) -> Result<usize, CliError> {
        if self.values.contains_key("sweep.repeats") {
            self.parse("sweep.repeats")
        } else {
            Ok(1)
        }
    }
}

pub fn axis_key(axis: &str) -> Result<&'static str, CliError> {
    match axis {
        "noise_level" => Ok("model.noise.level"),
        "batch_size" => Ok("algo.batch_size"),
        "warm_start_ell" => Ok("model.init.ell"),
        other => Err(CliError::Config(format!(
            "`sweep.axis`: {other:?} is not one of noise_level, batch_size, warm_start_ell"
        ))),
    }
}

pub fn split_values(text: &str) -> Result<Vec<String>, CliError> {
    let vals: Vec<String> = text.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    for v in &vals {
        v.parse::<f64>()
            .map_err(|_| CliError::Config(format!("`sweep.values`: {v:?} is not a number")))?;
    }
    Ok(vals)
}

/// `COUNT*bernoulli(P,SCALE); COUNT*uniform(LO,HI); ...`, counts optional.
fn parse_marginals(text: &str) -> Result<Vec<Marginal>, CliError> {
    let bad = |item: &str| CliError::Config(format!("`model.weights.marginals`: cannot parse {item:?}"));
    let mut out = Vec::new();
    for item in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (count, body) = match item.split_once('*') {
            Some((c, b)) => (c.trim().parse::<usize>().map_err(|_| bad(item))?, b.trim()),
            None => (1, item),
        };
        let (name, args) = body
            .strip_suffix(')')
            .and_then(|b| b.split_once('('))
            .ok_or_else(|| bad(item))?;
        let args: Vec<f64> = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad(item))?;
        let m = match (name.trim(), args.as_slice()) {
            ("bernoulli", &[p, scale]) => Marginal::ScaledBernoulli { p, scale },
            ("uniform", &[lo, hi]) => Marginal::Uniform { lo, hi },
            _ => return Err(bad(item)),
        };
        out.extend(std::iter::repeat_n(m, count));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_text_round_trips() {
        let raw = parse_text("seed = 4\nmodel.n = 10 # comment\nmodel.m=20\n").unwrap();
        let r = resolve(raw).unwrap();
        let again = resolve(parse_text(&r.text()).unwrap()).unwrap();
        assert_eq!(r.text(), again.text());
        assert_eq!(r.get("model.init.sigma_lo"), "0.9");
        assert_eq!(r.get("algo.ell"), "0.1");
    }

    #[test]
    fn unknown_key_and_missing_seed() {
        match parse_text("seed = 1\nmodel.nn = 3\n") {
            Err(CliError::Config(msg)) => assert!(msg.contains("model.nn")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(resolve(parse_text("model.n = 3").unwrap()), Err(CliError::Config(_))));
    }

    #[test]
    fn marginal_lists() {
        let ms = parse_marginals("2*bernoulli(0.1, 0.5); uniform(0,1)").unwrap();
        assert_eq!(ms.len(), 3);
        assert_eq!(ms[2], Marginal::Uniform { lo: 0.0, hi: 1.0 });
        assert!(parse_marginals("gauss(0,1)").is_err());
    }

    #[test]
    fn sections_only_echo_when_present() {
        let r = resolve(parse_text("seed = 1").unwrap()).unwrap();
        assert!(!r.text().contains("equil."));
        let r = resolve(parse_text("seed = 1\nequil.epsilon = 0.01").unwrap()).unwrap();
        assert!(r.text().contains("equil.decay = quadratic"));
    }
}
