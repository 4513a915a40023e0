//! Flat `key = value` configuration with `[section]` headers.
//!
//! Parsing is total: every input yields either a config or an error carrying
//! the offending line number. Unknown keys are hard errors — no silent typos.
//!
//! Recognized sections: one `[problem]`, one `[run]`, one or more `[policy]`
//! blocks. `#` starts a comment. All randomness flows from the `seeds` key;
//! there is no wall-clock seeding.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::objective::{data, MiniBatchOracle, ProblemInstance, Sampling};
use crate::optimizer::{GradientSource, RunConfig};
use crate::stepsize::{Caps, StepPolicy};
use crate::theory;
use crate::vecops::norm;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone)]
pub struct RawEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone)]
pub struct RawSection {
    pub name: String,
    pub line: usize,
    pub entries: Vec<RawEntry>,
}

#[derive(Debug, Clone)]
pub struct RawConfig {
    pub sections: Vec<RawSection>,
}

/// Splits the text into sections and `key = value` entries.
pub fn parse(text: &str) -> Result<RawConfig, ConfigError> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (i, raw_line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return err(lineno, format!("malformed section header '{line}'"));
            };
            sections.push(RawSection {
                name: name.trim().to_string(),
                line: lineno,
                entries: Vec::new(),
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(lineno, format!("expected 'key = value', got '{line}'"));
        };
        let Some(section) = sections.last_mut() else {
            return err(lineno, "key outside of any [section]");
        };
        section.entries.push(RawEntry {
            key: key.trim().to_string(),
            value: value.trim().to_string(),
            line: lineno,
        });
    }
    Ok(RawConfig { sections })
}

/// Tracks which keys were consumed so leftovers become located errors.
struct SectionReader<'a> {
    section: &'a RawSection,
    taken: Vec<bool>,
}

impl<'a> SectionReader<'a> {
    fn new(section: &'a RawSection) -> Self {
        Self {
            taken: vec![false; section.entries.len()],
            section,
        }
    }

    fn take(&mut self, key: &str) -> Option<&'a RawEntry> {
        for (i, e) in self.section.entries.iter().enumerate() {
            if e.key == key && !self.taken[i] {
                self.taken[i] = true;
                return Some(e);
            }
        }
        None
    }

    fn take_f64(&mut self, key: &str) -> Result<Option<(f64, usize)>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => match e.value.parse::<f64>() {
                Ok(v) => Ok(Some((v, e.line))),
                Err(_) => err(
                    e.line,
                    format!("'{key}' expects a number, got '{}'", e.value),
                ),
            },
        }
    }

    fn take_u64(&mut self, key: &str) -> Result<Option<(u64, usize)>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => match e.value.parse::<u64>() {
                Ok(v) => Ok(Some((v, e.line))),
                Err(_) => err(
                    e.line,
                    format!("'{key}' expects a non-negative integer, got '{}'", e.value),
                ),
            },
        }
    }

    fn take_f64_list(&mut self, key: &str) -> Result<Option<(Vec<f64>, usize)>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => {
                let parsed: Result<Vec<f64>, _> = e
                    .value
                    .split(',')
                    .map(|t| t.trim().parse::<f64>())
                    .collect();
                match parsed {
                    Ok(v) => Ok(Some((v, e.line))),
                    Err(_) => err(e.line, format!("'{key}' expects comma-separated numbers")),
                }
            }
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        for (i, taken) in self.taken.iter().enumerate() {
            if !taken {
                let e = &self.section.entries[i];
                return err(
                    e.line,
                    format!("unknown key '{}' in [{}]", e.key, self.section.name),
                );
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scenario {
    GoodInit { q0_small: f64 },
}

/// A fully interpreted experiment ready to run.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub problem: ProblemInstance,
    pub source: GradientSource,
    pub policies: Vec<(String, StepPolicy)>,
    pub seeds: Vec<u64>,
    pub run: RunConfig,
    pub scenario: Option<Scenario>,
    /// Heatmap grid settings (resolution, half-extent).
    pub resolution: usize,
    pub range: f64,
}

/// Interprets a parsed config. `base_dir` anchors relative `data` paths;
/// `default_name` names the experiment when `[run] name` is absent.
pub fn interpret(
    raw: &RawConfig,
    base_dir: &Path,
    default_name: &str,
) -> Result<ExperimentSpec, ConfigError> {
    let mut problem_section = None;
    let mut run_section = None;
    let mut policy_sections = Vec::new();
    for s in &raw.sections {
        match s.name.as_str() {
            "problem" if problem_section.is_none() => problem_section = Some(s),
            "run" if run_section.is_none() => run_section = Some(s),
            "policy" => policy_sections.push(s),
            "problem" | "run" => return err(s.line, format!("duplicate [{}] section", s.name)),
            other => return err(s.line, format!("unknown section [{other}]")),
        }
    }
    let Some(problem_section) = problem_section else {
        return err(1, "missing [problem] section");
    };
    if policy_sections.is_empty() {
        return err(1, "at least one [policy] section is required");
    }

    let problem = read_problem(problem_section, base_dir)?;
    let (name, seeds, run, source, scenario, resolution, range) =
        read_run(run_section, &problem, default_name)?;

    let mut policies = Vec::new();
    for s in &policy_sections {
        let (label, policy) = read_policy(s, &problem, &source, &run)?;
        if policies.iter().any(|(l, _)| *l == label) {
            return err(s.line, format!("duplicate policy label '{label}'"));
        }
        policies.push((label, policy));
    }

    Ok(ExperimentSpec {
        name,
        problem,
        source,
        policies,
        seeds,
        run,
        scenario,
        resolution,
        range,
    })
}

pub fn load(path: &Path) -> Result<ExperimentSpec, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        line: 0,
        message: format!("{}: {e}", path.display()),
    })?;
    let raw = parse(&text)?;
    let base_dir = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("experiment");
    interpret(&raw, base_dir, stem)
}

fn read_problem(section: &RawSection, base_dir: &Path) -> Result<ProblemInstance, ConfigError> {
    let mut r = SectionReader::new(section);
    let kind = match r.take("kind") {
        Some(e) => e,
        None => return err(section.line, "[problem] requires 'kind'"),
    };
    let problem = match kind.value.as_str() {
        "centroid" => {
            let points = match r.take("data") {
                Some(e) => load_rows(base_dir, &e.value, e.line)?,
                None => {
                    let (n, _) = r.take_u64("n")?.unwrap_or((100, section.line));
                    let (d, _) = r.take_u64("d")?.unwrap_or((2, section.line));
                    let (seed, _) = r.take_u64("seed")?.unwrap_or((0, section.line));
                    let (scale, _) = r.take_f64("scale")?.unwrap_or((1.0, section.line));
                    let mean = match r.take_f64_list("mean")? {
                        Some((m, line)) => broadcast(m, d as usize, line)?,
                        None => vec![0.0; d as usize],
                    };
                    data::gaussian_cloud(&mean, scale, n as usize, seed)
                }
            };
            ProblemInstance::centroid(points)
        }
        "quadratic" => {
            let (eigenvalues, _) = r.take_f64_list("eigenvalues")?.ok_or(ConfigError {
                line: kind.line,
                message: "quadratic requires 'eigenvalues'".into(),
            })?;
            let center = match r.take_f64_list("center")? {
                Some((c, line)) => broadcast(c, eigenvalues.len(), line)?,
                None => vec![0.0; eigenvalues.len()],
            };
            let (offset, _) = r.take_f64("offset")?.unwrap_or((0.0, section.line));
            ProblemInstance::quadratic(eigenvalues, center, offset)
        }
        "logistic" => {
            let (lambda, _) = r.take_f64("lambda")?.unwrap_or((0.1, section.line));
            let (design, labels) = match r.take("data") {
                Some(e) => {
                    let rows = load_rows(base_dir, &e.value, e.line)?;
                    // last column is the ±1 label
                    let mut design = Vec::with_capacity(rows.len());
                    let mut labels = Vec::with_capacity(rows.len());
                    for mut row in rows {
                        let Some(y) = row.pop() else {
                            return err(e.line, "logistic data rows need features + label");
                        };
                        labels.push(y);
                        design.push(row);
                    }
                    (design, labels)
                }
                None => {
                    let (n, _) = r.take_u64("n")?.unwrap_or((100, section.line));
                    let (d, _) = r.take_u64("d")?.unwrap_or((2, section.line));
                    let (seed, _) = r.take_u64("seed")?.unwrap_or((0, section.line));
                    data::logistic_cloud(n as usize, d as usize, seed)
                }
            };
            ProblemInstance::logistic(design, labels, lambda)
        }
        other => return err(kind.line, format!("unknown problem kind '{other}'")),
    };
    r.finish()?;
    problem.map_err(|e| ConfigError {
        line: section.line,
        message: e.to_string(),
    })
}

fn broadcast(values: Vec<f64>, d: usize, line: usize) -> Result<Vec<f64>, ConfigError> {
    if values.len() == d {
        Ok(values)
    } else if values.len() == 1 {
        Ok(vec![values[0]; d])
    } else {
        err(
            line,
            format!("expected 1 or {d} values, got {}", values.len()),
        )
    }
}

fn load_rows(base_dir: &Path, value: &str, line: usize) -> Result<Vec<Vec<f64>>, ConfigError> {
    let path = PathBuf::from(value);
    let path = if path.is_absolute() {
        path
    } else {
        base_dir.join(path)
    };
    data::load_matrix(&path).map_err(|e| ConfigError {
        line,
        message: e.to_string(),
    })
}

type RunParts = (
    String,
    Vec<u64>,
    RunConfig,
    GradientSource,
    Option<Scenario>,
    usize,
    f64,
);

fn read_run(
    section: Option<&RawSection>,
    problem: &ProblemInstance,
    default_name: &str,
) -> Result<RunParts, ConfigError> {
    let empty = RawSection {
        name: "run".into(),
        line: 0,
        entries: vec![],
    };
    let section = section.unwrap_or(&empty);
    let mut r = SectionReader::new(section);

    let name = r
        .take("name")
        .map(|e| e.value.clone())
        .unwrap_or_else(|| default_name.into());
    let seeds = match r.take("seeds") {
        None => vec![1],
        Some(e) => parse_seeds(&e.value, e.line)?,
    };
    let (iters, _) = r.take_u64("iters")?.unwrap_or((100, 0));
    let (stride, _) = r.take_u64("record_stride")?.unwrap_or((1, 0));
    let (stop, _) = r.take_f64("stop_grad_norm")?.unwrap_or((0.0, 0));

    let x0 = match r.take_f64_list("x0")? {
        Some((x0, line)) => {
            if x0.len() != problem.d() {
                return err(line, format!("x0 needs {} coordinates", problem.d()));
            }
            x0
        }
        None => {
            let (q0, _) = r.take_f64("q0")?.unwrap_or((1.0, 0));
            let (x0_seed, _) = r.take_u64("x0_seed")?.unwrap_or((0, 0));
            default_x0(problem, q0, x0_seed)
        }
    };

    let source = match r.take_u64("batch")? {
        None | Some((0, _)) => GradientSource::Full,
        Some((m, line)) => {
            if m as usize > problem.n_samples() {
                return err(
                    line,
                    format!("batch {m} exceeds sample count {}", problem.n_samples()),
                );
            }
            let sampling = match r.take("sampling") {
                None => Sampling::WithoutReplacement,
                Some(e) => match e.value.as_str() {
                    "without" => Sampling::WithoutReplacement,
                    "with" => Sampling::WithReplacement,
                    other => {
                        return err(
                            e.line,
                            format!("sampling must be with|without, got '{other}'"),
                        )
                    }
                },
            };
            let (estimate_k, _) = r.take_u64("estimate_k")?.unwrap_or((64, 0));
            GradientSource::MiniBatch(
                MiniBatchOracle::new(m as usize, sampling, 0).with_estimate_k(estimate_k as usize),
            )
        }
    };

    let scenario = match r.take("scenario") {
        None => None,
        Some(e) => match e.value.as_str() {
            "good_init" => {
                let (q0_small, _) = r.take_f64("q0_small")?.unwrap_or((1e-8, 0));
                Some(Scenario::GoodInit { q0_small })
            }
            other => return err(e.line, format!("unknown scenario '{other}'")),
        },
    };

    let (resolution, _) = r.take_u64("resolution")?.unwrap_or((101, 0));
    let (range, _) = r.take_f64("range")?.unwrap_or((3.0, 0));
    r.finish()?;

    let run = RunConfig::new(iters, 0, x0)
        .with_record_stride(stride)
        .with_stop_grad_norm(stop);
    Ok((
        name,
        seeds,
        run,
        source,
        scenario,
        resolution as usize,
        range,
    ))
}

/// x0 at distance √(2 q0) from x* (direction seeded by `x0_seed`), or the
/// origin when the minimizer is unknown.
fn default_x0(problem: &ProblemInstance, q0: f64, x0_seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    match problem.x_star() {
        None => vec![0.0; problem.d()],
        Some(xs) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(x0_seed);
            let dir: Vec<f64> = (0..problem.d()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let len = norm(&dir).max(f64::MIN_POSITIVE);
            let radius = (2.0 * q0).sqrt();
            xs.iter()
                .zip(&dir)
                .map(|(a, b)| a + b * radius / len)
                .collect()
        }
    }
}

fn parse_seeds(value: &str, line: usize) -> Result<Vec<u64>, ConfigError> {
    if let Some(n) = value.strip_prefix("auto:") {
        let n: u64 = n.trim().parse().map_err(|_| ConfigError {
            line,
            message: format!("bad seed count '{n}'"),
        })?;
        if n == 0 {
            return err(line, "auto:<n> needs n >= 1");
        }
        return Ok((1..=n).collect());
    }
    let seeds: Result<Vec<u64>, _> = value.split(',').map(|t| t.trim().parse::<u64>()).collect();
    seeds.map_err(|_| ConfigError {
        line,
        message: format!("bad seeds list '{value}'"),
    })
}

fn read_policy(
    section: &RawSection,
    problem: &ProblemInstance,
    source: &GradientSource,
    run: &RunConfig,
) -> Result<(String, StepPolicy), ConfigError> {
    let mut r = SectionReader::new(section);
    let Some(kind) = r.take("policy") else {
        return err(
            section.line,
            "[policy] requires a 'policy' key naming the variant",
        );
    };
    let label = r
        .take("label")
        .map(|e| e.value.clone())
        .unwrap_or_else(|| kind.value.clone());

    let f_star_default = problem.f_star();
    let policy = match kind.value.as_str() {
        "fixed" => {
            let Some((h0, _)) = r.take_f64("h0")? else {
                return err(kind.line, "fixed requires 'h0'");
            };
            StepPolicy::fixed(h0)
        }
        "epoch" => {
            let Some((h0, _)) = r.take_f64("h0")? else {
                return err(kind.line, "epoch requires 'h0'");
            };
            let (factor, _) = r.take_f64("decay_factor")?.unwrap_or((6.0, 0));
            let (period, _) = r.take_u64("decay_period")?.unwrap_or((100, 0));
            StepPolicy::epoch_decay(h0, factor, period)
        }
        "scheduled" => {
            let q0 = problem.q(&run.x0).ok_or(ConfigError {
                line: kind.line,
                message: "scheduled needs a problem with a known minimizer".into(),
            })?;
            let alpha_s =
                scheduled_alpha(problem, source, &run.x0, q0).map_err(|m| ConfigError {
                    line: kind.line,
                    message: m,
                })?;
            StepPolicy::scheduled(problem.mu(), q0, alpha_s)
        }
        "polyak" => {
            let f_star = r
                .take_f64("f_star")?
                .map(|(v, _)| v)
                .unwrap_or(f_star_default);
            StepPolicy::polyak(f_star)
        }
        "splr" => {
            let f_star = r
                .take_f64("f_star")?
                .map(|(v, _)| v)
                .unwrap_or(f_star_default);
            let (refresh, _) = r.take_u64("refresh")?.unwrap_or((1, 0));
            StepPolicy::polyak_stochastic(f_star, refresh)
        }
        "splr-est" => {
            let (gamma0, _) = r.take_f64("gamma0")?.unwrap_or((1.0, 0));
            let (gamma_p, _) = r.take_f64("gamma_p")?.unwrap_or((0.5, 0));
            StepPolicy::polyak_estimated(gamma0, gamma_p)
        }
        other => return err(kind.line, format!("unknown policy '{other}'")),
    };

    let h_min = r.take_f64("h_min")?;
    let h_max = r.take_f64("h_max")?;
    let policy = match (h_min, h_max) {
        (None, None) => policy,
        (Some((lo, line)), Some((hi, _))) => {
            let caps = Caps::new(lo, hi).map_err(|e| ConfigError {
                line,
                message: e.to_string(),
            })?;
            policy.with_caps(caps)
        }
        (Some((_, line)), None) | (None, Some((_, line))) => {
            return err(line, "caps need both 'h_min' and 'h_max'")
        }
    };
    r.finish()?;
    Ok((label, policy))
}

/// α_S for the optimal schedule: exact (or estimated) σ² at x0 and the
/// conservative gradient ceiling `‖∇f(x0)‖ + L√(2 q0)`.
fn scheduled_alpha(
    problem: &ProblemInstance,
    source: &GradientSource,
    x0: &[f64],
    q0: f64,
) -> Result<f64, String> {
    let sigma2 =
        crate::harness::noise_variance_at(problem, source, x0).map_err(|e| e.to_string())?;
    let g0 = problem.full_gradient(x0).map_err(|e| e.to_string())?;
    let m = theory::m_bound_estimate(norm(&g0), problem.ell(), q0);
    theory::alpha_scheduled(problem.mu(), sigma2, m).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stepsize::PolicyVariant;

    const MINIMAL: &str = "\
[problem]
kind = centroid
n = 20
d = 2
seed = 7

[run]
iters = 10
seeds = 1

[policy]
policy = fixed
h0 = 0.1
";

    #[test]
    fn minimal_config_parses_and_interprets() {
        let raw = parse(MINIMAL).unwrap();
        let spec = interpret(&raw, Path::new("."), "mini").unwrap();
        assert_eq!(spec.name, "mini");
        assert_eq!(spec.seeds, vec![1]);
        assert_eq!(spec.run.max_iters, 10);
        assert_eq!(spec.policies.len(), 1);
        assert!(matches!(spec.source, GradientSource::Full));
    }

    #[test]
    fn unknown_key_is_a_located_error() {
        let text = format!("{MINIMAL}learnig_rate = 0.1\n");
        let raw = parse(&text).unwrap();
        let e = interpret(&raw, Path::new("."), "x").unwrap_err();
        assert!(e.message.contains("learnig_rate"), "{e}");
        assert_eq!(e.line, 14);
    }

    #[test]
    fn malformed_lines_are_located() {
        assert_eq!(parse("[problem\n").unwrap_err().line, 1);
        assert_eq!(parse("[problem]\nnot a pair\n").unwrap_err().line, 2);
        assert_eq!(parse("orphan = 1\n").unwrap_err().line, 1);
    }

    #[test]
    fn seeds_auto_expansion() {
        assert_eq!(parse_seeds("auto:4", 1).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_seeds("5, 9,2", 1).unwrap(), vec![5, 9, 2]);
        assert!(parse_seeds("auto:0", 1).is_err());
        assert!(parse_seeds("a,b", 1).is_err());
    }

    #[test]
    fn comments_and_inline_comments_are_ignored() {
        let text = format!("# leading comment\n{MINIMAL}\n# trailing\n");
        let text = text.replace("h0 = 0.1", "h0 = 0.1  # step");
        let raw = parse(&text).unwrap();
        interpret(&raw, Path::new("."), "x").unwrap();
    }

    #[test]
    fn policy_variants_and_caps() {
        let text = "\
[problem]
kind = quadratic
eigenvalues = 1, 10

[run]
iters = 5
batch = 1

[policy]
policy = splr
refresh = 3
h_min = 1e-6
h_max = 2.0

[policy]
policy = epoch
h0 = 0.6

[policy]
policy = scheduled

[policy]
policy = splr-est
";
        let raw = parse(text).unwrap();
        let spec = interpret(&raw, Path::new("."), "x").unwrap();
        assert_eq!(spec.policies.len(), 4);
        let (label, splr) = &spec.policies[0];
        assert_eq!(label, "splr");
        assert!(matches!(
            splr.variant,
            PolicyVariant::PolyakStochastic {
                refresh_period: 3,
                ..
            }
        ));
        assert_eq!(splr.caps.unwrap().h_max, 2.0);
        assert!(matches!(
            spec.policies[2].1.variant,
            PolicyVariant::Scheduled { .. }
        ));
    }

    #[test]
    fn duplicate_labels_and_missing_sections_error() {
        let text = format!("{MINIMAL}\n[policy]\npolicy = fixed\nh0 = 0.2\n");
        let raw = parse(&text).unwrap();
        assert!(interpret(&raw, Path::new("."), "x")
            .unwrap_err()
            .message
            .contains("duplicate"));

        let raw = parse("[run]\niters = 3\n").unwrap();
        assert!(interpret(&raw, Path::new("."), "x").is_err());
    }

    #[test]
    fn good_init_scenario_keys() {
        let text = MINIMAL.replace(
            "seeds = 1",
            "seeds = auto:3\nscenario = good_init\nq0_small = 1e-6",
        );
        let raw = parse(&text).unwrap();
        let spec = interpret(&raw, Path::new("."), "x").unwrap();
        assert_eq!(spec.scenario, Some(Scenario::GoodInit { q0_small: 1e-6 }));
    }

    #[test]
    fn x0_defaults_to_q0_distance_from_minimizer() {
        let raw = parse(MINIMAL).unwrap();
        let spec = interpret(&raw, Path::new("."), "x").unwrap();
        let q0 = spec.problem.q(&spec.run.x0).unwrap();
        assert!((q0 - 1.0).abs() < 1e-12);
    }
}
