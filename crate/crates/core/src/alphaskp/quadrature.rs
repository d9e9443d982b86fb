//! Exponential-sum quadratures `1/R ≈ Σ ω_l e^{-λ_l R}` for `R ≥ 1`.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use super::{EwaldConfig, SkpDecomposition, SkpKind, SkpTerm};
use crate::error::{KpmeError, Result};
use crate::exec;

/// Number of lifting factors tried per sinc rule, log-spaced in `[h*/4, 4h*]`.
pub const H_CANDIDATES: usize = 64;

/// Upper limit on the sinc half-width searched by [`sinc_rule_for_eps`].
const MAX_SINC_HALF_WIDTH: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RuleSource {
    Sinc { h: f64, half_width: usize },
    Tabulated,
}

/// Nodes and weights with the argument range on which they are certified.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub source: RuleSource,
    pub min_arg: f64,
    pub max_arg: f64,
    /// Max absolute error of the rule over its argument range.
    pub eps: f64,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Evaluates `Σ ω e^{-λ R}`.
    pub fn eval(&self, r: f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| w * (-l * r).exp())
            .sum()
    }

    /// Fails unless the rule's range contains `[1, 3M²]`.
    pub fn check_covers(&self, modes: usize) -> Result<()> {
        let required = (3 * modes * modes) as f64;
        if self.min_arg > 1.0 || self.max_arg < required {
            return Err(KpmeError::RuleRange {
                min_arg: self.min_arg,
                max_arg: self.max_arg,
                required,
            });
        }
        Ok(())
    }

    /// Measured max error over the integers of `[1, 3M²]`.
    pub fn measured_error(&self, modes: usize) -> f64 {
        quadrature_max_error(&self.nodes, &self.weights, &quadrature_arguments(modes))
    }
}

/// Integer arguments `1..=3M²` covering every `|m|²` with `m ∈ [-M, M]³ \ {0}`.
pub fn quadrature_arguments(modes: usize) -> Vec<f64> {
    (1..=3 * modes * modes).map(|r| r as f64).collect()
}

/// `max_R |1/R − Σ ω e^{-λ R}|` over `args`.
pub fn quadrature_max_error(nodes: &[f64], weights: &[f64], args: &[f64]) -> f64 {
    args.iter()
        .map(|&r| {
            let s: f64 = nodes.iter().zip(weights).map(|(l, w)| w * (-l * r).exp()).sum();
            (1.0 / r - s).abs()
        })
        .fold(0.0, f64::max)
}

/// Cardinal-sine nodes `λ_l = log(1 + e^{lh})` and weights
/// `ω_l = h / (1 + e^{-lh})` for `l ∈ [-N, N]`.
pub fn sinc_nodes(half_width: usize, h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = half_width as i64;
    (-n..=n)
        .map(|l| {
            let t = l as f64 * h;
            // log(1 + e^t) without overflow for large t
            let node = if t > 0.0 { t + (-t).exp().ln_1p() } else { t.exp().ln_1p() };
            (node, h / (1.0 + (-t).exp()))
        })
        .unzip()
}

/// Sinc rule of half-width `N` whose lifting factor minimizes the max error
/// over the arguments `1..=3M²`, scanning [`H_CANDIDATES`] values.
pub fn sinc_rule(half_width: usize, modes: usize) -> Result<QuadratureRule> {
    if half_width == 0 {
        return Err(KpmeError::invalid("sinc half-width must be at least 1"));
    }
    if modes == 0 {
        return Err(KpmeError::invalid("mode bound must be at least 1"));
    }
    let args = quadrature_arguments(modes);
    let h_star = PI / ((2 * half_width + 1) as f64).sqrt();
    let (lo, hi) = ((h_star / 4.0).ln(), (4.0 * h_star).ln());
    let errors = exec::map_range(H_CANDIDATES, |k| {
        let h = (lo + (hi - lo) * k as f64 / (H_CANDIDATES - 1) as f64).exp();
        let (nodes, weights) = sinc_nodes(half_width, h);
        (h, quadrature_max_error(&nodes, &weights, &args))
    });
    // first minimum in candidate order, so ties resolve deterministically
    let (h, eps) = errors
        .into_iter()
        .fold((f64::NAN, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let (nodes, weights) = sinc_nodes(half_width, h);
    Ok(QuadratureRule {
        nodes,
        weights,
        source: RuleSource::Sinc { h, half_width },
        min_arg: 1.0,
        max_arg: args.last().copied().unwrap_or(1.0),
        eps,
    })
}

/// Smallest sinc rule (found by doubling then bisection on the half-width)
/// whose certified error is at most `eps`.
pub fn sinc_rule_for_eps(eps: f64, modes: usize) -> Result<QuadratureRule> {
    if !(eps > 0.0) {
        return Err(KpmeError::invalid(format!("precision must be positive, got {eps}")));
    }
    let mut hi = 1;
    let mut best = loop {
        let rule = sinc_rule(hi, modes)?;
        if rule.eps <= eps {
            break rule;
        }
        if hi >= MAX_SINC_HALF_WIDTH {
            return Err(KpmeError::Numerical(format!(
                "no sinc rule with half-width ≤ {MAX_SINC_HALF_WIDTH} reaches {eps:e} for M = {modes} (best {:e})",
                rule.eps
            )));
        }
        hi = (2 * hi).min(MAX_SINC_HALF_WIDTH);
    };
    let mut lo = hi / 2; // fails (or zero)
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let rule = sinc_rule(mid, modes)?;
        if rule.eps <= eps {
            hi = mid;
            best = rule;
        } else {
            lo = mid;
        }
    }
    Ok(best)
}

/// Turns a quadrature of `1/R` into an SKP of `α_M`:
/// `α_λ(m) = e^{-(λ + π²/ξ²) m²}`, weights `ω_λ`, correction `Σ ω_λ`.
pub fn skp_from_quadrature(rule: &QuadratureRule, cfg: &EwaldConfig) -> Result<SkpDecomposition> {
    rule.check_covers(cfg.modes)?;
    let m = cfg.modes as i64;
    let damping = cfg.damping();
    let terms = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(&lambda, &w)| {
            let p: Vec<f64> = (-m..=m).map(|k| (-(lambda + damping) * (k * k) as f64).exp()).collect();
            SkpTerm {
                weight: w,
                profiles: [p.clone(), p.clone(), p],
            }
        })
        .collect();
    let kind = match rule.source {
        RuleSource::Sinc { .. } => SkpKind::Sinc,
        RuleSource::Tabulated => SkpKind::Tabulated,
    };
    let correction = rule.weights.iter().sum();
    Ok(SkpDecomposition::new(terms, correction, kind, rule.eps, [cfg.side(); 3]))
}

/// Lower bound `⌈(log(ε/16)/π)²⌉` on the node count of an optimal rule.
pub fn optimal_term_lower_bound(eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps < 16.0) {
        return Err(KpmeError::invalid(format!("precision must lie in (0, 16), got {eps}")));
    }
    let x = ((eps / 16.0).ln() / PI).powi(2);
    // absorb rounding so that exact integers are not bumped up
    Ok((x * (1.0 - 4.0 * f64::EPSILON)).ceil() as usize)
}

/// Reads a tabulated rule: a `count` line, `count` lines of `node weight`,
/// then a `min_arg max_arg eps` line. Blank lines and `#` comments are skipped.
pub fn parse_tabulated_rule(reader: impl BufRead) -> Result<QuadratureRule> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if !body.is_empty() {
            rows.push((i + 1, body.to_string()));
        }
    }
    let mut it = rows.into_iter();
    let (line, header) = it.next().ok_or(KpmeError::Parse {
        line: 1,
        message: "empty rule file".into(),
    })?;
    let count: usize = header.parse().map_err(|e| KpmeError::Parse {
        line,
        message: format!("bad node count: {e}"),
    })?;
    let numbers = |line: usize, s: &str, n: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = s
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| KpmeError::Parse {
                line,
                message: format!("{e}"),
            })?;
        if v.len() != n {
            return Err(KpmeError::Parse {
                line,
                message: format!("expected {n} fields, got {}", v.len()),
            });
        }
        Ok(v)
    };
    let mut nodes = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for _ in 0..count {
        let (line, body) = it.next().ok_or(KpmeError::Parse {
            line,
            message: format!("expected {count} node lines"),
        })?;
        let v = numbers(line, &body, 2)?;
        nodes.push(v[0]);
        weights.push(v[1]);
    }
    let (tline, trailer) = it.next().ok_or(KpmeError::Parse {
        line,
        message: "missing `min_arg max_arg eps` trailer".into(),
    })?;
    let t = numbers(tline, &trailer, 3)?;
    if let Some((extra, _)) = it.next() {
        return Err(KpmeError::Parse {
            line: extra,
            message: "unexpected content after trailer".into(),
        });
    }
    if !(t[0] <= t[1]) {
        return Err(KpmeError::Parse {
            line: tline,
            message: format!("empty argument range [{}, {}]", t[0], t[1]),
        });
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        source: RuleSource::Tabulated,
        min_arg: t[0],
        max_arg: t[1],
        eps: t[2],
    })
}

pub fn load_tabulated_rule(path: impl AsRef<Path>) -> Result<QuadratureRule> {
    let file = std::fs::File::open(path.as_ref())?;
    let rule = parse_tabulated_rule(std::io::BufReader::new(file))?;
    let measured = quadrature_max_error(&rule.nodes, &rule.weights, &integer_range(rule.min_arg, rule.max_arg));
    if measured > rule.eps {
        log::warn!(
            "{}: measured error {measured:e} exceeds declared {:e} on [{}, {}]",
            path.as_ref().display(),
            rule.eps,
            rule.min_arg,
            rule.max_arg
        );
    }
    Ok(rule)
}

fn integer_range(lo: f64, hi: f64) -> Vec<f64> {
    let start = lo.ceil().max(1.0) as u64;
    let end = hi.floor() as u64;
    (start..=end).map(|r| r as f64).collect()
}

pub fn write_tabulated_rule(mut out: impl Write, rule: &QuadratureRule) -> Result<()> {
    writeln!(out, "{}", rule.len())?;
    for (l, w) in rule.nodes.iter().zip(&rule.weights) {
        writeln!(out, "{l:e} {w:e}")?;
    }
    writeln!(out, "{} {} {:e}", rule.min_arg, rule.max_arg, rule.eps)?;
    Ok(())
}
