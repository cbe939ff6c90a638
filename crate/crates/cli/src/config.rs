//! Problem-definition files: INI-like sections with `key = value` lines and
//! quoted expressions. The grammar is documented in `docs/config.ebnf`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use quadgrad::{
    build_grid, CouplingMatrix, Error as CoreError, GradientMatrixSpec, GradientScheme, Grid, LinearOperator,
    OperatorSpec, ProblemSpec, ScalarField, VectorField,
};
use thiserror::Error;

use crate::expr::{self, Expr};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("[{section}] {key}: {message}")]
    Semantic { section: String, key: String, message: String },
    #[error("[{section}] {key}: {message} at node {node} (x = {coords:?})")]
    Invariant { section: String, key: String, node: usize, coords: Vec<f64>, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn semantic(section: &str, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Semantic { section: section.into(), key: key.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub dim: usize,
    pub extents: Vec<(f64, f64)>,
    pub resolution: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConfig {
    /// Per-axis diffusion and drift.
    pub diffusion: Vec<Expr>,
    pub drift: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorConfig {
    Laplacian,
    Linear(LinearConfig),
    PucciPlus { lower: f64, upper: f64, drift: Expr },
    PucciMinus { lower: f64, upper: f64, drift: Expr },
    BellmanMin(Vec<LinearConfig>),
    BellmanMax(Vec<LinearConfig>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GradientConfig {
    /// `M = μ(x) I`.
    Scalar(Expr),
    /// Diagonal entries, one per axis.
    Diagonal(Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub scheme: Option<GradientScheme>,
    pub tol: Option<f64>,
    pub max_iterations: Option<usize>,
    pub initial_step: Option<f64>,
    pub max_step: Option<f64>,
    pub max_arclength: Option<f64>,
    pub fold_tol: Option<f64>,
    pub seed_scale: Option<f64>,
    pub seed_rungs: Option<usize>,
    /// A priori window `[Λ₁, Λ₂]`.
    pub window: Option<(f64, f64)>,
    pub lambda_grid: Option<Vec<f64>>,
    pub gamma_grid: Option<Vec<f64>>,
    pub output: Option<String>,
    pub branch_csv: Option<String>,
    pub region_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigDocument {
    pub domain: Domain,
    pub operators: Vec<OperatorConfig>,
    pub gradients: Vec<GradientConfig>,
    /// `coupling[i][j]` is `c_ij`; unset entries are zero.
    pub coupling: Vec<Vec<Expr>>,
    pub coupling_threshold: Option<f64>,
    /// Raw node values for the coupling, overriding the expressions.
    pub coupling_file: Option<String>,
    pub rhs: Vec<Expr>,
    pub rhs_file: Option<String>,
    pub run: RunConfig,
}

impl ConfigDocument {
    pub fn n(&self) -> usize {
        self.operators.len()
    }
}

#[derive(Debug, Clone)]
struct Item {
    text: String,
    quoted: bool,
    line: usize,
    column: usize,
}

#[derive(Debug, Clone)]
struct Entry {
    items: Vec<Item>,
    line: usize,
}

type Sections = BTreeMap<String, BTreeMap<String, Entry>>;

/// First pass: sections and raw entries with positions.
fn read_sections(text: &str) -> Result<Sections, ConfigError> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let syntax = |column: usize, message: &str| ConfigError::Syntax { line, column, message: message.into() };
        let body = raw.trim_start();
        let indent = raw.len() - body.len();
        if body.is_empty() || body.starts_with('#') || body.starts_with(';') {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let close = rest.find(']').ok_or_else(|| syntax(indent + 1, "unclosed section header"))?;
            let name = rest[..close].trim();
            let tail = rest[close + 1..].trim();
            if !tail.is_empty() && !tail.starts_with('#') && !tail.starts_with(';') {
                return Err(syntax(indent + close + 3, "text after section header"));
            }
            let valid = !name.is_empty()
                && name.split('.').all(|p| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'));
            if !valid {
                return Err(syntax(indent + 2, "malformed section name"));
            }
            if sections.contains_key(name) {
                return Err(syntax(indent + 2, &format!("duplicate section [{name}]")));
            }
            sections.insert(name.to_string(), BTreeMap::new());
            current = Some(name.to_string());
            continue;
        }
        let eq = body.find('=').ok_or_else(|| syntax(indent + 1, "expected `key = value` or a section header"))?;
        let key = body[..eq].trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(syntax(indent + 1, "malformed key"));
        }
        let section = current.as_ref().ok_or_else(|| syntax(indent + 1, "entry before the first section"))?;
        let items = read_items(&body[eq + 1..], line, indent + eq + 2)?;
        let entries = sections.get_mut(section).expect("current section exists");
        if entries.contains_key(key) {
            return Err(syntax(indent + 1, &format!("duplicate key `{key}`")));
        }
        entries.insert(key.to_string(), Entry { items, line });
    }
    Ok(sections)
}

/// Comma-separated items; `first_column` is the 1-based column of `value[0]`.
fn read_items(value: &str, line: usize, first_column: usize) -> Result<Vec<Item>, ConfigError> {
    let chars: Vec<(usize, char)> = value.char_indices().collect();
    let column_of = |byte: usize| first_column + value[..byte].chars().count();
    let mut items = Vec::new();
    let mut k = 0;
    loop {
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        if k == chars.len() || matches!(chars[k].1, '#' | ';') {
            if !items.is_empty() || k < chars.len() && items.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    column: column_of(chars.get(k).map_or(value.len(), |c| c.0)),
                    message: "missing value".into(),
                });
            }
            return Err(ConfigError::Syntax { line, column: column_of(value.len()), message: "missing value".into() });
        }
        let (item, next) = if chars[k].1 == '"' {
            let start = chars[k].0 + 1;
            let close = chars[k + 1..].iter().find(|c| c.1 == '"').ok_or(ConfigError::Syntax {
                line,
                column: column_of(chars[k].0),
                message: "unterminated string".into(),
            })?;
            let end_index = chars.iter().position(|c| c.0 == close.0).expect("found above");
            (
                Item { text: value[start..close.0].to_string(), quoted: true, line, column: column_of(start) },
                end_index + 1,
            )
        } else {
            let start = chars[k].0;
            let mut j = k;
            while j < chars.len() && !matches!(chars[j].1, ',' | '"' | '#' | ';') {
                j += 1;
            }
            if j < chars.len() && chars[j].1 == '"' {
                return Err(ConfigError::Syntax {
                    line,
                    column: column_of(chars[j].0),
                    message: "unexpected quote".into(),
                });
            }
            let end = chars.get(j).map_or(value.len(), |c| c.0);
            (Item { text: value[start..end].trim_end().to_string(), quoted: false, line, column: column_of(start) }, j)
        };
        items.push(item);
        k = next;
        while k < chars.len() && chars[k].1.is_whitespace() {
            k += 1;
        }
        match chars.get(k) {
            None => return Ok(items),
            Some((_, ',')) => k += 1,
            Some((_, '#' | ';')) => return Ok(items),
            Some((b, _)) => {
                return Err(ConfigError::Syntax {
                    line,
                    column: column_of(*b),
                    message: "expected `,` between values".into(),
                })
            }
        }
    }
}

/// Second pass: typed access to one section, tracking which keys were used.
struct SectionReader<'a> {
    name: &'a str,
    entries: BTreeMap<String, Entry>,
}

impl<'a> SectionReader<'a> {
    fn new(name: &'a str, entries: Option<BTreeMap<String, Entry>>) -> Self {
        SectionReader { name, entries: entries.unwrap_or_default() }
    }

    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        semantic(self.name, key, message)
    }

    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn single(&self, key: &str, e: Entry) -> Result<Item, ConfigError> {
        let mut items = e.items;
        if items.len() != 1 {
            return Err(self.err(key, format!("expected a single value, got {}", items.len())));
        }
        Ok(items.remove(0))
    }

    fn bare(&self, key: &str, item: &Item) -> Result<(), ConfigError> {
        if item.quoted {
            Err(self.err(key, "expected an unquoted value"))
        } else {
            Ok(())
        }
    }

    fn number_item(&self, key: &str, item: &Item) -> Result<f64, ConfigError> {
        self.bare(key, item)?;
        match item.text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.err(key, format!("`{}` is not a finite number", item.text))),
        }
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => {
                let item = self.single(key, e)?;
                self.number_item(key, &item).map(Some)
            }
        }
    }

    fn count(&mut self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => {
                let item = self.single(key, e)?;
                self.bare(key, &item)?;
                item.text
                    .parse::<usize>()
                    .map(Some)
                    .map_err(|_| self.err(key, format!("`{}` is not a count", item.text)))
            }
        }
    }

    fn numbers(&mut self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => e.items.iter().map(|i| self.number_item(key, i)).collect::<Result<Vec<_>, _>>().map(Some),
        }
    }

    fn range_item(&self, key: &str, item: &Item) -> Result<(f64, f64), ConfigError> {
        self.bare(key, item)?;
        let (a, b) = item.text.split_once(':').ok_or_else(|| self.err(key, "expected `a:b`"))?;
        let parse = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite());
        match (parse(a), parse(b)) {
            (Some(a), Some(b)) if a < b => Ok((a, b)),
            (Some(_), Some(_)) => Err(self.err(key, format!("range `{}` is empty", item.text))),
            _ => Err(self.err(key, format!("`{}` is not a range `a:b`", item.text))),
        }
    }

    fn word(&mut self, key: &str) -> Result<Option<String>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => {
                let item = self.single(key, e)?;
                Ok(Some(item.text))
            }
        }
    }

    fn expr_item(&self, key: &str, item: &Item) -> Result<Expr, ConfigError> {
        if !item.quoted {
            return Err(self.err(key, "expressions must be quoted"));
        }
        let e = expr::parse(&item.text).map_err(|e| ConfigError::Syntax {
            line: item.line,
            column: item.column + item.text[..e.offset.min(item.text.len())].chars().count(),
            message: format!("in expression: {}", e.message),
        })?;
        e.check_domain().map_err(|m| self.err(key, m))?;
        Ok(e)
    }

    fn expr(&mut self, key: &str) -> Result<Option<Expr>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => {
                let item = self.single(key, e)?;
                self.expr_item(key, &item).map(Some)
            }
        }
    }

    fn exprs(&mut self, key: &str) -> Result<Option<Vec<Expr>>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(e) => e.items.iter().map(|i| self.expr_item(key, i)).collect::<Result<Vec<_>, _>>().map(Some),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, e)) => Err(ConfigError::Semantic {
                section: self.name.into(),
                key: key.clone(),
                message: format!("unknown key (line {})", e.line),
            }),
        }
    }
}

fn component_sections(
    sections: &mut Sections,
    prefix: &str,
) -> Result<BTreeMap<usize, BTreeMap<String, Entry>>, ConfigError> {
    let names: Vec<String> = sections.keys().filter(|k| k.starts_with(&format!("{prefix}."))).cloned().collect();
    let mut out = BTreeMap::new();
    for name in names {
        let index = name[prefix.len() + 1..]
            .parse::<usize>()
            .ok()
            .filter(|&i| i >= 1)
            .ok_or_else(|| semantic(&name, "", "component index must be a positive integer"))?;
        out.insert(index, sections.remove(&name).expect("listed above"));
    }
    Ok(out)
}

fn linear_config(r: &mut SectionReader<'_>, suffix: &str, dim: usize) -> Result<LinearConfig, ConfigError> {
    let dkey = format!("diffusion{suffix}");
    let bkey = format!("drift{suffix}");
    let diffusion = r.exprs(&dkey)?.ok_or_else(|| r.err(&dkey, "missing diffusion coefficients"))?;
    let drift = r.exprs(&bkey)?.unwrap_or_else(|| vec![Expr::num(0.0); dim]);
    if diffusion.len() != dim || drift.len() != dim {
        return Err(r.err(&dkey, format!("need {dim} diffusion and {dim} drift expressions, one per axis")));
    }
    Ok(LinearConfig { diffusion, drift })
}

fn parse_scheme(s: &str) -> Option<GradientScheme> {
    match s {
        "centered" => Some(GradientScheme::Centered),
        "exponential_fit" => Some(GradientScheme::ExponentialFit),
        _ => None,
    }
}

fn scheme_name(s: GradientScheme) -> &'static str {
    match s {
        GradientScheme::Centered => "centered",
        GradientScheme::ExponentialFit => "exponential_fit",
    }
}

/// Parses and validates a problem definition. Coefficient expressions are
/// evaluated on the grid and checked against the solver's invariants; files named
/// by `values_file` are only checked for presence here, not read.
pub fn parse_config(text: &str) -> Result<ConfigDocument, ConfigError> {
    let mut sections = read_sections(text)?;

    let mut r = SectionReader::new("domain", sections.remove("domain"));
    let dim = r.count("dim")?.ok_or_else(|| r.err("dim", "missing"))?;
    if !(1..=2).contains(&dim) {
        return Err(r.err("dim", "only 1 and 2 dimensions are supported"));
    }
    let extents = match r.take("extents") {
        None => return Err(r.err("extents", "missing")),
        Some(e) => e.items.iter().map(|i| r.range_item("extents", i)).collect::<Result<Vec<_>, _>>()?,
    };
    let resolution = match r.take("resolution") {
        None => return Err(r.err("resolution", "missing")),
        Some(e) => e
            .items
            .iter()
            .map(|i| {
                r.bare("resolution", i)?;
                i.text
                    .parse::<usize>()
                    .ok()
                    .filter(|&v| v >= 1)
                    .ok_or_else(|| r.err("resolution", "expected a positive count"))
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    if extents.len() != dim || resolution.len() != dim {
        return Err(r.err("extents", format!("need {dim} extents and {dim} resolutions")));
    }
    r.finish()?;
    let domain = Domain { dim, extents, resolution };

    let op_sections = component_sections(&mut sections, "operator")?;
    let n = op_sections.len();
    if n == 0 {
        return Err(semantic("operator.1", "kind", "at least one [operator.i] section is required"));
    }
    if op_sections.keys().copied().ne(1..=n) {
        return Err(semantic("operator", "", format!("operator sections must be numbered 1..{n} without gaps")));
    }
    let mut operators = Vec::with_capacity(n);
    for (i, entries) in op_sections {
        let name = format!("operator.{i}");
        let mut r = SectionReader::new(&name, Some(entries));
        let kind = r.word("kind")?.ok_or_else(|| r.err("kind", "missing"))?;
        let op = match kind.as_str() {
            "laplacian" => OperatorConfig::Laplacian,
            "linear" => OperatorConfig::Linear(linear_config(&mut r, "", dim)?),
            "pucci_plus" | "pucci_minus" => {
                let lower = r.number("lower")?.ok_or_else(|| r.err("lower", "missing"))?;
                let upper = r.number("upper")?.ok_or_else(|| r.err("upper", "missing"))?;
                if !(lower > 0.0 && lower <= upper) {
                    return Err(r.err("lower", format!("need 0 < lower ≤ upper, got {lower}, {upper}")));
                }
                let drift = r.expr("drift")?.unwrap_or(Expr::num(0.0));
                if kind == "pucci_plus" {
                    OperatorConfig::PucciPlus { lower, upper, drift }
                } else {
                    OperatorConfig::PucciMinus { lower, upper, drift }
                }
            }
            "bellman_min" | "bellman_max" => {
                let members = r.count("members")?.ok_or_else(|| r.err("members", "missing"))?;
                if members == 0 {
                    return Err(r.err("members", "need at least one member"));
                }
                let configs = (1..=members)
                    .map(|m| linear_config(&mut r, &format!(".{m}"), dim))
                    .collect::<Result<Vec<_>, _>>()?;
                if kind == "bellman_min" {
                    OperatorConfig::BellmanMin(configs)
                } else {
                    OperatorConfig::BellmanMax(configs)
                }
            }
            other => return Err(r.err("kind", format!("unknown operator kind `{other}`"))),
        };
        r.finish()?;
        operators.push(op);
    }

    let mut grad_sections = component_sections(&mut sections, "gradient")?;
    if let Some(&i) = grad_sections.keys().find(|&&i| i > n) {
        return Err(semantic(&format!("gradient.{i}"), "", format!("component index exceeds n = {n}")));
    }
    let mut gradients = Vec::with_capacity(n);
    for i in 1..=n {
        let name = format!("gradient.{i}");
        let mut r = SectionReader::new(&name, grad_sections.remove(&i));
        let scalar = r.expr("scalar")?;
        let diagonal = r.exprs("diagonal")?;
        let g = match (scalar, diagonal) {
            (Some(s), None) => GradientConfig::Scalar(s),
            (None, Some(d)) if d.len() == dim => GradientConfig::Diagonal(d),
            (None, Some(_)) => return Err(r.err("diagonal", format!("need {dim} entries"))),
            (None, None) => return Err(r.err("scalar", "missing `scalar` or `diagonal`")),
            (Some(_), Some(_)) => return Err(r.err("diagonal", "give either `scalar` or `diagonal`, not both")),
        };
        r.finish()?;
        gradients.push(g);
    }

    let mut r = SectionReader::new("coupling", sections.remove("coupling"));
    let mut coupling = vec![vec![Expr::num(0.0); n]; n];
    for (i, row) in coupling.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            if let Some(e) = r.expr(&format!("c{}{}", i + 1, j + 1))? {
                *c = e;
            }
        }
    }
    let coupling_threshold = r.number("threshold")?;
    let coupling_file = r.word("values_file")?;
    if let Some((key, _)) =
        r.entries.iter().find(|(k, _)| k.starts_with('c') && k[1..].chars().all(|c| c.is_ascii_digit()))
    {
        return Err(r.err(key, format!("component index exceeds n = {n}")));
    }
    r.finish()?;

    let mut r = SectionReader::new("rhs", sections.remove("rhs"));
    let mut rhs = vec![Expr::num(0.0); n];
    for (i, h) in rhs.iter_mut().enumerate() {
        if let Some(e) = r.expr(&format!("h{}", i + 1))? {
            *h = e;
        }
    }
    let rhs_file = r.word("values_file")?;
    if let Some((key, _)) =
        r.entries.iter().find(|(k, _)| k.starts_with('h') && k[1..].chars().all(|c| c.is_ascii_digit()))
    {
        return Err(r.err(key, format!("component index exceeds n = {n}")));
    }
    r.finish()?;

    let mut r = SectionReader::new("run", sections.remove("run"));
    let scheme = match r.word("scheme")? {
        None => None,
        Some(s) => Some(parse_scheme(&s).ok_or_else(|| r.err("scheme", format!("unknown scheme `{s}`")))?),
    };
    let window = match r.take("window") {
        None => None,
        Some(e) => Some(r.range_item("window", &r.single("window", e)?)?),
    };
    let run = RunConfig {
        lambda: r.number("lambda")?,
        gamma: r.number("gamma")?,
        scheme,
        tol: r.number("tol")?,
        max_iterations: r.count("max_iterations")?,
        initial_step: r.number("initial_step")?,
        max_step: r.number("max_step")?,
        max_arclength: r.number("max_arclength")?,
        fold_tol: r.number("fold_tol")?,
        seed_scale: r.number("seed_scale")?,
        seed_rungs: r.count("seed_rungs")?,
        window,
        lambda_grid: r.numbers("lambda_grid")?,
        gamma_grid: r.numbers("gamma_grid")?,
        output: r.word("output")?,
        branch_csv: r.word("branch_csv")?,
        region_csv: r.word("region_csv")?,
    };
    if let Some(t) = run.tol.filter(|t| *t <= 0.0) {
        return Err(r.err("tol", format!("tolerance must be positive, got {t}")));
    }
    r.finish()?;

    if let Some(name) = sections.keys().next() {
        return Err(semantic(name, "", "unknown section"));
    }

    let doc = ConfigDocument {
        domain,
        operators,
        gradients,
        coupling,
        coupling_threshold,
        coupling_file,
        rhs,
        rhs_file,
        run,
    };
    doc.build(None)?;
    Ok(doc)
}

/// Samples `e` on every node, rejecting non-finite values with a witness.
fn field(grid: &Arc<Grid<f64>>, e: &Expr, section: &str, key: &str) -> Result<ScalarField<f64>, ConfigError> {
    let f = ScalarField::from_fn(grid.clone(), |x, y| e.eval(x, y));
    if let Some(k) = f.values().iter().position(|v| !v.is_finite()) {
        return Err(invariant(grid, section, key, k, format!("`{e}` is not finite here")));
    }
    Ok(f)
}

fn invariant(grid: &Grid<f64>, section: &str, key: &str, node: usize, message: String) -> ConfigError {
    let coords = grid.coords(node)[..grid.dim()].to_vec();
    ConfigError::Invariant { section: section.into(), key: key.into(), node, coords, message }
}

fn core_error(grid: &Grid<f64>, section: &str, key: &str, e: CoreError) -> ConfigError {
    match e {
        CoreError::Domain { node, reason } => invariant(grid, section, key, node, reason),
        other => semantic(section, key, other.to_string()),
    }
}

/// Node values from a raw-array file: one row per node in lattice order, `columns`
/// comma- or whitespace-separated numbers per row, `#` comments allowed.
pub fn read_values_file(path: &Path, nodes: usize, columns: usize) -> Result<Vec<Vec<f64>>, ConfigError> {
    let io = |message: String| ConfigError::Io { path: path.display().to_string(), message };
    let text = std::fs::read_to_string(path).map_err(|e| io(e.to_string()))?;
    let mut rows = Vec::with_capacity(nodes);
    for (k, line) in text.lines().enumerate() {
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let row = body
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| io(format!("line {}: not a list of finite numbers", k + 1)))?;
        if row.len() != columns {
            return Err(io(format!("line {}: expected {columns} values, got {}", k + 1, row.len())));
        }
        rows.push(row);
    }
    if rows.len() != nodes {
        return Err(io(format!("expected {nodes} rows (one per grid node), got {}", rows.len())));
    }
    Ok(rows)
}

impl ConfigDocument {
    pub fn grid(&self) -> Result<Arc<Grid<f64>>, ConfigError> {
        build_grid(self.domain.dim, &self.domain.extents, &self.domain.resolution)
            .map_err(|e| semantic("domain", "resolution", e.to_string()))
    }

    fn linear(
        &self,
        grid: &Arc<Grid<f64>>,
        c: &LinearConfig,
        section: &str,
    ) -> Result<LinearOperator<f64>, ConfigError> {
        let diffusion =
            c.diffusion.iter().map(|e| field(grid, e, section, "diffusion")).collect::<Result<Vec<_>, _>>()?;
        let drift = c.drift.iter().map(|e| field(grid, e, section, "drift")).collect::<Result<Vec<_>, _>>()?;
        LinearOperator::new(diffusion, drift).map_err(|e| core_error(grid, section, "diffusion", e))
    }

    /// Assembles the problem. With `base = None` the raw-array files are skipped
    /// (their fields are zero), which is what validation during parsing uses.
    pub fn build(&self, base: Option<&Path>) -> Result<ProblemSpec<f64>, ConfigError> {
        let grid = self.grid()?;
        let n = self.n();
        let mut operators = Vec::with_capacity(n);
        for (i, op) in self.operators.iter().enumerate() {
            let section = format!("operator.{}", i + 1);
            let spec = match op {
                OperatorConfig::Laplacian => OperatorSpec::laplacian(&grid),
                OperatorConfig::Linear(c) => OperatorSpec::Linear(self.linear(&grid, c, &section)?),
                OperatorConfig::PucciPlus { lower, upper, drift }
                | OperatorConfig::PucciMinus { lower, upper, drift } => {
                    let b = field(&grid, drift, &section, "drift")?;
                    if let Some(k) = b.values().iter().position(|&v| v < 0.0) {
                        return Err(invariant(&grid, &section, "drift", k, "drift must be nonnegative".into()));
                    }
                    if matches!(op, OperatorConfig::PucciPlus { .. }) {
                        OperatorSpec::PucciPlus { lower: *lower, upper: *upper, drift: b }
                    } else {
                        OperatorSpec::PucciMinus { lower: *lower, upper: *upper, drift: b }
                    }
                }
                OperatorConfig::BellmanMin(ms) | OperatorConfig::BellmanMax(ms) => {
                    let members = ms.iter().map(|m| self.linear(&grid, m, &section)).collect::<Result<Vec<_>, _>>()?;
                    let built = if matches!(op, OperatorConfig::BellmanMin(_)) {
                        OperatorSpec::bellman_min(members)
                    } else {
                        OperatorSpec::bellman_max(members)
                    };
                    built.map_err(|e| core_error(&grid, &section, "members", e))?
                }
            };
            operators.push(spec);
        }

        let mut entries = Vec::with_capacity(n);
        for (i, g) in self.gradients.iter().enumerate() {
            let section = format!("gradient.{}", i + 1);
            let zero = || ScalarField::zeros(grid.clone());
            let e = match g {
                GradientConfig::Scalar(s) => {
                    let f = field(&grid, s, &section, "scalar")?;
                    if self.domain.dim == 1 {
                        vec![f]
                    } else {
                        vec![f.clone(), zero(), f]
                    }
                }
                GradientConfig::Diagonal(d) => {
                    let fs = d.iter().map(|e| field(&grid, e, &section, "diagonal")).collect::<Result<Vec<_>, _>>()?;
                    if self.domain.dim == 1 {
                        fs
                    } else {
                        vec![fs[0].clone(), zero(), fs[1].clone()]
                    }
                }
            };
            entries.push(e);
        }
        let gradient = GradientMatrixSpec::new(entries).map_err(|e| match e {
            CoreError::Domain { node, reason } => {
                let component = reason.split_whitespace().nth(2).unwrap_or("1").to_string();
                invariant(&grid, &format!("gradient.{component}"), "scalar", node, reason)
            }
            other => semantic("gradient", "", other.to_string()),
        })?;

        let nodes = grid.node_count();
        let mut c_fields = Vec::with_capacity(n);
        match (&self.coupling_file, base) {
            (Some(file), Some(base)) => {
                let rows = read_values_file(&base.join(file), nodes, n * n)?;
                for i in 0..n {
                    let row = (0..n)
                        .map(|j| {
                            ScalarField::new(grid.clone(), rows.iter().map(|r| r[i * n + j]).collect())
                                .expect("node count")
                        })
                        .collect::<Vec<_>>();
                    c_fields.push(row);
                }
            }
            _ => {
                for (i, row) in self.coupling.iter().enumerate() {
                    let fs = row
                        .iter()
                        .enumerate()
                        .map(|(j, e)| field(&grid, e, "coupling", &format!("c{}{}", i + 1, j + 1)))
                        .collect::<Result<Vec<_>, _>>()?;
                    c_fields.push(fs);
                }
            }
        }
        let threshold = self.coupling_threshold.unwrap_or(quadgrad::coupling::DEFAULT_THRESHOLD);
        for (i, row) in c_fields.iter().enumerate() {
            for (j, f) in row.iter().enumerate() {
                if let Some(k) = f.values().iter().position(|&v| v < -threshold) {
                    let key = format!("c{}{}", i + 1, j + 1);
                    return Err(invariant(
                        &grid,
                        "coupling",
                        &key,
                        k,
                        format!("coupling negativity: {key} = {}", f.get(k)),
                    ));
                }
            }
        }
        let coupling =
            CouplingMatrix::new(c_fields, threshold).map_err(|e| core_error(&grid, "coupling", "threshold", e))?;

        let h = match (&self.rhs_file, base) {
            (Some(file), Some(base)) => {
                let rows = read_values_file(&base.join(file), nodes, n)?;
                (0..n)
                    .map(|i| ScalarField::new(grid.clone(), rows.iter().map(|r| r[i]).collect()).expect("node count"))
                    .collect()
            }
            _ => self
                .rhs
                .iter()
                .enumerate()
                .map(|(i, e)| field(&grid, e, "rhs", &format!("h{}", i + 1)))
                .collect::<Result<Vec<_>, _>>()?,
        };
        let rhs = VectorField::new(h).map_err(|e| semantic("rhs", "", e.to_string()))?;

        let mut p = ProblemSpec::new(operators, gradient, coupling, rhs)
            .map_err(|e| semantic("operator", "", e.to_string()))?;
        if let Some(l) = self.run.lambda {
            p = p.with_lambda(l);
        }
        if let Some(g) = self.run.gamma {
            p = p.with_gamma(g);
        }
        if let Some(s) = self.run.scheme {
            p = p.with_scheme(s);
        }
        Ok(p)
    }

    /// Canonical text that parses back to an equal document.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let num = |v: f64| format!("{v:?}");
        let quote = |e: &Expr| format!("\"{e}\"");
        let quotes = |es: &[Expr]| es.iter().map(quote).collect::<Vec<_>>().join(", ");
        let d = &self.domain;
        let _ = writeln!(s, "[domain]\ndim = {}", d.dim);
        let _ = writeln!(
            s,
            "extents = {}",
            d.extents.iter().map(|(a, b)| format!("{}:{}", num(*a), num(*b))).collect::<Vec<_>>().join(", ")
        );
        let _ =
            writeln!(s, "resolution = {}", d.resolution.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(", "));
        for (i, op) in self.operators.iter().enumerate() {
            let _ = writeln!(s, "\n[operator.{}]", i + 1);
            match op {
                OperatorConfig::Laplacian => {
                    let _ = writeln!(s, "kind = laplacian");
                }
                OperatorConfig::Linear(c) => {
                    let _ = writeln!(
                        s,
                        "kind = linear\ndiffusion = {}\ndrift = {}",
                        quotes(&c.diffusion),
                        quotes(&c.drift)
                    );
                }
                OperatorConfig::PucciPlus { lower, upper, drift }
                | OperatorConfig::PucciMinus { lower, upper, drift } => {
                    let kind =
                        if matches!(op, OperatorConfig::PucciPlus { .. }) { "pucci_plus" } else { "pucci_minus" };
                    let _ = writeln!(
                        s,
                        "kind = {kind}\nlower = {}\nupper = {}\ndrift = {}",
                        num(*lower),
                        num(*upper),
                        quote(drift)
                    );
                }
                OperatorConfig::BellmanMin(ms) | OperatorConfig::BellmanMax(ms) => {
                    let kind = if matches!(op, OperatorConfig::BellmanMin(_)) { "bellman_min" } else { "bellman_max" };
                    let _ = writeln!(s, "kind = {kind}\nmembers = {}", ms.len());
                    for (m, c) in ms.iter().enumerate() {
                        let _ = writeln!(
                            s,
                            "diffusion.{} = {}\ndrift.{} = {}",
                            m + 1,
                            quotes(&c.diffusion),
                            m + 1,
                            quotes(&c.drift)
                        );
                    }
                }
            }
        }
        for (i, g) in self.gradients.iter().enumerate() {
            let _ = writeln!(s, "\n[gradient.{}]", i + 1);
            let _ = match g {
                GradientConfig::Scalar(e) => writeln!(s, "scalar = {}", quote(e)),
                GradientConfig::Diagonal(d) => writeln!(s, "diagonal = {}", quotes(d)),
            };
        }
        let _ = writeln!(s, "\n[coupling]");
        for (i, row) in self.coupling.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                let _ = writeln!(s, "c{}{} = {}", i + 1, j + 1, quote(e));
            }
        }
        if let Some(t) = self.coupling_threshold {
            let _ = writeln!(s, "threshold = {}", num(t));
        }
        if let Some(f) = &self.coupling_file {
            let _ = writeln!(s, "values_file = {f}");
        }
        let _ = writeln!(s, "\n[rhs]");
        for (i, e) in self.rhs.iter().enumerate() {
            let _ = writeln!(s, "h{} = {}", i + 1, quote(e));
        }
        if let Some(f) = &self.rhs_file {
            let _ = writeln!(s, "values_file = {f}");
        }
        let r = &self.run;
        let mut run = String::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                let _ = writeln!(run, "{k} = {v}");
            }
        };
        put("lambda", r.lambda.map(num));
        put("gamma", r.gamma.map(num));
        put("scheme", r.scheme.map(|s| scheme_name(s).to_string()));
        put("tol", r.tol.map(num));
        put("max_iterations", r.max_iterations.map(|v| v.to_string()));
        put("initial_step", r.initial_step.map(num));
        put("max_step", r.max_step.map(num));
        put("max_arclength", r.max_arclength.map(num));
        put("fold_tol", r.fold_tol.map(num));
        put("seed_scale", r.seed_scale.map(num));
        put("seed_rungs", r.seed_rungs.map(|v| v.to_string()));
        put("window", r.window.map(|(a, b)| format!("{}:{}", num(a), num(b))));
        put("lambda_grid", r.lambda_grid.as_ref().map(|v| v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(", ")));
        put("gamma_grid", r.gamma_grid.as_ref().map(|v| v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(", ")));
        put("output", r.output.clone());
        put("branch_csv", r.branch_csv.clone());
        put("region_csv", r.region_csv.clone());
        if !run.is_empty() {
            let _ = write!(s, "\n[run]\n{run}");
        }
        s
    }
}

impl fmt::Display for ConfigDocument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Reads and parses a config file; relative data paths resolve against its directory.
pub fn load(path: &Path) -> Result<(ConfigDocument, ProblemSpec<f64>, PathBuf), ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    let doc = parse_config(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let problem = doc.build(Some(&base))?;
    Ok((doc, problem, base))
}
