//! Scenario configuration: a sectioned key-value text format.
//!
//! ```text
//! # comments start with '#'
//! [field]
//! name = contraction          # rotation | contraction | rough_shear | zero | uniform | linear
//!
//! [numerics]
//! step = 1e-2
//! samples = 20000
//! eps_list = 0.1, 0.05, 0.025
//!
//! [times]
//! pairs = 0:1, 1:0.5
//!
//! [set]
//! label = core
//! shape = ball
//! center = 0.3, 0, 0
//! radius = 0.1
//!
//! [suites]
//! run = flow-diagnostics, reynolds
//! ```

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use comoving::{Domain, Enclosure, Vec3, VelocityField};
use nalgebra::Matrix3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    FlowDiagnostics,
    Transport,
    Commutator,
    Reynolds,
    Convergence,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::FlowDiagnostics,
        Suite::Transport,
        Suite::Commutator,
        Suite::Reynolds,
        Suite::Convergence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::FlowDiagnostics => "flow-diagnostics",
            Suite::Transport => "transport",
            Suite::Commutator => "commutator",
            Suite::Reynolds => "reynolds",
            Suite::Convergence => "convergence",
        }
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite `{s}`"))
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetSpec {
    pub label: String,
    pub shape: Domain,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub field_name: String,
    pub field: VelocityField,
    pub domain: Domain,
    /// Padding of the enclosing ball; every mollification radius must fit in it.
    pub margin: f64,
    pub eps_list: Vec<f64>,
    pub step_size: f64,
    pub samples: usize,
    /// Samples for the mollification ladder, whose flows are costly.
    pub ladder_samples: usize,
    pub seed: u64,
    pub time_nodes: usize,
    pub quadrature_order: usize,
    pub grid_cells: usize,
    pub eulerian_dt: Option<f64>,
    pub defect_tol: f64,
    pub time_pairs: Vec<(f64, f64)>,
    pub sets: Vec<SetSpec>,
    pub suites: Vec<Suite>,
    pub output_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn enclosure(&self) -> Enclosure {
        Enclosure::new(self.domain, self.margin / 2.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub section: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.section.is_empty() {
            write!(f, "line {}: {}", self.line, self.message)
        } else {
            write!(f, "line {} [{}]: {}", self.line, self.section, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

/// All errors found in a config, in line order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

const SECTIONS: [(&str, &[&str]); 7] = [
    ("field", &["name", "velocity", "matrix"]),
    (
        "domain",
        &[
            "shape",
            "center",
            "radius",
            "half_width",
            "half_widths",
            "margin",
        ],
    ),
    (
        "numerics",
        &[
            "step",
            "samples",
            "seed",
            "eps_list",
            "time_nodes",
            "quadrature_order",
            "grid",
            "eulerian_dt",
            "defect_tol",
            "ladder_samples",
        ],
    ),
    ("times", &["pairs"]),
    (
        "set",
        &[
            "label",
            "shape",
            "center",
            "radius",
            "half_width",
            "half_widths",
        ],
    ),
    ("suites", &["run"]),
    ("output", &["dir"]),
];

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: usize,
}

#[derive(Debug, Clone, Default)]
struct Block {
    name: String,
    line: usize,
    entries: HashMap<String, Entry>,
}

struct Parser {
    errors: Vec<ConfigError>,
}

impl Parser {
    fn err(&mut self, line: usize, section: &str, message: impl Into<String>) {
        self.errors.push(ConfigError {
            line,
            section: section.to_string(),
            message: message.into(),
        });
    }

    fn number<T: FromStr>(&mut self, block: &Block, key: &str) -> Option<T> {
        let entry = block.entries.get(key)?;
        match entry.value.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.err(
                    entry.line,
                    &block.name,
                    format!("malformed number for `{key}`: `{}`", entry.value),
                );
                None
            }
        }
    }

    fn positive(&mut self, block: &Block, key: &str) -> Option<f64> {
        let v: f64 = self.number(block, key)?;
        if v > 0.0 && v.is_finite() {
            Some(v)
        } else {
            self.err(
                block.entries[key].line,
                &block.name,
                format!("`{key}` must be positive, got {v}"),
            );
            None
        }
    }

    fn list(&mut self, block: &Block, key: &str) -> Option<Vec<f64>> {
        let entry = block.entries.get(key)?;
        let mut out = Vec::new();
        let mut ok = true;
        for item in entry.value.split(',').map(str::trim) {
            match item.parse::<f64>() {
                Ok(v) if v.is_finite() => out.push(v),
                _ => {
                    self.err(
                        entry.line,
                        &block.name,
                        format!("malformed number `{item}` in `{key}`"),
                    );
                    ok = false;
                }
            }
        }
        ok.then_some(out)
    }

    fn vector(&mut self, block: &Block, key: &str) -> Option<Vec3> {
        let values = self.list(block, key)?;
        if values.len() != 3 {
            self.err(
                block.entries[key].line,
                &block.name,
                format!("`{key}` needs 3 components, got {}", values.len()),
            );
            return None;
        }
        Some(Vec3::new(values[0], values[1], values[2]))
    }

    /// Reads `shape` with `center` and size keys from a `[domain]` or `[set]` block.
    fn shape(&mut self, block: &Block) -> Option<Domain> {
        let shape = match block.entries.get("shape") {
            Some(e) => e.value.clone(),
            None => {
                self.err(block.line, &block.name, "missing `shape`");
                return None;
            }
        };
        let center = if block.entries.contains_key("center") {
            self.vector(block, "center")?
        } else {
            Vec3::zeros()
        };
        match shape.as_str() {
            "ball" => match self.positive(block, "radius") {
                Some(r) => Some(Domain::ball(center, r)),
                None => {
                    if !block.entries.contains_key("radius") {
                        self.err(block.line, &block.name, "ball needs `radius`");
                    }
                    None
                }
            },
            "cube" => match self.positive(block, "half_width") {
                Some(h) => Some(Domain::boxed(center, Vec3::repeat(h))),
                None => {
                    if !block.entries.contains_key("half_width") {
                        self.err(block.line, &block.name, "cube needs `half_width`");
                    }
                    None
                }
            },
            "box" => {
                let h = match block.entries.contains_key("half_widths") {
                    true => self.vector(block, "half_widths")?,
                    false => {
                        self.err(block.line, &block.name, "box needs `half_widths`");
                        return None;
                    }
                };
                if h.iter().any(|v| *v <= 0.0) {
                    self.err(
                        block.entries["half_widths"].line,
                        &block.name,
                        "`half_widths` must be positive",
                    );
                    return None;
                }
                Some(Domain::boxed(center, h))
            }
            other => {
                self.err(
                    block.entries["shape"].line,
                    &block.name,
                    format!("unknown shape `{other}` (ball, cube, box)"),
                );
                None
            }
        }
    }
}

/// `inner` lies in `outer` at positive distance from its boundary.
fn strictly_inside(inner: &Domain, outer: &Domain) -> bool {
    match (*inner, *outer) {
        (
            Domain::Ball {
                center: c,
                radius: r,
            },
            Domain::Ball {
                center: oc,
                radius: or,
            },
        ) => (c - oc).norm() + r < or,
        (
            Domain::Box {
                center: c,
                half_widths: h,
            },
            Domain::Ball {
                center: oc,
                radius: or,
            },
        ) => (c - oc).abs().norm() < or && ((c - oc).abs() + h).norm() < or,
        (
            Domain::Ball {
                center: c,
                radius: r,
            },
            Domain::Box {
                center: oc,
                half_widths: oh,
            },
        ) => (0..3).all(|i| (c[i] - oc[i]).abs() + r < oh[i]),
        (
            Domain::Box {
                center: c,
                half_widths: h,
            },
            Domain::Box {
                center: oc,
                half_widths: oh,
            },
        ) => (0..3).all(|i| (c[i] - oc[i]).abs() + h[i] < oh[i]),
    }
}

/// Splits the text into section blocks, reporting syntax problems.
fn blocks(text: &str, p: &mut Parser) -> Vec<Block> {
    let mut out: Vec<Block> = Vec::new();
    let mut current: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim();
            if SECTIONS.iter().any(|(s, _)| *s == name) {
                if name != "set" && out.iter().any(|b| b.name == name) {
                    p.err(
                        line,
                        name,
                        format!("section `[{name}]` appears more than once"),
                    );
                    current = None;
                    continue;
                }
                out.push(Block {
                    name: name.to_string(),
                    line,
                    entries: HashMap::new(),
                });
                current = Some(out.len() - 1);
            } else {
                p.err(line, name, format!("unknown section `[{name}]`"));
                current = None;
            }
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            p.err(
                line,
                current
                    .map_or("", |c| out[c].name.as_str())
                    .to_string()
                    .as_str(),
                format!("expected `key = value`, got `{content}`"),
            );
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let Some(c) = current else {
            p.err(line, "", format!("`{key}` outside of any known section"));
            continue;
        };
        let block = &mut out[c];
        let allowed = SECTIONS
            .iter()
            .find(|(s, _)| *s == block.name)
            .map(|(_, k)| *k)
            .unwrap_or(&[]);
        if !allowed.contains(&key) {
            let section = block.name.clone();
            p.err(line, &section, format!("unknown field `{key}`"));
            continue;
        }
        if let Some(prev) = block.entries.get(key) {
            let (section, prev_line) = (block.name.clone(), prev.line);
            p.err(
                line,
                &section,
                format!("`{key}` already set on line {prev_line}"),
            );
            continue;
        }
        block.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    out
}

/// Parses and validates a configuration, returning every error found.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigErrors> {
    let mut p = Parser { errors: Vec::new() };
    let blocks = blocks(text, &mut p);
    let empty = Block::default();
    let section = |name: &str| blocks.iter().find(|b| b.name == name).unwrap_or(&empty);

    // field and domain
    let fb = section("field").clone();
    let field_name = fb.entries.get("name").map(|e| e.value.clone());
    let domain_block = section("domain").clone();
    let explicit_domain = if domain_block.entries.keys().any(|k| k != "margin") {
        p.shape(&domain_block)
    } else {
        None
    };
    let margin = p.positive(&domain_block, "margin").unwrap_or(0.2);
    let mut field = None;
    match field_name.as_deref() {
        None => p.err(fb.line.max(1), "field", "missing `name`"),
        Some(name @ ("rotation" | "contraction" | "rough_shear")) => {
            let f = VelocityField::by_name(name).expect("scenario field");
            if let Some(d) = explicit_domain {
                if Some(d) != f.domain {
                    p.err(domain_block.line, "domain", format!("`{name}` is defined on its own domain {}", f.domain.unwrap()));
                }
            }
            field = Some(f);
        }
        Some("zero") => field = Some(VelocityField::zero(explicit_domain.unwrap_or(Domain::unit_ball()))),
        Some("uniform") => {
            let d = explicit_domain.unwrap_or(Domain::unit_ball());
            match p.vector(&fb, "velocity") {
                Some(v) => field = Some(VelocityField::uniform(v, Some(d))),
                None if !fb.entries.contains_key("velocity") => p.err(fb.line, "field", "uniform field needs `velocity`"),
                None => {}
            }
        }
        Some("linear") => {
            let d = explicit_domain.unwrap_or(Domain::unit_ball());
            match p.list(&fb, "matrix") {
                Some(m) if m.len() == 9 => field = Some(VelocityField::linear(Matrix3::from_row_slice(&m), Some(d))),
                Some(m) => p.err(fb.entries["matrix"].line, "field", format!("`matrix` needs 9 entries, got {}", m.len())),
                None if !fb.entries.contains_key("matrix") => p.err(fb.line, "field", "linear field needs `matrix`"),
                None => {}
            }
        }
        Some(other) => p.err(
            fb.entries["name"].line,
            "field",
            format!("unknown field `{other}` (rotation, contraction, rough_shear, zero, uniform, linear)"),
        ),
    }
    let domain = field.and_then(|f| f.domain).unwrap_or(Domain::unit_ball());

    // numerics
    let nb = section("numerics").clone();
    let step_size = p.positive(&nb, "step").unwrap_or(1e-3);
    let samples: usize = p.number(&nb, "samples").unwrap_or(100_000);
    let ladder_samples: usize = p.number(&nb, "ladder_samples").unwrap_or(4000);
    let seed: u64 = p.number(&nb, "seed").unwrap_or(1);
    let time_nodes: usize = p.number(&nb, "time_nodes").unwrap_or(5);
    let quadrature_order: usize = p.number(&nb, "quadrature_order").unwrap_or(8);
    let grid_cells: usize = p.number(&nb, "grid").unwrap_or(32);
    let eulerian_dt = p.positive(&nb, "eulerian_dt");
    let defect_tol = p.positive(&nb, "defect_tol").unwrap_or(1e-6);
    for (key, value) in [("samples", samples), ("ladder_samples", ladder_samples)] {
        if value < 2 {
            p.err(
                nb.entries.get(key).map_or(nb.line, |e| e.line),
                "numerics",
                format!("`{key}` must be at least 2"),
            );
        }
    }
    if time_nodes < 3 {
        p.err(
            nb.entries.get("time_nodes").map_or(nb.line, |e| e.line),
            "numerics",
            "`time_nodes` must be at least 3",
        );
    }
    if quadrature_order < 8 {
        p.err(
            nb.entries
                .get("quadrature_order")
                .map_or(nb.line, |e| e.line),
            "numerics",
            "`quadrature_order` must be at least 8",
        );
    }
    if grid_cells < 4 {
        p.err(
            nb.entries.get("grid").map_or(nb.line, |e| e.line),
            "numerics",
            "`grid` must be at least 4",
        );
    }
    let eps_list = p
        .list(&nb, "eps_list")
        .unwrap_or_else(|| vec![0.1, 0.05, 0.025]);
    if let Some(entry) = nb.entries.get("eps_list") {
        for (i, eps) in eps_list.iter().enumerate() {
            if *eps <= 0.0 {
                p.err(
                    entry.line,
                    "numerics",
                    format!("eps_list entry {} ({eps}) must be positive", i + 1),
                );
            } else if *eps > margin {
                p.err(
                    entry.line,
                    "numerics",
                    format!(
                        "eps_list entry {} ({eps}) exceeds the enclosure margin {margin}",
                        i + 1
                    ),
                );
            }
        }
        if eps_list.windows(2).any(|w| w[1] >= w[0]) {
            p.err(
                entry.line,
                "numerics",
                "eps_list must be strictly decreasing",
            );
        }
    }
    if let (Some(dt), Some(f)) = (eulerian_dt, field) {
        let h = 2.0 * domain.circumscribed_radius() / grid_cells as f64;
        let spacing = {
            let (lo, hi) = domain.bounds();
            let w = (hi - lo) / grid_cells as f64;
            w.x.min(w.y).min(w.z).min(h)
        };
        let vmax = comoving::VectorField::speed_bound(&f);
        if vmax > 0.0 && dt > 0.4 * spacing / vmax {
            p.err(
                nb.entries["eulerian_dt"].line,
                "numerics",
                format!(
                    "eulerian_dt {dt} violates the CFL limit {}",
                    0.4 * spacing / vmax
                ),
            );
        }
    }

    // times
    let tb = section("times").clone();
    let mut time_pairs = Vec::new();
    if let Some(entry) = tb.entries.get("pairs") {
        for item in entry.value.split(',').map(str::trim) {
            let parsed = item.split_once(':').and_then(|(a, b)| {
                Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?))
            });
            match parsed {
                Some((s, t)) if s.is_finite() && t.is_finite() => time_pairs.push((s, t)),
                _ => p.err(
                    entry.line,
                    "times",
                    format!("malformed time pair `{item}` (expected s:t)"),
                ),
            }
        }
    } else {
        time_pairs.push((0.0, 1.0));
    }

    // sets
    let mut sets: Vec<SetSpec> = Vec::new();
    for b in blocks.iter().filter(|b| b.name == "set") {
        let Some(label) = b.entries.get("label").map(|e| e.value.clone()) else {
            p.err(b.line, "set", "missing `label`");
            continue;
        };
        if let Some(prev) = sets.iter().find(|s| s.label == label) {
            let prev_line = prev.line;
            p.err(
                b.line,
                "set",
                format!(
                    "duplicate set label `{label}` (sections at lines {prev_line} and {})",
                    b.line
                ),
            );
            continue;
        }
        if let Some(shape) = p.shape(b) {
            if !strictly_inside(&shape, &domain) {
                p.err(b.line, "set", format!("set `{label}` must lie inside the domain at positive distance from its boundary"));
            }
            sets.push(SetSpec {
                label,
                shape,
                line: b.line,
            });
        }
    }

    if sets.is_empty() {
        let inner = match domain {
            Domain::Ball { radius, .. } => radius,
            Domain::Box { half_widths, .. } => half_widths.min(),
        };
        sets.push(SetSpec {
            label: "default".to_string(),
            shape: Domain::ball(
                domain.center() + Vec3::new(0.3 * inner, 0.0, 0.0),
                0.2 * inner,
            ),
            line: 0,
        });
    }

    // suites and output
    let sb = section("suites").clone();
    let mut suites = Vec::new();
    if let Some(entry) = sb.entries.get("run") {
        for name in entry
            .value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
        {
            match name.parse::<Suite>() {
                Ok(s) if !suites.contains(&s) => suites.push(s),
                Ok(_) => {}
                Err(msg) => p.err(entry.line, "suites", msg),
            }
        }
    } else {
        suites = Suite::ALL.to_vec();
    }
    let output_dir = section("output")
        .entries
        .get("dir")
        .map_or_else(|| PathBuf::from("out"), |e| PathBuf::from(&e.value));

    if !p.errors.is_empty() {
        p.errors.sort_by_key(|e| e.line);
        return Err(ConfigErrors(p.errors));
    }
    Ok(ScenarioConfig {
        field_name: field_name.expect("checked above"),
        field: field.expect("checked above"),
        domain,
        margin,
        eps_list,
        step_size,
        samples,
        ladder_samples,
        seed,
        time_nodes,
        quadrature_order,
        grid_cells,
        eulerian_dt,
        defect_tol,
        time_pairs,
        sets,
        suites,
        output_dir,
    })
}
