//! Suite execution. Everything here is pure computation; files are written
//! by [`write_outputs`].

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::Context;
use comoving::reynolds::limit_study_from;
use comoving::transport::lagrangian_eulerian_l1;
use comoving::{
    change_of_variables_check, commutator_field, l2_identity_residual, measure_preimage,
    rtt_density_residual, rtt_measure_residual, sample_uniform, solve_eulerian, DensityFunction,
    FlowEvaluator, GridSpec, IdentityTag, InitialDatum, MeasurableSet, MollificationLadder,
    Regularization, Sampler, Vec3, VelocityField,
};

use crate::config::{ScenarioConfig, Suite};

/// A CSV table; `name` is the file stem.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&'static str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

/// Shortest round-trip decimal form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub checks: usize,
    pub failures: usize,
    /// Largest `value / threshold` over all checks.
    pub worst_ratio: f64,
    pub error: Option<String>,
    pub wall_time: Duration,
    pub tables: Vec<Table>,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub outcomes: Vec<SuiteOutcome>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(SuiteOutcome::passed)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(
            "summary",
            &[
                "suite",
                "status",
                "checks",
                "failures",
                "worst_ratio",
                "error",
            ],
        );
        for o in &self.outcomes {
            t.push(vec![
                o.suite.name().to_string(),
                if o.passed() { "pass" } else { "fail" }.to_string(),
                o.checks.to_string(),
                o.failures.to_string(),
                num(o.worst_ratio),
                o.error.clone().unwrap_or_default(),
            ]);
        }
        t
    }
}

/// Differences at or below this size count as converged.
const RESOLVED: f64 = 1e-12;

#[derive(Default)]
struct Checks {
    count: usize,
    failures: usize,
    worst: f64,
}

impl Checks {
    /// Records `value <= threshold` and returns whether it held.
    fn check(&mut self, value: f64, threshold: f64) -> bool {
        self.count += 1;
        let ok = value <= threshold;
        if !ok {
            self.failures += 1;
        }
        let ratio = if threshold > 0.0 {
            value / threshold
        } else if value <= 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        self.worst = self.worst.max(ratio);
        ok
    }

    /// Every entry strictly below its predecessor, or both below
    /// [`RESOLVED`] (an already converged sequence).
    fn decreasing(&mut self, values: &[f64]) -> bool {
        let mut all = true;
        for w in values.windows(2) {
            self.count += 1;
            if w[0] <= RESOLVED && w[1] <= RESOLVED {
                continue;
            }
            let ratio = if w[0] > 0.0 {
                w[1] / w[0]
            } else {
                f64::INFINITY
            };
            self.worst = self.worst.max(ratio);
            if w[1] >= w[0] {
                self.failures += 1;
                all = false;
            }
        }
        all
    }
}

fn pass(ok: bool) -> String {
    if ok { "pass" } else { "fail" }.to_string()
}

struct Prepared<'a> {
    config: &'a ScenarioConfig,
    flow: FlowEvaluator<VelocityField>,
    sets: Vec<MeasurableSet>,
}

impl Prepared<'_> {
    fn inner_radius(&self) -> f64 {
        match self.config.domain {
            comoving::Domain::Ball { radius, .. } => radius,
            comoving::Domain::Box { half_widths, .. } => half_widths.min(),
        }
    }

    /// Smooth bump used as the transported datum.
    fn bump(&self) -> InitialDatum {
        let r = self.inner_radius();
        InitialDatum::smooth_bump(
            self.config.domain.center() + Vec3::new(0.4 * r, 0.0, 0.0),
            0.3 * r,
            1.0,
        )
    }

    fn sampler(&self) -> Sampler {
        Sampler::new(self.config.domain, self.config.samples, self.config.seed)
    }

    fn moving_pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.config
            .time_pairs
            .iter()
            .copied()
            .filter(|(s, t)| s != t)
    }
}

type SuiteResult = comoving::Result<(Vec<Table>, Checks)>;

fn flow_diagnostics(cx: &Prepared) -> SuiteResult {
    let c = cx.config;
    let mut checks = Checks::default();
    let points = sample_uniform(&c.domain, c.samples.min(1000), c.seed);
    let mut defects = Table::new(
        "flow-diagnostics",
        &[
            "s",
            "t",
            "group_defect_max",
            "group_defect_mean",
            "semigroup_defect_max",
            "integral_residual_max",
            "integral_bound_max",
            "defect_tol",
            "status",
        ],
    );
    let mut compress = Table::new(
        "compressibility",
        &[
            "s",
            "t",
            "set",
            "preimage_measure",
            "std_error",
            "lower",
            "upper",
            "status",
        ],
    );
    let mut traj = Table::new("trajectories", &["point", "r", "x1", "x2", "x3", "jac_log"]);
    for (k, &(s, t)) in c.time_pairs.iter().enumerate() {
        let group = cx.flow.group_defect(s, t, &points)?;
        let semi = cx.flow.semigroup_defect(s, 0.5 * (s + t), t, &points)?;
        let mut ok = checks.check(group.max, c.defect_tol);
        ok &= checks.check(semi.max, c.defect_tol);
        let (mut worst_res, mut worst_bound) = (0.0f64, 0.0f64);
        for x in points.iter().take(10) {
            let r = cx.flow.integral_equation_residual(t, x, s, 5)?;
            ok &= checks.check(r.residual, r.expected_bound);
            worst_res = worst_res.max(r.residual);
            worst_bound = worst_bound.max(r.expected_bound);
        }
        defects.push(vec![
            num(s),
            num(t),
            num(group.max),
            num(group.mean),
            num(semi.max),
            num(worst_res),
            num(worst_bound),
            num(c.defect_tol),
            pass(ok),
        ]);
        for set in &cx.sets {
            let est = measure_preimage(&cx.flow, s, t, set, &cx.sampler())?;
            let meas = set.exact_volume.expect("config sets have exact volumes");
            let (lo, hi) = comoving::reynolds::compressibility_bounds(&cx.flow, s, t, meas);
            let slack = 4.0 * est.std_error;
            let ok = checks.check(lo - slack - est.value, 0.0)
                & checks.check(est.value - hi - slack, 0.0);
            compress.push(vec![
                num(s),
                num(t),
                set.label.clone(),
                num(est.value),
                num(est.std_error),
                num(lo),
                num(hi),
                pass(ok),
            ]);
        }
        if k == 0 {
            for (i, x) in points.iter().take(3).enumerate() {
                let rec = cx.flow.advect(t, x, s)?;
                for ((r, p), j) in rec.times.iter().zip(&rec.positions).zip(&rec.jacobian_log) {
                    traj.push(vec![
                        i.to_string(),
                        num(*r),
                        num(p.x),
                        num(p.y),
                        num(p.z),
                        num(*j),
                    ]);
                }
            }
        }
    }
    Ok((vec![defects, compress, traj], checks))
}

fn transport(cx: &Prepared) -> SuiteResult {
    let c = cx.config;
    let mut checks = Checks::default();
    let rho0 = cx.bump();
    let mut table = Table::new(
        "transport",
        &[
            "check",
            "s",
            "t",
            "value",
            "reference",
            "threshold",
            "status",
        ],
    );
    for (s, t) in cx.moving_pairs() {
        let times: Vec<f64> = (1..=5).map(|k| s + (t - s) * k as f64 / 5.0).collect();
        for r in l2_identity_residual(&cx.flow, &rho0, s, &times, c.samples, c.seed)? {
            let threshold = 4.0 * r.sigma;
            let ok = checks.check(r.residual, threshold);
            table.push(vec![
                "norm_identity".into(),
                num(s),
                num(r.t),
                num(r.residual),
                num(r.norm_sq),
                num(threshold),
                pass(ok),
            ]);
        }
    }
    if let Some((s, t)) = cx.moving_pairs().next() {
        let mut l1 = Vec::new();
        for cells in [c.grid_cells / 2, c.grid_cells] {
            let grid = GridSpec::covering(&c.domain, cells);
            let dt = c
                .eulerian_dt
                .map(|d| d.min(0.4 * grid.spacing().min() / c.field_speed()));
            let eul = solve_eulerian(&c.field, &rho0, s, t, &grid, dt)?;
            l1.push(lagrangian_eulerian_l1(&cx.flow, &rho0, s, t, &eul)?);
        }
        let ok = checks.decreasing(&l1);
        table.push(vec![
            "eulerian_l1_coarse".into(),
            num(s),
            num(t),
            num(l1[0]),
            String::new(),
            String::new(),
            pass(true),
        ]);
        table.push(vec![
            "eulerian_l1_fine".into(),
            num(s),
            num(t),
            num(l1[1]),
            num(l1[0]),
            num(l1[0]),
            pass(ok),
        ]);
    }
    Ok((vec![table], checks))
}

fn commutator(cx: &Prepared) -> SuiteResult {
    let c = cx.config;
    let mut checks = Checks::default();
    let rho0 = cx.bump();
    let grid = GridSpec::covering(&c.domain, c.grid_cells);
    let at = c.time_pairs.first().map_or(0.0, |p| p.0);
    let mut norms = Vec::new();
    let mut table = Table::new("commutator", &["eps", "l1_norm"]);
    for &eps in &c.eps_list {
        let r = commutator_field(
            &c.field,
            &|x| rho0.evaluate(x),
            eps,
            at,
            &grid,
            &c.enclosure(),
            c.quadrature_order,
        )?;
        norms.push(r.l1_norm());
        table.push(vec![num(eps), num(r.l1_norm())]);
    }
    checks.decreasing(&norms);
    Ok((vec![table], checks))
}

fn reynolds(cx: &Prepared) -> SuiteResult {
    let c = cx.config;
    let mut checks = Checks::default();
    let sampler = cx.sampler();
    let g = DensityFunction::new(
        |t, x| x.x * x.x + t,
        |_, _| 1.0,
        |_, x| Vec3::new(2.0 * x.x, 0.0, 0.0),
    );
    let bump = cx.bump();
    let mut table = Table::new(
        "reynolds",
        &[
            "identity_tag",
            "s",
            "t",
            "set",
            "lhs",
            "rhs",
            "residual",
            "mc_sigma",
            "quad_tol",
            "threshold",
            "nodes",
            "seed",
        ],
    );
    let mut row = |set: &str, r: &comoving::ReynoldsReport, checks: &mut Checks| {
        checks.check(r.residual, r.threshold);
        table.push(vec![
            r.identity_tag.to_string(),
            num(r.s),
            num(r.t),
            set.to_string(),
            num(r.lhs),
            num(r.rhs),
            num(r.residual),
            num(r.mc_sigma),
            num(r.quad_tol),
            num(r.threshold),
            r.time_quadrature_nodes.to_string(),
            r.seed.to_string(),
        ]);
    };
    for &(s, t) in &c.time_pairs {
        for set in &cx.sets {
            for tag in [IdentityTag::Trans0, IdentityTag::Trans1] {
                let r = rtt_measure_residual(&cx.flow, s, t, set, c.time_nodes, &sampler, tag)?;
                row(&set.label, &r, &mut checks);
            }
            for tag in [IdentityTag::Trans2, IdentityTag::Trans3] {
                let r = rtt_density_residual(&cx.flow, &g, s, t, set, c.time_nodes, &sampler, tag)?;
                row(&set.label, &r, &mut checks);
            }
        }
        let n_cov = c.samples.min(20_000);
        let r = change_of_variables_check(
            &cx.flow,
            &|x| bump.evaluate(x),
            s,
            t,
            c.time_nodes,
            n_cov,
            c.seed,
        )?;
        row("K", &r, &mut checks);
    }
    Ok((vec![table], checks))
}

fn convergence(cx: &Prepared) -> SuiteResult {
    let c = cx.config;
    let mut checks = Checks::default();
    let mut table = Table::new(
        "convergence",
        &["quantity", "eps_coarse", "eps_fine", "value"],
    );
    let Some((s, t)) = cx.moving_pairs().next() else {
        return Ok((vec![table], checks));
    };
    let reg = Regularization {
        enclosure: c.enclosure(),
        quadrature_order: c.quadrature_order,
        step_size: c.step_size,
    };
    let sampler = Sampler::new(c.domain, c.ladder_samples, c.seed);
    let ladder = MollificationLadder::build(&c.field, &c.eps_list, &reg, s, t, &sampler)?;
    let mut emit = |quantity: &str, values: &[f64], checked: bool, checks: &mut Checks| {
        if checked {
            checks.decreasing(values);
        }
        for (i, v) in values.iter().enumerate() {
            table.push(vec![
                quantity.to_string(),
                num(c.eps_list[i]),
                num(c.eps_list[i + 1]),
                num(*v),
            ]);
        }
    };
    emit("flow_l2", &ladder.flow_distances(), true, &mut checks);
    emit(
        "rho_l2",
        &ladder.rho_distances(&cx.bump()),
        true,
        &mut checks,
    );
    for set in &cx.sets {
        let study = limit_study_from(&ladder, set);
        emit(
            &format!("preimage_jacobian:{}", set.label),
            &study.preimage_jacobian_differences,
            true,
            &mut checks,
        );
        emit(
            &format!("image_jacobian:{}", set.label),
            &study.image_jacobian_differences,
            true,
            &mut checks,
        );
        emit(
            &format!("preimage_hits:{}", set.label),
            &study.preimage_differences,
            false,
            &mut checks,
        );
        emit(
            &format!("image_hits:{}", set.label),
            &study.image_differences,
            false,
            &mut checks,
        );
    }
    Ok((vec![table], checks))
}

impl ScenarioConfig {
    fn field_speed(&self) -> f64 {
        comoving::VectorField::speed_bound(&self.field).max(f64::MIN_POSITIVE)
    }
}

/// Runs every configured suite in order. A suite that aborts (for example
/// on a trajectory escape) is recorded as failed and the run continues.
pub fn run(config: &ScenarioConfig) -> comoving::Result<RunSummary> {
    let flow = FlowEvaluator::new(config.field, config.step_size, config.enclosure())?;
    let sets = config
        .sets
        .iter()
        .map(|s| MeasurableSet::from_domain(s.label.clone(), s.shape))
        .collect();
    let cx = Prepared { config, flow, sets };
    let mut outcomes = Vec::new();
    for &suite in &config.suites {
        let start = Instant::now();
        let result = match suite {
            Suite::FlowDiagnostics => flow_diagnostics(&cx),
            Suite::Transport => transport(&cx),
            Suite::Commutator => commutator(&cx),
            Suite::Reynolds => reynolds(&cx),
            Suite::Convergence => convergence(&cx),
        };
        let wall_time = start.elapsed();
        outcomes.push(match result {
            Ok((tables, checks)) => SuiteOutcome {
                suite,
                checks: checks.count,
                failures: checks.failures,
                worst_ratio: checks.worst,
                error: None,
                wall_time,
                tables,
            },
            Err(e) => SuiteOutcome {
                suite,
                checks: 0,
                failures: 0,
                worst_ratio: 0.0,
                error: Some(e.to_string()),
                wall_time,
                tables: Vec::new(),
            },
        });
    }
    Ok(RunSummary { outcomes })
}

/// Writes every table and `summary.csv` into `dir`, returning the paths.
pub fn write_outputs(summary: &RunSummary, dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let mut written = Vec::new();
    let summary_table = summary.table();
    for table in summary
        .outcomes
        .iter()
        .flat_map(|o| o.tables.iter())
        .chain(std::iter::once(&summary_table))
    {
        let path = dir.join(format!("{}.csv", table.name));
        fs::write(&path, table.to_csv()).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}
