//! Scenario runner: configuration parsing, suite execution and CSV output.

pub mod config;
pub mod run;

pub use config::{parse_config, ConfigError, ConfigErrors, ScenarioConfig, SetSpec, Suite};
pub use run::{run, write_outputs, RunSummary, SuiteOutcome, Table};

use comoving::SCENARIOS;

/// The built-in scenario gallery, one entry per line.
pub fn list_scenarios() -> String {
    let mut out = String::new();
    for s in SCENARIOS {
        out.push_str(&format!(
            "{:<12} {:<15} div-free: {:<3}  {}. Oracle: {}\n",
            s.name,
            s.domain,
            if s.divergence_free { "yes" } else { "no" },
            s.description,
            s.oracle
        ));
    }
    out
}
