//! The {baseline, triple} × {honest, attack1, attack2} grid over the bundled
//! scenarios. The triple/attack2 cell has two runs: silent and wrong password.

use std::fmt::Write as _;

use super::{bundled, run_scenario, RunOutput, ScenarioError};
use crate::principals::Variant;
use crate::protocol::Incident;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellExpectation {
    pub scenario: &'static str,
    pub variant: Variant,
    pub row: &'static str,
    pub attacker_granted: bool,
    /// For the triple attack2 runs: the alert V raises and the AS must record.
    pub alert: Option<Incident>,
}

pub const EXPECTED: &[CellExpectation] = &[
    CellExpectation {
        scenario: "honest-baseline",
        variant: Variant::Baseline,
        row: "honest",
        attacker_granted: false,
        alert: None,
    },
    CellExpectation {
        scenario: "honest-triple",
        variant: Variant::Triple,
        row: "honest",
        attacker_granted: false,
        alert: None,
    },
    CellExpectation {
        scenario: "attack1-baseline",
        variant: Variant::Baseline,
        row: "attack1",
        attacker_granted: true,
        alert: None,
    },
    CellExpectation {
        scenario: "attack1-triple",
        variant: Variant::Triple,
        row: "attack1",
        attacker_granted: false,
        alert: None,
    },
    CellExpectation {
        scenario: "attack2-baseline",
        variant: Variant::Baseline,
        row: "attack2",
        attacker_granted: true,
        alert: None,
    },
    CellExpectation {
        scenario: "attack2-triple-silent",
        variant: Variant::Triple,
        row: "attack2",
        attacker_granted: false,
        alert: Some(Incident::Timeout),
    },
    CellExpectation {
        scenario: "attack2-triple-wrongpw",
        variant: Variant::Triple,
        row: "attack2",
        attacker_granted: false,
        alert: Some(Incident::BadPassword),
    },
];

pub struct MatrixCell {
    pub expected: CellExpectation,
    pub run: RunOutput,
    /// Empty when the cell matches.
    pub problems: Vec<String>,
}

impl MatrixCell {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

fn check(expected: &CellExpectation, run: &RunOutput) -> Vec<String> {
    let v = &run.verdict;
    let mut problems = Vec::new();
    let clients: Vec<&str> = v.client_outcomes.keys().map(String::as_str).collect();
    if !v.service_granted_to.iter().any(|g| clients.contains(&g.node.as_str())) {
        problems.push("honest client was not granted".into());
    }
    if v.attacker_succeeded != expected.attacker_granted {
        problems.push(format!(
            "attacker_succeeded={} (expected {})",
            v.attacker_succeeded, expected.attacker_granted
        ));
    }
    match expected.alert {
        None if !v.alerts.is_empty() => problems.push(format!("{} unexpected alert(s)", v.alerts.len())),
        None => {}
        Some(incident) => {
            if v.alerts.len() != 1 || v.alerts[0].incident != incident {
                problems.push(format!("expected one {incident} alert, got {}", v.alerts.len()));
            }
            if !v.compromise_notices.iter().any(|n| n.incident == incident) {
                problems.push(format!("no {incident} notice recorded at the AS"));
            }
        }
    }
    if !run.trace.conservation_holds() {
        problems.push("conservation violated".into());
    }
    if !v.challenges_resolved_once() {
        problems.push("a challenge was not resolved exactly once".into());
    }
    problems
}

pub fn run_matrix(seed: u64) -> Result<Vec<MatrixCell>, ScenarioError> {
    EXPECTED
        .iter()
        .map(|e| {
            let spec = bundled(e.scenario).expect("bundled scenario");
            let run = run_scenario(&spec, seed)?;
            let problems = check(e, &run);
            Ok(MatrixCell {
                expected: *e,
                run,
                problems,
            })
        })
        .collect()
}

/// Fixed-width table, one line per run.
pub fn render(cells: &[MatrixCell]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<9} {:<8} {:<24} {:<16} {:<22} {:<8} cell",
        "variant", "row", "scenario", "granted_to", "alerts", "notices"
    );
    for c in cells {
        let v = &c.run.verdict;
        let granted = v.granted_nodes();
        let alerts: Vec<String> = v.alerts.iter().map(|a| a.incident.to_string()).collect();
        let _ = writeln!(
            out,
            "{:<9} {:<8} {:<24} {:<16} {:<22} {:<8} {}",
            c.expected.variant.to_string(),
            c.expected.row,
            c.expected.scenario,
            if granted.is_empty() {
                "-".into()
            } else {
                granted.join(",")
            },
            if alerts.is_empty() {
                "-".into()
            } else {
                alerts.join(",")
            },
            v.compromise_notices.len(),
            if c.ok() {
                "ok".to_string()
            } else {
                format!("DEVIATES: {}", c.problems.join("; "))
            }
        );
    }
    out
}
