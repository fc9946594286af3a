//! Aggregated exploration results: one row per (scenario, property).

use crate::explorer::Exploration;
use crate::tracecheck::{Outcome, PropertyId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub property: PropertyId,
    pub traces: u64,
    pub holds: u64,
    pub violated: u64,
    pub inapplicable: u64,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub expected: Option<Outcome>,
    /// Witness trace file, relative to the summary.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub witness: Option<String>,
}

impl SummaryRow {
    pub fn matches_expectation(&self) -> bool {
        self.expected.is_none_or(|e| e == self.outcome)
    }
}

/// Deterministic summary; wall-clock runtimes are kept in [`Timings`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub rows: Vec<SummaryRow>,
    /// Per scenario: traces where a stronger property held but a weaker one failed.
    pub ordering_violations: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub millis: BTreeMap<String, u128>,
}

impl ReportSummary {
    pub fn add(
        &mut self,
        scenario: &str,
        ex: &Exploration,
        properties: &[PropertyId],
        expect: &BTreeMap<PropertyId, Outcome>,
        witness_paths: &BTreeMap<PropertyId, String>,
    ) {
        for p in properties {
            let s = ex.stats.get(p).copied().unwrap_or_default();
            self.rows.push(SummaryRow {
                scenario: scenario.to_string(),
                property: *p,
                traces: ex.traces,
                holds: s.holds,
                violated: s.violated,
                inapplicable: s.inapplicable,
                outcome: s.outcome(),
                expected: expect.get(p).copied(),
                witness: witness_paths.get(p).cloned(),
            });
        }
        self.ordering_violations.insert(scenario.to_string(), ex.ordering_violations);
    }

    pub fn mismatches(&self) -> Vec<&SummaryRow> {
        self.rows.iter().filter(|r| !r.matches_expectation()).collect()
    }

    /// Every row's counts add up to its number of traces.
    pub fn is_consistent(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.holds + r.violated + r.inapplicable == r.traces)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summaries always serialize")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scenario,property,traces,holds,violated,inapplicable,outcome,expected,witness\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.scenario,
                r.property,
                r.traces,
                r.holds,
                r.violated,
                r.inapplicable,
                r.outcome,
                r.expected.map(|e| e.to_string()).unwrap_or_default(),
                r.witness.as_deref().unwrap_or("")
            ));
        }
        out
    }
}
