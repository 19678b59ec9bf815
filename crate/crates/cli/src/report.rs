//! Markdown accuracy and early-stopping tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ticket_core::pruning::sparsity_label;

use crate::aggregate::AggregateRow;

pub const DEFAULT_REPORT_ITERATION: usize = 30_000;

fn pm(r: Option<&AggregateRow>, scale: f64, digits: usize) -> String {
    match r {
        Some(r) => format!("{:.digits$} ± {:.digits$}", r.mean * scale, r.std * scale),
        None => "n/a".into(),
    }
}

/// `requested` when present, else the largest iteration below it, else the largest overall.
fn effective_iteration(iterations: &BTreeSet<usize>, requested: usize) -> Option<usize> {
    if iterations.contains(&requested) {
        return Some(requested);
    }
    iterations
        .range(..requested)
        .next_back()
        .or_else(|| iterations.iter().next_back())
        .copied()
}

type Index<'a> = BTreeMap<(&'a str, &'a str, &'a str, usize), &'a AggregateRow>;

/// Report for every dataset and strategy found in the aggregates.
pub fn render_report(metrics: &[AggregateRow], early: &[AggregateRow], requested_iteration: usize) -> String {
    let mut out = String::from("# Accuracy and early stopping by sparsity\n\n");
    let _ = writeln!(
        out,
        "Values are mean ± sample standard deviation (n − 1 denominator) over trials, on the test split. \
         P_m is the percentage of weights remaining.\n"
    );
    let sections: BTreeSet<(&str, &str)> = metrics
        .iter()
        .chain(early)
        .map(|r| (r.dataset.as_str(), r.strategy.as_str()))
        .collect();
    for (dataset, strategy) in sections {
        accuracy_table(&mut out, metrics, dataset, strategy, requested_iteration);
        early_stop_table(&mut out, early, dataset, strategy);
    }
    out
}

fn accuracy_table(out: &mut String, metrics: &[AggregateRow], dataset: &str, strategy: &str, requested: usize) {
    let rows: Vec<&AggregateRow> = metrics
        .iter()
        .filter(|r| r.dataset == dataset && r.strategy == strategy && r.split == "test")
        .collect();
    if rows.is_empty() {
        return;
    }
    let iterations: BTreeSet<usize> = rows.iter().filter_map(|r| r.iteration).collect();
    let Some(it) = effective_iteration(&iterations, requested) else {
        return;
    };
    let at: Vec<&AggregateRow> = rows.into_iter().filter(|r| r.iteration == Some(it)).collect();

    let attacks: BTreeSet<&str> = at.iter().map(|r| r.attack.as_str()).collect();
    let rounds: BTreeMap<usize, f64> = at.iter().map(|r| (r.round, r.sparsity_pct)).collect();
    let trials: BTreeSet<usize> = at.iter().map(|r| r.n).collect();
    let index: Index = at
        .iter()
        .map(|r| {
            (
                (r.train_mode.as_str(), r.attack.as_str(), r.metric.as_str(), r.round),
                *r,
            )
        })
        .collect();

    let _ = writeln!(out, "## {dataset}, strategy {strategy}: test accuracy (%)\n");
    let note = if it == requested {
        String::new()
    } else {
        format!(" ({requested} not recorded)")
    };
    let _ = writeln!(
        out,
        "Iteration {it}{note}. Cells are naturally trained / adversarially trained. Trials per cell: {}.\n",
        join(trials.iter().map(|n| n.to_string()))
    );
    let mut head = String::from("| P_m (%) |");
    let mut rule = String::from("|---:|");
    for a in &attacks {
        let a = a.to_uppercase();
        let _ = write!(head, " {a} natural | {a} attack |");
        rule.push_str(":---:|:---:|");
    }
    let _ = writeln!(out, "{head}\n{rule}");
    for (&round, &sp) in &rounds {
        let mut line = format!("| {} |", sparsity_label(sp / 100.0));
        for a in &attacks {
            for metric in ["natural_acc", "adv_acc"] {
                let get = |mode: &str| index.get(&(mode, *a, metric, round)).copied();
                let _ = write!(
                    line,
                    " {} / {} |",
                    pm(get("natural"), 100.0, 2),
                    pm(get("adversarial"), 100.0, 2)
                );
            }
        }
        let _ = writeln!(out, "{line}");
    }
    out.push('\n');
}

fn early_stop_table(out: &mut String, early: &[AggregateRow], dataset: &str, strategy: &str) {
    let rows: Vec<&AggregateRow> = early
        .iter()
        .filter(|r| {
            r.dataset == dataset && r.strategy == strategy && r.split == "test" && r.metric == "early_stop_iteration"
        })
        .collect();
    if rows.is_empty() {
        return;
    }
    let columns: BTreeSet<(&str, &str)> = rows
        .iter()
        .map(|r| (r.train_mode.as_str(), r.attack.as_str()))
        .collect();
    let rounds: BTreeMap<usize, f64> = rows.iter().map(|r| (r.round, r.sparsity_pct)).collect();
    let index: Index = rows
        .iter()
        .map(|r| ((r.train_mode.as_str(), r.attack.as_str(), "", r.round), *r))
        .collect();

    let _ = writeln!(out, "## {dataset}, strategy {strategy}: early-stopping iteration\n");
    let mut head = String::from("| P_m (%) |");
    let mut rule = String::from("|---:|");
    for (mode, attack) in &columns {
        let _ = write!(head, " {mode} {} |", attack.to_uppercase());
        rule.push_str(":---:|");
    }
    let _ = writeln!(out, "{head}\n{rule}");
    for (&round, &sp) in &rounds {
        let mut line = format!("| {} |", sparsity_label(sp / 100.0));
        for (mode, attack) in &columns {
            let _ = write!(
                line,
                " {} |",
                pm(index.get(&(*mode, *attack, "", round)).copied(), 1.0, 0)
            );
        }
        let _ = writeln!(out, "{line}");
    }
    out.push('\n');
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(", ")
}
