//! Run reports: one JSON document for machines and a markdown rendering for
//! instructors. Reruns of the same config reproduce both byte for byte; the
//! generation time is confined to the single `generated_at` field (the
//! `Generated:` line in markdown) so reports diff cleanly.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use crate::agreement::{present, Band, ConfusionMatrix, ReliabilityTable};
use crate::allocation::VerificationReport;
use crate::clustering::{Algorithm, RerunConsistency};
use crate::corpus::{FilterReport, RaterKey};

use super::config::{PipelineConfig, RepresentationKind};

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub toolkit_version: String,
    /// The only field that differs between reruns of one config.
    pub generated_at: String,
    pub corpus: CorpusSummary,
    pub allocation: Option<AllocationReport>,
    pub split: Option<SplitReport>,
    pub representation: Option<RepresentationReport>,
    pub classifier: Option<ClassifierReport>,
    pub reliability: Option<ReliabilitySection>,
    pub clustering: Option<ClusteringReport>,
    /// Echo of the exact configuration; feeding it back reproduces the run.
    pub config: PipelineConfig,
}

#[derive(Clone, Debug, Serialize)]
pub struct CorpusSummary {
    pub responses: usize,
    pub scores: usize,
    pub tasks: usize,
    pub students: usize,
    pub raters: Vec<String>,
    pub filter: Option<FilterReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AllocationReport {
    pub seed: u64,
    pub raters: Vec<String>,
    pub pool: usize,
    pub multi_rated: usize,
    pub singly_assigned: BTreeMap<String, usize>,
    pub verification: VerificationReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct SplitReport {
    pub seed: u64,
    pub proportions: [f64; 4],
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub reserve: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RepresentationReport {
    pub kind: RepresentationKind,
    pub dim: usize,
    pub items: usize,
    pub vocabulary: Option<usize>,
    pub empty_docs: Option<usize>,
    pub seed: Option<u64>,
    pub objective_initial: Option<f64>,
    pub objective_final: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassifierReport {
    pub seed: u64,
    pub train_items: usize,
    pub dev_items: usize,
    pub epochs_run: usize,
    pub final_loss: f64,
    pub final_dev_accuracy: Option<f64>,
    pub machine_rater_id: String,
    pub test: Option<TestMetrics>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TestMetrics {
    pub n_items: usize,
    pub accuracy: f64,
    /// Rows = gold label, columns = predicted label.
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, Serialize)]
pub struct ReliabilitySection {
    pub table: ReliabilityTable,
    /// Band-level summary sentences derived from the table.
    pub narrative: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClusteringReport {
    pub label_source: String,
    pub strata: Vec<StratumReport>,
    /// `task/class` cells with no members at all.
    pub empty_cells: Vec<String>,
    /// Strata dropped for other reasons (e.g. members without vectors).
    pub skipped: Vec<String>,
    /// Mean of per-stratum rerun-consistency means, when consistency ran.
    pub consistency_mean: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct StratumReport {
    pub task_id: String,
    pub class: u8,
    pub n: usize,
    pub k: usize,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub iterations: usize,
    pub objective: Option<f64>,
    pub consistency: Option<RerunConsistency>,
}

fn algorithm_name(algorithm: Algorithm) -> &'static str {
    match algorithm {
        Algorithm::KMeans => "kmeans",
        Algorithm::KMedoids => "kmedoids",
    }
}

/// Summary sentences for a reliability table. The pair keys that produced
/// each row decide its nature: same rater across epochs is an intra-rater
/// comparison, different raters are inter-rater. Each summary quotes the
/// band of the weakest comparison of its kind, so the claim holds for every
/// pair it covers.
pub fn narrative(pairs: &[(RaterKey, RaterKey)], table: &ReliabilityTable) -> Vec<String> {
    let mut worst_inter: Option<(f64, Band)> = None;
    let mut worst_intra: Option<(f64, Band)> = None;
    for ((a, b), row) in pairs.iter().zip(&table.pairwise) {
        let (Some(qwk), Some(band)) = (row.qwk, row.band) else {
            continue;
        };
        let slot = if a.rater_id == b.rater_id {
            &mut worst_intra
        } else {
            &mut worst_inter
        };
        if slot.is_none_or(|(v, _)| qwk < v) {
            *slot = Some((qwk, band));
        }
    }

    let mut lines = Vec::new();
    if let Some((_, band)) = worst_inter {
        lines.push(format!(
            "The pairwise comparisons indicate {} inter-rater agreement.",
            band.phrase()
        ));
    }
    if let Some((_, band)) = worst_intra {
        lines.push(format!(
            "The cross-epoch self-comparison indicates {} intra-rater agreement.",
            band.phrase()
        ));
    }
    for row in &table.groups {
        if let (Some(value), Some(band)) = (row.fleiss_kappa, row.band) {
            lines.push(format!(
                "Consensus among {} (Fleiss' kappa {}) shows {} agreement.",
                row.raters.join(", "),
                present(value),
                band.phrase()
            ));
        }
    }
    lines
}

/// Markdown tables and narrative for a reliability section, without a
/// heading: one row per rater pair, then one per Fleiss group.
pub fn reliability_markdown(reliability: &ReliabilitySection) -> String {
    let mut md = String::new();
    let out = &mut md;
    if !reliability.table.pairwise.is_empty() {
        writeln!(out, "| Rater pair | Items | Agreement | QWK | Band |").unwrap();
        writeln!(out, "|---|---:|---:|---:|---|").unwrap();
        for row in &reliability.table.pairwise {
            let qwk = row
                .qwk
                .map_or("n/a".to_string(), |v| present(v).to_string());
            let band = row.band.map_or_else(
                || row.note.clone().unwrap_or_default(),
                |b| b.label().to_string(),
            );
            writeln!(
                out,
                "| {} & {} | {} | {} | {} | {} |",
                row.rater_a,
                row.rater_b,
                row.n_items,
                present(row.percent_agreement),
                qwk,
                band
            )
            .unwrap();
        }
    }
    if !reliability.table.groups.is_empty() {
        writeln!(out).unwrap();
        writeln!(out, "| Group | Items | Fleiss' kappa | Band |").unwrap();
        writeln!(out, "|---|---:|---:|---|").unwrap();
        for row in &reliability.table.groups {
            let kappa = row
                .fleiss_kappa
                .map_or("n/a".to_string(), |v| present(v).to_string());
            let band = row.band.map_or_else(
                || row.note.clone().unwrap_or_default(),
                |b| b.label().to_string(),
            );
            writeln!(
                out,
                "| {} | {} | {} | {} |",
                row.raters.join(", "),
                row.n_items,
                kappa,
                band
            )
            .unwrap();
        }
    }
    if !reliability.narrative.is_empty() {
        writeln!(out).unwrap();
        for line in &reliability.narrative {
            writeln!(out, "{line}").unwrap();
        }
    }
    md
}

/// Render the instructor-facing markdown document.
pub fn render_markdown(report: &RunReport) -> String {
    let mut md = String::new();
    let out = &mut md;

    writeln!(out, "# Scoring reliability report").unwrap();
    writeln!(out).unwrap();
    writeln!(out, "Generated: {}", report.generated_at).unwrap();
    writeln!(out, "Toolkit: scorekit {}", report.toolkit_version).unwrap();

    let corpus = &report.corpus;
    writeln!(out).unwrap();
    writeln!(out, "## Corpus").unwrap();
    writeln!(out).unwrap();
    writeln!(
        out,
        "- {} responses, {} scores, {} tasks, {} students",
        corpus.responses, corpus.scores, corpus.tasks, corpus.students
    )
    .unwrap();
    if !corpus.raters.is_empty() {
        writeln!(out, "- Raters: {}", corpus.raters.join(", ")).unwrap();
    }
    if let Some(filter) = &corpus.filter {
        writeln!(
            out,
            "- Earnest filter (min {} tokens): kept {} of {}, dropping {} scores",
            filter.min_tokens,
            filter.responses_kept,
            filter.responses_before,
            filter.scores_removed
        )
        .unwrap();
    }

    if let Some(allocation) = &report.allocation {
        writeln!(out).unwrap();
        writeln!(out, "## Allocation").unwrap();
        writeln!(out).unwrap();
        writeln!(
            out,
            "- Raters {} over a pool of {} students (seed {})",
            allocation.raters.join(", "),
            allocation.pool,
            allocation.seed
        )
        .unwrap();
        let singles: Vec<String> = allocation
            .singly_assigned
            .iter()
            .map(|(rater, count)| format!("{rater} {count}"))
            .collect();
        writeln!(
            out,
            "- Multi-rated students: {}; singly assigned: {}",
            allocation.multi_rated,
            singles.join(", ")
        )
        .unwrap();
        writeln!(
            out,
            "- Verification: {}",
            if allocation.verification.pass {
                "pass"
            } else {
                "FAIL"
            }
        )
        .unwrap();
    }

    if let Some(split) = &report.split {
        writeln!(out).unwrap();
        writeln!(out, "## Split").unwrap();
        writeln!(out).unwrap();
        let p = split.proportions;
        writeln!(
            out,
            "- Proportions {}/{}/{}/{} at seed {}",
            p[0], p[1], p[2], p[3], split.seed
        )
        .unwrap();
        writeln!(
            out,
            "- train {}, dev {}, test {}, reserve {}",
            split.train, split.dev, split.test, split.reserve
        )
        .unwrap();
    }

    if let Some(repr) = &report.representation {
        writeln!(out).unwrap();
        writeln!(out, "## Representation").unwrap();
        writeln!(out).unwrap();
        write!(
            out,
            "- {} vectors, dimension {}, {} items",
            repr.kind.name(),
            repr.dim,
            repr.items
        )
        .unwrap();
        if let Some(seed) = repr.seed {
            write!(out, " (seed {seed})").unwrap();
        }
        writeln!(out).unwrap();
        if let Some(vocabulary) = repr.vocabulary {
            let empty = repr.empty_docs.unwrap_or(0);
            writeln!(
                out,
                "- Vocabulary: {vocabulary} terms; {empty} empty documents"
            )
            .unwrap();
        }
        if let (Some(initial), Some(last)) = (repr.objective_initial, repr.objective_final) {
            writeln!(out, "- Objective: {initial} at init, {last} after training").unwrap();
        }
    }

    if let Some(classifier) = &report.classifier {
        writeln!(out).unwrap();
        writeln!(out, "## Classifier").unwrap();
        writeln!(out).unwrap();
        writeln!(
            out,
            "- Trained on {} items ({} dev) for {} epochs at seed {}; final loss {}",
            classifier.train_items,
            classifier.dev_items,
            classifier.epochs_run,
            classifier.seed,
            classifier.final_loss
        )
        .unwrap();
        if let Some(accuracy) = classifier.final_dev_accuracy {
            writeln!(out, "- Dev accuracy: {}", present(accuracy)).unwrap();
        }
        if let Some(test) = &classifier.test {
            writeln!(
                out,
                "- Test accuracy: {} over {} items (as rater {:?})",
                present(test.accuracy),
                test.n_items,
                classifier.machine_rater_id
            )
            .unwrap();
            writeln!(out).unwrap();
            writeln!(out, "| gold \\ predicted | 0 | 1 | 2 |").unwrap();
            writeln!(out, "|---|---:|---:|---:|").unwrap();
            for i in 0..test.confusion.k() {
                write!(out, "| {i} |").unwrap();
                for j in 0..test.confusion.k() {
                    write!(out, " {} |", test.confusion.count(i, j)).unwrap();
                }
                writeln!(out).unwrap();
            }
        }
    }

    if let Some(reliability) = &report.reliability {
        writeln!(out).unwrap();
        writeln!(out, "## Reliability").unwrap();
        writeln!(out).unwrap();
        out.push_str(&reliability_markdown(reliability));
    }

    if let Some(clustering) = &report.clustering {
        writeln!(out).unwrap();
        writeln!(out, "## Clustering").unwrap();
        writeln!(out).unwrap();
        writeln!(out, "- Strata labeled by {}", clustering.label_source).unwrap();
        for stratum in &clustering.strata {
            write!(
                out,
                "- {}/{}: n={}, k={}, {} in {} iterations",
                stratum.task_id,
                stratum.class,
                stratum.n,
                stratum.k,
                algorithm_name(stratum.algorithm),
                stratum.iterations
            )
            .unwrap();
            if let Some(consistency) = &stratum.consistency {
                write!(out, ", rerun consistency {}", present(consistency.mean)).unwrap();
            }
            writeln!(out).unwrap();
        }
        if let Some(mean) = clustering.consistency_mean {
            writeln!(out, "- Mean rerun consistency: {}", present(mean)).unwrap();
        }
        if !clustering.empty_cells.is_empty() {
            writeln!(out, "- Empty cells: {}", clustering.empty_cells.join(", ")).unwrap();
        }
        if !clustering.skipped.is_empty() {
            writeln!(out, "- Skipped: {}", clustering.skipped.join(", ")).unwrap();
        }
    }

    writeln!(out).unwrap();
    writeln!(out, "## Configuration").unwrap();
    writeln!(out).unwrap();
    writeln!(out, "```toml").unwrap();
    write!(out, "{}", report.config.to_toml()).unwrap();
    writeln!(out, "```").unwrap();

    md
}
