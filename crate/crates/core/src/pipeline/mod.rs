//! Configuration-driven end-to-end runs with a single seed manifest.
//!
//! Stage order: ingest, filter, allocate, split, vectorize, train,
//! agreement, cluster, consistency, report. Agreement is evaluated after
//! training so the classifier's test-set predictions can join the corpus as
//! a peer rater and appear in the reliability table. A stage only runs when
//! its config section is present, so partial pipelines (agreement-only,
//! split-only) are ordinary runs. The first stage error aborts the run,
//! naming the stage and cause; later stages are not attempted.

pub mod config;
pub mod report;

pub use config::{load_config, PipelineConfig, RepresentationKind};
pub use report::{render_markdown, RunReport};

use std::collections::BTreeMap;
use std::fs;
use std::fs::File;
use std::path::Path;
use std::time::SystemTime;

use thiserror::Error;

use crate::agreement::reliability_table_pairs;
use crate::allocation::{design_allocation, verify_allocation, AllocationDesign, PinnedConstraint};
use crate::classifier::{as_rater, evaluate, train_softmax, write_predictions_csv};
use crate::clustering::{
    build_strata, default_k, rerun_consistency, run_clustering, write_clusters_csv, Stratum,
};
use crate::corpus::{Corpus, ItemId, Partition, RaterKey, SplitProportions, LABEL_SCALE};
use crate::representations::wtmf::wtmf_train;
use crate::representations::{load_vectors, tfidf_vectorize, VectorSet};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {message}")]
    Config { message: String },
    #[error("stage {stage}: {message}")]
    Stage {
        stage: &'static str,
        message: String,
    },
}

/// Wrap any stage error with the stage's name.
fn err<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv_eat(hash: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *hash = (*hash ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
}

/// Derive a stage seed from the master seed by FNV-1a over
/// `(master, stage, qualifier)`, with a separator byte so the stage and
/// qualifier strings cannot blur into each other. Hand-rolled on purpose:
/// the derivation is part of the reproducibility contract, so it must stay
/// stable across platforms and standard-library versions.
pub fn derive_seed(master_seed: u64, stage: &str, qualifier: &str) -> u64 {
    let mut hash = FNV_OFFSET;
    fnv_eat(&mut hash, &master_seed.to_le_bytes());
    fnv_eat(&mut hash, stage.as_bytes());
    fnv_eat(&mut hash, &[0]);
    fnv_eat(&mut hash, qualifier.as_bytes());
    hash
}

/// Ranks steering split_dataset's test-set selection: an item whose scores
/// all carry one label ranks by its score count (more unanimous raters, rank
/// higher), any disagreement ranks 0. Unscored items are absent (rank 0).
pub fn agreement_ranks(corpus: &Corpus) -> BTreeMap<ItemId, u32> {
    let mut per_item: BTreeMap<ItemId, (crate::corpus::Label, u32, bool)> = BTreeMap::new();
    for record in corpus.scores() {
        let entry = per_item
            .entry(record.item())
            .or_insert((record.label, 0, true));
        entry.1 += 1;
        entry.2 &= entry.0 == record.label;
    }
    per_item
        .into_iter()
        .map(|(item, (_, count, unanimous))| (item, if unanimous { count } else { 0 }))
        .collect()
}

fn corpus_docs(corpus: &Corpus) -> BTreeMap<ItemId, String> {
    corpus
        .responses()
        .map(|(item, text)| (item.clone(), text.to_string()))
        .collect()
}

fn label_source_name(source: &crate::corpus::LabelSource) -> String {
    match source {
        crate::corpus::LabelSource::Consensus => "consensus".to_string(),
        crate::corpus::LabelSource::Rater(rater) => format!("rater {rater}"),
    }
}

/// Load a config file and run it; see [`run`].
pub fn run_path(path: impl AsRef<Path>) -> Result<RunReport, PipelineError> {
    let config = load_config(path)?;
    run(&config)
}

/// Execute every configured stage, write artifacts and the dual-format
/// report into the output directory, and return the report.
///
/// Rerunning the same config reproduces `report.json` and `report.md` byte
/// for byte except the generation timestamp.
pub fn run(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let master = config.master_seed;
    let out_dir = &config.paths.output_dir;
    fs::create_dir_all(out_dir).map_err(err("report"))?;

    let mut corpus = Corpus::load_responses(&config.paths.responses).map_err(err("ingest"))?;
    if let Some(scores) = &config.paths.scores {
        corpus = corpus.load_scores(scores).map_err(err("ingest"))?;
    }

    let mut filter_report = None;
    if let Some(filter) = &config.filter {
        let (kept, report) = corpus.earnest_filter(filter.min_tokens);
        corpus = kept;
        filter_report = Some(report);
    }

    let corpus_summary = report::CorpusSummary {
        responses: corpus.response_count(),
        scores: corpus.score_count(),
        tasks: corpus.tasks().len(),
        students: corpus.students().len(),
        raters: corpus.raters().iter().map(|r| r.to_string()).collect(),
        filter: filter_report,
    };

    let mut allocation_report = None;
    if let Some(section) = &config.allocation {
        let design = AllocationDesign {
            raters: section.raters.clone(),
            pool: corpus.students().into_iter().collect(),
            pair_size: section.pair_size,
            consensus_size: section.consensus_size,
            pinned: section.pinned.as_ref().map(|p| PinnedConstraint {
                rater_id: p.rater_id.clone(),
                required: p.required.iter().cloned().collect(),
                min_overlap: p.min_overlap,
            }),
        };
        let seed = section
            .seed
            .unwrap_or_else(|| derive_seed(master, "allocate", ""));
        let allocation = design_allocation(&design, seed).map_err(err("allocate"))?;
        let verification = verify_allocation(&allocation, &design);
        let file = File::create(out_dir.join("allocation.csv")).map_err(err("allocate"))?;
        allocation.write_csv(file).map_err(err("allocate"))?;
        allocation_report = Some(report::AllocationReport {
            seed,
            raters: design.raters.clone(),
            pool: design.pool.len(),
            multi_rated: allocation.multi_rated().len(),
            singly_assigned: allocation.singly_assigned_counts(),
            verification,
        });
    }

    let mut split_assignment = None;
    let mut split_report = None;
    if let Some(section) = &config.split {
        let proportions = SplitProportions(section.proportions);
        let seed = section
            .seed
            .unwrap_or_else(|| derive_seed(master, "split", ""));
        let ranks = agreement_ranks(&corpus);
        let assignment = corpus
            .split_dataset(&proportions, &ranks, seed)
            .map_err(err("split"))?;
        assignment
            .write_csv_path(out_dir.join("split.csv"))
            .map_err(err("split"))?;
        let counts = assignment.counts();
        split_report = Some(report::SplitReport {
            seed,
            proportions: section.proportions,
            train: counts[Partition::Train as usize],
            dev: counts[Partition::Dev as usize],
            test: counts[Partition::Test as usize],
            reserve: counts[Partition::Reserve as usize],
        });
        split_assignment = Some(assignment);
    }

    let mut vectors: Option<VectorSet> = None;
    let mut representation_report = None;
    let mut docs = None;
    if let Some(section) = &config.representation {
        match section.kind {
            RepresentationKind::Tfidf => {
                let d = corpus_docs(&corpus);
                let result =
                    tfidf_vectorize(&d, None, &section.tfidf_config()).map_err(err("vectorize"))?;
                result
                    .vectors
                    .save(out_dir.join("vectors.tsv"))
                    .map_err(err("vectorize"))?;
                representation_report = Some(report::RepresentationReport {
                    kind: section.kind,
                    dim: result.vectors.dim(),
                    items: result.vectors.len(),
                    vocabulary: Some(result.vocabulary.len()),
                    empty_docs: Some(result.empty_docs.len()),
                    seed: None,
                    objective_initial: None,
                    objective_final: None,
                });
                vectors = Some(result.vectors);
                docs = Some(d);
            }
            RepresentationKind::Wtmf => {
                let d = corpus_docs(&corpus);
                let seed = section
                    .seed
                    .unwrap_or_else(|| derive_seed(master, "wtmf", ""));
                let model = wtmf_train(&d, &section.tfidf_config(), &section.wtmf_config(), seed)
                    .map_err(err("wtmf"))?;
                let set = model.vectors();
                set.save(out_dir.join("vectors.tsv")).map_err(err("wtmf"))?;
                representation_report = Some(report::RepresentationReport {
                    kind: section.kind,
                    dim: set.dim(),
                    items: set.len(),
                    vocabulary: Some(model.vocabulary.len()),
                    empty_docs: None,
                    seed: Some(seed),
                    objective_initial: model.objective_trace.first().copied(),
                    objective_final: model.objective_trace.last().copied(),
                });
                vectors = Some(set);
                docs = Some(d);
            }
            RepresentationKind::External => {
                let path = config.paths.vectors.as_ref().expect("checked by validate");
                let set = load_vectors(path, None).map_err(err("vectorize"))?;
                representation_report = Some(report::RepresentationReport {
                    kind: section.kind,
                    dim: set.dim(),
                    items: set.len(),
                    vocabulary: None,
                    empty_docs: None,
                    seed: None,
                    objective_initial: None,
                    objective_final: None,
                });
                vectors = Some(set);
            }
        }
    }

    let mut classifier_report = None;
    if let Some(section) = &config.classifier {
        let vectors = vectors.as_ref().expect("checked by validate");
        let split = split_assignment.as_ref().expect("checked by validate");
        let gold = section.labels.resolve(&corpus);
        // Train on what actually exists: items with both a vector and a
        // gold label. Everything else stays out of every partition.
        let usable = split.filtered(|item| vectors.get(item).is_some() && gold.contains_key(item));
        let seed = section
            .seed
            .unwrap_or_else(|| derive_seed(master, "train", ""));
        let outcome = train_softmax(vectors, &gold, &usable, &section.train_config(seed))
            .map_err(err("train"))?;

        let test_items = usable.items_in(Partition::Test);
        let mut predictions = BTreeMap::new();
        for item in &test_items {
            let x = vectors.get(item).expect("usable items have vectors");
            let prediction = outcome.model.predict_one(x).map_err(err("train"))?;
            predictions.insert((*item).clone(), prediction);
        }
        let mut test_metrics = None;
        if !test_items.is_empty() {
            let evaluation =
                evaluate(&outcome.model, vectors, &gold, &test_items).map_err(err("train"))?;
            test_metrics = Some(report::TestMetrics {
                n_items: evaluation.n_items,
                accuracy: evaluation.accuracy,
                confusion: evaluation.confusion,
            });
        }

        outcome
            .model
            .save(out_dir.join("model.json"))
            .map_err(err("train"))?;
        let file = File::create(out_dir.join("predictions.csv")).map_err(err("train"))?;
        write_predictions_csv(&predictions, file).map_err(err("train"))?;

        // The machine joins the corpus as a peer rater over the test items,
        // which is what lets the agreement stage compare it to humans.
        corpus
            .add_scores(as_rater(
                &predictions,
                &section.machine_rater_id,
                RaterKey::DEFAULT_EPOCH,
            ))
            .map_err(err("train"))?;

        let counts = usable.counts();
        classifier_report = Some(report::ClassifierReport {
            seed,
            train_items: counts[Partition::Train as usize],
            dev_items: counts[Partition::Dev as usize],
            epochs_run: outcome.model.epochs_run,
            final_loss: outcome.model.final_loss,
            final_dev_accuracy: outcome.dev_accuracy.last().copied(),
            machine_rater_id: section.machine_rater_id.clone(),
            test: test_metrics,
        });
    }

    let mut reliability_section = None;
    if let Some(section) = &config.agreement {
        let pairs = section.parsed_pairs()?;
        let groups = section.parsed_groups();
        let table = reliability_table_pairs(&corpus, &pairs, &groups, LABEL_SCALE);
        let narrative = report::narrative(&pairs, &table);
        reliability_section = Some(report::ReliabilitySection { table, narrative });
    }

    let mut clustering_report = None;
    if let Some(section) = &config.clustering {
        let vectors = vectors.as_ref().expect("checked by validate");
        let strata_result = build_strata(&corpus, &section.labels);

        let mut skipped = Vec::new();
        let mut strata = Vec::new();
        for stratum in strata_result.strata {
            let members: Vec<ItemId> = stratum
                .members
                .iter()
                .filter(|m| vectors.get(m).is_some())
                .cloned()
                .collect();
            if members.is_empty() {
                skipped.push(format!(
                    "{}/{} (no vectors)",
                    stratum.task_id, stratum.class
                ));
                continue;
            }
            strata.push(Stratum::new(stratum.task_id, stratum.class, members));
        }

        let seeds = &section.consistency_seeds;
        // Rerun consistency can retrain the representation per seed; the
        // retrained sets are shared across strata, not rebuilt per stratum.
        let mut retrained: BTreeMap<u64, VectorSet> = BTreeMap::new();
        let mut clusterings = Vec::new();
        let mut stratum_reports = Vec::new();
        let mut means = Vec::new();
        for stratum in &strata {
            let key = format!("{}/{}", stratum.task_id, stratum.class);
            let k = section
                .k_overrides
                .get(&key)
                .copied()
                .or(section.k)
                .map(|k| k.min(stratum.len()))
                .unwrap_or_else(|| default_k(stratum.len()));
            let cluster_config = section.cluster_config(Some(k));
            let seed = section
                .seed
                .unwrap_or_else(|| derive_seed(master, "cluster", &key));
            let clustering =
                run_clustering(vectors, stratum, &cluster_config, seed).map_err(err("cluster"))?;

            let mut consistency = None;
            if seeds.len() >= 2 {
                let wtmf_section = config
                    .representation
                    .as_ref()
                    .filter(|r| r.kind == RepresentationKind::Wtmf);
                let result = match (wtmf_section, docs.as_ref()) {
                    (Some(repr), Some(docs)) => {
                        let mut hook = |run_seed: u64| -> VectorSet {
                            retrained
                                .entry(run_seed)
                                .or_insert_with(|| {
                                    let seed =
                                        derive_seed(master, "wtmf-rerun", &run_seed.to_string());
                                    wtmf_train(
                                        docs,
                                        &repr.tfidf_config(),
                                        &repr.wtmf_config(),
                                        seed,
                                    )
                                    .expect("retraining on the same corpus cannot newly fail")
                                    .vectors()
                                })
                                .clone()
                        };
                        rerun_consistency(vectors, stratum, &cluster_config, seeds, Some(&mut hook))
                    }
                    _ => rerun_consistency(vectors, stratum, &cluster_config, seeds, None),
                }
                .map_err(err("consistency"))?;
                means.push(result.mean);
                consistency = Some(result);
            }

            stratum_reports.push(report::StratumReport {
                task_id: stratum.task_id.clone(),
                class: stratum.class.value(),
                n: stratum.len(),
                k,
                algorithm: section.algorithm,
                seed,
                iterations: clustering.iterations,
                objective: clustering.final_objective(),
                consistency,
            });
            clusterings.push(clustering);
        }

        let file = File::create(out_dir.join("clusters.csv")).map_err(err("cluster"))?;
        write_clusters_csv(&clusterings, file).map_err(err("cluster"))?;

        clustering_report = Some(report::ClusteringReport {
            label_source: label_source_name(&section.labels),
            strata: stratum_reports,
            empty_cells: strata_result
                .empty_cells
                .iter()
                .map(|(task, class)| format!("{task}/{class}"))
                .collect(),
            skipped,
            consistency_mean: if means.is_empty() {
                None
            } else {
                Some(means.iter().sum::<f64>() / means.len() as f64)
            },
        });
    }

    let run_report = RunReport {
        toolkit_version: crate::VERSION.to_string(),
        generated_at: humantime::format_rfc3339_seconds(SystemTime::now()).to_string(),
        corpus: corpus_summary,
        allocation: allocation_report,
        split: split_report,
        representation: representation_report,
        classifier: classifier_report,
        reliability: reliability_section,
        clustering: clustering_report,
        config: config.clone(),
    };

    let json = serde_json::to_string_pretty(&run_report).map_err(err("report"))?;
    fs::write(out_dir.join("report.json"), json + "\n").map_err(err("report"))?;
    fs::write(out_dir.join("report.md"), render_markdown(&run_report)).map_err(err("report"))?;

    Ok(run_report)
}
