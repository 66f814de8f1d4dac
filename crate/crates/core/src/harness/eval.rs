use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_pipeline, HarnessError, Pipeline, Trace};
use crate::dataset::ImageRecord;
use crate::routing::Route;
use crate::taxonomy::EmotionTaxonomy;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteCounts {
    pub text_path: usize,
    pub visual_path: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub id: String,
    pub stage: String,
    pub message: String,
}

/// Result of one labeled record.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Predicted {
        id: String,
        truth: usize,
        predicted: usize,
        route: Route,
    },
    Failed(Failure),
}

/// Top-1 metrics over the records that made it through the pipeline.
/// Confusion rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub taxonomy: String,
    pub classes: Vec<String>,
    pub total: usize,
    pub evaluated: usize,
    pub top1_accuracy: f64,
    pub confusion_matrix: Vec<Vec<usize>>,
    /// `None` for classes without evaluated records.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub route_counts: RouteCounts,
    pub failures: Vec<Failure>,
}

/// Aggregates outcomes. Order does not matter except for the order of
/// `failures`.
pub fn tally(taxonomy: &EmotionTaxonomy, outcomes: &[Outcome]) -> Result<EvalReport, HarnessError> {
    if outcomes.is_empty() {
        return Err(HarnessError::EmptyEvaluation);
    }
    let c = taxonomy.len();
    let mut confusion = vec![vec![0usize; c]; c];
    let mut routes = RouteCounts::default();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Predicted {
                id,
                truth,
                predicted,
                route,
            } => {
                if *truth >= c || *predicted >= c {
                    return Err(HarnessError::Record {
                        id: id.clone(),
                        message: format!("class index out of range for {c} classes"),
                    });
                }
                confusion[*truth][*predicted] += 1;
                match route {
                    Route::TextPath => routes.text_path += 1,
                    Route::VisualPath => routes.visual_path += 1,
                }
            }
            Outcome::Failed(f) => failures.push(f.clone()),
        }
    }
    let evaluated = outcomes.len() - failures.len();
    let correct: usize = (0..c).map(|i| confusion[i][i]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect();
    Ok(EvalReport {
        taxonomy: taxonomy.name().to_string(),
        classes: taxonomy.classes().to_vec(),
        total: outcomes.len(),
        evaluated,
        top1_accuracy: if evaluated == 0 {
            0.0
        } else {
            correct as f64 / evaluated as f64
        },
        confusion_matrix: confusion,
        per_class_accuracy,
        route_counts: routes,
        failures,
    })
}

/// Runs every record through the pipeline (in parallel) and reports
/// metrics plus the traces of the successful runs, in input order. Failed
/// records are listed in the report rather than aborting the run.
pub fn evaluate(records: &[ImageRecord], pipeline: &Pipeline) -> Result<(EvalReport, Vec<Trace>), HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::EmptyEvaluation);
    }
    let truths: Vec<usize> = records
        .iter()
        .map(|r| r.emotion.ok_or_else(|| HarnessError::MissingLabel(r.id.clone())))
        .collect::<Result<_, _>>()?;
    let results: Vec<_> = records.par_iter().map(|r| run_pipeline(r, pipeline)).collect();
    let mut outcomes = Vec::with_capacity(records.len());
    let mut traces = Vec::new();
    for ((r, truth), res) in records.iter().zip(truths).zip(results) {
        match res {
            Ok((predicted, trace)) => {
                outcomes.push(Outcome::Predicted {
                    id: r.id.clone(),
                    truth,
                    predicted,
                    route: trace.route,
                });
                traces.push(trace);
            }
            Err(e) => outcomes.push(Outcome::Failed(Failure {
                id: e.id.clone(),
                stage: e.stage.to_string(),
                message: e.source.to_string(),
            })),
        }
    }
    Ok((tally(&pipeline.taxonomy, &outcomes)?, traces))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(id: &str, truth: usize, predicted: usize, route: Route) -> Outcome {
        Outcome::Predicted {
            id: id.into(),
            truth,
            predicted,
            route,
        }
    }

    #[test]
    fn all_correct_is_diagonal() {
        let tax = EmotionTaxonomy::binary();
        let outcomes: Vec<_> = (0..10)
            .map(|i| p(&i.to_string(), i % 2, i % 2, Route::VisualPath))
            .collect();
        let r = tally(&tax, &outcomes).unwrap();
        assert_eq!(r.top1_accuracy, 1.0);
        assert_eq!(r.confusion_matrix, vec![vec![5, 0], vec![0, 5]]);
        assert_eq!(r.route_counts.visual_path, 10);
    }

    #[test]
    fn hand_tallied_fixture() {
        let tax = EmotionTaxonomy::new("t", vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let table = [(0, 0), (0, 1), (1, 1), (1, 1), (2, 0), (2, 2), (2, 2)];
        let mut outcomes: Vec<_> = table
            .iter()
            .enumerate()
            .map(|(i, &(t, q))| {
                p(
                    &i.to_string(),
                    t,
                    q,
                    if i == 0 { Route::TextPath } else { Route::VisualPath },
                )
            })
            .collect();
        outcomes.push(Outcome::Failed(Failure {
            id: "x".into(),
            stage: "ocr".into(),
            message: "boom".into(),
        }));
        let r = tally(&tax, &outcomes).unwrap();
        assert_eq!(r.confusion_matrix, vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 2]]);
        assert_eq!((r.total, r.evaluated), (8, 7));
        assert!((r.top1_accuracy - 5.0 / 7.0).abs() < 1e-12);
        assert_eq!(r.per_class_accuracy, vec![Some(0.5), Some(1.0), Some(2.0 / 3.0)]);
        assert_eq!(
            r.route_counts,
            RouteCounts {
                text_path: 1,
                visual_path: 6
            }
        );
        assert_eq!(r.failures.len(), 1);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(
            tally(&EmotionTaxonomy::binary(), &[]),
            Err(HarnessError::EmptyEvaluation)
        ));
    }
}
