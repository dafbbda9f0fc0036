//! Parameter sweeps over [`RunConfig`].

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{run_eval, BenchError, DatabaseFormat, DatasetRecord, RunConfig, RunOptions, FAMILIES};
use crate::backend::{Backend, Pooling};
use crate::prompt::LengthVariant;
use crate::retrieval::{EvalRun, Histogram, RetrievalError, DEFAULT_K_VALUES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    LayerSweep,
    Pooling,
    PromptLength,
    DatabaseFormat,
    EolFamily,
}

impl AblationKind {
    pub const ALL: [AblationKind; 5] = [
        AblationKind::LayerSweep,
        AblationKind::Pooling,
        AblationKind::PromptLength,
        AblationKind::DatabaseFormat,
        AblationKind::EolFamily,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationKind::LayerSweep => "layer_sweep",
            AblationKind::Pooling => "pooling",
            AblationKind::PromptLength => "prompt_length",
            AblationKind::DatabaseFormat => "database_format",
            AblationKind::EolFamily => "eol_family",
        }
    }

    /// Kinds whose report includes per-point self-similarity histograms.
    pub fn has_histograms(self) -> bool {
        matches!(self, AblationKind::LayerSweep | AblationKind::Pooling)
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown ablation kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub label: String,
    pub config: RunConfig,
}

/// The standard grid for `kind`, varying one field of `base`.
///
/// `layer_count` bounds the layer sweep (offsets `0..layer_count`).
pub fn default_grid(kind: AblationKind, base: &RunConfig, layer_count: u32) -> Vec<GridPoint> {
    let point = |label: String, config: RunConfig| GridPoint { label, config };
    match kind {
        AblationKind::LayerSweep => (0..layer_count)
            .map(|offset| {
                point(
                    offset.to_string(),
                    RunConfig {
                        layer_offset: offset,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        AblationKind::Pooling => [(1, "penultimate"), (0, "last")]
            .into_iter()
            .flat_map(|(offset, layer)| {
                [Pooling::LastToken, Pooling::MeanAllTokens].map(|pooling| {
                    point(
                        format!("{layer}/{pooling}"),
                        RunConfig {
                            layer_offset: offset,
                            pooling,
                            ..base.clone()
                        },
                    )
                })
            })
            .collect(),
        AblationKind::PromptLength => LengthVariant::ALL
            .into_iter()
            .map(|v| {
                point(
                    v.label().to_string(),
                    RunConfig {
                        template_family: "meol".into(),
                        template_id: None,
                        length_variant: Some(v),
                        ..base.clone()
                    },
                )
            })
            .collect(),
        AblationKind::DatabaseFormat => DatabaseFormat::ALL
            .into_iter()
            .map(|f| {
                point(
                    f.as_str().to_string(),
                    RunConfig {
                        database_format: f,
                        template_id: None,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        AblationKind::EolFamily => FAMILIES
            .into_iter()
            .map(|family| {
                point(
                    family.to_string(),
                    RunConfig {
                        template_family: family.to_string(),
                        template_id: None,
                        length_variant: Some(LengthVariant::OneWord),
                        ..base.clone()
                    },
                )
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub fingerprint: String,
    pub run: EvalRun,
    pub histogram: Option<Histogram>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub kind: AblationKind,
    pub model_id: String,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// `grid_point,recall@1,recall@5,recall@10,recall@20,mrr`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), BenchError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["grid_point".to_string()];
        header.extend(DEFAULT_K_VALUES.iter().map(|k| format!("recall@{k}")));
        header.push("mrr".into());
        out.write_record(&header).map_err(RetrievalError::from)?;
        for row in &self.rows {
            let mut line = vec![row.label.clone()];
            line.extend(
                DEFAULT_K_VALUES
                    .iter()
                    .map(|k| format!("{:.6}", row.run.recall(*k).unwrap_or(f64::NAN))),
            );
            line.push(format!("{:.6}", row.run.mrr));
            out.write_record(&line).map_err(RetrievalError::from)?;
        }
        out.flush()?;
        Ok(())
    }

    /// `grid_point,bin_start,bin_end,count`, one block per grid point.
    pub fn write_histogram_csv<W: Write>(&self, w: W) -> Result<(), BenchError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["grid_point", "bin_start", "bin_end", "count"])
            .map_err(RetrievalError::from)?;
        for row in &self.rows {
            let Some(h) = &row.histogram else { continue };
            for (i, c) in h.counts.iter().enumerate() {
                out.write_record([
                    row.label.clone(),
                    format!("{:.4}", h.edges[i]),
                    format!("{:.4}", h.edges[i + 1]),
                    c.to_string(),
                ])
                .map_err(RetrievalError::from)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `<kind>.csv`, plus `<kind>_histograms.csv` for layer and pooling sweeps.
    pub fn write(&self, dir: &Path) -> Result<(), BenchError> {
        fs::create_dir_all(dir)?;
        self.write_csv(fs::File::create(dir.join(format!("{}.csv", self.kind)))?)?;
        if self.kind.has_histograms() {
            self.write_histogram_csv(fs::File::create(
                dir.join(format!("{}_histograms.csv", self.kind)),
            )?)?;
        }
        Ok(())
    }
}

/// One evaluation per grid point, in grid order.
pub fn run_ablation(
    kind: AblationKind,
    grid: &[GridPoint],
    records: &[DatasetRecord],
    backend: &dyn Backend,
    opts: &RunOptions,
) -> Result<AblationReport, BenchError> {
    let mut rows = Vec::with_capacity(grid.len());
    for point in grid {
        let mut config = point.config.clone();
        for k in DEFAULT_K_VALUES {
            if !config.k_values.contains(&k) {
                config.k_values.push(k);
            }
        }
        log::info!("{kind}: running grid point {}", point.label);
        let report = run_eval(&config, records, backend, opts)?;
        rows.push(AblationRow {
            label: point.label.clone(),
            fingerprint: report.fingerprint,
            run: report.run,
            histogram: if kind.has_histograms() {
                report.histogram
            } else {
                None
            },
        });
    }
    Ok(AblationReport {
        kind,
        model_id: backend.model_id(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shapes() {
        let base = RunConfig::default();
        assert_eq!(default_grid(AblationKind::LayerSweep, &base, 33).len(), 33);
        let pooling: Vec<_> = default_grid(AblationKind::Pooling, &base, 33)
            .into_iter()
            .map(|p| p.label)
            .collect();
        assert_eq!(
            pooling,
            [
                "penultimate/last_token",
                "penultimate/mean_all_tokens",
                "last/last_token",
                "last/mean_all_tokens"
            ]
        );
        let lengths: Vec<_> = default_grid(AblationKind::PromptLength, &base, 33)
            .into_iter()
            .map(|p| p.label)
            .collect();
        assert_eq!(
            lengths,
            [
                "One word",
                "Two words",
                "Three words",
                "Four words",
                "Sentence"
            ]
        );
        assert_eq!(
            default_grid(AblationKind::DatabaseFormat, &base, 33).len(),
            5
        );
        assert_eq!(default_grid(AblationKind::EolFamily, &base, 33).len(), 3);
        for kind in AblationKind::ALL {
            assert_eq!(kind.as_str().parse::<AblationKind>().unwrap(), kind);
        }
    }
}
