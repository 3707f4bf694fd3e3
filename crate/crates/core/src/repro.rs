//! Ablation grids at toy scale: one pre-training run per labeled cell,
//! summarized as a CSV table.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::augment::Recipe;
use crate::clustering::ClusterConfig;
use crate::error::Result;
use crate::loss::{LossConfig, ScaleFactor};
use crate::trainer::{labeled_corpus, load_checkpoint, pretrain, probe, TrainConfig};

pub const CSV_HEADER: [&str; 5] = ["config_label", "l_total", "l_c", "contrastive_accuracy", "probe_accuracy"];
pub const BASELINE_LABEL: &str = "Baseline wav2vec 2.0";
pub const CLUSTER_FACTORS: [usize; 3] = [8, 16, 24];
pub const SCALE_FACTORS: [ScaleFactor; 4] = [
    ScaleFactor::NEG_INFINITY,
    ScaleFactor(Some(0.1)),
    ScaleFactor(Some(0.3)),
    ScaleFactor(Some(0.5)),
];

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub label: String,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AblationGrid {
    pub cells: Vec<GridCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub config_label: String,
    pub l_total: f64,
    pub l_c: f64,
    pub contrastive_accuracy: f64,
    pub probe_accuracy: f64,
    /// Set when the cell failed; the numeric fields are then NaN.
    #[serde(skip)]
    pub error: Option<String>,
}

fn weighted(base: &TrainConfig, recipe: Recipe, (alpha, beta, gamma): (f64, f64, f64)) -> TrainConfig {
    let mut c = base.clone();
    c.augment.recipe = recipe;
    c.loss = LossConfig {
        alpha,
        beta,
        gamma,
        scale_factor: ScaleFactor::ONE,
        clustering: None,
        ..base.loss.clone()
    };
    c
}

fn clustered(mut c: TrainConfig, base: &TrainConfig, cf: usize, sf: ScaleFactor, pooled: bool) -> TrainConfig {
    c.loss.scale_factor = sf;
    c.loss.clustering = Some(ClusterConfig {
        cluster_factor: cf,
        pooled,
        ..base.loss.clustering.clone().unwrap_or_default()
    });
    c
}

pub fn cluster_label(cf: usize, sf: ScaleFactor) -> String {
    format!("CF ({cf}), SF ({})", sf.label())
}

pub fn ccc_label(cf: usize, sf: ScaleFactor, pooled: bool) -> String {
    let suffix = if pooled { " - pooled" } else { "" };
    format!("CCC - CF({cf}), SF({}){suffix}", sf.label())
}

impl AblationGrid {
    pub fn single(label: impl Into<String>, config: TrainConfig) -> Self {
        Self {
            cells: vec![GridCell {
                label: label.into(),
                config,
            }],
        }
    }

    pub fn push(&mut self, label: impl Into<String>, config: TrainConfig) {
        self.cells.push(GridCell {
            label: label.into(),
            config,
        });
    }

    pub fn baseline(base: &TrainConfig) -> TrainConfig {
        weighted(base, Recipe::Identity, (1.0, 0.0, 0.0))
    }

    /// Clustering alone on the original view, no augmentation.
    pub fn cluster_cell(base: &TrainConfig, cf: usize, sf: ScaleFactor) -> TrainConfig {
        clustered(Self::baseline(base), base, cf, sf, false)
    }

    /// Augmentation II with clustering, β=γ=0.5.
    pub fn ccc_cell(base: &TrainConfig, cf: usize, sf: ScaleFactor, pooled: bool) -> TrainConfig {
        clustered(weighted(base, Recipe::II, (1.0, 0.5, 0.5)), base, cf, sf, pooled)
    }

    /// Baseline and the three augmentation variants.
    pub fn augmentation(base: &TrainConfig) -> Self {
        let mut g = Self::single(BASELINE_LABEL, Self::baseline(base));
        g.push("Augmentation I", weighted(base, Recipe::I, (1.0, 0.5, 0.5)));
        g.push("Augmentation II (*)", weighted(base, Recipe::II, (0.0, 1.0, 1.0)));
        g.push("Augmentation II", weighted(base, Recipe::II, (1.0, 0.5, 0.5)));
        g
    }

    /// Baseline and every CF × SF combination of `cfs` and `sfs`.
    pub fn clustering(base: &TrainConfig, cfs: &[usize], sfs: &[ScaleFactor]) -> Self {
        let mut g = Self::single(BASELINE_LABEL, Self::baseline(base));
        for &cf in cfs {
            for &sf in sfs {
                g.push(cluster_label(cf, sf), Self::cluster_cell(base, cf, sf));
            }
        }
        g
    }

    /// Baseline plus the full CF {8, 16, 24} × SF {-∞, 0.1, 0.3, 0.5} grid.
    pub fn clustering_full(base: &TrainConfig) -> Self {
        Self::clustering(base, &CLUSTER_FACTORS, &SCALE_FACTORS)
    }

    /// Baseline, the best single ingredients, and the combined variants with
    /// and without pooling.
    pub fn combined(base: &TrainConfig) -> Self {
        let sf3 = ScaleFactor(Some(0.3));
        let mut g = Self::single(BASELINE_LABEL, Self::baseline(base));
        g.push("Augmentation II", weighted(base, Recipe::II, (1.0, 0.5, 0.5)));
        g.push(cluster_label(16, sf3), Self::cluster_cell(base, 16, sf3));
        for cf in [8, 16] {
            for sf in [sf3, ScaleFactor(Some(0.5))] {
                for pooled in [false, true] {
                    g.push(ccc_label(cf, sf, pooled), Self::ccc_cell(base, cf, sf, pooled));
                }
            }
        }
        g
    }
}

fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c.to_ascii_lowercase() } else { '-' })
        .collect();
    s.split('-').filter(|p| !p.is_empty()).collect::<Vec<_>>().join("-")
}

fn run_cell(cell: &GridCell, dir: PathBuf) -> Result<GridRow> {
    let mut config = cell.config.clone();
    config.paths.out_dir = dir;
    let summary = pretrain(&config)?;
    let last = summary.last.ok_or_else(|| crate::Error::InvalidConfig("grid cell ran zero steps".into()))?;
    let (model, params, _) = load_checkpoint(&summary.final_checkpoint)?;
    let probe_accuracy = probe(&model, &params, &labeled_corpus(&config)?)?.accuracy;
    Ok(GridRow {
        config_label: cell.label.clone(),
        l_total: last.l_total,
        l_c: last.l_c,
        contrastive_accuracy: last.contrastive_accuracy,
        probe_accuracy,
        error: None,
    })
}

/// Runs every cell in order, each in `out_dir/<label slug>`. A failed cell is
/// recorded as a NaN row with its error and the grid continues.
pub fn run_grid(grid: &AblationGrid, out_dir: &Path, mut on_row: impl FnMut(&GridRow)) -> Vec<GridRow> {
    grid.cells
        .iter()
        .map(|cell| {
            let row = run_cell(cell, out_dir.join(slug(&cell.label))).unwrap_or_else(|e| GridRow {
                config_label: cell.label.clone(),
                l_total: f64::NAN,
                l_c: f64::NAN,
                contrastive_accuracy: f64::NAN,
                probe_accuracy: f64::NAN,
                error: Some(e.to_string()),
            });
            on_row(&row);
            row
        })
        .collect()
}

pub fn write_csv(rows: &[GridRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> crate::Error {
    std::io::Error::other(e).into()
}
