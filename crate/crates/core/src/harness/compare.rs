//! Side-by-side table of finished runs.

use super::config::ExperimentConfig;
use super::experiment::{read_json, RunSummary, Timing, INCOMPLETE_FILE, SUMMARY_FILE, TIMING_FILE};
use super::HarnessError;
use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub summary: RunSummary,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub scene_seed: u64,
    pub rows: Vec<CompareRow>,
}

/// Loads each config's finished run. All runs must share a scene seed and
/// have consumed identical feature caches.
pub fn compare(configs: &[ExperimentConfig]) -> Result<CompareTable, HarnessError> {
    let mut rows = Vec::with_capacity(configs.len());
    for cfg in configs {
        let dir = cfg.run_dir();
        if dir.join(INCOMPLETE_FILE).exists() {
            return Err(HarnessError::Compare(format!("{} is incomplete", dir.display())));
        }
        let summary: RunSummary = read_json(&dir.join(SUMMARY_FILE))?;
        let timing: Timing = read_json(&dir.join(TIMING_FILE))?;
        rows.push(CompareRow {
            summary,
            train_seconds: timing.train_seconds,
        });
    }
    let first = rows
        .first()
        .ok_or_else(|| HarnessError::Compare("no runs given".into()))?
        .summary
        .clone();
    for r in &rows[1..] {
        if r.summary.scene_seed != first.scene_seed {
            return Err(HarnessError::Compare(format!(
                "scene seeds differ: {} uses {}, {} uses {}",
                first.variant, first.scene_seed, r.summary.variant, r.summary.scene_seed
            )));
        }
        if r.summary.feature_digest != first.feature_digest {
            return Err(HarnessError::Compare(format!(
                "{} and {} were trained on different feature caches",
                first.variant, r.summary.variant
            )));
        }
    }
    Ok(CompareTable {
        scene_seed: first.scene_seed,
        rows,
    })
}

impl CompareTable {
    pub fn row(&self, variant: &str) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.summary.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "variant",
            "scene_seed",
            "dev_frame_accuracy",
            "test_frame_accuracy",
            "train_seconds",
            "clean_channel_mass",
            "uniform_channel_share",
        ])
        .expect("in-memory csv");
        for r in &self.rows {
            let s = &r.summary;
            w.write_record([
                s.variant.clone(),
                s.scene_seed.to_string(),
                format!("{:.6}", s.dev_frame_accuracy),
                format!("{:.6}", s.test_frame_accuracy),
                format!("{:.3}", r.train_seconds),
                s.clean_channel_mass.map_or(String::new(), |m| format!("{m:.6}")),
                format!("{:.6}", s.uniform_channel_share),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("scene seed {}\n", self.scene_seed);
        let _ = writeln!(
            out,
            "{:<16} {:>9} {:>9} {:>10} {:>12}",
            "variant", "dev acc", "test acc", "train s", "clean mass"
        );
        for r in &self.rows {
            let s = &r.summary;
            let mass = s
                .clean_channel_mass
                .map_or("-".to_string(), |m| format!("{m:.3}"));
            let _ = writeln!(
                out,
                "{:<16} {:>9.4} {:>9.4} {:>10.1} {:>12}",
                s.variant, s.dev_frame_accuracy, s.test_frame_accuracy, r.train_seconds, mass
            );
        }
        out
    }
}
