//! Consistency-mode ablation on a synthetic benchmark, its CSV report and
//! SVG charts.
//!
//! Every (mode, seed) cell trains a fresh network on clean synthetic volumes
//! and segments held-out volumes in which one slice is blanked. Besides ARI
//! the cell records how many objects keep their identity across the blank.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cconvlstm::ConsistencyMode;
use crate::decoder::{ModelConfig, Network};
use crate::error::{Error, Result};
use crate::metrics::adapted_rand_error;
use crate::segmenter::{infer_volume, InferenceConfig};
use crate::synth::{generate, SynthSpec};
use crate::trainer::{TrainConfig, Trainer};
use crate::volume::{write_atomic, LabelMap, Volume};

/// Published ARI per mode, drawn next to the measured bars.
pub const REFERENCE_ARI: [(ConsistencyMode, f64); 4] = [
    (ConsistencyMode::ST, 0.13),
    (ConsistencyMode::STL, 0.082),
    (ConsistencyMode::STN, 0.045),
    (ConsistencyMode::STC, 0.035),
];

pub const REPORT_COLUMNS: [&str; 4] = ["mode", "seed", "ari", "inference_seconds"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub modes: Vec<ConsistencyMode>,
    pub seeds: Vec<u64>,
    /// Network trained in every cell; its consistency mode is replaced by
    /// the cell's.
    pub model: ModelConfig,
    pub train_volumes: usize,
    pub test_volumes: usize,
    /// Template for every benchmark volume; its seed and artifact slices
    /// are set per volume.
    pub volume: SynthSpec,
    /// Depth of the test volumes; `None` uses the model's sequence length,
    /// so each test volume is decoded as one chunk.
    pub test_depth: Option<usize>,
    /// Blanked slice of every test volume; `None` picks the middle.
    pub blank_slice: Option<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub teacher_forced_epochs: usize,
    pub output_dir: PathBuf,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            modes: ConsistencyMode::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            model: ModelConfig {
                levels: 5,
                hidden_width: 8,
                objects_per_sequence: 5,
                sequence_length: 4,
                consistency_mode: ConsistencyMode::STC,
                input_channels: 2,
                encoder_widths: vec![16, 16, 12, 8, 8],
            },
            train_volumes: 4,
            test_volumes: 4,
            volume: SynthSpec {
                shape: [16, 64, 64],
                object_count: 5,
                radius_range: (4.0, 7.0),
                ..SynthSpec::default()
            },
            test_depth: None,
            blank_slice: None,
            learning_rate: 1e-3,
            epochs: 4,
            teacher_forced_epochs: 1,
            output_dir: PathBuf::from("runs/ablate"),
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.train_volumes == 0 || self.test_volumes == 0 {
            return bad("train_volumes and test_volumes must be at least 1".into());
        }
        if self.teacher_forced_epochs > self.epochs {
            return bad("teacher_forced_epochs exceeds epochs".into());
        }
        let depth = self.test_depth();
        if depth < 3 {
            return bad(format!(
                "test depth {depth} leaves no slice to blank between two others"
            ));
        }
        let blank = self.blank_slice();
        if blank == 0 || blank + 1 >= depth {
            return bad(format!(
                "blank_slice {blank} must have a neighbour on both sides in depth {depth}"
            ));
        }
        self.model.validate()?;
        if self.volume.object_count > self.model.objects_per_sequence {
            return bad(format!(
                "{} objects per volume exceed the model's {} slots",
                self.volume.object_count, self.model.objects_per_sequence
            ));
        }
        self.volume.validate()
    }

    pub fn test_depth(&self) -> usize {
        self.test_depth.unwrap_or(self.model.sequence_length)
    }

    pub fn blank_slice(&self) -> usize {
        self.blank_slice.unwrap_or(self.test_depth() / 2)
    }
}

/// Clean training volumes and blanked test volumes for one seed.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub train: Vec<(Volume, LabelMap)>,
    pub test: Vec<(Volume, LabelMap)>,
    pub blank_slice: usize,
}

fn volume_seed(seed: u64, split: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(split * 10_007 + index as u64)
}

pub fn benchmark(cfg: &AblationConfig, seed: u64) -> Result<Benchmark> {
    cfg.validate()?;
    let blank = cfg.blank_slice();
    let train = (0..cfg.train_volumes)
        .map(|i| {
            generate(&SynthSpec {
                seed: volume_seed(seed, 0, i),
                artifact_slices: Vec::new(),
                ..cfg.volume.clone()
            })
        })
        .collect::<Result<_>>()?;
    let [_, h, w] = cfg.volume.shape;
    let test = (0..cfg.test_volumes)
        .map(|i| {
            generate(&SynthSpec {
                shape: [cfg.test_depth(), h, w],
                seed: volume_seed(seed, 1, i),
                artifact_slices: vec![blank],
                ..cfg.volume.clone()
            })
        })
        .collect::<Result<_>>()?;
    Ok(Benchmark {
        train,
        test,
        blank_slice: blank,
    })
}

/// Predicted id covering the largest part of ground-truth object `id` on
/// slice `z`, if it covers at least half of it.
fn dominant_id(pred: &LabelMap, gt: &LabelMap, z: usize, id: u32) -> Option<u32> {
    let [_, h, w] = gt.shape();
    let range = z * h * w..(z + 1) * h * w;
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    let mut area = 0;
    for (&p, &g) in pred.data()[range.clone()].iter().zip(&gt.data()[range]) {
        if g == id {
            area += 1;
            if p != 0 {
                *counts.entry(p).or_default() += 1;
            }
        }
    }
    let (&best, &n) = counts.iter().max_by_key(|(&k, &n)| (n, std::cmp::Reverse(k)))?;
    (2 * n >= area).then_some(best)
}

/// `(preserved, total)` over ground-truth objects present on both slices
/// next to `blank`. An object is preserved when one predicted id covers at
/// least half of it on both sides.
pub fn identity_preservation(pred: &LabelMap, gt: &LabelMap, blank: usize) -> Result<(usize, usize)> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.shape(),
            gt.shape()
        )));
    }
    let depth = gt.shape()[0];
    if blank == 0 || blank + 1 >= depth {
        return Err(Error::Bounds(format!(
            "blank slice {blank} has no neighbours in depth {depth}"
        )));
    }
    let before = gt.slice(blank - 1)?.ids();
    let after = gt.slice(blank + 1)?.ids();
    let mut preserved = 0;
    let mut total = 0;
    for &id in before.intersection(&after).filter(|&&id| id != 0) {
        total += 1;
        let a = dominant_id(pred, gt, blank - 1, id);
        if a.is_some() && a == dominant_id(pred, gt, blank + 1, id) {
            preserved += 1;
        }
    }
    Ok((preserved, total))
}

/// Result of one (mode, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub mode: ConsistencyMode,
    pub seed: u64,
    /// Mean ARI over the test volumes.
    pub ari: f64,
    pub inference_seconds: f64,
    pub preserved: usize,
    pub objects: usize,
    pub train_steps: usize,
}

impl CellResult {
    pub fn identity_rate(&self) -> f64 {
        if self.objects == 0 {
            return 1.0;
        }
        self.preserved as f64 / self.objects as f64
    }
}

/// Trains and evaluates one cell.
pub fn run_cell(
    train: &TrainConfig,
    infer: &InferenceConfig,
    cfg: &AblationConfig,
    mode: ConsistencyMode,
    seed: u64,
) -> Result<CellResult> {
    let bench = benchmark(cfg, seed)?;
    let model = ModelConfig {
        consistency_mode: mode,
        ..cfg.model.clone()
    };
    let train_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        epochs: cfg.epochs,
        teacher_forced_epochs: cfg.teacher_forced_epochs,
        seed,
        dataset: Vec::new(),
        checkpoint_every: 0,
        validate_every: 0,
        output_dir: cfg.output_dir.join(format!("{mode}_seed{seed}")),
        ..train.clone()
    };
    let net = Network::new(model, seed)?;
    let mut trainer = Trainer::new(net, train_cfg, infer.clone(), bench.train, Vec::new())?;
    trainer.run()?;
    let train_steps = trainer.steps();
    let net = trainer.into_network();

    let mut ari = 0.0;
    let mut seconds = 0.0;
    let mut preserved = 0;
    let mut objects = 0;
    for (v, l) in &bench.test {
        let started = Instant::now();
        let pred = infer_volume(v, Some(&l.slice(0)?), &net, infer)?;
        seconds += started.elapsed().as_secs_f64();
        ari += adapted_rand_error(&pred.labels, l)?;
        let (p, n) = identity_preservation(&pred.labels, l, bench.blank_slice)?;
        preserved += p;
        objects += n;
    }
    let n = bench.test.len() as f64;
    Ok(CellResult {
        mode,
        seed,
        ari: ari / n,
        inference_seconds: seconds / n,
        preserved,
        objects,
        train_steps,
    })
}

/// Runs every (mode, seed) cell in order.
pub fn ablate(
    train: &TrainConfig,
    infer: &InferenceConfig,
    cfg: &AblationConfig,
    modes: &[ConsistencyMode],
    seeds: &[u64],
) -> Result<Vec<CellResult>> {
    if modes.is_empty() {
        return Err(Error::Usage("ablate needs at least one consistency mode".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Usage("ablate needs at least one seed".into()));
    }
    let mut out = Vec::with_capacity(modes.len() * seeds.len());
    for &mode in modes {
        for &seed in seeds {
            let cell =
                run_cell(train, infer, cfg, mode, seed).map_err(|e| e.context(format!("mode {mode}, seed {seed}")))?;
            log::info!(
                "{mode} seed {seed}: ari {:.4}, identity {}/{}",
                cell.ari,
                cell.preserved,
                cell.objects
            );
            out.push(cell);
        }
    }
    Ok(out)
}

/// One row of the report CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub mode: String,
    pub seed: u64,
    pub ari: f64,
    pub inference_seconds: f64,
}

impl From<&CellResult> for ReportRow {
    fn from(c: &CellResult) -> Self {
        ReportRow {
            mode: c.mode.to_string(),
            seed: c.seed,
            ari: c.ari,
            inference_seconds: c.inference_seconds,
        }
    }
}

fn encode_csv(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| Error::Encoding(e.to_string()))?;
    for r in rows {
        w.write_record(&r).map_err(|e| Error::Encoding(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Encoding(e.to_string()))
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let bytes = encode_csv(
        &REPORT_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.mode.clone(),
                r.seed.to_string(),
                r.ari.to_string(),
                r.inference_seconds.to_string(),
            ]
        }),
    )?;
    write_atomic(path, &bytes)
}

/// Per-cell identity counts next to the report.
pub fn write_identity(path: &Path, cells: &[CellResult]) -> Result<()> {
    let bytes = encode_csv(
        &["mode", "seed", "preserved", "objects", "train_steps"],
        cells.iter().map(|c| {
            vec![
                c.mode.to_string(),
                c.seed.to_string(),
                c.preserved.to_string(),
                c.objects.to_string(),
                c.train_steps.to_string(),
            ]
        }),
    )?;
    write_atomic(path, &bytes)
}

pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut index = [0usize; 4];
    for (slot, name) in index.iter_mut().zip(REPORT_COLUMNS) {
        *slot = header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })?;
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(index[i]).unwrap_or("");
        let number = |i: usize| -> Result<f64> {
            field(i).parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: {:?} is not a number", REPORT_COLUMNS[i], field(i)),
            })
        };
        let seed = field(1).parse::<u64>().map_err(|_| Error::Parse {
            line,
            message: format!("column `seed`: {:?} is not an unsigned integer", field(1)),
        })?;
        if field(0).is_empty() {
            return Err(Error::Parse {
                line,
                message: "column `mode` is empty".into(),
            });
        }
        rows.push(ReportRow {
            mode: field(0).to_string(),
            seed,
            ari: number(2)?,
            inference_seconds: number(3)?,
        });
    }
    Ok(rows)
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
    parse_report(&text)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => values[n / 2],
        _ => 0.5 * (values[n / 2 - 1] + values[n / 2]),
    }
}

/// Median of `value` per mode, modes in order of first appearance.
pub fn medians_by_mode(rows: &[ReportRow], value: impl Fn(&ReportRow) -> f64) -> Vec<(String, f64)> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(r.mode.as_str()) {
            order.push(r.mode.clone());
        }
        groups.entry(&r.mode).or_default().push(value(r));
    }
    order
        .into_iter()
        .map(|m| {
            let v = median(groups.get_mut(m.as_str()).expect("grouped"));
            (m, v)
        })
        .collect()
}

fn reference_for(mode: &str) -> Option<f64> {
    let mode: ConsistencyMode = mode.parse().ok()?;
    REFERENCE_ARI.iter().find(|(m, _)| *m == mode).map(|&(_, v)| v)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bar chart of one value per mode; `reference` adds the published ARI as a
/// dashed tick and label above each known mode.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)], reference: bool) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const LEFT: f64 = 64.0;
    const RIGHT: f64 = 16.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 48.0;
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let mut top = bars
        .iter()
        .map(|b| b.1)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    if reference {
        for (m, _) in bars {
            top = top.max(reference_for(m).unwrap_or(0.0));
        }
    }
    let top = if top > 0.0 { top * 1.15 } else { 1.0 };
    let y = |v: f64| TOP + plot_h * (1.0 - (v / top).clamp(0.0, 1.0));
    let slot = plot_w / bars.len().max(1) as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.1}" stroke="black"/><line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
        TOP + plot_h,
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h
    );
    for i in 0..=4 {
        let v = top * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(y_label)
    );
    for (i, (mode, v)) in bars.iter().enumerate() {
        let x = LEFT + slot * i as f64 + slot * 0.2;
        let bw = slot * 0.6;
        let v = if v.is_finite() { *v } else { 0.0 };
        let _ = writeln!(
            s,
            r##"<rect x="{x:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="#4a7ab5"/>"##,
            y(v),
            TOP + plot_h - y(v)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.4}</text>"#,
            x + bw / 2.0,
            y(v) - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x + bw / 2.0,
            TOP + plot_h + 18.0,
            escape(mode)
        );
        if let Some(r) = reference.then(|| reference_for(mode)).flatten() {
            let _ = writeln!(
                s,
                r##"<line x1="{x:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#c0392b" stroke-dasharray="4 3"/>"##,
                y(r),
                x + bw,
                y(r)
            );
            let _ = writeln!(
                s,
                r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="#c0392b">ref {r}</text>"##,
                x + bw / 2.0,
                TOP + plot_h + 34.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `ari_by_mode.svg` and `inference_seconds_by_mode.svg` into
/// `out_dir` and returns their paths.
pub fn plot(rows: &[ReportRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "report has no rows".into(),
        });
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::storage(out_dir, e))?;
    let charts = [
        (
            "ari_by_mode.svg",
            bar_chart(
                "Median ARI per consistency mode",
                "ARI",
                &medians_by_mode(rows, |r| r.ari),
                true,
            ),
        ),
        (
            "inference_seconds_by_mode.svg",
            bar_chart(
                "Median inference time per volume",
                "seconds",
                &medians_by_mode(rows, |r| r.inference_seconds),
                false,
            ),
        ),
    ];
    let mut out = Vec::new();
    for (name, svg) in charts {
        let path = out_dir.join(name);
        write_atomic(&path, svg.as_bytes())?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "mode,seed,ari,inference_seconds\nST,0,0.2,1.5\nSTC,0,0.05,2.0\nST,1,0.1,1.0\n";

    #[test]
    fn parse_and_medians() {
        let rows = parse_report(CSV).unwrap();
        assert_eq!(rows.len(), 3);
        let m = medians_by_mode(&rows, |r| r.ari);
        assert_eq!(m[0].0, "ST");
        assert!((m[0].1 - 0.15).abs() < 1e-12);
        assert_eq!(m[1], ("STC".to_string(), 0.05));
    }

    #[test]
    fn missing_column_named() {
        let err = parse_report("mode,seed,inference_seconds\nST,0,1\n").unwrap_err();
        assert!(
            matches!(&err, Error::Parse { line: 1, message } if message.contains("`ari`")),
            "{err}"
        );
    }

    #[test]
    fn bad_value_reports_line() {
        let err = parse_report("mode,seed,ari,inference_seconds\nST,0,0.1,1\nST,1,oops,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse_report("mode,seed,ari,inference_seconds\nST,0,0.1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn chart_is_deterministic_and_annotated() {
        let rows = parse_report(CSV).unwrap();
        let a = bar_chart("t", "ARI", &medians_by_mode(&rows, |r| r.ari), true);
        let b = bar_chart("t", "ARI", &medians_by_mode(&rows, |r| r.ari), true);
        assert_eq!(a, b);
        assert!(a.contains("ref 0.13") && a.contains("ref 0.035"));
        assert_eq!(a.matches("<rect").count(), 3);
    }

    #[test]
    fn identity_counts() {
        let gt = LabelMap::new([3, 1, 4], vec![1, 1, 2, 2, 0, 0, 0, 0, 1, 1, 2, 2]).unwrap();
        let same = LabelMap::new([3, 1, 4], vec![7, 7, 9, 9, 0, 0, 0, 0, 7, 7, 9, 9]).unwrap();
        assert_eq!(identity_preservation(&same, &gt, 1).unwrap(), (2, 2));
        let swapped = LabelMap::new([3, 1, 4], vec![7, 7, 9, 9, 0, 0, 0, 0, 9, 9, 7, 0]).unwrap();
        assert_eq!(identity_preservation(&swapped, &gt, 1).unwrap(), (0, 2));
        let lost = LabelMap::new([3, 1, 4], vec![7, 7, 9, 9, 0, 0, 0, 0, 7, 0, 0, 0]).unwrap();
        assert_eq!(identity_preservation(&lost, &gt, 1).unwrap(), (1, 2));
        assert!(identity_preservation(&same, &gt, 0).is_err());
    }

    #[test]
    fn empty_modes_is_usage_error() {
        let c = AblationConfig::default();
        let err = ablate(&TrainConfig::default(), &InferenceConfig::default(), &c, &[], &[0]);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn benchmark_blanks_test_only() {
        let c = AblationConfig {
            train_volumes: 1,
            test_volumes: 1,
            volume: SynthSpec {
                shape: [5, 48, 48],
                object_count: 2,
                ..SynthSpec::default()
            },
            ..AblationConfig::default()
        };
        let b = benchmark(&c, 3).unwrap();
        assert_eq!(b.blank_slice, 2);
        assert!(b.test[0].0.slice(2).unwrap().data.iter().all(|&v| v == 0.0));
        assert!(b.train[0].0.slice(2).unwrap().data.iter().any(|&v| v != 0.0));
    }
}
