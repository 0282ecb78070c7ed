//! Table-style reports over IRB run logs: CSV, aligned text and a bar plot.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use crate::datamodel::ClassSet;
use crate::error::{Error, Result};
use crate::irb::IrbRunState;
use crate::metrics;

/// Round to the printed precision (three decimals on the percent scale).
fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// One printed row. Percent values are already rounded to three decimals.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub iteration: usize,
    pub label: String,
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean of the printed per-class values.
    pub miou: f64,
    pub macc: f64,
    /// Relative change of mIoU against the run's first iteration, percent.
    pub improvement: f64,
    pub best: bool,
}

pub fn build_rows(logs: &[IrbRunState]) -> Result<(ClassSet, Vec<ReportRow>)> {
    let first = logs
        .first()
        .ok_or_else(|| Error::Report("no run logs given".into()))?;
    if let Some(other) = logs.iter().find(|l| l.class_set != first.class_set) {
        return Err(Error::Report(format!(
            "run `{}` uses a different class set than `{}`",
            other.name, first.name
        )));
    }
    let mut rows = Vec::new();
    for log in logs {
        let Some(baseline) = log.iterations.first() else {
            continue;
        };
        for it in &log.iterations {
            let per_class: Vec<Option<f64>> = it
                .report
                .per_class_iou
                .iter()
                .map(|v| v.map(|x| round3(100.0 * x)))
                .collect();
            let miou = round3(metrics::mean_iou(&per_class)?);
            rows.push(ReportRow {
                run: log.name.clone(),
                iteration: it.index,
                label: it.allocation.label.clone(),
                per_class_iou: per_class,
                miou,
                macc: round3(100.0 * it.report.macc),
                improvement: round3(metrics::relative_improvement(it.report.miou, baseline.report.miou)?),
                best: log.best == Some(it.index),
            });
        }
    }
    Ok((first.class_set.clone(), rows))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

pub fn render_csv(class_set: &ClassSet, rows: &[ReportRow]) -> String {
    let mut out = String::from("run,iteration,label");
    for e in class_set.entries() {
        write!(out, ",{}", e.name).unwrap();
    }
    out.push_str(",mIoU,mAcc,improvement_pct,best\n");
    for r in rows {
        write!(out, "{},{},{}", r.run, r.iteration, r.label).unwrap();
        for v in &r.per_class_iou {
            write!(out, ",{}", v.map_or_else(String::new, |x| format!("{x:.3}"))).unwrap();
        }
        writeln!(
            out,
            ",{:.3},{:.3},{:.3},{}",
            r.miou,
            r.macc,
            r.improvement,
            u8::from(r.best)
        )
        .unwrap();
    }
    out
}

pub fn render_text(class_set: &ClassSet, rows: &[ReportRow]) -> String {
    let mut header = vec!["Run".to_string(), "TS".to_string()];
    header.extend(class_set.entries().iter().map(|e| e.name.clone()));
    header.extend(["mIoU", "mAcc", "Δ mIoU %", ""].map(String::from));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut line = vec![r.run.clone(), r.label.clone()];
            line.extend(r.per_class_iou.iter().map(|v| cell(*v)));
            line.push(format!("{:.3}", r.miou));
            line.push(format!("{:.3}", r.macc));
            line.push(format!("{:+.3}", r.improvement));
            line.push(if r.best { "best".into() } else { String::new() });
            line
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            std::iter::once(&header)
                .chain(&body)
                .map(|l| l[c].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let fmt_line = |line: &[String]| -> String {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (s, &w))| {
                let pad = w - s.chars().count();
                if i < 2 {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        cells.join("  ").trim_end().to_string()
    };
    let mut out = fmt_line(&header);
    out.push('\n');
    let rule_len = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(rule_len));
    out.push('\n');
    for line in &body {
        out.push_str(&fmt_line(line));
        out.push('\n');
    }
    out
}

const CLASS_COLORS: [[u8; 3]; 6] = [
    [128, 128, 128],
    [214, 39, 40],
    [44, 160, 44],
    [31, 119, 180],
    [255, 127, 14],
    [148, 103, 189],
];

/// Grouped bars of per-class IoU, one group per row; best rows get a black tick on top.
pub fn render_plot(class_set: &ClassSet, rows: &[ReportRow]) -> RgbImage {
    let (bar, gap, margin, plot_h) = (6u32, 10u32, 12u32, 200u32);
    let k = class_set.len() as u32;
    let group = k * bar + gap;
    let width = 2 * margin + group * rows.len().max(1) as u32;
    let height = plot_h + 2 * margin;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let baseline = margin + plot_h;
    for q in 0..=4 {
        let y = baseline - q * plot_h / 4;
        for x in margin / 2..width - margin / 2 {
            img.put_pixel(x, y, Rgb(if q == 0 { [0, 0, 0] } else { [220, 220, 220] }));
        }
    }
    for (g, row) in rows.iter().enumerate() {
        let x0 = margin + gap / 2 + g as u32 * group;
        for (c, v) in row.per_class_iou.iter().enumerate() {
            let Some(v) = v else { continue };
            let bar_h = ((v / 100.0).clamp(0.0, 1.0) * f64::from(plot_h)).round() as u32;
            let color = Rgb(CLASS_COLORS[c % CLASS_COLORS.len()]);
            for x in x0 + c as u32 * bar..x0 + (c as u32 + 1) * bar - 1 {
                for y in baseline - bar_h..baseline {
                    img.put_pixel(x, y, color);
                }
            }
        }
        if row.best {
            for x in x0..x0 + k * bar {
                for y in margin / 4..margin / 2 {
                    img.put_pixel(x, y, Rgb([0, 0, 0]));
                }
            }
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub text: PathBuf,
    pub plot: PathBuf,
}

/// Writes `<prefix>.csv`, `<prefix>.txt` and `<prefix>_iou.png`.
pub fn emit_report(logs: &[IrbRunState], prefix: &Path) -> Result<ReportFiles> {
    let (class_set, rows) = build_rows(logs)?;
    let with_ext = |suffix: &str| {
        let mut name = prefix.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "report".into());
        name.push(suffix);
        prefix.with_file_name(name)
    };
    let files = ReportFiles {
        csv: with_ext(".csv"),
        text: with_ext(".txt"),
        plot: with_ext("_iou.png"),
    };
    crate::util::ensure_parent(&files.csv)?;
    std::fs::write(&files.csv, render_csv(&class_set, &rows)).map_err(|e| Error::io(&files.csv, e))?;
    std::fs::write(&files.text, render_text(&class_set, &rows)).map_err(|e| Error::io(&files.text, e))?;
    crate::util::write_png(&files.plot, &render_plot(&class_set, &rows))?;
    Ok(files)
}
