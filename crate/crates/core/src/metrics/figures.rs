use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::MetricsReport;

const W: f64 = 480.0;
const H: f64 = 240.0;
const PAD: f64 = 36.0;

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{PAD}\" y=\"16\" font-size=\"13\">{}</text>\n\
         <line x1=\"{PAD}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <text x=\"4\" y=\"{ytop}\">1.0</text><text x=\"4\" y=\"{y0}\">0.0</text>\n",
        escape(title),
        y0 = H - PAD,
        x1 = W - PAD / 2.0,
        ytop = PAD + 4.0,
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn y_of(v: f64) -> f64 {
    (H - PAD) - v.clamp(0.0, 1.0) * (H - 2.0 * PAD)
}

/// Bar chart of values in [0, 1]; `None` bars are left empty.
pub fn bar_chart_svg(title: &str, bars: &[(String, Option<f64>)]) -> String {
    let mut s = svg_open(title);
    let slot = (W - 1.5 * PAD) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = PAD + i as f64 * slot;
        if let Some(v) = v {
            let y = y_of(*v);
            let _ = writeln!(
                s,
                "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#4a78b5\"/>",
                x + slot * 0.15,
                slot * 0.7,
                (H - PAD) - y
            );
        }
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            x + slot / 2.0,
            H - PAD + 14.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// One polyline per series of (x, y) points with y in [0, 1].
pub fn line_chart_svg(title: &str, series: &[Vec<(usize, f64)>]) -> String {
    let mut s = svg_open(title);
    let max_x = series
        .iter()
        .flat_map(|p| p.iter().map(|(x, _)| *x))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    for points in series {
        let coords: Vec<String> = points
            .iter()
            .map(|(x, y)| format!("{:.1},{:.1}", PAD + (*x as f64 / max_x) * (W - 1.5 * PAD), y_of(*y)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#b5564a\" stroke-opacity=\"0.5\"/>",
            coords.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes per-environment CSV tables and SVG charts into `dir`.
pub fn write_figures(report: &MetricsReport, dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for (env, m) in &report.envs {
        if let Some(stages) = &m.revision_ratio_by_stage {
            let mut csv = String::from("stage,ratio\n");
            for st in stages {
                let _ = writeln!(csv, "{},{}", st.stage, opt(st.ratio));
            }
            fs::write(dir.join(format!("{env}_revision_ratio.csv")), csv)?;
            let bars: Vec<_> = stages.iter().map(|st| (st.stage.to_string(), st.ratio)).collect();
            fs::write(
                dir.join(format!("{env}_revision_ratio.svg")),
                bar_chart_svg(&format!("{env}: revision ratio by stage"), &bars),
            )?;
        }
        if let Some(buckets) = &m.difficulty_buckets {
            let mut csv = String::from("bucket,avg_score,n\n");
            for b in buckets {
                let _ = writeln!(csv, "{},{},{}", b.bucket, opt(b.avg_score), b.tasks);
            }
            fs::write(dir.join(format!("{env}_difficulty.csv")), csv)?;
            let bars: Vec<_> = buckets.iter().map(|b| (b.bucket.to_string(), b.avg_score)).collect();
            fs::write(
                dir.join(format!("{env}_difficulty.svg")),
                bar_chart_svg(&format!("{env}: average score by difficulty"), &bars),
            )?;
        }
        let mut csv = String::from("step,score,task_id\n");
        for entry in &m.series {
            for (step, score) in &entry.points {
                let _ = writeln!(csv, "{step},{score},{}", entry.task_id);
            }
        }
        fs::write(dir.join(format!("{env}_series.csv")), csv)?;
        let lines: Vec<_> = m.series.iter().map(|e| e.points.clone()).collect();
        fs::write(
            dir.join(format!("{env}_series.svg")),
            line_chart_svg(&format!("{env}: cumulative score"), &lines),
        )?;
    }
    Ok(())
}
