use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use modal_panoptic::Error;

use crate::common::{read_text, write_text};
use crate::GlobalArgs;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `name=eval_dir`, once per compared run (strategy, membership, ...).
    #[arg(long = "run", value_parser = parse_run, required = true)]
    runs: Vec<(String, PathBuf)>,
    /// Directory for report.md and report.svg.
    #[arg(long)]
    out: PathBuf,
}

fn parse_run(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_string(), PathBuf::from(p))),
        _ => Err(format!("expected NAME=DIR, got `{s}`")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_dagger: f64,
    pub lstq: f64,
    pub miou: f64,
    pub membership: Option<f64>,
}

fn csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_text(path)?
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn field(rows: &[Vec<String>], key: &str, col: usize, path: &Path) -> Result<f64> {
    let bad = |m: &str| Error::Parse {
        location: path.display().to_string(),
        message: m.to_string(),
    };
    let row = rows
        .iter()
        .find(|r| r.first().map(String::as_str) == Some(key))
        .ok_or_else(|| bad(&format!("no `{key}` row")))?;
    let v = row.get(col).ok_or_else(|| bad(&format!("`{key}` row too short")))?;
    Ok(v.parse::<f64>().map_err(|e| bad(&format!("`{key}`: {e}")))?)
}

pub fn load_summary(name: &str, dir: &Path) -> Result<RunSummary> {
    let pq_path = dir.join("pq.csv");
    let pq = csv_rows(&pq_path)?;
    let lstq_path = dir.join("lstq.csv");
    let lstq = csv_rows(&lstq_path)?;
    let lstq_v = lstq
        .first()
        .and_then(|r| r.get(2))
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| Error::Parse {
            location: lstq_path.display().to_string(),
            message: "expected `s_assoc,s_cls,lstq` values".into(),
        })?;
    let miou_path = dir.join("miou.csv");
    let miou = field(&csv_rows(&miou_path)?, "mean", 1, &miou_path)?;
    let mem_path = dir.join("membership.csv");
    let membership = if mem_path.exists() {
        let rows = csv_rows(&mem_path)?;
        rows.first().and_then(|r| r.get(2)).and_then(|v| v.parse::<f64>().ok())
    } else {
        None
    };
    Ok(RunSummary {
        name: name.to_string(),
        pq: field(&pq, "all", 1, &pq_path)?,
        sq: field(&pq, "all", 2, &pq_path)?,
        rq: field(&pq, "all", 3, &pq_path)?,
        pq_dagger: field(&pq, "pq_dagger", 1, &pq_path)?,
        lstq: lstq_v,
        miou,
        membership,
    })
}

pub fn markdown(runs: &[RunSummary]) -> String {
    let mut s = String::from("| run | PQ | SQ | RQ | PQ† | LSTQ | mIoU | membership acc |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for r in runs {
        let mem = r.membership.map_or("n/a".to_string(), |m| format!("{:.2}", 100.0 * m));
        let _ = writeln!(
            s,
            "| {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {mem} |",
            r.name,
            100.0 * r.pq,
            100.0 * r.sq,
            100.0 * r.rq,
            100.0 * r.pq_dagger,
            100.0 * r.lstq,
            100.0 * r.miou
        );
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bars of PQ and membership accuracy (when known) per run.
pub fn svg(runs: &[RunSummary]) -> String {
    const BAR: f64 = 28.0;
    const GAP: f64 = 24.0;
    const H: f64 = 200.0;
    const LEFT: f64 = 40.0;
    let group = 2.0 * BAR + GAP;
    let width = LEFT + group * runs.len() as f64 + GAP;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{:.0}" font-family="sans-serif" font-size="11">"#,
        H + 60.0
    );
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{}" x2="{width:.0}" y2="{}" stroke="black"/>"#, H + 20.0, H + 20.0);
    for tick in [0, 25, 50, 75, 100] {
        let y = H + 20.0 - H * tick as f64 / 100.0;
        let _ = writeln!(s, r#"<text x="{}" y="{y:.1}" text-anchor="end">{tick}</text>"#, LEFT - 4.0);
    }
    for (i, r) in runs.iter().enumerate() {
        let x0 = LEFT + GAP + group * i as f64;
        for (j, (v, color)) in [(Some(r.pq), "#4a7ab7"), (r.membership, "#e08a2c")].into_iter().enumerate() {
            if let Some(v) = v {
                let h = H * v.clamp(0.0, 1.0);
                let x = x0 + BAR * j as f64;
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.1}" y="{:.1}" width="{BAR}" height="{h:.1}" fill="{color}"/>"#,
                    H + 20.0 - h
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.1}</text>"#,
                    x + BAR / 2.0,
                    H + 16.0 - h,
                    100.0 * v
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x0 + BAR,
            H + 36.0,
            escape(&r.name)
        );
    }
    let _ = writeln!(s, r##"<rect x="{LEFT}" y="{}" width="10" height="10" fill="#4a7ab7"/><text x="{}" y="{}">PQ</text>"##, H + 44.0, LEFT + 14.0, H + 53.0);
    let _ = writeln!(
        s,
        r##"<rect x="{}" y="{}" width="10" height="10" fill="#e08a2c"/><text x="{}" y="{}">membership accuracy</text>"##,
        LEFT + 50.0,
        H + 44.0,
        LEFT + 64.0,
        H + 53.0
    );
    s.push_str("</svg>\n");
    s
}

pub fn run(_global: &GlobalArgs, args: ReportArgs) -> Result<()> {
    let runs = args
        .runs
        .iter()
        .map(|(n, d)| load_summary(n, d))
        .collect::<Result<Vec<_>>>()?;
    let table = markdown(&runs);
    write_text(&args.out.join("report.md"), &table)?;
    write_text(&args.out.join("report.svg"), &svg(&runs))?;
    print!("{table}");
    Ok(())
}
