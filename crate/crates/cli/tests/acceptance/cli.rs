//! Every command twice with different worker counts must give byte-identical
//! trees; point and label files must survive a read/write cycle bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use modal_panoptic::io::{pack_label, read_labels, read_points, unpack_label, write_labels, write_points, MAX_LABEL_INSTANCE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Verdict;

const BIN: &str = env!("CARGO_BIN_EXE_modal-panoptic");

fn cli(jobs: usize, config: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN)
        .arg("--jobs")
        .arg(jobs.to_string())
        .arg("--config")
        .arg(config)
        .args(args)
        .env_remove("MODAL_PANOPTIC_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn pipeline(root: &Path, jobs: usize, config: &Path) -> Result<(), String> {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--seed".into(), "3".into(), "--sequences".into(), "3".into(), "--sweeps".into(), "4".into(), "--out".into(), p("data")],
        vec!["targets".into(), "--data".into(), p("data"), "--strategy".into(), "cwm".into(), "--out".into(), p("targets")],
        vec!["train-mem".into(), "--data".into(), p("data"), "--out".into(), p("model")],
        vec!["infer".into(), "--data".into(), p("data"), "--membership".into(), "mlp".into(), "--model".into(), p("model/model.ckpt"), "--out".into(), p("infer-mlp")],
        vec!["infer".into(), "--data".into(), p("data"), "--strategy".into(), "sw".into(), "--membership".into(), "nn".into(), "--out".into(), p("infer-nn")],
        vec!["track".into(), "--pred".into(), p("infer-nn"), "--out".into(), p("track")],
        vec!["eval".into(), "--gt".into(), p("data"), "--pred".into(), p("track"), "--out".into(), p("eval-nn")],
        vec!["eval".into(), "--gt".into(), p("data"), "--pred".into(), p("infer-mlp"), "--out".into(), p("eval-mlp")],
        vec!["report".into(), "--run".into(), format!("nn={}", p("eval-nn")), "--run".into(), format!("mlp={}", p("eval-mlp")), "--out".into(), p("report")],
    ];
    for s in steps {
        let args: Vec<&str> = s.iter().map(String::as_str).collect();
        cli(jobs, config, &args)?;
    }
    Ok(())
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).expect("read dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).expect("prefix").to_path_buf();
                out.insert(rel, fs::read(&path).expect("read"));
            }
        }
    }
    out
}

/// Re-encodes every `.bin` and `.label` file and compares bytes.
fn round_trip_files(files: &BTreeMap<PathBuf, Vec<u8>>, root: &Path, scratch: &Path) -> Result<usize, String> {
    let mut n = 0;
    for (rel, bytes) in files {
        let copy = scratch.join("copy");
        match rel.extension().and_then(|e| e.to_str()) {
            Some("bin") if rel.components().any(|c| c.as_os_str() == "velodyne") => {
                let pts = read_points(&root.join(rel)).map_err(|e| e.to_string())?;
                write_points(&copy, &pts).map_err(|e| e.to_string())?;
            }
            Some("label") => {
                let (sem, inst) = read_labels(&root.join(rel)).map_err(|e| e.to_string())?;
                write_labels(&copy, &sem, &inst).map_err(|e| e.to_string())?;
            }
            _ => continue,
        }
        if fs::read(&copy).map_err(|e| e.to_string())? != *bytes {
            return Err(format!("{} changed on re-encoding", rel.display()));
        }
        n += 1;
    }
    Ok(n)
}

/// Random finite f32 patterns (subnormals, signed zeros, extremes) and random
/// label words.
fn round_trip_random(scratch: &Path) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut raw = Vec::new();
    let specials = [0.0f32, -0.0, f32::MIN_POSITIVE, 1e-45, -1e-45, f32::MAX, f32::MIN, 0.1];
    for i in 0..4000 {
        let v = if i % 5 == 0 {
            specials[rng.random_range(0..specials.len())]
        } else {
            loop {
                let v = f32::from_bits(rng.random());
                if v.is_finite() {
                    break v;
                }
            }
        };
        raw.extend_from_slice(&v.to_le_bytes());
    }
    let (bin, copy) = (scratch.join("r.bin"), scratch.join("r2.bin"));
    fs::write(&bin, &raw).map_err(|e| e.to_string())?;
    let pts = read_points(&bin).map_err(|e| e.to_string())?;
    write_points(&copy, &pts).map_err(|e| e.to_string())?;
    if fs::read(&copy).map_err(|e| e.to_string())? != raw {
        return Err("random point file changed on re-encoding".into());
    }

    let words: Vec<u32> = (0..5000).map(|_| rng.random()).collect();
    for &w in &words {
        if unpack_label(w) != ((w & 0xFFFF) as u16, w >> 16) {
            return Err(format!("label word {w:#010x} split wrongly"));
        }
        let (s, i) = unpack_label(w);
        if pack_label(s, i).map_err(|e| e.to_string())? != w {
            return Err(format!("label word {w:#010x} does not repack"));
        }
    }
    if pack_label(1, MAX_LABEL_INSTANCE + 1).is_ok() {
        return Err("instance id above 16 bits accepted".into());
    }
    let raw: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
    let (lab, copy) = (scratch.join("r.label"), scratch.join("r2.label"));
    fs::write(&lab, &raw).map_err(|e| e.to_string())?;
    let (sem, inst) = read_labels(&lab).map_err(|e| e.to_string())?;
    write_labels(&copy, &sem, &inst).map_err(|e| e.to_string())?;
    if fs::read(&copy).map_err(|e| e.to_string())? != raw {
        return Err("random label file changed on re-encoding".into());
    }
    Ok(())
}

fn run_inner() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("run.cfg");
    fs::write(&config, "seed = 11\ntrain.epochs = 2\nscene.density = 20\n").map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&a, 1, &config)?;
    pipeline(&b, 3, &config)?;
    let (ta, tb) = (tree(&a), tree(&b));
    if ta.keys().ne(tb.keys()) {
        return Err("output trees list different files".into());
    }
    if let Some((rel, _)) = ta.iter().find(|(k, v)| tb[*k] != **v) {
        return Err(format!("{} differs between --jobs 1 and --jobs 3", rel.display()));
    }
    let encoded = round_trip_files(&ta, &a, dir.path())?;
    round_trip_random(dir.path())?;
    Ok(format!(
        "{} files identical across --jobs 1 and 3 for all seven commands; {encoded} point/label files and random patterns re-encode bit-exactly; label bit split checked",
        ta.len()
    ))
}

pub fn run() -> Verdict {
    match run_inner() {
        Ok(d) => Verdict::new(true, d),
        Err(e) => Verdict::new(false, e),
    }
}
