//! Shared helpers: a synthetic dataset with the reference codebook's 124
//! columns, and runners for the library entry point and the binary.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use mortality_cli::{run, Cli};
use mortality_core::rng::{self, SeededRng};
use mortality_core::tabular::{load_schema, ColumnKind};
use rand_core::Rng;

pub fn schema_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema/mi_complications.schema")
}

/// Reference data location: `$MI_DATA`, else `data/mi.csv` in the workspace.
pub fn reference_data() -> Option<PathBuf> {
    let path = std::env::var_os("MI_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mi.csv"));
    path.is_file().then_some(path)
}

fn unit(r: &mut SeededRng) -> f64 {
    (r.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Roughly standard normal (Irwin–Hall with 12 terms).
fn normal(r: &mut SeededRng) -> f64 {
    (0..12).map(|_| unit(r)).sum::<f64>() - 6.0
}

fn fmt(x: f64) -> String {
    let s = format!("{x:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// CSV text with the codebook's header, `?` for missing cells and a lethal
/// outcome driven by a latent risk that also lowers systolic pressure and
/// lengthens the attack-to-admission time. Column index decides which
/// columns are sparse or dominated, so cleaning has work to do.
pub fn synthetic_csv(n: usize, seed: u64) -> String {
    let schema = load_schema(schema_path()).unwrap();
    let mut r = rng::substream(seed, "synthetic");
    let mut out = schema.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(",");
    out.push('\n');
    for i in 0..n {
        let risk = normal(&mut r);
        let mut cells = Vec::with_capacity(schema.len());
        for (c, col) in schema.iter().enumerate() {
            let u = unit(&mut r);
            let noise = normal(&mut r);
            let missing_rate = match col.name.as_str() {
                "S_AD_ORIT" | "D_AD_ORIT" => 0.16,
                "S_AD_KBRIG" | "D_AD_KBRIG" => 0.6,
                "KFK_BLOOD" => 0.99,
                "AGE" | "ID" => 0.0,
                _ if col.kind == ColumnKind::Target => 0.0,
                _ if c % 9 == 0 => 0.2,
                _ => 0.03,
            };
            if u < missing_rate {
                cells.push("?".to_string());
                continue;
            }
            let cell = match (col.kind, col.name.as_str()) {
                (ColumnKind::Id, _) => (i + 1).to_string(),
                (_, "AGE") => fmt((63.0 + 4.0 * risk + 9.0 * noise).round().clamp(26.0, 92.0)),
                (_, "S_AD_ORIT") | (_, "S_AD_KBRIG") => fmt(((130.0 - 22.0 * risk + 12.0 * noise) / 10.0).round() * 10.0),
                (_, "D_AD_ORIT") | (_, "D_AD_KBRIG") => fmt(((80.0 - 8.0 * risk + 10.0 * noise) / 10.0).round() * 10.0),
                (_, "TIME_B_S") => {
                    let rank = (3.5 + 1.8 * risk + 1.5 * noise).round().clamp(0.0, 8.0) as usize;
                    col.ordinal_order.as_ref().unwrap()[rank].clone()
                }
                (_, "LET_IS") => {
                    let p = 1.0 / (1.0 + (-(2.2 * risk - 2.6)).exp());
                    if unit(&mut r) < p {
                        (1 + rng::below(&mut r, 7)).to_string()
                    } else {
                        "0".to_string()
                    }
                }
                (ColumnKind::Target, _) => u8::from(unit(&mut r) < 0.1).to_string(),
                (ColumnKind::Numeric, _) => fmt(5.0 + 2.0 * noise + 0.3 * risk),
                (ColumnKind::Binary, _) => {
                    let p = if c % 4 == 0 { 0.02 } else { 0.25 + 0.05 * (c % 5) as f64 };
                    u8::from(unit(&mut r) < p + 0.05 * risk.clamp(-1.0, 1.0)).to_string()
                }
                (ColumnKind::CategoricalOrdinal, _) => {
                    let order = col.ordinal_order.as_ref().unwrap();
                    let rank = if c % 5 == 0 {
                        usize::from(unit(&mut r) < 0.02)
                    } else {
                        rng::below(&mut r, order.len() as u64) as usize
                    };
                    order[rank].clone()
                }
                (ColumnKind::CategoricalNominal, _) => rng::below(&mut r, 5).to_string(),
            };
            cells.push(cell);
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Writes a synthetic dataset into `dir` and returns its path.
pub fn write_synthetic(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let path = dir.join("mi.csv");
    std::fs::write(&path, synthetic_csv(n, seed)).unwrap();
    path
}

/// Runs the CLI in-process.
pub fn run_args(args: &[&str]) -> mortality_core::Result<Vec<String>> {
    let mut full = vec!["mortality"];
    full.extend_from_slice(args);
    run(&Cli::parse_from(full))
}

/// Runs the compiled binary and returns (exit code, stderr).
pub fn run_binary(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mortality")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stderr).into_owned())
}

/// Common flags pointing at `data` and writing into `out`.
pub fn base_args<'a>(data: &'a str, out: &'a str, schema: &'a str) -> Vec<&'a str> {
    vec!["--data", data, "--schema", schema, "--out", out]
}
