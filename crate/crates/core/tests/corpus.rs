//! Replays the checked-in fuzz seeds. Every seed is a valid input, so each
//! one must decode and survive the same round trip the fuzz target checks.

use std::path::PathBuf;

use crowdfc::config::RunConfig;
use crowdfc::density::io::{decode_cdmp, encode_cdmp};
use crowdfc::model::{decode_checkpoint, encode_checkpoint};
use crowdfc::simdata::{format_trajectories, parse_trajectories};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn cdmp_seeds_reencode_exactly() {
    for (name, bytes) in seeds("decode_cdmp") {
        let seq = decode_cdmp(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode_cdmp(&seq), bytes, "{name}");
    }
}

#[test]
fn trajectory_seeds_reparse() {
    for (name, bytes) in seeds("parse_trajectories") {
        let ds = parse_trajectories(std::str::from_utf8(&bytes).unwrap())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(!ds.is_empty(), "{name}");
        assert_eq!(
            parse_trajectories(&format_trajectories(&ds)).unwrap(),
            ds,
            "{name}"
        );
    }
}

#[test]
fn checkpoint_seeds_reencode_exactly() {
    for (name, bytes) in seeds("decode_checkpoint") {
        let state = decode_checkpoint(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(encode_checkpoint(&state), bytes, "{name}");
    }
}

#[test]
fn config_seeds_roundtrip() {
    for (name, bytes) in seeds("run_config") {
        let cfg = RunConfig::from_toml_str(std::str::from_utf8(&bytes).unwrap())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(
            RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(),
            cfg,
            "{name}"
        );
    }
}
