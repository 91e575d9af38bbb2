use std::fs;
use std::path::PathBuf;

use basket_core::config::{load_run, RunConfig};
use basket_core::output::{read_cutoffs, Provenance};

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let s = fs::read_to_string(&p).unwrap();
            (p, s)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn config_seeds_resolve_and_round_trip() {
    for (p, src) in seeds("config_toml") {
        let run = load_run(&src).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        let again = load_run(&run.effective_toml().unwrap()).unwrap();
        assert_eq!(again.effective_toml().unwrap(), run.effective_toml().unwrap());
    }
}

#[test]
fn cutoff_seeds_parse() {
    for (p, src) in seeds("cutoffs_csv") {
        let sets = read_cutoffs(src.as_bytes()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(!sets.is_empty());
    }
}

#[test]
fn scenario_list_seeds_resolve() {
    for (p, list) in seeds("scenario_list") {
        let src = format!("preset = \"paper_4plus1\"\n[calibration]\nmethod = \"rcap\"\nscenarios = {list}\n");
        let run = load_run(&src).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(!run.calibration.unwrap().scenarios.is_empty());
    }
}

#[test]
fn provenance_seeds_parse_and_rebuild_the_config() {
    for (p, src) in seeds("provenance_json") {
        let prov = Provenance::from_json(&src).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert!(!prov.calibrations.is_empty());
        RunConfig::from_provenance(&src).unwrap();
    }
}
