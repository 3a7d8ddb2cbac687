//! Validates the checked-in fuzz corpus: every seed must be handled
//! without faulting, and the well-formed seeds must actually parse, so the
//! corpus stays in sync with the formats.

use std::path::PathBuf;

fn corpus(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut seeds = Vec::new();
    for entry in std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("corpus dir {} must exist: {e}", dir.display()))
    {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        seeds.push((name, std::fs::read_to_string(&path).unwrap()));
    }
    assert!(!seeds.is_empty(), "corpus for {target} has no seeds");
    seeds.sort();
    seeds
}

#[test]
fn every_seed_is_handled_by_every_parser() {
    let targets = [
        "parse_chain",
        "parse_structured",
        "chain_document",
        "problem_document",
        "interpretation_document",
        "report_document",
        "summary_document",
        "exchange_log",
        "cassette",
        "script",
        "rubric_marks",
        "config",
    ];
    for target in targets {
        for (name, text) in corpus(target) {
            let _ = loca::augmenter::parse_chain(&text, "seed");
            let _ = loca::interpreter::parse_structured(&text);
            let _ = loca::chain::chain_from_canonical(&text);
            let _ = loca::chain::problem_from_document(&text);
            let _ = loca::interpreter::structured_from_document(&text);
            let _ = loca::session::report_from_document(&text);
            let _ = loca::session::summary_from_document(&text);
            let _ = loca::session::parse_exchange_log(&text);
            let _ = loca::provider::Cassette::parse(&text);
            let _ = loca::provider::ScriptedProvider::parse_script(&text);
            let _ = loca::scoring::Rubric::parse(&text);
            let _ = loca::scoring::MarkSheet::parse(&text);
            let _ = loca::config::ConfigFile::parse(&text);
            let _ = (target, name);
        }
    }
}

#[test]
fn well_formed_seeds_parse() {
    for (name, text) in corpus("parse_chain") {
        if name != "defective" {
            loca::augmenter::parse_chain(&text, "seed")
                .unwrap_or_else(|e| panic!("parse_chain/{name}: {e:?}"));
        }
    }
    for (name, text) in corpus("parse_structured") {
        if name != "missing_section" {
            loca::interpreter::parse_structured(&text)
                .unwrap_or_else(|e| panic!("parse_structured/{name}: {e:?}"));
        }
    }
    for (name, text) in corpus("chain_document") {
        if name != "index_gap" {
            loca::chain::chain_from_canonical(&text)
                .unwrap_or_else(|e| panic!("chain_document/{name}: {e}"));
        } else {
            assert!(loca::chain::chain_from_canonical(&text).is_err());
        }
    }
    for (name, text) in corpus("problem_document") {
        loca::chain::problem_from_document(&text)
            .unwrap_or_else(|e| panic!("problem_document/{name}: {e}"));
    }
    for (name, text) in corpus("interpretation_document") {
        loca::interpreter::structured_from_document(&text)
            .unwrap_or_else(|e| panic!("interpretation_document/{name}: {e}"));
    }
    for (name, text) in corpus("report_document") {
        loca::session::report_from_document(&text)
            .unwrap_or_else(|e| panic!("report_document/{name}: {e}"));
    }
    for (name, text) in corpus("summary_document") {
        loca::session::summary_from_document(&text)
            .unwrap_or_else(|e| panic!("summary_document/{name}: {e}"));
    }
    for (name, text) in corpus("exchange_log") {
        loca::session::parse_exchange_log(&text)
            .unwrap_or_else(|e| panic!("exchange_log/{name}: {e}"));
    }
    for (name, text) in corpus("cassette") {
        loca::provider::Cassette::parse(&text)
            .unwrap_or_else(|e| panic!("cassette/{name}: {e}"));
    }
    for (name, text) in corpus("script") {
        loca::provider::ScriptedProvider::parse_script(&text)
            .unwrap_or_else(|e| panic!("script/{name}: {e}"));
    }
    for (name, text) in corpus("rubric_marks") {
        if name == "rubric" {
            loca::scoring::Rubric::parse(&text)
                .unwrap_or_else(|e| panic!("rubric_marks/{name}: {e}"));
        } else {
            loca::scoring::MarkSheet::parse(&text)
                .unwrap_or_else(|e| panic!("rubric_marks/{name}: {e}"));
        }
    }
    for (name, text) in corpus("config") {
        loca::config::ConfigFile::parse(&text)
            .unwrap_or_else(|e| panic!("config/{name}: {e}"));
    }
}
