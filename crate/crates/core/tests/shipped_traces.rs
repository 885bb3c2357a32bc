//! The trace files under traces/ are the zoo's output, byte for byte.

use std::path::PathBuf;

use upcycle_core::workload::{zoo, Mode, Trace};

#[test]
fn shipped_traces_match_the_zoo() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("traces");
    let mut expected: Vec<Trace> = zoo::MODELS.iter().map(|m| zoo::build(m, Mode::Inference, 1).unwrap()).collect();
    expected.extend(zoo::SUITE.iter().map(|m| zoo::build(m, Mode::Training, 1).unwrap()));
    let mut names = Vec::new();
    for t in &expected {
        let path = dir.join(format!("{}.json", t.name()));
        let shipped = Trace::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(shipped.to_json() == t.to_json(), "{} drifted from the zoo", t.name());
        names.push(format!("{}.json", t.name()));
    }
    let mut on_disk: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    on_disk.sort();
    names.sort();
    assert_eq!(on_disk, names);
}
