//! Regenerates the JSON files under `traces/` from the built-in model zoo.

use upcycle_core::workload::{zoo, Mode};

fn main() -> upcycle_core::Result<()> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("traces");
    std::fs::create_dir_all(&dir).map_err(|e| upcycle_core::Error::Io { path: dir.clone(), source: e })?;
    let inference = zoo::MODELS.iter().map(|m| (*m, Mode::Inference));
    let training = zoo::SUITE.iter().map(|m| (*m, Mode::Training));
    for (model, mode) in inference.chain(training) {
        let t = zoo::build(model, mode, 1)?;
        t.save(dir.join(format!("{}.json", t.name())))?;
    }
    Ok(())
}
