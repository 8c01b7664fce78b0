//! Writes the running example as files the `raven` tool reads:
//! `cargo run -p ravenlet --example write_covid -- DIR`.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use ravenlet::fixtures;
use ravenlet::optimizer::{ColumnStats, Stats};
use ravenlet::pipeline::save_pipeline;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo/covid".into()));
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("query.sql"), fixtures::COVID_QUERY)?;
    fs::write(dir.join("catalog.json"), fixtures::covid_catalog().to_json())?;
    fs::write(
        dir.join("covid_risk.json"),
        save_pipeline(&fixtures::covid_pipeline()).expect("fixture pipeline is valid"),
    )?;
    let mut stats = Stats::default();
    for (name, t) in fixtures::covid_tables() {
        fs::write(dir.join(format!("{name}.csv")), t.to_csv())?;
        let mut cols = BTreeMap::new();
        for (f, c) in t.fields.iter().zip(&t.columns) {
            if let Some(s) = ColumnStats::of_column(c) {
                cols.insert(f.name.clone(), s);
            }
        }
        stats.tables.insert(name, cols);
    }
    fs::write(dir.join("stats.json"), stats.to_json())?;
    Ok(())
}
