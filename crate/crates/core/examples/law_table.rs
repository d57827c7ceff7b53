//! A few rows of the law table, rendered as text and as CSV.
//!
//! Run with `cargo run --release --example law_table -- [row ...]`.

use pseudohopf::cli::{build_table, render_table, table_csv, TABLE_ROWS};

fn main() -> anyhow::Result<()> {
    let mut rows: Vec<String> = std::env::args().skip(1).collect();
    if rows.is_empty() {
        rows = vec!["fold_fold".into(), "efocus_fold".into(), "polycycle_polycycle".into()];
    }
    println!("available rows: {}\n", TABLE_ROWS.iter().map(|r| r.key).collect::<Vec<_>>().join(", "));
    let report = build_table(&rows, None)?;
    print!("{}", render_table(&report));
    println!();
    print!("{}", table_csv(&report));
    Ok(())
}
