//! Sweep the attention half-width D of a linear probe and plot the three
//! F1 curves.
//!
//!     cargo run --release --example dsweep -- 0,1,5,10
//!
//! Writes `runs/dsweep_example/dsweep/dsweep.{csv,svg}`.

use oaf_core::evaluation::Family;
use oaf_core::experiment::{run_dsweep, smoke_spec};

fn main() -> oaf_core::Result<()> {
    let mut spec = smoke_spec("runs/dsweep_example");
    if let Some(arg) = std::env::args().nth(1) {
        spec.sweep.d_values = arg.split(',').filter_map(|s| s.trim().parse().ok()).collect();
    }
    for c in &mut spec.cells {
        c.train.max_steps = 60;
    }
    let corpus = spec.data.load()?;
    let res = run_dsweep(&spec, &corpus)?;

    for (d, id) in &res.points {
        let row = res.table.rows.iter().find(|r| &r.id == id);
        let note = row.and_then(|r| r.f1(Family::Note));
        println!("D = {d:>2}  note F1 {}", note.map_or("failed".into(), |v| format!("{:.1}", 100.0 * v)));
    }
    println!("table {}", res.csv.display());
    if let Some(svg) = res.plot {
        println!("plot  {}", svg.display());
    }
    Ok(())
}
