//! Writes one simulated training set as `x.csv`, `y.csv`, `z.csv`.
//!
//! cargo run -p glm-po2pls --example write_fixture -- <dir> <gaussian|bernoulli> <seed> <n> <p> <q> [a b]

use std::path::Path;

use glm_po2pls::simbench::{generate_dataset, SimSetting};
use glm_po2pls::Family;
use nalgebra::DMatrix;

fn write_table(path: &Path, prefix: &str, m: &DMatrix<f64>) -> csv::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((1..=m.ncols()).map(|j| format!("{prefix}{j}")))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() != 6 && args.len() != 8 {
        return Err("usage: write_fixture <dir> <family> <seed> <n> <p> <q> [a b]".into());
    }
    let dir = Path::new(&args[0]);
    let family: Family = args[1].parse()?;
    let seed: u64 = args[2].parse()?;
    let mut setting = SimSetting {
        id: "fixture".into(),
        family,
        n: args[3].parse()?,
        p: args[4].parse()?,
        q: args[5].parse()?,
        test_n: 2,
        seed,
        ..SimSetting::default()
    };
    if args.len() == 8 {
        setting.a_true = args[6].parse()?;
        setting.b_true = args[7].parse()?;
    }
    let sim = generate_dataset(&setting, seed)?;
    std::fs::create_dir_all(dir)?;

    // restore the removed means so the files look like raw measurements
    let mut x = sim.train.x.clone();
    for (j, m) in sim.centering.x_mean.iter().enumerate() {
        x.column_mut(j).add_scalar_mut(*m);
    }
    let mut y = sim.train.y.clone();
    for (j, m) in sim.centering.y_mean.iter().enumerate() {
        y.column_mut(j).add_scalar_mut(*m);
    }
    let z = DMatrix::from_column_slice(setting.n, 1, sim.train.z.add_scalar(sim.centering.z_mean).as_slice());
    write_table(&dir.join("x.csv"), "x", &x)?;
    write_table(&dir.join("y.csv"), "y", &y)?;
    write_table(&dir.join("z.csv"), "z", &z)?;
    Ok(())
}
