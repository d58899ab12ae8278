//! Regenerates the shipped synthetic cohort:
//! `cargo run -p frontdoor-core --example make_synthetic -- data/nhanes_synthetic.csv`

use frontdoor::data::{save_csv, Arms};
use frontdoor::oracle::{interventional_mean_mc, sample_dataset, StructuralModel};
use frontdoor::rng::{stream, Purpose};

const ROWS: usize = 12037;
const SEED: u64 = 20040615;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).ok_or("usage: make_synthetic <output.csv>")?;
    let model = StructuralModel::from_toml(frontdoor::presets::NHANES_SYNTHETIC_DGM)?;
    let data = sample_dataset(&model, ROWS, &mut stream(SEED, Purpose::Replication, &[0]), Arms::binary(0, 1))?;
    save_csv(&data, &path)?;

    let share = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let exposure: Vec<f64> = data.exposure().iter().map(|&a| a as f64).collect();
    println!("rows {ROWS}: exposure {:.4}, mediator {:.4}, outcome {:.4}", share(&exposure), share(data.mediator()), share(data.outcome()));
    let truth = interventional_mean_mc(&model, 0.0, 10_000_000, SEED)?;
    println!("E(Y^(a_M=0)) = {:.6} (MC se {:.6})", truth.mean, truth.std_error);
    Ok(())
}
